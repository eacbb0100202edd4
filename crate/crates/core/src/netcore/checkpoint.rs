//! `MLP1` network files.
//!
//! Layout, all little-endian: magic `MLP1`, u32 version, u32 role length and
//! UTF-8 role bytes, u32 layer count, then per layer u32 out, u32 in, the
//! weights row-major and the bias as f64; finally u32 aux length and that many
//! f64 (the Gaussian log-std for policies, empty otherwise).

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::{Dense, Mlp, NetError};

const MAGIC: &[u8; 4] = b"MLP1";
const VERSION: u32 = 1;
const MAX_WIDTH: u32 = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub role: String,
    pub net: Mlp,
    pub aux: Vec<f64>,
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64s<W: Write>(w: &mut W, vs: impl Iterator<Item = f64>) -> std::io::Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32, NetError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, NetError> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn write_checkpoint<W: Write>(w: &mut W, ck: &Checkpoint) -> Result<(), NetError> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    put_u32(w, ck.role.len() as u32)?;
    w.write_all(ck.role.as_bytes())?;
    put_u32(w, ck.net.layers.len() as u32)?;
    for l in &ck.net.layers {
        put_u32(w, l.n_out() as u32)?;
        put_u32(w, l.n_in() as u32)?;
        put_f64s(w, l.w.iter().copied())?;
        put_f64s(w, l.b.iter().copied())?;
    }
    put_u32(w, ck.aux.len() as u32)?;
    put_f64s(w, ck.aux.iter().copied())?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint, NetError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NetError::Format("bad magic".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(NetError::Format(format!("unsupported version {version}")));
    }
    let role_len = get_u32(r)? as usize;
    if role_len > 256 {
        return Err(NetError::Format("role tag too long".into()));
    }
    let mut role = vec![0u8; role_len];
    r.read_exact(&mut role)?;
    let role = String::from_utf8(role).map_err(|_| NetError::Format("role is not UTF-8".into()))?;
    let n_layers = get_u32(r)?;
    if n_layers == 0 || n_layers > 64 {
        return Err(NetError::Format(format!("implausible layer count {n_layers}")));
    }
    let mut layers: Vec<Dense> = Vec::new();
    for _ in 0..n_layers {
        let (n_out, n_in) = (get_u32(r)?, get_u32(r)?);
        if n_out == 0 || n_in == 0 || n_out > MAX_WIDTH || n_in > MAX_WIDTH {
            return Err(NetError::Format(format!("implausible layer shape {n_out}x{n_in}")));
        }
        if let Some(prev) = layers.last() {
            if prev.n_out() != n_in as usize {
                return Err(NetError::Format("layer widths do not chain".into()));
            }
        }
        let (n_out, n_in) = (n_out as usize, n_in as usize);
        let w = Array2::from_shape_vec((n_out, n_in), get_f64s(r, n_out * n_in)?).unwrap();
        let b = Array1::from(get_f64s(r, n_out)?);
        layers.push(Dense { w, b });
    }
    let n_aux = get_u32(r)?;
    if n_aux > MAX_WIDTH {
        return Err(NetError::Format("aux block too long".into()));
    }
    let aux = get_f64s(r, n_aux as usize)?;
    Ok(Checkpoint { role, net: Mlp { layers }, aux })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = Checkpoint {
            role: "policy".into(),
            net: Mlp::new(&[5, 8, 3], 0.01, 1),
            aux: vec![-0.5, 0.1, f64::MIN_POSITIVE],
        };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ck).unwrap();
        assert_eq!(&buf[..4], b"MLP1");
        assert_eq!(read_checkpoint(&mut buf.as_slice()).unwrap(), ck);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let ck = Checkpoint { role: "disc".into(), net: Mlp::new(&[2, 3, 1], 1.0, 2), aux: vec![] };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ck).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&mut bad.as_slice()), Err(NetError::Format(_))));
        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(read_checkpoint(&mut &truncated[..]), Err(NetError::Io(_))));
    }
}
