//! Forward kinematics, geometric Jacobian and Gauss-Newton inverse kinematics
//! for a six-revolute-joint serial chain described by standard DH parameters.
//!
//! Joint angles cross the public API in degrees; the Jacobian is expressed per
//! radian of joint motion. Poses are homogeneous transforms in meters.

mod ik;

use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ik::{angle_axis_twist, solve_ik, transform_error, IkSettings, IkSolution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("axes are not a right-handed orthonormal basis (deviation {0:.3e})")]
    NonOrthonormalAxes(f64),
    #[error("inverse kinematics did not converge after {iterations} iterations (error {error:.3e})")]
    NotConverged { iterations: usize, error: f64 },
    #[error("DH table line {line}: {reason}")]
    DhParse { line: usize, reason: String },
    #[error("DH table must have exactly 6 rows, found {0}")]
    DhRowCount(usize),
    #[error("invalid IK settings: {0}")]
    InvalidSettings(&'static str),
    #[error("io error: {0}")]
    Io(String),
}

/// Wraps a single angle in degrees into `[-180, 180)`.
///
/// `-180` is kept as is; `+180` maps to `-180`.
pub fn wrap_degrees(angle: f64) -> f64 {
    (angle + 180.0).rem_euclid(360.0) - 180.0
}

/// Six joint rotations in degrees, always wrapped into `[-180, 180]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 6]", into = "[f64; 6]")]
pub struct JointAngles([f64; 6]);

impl JointAngles {
    pub const ZERO: JointAngles = JointAngles([0.0; 6]);

    pub fn from_degrees(raw: [f64; 6]) -> Self {
        wrap_angles(raw)
    }

    pub fn from_radians(raw: [f64; 6]) -> Self {
        wrap_angles(raw.map(f64::to_degrees))
    }

    pub fn degrees(&self) -> [f64; 6] {
        self.0
    }

    pub fn radians(&self) -> [f64; 6] {
        self.0.map(f64::to_radians)
    }

    pub fn get(&self, joint: usize) -> f64 {
        self.0[joint]
    }

    /// Adds raw degree offsets and re-wraps.
    pub fn offset(&self, delta_deg: &[f64; 6]) -> Self {
        let mut raw = self.0;
        for (q, d) in raw.iter_mut().zip(delta_deg) {
            *q += d;
        }
        wrap_angles(raw)
    }

    /// Shortest signed per-joint difference `other - self` in degrees.
    pub fn shortest_delta_to(&self, other: &JointAngles) -> [f64; 6] {
        let mut out = [0.0; 6];
        for i in 0..6 {
            out[i] = wrap_degrees(other.0[i] - self.0[i]);
        }
        out
    }
}

impl From<[f64; 6]> for JointAngles {
    fn from(raw: [f64; 6]) -> Self {
        wrap_angles(raw)
    }
}

impl From<JointAngles> for [f64; 6] {
    fn from(q: JointAngles) -> Self {
        q.0
    }
}

impl fmt::Display for JointAngles {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| format!("{v:.6}")).collect();
        f.write_str(&parts.join(" "))
    }
}

pub fn wrap_angles(raw: [f64; 6]) -> JointAngles {
    JointAngles(raw.map(wrap_degrees))
}

/// Rigid transform in SE(3) stored as a 4x4 homogeneous matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomTransform(Matrix4<f64>);

impl HomTransform {
    pub fn identity() -> Self {
        HomTransform(Matrix4::identity())
    }

    pub fn from_parts(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(translation);
        HomTransform(m)
    }

    /// Builds from a raw matrix without checking; the bottom row is forced to `[0,0,0,1]`.
    pub fn from_matrix_unchecked(mut m: Matrix4<f64>) -> Self {
        m[(3, 0)] = 0.0;
        m[(3, 1)] = 0.0;
        m[(3, 2)] = 0.0;
        m[(3, 3)] = 1.0;
        HomTransform(m)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Column `i` of the rotation block (tool x, y or z axis in the base frame).
    pub fn axis(&self, i: usize) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, i).into_owned()
    }

    pub fn compose(&self, other: &HomTransform) -> HomTransform {
        HomTransform(self.0 * other.0)
    }

    pub fn inverse(&self) -> HomTransform {
        let rt = self.rotation().transpose();
        HomTransform::from_parts(&rt, &(-rt * self.translation()))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    /// Row-major flattening of all 16 entries.
    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.0[(r, c)];
            }
        }
        out
    }

    /// Largest deviation of the rotation block from orthonormality, `max |RᵀR - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rotation();
        (r.transpose() * r - Matrix3::identity()).abs().max()
    }
}

/// One row of a standard Denavit-Hartenberg table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    /// Link length in meters.
    pub a: f64,
    /// Link offset in meters.
    pub d: f64,
    /// Link twist in degrees.
    pub alpha: f64,
    /// Constant joint angle offset in degrees.
    pub theta_offset: f64,
}

impl DhRow {
    /// `Rz(theta) * Tz(d) * Tx(a) * Rx(alpha)` for joint angle `theta` in radians.
    pub fn transform(&self, theta: f64) -> Matrix4<f64> {
        let th = theta + self.theta_offset.to_radians();
        let al = self.alpha.to_radians();
        let (st, ct) = th.sin_cos();
        let (sa, ca) = al.sin_cos();
        Matrix4::new(
            ct, -st * ca, st * sa, self.a * ct, //
            st, ct * ca, -ct * sa, self.a * st, //
            0.0, sa, ca, self.d, //
            0.0, 0.0, 0.0, 1.0,
        )
    }
}

/// DH description of a six-revolute-joint chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhTable {
    pub rows: [DhRow; 6],
}

impl DhTable {
    /// Nominal UR3 parameters (meters / degrees).
    pub fn ur3() -> Self {
        let row = |a, d, alpha| DhRow { a, d, alpha, theta_offset: 0.0 };
        DhTable {
            rows: [
                row(0.0, 0.1519, 90.0),
                row(-0.24365, 0.0, 0.0),
                row(-0.21325, 0.0, 0.0),
                row(0.0, 0.11235, 90.0),
                row(0.0, 0.08535, -90.0),
                row(0.0, 0.0819, 0.0),
            ],
        }
    }

    /// Parses the plain-text table format: six non-comment lines of
    /// `a d alpha theta_offset`, whitespace or comma separated, `#` comments.
    pub fn parse(text: &str) -> Result<Self, KinematicsError> {
        let mut rows = Vec::with_capacity(6);
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let nums: Result<Vec<f64>, _> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(str::parse::<f64>)
                .collect();
            let nums = nums.map_err(|e| KinematicsError::DhParse {
                line: idx + 1,
                reason: e.to_string(),
            })?;
            if nums.len() != 4 {
                return Err(KinematicsError::DhParse {
                    line: idx + 1,
                    reason: format!("expected 4 numbers, found {}", nums.len()),
                });
            }
            if nums.iter().any(|v| !v.is_finite()) {
                return Err(KinematicsError::DhParse {
                    line: idx + 1,
                    reason: "non-finite value".into(),
                });
            }
            rows.push(DhRow { a: nums[0], d: nums[1], alpha: nums[2], theta_offset: nums[3] });
        }
        let rows: [DhRow; 6] =
            rows.try_into().map_err(|r: Vec<DhRow>| KinematicsError::DhRowCount(r.len()))?;
        Ok(DhTable { rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KinematicsError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| KinematicsError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# a[m] d[m] alpha[deg] theta_offset[deg]\n");
        for r in &self.rows {
            s.push_str(&format!("{} {} {} {}\n", r.a, r.d, r.alpha, r.theta_offset));
        }
        s
    }
}

/// Base-frame transforms of frames 0..=6 (frame 0 is the identity base frame).
pub fn joint_frames(dh: &DhTable, q: &JointAngles) -> [Matrix4<f64>; 7] {
    let rad = q.radians();
    let mut frames = [Matrix4::identity(); 7];
    for i in 0..6 {
        frames[i + 1] = frames[i] * dh.rows[i].transform(rad[i]);
    }
    frames
}

pub fn forward_kinematics(dh: &DhTable, q: &JointAngles) -> HomTransform {
    HomTransform(joint_frames(dh, q)[6])
}

/// Geometric Jacobian of the flange origin. Rows 0..3 map joint rates
/// (rad/s) to linear velocity, rows 3..6 to angular velocity, both in the
/// base frame.
pub fn jacobian(dh: &DhTable, q: &JointAngles) -> Matrix6<f64> {
    let frames = joint_frames(dh, q);
    let tip: Vector3<f64> = frames[6].fixed_view::<3, 1>(0, 3).into_owned();
    let mut j = Matrix6::zeros();
    for i in 0..6 {
        let z: Vector3<f64> = frames[i].fixed_view::<3, 1>(0, 2).into_owned();
        let o: Vector3<f64> = frames[i].fixed_view::<3, 1>(0, 3).into_owned();
        let lin = z.cross(&(tip - o));
        let mut col = Vector6::zeros();
        col.fixed_rows_mut::<3>(0).copy_from(&lin);
        col.fixed_rows_mut::<3>(3).copy_from(&z);
        j.set_column(i, &col);
    }
    j
}

/// Builds a transform whose rotation columns are `axes` and whose
/// translation is `position`.
pub fn pose_to_transform(
    position: &Vector3<f64>,
    axes: &[Vector3<f64>; 3],
) -> Result<HomTransform, KinematicsError> {
    let r = Matrix3::from_columns(axes);
    let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
    if !dev.is_finite() || dev > 1e-6 {
        return Err(KinematicsError::NonOrthonormalAxes(dev));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > 1e-6 {
        return Err(KinematicsError::NonOrthonormalAxes((det - 1.0).abs()));
    }
    Ok(HomTransform::from_parts(&r, position))
}

/// Distance from the shoulder (origin of frame 1) to the wrist center
/// (origin of frame 4).
pub fn wrist_reach(dh: &DhTable, q: &JointAngles) -> f64 {
    let frames = joint_frames(dh, q);
    let shoulder: Vector3<f64> = frames[1].fixed_view::<3, 1>(0, 3).into_owned();
    let wrist: Vector3<f64> = frames[4].fixed_view::<3, 1>(0, 3).into_owned();
    (wrist - shoulder).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wrap_boundaries() {
        assert_eq!(wrap_degrees(190.0), -170.0);
        assert_eq!(wrap_degrees(-180.0), -180.0);
        assert_abs_diff_eq!(wrap_degrees(720.5), 0.5, epsilon = 1e-12);
        assert_eq!(wrap_degrees(0.0), 0.0);
    }

    proptest! {
        #[test]
        fn wrapped_angles_in_range_and_congruent(raw in prop::array::uniform6(-5000.0f64..5000.0)) {
            let q = wrap_angles(raw);
            for i in 0..6 {
                let v = q.get(i);
                prop_assert!((-180.0..=180.0).contains(&v));
                let k = (raw[i] - v) / 360.0;
                prop_assert!((k - k.round()).abs() < 1e-9);
            }
        }
    }

    // Product of the six UR3 DH matrices at q = 0, multiplied out by hand:
    // the arm lies stretched along -x with the tool axis along +y.
    #[test]
    fn fk_at_zero_matches_hand_computed_chain() {
        let t = forward_kinematics(&DhTable::ur3(), &JointAngles::ZERO);
        #[rustfmt::skip]
        let golden = Matrix4::new(
             1.0, 0.0,  0.0, -0.4569,
             0.0, 0.0, -1.0, -0.19425,
             0.0, 1.0,  0.0,  0.06655,
             0.0, 0.0, 0.0,  1.0,
        );
        assert_abs_diff_eq!(*t.matrix(), golden, epsilon = 1e-12);
    }

    #[test]
    fn fk_rotation_is_proper() {
        let dh = DhTable::ur3();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let q = JointAngles::from_degrees(std::array::from_fn(|_| rng.random_range(-180.0..180.0)));
            let t = forward_kinematics(&dh, &q);
            assert!(t.orthonormality_error() < 1e-9);
            assert_abs_diff_eq!(t.rotation().determinant(), 1.0, epsilon = 1e-9);
            let m = t.matrix();
            assert_eq!([m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]], [0.0, 0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn zero_joint_rate_gives_zero_twist() {
        let dh = DhTable::ur3();
        let q = JointAngles::from_degrees([10.0, -40.0, 70.0, -20.0, 35.0, 5.0]);
        let twist = jacobian(&dh, &q) * Vector6::zeros();
        assert_eq!(twist, Vector6::zeros());
    }

    #[test]
    fn pose_to_transform_identity_and_handedness() {
        let axes = [Vector3::x(), Vector3::y(), Vector3::z()];
        let t = pose_to_transform(&Vector3::zeros(), &axes).unwrap();
        assert_eq!(t, HomTransform::identity());

        let swapped = [Vector3::y(), Vector3::x(), Vector3::z()];
        assert!(matches!(
            pose_to_transform(&Vector3::zeros(), &swapped),
            Err(KinematicsError::NonOrthonormalAxes(_))
        ));
        let skewed = [Vector3::new(1.0, 0.1, 0.0), Vector3::y(), Vector3::z()];
        assert!(pose_to_transform(&Vector3::zeros(), &skewed).is_err());
    }

    #[test]
    fn dh_text_round_trip_and_errors() {
        let dh = DhTable::ur3();
        assert_eq!(DhTable::parse(&dh.to_text()).unwrap(), dh);
        let short = "0 0.1 90 0\n0 0 0 0\n";
        assert_eq!(DhTable::parse(short), Err(KinematicsError::DhRowCount(2)));
        let bad = "0 0.1 90\n";
        assert!(matches!(DhTable::parse(bad), Err(KinematicsError::DhParse { line: 1, .. })));
    }

    #[test]
    fn shortest_delta_crosses_the_seam() {
        let a = JointAngles::from_degrees([170.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let b = JointAngles::from_degrees([-170.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(a.shortest_delta_to(&b)[0], 20.0, epsilon = 1e-12);
    }
}
