//! One-vs-rest support vector classifier trained with SMO.
//!
//! The dual solver follows the second-order working-set selection of Fan,
//! Chen and Lin. Inputs are standardized per feature before the kernel is
//! applied; the scaler is part of the model.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GestureError, GestureLabel, GestureSample, GestureTask};

const KKT_TOLERANCE: f64 = 1e-3;
const TAU: f64 = 1e-12;
const MAGIC: &[u8; 5] = b"GSVM1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub kernel: Kernel,
    /// Box constraint on the dual coefficients.
    pub c: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { kernel: Kernel::Rbf { gamma: 0.1 }, c: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BinaryMachine {
    /// Dual coefficients in `[0, C]`, one per support vector.
    pub alphas: Vec<f64>,
    /// `+1` for the machine's own class, `-1` otherwise.
    pub signs: Vec<f64>,
    /// Standardized support vectors.
    pub support: Vec<Vec<f64>>,
    pub rho: f64,
}

impl BinaryMachine {
    fn decision(&self, kernel: &Kernel, x: &[f64]) -> f64 {
        let mut s = -self.rho;
        for ((a, y), sv) in self.alphas.iter().zip(&self.signs).zip(&self.support) {
            s += a * y * kernel.eval(sv, x);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub task: GestureTask,
    pub params: SvmParams,
    pub classes: Vec<GestureLabel>,
    pub(crate) mean: Vec<f64>,
    pub(crate) scale: Vec<f64>,
    pub(crate) machines: Vec<BinaryMachine>,
}

impl SvmModel {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn support_counts(&self) -> Vec<usize> {
        self.machines.iter().map(|m| m.support.len()).collect()
    }

    /// Every dual coefficient of every machine.
    pub fn dual_coefficients(&self) -> impl Iterator<Item = f64> + '_ {
        self.machines.iter().flat_map(|m| m.alphas.iter().copied())
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn decision_values(&self, features: &[f64]) -> Result<Vec<f64>, GestureError> {
        if features.len() != self.n_features() {
            return Err(GestureError::DimensionMismatch {
                expected: self.n_features(),
                got: features.len(),
            });
        }
        let x = self.standardize(features);
        Ok(self.machines.iter().map(|m| m.decision(&self.params.kernel, &x)).collect())
    }
}

/// Argmax over one-vs-rest decision values; ties resolve to the lowest class index.
pub fn svm_predict(model: &SvmModel, features: &[f64]) -> Result<GestureLabel, GestureError> {
    let values = model.decision_values(features)?;
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = k;
        }
    }
    Ok(model.classes[best])
}

struct Scaler {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Scaler {
    fn fit(data: &[&[f64]]) -> Scaler {
        let d = data[0].len();
        let n = data.len() as f64;
        let mut mean = vec![0.0; d];
        for x in data {
            for (m, v) in mean.iter_mut().zip(x.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for x in data {
            for ((s, v), m) in var.iter_mut().zip(x.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var.iter().map(|v| (v / n).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Scaler { mean, scale }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// Dense Gram matrix over a fixed sample set.
struct Gram {
    n: usize,
    k: Vec<f64>,
}

impl Gram {
    fn new(x: &[Vec<f64>], kernel: &Kernel) -> Gram {
        let n = x.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = kernel.eval(&x[i], &x[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        Gram { n, k }
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.k[i * self.n + j]
    }
}

/// Solves the binary soft-margin dual over the samples `idx` (indices into
/// the Gram matrix). Returns the dual coefficients and `rho`.
fn smo(gram: &Gram, idx: &[usize], y: &[f64], c: f64) -> (Vec<f64>, f64) {
    let n = idx.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let qd: Vec<f64> = idx.iter().map(|&g| gram.get(g, g)).collect();
    let is_upper = |a: f64| a >= c;
    let is_lower = |a: f64| a <= 0.0;
    let max_iter = (100 * n).max(10_000_000);
    let mut k_i = vec![0.0; n];
    let mut k_j = vec![0.0; n];

    for _ in 0..max_iter {
        // Maximal violating index i.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            let v = if y[t] > 0.0 {
                if is_upper(alpha[t]) {
                    continue;
                }
                -grad[t]
            } else {
                if is_lower(alpha[t]) {
                    continue;
                }
                grad[t]
            };
            if v >= gmax {
                gmax = v;
                i_sel = t;
            }
        }
        if i_sel == usize::MAX {
            break;
        }
        let i = i_sel;
        let gi = idx[i];
        for t in 0..n {
            k_i[t] = gram.get(gi, idx[t]);
        }
        // Second-order choice of j.
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut obj_min = f64::INFINITY;
        for t in 0..n {
            if y[t] > 0.0 {
                if is_lower(alpha[t]) {
                    continue;
                }
                let diff = gmax + grad[t];
                if grad[t] >= gmax2 {
                    gmax2 = grad[t];
                }
                if diff > 0.0 {
                    let quad = qd[i] + qd[t] - 2.0 * y[t] * k_i[t];
                    let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= obj_min {
                        j_sel = t;
                        obj_min = obj;
                    }
                }
            } else {
                if is_upper(alpha[t]) {
                    continue;
                }
                let diff = gmax - grad[t];
                if -grad[t] >= gmax2 {
                    gmax2 = -grad[t];
                }
                if diff > 0.0 {
                    let quad = qd[i] + qd[t] + 2.0 * y[t] * k_i[t];
                    let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= obj_min {
                        j_sel = t;
                        obj_min = obj;
                    }
                }
            }
        }
        if gmax + gmax2 < KKT_TOLERANCE || j_sel == usize::MAX {
            break;
        }
        let j = j_sel;
        let gj = idx[j];
        for t in 0..n {
            k_j[t] = gram.get(gj, idx[t]);
        }
        // Q_ij = y_i y_j K_ij
        let q_ij = y[i] * y[j] * k_i[j];
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (qd[i] + qd[j] + 2.0 * q_ij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qd[i] + qd[j] - 2.0 * q_ij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let dai = alpha[i] - old_i;
        let daj = alpha[j] - old_j;
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k_i[t] * dai + y[j] * k_j[t] * daj);
        }
    }

    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut n_free = 0usize;
    let mut sum_free = 0.0;
    for t in 0..n {
        let yg = y[t] * grad[t];
        if is_upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if is_lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { 0.5 * (ub + lb) };
    (alpha, rho)
}

/// Fitted one-vs-rest machines in Gram-matrix index space.
struct OvrFit {
    /// Per class: (global index, alpha, sign) of each support vector, and rho.
    machines: Vec<(Vec<(usize, f64, f64)>, f64)>,
}

fn fit_ovr(gram: &Gram, idx: &[usize], labels: &[usize], n_classes: usize, c: f64) -> OvrFit {
    let machines = (0..n_classes)
        .map(|k| {
            let y: Vec<f64> = idx.iter().map(|&g| if labels[g] == k { 1.0 } else { -1.0 }).collect();
            if !y.iter().any(|v| *v > 0.0) {
                // Class absent from this fold: never predicted.
                return (Vec::new(), f64::INFINITY);
            }
            let (alpha, rho) = smo(gram, idx, &y, c);
            let sv = idx
                .iter()
                .zip(alpha.iter().zip(&y))
                .filter(|(_, (a, _))| **a > 0.0)
                .map(|(&g, (&a, &s))| (g, a, s))
                .collect();
            (sv, rho)
        })
        .collect();
    OvrFit { machines }
}

impl OvrFit {
    fn predict_index(&self, gram: &Gram, g: usize) -> usize {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (k, (sv, rho)) in self.machines.iter().enumerate() {
            let v = sv.iter().map(|&(s, a, y)| a * y * gram.get(s, g)).sum::<f64>() - rho;
            if v > best_v {
                best_v = v;
                best = k;
            }
        }
        best
    }
}

fn class_table(data: &[GestureSample]) -> Result<(GestureTask, Vec<GestureLabel>, Vec<usize>), GestureError> {
    if data.is_empty() {
        return Err(GestureError::DegenerateDataset("empty dataset".into()));
    }
    let task = data[0].label.task();
    if data.iter().any(|s| s.label.task() != task) {
        return Err(GestureError::DegenerateDataset("mixed gesture alphabets".into()));
    }
    let d = data[0].features.len();
    if d == 0 || data.iter().any(|s| s.features.len() != d) {
        return Err(GestureError::DegenerateDataset("inconsistent feature lengths".into()));
    }
    if data.iter().any(|s| s.features.iter().any(|v| !v.is_finite())) {
        return Err(GestureError::DegenerateDataset("non-finite features".into()));
    }
    let mut classes: Vec<GestureLabel> = data.iter().map(|s| s.label).collect();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(GestureError::DegenerateDataset("need at least two classes".into()));
    }
    let labels = data.iter().map(|s| classes.binary_search(&s.label).unwrap()).collect();
    Ok((task, classes, labels))
}

pub fn svm_train(data: &[GestureSample], params: SvmParams) -> Result<SvmModel, GestureError> {
    let (task, classes, labels) = class_table(data)?;
    for (k, c) in classes.iter().enumerate() {
        let count = labels.iter().filter(|&&l| l == k).count();
        if count < 5 {
            return Err(GestureError::DegenerateDataset(format!("class {c} has {count} samples, need 5")));
        }
    }
    if !(params.c > 0.0) {
        return Err(GestureError::DegenerateDataset("C must be positive".into()));
    }
    let rows: Vec<&[f64]> = data.iter().map(|s| s.features.as_slice()).collect();
    let scaler = Scaler::fit(&rows);
    let x: Vec<Vec<f64>> = rows.iter().map(|r| scaler.apply(r)).collect();
    let gram = Gram::new(&x, &params.kernel);
    let idx: Vec<usize> = (0..x.len()).collect();
    let fit = fit_ovr(&gram, &idx, &labels, classes.len(), params.c);
    let machines = fit
        .machines
        .into_iter()
        .map(|(sv, rho)| BinaryMachine {
            alphas: sv.iter().map(|t| t.1).collect(),
            signs: sv.iter().map(|t| t.2).collect(),
            support: sv.iter().map(|t| x[t.0].clone()).collect(),
            rho,
        })
        .collect();
    Ok(SvmModel { task, params, classes, mean: scaler.mean, scale: scaler.scale, machines })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub best: SvmParams,
    pub mean_accuracy: f64,
    /// Mean accuracy for every grid point, in grid order.
    pub scores: Vec<(SvmParams, f64)>,
}

/// Stratified k-fold fold assignment: samples are shuffled within each class,
/// concatenated class by class, and dealt round-robin onto the folds.
pub(crate) fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut order = Vec::with_capacity(labels.len());
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        order.extend(members);
    }
    let mut fold = vec![0; labels.len()];
    for (pos, i) in order.into_iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

/// Grid search by stratified k-fold cross-validation. The best grid point
/// is the first one reaching the maximal mean accuracy.
///
/// Features are standardized once over the whole dataset before folding.
pub fn cross_validate(
    data: &[GestureSample],
    grid: &[SvmParams],
    k: usize,
    seed: u64,
) -> Result<CvResult, GestureError> {
    if k < 2 {
        return Err(GestureError::DegenerateDataset("k must be at least 2".into()));
    }
    if data.len() < k {
        return Err(GestureError::DegenerateDataset(format!("{} samples for {k} folds", data.len())));
    }
    if grid.is_empty() {
        return Err(GestureError::DegenerateDataset("empty parameter grid".into()));
    }
    let (_, classes, labels) = class_table(data)?;
    let rows: Vec<&[f64]> = data.iter().map(|s| s.features.as_slice()).collect();
    let scaler = Scaler::fit(&rows);
    let x: Vec<Vec<f64>> = rows.iter().map(|r| scaler.apply(r)).collect();
    let folds = stratified_folds(&labels, k, seed);

    let mut scores = Vec::with_capacity(grid.len());
    let mut cached: Option<(Kernel, Gram)> = None;
    for params in grid {
        if cached.as_ref().map(|(kern, _)| *kern != params.kernel).unwrap_or(true) {
            cached = Some((params.kernel, Gram::new(&x, &params.kernel)));
        }
        let gram = &cached.as_ref().unwrap().1;
        let mut acc_sum = 0.0;
        for f in 0..k {
            let train: Vec<usize> = (0..x.len()).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..x.len()).filter(|&i| folds[i] == f).collect();
            let fit = fit_ovr(gram, &train, &labels, classes.len(), params.c);
            let correct = test.iter().filter(|&&g| fit.predict_index(gram, g) == labels[g]).count();
            acc_sum += correct as f64 / test.len() as f64;
        }
        scores.push((*params, acc_sum / k as f64));
    }
    let mut best = 0;
    for (i, (_, s)) in scores.iter().enumerate() {
        if *s > scores[best].1 {
            best = i;
        }
    }
    Ok(CvResult { best: scores[best].0, mean_accuracy: scores[best].1, scores })
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

/// Binary model layout (little endian):
/// `"GSVM1" | u32 version | u8 task | u8 kernel | f64 gamma | f64 C | u32 d |
/// d×f64 mean | d×f64 scale | u32 classes | per class: u8 label index, f64 rho,
/// u32 n_sv, n_sv × (f64 alpha, f64 sign, d×f64 vector)`.
pub fn write_model<W: Write>(mut w: W, model: &SvmModel) -> Result<(), GestureError> {
    w.write_all(MAGIC)?;
    put_u32(&mut w, FORMAT_VERSION)?;
    w.write_all(&[match model.task {
        GestureTask::Grip => 0,
        GestureTask::Screw => 1,
    }])?;
    let (kind, gamma) = match model.params.kernel {
        Kernel::Linear => (0u8, 0.0),
        Kernel::Rbf { gamma } => (1u8, gamma),
    };
    w.write_all(&[kind])?;
    put_f64(&mut w, gamma)?;
    put_f64(&mut w, model.params.c)?;
    put_u32(&mut w, model.n_features() as u32)?;
    for v in model.mean.iter().chain(&model.scale) {
        put_f64(&mut w, *v)?;
    }
    put_u32(&mut w, model.classes.len() as u32)?;
    for (label, m) in model.classes.iter().zip(&model.machines) {
        w.write_all(&[label.class_index() as u8])?;
        put_f64(&mut w, m.rho)?;
        put_u32(&mut w, m.support.len() as u32)?;
        for ((a, s), sv) in m.alphas.iter().zip(&m.signs).zip(&m.support) {
            put_f64(&mut w, *a)?;
            put_f64(&mut w, *s)?;
            for v in sv {
                put_f64(&mut w, *v)?;
            }
        }
    }
    Ok(())
}

struct Reader<R> {
    r: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], GestureError> {
        let mut b = [0u8; N];
        self.r
            .read_exact(&mut b)
            .map_err(|e| GestureError::ModelFormat(format!("truncated: {e}")))?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8, GestureError> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32, GestureError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64, GestureError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn vec(&mut self, n: usize) -> Result<Vec<f64>, GestureError> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn read_model<R: Read>(r: R) -> Result<SvmModel, GestureError> {
    let mut rd = Reader { r };
    if &rd.bytes::<5>()? != MAGIC {
        return Err(GestureError::ModelFormat("bad magic".into()));
    }
    let version = rd.u32()?;
    if version != FORMAT_VERSION {
        return Err(GestureError::ModelFormat(format!("unsupported version {version}")));
    }
    let task = match rd.u8()? {
        0 => GestureTask::Grip,
        1 => GestureTask::Screw,
        t => return Err(GestureError::ModelFormat(format!("unknown task tag {t}"))),
    };
    let kind = rd.u8()?;
    let gamma = rd.f64()?;
    let c = rd.f64()?;
    let kernel = match kind {
        0 => Kernel::Linear,
        1 => Kernel::Rbf { gamma },
        k => return Err(GestureError::ModelFormat(format!("unknown kernel tag {k}"))),
    };
    let d = rd.u32()? as usize;
    let mean = rd.vec(d)?;
    let scale = rd.vec(d)?;
    let n_classes = rd.u32()? as usize;
    let alphabet = task.labels();
    let mut classes = Vec::with_capacity(n_classes);
    let mut machines = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let li = rd.u8()? as usize;
        let label = *alphabet
            .get(li)
            .ok_or_else(|| GestureError::ModelFormat(format!("label index {li} out of range")))?;
        classes.push(label);
        let rho = rd.f64()?;
        let n_sv = rd.u32()? as usize;
        let mut m = BinaryMachine { alphas: Vec::new(), signs: Vec::new(), support: Vec::new(), rho };
        for _ in 0..n_sv {
            m.alphas.push(rd.f64()?);
            m.signs.push(rd.f64()?);
            m.support.push(rd.vec(d)?);
        }
        machines.push(m);
    }
    Ok(SvmModel { task, params: SvmParams { kernel, c }, classes, mean, scale, machines })
}

#[cfg(test)]
mod tests {
    use super::super::{GestureLabel, GripGesture};
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn label(i: usize) -> GestureLabel {
        GestureLabel::Grip(GripGesture::ALL[i])
    }

    fn blobs(n: usize, seed: u64) -> Vec<GestureSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let centers = [[-2.0, -2.0], [2.0, 2.0]];
        let mut out = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for _ in 0..n {
                out.push(GestureSample {
                    features: vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)],
                    label: label(k),
                });
            }
        }
        out
    }

    fn xor(n: usize, seed: u64) -> Vec<GestureSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.15).unwrap();
        let mut out = Vec::new();
        for _ in 0..n {
            let a: bool = rng.random();
            let b: bool = rng.random();
            let x = if a { 1.0 } else { -1.0 } + noise.sample(&mut rng);
            let y = if b { 1.0 } else { -1.0 } + noise.sample(&mut rng);
            out.push(GestureSample { features: vec![x, y], label: label(usize::from(a ^ b)) });
        }
        out
    }

    fn train_acc(model: &SvmModel, data: &[GestureSample]) -> f64 {
        super::super::accuracy(model, data).unwrap()
    }

    #[test]
    fn separable_blobs_fit_perfectly() {
        let data = blobs(40, 1);
        for kernel in [Kernel::Linear, Kernel::Rbf { gamma: 0.5 }] {
            let m = svm_train(&data, SvmParams { kernel, c: 1.0 }).unwrap();
            assert_eq!(train_acc(&m, &data), 1.0);
            assert!(m.dual_coefficients().all(|a| (0.0..=1.0).contains(&a)));
            assert!(m.support_counts().iter().all(|&c| c >= 1));
            // A support vector of the positive machine, mapped back to input space.
            let sv = &m.machines[0].support[0];
            let raw: Vec<f64> = sv.iter().zip(&m.mean).zip(&m.scale).map(|((v, mu), s)| v * s + mu).collect();
            let own = if m.machines[0].signs[0] > 0.0 { label(0) } else { label(1) };
            assert_eq!(svm_predict(&m, &raw).unwrap(), own);
            assert_eq!(svm_predict(&m, &[-2.0, -2.0]).unwrap(), label(0));
            assert_eq!(svm_predict(&m, &[2.0, 2.0]).unwrap(), label(1));
        }
    }

    #[test]
    fn xor_needs_a_nonlinear_kernel() {
        let data = xor(200, 7);
        let rbf = svm_train(&data, SvmParams { kernel: Kernel::Rbf { gamma: 1.0 }, c: 10.0 }).unwrap();
        assert!(train_acc(&rbf, &data) > 0.95);
        let lin = svm_train(&data, SvmParams { kernel: Kernel::Linear, c: 10.0 }).unwrap();
        assert!(train_acc(&lin, &data) < 0.8);
    }

    #[test]
    fn degenerate_datasets_are_rejected() {
        let one_class: Vec<_> = blobs(10, 2).into_iter().filter(|s| s.label == label(0)).collect();
        assert!(matches!(svm_train(&one_class, SvmParams::default()), Err(GestureError::DegenerateDataset(_))));
        let mut few = blobs(10, 2);
        few.truncate(14);
        assert!(matches!(svm_train(&few, SvmParams::default()), Err(GestureError::DegenerateDataset(_))));
    }

    #[test]
    fn predict_checks_dimension() {
        let m = svm_train(&blobs(10, 3), SvmParams::default()).unwrap();
        assert!(matches!(
            svm_predict(&m, &[1.0, 2.0, 3.0]),
            Err(GestureError::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn cross_validation_on_blobs_and_leave_one_out() {
        let data = blobs(10, 4);
        let grid = [SvmParams { kernel: Kernel::Linear, c: 1.0 }, SvmParams::default()];
        let cv = cross_validate(&data, &grid, 5, 0).unwrap();
        assert_eq!(cv.mean_accuracy, 1.0);
        assert_eq!(cv.best, grid[0]);

        let labels: Vec<usize> = data.iter().map(|s| s.label.class_index()).collect();
        let folds = stratified_folds(&labels, data.len(), 9);
        let mut sizes = vec![0; data.len()];
        folds.iter().for_each(|&f| sizes[f] += 1);
        assert!(sizes.iter().all(|&s| s == 1));
        let loo = cross_validate(&data, &grid[..1], data.len(), 9).unwrap();
        assert_eq!(loo.mean_accuracy, 1.0);
        assert!(cross_validate(&data, &grid, 1, 0).is_err());
        assert!(cross_validate(&data, &grid, data.len() + 1, 0).is_err());
    }

    #[test]
    fn stratified_folds_balance_classes() {
        let labels: Vec<usize> = (0..50).map(|i| usize::from(i >= 30)).collect();
        let folds = stratified_folds(&labels, 5, 1);
        for f in 0..5 {
            let c0 = (0..50).filter(|&i| folds[i] == f && labels[i] == 0).count();
            let c1 = (0..50).filter(|&i| folds[i] == f && labels[i] == 1).count();
            assert_eq!((c0, c1), (6, 4));
        }
    }

    #[test]
    fn model_file_round_trip_and_bad_magic() {
        let data = xor(60, 5);
        let m = svm_train(&data, SvmParams { kernel: Kernel::Rbf { gamma: 0.7 }, c: 3.0 }).unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        assert_eq!(&buf[..5], b"GSVM1");
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_model(bad.as_slice()), Err(GestureError::ModelFormat(_))));
        assert!(matches!(read_model(&buf[..buf.len() - 3]), Err(GestureError::ModelFormat(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let data = xor(80, 8);
        let a = svm_train(&data, SvmParams::default()).unwrap();
        let b = svm_train(&data, SvmParams::default()).unwrap();
        assert_eq!(a, b);
    }
}
