//! Dense tanh networks with hand-written reverse-mode gradients, diagonal
//! Gaussian and categorical action heads, Adam, and `MLP1` checkpoints.
//!
//! Batches are row-major: one sample per row.

mod checkpoint;
mod heads;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use heads::{
    categorical_entropy, categorical_entropy_grad, categorical_logprob, categorical_logprob_grad,
    categorical_sample, gaussian_entropy, gaussian_logprob, gaussian_logprob_grad, gaussian_sample,
    log_softmax, softmax, LOG_STD_MAX, LOG_STD_MIN,
};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("input width {got} does not match layer width {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One affine layer; `w` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense { w: Array2::zeros((n_out, n_in)), b: Array1::zeros(n_out) }
    }

    pub fn n_in(&self) -> usize {
        self.w.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.w.nrows()
    }
}

/// Affine layers with tanh between them and a linear final layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations kept from a forward pass: `acts[0]` is the input and
/// `acts[i]` the output of layer `i - 1` (post-tanh for hidden layers).
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub acts: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("cache holds at least the input")
    }
}

fn orthogonal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, gain: f64) -> Array2<f64> {
    let big = rows.max(cols);
    let small = rows.min(cols);
    let a = DMatrix::<f64>::from_fn(big, small, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    // Sign fix so the distribution is uniform over orthogonal matrices.
    let r = qr.r();
    for j in 0..small {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Array2::from_shape_fn((rows, cols), |(i, j)| gain * if rows >= cols { q[(i, j)] } else { q[(j, i)] })
}

/// `x W^T + b`, always returned in row-major layout.
fn affine(x: &Array2<f64>, layer: &Dense) -> Array2<f64> {
    let mut z = x.dot(&layer.w.t());
    if !z.is_standard_layout() {
        z = z.as_standard_layout().into_owned();
    }
    z += &layer.b;
    z
}

impl Mlp {
    /// `sizes` lists every width from input to output, e.g. `[125, 256, 256, 256, 10]`.
    /// Hidden layers use orthogonal weights with gain sqrt(2); the output layer
    /// uses gain `output_gain`. Biases start at zero.
    pub fn new(sizes: &[usize], output_gain: f64, seed: u64) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least an input and an output width");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { output_gain } else { 2f64.sqrt() };
                Dense { w: orthogonal(&mut rng, sizes[i + 1], sizes[i], gain), b: Array1::zeros(sizes[i + 1]) }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Mlp { layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect() }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().unwrap().n_out()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.n_in()];
        s.extend(self.layers.iter().map(Dense::n_out));
        s
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<MlpCache, NetError> {
        if x.ncols() != self.n_in() {
            return Err(NetError::DimensionMismatch { expected: self.n_in(), got: x.ncols() });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = affine(&acts[i], layer);
            if i < last {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        Ok(MlpCache { acts })
    }

    /// Output only, without keeping the intermediate activations.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NetError> {
        if x.ncols() != self.n_in() {
            return Err(NetError::DimensionMismatch { expected: self.n_in(), got: x.ncols() });
        }
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = affine(&h, layer);
            if i < last {
                z.mapv_inplace(f64::tanh);
            }
            h = z;
        }
        Ok(h)
    }

    /// Reverse pass. `grad_out` is dL/d(output) for every row of the cached
    /// batch; returns parameter gradients and dL/d(input).
    pub fn backward(&self, cache: &MlpCache, grad_out: ArrayView2<f64>) -> (MlpGrads, Array2<f64>) {
        let mut delta = grad_out.to_owned();
        let mut layers = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let x = &cache.acts[i];
            let gw = delta.t().dot(x).as_standard_layout().into_owned();
            let gb = delta.sum_axis(Axis(0));
            layers.push(Dense { w: gw, b: gb });
            let mut prev = delta.dot(&self.layers[i].w);
            if i > 0 {
                // acts[i] is tanh output of the previous layer.
                ndarray::Zip::from(&mut prev).and(x).for_each(|d, &a| *d *= 1.0 - a * a);
            }
            delta = prev;
        }
        layers.reverse();
        (MlpGrads { layers }, delta)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    /// Every parameter tensor as a flat mutable slice, weights then bias per layer.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_slice_mut().unwrap(), l.b.as_slice_mut().unwrap()])
            .collect()
    }
}

/// Gradients with the same shapes as an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Dense>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads { layers: net.layers.iter().map(|l| Dense::zeros(l.n_in(), l.n_out())).collect() }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.w *= s;
            l.b *= s;
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.w.as_slice().unwrap(), l.b.as_slice().unwrap()]).collect()
    }

    pub fn sq_norm(&self) -> f64 {
        self.layers.iter().map(|l| l.w.iter().chain(l.b.iter()).map(|v| v * v).sum::<f64>()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

/// Bias-corrected Adam over a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update. The tensor list must have the same shapes on every call.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient lists differ");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer was built for a different parameter list");
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let step = self.lr * c2.sqrt() / c1;
        let eps = self.eps * c2.sqrt();
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            assert_eq!(p.len(), g.len());
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= step * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn random_input(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[4, 8, 3]);
        let y = net.predict(random_input(5, 4, 0).view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_hidden_layer_is_tanh_of_affine() {
        let mut net = Mlp::zeros(&[2, 2, 2]);
        net.layers[0].w = Array2::eye(2);
        net.layers[0].b = array![0.5, -0.25];
        net.layers[1].w = Array2::eye(2);
        let x = array![[0.3, -1.2]];
        let y = net.predict(x.view()).unwrap();
        assert_eq!(y[[0, 0]], (0.3f64 + 0.5).tanh());
        assert_eq!(y[[0, 1]], (-1.2f64 - 0.25).tanh());
    }

    #[test]
    fn input_width_is_checked() {
        let net = Mlp::new(&[3, 4, 1], 1.0, 0);
        assert!(matches!(
            net.forward(random_input(1, 2, 0).view()),
            Err(NetError::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn orthogonal_init_has_orthonormal_rows_or_columns() {
        let net = Mlp::new(&[6, 16, 3], 0.01, 9);
        let w = &net.layers[0].w; // 16 x 6: columns orthonormal up to gain
        let g = w.t().dot(w) / 2.0;
        for i in 0..6 {
            for j in 0..6 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - e).abs() < 1e-12);
            }
        }
        let w = &net.layers[1].w; // 3 x 16: rows orthonormal up to gain
        let g = w.dot(&w.t()) / 1e-4;
        for i in 0..3 {
            assert!((g[[i, i]] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_and_predict_agree() {
        let net = Mlp::new(&[5, 7, 7, 2], 1.0, 3);
        let x = random_input(4, 5, 1);
        assert_eq!(net.forward(x.view()).unwrap().output(), &net.predict(x.view()).unwrap());
    }

    // Loss = sum(output * weights) so dL/dout = weights.
    fn loss(net: &Mlp, x: &Array2<f64>, wts: &Array2<f64>) -> f64 {
        (net.predict(x.view()).unwrap() * wts).sum()
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut net = Mlp::new(&[4, 6, 5, 3], 1.0, 11);
        for l in &mut net.layers {
            l.b.mapv_inplace(|_| 0.1);
        }
        let x = random_input(3, 4, 2);
        let wts = random_input(3, 3, 3);
        let cache = net.forward(x.view()).unwrap();
        let (g, gx) = net.backward(&cache, wts.view());
        let h = 1e-6;
        let analytic: Vec<f64> = g.slices().concat();
        let mut idx = 0;
        let n_tensors = net.param_slices_mut().len();
        for t in 0..n_tensors {
            let len = net.param_slices_mut()[t].len();
            for i in 0..len {
                let orig = net.param_slices_mut()[t][i];
                net.param_slices_mut()[t][i] = orig + h;
                let up = loss(&net, &x, &wts);
                net.param_slices_mut()[t][i] = orig - h;
                let down = loss(&net, &x, &wts);
                net.param_slices_mut()[t][i] = orig;
                let fd = (up - down) / (2.0 * h);
                let a = analytic[idx];
                assert!((a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-3), "param {t}/{i}: {a} vs {fd}");
                idx += 1;
            }
        }
        for r in 0..3 {
            for c in 0..4 {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let mut xm = x.clone();
                xm[[r, c]] -= h;
                let fd = (loss(&net, &xp, &wts) - loss(&net, &xm, &wts)) / (2.0 * h);
                assert!((gx[[r, c]] - fd).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn gradients_are_linear_in_the_loss() {
        let net = Mlp::new(&[3, 5, 2], 1.0, 4);
        let x = random_input(2, 3, 5);
        let cache = net.forward(x.view()).unwrap();
        let a = random_input(2, 2, 6);
        let b = random_input(2, 2, 7);
        let (mut ga, _) = net.backward(&cache, a.view());
        let (gb, _) = net.backward(&cache, b.view());
        let (gab, _) = net.backward(&cache, (&a + &b).view());
        ga.add_assign(&gb);
        for (x, y) in ga.slices().concat().iter().zip(gab.slices().concat()) {
            assert!((x - y).abs() < 1e-12);
        }
        let (g0, _) = net.backward(&cache, Array2::zeros((2, 2)).view());
        assert_eq!(g0.sq_norm(), 0.0);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut opt = Adam::new(5e-4);
        for _ in 0..10 {
            opt.step(&mut [&mut p], &[&[0.0, 0.0, 0.0]]);
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = vec![0.0, 0.0];
        let mut opt = Adam::new(5e-4);
        opt.step(&mut [&mut p], &[&[3.0, -0.2]]);
        assert!((p[0] + 5e-4).abs() < 1e-10);
        assert!((p[1] - 5e-4).abs() < 1e-9);
    }

    #[test]
    fn adam_minimizes_a_quadratic_bowl() {
        let mut p: Vec<f64> = vec![1.0, -0.5, 0.25];
        let mut opt = Adam::new(0.01);
        let mut steps = 0;
        while p.iter().any(|v| v.abs() >= 1e-3) {
            let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut [&mut p], &[&g]);
            steps += 1;
            assert!(steps <= 2000, "did not converge: {p:?}");
        }
    }
}
