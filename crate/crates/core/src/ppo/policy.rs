use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::netcore::{
    categorical_entropy, categorical_entropy_grad, categorical_logprob, categorical_logprob_grad, categorical_sample,
    gaussian_entropy, gaussian_logprob, gaussian_logprob_grad, gaussian_sample, Checkpoint, Mlp, MlpCache, MlpGrads,
    NetError, LOG_STD_MAX, LOG_STD_MIN,
};

/// Output split of the shared trunk: `n_cont` Gaussian means, `n_cat`
/// logits, then one value estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyLayout {
    pub obs_dim: usize,
    pub n_cont: usize,
    pub n_cat: usize,
}

impl PolicyLayout {
    pub fn tile() -> Self {
        PolicyLayout { obs_dim: crate::tilesim::OBS_DIM, n_cont: 6, n_cat: 3 }
    }

    pub fn n_out(&self) -> usize {
        self.n_cont + self.n_cat + 1
    }
}

/// One sampled action with its bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub cont: Vec<f64>,
    pub cat: usize,
    pub logp: f64,
    pub value: f64,
}

/// Actor-critic with a shared tanh trunk and a state-independent log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub layout: PolicyLayout,
    pub net: Mlp,
    pub log_std: Vec<f64>,
}

/// Gradients for every policy parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads {
    pub net: MlpGrads,
    pub log_std: Vec<f64>,
}

impl PolicyGrads {
    pub fn zeros_like(p: &Policy) -> Self {
        PolicyGrads { net: MlpGrads::zeros_like(&p.net), log_std: vec![0.0; p.log_std.len()] }
    }

    pub fn add_assign(&mut self, o: &PolicyGrads) {
        self.net.add_assign(&o.net);
        for (a, b) in self.log_std.iter_mut().zip(&o.log_std) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.net.scale(s);
        self.log_std.iter_mut().for_each(|v| *v *= s);
    }

    pub fn norm(&self) -> f64 {
        (self.net.sq_norm() + self.log_std.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.net.is_finite() && self.log_std.iter().all(|v| v.is_finite())
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut s = self.net.slices();
        s.push(&self.log_std);
        s
    }
}

/// Per-row output gradient accumulator used by the losses.
pub(crate) struct HeadGrad {
    pub out: Array2<f64>,
    pub log_std: Vec<f64>,
}

impl HeadGrad {
    pub fn new(rows: usize, layout: &PolicyLayout) -> Self {
        HeadGrad { out: Array2::zeros((rows, layout.n_out())), log_std: vec![0.0; layout.n_cont] }
    }
}

impl Policy {
    pub fn new(layout: PolicyLayout, hidden: &[usize], seed: u64) -> Self {
        let mut sizes = vec![layout.obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(layout.n_out());
        Policy { layout, net: Mlp::new(&sizes, 0.01, seed), log_std: vec![0.0; layout.n_cont] }
    }

    pub fn mean<'a>(&self, row: &'a [f64]) -> &'a [f64] {
        &row[..self.layout.n_cont]
    }

    pub fn logits<'a>(&self, row: &'a [f64]) -> &'a [f64] {
        &row[self.layout.n_cont..self.layout.n_cont + self.layout.n_cat]
    }

    pub fn value_of(&self, row: &[f64]) -> f64 {
        row[self.layout.n_cont + self.layout.n_cat]
    }

    pub fn forward(&self, obs: ArrayView2<f64>) -> Result<MlpCache, NetError> {
        self.net.forward(obs)
    }

    pub fn outputs(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>, NetError> {
        self.net.predict(obs)
    }

    /// Joint log-probability of a (continuous, categorical) action under one output row.
    pub fn logprob(&self, row: &[f64], cont: &[f64], cat: usize) -> f64 {
        let mut lp = 0.0;
        if self.layout.n_cont > 0 {
            lp += gaussian_logprob(self.mean(row), &self.log_std, cont);
        }
        if self.layout.n_cat > 0 {
            lp += categorical_logprob(self.logits(row), cat);
        }
        lp
    }

    /// Gaussian entropy averaged over the continuous dimensions plus the
    /// categorical entropy.
    pub fn entropy(&self, row: &[f64]) -> f64 {
        let mut h = 0.0;
        if self.layout.n_cont > 0 {
            h += gaussian_entropy(&self.log_std) / self.layout.n_cont as f64;
        }
        if self.layout.n_cat > 0 {
            h += categorical_entropy(self.logits(row));
        }
        h
    }

    /// Adds `scale * d logprob / d(output, log_std)` for row `r` into `g`.
    pub(crate) fn logprob_grad(&self, row: &[f64], cont: &[f64], cat: usize, scale: f64, g: &mut HeadGrad, r: usize) {
        let (nc, nk) = (self.layout.n_cont, self.layout.n_cat);
        if nc > 0 {
            let mut dm = vec![0.0; nc];
            let mut dl = vec![0.0; nc];
            gaussian_logprob_grad(self.mean(row), &self.log_std, cont, &mut dm, &mut dl);
            for i in 0..nc {
                g.out[[r, i]] += scale * dm[i];
                g.log_std[i] += scale * dl[i];
            }
        }
        if nk > 0 {
            let mut dz = vec![0.0; nk];
            categorical_logprob_grad(self.logits(row), cat, &mut dz);
            for i in 0..nk {
                g.out[[r, nc + i]] += scale * dz[i];
            }
        }
    }

    pub(crate) fn entropy_grad(&self, row: &[f64], scale: f64, g: &mut HeadGrad, r: usize) {
        let (nc, nk) = (self.layout.n_cont, self.layout.n_cat);
        for v in g.log_std.iter_mut() {
            *v += scale / nc as f64;
        }
        if nk > 0 {
            let mut dz = vec![0.0; nk];
            categorical_entropy_grad(self.logits(row), &mut dz);
            for i in 0..nk {
                g.out[[r, nc + i]] += scale * dz[i];
            }
        }
    }

    pub(crate) fn backprop(&self, cache: &MlpCache, g: HeadGrad) -> PolicyGrads {
        let (net, _) = self.net.backward(cache, g.out.view());
        PolicyGrads { net, log_std: g.log_std }
    }

    /// Samples one action per row, using `rngs[i]` for row `i`.
    pub fn sample<R: Rng>(&self, obs: ArrayView2<f64>, rngs: &mut [R]) -> Result<Vec<Sampled>, NetError> {
        let out = self.outputs(obs)?;
        Ok(out
            .outer_iter()
            .zip(rngs.iter_mut())
            .map(|(row, rng)| {
                let row = row.as_slice().expect("standard layout");
                let cont = if self.layout.n_cont > 0 { gaussian_sample(self.mean(row), &self.log_std, rng) } else { vec![] };
                let cat = if self.layout.n_cat > 0 { categorical_sample(self.logits(row), rng) } else { 0 };
                Sampled { logp: self.logprob(row, &cont, cat), value: self.value_of(row), cont, cat }
            })
            .collect())
    }

    /// Gaussian mean and categorical argmax (lowest index on ties).
    pub fn deterministic(&self, obs: ArrayView2<f64>) -> Result<Vec<(Vec<f64>, usize)>, NetError> {
        let out = self.outputs(obs)?;
        Ok(out
            .outer_iter()
            .map(|row| {
                let row = row.as_slice().expect("standard layout");
                let logits = self.logits(row);
                let mut best = 0;
                for (i, z) in logits.iter().enumerate() {
                    if *z > logits[best] {
                        best = i;
                    }
                }
                (self.mean(row).to_vec(), best)
            })
            .collect())
    }

    pub fn values(&self, obs: ArrayView2<f64>) -> Result<Vec<f64>, NetError> {
        let out = self.outputs(obs)?;
        Ok(out.outer_iter().map(|r| self.value_of(r.as_slice().unwrap())).collect())
    }

    pub fn apply_log_std_bounds(&mut self) {
        for v in &mut self.log_std {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s = self.net.param_slices_mut();
        s.push(&mut self.log_std);
        s
    }

    pub fn is_finite(&self) -> bool {
        self.net.is_finite() && self.log_std.iter().all(|v| v.is_finite())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut aux = vec![self.layout.obs_dim as f64, self.layout.n_cont as f64, self.layout.n_cat as f64];
        aux.extend_from_slice(&self.log_std);
        Checkpoint { role: "policy".into(), net: self.net.clone(), aux }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, NetError> {
        if ck.role != "policy" || ck.aux.len() < 3 {
            return Err(NetError::Format(format!("expected a policy checkpoint, found role `{}`", ck.role)));
        }
        let layout = PolicyLayout { obs_dim: ck.aux[0] as usize, n_cont: ck.aux[1] as usize, n_cat: ck.aux[2] as usize };
        if ck.aux.len() != 3 + layout.n_cont || ck.net.n_in() != layout.obs_dim || ck.net.n_out() != layout.n_out() {
            return Err(NetError::Format("policy layout does not match the network".into()));
        }
        Ok(Policy { layout, net: ck.net, log_std: ck.aux[3..].to_vec() })
    }
}
