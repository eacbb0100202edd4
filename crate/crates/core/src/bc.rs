//! Behavior cloning as an auxiliary negative log-likelihood on expert
//! actions, active for a fixed window of environment steps.

use ndarray::{Array2, Axis};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::demos::DemoSet;
use crate::ppo::{from_env_deltas, HeadGrad, Policy, PolicyGrads, PpoError};
use crate::tilesim::OBS_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcConfig {
    pub strength: f64,
    /// BC applies while the trainer step is in `[0, active_steps)`.
    pub active_steps: usize,
    pub batch_size: usize,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig { strength: 0.5, active_steps: 100_000, batch_size: 512 }
    }
}

/// Whether the BC term is added at this trainer step.
pub fn bc_phase(cfg: &BcConfig, trainer_step: usize) -> bool {
    cfg.strength > 0.0 && trainer_step < cfg.active_steps
}

/// Expert observations and actions (joint deltas in policy units) flattened
/// for minibatch sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoBatchSource {
    pub obs: Array2<f64>,
    pub cont: Array2<f64>,
    pub cat: Vec<usize>,
}

impl DemoBatchSource {
    pub fn from_demos(demos: &DemoSet) -> Self {
        let n = demos.transition_count();
        let mut obs = Array2::zeros((n, OBS_DIM));
        let mut cont = Array2::zeros((n, 6));
        let mut cat = Vec::with_capacity(n);
        for (i, t) in demos.transitions().enumerate() {
            obs.row_mut(i).as_slice_mut().unwrap().copy_from_slice(t.observation.as_slice());
            cont.row_mut(i).as_slice_mut().unwrap().copy_from_slice(&from_env_deltas(&t.action.deltas));
            cat.push(t.action.cmd.index());
        }
        DemoBatchSource { obs, cont, cat }
    }

    pub fn len(&self) -> usize {
        self.cat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cat.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> DemoBatchSource {
        DemoBatchSource {
            obs: self.obs.select(Axis(0), idx),
            cont: self.cont.select(Axis(0), idx),
            cat: idx.iter().map(|&i| self.cat[i]).collect(),
        }
    }

    /// Uniform rows without replacement (all rows when `n` exceeds the size).
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> DemoBatchSource {
        let n = n.min(self.len());
        self.select(&index::sample(rng, self.len(), n).into_vec())
    }
}

/// `strength * mean NLL` of the expert actions and its gradient.
pub fn bc_loss(policy: &Policy, batch: &DemoBatchSource, strength: f64) -> Result<(f64, PolicyGrads), PpoError> {
    if strength == 0.0 {
        return Ok((0.0, PolicyGrads::zeros_like(policy)));
    }
    let cache = policy.forward(batch.obs.view())?;
    let out = cache.output();
    let b = batch.len();
    let scale = strength / b as f64;
    let mut g = HeadGrad::new(b, &policy.layout);
    let mut nll = 0.0;
    for r in 0..b {
        let row = out.row(r);
        let row = row.as_slice().expect("standard layout");
        let cont = batch.cont.row(r);
        let cont = cont.as_slice().expect("standard layout");
        nll -= policy.logprob(row, cont, batch.cat[r]);
        policy.logprob_grad(row, cont, batch.cat[r], -scale, &mut g, r);
    }
    let loss = nll * scale;
    if !loss.is_finite() {
        return Err(PpoError::NonFiniteLoss("behavior cloning"));
    }
    Ok((loss, policy.backprop(&cache, g)))
}

/// Mean squared error of the deterministic joint deltas on a batch, in
/// policy units.
pub fn action_mse(policy: &Policy, batch: &DemoBatchSource) -> Result<f64, PpoError> {
    let out = policy.outputs(batch.obs.view())?;
    let mut total = 0.0;
    for r in 0..batch.len() {
        let row = out.row(r);
        let mean = policy.mean(row.as_slice().unwrap());
        total += mean.iter().zip(batch.cont.row(r)).map(|(m, a)| (m - a).powi(2)).sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}
