//! Adversarial imitation: a discriminator over (observation, action) pairs
//! trained to output 1 for agent pairs and 0 for expert pairs, and the
//! surrogate reward `-log D` it hands to the policy.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::demos::DemoSet;
use crate::netcore::{Adam, Checkpoint, Mlp, MlpGrads, NetError};
use crate::ppo::{PpoError, RolloutBuffer};
use crate::tilesim::{ACTION_DIM, OBS_DIM};

pub const DISC_INPUT: usize = OBS_DIM + ACTION_DIM;
const LOGIT_CLAMP: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GailConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    /// Passes over the agent buffer per policy update.
    pub passes: usize,
}

impl Default for GailConfig {
    fn default() -> Self {
        GailConfig { gamma: 0.99, learning_rate: 5e-4, hidden: vec![256, 256, 256], batch_size: 512, passes: 1 }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub net: Mlp,
}

impl Discriminator {
    pub fn new(input: usize, hidden: &[usize], seed: u64) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Discriminator { net: Mlp::new(&sizes, 1.0, seed) }
    }

    /// Clamped logits, one per row.
    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, NetError> {
        Ok(self.net.predict(x)?.column(0).iter().map(|z| z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)).collect())
    }

    /// Probability each row is agent-generated, strictly inside (0, 1).
    pub fn prob(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, NetError> {
        Ok(self.logits(x)?.into_iter().map(sigmoid).collect())
    }

    /// `-log D` per row: about `log 2` at D = 0.5, near 0 for confident agent calls.
    pub fn surrogate_reward(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, NetError> {
        Ok(self.logits(x)?.into_iter().map(|z| softplus(-z)).collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint { role: "discriminator".into(), net: self.net.clone(), aux: vec![] }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, NetError> {
        if ck.role != "discriminator" || ck.net.n_out() != 1 {
            return Err(NetError::Format(format!("expected a discriminator checkpoint, found role `{}`", ck.role)));
        }
        Ok(Discriminator { net: ck.net })
    }
}

/// Logistic loss `mean softplus(-z_agent) + mean softplus(z_expert)`, i.e. the
/// negated objective `E_agent[log D] + E_expert[log(1 - D)]`, with gradients.
pub fn disc_loss(
    disc: &Discriminator,
    expert: ArrayView2<f64>,
    agent: ArrayView2<f64>,
) -> Result<(f64, MlpGrads), NetError> {
    let mut total = 0.0;
    let mut grads = MlpGrads::zeros_like(&disc.net);
    for (x, agent_side) in [(agent, true), (expert, false)] {
        let cache = disc.net.forward(x)?;
        let n = x.nrows() as f64;
        let mut g = Array2::zeros((x.nrows(), 1));
        for (r, z) in cache.output().column(0).iter().enumerate() {
            let inside = z.abs() < LOGIT_CLAMP;
            let zc = z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
            if agent_side {
                total += softplus(-zc) / n;
                if inside {
                    g[[r, 0]] = (sigmoid(zc) - 1.0) / n;
                }
            } else {
                total += softplus(zc) / n;
                if inside {
                    g[[r, 0]] = sigmoid(zc) / n;
                }
            }
        }
        let (gr, _) = disc.net.backward(&cache, g.view());
        grads.add_assign(&gr);
    }
    Ok((total, grads))
}

/// One optimizer step on a balanced expert/agent pair of batches.
pub fn disc_update(
    disc: &mut Discriminator,
    opt: &mut Adam,
    expert: ArrayView2<f64>,
    agent: ArrayView2<f64>,
) -> Result<f64, PpoError> {
    assert_eq!(expert.nrows(), agent.nrows(), "discriminator batches must be balanced");
    let (loss, grads) = disc_loss(disc, expert, agent)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(PpoError::NonFiniteLoss("discriminator"));
    }
    opt.step(&mut disc.net.param_slices_mut(), &grads.slices());
    Ok(loss)
}

/// Expert (observation, action) rows from a demonstration set.
pub fn demo_inputs(demos: &DemoSet) -> Array2<f64> {
    let n = demos.transition_count();
    let mut m = Array2::zeros((n, DISC_INPUT));
    for (i, t) in demos.transitions().enumerate() {
        let mut row = m.row_mut(i);
        let row = row.as_slice_mut().unwrap();
        row[..OBS_DIM].copy_from_slice(t.observation.as_slice());
        row[OBS_DIM..].copy_from_slice(&t.action.encode());
    }
    m
}

/// Trains the discriminator for the configured passes over the agent buffer
/// (expert rows drawn without replacement, recycled as needed), then stamps
/// `-log D` onto every buffer row. Returns the mean discriminator loss.
pub fn gail_iteration<R: Rng>(
    disc: &mut Discriminator,
    opt: &mut Adam,
    buf: &mut RolloutBuffer,
    expert: &Array2<f64>,
    cfg: &GailConfig,
    rng: &mut R,
) -> Result<f64, PpoError> {
    assert!(expert.nrows() > 0, "GAIL needs at least one expert transition");
    let agent = buf.disc_inputs();
    let mut agent_idx: Vec<usize> = (0..agent.nrows()).collect();
    let mut expert_idx: Vec<usize> = (0..expert.nrows()).collect();
    let mut expert_pos = expert_idx.len();
    let mut total = 0.0;
    let mut steps = 0.0;
    for _ in 0..cfg.passes {
        agent_idx.shuffle(rng);
        for chunk in agent_idx.chunks(cfg.batch_size) {
            let mut pick = Vec::with_capacity(chunk.len());
            while pick.len() < chunk.len() {
                if expert_pos == expert_idx.len() {
                    expert_idx.shuffle(rng);
                    expert_pos = 0;
                }
                pick.push(expert_idx[expert_pos]);
                expert_pos += 1;
            }
            let a = agent.select(Axis(0), chunk);
            let e = expert.select(Axis(0), &pick);
            total += disc_update(disc, opt, e.view(), a.view())?;
            steps += 1.0;
        }
    }
    buf.reward_gail = disc.surrogate_reward(agent.view())?;
    Ok(if steps > 0.0 { total / steps } else { 0.0 })
}

/// Area under the ROC curve for scores where `positive` rows should score higher.
pub fn auc(positive: &[f64], negative: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> =
        positive.iter().map(|&s| (s, true)).chain(negative.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Mann-Whitney U with average ranks for ties.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        rank_sum += avg * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let (p, n) = (positive.len() as f64, negative.len() as f64);
    (rank_sum - p * (p + 1.0) / 2.0) / (p * n)
}
