//! Clipped-surrogate actor-critic optimization with GAE advantages.

mod policy;
mod rollout;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netcore::{Adam, NetError};

pub use policy::{Policy, PolicyGrads, PolicyLayout, Sampled};
pub(crate) use policy::HeadGrad;
pub use rollout::{Collector, EpisodeSummary};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("non-finite loss or gradient in {0}; parameters restored")]
    NonFiniteLoss(&'static str),
    #[error("invalid PPO config: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    /// Surrogate clip range.
    pub clip: f64,
    /// Value-loss weight.
    pub c1: f64,
    /// Entropy-bonus weight.
    pub c2: f64,
    pub batch_size: usize,
    pub buffer_size: usize,
    /// Steps after which an unfinished episode segment is cut and bootstrapped.
    pub horizon: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub n_envs: usize,
    pub hidden: Vec<usize>,
    /// Global gradient-norm cap per minibatch step; 0 disables it.
    pub max_grad_norm: f64,
    /// Decay learning rate, clip range and entropy weight linearly over the
    /// step budget.
    pub linear_decay: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            c1: 0.95,
            c2: 0.01,
            batch_size: 512,
            buffer_size: 10_240,
            horizon: 400,
            learning_rate: 5e-4,
            epochs: 3,
            gamma: 0.99,
            lambda: 0.95,
            n_envs: 16,
            hidden: vec![256, 256, 256],
            max_grad_norm: 0.5,
            linear_decay: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::Config(m.into()));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.buffer_size % self.batch_size != 0 {
            return bad("buffer_size must be a positive multiple of batch_size");
        }
        if self.n_envs == 0 || self.buffer_size % self.n_envs != 0 {
            return bad("buffer_size must be divisible by n_envs");
        }
        if self.horizon == 0 || self.epochs == 0 {
            return bad("horizon and epochs must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("gamma and lambda must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn minibatches_per_epoch(&self) -> usize {
        self.buffer_size / self.batch_size
    }

    /// Config in effect at `progress` (fraction of the step budget used):
    /// learning rate toward 1e-10, clip toward 0.1 and c2 toward 1e-5.
    pub fn scheduled(&self, progress: f64) -> PpoConfig {
        if !self.linear_decay {
            return self.clone();
        }
        let p = progress.clamp(0.0, 1.0);
        let lerp = |from: f64, to: f64| if from <= to { from } else { from + (to - from) * p };
        PpoConfig {
            learning_rate: lerp(self.learning_rate, 1e-10),
            clip: lerp(self.clip, 0.1),
            c2: lerp(self.c2, 1e-5),
            ..self.clone()
        }
    }
}

/// Time-major experience: row `t * n_envs + e` is step `t` of env slot `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub steps: usize,
    pub obs: Array2<f64>,
    /// Raw (unclipped) continuous samples.
    pub cont: Array2<f64>,
    pub cat: Vec<usize>,
    /// Action encoding as the environment saw it (clipped deltas, command scalar).
    pub act_enc: Array2<f64>,
    pub logp: Vec<f64>,
    pub values: Vec<f64>,
    pub reward_ext: Vec<f64>,
    pub reward_gail: Vec<f64>,
    /// Mixed reward the advantages are computed from.
    pub rewards: Vec<f64>,
    /// Episode ended for real: no bootstrap.
    pub terminal: Vec<bool>,
    /// Segment ended without termination (time limit or horizon cut).
    pub cut: Vec<bool>,
    /// V(s') for rows that are cut or sit on the last buffer step.
    pub next_value: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub episodes: Vec<EpisodeSummary>,
}

impl RolloutBuffer {
    pub fn zeros(n_envs: usize, steps: usize, obs_dim: usize, n_cont: usize, enc_dim: usize) -> Self {
        let n = n_envs * steps;
        RolloutBuffer {
            n_envs,
            steps,
            obs: Array2::zeros((n, obs_dim)),
            cont: Array2::zeros((n, n_cont)),
            cat: vec![0; n],
            act_enc: Array2::zeros((n, enc_dim)),
            logp: vec![0.0; n],
            values: vec![0.0; n],
            reward_ext: vec![0.0; n],
            reward_gail: vec![0.0; n],
            rewards: vec![0.0; n],
            terminal: vec![false; n],
            cut: vec![false; n],
            next_value: vec![0.0; n],
            advantages: vec![0.0; n],
            returns: vec![0.0; n],
            episodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.n_envs * self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Discriminator input rows: observation followed by action encoding.
    pub fn disc_inputs(&self) -> Array2<f64> {
        ndarray::concatenate(Axis(1), &[self.obs.view(), self.act_enc.view()]).expect("equal row counts")
    }
}

/// Backward GAE over each env stream, writing `advantages` and
/// `returns = advantages + values`.
pub fn compute_gae(buf: &mut RolloutBuffer, gamma: f64, lambda: f64) {
    let n = buf.n_envs;
    for e in 0..n {
        let mut next_adv = 0.0;
        for t in (0..buf.steps).rev() {
            let i = t * n + e;
            let (next_v, carry) = if buf.terminal[i] {
                (0.0, 0.0)
            } else if buf.cut[i] || t + 1 == buf.steps {
                (buf.next_value[i], 0.0)
            } else {
                (buf.values[i + n], next_adv)
            };
            let delta = buf.rewards[i] + gamma * next_v - buf.values[i];
            let adv = delta + gamma * lambda * carry;
            buf.advantages[i] = adv;
            buf.returns[i] = adv + buf.values[i];
            next_adv = adv;
        }
    }
}

/// One minibatch worth of training rows.
#[derive(Debug, Clone)]
pub struct MiniBatch {
    pub obs: Array2<f64>,
    pub cont: Array2<f64>,
    pub cat: Vec<usize>,
    pub logp_old: Vec<f64>,
    pub adv: Vec<f64>,
    pub ret: Vec<f64>,
}

impl MiniBatch {
    pub fn gather(buf: &RolloutBuffer, adv: &[f64], idx: &[usize]) -> Self {
        MiniBatch {
            obs: buf.obs.select(Axis(0), idx),
            cont: buf.cont.select(Axis(0), idx),
            cat: idx.iter().map(|&i| buf.cat[i]).collect(),
            logp_old: idx.iter().map(|&i| buf.logp[i]).collect(),
            adv: idx.iter().map(|&i| adv[i]).collect(),
            ret: idx.iter().map(|&i| buf.returns[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    /// Mean clipped surrogate (maximized).
    pub surrogate: f64,
    /// Mean squared value error.
    pub value: f64,
    pub entropy: f64,
    /// `-surrogate + c1 * value - c2 * entropy` (minimized).
    pub total: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Surrogate, value and entropy terms of the clipped objective with exact
/// gradients of `total`.
pub fn ppo_loss(policy: &Policy, mb: &MiniBatch, cfg: &PpoConfig) -> Result<(LossParts, PolicyGrads), PpoError> {
    let cache = policy.forward(mb.obs.view())?;
    let out = cache.output();
    let b = mb.cat.len();
    let inv_b = 1.0 / b as f64;
    let vcol = policy.layout.n_cont + policy.layout.n_cat;
    let mut g = HeadGrad::new(b, &policy.layout);
    let mut parts = LossParts::default();
    for r in 0..b {
        let row = out.row(r);
        let row = row.as_slice().expect("standard layout");
        let cont = mb.cont.row(r);
        let cont = cont.as_slice().expect("standard layout");
        let lp = policy.logprob(row, cont, mb.cat[r]);
        let ratio = (lp - mb.logp_old[r]).exp();
        let a = mb.adv[r];
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
        let unclipped_active = ratio * a <= clipped * a;
        parts.surrogate += inv_b * if unclipped_active { ratio * a } else { clipped * a };
        if unclipped_active {
            // d(-ratio * A)/d logp = -ratio * A
            policy.logprob_grad(row, cont, mb.cat[r], -a * ratio * inv_b, &mut g, r);
        }
        if (ratio - 1.0).abs() > cfg.clip {
            parts.clip_fraction += inv_b;
        }
        parts.approx_kl += inv_b * (mb.logp_old[r] - lp);
        let v = policy.value_of(row);
        parts.value += inv_b * (v - mb.ret[r]).powi(2);
        g.out[[r, vcol]] += cfg.c1 * 2.0 * (v - mb.ret[r]) * inv_b;
        parts.entropy += inv_b * policy.entropy(row);
        policy.entropy_grad(row, -cfg.c2 * inv_b, &mut g, r);
    }
    parts.total = -parts.surrogate + cfg.c1 * parts.value - cfg.c2 * parts.entropy;
    Ok((parts, policy.backprop(&cache, g)))
}

/// Mean loss statistics of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub aux_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Extra loss added to every minibatch step (behavior cloning plugs in here).
/// Returns `None` when inactive.
pub type AuxLoss<'a> = dyn FnMut(&Policy) -> Result<Option<(f64, PolicyGrads)>, PpoError> + 'a;

/// Continuous samples are clamped to `±ACTION_RANGE` and divided by it on the
/// way to the environment, so the Gaussian lives in a wider space than the
/// `[-1, 1]` joint-delta command.
pub const ACTION_RANGE: f64 = 3.0;

pub fn to_env_deltas(raw: &[f64]) -> [f64; 6] {
    let mut out = [0.0; 6];
    for (o, r) in out.iter_mut().zip(raw) {
        *o = r.clamp(-ACTION_RANGE, ACTION_RANGE) / ACTION_RANGE;
    }
    out
}

/// Policy-space target for an environment command (used by BC).
pub fn from_env_deltas(deltas: &[f64; 6]) -> [f64; 6] {
    deltas.map(|d| d * ACTION_RANGE)
}

pub fn normalized(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-8);
    xs.iter().map(|x| (x - mean) / sd).collect()
}

/// K epochs of shuffled minibatch descent on the buffer. On a non-finite loss
/// the policy and optimizer are rolled back to their state at entry.
pub fn ppo_update<R: Rng>(
    policy: &mut Policy,
    opt: &mut Adam,
    buf: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut R,
    aux: &mut AuxLoss<'_>,
) -> Result<UpdateStats, PpoError> {
    let saved = (policy.clone(), opt.clone());
    let adv = normalized(&buf.advantages);
    let mut idx: Vec<usize> = (0..buf.len()).collect();
    let mut stats = UpdateStats::default();
    let mut count = 0.0;
    let result = (|| {
        for _ in 0..cfg.epochs {
            idx.shuffle(rng);
            for chunk in idx.chunks(cfg.batch_size) {
                let mb = MiniBatch::gather(buf, &adv, chunk);
                let (parts, mut grads) = ppo_loss(policy, &mb, cfg)?;
                let mut aux_loss = 0.0;
                if let Some((l, g)) = aux(policy)? {
                    aux_loss = l;
                    grads.add_assign(&g);
                }
                if !parts.total.is_finite() || !aux_loss.is_finite() || !grads.is_finite() {
                    return Err(PpoError::NonFiniteLoss("ppo minibatch"));
                }
                if cfg.max_grad_norm > 0.0 {
                    let norm = grads.norm();
                    if norm > cfg.max_grad_norm {
                        grads.scale(cfg.max_grad_norm / norm);
                    }
                }
                opt.step(&mut policy.param_slices_mut(), &grads.slices());
                policy.apply_log_std_bounds();
                stats.policy_loss += -parts.surrogate;
                stats.value_loss += parts.value;
                stats.entropy += parts.entropy;
                stats.aux_loss += aux_loss;
                stats.approx_kl += parts.approx_kl;
                stats.clip_fraction += parts.clip_fraction;
                count += 1.0;
            }
        }
        if !policy.is_finite() {
            return Err(PpoError::NonFiniteLoss("policy parameters"));
        }
        Ok(())
    })();
    if let Err(e) = result {
        *policy = saved.0;
        *opt = saved.1;
        return Err(e);
    }
    for v in [
        &mut stats.policy_loss,
        &mut stats.value_loss,
        &mut stats.entropy,
        &mut stats.aux_loss,
        &mut stats.approx_kl,
        &mut stats.clip_fraction,
    ] {
        *v /= count;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_layout() -> PolicyLayout {
        PolicyLayout { obs_dim: 4, n_cont: 2, n_cat: 3 }
    }

    fn random_batch(policy: &Policy, b: usize, seed: u64) -> MiniBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = Array2::from_shape_fn((b, policy.layout.obs_dim), |_| rng.random_range(-1.0..1.0));
        let cont = Array2::from_shape_fn((b, policy.layout.n_cont), |_| rng.random_range(-1.0..1.0));
        let cat: Vec<usize> = (0..b).map(|_| rng.random_range(0..policy.layout.n_cat)).collect();
        let out = policy.outputs(obs.view()).unwrap();
        // Old log-probs near the current ones so both clip branches appear.
        let logp_old = (0..b)
            .map(|r| {
                policy.logprob(out.row(r).as_slice().unwrap(), cont.row(r).as_slice().unwrap(), cat[r])
                    + rng.random_range(-0.4..0.4)
            })
            .collect();
        MiniBatch {
            obs,
            cont,
            cat,
            logp_old,
            adv: (0..b).map(|_| rng.random_range(-2.0..2.0)).collect(),
            ret: (0..b).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn buffer_from(rewards: &[f64], values: &[f64], terminal_last: bool, bootstrap: f64) -> RolloutBuffer {
        let n = rewards.len();
        let mut b = RolloutBuffer::zeros(1, n, 1, 0, 1);
        b.rewards = rewards.to_vec();
        b.values = values.to_vec();
        b.terminal[n - 1] = terminal_last;
        b.next_value[n - 1] = bootstrap;
        b
    }

    #[test]
    fn minibatch_count_follows_buffer_and_batch() {
        assert_eq!(PpoConfig::default().minibatches_per_epoch(), 20);
        PpoConfig::default().validate().unwrap();
        let bad = PpoConfig { batch_size: 500, ..PpoConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn gae_with_zero_lambda_is_one_step_td() {
        let mut b = buffer_from(&[0.5, -1.0, 2.0], &[0.1, 0.3, -0.2], false, 0.7);
        compute_gae(&mut b, 0.9, 0.0);
        assert_eq!(b.advantages[0], 0.5 + 0.9 * 0.3 - 0.1);
        assert_eq!(b.advantages[1], -1.0 + 0.9 * -0.2 - 0.3);
        assert_eq!(b.advantages[2], 2.0 + 0.9 * 0.7 + 0.2);
    }

    #[test]
    fn gae_with_unit_lambda_is_discounted_return_minus_value() {
        let (r, v, g) = ([1.0, 0.0, 2.0], [0.5, -0.25, 1.0], 0.9);
        let mut b = buffer_from(&r, &v, true, 123.0);
        compute_gae(&mut b, g, 1.0);
        // Hand-computed: G0 = 1 + 0.9*0 + 0.81*2 = 2.62, G1 = 1.8, G2 = 2.
        let want = [2.62 - 0.5, 1.8 + 0.25, 2.0 - 1.0];
        for i in 0..3 {
            assert!((b.advantages[i] - want[i]).abs() < 1e-12);
            assert!((b.returns[i] - (want[i] + v[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_is_zero_for_zero_rewards_and_values() {
        let mut b = buffer_from(&[0.0; 5], &[0.0; 5], false, 0.0);
        compute_gae(&mut b, 0.99, 0.95);
        assert!(b.advantages.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn gae_cuts_bootstrap_and_do_not_leak_across_segments() {
        let mut b = buffer_from(&[0.0, 1.0, 0.0], &[0.0, 0.0, 0.0], false, 0.0);
        b.cut[0] = true;
        b.next_value[0] = 5.0;
        compute_gae(&mut b, 1.0, 1.0);
        assert_eq!(b.advantages[0], 5.0);
        assert_eq!(b.advantages[1], 1.0);
    }

    #[test]
    fn unchanged_parameters_give_mean_advantage_surrogate() {
        let p = Policy::new(tiny_layout(), &[8, 8], 1);
        let mut mb = random_batch(&p, 16, 2);
        let out = p.outputs(mb.obs.view()).unwrap();
        for r in 0..16 {
            mb.logp_old[r] = p.logprob(out.row(r).as_slice().unwrap(), mb.cont.row(r).as_slice().unwrap(), mb.cat[r]);
        }
        let (parts, _) = ppo_loss(&p, &mb, &PpoConfig::default()).unwrap();
        let mean_adv = mb.adv.iter().sum::<f64>() / 16.0;
        assert!((parts.surrogate - mean_adv).abs() < 1e-12);
        assert_eq!(parts.clip_fraction, 0.0);
    }

    #[test]
    fn clipping_caps_large_positive_ratios() {
        let p = Policy::new(PolicyLayout { obs_dim: 1, n_cont: 0, n_cat: 2 }, &[4], 0);
        let obs = Array2::zeros((1, 1));
        let out = p.outputs(obs.view()).unwrap();
        let lp = p.logprob(out.row(0).as_slice().unwrap(), &[], 0);
        let mb = MiniBatch {
            obs,
            cont: Array2::zeros((1, 0)),
            cat: vec![0],
            logp_old: vec![lp - 1.5f64.ln()],
            adv: vec![2.0],
            ret: vec![0.0],
        };
        let (parts, g) = ppo_loss(&p, &mb, &PpoConfig { c1: 0.0, c2: 0.0, ..PpoConfig::default() }).unwrap();
        assert!((parts.surrogate - 1.2 * 2.0).abs() < 1e-12);
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let mut p = Policy::new(tiny_layout(), &[6, 5], 3);
        p.log_std = vec![-0.3, 0.2];
        // Move the output layer off its tiny init so every head matters.
        p.net.layers.last_mut().unwrap().w.mapv_inplace(|w| w * 50.0);
        let mb = random_batch(&p, 12, 4);
        let cfg = PpoConfig::default();
        let (_, g) = ppo_loss(&p, &mb, &cfg).unwrap();
        let analytic: Vec<f64> = g.slices().concat();
        let h = 1e-6;
        let mut k = 0;
        let n_tensors = p.param_slices_mut().len();
        let mut worst: f64 = 0.0;
        for t in 0..n_tensors {
            let len = p.param_slices_mut()[t].len();
            for i in 0..len {
                let orig = p.param_slices_mut()[t][i];
                p.param_slices_mut()[t][i] = orig + h;
                let up = ppo_loss(&p, &mb, &cfg).unwrap().0.total;
                p.param_slices_mut()[t][i] = orig - h;
                let dn = ppo_loss(&p, &mb, &cfg).unwrap().0.total;
                p.param_slices_mut()[t][i] = orig;
                let fd = (up - dn) / (2.0 * h);
                let err = (analytic[k] - fd).abs() / analytic[k].abs().max(fd.abs()).max(1e-4);
                worst = worst.max(err);
                k += 1;
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn bandit_probability_of_better_arm_rises_every_update() {
        let layout = PolicyLayout { obs_dim: 1, n_cont: 0, n_cat: 2 };
        let mut p = Policy::new(layout, &[8], 5);
        let cfg = PpoConfig {
            batch_size: 32,
            buffer_size: 64,
            n_envs: 64,
            learning_rate: 1e-3,
            max_grad_norm: 0.0,
            ..PpoConfig::default()
        };
        let mut opt = Adam::new(cfg.learning_rate);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let obs = Array2::from_elem((1, 1), 1.0);
        let prob = |p: &Policy| crate::netcore::softmax(p.logits(p.outputs(obs.view()).unwrap().row(0).as_slice().unwrap()))[0];
        let mut last = prob(&p);
        for _ in 0..50 {
            let mut b = RolloutBuffer::zeros(64, 1, 1, 0, 1);
            b.obs.fill(1.0);
            let mut rngs: Vec<ChaCha8Rng> = (0..64).map(|_| ChaCha8Rng::seed_from_u64(rng.random())).collect();
            let s = p.sample(b.obs.view(), &mut rngs).unwrap();
            for (i, smp) in s.iter().enumerate() {
                b.cat[i] = smp.cat;
                b.logp[i] = smp.logp;
                b.values[i] = smp.value;
                b.rewards[i] = if smp.cat == 0 { 1.0 } else { 0.0 };
                b.terminal[i] = true;
            }
            compute_gae(&mut b, 0.99, 0.95);
            ppo_update(&mut p, &mut opt, &b, &cfg, &mut rng, &mut |_| Ok(None)).unwrap();
            let now = prob(&p);
            assert!(now > last, "{now} <= {last}");
            last = now;
        }
        assert!(last > 0.9);
    }

    #[test]
    fn non_finite_loss_restores_parameters() {
        let mut p = Policy::new(tiny_layout(), &[4], 7);
        let before = p.clone();
        let mut opt = Adam::new(5e-4);
        let mut b = RolloutBuffer::zeros(4, 2, 4, 2, 7);
        b.returns[3] = f64::NAN;
        let cfg = PpoConfig { batch_size: 8, buffer_size: 8, n_envs: 4, ..PpoConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = ppo_update(&mut p, &mut opt, &b, &cfg, &mut rng, &mut |_| Ok(None));
        assert!(matches!(r, Err(PpoError::NonFiniteLoss(_))));
        assert_eq!(p, before);
        assert_eq!(opt.t, 0);
    }
}
