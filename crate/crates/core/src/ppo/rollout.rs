use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{to_env_deltas, Policy, RolloutBuffer};
use crate::netcore::NetError;
use crate::tilesim::{AgentAction, EffectorCmd, Observation, SceneConfig, StepEvent, TileEnv, ACTION_DIM, OBS_DIM};

/// Outcome of one finished episode seen during collection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub ext_return: f64,
    pub length: usize,
    pub picked: bool,
    pub installed: bool,
}

/// Lockstep tile environments. Slot `e` owns its env and its RNG (action
/// sampling and episode seeds), so results do not depend on scheduling.
#[derive(Debug, Clone)]
pub struct Collector {
    envs: Vec<TileEnv>,
    rngs: Vec<ChaCha8Rng>,
    obs: Vec<Observation>,
    ep_return: Vec<f64>,
    ep_len: Vec<usize>,
    picked: Vec<bool>,
    since_cut: Vec<usize>,
    horizon: usize,
    /// Environment steps taken so far over all slots.
    pub total_steps: usize,
}

impl Collector {
    pub fn new(scene: &SceneConfig, n_envs: usize, horizon: usize, seed: u64) -> Self {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let mut rngs: Vec<ChaCha8Rng> = (0..n_envs).map(|_| ChaCha8Rng::seed_from_u64(master.random())).collect();
        let mut envs = Vec::with_capacity(n_envs);
        let mut obs = Vec::with_capacity(n_envs);
        for rng in rngs.iter_mut() {
            let mut env = TileEnv::new(scene.clone());
            obs.push(env.reset(rng.random()));
            envs.push(env);
        }
        Collector {
            envs,
            rngs,
            obs,
            ep_return: vec![0.0; n_envs],
            ep_len: vec![0; n_envs],
            picked: vec![false; n_envs],
            since_cut: vec![0; n_envs],
            horizon,
            total_steps: 0,
        }
    }

    pub fn n_envs(&self) -> usize {
        self.envs.len()
    }

    fn obs_matrix(obs: &[Observation]) -> Array2<f64> {
        let mut m = Array2::zeros((obs.len(), OBS_DIM));
        for (i, o) in obs.iter().enumerate() {
            m.row_mut(i).as_slice_mut().unwrap().copy_from_slice(o.as_slice());
        }
        m
    }

    /// Runs `steps` lockstep steps and returns the filled buffer (rewards
    /// mixed and advantages not yet computed).
    pub fn collect(&mut self, policy: &Policy, steps: usize) -> Result<RolloutBuffer, NetError> {
        let n = self.envs.len();
        let mut buf = RolloutBuffer::zeros(n, steps, OBS_DIM, policy.layout.n_cont, ACTION_DIM);
        for t in 0..steps {
            let obs = Self::obs_matrix(&self.obs);
            let samples = policy.sample(obs.view(), &mut self.rngs)?;
            let mut boot_rows = Vec::new();
            let mut boot_obs = Vec::new();
            for (e, s) in samples.into_iter().enumerate() {
                let i = t * n + e;
                buf.obs.row_mut(i).assign(&obs.row(e));
                let action = AgentAction { deltas: to_env_deltas(&s.cont), cmd: EffectorCmd::from_index(s.cat).expect("three commands") };
                buf.cont.row_mut(i).as_slice_mut().unwrap().copy_from_slice(&s.cont);
                buf.act_enc.row_mut(i).as_slice_mut().unwrap().copy_from_slice(&action.encode());
                buf.cat[i] = s.cat;
                buf.logp[i] = s.logp;
                buf.values[i] = s.value;

                let r = self.envs[e].step(&action).expect("collector resets finished envs");
                self.total_steps += 1;
                buf.reward_ext[i] = r.reward;
                self.ep_return[e] += r.reward;
                self.ep_len[e] += 1;
                self.since_cut[e] += 1;
                self.picked[e] |= r.event == StepEvent::Picked;
                let terminal = r.done && r.event != StepEvent::Truncated;
                buf.terminal[i] = terminal;
                if !terminal && (r.done || self.since_cut[e] >= self.horizon) {
                    buf.cut[i] = true;
                    self.since_cut[e] = 0;
                }
                if !terminal && (buf.cut[i] || t + 1 == steps) {
                    boot_rows.push(i);
                    boot_obs.push(r.observation.clone());
                }
                if r.done {
                    buf.episodes.push(EpisodeSummary {
                        ext_return: self.ep_return[e],
                        length: self.ep_len[e],
                        picked: self.picked[e],
                        installed: r.event == StepEvent::Installed,
                    });
                    self.ep_return[e] = 0.0;
                    self.ep_len[e] = 0;
                    self.picked[e] = false;
                    self.since_cut[e] = 0;
                    let seed = self.rngs[e].random();
                    self.obs[e] = self.envs[e].reset(seed);
                } else {
                    self.obs[e] = r.observation;
                }
            }
            if !boot_rows.is_empty() {
                let v = policy.values(Self::obs_matrix(&boot_obs).view())?;
                for (row, value) in boot_rows.into_iter().zip(v) {
                    buf.next_value[row] = value;
                }
            }
        }
        buf.rewards.clone_from(&buf.reward_ext);
        Ok(buf)
    }
}
