//! Group configurations, reward mixing, the training loop, deterministic
//! evaluation and the multi-group comparison table.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bc::{bc_loss, bc_phase, BcConfig, DemoBatchSource};
use crate::demos::{generate_demos, load_demos, subsample, DemoError, DemoSet, ExpertConfig};
use crate::gail::{demo_inputs, gail_iteration, Discriminator, GailConfig, DISC_INPUT};
use crate::netcore::{read_checkpoint, write_checkpoint, Adam, NetError};
use crate::ppo::{compute_gae, ppo_update, to_env_deltas, Collector, EpisodeSummary, Policy, PolicyLayout, PpoConfig, PpoError, RolloutBuffer};
use crate::tilesim::{AgentAction, EffectorCmd, SceneConfig, SimError, StepEvent, TileEnv, OBS_DIM};

pub const METRICS_SCHEMA: u32 = 1;
pub const CONVERGED_RETURN: f64 = 1.95;
pub const RETURN_WINDOW: usize = 100;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("group config: {0}")]
    Config(String),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Demo(#[from] DemoError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<toml::de::Error> for TrainError {
    fn from(e: toml::de::Error) -> Self {
        TrainError::Config(e.to_string())
    }
}

/// One row of the group table. `bc.strength` is ignored in favor of
/// `bc_strength`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupConfig {
    pub name: String,
    pub ppo_strength: f64,
    pub gail_strength: f64,
    pub bc_strength: f64,
    pub demo_count: usize,
    pub max_steps: usize,
    pub seed: u64,
    /// Demo file to draw `demo_count` trajectories from; scripted demos are
    /// generated when absent.
    pub demos: Option<PathBuf>,
    pub demo_seed: u64,
    /// Policy checkpoint every this many updates (0 disables periodic ones).
    pub checkpoint_every: usize,
    pub ppo: PpoConfig,
    pub gail: GailConfig,
    pub bc: BcConfig,
    pub scene: SceneConfig,
    pub expert: ExpertConfig,
}

impl Default for GroupConfig {
    fn default() -> Self {
        GroupConfig {
            name: "group".into(),
            ppo_strength: 1.0,
            gail_strength: 0.0,
            bc_strength: 0.0,
            demo_count: 0,
            max_steps: 5_000_000,
            seed: 0,
            demos: None,
            demo_seed: 10_000,
            checkpoint_every: 10,
            ppo: PpoConfig::default(),
            gail: GailConfig::default(),
            bc: BcConfig::default(),
            scene: SceneConfig::default(),
            expert: ExpertConfig::default(),
        }
    }
}

impl GroupConfig {
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let g: GroupConfig = toml::from_str(text)?;
        g.validate()?;
        Ok(g)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let mut g: GroupConfig = toml::from_str(&std::fs::read_to_string(path)?)?;
        if let (Some(d), Some(dir)) = (&g.demos, path.parent()) {
            if d.is_relative() {
                g.demos = Some(dir.join(d));
            }
        }
        g.validate()?;
        Ok(g)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("group config serializes")
    }

    pub fn uses_demos(&self) -> bool {
        self.gail_strength > 0.0 || self.bc_strength > 0.0
    }

    pub fn bc_config(&self) -> BcConfig {
        BcConfig { strength: self.bc_strength, ..self.bc.clone() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        for (k, v) in [("ppo", self.ppo_strength), ("gail", self.gail_strength), ("bc", self.bc_strength)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TrainError::Config(format!("{k}_strength must be a finite value >= 0, got {v}")));
            }
        }
        if self.uses_demos() && self.demo_count == 0 {
            return Err(TrainError::Config("GAIL or BC needs demo_count > 0".into()));
        }
        self.ppo.validate()?;
        if self.ppo.buffer_size % self.ppo.n_envs != 0 {
            return Err(TrainError::Config("buffer_size must be a multiple of n_envs".into()));
        }
        if self.gail.batch_size == 0 || self.bc.batch_size == 0 {
            return Err(TrainError::Config("batch sizes must be positive".into()));
        }
        self.scene.validate()?;
        Ok(())
    }

    /// Loads or generates the demonstrations this group trains on.
    pub fn demo_set(&self) -> Result<DemoSet, TrainError> {
        match &self.demos {
            Some(path) => {
                let all = load_demos(path)?;
                Ok(subsample(&all, self.demo_count, self.demo_seed)?)
            }
            None => {
                let mut env = TileEnv::new(self.scene.clone());
                Ok(generate_demos(&mut env, &self.expert, self.demo_count, self.demo_seed)?)
            }
        }
    }
}

/// `ppo_strength * r_ext + gail_strength * r_gail` into `buf.rewards`.
pub fn mix_rewards(buf: &mut RolloutBuffer, ppo_strength: f64, gail_strength: f64) {
    for i in 0..buf.len() {
        buf.rewards[i] = ppo_strength * buf.reward_ext[i] + gail_strength * buf.reward_gail[i];
    }
}

/// One metrics row per policy update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub schema: u32,
    pub update: usize,
    pub steps: usize,
    pub episodes: usize,
    pub mean_return: f64,
    pub moving_return: f64,
    pub picked_rate: f64,
    pub installed_rate: f64,
    pub mean_length: f64,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub bc_active: bool,
    pub bc_loss: f64,
    pub gail_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

struct DemoData {
    disc_rows: Array2<f64>,
    bc: DemoBatchSource,
}

/// The whole mutable training state. Cloning it forks a run exactly.
#[derive(Clone)]
pub struct Trainer {
    pub group: GroupConfig,
    pub policy: Policy,
    opt: Adam,
    collector: Collector,
    ppo_rng: ChaCha8Rng,
    gail_rng: ChaCha8Rng,
    bc_rng: ChaCha8Rng,
    pub disc: Option<Discriminator>,
    disc_opt: Adam,
    demos: Option<std::sync::Arc<DemoData>>,
    recent: VecDeque<f64>,
    pub updates: usize,
}

impl Trainer {
    pub fn new(group: GroupConfig) -> Result<Self, TrainError> {
        let demos = if group.uses_demos() { Some(group.demo_set()?) } else { None };
        Self::with_demos(group, demos)
    }

    /// Builds the trainer around an already loaded demo set (ignored when
    /// neither GAIL nor BC is enabled).
    pub fn with_demos(group: GroupConfig, demos: Option<DemoSet>) -> Result<Self, TrainError> {
        group.validate()?;
        let mut seeds = ChaCha8Rng::seed_from_u64(group.seed);
        let policy = Policy::new(PolicyLayout::tile(), &group.ppo.hidden, seeds.random());
        let collector = Collector::new(&group.scene, group.ppo.n_envs, group.ppo.horizon, seeds.random());
        let ppo_rng = ChaCha8Rng::seed_from_u64(seeds.random());
        let gail_rng = ChaCha8Rng::seed_from_u64(seeds.random());
        let bc_rng = ChaCha8Rng::seed_from_u64(seeds.random());
        let disc_seed: u64 = seeds.random();
        let demos = match (group.uses_demos(), demos) {
            (false, _) => None,
            (true, None) => return Err(TrainError::Config("GAIL or BC enabled without demonstrations".into())),
            (true, Some(set)) => {
                if set.transition_count() == 0 {
                    return Err(TrainError::Config("demonstration set is empty".into()));
                }
                Some(std::sync::Arc::new(DemoData { disc_rows: demo_inputs(&set), bc: DemoBatchSource::from_demos(&set) }))
            }
        };
        let disc = (group.gail_strength > 0.0).then(|| Discriminator::new(DISC_INPUT, &group.gail.hidden, disc_seed));
        Ok(Trainer {
            opt: Adam::new(group.ppo.learning_rate),
            disc_opt: Adam::new(group.gail.learning_rate),
            group,
            policy,
            collector,
            ppo_rng,
            gail_rng,
            bc_rng,
            disc,
            demos,
            recent: VecDeque::with_capacity(RETURN_WINDOW),
            updates: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.collector.total_steps
    }

    pub fn steps_per_update(&self) -> usize {
        self.group.ppo.buffer_size
    }

    /// Mean return over the last `RETURN_WINDOW` finished episodes.
    pub fn moving_return(&self) -> Option<f64> {
        (!self.recent.is_empty()).then(|| self.recent.iter().sum::<f64>() / self.recent.len() as f64)
    }

    pub fn converged(&self) -> bool {
        self.recent.len() == RETURN_WINDOW && self.moving_return().unwrap() >= CONVERGED_RETURN
    }

    /// Fraction of the step budget used at `steps`.
    pub fn progress(&self, steps: usize) -> f64 {
        if self.group.max_steps == 0 {
            1.0
        } else {
            steps as f64 / self.group.max_steps as f64
        }
    }

    /// Replaces the BC strength, e.g. to fork a BC-free continuation.
    pub fn set_bc_strength(&mut self, strength: f64) {
        self.group.bc_strength = strength;
    }

    /// Collect, stamp GAIL rewards, mix, GAE, then the PPO epochs with the
    /// BC term while the step count is inside the BC window.
    pub fn update(&mut self) -> Result<MetricsRow, TrainError> {
        let per_env = self.group.ppo.buffer_size / self.group.ppo.n_envs;
        let mut buf = self.collector.collect(&self.policy, per_env)?;
        let steps = self.collector.total_steps;

        let mut gail_loss = 0.0;
        if let (Some(disc), Some(demos)) = (self.disc.as_mut(), self.demos.as_ref()) {
            gail_loss = gail_iteration(
                disc,
                &mut self.disc_opt,
                &mut buf,
                &demos.disc_rows,
                &self.group.gail,
                &mut self.gail_rng,
            )?;
        }
        mix_rewards(&mut buf, self.group.ppo_strength, self.group.gail_strength);
        compute_gae(&mut buf, self.group.ppo.gamma, self.group.ppo.lambda);

        let ppo = self.group.ppo.scheduled(self.progress(steps - buf.len()));
        self.opt.lr = ppo.learning_rate;
        let bc = self.group.bc_config();
        let bc_active = self.demos.is_some() && bc_phase(&bc, steps);
        let demos = self.demos.clone();
        let bc_rng = &mut self.bc_rng;
        let mut aux = |p: &Policy| -> Result<_, PpoError> {
            match (&demos, bc_active) {
                (Some(d), true) => {
                    let batch = d.bc.sample(bc.batch_size, bc_rng);
                    bc_loss(p, &batch, bc.strength).map(Some)
                }
                _ => Ok(None),
            }
        };
        let stats = ppo_update(&mut self.policy, &mut self.opt, &buf, &ppo, &mut self.ppo_rng, &mut aux)?;
        self.updates += 1;

        for ep in &buf.episodes {
            if self.recent.len() == RETURN_WINDOW {
                self.recent.pop_front();
            }
            self.recent.push_back(ep.ext_return);
        }
        let eps = &buf.episodes;
        let n = eps.len().max(1) as f64;
        let frac = |f: fn(&EpisodeSummary) -> bool| eps.iter().filter(|e| f(e)).count() as f64 / n;
        Ok(MetricsRow {
            schema: METRICS_SCHEMA,
            update: self.updates,
            steps,
            episodes: eps.len(),
            mean_return: eps.iter().map(|e| e.ext_return).sum::<f64>() / n,
            moving_return: self.moving_return().unwrap_or(0.0),
            picked_rate: frac(|e| e.picked),
            installed_rate: frac(|e| e.installed),
            mean_length: eps.iter().map(|e| e.length as f64).sum::<f64>() / n,
            mean_reward: buf.rewards.iter().sum::<f64>() / buf.len() as f64,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            bc_active,
            bc_loss: stats.aux_loss,
            gail_loss,
            approx_kl: stats.approx_kl,
            clip_fraction: stats.clip_fraction,
        })
    }

    /// Whether another full update still fits in the step budget.
    pub fn has_budget(&self) -> bool {
        self.steps() + self.steps_per_update() <= self.group.max_steps
    }
}

/// Files written by `train`, recorded in `manifest.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub group: String,
    pub seed: u64,
    pub steps: usize,
    pub updates: usize,
    pub status: String,
    pub metrics: String,
    pub policy: String,
    pub discriminator: Option<String>,
    pub checkpoints: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub rows: Vec<MetricsRow>,
    pub converged: bool,
    pub manifest: Manifest,
}

fn save_policy(policy: &Policy, path: &Path) -> Result<(), TrainError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, &policy.to_checkpoint())?;
    w.flush()?;
    Ok(())
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<Policy, TrainError> {
    let mut r = std::io::BufReader::new(File::open(path)?);
    Ok(Policy::from_checkpoint(read_checkpoint(&mut r)?)?)
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<(), TrainError> {
    let text = toml::to_string(m).map_err(|e| TrainError::Config(e.to_string()))?;
    std::fs::write(dir.join("manifest.toml"), text)?;
    Ok(())
}

/// Runs a group to its step budget or convergence, writing `metrics.csv`,
/// checkpoints and `manifest.toml` under `out_dir`. On a non-finite loss the
/// last good policy is saved before the error is returned.
pub fn train(trainer: &mut Trainer, out_dir: &Path) -> Result<TrainOutcome, TrainError> {
    std::fs::create_dir_all(out_dir)?;
    let mut csv = csv::Writer::from_path(out_dir.join("metrics.csv"))?;
    let mut manifest = Manifest {
        group: trainer.group.name.clone(),
        seed: trainer.group.seed,
        steps: 0,
        updates: 0,
        status: "running".into(),
        metrics: "metrics.csv".into(),
        policy: "policy.mlp".into(),
        discriminator: None,
        checkpoints: vec![],
    };
    let mut rows = Vec::new();
    let mut failure = None;
    while trainer.has_budget() && !trainer.converged() {
        match trainer.update() {
            Ok(row) => {
                csv.serialize(&row)?;
                csv.flush()?;
                rows.push(row);
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
        let every = trainer.group.checkpoint_every;
        if every > 0 && trainer.updates % every == 0 {
            let name = format!("policy_{:05}.mlp", trainer.updates);
            save_policy(&trainer.policy, &out_dir.join(&name))?;
            manifest.checkpoints.push(name);
        }
    }
    save_policy(&trainer.policy, &out_dir.join(&manifest.policy))?;
    if let Some(d) = &trainer.disc {
        let mut w = BufWriter::new(File::create(out_dir.join("discriminator.mlp"))?);
        write_checkpoint(&mut w, &d.to_checkpoint())?;
        w.flush()?;
        manifest.discriminator = Some("discriminator.mlp".into());
    }
    manifest.steps = trainer.steps();
    manifest.updates = trainer.updates;
    let converged = trainer.converged();
    manifest.status = match (&failure, converged) {
        (Some(_), _) => "aborted",
        (None, true) => "converged",
        (None, false) => "budget",
    }
    .into();
    write_manifest(out_dir, &manifest)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(TrainOutcome { policy: trainer.policy.clone(), rows, converged, manifest })
}

/// Table-5 metrics over `n_episodes` deterministic rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub picked_rate: f64,
    pub installed_rate: f64,
    pub avg_episode_length: f64,
    /// Mean length over installed episodes only.
    pub installed_avg_length: Option<f64>,
    pub n_episodes: usize,
}

impl EvalReport {
    fn from_episodes(eps: &[EpisodeSummary]) -> Self {
        let n = eps.len();
        if n == 0 {
            return EvalReport {
                picked_rate: 0.0,
                installed_rate: 0.0,
                avg_episode_length: 0.0,
                installed_avg_length: None,
                n_episodes: 0,
            };
        }
        let installed: Vec<_> = eps.iter().filter(|e| e.installed).collect();
        EvalReport {
            picked_rate: eps.iter().filter(|e| e.picked).count() as f64 / n as f64,
            installed_rate: installed.len() as f64 / n as f64,
            avg_episode_length: eps.iter().map(|e| e.length as f64).sum::<f64>() / n as f64,
            installed_avg_length: (!installed.is_empty())
                .then(|| installed.iter().map(|e| e.length as f64).sum::<f64>() / installed.len() as f64),
            n_episodes: n,
        }
    }
}

/// Episode seeds used by `evaluate` for a given base seed.
pub fn eval_seeds(n: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}

/// Runs episodes in lockstep, asking `act` for a batch of actions for the
/// environments that are still running.
pub fn evaluate_with<F>(scene: &SceneConfig, seeds: &[u64], mut act: F) -> Result<EvalReport, TrainError>
where
    F: FnMut(&[&TileEnv]) -> Result<Vec<AgentAction>, TrainError>,
{
    let mut envs: Vec<TileEnv> = seeds
        .iter()
        .map(|&s| {
            let mut e = TileEnv::new(scene.clone());
            e.reset(s);
            e
        })
        .collect();
    let mut summaries: Vec<EpisodeSummary> =
        vec![EpisodeSummary { ext_return: 0.0, length: 0, picked: false, installed: false }; envs.len()];
    let mut live: Vec<usize> = (0..envs.len()).collect();
    while !live.is_empty() {
        let actions = {
            let view: Vec<&TileEnv> = live.iter().map(|&i| &envs[i]).collect();
            act(&view)?
        };
        let mut still = Vec::with_capacity(live.len());
        for (&i, a) in live.iter().zip(actions) {
            let r = envs[i].step(&a)?;
            let s = &mut summaries[i];
            s.ext_return += r.reward;
            s.length += 1;
            s.picked |= r.event == StepEvent::Picked;
            s.installed |= r.event == StepEvent::Installed;
            if !r.done {
                still.push(i);
            }
        }
        live = still;
    }
    Ok(EvalReport::from_episodes(&summaries))
}

/// Deterministic-mode evaluation: Gaussian mean and categorical argmax.
pub fn evaluate(policy: &Policy, scene: &SceneConfig, n: usize, seed: u64) -> Result<EvalReport, TrainError> {
    evaluate_with(scene, &eval_seeds(n, seed), |envs| {
        let mut obs = Array2::zeros((envs.len(), OBS_DIM));
        for (r, e) in envs.iter().enumerate() {
            obs.row_mut(r).as_slice_mut().unwrap().copy_from_slice(e.observation().as_slice());
        }
        Ok(policy
            .deterministic(obs.view())?
            .into_iter()
            .map(|(mean, cat)| AgentAction {
                deltas: to_env_deltas(&mean),
                cmd: EffectorCmd::from_index(cat).expect("three commands"),
            })
            .collect())
    })
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub group: String,
    pub steps: usize,
    pub converged: bool,
    pub picked_rate: f64,
    pub installed_rate: f64,
    pub avg_episode_length: f64,
    pub n_episodes: usize,
}

/// Trains every group (with `budget` overriding `max_steps` when given),
/// evaluates each final policy and writes `suite.csv` plus per-group run
/// directories under `out_dir`.
pub fn run_group_suite(
    groups: &[GroupConfig],
    budget: Option<usize>,
    out_dir: &Path,
    eval_n: usize,
    eval_seed: u64,
) -> Result<Vec<SuiteRow>, TrainError> {
    std::fs::create_dir_all(out_dir)?;
    let mut csv = csv::Writer::from_path(out_dir.join("suite.csv"))?;
    let mut rows = Vec::new();
    for g in groups {
        let mut g = g.clone();
        if let Some(b) = budget {
            g.max_steps = b;
        }
        let mut trainer = Trainer::new(g.clone())?;
        let outcome = train(&mut trainer, &out_dir.join(&g.name))?;
        let report = evaluate(&outcome.policy, &g.scene, eval_n, eval_seed)?;
        let row = SuiteRow {
            group: g.name.clone(),
            steps: trainer.steps(),
            converged: outcome.converged,
            picked_rate: report.picked_rate,
            installed_rate: report.installed_rate,
            avg_episode_length: report.avg_episode_length,
            n_episodes: report.n_episodes,
        };
        csv.serialize(&row)?;
        csv.flush()?;
        rows.push(row);
    }
    if groups.is_empty() {
        // csv only emits the header alongside the first record.
        csv.write_record(["group", "steps", "converged", "picked_rate", "installed_rate", "avg_episode_length", "n_episodes"])?;
        csv.flush()?;
    }
    Ok(rows)
}

/// Group configs from every `*.toml` in `dir`, sorted by file name.
pub fn load_groups(dir: &Path) -> Result<Vec<GroupConfig>, TrainError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths.iter().map(GroupConfig::load).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demos::ScriptedExpert;
    use crate::demos::ActionSource;

    fn small_group(name: &str, ppo: f64, gail: f64, bc: f64) -> GroupConfig {
        let mut g = GroupConfig {
            name: name.into(),
            ppo_strength: ppo,
            gail_strength: gail,
            bc_strength: bc,
            demo_count: if gail + bc > 0.0 { 3 } else { 0 },
            max_steps: 256,
            seed: 5,
            checkpoint_every: 1,
            ..GroupConfig::default()
        };
        g.ppo.n_envs = 4;
        g.ppo.buffer_size = 128;
        g.ppo.batch_size = 64;
        g.ppo.hidden = vec![16];
        g.gail.hidden = vec![16];
        g.gail.batch_size = 64;
        g.bc.batch_size = 32;
        g
    }

    #[test]
    fn bundled_groups_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("config/groups");
        let groups = load_groups(&dir).unwrap();
        assert_eq!(groups.len(), 9);
        assert_eq!((groups[0].ppo_strength, groups[0].gail_strength, groups[0].bc_strength), (1.0, 0.0, 0.0));
        let g4 = &groups[3];
        assert_eq!((g4.ppo_strength, g4.gail_strength, g4.bc_strength, g4.demo_count), (1.0, 0.01, 0.5, 60));
        assert_eq!((groups[7].demo_count, groups[8].demo_count), (20, 10));
        assert!(groups.iter().all(|g| g.max_steps == 5_000_000));
    }

    #[test]
    fn toml_round_trip() {
        let g = small_group("rt", 1.0, 0.01, 0.5);
        assert_eq!(GroupConfig::parse(&g.to_toml()).unwrap(), g);
    }

    #[test]
    fn invalid_groups_are_rejected() {
        let mut g = small_group("bad", -1.0, 0.0, 0.0);
        assert!(g.validate().is_err());
        g.ppo_strength = 1.0;
        g.bc_strength = 0.5;
        g.demo_count = 0;
        assert!(g.validate().is_err());
        let mut g = small_group("bad", 1.0, 0.0, 0.0);
        g.ppo.buffer_size = 130;
        assert!(g.validate().is_err());
    }

    #[test]
    fn mixing_is_linear_in_the_strengths() {
        let mut b = RolloutBuffer::zeros(1, 4, 1, 0, 1);
        b.reward_ext = vec![0.0, 1.0, -0.5, 1.0];
        b.reward_gail = vec![0.3, 0.01, 2.5, 0.0];
        mix_rewards(&mut b, 1.0, 0.0);
        assert_eq!(b.rewards, b.reward_ext);
        mix_rewards(&mut b, 1.0, 0.01);
        let one = b.rewards.clone();
        assert_eq!(one[2], -0.5 + 0.01 * 2.5);
        mix_rewards(&mut b, 2.0, 0.02);
        for (a, d) in one.iter().zip(&b.rewards) {
            assert_eq!(2.0 * a, *d);
        }
        mix_rewards(&mut b, 0.0, 0.0);
        assert!(b.rewards.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn training_is_deterministic_and_writes_artifacts() {
        let g = small_group("det", 1.0, 0.01, 0.5);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = train(&mut Trainer::new(g.clone()).unwrap(), a.path()).unwrap();
        let rb = train(&mut Trainer::new(g).unwrap(), b.path()).unwrap();
        assert_eq!(ra.policy, rb.policy);
        let ca = std::fs::read_to_string(a.path().join("metrics.csv")).unwrap();
        assert_eq!(ca, std::fs::read_to_string(b.path().join("metrics.csv")).unwrap());
        assert_eq!(ra.rows.len(), 2);
        assert!(ca.starts_with("schema,update,steps,"));
        assert!(ra.rows.windows(2).all(|w| w[0].steps < w[1].steps));
        assert_eq!(ra.manifest.status, "budget");
        assert_eq!(ra.manifest.checkpoints, vec!["policy_00001.mlp", "policy_00002.mlp"]);
        let m: Manifest = toml::from_str(&std::fs::read_to_string(a.path().join("manifest.toml")).unwrap()).unwrap();
        assert_eq!(m, ra.manifest);
        let mut f = File::open(a.path().join("policy.mlp")).unwrap();
        let p = Policy::from_checkpoint(crate::netcore::read_checkpoint(&mut f).unwrap()).unwrap();
        assert_eq!(p, ra.policy);
        assert!(a.path().join("discriminator.mlp").exists());
    }

    #[test]
    fn bc_window_follows_the_step_count() {
        let mut g = small_group("bcw", 1.0, 0.0, 0.5);
        g.bc.active_steps = 200;
        g.max_steps = 512;
        let mut t = Trainer::new(g).unwrap();
        let flags: Vec<bool> = (0..4).map(|_| t.update().unwrap().bc_active).collect();
        assert_eq!(flags, vec![true, false, false, false]);
    }

    #[test]
    fn bc_free_fork_matches_after_the_window() {
        let mut g = small_group("fork", 1.0, 0.01, 0.5);
        g.bc.active_steps = 200;
        let mut with_bc = Trainer::new(g).unwrap();
        with_bc.update().unwrap();
        let mut without = with_bc.clone();
        without.set_bc_strength(0.0);
        for _ in 0..2 {
            let a = with_bc.update().unwrap();
            let b = without.update().unwrap();
            assert!(!a.bc_active);
            assert_eq!(a, b);
        }
        assert_eq!(with_bc.policy, without.policy);
    }

    #[test]
    fn zero_budget_trains_nothing() {
        let mut g = small_group("zero", 1.0, 0.0, 0.0);
        g.max_steps = 0;
        let dir = tempfile::tempdir().unwrap();
        let out = train(&mut Trainer::new(g).unwrap(), dir.path()).unwrap();
        assert!(out.rows.is_empty());
        assert_eq!(out.manifest.steps, 0);
    }

    #[test]
    fn expert_evaluation_installs_and_random_policy_does_not() {
        let scene = SceneConfig::default();
        let seeds = eval_seeds(20, 3);
        let mut expert = ScriptedExpert::default();
        let r = evaluate_with(&scene, &seeds, |envs| {
            envs.iter().map(|e| expert.act(e).map_err(TrainError::from)).collect()
        })
        .unwrap();
        assert!(r.installed_rate >= 0.95 && r.picked_rate >= r.installed_rate);
        assert!(r.avg_episode_length < 100.0);

        let p = Policy::new(PolicyLayout::tile(), &[32], 0);
        let r = evaluate(&p, &scene, 10, 3).unwrap();
        assert_eq!(r.n_episodes, 10);
        assert_eq!(r.installed_rate, 0.0);
        assert!(r.picked_rate <= 0.1);
        assert_eq!(r, evaluate(&p, &scene, 10, 3).unwrap());
    }

    #[test]
    fn empty_suite_writes_an_empty_table() {
        let dir = tempfile::tempdir().unwrap();
        assert!(run_group_suite(&[], Some(0), dir.path(), 10, 0).unwrap().is_empty());
        let text = std::fs::read_to_string(dir.path().join("suite.csv")).unwrap();
        assert_eq!(text.lines().count(), 1);
    }
}
