//! Demonstration trajectories: the scripted IK expert, episode recording,
//! JSONL storage and seeded subsets.
//!
//! File layout: a header line `{"format":"tiledemo","schema":1,"declared_size":N}`,
//! then per trajectory one `{"meta":{..}}` line followed by one transition per
//! line; trajectories are separated by a blank line. Floats are written with 17
//! significant digits so a save/load round trip is bit-exact.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{solve_ik, HomTransform, IkSettings, JointAngles};
use crate::tilesim::{
    AgentAction, EffectorCmd, Observation, SimError, StepEvent, TileEnv, TileStatus, OBS_DIM, OBS_SCHEMA,
};

const DEFAULT_EXPERT: &str = include_str!("../config/expert.toml");
const FORMAT_TAG: &str = "tiledemo";

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("expert could not find an IK step at episode step {0}")]
    ExpertStuck(usize),
    #[error("demo file schema {found} does not match {expected}")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("asked for {requested} demonstrations but only {available} exist")]
    TooFew { requested: usize, available: usize },
    #[error("expert config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    pub approach_height: f64,
    pub grasp_height: f64,
    pub align_tolerance: f64,
    pub carrot_step: f64,
    pub ik_retries: usize,
    #[serde(default)]
    pub ik: IkSettings,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        toml::from_str(DEFAULT_EXPERT).expect("bundled expert config is valid")
    }
}

impl ExpertConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DemoError> {
        toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| DemoError::Config(e.to_string()))
    }
}

/// Tool z pointing straight down.
pub fn tool_down() -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0)
}

/// One waypoint-controller step: approach above the tile, descend with
/// suction, then carry the tile onto the target.
pub fn scripted_expert(env: &TileEnv, cfg: &ExpertConfig) -> Result<AgentAction, DemoError> {
    let state = env.state();
    let scene = env.config();
    let effector = env.effector_position();
    let (waypoint, cmd) = match state.status {
        TileStatus::Attached => (scene.target() + (effector - state.tile), EffectorCmd::Hold),
        TileStatus::Resting => {
            let d = effector - state.tile;
            if d.xy().norm() > cfg.align_tolerance {
                (state.tile + Vector3::new(0.0, 0.0, cfg.approach_height), EffectorCmd::Hold)
            } else {
                (state.tile + Vector3::new(0.0, 0.0, cfg.grasp_height), EffectorCmd::Suction)
            }
        }
        TileStatus::Installed | TileStatus::Fallen => return Ok(AgentAction::hold()),
    };
    let to_go = waypoint - effector;
    let carrot = if to_go.norm() > cfg.carrot_step { effector + to_go * (cfg.carrot_step / to_go.norm()) } else { waypoint };
    let flange = HomTransform::from_parts(&tool_down(), &(carrot + Vector3::new(0.0, 0.0, scene.suction_offset)));

    let deltas = ik_step(env, &flange, &cfg.ik, cfg.ik_retries).ok_or(DemoError::ExpertStuck(state.step_index))?;
    Ok(AgentAction { deltas, cmd })
}

/// Normalized joint deltas that move the arm toward the flange pose `goal`,
/// scaled uniformly so no joint exceeds the per-step limit. `None` when IK
/// fails from the current joints and every nudged seed.
pub fn ik_step(env: &TileEnv, goal: &HomTransform, ik: &IkSettings, retries: usize) -> Option<[f64; 6]> {
    let state = env.state();
    let scene = env.config();
    let mut seed = state.q;
    let mut solved = None;
    for attempt in 0..=retries {
        if let Ok(sol) = solve_ik(env.dh(), &seed, goal, ik) {
            solved = Some(sol.q);
            break;
        }
        // Nudge the seed off whatever made the previous attempt stall.
        let k = (attempt + 1) as f64;
        seed = state.q.offset(&[0.5 * k, -0.5 * k, 0.5 * k, -0.5 * k, 0.5 * k, 0.0]);
    }
    let delta = state.q.shortest_delta_to(&solved?);
    let peak = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let scale = if peak > scene.max_delta_deg { scene.max_delta_deg / peak } else { 1.0 };
    Some(delta.map(|d| d * scale / scene.max_delta_deg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoSource {
    Scripted,
    Teleop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub source: DemoSource,
    pub seed: u64,
    pub schema: u32,
    pub outcome: StepEvent,
}

/// The observation seen before acting, the action taken and what it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Observation,
    pub action: AgentAction,
    pub reward: f64,
    pub done: bool,
    pub event: StepEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn episode_return(&self) -> f64 {
        crate::tilesim::episode_return(self.transitions.iter().map(|t| t.reward))
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Checks dimensions and that only the last transition is terminal.
    pub fn validate(&self) -> Result<(), String> {
        if self.meta.schema != OBS_SCHEMA {
            return Err(format!("schema {}", self.meta.schema));
        }
        let n = self.transitions.len();
        for (i, t) in self.transitions.iter().enumerate() {
            if t.observation.0.len() != OBS_DIM {
                return Err(format!("transition {i}: observation has {} values", t.observation.0.len()));
            }
            if t.done != (i + 1 == n) {
                return Err(format!("transition {i}: done flag out of place"));
            }
            if t.action.deltas.iter().any(|d| !(-1.0..=1.0).contains(d)) {
                return Err(format!("transition {i}: joint delta outside [-1, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub declared_size: usize,
    pub trajectories: Vec<Trajectory>,
}

impl DemoSet {
    pub fn new(trajectories: Vec<Trajectory>) -> Self {
        DemoSet { declared_size: trajectories.len(), trajectories }
    }

    pub fn transition_count(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.trajectories.iter().flat_map(|t| t.transitions.iter())
    }
}

/// Anything that can drive the arm for one step.
pub trait ActionSource {
    fn source(&self) -> DemoSource;
    fn act(&mut self, env: &TileEnv) -> Result<AgentAction, DemoError>;
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedExpert {
    pub config: ExpertConfig,
}

impl ActionSource for ScriptedExpert {
    fn source(&self) -> DemoSource {
        DemoSource::Scripted
    }

    fn act(&mut self, env: &TileEnv) -> Result<AgentAction, DemoError> {
        scripted_expert(env, &self.config)
    }
}

/// Runs one episode from `reset(seed)` to termination. Errors abort the
/// episode and nothing is returned for it.
pub fn record_episode(env: &mut TileEnv, source: &mut dyn ActionSource, seed: u64) -> Result<Trajectory, DemoError> {
    let mut obs = env.reset(seed);
    let mut transitions = Vec::new();
    loop {
        let action = source.act(env)?;
        let r = env.step(&action)?;
        transitions.push(Transition {
            observation: obs,
            action: action.clipped(),
            reward: r.reward,
            done: r.done,
            event: r.event,
        });
        obs = r.observation;
        if r.done {
            let meta = TrajectoryMeta { source: source.source(), seed, schema: OBS_SCHEMA, outcome: r.event };
            return Ok(Trajectory { meta, transitions });
        }
    }
}

/// Re-executes the recorded actions in a fresh episode with the same seed and
/// returns the (reward, event) stream.
pub fn replay(env: &mut TileEnv, traj: &Trajectory) -> Result<Vec<(f64, StepEvent)>, DemoError> {
    env.reset(traj.meta.seed);
    traj.transitions
        .iter()
        .map(|t| env.step(&t.action).map(|r| (r.reward, r.event)).map_err(DemoError::from))
        .collect()
}

/// Collects `n` installed scripted episodes using seeds `base_seed, base_seed + 1, ...`.
/// Episodes that abort or end without an install are skipped.
pub fn generate_demos(env: &mut TileEnv, cfg: &ExpertConfig, n: usize, base_seed: u64) -> Result<DemoSet, DemoError> {
    let mut expert = ScriptedExpert { config: cfg.clone() };
    let mut out = Vec::with_capacity(n);
    let mut seed = base_seed;
    let limit = base_seed + 10 * n as u64 + 10;
    while out.len() < n {
        if seed >= limit {
            return Err(DemoError::TooFew { requested: n, available: out.len() });
        }
        if let Ok(t) = record_episode(env, &mut expert, seed) {
            if t.meta.outcome == StepEvent::Installed {
                out.push(t);
            }
        }
        seed += 1;
    }
    Ok(DemoSet::new(out))
}

/// Seeded uniform subset without replacement, in the original order.
pub fn subsample(set: &DemoSet, n: usize, seed: u64) -> Result<DemoSet, DemoError> {
    let available = set.trajectories.len();
    if n > available {
        return Err(DemoError::TooFew { requested: n, available });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, available, n).into_vec();
    idx.sort_unstable();
    Ok(DemoSet::new(idx.into_iter().map(|i| set.trajectories[i].clone()).collect()))
}

fn fmt17(out: &mut String, v: f64) {
    if v == 0.0 && v.is_sign_positive() {
        out.push('0');
    } else {
        write!(out, "{v:.16e}").unwrap();
    }
}

fn transition_line(t: &Transition) -> String {
    let mut s = String::with_capacity(OBS_DIM * 24);
    s.push_str("{\"obs\":[");
    for (i, v) in t.observation.0.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        fmt17(&mut s, *v);
    }
    s.push_str("],\"deltas\":[");
    for (i, v) in t.action.deltas.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        fmt17(&mut s, *v);
    }
    s.push_str("],\"cmd\":");
    s.push_str(&serde_json::to_string(&t.action.cmd).unwrap());
    s.push_str(",\"reward\":");
    fmt17(&mut s, t.reward);
    write!(s, ",\"done\":{},\"event\":{}}}", t.done, serde_json::to_string(&t.event).unwrap()).unwrap();
    s
}

#[derive(Deserialize)]
struct TransitionRecord {
    obs: Vec<f64>,
    deltas: [f64; 6],
    cmd: EffectorCmd,
    reward: f64,
    done: bool,
    event: StepEvent,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    schema: u32,
    declared_size: usize,
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    meta: TrajectoryMeta,
}

pub fn write_demos<W: Write>(w: &mut W, set: &DemoSet) -> Result<(), DemoError> {
    let header = Header { format: FORMAT_TAG.into(), schema: OBS_SCHEMA, declared_size: set.declared_size };
    writeln!(w, "{}", serde_json::to_string(&header).unwrap())?;
    for (k, traj) in set.trajectories.iter().enumerate() {
        if k > 0 {
            writeln!(w)?;
        }
        writeln!(w, "{}", serde_json::to_string(&MetaLine { meta: traj.meta.clone() }).unwrap())?;
        for t in &traj.transitions {
            writeln!(w, "{}", transition_line(t))?;
        }
    }
    Ok(())
}

pub fn read_demos<R: BufRead>(r: R) -> Result<DemoSet, DemoError> {
    let parse_err = |line: usize, reason: String| DemoError::Parse { line, reason };
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n, first) = lines.next().ok_or_else(|| parse_err(1, "empty file".into()))?;
    let header: Header = serde_json::from_str(&first?).map_err(|e| parse_err(n, e.to_string()))?;
    if header.format != FORMAT_TAG {
        return Err(parse_err(n, format!("unknown format `{}`", header.format)));
    }
    if header.schema != OBS_SCHEMA {
        return Err(DemoError::SchemaVersionMismatch { found: header.schema, expected: OBS_SCHEMA });
    }
    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut current: Option<Trajectory> = None;
    let mut last_line = n;
    for (n, line) in lines {
        let line = line?;
        last_line = n;
        if line.trim().is_empty() {
            if let Some(t) = current.take() {
                trajectories.push(t);
            }
            continue;
        }
        match current.as_mut() {
            None => {
                let m: MetaLine = serde_json::from_str(&line).map_err(|e| parse_err(n, e.to_string()))?;
                if m.meta.schema != OBS_SCHEMA {
                    return Err(DemoError::SchemaVersionMismatch { found: m.meta.schema, expected: OBS_SCHEMA });
                }
                current = Some(Trajectory { meta: m.meta, transitions: Vec::new() });
            }
            Some(traj) => {
                let rec: TransitionRecord = serde_json::from_str(&line).map_err(|e| parse_err(n, e.to_string()))?;
                if rec.obs.len() != OBS_DIM {
                    return Err(parse_err(n, format!("observation has {} values, expected {OBS_DIM}", rec.obs.len())));
                }
                traj.transitions.push(Transition {
                    observation: Observation(rec.obs),
                    action: AgentAction { deltas: rec.deltas, cmd: rec.cmd },
                    reward: rec.reward,
                    done: rec.done,
                    event: rec.event,
                });
            }
        }
    }
    if let Some(t) = current.take() {
        trajectories.push(t);
    }
    for t in &trajectories {
        t.validate().map_err(|reason| parse_err(last_line, reason))?;
    }
    Ok(DemoSet { declared_size: header.declared_size, trajectories })
}

pub fn save_demos(path: impl AsRef<Path>, set: &DemoSet) -> Result<(), DemoError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_demos(&mut w, set)?;
    w.flush()?;
    Ok(())
}

pub fn load_demos(path: impl AsRef<Path>) -> Result<DemoSet, DemoError> {
    read_demos(BufReader::new(std::fs::File::open(path)?))
}

/// Joint angles of a stored observation's newest frame, in degrees.
pub fn observed_joints(obs: &Observation) -> JointAngles {
    let f = obs.latest();
    JointAngles::from_degrees([f[0], f[1], f[2], f[3], f[4], f[5]].map(|v| v * 180.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tilesim::SceneConfig;

    fn env() -> TileEnv {
        TileEnv::new(SceneConfig::default())
    }

    #[test]
    fn expert_installs_the_tile() {
        let mut e = env();
        let mut x = ScriptedExpert::default();
        let t = record_episode(&mut e, &mut x, 5).unwrap();
        assert_eq!(t.meta.outcome, StepEvent::Installed);
        assert_eq!(t.episode_return(), 2.0);
        assert!(t.len() < 400, "{}", t.len());
        t.validate().unwrap();
    }

    #[test]
    fn expert_holds_after_the_episode_ends() {
        let mut e = env();
        let mut x = ScriptedExpert::default();
        record_episode(&mut e, &mut x, 1).unwrap();
        assert_eq!(scripted_expert(&e, &x.config).unwrap(), AgentAction::hold());
    }

    #[test]
    fn replay_reproduces_rewards_and_events() {
        let mut e = env();
        let t = record_episode(&mut e, &mut ScriptedExpert::default(), 9).unwrap();
        let replayed = replay(&mut env(), &t).unwrap();
        let recorded: Vec<_> = t.transitions.iter().map(|x| (x.reward, x.event)).collect();
        assert_eq!(replayed, recorded);
    }

    #[test]
    fn save_load_is_bit_exact() {
        let mut e = env();
        let set = generate_demos(&mut e, &ExpertConfig::default(), 2, 0).unwrap();
        let mut buf = Vec::new();
        write_demos(&mut buf, &set).unwrap();
        let back = read_demos(buf.as_slice()).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.declared_size, 2);
    }

    #[test]
    fn truncated_file_reports_the_line() {
        let mut e = env();
        let set = generate_demos(&mut e, &ExpertConfig::default(), 1, 0).unwrap();
        let mut buf = Vec::new();
        write_demos(&mut buf, &set).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let keep: Vec<&str> = text.lines().take(5).collect();
        let mut cut = keep.join("\n");
        cut.truncate(cut.len() - 40);
        match read_demos(cut.as_bytes()) {
            Err(DemoError::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_mismatch_is_reported() {
        let text = "{\"format\":\"tiledemo\",\"schema\":7,\"declared_size\":0}\n";
        assert!(matches!(
            read_demos(text.as_bytes()),
            Err(DemoError::SchemaVersionMismatch { found: 7, expected: 1 })
        ));
    }

    fn dummy_set(n: usize) -> DemoSet {
        let t = |seed| Trajectory {
            meta: TrajectoryMeta { source: DemoSource::Teleop, seed, schema: OBS_SCHEMA, outcome: StepEvent::Truncated },
            transitions: vec![],
        };
        DemoSet::new((0..n as u64).map(t).collect())
    }

    #[test]
    fn subsample_contracts() {
        let set = dummy_set(60);
        assert_eq!(subsample(&set, 60, 3).unwrap(), set);
        let a = subsample(&set, 10, 3).unwrap();
        assert_eq!(a, subsample(&set, 10, 3).unwrap());
        assert_eq!(a.declared_size, 10);
        let seeds: std::collections::BTreeSet<u64> = a.trajectories.iter().map(|t| t.meta.seed).collect();
        assert_eq!(seeds.len(), 10);
        assert!(matches!(subsample(&set, 61, 3), Err(DemoError::TooFew { requested: 61, available: 60 })));
    }

    #[test]
    fn float_text_keeps_every_bit() {
        for v in [0.1, -0.0, 1e-300, std::f64::consts::PI, -123456.789e10, f64::MIN_POSITIVE] {
            let mut s = String::new();
            fmt17(&mut s, v);
            let back: f64 = serde_json::from_str(&s).unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{s}");
        }
    }
}
