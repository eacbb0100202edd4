//! Kinematic tile-installation task: a suction arm picks a tile from the table
//! and carries it to an elevated target under a sparse event reward.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gesture::{apply_gesture, EffectorMode, EffectorState, EffectorTask, GestureLabel, GripGesture, TransitionMode};
use crate::kinematics::{forward_kinematics, DhTable, HomTransform, JointAngles};

pub const FRAME_DIM: usize = 18;
pub const ACTION_DIM: usize = 7;
pub const STACK: usize = 5;
pub const ENTRY_DIM: usize = FRAME_DIM + ACTION_DIM;
pub const OBS_DIM: usize = STACK * ENTRY_DIM;
/// Observation layout version written into demonstration files.
pub const OBS_SCHEMA: u32 = 1;

pub const REWARD_PICK: f64 = 1.0;
pub const REWARD_INSTALL: f64 = 1.0;
pub const REWARD_FALL: f64 = -0.5;

/// Positions are divided by this before entering an observation.
const POSITION_SCALE: f64 = 0.5;

const DEFAULT_SCENE: &str = include_str!("../config/scene.toml");

#[derive(Debug, Error)]
pub enum SimError {
    #[error("step called on a finished episode")]
    SteppedAfterDone,
    #[error("scene config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskVariant {
    /// Sparse pick/install/fall rewards.
    #[default]
    Install,
    /// Dense negative suction-to-tile distance every step; no effector events.
    Reach,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableConfig {
    pub top: f64,
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub drop_height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub version: u32,
    pub suction_threshold: f64,
    pub install_threshold: f64,
    pub contact_knock_threshold: f64,
    pub max_steps: usize,
    pub max_delta_deg: f64,
    pub tile_x_range: [f64; 2],
    pub tile_y: f64,
    pub tile_rest_z: f64,
    pub target: [f64; 3],
    pub suction_offset: f64,
    pub home_deg: [f64; 6],
    pub table: TableConfig,
    #[serde(default)]
    pub variant: TaskVariant,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::parse(DEFAULT_SCENE).expect("bundled scene config is valid")
    }
}

impl SceneConfig {
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let cfg: SceneConfig = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.version != 1 {
            return bad("unsupported scene version");
        }
        for (name, v) in [
            ("suction_threshold", self.suction_threshold),
            ("install_threshold", self.install_threshold),
            ("contact_knock_threshold", self.contact_knock_threshold),
            ("max_delta_deg", self.max_delta_deg),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Config(format!("{name} must be positive")));
            }
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        let [lo, hi] = self.tile_x_range;
        if !(lo <= hi && lo >= self.table.x[0] && hi <= self.table.x[1]) {
            return bad("tile_x_range must lie inside the table x extent");
        }
        if !(self.tile_y >= self.table.y[0] && self.tile_y <= self.table.y[1]) {
            return bad("tile_y must lie inside the table y extent");
        }
        let finite = self.target.iter().chain(&self.home_deg).all(|v| v.is_finite());
        if !finite {
            return bad("target and home_deg must be finite");
        }
        Ok(())
    }

    pub fn target(&self) -> Vector3<f64> {
        Vector3::from(self.target)
    }

    pub fn home(&self) -> JointAngles {
        JointAngles::from_degrees(self.home_deg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectorCmd {
    Hold,
    Suction,
    Drop,
}

impl EffectorCmd {
    pub const ALL: [EffectorCmd; 3] = [EffectorCmd::Hold, EffectorCmd::Suction, EffectorCmd::Drop];

    /// Categorical index used by the policy head.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Scalar slot in the action encoding.
    pub fn scalar(self) -> f64 {
        match self {
            EffectorCmd::Hold => 0.0,
            EffectorCmd::Suction => 1.0,
            EffectorCmd::Drop => -1.0,
        }
    }

    pub fn from_scalar(v: f64) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.scalar() == v)
    }

    /// The suction command machine reads these as closing / opening / fixed.
    pub fn as_gesture(self) -> GestureLabel {
        GestureLabel::Grip(match self {
            EffectorCmd::Hold => GripGesture::Fixed,
            EffectorCmd::Suction => GripGesture::Closing,
            EffectorCmd::Drop => GripGesture::Opening,
        })
    }
}

/// Joint deltas in `[-1, 1]` (multiples of `max_delta_deg`) plus an effector command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentAction {
    pub deltas: [f64; 6],
    pub cmd: EffectorCmd,
}

impl AgentAction {
    pub fn hold() -> Self {
        AgentAction { deltas: [0.0; 6], cmd: EffectorCmd::Hold }
    }

    pub fn clipped(&self) -> Self {
        AgentAction { deltas: self.deltas.map(|d| if d.is_nan() { 0.0 } else { d.clamp(-1.0, 1.0) }), cmd: self.cmd }
    }

    pub fn encode(&self) -> [f64; ACTION_DIM] {
        let c = self.clipped();
        let mut out = [0.0; ACTION_DIM];
        out[..6].copy_from_slice(&c.deltas);
        out[6] = c.cmd.scalar();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TileStatus {
    Resting,
    Attached,
    Installed,
    Fallen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepEvent {
    None,
    Picked,
    Installed,
    Fell,
    Truncated,
}

impl StepEvent {
    pub fn is_terminal(self) -> bool {
        matches!(self, StepEvent::Installed | StepEvent::Fell | StepEvent::Truncated)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub q: JointAngles,
    pub effector: EffectorState,
    pub tile: Vector3<f64>,
    pub status: TileStatus,
    /// Tile center in the flange frame, captured at pick time.
    pub attach_offset: Vector3<f64>,
    pub picked_once: bool,
    pub step_index: usize,
    pub done: bool,
}

/// The stacked 125-value observation vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// The newest stacked entry (frame followed by the action that produced it).
    pub fn latest(&self) -> &[f64] {
        &self.0[OBS_DIM - ENTRY_DIM..]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub event: StepEvent,
}

/// Oldest-first concatenation of the last [`STACK`] entries, zero-padded at
/// the front when fewer are available.
pub fn stack_observations(history: &[[f64; ENTRY_DIM]]) -> Observation {
    let mut out = vec![0.0; OBS_DIM];
    let take = history.len().min(STACK);
    let start = STACK - take;
    for (k, entry) in history[history.len() - take..].iter().enumerate() {
        out[(start + k) * ENTRY_DIM..(start + k + 1) * ENTRY_DIM].copy_from_slice(entry);
    }
    Observation(out)
}

pub fn episode_return(rewards: impl IntoIterator<Item = f64>) -> f64 {
    rewards.into_iter().sum()
}

/// Suction cup position for a flange pose.
pub fn suction_point(flange: &HomTransform, offset: f64) -> Vector3<f64> {
    flange.translation() + flange.axis(2) * offset
}

#[derive(Debug, Clone)]
pub struct TileEnv {
    config: SceneConfig,
    dh: DhTable,
    state: EnvState,
    history: VecDeque<[f64; ENTRY_DIM]>,
}

impl TileEnv {
    pub fn new(config: SceneConfig) -> Self {
        Self::with_dh(config, DhTable::ur3())
    }

    pub fn with_dh(config: SceneConfig, dh: DhTable) -> Self {
        let mut env = TileEnv {
            state: EnvState {
                q: config.home(),
                effector: EffectorTask::Suction.initial_state(),
                tile: Vector3::zeros(),
                status: TileStatus::Resting,
                attach_offset: Vector3::zeros(),
                picked_once: false,
                step_index: 0,
                done: false,
            },
            config,
            dh,
            history: VecDeque::with_capacity(STACK),
        };
        env.reset(0);
        env
    }

    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    pub fn dh(&self) -> &DhTable {
        &self.dh
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn flange(&self) -> HomTransform {
        forward_kinematics(&self.dh, &self.state.q)
    }

    pub fn effector_position(&self) -> Vector3<f64> {
        suction_point(&self.flange(), self.config.suction_offset)
    }

    pub fn reset(&mut self, episode_seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        let [lo, hi] = self.config.tile_x_range;
        let x = if hi > lo { rng.random_range(lo..hi) } else { lo };
        self.state = EnvState {
            q: self.config.home(),
            effector: EffectorTask::Suction.initial_state(),
            tile: Vector3::new(x, self.config.tile_y, self.config.table.top + self.config.tile_rest_z),
            status: TileStatus::Resting,
            attach_offset: Vector3::zeros(),
            picked_once: false,
            step_index: 0,
            done: false,
        };
        self.history.clear();
        let flange = self.flange();
        self.push_entry(&flange, &[0.0; ACTION_DIM]);
        self.observation()
    }

    pub fn observation(&self) -> Observation {
        let h: Vec<[f64; ENTRY_DIM]> = self.history.iter().copied().collect();
        stack_observations(&h)
    }

    fn encode_frame(&self, flange: &HomTransform) -> [f64; FRAME_DIM] {
        let s = &self.state;
        let mut f = [0.0; FRAME_DIM];
        for (i, q) in s.q.degrees().iter().enumerate() {
            f[i] = q / 180.0;
        }
        let slot = match (s.effector.mode, s.status) {
            (EffectorMode::SuctionOn, TileStatus::Attached) => 2,
            (EffectorMode::SuctionOn, _) => 1,
            _ => 0,
        };
        f[6 + slot] = 1.0;
        let e = suction_point(flange, self.config.suction_offset);
        let t = self.config.target();
        for i in 0..3 {
            f[9 + i] = e[i] / POSITION_SCALE;
            f[12 + i] = t[i] / POSITION_SCALE;
            f[15 + i] = s.tile[i] / POSITION_SCALE;
        }
        f
    }

    fn push_entry(&mut self, flange: &HomTransform, action: &[f64; ACTION_DIM]) {
        let mut entry = [0.0; ENTRY_DIM];
        entry[..FRAME_DIM].copy_from_slice(&self.encode_frame(flange));
        entry[FRAME_DIM..].copy_from_slice(action);
        if self.history.len() == STACK {
            self.history.pop_front();
        }
        self.history.push_back(entry);
    }

    fn on_table(&self, p: &Vector3<f64>) -> bool {
        let t = &self.config.table;
        (t.x[0]..=t.x[1]).contains(&p.x) && (t.y[0]..=t.y[1]).contains(&p.y)
    }

    pub fn step(&mut self, action: &AgentAction) -> Result<StepResult, SimError> {
        if self.state.done {
            return Err(SimError::SteppedAfterDone);
        }
        let action = action.clipped();
        let cfg = &self.config;
        let delta = action.deltas.map(|d| d * cfg.max_delta_deg);
        self.state.q = self.state.q.offset(&delta);
        let flange = forward_kinematics(&self.dh, &self.state.q);
        let effector = suction_point(&flange, cfg.suction_offset);
        let target = cfg.target();

        let mut reward = 0.0;
        let mut event = StepEvent::None;
        match cfg.variant {
            TaskVariant::Reach => {
                reward = -(effector - self.state.tile).norm();
            }
            TaskVariant::Install => {
                if self.state.status == TileStatus::Attached {
                    self.state.tile = flange.transform_point(&self.state.attach_offset);
                    if (self.state.tile - target).norm() < cfg.install_threshold {
                        self.state.status = TileStatus::Installed;
                        reward += REWARD_INSTALL;
                        event = StepEvent::Installed;
                    }
                }
                if event == StepEvent::None {
                    self.state.effector = apply_gesture(
                        EffectorTask::Suction,
                        self.state.effector,
                        action.cmd.as_gesture(),
                        TransitionMode::Streaming,
                    )
                    .expect("suction alphabet always applies");
                    let dist = (effector - self.state.tile).norm();
                    match (action.cmd, self.state.status) {
                        (EffectorCmd::Suction, TileStatus::Resting) if dist < cfg.suction_threshold => {
                            self.state.status = TileStatus::Attached;
                            self.state.attach_offset = flange.inverse().transform_point(&self.state.tile);
                            if !self.state.picked_once {
                                self.state.picked_once = true;
                                reward += REWARD_PICK;
                            }
                            event = StepEvent::Picked;
                        }
                        (EffectorCmd::Drop, TileStatus::Attached) => {
                            let rest = cfg.table.top + cfg.tile_rest_z;
                            let tile = self.state.tile;
                            if !self.on_table(&tile) || tile.z > rest + cfg.table.drop_height {
                                self.state.status = TileStatus::Fallen;
                                reward += REWARD_FALL;
                                event = StepEvent::Fell;
                            } else {
                                self.state.status = TileStatus::Resting;
                                self.state.tile.z = rest;
                            }
                        }
                        _ => {}
                    }
                    let suction_on = self.state.effector.mode == EffectorMode::SuctionOn;
                    if event == StepEvent::None
                        && self.state.status == TileStatus::Resting
                        && !suction_on
                        && (effector - self.state.tile).norm() < cfg.contact_knock_threshold
                    {
                        self.state.status = TileStatus::Fallen;
                        reward += REWARD_FALL;
                        event = StepEvent::Fell;
                    }
                }
            }
        }

        self.state.step_index += 1;
        if !event.is_terminal() && self.state.step_index >= cfg.max_steps {
            event = StepEvent::Truncated;
        }
        self.state.done = event.is_terminal();
        let encoded = action.encode();
        self.push_entry(&flange, &encoded);
        Ok(StepResult { observation: self.observation(), reward, done: self.state.done, event })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> TileEnv {
        TileEnv::new(SceneConfig::default())
    }

    #[test]
    fn default_scene_parses_and_round_trips() {
        let cfg = SceneConfig::default();
        assert_eq!(cfg.suction_threshold, 0.04);
        assert_eq!(cfg.install_threshold, 0.03);
        assert_eq!(cfg.max_steps, 750);
        assert_eq!(SceneConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        let mut bad = cfg.clone();
        bad.tile_x_range = [0.0, 2.0];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn home_effector_is_above_the_table() {
        let e = env();
        let p = e.effector_position();
        assert!((p.z - 0.15).abs() < 0.01, "{p:?}");
    }

    #[test]
    fn reset_is_seeded_and_zero_padded() {
        let mut e = env();
        let a = e.reset(17);
        let x1 = e.state().tile.x;
        let b = e.reset(17);
        assert_eq!(a, b);
        assert_eq!(x1, e.state().tile.x);
        assert_eq!(a.0.len(), OBS_DIM);
        assert!(a.0[..4 * ENTRY_DIM].iter().all(|&v| v == 0.0));
        assert!(a.latest()[..FRAME_DIM].iter().any(|&v| v != 0.0));
        assert!(a.latest()[FRAME_DIM..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stacking_keeps_the_last_five_oldest_first() {
        let entries: Vec<[f64; ENTRY_DIM]> = (1..=7).map(|k| [k as f64; ENTRY_DIM]).collect();
        let one = stack_observations(&entries[..1]);
        assert!(one.0[..4 * ENTRY_DIM].iter().all(|&v| v == 0.0));
        assert!(one.latest().iter().all(|&v| v == 1.0));
        let all = stack_observations(&entries);
        assert_eq!(all.0.len(), 125);
        for k in 0..5 {
            assert_eq!(all.0[k * ENTRY_DIM], (k + 3) as f64);
        }
    }

    fn place_suction_at(e: &mut TileEnv, p: Vector3<f64>) {
        // Move the tile instead of the arm so the test does not depend on IK.
        let here = e.effector_position();
        e.state.tile += here - p;
    }

    #[test]
    fn suction_within_threshold_picks_once() {
        let mut e = env();
        e.reset(0);
        let tile = e.state().tile;
        place_suction_at(&mut e, tile + Vector3::new(0.0, 0.0, 0.02));
        let r = e.step(&AgentAction { deltas: [0.0; 6], cmd: EffectorCmd::Suction }).unwrap();
        assert_eq!((r.reward, r.event, r.done), (1.0, StepEvent::Picked, false));
        assert_eq!(e.state().status, TileStatus::Attached);
        let latest = r.observation.latest();
        assert_eq!(&latest[6..9], &[0.0, 0.0, 1.0]);
        assert_eq!(latest[FRAME_DIM + 6], 1.0);
    }

    #[test]
    fn carrying_to_target_installs() {
        let mut e = env();
        e.reset(0);
        let tile = e.state().tile;
        place_suction_at(&mut e, tile + Vector3::new(0.0, 0.0, 0.02));
        e.step(&AgentAction { deltas: [0.0; 6], cmd: EffectorCmd::Suction }).unwrap();
        // Shift the target onto the carried tile.
        e.config.target = e.state().tile.into();
        let r = e.step(&AgentAction::hold()).unwrap();
        assert_eq!((r.reward, r.event, r.done), (1.0, StepEvent::Installed, true));
        assert!(matches!(e.step(&AgentAction::hold()), Err(SimError::SteppedAfterDone)));
    }

    #[test]
    fn touching_without_suction_knocks_the_tile_off() {
        let mut e = env();
        e.reset(0);
        let tile = e.state().tile;
        place_suction_at(&mut e, tile + Vector3::new(0.0, 0.0, 0.01));
        let r = e.step(&AgentAction::hold()).unwrap();
        assert_eq!((r.reward, r.event, r.done), (-0.5, StepEvent::Fell, true));
    }

    #[test]
    fn dropping_high_above_the_table_fails() {
        let mut e = env();
        e.reset(0);
        let tile = e.state().tile;
        place_suction_at(&mut e, tile + Vector3::new(0.0, 0.0, 0.02));
        e.step(&AgentAction { deltas: [0.0; 6], cmd: EffectorCmd::Suction }).unwrap();
        // Lift the tile 0.1 m by raising the shoulder until it clears the drop height.
        let mut lifted = false;
        for _ in 0..40 {
            e.step(&AgentAction { deltas: [0.0, -1.0, 0.0, 0.0, 0.0, 0.0], cmd: EffectorCmd::Hold }).unwrap();
            if e.state().tile.z > 0.005 + 0.06 {
                lifted = true;
                break;
            }
        }
        assert!(lifted);
        let r = e.step(&AgentAction { deltas: [0.0; 6], cmd: EffectorCmd::Drop }).unwrap();
        assert_eq!((r.reward, r.event), (-0.5, StepEvent::Fell));
    }

    #[test]
    fn low_drop_rests_the_tile_and_repick_pays_nothing() {
        let mut e = env();
        e.reset(0);
        let tile = e.state().tile;
        place_suction_at(&mut e, tile + Vector3::new(0.0, 0.0, 0.02));
        // Raise the table to the relocated tile so the drop is a low one.
        e.config.table.top = e.state().tile.z - e.config.tile_rest_z;
        e.step(&AgentAction { deltas: [0.0; 6], cmd: EffectorCmd::Suction }).unwrap();
        let r = e.step(&AgentAction { deltas: [0.0; 6], cmd: EffectorCmd::Drop }).unwrap();
        assert_eq!((r.reward, r.event), (0.0, StepEvent::None));
        assert_eq!(e.state().status, TileStatus::Resting);
        let r = e.step(&AgentAction { deltas: [0.0; 6], cmd: EffectorCmd::Suction }).unwrap();
        assert_eq!((r.reward, r.event), (0.0, StepEvent::Picked));
    }

    #[test]
    fn idle_episode_truncates_with_zero_return() {
        let mut e = env();
        e.reset(3);
        let mut rewards = vec![];
        loop {
            let r = e.step(&AgentAction::hold()).unwrap();
            rewards.push(r.reward);
            if r.done {
                assert_eq!(r.event, StepEvent::Truncated);
                break;
            }
        }
        assert_eq!(rewards.len(), 750);
        assert_eq!(episode_return(rewards), 0.0);
    }

    #[test]
    fn deltas_are_clipped_and_scaled() {
        let mut e = env();
        e.reset(0);
        let q0 = e.state().q.degrees();
        e.step(&AgentAction { deltas: [5.0, -0.5, 0.0, 0.0, 0.0, f64::NAN], cmd: EffectorCmd::Hold }).unwrap();
        let q1 = e.state().q.degrees();
        assert!((q1[0] - q0[0] - 2.0).abs() < 1e-12);
        assert!((q1[1] - q0[1] + 1.0).abs() < 1e-12);
        assert_eq!(q1[5], q0[5]);
    }

    #[test]
    fn reach_variant_pays_negative_distance() {
        let mut cfg = SceneConfig::default();
        cfg.variant = TaskVariant::Reach;
        let mut e = TileEnv::new(cfg);
        e.reset(0);
        let d = (e.effector_position() - e.state().tile).norm();
        let r = e.step(&AgentAction::hold()).unwrap();
        assert!((r.reward + d).abs() < 1e-12);
        assert_eq!(r.event, StepEvent::None);
    }
}
