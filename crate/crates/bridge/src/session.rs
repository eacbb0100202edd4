//! One teleoperation session: the environment, the pose goal the arm tracks,
//! coalesced commands and the demonstration recorder. Everything here is
//! synchronous; the server calls `handle` and `tick` from a single task.

use std::path::PathBuf;

use nalgebra::{Rotation3, Vector3};
use tileil::demos::{ik_step, save_demos, DemoSet, DemoSource, Trajectory, TrajectoryMeta, Transition};
use tileil::gesture::{featurize, svm_predict, GestureLabel, GripGesture, SvmModel};
use tileil::handmap::{hand_frame, HandSchema, HandSkeleton};
use tileil::kinematics::{joint_frames, HomTransform, IkSettings};
use tileil::tilesim::{suction_point, AgentAction, EffectorCmd, SceneConfig, StepEvent, TileEnv, TileStatus, OBS_SCHEMA};

use crate::protocol::{ClientMsg, EffectorPose, ErrorCode, ServerMsg, StateMsg};

/// SVM gesture classifier used by skeleton mode.
#[derive(Debug, Clone)]
pub struct GestureModel {
    pub schema: HandSchema,
    pub model: SvmModel,
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub scene: SceneConfig,
    pub tick_hz: f64,
    pub ik: IkSettings,
    pub ik_retries: usize,
    /// Farthest the goal suction point may run ahead of the real one, in meters.
    pub max_lead: f64,
    /// Where finished recordings are written, as a demos file.
    pub record_path: Option<PathBuf>,
    pub gesture: Option<GestureModel>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            scene: SceneConfig::default(),
            tick_hz: 20.0,
            ik: IkSettings::default(),
            ik_retries: 3,
            max_lead: 0.05,
            record_path: None,
            gesture: None,
        }
    }
}

/// Latest value per field since the previous tick.
#[derive(Debug, Clone, Default, PartialEq)]
struct Pending {
    target_delta: Option<[f64; 3]>,
    rot_delta: Option<[f64; 3]>,
    gesture: Option<EffectorCmd>,
    hand_goal: Option<Vector3<f64>>,
}

pub fn grip_to_cmd(label: GestureLabel) -> EffectorCmd {
    let grip = match label {
        GestureLabel::Grip(g) => g,
        GestureLabel::Screw(t) => t.grip(),
    };
    match grip {
        GripGesture::Closing => EffectorCmd::Suction,
        GripGesture::Opening => EffectorCmd::Drop,
        GripGesture::Fixed => EffectorCmd::Hold,
    }
}

fn rpy(r: &nalgebra::Matrix3<f64>) -> [f64; 3] {
    let (roll, pitch, yaw) = Rotation3::from_matrix_unchecked(*r).euler_angles();
    [roll, pitch, yaw]
}

#[derive(Debug, Clone)]
pub struct TeleopSession {
    cfg: SessionConfig,
    env: TileEnv,
    seed: u64,
    goal: HomTransform,
    pending: Pending,
    last_reward: f64,
    last_event: StepEvent,
    recording: bool,
    /// Capturing the current episode (recording was on at its first step).
    capturing: bool,
    current: Vec<Transition>,
    recorded: Vec<Trajectory>,
    hand_anchor: Option<(Vector3<f64>, Vector3<f64>)>,
}

impl TeleopSession {
    pub fn new(cfg: SessionConfig, seed: u64) -> Self {
        let env = TileEnv::new(cfg.scene.clone());
        let mut s = TeleopSession {
            goal: env.flange(),
            cfg,
            env,
            seed,
            pending: Pending::default(),
            last_reward: 0.0,
            last_event: StepEvent::None,
            recording: false,
            capturing: false,
            current: Vec::new(),
            recorded: Vec::new(),
            hand_anchor: None,
        };
        s.reset(seed);
        s
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn env(&self) -> &TileEnv {
        &self.env
    }

    pub fn recorded(&self) -> &[Trajectory] {
        &self.recorded
    }

    pub fn reset(&mut self, seed: u64) {
        self.seed = seed;
        self.env.reset(seed);
        self.goal = self.env.flange();
        self.pending = Pending::default();
        self.last_reward = 0.0;
        self.last_event = StepEvent::None;
        self.current.clear();
        self.capturing = self.recording;
        self.hand_anchor = None;
    }

    /// Applies a message from the driving client. Returns frames for that
    /// client (errors and acknowledgements).
    pub fn handle(&mut self, msg: ClientMsg) -> Vec<ServerMsg> {
        match msg {
            ClientMsg::Cmd { target_delta, rot_delta, gesture } => {
                self.pending.target_delta = Some(target_delta);
                self.pending.rot_delta = Some(rot_delta);
                self.pending.gesture = Some(gesture.into());
                vec![]
            }
            ClientMsg::Reset { seed } => {
                self.reset(seed);
                vec![]
            }
            ClientMsg::Record { on } => {
                self.recording = on;
                self.capturing = on && self.env.state().step_index == 0 && !self.env.state().done;
                if !on {
                    self.current.clear();
                }
                vec![]
            }
            ClientMsg::Skeleton { landmarks } => match self.skeleton(&landmarks) {
                Ok(()) => vec![],
                Err(frame) => vec![frame],
            },
        }
    }

    fn skeleton(&mut self, landmarks: &std::collections::BTreeMap<String, [f64; 3]>) -> Result<(), ServerMsg> {
        let Some(gm) = &self.cfg.gesture else {
            return Err(ServerMsg::Error {
                code: ErrorCode::SkeletonUnavailable,
                message: "no gesture model loaded".into(),
            });
        };
        let invalid = |m: String| ServerMsg::Error { code: ErrorCode::SkeletonInvalid, message: m };
        let skel = landmarks.iter().fold(HandSkeleton::new(), |s, (k, p)| s.with(k, *p));
        let frame = hand_frame(&skel).map_err(|e| invalid(e.to_string()))?;
        let features = featurize(&gm.schema, &skel).map_err(|e| invalid(e.to_string()))?;
        let label = svm_predict(&gm.model, &features).map_err(|e| invalid(e.to_string()))?;
        let here = suction_point(&self.goal, self.cfg.scene.suction_offset);
        let (hand0, goal0) = *self.hand_anchor.get_or_insert((frame.origin, here));
        self.pending.hand_goal = Some(goal0 + (frame.origin - hand0));
        self.pending.gesture = Some(grip_to_cmd(label));
        Ok(())
    }

    /// Moves the pose goal by the pending deltas, keeping rotation about the
    /// suction point.
    fn integrate_goal(&mut self) {
        let offset = self.cfg.scene.suction_offset;
        let mut point = suction_point(&self.goal, offset);
        let mut rot = self.goal.rotation();
        if let Some(p) = self.pending.hand_goal {
            point = p;
        }
        if let Some(d) = self.pending.target_delta {
            point += Vector3::from(d);
        }
        let actual = suction_point(&self.env.flange(), offset);
        let lead = point - actual;
        if lead.norm() > self.cfg.max_lead {
            point = actual + lead * (self.cfg.max_lead / lead.norm());
        }
        if let Some(w) = self.pending.rot_delta {
            rot = Rotation3::new(Vector3::from(w)).matrix() * rot;
        }
        let flange_pos = point - rot.column(2) * offset;
        self.goal = HomTransform::from_parts(&rot, &flange_pos);
    }

    /// Advances the simulation by one step (nothing happens once the episode
    /// is over). Returns the state frame followed by any notices.
    pub fn tick(&mut self) -> Vec<ServerMsg> {
        let mut out = Vec::new();
        if self.env.state().done {
            self.pending = Pending::default();
            out.push(self.state_msg().into());
            return out;
        }
        let cmd = self.pending.gesture.unwrap_or(EffectorCmd::Hold);
        let previous = self.goal;
        let moved = self.pending.target_delta.is_some_and(|d| d != [0.0; 3])
            || self.pending.rot_delta.is_some_and(|d| d != [0.0; 3])
            || self.pending.hand_goal.is_some();
        if moved {
            self.integrate_goal();
        }
        self.pending = Pending::default();
        let deltas = match ik_step(&self.env, &self.goal, &self.cfg.ik, self.cfg.ik_retries) {
            Some(d) => d,
            None => {
                self.goal = previous;
                out.push(ServerMsg::Error {
                    code: ErrorCode::IkTrackingLost,
                    message: "goal pose unreachable; motion frozen".into(),
                });
                [0.0; 6]
            }
        };
        let action = AgentAction { deltas, cmd };
        let observation = self.env.observation();
        let r = self.env.step(&action).expect("episode is live");
        self.last_reward = r.reward;
        self.last_event = r.event;
        if self.capturing {
            self.current.push(Transition {
                observation,
                action: action.clipped(),
                reward: r.reward,
                done: r.done,
                event: r.event,
            });
        }
        if r.done {
            // Follow the arm, not the unreachable remainder of the goal.
            self.goal = self.env.flange();
        }
        out.insert(0, self.state_msg().into());
        if r.done && self.capturing {
            self.capturing = false;
            let meta = TrajectoryMeta { source: DemoSource::Teleop, seed: self.seed, schema: OBS_SCHEMA, outcome: r.event };
            self.recorded.push(Trajectory { meta, transitions: std::mem::take(&mut self.current) });
            if let Some(path) = &self.cfg.record_path {
                let set = DemoSet::new(self.recorded.clone());
                out.push(match save_demos(path, &set) {
                    Ok(()) => ServerMsg::Saved { path: path.display().to_string(), trajectories: self.recorded.len() },
                    Err(e) => ServerMsg::Error { code: ErrorCode::RecordIo, message: e.to_string() },
                });
            }
        }
        out
    }

    pub fn state_msg(&self) -> StateMsg {
        let s = self.env.state();
        let flange = self.env.flange();
        let p = suction_point(&flange, self.cfg.scene.suction_offset);
        StateMsg {
            step: s.step_index,
            joints: s.q.degrees(),
            frames: joint_frames(self.env.dh(), &s.q).iter().map(|m| [m[(0, 3)], m[(1, 3)], m[(2, 3)]]).collect(),
            effector_pose: EffectorPose { position: p.into(), rpy: rpy(&flange.rotation()) },
            tile: s.tile.into(),
            target: self.cfg.scene.target().into(),
            attached: s.status == TileStatus::Attached,
            status: s.status,
            reward: self.last_reward,
            event: self.last_event,
            done: s.done,
            recording: self.recording,
        }
    }
}

impl From<StateMsg> for ServerMsg {
    fn from(s: StateMsg) -> Self {
        ServerMsg::State(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::WireGesture;
    use tileil::demos::replay;

    fn cmd(d: [f64; 3], g: WireGesture) -> ClientMsg {
        ClientMsg::Cmd { target_delta: d, rot_delta: [0.0; 3], gesture: g }
    }

    fn state_of(frames: &[ServerMsg]) -> &StateMsg {
        match &frames[0] {
            ServerMsg::State(s) => s,
            other => panic!("expected state, got {other:?}"),
        }
    }

    #[test]
    fn idle_tick_only_advances_the_step() {
        let mut s = TeleopSession::new(SessionConfig::default(), 3);
        let before = s.state_msg();
        s.handle(cmd([0.0; 3], WireGesture::Hold));
        let frames = s.tick();
        let after = state_of(&frames);
        assert_eq!(after.step, before.step + 1);
        assert_eq!(after.joints, before.joints);
        assert_eq!(after.tile, before.tile);
        assert_eq!(after.effector_pose, before.effector_pose);
        assert_eq!(after.reward, 0.0);
    }

    #[test]
    fn later_commands_in_a_tick_win() {
        let mut a = TeleopSession::new(SessionConfig::default(), 1);
        let mut b = a.clone();
        a.handle(cmd([0.05, 0.0, 0.0], WireGesture::Suction));
        a.handle(cmd([0.0, 0.0, 0.01], WireGesture::Hold));
        b.handle(cmd([0.0, 0.0, 0.01], WireGesture::Hold));
        assert_eq!(a.tick(), b.tick());
    }

    #[test]
    fn goal_stays_leashed_to_the_arm() {
        let mut s = TeleopSession::new(SessionConfig::default(), 2);
        for _ in 0..20 {
            s.handle(cmd([0.0, 0.0, 0.02], WireGesture::Hold));
            s.tick();
        }
        let offset = s.cfg.scene.suction_offset;
        let lead = suction_point(&s.goal, offset) - suction_point(&s.env.flange(), offset);
        assert!(lead.norm() <= s.cfg.max_lead + 1e-12, "lead {}", lead.norm());
    }

    #[test]
    fn unreachable_goal_freezes_and_reports() {
        let cfg = SessionConfig { max_lead: f64::INFINITY, ..SessionConfig::default() };
        let mut s = TeleopSession::new(cfg, 2);
        let before = s.state_msg();
        s.handle(cmd([5.0, 0.0, 0.0], WireGesture::Hold));
        let frames = s.tick();
        assert_eq!(state_of(&frames).joints, before.joints);
        assert!(frames.iter().any(|f| matches!(f, ServerMsg::Error { code: ErrorCode::IkTrackingLost, .. })));
        // The goal was restored, so the next idle tick is quiet.
        assert_eq!(s.tick().len(), 1);
    }

    /// Drives toward the tile and back out, returning every frame.
    fn scripted_pick_and_place(s: &mut TeleopSession) -> Vec<ServerMsg> {
        let mut frames = Vec::new();
        for _ in 0..2000 {
            if s.env().state().done {
                break;
            }
            let st = s.state_msg();
            let e = Vector3::from(st.effector_pose.position);
            let tile = Vector3::from(st.tile);
            let (goal, g) = if st.attached {
                (Vector3::from(st.target) + (e - tile), WireGesture::Hold)
            } else if (e - tile).xy().norm() > 0.008 {
                (tile + Vector3::new(0.0, 0.0, 0.08), WireGesture::Hold)
            } else {
                (tile + Vector3::new(0.0, 0.0, 0.02), WireGesture::Suction)
            };
            // Steer the goal, which the arm tracks at a bounded joint speed.
            let step = goal - suction_point(&s.goal, s.cfg.scene.suction_offset);
            let step = if step.norm() > 0.01 { step * (0.01 / step.norm()) } else { step };
            s.handle(cmd(step.into(), g));
            frames.extend(s.tick());
        }
        frames
    }

    #[test]
    fn pick_is_broadcast_with_reward_one() {
        let mut s = TeleopSession::new(SessionConfig::default(), 4);
        let frames = scripted_pick_and_place(&mut s);
        let picked: Vec<_> = frames
            .iter()
            .filter_map(|f| match f {
                ServerMsg::State(st) if st.event == StepEvent::Picked => Some(st.reward),
                _ => None,
            })
            .collect();
        assert_eq!(picked, vec![1.0]);
    }

    #[test]
    fn recorded_episode_is_a_valid_replayable_demo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teleop.jsonl");
        let cfg = SessionConfig { record_path: Some(path.clone()), ..SessionConfig::default() };
        let mut s = TeleopSession::new(cfg, 11);
        s.handle(ClientMsg::Record { on: true });
        let frames = scripted_pick_and_place(&mut s);
        assert!(frames.iter().any(|f| matches!(f, ServerMsg::Saved { trajectories: 1, .. })));
        let set = tileil::demos::load_demos(&path).unwrap();
        for t in &set.trajectories {
            t.validate().unwrap();
        }
        let traj = &set.trajectories[0];
        assert_eq!(traj.meta.source, DemoSource::Teleop);
        assert_eq!(traj.meta.outcome, StepEvent::Installed);
        let mut env = TileEnv::new(SceneConfig::default());
        let events: Vec<_> = traj.transitions.iter().map(|t| (t.reward, t.event)).collect();
        assert_eq!(replay(&mut env, traj).unwrap(), events);
    }

    #[test]
    fn same_commands_record_the_same_trajectory() {
        let run = || {
            let mut s = TeleopSession::new(SessionConfig::default(), 9);
            s.handle(ClientMsg::Record { on: true });
            scripted_pick_and_place(&mut s);
            s.recorded().to_vec()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.len(), 1);
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn recording_armed_mid_episode_waits_for_a_reset() {
        let mut s = TeleopSession::new(SessionConfig::default(), 5);
        s.tick();
        s.handle(ClientMsg::Record { on: true });
        assert!(s.state_msg().recording);
        s.tick();
        assert!(s.current.is_empty());
        s.handle(ClientMsg::Reset { seed: 6 });
        s.tick();
        assert_eq!(s.current.len(), 1);
    }

    #[test]
    fn skeleton_without_a_model_is_refused() {
        let mut s = TeleopSession::new(SessionConfig::default(), 0);
        let frames = s.handle(ClientMsg::Skeleton { landmarks: Default::default() });
        assert!(matches!(frames[0], ServerMsg::Error { code: ErrorCode::SkeletonUnavailable, .. }));
    }
}
