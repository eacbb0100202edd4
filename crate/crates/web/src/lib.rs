//! WebAssembly bindings for the static demo page in `www/`: interactive IK on
//! the arm, hand-frame extraction with gesture classification, and playback
//! of a scripted tile-installation episode.
//!
//! Every value crossing into JavaScript is a flat `Vec<f64>` or a string; the
//! layouts are documented on each method.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tileil::demos::{tool_down, ActionSource, ScriptedExpert};
use tileil::gesture::{featurize, run_task, sample_skeleton, svm_predict, GestureTask, SvmModel, SynthSpec};
use tileil::handmap::{hand_frame, HandSchema, HandSkeleton};
use tileil::kinematics::{joint_frames, solve_ik, DhTable, HomTransform, IkSettings, JointAngles};
use tileil::tilesim::{suction_point, SceneConfig, TileEnv, TileStatus};
use wasm_bindgen::prelude::*;

fn frame_origins(dh: &DhTable, q: &JointAngles) -> Vec<f64> {
    joint_frames(dh, q).iter().flat_map(|m| [m[(0, 3)], m[(1, 3)], m[(2, 3)]]).collect()
}

/// UR3 arm that follows suction-point goals with the tool pointing down.
#[wasm_bindgen]
pub struct Arm {
    dh: DhTable,
    q: JointAngles,
    offset: f64,
}

#[wasm_bindgen]
impl Arm {
    #[wasm_bindgen(constructor)]
    #[allow(clippy::new_without_default)]
    pub fn new() -> Arm {
        let scene = SceneConfig::default();
        Arm { dh: DhTable::ur3(), q: JointAngles::from_degrees(scene.home_deg), offset: scene.suction_offset }
    }

    /// Joint angles in degrees.
    pub fn joints(&self) -> Vec<f64> {
        self.q.degrees().to_vec()
    }

    /// Origins of frames 0..=6 followed by the suction point: 24 values, xyz each.
    pub fn points(&self) -> Vec<f64> {
        let mut out = frame_origins(&self.dh, &self.q);
        let tip = suction_point(&HomTransform::from_matrix_unchecked(joint_frames(&self.dh, &self.q)[6]), self.offset);
        out.extend(tip.iter());
        out
    }

    /// Moves the suction point to `(x, y, z)` from the current posture.
    /// Returns the iteration count; the arm stays put if the solver fails.
    pub fn reach(&mut self, x: f64, y: f64, z: f64) -> Result<usize, String> {
        let rot = tool_down();
        let point = Vector3::new(x, y, z);
        let flange = point - rot.column(2) * self.offset;
        let target = HomTransform::from_parts(&rot, &flange);
        let sol = solve_ik(&self.dh, &self.q, &target, &IkSettings::default()).map_err(|e| e.to_string())?;
        self.q = sol.q;
        Ok(sol.iterations)
    }
}

/// Synthetic hands and a grip classifier trained on the synthetic set.
#[wasm_bindgen]
pub struct HandLab {
    schema: HandSchema,
    model: SvmModel,
    rng: ChaCha8Rng,
    skeleton: HandSkeleton,
}

#[wasm_bindgen]
impl HandLab {
    /// Trains the grip model; takes on the order of a second.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Result<HandLab, String> {
        let report = run_task(GestureTask::Grip, seed).map_err(|e| e.to_string())?;
        Ok(HandLab {
            schema: HandSchema::default_21(),
            model: report.model,
            rng: ChaCha8Rng::seed_from_u64(seed),
            skeleton: HandSkeleton::new(),
        })
    }

    /// Class names in index order.
    pub fn labels(&self) -> Vec<String> {
        GestureTask::Grip.labels().iter().map(|l| l.to_string()).collect()
    }

    /// Draws a fresh noisy hand of class `label` (index into `labels`).
    pub fn sample(&mut self, label: usize) -> Result<(), String> {
        let label = *GestureTask::Grip.labels().get(label).ok_or("label index out of range")?;
        self.skeleton = sample_skeleton(&SynthSpec::grip(), label, &mut self.rng);
        Ok(())
    }

    /// Landmarks in schema order, xyz each.
    pub fn points(&self) -> Vec<f64> {
        self.schema
            .names()
            .iter()
            .filter_map(|n| self.skeleton.point(n).ok())
            .flat_map(|p| [p.x, p.y, p.z])
            .collect()
    }

    /// Hand frame as origin, x, y, z axes: 12 values.
    pub fn frame(&self) -> Result<Vec<f64>, String> {
        let f = hand_frame(&self.skeleton).map_err(|e| e.to_string())?;
        Ok([f.origin, f.x, f.y, f.z].iter().flat_map(|v| [v.x, v.y, v.z]).collect())
    }

    /// Classifier output for the current hand.
    pub fn predict(&self) -> Result<String, String> {
        let features = featurize(&self.schema, &self.skeleton).map_err(|e| e.to_string())?;
        svm_predict(&self.model, &features).map(|l| l.to_string()).map_err(|e| e.to_string())
    }
}

/// Status codes used by `Playback::frame`.
fn status_code(s: TileStatus) -> f64 {
    match s {
        TileStatus::Resting => 0.0,
        TileStatus::Attached => 1.0,
        TileStatus::Installed => 2.0,
        TileStatus::Fallen => 3.0,
    }
}

/// A recorded scripted-expert episode.
#[wasm_bindgen]
pub struct Playback {
    frames: Vec<Vec<f64>>,
    target: [f64; 3],
    episode_return: f64,
}

#[wasm_bindgen]
impl Playback {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Result<Playback, String> {
        let scene = SceneConfig::default();
        let target = scene.target;
        let mut env = TileEnv::new(scene);
        env.reset(seed);
        let mut expert = ScriptedExpert::default();
        let mut total = 0.0;
        let mut frames = vec![Self::snapshot(&env, total)];
        while !env.state().done {
            let a = expert.act(&env).map_err(|e| e.to_string())?;
            total += env.step(&a).map_err(|e| e.to_string())?.reward;
            frames.push(Self::snapshot(&env, total));
        }
        Ok(Playback { frames, target, episode_return: total })
    }

    fn snapshot(env: &TileEnv, total: f64) -> Vec<f64> {
        let s = env.state();
        let mut f = frame_origins(env.dh(), &s.q);
        f.extend(s.tile.iter());
        f.push(status_code(s.status));
        f.push(total);
        f
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// 21 frame-origin values, tile xyz, status (0 resting, 1 attached,
    /// 2 installed, 3 fallen) and the return so far: 26 values.
    pub fn frame(&self, i: usize) -> Vec<f64> {
        self.frames[i.min(self.frames.len() - 1)].clone()
    }

    pub fn target(&self) -> Vec<f64> {
        self.target.to_vec()
    }

    pub fn episode_return(&self) -> f64 {
        self.episode_return
    }
}
