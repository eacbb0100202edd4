//! Parametric hand-pose generator used in place of tracked skeleton data.
//!
//! Each gesture class is a finger-curl/thumb template; samples add per-finger
//! curl jitter, a random hand size, Gaussian landmark noise and a random wrist
//! pose before being flattened with [`featurize`](super::featurize).

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{featurize, GestureLabel, GestureSample, GestureTask, GripGesture, ScrewTuple};
use crate::handmap::{HandSchema, HandSkeleton, WRIST};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub task: GestureTask,
    /// Sample count per class, in the task alphabet order.
    pub class_counts: Vec<usize>,
    /// Standard deviation of per-landmark Gaussian jitter, meters.
    pub landmark_noise: f64,
    /// Standard deviation of per-finger curl jitter (curl is in `[0, 1]`).
    pub curl_noise: f64,
    /// Maximum wrist tilt away from the nominal orientation, degrees.
    pub max_tilt_deg: f64,
}

impl SynthSpec {
    /// 827 samples: 290 closing, 274 opening, 263 fixed.
    pub fn grip() -> Self {
        SynthSpec {
            task: GestureTask::Grip,
            class_counts: vec![290, 274, 263],
            landmark_noise: 0.004,
            curl_noise: 0.08,
            max_tilt_deg: 20.0,
        }
    }

    /// 6925 samples over the five screwing tuples.
    pub fn screw() -> Self {
        SynthSpec {
            task: GestureTask::Screw,
            class_counts: vec![1475, 1289, 1494, 1209, 1458],
            ..Self::grip()
        }
    }

    pub fn for_task(task: GestureTask) -> Self {
        match task {
            GestureTask::Grip => Self::grip(),
            GestureTask::Screw => Self::screw(),
        }
    }
}

/// Finger curl in `[0, 1]` for thumb, index, middle, ring, pinky, plus how far
/// the thumb is abducted away from the palm (`0` tucked, `1` fully out) and
/// whether it points across the palm (`-1`) or up (`+1`).
#[derive(Debug, Clone, Copy)]
struct PoseTemplate {
    curl: [f64; 5],
    thumb_abduction: f64,
    thumb_twist: f64,
    spread: f64,
}

fn template(label: GestureLabel) -> PoseTemplate {
    let fist = PoseTemplate { curl: [0.8, 0.95, 0.95, 0.95, 0.95], thumb_abduction: 0.1, thumb_twist: -1.0, spread: 0.0 };
    let open = PoseTemplate { curl: [0.05, 0.05, 0.05, 0.05, 0.05], thumb_abduction: 0.9, thumb_twist: 0.0, spread: 1.0 };
    let claw = PoseTemplate { curl: [0.4, 0.5, 0.5, 0.5, 0.5], thumb_abduction: 0.5, thumb_twist: 0.0, spread: 0.4 };
    match label {
        GestureLabel::Grip(GripGesture::Closing) => fist,
        GestureLabel::Grip(GripGesture::Opening) => open,
        GestureLabel::Grip(GripGesture::Fixed) => claw,
        // Thumb up out of the fist.
        GestureLabel::Screw(ScrewTuple::ClosingTightening) => {
            PoseTemplate { curl: [0.0, 0.95, 0.95, 0.95, 0.95], thumb_abduction: 0.9, thumb_twist: 1.0, spread: 0.0 }
        }
        // Index finger pointing out of the fist.
        GestureLabel::Screw(ScrewTuple::ClosingLoosening) => {
            PoseTemplate { curl: [0.8, 0.05, 0.95, 0.95, 0.95], thumb_abduction: 0.1, thumb_twist: -1.0, spread: 0.0 }
        }
        GestureLabel::Screw(ScrewTuple::ClosingFixed) => fist,
        GestureLabel::Screw(ScrewTuple::OpeningStopped) => open,
        GestureLabel::Screw(ScrewTuple::FixedStopped) => claw,
    }
}

const FINGERS: [&str; 5] = ["thumb", "index", "middle", "ring", "pinky"];
// Knuckle positions in the hand frame (x toward the thumb side, y along the
// fingers, z out of the back of the hand), meters.
const KNUCKLES: [[f64; 3]; 5] = [
    [0.022, 0.025, -0.008],
    [0.025, 0.090, 0.0],
    [0.002, 0.095, 0.0],
    [-0.019, 0.089, 0.0],
    [-0.037, 0.078, 0.0],
];
const BONES: [[f64; 3]; 5] = [
    [0.040, 0.032, 0.025],
    [0.045, 0.026, 0.020],
    [0.048, 0.029, 0.021],
    [0.045, 0.027, 0.021],
    [0.035, 0.020, 0.019],
];
const SPLAY_DEG: [f64; 5] = [45.0, 8.0, 0.0, -7.0, -15.0];

fn pose_skeleton(schema: &HandSchema, t: &PoseTemplate, size: f64) -> HandSkeleton {
    let mut skel = HandSkeleton::new();
    skel.set(WRIST, Vector3::zeros());
    for (f, name) in FINGERS.iter().enumerate() {
        let base = Vector3::from(KNUCKLES[f]) * size;
        let splay = (SPLAY_DEG[f] * (0.5 + t.spread)).to_radians();
        // Direction in the palm plane, then flexed toward the palm (-z).
        let mut dir = Vector3::new(splay.sin(), splay.cos(), 0.0);
        let mut axis = Vector3::new(splay.cos(), -splay.sin(), 0.0);
        if f == 0 {
            let abduct = (70.0 * t.thumb_abduction - 20.0).to_radians();
            dir = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::y()), -abduct) * dir;
            let lift = (40.0 * t.thumb_twist).to_radians();
            dir = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), lift) * dir;
            axis = dir.cross(&Vector3::z()).try_normalize(1e-9).unwrap_or(axis);
        }
        let flex = [80.0, 95.0, 70.0].map(|deg: f64| (deg * t.curl[f]).to_radians());
        let names: [&str; 4] = if f == 0 {
            ["metacarpal", "proximal", "distal", "tip"]
        } else {
            ["proximal", "intermediate", "distal", "tip"]
        };
        let mut p = base;
        skel.set(&format!("{name}_{}", names[0]), p);
        let unit_axis = nalgebra::Unit::new_normalize(axis);
        for seg in 0..3 {
            dir = Rotation3::from_axis_angle(&unit_axis, -flex[seg]) * dir;
            p += dir * BONES[f][seg] * size;
            skel.set(&format!("{name}_{}", names[seg + 1]), p);
        }
    }
    // Keep only the landmarks the schema asks for.
    skel.landmarks.retain(|k, _| schema.names().iter().any(|n| n == k));
    skel
}

/// One noisy world-frame hand for `label`, drawn with `spec`'s jitter.
pub fn sample_skeleton<R: Rng>(spec: &SynthSpec, label: GestureLabel, rng: &mut R) -> HandSkeleton {
    let schema = HandSchema::default_21();
    let point_noise = Normal::new(0.0, spec.landmark_noise).unwrap();
    let curl_noise = Normal::new(0.0, spec.curl_noise).unwrap();
    let mut t = template(label);
    for c in t.curl.iter_mut() {
        *c = (*c + curl_noise.sample(rng)).clamp(0.0, 1.0);
    }
    t.thumb_abduction = (t.thumb_abduction + curl_noise.sample(rng)).clamp(0.0, 1.0);
    t.spread = (t.spread + curl_noise.sample(rng)).clamp(0.0, 1.2);
    let size = rng.random_range(0.9..1.1);
    let local = pose_skeleton(&schema, &t, size);

    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let tilt = rng.random_range(0.0..spec.max_tilt_deg).to_radians();
    let rot = match axis.try_normalize(1e-6) {
        Some(a) => Rotation3::new(a * tilt),
        None => Rotation3::identity(),
    };
    let wrist = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(0.8..1.4), rng.random_range(-0.3..0.3));
    let mut world = local.map_points(|p| rot * p + wrist);
    for p in world.landmarks.values_mut() {
        for v in p.iter_mut() {
            *v += point_noise.sample(rng);
        }
    }
    world
}

/// Generates a labelled dataset; deterministic for a given seed.
pub fn synth_hand_dataset(spec: &SynthSpec, seed: u64) -> Vec<GestureSample> {
    let schema = HandSchema::default_21();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = spec.task.labels();
    let mut out = Vec::with_capacity(spec.class_counts.iter().sum());
    for (label, &count) in labels.iter().zip(&spec.class_counts) {
        for _ in 0..count {
            let world = sample_skeleton(spec, *label, &mut rng);
            let features = featurize(&schema, &world).expect("generator emits the full schema");
            out.push(GestureSample { features, label: *label });
        }
    }
    out
}
