//! Gesture recognition from hand skeletons and the gesture-driven end-effector
//! command machines for gripping, suction and screwing.

mod machine;
mod svm;
mod synth;

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::handmap::{HandError, HandSchema, HandSkeleton, WRIST};

pub use machine::{apply_gesture, EffectorMode, EffectorState, EffectorTask, TransitionMode};
pub use svm::{
    cross_validate, read_model, svm_predict, svm_train, write_model, CvResult, Kernel, SvmModel,
    SvmParams,
};
pub use synth::{sample_skeleton, synth_hand_dataset, SynthSpec};

#[derive(Debug, Error)]
pub enum GestureError {
    #[error("skeleton does not match the active schema: {0}")]
    SchemaMismatch(String),
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("feature length {got} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("command {label} is not valid in state {state:?}")]
    InvalidTransition { state: EffectorState, label: GestureLabel },
    #[error("label {0} does not belong to the active task")]
    TaskMismatch(GestureLabel),
    #[error("unknown gesture label `{0}`")]
    UnknownLabel(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Hand(#[from] HandError),
}

/// Which label alphabet a classifier or dataset uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GestureTask {
    /// Shared by gripping and suction: closing / opening / fixed.
    Grip,
    /// The five (gripping, screwing) tuples.
    Screw,
}

impl GestureTask {
    pub fn labels(self) -> Vec<GestureLabel> {
        match self {
            GestureTask::Grip => GripGesture::ALL.iter().map(|g| GestureLabel::Grip(*g)).collect(),
            GestureTask::Screw => ScrewTuple::ALL.iter().map(|s| GestureLabel::Screw(*s)).collect(),
        }
    }
}

impl GestureTask {
    /// Held-out share: 20% for the grip/suction set, 30% for screwing.
    pub fn test_fraction(self) -> f64 {
        match self {
            GestureTask::Grip => 0.2,
            GestureTask::Screw => 0.3,
        }
    }
}

impl fmt::Display for GestureTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GestureTask::Grip => "grip",
            GestureTask::Screw => "screw",
        })
    }
}

impl FromStr for GestureTask {
    type Err = GestureError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "grip" | "suction" => Ok(GestureTask::Grip),
            "screw" => Ok(GestureTask::Screw),
            other => Err(GestureError::UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GripGesture {
    Closing,
    Opening,
    Fixed,
}

impl GripGesture {
    pub const ALL: [GripGesture; 3] = [GripGesture::Closing, GripGesture::Opening, GripGesture::Fixed];

    pub fn as_str(self) -> &'static str {
        match self {
            GripGesture::Closing => "closing",
            GripGesture::Opening => "opening",
            GripGesture::Fixed => "fixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScrewGesture {
    Tightening,
    Loosening,
    Fixed,
    Stopped,
}

impl ScrewGesture {
    pub fn as_str(self) -> &'static str {
        match self {
            ScrewGesture::Tightening => "tightening",
            ScrewGesture::Loosening => "loosening",
            ScrewGesture::Fixed => "fixed",
            ScrewGesture::Stopped => "stopped",
        }
    }
}

/// The admissible (gripping, screwing) gesture pairs. Screwing commands only
/// subdivide the closing gesture; opening and fixed always stop the spindle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScrewTuple {
    ClosingTightening,
    ClosingLoosening,
    ClosingFixed,
    OpeningStopped,
    FixedStopped,
}

impl ScrewTuple {
    pub const ALL: [ScrewTuple; 5] = [
        ScrewTuple::ClosingTightening,
        ScrewTuple::ClosingLoosening,
        ScrewTuple::ClosingFixed,
        ScrewTuple::OpeningStopped,
        ScrewTuple::FixedStopped,
    ];

    pub fn grip(self) -> GripGesture {
        match self {
            ScrewTuple::ClosingTightening | ScrewTuple::ClosingLoosening | ScrewTuple::ClosingFixed => {
                GripGesture::Closing
            }
            ScrewTuple::OpeningStopped => GripGesture::Opening,
            ScrewTuple::FixedStopped => GripGesture::Fixed,
        }
    }

    pub fn screw(self) -> ScrewGesture {
        match self {
            ScrewTuple::ClosingTightening => ScrewGesture::Tightening,
            ScrewTuple::ClosingLoosening => ScrewGesture::Loosening,
            ScrewTuple::ClosingFixed => ScrewGesture::Fixed,
            ScrewTuple::OpeningStopped | ScrewTuple::FixedStopped => ScrewGesture::Stopped,
        }
    }

    pub fn from_pair(grip: GripGesture, screw: ScrewGesture) -> Option<ScrewTuple> {
        ScrewTuple::ALL.into_iter().find(|t| t.grip() == grip && t.screw() == screw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GestureLabel {
    Grip(GripGesture),
    Screw(ScrewTuple),
}

impl GestureLabel {
    pub fn task(self) -> GestureTask {
        match self {
            GestureLabel::Grip(_) => GestureTask::Grip,
            GestureLabel::Screw(_) => GestureTask::Screw,
        }
    }

    /// Position of the label in its task's alphabet.
    pub fn class_index(self) -> usize {
        match self {
            GestureLabel::Grip(g) => GripGesture::ALL.iter().position(|x| *x == g).unwrap(),
            GestureLabel::Screw(s) => ScrewTuple::ALL.iter().position(|x| *x == s).unwrap(),
        }
    }
}

impl fmt::Display for GestureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GestureLabel::Grip(g) => f.write_str(g.as_str()),
            GestureLabel::Screw(t) => write!(f, "{}+{}", t.grip().as_str(), t.screw().as_str()),
        }
    }
}

impl FromStr for GestureLabel {
    type Err = GestureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let grip = |g: &str| GripGesture::ALL.into_iter().find(|x| x.as_str() == g);
        if let Some((g, sc)) = s.split_once('+') {
            let screw = [
                ScrewGesture::Tightening,
                ScrewGesture::Loosening,
                ScrewGesture::Fixed,
                ScrewGesture::Stopped,
            ]
            .into_iter()
            .find(|x| x.as_str() == sc);
            return match (grip(g), screw) {
                (Some(g), Some(sc)) => ScrewTuple::from_pair(g, sc)
                    .map(GestureLabel::Screw)
                    .ok_or_else(|| GestureError::UnknownLabel(s.to_string())),
                _ => Err(GestureError::UnknownLabel(s.to_string())),
            };
        }
        grip(s).map(GestureLabel::Grip).ok_or_else(|| GestureError::UnknownLabel(s.to_string()))
    }
}

impl Serialize for GestureLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GestureLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureSample {
    pub features: Vec<f64>,
    pub label: GestureLabel,
}

/// Flattens the skeleton in schema order with coordinates taken relative to
/// the wrist.
pub fn featurize(schema: &HandSchema, skel: &HandSkeleton) -> Result<Vec<f64>, GestureError> {
    if skel.landmarks.len() != schema.len() {
        return Err(GestureError::SchemaMismatch(format!(
            "expected {} landmarks, found {}",
            schema.len(),
            skel.landmarks.len()
        )));
    }
    let wrist = skel.point(WRIST).map_err(|e| GestureError::SchemaMismatch(e.to_string()))?;
    let mut out = Vec::with_capacity(3 * schema.len());
    for name in schema.names() {
        let p = skel.point(name).map_err(|e| GestureError::SchemaMismatch(e.to_string()))?;
        out.extend_from_slice((p - wrist).as_slice());
    }
    Ok(out)
}

/// Test-set size per class for a stratified split: the overall test count is
/// `round(n * fraction)`, distributed over classes by largest remainder.
pub fn stratified_test_counts(class_sizes: &[usize], test_fraction: f64) -> Vec<usize> {
    let n: usize = class_sizes.iter().sum();
    let total = (n as f64 * test_fraction).round() as usize;
    let exact: Vec<f64> = class_sizes.iter().map(|&c| c as f64 * test_fraction).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut remaining = total.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..class_sizes.len()).collect();
    // Largest fractional part first; ties by class order.
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &c in &order {
        if remaining == 0 {
            break;
        }
        if counts[c] < class_sizes[c] {
            counts[c] += 1;
            remaining -= 1;
        }
    }
    counts
}

/// Seeded stratified train/test split. Returns `(train, test)`.
pub fn stratified_split(
    data: &[GestureSample],
    test_fraction: f64,
    seed: u64,
) -> (Vec<GestureSample>, Vec<GestureSample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<GestureLabel> = data.iter().map(|s| s.label).collect();
    labels.sort();
    labels.dedup();
    let groups: Vec<Vec<usize>> = labels
        .iter()
        .map(|l| (0..data.len()).filter(|&i| data[i].label == *l).collect())
        .collect();
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let test_counts = stratified_test_counts(&sizes, test_fraction);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (mut idx, n_test) in groups.into_iter().zip(test_counts) {
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            if k < n_test {
                test.push(data[i].clone());
            } else {
                train.push(data[i].clone());
            }
        }
    }
    (train, test)
}

pub fn accuracy(model: &SvmModel, data: &[GestureSample]) -> Result<f64, GestureError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for s in data {
        if svm_predict(model, &s.features)? == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// C in {1, 10} crossed with RBF gamma in {0.1, 1}.
pub fn default_grid() -> Vec<SvmParams> {
    let mut grid = Vec::new();
    for gamma in [0.1, 1.0] {
        for c in [1.0, 10.0] {
            grid.push(SvmParams { kernel: Kernel::Rbf { gamma }, c });
        }
    }
    grid
}

#[derive(Debug, Clone)]
pub struct TaskReport {
    pub task: GestureTask,
    pub n_train: usize,
    pub n_test: usize,
    pub cv: CvResult,
    pub test_accuracy: f64,
    pub model: SvmModel,
}

/// Synthesizes the task's dataset, splits it stratified, picks parameters by
/// 5-fold cross-validation on the training part, refits and scores the
/// held-out part.
pub fn run_task(task: GestureTask, seed: u64) -> Result<TaskReport, GestureError> {
    let data = synth_hand_dataset(&SynthSpec::for_task(task), seed);
    let (train, test) = stratified_split(&data, task.test_fraction(), seed);
    let cv = cross_validate(&train, &default_grid(), 5, seed)?;
    let model = svm_train(&train, cv.best)?;
    let test_accuracy = accuracy(&model, &test)?;
    Ok(TaskReport { task, n_train: train.len(), n_test: test.len(), cv, test_accuracy, model })
}

pub fn write_dataset<W: Write>(mut w: W, data: &[GestureSample]) -> Result<(), GestureError> {
    for s in data {
        serde_json::to_writer(&mut w, s).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Vec<GestureSample>, GestureError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: GestureSample = serde_json::from_str(&line)
            .map_err(|e| GestureError::Parse { line: i + 1, reason: e.to_string() })?;
        out.push(s);
    }
    Ok(out)
}
