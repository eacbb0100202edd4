use serde::{Deserialize, Serialize};

use super::{GestureError, GestureLabel, GripGesture, ScrewGesture};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectorMode {
    Open,
    Closed,
    FixedPose,
    SuctionOn,
    SuctionOff,
}

impl EffectorMode {
    pub const ALL: [EffectorMode; 5] = [
        EffectorMode::Open,
        EffectorMode::Closed,
        EffectorMode::FixedPose,
        EffectorMode::SuctionOn,
        EffectorMode::SuctionOff,
    ];
}

/// End-effector command state. `screw_rate` is the spindle command:
/// `+1` tighten, `-1` loosen, `0` still. It may be nonzero only while closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EffectorState {
    pub mode: EffectorMode,
    pub screw_rate: i8,
}

impl EffectorState {
    pub fn new(mode: EffectorMode) -> Self {
        EffectorState { mode, screw_rate: 0 }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self.screw_rate, -1..=1) && (self.screw_rate == 0 || self.mode == EffectorMode::Closed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectorTask {
    Gripping,
    Suction,
    Screwing,
}

impl EffectorTask {
    pub fn initial_state(self) -> EffectorState {
        match self {
            EffectorTask::Gripping | EffectorTask::Screwing => EffectorState::new(EffectorMode::Open),
            EffectorTask::Suction => EffectorState::new(EffectorMode::SuctionOff),
        }
    }
}

/// How an invalid screw command is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionMode {
    /// Return `InvalidTransition`.
    Strict,
    /// Ignore the command and keep the current state.
    Streaming,
}

fn grip_transition(state: EffectorState, g: GripGesture) -> EffectorState {
    match g {
        GripGesture::Closing => EffectorState::new(EffectorMode::Closed),
        GripGesture::Opening => EffectorState::new(EffectorMode::Open),
        GripGesture::Fixed => EffectorState { mode: state.mode, screw_rate: 0 },
    }
}

fn suction_transition(state: EffectorState, g: GripGesture) -> EffectorState {
    match g {
        GripGesture::Closing => EffectorState::new(EffectorMode::SuctionOn),
        GripGesture::Opening => EffectorState::new(EffectorMode::SuctionOff),
        GripGesture::Fixed => EffectorState { mode: state.mode, screw_rate: 0 },
    }
}

/// Applies one recognized gesture to the effector command state.
pub fn apply_gesture(
    task: EffectorTask,
    state: EffectorState,
    label: GestureLabel,
    mode: TransitionMode,
) -> Result<EffectorState, GestureError> {
    let next = match (task, label) {
        (EffectorTask::Gripping, GestureLabel::Grip(g)) => Ok(grip_transition(state, g)),
        (EffectorTask::Suction, GestureLabel::Grip(g)) => Ok(suction_transition(state, g)),
        (EffectorTask::Screwing, GestureLabel::Screw(t)) => match t.screw() {
            ScrewGesture::Tightening | ScrewGesture::Loosening => {
                if state.mode == EffectorMode::Closed {
                    let rate = if t.screw() == ScrewGesture::Tightening { 1 } else { -1 };
                    Ok(EffectorState { mode: EffectorMode::Closed, screw_rate: rate })
                } else {
                    Err(GestureError::InvalidTransition { state, label })
                }
            }
            ScrewGesture::Fixed | ScrewGesture::Stopped => Ok(grip_transition(state, t.grip())),
        },
        _ => return Err(GestureError::TaskMismatch(label)),
    };
    match (next, mode) {
        (Err(GestureError::InvalidTransition { .. }), TransitionMode::Streaming) => Ok(state),
        (other, _) => other,
    }
}
