//! TELEOP1 wire schema. Every frame is a JSON object carrying `"v": "TELEOP1"`
//! and a `type` tag.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tileil::tilesim::{EffectorCmd, StepEvent, TileStatus};

pub const WIRE_VERSION: &str = "TELEOP1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireGesture {
    Suction,
    Drop,
    Hold,
}

impl From<WireGesture> for EffectorCmd {
    fn from(g: WireGesture) -> Self {
        match g {
            WireGesture::Suction => EffectorCmd::Suction,
            WireGesture::Drop => EffectorCmd::Drop,
            WireGesture::Hold => EffectorCmd::Hold,
        }
    }
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMsg {
    /// Suction-point displacement in meters and a rotation vector in radians,
    /// both in the base frame.
    Cmd { target_delta: [f64; 3], rot_delta: [f64; 3], gesture: WireGesture },
    Record { on: bool },
    Reset { seed: u64 },
    /// Hand landmarks by name, for skeleton mode.
    Skeleton { landmarks: BTreeMap<String, [f64; 3]> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Driver,
    Viewer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectorPose {
    pub position: [f64; 3],
    /// Roll, pitch, yaw in radians.
    pub rpy: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMsg {
    pub step: usize,
    /// Joint angles in degrees.
    pub joints: [f64; 6],
    /// Origins of frames 0 through 6 in the base frame, so viewers can draw
    /// the links without doing kinematics.
    pub frames: Vec<[f64; 3]>,
    pub effector_pose: EffectorPose,
    pub tile: [f64; 3],
    pub target: [f64; 3],
    pub attached: bool,
    pub status: TileStatus,
    pub reward: f64,
    pub event: StepEvent,
    pub done: bool,
    pub recording: bool,
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMsg {
    Hello { role: Role, tick_hz: f64 },
    State(StateMsg),
    Error { code: ErrorCode, message: String },
    Saved { path: String, trajectories: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    UnknownType,
    Version,
    ViewOnly,
    IkTrackingLost,
    EpisodeOver,
    SkeletonUnavailable,
    SkeletonInvalid,
    RecordIo,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("expected version {WIRE_VERSION}, got {0}")]
    Version(String),
}

impl ProtocolError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ProtocolError::Malformed(_) => ErrorCode::Malformed,
            ProtocolError::UnknownType(_) => ErrorCode::UnknownType,
            ProtocolError::Version(_) => ErrorCode::Version,
        }
    }

    pub fn to_frame(&self) -> ServerMsg {
        ServerMsg::Error { code: self.code(), message: self.to_string() }
    }
}

const CLIENT_TYPES: [&str; 4] = ["cmd", "record", "reset", "skeleton"];

pub fn parse_client(text: &str) -> Result<ClientMsg, ProtocolError> {
    let mut v: Value = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let obj = v.as_object_mut().ok_or_else(|| ProtocolError::Malformed("frame is not a JSON object".into()))?;
    match obj.remove("v") {
        Some(Value::String(s)) if s == WIRE_VERSION => {}
        Some(other) => return Err(ProtocolError::Version(other.to_string())),
        None => return Err(ProtocolError::Version("nothing".into())),
    }
    match obj.get("type") {
        Some(Value::String(t)) if CLIENT_TYPES.contains(&t.as_str()) => {}
        Some(Value::String(t)) => return Err(ProtocolError::UnknownType(t.clone())),
        _ => return Err(ProtocolError::Malformed("missing string field `type`".into())),
    }
    let msg: ClientMsg = serde_json::from_value(v).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    if let ClientMsg::Cmd { target_delta, rot_delta, .. } = &msg {
        if target_delta.iter().chain(rot_delta).any(|x| !x.is_finite()) {
            return Err(ProtocolError::Malformed("non-finite delta".into()));
        }
    }
    Ok(msg)
}

#[derive(Serialize)]
struct Outgoing<'a, T: Serialize> {
    v: &'static str,
    #[serde(flatten)]
    msg: &'a T,
}

/// Frames a message with the version field.
pub fn encode<T: Serialize>(msg: &T) -> String {
    serde_json::to_string(&Outgoing { v: WIRE_VERSION, msg }).expect("wire messages serialize")
}

#[derive(Deserialize)]
struct Incoming<T> {
    v: String,
    #[serde(flatten)]
    msg: T,
}

/// Parses a server frame, checking the version. Used by clients and tests.
pub fn decode_server(text: &str) -> Result<ServerMsg, ProtocolError> {
    let f: Incoming<ServerMsg> = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    if f.v != WIRE_VERSION {
        return Err(ProtocolError::Version(f.v));
    }
    Ok(f.msg)
}
