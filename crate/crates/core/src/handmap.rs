//! Hand skeletons and the orthonormal end-effector frame built from them.
//!
//! The frame is anchored at the wrist. Its y axis points from the wrist to the
//! middle proximal bone, its z axis is normal to the plane spanned by that
//! direction and the index-to-middle proximal direction.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{pose_to_transform, HomTransform, KinematicsError};

pub const WRIST: &str = "wrist";
pub const INDEX_PROXIMAL: &str = "index_proximal";
pub const MIDDLE_PROXIMAL: &str = "middle_proximal";

const DEGENERATE_CROSS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HandError {
    #[error("missing landmark `{0}`")]
    MissingLandmark(String),
    #[error("landmark `{0}` has non-finite coordinates")]
    NonFinite(String),
    #[error("hand landmarks are degenerate (|x' x y'| = {0:.3e})")]
    DegenerateHand(f64),
    #[error("schema must contain wrist, index_proximal and middle_proximal exactly once")]
    InvalidSchema,
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Ordered landmark names. Feature vectors follow this order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandSchema {
    names: Vec<String>,
}

impl HandSchema {
    pub fn new(names: Vec<String>) -> Result<Self, HandError> {
        for key in [WRIST, INDEX_PROXIMAL, MIDDLE_PROXIMAL] {
            if names.iter().filter(|n| n.as_str() == key).count() != 1 {
                return Err(HandError::InvalidSchema);
            }
        }
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(HandError::InvalidSchema);
        }
        Ok(HandSchema { names })
    }

    /// 21-point hand: wrist plus four joints for each of the five fingers.
    pub fn default_21() -> Self {
        let mut names = vec![WRIST.to_string()];
        for finger in ["thumb", "index", "middle", "ring", "pinky"] {
            let segments: [&str; 4] = if finger == "thumb" {
                ["metacarpal", "proximal", "distal", "tip"]
            } else {
                ["proximal", "intermediate", "distal", "tip"]
            };
            for seg in segments {
                names.push(format!("{finger}_{seg}"));
            }
        }
        HandSchema { names }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

impl Default for HandSchema {
    fn default() -> Self {
        Self::default_21()
    }
}

/// Named landmark positions in meters; serialized as `{"name": [x, y, z], ...}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HandSkeleton {
    pub landmarks: BTreeMap<String, [f64; 3]>,
}

impl HandSkeleton {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, p: [f64; 3]) -> Self {
        self.landmarks.insert(name.to_string(), p);
        self
    }

    pub fn set(&mut self, name: &str, p: Vector3<f64>) {
        self.landmarks.insert(name.to_string(), [p.x, p.y, p.z]);
    }

    pub fn point(&self, name: &str) -> Result<Vector3<f64>, HandError> {
        let p = self
            .landmarks
            .get(name)
            .ok_or_else(|| HandError::MissingLandmark(name.to_string()))?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(HandError::NonFinite(name.to_string()));
        }
        Ok(Vector3::new(p[0], p[1], p[2]))
    }

    /// Applies `p -> f(p)` to every landmark.
    pub fn map_points(&self, f: impl Fn(Vector3<f64>) -> Vector3<f64>) -> HandSkeleton {
        let landmarks = self
            .landmarks
            .iter()
            .map(|(k, p)| {
                let q = f(Vector3::new(p[0], p[1], p[2]));
                (k.clone(), [q.x, q.y, q.z])
            })
            .collect();
        HandSkeleton { landmarks }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandFrame {
    pub origin: Vector3<f64>,
    pub x: Vector3<f64>,
    pub y: Vector3<f64>,
    pub z: Vector3<f64>,
}

impl HandFrame {
    pub fn identity() -> Self {
        HandFrame {
            origin: Vector3::zeros(),
            x: Vector3::x(),
            y: Vector3::y(),
            z: Vector3::z(),
        }
    }

    pub fn axes(&self) -> [Vector3<f64>; 3] {
        [self.x, self.y, self.z]
    }
}

pub fn hand_frame(skel: &HandSkeleton) -> Result<HandFrame, HandError> {
    let wrist = skel.point(WRIST)?;
    let index = skel.point(INDEX_PROXIMAL)?;
    let middle = skel.point(MIDDLE_PROXIMAL)?;
    let x_raw = middle - index;
    let y_raw = middle - wrist;
    let normal = x_raw.cross(&y_raw);
    let n = normal.norm();
    if n < DEGENERATE_CROSS {
        return Err(HandError::DegenerateHand(n));
    }
    let z = normal / n;
    let y = y_raw / y_raw.norm();
    let x = y.cross(&z);
    Ok(HandFrame { origin: wrist, x, y, z })
}

pub fn hand_to_target_pose(frame: &HandFrame) -> Result<HomTransform, HandError> {
    Ok(pose_to_transform(&frame.origin, &frame.axes())?)
}
