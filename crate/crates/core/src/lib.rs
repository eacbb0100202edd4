//! Demonstration collection and imitation-learning control for a simulated
//! six-joint arm installing tiles.

pub mod gesture;
pub mod handmap;
pub mod kinematics;
pub mod netcore;
pub mod tilesim;
pub mod trainer;
pub mod bc;
pub mod demos;
pub mod gail;
pub mod ppo;
