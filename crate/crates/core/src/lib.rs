//! Emulator of an infrared environment-scanner module for mobile robots.
//!
//! The crate covers the whole signal chain: a 2D world with obstacle
//! segments, Sharp IR sensor transfer curves and ADC quantization, an MLP
//! that turns ADC codes into distances, stepper and gear kinematics for the
//! rotating sensor head, occupancy-map construction and fusion, the host
//! command protocol, and the module firmware that ties them together.

pub mod ann;
pub mod firmware;
pub mod mapping;
pub mod motion;
pub mod protocol;
pub mod sensor;
pub mod world;

pub use firmware::{Firmware, FirmwareConfig, Phase};
pub use protocol::{Command, Response};
