//! Desk-scale training stack for population-coded spiking policies:
//! a spiking actor network trained with TD3 on analytic control
//! environments, data-parallel training over a small collective layer,
//! software-emulated mixed precision, and energy-efficiency reporting
//! (Greenup/Powerup/Speedup and carbon equivalences).

pub mod amp;
pub mod artifact;
pub mod cli;
pub mod config;
pub mod dist;
pub mod envs;
pub mod error;
pub mod green;
pub mod snn;
pub mod td3;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
