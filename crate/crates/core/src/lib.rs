//! Simulation and analysis toolkit for a spin-oscillator matter-wave
//! gravimeter: an NV electron spin coupled through a magnetic field gradient
//! to the centre-of-mass motion of a nano-mechanical resonator.

pub mod classical;
pub mod dd;
pub mod error;
pub mod model;
pub mod noise;
pub mod quantum;

pub use error::{Error, Result};
pub use model::SystemParams;
