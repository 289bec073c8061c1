//! Fixed-step simulation of a grid-forming battery inverter feeding
//! unbalanced loads through an output transformer.
//!
//! Two inner voltage-control schemes are provided: a stationary-frame (αβ)
//! cascade of proportional-resonant controllers, and the dual rotating-frame
//! (dq⁺/dq⁻) PI scheme with double-frequency notch filters. Both sit under
//! the same droop + secondary outer loop. The plant is a per-unit
//! phase-coordinate network with a configurable transformer zero-sequence
//! path and an optional grounding transformer.

pub mod control;
pub mod error;
pub mod experiments;
pub mod io;
pub mod plant;
pub mod sequence;

pub use error::{Error, Result};
