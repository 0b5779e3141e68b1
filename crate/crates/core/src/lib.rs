//! Self-triggered distributed model predictive control for disturbed
//! nonlinear multi-agent systems that coordinate through a single scalar
//! synchronization parameter per agent.
//!
//! The crate is organised bottom-up:
//!
//! * [`dynamics`]: error-subsystem models, the synchronization law and
//!   reference paths.
//! * [`ingredients`]: terminal controller/weight synthesis and validation.
//! * [`tightening`]: disturbance-propagation sets and box erosion.
//! * [`ocp`]: the finite-horizon optimal control problem and its SQP solver.
//! * [`trigger`]: the self-triggered open-loop phase selection.
//! * [`coordination`]: neighbor broadcast buffers and assumed sequences.
//! * [`sim`]: the deterministic asynchronous closed-loop simulator.
//! * [`config`], [`verify`], [`trace`], [`plotdata`]: experiment I/O.

pub mod config;
pub mod coordination;
pub mod dynamics;
pub mod error;
pub mod ingredients;
pub mod linalg;
pub mod ocp;
pub mod plotdata;
pub mod sampling;
pub mod sim;
pub mod tightening;
pub mod trace;
pub mod trigger;
pub mod verify;

pub use error::{Error, Result};
