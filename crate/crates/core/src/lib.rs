//! Desk-scale federated continual learning for vision-based obstacle
//! avoidance.
//!
//! The crate covers the full loop end to end, small enough to run on one
//! machine yet structured like the real deployment:
//!
//! * [`data`] — a procedural scene generator that renders 3×32×32
//!   blocked/free camera frames for six desk environments plus the two
//!   robot realms, with a controlled sim-to-real appearance shift, and a
//!   binary dataset format (`.feds`) with a JSON manifest.
//! * [`nn`] / [`models`] — a dependency-light CNN engine (generic over
//!   f32/f64) and the two registered architectures, addressed by a digest
//!   of their canonical descriptor.
//! * [`federation`] — sample-weighted model averaging and the round state
//!   machine, with bitwise-deterministic aggregation.
//! * [`transport`] — the length-prefixed, CRC-protected frame codec, a
//!   deterministic lossy-network simulator with a retrying session driver,
//!   and a blocking TCP carrier for real sockets.
//! * [`continual`] — a grid-world robot that auto-labels camera frames from
//!   range scans and fine-tunes the deployed model from experience buffers.
//! * [`eval`] — metrics (accuracy/ROC/AUC) and the experiment drivers:
//!   cross-environment matrix, sim-to-real study, continual fusion arms.
//!
//! Everything is deterministic given a seed: datasets, initialization,
//! batch order, network faults, and world layouts all derive from labeled
//! seed streams (see [`rng`]).

pub mod continual;
pub mod data;
pub mod error;
pub mod eval;
pub mod federation;
pub mod models;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod transport;

pub use error::{Error, Result};
