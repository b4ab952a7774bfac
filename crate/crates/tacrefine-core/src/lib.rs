//! Tactile-only in-hand grasp refinement, end to end in simulation.
//!
//! The crate simulates fingertip tactile images from hand/object pose
//! ([`tacsim`]), samples pose-space datasets in a nominal and a perturbed
//! sensor domain ([`dataset`]), trains a goal-conditioned multi-branch
//! regression policy from scratch ([`net`], [`train`]), and runs and scores
//! the closed-loop refinement controller ([`refine`], [`eval`]).

pub mod dataset;
pub mod error;
pub mod eval;
pub mod io;
pub mod math;
pub mod net;
pub mod refine;
pub mod rng;
pub mod tacsim;
pub mod train;

pub use error::{Error, Result};
