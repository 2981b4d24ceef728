//! Safety-filtered, energy-minimizing locomotion skill selection.
//!
//! The pipeline: procedural [`terrain`] and robot-frame heightfields, a
//! synthetic [`simkernel`] that rolls out parametric skills, [`datagen`] for
//! labeled viability and cost-of-transport datasets, from-scratch CNN
//! regressors in [`nnet`], the runtime [`selector`], and the evaluation
//! protocols in [`evalharness`].

pub mod config;
pub mod datagen;
pub mod evalharness;
pub mod nnet;
pub mod rng;
pub mod selector;
pub mod simkernel;
pub mod terrain;
