//! Dynamic-sampling adaptive SGD for L2-regularized logistic regression.
//!
//! The step size is derived from the curvature of the objective along the
//! search direction (a Hessian-vector product on the current batch), and the
//! batch grows whenever the sampled gradient or the sampled curvature fails a
//! variance test. Ada-ADAM and Ada-momentum reuse the same step machinery on
//! their own directions; fixed-rate SGD and SGD with norm / inner-product /
//! augmented inner-product tests are provided as comparators.

// negated comparisons are how inputs reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod harness;
pub mod model;
pub mod optimizers;
pub mod sampling;
pub mod stepsize;
pub(crate) mod vecops;

pub use dataset::{parse_libsvm, synthetic_logistic, write_libsvm, SparseDataset, SparseRow};
pub use error::{Error, Result};
pub use model::{ModelState, PerSampleGrads, ProblemConstants, Subset};
pub use optimizers::{run, OptimizerConfig, RhoMode, RunLog, RunStatus, Variant};
pub use sampling::{BatchController, PSchedule, TestReport};
pub use stepsize::{FallbackBuffer, StepRecord};
