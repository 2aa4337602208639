//! Support vector data description (SVDD) with a Gaussian kernel.
//!
//! The crate trains one-class data descriptions by solving the SVDD dual,
//! picks the kernel bandwidth without labels (VAR, mean, peak and modified
//! mean criteria), combines per-class models into a multiclass classifier,
//! and runs repeated train/test experiments on labeled sample tables.

pub mod bandwidth;
pub mod dataprep;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod model;
pub mod multiclass;
pub mod solver;

pub use bandwidth::{BandwidthMethod, BandwidthOptions, BandwidthSelection, DeltaMode};
pub use dataprep::{ClassLabel, SampleTable, SplitPlan};
pub use error::{ErrorKind, Result, SvddError};
pub use experiment::{ExperimentConfig, ExperimentReport};
pub use kernel::{gaussian_kernel, KernelParams, Observation};
pub use model::{Position, SvddModel};
pub use multiclass::{FusionDecision, MulticlassModel};
pub use solver::{solve, train_svdd, SolverSettings, TrainingOutcome};
