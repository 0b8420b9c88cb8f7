//! Online-to-nonconvex conversion: the generic reduction from discounted-regret
//! online learning to nonsmooth nonconvex optimization, its three iterate
//! rules, schedule-free SGD as a special case, and the stationarity
//! certificate used to score runs.

pub mod analysis;
pub mod conversion;
pub mod error;
pub mod online_learner;
pub mod problem;
pub mod rng;
pub mod schedule_free;
pub mod stationarity;
pub mod vector;

pub use conversion::{run_anchoring, run_conversion, ConversionTrace, IterateRule, StepRecord, Strategy};
pub use error::{Error, Result};
pub use online_learner::{OmdLearner, RegretLedger};
pub use problem::{Problem, StoGradOracle};
pub use rng::{StreamId, StreamRng, Streams};
pub use schedule_free::{derive_params, ParamSet, SfSgd, SfTrace};
pub use vector::Vector;
