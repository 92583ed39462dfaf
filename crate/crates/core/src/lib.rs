//! Sequential stepwise screening (SeSS) for high-dimensional multiresponse
//! linear models whose predictors and responses come in (possibly
//! overlapping) groups.
//!
//! The selection runs in three nested stages: pick the coefficient block with
//! the largest canonical-correlation trace against the current residuals,
//! pick the most correlated row inside that block, then greedily add entries
//! of that row while an extended BIC keeps decreasing. The selected support is
//! refit by ordinary least squares and thresholded.
//!
//! Besides the estimator the crate ships the simulation design, the recovery
//! metrics and the file formats used by the `sess` command-line tool.

pub mod criterion;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod groups;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod screening;
pub mod simgen;
pub mod trace;

pub use criterion::{derive_gamma, ebic, EbicParams, EbicTerms, FitTerm, ModelState};
pub use engine::{
    derive_threshold, predict, CoefficientEstimate, FittedModel, Sess, SessConfig, SessFit,
    ThresholdRule,
};
pub use error::{Error, Result};
pub use groups::{collapse_estimate, BlockCoordinate, ExpandedDataset, Group, GroupSpec};
pub use metrics::MetricsReport;
pub use numerics::{ColumnScaling, Matrix};
pub use screening::CcScore;
pub use simgen::{GroupScheme, SimConfig, SimDataset};
pub use trace::{SelectionTrace, TerminationReason, TraceEvent};
