//! Patch-based high-resolution depth boosting, bimodal mixture decoding,
//! affine-invariant training losses and zero-shot depth metrics.

// NaN-rejecting range checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backends;
pub mod bimodal;
pub mod boost;
pub mod formats;
pub mod grid;
pub mod losses;
pub mod metrics;

pub use backends::{BackendError, BackendSpec, DepthBackend, DepthRequest};
pub use bimodal::{decode_field, BimodalField, BimodalParams};
pub use boost::{plan_tiles, simple_boost, solve_alignment, AffineAlignment, BoostConfig, TilePlan};
pub use grid::{DepthGrid, Image, Rect};
pub use losses::{loss_total, LossBreakdown, LossWeights};
pub use metrics::{evaluate_dataset, EvalConfig, MetricsReport};
