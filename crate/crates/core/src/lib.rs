//! Constructive universal approximation with a single softmax attention layer.
//!
//! A target `f: R^{d×n} → R^{d×n}` is sampled on a set of centers (a uniform
//! grid or an arbitrary sphere cover). The constructors synthesize the exact
//! weights of a sum-of-linear preprocessing layer followed by one attention head
//! whose output is the softmax-weighted average `Σ_j w_j(Z) f(ṽ_j)`, with
//! `w = softmax_j(R(v_j·Z̃ − ‖v_j‖²/2))`. The [`oracle`] module evaluates that
//! average directly, which is what every construction is checked against.

pub mod attention;
pub mod construct;
pub mod cover;
pub mod cross;
pub mod error;
pub mod linalg;
pub mod maxaffine;
pub mod oracle;
pub mod target;

pub use attention::{
    apply_sum_linear, attention_scores, cross_attention, self_attention, AttentionWeights,
    SumLinear,
};
pub use construct::{
    build_indicator_attention, build_reassign_attention, build_universal_self, choose_temperature,
    compute_et, evaluate_approximator, grid_centers, ApproxKind, ConstructedApproximator, GridSpec,
    IndicatorConstruction,
};
pub use cover::{build_small_region, count_trainable_params, trainable_param_count, SphereCover};
pub use cross::{build_universal_cross, evaluate_approximator_cross};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use maxaffine::{random_maxaffine, MaxAffine, PartitionReport};
pub use target::TargetFunction;

/// Largest grid (or center set) whose centers are enumerated in memory.
pub const MAX_CENTERS: usize = 1 << 20;

/// Largest score-matrix side (`2dG` for self, `2dG²` for cross) the matrix path builds.
pub const MAX_SCORE_DIM: usize = 4096;

/// Largest total number of stored entries across a sum-of-linear layer's terms.
pub const MAX_LINEAR_ENTRIES: usize = 1 << 24;
