//! A numerical laboratory for the geometry of classification losses over
//! free labeled point configurations.
//!
//! The crate evaluates the cross-entropy and supervised contrastive
//! losses exactly (the latter over every size-`b` index multiset),
//! computes their closed-form lower bounds, optimizes configurations by
//! projected gradient descent to verify that the bounds are attained at
//! sphere-inscribed regular simplex arrangements, and diagnoses how close
//! arbitrary embeddings are to that geometry.
//!
//! Modules:
//! - [`geometry`]: point configurations, projections, simplex
//!   construction/verification, cosine similarity.
//! - [`combinatorics`]: batch multiset enumeration, ranking, exact counts.
//! - [`losses`]: CE and SC losses with analytic gradients.
//! - [`bounds`]: the closed-form lower bounds and the weight-norm root.
//! - [`optimize`]: projected gradient descent on the ball and the sphere.
//! - [`diagnostics`]: equality conditions, geometry statistics, CSV
//!   ingestion, gap reports.

pub mod bounds;
pub mod combinatorics;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod optimize;

pub use bounds::{
    aux_s_ce, ce_bound_frobenius, ce_bound_l2, ce_bound_l2_with_tol, ce_bound_rw, sc_bound,
    solve_r_w, BoundReport, ScBoundReport, Tightness,
};
pub use combinatorics::{
    batch_rank, batch_unrank, brute_force_k_factor, census, count_batches_yl, enumerate_batches,
    k_factor, multichoose, Batch, BatchCensus, BatchCursor,
};
pub use diagnostics::{
    equality_report_ce, equality_report_sc, gap_report, geometry_stats, load_embeddings,
    save_embeddings, EqualityReport, GapReport, GeometryStats, LoadedEmbeddings, Normalization,
    StatSummary,
};
pub use error::{Error, Result};
pub use geometry::{
    build_simplex, class_means, collapsed_configuration, cosine_similarity, project_to_ball,
    project_to_sphere, verify_simplex, ConditionCheck, Constraint, LabelVector, PointConfig,
    SimplexReport, SimplexVertices,
};
pub use losses::{
    ce_gradients, ce_instance_loss, ce_loss, s_att, s_rep, sc_batch_loss, sc_class_batch_loss,
    sc_gradient_total, sc_total_loss, tangential_grad_norm, LossBreakdown, WeightMatrix,
    DEFAULT_ENUMERATION_BUDGET,
};
pub use optimize::{
    gaussian_sphere_init, gaussian_weights, optimize_ce, optimize_sc_full, optimize_sc_sgd,
    optimize_single_batch, OptimConfig, Schedule, SingleBatchResult, StopReason, Trajectory,
    TrajectoryPoint,
};
