//! Template matching with mutual nearest-neighbour similarity and
//! memory-filtered templates for single-object visual tracking.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod error;
pub mod features;
pub mod geometry;
mod kdtree;
pub mod linalg;
pub mod memory_filter;
pub mod quadrature;
pub mod scalar;
pub mod similarity;
pub mod theory;
pub mod tracker;

pub use error::{Result, Tm3Error};
pub use features::{
    decompose_patches, lab_raster, reassemble_patches, rgb_to_lab, ColorProvider, DeepProvider, FeatureProvider,
    PatchSet,
};
pub use geometry::{
    crop_normalize, geometry_distance, sample_candidates, vor, BoundingBox, Raster, SamplingParams, TargetState,
};
pub use linalg::Matrix;
pub use memory_filter::{
    build_weight_matrix, gradient_f, laplacian, lipschitz_constant, maybe_update_template_e, objective,
    prox_group_lasso, reconstruct_template_r, solve_selection, update_dictionary, MomentumSchedule,
    SelectionParams, SelectionProblem, SelectionSolution, TemplateDictionary, TemplatePair, TemplateUpdate,
};
pub use scalar::Scalar;
pub use similarity::{
    batch_score, bbs, mbp, mbs, normalized_mbs, reciprocal_rank_pairs, BatchScore, NeighborSearch, RankPair,
    RankPairList, SimilarityConfig,
};
pub use theory::{
    mc_estimate, quadrature_expectation, surrogate_mbp, verify_lemma3, verify_theorem1, DistributionSpec,
    TheoryReport,
};
pub use tracker::{
    builtin_proposals, cue_confidences, fast_select_e, fast_select_r, fuse, track_sequence, CueOrigin,
    EdgeGridProposals, FlowMode, FrameResult, ProposalProvider, Tracker, TrackerConfig,
};

pub type BoxF32 = BoundingBox<f32>;
pub type BoxF64 = BoundingBox<f64>;
pub type PatchSetF32 = PatchSet<f32>;
pub type PatchSetF64 = PatchSet<f64>;
pub type MatrixF64 = Matrix<f64>;
pub type SelectionProblemF64 = SelectionProblem<f64>;
/// Tracker in single precision, the fast default for video.
pub type TrackerF32 = Tracker<f32>;
pub type TrackerF64 = Tracker<f64>;
