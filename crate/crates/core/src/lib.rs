//! Block compressive sensing of images and video.
//!
//! A small Gaussian matrix senses each image block independently; recovery
//! works frame-wide. The pieces, bottom up:
//!
//! - [`image`], [`block`], [`sensing`]: grids, block tiling, seeded
//!   Gaussian operators with coherence diagnostics, and the matrix-free
//!   block-diagonal frame operator.
//! - [`gradient`]: finite-difference operators whose differences can cross
//!   block seams (per-block, multi-block, or frame-wide scopes).
//! - [`nlm`]: nonlocal means filtering, applied to the TV solver's
//!   gradient-constraint multiplier.
//! - [`tv`]: the augmented-Lagrangian isotropic TV solver with
//!   Barzilai-Borwein descent and filtered multiplier updates.
//! - [`patch`], [`refine`]: patch grouping, local and global sparsifying
//!   transforms with hard thresholding, and the refinement loop that
//!   couples them to the measurements.
//! - [`video`]: the distributed video pipeline with measurement-domain
//!   side-information selection and multi-hypothesis prediction.
//! - [`metrics`], [`experiment`], [`io`]: PSNR, the batch runner with its
//!   CSV outputs, and file formats.

pub mod block;
pub mod error;
pub mod experiment;
pub mod gradient;
pub mod image;
pub mod io;
pub mod metrics;
pub mod nlm;
pub mod patch;
pub mod refine;
pub mod sensing;
pub mod trace;
pub mod tv;
pub mod video;

pub use block::{assemble_blocks, partition_blocks, BlockGeometry};
pub use error::{Error, Result};
pub use experiment::{parse_config, run_experiment, ExperimentConfig, Method};
pub use gradient::{gradient, gradient_adjoint, isotropic_magnitude, GradientField, GradientScope};
pub use image::Image;
pub use metrics::psnr;
pub use nlm::{nlm_denoise, NlmParams};
pub use patch::{similarity_bound, synthesize_sparse, PatchConfig, TransformMode};
pub use refine::{solve_refined, RefineParams};
pub use sensing::{
    apply_frame, apply_frame_adjoint, make_gaussian_operator, mutual_coherence, sense,
    BlockSensingOperator, MeasurementSet,
};
pub use trace::ConvergenceTrace;
pub use tv::{solve_tv, MultiplierFilter, TvParams, TvSolution};
pub use video::{recover_nonkey, run_dcvs, DcvsConfig, MhParams};
