//! Non-learned machinery for retrieval-guided semantic image synthesis.
//!
//! * [`segdb`] cuts a training set into category-indexed segments with shape signatures.
//! * [`retrieval`] finds the best same-category segment for a query mask.
//! * [`compositor`] pastes retrieved segments into a guidance image.
//! * [`distortion`] degrades ground-truth segments in colour, shape and resolution.
//! * [`modnorm`] is a numeric reference for the modulation and segmentation-loss formulas.
//! * [`pipeline`] runs the above over a dataset and writes file artifacts.
//! * [`synthetic`] generates procedural toy datasets and databases; [`selfcheck`] runs
//!   every module's identities on them.

pub mod compositor;
pub mod dataset;
pub mod distortion;
pub mod error;
pub mod modnorm;
pub mod pipeline;
pub mod raster;
pub mod retrieval;
pub mod rng;
pub mod segdb;
pub mod selfcheck;
pub mod semantic;
pub mod signature;
pub mod synthetic;

pub use compositor::{compose_guidance, ComposeOptions, ExcludeBy, GuidanceImage, Mode};
pub use dataset::{load_dataset, DatasetConfig, DatasetEntry, LoadedEntry};
pub use error::{Error, Result};
pub use raster::{resize_bilinear, resize_nearest, Bbox, BinaryMask, RgbImage};
pub use retrieval::{
    geometric_score, retrieve_best, retrieve_best_bruteforce, scale_consistency, shape_nonsimilarity, Exclusion,
    GeometricScore, RetrievalQuery, RetrievalResult,
};
pub use rng::Rng;
pub use segdb::{build_database, load_database, save_database, SegmentDatabase, SegmentRecord};
pub use semantic::{ClassKind, SemanticMap};
pub use signature::Signature;
