//! Datasets, clip windows, the labeled/unlabeled pool and the synthetic
//! generator.

mod clips;
mod dataset;
mod pool;
pub mod synthetic;

pub use clips::{make_clips, Clip, ClipCatalog, ClipId};
pub use dataset::{
    load_dataset, write_dataset, Dataset, FrameRecord, Video, ANNOTATION_HEADER, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use pool::{init_pool, PoolState, SelectionRecord};
pub use synthetic::{gen_synthetic, generate, SyntheticSpec};
