//! Data ingestion and stream construction.
//!
//! MNIST IDX loading, Split-MNIST task streams, the synthetic crowded-manifold
//! generator and holdout splitting. Streams carry a task tag for scoring;
//! the pipeline only ever receives [`LabeledView`]s, which have no tag.

mod holdout;
mod idx;
mod manifold;
mod split;
mod stream;

pub use holdout::{holdout_split, MIN_SPLIT_SAMPLES};
pub use idx::{load_idx, load_mnist, parse_idx, IdxData, Mnist, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use manifold::{
    gen_crowded_manifold, read_mbds, write_mbds, CrowdedManifold, ManifoldConfig, ManifoldTask,
    MBDS_MAGIC,
};
pub use split::{split_mnist_streams, task_subset, SplitMnist};
pub use stream::{is_block_sequential, LabeledSet, LabeledView, StreamBatch, TaskStream};
