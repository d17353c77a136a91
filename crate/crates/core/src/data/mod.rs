//! Dataset plumbing: manifests of events, event-aware splitting, image IO,
//! augmentation, batching and a synthetic photo-stream generator.

mod augment;
mod batch;
mod image;
mod manifest;
mod split;
mod synth;

pub use augment::{augment, center_crop, AugmentationPolicy};
pub use batch::{Batch, BatchIterator, Batcher};
pub use image::{load_image, save_image};
pub use manifest::{ClassSplitCounts, DatasetManifest, EventRecord, Split};
pub use split::{event_split, greedy_assign, SplitRatios};
pub use synth::{generate_synthetic_dataset, SynthConfig, FOOD_PLACE_CLASSES};
