//! Image files, dataset manifests and the synthetic degradation corpus.

mod image_io;
mod manifest;
mod synth;

pub use image_io::{encode_image, load_image, save_image};
pub use manifest::{
    build_manifest, synthetic_sources, DatasetEntry, LoadedDataset, Manifest, Sample, SampleRecord, SplitCounts,
    MANIFEST_VERSION,
};
pub use synth::{
    lowlight_gain, lowlight_gamma, lowlight_noise_std, synthesize, texture, DegradationKind, BLUR_MAX_SIGMA,
};
