//! Loading, cropping, resizing, sharpening, augmentation and manifests.

mod manifest;
mod raw;
mod sample;
mod sharpen;

pub use manifest::{scan_dataset, DatasetManifest, ScannedDataset, Split, SplitCounts};
pub use raw::{load_and_crop, resize_to_canvas, CropBox, Domain, RawImage};
pub use sample::{
    augment, denormalize, denormalize_value, normalize, normalize_intensity, AugmentParams,
    Augmentation, ImageSample,
};
pub use sharpen::{convolve3x3, high_boost_response, sharpen_high_boost, SharpenConfig};
