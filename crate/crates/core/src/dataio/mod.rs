//! Dataset scanning, label remapping, class statistics, augmentation and
//! batch assembly.

mod batch;
mod labels;
mod scan;
mod stats;
pub mod synthetic;

pub use batch::{
    compute_norm_stats, make_batch, resize_bilinear, resize_image, resize_nearest, AuxMode, Batch, BatchOptions,
    InputMode, LabelTensor, NormStats, PlaneStats, Translator, DEFAULT_MAX_DEPTH_M,
};
pub use labels::{
    load_label_png, remap_labels, LabelMap, LabelSpace, LabelTable, CLASS_NAMES, IGNORE, NUM_CLASSES, PALETTE,
};
pub use scan::{
    augment_hflip, flip_depth, flip_sample, load_sample, scan_dataset, Layout, SampleDescriptor, ScanOptions,
    SceneSample,
};
pub use stats::{compute_class_stats, ClassStats};
