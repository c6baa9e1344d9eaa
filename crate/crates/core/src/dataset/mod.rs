//! Recording metadata, auxiliary label mapping, segmentation, the
//! train/test split and a synthetic stand-in corpus.

mod labels;
mod meta;
mod segment;
mod split;
mod synthetic;

pub use labels::{map_aux_label, AuxFactor, AuxLabels, Category};
pub use meta::{load_shipsear, parse_metadata_manifest, Recording, RecordingMeta};
pub use segment::{segment_recording, segment_window, window_starts, Segment, SegmentConfig};
pub use split::{build_split, CategorySplit, Placement, Side, Split, SplitManifest, TimeRange};
pub use synthetic::{generate_synthetic, FactorMode, SyntheticSpec};
