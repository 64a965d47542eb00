//! Corpus ingestion, image preprocessing, augmentation and checkpoints.

pub mod checkpoint;
pub mod corpus;
pub mod raster;
pub mod synthetic;
pub mod text;

pub use checkpoint::{ArrayRole, Checkpoint, NamedArray};
pub use corpus::{load_corpus, read_manifest, split_by_writer, Corpus, LineFlag, LineSample, Rejection, SplitConfig};
pub use raster::{load_gray, load_rgb, preprocess, write_png, write_pnm, SaltPepper};
pub use text::normalize_text;
