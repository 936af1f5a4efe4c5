//! Synthetic dynamical-system sequences and their on-disk format.

mod blobs;
mod gray_scott;
mod sequence;
mod splits;
mod stds;

pub use blobs::{blob_tracks, simulate_moving_blobs, BlobSceneParams, BlobTrack};
pub use gray_scott::{simulate_gray_scott, GrayScott, GrayScottParams};
pub use sequence::FrameSequence;
pub use splits::{make_splits, DatasetSplit, SplitRanges};
pub use stds::{
    decode_sequences, encode_sequences, read_sequences, write_sequences, STDS_MAGIC, STDS_VERSION,
};
