//! Corpus ingestion, preprocessing, augmentation, splitting, and a synthetic
//! crack-image generator.

mod augment;
mod dataset;
mod io;
mod split;
mod synth;
mod tile;

pub use augment::{augment, augment_image, augment_seed, AugmentConfig, AugmentParams};
pub use dataset::{load_dataset, DatasetIndex, CLASS_DIRS};
pub use io::{load_image, save_grid, save_image, to_working_size, WORKING_SIZE};
pub use split::split_train_val;
pub use synth::{synth_crack_corpus, synth_crack_pair, write_corpus};
pub use tile::{tile_file, tile_mother_image, Tile, TILE_SIZE};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    NonCracked = 0,
    Cracked = 1,
}

impl Label {
    pub fn value(self) -> f32 {
        self as u8 as f32
    }

    /// Directory name under a dataset root.
    pub fn dir(self) -> &'static str {
        match self {
            Label::Cracked => "cracked",
            Label::NonCracked => "non-cracked",
        }
    }
}

/// A labelled `(H, W, 3)` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub label: Label,
    pub source_id: String,
}

/// Stacks sample images into an `(N, H, W, 3)` batch and an `(N, 1)` label
/// column.
pub fn batch_of(samples: &[&Sample]) -> crate::Result<(Tensor, Tensor)> {
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let x = Tensor::stack(&images)?;
    let y = Tensor::new([samples.len(), 1], samples.iter().map(|s| s.label.value()).collect())?;
    Ok((x, y))
}
