//! Image files, paired datasets and the synthetic page generator.

mod dataset;
mod pnm;
mod synth;

pub use dataset::{
    build_window_dataset, window_pairs, DatasetManifest, Split, WindowPair, DEGRADED_DIR, GT_DIR,
};
pub use pnm::{decode_pnm, load_binary, load_image, save_image, ToPnm};
pub use synth::{synthesize_corpus, synthesize_pair, SynthSpec};
