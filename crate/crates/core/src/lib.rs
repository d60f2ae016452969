//! Document image enhancement with a transformer auto-encoder.
//!
//! A degraded page is cut into half-overlapping square windows, each window is
//! split into `p×p` patches that become transformer tokens, an encoder stack
//! and a decoder stack of pre-norm ViT blocks process the token sequence, and a
//! linear head projects every token back to the pixels of its patch. Window
//! outputs are averaged back into a full page.
//!
//! ```text
//! image ─ pad_to_grid ─ extract_windows ─┬─ tokenize ─ embed(+pos) ─ encoder ─ decoder ─ project ─ detokenize ─┬─ stitch ─ binarize
//!                                        └──────────────────────── (one pass per window) ───────────────────────┘
//! ```
//!
//! Everything runs on a small reverse-mode tape ([`numerics`]) so the same
//! forward code serves inference, training and gradient checking.

pub mod data_io;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod patching;
pub mod training;

pub use error::{Error, Result};
pub use metrics::{BinaryImage, MetricsReport};
pub use model::{ModelConfig, ModelWeights, Variant};
pub use patching::{ImageBuffer, PatchSequence, WindowGrid};
pub use training::{Checkpoint, TrainConfig};
