//! Dataset sources and checkpoint persistence.

mod checkpoint;
mod embeddings;
mod synthetic;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use embeddings::{load_embeddings, parse_embeddings, render_embeddings, write_embeddings};
pub use synthetic::{gen_synthetic, gen_synthetic_with_truth, SyntheticDraw, SyntheticSpec};
