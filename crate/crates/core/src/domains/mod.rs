//! Deterministic multi-domain benchmark synthesis, splits and dataset files.

mod benchmark;
mod blobs;
mod dataset;
mod glyphs;
mod io;
mod moons;
mod split;

pub use benchmark::{BenchmarkSpec, Generator, Scenario};
pub use blobs::make_blobs_domains;
pub use dataset::DomainDataset;
pub use glyphs::{base_glyphs, make_glyphs_corrupted, Corruption, GLYPH_CLASSES, MAX_SEVERITY, PIXELS, SIDE};
pub use io::{decode_dataset, encode_dataset, load_dataset, save_dataset};
pub use moons::{base_moons, make_moons_domains, rotate};
pub use split::split;
