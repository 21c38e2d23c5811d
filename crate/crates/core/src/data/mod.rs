//! Desk-scale unpaired training corpus: procedural or PNG sources, a
//! heteroscedastic noise model, disjoint clean/noisy/validation splits and a
//! deterministic batch stream.

mod batches;
mod corpus;
mod image;
mod noise;
mod procedural;

pub use batches::{iterate_batches, BatchStream, UnpairedBatch};
pub use corpus::{
    build_corpus, split_sources, validation_pairs, validation_pairs_from, CorpusEntry,
    CorpusManifest, CorpusSpec, SourceSpec, SourceSplit, UnpairedCorpus, ValidationPair,
    MIN_TRAIN_SOURCES,
};
pub use image::Image;
pub use noise::NoiseModelParams;
pub use procedural::procedural_source;
