//! Self-supervised metric learning for event sequences.
//!
//! Trains fixed-length embeddings of per-person event streams by pulling
//! sub-sequences of the same person together and pushing sub-sequences of
//! different persons apart, then measures embedding quality with downstream
//! classification probes.

pub mod encoder;
pub mod evaluation;
pub mod ingest;
pub mod metric;
pub mod ndgrad;
pub mod pairing;
pub mod trainer;
