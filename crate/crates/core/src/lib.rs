//! Event-stream scene text toolkit.
//!
//! The processing pipeline: raw event streams ([`event`]) are stacked
//! into polarity-colored frames ([`stack`]); streams can also be
//! synthesized from intensity sequences with a contrast-threshold model
//! ([`sim`]). Features are enhanced against a pattern memory
//! ([`memory`]), recognized text is repaired with confusable-glyph
//! correction ([`glyph`]), and outputs are scored with BLEU and word
//! accuracy ([`metrics`]). [`pipeline`] ties the stages together for
//! the CLI.
//!
//! Numeric kernels are generic over the scalar type through
//! `num_traits::Float`; `f64` aliases are exported at the crate root.

pub mod event;
pub mod font;
pub mod glyph;
pub mod memory;
pub mod metrics;
pub mod pipeline;
pub mod ppm;
pub mod sim;
pub mod stack;

/// Default scalar type for CLI-facing work.
pub type Real = f64;

pub type MemoryBank = memory::MemoryBank<Real>;
pub type FeatureBatch = memory::FeatureBatch<Real>;
pub type RetrievalResult = memory::RetrievalResult<Real>;
pub type MemoryBankF32 = memory::MemoryBank<f32>;
pub type FeatureBatchF32 = memory::FeatureBatch<f32>;
pub type IntensitySequence = sim::IntensitySequence<Real>;
pub type SimulatorConfig = sim::SimulatorConfig<Real>;
pub type IntensitySequenceF32 = sim::IntensitySequence<f32>;
pub type SimulatorConfigF32 = sim::SimulatorConfig<f32>;
