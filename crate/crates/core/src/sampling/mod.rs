//! Random number generation: bit generators, shaped draws, and the entropy
//! seeding protocols that decide where each draw's randomness comes from.

pub mod dist;
pub mod generator;
pub mod session;

pub use generator::{GeneratorFactory, GeneratorSpec, Mt19937, Pcg64, SeedSequence, WordSource};
pub use session::{
    compute_seed_report, EntropySession, EntrySource, OsEntropy, Phase, Purpose, SamplingPlan, SamplingShape, SamplingType,
    SeedReport, SeedUsage, SeedingType, Stream,
};
