//! Entropy seeding protocols and seed accounting.
//!
//! An [`EntropySession`] lives for one fit or apply call. Every sampling
//! operation obtains a [`Stream`] from it, and the session decides how that
//! stream is seeded according to the configured [`SamplingType`]:
//!
//! * `default`: every stream mixes a freshly shuffled copy of the whole
//!   entropy seed list as supplemental material.
//! * `sampling_seed`: every stream consumes one seed from the bank.
//! * `transform_seed`: every noise transform consumes one seed, shared by
//!   all of that transform's streams.
//! * `bulk_seeds`: every sampled entry consumes one seed and is drawn from a
//!   generator seeded by that seed alone.
//!
//! Under `supplemental_seeds` the operating-system entropy is mixed in as
//! well; under `primary_seeds` the external seeds are the only source, so
//! the output is a pure function of the inputs and the seed list.

use std::collections::{HashMap, VecDeque};

use log::warn;
use serde::{Deserialize, Serialize};

use super::dist;
use super::generator::{GeneratorSpec, Pcg64, SeedSequence, WordSource};
use crate::error::{Error, Result};

/// Largest suggested external seed (int32 range).
pub const MAX_SEED: u32 = (1 << 31) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingType {
    #[default]
    Default,
    BulkSeeds,
    SamplingSeed,
    TransformSeed,
}

impl SamplingType {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "default" => SamplingType::Default,
            "bulk_seeds" => SamplingType::BulkSeeds,
            "sampling_seed" => SamplingType::SamplingSeed,
            "transform_seed" => SamplingType::TransformSeed,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedingType {
    SupplementalSeeds,
    PrimarySeeds,
}

impl SeedingType {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "supplemental_seeds" => SeedingType::SupplementalSeeds,
            "primary_seeds" => SeedingType::PrimarySeeds,
            _ => return None,
        })
    }
}

/// Where operating-system entropy comes from. `Fixed` makes supplemental
/// seeding reproducible for tests.
#[derive(Debug, Clone, Default)]
pub enum OsEntropy {
    #[default]
    System,
    Fixed(Vec<u32>),
}

impl OsEntropy {
    fn words(&self) -> Vec<u32> {
        match self {
            OsEntropy::Fixed(w) => w.clone(),
            OsEntropy::System => {
                let mut buf = [0u8; 16];
                if let Err(e) = getrandom::getrandom(&mut buf) {
                    warn!("operating system entropy unavailable ({e}); falling back to clock");
                    let t = std::time::SystemTime::now()
                        .duration_since(std::time::UNIX_EPOCH)
                        .map(|d| d.as_nanos())
                        .unwrap_or_default();
                    buf = t.to_le_bytes();
                }
                buf.chunks_exact(4)
                    .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect()
            }
        }
    }
}

/// Per-call sampling configuration. Not persisted in a fitted basis: each
/// fit or apply call brings its own.
#[derive(Debug, Clone)]
pub struct SamplingPlan {
    pub sampling_type: SamplingType,
    /// `None` picks the type's default: primary for bulk seeds, else
    /// supplemental.
    pub seeding_type: Option<SeedingType>,
    pub entropy_seeds: Vec<u32>,
    pub stochastic_count_safety_factor: f64,
    pub sampling_generator: GeneratorSpec,
    /// `None` turns replacement seeds off: running out is an error.
    pub extra_seed_generator: Option<GeneratorSpec>,
    pub os_entropy: OsEntropy,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan {
            sampling_type: SamplingType::Default,
            seeding_type: None,
            entropy_seeds: Vec::new(),
            stochastic_count_safety_factor: 0.15,
            sampling_generator: GeneratorSpec::Pcg64,
            extra_seed_generator: Some(GeneratorSpec::Pcg64),
            os_entropy: OsEntropy::System,
        }
    }
}

impl SamplingPlan {
    /// Fully reproducible plan: the given seeds are the only entropy.
    pub fn primary(sampling_type: SamplingType, seeds: Vec<u32>) -> Self {
        SamplingPlan {
            sampling_type,
            seeding_type: Some(SeedingType::PrimarySeeds),
            entropy_seeds: seeds,
            ..SamplingPlan::default()
        }
    }

    pub fn effective_seeding(&self) -> SeedingType {
        self.seeding_type.unwrap_or(match self.sampling_type {
            SamplingType::BulkSeeds => SeedingType::PrimarySeeds,
            _ => SeedingType::SupplementalSeeds,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let sf = self.stochastic_count_safety_factor;
        if !(0.0..=1.0).contains(&sf) {
            return Err(Error::Config(format!(
                "stochastic_count_safety_factor must be in [0, 1], got {sf}"
            )));
        }
        if let Some(s) = self.entropy_seeds.iter().find(|&&s| s > MAX_SEED) {
            warn!("entropy seed {s} exceeds the suggested range 0..=2^31-1");
        }
        Ok(())
    }
}

/// Counters of what a session actually consumed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedUsage {
    pub sampling_ops: u64,
    pub noise_transforms: u64,
    pub bank_seeds_consumed: u64,
    pub extra_seeds_drawn: u64,
}

/// Identifies one sampling operation: (tree category, column, op label).
#[derive(Debug, Clone, Copy)]
pub struct Purpose<'a> {
    pub category: &'a str,
    pub column: &'a str,
    pub op: &'a str,
}

impl Purpose<'_> {
    fn words(&self, phase: Phase, pass: u32) -> [u32; 5] {
        [
            fnv1a(self.category),
            fnv1a(self.column),
            fnv1a(self.op),
            match phase {
                Phase::Train => 0,
                Phase::Test => 1,
            },
            pass,
        ]
    }
}

/// 32-bit FNV-1a, used to turn purpose labels into spawn-key words.
pub fn fnv1a(s: &str) -> u32 {
    s.bytes().fold(0x811c_9dc5u32, |h, b| (h ^ u32::from(b)).wrapping_mul(0x0100_0193))
}

pub struct EntropySession {
    plan: SamplingPlan,
    seeding: SeedingType,
    os_words: Vec<u32>,
    bank: VecDeque<u32>,
    shuffler: Pcg64,
    extra: Option<Box<dyn WordSource + Send>>,
    transform_seed: Option<u32>,
    transform_seeds: HashMap<String, u32>,
    pass: u32,
    usage: SeedUsage,
}

impl std::fmt::Debug for EntropySession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EntropySession")
            .field("sampling_type", &self.plan.sampling_type)
            .field("seeding", &self.seeding)
            .field("bank_remaining", &self.bank.len())
            .field("usage", &self.usage)
            .finish()
    }
}

impl EntropySession {
    pub fn new(plan: &SamplingPlan) -> Result<Self> {
        plan.validate()?;
        let seeding = plan.effective_seeding();
        let system_words = plan.os_entropy.words();
        let os_words = match seeding {
            SeedingType::SupplementalSeeds => system_words.clone(),
            SeedingType::PrimarySeeds => Vec::new(),
        };
        let mut root_entropy = os_words.clone();
        root_entropy.extend_from_slice(&plan.entropy_seeds);
        let shuffler = Pcg64::from_seed_sequence(&SeedSequence::new(&root_entropy, &[fnv1a("shuffle")]));
        // Replacement seeds come from a generator on the system entropy, as
        // the external list is by definition used up when it is needed.
        let extra = plan.extra_seed_generator.as_ref().map(|g| {
            let mut entropy = system_words;
            entropy.extend_from_slice(&plan.entropy_seeds);
            g.build(&SeedSequence::new(&entropy, &[fnv1a("extra_seed_generator")]))
        });
        Ok(EntropySession {
            plan: plan.clone(),
            seeding,
            os_words,
            bank: plan.entropy_seeds.iter().copied().collect(),
            shuffler,
            extra,
            transform_seed: None,
            transform_seeds: HashMap::new(),
            pass: 0,
            usage: SeedUsage::default(),
        })
    }

    pub fn plan(&self) -> &SamplingPlan {
        &self.plan
    }

    pub fn usage(&self) -> &SeedUsage {
        &self.usage
    }

    pub fn seeds_remaining(&self) -> usize {
        self.bank.len()
    }

    /// Distinguishes repeated preparations (augmentation duplicates) so
    /// that non-bank protocols still draw fresh noise for each.
    pub fn set_pass(&mut self, pass: u32) {
        self.pass = pass;
    }

    fn take_seed(&mut self) -> Result<u32> {
        if let Some(s) = self.bank.pop_front() {
            self.usage.bank_seeds_consumed += 1;
            return Ok(s);
        }
        match self.extra.as_mut() {
            Some(gen) => {
                self.usage.extra_seeds_drawn += 1;
                Ok(dist::below(gen, u64::from(MAX_SEED) + 1) as u32)
            }
            None => Err(Error::SeedExhausted {
                consumed: self.usage.bank_seeds_consumed as usize,
            }),
        }
    }

    /// Marks the start of one noise transform's sampling. Under
    /// `transform_seed` the first call for a `key` consumes a seed; later
    /// calls in the same session reuse it.
    pub fn begin_transform(&mut self, key: &str) -> Result<()> {
        self.usage.noise_transforms += 1;
        self.transform_seed = match self.plan.sampling_type {
            SamplingType::TransformSeed => Some(match self.transform_seeds.get(key) {
                Some(&s) => s,
                None => {
                    let s = self.take_seed()?;
                    self.transform_seeds.insert(key.to_string(), s);
                    s
                }
            }),
            _ => None,
        };
        Ok(())
    }

    /// Opens the stream for one sampling operation.
    pub fn stream(&mut self, purpose: Purpose<'_>, phase: Phase) -> Result<Stream<'_>> {
        self.usage.sampling_ops += 1;
        let spawn = purpose.words(phase, self.pass);
        let supplemental: Vec<u32> = match self.plan.sampling_type {
            SamplingType::BulkSeeds => {
                return Ok(Stream {
                    session: self,
                    rng: None,
                });
            }
            SamplingType::Default => {
                let mut seeds = self.plan.entropy_seeds.clone();
                dist::shuffle(&mut self.shuffler, &mut seeds);
                seeds
            }
            SamplingType::SamplingSeed => vec![self.take_seed()?],
            SamplingType::TransformSeed => match self.transform_seed {
                Some(s) => vec![s],
                None => return Err(Error::Internal("stream opened outside a noise transform".into())),
            },
        };
        let mut entropy = self.os_words.clone();
        entropy.extend_from_slice(&supplemental);
        let rng = self
            .plan
            .sampling_generator
            .build(&SeedSequence::new(&entropy, &spawn));
        Ok(Stream {
            session: self,
            rng: Some(rng),
        })
    }

    /// A stream for non-noise randomness (shuffles, splits). It never draws
    /// from the seed bank and is not counted as a sampling operation.
    pub fn aux_rng(&self, label: &str) -> Pcg64 {
        let mut entropy = self.os_words.clone();
        entropy.extend_from_slice(&self.plan.entropy_seeds);
        Pcg64::from_seed_sequence(&SeedSequence::new(&entropy, &[fnv1a(label), self.pass]))
    }
}

/// Something that hands out a word source for each sampled entry.
pub trait EntrySource {
    fn entry(&mut self) -> Result<&mut dyn WordSource>;
}

/// A plain generator serves every entry from its own progression.
impl<W: WordSource> EntrySource for W {
    fn entry(&mut self) -> Result<&mut dyn WordSource> {
        Ok(self)
    }
}

impl EntrySource for Stream<'_> {
    fn entry(&mut self) -> Result<&mut dyn WordSource> {
        Ok(Stream::entry(self)?)
    }
}

/// Word source for one sampling operation. Call [`Stream::entry`] once per
/// sampled entry; under bulk seeding each call consumes one bank seed.
pub struct Stream<'a> {
    session: &'a mut EntropySession,
    rng: Option<Box<dyn WordSource + Send>>,
}

impl Stream<'_> {
    pub fn entry(&mut self) -> Result<&mut (dyn WordSource + Send)> {
        if self.session.plan.sampling_type == SamplingType::BulkSeeds {
            let seed = self.session.take_seed()?;
            let mut entropy = self.session.os_words.clone();
            entropy.push(seed);
            self.rng = Some(
                self.session
                    .plan
                    .sampling_generator
                    .build(&SeedSequence::new(&entropy, &[])),
            );
        }
        Ok(self
            .rng
            .as_deref_mut()
            .expect("non-bulk streams are seeded on creation"))
    }
}

/// Sampling footprint of one noise transform, used for seed budgeting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingShape {
    pub fires_train: bool,
    pub fires_test: bool,
    /// Upper bound on the per-row activation probability in each phase.
    pub train_rate: f64,
    pub test_rate: f64,
    /// Whether a second operation samples one value per activation.
    pub per_activation_op: bool,
    /// Single-entry operations run once when fitting (mean calibration,
    /// parameter randomization).
    pub fit_ops: u64,
    /// Single-entry operations run on every firing apply call after the
    /// fit (parameter re-draws).
    pub apply_param_ops: u64,
}

/// Seed budget for each protocol, with the row counts it was derived for.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedReport {
    pub bulk_seeds_total_train: u64,
    pub bulk_seeds_total_test: u64,
    pub rowcount_basis_train: u64,
    pub rowcount_basis_test: u64,
    pub sampling_seed_total_train: u64,
    pub sampling_seed_total_test: u64,
    pub transform_seed_total: u64,
    /// Mean-calibration and parameter-randomization draws are included in
    /// the train totals as single-entry operations.
    pub fit_operations_included: bool,
}

/// Budget for one phase of one apply over `rows` rows.
fn phase_budget(shape: &SamplingShape, phase: Phase, rows: u64, safety: f64, fitting: bool) -> (u64, u64) {
    let (fires, rate) = match phase {
        Phase::Train => (shape.fires_train, shape.train_rate),
        Phase::Test => (shape.fires_test, shape.test_rate),
    };
    let mut bulk = 0u64;
    let mut ops = 0u64;
    if fitting {
        bulk += shape.fit_ops;
        ops += shape.fit_ops;
    }
    if fires {
        // a fit reuses its own parameter draws
        if !fitting {
            bulk += shape.apply_param_ops;
            ops += shape.apply_param_ops;
        }
        // mask: one entry per row
        bulk += rows;
        ops += 1;
        if shape.per_activation_op {
            let expected = rows as f64 * rate;
            bulk += (expected * (1.0 + safety)).ceil() as u64;
            ops += 1;
        }
    }
    (bulk, ops)
}

/// Seed totals for a plan of noise transforms. Train totals assume a fit
/// call (fit-time operations included); test totals assume an apply call.
pub fn compute_seed_report(
    shapes: &[SamplingShape],
    rowcount_train: u64,
    rowcount_test: u64,
    safety_factor: f64,
) -> SeedReport {
    let mut report = SeedReport {
        rowcount_basis_train: rowcount_train,
        rowcount_basis_test: rowcount_test,
        transform_seed_total: shapes.len() as u64,
        fit_operations_included: true,
        ..SeedReport::default()
    };
    for shape in shapes {
        let (b, o) = phase_budget(shape, Phase::Train, rowcount_train, safety_factor, true);
        report.bulk_seeds_total_train += b;
        report.sampling_seed_total_train += o;
        let (b, o) = phase_budget(shape, Phase::Test, rowcount_test, safety_factor, false);
        report.bulk_seeds_total_test += b;
        report.sampling_seed_total_test += o;
    }
    report
}

/// Budget for an apply call without fitting, e.g. a later transform.
pub fn apply_budget(shapes: &[SamplingShape], phase: Phase, rows: u64, safety_factor: f64) -> (u64, u64) {
    shapes.iter().fold((0, 0), |(b, o), s| {
        let (b2, o2) = phase_budget(s, phase, rows, safety_factor, false);
        (b + b2, o + o2)
    })
}

/// Proportionally rescaled budgets for new row counts. A zero test row
/// count omits the test budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RescaledBudget {
    pub bulk_seeds_train: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bulk_seeds_test: Option<u64>,
    pub sampling_seed_train: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampling_seed_test: Option<u64>,
    pub transform_seed: u64,
}

fn rescale(total: u64, rows: u64, basis: u64) -> u64 {
    if basis == 0 {
        return total;
    }
    let scaled = u128::from(total) * u128::from(rows);
    scaled.div_ceil(u128::from(basis)) as u64
}

impl SeedReport {
    pub fn rescaled(&self, rows_train: u64, rows_test: u64) -> RescaledBudget {
        let test = (rows_test > 0).then_some(rows_test);
        RescaledBudget {
            bulk_seeds_train: rescale(self.bulk_seeds_total_train, rows_train, self.rowcount_basis_train),
            bulk_seeds_test: test.map(|r| rescale(self.bulk_seeds_total_test, r, self.rowcount_basis_test)),
            sampling_seed_train: self.sampling_seed_total_train,
            sampling_seed_test: test.map(|_| self.sampling_seed_total_test),
            transform_seed: self.transform_seed_total,
        }
    }
}
