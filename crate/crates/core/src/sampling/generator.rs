//! Bit generators and seed-sequence mixing.
//!
//! [`SeedSequence`] reproduces numpy's `SeedSequence` hash mixing word for
//! word, and [`Pcg64`] / [`Mt19937`] reproduce numpy's `PCG64` and `MT19937`
//! seeding from it, so a stream seeded here matches the raw output of the
//! corresponding numpy bit generator.

use std::fmt;
use std::sync::Arc;

/// A source of uniformly distributed 64-bit words. Every shaped sampler in
/// this crate is built on this one method, so an externally supplied source
/// (hardware, remote service, replayed log) drops in without other changes.
pub trait WordSource {
    fn next_u64(&mut self) -> u64;
}

impl<W: WordSource + ?Sized> WordSource for Box<W> {
    fn next_u64(&mut self) -> u64 {
        (**self).next_u64()
    }
}

/// Builds an external [`WordSource`] for one sampling stream.
///
/// Implementations backed by true entropy may ignore `seed`.
pub trait GeneratorFactory: Send + Sync {
    fn build(&self, seed: &SeedSequence) -> Box<dyn WordSource + Send>;
}

/// Which bit generator backs a stream.
#[derive(Clone, Default)]
pub enum GeneratorSpec {
    #[default]
    Pcg64,
    Mersenne,
    External(Arc<dyn GeneratorFactory>),
}

impl fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorSpec::Pcg64 => f.write_str("Pcg64"),
            GeneratorSpec::Mersenne => f.write_str("Mersenne"),
            GeneratorSpec::External(_) => f.write_str("External"),
        }
    }
}

impl GeneratorSpec {
    pub fn build(&self, seed: &SeedSequence) -> Box<dyn WordSource + Send> {
        match self {
            GeneratorSpec::Pcg64 => Box::new(Pcg64::from_seed_sequence(seed)),
            GeneratorSpec::Mersenne => Box::new(Mt19937::from_seed_sequence(seed)),
            GeneratorSpec::External(factory) => factory.build(seed),
        }
    }

    /// Parses the sampling-dictionary spellings. `custom` resolves to the
    /// default generator when no external one is registered.
    pub fn parse(name: &str) -> Option<GeneratorSpec> {
        match name {
            "PCG64" | "pcg64" | "custom" | "default" => Some(GeneratorSpec::Pcg64),
            "MersenneTwister" | "mersenne" | "MT19937" => Some(GeneratorSpec::Mersenne),
            _ => None,
        }
    }
}

const POOL_SIZE: usize = 4;
const INIT_A: u32 = 0x43b0_d7e5;
const MULT_A: u32 = 0x931e_8875;
const INIT_B: u32 = 0x8b51_f9dd;
const MULT_B: u32 = 0x58f3_8ded;
const MIX_MULT_L: u32 = 0xca01_f9dd;
const MIX_MULT_R: u32 = 0x4973_f715;
const XSHIFT: u32 = 16;

/// Hash-based entropy pool. Entropy words and spawn-key words are mixed
/// into a four-word pool from which any number of state words is drawn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedSequence {
    pool: [u32; POOL_SIZE],
}

impl SeedSequence {
    pub fn new(entropy: &[u32], spawn_key: &[u32]) -> Self {
        let mut assembled: Vec<u32> = entropy.to_vec();
        if !spawn_key.is_empty() && assembled.len() < POOL_SIZE {
            assembled.resize(POOL_SIZE, 0);
        }
        assembled.extend_from_slice(spawn_key);

        let mut hash_const = INIT_A;
        let mut hashmix = |value: u32| -> u32 {
            let mut v = value ^ hash_const;
            hash_const = hash_const.wrapping_mul(MULT_A);
            v = v.wrapping_mul(hash_const);
            v ^ (v >> XSHIFT)
        };
        let mix = |x: u32, y: u32| -> u32 {
            let r = MIX_MULT_L.wrapping_mul(x).wrapping_sub(MIX_MULT_R.wrapping_mul(y));
            r ^ (r >> XSHIFT)
        };

        let mut pool = [0u32; POOL_SIZE];
        for (i, slot) in pool.iter_mut().enumerate() {
            *slot = hashmix(assembled.get(i).copied().unwrap_or(0));
        }
        for src in 0..POOL_SIZE {
            for dst in 0..POOL_SIZE {
                if src != dst {
                    let h = hashmix(pool[src]);
                    pool[dst] = mix(pool[dst], h);
                }
            }
        }
        for &word in assembled.iter().skip(POOL_SIZE) {
            for slot in pool.iter_mut() {
                let h = hashmix(word);
                *slot = mix(*slot, h);
            }
        }
        SeedSequence { pool }
    }

    pub fn generate_u32(&self, n_words: usize) -> Vec<u32> {
        let mut hash_const = INIT_B;
        (0..n_words)
            .map(|i| {
                let mut v = self.pool[i % POOL_SIZE] ^ hash_const;
                hash_const = hash_const.wrapping_mul(MULT_B);
                v = v.wrapping_mul(hash_const);
                v ^ (v >> XSHIFT)
            })
            .collect()
    }

    pub fn generate_u64(&self, n_words: usize) -> Vec<u64> {
        self.generate_u32(n_words * 2)
            .chunks_exact(2)
            .map(|p| u64::from(p[0]) | (u64::from(p[1]) << 32))
            .collect()
    }
}

const PCG_MULT: u128 = 0x2360_ed05_1fc6_5da4_4385_df64_9fcc_f645;

/// PCG XSL-RR 128/64, the generator behind numpy's `PCG64`.
#[derive(Debug, Clone)]
pub struct Pcg64 {
    state: u128,
    inc: u128,
}

impl Pcg64 {
    pub fn new(initstate: u128, initseq: u128) -> Self {
        let mut rng = Pcg64 {
            state: 0,
            inc: (initseq << 1) | 1,
        };
        rng.step();
        rng.state = rng.state.wrapping_add(initstate);
        rng.step();
        rng
    }

    pub fn from_seed_sequence(seed: &SeedSequence) -> Self {
        let v = seed.generate_u64(4);
        let initstate = (u128::from(v[0]) << 64) | u128::from(v[1]);
        let initseq = (u128::from(v[2]) << 64) | u128::from(v[3]);
        Pcg64::new(initstate, initseq)
    }

    fn step(&mut self) {
        self.state = self.state.wrapping_mul(PCG_MULT).wrapping_add(self.inc);
    }
}

impl WordSource for Pcg64 {
    fn next_u64(&mut self) -> u64 {
        self.step();
        let rot = (self.state >> 122) as u32;
        let xored = ((self.state >> 64) as u64) ^ (self.state as u64);
        xored.rotate_right(rot)
    }
}

const MT_N: usize = 624;
const MT_M: usize = 397;

/// 32-bit Mersenne Twister; 64-bit words are two draws, high word first.
#[derive(Clone)]
pub struct Mt19937 {
    key: [u32; MT_N],
    pos: usize,
}

impl fmt::Debug for Mt19937 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mt19937").field("pos", &self.pos).finish()
    }
}

impl Mt19937 {
    pub fn from_seed_sequence(seed: &SeedSequence) -> Self {
        let val = seed.generate_u32(MT_N);
        let mut key = [0u32; MT_N];
        key[0] = 0x8000_0000;
        key[1..].copy_from_slice(&val[1..]);
        // numpy leaves the position one short of a full table here, so the
        // first draw tempers the last seeded word before regenerating.
        Mt19937 { key, pos: MT_N - 1 }
    }

    fn regenerate(&mut self) {
        const UPPER: u32 = 0x8000_0000;
        const LOWER: u32 = 0x7fff_ffff;
        const MATRIX_A: u32 = 0x9908_b0df;
        let twist = |a: u32, b: u32, c: u32| {
            let y = (a & UPPER) | (b & LOWER);
            c ^ (y >> 1) ^ (if y & 1 == 1 { MATRIX_A } else { 0 })
        };
        for i in 0..MT_N - MT_M {
            self.key[i] = twist(self.key[i], self.key[i + 1], self.key[i + MT_M]);
        }
        for i in MT_N - MT_M..MT_N - 1 {
            self.key[i] = twist(self.key[i], self.key[i + 1], self.key[i + MT_M - MT_N]);
        }
        self.key[MT_N - 1] = twist(self.key[MT_N - 1], self.key[0], self.key[MT_M - 1]);
        self.pos = 0;
    }

    pub fn next_u32(&mut self) -> u32 {
        if self.pos == MT_N {
            self.regenerate();
        }
        let mut y = self.key[self.pos];
        self.pos += 1;
        y ^= y >> 11;
        y ^= (y << 7) & 0x9d2c_5680;
        y ^= (y << 15) & 0xefc6_0000;
        y ^ (y >> 18)
    }
}

impl WordSource for Mt19937 {
    fn next_u64(&mut self) -> u64 {
        let hi = u64::from(self.next_u32());
        let lo = u64::from(self.next_u32());
        (hi << 32) | lo
    }
}
