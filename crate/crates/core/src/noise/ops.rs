//! The perturbation primitives. Each sampling function takes an
//! [`EntrySource`] and draws from it in a fixed order: one entry per row
//! for masks, one entry per activation for the values that follow.

use log::warn;
use serde::{Deserialize, Serialize};

use super::NoiseDistribution;
use crate::error::{Error, Result};
use crate::sampling::{dist, EntrySource};
use crate::table::Cell;

/// Draws one Bernoulli(p) per row. Ineligible rows (missing source) still
/// consume their draw but are forced to 0.
pub fn sample_bernoulli_mask<S: EntrySource + ?Sized>(src: &mut S, eligible: &[bool], p: f64) -> Result<Vec<bool>> {
    eligible
        .iter()
        .map(|&ok| Ok(dist::bernoulli(src.entry()?, p) && ok))
        .collect()
}

/// `count` noise values; sample only for the activated entries.
pub fn sample_noise<S: EntrySource + ?Sized>(
    src: &mut S,
    distribution: NoiseDistribution,
    mu: f64,
    sigma: f64,
    count: usize,
) -> Result<Vec<f64>> {
    (0..count)
        .map(|_| {
            let z = distribution.standard(src.entry()?);
            Ok(distribution.finish(mu, sigma, z))
        })
        .collect()
}

/// `scaled[i] + noise[k]` for the k-th activated row, unchanged elsewhere.
pub fn inject_numeric(scaled: &[f64], mask: &[bool], noise: &[f64]) -> Result<Vec<f64>> {
    let active = mask.iter().filter(|&&m| m).count();
    if active != noise.len() || scaled.len() != mask.len() {
        return Err(Error::Internal(format!(
            "noise length {} does not match {} activations over {} rows",
            noise.len(),
            active,
            scaled.len()
        )));
    }
    let mut it = noise.iter();
    Ok(scaled
        .iter()
        .zip(mask)
        .map(|(&x, &m)| if m { x + it.next().expect("counted") } else { x })
        .collect())
}

/// Shrinks noise so that `minmax + noise` stays in [0, 1]: cap to
/// ±0.5, then scale the side that points toward the nearer bound.
pub fn scale_noise_minmax(noise: f64, minmax: f64) -> f64 {
    let noise = noise.clamp(-0.5, 0.5);
    if minmax < 0.5 {
        if noise < 0.0 {
            noise * minmax / 0.5
        } else {
            noise
        }
    } else if noise < 0.0 {
        noise
    } else {
        noise * (1.0 - minmax) / 0.5
    }
}

pub const CALIBRATION_DRAWS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanAdjustment {
    pub mu: f64,
    /// The two calibration means coincided; `mu` fell back to the input.
    pub degenerate: bool,
}

/// Pre-scaling noise mean whose scaled noise has mean close to `mu0`.
///
/// Measures the scaled-noise mean at `mu0` (giving `mu1`) and at `mu1`
/// (giving `mu2`) over the training entries, then takes the secant step
/// through those two points. Both evaluations share the same base draws
/// and entry picks, so the difference reflects the mean shift alone.
/// The whole calibration consumes a single entry from `src`.
pub fn adjust_noise_mean<S: EntrySource + ?Sized>(
    minmax_train: &[f64],
    mu0: f64,
    sigma: f64,
    distribution: NoiseDistribution,
    src: &mut S,
) -> Result<MeanAdjustment> {
    if minmax_train.is_empty() {
        return Ok(MeanAdjustment {
            mu: mu0,
            degenerate: true,
        });
    }
    let rng = src.entry()?;
    let draws: Vec<(f64, f64)> = (0..CALIBRATION_DRAWS)
        .map(|_| {
            let z = distribution.standard(rng);
            let m = minmax_train[dist::below(rng, minmax_train.len() as u64) as usize];
            (z, m)
        })
        .collect();
    let scaled_mean = |mu: f64| {
        draws
            .iter()
            .map(|&(z, m)| scale_noise_minmax(distribution.finish(mu, sigma, z), m))
            .sum::<f64>()
            / draws.len() as f64
    };
    let mu1 = scaled_mean(mu0);
    let mu2 = scaled_mean(mu1);
    let slope = mu2 - mu1;
    if slope.abs() < 1e-15 || (mu1 - mu0).abs() < 1e-15 {
        return Ok(MeanAdjustment {
            mu: mu0,
            degenerate: slope.abs() < 1e-15,
        });
    }
    Ok(MeanAdjustment {
        mu: mu0 - (mu1 - mu0) * (mu1 - mu0) / slope,
        degenerate: false,
    })
}

/// `abs(x - mask)` on a 0/1 column.
pub fn flip_boolean_direct(encoded: &[Cell], mask: &[bool]) -> Vec<Cell> {
    encoded
        .iter()
        .zip(mask)
        .map(|(c, &m)| match (c, m) {
            (Cell::Number(x), true) => Cell::Number((x - 1.0).abs()),
            _ => c.clone(),
        })
        .collect()
}

/// Replacement candidates for a categoric flip with their training counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipTable {
    pub vocabulary: Vec<Cell>,
    pub counts: Vec<u64>,
}

impl FlipTable {
    pub fn fit<'a>(cells: impl Iterator<Item = &'a Cell>) -> FlipTable {
        let (vocabulary, counts) = crate::encoders::count_values(cells);
        FlipTable { vocabulary, counts }
    }

    pub fn position(&self, cell: &Cell) -> Option<usize> {
        let key = cell.key()?;
        self.vocabulary.iter().position(|v| v.key().as_deref() == Some(key.as_str()))
    }

    pub fn cumulative(&self, weighted: bool) -> Vec<f64> {
        let w: Vec<f64> = self
            .counts
            .iter()
            .map(|&c| if weighted { c as f64 } else { 1.0 })
            .collect();
        dist::cumulative(&w)
    }
}

/// Replaces each activated entry with a different training value, drawn
/// by training frequency (`weighted`) or uniformly. The current value is
/// excluded and the remaining weights renormalized. `table_for(row)`
/// picks the table (per-segment tables for protected features).
///
/// Returns the new column and the number of entries actually changed.
pub fn flip_categoric<'t, S: EntrySource + ?Sized>(
    column: &[Cell],
    mask: &[bool],
    table_for: impl Fn(usize) -> &'t FlipTable,
    weighted: bool,
    src: &mut S,
) -> Result<(Vec<Cell>, usize)> {
    let mut out = column.to_vec();
    let mut changed = 0;
    let mut warned = false;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let table = table_for(i);
        let rng = src.entry()?;
        let cum = table.cumulative(weighted);
        let current = table.position(&column[i]);
        match dist::weighted_index(rng, &cum, current) {
            Some(j) => {
                out[i] = table.vocabulary[j].clone();
                changed += 1;
            }
            None if !warned => {
                warn!("no alternate value available for a categoric flip; entry left unchanged");
                warned = true;
            }
            None => {}
        }
    }
    Ok((out, changed))
}

/// Replaces each activated entry with a uniformly drawn non-missing entry
/// of the same column in the batch being transformed.
pub fn swap_noise<S: EntrySource + ?Sized>(column: &[Cell], mask: &[bool], src: &mut S) -> Result<Vec<Cell>> {
    let pool: Vec<usize> = (0..column.len()).filter(|&i| !column[i].is_missing()).collect();
    let active = mask.iter().any(|&m| m);
    if active && pool.len() < 2 {
        warn!("swap noise on a batch with fewer than two entries is the identity");
    }
    let mut out = column.to_vec();
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let rng = src.entry()?;
        if pool.len() >= 2 {
            out[i] = column[pool[dist::below(rng, pool.len() as u64) as usize]].clone();
        }
    }
    Ok(out)
}

pub fn mask_noise(column: &[Cell], mask: &[bool], mask_value: &Cell) -> Vec<Cell> {
    column
        .iter()
        .zip(mask)
        .map(|(c, &m)| if m { mask_value.clone() } else { c.clone() })
        .collect()
}

/// Noise scale for unnormalized (passthrough) features.
pub fn rescale_sigma_passthrough(sigma: f64, train_std: f64) -> f64 {
    if train_std > 0.0 {
        sigma * train_std
    } else {
        0.0
    }
}
