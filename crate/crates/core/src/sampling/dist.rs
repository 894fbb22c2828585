//! Shaped draws built on a raw word stream.

use super::generator::WordSource;

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

/// Uniform on [0, 1) with 53 bits of precision.
pub fn uniform01<W: WordSource + ?Sized>(rng: &mut W) -> f64 {
    (rng.next_u64() >> 11) as f64 * TWO_POW_NEG_53
}

/// Uniform on the open interval (0, 1).
pub fn uniform_open<W: WordSource + ?Sized>(rng: &mut W) -> f64 {
    loop {
        let u = uniform01(rng);
        if u > 0.0 {
            return u;
        }
    }
}

pub fn bernoulli<W: WordSource + ?Sized>(rng: &mut W, p: f64) -> bool {
    uniform01(rng) < p
}

/// Standard normal via the Marsaglia polar method. The second variate of
/// each accepted pair is discarded so that every call is self-contained.
pub fn standard_normal<W: WordSource + ?Sized>(rng: &mut W) -> f64 {
    loop {
        let x = 2.0 * uniform01(rng) - 1.0;
        let y = 2.0 * uniform01(rng) - 1.0;
        let s = x * x + y * y;
        if s > 0.0 && s < 1.0 {
            return x * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

/// Standard Laplace (scale 1) by inverse CDF.
pub fn standard_laplace<W: WordSource + ?Sized>(rng: &mut W) -> f64 {
    let u = uniform_open(rng) - 0.5;
    -u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Uniform on [-1, 1).
pub fn standard_uniform<W: WordSource + ?Sized>(rng: &mut W) -> f64 {
    2.0 * uniform01(rng) - 1.0
}

/// Uniform integer in `0..n` by multiply-shift with rejection. `n > 0`.
pub fn below<W: WordSource + ?Sized>(rng: &mut W, n: u64) -> u64 {
    assert!(n > 0, "empty range");
    let mut m = u128::from(rng.next_u64()) * u128::from(n);
    let mut low = m as u64;
    if low < n {
        let threshold = n.wrapping_neg() % n;
        while low < threshold {
            m = u128::from(rng.next_u64()) * u128::from(n);
            low = m as u64;
        }
    }
    (m >> 64) as u64
}

/// Index drawn proportionally to `weights`, skipping `exclude` (its weight
/// is removed and the rest renormalized). Returns `None` when no positive
/// weight remains.
pub fn weighted_index<W: WordSource + ?Sized>(
    rng: &mut W,
    cumulative: &[f64],
    exclude: Option<usize>,
) -> Option<usize> {
    let total = *cumulative.last()?;
    let (excl_lo, excl_w) = match exclude {
        Some(i) if i < cumulative.len() => {
            let lo = if i == 0 { 0.0 } else { cumulative[i - 1] };
            (lo, cumulative[i] - lo)
        }
        _ => (f64::INFINITY, 0.0),
    };
    let available = total - excl_w;
    if available <= 0.0 {
        return None;
    }
    let mut t = uniform01(rng) * available;
    if t >= excl_lo {
        t += excl_w;
    }
    // first index whose cumulative weight exceeds t
    let mut idx = cumulative.partition_point(|&c| c <= t);
    if idx >= cumulative.len() {
        idx = cumulative.len() - 1;
    }
    // step off zero-weight or excluded slots that rounding may land on
    while Some(idx) == exclude || weight_at(cumulative, idx) <= 0.0 {
        if idx == 0 {
            return (0..cumulative.len()).find(|&j| Some(j) != exclude && weight_at(cumulative, j) > 0.0);
        }
        idx -= 1;
    }
    Some(idx)
}

fn weight_at(cumulative: &[f64], i: usize) -> f64 {
    if i == 0 {
        cumulative[0]
    } else {
        cumulative[i] - cumulative[i - 1]
    }
}

pub fn cumulative(weights: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .scan(0.0, |acc, &w| {
            *acc += w;
            Some(*acc)
        })
        .collect()
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T, W: WordSource + ?Sized>(rng: &mut W, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::generator::{Pcg64, SeedSequence};
    use statrs::distribution::{ChiSquared, ContinuousCDF, Laplace, Normal};

    fn rng(seed: u32) -> Pcg64 {
        Pcg64::from_seed_sequence(&SeedSequence::new(&[seed], &[]))
    }

    fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn normal_ks() {
        let mut r = rng(1);
        let xs: Vec<f64> = (0..1_000_000).map(|_| standard_normal(&mut r)).collect();
        let n = Normal::new(0.0, 1.0).unwrap();
        let d = ks_statistic(xs, |x| n.cdf(x));
        assert!(d < 0.002, "KS {d}");
    }

    #[test]
    fn laplace_ks() {
        let mut r = rng(2);
        let xs: Vec<f64> = (0..200_000).map(|_| standard_laplace(&mut r)).collect();
        let l = Laplace::new(0.0, 1.0).unwrap();
        let d = ks_statistic(xs, |x| l.cdf(x));
        // 1.63/sqrt(n) is the 1% critical value
        assert!(d < 1.63 / (200_000f64).sqrt(), "KS {d}");
    }

    #[test]
    fn uniform_words_pass_chi_square() {
        let mut r = rng(3);
        let bins = 1000usize;
        let n = 1_000_000usize;
        let mut counts = vec![0u64; bins];
        for _ in 0..n {
            counts[below(&mut r, bins as u64) as usize] += 1;
        }
        let expected = n as f64 / bins as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat);
        assert!(p > 0.001, "chi-square p {p}");
    }

    #[test]
    fn weighted_index_excludes_and_renormalizes() {
        let mut r = rng(4);
        let cum = cumulative(&[50.0, 30.0, 20.0]);
        let mut counts = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            counts[weighted_index(&mut r, &cum, Some(0)).unwrap()] += 1;
        }
        assert_eq!(counts[0], 0);
        let b = counts[1] as f64 / n as f64;
        assert!((b - 0.6).abs() < 0.01, "{b}");
    }

    #[test]
    fn weighted_index_degenerate() {
        let mut r = rng(5);
        assert_eq!(weighted_index(&mut r, &cumulative(&[3.0]), Some(0)), None);
        assert_eq!(weighted_index(&mut r, &[], None), None);
        assert_eq!(weighted_index(&mut r, &cumulative(&[0.0, 2.0]), Some(1)), None);
        for _ in 0..100 {
            assert_eq!(weighted_index(&mut r, &cumulative(&[0.0, 2.0, 0.0]), None), Some(1));
        }
    }

    #[test]
    fn below_is_in_range() {
        let mut r = rng(6);
        for n in [1u64, 2, 3, 7, 1 << 40, u64::MAX] {
            for _ in 0..100 {
                assert!(below(&mut r, n) < n);
            }
        }
    }
}
