//! Fitted normalizations and categoric encodings.
//!
//! Every basis here is fitted on training cells only and then applied
//! unchanged to any later data.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::table::Cell;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericKind {
    Zscore,
    Minmax,
    /// Min-max arithmetic, but flagged so range-preserving noise knows to
    /// shift into [0, 1] and back.
    Retain,
    Passthrough,
}

/// Population statistics of the non-missing numeric entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Moments {
    /// Two passes in row order; empty input gives all zeros.
    pub fn of(values: impl Iterator<Item = f64> + Clone) -> Moments {
        let mut count = 0usize;
        let mut sum = 0.0;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values.clone() {
            count += 1;
            sum += v;
            min = min.min(v);
            max = max.max(v);
        }
        if count == 0 {
            return Moments {
                count: 0,
                mean: 0.0,
                std: 0.0,
                min: 0.0,
                max: 0.0,
            };
        }
        let mean = sum / count as f64;
        let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
        Moments {
            count,
            mean,
            std: (ss / count as f64).sqrt(),
            min,
            max,
        }
    }

    pub fn of_cells(cells: &[Cell]) -> Moments {
        Moments::of(cells.iter().filter_map(Cell::as_f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericBasis {
    pub kind: NumericKind,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl NumericBasis {
    /// Text cells are ignored (treated as missing).
    pub fn fit(cells: &[Cell], kind: NumericKind) -> NumericBasis {
        let m = Moments::of_cells(cells);
        NumericBasis {
            kind,
            count: m.count,
            mean: m.mean,
            std: m.std,
            min: m.min,
            max: m.max,
        }
    }

    /// No spread to normalize by; noise is suppressed on such columns.
    pub fn is_degenerate(&self) -> bool {
        match self.kind {
            NumericKind::Zscore | NumericKind::Passthrough => self.std == 0.0,
            NumericKind::Minmax | NumericKind::Retain => self.max <= self.min,
        }
    }

    pub fn apply_value(&self, x: f64) -> f64 {
        match self.kind {
            NumericKind::Zscore => {
                if self.std > 0.0 {
                    (x - self.mean) / self.std
                } else {
                    0.0
                }
            }
            NumericKind::Minmax | NumericKind::Retain => {
                if self.max > self.min {
                    ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
                } else {
                    0.5
                }
            }
            NumericKind::Passthrough => x,
        }
    }

    /// Missing (and non-numeric) entries become 0 after scaling, except
    /// under passthrough where they stay missing.
    pub fn apply(&self, cells: &[Cell]) -> Vec<Cell> {
        cells
            .iter()
            .map(|c| match c.as_f64() {
                Some(x) => Cell::Number(self.apply_value(x)),
                None if self.kind == NumericKind::Passthrough => Cell::Missing,
                None => Cell::Number(0.0),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricEncoding {
    Ordinal,
    Boolean,
    Onehot,
    Binarized,
}

/// Canonical vocabulary order: numbers (ascending) before text (byte-wise).
pub fn canonical_cmp(a: &Cell, b: &Cell) -> Ordering {
    match (a, b) {
        (Cell::Number(x), Cell::Number(y)) => x.total_cmp(y),
        (Cell::Number(_), _) => Ordering::Less,
        (_, Cell::Number(_)) => Ordering::Greater,
        (Cell::Text(x), Cell::Text(y)) => x.cmp(y),
        (Cell::Text(_), Cell::Missing) => Ordering::Less,
        (Cell::Missing, Cell::Text(_)) => Ordering::Greater,
        (Cell::Missing, Cell::Missing) => Ordering::Equal,
    }
}

/// Distinct non-missing values in canonical order with their counts.
pub fn count_values<'a>(cells: impl Iterator<Item = &'a Cell>) -> (Vec<Cell>, Vec<u64>) {
    let mut counts: BTreeMap<String, (Cell, u64)> = BTreeMap::new();
    for c in cells {
        if let Some(k) = c.key() {
            counts.entry(k).or_insert_with(|| (c.clone(), 0)).1 += 1;
        }
    }
    let mut pairs: Vec<(Cell, u64)> = counts.into_values().collect();
    pairs.sort_by(|a, b| canonical_cmp(&a.0, &b.0));
    pairs.into_iter().unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricBasis {
    pub encoding: CategoricEncoding,
    pub vocabulary: Vec<Cell>,
    pub frequencies: Vec<u64>,
}

impl CategoricBasis {
    pub fn fit(cells: &[Cell], encoding: CategoricEncoding) -> CategoricBasis {
        let (vocabulary, frequencies) = count_values(cells.iter());
        CategoricBasis {
            encoding,
            vocabulary,
            frequencies,
        }
    }

    /// Position in the vocabulary; `None` for missing or unseen values.
    pub fn index_of(&self, cell: &Cell) -> Option<usize> {
        let key = cell.key()?;
        self.vocabulary
            .binary_search_by(|v| canonical_cmp(v, cell))
            .ok()
            .filter(|&i| self.vocabulary[i].key().as_deref() == Some(key.as_str()))
    }

    /// Ordinal code: 1-based vocabulary position, 0 for unknown or missing.
    pub fn code(&self, cell: &Cell) -> u64 {
        self.index_of(cell).map_or(0, |i| i as u64 + 1)
    }

    pub fn binary_width(&self) -> usize {
        let slots = self.vocabulary.len() as u64 + 1;
        (64 - (slots - 1).leading_zeros()).max(1) as usize
    }

    /// Suffixes distinguishing the output columns; a single empty suffix
    /// for single-column encodings.
    pub fn output_suffixes(&self) -> Vec<String> {
        match self.encoding {
            CategoricEncoding::Ordinal | CategoricEncoding::Boolean => vec![String::new()],
            CategoricEncoding::Onehot => self
                .vocabulary
                .iter()
                .map(|v| v.key().unwrap_or_default())
                .collect(),
            CategoricEncoding::Binarized => (0..self.binary_width()).map(|j| j.to_string()).collect(),
        }
    }

    /// One output column per suffix.
    pub fn apply(&self, cells: &[Cell]) -> Vec<Vec<Cell>> {
        let codes: Vec<u64> = cells.iter().map(|c| self.code(c)).collect();
        let bit = |b: bool| Cell::Number(if b { 1.0 } else { 0.0 });
        match self.encoding {
            CategoricEncoding::Ordinal => vec![codes.iter().map(|&c| Cell::Number(c as f64)).collect()],
            // first vocabulary entry (and unknowns) -> 0, second -> 1
            CategoricEncoding::Boolean => vec![codes.iter().map(|&c| bit(c == 2)).collect()],
            CategoricEncoding::Onehot => (1..=self.vocabulary.len() as u64)
                .map(|slot| codes.iter().map(|&c| bit(c == slot)).collect())
                .collect(),
            CategoricEncoding::Binarized => {
                let w = self.binary_width();
                (0..w)
                    .map(|j| codes.iter().map(|&c| bit((c >> (w - 1 - j)) & 1 == 1)).collect())
                    .collect()
            }
        }
    }
}

/// 1 where the source cell is missing, else 0.
pub fn narw_marker(cells: &[Cell]) -> Vec<Cell> {
    cells
        .iter()
        .map(|c| Cell::Number(if c.is_missing() { 1.0 } else { 0.0 }))
        .collect()
}

/// Ordinal bins of width one standard deviation around the mean. An even
/// bin count puts an edge on the mean, an odd one centers a bin on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StdBins {
    pub mean: f64,
    pub std: f64,
    pub bincount: usize,
}

impl StdBins {
    pub fn fit(cells: &[Cell], bincount: usize) -> StdBins {
        let m = Moments::of_cells(cells);
        StdBins {
            mean: m.mean,
            std: m.std,
            bincount: bincount.max(1),
        }
    }

    pub fn bin(&self, x: f64) -> usize {
        let b = self.bincount;
        if self.std == 0.0 || b == 1 {
            return b / 2;
        }
        let z = (x - self.mean) / self.std;
        let offset = (b as f64 - 2.0) / 2.0;
        // edges at i - offset for i in 0..b-1
        (0..b - 1).filter(|&i| z >= i as f64 - offset).count()
    }

    pub fn apply(&self, cells: &[Cell]) -> Vec<Cell> {
        cells
            .iter()
            .map(|c| {
                let b = c.as_f64().map_or(self.bincount / 2, |x| self.bin(x));
                Cell::Number(b as f64)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nums(xs: &[f64]) -> Vec<Cell> {
        xs.iter().map(|&x| Cell::Number(x)).collect()
    }

    fn text(xs: &[&str]) -> Vec<Cell> {
        xs.iter().map(|&x| Cell::Text(x.into())).collect()
    }

    #[test]
    fn zscore_fit_uses_population_std() {
        let b = NumericBasis::fit(&nums(&[0.0, 2.0, 4.0]), NumericKind::Zscore);
        assert_eq!(b.mean, 2.0);
        assert!((b.std - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((b.std - 1.633).abs() < 1e-3);
    }

    #[test]
    fn minmax_fit_and_apply() {
        let b = NumericBasis::fit(&nums(&[1.0, 2.0, 3.0]), NumericKind::Minmax);
        assert_eq!((b.min, b.max), (1.0, 3.0));
        assert_eq!(b.apply_value(2.0), 0.5);
        assert_eq!(b.apply_value(5.0), 1.0);
        assert_eq!(b.apply_value(-5.0), 0.0);
        let one = NumericBasis::fit(&nums(&[5.0]), NumericKind::Minmax);
        assert_eq!((one.min, one.max), (5.0, 5.0));
        assert!(one.is_degenerate());
        assert_eq!(one.apply_value(7.0), 0.5);
    }

    #[test]
    fn zscore_apply_and_missing() {
        let b = NumericBasis {
            kind: NumericKind::Zscore,
            count: 3,
            mean: 2.0,
            std: 1.0,
            min: 0.0,
            max: 4.0,
        };
        assert_eq!(b.apply(&[Cell::Number(3.0), Cell::Missing]), nums(&[1.0, 0.0]));
        let flat = NumericBasis::fit(&nums(&[4.0, 4.0]), NumericKind::Zscore);
        assert_eq!(flat.apply(&nums(&[4.0, 9.0])), nums(&[0.0, 0.0]));
    }

    #[test]
    fn passthrough_keeps_missing() {
        let b = NumericBasis::fit(&nums(&[1.0, 3.0]), NumericKind::Passthrough);
        assert_eq!(
            b.apply(&[Cell::Number(7.0), Cell::Text("x".into()), Cell::Missing]),
            vec![Cell::Number(7.0), Cell::Missing, Cell::Missing]
        );
    }

    #[test]
    fn categoric_counts() {
        let b = CategoricBasis::fit(&text(&["a", "b", "a"]), CategoricEncoding::Ordinal);
        assert_eq!(b.vocabulary, text(&["a", "b"]));
        assert_eq!(b.frequencies, vec![2, 1]);
        let empty = CategoricBasis::fit(&[], CategoricEncoding::Ordinal);
        assert!(empty.vocabulary.is_empty());
        let with_missing = CategoricBasis::fit(
            &[Cell::Missing, Cell::Text("y".into()), Cell::Text("n".into())],
            CategoricEncoding::Boolean,
        );
        assert_eq!(with_missing.vocabulary.len(), 2);
        assert_eq!(with_missing.frequencies.iter().sum::<u64>(), 2);
    }

    #[test]
    fn ordinal_codes_reserve_zero() {
        let b = CategoricBasis::fit(&text(&["a", "b"]), CategoricEncoding::Ordinal);
        assert_eq!(b.apply(&text(&["b", "z", "a"])), vec![nums(&[2.0, 0.0, 1.0])]);
        assert_eq!(b.apply(&[Cell::Missing]), vec![nums(&[0.0])]);
    }

    #[test]
    fn boolean_onehot_binarized() {
        let b = CategoricBasis::fit(&text(&["n", "y"]), CategoricEncoding::Boolean);
        assert_eq!(b.apply(&text(&["y", "n"])), vec![nums(&[1.0, 0.0])]);

        let oh = CategoricBasis::fit(&text(&["a", "b", "c"]), CategoricEncoding::Onehot);
        assert_eq!(oh.output_suffixes(), vec!["a", "b", "c"]);
        assert_eq!(
            oh.apply(&text(&["b", "q"])),
            vec![nums(&[0.0, 0.0]), nums(&[1.0, 0.0]), nums(&[0.0, 0.0])]
        );

        let bin = CategoricBasis::fit(&text(&["a", "b", "c"]), CategoricEncoding::Binarized);
        assert_eq!(bin.binary_width(), 2);
        // c -> code 3 -> 11; unknown -> 00
        assert_eq!(bin.apply(&text(&["c", "x", "a"])), vec![nums(&[1.0, 0.0, 0.0]), nums(&[1.0, 0.0, 1.0])]);
        for (k, w) in [(0usize, 1usize), (1, 1), (2, 2), (3, 2), (4, 3), (7, 3), (8, 4)] {
            let vocab: Vec<Cell> = (0..k).map(|i| Cell::Number(i as f64)).collect();
            let basis = CategoricBasis::fit(&vocab, CategoricEncoding::Binarized);
            assert_eq!(basis.binary_width(), w, "k={k}");
        }
    }

    #[test]
    fn vocabulary_order_is_canonical() {
        let cells = vec![
            Cell::Text("b".into()),
            Cell::Number(10.0),
            Cell::Text("a".into()),
            Cell::Number(2.0),
        ];
        let b = CategoricBasis::fit(&cells, CategoricEncoding::Ordinal);
        assert_eq!(
            b.vocabulary,
            vec![Cell::Number(2.0), Cell::Number(10.0), Cell::Text("a".into()), Cell::Text("b".into())]
        );
    }

    #[test]
    fn narw() {
        assert_eq!(narw_marker(&[Cell::Number(1.0), Cell::Missing]), nums(&[0.0, 1.0]));
        assert_eq!(narw_marker(&nums(&[1.0, 2.0])), nums(&[0.0, 0.0]));
        assert_eq!(narw_marker(&[Cell::Missing, Cell::Missing]), nums(&[1.0, 1.0]));
    }

    #[test]
    fn std_bins() {
        let b = StdBins {
            mean: 0.0,
            std: 1.0,
            bincount: 6,
        };
        let got: Vec<usize> = [-3.0, -1.5, -0.5, 0.5, 1.5, 3.0].iter().map(|&x| b.bin(x)).collect();
        assert_eq!(got, vec![0, 1, 2, 3, 4, 5]);
        let odd = StdBins { bincount: 7, ..b };
        assert_eq!(odd.bin(0.0), 3);
        assert_eq!(odd.bin(0.49), 3);
        assert_eq!(odd.bin(-0.51), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn zscore_standardizes_training_column(xs in prop::collection::vec(-1e3f64..1e3, 2..200)) {
            let cells = nums(&xs);
            let b = NumericBasis::fit(&cells, NumericKind::Zscore);
            prop_assume!(b.std > 1e-6);
            let out = b.apply(&cells);
            let m = Moments::of_cells(&out);
            prop_assert!(m.mean.abs() < 1e-9);
            prop_assert!((m.std - 1.0).abs() < 1e-9);
        }

        #[test]
        fn minmax_outputs_in_unit_interval(
            train in prop::collection::vec(-1e3f64..1e3, 1..100),
            test in prop::collection::vec(-1e4f64..1e4, 1..100),
        ) {
            let b = NumericBasis::fit(&nums(&train), NumericKind::Minmax);
            for c in b.apply(&nums(&test)).iter().chain(b.apply(&nums(&train)).iter()) {
                let v = c.as_f64().unwrap();
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn test_application_uses_train_statistics(
            train in prop::collection::vec(-100f64..100.0, 2..50),
            shift in -50f64..50.0,
        ) {
            let b = NumericBasis::fit(&nums(&train), NumericKind::Zscore);
            prop_assume!(b.std > 0.0);
            let n = train.len() as f64;
            let mean = train.iter().sum::<f64>() / n;
            let std = (train.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            let test: Vec<f64> = train.iter().map(|x| x + shift).collect();
            for (c, x) in b.apply(&nums(&test)).iter().zip(&test) {
                prop_assert!((c.as_f64().unwrap() - (x - mean) / std).abs() < 1e-9);
            }
        }

        #[test]
        fn ordinal_round_trips_through_vocabulary(words in prop::collection::vec("[a-e]{1,3}", 1..40)) {
            let cells: Vec<Cell> = words.iter().map(|w| Cell::Text(w.clone())).collect();
            let b = CategoricBasis::fit(&cells, CategoricEncoding::Ordinal);
            for (c, code) in cells.iter().zip(&b.apply(&cells)[0]) {
                let k = code.as_f64().unwrap() as usize;
                prop_assert!(k >= 1);
                prop_assert_eq!(&b.vocabulary[k - 1], c);
            }
            prop_assert_eq!(b.frequencies.iter().sum::<u64>(), cells.len() as u64);
        }
    }
}
