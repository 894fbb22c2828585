//! Segment-specific noise for an adjacent protected attribute: each
//! segment's noise is matched to that segment's own spread or frequencies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::FlipTable;
use crate::encoders::Moments;
use crate::table::Cell;

/// Segment label of a protected cell; missing cells form their own segment.
pub fn segment_key(cell: &Cell) -> String {
    cell.key().unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectedNumeric {
    pub feature: String,
    pub aggregate_std: f64,
    /// σ_segment / σ_aggregate per segment.
    pub ratios: BTreeMap<String, f64>,
    /// Segments too small (< 2 rows) to estimate; they keep ratio 1.
    pub flagged: Vec<String>,
}

impl ProtectedNumeric {
    /// `values[i]` is `None` for rows excluded from statistics.
    pub fn fit(feature: &str, values: &[Option<f64>], protected: &[Cell]) -> ProtectedNumeric {
        let aggregate = Moments::of(values.iter().flatten().copied());
        let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (v, p) in values.iter().zip(protected) {
            if let Some(v) = v {
                groups.entry(segment_key(p)).or_default().push(*v);
            }
        }
        let mut ratios = BTreeMap::new();
        let mut flagged = Vec::new();
        for (seg, xs) in groups {
            let ratio = if xs.len() < 2 || aggregate.std == 0.0 {
                flagged.push(seg.clone());
                1.0
            } else {
                Moments::of(xs.iter().copied()).std / aggregate.std
            };
            ratios.insert(seg, ratio);
        }
        ProtectedNumeric {
            feature: feature.to_string(),
            aggregate_std: aggregate.std,
            ratios,
            flagged,
        }
    }

    /// Unknown segments get ratio 1.
    pub fn ratio(&self, protected: &Cell) -> f64 {
        self.ratios.get(&segment_key(protected)).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectedCategoric {
    pub feature: String,
    pub segments: BTreeMap<String, FlipTable>,
}

impl ProtectedCategoric {
    pub fn fit(feature: &str, values: &[Option<&Cell>], protected: &[Cell]) -> ProtectedCategoric {
        let mut groups: BTreeMap<String, Vec<&Cell>> = BTreeMap::new();
        for (v, p) in values.iter().zip(protected) {
            if let Some(v) = v {
                groups.entry(segment_key(p)).or_default().push(v);
            }
        }
        ProtectedCategoric {
            feature: feature.to_string(),
            segments: groups
                .into_iter()
                .map(|(k, vs)| (k, FlipTable::fit(vs.into_iter())))
                .collect(),
        }
    }

    /// The segment's table, or `fallback` for segments unseen in training.
    pub fn table<'a>(&'a self, protected: &Cell, fallback: &'a FlipTable) -> &'a FlipTable {
        self.segments.get(&segment_key(protected)).unwrap_or(fallback)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtectedBasis {
    Numeric(ProtectedNumeric),
    Categoric(ProtectedCategoric),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(s: &str) -> Cell {
        Cell::Text(s.into())
    }

    #[test]
    fn identical_segments_have_unit_ratio() {
        let values: Vec<Option<f64>> = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0].iter().map(|&x| Some(x)).collect();
        let prot = vec![seg("a"), seg("a"), seg("a"), seg("b"), seg("b"), seg("b")];
        let p = ProtectedNumeric::fit("g", &values, &prot);
        assert!((p.ratio(&seg("a")) - 1.0).abs() < 1e-12);
        assert!((p.ratio(&seg("b")) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_matches_direct_std() {
        // segment a: ±2 around 0, segment b: constant 0 -> aggregate std sqrt(2)
        let values: Vec<Option<f64>> = [-2.0, 2.0, 0.0, 0.0].iter().map(|&x| Some(x)).collect();
        let prot = vec![seg("a"), seg("a"), seg("b"), seg("b")];
        let p = ProtectedNumeric::fit("g", &values, &prot);
        assert!((p.aggregate_std - 2f64.sqrt()).abs() < 1e-12);
        assert!((p.ratio(&seg("a")) - 2.0 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(p.ratio(&seg("b")), 0.0);
        assert_eq!(p.ratio(&seg("zzz")), 1.0);
    }

    #[test]
    fn small_segments_are_flagged() {
        let values = vec![Some(1.0), Some(5.0), Some(3.0)];
        let prot = vec![seg("a"), seg("a"), seg("b")];
        let p = ProtectedNumeric::fit("g", &values, &prot);
        assert_eq!(p.flagged, vec!["b".to_string()]);
        assert_eq!(p.ratio(&seg("b")), 1.0);
        let single = ProtectedNumeric::fit("g", &values, &[seg("a"), seg("a"), seg("a")]);
        assert!((single.ratio(&seg("a")) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn categoric_tables_per_segment() {
        let x = seg("x");
        let y = seg("y");
        let values = vec![Some(&x), Some(&x), Some(&y), None];
        let prot = vec![seg("a"), seg("a"), seg("b"), seg("b")];
        let p = ProtectedCategoric::fit("g", &values, &prot);
        assert_eq!(p.segments["a"].counts, vec![2]);
        assert_eq!(p.segments["b"].vocabulary, vec![y]);
    }
}
