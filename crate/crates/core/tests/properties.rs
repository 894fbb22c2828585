use proptest::prelude::*;
use serde_json::json;

use tabperturb::pipeline::{self, AugmentSpec, Config, TraindataMode, TransformBasis};
use tabperturb::sampling::{SamplingPlan, SamplingType};
use tabperturb::table::{self, Cell, CsvOptions, DataTable};

fn cell_strategy() -> impl Strategy<Value = Option<f64>> {
    prop_oneof![1 => Just(None), 9 => (-1e3f64..1e3).prop_map(Some)]
}

fn level_strategy() -> impl Strategy<Value = Option<u8>> {
    prop_oneof![1 => Just(None), 9 => (0u8..4).prop_map(Some)]
}

/// A table with one numeric and one categoric column of equal length.
fn table_strategy() -> impl Strategy<Value = DataTable> {
    (3usize..60).prop_flat_map(|n| {
        (
            proptest::collection::vec(cell_strategy(), n),
            proptest::collection::vec(level_strategy(), n),
        )
            .prop_map(|(xs, cs)| {
                let x = xs.into_iter().map(|v| v.map_or(Cell::Missing, Cell::Number)).collect();
                let c = cs
                    .into_iter()
                    .map(|v| v.map_or(Cell::Missing, |l| Cell::Text(format!("L{l}"))))
                    .collect();
                DataTable::new(vec!["x".into(), "c".into()], vec![x, c]).unwrap()
            })
    })
}

fn plan(seed: u32) -> SamplingPlan {
    SamplingPlan::primary(SamplingType::Default, vec![seed])
}

fn noisy_config(numeric_root: &str, categoric_root: &str, flip: f64, sigma: f64) -> Config {
    Config::from_json(json!({
        "assigncat": {numeric_root: "x", categoric_root: "c"},
        "assignparam": {"global_assignparam": {
            "flip_prob": flip, "test_flip_prob": flip, "sigma": sigma, "test_sigma": sigma
        }},
        "shuffletrain": false,
    }))
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scaled_noise_output_stays_in_unit_range(
        t in table_strategy(),
        flip in 0.0f64..1.0,
        sigma in 0.0f64..2.0,
        seed in any::<u32>(),
        root in prop_oneof![Just("DBmm"), Just("DBrt")],
    ) {
        let cfg = noisy_config(root, "DBod", flip, sigma);
        let fitted = pipeline::fit(&t, None, &cfg, &plan(seed)).unwrap();
        let test = pipeline::apply(&fitted.basis, &t, TraindataMode::Test, &plan(seed ^ 1)).unwrap();
        for out in [&fitted.train.table, &test.table] {
            for (name, col) in out.columns() {
                if name.starts_with("x_") && !name.ends_with("NArw") {
                    for c in col {
                        let v = c.as_f64().unwrap();
                        prop_assert!((0.0..=1.0).contains(&v), "{name}: {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn noiseless_modes_ignore_the_seeds(t in table_strategy(), a in any::<u32>(), b in any::<u32>()) {
        let cfg = noisy_config("DBnb", "DBoh", 0.5, 0.5);
        let basis = pipeline::fit(&t, None, &cfg, &plan(a)).unwrap().basis;
        for mode in [TraindataMode::TrainNoNoise, TraindataMode::TestNoNoise] {
            let x = pipeline::apply(&basis, &t, mode, &plan(a)).unwrap();
            let y = pipeline::apply(&basis, &t, mode, &plan(b)).unwrap();
            prop_assert_eq!(x.table, y.table);
            prop_assert!(x.activations.values().all(|&n| n == 0));
        }
    }

    #[test]
    fn numeric_noise_changes_exactly_the_activated_cells(t in table_strategy(), seed in any::<u32>()) {
        let cfg = noisy_config("DPnb", "DPod", 0.4, 0.1);
        let fitted = pipeline::fit(&t, None, &cfg, &plan(seed)).unwrap();
        let clean = pipeline::apply(&fitted.basis, &t, TraindataMode::TrainNoNoise, &plan(seed)).unwrap();
        for (name, &activated) in &fitted.train.activations {
            let noisy = fitted.train.table.column(name).unwrap();
            let base = clean.table.column(name).unwrap();
            let changed = noisy.iter().zip(base).filter(|(a, b)| a != b).count() as u64;
            if name.starts_with("x_") {
                prop_assert_eq!(changed, activated, "{}", name);
            } else {
                // a flip can only change what was activated
                prop_assert!(changed <= activated, "{}", name);
            }
        }
        // columns without noise are untouched
        for (name, col) in fitted.train.table.columns() {
            if !fitted.train.activations.contains_key(name) {
                prop_assert_eq!(col, clean.table.column(name).unwrap());
            }
        }
    }

    #[test]
    fn basis_round_trips_through_json(t in table_strategy(), seed in any::<u32>()) {
        let cfg = noisy_config("DPmm", "DP10", 0.1, 0.05);
        let basis = pipeline::fit(&t, None, &cfg, &plan(seed)).unwrap().basis;
        let text = basis.to_json().unwrap();
        let back = TransformBasis::from_json(&text).unwrap();
        prop_assert_eq!(back.to_json().unwrap(), text);
        prop_assert_eq!(back, basis);
    }

    #[test]
    fn augment_multiplies_rows(t in table_strategy(), count in 0u32..4, all_noisy in any::<bool>(), seed in any::<u32>()) {
        let cfg = noisy_config("DPnb", "DPod", 0.2, 0.1);
        let basis = pipeline::fit(&t, None, &cfg, &plan(seed)).unwrap().basis;
        let spec = AugmentSpec { count, all_noisy };
        let out = pipeline::augment(&basis, &t, spec, &plan(seed)).unwrap();
        prop_assert_eq!(out.table.n_rows(), t.n_rows() * (count as usize + 1));
        let mut idx = out.table.row_index().to_vec();
        idx.sort_unstable();
        idx.dedup();
        prop_assert_eq!(idx.len(), out.table.n_rows());
    }

    #[test]
    fn prepared_csv_round_trips(t in table_strategy(), seed in any::<u32>()) {
        let cfg = noisy_config("DPnb", "DPoh", 0.3, 0.2);
        let out = pipeline::fit(&t, None, &cfg, &plan(seed)).unwrap().train.table;
        let mut bytes = Vec::new();
        table::to_writer(&out, &mut bytes, b',', None).unwrap();
        let back = table::read_csv(bytes.as_slice(), &CsvOptions::default()).unwrap();
        prop_assert_eq!(back.names(), out.names());
        for ((_, a), (_, b)) in back.columns().zip(out.columns()) {
            prop_assert_eq!(a, b);
        }
    }
}
