use serde_json::json;

use tabperturb::pipeline::{self, Config, TraindataMode};
use tabperturb::sampling::{GeneratorSpec, OsEntropy, SamplingPlan, SamplingType, SeedingType};
use tabperturb::table::{Cell, DataTable};
use tabperturb::Error;

fn train() -> DataTable {
    let x = (0..400).map(|i| Cell::Number(((i * 37) % 101) as f64)).collect();
    let c = (0..400).map(|i| Cell::Text(["a", "b", "c"][i % 3].to_string())).collect();
    DataTable::new(vec!["x".into(), "c".into()], vec![x, c]).unwrap()
}

fn config() -> Config {
    Config::from_json(json!({
        "assigncat": {"DBnb": "x", "DBod": "c"},
        "assignparam": {"global_assignparam": {"flip_prob": 0.3, "test_flip_prob": 0.3}},
        "shuffletrain": false,
    }))
    .unwrap()
}

fn plan(sampling_type: SamplingType, seeds: Vec<u32>, extra: bool) -> SamplingPlan {
    SamplingPlan {
        sampling_type,
        seeding_type: Some(SeedingType::PrimarySeeds),
        entropy_seeds: seeds,
        extra_seed_generator: extra.then_some(GeneratorSpec::Pcg64),
        ..SamplingPlan::default()
    }
}

#[test]
fn transform_seed_consumes_one_per_noise_transform() {
    let p = plan(SamplingType::TransformSeed, (0..50).collect(), false);
    let fitted = pipeline::fit(&train(), None, &config(), &p).unwrap();
    let report = &fitted.basis.seed_report;
    assert_eq!(report.transform_seed_total, 2);
    assert_eq!(fitted.usage.bank_seeds_consumed, report.transform_seed_total);
    let (_, usage) = pipeline::apply_with_usage(&fitted.basis, &train(), TraindataMode::Test, &p).unwrap();
    assert_eq!(usage.bank_seeds_consumed, 2);
}

#[test]
fn short_bank_without_extra_generator_is_exhausted() {
    let p = plan(SamplingType::BulkSeeds, vec![1, 2, 3], false);
    let err = pipeline::fit(&train(), None, &config(), &p).unwrap_err();
    assert!(matches!(err, Error::SeedExhausted { consumed: 3 }), "{err}");

    let p = plan(SamplingType::BulkSeeds, vec![1, 2, 3], true);
    let fitted = pipeline::fit(&train(), None, &config(), &p).unwrap();
    assert_eq!(fitted.usage.bank_seeds_consumed, 3);
    assert!(fitted.usage.extra_seeds_drawn > 0);
}

#[test]
fn bulk_budget_is_not_exceeded() {
    let report = pipeline::fit(&train(), None, &config(), &plan(SamplingType::Default, vec![9], false))
        .unwrap()
        .basis
        .seed_report;
    let p = plan(SamplingType::BulkSeeds, (0..report.bulk_seeds_total_train as u32).collect(), false);
    let fitted = pipeline::fit(&train(), None, &config(), &p).unwrap();
    assert!(fitted.usage.bank_seeds_consumed <= report.bulk_seeds_total_train);
}

#[test]
fn supplemental_seeding_mixes_system_entropy() {
    let sup = |os: OsEntropy| SamplingPlan {
        seeding_type: Some(SeedingType::SupplementalSeeds),
        entropy_seeds: vec![5],
        os_entropy: os,
        ..SamplingPlan::default()
    };
    let run = |p: &SamplingPlan| pipeline::fit(&train(), None, &config(), p).unwrap().train.table;
    let fixed = sup(OsEntropy::Fixed(vec![1, 2]));
    assert_eq!(run(&fixed), run(&fixed));
    assert_ne!(run(&fixed), run(&sup(OsEntropy::Fixed(vec![1, 3]))));
    // primary seeding ignores the system words entirely
    let primary = |os: OsEntropy| SamplingPlan {
        seeding_type: Some(SeedingType::PrimarySeeds),
        ..sup(os)
    };
    assert_eq!(run(&primary(OsEntropy::Fixed(vec![1, 2]))), run(&primary(OsEntropy::Fixed(vec![7]))));
}

#[test]
fn generator_choice_changes_draws_not_semantics() {
    let pcg = plan(SamplingType::Default, vec![4], false);
    let mt = SamplingPlan {
        sampling_generator: GeneratorSpec::Mersenne,
        ..pcg.clone()
    };
    let a = pipeline::fit(&train(), None, &config(), &pcg).unwrap();
    let b = pipeline::fit(&train(), None, &config(), &mt).unwrap();
    assert_eq!(a.train.table.names(), b.train.table.names());
    assert_ne!(a.train.table, b.train.table);
    assert!(b.train.activations.values().sum::<u64>() > 0);
}
