use stratsel::allocation;
use stratsel::baselines;
use stratsel::harness::{self, ExperimentSpec, Method, StratifiedDesign, StratifiedSampler};
use stratsel::search::Allocator;
use stratsel::synth::{self, BetaKind, SynthConfig};
use stratsel::variance;

#[test]
fn proportional_reduction_tracks_the_between_strata_share() {
    let cfg = SynthConfig::new(10_000, BetaKind::Type1, 20, 21).unwrap();
    let (train, test) = synth::generate_train_test(&cfg).unwrap();
    let n = 500;
    let design = StratifiedDesign::fit(&train, &test, &[0, 4, 8], 6, n, Allocator::Proportional, 21).unwrap();
    let stats = &design.test_stats;
    let f = n as f64 / stats.population() as f64;
    let target = (1.0 - f) * variance::srs_gap(stats, n).unwrap() / variance::srs_variance(stats, n).unwrap() * 100.0;

    let sampler = StratifiedSampler::new(&test, &design.test_labels, &design.test_plan).unwrap();
    let strat = harness::estimate_sampling_variance(|r| Ok(sampler.sample_mean(r)), 10_000, 1).unwrap();
    let srs = harness::estimate_sampling_variance(|r| baselines::srs_mean(&test, n, r), 10_000, 2).unwrap();
    let measured = harness::variance_reduction_rate(strat, srs).unwrap();
    assert!(
        (measured - target).abs() <= 3.0,
        "measured {measured:.2} pp vs analytic {target:.2} pp"
    );
}

#[test]
fn estimates_are_stable_in_replication_count() {
    let frame = synth::generate(&SynthConfig::new(5_000, BetaKind::Type2, 20, 5).unwrap()).unwrap();
    let partition = stratsel::kmeans::kmeans_fit(&frame, &[0, 1], 4, 5).unwrap();
    let stats = stratsel::stats::stratum_stats(&frame, &partition.train_labels).unwrap();
    for n in [50, 200, 800] {
        let plan = allocation::proportional(&stats, n).unwrap();
        let sampler = StratifiedSampler::new(&frame, &partition.train_labels, &plan).unwrap();
        let strat = |reps| harness::estimate_sampling_variance(|r| Ok(sampler.sample_mean(r)), reps, 7).unwrap();
        let srs = |reps| harness::estimate_sampling_variance(|r| baselines::srs_mean(&frame, n, r), reps, 8).unwrap();
        for (a, b) in [(strat(5_000), strat(10_000)), (srs(5_000), srs(10_000))] {
            assert!((a - b).abs() <= 0.1 * a.max(b), "n = {n}: {a} vs {b}");
        }
    }
}

#[test]
fn report_rates_match_their_components() {
    let cfg = SynthConfig::new(1_000, BetaKind::Type1, 20, 3).unwrap();
    let (train, test) = synth::generate_train_test(&cfg).unwrap();
    let spec = ExperimentSpec {
        methods: Method::ALL.to_vec(),
        allocators: vec![Allocator::Proportional, Allocator::Optimal],
        k: 4,
        theta: 3,
        n: 100,
        replications: 200,
        seed: 3,
    };
    let report = harness::run_experiment(&train, &test, &spec, "small").unwrap();
    assert_eq!(report.methods.len(), 1 + 2 + 3 * 2);
    let srs = report.get(Method::Srs, None).unwrap();
    assert_eq!(srs.variance_reduction_percent, 0.0);
    for m in &report.methods {
        assert!(m.variance >= 0.0);
        let rate = (1.0 - m.variance / srs.variance) * 100.0;
        assert!((rate - m.variance_reduction_percent).abs() <= 1e-9);
    }
    assert_eq!(report, harness::run_experiment(&train, &test, &spec, "small").unwrap());
}

#[test]
fn srs_only_report_has_one_row() {
    let cfg = SynthConfig::new(300, BetaKind::Type2, 20, 4).unwrap();
    let (train, test) = synth::generate_train_test(&cfg).unwrap();
    let spec = ExperimentSpec {
        methods: vec![Method::Srs],
        allocators: vec![],
        k: 3,
        theta: 2,
        n: 30,
        replications: 50,
        seed: 0,
    };
    let report = harness::run_experiment(&train, &test, &spec, "tiny").unwrap();
    assert_eq!(report.methods.len(), 1);
    assert_eq!(report.methods[0].variance_reduction_percent, 0.0);
}
