//! Planted-parameter recovery on generated data.

use std::collections::{BTreeMap, BTreeSet};

use crowdcdr_core::attendance::{
    calibrate_non_use, daily_attendance, estimate_daily_use_interior, extrapolate_distinct, state_representation,
    stay_pairs, AdjustmentFactors,
};
use crowdcdr_core::model::{PersonId, StateCode};
use crowdcdr_core::observe::{count_unique_handsets, dedupe_daily, stays};
use crowdcdr_core::pipeline::{accumulate, analyze, AnalysisConfig, AnalysisReport};
use crowdcdr_core::spatial::{BootstrapOptions, CALENDAR_PEAK_DAYS};
use crowdcdr_core::synth::{generate, ScenarioConfig, Synthetic};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

fn run(syn: &Synthetic, cfg: &AnalysisConfig) -> AnalysisReport {
    let acc = accumulate(&syn.events, &syn.towers, &cfg.window);
    analyze(&acc, &syn.towers, &syn.states, &syn.projections, cfg).unwrap()
}

fn quick() -> AnalysisConfig {
    AnalysisConfig { bootstrap: BootstrapOptions { replicates: 200, seed: 1 }, ..Default::default() }
}

#[test]
fn desk_scenario_end_to_end() {
    let mut sc = ScenarioConfig::desk(11);
    sc.projection_noise = 0.0;
    let syn = generate(&sc).unwrap();
    let r = run(&syn, &AnalysisConfig::default());

    assert!(r.attendance.persons > 70_000, "{}", r.attendance.persons);
    assert!((r.attendance.daily_use.used - 0.404).abs() < 0.01, "{:?}", r.attendance.daily_use);
    let q = r.attendance.calibration.as_ref().unwrap().non_use;
    assert!((q - 0.406).abs() < 0.02, "{q}");

    // Handsets and cell placements agree with the generator's books, and the
    // idle towers merged away.
    assert_eq!(r.attendance.handsets, syn.truth.handsets);
    assert_eq!(r.spatial.colocation.cells, syn.truth.placements);
    assert_eq!(r.spatial.tessellation.active_count(), 207);

    assert_eq!(r.spatial.report.partition.peaks, CALENDAR_PEAK_DAYS.to_vec());
    assert_eq!(r.spatial.report.partition.high.len(), 15);

    // Daily estimates divide by daily use, cumulative increments do not.
    let mut prev = 0.0;
    for (d, &cum) in &r.attendance.series.cumulative {
        assert!(r.attendance.series.daily.get(d).copied().unwrap_or(0.0) > cum - prev, "day {d}");
        assert!(cum >= prev);
        prev = cum;
    }

    let fit = r.social.fit.as_ref().unwrap();
    assert!(fit.beta1 < 0.0 && fit.p_value < 0.05);
    assert!(r.spatial.report.rho_a.unwrap() < 0.0);
    for s in r.spatial.report.per_state.values() {
        let ci = s.ci_a.unwrap();
        assert!(ci.contains(s.estimates.q_a.unwrap()));
    }
}

#[test]
fn q_a_sits_in_the_reported_band() {
    let syn = generate(&ScenarioConfig::desk(12)).unwrap();
    let r = run(&syn, &quick());
    let planted: Vec<f64> = syn.truth.q_targets.values().copied().collect();
    assert!(planted.iter().all(|q| (0.0025..=0.018).contains(q)));
    let q_a = r.spatial.report.q_a();
    let mean = q_a.values().sum::<f64>() / q_a.len() as f64;
    assert!((mean - 0.013).abs() < 0.0015, "{mean}");
    // Point estimates of small states are noisy; their intervals must reach the band.
    for s in r.spatial.report.per_state.values() {
        let ci = s.ci_a.unwrap();
        assert!(ci.hi >= 0.0025 && ci.lo <= 0.018, "{ci:?}");
    }
}

#[test]
fn network_matches_planted_graph() {
    let syn = generate(&ScenarioConfig::standard(13, 100_000, 0.01, 0.07)).unwrap();
    let acc = accumulate(&syn.events, &syn.towers, &Default::default());
    let net = acc.network.build(&syn.states, false);
    let edges: BTreeSet<(PersonId, PersonId)> = net.edges().into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
    assert_eq!(edges, syn.truth.edges);
}

#[test]
fn significance_is_stable_across_subsamples() {
    let mut sc = ScenarioConfig::desk(14);
    // Ties between groups make triples overlap, so the subsample depends on the seed.
    sc.social.p_out = 2e-4;
    let syn = generate(&sc).unwrap();
    let acc = accumulate(&syn.events, &syn.towers, &sc.window);
    let mut samples = BTreeSet::new();
    for seed in 0..20 {
        let cfg = AnalysisConfig { subsample_seed: seed, ..quick() };
        let r = analyze(&acc, &syn.towers, &syn.states, &syn.projections, &cfg).unwrap();
        let fit = r.social.fit.unwrap();
        assert!(fit.beta1 < 0.0 && fit.p_value < 0.05, "seed {seed}: {fit:?}");
        samples.insert(r.social.sample.len());
    }
    assert!(samples.len() > 1);
}

#[test]
fn noisy_projections_calibrate_near_planted_non_use() {
    let mut devs = Vec::new();
    for seed in 1..=100 {
        let mut sc = ScenarioConfig::desk(seed);
        sc.projection_noise = 0.05;
        let syn = generate(&sc).unwrap();
        let obs = dedupe_daily(&syn.events, &sc.window);
        let p = estimate_daily_use_interior(&stay_pairs(&stays(&obs))).unwrap();
        let base = daily_attendance(
            &count_unique_handsets(&obs),
            &syn.states,
            &AdjustmentFactors::new(0.713, p, 0.0).unwrap(),
        )
        .unwrap();
        let cal = calibrate_non_use(&base, &syn.projections).unwrap();
        assert_eq!(cal.days_used, sc.projection_days);
        devs.push(cal.non_use - 0.406);
    }
    let mean = devs.iter().sum::<f64>() / devs.len() as f64;
    let within = devs.iter().filter(|d| d.abs() <= 0.03).count();
    println!("mean deviation {mean:.4}, {within}/100 runs within 0.03");
    assert!(mean.abs() < 0.03);
    // Four projections at 5% noise give a per-run spread of about 0.017.
    assert!(within >= 85, "{within}");
}

/// Observed customers drawn binomially at 61M attendees with the reported
/// representation range; extrapolated shares must land within 10%.
#[test]
fn representation_recovered_across_reported_range() {
    let cfg = ScenarioConfig::standard(0, 61_000_000, 0.00018, 0.0745);
    let table = cfg.state_table().unwrap();
    let factors = AdjustmentFactors::default();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut distinct: BTreeMap<StateCode, u64> = BTreeMap::new();
    for s in &cfg.states {
        let n = (61e6 * s.representation).round() as u64;
        let p = factors.prevalence * s.market_share * (1.0 - factors.non_use);
        distinct.insert(s.code, Binomial::new(n, p).unwrap().sample(&mut rng));
    }
    let w = state_representation(&extrapolate_distinct(&distinct, &table, &factors).unwrap()).unwrap();
    for s in &cfg.states {
        let rel = (w[&s.code] - s.representation).abs() / s.representation;
        assert!(rel < 0.10, "state {}: {} vs {}", s.code, w[&s.code], s.representation);
    }
}
