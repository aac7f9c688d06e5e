//! Statistical invariants of the re-identification harness at desk scale.

use topics_synth::exec::ExecMode;
use topics_synth::reid::{measure_reid_risk_mode, AttackKind, ReidOptions};
use topics_synth::simulator::{generate_population_mode, ApiConfig, PopulationConfig};
use topics_synth::taxonomy::Taxonomy;

fn population(n: usize, weeks: usize, seed: u64) -> (Vec<topics_synth::TopicSetSequence>, ApiConfig) {
    let api = ApiConfig::new(0.05, 5, weeks, Taxonomy::of_size(30).unwrap()).unwrap();
    let cfg = PopulationConfig {
        n_users: n,
        n_archetypes: 10,
        zipf_exponent: 1.2,
        dirichlet_concentration: 0.3,
        persistence_rho: 0.5,
    };
    let pop = generate_population_mode(&cfg, &api, seed, ExecMode::default()).unwrap();
    (pop.sequences, api)
}

fn risk(
    sequences: &[topics_synth::TopicSetSequence],
    api: &ApiConfig,
    queries: usize,
    trials: usize,
) -> (f64, f64) {
    let opts = ReidOptions {
        n_queries: queries,
        n_trials: trials,
        holdout_frac: 0.0,
        seed: 33,
        ..Default::default()
    };
    let report =
        measure_reid_risk_mode(sequences, api, AttackKind::Hamming, &opts, ExecMode::default())
            .unwrap();
    (report.mean, report.std_dev)
}

#[test]
fn risk_non_increasing_in_population_size() {
    // re-identifying a user is simpler among fewer other users
    let (pop, api) = population(8000, 4, 91);
    let mut previous: Option<(f64, f64)> = None;
    for n in [100usize, 1000, 8000] {
        let (mean, sd) = risk(&pop[..n], &api, 2048, 3);
        if let Some((prev_mean, prev_sd)) = previous {
            // allow overlapping confidence intervals
            let slack = 2.0 * (prev_sd + sd) + 1e-9;
            assert!(
                mean <= prev_mean + slack,
                "risk grew with population size: {prev_mean:.4} -> {mean:.4} at n = {n}"
            );
        }
        previous = Some((mean, sd));
    }
}

#[test]
fn risk_non_decreasing_in_weeks() {
    // more observed weeks give the attacker more signal
    let (pop, _) = population(3000, 4, 92);
    let mut previous: Option<(f64, f64)> = None;
    for weeks in [1usize, 2, 4] {
        let api = ApiConfig::new(0.05, 5, weeks, Taxonomy::of_size(30).unwrap()).unwrap();
        let (mean, sd) = risk(&pop, &api, 2048, 3);
        if let Some((prev_mean, prev_sd)) = previous {
            let slack = 2.0 * (prev_sd + sd) + 1e-9;
            assert!(
                mean + slack >= prev_mean,
                "risk fell with more weeks: {prev_mean:.4} -> {mean:.4} at r = {weeks}"
            );
        }
        previous = Some((mean, sd));
    }
}
