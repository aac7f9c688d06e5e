//! Scratch calibration runs for the desk-scale acceptance parameters.

use std::time::Instant;

use topics_synth::exec::ExecMode;
use topics_synth::reid::{measure_reid_risk_mode, AttackKind, ReidOptions};
use topics_synth::simulator::{generate_population_mode, ApiConfig, PopulationConfig};
use topics_synth::stats::{count_marginals_mode, raw_statistics, release_dp_statistics, PrivacyParams};
use topics_synth::taxonomy::Taxonomy;
use topics_synth::trainer::{enumerate_terms, term_errors, train_mode, TrainConfig};
use topics_synth::validation::{distinct_topics_distribution, histogram_correlation, stationarity_report};

fn env_f64(name: &str, default: f64) -> f64 {
    std::env::var(name)
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(default)
}

fn pop_cfg(n: usize) -> PopulationConfig {
    PopulationConfig {
        n_users: n,
        n_archetypes: env_f64("ARCH", 15.0) as usize,
        zipf_exponent: env_f64("ZIPF", 1.2),
        dirichlet_concentration: env_f64("DIR", 0.15),
        persistence_rho: env_f64("RHO", 0.9),
    }
}

fn fit_quality(args: &[String]) {
    let epochs: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let types: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let batch: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(8192);
    let mode = ExecMode::default();
    let api = ApiConfig::new(0.05, 5, 2, Taxonomy::of_size(50).unwrap()).unwrap();
    let t0 = Instant::now();
    let pop = generate_population_mode(&pop_cfg(50_000), &api, 1001, mode).unwrap();
    let counts = count_marginals_mode(&pop, 50, 5, mode).unwrap();
    let targets = raw_statistics(&counts).unwrap();
    println!("population + stats: {:.1}s", t0.elapsed().as_secs_f64());

    let cfg = TrainConfig {
        types,
        batch_size: batch,
        learning_rate: lr,
        epochs,
        init_std: 0.001,
        seed: 2002,
        eval_every: 200,
        target_loss: None,
    };
    let t0 = Instant::now();
    let outcome = train_mode(&targets, 2, &cfg, mode).unwrap();
    println!(
        "train {} epochs lr {} T {}: {:.1}s, final J {:.3e}",
        epochs,
        lr,
        types,
        t0.elapsed().as_secs_f64(),
        outcome.log.last().unwrap().loss
    );

    let terms = enumerate_terms(&targets, 2).unwrap();
    let errors = term_errors(&outcome.params, &terms, mode).unwrap();
    let n = errors.len() as f64;
    let abs_ok = errors.iter().filter(|e| e.abs() < 0.005).count() as f64 / n;
    let mut rel_total = 0usize;
    let mut rel_ok = 0usize;
    for (err, term) in errors.iter().zip(&terms) {
        if term.target >= 0.001 {
            rel_total += 1;
            if (err / term.target).abs() <= 0.20 {
                rel_ok += 1;
            }
        }
    }
    println!(
        "abs<0.005: {:.4}; rel<=0.2 (target>=0.001): {:.4} ({} terms)",
        abs_ok,
        rel_ok as f64 / rel_total as f64,
        rel_total
    );
}

fn stationarity(_args: &[String]) {
    let mode = ExecMode::default();
    let api = ApiConfig::new(0.05, 5, 4, Taxonomy::of_size(50).unwrap()).unwrap();
    let pop = generate_population_mode(&pop_cfg(10_000), &api, 7001, mode).unwrap();
    let report = stationarity_report(&pop.sequences, 50, 5).unwrap();
    let min_of = |m: &Vec<Vec<f64>>| {
        m.iter()
            .flat_map(|row| row.iter().copied())
            .fold(1.0f64, f64::min)
    };
    println!(
        "min correlations: single {:.5} within {:.5} across {:.5}",
        min_of(&report.single),
        min_of(&report.within),
        min_of(&report.across)
    );
}

fn reid(args: &[String]) {
    let n: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let queries: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2048);
    let trials: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let types: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(50);
    let mode = ExecMode::default();
    let m = 50;
    let api = ApiConfig::new(0.05, 5, 4, Taxonomy::of_size(m).unwrap()).unwrap();

    let t0 = Instant::now();
    let pop = generate_population_mode(&pop_cfg(n), &api, 9001, mode).unwrap();
    println!("population: {:.1}s", t0.elapsed().as_secs_f64());

    let opts = ReidOptions {
        n_queries: queries,
        n_trials: trials,
        seed: 42,
        ..Default::default()
    };
    let t0 = Instant::now();
    let ham = measure_reid_risk_mode(&pop.sequences, &api, AttackKind::Hamming, &opts, mode).unwrap();
    println!(
        "source hamming: mean {:.5} sd {:.5} ({:.1}s)",
        ham.mean,
        ham.std_dev,
        t0.elapsed().as_secs_f64()
    );
    let t0 = Instant::now();
    let asym =
        measure_reid_risk_mode(&pop.sequences, &api, AttackKind::Asymmetric, &opts, mode).unwrap();
    println!(
        "source asymmetric: mean {:.5} sd {:.5} ({:.1}s)",
        asym.mean,
        asym.std_dev,
        t0.elapsed().as_secs_f64()
    );

    // DP statistics -> model -> synthetic, one trial
    let params = PrivacyParams::strict_default();
    let t0 = Instant::now();
    let bundle = release_dp_statistics(&pop, m, 5, &params, 51, mode).unwrap();
    println!("dp stats: {:.1}s", t0.elapsed().as_secs_f64());
    let mut synth_ham = Vec::new();
    let mut synth_asym = Vec::new();
    for trial in 0..trials {
        let cfg = TrainConfig {
            types,
            batch_size: 8192,
            learning_rate: 1.0,
            epochs,
            init_std: 0.001,
            seed: 5000 + trial as u64,
            eval_every: 500,
            target_loss: None,
        };
        let t0 = Instant::now();
        let outcome = train_mode(&bundle, 4, &cfg, mode).unwrap();
        let train_secs = t0.elapsed().as_secs_f64();
        let synth =
            topics_synth::model::sample_dataset_mode(&outcome.params, n, 6000 + trial as u64, mode)
                .unwrap();
        let one = ReidOptions {
            n_queries: queries,
            n_trials: 1,
            seed: 7000 + trial as u64,
            ..Default::default()
        };
        let h =
            measure_reid_risk_mode(&synth, &api, AttackKind::Hamming, &one, mode).unwrap();
        let a =
            measure_reid_risk_mode(&synth, &api, AttackKind::Asymmetric, &one, mode).unwrap();
        println!(
            "trial {trial}: J {:.3e} train {:.0}s synth hamming {:.5} asym {:.5}",
            outcome.log.last().unwrap().loss,
            train_secs,
            h.mean,
            a.mean
        );
        synth_ham.push(h.mean);
        synth_asym.push(a.mean);

        if trial == 0 {
            let hist_a = distinct_topics_distribution(&pop.sequences, 4).unwrap();
            let hist_raw = distinct_topics_distribution(&synth, 4).unwrap();
            let padded =
                topics_synth::reid::pad_population(&synth, &api, 999, mode).unwrap();
            let hist_pad = distinct_topics_distribution(&padded, 4).unwrap();
            println!(
                "distinct-topics correlation: raw {:.4} padded {:.4}",
                histogram_correlation(&hist_a, &hist_raw).unwrap(),
                histogram_correlation(&hist_a, &hist_pad).unwrap()
            );
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "synth hamming mean {:.5} vs source {:.5}; synth asym mean {:.5} vs source {:.5}",
        mean(&synth_ham),
        ham.mean,
        mean(&synth_asym),
        asym.mean
    );
}

fn source_risk(args: &[String]) {
    let n: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let queries: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10_240);
    let trials: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let mode = ExecMode::default();
    let api = ApiConfig::new(0.05, 5, 4, Taxonomy::of_size(50).unwrap()).unwrap();
    let pop = generate_population_mode(&pop_cfg(n), &api, 9001, mode).unwrap();
    let opts = ReidOptions {
        n_queries: queries,
        n_trials: trials,
        seed: 42,
        ..Default::default()
    };
    for attack in [AttackKind::Hamming, AttackKind::Asymmetric] {
        let r = measure_reid_risk_mode(&pop.sequences, &api, attack, &opts, mode).unwrap();
        println!("source {}: mean {:.5} sd {:.5}", r.attack, r.mean, r.std_dev);
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match args.first().map(String::as_str) {
        Some("fit") => fit_quality(&args[1..]),
        Some("stationarity") => stationarity(&args[1..]),
        Some("reid") => reid(&args[1..]),
        Some("source") => source_risk(&args[1..]),
        _ => eprintln!("usage: desk_experiments fit|stationarity|reid|source [args]"),
    }
}
