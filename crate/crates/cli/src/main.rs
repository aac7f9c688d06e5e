//! Command-line front end: simulate, extract-stats, fit, sample, attack,
//! validate, and the end-to-end pipeline.
//!
//! Exit codes: 0 success, 2 configuration error, 3 stage failure, 4 DP
//! boundary violation (model fitting or sampling pointed at raw population
//! data).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use topics_synth::error::{Error, Result};
use topics_synth::io;
use topics_synth::pipeline::{self, PipelineConfig};
use topics_synth::reid::{self, AttackKind, ReidOptions};
use topics_synth::simulator::{self, ApiConfig, PopulationConfig};
use topics_synth::stats::{self, CountRelease, PrivacyParams};
use topics_synth::taxonomy::{Taxonomy, TopicSetSequence};
use topics_synth::trainer::{self, TrainConfig};
use topics_synth::ExecMode;

#[derive(Parser)]
#[command(
    name = "topics-synth",
    version,
    about = "Differentially private synthetic traces for the Topics API"
)]
struct Cli {
    /// Pipeline configuration file (TOML); used by `pipeline`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; every stage derives child seeds from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker-thread cap for parallel sections.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Deterministic outputs: omit wall-clock timings from emitted files.
    #[arg(long, global = true, default_value_t = false)]
    deterministic: bool,

    /// Output directory for commands that emit multiple files.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// quiet, info, or debug.
    #[arg(long, global = true, default_value = "info")]
    log_level: LogLevel,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, PartialOrd, ValueEnum)]
enum LogLevel {
    Quiet,
    Info,
    Debug,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackChoice {
    Hamming,
    Asymmetric,
}

impl From<AttackChoice> for AttackKind {
    fn from(a: AttackChoice) -> Self {
        match a {
            AttackChoice::Hamming => AttackKind::Hamming,
            AttackChoice::Asymmetric => AttackKind::Asymmetric,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ground-truth population and its API traces.
    Simulate(SimulateArgs),
    /// Count pair marginals and release them with the Gaussian mechanism.
    ExtractStats(ExtractArgs),
    /// Fit the mixture model to released statistics.
    Fit(FitArgs),
    /// Sample synthetic sequences from a model checkpoint.
    Sample(SampleArgs),
    /// Measure re-identification risk on a sequence file.
    Attack(AttackArgs),
    /// Compare two datasets against released statistics.
    Validate(ValidateArgs),
    /// Run the whole pipeline from a TOML config.
    Pipeline,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 10_000)]
    users: usize,
    #[arg(long, default_value_t = 20)]
    archetypes: usize,
    /// Zipf exponent of archetype popularity.
    #[arg(long, default_value_t = 1.2)]
    zipf: f64,
    /// Symmetric Dirichlet concentration of archetype topic weights.
    #[arg(long, default_value_t = 0.2)]
    dirichlet: f64,
    /// Week-over-week topic retention probability.
    #[arg(long, default_value_t = 0.9)]
    rho: f64,
    #[arg(long, default_value_t = 4)]
    weeks: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Probability the API returns a uniformly random topic.
    #[arg(long, default_value_t = 0.05)]
    p: f64,
    #[arg(long, default_value_t = 469)]
    taxonomy_size: usize,
    #[arg(long)]
    out_sequences: PathBuf,
    /// Also observe traces on `--sites` sites and write them here.
    #[arg(long)]
    out_traces: Option<PathBuf>,
    /// Number of sites to observe when emitting traces.
    #[arg(long, default_value_t = 2)]
    sites: usize,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    in_sequences: PathBuf,
    #[arg(long, default_value_t = 3f64.ln())]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-15)]
    delta: f64,
    /// Budget fractions for f11,f22,f12 (comma separated).
    #[arg(long, default_value = "0.25,0.25,0.5")]
    split: String,
    /// Skip noise entirely (testing; the release is NOT private).
    #[arg(long, default_value_t = false)]
    no_noise: bool,
    /// dp: spend a budget slice on a noisy user count; public: exact count.
    #[arg(long, value_enum, default_value_t = CountChoice::Dp)]
    count_release: CountChoice,
    /// Budget fraction of the DP count release.
    #[arg(long, default_value_t = 0.01)]
    count_budget_frac: f64,
    /// Taxonomy size; inferred from the data when omitted.
    #[arg(long)]
    taxonomy_size: Option<usize>,
    /// Top-set size; inferred from the data when omitted.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CountChoice {
    Dp,
    Public,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    stats_dir: PathBuf,
    #[arg(long, default_value_t = 500)]
    types: usize,
    #[arg(long, default_value_t = 4)]
    weeks: usize,
    /// Slots per week; defaults to the released statistics' k.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 8192)]
    batch_size: usize,
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    #[arg(long, default_value_t = 8000)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    init_std: f64,
    #[arg(long, default_value_t = 50)]
    eval_every: usize,
    /// Stop once the evaluation objective drops below this.
    #[arg(long)]
    target_loss: Option<f64>,
    #[arg(long)]
    out_model: PathBuf,
    /// Training-log CSV path; defaults next to the model.
    #[arg(long)]
    out_log: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    n: usize,
    /// Pad undersized sampled sets to k on export.
    #[arg(long, default_value_t = false)]
    pad: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    /// Sequence file to attack (simulated source or synthetic).
    #[arg(long)]
    in_sequences: PathBuf,
    #[arg(long, value_enum)]
    attack: AttackChoice,
    #[arg(long, default_value_t = 10_240)]
    queries: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Restrict to the first N users of the file.
    #[arg(long)]
    population: Option<usize>,
    #[arg(long, default_value_t = 4)]
    weeks: usize,
    #[arg(long, default_value_t = 0.05)]
    p: f64,
    /// Smoothing of the asymmetric weight estimates.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    holdout_frac: f64,
    /// Cross-site pairs observed per trial for weight learning.
    #[arg(long, default_value_t = 4)]
    weight_site_pairs: usize,
    /// Taxonomy size; inferred from the data when omitted.
    #[arg(long)]
    taxonomy_size: Option<usize>,
    #[arg(long)]
    out_report: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Source dataset (JSONL sequences).
    #[arg(long)]
    in_a: PathBuf,
    /// Comparison dataset (JSONL sequences).
    #[arg(long)]
    in_b: PathBuf,
    #[arg(long)]
    stats_dir: PathBuf,
    /// Weeks of the distinct-topics histogram.
    #[arg(long, default_value_t = 4)]
    weeks: usize,
    #[arg(long, default_value_t = 0.001)]
    rel_threshold: f64,
}

fn parse_split(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidConfig(format!("bad --split value {s:?}")))?;
    if parts.len() != 3 {
        return Err(Error::InvalidConfig(
            "--split needs exactly three comma-separated fractions".into(),
        ));
    }
    Ok([parts[0], parts[1], parts[2]])
}

/// Largest set size and topic id present in the data.
fn infer_shape(sequences: &[TopicSetSequence]) -> (usize, usize) {
    let mut k = 0usize;
    let mut m = 0usize;
    for seq in sequences {
        for set in &seq.sets {
            k = k.max(set.len());
            for t in set.iter() {
                m = m.max(t.get() as usize);
            }
        }
    }
    (k, m.max(2))
}

struct Logger {
    level: LogLevel,
}

impl Logger {
    fn info(&self, msg: impl AsRef<str>) {
        if self.level >= LogLevel::Info {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let log = Logger {
        level: cli.log_level,
    };
    let mode = ExecMode::default();
    match cli.command {
        Command::Simulate(args) => {
            let api = ApiConfig::new(
                args.p,
                args.k,
                args.weeks,
                Taxonomy::of_size(args.taxonomy_size)?,
            )?;
            let pop_cfg = PopulationConfig {
                n_users: args.users,
                n_archetypes: args.archetypes,
                zipf_exponent: args.zipf,
                dirichlet_concentration: args.dirichlet,
                persistence_rho: args.rho,
            };
            let pop = simulator::generate_population_mode(&pop_cfg, &api, cli.seed, mode)?;
            io::write_sequences(&args.out_sequences, &pop.sequences)?;
            log.info(format!(
                "wrote {} sequences to {}",
                pop.n_users(),
                args.out_sequences.display()
            ));
            if let Some(out_traces) = args.out_traces {
                let mut traces = Vec::with_capacity(pop.n_users() * args.sites);
                for site_idx in 0..args.sites {
                    let site = format!("site-{site_idx}");
                    traces.extend(simulator::observe_population(&pop, &site, &api, mode)?);
                }
                io::write_traces(&out_traces, &traces)?;
                log.info(format!(
                    "wrote {} traces ({} sites) to {}",
                    traces.len(),
                    args.sites,
                    out_traces.display()
                ));
            }
            Ok(())
        }

        Command::ExtractStats(args) => {
            let out_dir = cli.out_dir.ok_or_else(|| {
                Error::InvalidConfig("extract-stats needs --out-dir".into())
            })?;
            let sequences = io::read_sequences(&args.in_sequences)?;
            let (k_inferred, m_inferred) = infer_shape(&sequences);
            let k = args.k.unwrap_or(k_inferred);
            let m = args.taxonomy_size.unwrap_or(m_inferred);
            let pop = simulator::GroundTruthPopulation { sequences };
            let params = PrivacyParams {
                epsilon: args.epsilon,
                delta: args.delta,
                budget_split: parse_split(&args.split)?,
                count_release: match args.count_release {
                    CountChoice::Dp => CountRelease::Dp,
                    CountChoice::Public => CountRelease::Public,
                },
                count_budget_frac: args.count_budget_frac,
            };
            let bundle = if args.no_noise {
                let counts = stats::count_marginals_mode(&pop, m, k, mode)?;
                stats::raw_statistics(&counts)?
            } else {
                stats::release_dp_statistics(&pop, m, k, &params, cli.seed, mode)?
            };
            let n_users = match &bundle.provenance {
                stats::Provenance::Dp { n_users_dp, .. } => *n_users_dp,
                stats::Provenance::Raw => pop.n_users() as f64,
            };
            io::write_statistics(&out_dir, &bundle, n_users)?;
            log.info(format!(
                "released statistics over {m} topics (k = {k}) to {}",
                out_dir.display()
            ));
            Ok(())
        }

        Command::Fit(args) => {
            io::refuse_population_input(&args.stats_dir)?;
            let (bundle, meta) = io::load_statistics(&args.stats_dir)?;
            let mut bundle = bundle;
            if let Some(k) = args.k {
                bundle.k = k;
            }
            let cfg = TrainConfig {
                types: args.types,
                batch_size: args.batch_size,
                learning_rate: args.lr,
                epochs: args.epochs,
                init_std: args.init_std,
                seed: cli.seed,
                eval_every: args.eval_every,
                target_loss: args.target_loss,
            };
            log.info(format!(
                "fitting {} types x {} weeks x {} slots x {} topics ({} terms)",
                cfg.types,
                args.weeks,
                bundle.k,
                meta.taxonomy_size,
                trainer::term_count(args.weeks, meta.taxonomy_size)
            ));
            let outcome = trainer::train_mode(&bundle, args.weeks, &cfg, mode)?;
            topics_synth::model::save_checkpoint(&outcome.params, cfg.seed, &args.out_model)?;
            let log_path = args
                .out_log
                .unwrap_or_else(|| args.out_model.with_extension("train.csv"));
            io::write_training_log(&log_path, &outcome.log, !cli.deterministic)?;
            if let Some(last) = outcome.log.last() {
                log.info(format!(
                    "final objective {:.3e} after epoch {}",
                    last.loss, last.epoch
                ));
            }
            Ok(())
        }

        Command::Sample(args) => {
            pipeline::sample_command(&args.model, args.n, cli.seed, args.pad, &args.out, mode)?;
            log.info(format!("wrote {} sequences to {}", args.n, args.out.display()));
            Ok(())
        }

        Command::Attack(args) => {
            let mut sequences = io::read_sequences(&args.in_sequences)?;
            if let Some(n) = args.population {
                if n > sequences.len() {
                    return Err(Error::InvalidConfig(format!(
                        "--population {n} exceeds the {} users in the file",
                        sequences.len()
                    )));
                }
                sequences.truncate(n);
            }
            let (k, m_inferred) = infer_shape(&sequences);
            let m = args.taxonomy_size.unwrap_or(m_inferred);
            let api = ApiConfig::new(args.p, k, args.weeks, Taxonomy::of_size(m)?)?;
            let opts = ReidOptions {
                n_queries: args.queries,
                n_trials: args.trials,
                holdout_frac: args.holdout_frac,
                alpha: args.alpha,
                weight_site_pairs: args.weight_site_pairs,
                seed: cli.seed,
                ..Default::default()
            };
            let report = reid::measure_reid_risk_mode(
                &sequences,
                &api,
                args.attack.into(),
                &opts,
                mode,
            )?;
            pipeline::write_report(&args.out_report, &report)?;
            log.info(format!(
                "{} attack on {} users: mean risk {:.5} (sd {:.5})",
                report.attack, report.population, report.mean, report.std_dev
            ));
            Ok(())
        }

        Command::Validate(args) => {
            let out_dir = cli
                .out_dir
                .ok_or_else(|| Error::InvalidConfig("validate needs --out-dir".into()))?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let outputs = pipeline::validate_command(
                &args.in_a,
                &args.in_b,
                &args.stats_dir,
                args.rel_threshold,
                args.weeks,
                &out_dir,
            )?;
            for path in outputs {
                log.info(format!("wrote {}", path.display()));
            }
            Ok(())
        }

        Command::Pipeline => {
            let config_path = cli
                .config
                .ok_or_else(|| Error::InvalidConfig("pipeline needs --config".into()))?;
            let mut cfg = PipelineConfig::from_toml_file(&config_path)?;
            if let Some(out_dir) = cli.out_dir {
                cfg.out_dir = out_dir;
            }
            if cli.seed != 0 {
                cfg.seed = cli.seed;
            }
            if cli.deterministic {
                cfg.deterministic = true;
            }
            let manifest = pipeline::run_pipeline_mode(&cfg, mode)?;
            for stage in &manifest.stages {
                let files = stage.outputs.len();
                match stage.wall_secs {
                    Some(secs) => log.info(format!(
                        "stage {:<14} {files} file(s) in {secs:.2}s",
                        stage.name
                    )),
                    None => log.info(format!("stage {:<14} {files} file(s)", stage.name)),
                }
            }
            log.info(format!(
                "manifest written to {}",
                cfg.out_dir.join(pipeline::MANIFEST_FILE).display()
            ));
            Ok(())
        }
    }
}


fn main() -> ExitCode {
    let cli = Cli::parse();

    #[cfg(feature = "parallel")]
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
        {
            eprintln!("error: could not configure {jobs} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = cli.jobs;

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
