//! End-to-end orchestration: simulate, extract statistics, fit, sample,
//! attack, validate. Every stage reads only files produced by earlier
//! stages; the fitting and sampling stages in particular accept only the
//! released statistics and model checkpoints, never raw population files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::io;
use crate::model;
use crate::reid::{self, AttackKind, ReidOptions, ReidReport};
use crate::rng::child_seed;
use crate::simulator::{self, ApiConfig, PopulationConfig};
use crate::stats::{self, CountRelease, PrivacyParams};
use crate::taxonomy::Taxonomy;
use crate::trainer::{self, TrainConfig};
use crate::validation;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiSection {
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_weeks")]
    pub weeks: usize,
    pub taxonomy_size: usize,
}

fn default_p() -> f64 {
    0.05
}
fn default_k() -> usize {
    5
}
fn default_weeks() -> usize {
    4
}

impl ApiSection {
    pub fn to_config(&self) -> Result<ApiConfig> {
        ApiConfig::new(self.p, self.k, self.weeks, Taxonomy::of_size(self.taxonomy_size)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySection {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_split")]
    pub budget_split: [f64; 3],
    #[serde(default = "default_count_release")]
    pub count_release: CountRelease,
    #[serde(default = "default_count_frac")]
    pub count_budget_frac: f64,
    /// Skip noise entirely (testing only; the release is not DP).
    #[serde(default)]
    pub no_noise: bool,
}

fn default_epsilon() -> f64 {
    3f64.ln()
}
fn default_delta() -> f64 {
    1e-15
}
fn default_split() -> [f64; 3] {
    [0.25, 0.25, 0.50]
}
fn default_count_release() -> CountRelease {
    CountRelease::Dp
}
fn default_count_frac() -> f64 {
    0.01
}

impl Default for PrivacySection {
    fn default() -> Self {
        PrivacySection {
            epsilon: default_epsilon(),
            delta: default_delta(),
            budget_split: default_split(),
            count_release: default_count_release(),
            count_budget_frac: default_count_frac(),
            no_noise: false,
        }
    }
}

impl PrivacySection {
    pub fn to_params(&self) -> PrivacyParams {
        PrivacyParams {
            epsilon: self.epsilon,
            delta: self.delta,
            budget_split: self.budget_split,
            count_release: self.count_release,
            count_budget_frac: self.count_budget_frac,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub types: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub target_loss: Option<f64>,
    /// Override the statistics input (defaults to this run's extract output).
    #[serde(default)]
    pub stats_dir: Option<PathBuf>,
}

fn default_batch() -> usize {
    8192
}
fn default_lr() -> f64 {
    1.0
}
fn default_init_std() -> f64 {
    0.001
}
fn default_eval_every() -> usize {
    50
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub n_users: usize,
    #[serde(default = "default_pad")]
    pub pad: bool,
}

fn default_pad() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    #[serde(default = "default_queries")]
    pub queries: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_holdout")]
    pub holdout_frac: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_site_pairs")]
    pub weight_site_pairs: usize,
    #[serde(default = "default_attacks")]
    pub attacks: Vec<AttackKind>,
}

fn default_queries() -> usize {
    10_240
}
fn default_trials() -> usize {
    10
}
fn default_holdout() -> f64 {
    0.1
}
fn default_alpha() -> f64 {
    1.0
}
fn default_site_pairs() -> usize {
    4
}
fn default_attacks() -> Vec<AttackKind> {
    vec![AttackKind::Hamming, AttackKind::Asymmetric]
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            queries: default_queries(),
            trials: default_trials(),
            holdout_frac: default_holdout(),
            alpha: default_alpha(),
            weight_site_pairs: default_site_pairs(),
            attacks: default_attacks(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    #[serde(default = "default_rel_threshold")]
    pub rel_threshold: f64,
    /// Weeks of the distinct-topics histogram (capped at the trace length).
    #[serde(default = "default_weeks")]
    pub distinct_weeks: usize,
}

fn default_rel_threshold() -> f64 {
    0.001
}

impl Default for ValidateSection {
    fn default() -> Self {
        ValidateSection {
            rel_threshold: default_rel_threshold(),
            distinct_weeks: default_weeks(),
        }
    }
}

/// The whole pipeline configuration (TOML).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default)]
    pub deterministic: bool,
    pub out_dir: PathBuf,
    pub api: ApiSection,
    pub population: PopulationConfig,
    #[serde(default)]
    pub privacy: PrivacySection,
    pub train: TrainSection,
    pub sample: SampleSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub validate: ValidateSection,
}

impl PipelineConfig {
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    fn stage_seed(&self, stage: &str) -> u64 {
        child_seed(self.seed, stage, 0)
    }
}

/// Digest of one produced file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// One stage's record in the manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub outputs: Vec<FileDigest>,
    /// Wall time; omitted in deterministic mode to keep replays
    /// byte-identical.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_secs: Option<f64>,
}

/// The run manifest: config snapshot, stage outputs with digests, version.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub deterministic: bool,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn digest_outputs(out_dir: &Path, paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            let bytes = std::fs::metadata(p).map_err(|e| Error::io(p, e))?.len();
            Ok(FileDigest {
                path: p
                    .strip_prefix(out_dir)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .into_owned(),
                sha256: io::sha256_file(p)?,
                bytes,
            })
        })
        .collect()
}

fn stage_failure(stage: &str, e: Error) -> Error {
    Error::StageFailure {
        stage: stage.to_string(),
        source: Box::new(e),
    }
}

/// Verify that every file recorded in a manifest still matches its digest.
pub fn verify_manifest(out_dir: impl AsRef<Path>) -> Result<()> {
    let out_dir = out_dir.as_ref();
    let path = out_dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, format!("{e}")))?;
    for stage in &manifest.stages {
        for file in &stage.outputs {
            let p = out_dir.join(&file.path);
            let actual = io::sha256_file(&p)?;
            if actual != file.sha256 {
                return Err(Error::ManifestIntegrity(format!(
                    "{} changed since the run (stage {})",
                    file.path, stage.name
                )));
            }
        }
    }
    Ok(())
}

/// Run the full pipeline. Returns the manifest, which is also written to
/// `out_dir/manifest.json`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunManifest> {
    run_pipeline_mode(cfg, ExecMode::default())
}

/// [`run_pipeline`] with an explicit execution mode.
pub fn run_pipeline_mode(cfg: &PipelineConfig, mode: ExecMode) -> Result<RunManifest> {
    let out_dir = &cfg.out_dir;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let api = cfg.api.to_config()?;
    cfg.population.validate()?;

    let mut stages: Vec<StageRecord> = Vec::new();
    let mut record = |name: &str, started: Instant, outputs: Vec<PathBuf>| -> Result<()> {
        stages.push(StageRecord {
            name: name.into(),
            outputs: digest_outputs(out_dir, &outputs)?,
            wall_secs: (!cfg.deterministic).then(|| started.elapsed().as_secs_f64()),
        });
        Ok(())
    };

    // 1. simulate
    let population_path = out_dir.join("population.jsonl");
    {
        let started = Instant::now();
        let pop = simulator::generate_population_mode(
            &cfg.population,
            &api,
            cfg.stage_seed("simulate"),
            mode,
        )
        .map_err(|e| stage_failure("simulate", e))?;
        io::write_sequences(&population_path, &pop.sequences)
            .map_err(|e| stage_failure("simulate", e))?;
        record("simulate", started, vec![population_path.clone()])?;
    }

    // 2. extract-stats
    let stats_dir = out_dir.join("stats");
    {
        let started = Instant::now();
        let run = || -> Result<()> {
            let sequences = io::read_sequences(&population_path)?;
            let pop = simulator::GroundTruthPopulation { sequences };
            let params = cfg.privacy.to_params();
            let seed = cfg.stage_seed("extract-stats");
            let bundle = if cfg.privacy.no_noise {
                let counts = stats::count_marginals_mode(&pop, api.taxonomy.size, api.k, mode)?;
                stats::raw_statistics(&counts)?
            } else {
                stats::release_dp_statistics(&pop, api.taxonomy.size, api.k, &params, seed, mode)?
            };
            let n_users = match &bundle.provenance {
                stats::Provenance::Dp { n_users_dp, .. } => *n_users_dp,
                stats::Provenance::Raw => pop.n_users() as f64,
            };
            io::write_statistics(&stats_dir, &bundle, n_users)
        };
        run().map_err(|e| stage_failure("extract-stats", e))?;
        record(
            "extract-stats",
            started,
            io::stats_dir_files(&stats_dir),
        )?;
    }

    // 3. fit
    let model_path = out_dir.join("model.bin");
    let train_log_path = out_dir.join("train_log.csv");
    {
        let started = Instant::now();
        let run = || -> Result<()> {
            let stats_input = cfg.train.stats_dir.as_deref().unwrap_or(&stats_dir);
            io::refuse_population_input(stats_input)?;
            let (bundle, _meta) = io::load_statistics(stats_input)?;
            let train_cfg = TrainConfig {
                types: cfg.train.types,
                batch_size: cfg.train.batch_size,
                learning_rate: cfg.train.learning_rate,
                epochs: cfg.train.epochs,
                init_std: cfg.train.init_std,
                seed: cfg.stage_seed("fit"),
                eval_every: cfg.train.eval_every,
                target_loss: cfg.train.target_loss,
            };
            let outcome = trainer::train_mode(&bundle, api.weeks, &train_cfg, mode)?;
            model::save_checkpoint(&outcome.params, train_cfg.seed, &model_path)?;
            io::write_training_log(&train_log_path, &outcome.log, !cfg.deterministic)
        };
        run().map_err(|e| stage_failure("fit", e))?;
        record(
            "fit",
            started,
            vec![model_path.clone(), train_log_path.clone()],
        )?;
    }

    // 4. sample
    let synthetic_path = out_dir.join("synthetic.jsonl");
    {
        let started = Instant::now();
        sample_command(
            &model_path,
            cfg.sample.n_users,
            cfg.stage_seed("sample"),
            cfg.sample.pad,
            &synthetic_path,
            mode,
        )
        .map_err(|e| stage_failure("sample", e))?;
        record("sample", started, vec![synthetic_path.clone()])?;
    }

    // 5. attack, on the simulated source data and on the synthetic data
    let mut attack_outputs = Vec::new();
    {
        let started = Instant::now();
        let run = |attack_outputs: &mut Vec<PathBuf>| -> Result<()> {
            for (label, data_path) in
                [("source", &population_path), ("synthetic", &synthetic_path)]
            {
                let sequences = io::read_sequences(data_path)?;
                for &attack in &cfg.attack.attacks {
                    let opts = ReidOptions {
                        n_queries: cfg.attack.queries,
                        n_trials: cfg.attack.trials,
                        holdout_frac: cfg.attack.holdout_frac,
                        alpha: cfg.attack.alpha,
                        weight_site_pairs: cfg.attack.weight_site_pairs,
                        seed: cfg.stage_seed(&format!("attack-{label}")),
                        ..Default::default()
                    };
                    let report =
                        reid::measure_reid_risk_mode(&sequences, &api, attack, &opts, mode)?;
                    let path =
                        out_dir.join(format!("attack_{label}_{}.json", attack.name()));
                    write_report(&path, &report)?;
                    attack_outputs.push(path);
                }
            }
            Ok(())
        };
        run(&mut attack_outputs).map_err(|e| stage_failure("attack", e))?;
        record("attack", started, attack_outputs)?;
    }

    // 6. validate
    let validate_outputs;
    {
        let started = Instant::now();
        validate_outputs = validate_command(
            &population_path,
            &synthetic_path,
            &stats_dir,
            cfg.validate.rel_threshold,
            cfg.validate.distinct_weeks.min(api.weeks),
            out_dir,
        )
        .map_err(|e| stage_failure("validate", e))?;
        record("validate", started, validate_outputs)?;
    }

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        deterministic: cfg.deterministic,
        config: cfg.clone(),
        stages,
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::parse(&manifest_path, format!("{e}")))?;
    std::fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

/// Write one re-identification report as JSON.
pub fn write_report(path: &Path, report: &ReidReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::parse(path, format!("{e}")))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Sample a synthetic dataset from a checkpoint into a JSONL file.
/// Refuses raw population files in place of a checkpoint.
pub fn sample_command(
    model_path: &Path,
    n: usize,
    seed: u64,
    pad: bool,
    out_path: &Path,
    mode: ExecMode,
) -> Result<()> {
    io::refuse_population_input(model_path)?;
    let (params, _) = model::load_checkpoint(model_path)?;
    let mut sequences = model::sample_dataset_mode(&params, n, seed, mode)?;
    if pad {
        let api = ApiConfig::new(0.0, params.slots, params.weeks, Taxonomy::of_size(params.m)?)?;
        sequences = reid::pad_population(&sequences, &api, child_seed(seed, "pad-export", 0), mode)?;
    }
    io::write_sequences(out_path, &sequences)
}

/// Run the validation analyses and emit the plot-ready CSV tables.
pub fn validate_command(
    in_a: &Path,
    in_b: &Path,
    stats_dir: &Path,
    rel_threshold: f64,
    distinct_weeks: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let source = io::read_sequences(in_a)?;
    let synthetic = io::read_sequences(in_b)?;
    let (targets, _meta) = io::load_statistics(stats_dir)?;

    // synthetic empirical statistics vs released targets
    let synth_pop = simulator::GroundTruthPopulation {
        sequences: synthetic.clone(),
    };
    let counts = stats::count_marginals(&synth_pop, targets.m, targets.k)?;
    let empirical = stats::raw_statistics(&counts)?;
    let errors = validation::statistic_errors(&empirical, &targets, rel_threshold)?;

    let mut outputs = Vec::new();

    let cdf_path = out_dir.join("error_cdf.csv");
    let thresholds: Vec<f64> = (0..=60).map(|i| 10f64.powf(-6.0 + 0.1 * i as f64)).collect();
    io::write_csv_rows(
        &cdf_path,
        "threshold,fraction",
        errors
            .abs_cdf_points(&thresholds)
            .into_iter()
            .map(|(t, f)| format!("{t},{f}")),
    )?;
    outputs.push(cdf_path);

    let hist_path = out_dir.join("error_hist.csv");
    let max_abs = errors
        .signed
        .iter()
        .fold(0.0f64, |a, e| a.max(e.abs()))
        .max(1e-12);
    let bins = 80usize;
    let width = 2.0 * max_abs / bins as f64;
    let mut hist = vec![0usize; bins];
    for &e in &errors.signed {
        let idx = (((e + max_abs) / width) as usize).min(bins - 1);
        hist[idx] += 1;
    }
    io::write_csv_rows(
        &hist_path,
        "bin_low,bin_high,count",
        hist.iter().enumerate().map(|(i, c)| {
            format!(
                "{},{},{c}",
                -max_abs + i as f64 * width,
                -max_abs + (i + 1) as f64 * width
            )
        }),
    )?;
    outputs.push(hist_path);

    // stationarity of the source data
    let report = validation::stationarity_report(&source, targets.m, targets.k)?;
    for (name, matrix) in [
        ("stationarity_single.csv", &report.single),
        ("stationarity_within.csv", &report.within),
        ("stationarity_across.csv", &report.across),
    ] {
        let path = out_dir.join(name);
        let mut rows = Vec::new();
        for (i, row) in matrix.iter().enumerate() {
            for (j, r) in row.iter().enumerate().skip(i) {
                rows.push(format!("{i},{j},{r}"));
            }
        }
        io::write_csv_rows(&path, "period_a,period_b,correlation", rows)?;
        outputs.push(path);
    }

    // distinct-topics histograms of both datasets
    let weeks = distinct_weeks.max(1);
    let hist_a = validation::distinct_topics_distribution(&source, weeks)?;
    let hist_b = validation::distinct_topics_distribution(&synthetic, weeks)?;
    let len = hist_a.len().max(hist_b.len());
    let at = |h: &[f64], i: usize| h.get(i).copied().unwrap_or(0.0);
    let path = out_dir.join("distinct_topics.csv");
    io::write_csv_rows(
        &path,
        "distinct,fraction_a,fraction_b",
        (0..len).map(|i| format!("{i},{},{}", at(&hist_a, i), at(&hist_b, i))),
    )?;
    outputs.push(path);

    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config(out_dir: PathBuf) -> PipelineConfig {
        PipelineConfig {
            seed: 7,
            deterministic: true,
            out_dir,
            api: ApiSection {
                p: 0.05,
                k: 3,
                weeks: 3,
                taxonomy_size: 10,
            },
            population: PopulationConfig {
                n_users: 300,
                n_archetypes: 5,
                zipf_exponent: 1.1,
                dirichlet_concentration: 0.3,
                persistence_rho: 0.8,
            },
            privacy: PrivacySection {
                no_noise: false,
                ..Default::default()
            },
            train: TrainSection {
                types: 8,
                batch_size: 512,
                learning_rate: 0.3,
                epochs: 60,
                init_std: 0.001,
                eval_every: 20,
                target_loss: None,
                stats_dir: None,
            },
            sample: SampleSection {
                n_users: 300,
                pad: true,
            },
            attack: AttackSection {
                queries: 64,
                trials: 2,
                ..Default::default()
            },
            validate: ValidateSection::default(),
        }
    }

    #[test]
    fn tiny_pipeline_smoke() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path().join("run"));
        let manifest = run_pipeline(&cfg).unwrap();
        assert_eq!(manifest.stages.len(), 6);
        let names: Vec<&str> = manifest.stages.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(
            names,
            ["simulate", "extract-stats", "fit", "sample", "attack", "validate"]
        );
        verify_manifest(&cfg.out_dir).unwrap();
    }

    #[test]
    fn manifest_detects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path().join("run"));
        run_pipeline(&cfg).unwrap();
        // flip one byte of an intermediate file
        let victim = cfg.out_dir.join("synthetic.jsonl");
        let mut bytes = std::fs::read(&victim).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        std::fs::write(&victim, bytes).unwrap();
        assert!(matches!(
            verify_manifest(&cfg.out_dir),
            Err(Error::ManifestIntegrity(_))
        ));
    }

    #[test]
    fn fit_refuses_population_input() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path().join("run"));
        // first run produces a population file
        run_pipeline(&cfg).unwrap();
        // now point the fit stage at the raw population
        cfg.out_dir = dir.path().join("run2");
        cfg.train.stats_dir = Some(dir.path().join("run/population.jsonl"));
        let err = run_pipeline(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 4, "unexpected error: {err}");
    }
}
