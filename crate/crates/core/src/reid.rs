//! Cross-site re-identification attacks and the risk-measurement game.
//!
//! The attacker sees every user's trace on site `w1` (the attack table). A
//! uniformly random user's trace on a second site `w2` is revealed, and the
//! attacker must name the user. The Hamming attack picks the table row with
//! the fewest per-week topic mismatches; the asymmetric variant scores each
//! week with a learned cost `w[topic on w1][topic on w2]` and picks the row
//! with the smallest total. Ties break uniformly at random.
//!
//! Risk is the fraction of correctly identified queries, averaged over
//! independent trials.

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indices, ExecMode, USER_CHUNK};
use crate::rng::{child_rng, SeededRng};
use crate::simulator::{observe_trace, ApiConfig};
use crate::taxonomy::{pad_topic_set, TopicId, TopicSetSequence, Trace};

/// The traces an attacker observed on the first site, one row per user.
#[derive(Clone, Debug)]
pub struct AttackTable {
    users: Vec<String>,
    weeks: usize,
    /// Row-major `n x weeks` topic ids.
    rows: Vec<u16>,
}

impl AttackTable {
    /// Observe every sequence on `site` and collect the rows.
    pub fn build(
        sequences: &[TopicSetSequence],
        site: &str,
        cfg: &ApiConfig,
        mode: ExecMode,
    ) -> Result<Self> {
        let weeks = cfg.weeks;
        let traces = map_indices(mode, sequences.len(), USER_CHUNK, |u| {
            observe_trace(&sequences[u], site, cfg)
        });
        let mut users = Vec::with_capacity(sequences.len());
        let mut rows = Vec::with_capacity(sequences.len() * weeks);
        for trace in traces {
            let trace = trace?;
            if trace.weeks() != weeks {
                return Err(Error::InvalidArgument(format!(
                    "trace for {} has {} weeks, table expects {weeks}",
                    trace.user,
                    trace.weeks()
                )));
            }
            users.push(trace.user);
            rows.extend(trace.outputs.iter().map(|t| t.get()));
        }
        Ok(AttackTable { users, weeks, rows })
    }

    pub fn from_traces(traces: &[Trace]) -> Result<Self> {
        let weeks = traces.first().map(Trace::weeks).unwrap_or(0);
        let mut users = Vec::with_capacity(traces.len());
        let mut rows = Vec::with_capacity(traces.len() * weeks);
        for t in traces {
            if t.weeks() != weeks {
                return Err(Error::InvalidArgument(
                    "attack table traces must share one length".into(),
                ));
            }
            users.push(t.user.clone());
            rows.extend(t.outputs.iter().map(|o| o.get()));
        }
        Ok(AttackTable { users, weeks, rows })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn weeks(&self) -> usize {
        self.weeks
    }

    pub fn user(&self, row: usize) -> &str {
        &self.users[row]
    }

    #[inline]
    fn row(&self, idx: usize) -> &[u16] {
        &self.rows[idx * self.weeks..(idx + 1) * self.weeks]
    }
}

/// Number of weeks where two traces disagree.
pub fn hamming_distance(a: &Trace, b: &Trace) -> Result<u32> {
    if a.weeks() != b.weeks() {
        return Err(Error::InvalidArgument(format!(
            "trace lengths differ: {} vs {}",
            a.weeks(),
            b.weeks()
        )));
    }
    Ok(a.outputs
        .iter()
        .zip(&b.outputs)
        .filter(|(x, y)| x != y)
        .count() as u32)
}

/// Scan all rows for the minimum score; ties resolved uniformly at random by
/// reservoir replacement.
fn argmin_rows<S, F>(n: usize, score: F, rng: &mut SeededRng) -> usize
where
    S: PartialOrd + Copy,
    F: Fn(usize) -> S,
{
    debug_assert!(n > 0);
    let mut best = score(0);
    let mut choice = 0usize;
    let mut ties = 1u64;
    for idx in 1..n {
        let s = score(idx);
        if s < best {
            best = s;
            choice = idx;
            ties = 1;
        } else if s == best {
            ties += 1;
            if rng.random_range(0..ties) == 0 {
                choice = idx;
            }
        }
    }
    choice
}

#[inline]
fn hamming_row(row: &[u16], query: &[u16]) -> u32 {
    row.iter().zip(query).filter(|(a, b)| a != b).count() as u32
}

fn query_ids(table: &AttackTable, query: &Trace) -> Result<Vec<u16>> {
    if query.weeks() != table.weeks {
        return Err(Error::InvalidArgument(format!(
            "query has {} weeks, table has {}",
            query.weeks(),
            table.weeks
        )));
    }
    Ok(query.outputs.iter().map(|t| t.get()).collect())
}

/// Unweighted Hamming attack: the user whose table trace has the smallest
/// Hamming distance to the query.
pub fn hamming_attack<'t>(
    table: &'t AttackTable,
    query: &Trace,
    rng: &mut SeededRng,
) -> Result<&'t str> {
    if table.n_users() == 0 {
        return Err(Error::InvalidArgument("empty attack table".into()));
    }
    let q = query_ids(table, query)?;
    let idx = argmin_rows(table.n_users(), |i| hamming_row(table.row(i), &q), rng);
    Ok(table.user(idx))
}

/// Learned per-topic-pair costs for the asymmetric attack. Entry `(o1, o2)`
/// is the cost of seeing `o1` on the table site and `o2` in the query.
#[derive(Clone, Debug)]
pub struct WeightMatrix {
    pub m: usize,
    w: Vec<f64>,
}

impl WeightMatrix {
    pub fn from_flat(m: usize, w: Vec<f64>) -> Result<Self> {
        if w.len() != m * m {
            return Err(Error::InvalidArgument(format!(
                "weight matrix needs {} entries, got {}",
                m * m,
                w.len()
            )));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("weight matrix".into()));
        }
        Ok(WeightMatrix { m, w })
    }

    /// 0 on the diagonal, 1 elsewhere: reproduces the unweighted attack.
    pub fn zero_one(m: usize) -> Self {
        let mut w = vec![1.0; m * m];
        for i in 0..m {
            w[i * m + i] = 0.0;
        }
        WeightMatrix { m, w }
    }

    #[inline]
    pub fn cost(&self, on_table: TopicId, on_query: TopicId) -> f64 {
        self.w[on_table.index() * self.m + on_query.index()]
    }

    #[inline]
    fn cost_ids(&self, a: u16, b: u16) -> f64 {
        self.w[(a as usize - 1) * self.m + (b as usize - 1)]
    }

    pub fn add_to_column(&mut self, column: TopicId, c: f64) {
        for row in 0..self.m {
            self.w[row * self.m + column.index()] += c;
        }
    }
}

/// Fit asymmetric costs from same-user cross-site observations:
/// `w[o1][o2] = -ln P_hat(o2 on the query site | o1 on the table site)` with
/// add-alpha smoothing.
pub fn learn_asymmetric_weights(
    training_pairs: &[(TopicId, TopicId)],
    m: usize,
    alpha: f64,
) -> Result<WeightMatrix> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "smoothing alpha must be positive, got {alpha}"
        )));
    }
    if training_pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "no training pairs for weight learning".into(),
        ));
    }
    let mut counts = vec![0.0f64; m * m];
    for &(a, b) in training_pairs {
        counts[a.index() * m + b.index()] += 1.0;
    }
    let mut w = vec![0.0f64; m * m];
    for row in 0..m {
        let row_sum: f64 = counts[row * m..(row + 1) * m].iter().sum();
        let denom = row_sum + alpha * m as f64;
        for col in 0..m {
            w[row * m + col] = -((counts[row * m + col] + alpha) / denom).ln();
        }
    }
    WeightMatrix::from_flat(m, w)
}

/// Weighted attack: smallest summed cost between the query and a table row.
pub fn asymmetric_attack<'t>(
    table: &'t AttackTable,
    query: &Trace,
    weights: &WeightMatrix,
    rng: &mut SeededRng,
) -> Result<&'t str> {
    if table.n_users() == 0 {
        return Err(Error::InvalidArgument("empty attack table".into()));
    }
    let q = query_ids(table, query)?;
    let idx = argmin_rows(
        table.n_users(),
        |i| {
            table
                .row(i)
                .iter()
                .zip(&q)
                .map(|(&a, &b)| weights.cost_ids(a, b))
                .sum::<f64>()
        },
        rng,
    );
    Ok(table.user(idx))
}

/// Which attack the measurement harness runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Hamming,
    Asymmetric,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Hamming => "hamming",
            AttackKind::Asymmetric => "asymmetric",
        }
    }
}

/// Harness options for [`measure_reid_risk`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReidOptions {
    pub n_queries: usize,
    pub n_trials: usize,
    /// Fraction of the population reserved for weight learning; the
    /// evaluation population is the remainder (floor split, so a population
    /// of one user keeps its single user for evaluation).
    pub holdout_frac: f64,
    /// Add-alpha smoothing of the weight estimates.
    pub alpha: f64,
    /// Cross-site pairs the holdout panel is observed on per trial; more
    /// pairs give the attacker more weight-training data.
    pub weight_site_pairs: usize,
    pub seed: u64,
    /// Site label the attacker tabulates.
    pub site_a: String,
    /// Site label queries are observed on.
    pub site_b: String,
}

impl Default for ReidOptions {
    fn default() -> Self {
        ReidOptions {
            n_queries: 10_240,
            n_trials: 10,
            holdout_frac: 0.1,
            alpha: 1.0,
            weight_site_pairs: 4,
            seed: 0,
            site_a: "w1".into(),
            site_b: "w2".into(),
        }
    }
}

/// The measured risk of one attack on one dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReidReport {
    pub attack: String,
    /// Evaluation population size (holdout excluded).
    pub population: usize,
    pub weeks: usize,
    pub queries_per_trial: usize,
    /// Correct-identification rate per trial.
    pub trial_rates: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over trials.
    pub std_dev: f64,
}

fn mean_and_std(rates: &[f64]) -> (f64, f64) {
    let n = rates.len() as f64;
    let mean = rates.iter().sum::<f64>() / n;
    if rates.len() < 2 {
        return (mean, 0.0);
    }
    let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Pad every undersized set to exactly `k` topics (deterministic per user).
pub fn pad_population(
    sequences: &[TopicSetSequence],
    cfg: &ApiConfig,
    seed: u64,
    mode: ExecMode,
) -> Result<Vec<TopicSetSequence>> {
    let padded = map_indices(mode, sequences.len(), USER_CHUNK, |u| {
        let seq = &sequences[u];
        if seq.sets.iter().all(|s| s.len() == cfg.k) {
            return Ok(seq.clone());
        }
        let mut rng = child_rng(seed, "pad", u as u64);
        let sets = seq
            .sets
            .iter()
            .map(|s| pad_topic_set(s, cfg.k, &cfg.taxonomy, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(TopicSetSequence {
            user: seq.user.clone(),
            sets,
        })
    });
    padded.into_iter().collect()
}

/// Run the re-identification game.
///
/// The attack table and per-user query traces are fixed by the API's
/// determinism; each trial resamples the query users (with replacement),
/// redraws tie-breaks, and relearns asymmetric weights from the holdout
/// observed on per-trial site labels.
pub fn measure_reid_risk(
    population: &[TopicSetSequence],
    cfg: &ApiConfig,
    attack: AttackKind,
    opts: &ReidOptions,
) -> Result<ReidReport> {
    measure_reid_risk_mode(population, cfg, attack, opts, ExecMode::default())
}

/// [`measure_reid_risk`] with an explicit execution mode.
pub fn measure_reid_risk_mode(
    population: &[TopicSetSequence],
    cfg: &ApiConfig,
    attack: AttackKind,
    opts: &ReidOptions,
    mode: ExecMode,
) -> Result<ReidReport> {
    cfg.validate()?;
    if population.is_empty() {
        return Err(Error::InvalidArgument(
            "re-identification needs a non-empty population".into(),
        ));
    }
    for seq in population {
        if seq.weeks() < cfg.weeks {
            return Err(Error::InvalidArgument(format!(
                "user {} has {} weeks, need at least {}",
                seq.user,
                seq.weeks(),
                cfg.weeks
            )));
        }
    }
    let padded = pad_population(population, cfg, child_rng(opts.seed, "pad-base", 0).random(), mode)?;

    let holdout_n = ((padded.len() as f64) * opts.holdout_frac).floor() as usize;
    let eval_n = padded.len() - holdout_n;
    if eval_n == 0 {
        return Err(Error::InvalidArgument(
            "holdout fraction leaves no evaluation users".into(),
        ));
    }
    let (eval, holdout) = padded.split_at(eval_n);
    if attack == AttackKind::Asymmetric && holdout.is_empty() {
        return Err(Error::InvalidArgument(
            "asymmetric attack needs a non-empty holdout for weight learning".into(),
        ));
    }

    let table = AttackTable::build(eval, &opts.site_a, cfg, mode)?;
    // query traces on the second site, fixed by API determinism
    let query_rows: Vec<u16> = {
        let traces = map_indices(mode, eval.len(), USER_CHUNK, |u| {
            observe_trace(&eval[u], &opts.site_b, cfg)
        });
        let mut rows = Vec::with_capacity(eval.len() * cfg.weeks);
        for t in traces {
            rows.extend(t?.outputs.iter().map(|o| o.get()));
        }
        rows
    };
    let weeks = cfg.weeks;
    let query_row = |u: usize| &query_rows[u * weeks..(u + 1) * weeks];

    let mut trial_rates = Vec::with_capacity(opts.n_trials);
    for trial in 0..opts.n_trials {
        let weights = match attack {
            AttackKind::Hamming => None,
            AttackKind::Asymmetric => {
                let mut pairs: Vec<(TopicId, TopicId)> = Vec::new();
                for sp in 0..opts.weight_site_pairs.max(1) {
                    let site_a = format!("holdout-{trial}-{sp}-a");
                    let site_b = format!("holdout-{trial}-{sp}-b");
                    for seq in holdout {
                        let ta = observe_trace(seq, &site_a, cfg)?;
                        let tb = observe_trace(seq, &site_b, cfg)?;
                        pairs
                            .extend(ta.outputs.iter().zip(&tb.outputs).map(|(&a, &b)| (a, b)));
                    }
                }
                Some(learn_asymmetric_weights(
                    &pairs,
                    cfg.taxonomy.size,
                    opts.alpha,
                )?)
            }
        };

        // query user indices, sampled with replacement
        let mut trial_rng = child_rng(opts.seed, "trial", trial as u64);
        let targets: Vec<usize> = (0..opts.n_queries)
            .map(|_| trial_rng.random_range(0..eval.len()))
            .collect();

        let tie_base = child_rng(opts.seed, "ties", trial as u64).random::<u64>();
        let hits = map_indices(mode, targets.len(), 64, |qi| {
            let target = targets[qi];
            let q = query_row(target);
            let mut tie_rng = child_rng(tie_base, "query", qi as u64);
            let chosen = match &weights {
                None => argmin_rows(
                    table.n_users(),
                    |i| hamming_row(table.row(i), q),
                    &mut tie_rng,
                ),
                Some(w) => argmin_rows(
                    table.n_users(),
                    |i| {
                        table
                            .row(i)
                            .iter()
                            .zip(q)
                            .map(|(&a, &b)| w.cost_ids(a, b))
                            .sum::<f64>()
                    },
                    &mut tie_rng,
                ),
            };
            u64::from(chosen == target)
        });
        let correct: u64 = hits.iter().sum();
        trial_rates.push(correct as f64 / opts.n_queries as f64);
    }

    let (mean, std_dev) = mean_and_std(&trial_rates);
    Ok(ReidReport {
        attack: attack.name().to_string(),
        population: eval_n,
        weeks,
        queries_per_trial: opts.n_queries,
        trial_rates,
        mean,
        std_dev,
    })
}
