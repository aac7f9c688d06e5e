//! The interest-disclosure API and a synthetic ground-truth population.
//!
//! `get_topic` / `observe_trace` implement the browser-side mechanism: each
//! week a site calling the API receives one topic drawn from the user's
//! previous-week top-`k` profile with probability `1 - p`, or a uniformly
//! random topic with probability `p`. The draw is seeded by (site, week,
//! user), so repeat visits within a week observe the same topic while
//! distinct sites observe independent draws.
//!
//! `generate_population` is a stand-in for real browsing logs, which are not
//! available here. It is NOT part of the published methodology being
//! reproduced: it is plumbing that manufactures a population with heavy-tailed
//! topic popularity (Zipf over archetypes, Dirichlet topic mixtures),
//! within-week topic correlation, and week-over-week persistence, which are
//! the phenomena the downstream statistics are designed to capture.

use rand::RngExt;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indices, ExecMode, USER_CHUNK};
use crate::rng::{child_rng, seeded, SeededRng};
use crate::taxonomy::{derive_call_seed, Taxonomy, TopicId, TopicSet, TopicSetSequence, Trace};

/// Parameters of the simulated API.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ApiConfig {
    /// Probability of returning a uniformly random topic (default 0.05).
    pub p: f64,
    /// Top-set size (default 5).
    pub k: usize,
    /// Number of observation weeks.
    pub weeks: usize,
    pub taxonomy: Taxonomy,
}

impl ApiConfig {
    pub fn new(p: f64, k: usize, weeks: usize, taxonomy: Taxonomy) -> Result<Self> {
        let cfg = ApiConfig {
            p,
            k,
            weeks,
            taxonomy,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidConfig(format!(
                "p must be in [0, 1], got {}",
                self.p
            )));
        }
        if self.k < 1 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.weeks < 1 {
            return Err(Error::InvalidConfig("weeks must be at least 1".into()));
        }
        if self.k > self.taxonomy.size {
            return Err(Error::InvalidConfig(format!(
                "k = {} exceeds taxonomy size {}",
                self.k, self.taxonomy.size
            )));
        }
        Ok(())
    }
}

/// Parameters of the synthetic ground-truth population generator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub n_users: usize,
    /// Number of latent user archetypes sharing a topic distribution.
    pub n_archetypes: usize,
    /// Zipf exponent of archetype popularity (larger = more skewed).
    pub zipf_exponent: f64,
    /// Symmetric Dirichlet concentration of each archetype's topic weights
    /// (smaller = each archetype concentrates on fewer topics).
    pub dirichlet_concentration: f64,
    /// Probability that a topic in this week's set is retained next week.
    pub persistence_rho: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            n_users: 10_000,
            n_archetypes: 20,
            zipf_exponent: 1.2,
            dirichlet_concentration: 0.2,
            persistence_rho: 0.9,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users < 1 {
            return Err(Error::InvalidConfig("n_users must be at least 1".into()));
        }
        if self.n_archetypes < 1 {
            return Err(Error::InvalidConfig(
                "n_archetypes must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.persistence_rho) {
            return Err(Error::InvalidConfig(format!(
                "persistence_rho must be in [0, 1], got {}",
                self.persistence_rho
            )));
        }
        if !self.zipf_exponent.is_finite() || self.zipf_exponent < 0.0 {
            return Err(Error::InvalidConfig("zipf_exponent must be >= 0".into()));
        }
        if !(self.dirichlet_concentration > 0.0) {
            return Err(Error::InvalidConfig(
                "dirichlet_concentration must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// The ground-truth dataset: one topic-set sequence per user.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthPopulation {
    pub sequences: Vec<TopicSetSequence>,
}

impl GroundTruthPopulation {
    pub fn n_users(&self) -> usize {
        self.sequences.len()
    }
}

/// Weighted sample of `count` distinct topics via exponential races:
/// key_i = Exp(1)/w_i, take the `count` smallest keys. Topics listed in
/// `exclude` never win. Weights must be nonnegative with enough positive
/// entries outside `exclude`.
fn weighted_distinct_sample(
    weights: &[f64],
    count: usize,
    exclude: &[TopicId],
    rng: &mut SeededRng,
) -> Vec<TopicId> {
    debug_assert!(count <= weights.len() - exclude.len());
    if count == 0 {
        return Vec::new();
    }
    let mut keys: Vec<(f64, u16)> = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        let id = (i + 1) as u16;
        if exclude.contains(&TopicId::new(id)) {
            continue;
        }
        let key = if w > 0.0 {
            let u: f64 = rng.random();
            -(-u).ln_1p() / w // Exp(1) sample = -ln(1-u), divided by weight
        } else {
            f64::INFINITY
        };
        keys.push((key, id));
    }
    debug_assert!(keys.len() >= count);
    keys.select_nth_unstable_by(count.saturating_sub(1), |a, b| {
        a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut chosen: Vec<TopicId> = keys[..count].iter().map(|&(_, id)| TopicId::new(id)).collect();
    chosen.sort_unstable();
    chosen
}

/// Draw archetype topic-weight vectors: one symmetric Dirichlet draw per
/// archetype over the whole taxonomy.
fn draw_archetypes(cfg: &PopulationConfig, m: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let gamma = Gamma::new(cfg.dirichlet_concentration, 1.0)
        .expect("concentration validated positive");
    (0..cfg.n_archetypes)
        .map(|_| {
            let mut w: Vec<f64> = (0..m).map(|_| gamma.sample(rng)).collect();
            let total: f64 = w.iter().sum();
            if total > 0.0 {
                for x in &mut w {
                    *x /= total;
                }
            } else {
                w.fill(1.0 / m as f64);
            }
            w
        })
        .collect()
}

/// Zipf(s) cumulative weights over `n` archetypes: P(a) proportional to
/// 1/(a+1)^s.
fn zipf_cumulative(n: usize, s: f64) -> Vec<f64> {
    let mut cum = Vec::with_capacity(n);
    let mut acc = 0.0;
    for a in 0..n {
        acc += 1.0 / ((a + 1) as f64).powf(s);
        cum.push(acc);
    }
    let total = *cum.last().expect("n >= 1");
    for c in &mut cum {
        *c /= total;
    }
    cum
}

fn sample_from_cumulative(cum: &[f64], rng: &mut SeededRng) -> usize {
    let u: f64 = rng.random();
    cum.partition_point(|&c| c < u).min(cum.len() - 1)
}

fn generate_user_sequence(
    user: String,
    archetype_weights: &[f64],
    api: &ApiConfig,
    rho: f64,
    rng: &mut SeededRng,
) -> TopicSetSequence {
    let k = api.k;
    let mut sets: Vec<TopicSet> = Vec::with_capacity(api.weeks);
    let first = weighted_distinct_sample(archetype_weights, k, &[], rng);
    sets.push(TopicSet::from_topics(first));
    for _ in 1..api.weeks {
        let prev = sets.last().expect("at least one week");
        let kept: Vec<TopicId> = prev.iter().filter(|_| rng.random::<f64>() < rho).collect();
        let fresh = weighted_distinct_sample(archetype_weights, k - kept.len(), &kept, rng);
        let mut topics = kept;
        topics.extend(fresh);
        sets.push(TopicSet::from_topics(topics));
    }
    TopicSetSequence { user, sets }
}

/// Generate the synthetic ground-truth population.
///
/// Per user: an archetype index is drawn from a Zipf law; week 0's set is a
/// weighted distinct `k`-sample from the archetype's topic distribution; each
/// later week keeps every topic independently with probability
/// `persistence_rho` and redraws replacements from the archetype distribution
/// excluding kept topics. Deterministic in `seed`.
pub fn generate_population(
    cfg: &PopulationConfig,
    api: &ApiConfig,
    seed: u64,
) -> Result<GroundTruthPopulation> {
    generate_population_mode(cfg, api, seed, ExecMode::default())
}

/// [`generate_population`] with an explicit execution mode.
pub fn generate_population_mode(
    cfg: &PopulationConfig,
    api: &ApiConfig,
    seed: u64,
    mode: ExecMode,
) -> Result<GroundTruthPopulation> {
    cfg.validate()?;
    api.validate()?;

    let m = api.taxonomy.size;
    let archetypes = draw_archetypes(cfg, m, &mut child_rng(seed, "archetypes", 0));
    let zipf_cum = zipf_cumulative(cfg.n_archetypes, cfg.zipf_exponent);

    let width = (cfg.n_users as f64).log10().ceil().max(1.0) as usize;
    let sequences = map_indices(mode, cfg.n_users, USER_CHUNK, |u| {
        let mut rng = child_rng(seed, "user", u as u64);
        let archetype = sample_from_cumulative(&zipf_cum, &mut rng);
        generate_user_sequence(
            format!("u{u:0width$}"),
            &archetypes[archetype],
            api,
            cfg.persistence_rho,
            &mut rng,
        )
    });
    Ok(GroundTruthPopulation { sequences })
}

/// One API call: the topic site `site` observes in week `week` for `user`,
/// whose previous-week profile is `profile`. Pure function of its arguments;
/// the internal generator is seeded from (site, week, user).
pub fn get_topic(
    profile: &TopicSet,
    site: &str,
    week: u32,
    user: &str,
    cfg: &ApiConfig,
) -> Result<TopicId> {
    if profile.len() != cfg.k {
        return Err(Error::InvalidArgument(format!(
            "profile has {} topics, expected k = {}",
            profile.len(),
            cfg.k
        )));
    }
    let mut rng = seeded(derive_call_seed(site, week, user));
    let noise: f64 = rng.random();
    if noise < cfg.p {
        Ok(TopicId::new(rng.random_range(1..=cfg.taxonomy.size as u16)))
    } else {
        Ok(profile.as_slice()[rng.random_range(0..profile.len())])
    }
}

/// The full trace `site` observes for one user: week `i` (1-based) uses the
/// profile built at the end of week `i-1`, i.e. `seq.sets[i-1]`.
pub fn observe_trace(seq: &TopicSetSequence, site: &str, cfg: &ApiConfig) -> Result<Trace> {
    if seq.sets.is_empty() {
        return Err(Error::InvalidArgument("empty topic set sequence".into()));
    }
    let weeks = seq.sets.len().min(cfg.weeks);
    let mut outputs = Vec::with_capacity(weeks);
    for i in 1..=weeks {
        outputs.push(get_topic(&seq.sets[i - 1], site, i as u32, &seq.user, cfg)?);
    }
    Ok(Trace {
        user: seq.user.clone(),
        site: site.to_string(),
        outputs,
    })
}

/// Observe traces for every user in the population, in user order.
pub fn observe_population(
    pop: &GroundTruthPopulation,
    site: &str,
    cfg: &ApiConfig,
    mode: ExecMode,
) -> Result<Vec<Trace>> {
    let traces = map_indices(mode, pop.sequences.len(), USER_CHUNK, |u| {
        observe_trace(&pop.sequences[u], site, cfg)
    });
    traces.into_iter().collect()
}

/// Exact per-week output distributions for one user: week `i`'s vector holds
/// `(1-p)/k + p/m` at topics of `S_{i-1}` and `p/m` elsewhere.
pub fn trace_distribution(seq: &TopicSetSequence, cfg: &ApiConfig) -> Result<Vec<Vec<f64>>> {
    if seq.sets.is_empty() {
        return Err(Error::InvalidArgument("empty topic set sequence".into()));
    }
    let m = cfg.taxonomy.size;
    let noise_mass = cfg.p / m as f64;
    let in_set_mass = (1.0 - cfg.p) / cfg.k as f64 + noise_mass;
    let weeks = seq.sets.len().min(cfg.weeks);
    let mut result = Vec::with_capacity(weeks);
    for i in 0..weeks {
        let mut v = vec![noise_mass; m];
        for topic in seq.sets[i].iter() {
            v[topic.index()] = in_set_mass;
        }
        result.push(v);
    }
    Ok(result)
}
