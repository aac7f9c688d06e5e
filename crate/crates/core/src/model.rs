//! The parameterized distribution over topic-set sequences.
//!
//! A *slot* is a categorical distribution over topics encoded by a logit
//! vector; a *type* is a grid of `weeks x slots` independent slots; the model
//! is a uniform mixture of `T` types. Sampling picks a type uniformly, draws
//! one topic per slot, and keeps each week's set of unique topics, which may
//! have fewer than `k` elements.
//!
//! Every target statistic has a closed form built from one survival
//! quantity: the probability that week `i` of type `t` avoids every topic in
//! a set `A`,
//!
//! ```text
//! N(t, i, A) = prod_s (1 - sum_{x in A} P[t,i,s,x]).
//! ```
//!
//! Then `Pr(o in S_i)` averages `1 - N(t,i,{o})` over types, the within-week
//! pair probability follows by inclusion-exclusion, and the across-week pair
//! probability uses the conditional independence of weeks given the type.

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indices, ExecMode, USER_CHUNK};
use crate::rng::{child_rng, SeededRng};
use crate::taxonomy::{TopicId, TopicSet, TopicSetSequence};

/// Model parameters: the logit tensor over `[types][weeks][slots][topics]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub types: usize,
    pub weeks: usize,
    pub slots: usize,
    /// Taxonomy size.
    pub m: usize,
    /// Row-major `[t][i][s][topic]`, length `types * weeks * slots * m`.
    pub theta: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(types: usize, weeks: usize, slots: usize, m: usize) -> Self {
        ModelParams {
            types,
            weeks,
            slots,
            m,
            theta: vec![0.0; types * weeks * slots * m],
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Offset of the logit row for (type, week, slot).
    #[inline]
    pub fn row(&self, t: usize, i: usize, s: usize) -> usize {
        ((t * self.weeks + i) * self.slots + s) * self.m
    }

    pub fn validate_finite(&self) -> Result<()> {
        if self.theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("model logits".into()));
        }
        Ok(())
    }

    fn check_week(&self, i: usize) -> Result<()> {
        if i >= self.weeks {
            return Err(Error::InvalidArgument(format!(
                "week {i} out of range (weeks = {})",
                self.weeks
            )));
        }
        Ok(())
    }

    fn check_topic(&self, o: TopicId) -> Result<()> {
        if o.get() < 1 || o.index() >= self.m {
            return Err(Error::InvalidArgument(format!(
                "topic {o} out of range (taxonomy size = {})",
                self.m
            )));
        }
        Ok(())
    }
}

/// Per-slot topic probabilities: softmax of the logits, same layout.
#[derive(Clone, Debug)]
pub struct SlotProbabilities {
    pub types: usize,
    pub weeks: usize,
    pub slots: usize,
    pub m: usize,
    pub p: Vec<f64>,
}

impl SlotProbabilities {
    #[inline]
    pub fn row(&self, t: usize, i: usize, s: usize) -> &[f64] {
        let start = ((t * self.weeks + i) * self.slots + s) * self.m;
        &self.p[start..start + self.m]
    }
}

/// Numerically stable softmax of every slot's logits.
pub fn softmax_slots(params: &ModelParams) -> Result<SlotProbabilities> {
    params.validate_finite()?;
    let m = params.m;
    let mut p = vec![0.0f64; params.theta.len()];
    for row in 0..params.theta.len() / m {
        let theta_row = &params.theta[row * m..(row + 1) * m];
        let out = &mut p[row * m..(row + 1) * m];
        let max = theta_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &x) in out.iter_mut().zip(theta_row) {
            let e = (x - max).exp();
            *o = e;
            sum += e;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }
    Ok(SlotProbabilities {
        types: params.types,
        weeks: params.weeks,
        slots: params.slots,
        m,
        p,
    })
}

/// Survival of a topic set: probability that week `i`'s sampled set under
/// type `t` contains no topic from `set`.
pub fn survival_p(probs: &SlotProbabilities, t: usize, i: usize, set: &[TopicId]) -> f64 {
    let mut prod = 1.0;
    for s in 0..probs.slots {
        let row = probs.row(t, i, s);
        let mass: f64 = set.iter().map(|o| row[o.index()]).sum();
        prod *= (1.0 - mass).max(0.0);
    }
    prod
}

/// `Pr(S_i` avoids every topic of `set | type = t)` from raw parameters.
pub fn survival(params: &ModelParams, t: usize, i: usize, set: &[TopicId]) -> Result<f64> {
    params.check_week(i)?;
    for &o in set {
        params.check_topic(o)?;
    }
    if t >= params.types {
        return Err(Error::InvalidArgument(format!(
            "type {t} out of range (types = {})",
            params.types
        )));
    }
    Ok(survival_p(&softmax_slots(params)?, t, i, set))
}

/// `Pr(o in S_i)` from precomputed slot probabilities.
pub fn q_single_p(probs: &SlotProbabilities, i: usize, o: TopicId) -> f64 {
    let t_count = probs.types as f64;
    (0..probs.types)
        .map(|t| 1.0 - survival_p(probs, t, i, &[o]))
        .sum::<f64>()
        / t_count
}

/// `Pr({o1, o2} subset of S_i)` from precomputed slot probabilities.
pub fn q_within_p(probs: &SlotProbabilities, i: usize, o1: TopicId, o2: TopicId) -> f64 {
    let t_count = probs.types as f64;
    (0..probs.types)
        .map(|t| {
            1.0 - survival_p(probs, t, i, &[o1]) - survival_p(probs, t, i, &[o2])
                + survival_p(probs, t, i, &[o1, o2])
        })
        .sum::<f64>()
        / t_count
}

/// `Pr(o1 in S_{i1} and o2 in S_{i2})` from precomputed slot probabilities.
pub fn q_across_p(
    probs: &SlotProbabilities,
    i1: usize,
    i2: usize,
    o1: TopicId,
    o2: TopicId,
) -> f64 {
    let t_count = probs.types as f64;
    (0..probs.types)
        .map(|t| {
            (1.0 - survival_p(probs, t, i1, &[o1])) * (1.0 - survival_p(probs, t, i2, &[o2]))
        })
        .sum::<f64>()
        / t_count
}

/// Exact `Pr(o in S_i)` under the model.
pub fn q_single_model(params: &ModelParams, i: usize, o: TopicId) -> Result<f64> {
    params.check_week(i)?;
    params.check_topic(o)?;
    Ok(q_single_p(&softmax_slots(params)?, i, o))
}

/// Exact `Pr({o1, o2} subset of S_i)`, `o1 != o2`.
pub fn q_within_model(params: &ModelParams, i: usize, o1: TopicId, o2: TopicId) -> Result<f64> {
    params.check_week(i)?;
    params.check_topic(o1)?;
    params.check_topic(o2)?;
    if o1 == o2 {
        return Err(Error::InvalidArgument(
            "q_within needs two distinct topics; use q_single".into(),
        ));
    }
    Ok(q_within_p(&softmax_slots(params)?, i, o1, o2))
}

/// Exact `Pr(o1 in S_{i1} and o2 in S_{i2})`, `i1 != i2`.
pub fn q_across_model(
    params: &ModelParams,
    i1: usize,
    i2: usize,
    o1: TopicId,
    o2: TopicId,
) -> Result<f64> {
    params.check_week(i1)?;
    params.check_week(i2)?;
    params.check_topic(o1)?;
    params.check_topic(o2)?;
    if i1 == i2 {
        return Err(Error::InvalidArgument(
            "q_across needs two distinct weeks".into(),
        ));
    }
    Ok(q_across_p(&softmax_slots(params)?, i1, i2, o1, o2))
}

fn sample_categorical(row: &[f64], rng: &mut SeededRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (idx, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return idx;
        }
    }
    row.len() - 1
}

fn sample_sequence_p(probs: &SlotProbabilities, user: String, rng: &mut SeededRng) -> TopicSetSequence {
    let t = rng.random_range(0..probs.types);
    let mut sets = Vec::with_capacity(probs.weeks);
    for i in 0..probs.weeks {
        let mut topics: Vec<TopicId> = Vec::with_capacity(probs.slots);
        for s in 0..probs.slots {
            let idx = sample_categorical(probs.row(t, i, s), rng);
            topics.push(TopicId::new((idx + 1) as u16));
        }
        sets.push(TopicSet::from_topics(topics));
    }
    TopicSetSequence { user, sets }
}

/// Draw one topic-set sequence: uniform type, then one topic per slot, then
/// unique topics per week. Sets may come out smaller than the slot count; no
/// padding happens here.
pub fn sample_sequence(params: &ModelParams, rng: &mut SeededRng) -> Result<TopicSetSequence> {
    let probs = softmax_slots(params)?;
    Ok(sample_sequence_p(&probs, "sample".into(), rng))
}

/// Draw `n` i.i.d. sequences with independent per-user child streams.
pub fn sample_dataset(params: &ModelParams, n: usize, seed: u64) -> Result<Vec<TopicSetSequence>> {
    sample_dataset_mode(params, n, seed, ExecMode::default())
}

/// [`sample_dataset`] with an explicit execution mode.
pub fn sample_dataset_mode(
    params: &ModelParams,
    n: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<Vec<TopicSetSequence>> {
    let probs = softmax_slots(params)?;
    let width = (n.max(1) as f64).log10().ceil().max(1.0) as usize;
    Ok(map_indices(mode, n, USER_CHUNK, |u| {
        let mut rng = child_rng(seed, "sample-user", u as u64);
        sample_sequence_p(&probs, format!("s{u:0width$}"), &mut rng)
    }))
}

// ---------------------------------------------------------------------------
// Checkpoint format: one JSON header line, then the parameters as raw
// little-endian f64 in [t][i][s][topic] row-major order.
// ---------------------------------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    types: usize,
    weeks: usize,
    slots: usize,
    taxonomy_size: usize,
    seed: u64,
}

/// Write a model checkpoint.
pub fn save_checkpoint(params: &ModelParams, seed: u64, path: impl AsRef<std::path::Path>) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        types: params.types,
        weeks: params.weeks,
        slots: params.slots,
        taxonomy_size: params.m,
        seed,
    };
    let mut out = Vec::with_capacity(params.theta.len() * 8 + 128);
    serde_json::to_writer(&mut out, &header).expect("header serializes");
    out.push(b'\n');
    for v in &params.theta {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a model checkpoint, validating the declared shape against the
/// payload length.
pub fn load_checkpoint(path: impl AsRef<std::path::Path>) -> Result<(ModelParams, u64)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {}",
            header.version
        )));
    }
    let expected = header.types * header.weeks * header.slots * header.taxonomy_size;
    let payload = &bytes[newline + 1..];
    if payload.len() != expected * 8 {
        return Err(Error::Checkpoint(format!(
            "declared shape needs {} bytes of parameters, found {}",
            expected * 8,
            payload.len()
        )));
    }
    let theta: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let params = ModelParams {
        types: header.types,
        weeks: header.weeks,
        slots: header.slots,
        m: header.taxonomy_size,
        theta,
    };
    params.validate_finite()?;
    Ok((params, header.seed))
}
