//! Fitting the model to target statistics.
//!
//! The objective is the mean squared error, over an enumerated term list,
//! between the model's closed-form statistics and the released targets. The
//! same week-averaged target is imposed on every simulated week (and every
//! consecutive week pair for the across statistics): the stationarity
//! assumption baked into the released statistics.
//!
//! Gradients are analytic. Every term's derivative with respect to one
//! slot's logits has the form `coef * P + (point updates at the term's
//! topics)`, where `P` is the slot's probability vector. A batch therefore
//! accumulates one scalar per slot plus a handful of point updates per term,
//! and materializes the dense gradient in a single final pass. Batches are
//! processed in fixed-size chunks folded in order, so gradients are
//! bit-identical across execution modes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_slice_chunks, ExecMode, TERM_CHUNK};
use crate::model::{softmax_slots, ModelParams, SlotProbabilities};
use crate::rng::child_rng;
use crate::stats::StatisticsBundle;
use crate::tables::{sq_index, tri_index, tri_pairs};
use crate::taxonomy::TopicId;

/// Target statistics are a released bundle treated as constants.
pub type TargetStatistics = StatisticsBundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TermKind {
    /// One topic in one week.
    Single,
    /// An unordered distinct pair within one week.
    Within,
    /// An ordered pair across the week pair (week, week + 1).
    Across,
}

/// One term of the objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveTerm {
    pub kind: TermKind,
    /// Week index; for `Across`, the first week of the pair.
    pub week: u32,
    pub a: TopicId,
    /// Second topic; equal to `a` for `Single` terms.
    pub b: TopicId,
    pub target: f64,
}

/// Total number of objective terms for `weeks` simulated weeks over `m`
/// topics: `r*m` single + `r*C(m,2)` within + `(r-1)*m^2` across.
pub fn term_count(weeks: usize, m: usize) -> usize {
    weeks * m + weeks * (m * (m - 1) / 2) + weeks.saturating_sub(1) * m * m
}

/// Enumerate all objective terms in a fixed deterministic order.
pub fn enumerate_terms(targets: &TargetStatistics, weeks: usize) -> Result<Vec<ObjectiveTerm>> {
    let m = targets.m;
    if targets.q_single.len() != m
        || targets.q_within.len() != m * (m - 1) / 2
        || targets.q_across.len() != m * m
    {
        return Err(Error::InvalidArgument(
            "target statistics tables do not match the taxonomy size".into(),
        ));
    }
    let mut terms = Vec::with_capacity(term_count(weeks, m));
    for week in 0..weeks as u32 {
        for o in 1..=m as u16 {
            let topic = TopicId::new(o);
            terms.push(ObjectiveTerm {
                kind: TermKind::Single,
                week,
                a: topic,
                b: topic,
                target: targets.q_single[topic.index()],
            });
        }
    }
    for week in 0..weeks as u32 {
        for (a, b) in tri_pairs(m) {
            terms.push(ObjectiveTerm {
                kind: TermKind::Within,
                week,
                a,
                b,
                target: targets.q_within[tri_index(m, a, b)],
            });
        }
    }
    for week in 0..weeks.saturating_sub(1) as u32 {
        for a in 1..=m as u16 {
            for b in 1..=m as u16 {
                let (a, b) = (TopicId::new(a), TopicId::new(b));
                terms.push(ObjectiveTerm {
                    kind: TermKind::Across,
                    week,
                    a,
                    b,
                    target: targets.q_across[sq_index(m, a, b)],
                });
            }
        }
    }
    debug_assert_eq!(terms.len(), term_count(weeks, m));
    Ok(terms)
}

/// The model statistic a term constrains.
pub fn term_value(probs: &SlotProbabilities, term: &ObjectiveTerm) -> f64 {
    let i = term.week as usize;
    match term.kind {
        TermKind::Single => crate::model::q_single_p(probs, i, term.a),
        TermKind::Within => crate::model::q_within_p(probs, i, term.a, term.b),
        TermKind::Across => crate::model::q_across_p(probs, i, i + 1, term.a, term.b),
    }
}

/// Mean squared error of the model against a term subset.
pub fn evaluate_objective(params: &ModelParams, terms: &[ObjectiveTerm]) -> Result<f64> {
    evaluate_objective_mode(params, terms, ExecMode::default())
}

/// [`evaluate_objective`] with an explicit execution mode.
pub fn evaluate_objective_mode(
    params: &ModelParams,
    terms: &[ObjectiveTerm],
    mode: ExecMode,
) -> Result<f64> {
    if terms.is_empty() {
        return Ok(0.0);
    }
    let probs = softmax_slots(params)?;
    let partials = map_slice_chunks(mode, terms, TERM_CHUNK, |chunk| {
        chunk
            .iter()
            .map(|term| {
                let d = term_value(&probs, term) - term.target;
                d * d
            })
            .sum::<f64>()
    });
    Ok(partials.iter().sum::<f64>() / terms.len() as f64)
}

/// Signed error (model minus target) of every term, in term order.
pub fn term_errors(
    params: &ModelParams,
    terms: &[ObjectiveTerm],
    mode: ExecMode,
) -> Result<Vec<f64>> {
    let probs = softmax_slots(params)?;
    let nested = map_slice_chunks(mode, terms, TERM_CHUNK, |chunk| {
        chunk
            .iter()
            .map(|term| term_value(&probs, term) - term.target)
            .collect::<Vec<f64>>()
    });
    Ok(nested.into_iter().flatten().collect())
}

/// Per-chunk gradient accumulator: dense point updates plus one scalar
/// multiplier of each slot's probability row.
struct GradAccum {
    point: Vec<f64>,
    slot_coef: Vec<f64>,
}

impl GradAccum {
    fn new(theta_len: usize, slot_rows: usize) -> Self {
        GradAccum {
            point: vec![0.0; theta_len],
            slot_coef: vec![0.0; slot_rows],
        }
    }

    fn merge(mut self, other: GradAccum) -> GradAccum {
        for (a, b) in self.point.iter_mut().zip(&other.point) {
            *a += b;
        }
        for (a, b) in self.slot_coef.iter_mut().zip(&other.slot_coef) {
            *a += b;
        }
        self
    }
}

/// Scratch for one chunk worker: per-type survival factors of up to three
/// topic sets, reused across terms.
struct TermScratch {
    m1: Vec<f64>,
    m2: Vec<f64>,
    m12: Vec<f64>,
    pe1: Vec<f64>,
    pe2: Vec<f64>,
    pe3: Vec<f64>,
}

impl TermScratch {
    fn new(types: usize, slots: usize) -> Self {
        let n = types * slots;
        TermScratch {
            m1: vec![0.0; n],
            m2: vec![0.0; n],
            m12: vec![0.0; n],
            pe1: vec![0.0; slots],
            pe2: vec![0.0; slots],
            pe3: vec![0.0; slots],
        }
    }
}

/// pe[s] = product over s' != s of ms[s'], written into `pe`.
#[inline]
fn products_excluding(ms: &[f64], pe: &mut [f64]) {
    let k = ms.len();
    let mut pre = 1.0;
    for s in 0..k {
        pe[s] = pre;
        pre *= ms[s];
    }
    let mut suf = 1.0;
    for s in (0..k).rev() {
        pe[s] *= suf;
        suf *= ms[s];
    }
}

fn accumulate_term(
    probs: &SlotProbabilities,
    term: &ObjectiveTerm,
    inv_batch: f64,
    scratch: &mut TermScratch,
    acc: &mut GradAccum,
) {
    let (tn, k, m) = (probs.types, probs.slots, probs.m);
    let inv_t = 1.0 / tn as f64;
    let i = term.week as usize;
    let oa = term.a.index();
    let ob = term.b.index();

    match term.kind {
        TermKind::Single => {
            let mut q = 0.0;
            for t in 0..tn {
                let mut n1 = 1.0;
                for s in 0..k {
                    let ms = (1.0 - probs.row(t, i, s)[oa]).max(0.0);
                    scratch.m1[t * k + s] = ms;
                    n1 *= ms;
                }
                q += 1.0 - n1;
            }
            q *= inv_t;
            let c = 2.0 * (q - term.target) * inv_batch * inv_t;
            for t in 0..tn {
                products_excluding(&scratch.m1[t * k..(t + 1) * k], &mut scratch.pe1);
                for s in 0..k {
                    let row = probs.row(t, i, s);
                    let g = c * scratch.pe1[s] * row[oa];
                    let slot_row = (t * probs.weeks + i) * k + s;
                    acc.point[slot_row * m + oa] += g;
                    acc.slot_coef[slot_row] -= g;
                }
            }
        }
        TermKind::Within => {
            let mut q = 0.0;
            for t in 0..tn {
                let (mut n1, mut n2, mut n12) = (1.0, 1.0, 1.0);
                for s in 0..k {
                    let row = probs.row(t, i, s);
                    let (p1, p2) = (row[oa], row[ob]);
                    let (m1, m2, m12) = (
                        (1.0 - p1).max(0.0),
                        (1.0 - p2).max(0.0),
                        (1.0 - p1 - p2).max(0.0),
                    );
                    scratch.m1[t * k + s] = m1;
                    scratch.m2[t * k + s] = m2;
                    scratch.m12[t * k + s] = m12;
                    n1 *= m1;
                    n2 *= m2;
                    n12 *= m12;
                }
                q += 1.0 - n1 - n2 + n12;
            }
            q *= inv_t;
            let c = 2.0 * (q - term.target) * inv_batch * inv_t;
            for t in 0..tn {
                products_excluding(&scratch.m1[t * k..(t + 1) * k], &mut scratch.pe1);
                products_excluding(&scratch.m2[t * k..(t + 1) * k], &mut scratch.pe2);
                products_excluding(&scratch.m12[t * k..(t + 1) * k], &mut scratch.pe3);
                for s in 0..k {
                    let row = probs.row(t, i, s);
                    let (p1, p2) = (row[oa], row[ob]);
                    let pe12 = scratch.pe3[s];
                    let slot_row = (t * probs.weeks + i) * k + s;
                    acc.point[slot_row * m + oa] += c * (scratch.pe1[s] - pe12) * p1;
                    acc.point[slot_row * m + ob] += c * (scratch.pe2[s] - pe12) * p2;
                    acc.slot_coef[slot_row] +=
                        c * (pe12 * (p1 + p2) - scratch.pe1[s] * p1 - scratch.pe2[s] * p2);
                }
            }
        }
        TermKind::Across => {
            let i2 = i + 1;
            let mut q = 0.0;
            for t in 0..tn {
                let (mut n1, mut n2) = (1.0, 1.0);
                for s in 0..k {
                    let m1 = (1.0 - probs.row(t, i, s)[oa]).max(0.0);
                    let m2 = (1.0 - probs.row(t, i2, s)[ob]).max(0.0);
                    scratch.m1[t * k + s] = m1;
                    scratch.m2[t * k + s] = m2;
                    n1 *= m1;
                    n2 *= m2;
                }
                q += (1.0 - n1) * (1.0 - n2);
            }
            q *= inv_t;
            let c = 2.0 * (q - term.target) * inv_batch * inv_t;
            for t in 0..tn {
                let n1: f64 = scratch.m1[t * k..(t + 1) * k].iter().product();
                let n2: f64 = scratch.m2[t * k..(t + 1) * k].iter().product();
                products_excluding(&scratch.m1[t * k..(t + 1) * k], &mut scratch.pe1);
                products_excluding(&scratch.m2[t * k..(t + 1) * k], &mut scratch.pe2);
                for s in 0..k {
                    let p1 = probs.row(t, i, s)[oa];
                    let p2 = probs.row(t, i2, s)[ob];
                    let row1 = (t * probs.weeks + i) * k + s;
                    let row2 = (t * probs.weeks + i2) * k + s;
                    let g1 = c * (1.0 - n2) * scratch.pe1[s] * p1;
                    let g2 = c * (1.0 - n1) * scratch.pe2[s] * p2;
                    acc.point[row1 * m + oa] += g1;
                    acc.slot_coef[row1] -= g1;
                    acc.point[row2 * m + ob] += g2;
                    acc.slot_coef[row2] -= g2;
                }
            }
        }
    }
}

/// Exact gradient of the batch objective (mean squared error over the given
/// terms) with respect to every logit.
pub fn gradient_minibatch(params: &ModelParams, batch: &[ObjectiveTerm]) -> Result<Vec<f64>> {
    gradient_minibatch_mode(params, batch, ExecMode::default())
}

/// [`gradient_minibatch`] with an explicit execution mode.
pub fn gradient_minibatch_mode(
    params: &ModelParams,
    batch: &[ObjectiveTerm],
    mode: ExecMode,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty gradient batch".into()));
    }
    let probs = softmax_slots(params)?;
    let slot_rows = params.types * params.weeks * params.slots;
    let inv_batch = 1.0 / batch.len() as f64;

    let acc = map_slice_chunks(mode, batch, TERM_CHUNK, |chunk| {
        let mut acc = GradAccum::new(params.theta.len(), slot_rows);
        let mut scratch = TermScratch::new(params.types, params.slots);
        for term in chunk {
            accumulate_term(&probs, term, inv_batch, &mut scratch, &mut acc);
        }
        acc
    })
    .into_iter()
    .reduce(GradAccum::merge)
    .expect("non-empty batch");

    // dense pass: grad = point + slot_coef * P
    let m = params.m;
    let mut grad = acc.point;
    for row in 0..slot_rows {
        let coef = acc.slot_coef[row];
        if coef != 0.0 {
            let p_row = &probs.p[row * m..(row + 1) * m];
            let g_row = &mut grad[row * m..(row + 1) * m];
            for (g, &p) in g_row.iter_mut().zip(p_row) {
                *g += coef * p;
            }
        }
    }
    for g in &grad {
        if !g.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
    }
    Ok(grad)
}

/// Adam optimizer state with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// One bias-corrected update step.
    pub fn update(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if theta.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "adam shape mismatch: state {}, theta {}, grad {}",
                self.m.len(),
                theta.len(),
                grad.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps_hat);
        }
        Ok(())
    }
}

/// Training configuration. Defaults are the full-scale settings; desk-scale
/// runs override them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub types: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub init_std: f64,
    pub seed: u64,
    /// Evaluate and log the objective every this many epochs.
    pub eval_every: usize,
    /// Stop early once the evaluation objective falls below this.
    pub target_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            types: 500,
            batch_size: 8192,
            learning_rate: 1.0,
            epochs: 8000,
            init_std: 0.001,
            seed: 0,
            eval_every: 50,
            target_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.types < 1 || self.batch_size < 1 {
            return Err(Error::InvalidConfig(
                "types and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.init_std >= 0.0) {
            return Err(Error::InvalidConfig(
                "learning_rate must be > 0 and init_std >= 0".into(),
            ));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be positive".into()));
        }
        Ok(())
    }
}

/// One evaluation record of a training run.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Objective on the fixed evaluation subset.
    pub loss: f64,
    pub seconds: f64,
}

/// A fitted model plus its training log.
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochRecord>,
    /// Terms used (canonical order), for later error analysis.
    pub terms: Vec<ObjectiveTerm>,
}

/// Fit a fresh model of `cfg.types` types over `weeks` weeks and `targets.k`
/// slots to the target statistics with minibatched Adam.
pub fn train(targets: &TargetStatistics, weeks: usize, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_mode(targets, weeks, cfg, ExecMode::default())
}

/// [`train`] with an explicit execution mode.
pub fn train_mode(
    targets: &TargetStatistics,
    weeks: usize,
    cfg: &TrainConfig,
    mode: ExecMode,
) -> Result<TrainOutcome> {
    use rand::seq::SliceRandom;
    use rand_distr::{Distribution, Normal};

    cfg.validate()?;
    if weeks < 1 {
        return Err(Error::InvalidConfig("weeks must be at least 1".into()));
    }
    let canonical = enumerate_terms(targets, weeks)?;
    let mut params = ModelParams::zeros(cfg.types, weeks, targets.k, targets.m);
    if cfg.init_std > 0.0 {
        let normal = Normal::new(0.0, cfg.init_std).expect("validated init_std");
        let mut rng = child_rng(cfg.seed, "init", 0);
        for x in &mut params.theta {
            *x = normal.sample(&mut rng);
        }
    }

    // fixed evaluation subset: the full term set when small, otherwise a
    // seeded sample
    const EVAL_CAP: usize = 8192;
    let eval_terms: Vec<ObjectiveTerm> = if canonical.len() <= EVAL_CAP {
        canonical.clone()
    } else {
        let mut idx: Vec<usize> = (0..canonical.len()).collect();
        idx.shuffle(&mut child_rng(cfg.seed, "eval", 0));
        let mut take: Vec<usize> = idx.into_iter().take(EVAL_CAP).collect();
        take.sort_unstable();
        take.into_iter().map(|i| canonical[i]).collect()
    };

    let mut terms = canonical.clone();
    let mut adam = AdamState::new(params.theta.len(), cfg.learning_rate);
    let mut shuffle_rng = child_rng(cfg.seed, "shuffle", 0);
    let mut log = Vec::new();
    let started = std::time::Instant::now();

    let record = |params: &ModelParams, epoch: usize, log: &mut Vec<EpochRecord>| -> Result<f64> {
        let loss = evaluate_objective_mode(params, &eval_terms, mode)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        log.push(EpochRecord {
            epoch,
            loss,
            seconds: started.elapsed().as_secs_f64(),
        });
        Ok(loss)
    };

    record(&params, 0, &mut log)?;
    for epoch in 1..=cfg.epochs {
        terms.shuffle(&mut shuffle_rng);
        for batch in terms.chunks(cfg.batch_size) {
            let grad = gradient_minibatch_mode(&params, batch, mode)?;
            adam.update(&mut params.theta, &grad)?;
        }
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let loss = record(&params, epoch, &mut log)?;
            if let Some(stop) = cfg.target_loss {
                if loss < stop {
                    break;
                }
            }
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        terms: canonical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::softmax_slots;
    use crate::stats::Provenance;
    use crate::taxonomy::TopicId;

    fn random_params(types: usize, weeks: usize, slots: usize, m: usize, seed: u64) -> ModelParams {
        use rand_distr::{Distribution, Normal};
        let mut rng = crate::rng::seeded(seed);
        let normal = Normal::new(0.0, 0.8).unwrap();
        let mut p = ModelParams::zeros(types, weeks, slots, m);
        for x in &mut p.theta {
            *x = normal.sample(&mut rng);
        }
        p
    }

    /// Targets equal to the model's own statistics.
    fn self_targets(params: &ModelParams) -> TargetStatistics {
        let probs = softmax_slots(params).unwrap();
        let m = params.m;
        // week-averaged statistics of the model
        let mut q_single = vec![0.0; m];
        for o in 1..=m as u16 {
            let topic = TopicId::new(o);
            let avg: f64 = (0..params.weeks)
                .map(|i| crate::model::q_single_p(&probs, i, topic))
                .sum::<f64>()
                / params.weeks as f64;
            q_single[topic.index()] = avg;
        }
        let mut q_within = vec![0.0; m * (m - 1) / 2];
        for (a, b) in crate::tables::tri_pairs(m) {
            let avg: f64 = (0..params.weeks)
                .map(|i| crate::model::q_within_p(&probs, i, a, b))
                .sum::<f64>()
                / params.weeks as f64;
            q_within[crate::tables::tri_index(m, a, b)] = avg;
        }
        let mut q_across = vec![0.0; m * m];
        if params.weeks > 1 {
            for a in 1..=m as u16 {
                for b in 1..=m as u16 {
                    let (a, b) = (TopicId::new(a), TopicId::new(b));
                    let avg: f64 = (0..params.weeks - 1)
                        .map(|i| crate::model::q_across_p(&probs, i, i + 1, a, b))
                        .sum::<f64>()
                        / (params.weeks - 1) as f64;
                    q_across[crate::tables::sq_index(m, a, b)] = avg;
                }
            }
        }
        StatisticsBundle {
            m,
            k: params.slots,
            q_single,
            q_within,
            q_across,
            provenance: Provenance::Raw,
        }
    }

    #[test]
    fn term_counts() {
        assert_eq!(term_count(2, 3), 2 * 3 + 2 * 3 + 9);
        assert_eq!(term_count(4, 469), 4 * 469 + 4 * 109_746 + 3 * 219_961);
        assert_eq!(term_count(4, 469), 1_100_743);
        assert_eq!(term_count(1, 5), 5 + 10);
    }

    #[test]
    fn enumeration_matches_count_and_is_deterministic() {
        let p = random_params(2, 2, 2, 4, 1);
        let targets = self_targets(&p);
        let terms = enumerate_terms(&targets, 2).unwrap();
        assert_eq!(terms.len(), term_count(2, 4));
        assert_eq!(terms, enumerate_terms(&targets, 2).unwrap());
        // r = 1: no across terms
        let t1 = enumerate_terms(&targets, 1).unwrap();
        assert!(t1.iter().all(|t| t.kind != TermKind::Across));
    }

    #[test]
    fn term_coverage_per_week() {
        // every statistic appears once per applicable week: r copies of each
        // single and within target, r - 1 of each across target
        let p = random_params(1, 3, 2, 4, 2);
        let targets = self_targets(&p);
        let terms = enumerate_terms(&targets, 3).unwrap();
        let topic = TopicId::new(2);
        let singles = terms
            .iter()
            .filter(|t| t.kind == TermKind::Single && t.a == topic)
            .count();
        assert_eq!(singles, 3);
        let pair = (TopicId::new(1), TopicId::new(3));
        let withins = terms
            .iter()
            .filter(|t| t.kind == TermKind::Within && t.a == pair.0 && t.b == pair.1)
            .count();
        assert_eq!(withins, 3);
        let across = terms
            .iter()
            .filter(|t| t.kind == TermKind::Across && t.a == pair.0 && t.b == pair.1)
            .count();
        assert_eq!(across, 2);
    }

    #[test]
    fn objective_zero_at_self_targets() {
        // a time-homogeneous model matches its own week-averaged targets
        let mut p = random_params(2, 2, 2, 5, 3);
        let stride = p.slots * p.m;
        let week_len = p.weeks * stride;
        for t in 0..p.types {
            let base = t * week_len;
            let (head, tail) = p.theta.split_at_mut(base + stride);
            tail[..stride].copy_from_slice(&head[base..base + stride]);
        }
        let targets = self_targets(&p);
        let terms = enumerate_terms(&targets, 2).unwrap();
        let j = evaluate_objective(&p, &terms).unwrap();
        assert!(j < 1e-18, "self-consistency J = {j:e}");
    }

    #[test]
    fn single_term_contribution() {
        // one term, model value vs target 0.5: J = (q - 0.5)^2
        let p = random_params(1, 1, 1, 3, 5);
        let probs = softmax_slots(&p).unwrap();
        let q = crate::model::q_single_p(&probs, 0, TopicId::new(1));
        let term = ObjectiveTerm {
            kind: TermKind::Single,
            week: 0,
            a: TopicId::new(1),
            b: TopicId::new(1),
            target: 0.5,
        };
        let j = evaluate_objective(&p, &[term]).unwrap();
        assert!((j - (q - 0.5).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn objective_partition_additivity() {
        let p = random_params(3, 2, 2, 5, 11);
        let targets = self_targets(&p);
        let mut terms = enumerate_terms(&targets, 2).unwrap();
        // randomize targets so J is nonzero
        for (i, t) in terms.iter_mut().enumerate() {
            t.target = ((i * 37 % 100) as f64) / 100.0;
        }
        let full = evaluate_objective(&p, &terms).unwrap();
        let mut weighted = 0.0;
        for chunk in terms.chunks(13) {
            weighted += evaluate_objective(&p, chunk).unwrap() * chunk.len() as f64;
        }
        weighted /= terms.len() as f64;
        assert!((full - weighted).abs() < 1e-12);
    }

    #[test]
    fn gradient_zero_at_perfect_fit() {
        let mut p = random_params(2, 2, 2, 4, 17);
        // time-homogeneous so the averaged targets are met exactly
        let stride = p.slots * p.m;
        let week_len = p.weeks * stride;
        for t in 0..p.types {
            let base = t * week_len;
            let (head, tail) = p.theta.split_at_mut(base + stride);
            tail[..stride].copy_from_slice(&head[base..base + stride]);
        }
        let targets = self_targets(&p);
        let terms = enumerate_terms(&targets, 2).unwrap();
        let grad = gradient_minibatch(&p, &terms).unwrap();
        let max = grad.iter().fold(0.0f64, |a, &g| a.max(g.abs()));
        assert!(max < 1e-12, "max |grad| = {max:e}");
    }

    fn finite_difference(
        params: &ModelParams,
        terms: &[ObjectiveTerm],
        coord: usize,
        h: f64,
    ) -> f64 {
        let mut plus = params.clone();
        plus.theta[coord] += h;
        let mut minus = params.clone();
        minus.theta[coord] -= h;
        let jp = evaluate_objective(&plus, terms).unwrap();
        let jm = evaluate_objective(&minus, terms).unwrap();
        (jp - jm) / (2.0 * h)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = random_params(4, 2, 3, 6, 23);
        let targets = self_targets(&p);
        let mut terms = enumerate_terms(&targets, 2).unwrap();
        for (i, t) in terms.iter_mut().enumerate() {
            t.target = ((i * 29 + 7) % 100) as f64 / 100.0;
        }
        for kind in [TermKind::Single, TermKind::Within, TermKind::Across] {
            let batch: Vec<ObjectiveTerm> =
                terms.iter().copied().filter(|t| t.kind == kind).take(40).collect();
            let grad = gradient_minibatch(&p, &batch).unwrap();
            let mut rng = crate::rng::seeded(99);
            use rand::RngExt;
            for _ in 0..25 {
                let coord = rng.random_range(0..p.theta.len());
                let fd = finite_difference(&p, &batch, coord, 1e-4);
                let an = grad[coord];
                let denom = an.abs().max(fd.abs());
                if denom < 1e-10 {
                    continue;
                }
                assert!(
                    (fd - an).abs() / denom < 1e-4,
                    "{kind:?} coord {coord}: fd {fd:e} vs analytic {an:e}"
                );
            }
        }
    }

    #[test]
    fn single_term_gradient_is_week_local() {
        let p = random_params(3, 2, 2, 5, 31);
        let term = ObjectiveTerm {
            kind: TermKind::Single,
            week: 0,
            a: TopicId::new(2),
            b: TopicId::new(2),
            target: 0.1,
        };
        let grad = gradient_minibatch(&p, &[term]).unwrap();
        // coordinates of week 1 must be exactly zero
        for t in 0..p.types {
            let start = p.row(t, 1, 0);
            let end = p.row(t, 1, p.slots - 1) + p.m;
            for (offset, &g) in grad[start..end].iter().enumerate() {
                assert_eq!(g, 0.0, "week-1 coordinate {} has gradient", start + offset);
            }
        }
    }

    #[test]
    fn adam_first_step_magnitude() {
        let mut theta = vec![0.0; 8];
        let grad = vec![1.0; 8];
        let mut adam = AdamState::new(8, 0.1);
        adam.update(&mut theta, &grad).unwrap();
        for &x in &theta {
            assert!((x + 0.1).abs() < 1e-6, "theta {x}");
        }
    }

    #[test]
    fn adam_zero_gradient_no_motion() {
        let mut theta = vec![1.5; 4];
        let grad = vec![0.0; 4];
        let mut adam = AdamState::new(4, 0.5);
        for _ in 0..10 {
            adam.update(&mut theta, &grad).unwrap();
        }
        assert!(theta.iter().all(|&x| x == 1.5));
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut adam = AdamState::new(4, 0.1);
        let mut theta = vec![0.0; 3];
        assert!(adam.update(&mut theta, &[0.0; 3]).is_err());
    }

    #[test]
    fn objective_shift_invariance() {
        // adding a constant to one slot's logits leaves J unchanged
        let p = random_params(2, 2, 2, 5, 41);
        let targets = self_targets(&p);
        let mut terms = enumerate_terms(&targets, 2).unwrap();
        for (i, t) in terms.iter_mut().enumerate() {
            t.target = ((i * 13 + 3) % 90) as f64 / 100.0;
        }
        let j0 = evaluate_objective(&p, &terms).unwrap();
        let mut shifted = p.clone();
        let row = shifted.row(1, 0, 1);
        for x in &mut shifted.theta[row..row + shifted.m] {
            *x += 3.7;
        }
        let j1 = evaluate_objective(&shifted, &terms).unwrap();
        assert!((j0 - j1).abs() < 1e-12, "{j0} vs {j1}");
    }

    #[test]
    fn training_replay_is_bit_identical() {
        let source = random_params(2, 2, 2, 5, 51);
        let targets = self_targets(&source);
        let cfg = TrainConfig {
            types: 4,
            batch_size: 16,
            learning_rate: 0.1,
            epochs: 30,
            init_std: 0.001,
            seed: 7,
            eval_every: 10,
            target_loss: None,
        };
        let a = train(&targets, 2, &cfg).unwrap();
        let b = train(&targets, 2, &cfg).unwrap();
        assert_eq!(a.params.theta, b.params.theta);
        let seq = train_mode(&targets, 2, &cfg, ExecMode::Sequential).unwrap();
        assert_eq!(a.params.theta, seq.params.theta);
    }

    #[test]
    fn non_finite_objective_aborts_with_diagnostic() {
        let source = random_params(1, 1, 2, 4, 71);
        let mut targets = self_targets(&source);
        targets.q_single[0] = f64::NAN;
        let cfg = TrainConfig {
            types: 2,
            epochs: 5,
            eval_every: 1,
            seed: 1,
            ..TrainConfig::default()
        };
        match train(&targets, 1, &cfg) {
            Err(Error::Divergence { .. }) => {}
            Err(e) => panic!("wrong error: {e}"),
            Ok(_) => panic!("expected divergence"),
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let source = random_params(1, 1, 2, 4, 61);
        let targets = self_targets(&source);
        let cfg = TrainConfig {
            types: 3,
            epochs: 0,
            seed: 5,
            ..TrainConfig::default()
        };
        let out = train(&targets, 1, &cfg).unwrap();
        // all values near zero with std 0.001, none updated
        assert!(out.params.theta.iter().all(|&x| x.abs() < 0.01));
        assert_eq!(out.log.len(), 1);
    }
}
