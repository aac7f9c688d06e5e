//! Data-validation analytics: error distributions against targets, per-week
//! statistics, stationarity correlations, and the distinct-topics check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::StatisticsBundle;
use crate::tables::{sq_index, tri_index, tri_len};
use crate::taxonomy::TopicSetSequence;

/// Signed errors of one statistic family against its targets, plus CDF
/// queries over absolute and relative errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorDistribution {
    /// Signed errors (estimate minus target), in term order.
    pub signed: Vec<f64>,
    /// Targets aligned with `signed`.
    pub targets: Vec<f64>,
    /// Relative errors, defined only where `target >= rel_threshold`.
    pub relative: Vec<f64>,
    pub rel_threshold: f64,
}

impl ErrorDistribution {
    pub fn from_errors(signed: Vec<f64>, targets: Vec<f64>, rel_threshold: f64) -> Self {
        debug_assert_eq!(signed.len(), targets.len());
        let relative = signed
            .iter()
            .zip(&targets)
            .filter(|&(_, &t)| t >= rel_threshold)
            .map(|(&e, &t)| (e / t).abs())
            .collect();
        ErrorDistribution {
            signed,
            targets,
            relative,
            rel_threshold,
        }
    }

    /// Fraction of terms with absolute error at most `x`.
    pub fn fraction_abs_within(&self, x: f64) -> f64 {
        if self.signed.is_empty() {
            return 1.0;
        }
        self.signed.iter().filter(|e| e.abs() <= x).count() as f64 / self.signed.len() as f64
    }

    /// Fraction of thresholded terms with relative error at most `x`.
    pub fn fraction_rel_within(&self, x: f64) -> f64 {
        if self.relative.is_empty() {
            return 1.0;
        }
        self.relative.iter().filter(|&&e| e <= x).count() as f64 / self.relative.len() as f64
    }

    /// (threshold, fraction below) pairs of the absolute-error CDF at the
    /// given thresholds.
    pub fn abs_cdf_points(&self, thresholds: &[f64]) -> Vec<(f64, f64)> {
        thresholds
            .iter()
            .map(|&t| (t, self.fraction_abs_within(t)))
            .collect()
    }
}

/// Signed per-entry errors of a statistics bundle against a target bundle,
/// across all three families.
pub fn statistic_errors(
    estimate: &StatisticsBundle,
    targets: &StatisticsBundle,
    rel_threshold: f64,
) -> Result<ErrorDistribution> {
    if estimate.m != targets.m {
        return Err(Error::InvalidArgument(format!(
            "bundle shapes differ: {} vs {} topics",
            estimate.m, targets.m
        )));
    }
    let mut signed =
        Vec::with_capacity(estimate.q_single.len() + estimate.q_within.len() + estimate.q_across.len());
    let mut target_values = Vec::with_capacity(signed.capacity());
    for (family_est, family_tgt) in [
        (&estimate.q_single, &targets.q_single),
        (&estimate.q_within, &targets.q_within),
        (&estimate.q_across, &targets.q_across),
    ] {
        for (&e, &t) in family_est.iter().zip(family_tgt.iter()) {
            signed.push(e - t);
            target_values.push(t);
        }
    }
    Ok(ErrorDistribution::from_errors(signed, target_values, rel_threshold))
}

/// Statistics of one specific week (not week-averaged).
#[derive(Clone, Debug)]
pub struct PerWeekTables {
    pub m: usize,
    pub k: usize,
    /// `single[j][topic]`, one per week.
    pub single: Vec<Vec<f64>>,
    /// `within[j]`, triangular, one per week.
    pub within: Vec<Vec<f64>>,
    /// `across[j]`, full square, one per transition `j -> j+1`.
    pub across: Vec<Vec<f64>>,
}

/// Noiseless per-week counting over the whole population.
pub fn per_week_statistics(
    sequences: &[TopicSetSequence],
    m: usize,
    k: usize,
) -> Result<PerWeekTables> {
    let weeks = sequences.first().map(TopicSetSequence::weeks).unwrap_or(0);
    if weeks < 2 {
        return Err(Error::InvalidArgument(
            "per-week statistics need at least 2 weeks".into(),
        ));
    }
    for seq in sequences {
        if seq.weeks() != weeks {
            return Err(Error::InvalidArgument(format!(
                "user {} has {} weeks, expected {weeks}",
                seq.user,
                seq.weeks()
            )));
        }
    }
    let n = sequences.len() as f64;
    let mut single = vec![vec![0.0; m]; weeks];
    let mut within = vec![vec![0.0; tri_len(m)]; weeks];
    let mut across = vec![vec![0.0; m * m]; weeks - 1];
    for seq in sequences {
        for (j, set) in seq.sets.iter().enumerate() {
            let topics = set.as_slice();
            for (a_idx, &a) in topics.iter().enumerate() {
                single[j][a.index()] += 1.0;
                for &b in &topics[a_idx + 1..] {
                    within[j][tri_index(m, a, b)] += 1.0;
                }
            }
            if j >= 1 {
                for &a in seq.sets[j - 1].as_slice() {
                    for &b in topics {
                        across[j - 1][sq_index(m, a, b)] += 1.0;
                    }
                }
            }
        }
    }
    if n > 0.0 {
        for table in single.iter_mut().chain(within.iter_mut()).chain(across.iter_mut()) {
            for v in table.iter_mut() {
                *v /= n;
            }
        }
    }
    Ok(PerWeekTables {
        m,
        k,
        single,
        within,
        across,
    })
}

/// Pearson correlation coefficient. Errors on length mismatch, fewer than
/// two points, or zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "pearson inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument(
            "pearson needs at least two points".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        cov += da * db;
        vx += da * da;
        vy += db * db;
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::ZeroVariance(
            "an input vector is constant".into(),
        ));
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// Pairwise Pearson correlations of per-week statistic tables.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StationarityReport {
    /// `single[j1][j2]`: correlation of the week-j1 and week-j2 topic
    /// frequency vectors.
    pub single: Vec<Vec<f64>>,
    pub within: Vec<Vec<f64>>,
    /// Indexed by transition (week j to j+1).
    pub across: Vec<Vec<f64>>,
}

fn correlation_matrix(tables: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = tables.len();
    let mut out = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let r = pearson(&tables[i], &tables[j])?;
            out[i][j] = r;
            out[j][i] = r;
        }
    }
    Ok(out)
}

/// Correlations between every pair of weeks (and week transitions), per
/// statistic family.
pub fn stationarity_report(
    sequences: &[TopicSetSequence],
    m: usize,
    k: usize,
) -> Result<StationarityReport> {
    let tables = per_week_statistics(sequences, m, k)?;
    Ok(StationarityReport {
        single: correlation_matrix(&tables.single)?,
        within: correlation_matrix(&tables.within)?,
        across: correlation_matrix(&tables.across)?,
    })
}

/// Normalized histogram of the number of distinct topics in each user's
/// first `weeks` sets. Index `d` holds the fraction of users with exactly
/// `d` distinct topics.
pub fn distinct_topics_distribution(
    sequences: &[TopicSetSequence],
    weeks: usize,
) -> Result<Vec<f64>> {
    if sequences.is_empty() {
        return Err(Error::InvalidArgument("empty population".into()));
    }
    let mut max_distinct = 0usize;
    let mut counts: Vec<usize> = Vec::new();
    let mut per_user = Vec::with_capacity(sequences.len());
    for seq in sequences {
        if seq.weeks() < weeks {
            return Err(Error::InvalidArgument(format!(
                "user {} has {} weeks, need {weeks}",
                seq.user,
                seq.weeks()
            )));
        }
        let mut topics: Vec<u16> = seq.sets[..weeks]
            .iter()
            .flat_map(|s| s.iter().map(|t| t.get()))
            .collect();
        topics.sort_unstable();
        topics.dedup();
        max_distinct = max_distinct.max(topics.len());
        per_user.push(topics.len());
    }
    counts.resize(max_distinct + 1, 0);
    for d in per_user {
        counts[d] += 1;
    }
    let n = sequences.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Pearson correlation of two histograms over their common support.
pub fn histogram_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    let len = a.len().max(b.len());
    let pad = |v: &[f64]| {
        let mut out = v.to_vec();
        out.resize(len, 0.0);
        out
    };
    pearson(&pad(a), &pad(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{count_marginals, raw_statistics};
    use crate::taxonomy::TopicSet;

    fn seq(user: &str, sets: &[&[u16]]) -> TopicSetSequence {
        TopicSetSequence {
            user: user.into(),
            sets: sets
                .iter()
                .map(|ids| TopicSet::from_ids(ids.iter().copied()))
                .collect(),
        }
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pearson_errors() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::ZeroVariance(_))
        ));
        assert!(pearson(&[1.0], &[2.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn pearson_self_and_symmetry() {
        let x = [0.3, 1.7, 0.2, 5.0, 2.2];
        let y = [9.1, 0.4, 3.3, 1.0, 2.8];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &y).unwrap() - pearson(&y, &x).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn error_distribution_cdf() {
        // one term off by 0.002 among 100: CDF at 0.001 is 0.99
        let mut signed = vec![0.0; 100];
        signed[17] = 0.002;
        let targets = vec![0.5; 100];
        let dist = ErrorDistribution::from_errors(signed, targets, 0.001);
        assert!((dist.fraction_abs_within(0.001) - 0.99).abs() < 1e-12);
        assert_eq!(dist.fraction_abs_within(0.01), 1.0);
    }

    #[test]
    fn identical_bundles_have_zero_errors() {
        let pop = crate::simulator::GroundTruthPopulation {
            sequences: vec![seq("a", &[&[1, 2], &[2, 3]]), seq("b", &[&[1, 3], &[1, 2]])],
        };
        let bundle = raw_statistics(&count_marginals(&pop, 3, 2).unwrap()).unwrap();
        let dist = statistic_errors(&bundle, &bundle, 0.001).unwrap();
        assert!(dist.signed.iter().all(|&e| e == 0.0));
        assert_eq!(dist.fraction_abs_within(0.0), 1.0);
    }

    #[test]
    fn relative_errors_respect_threshold() {
        let est = vec![0.25, 0.0008];
        let tgt = vec![0.20, 0.0004];
        let signed: Vec<f64> = est.iter().zip(&tgt).map(|(e, t)| e - t).collect();
        let dist = ErrorDistribution::from_errors(signed, tgt, 0.001);
        // only the first target passes the threshold: rel error 0.25
        assert_eq!(dist.relative.len(), 1);
        assert!((dist.relative[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn per_week_hand_example() {
        let pop = vec![
            seq("a", &[&[1, 2], &[1, 3]]),
            seq("b", &[&[2, 3], &[1, 2]]),
        ];
        let t = per_week_statistics(&pop, 3, 2).unwrap();
        // week 0: topic 2 in both users
        assert_eq!(t.single[0][1], 1.0);
        assert_eq!(t.single[0][0], 0.5);
        // week 1: topic 1 in both
        assert_eq!(t.single[1][0], 1.0);
        // within week 0: {1,2} and {2,3}
        let ti = |a: u16, b: u16| tri_index(3, crate::taxonomy::TopicId::new(a), crate::taxonomy::TopicId::new(b));
        assert_eq!(t.within[0][ti(1, 2)], 0.5);
        assert_eq!(t.within[0][ti(2, 3)], 0.5);
        // across: user a has 1 -> 1, user b has 2 -> 2
        let si = |a: u16, b: u16| sq_index(3, crate::taxonomy::TopicId::new(a), crate::taxonomy::TopicId::new(b));
        assert_eq!(t.across[0][si(1, 1)], 0.5);
        assert_eq!(t.across[0][si(2, 2)], 0.5);
    }

    #[test]
    fn identical_weeks_give_identical_tables() {
        let pop = vec![seq("a", &[&[1, 2], &[1, 2]]), seq("b", &[&[2, 3], &[2, 3]])];
        let t = per_week_statistics(&pop, 3, 2).unwrap();
        assert_eq!(t.single[0], t.single[1]);
        assert_eq!(t.within[0], t.within[1]);
    }

    #[test]
    fn averaging_identity_matches_marginal_counts() {
        let api = crate::simulator::ApiConfig::new(
            0.05,
            3,
            2,
            crate::taxonomy::Taxonomy::of_size(15).unwrap(),
        )
        .unwrap();
        let cfg = crate::simulator::PopulationConfig {
            n_users: 500,
            ..Default::default()
        };
        let pop = crate::simulator::generate_population(&cfg, &api, 77).unwrap();
        let per_week = per_week_statistics(&pop.sequences, 15, 3).unwrap();
        let bundle = raw_statistics(&count_marginals(&pop, 15, 3).unwrap()).unwrap();
        for idx in 0..bundle.q_within.len() {
            let avg = (per_week.within[0][idx] + per_week.within[1][idx]) / 2.0;
            assert!((avg - bundle.q_within[idx]).abs() < 1e-12);
        }
        for idx in 0..bundle.q_across.len() {
            assert!((per_week.across[0][idx] - bundle.q_across[idx]).abs() < 1e-12);
        }
    }

    #[test]
    fn stationarity_frozen_population_is_perfectly_correlated() {
        let api = crate::simulator::ApiConfig::new(
            0.05,
            3,
            4,
            crate::taxonomy::Taxonomy::of_size(20).unwrap(),
        )
        .unwrap();
        let cfg = crate::simulator::PopulationConfig {
            n_users: 300,
            persistence_rho: 1.0,
            ..Default::default()
        };
        let pop = crate::simulator::generate_population(&cfg, &api, 13).unwrap();
        let report = stationarity_report(&pop.sequences, 20, 3).unwrap();
        for row in &report.single {
            for &r in row {
                assert!((r - 1.0).abs() < 1e-12);
            }
        }
        for row in &report.across {
            for &r in row {
                assert!((r - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn distinct_topics_examples() {
        // k = 2, r = 2: {1,2} then {1,3} -> 3 distinct
        let pop = vec![seq("a", &[&[1, 2], &[1, 3]])];
        let hist = distinct_topics_distribution(&pop, 2).unwrap();
        assert_eq!(hist[3], 1.0);

        // frozen sets: all mass at exactly k
        let pop = vec![
            seq("a", &[&[1, 2], &[1, 2]]),
            seq("b", &[&[3, 4], &[3, 4]]),
        ];
        let hist = distinct_topics_distribution(&pop, 2).unwrap();
        assert_eq!(hist[2], 1.0);
    }

    #[test]
    fn distinct_support_bounds_for_full_sets() {
        let api = crate::simulator::ApiConfig::new(
            0.05,
            4,
            3,
            crate::taxonomy::Taxonomy::of_size(10).unwrap(),
        )
        .unwrap();
        let cfg = crate::simulator::PopulationConfig {
            n_users: 400,
            persistence_rho: 0.2,
            ..Default::default()
        };
        let pop = crate::simulator::generate_population(&cfg, &api, 5).unwrap();
        let hist = distinct_topics_distribution(&pop.sequences, 3).unwrap();
        let k = 4;
        let max_support = (3 * k).min(10);
        for (d, &frac) in hist.iter().enumerate() {
            if frac > 0.0 {
                assert!(d >= k && d <= max_support, "impossible distinct count {d}");
            }
        }
    }

    #[test]
    fn histogram_correlation_pads_support() {
        let a = [0.0, 0.5, 0.5];
        let b = [0.0, 0.4, 0.5, 0.1];
        let r = histogram_correlation(&a, &b).unwrap();
        assert!(r > 0.8);
    }
}
