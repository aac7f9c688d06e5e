//! Differentially private marginal statistics.
//!
//! From the first two weeks of a population we count, per topic pair, how
//! many users carry the pair within week one (`f11`), within week two
//! (`f22`), and across the two weeks (`f12`). Adding one user changes exactly
//! C(k,2) entries of `f11`/`f22` and k^2 entries of `f12` by one each, so the
//! l2 sensitivities are sqrt(C(k,2)) and k. Gaussian noise calibrated to
//! those sensitivities makes the released counts (epsilon, delta)-DP, and
//! everything downstream is post-processing.
//!
//! Noise scale calibration inverts the exact Gaussian-mechanism condition
//!
//! ```text
//! Phi(d/(2s) - es/d) - exp(e) * Phi(-d/(2s) - es/d) <= delta
//! ```
//!
//! by bisection, with Phi evaluated through erfc so that delta values as
//! small as 1e-15 retain full relative precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_reduce_chunks, ExecMode, USER_CHUNK};
use crate::rng::child_rng;
use crate::simulator::GroundTruthPopulation;
use crate::tables::{sq_index, tri_index, tri_len};
use crate::taxonomy::TopicSetSequence;

/// Which count vector a sensitivity or noise scale refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CountTable {
    F11,
    F22,
    F12,
}

/// Raw (pre-noise) pair-count tables over the first two weeks.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCounts {
    pub m: usize,
    pub k: usize,
    /// Upper-triangular: users with both topics in week one.
    pub f11: Vec<u64>,
    /// Upper-triangular: users with both topics in week two.
    pub f22: Vec<u64>,
    /// Full m x m: users with topic a in week one and topic b in week two.
    pub f12: Vec<u64>,
    pub n_users: u64,
}

fn count_user(seq: &TopicSetSequence, m: usize, f11: &mut [u64], f22: &mut [u64], f12: &mut [u64]) {
    let s0 = &seq.sets[0];
    let s1 = &seq.sets[1];
    let w0 = s0.as_slice();
    let w1 = s1.as_slice();
    for i in 0..w0.len() {
        for j in (i + 1)..w0.len() {
            f11[tri_index(m, w0[i], w0[j])] += 1;
        }
    }
    for i in 0..w1.len() {
        for j in (i + 1)..w1.len() {
            f22[tri_index(m, w1[i], w1[j])] += 1;
        }
    }
    for &a in w0 {
        for &b in w1 {
            f12[sq_index(m, a, b)] += 1;
        }
    }
}

/// Count the pair marginals over exactly the first two weeks of every
/// sequence.
pub fn count_marginals(pop: &GroundTruthPopulation, m: usize, k: usize) -> Result<RawCounts> {
    count_marginals_mode(pop, m, k, ExecMode::default())
}

/// [`count_marginals`] with an explicit execution mode.
pub fn count_marginals_mode(
    pop: &GroundTruthPopulation,
    m: usize,
    k: usize,
    mode: ExecMode,
) -> Result<RawCounts> {
    for seq in &pop.sequences {
        if seq.weeks() < 2 {
            return Err(Error::InvalidArgument(format!(
                "user {} has {} weeks; marginal counting needs at least 2",
                seq.user,
                seq.weeks()
            )));
        }
    }

    let empty = || {
        (
            vec![0u64; tri_len(m)],
            vec![0u64; tri_len(m)],
            vec![0u64; m * m],
        )
    };
    let merged = map_reduce_chunks(
        mode,
        &pop.sequences,
        USER_CHUNK,
        |chunk| {
            let (mut f11, mut f22, mut f12) = empty();
            for seq in chunk {
                count_user(seq, m, &mut f11, &mut f22, &mut f12);
            }
            (f11, f22, f12)
        },
        |(mut a11, mut a22, mut a12), (b11, b22, b12)| {
            for (a, b) in a11.iter_mut().zip(&b11) {
                *a += b;
            }
            for (a, b) in a22.iter_mut().zip(&b22) {
                *a += b;
            }
            for (a, b) in a12.iter_mut().zip(&b12) {
                *a += b;
            }
            (a11, a22, a12)
        },
    );
    let (f11, f22, f12) = merged.unwrap_or_else(empty);
    Ok(RawCounts {
        m,
        k,
        f11,
        f22,
        f12,
        n_users: pop.sequences.len() as u64,
    })
}

/// l2 sensitivity of a count table under add-one-user neighbors:
/// sqrt(k(k-1)/2) for the within-week tables, k for the cross-week table.
pub fn l2_sensitivity(which: CountTable, k: usize) -> f64 {
    match which {
        CountTable::F11 | CountTable::F22 => ((k * (k - 1) / 2) as f64).sqrt(),
        CountTable::F12 => k as f64,
    }
}

/// Standard normal CDF through erfc; full relative precision in the far
/// lower tail.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// The exact delta achieved by the Gaussian mechanism with noise scale
/// `sigma` on a query of l2 sensitivity `delta2`, at privacy parameter
/// `epsilon`.
pub fn gaussian_mechanism_delta(delta2: f64, epsilon: f64, sigma: f64) -> f64 {
    let r = sigma / delta2;
    let a = 1.0 / (2.0 * r) - epsilon * r;
    let b = -1.0 / (2.0 * r) - epsilon * r;
    normal_cdf(a) - epsilon.exp() * normal_cdf(b)
}

/// Smallest noise scale sigma making the Gaussian mechanism
/// (epsilon, delta)-DP for a query of l2 sensitivity `delta2`.
///
/// The condition depends on sigma only through sigma/delta2, so the
/// bisection runs on that ratio; scaling delta2 scales the result exactly.
pub fn calibrate_gaussian_sigma(delta2: f64, epsilon: f64, delta: f64) -> Result<f64> {
    if !(delta2 > 0.0) || !(epsilon > 0.0) || !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "calibration requires delta2 > 0, epsilon > 0, delta in (0, 1]; \
             got ({delta2}, {epsilon}, {delta})"
        )));
    }
    let f = |ratio: f64| gaussian_mechanism_delta(1.0, epsilon, ratio);

    // Bracket the root: f is strictly decreasing, f(0+) = 1, f(inf) = 0.
    let mut lo = 1e-6;
    let mut hi = 1.0;
    while f(lo) < delta {
        hi = lo;
        lo /= 8.0;
        if lo < 1e-300 {
            return Ok(delta2 * lo);
        }
    }
    while f(hi) > delta {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::InvalidArgument(
                "gaussian calibration failed to bracket".into(),
            ));
        }
    }
    for _ in 0..200 {
        if (hi - lo) <= 1e-12 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // hi side satisfies the condition
    Ok(delta2 * hi)
}

/// How the user count entering normalization is released.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountRelease {
    /// Spend a small budget slice on a Gaussian release of the user count.
    Dp,
    /// The operator declares the user count public; use it exactly.
    Public,
}

/// Privacy parameters of the statistics release.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    /// Fractions of the table budget assigned to (f11, f22, f12).
    pub budget_split: [f64; 3],
    /// How the user count is released.
    pub count_release: CountRelease,
    /// Fraction of epsilon (and delta) reserved for the count release when
    /// it is DP; the tables share the remainder by `budget_split`.
    pub count_budget_frac: f64,
}

/// Calibrated noise scales, one per release.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseScales {
    pub f11: f64,
    pub f22: f64,
    pub f12: f64,
    /// Scale of the user-count release; 0 when the count is public.
    pub count: f64,
}

impl PrivacyParams {
    /// Total budget epsilon = ln 3, delta = 1e-15, split (0.25, 0.25, 0.50),
    /// DP count release on 1% of the budget.
    pub fn strict_default() -> Self {
        PrivacyParams {
            epsilon: 3f64.ln(),
            delta: 1e-15,
            budget_split: [0.25, 0.25, 0.50],
            count_release: CountRelease::Dp,
            count_budget_frac: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be > 0".into()));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::InvalidConfig("delta must be in (0, 1]".into()));
        }
        if self.budget_split.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::InvalidConfig(
                "budget split fractions must be positive".into(),
            ));
        }
        let sum: f64 = self.budget_split.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "budget split must sum to 1, got {sum}"
            )));
        }
        let frac_ok = match self.count_release {
            CountRelease::Dp => self.count_budget_frac > 0.0 && self.count_budget_frac < 1.0,
            CountRelease::Public => true,
        };
        if !frac_ok {
            return Err(Error::InvalidConfig(
                "count budget fraction must be in (0, 1) for a DP count".into(),
            ));
        }
        Ok(())
    }

    /// Per-release (epsilon, delta) shares. The delta budget is split in the
    /// same proportions as epsilon and the releases compose by addition.
    fn shares(&self) -> [(f64, f64); 4] {
        let count_frac = match self.count_release {
            CountRelease::Dp => self.count_budget_frac,
            CountRelease::Public => 0.0,
        };
        let table_eps = self.epsilon * (1.0 - count_frac);
        let table_delta = self.delta * (1.0 - count_frac);
        [
            (
                table_eps * self.budget_split[0],
                table_delta * self.budget_split[0],
            ),
            (
                table_eps * self.budget_split[1],
                table_delta * self.budget_split[1],
            ),
            (
                table_eps * self.budget_split[2],
                table_delta * self.budget_split[2],
            ),
            (self.epsilon * count_frac, self.delta * count_frac),
        ]
    }

    /// Calibrate the per-table noise scales for top sets of size `k`.
    pub fn noise_scales(&self, k: usize) -> Result<NoiseScales> {
        self.validate()?;
        let shares = self.shares();
        let f11 = calibrate_gaussian_sigma(
            l2_sensitivity(CountTable::F11, k),
            shares[0].0,
            shares[0].1,
        )?;
        let f22 = calibrate_gaussian_sigma(
            l2_sensitivity(CountTable::F22, k),
            shares[1].0,
            shares[1].1,
        )?;
        let f12 = calibrate_gaussian_sigma(
            l2_sensitivity(CountTable::F12, k),
            shares[2].0,
            shares[2].1,
        )?;
        let count = match self.count_release {
            // adding one user changes the count by exactly 1
            CountRelease::Dp => calibrate_gaussian_sigma(1.0, shares[3].0, shares[3].1)?,
            CountRelease::Public => 0.0,
        };
        Ok(NoiseScales {
            f11,
            f22,
            f12,
            count,
        })
    }
}

/// The noisy, real-valued count tables released by the Gaussian mechanism.
#[derive(Clone, Debug)]
pub struct NoisyCounts {
    pub m: usize,
    pub k: usize,
    pub f11: Vec<f64>,
    pub f22: Vec<f64>,
    pub f12: Vec<f64>,
    /// The released user count (noisy under a DP count release).
    pub n_users_dp: f64,
    pub scales: NoiseScales,
}

fn add_noise_to(values: &[u64], sigma: f64, seed: u64, label: &str, mode: ExecMode) -> Vec<f64> {
    use rand_distr::{Distribution, Normal};
    if sigma == 0.0 {
        return values.iter().map(|&v| v as f64).collect();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    // one child stream per entry: deterministic under any thread schedule
    crate::exec::map_indices(mode, values.len(), 4096, |i| {
        values[i] as f64 + normal.sample(&mut child_rng(seed, label, i as u64))
    })
}

/// Apply the calibrated Gaussian mechanism to the raw counts. With
/// `NoiseScales` of zero (testing mode) the output equals the input.
pub fn add_gaussian_noise(
    counts: &RawCounts,
    params: &PrivacyParams,
    seed: u64,
) -> Result<NoisyCounts> {
    add_gaussian_noise_mode(counts, params, seed, ExecMode::default())
}

/// [`add_gaussian_noise`] with an explicit execution mode.
pub fn add_gaussian_noise_mode(
    counts: &RawCounts,
    params: &PrivacyParams,
    seed: u64,
    mode: ExecMode,
) -> Result<NoisyCounts> {
    let scales = params.noise_scales(counts.k)?;
    noise_with_scales(counts, &scales, params.count_release, seed, mode)
}

/// Noise injection with explicit scales; `sigma = 0` everywhere reproduces
/// the raw counts exactly (used by `--no-noise`).
pub fn noise_with_scales(
    counts: &RawCounts,
    scales: &NoiseScales,
    count_release: CountRelease,
    seed: u64,
    mode: ExecMode,
) -> Result<NoisyCounts> {
    use rand_distr::{Distribution, Normal};
    let n_users_dp = match count_release {
        CountRelease::Public => counts.n_users as f64,
        CountRelease::Dp => {
            if scales.count == 0.0 {
                counts.n_users as f64
            } else {
                let normal = Normal::new(0.0, scales.count).expect("count sigma positive");
                counts.n_users as f64 + normal.sample(&mut child_rng(seed, "count", 0))
            }
        }
    };
    Ok(NoisyCounts {
        m: counts.m,
        k: counts.k,
        f11: add_noise_to(&counts.f11, scales.f11, seed, "f11", mode),
        f22: add_noise_to(&counts.f22, scales.f22, seed, "f22", mode),
        f12: add_noise_to(&counts.f12, scales.f12, seed, "f12", mode),
        n_users_dp,
        scales: *scales,
    })
}

/// Where a statistics bundle came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// Noiseless counts; testing and calibration only.
    Raw,
    /// Released through the Gaussian mechanism.
    Dp {
        epsilon: f64,
        delta: f64,
        budget_split: [f64; 3],
        scales: NoiseScales,
        n_users_dp: f64,
        seed: u64,
    },
}

/// The normalized target statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct StatisticsBundle {
    pub m: usize,
    pub k: usize,
    /// Week-averaged probability a topic is in a user's set.
    pub q_single: Vec<f64>,
    /// Week-averaged probability a pair is in a user's set (triangular).
    pub q_within: Vec<f64>,
    /// Probability of (topic week 1, topic week 2) across the week pair.
    pub q_across: Vec<f64>,
    pub provenance: Provenance,
}

/// Derive the per-topic statistic from the pair statistic: every set has
/// exactly k topics, so summing a topic's pair values over partners
/// overcounts its own frequency k-1 times.
pub fn derive_q_single(q_within: &[f64], m: usize, k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::InvalidArgument(
            "q_single derivation requires k >= 2".into(),
        ));
    }
    if q_within.len() != tri_len(m) {
        return Err(Error::InvalidArgument(format!(
            "q_within has {} entries, expected {}",
            q_within.len(),
            tri_len(m)
        )));
    }
    let mut single = vec![0.0f64; m];
    for (idx, &value) in q_within.iter().enumerate() {
        let (a, b) = crate::tables::tri_pair_at(m, idx);
        single[a.index()] += value;
        single[b.index()] += value;
    }
    let denom = (k - 1) as f64;
    for s in &mut single {
        *s /= denom;
    }
    Ok(single)
}

fn clip01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Normalize noisy counts into probabilities. Reads only the released
/// tables and the released user count; clipping keeps every probability in
/// [0, 1], which is post-processing and preserves the DP guarantee.
pub fn normalize_to_statistics(noisy: &NoisyCounts, provenance: Provenance) -> Result<StatisticsBundle> {
    let n = noisy.n_users_dp;
    if !(n > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "released user count must be positive, got {n}"
        )));
    }
    let q_within: Vec<f64> = noisy
        .f11
        .iter()
        .zip(&noisy.f22)
        .map(|(&a, &b)| clip01((a + b).max(0.0) / (2.0 * n)))
        .collect();
    let q_across: Vec<f64> = noisy
        .f12
        .iter()
        .map(|&v| clip01(v.max(0.0) / n))
        .collect();
    let q_single = derive_q_single(&q_within, noisy.m, noisy.k)?;
    Ok(StatisticsBundle {
        m: noisy.m,
        k: noisy.k,
        q_single,
        q_within,
        q_across,
        provenance,
    })
}

/// Noiseless statistics straight from raw counts (testing / oracle path).
pub fn raw_statistics(counts: &RawCounts) -> Result<StatisticsBundle> {
    let noisy = NoisyCounts {
        m: counts.m,
        k: counts.k,
        f11: counts.f11.iter().map(|&v| v as f64).collect(),
        f22: counts.f22.iter().map(|&v| v as f64).collect(),
        f12: counts.f12.iter().map(|&v| v as f64).collect(),
        n_users_dp: counts.n_users as f64,
        scales: NoiseScales {
            f11: 0.0,
            f22: 0.0,
            f12: 0.0,
            count: 0.0,
        },
    };
    normalize_to_statistics(&noisy, Provenance::Raw)
}

/// Full DP release: count, noise, normalize.
pub fn release_dp_statistics(
    pop: &GroundTruthPopulation,
    m: usize,
    k: usize,
    params: &PrivacyParams,
    seed: u64,
    mode: ExecMode,
) -> Result<StatisticsBundle> {
    let counts = count_marginals_mode(pop, m, k, mode)?;
    let noisy = add_gaussian_noise_mode(&counts, params, seed, mode)?;
    let provenance = Provenance::Dp {
        epsilon: params.epsilon,
        delta: params.delta,
        budget_split: params.budget_split,
        scales: noisy.scales,
        n_users_dp: noisy.n_users_dp,
        seed,
    };
    normalize_to_statistics(&noisy, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::{TopicSet, TopicSetSequence};

    fn seq(user: &str, sets: &[&[u16]]) -> TopicSetSequence {
        TopicSetSequence {
            user: user.into(),
            sets: sets
                .iter()
                .map(|ids| TopicSet::from_ids(ids.iter().copied()))
                .collect(),
        }
    }

    fn tiny_pop() -> GroundTruthPopulation {
        // users A: {1,2}/{1,3} and B: {1,3}/{2,3}, k = 2
        GroundTruthPopulation {
            sequences: vec![
                seq("A", &[&[1, 2], &[1, 3]]),
                seq("B", &[&[1, 3], &[2, 3]]),
            ],
        }
    }

    #[test]
    fn hand_counted_marginals() {
        let m = 3;
        let counts = count_marginals(&tiny_pop(), m, 2).unwrap();
        let t = |a: u16, b: u16| tri_index(m, crate::taxonomy::TopicId::new(a), crate::taxonomy::TopicId::new(b));
        let s = |a: u16, b: u16| sq_index(m, crate::taxonomy::TopicId::new(a), crate::taxonomy::TopicId::new(b));
        assert_eq!(counts.f11[t(1, 2)], 1);
        assert_eq!(counts.f11[t(1, 3)], 1);
        assert_eq!(counts.f11[t(2, 3)], 0);
        assert_eq!(counts.f22[t(1, 3)], 1);
        assert_eq!(counts.f22[t(2, 3)], 1);
        // A contributes (1,1), (1,3), (2,1), (2,3); B contributes (1,2),
        // (1,3), (3,2), (3,3)
        assert_eq!(counts.f12[s(1, 1)], 1);
        assert_eq!(counts.f12[s(1, 3)], 2);
        assert_eq!(counts.f12[s(2, 1)], 1);
        assert_eq!(counts.f12[s(2, 3)], 1);
        assert_eq!(counts.f12[s(1, 2)], 1);
        assert_eq!(counts.f12[s(3, 2)], 1);
        assert_eq!(counts.f12[s(3, 3)], 1);
        assert_eq!(counts.f12.iter().sum::<u64>(), 2 * 2 * 2);
        assert_eq!(counts.n_users, 2);
    }

    #[test]
    fn empty_population_counts() {
        let pop = GroundTruthPopulation { sequences: vec![] };
        let counts = count_marginals(&pop, 4, 2).unwrap();
        assert!(counts.f11.iter().all(|&v| v == 0));
        assert!(counts.f12.iter().all(|&v| v == 0));
        assert_eq!(counts.n_users, 0);
    }

    #[test]
    fn rejects_single_week() {
        let pop = GroundTruthPopulation {
            sequences: vec![seq("A", &[&[1, 2]])],
        };
        assert!(count_marginals(&pop, 3, 2).is_err());
    }

    #[test]
    fn mass_conservation() {
        let api = crate::simulator::ApiConfig::new(
            0.05,
            3,
            2,
            crate::taxonomy::Taxonomy::of_size(20).unwrap(),
        )
        .unwrap();
        let cfg = crate::simulator::PopulationConfig {
            n_users: 1000,
            ..Default::default()
        };
        let pop = crate::simulator::generate_population(&cfg, &api, 9).unwrap();
        let counts = count_marginals(&pop, 20, 3).unwrap();
        let k = 3u64;
        assert_eq!(counts.f11.iter().sum::<u64>(), 1000 * k * (k - 1) / 2);
        assert_eq!(counts.f22.iter().sum::<u64>(), 1000 * k * (k - 1) / 2);
        assert_eq!(counts.f12.iter().sum::<u64>(), 1000 * k * k);
    }

    #[test]
    fn sensitivity_formula() {
        assert!((l2_sensitivity(CountTable::F11, 5) - 10f64.sqrt()).abs() < 1e-12);
        assert_eq!(l2_sensitivity(CountTable::F12, 5), 5.0);
        assert_eq!(l2_sensitivity(CountTable::F22, 2), 1.0);
    }

    #[test]
    fn calibration_hits_delta() {
        for (d2, eps, delta) in [
            (10f64.sqrt(), 3f64.ln(), 1e-15),
            (1.0, 1.0, 1e-5),
            (5.0, 0.1, 1e-9),
        ] {
            let sigma = calibrate_gaussian_sigma(d2, eps, delta).unwrap();
            let achieved = gaussian_mechanism_delta(d2, eps, sigma);
            assert!(
                achieved <= delta && achieved >= delta * (1.0 - 1e-6),
                "({d2}, {eps}, {delta}): sigma {sigma}, achieved {achieved:e}"
            );
        }
    }

    #[test]
    fn calibration_scales_linearly() {
        let base = calibrate_gaussian_sigma(1.0, 0.7, 1e-8).unwrap();
        for c in [0.5, 2.0, 31.0] {
            let scaled = calibrate_gaussian_sigma(c, 0.7, 1e-8).unwrap();
            assert!(
                (scaled - c * base).abs() <= 1e-9 * scaled,
                "scale {c}: {scaled} vs {}",
                c * base
            );
        }
    }

    #[test]
    fn calibration_beats_classical_bound() {
        let (eps, delta) = (1.0, 1e-5);
        let sigma = calibrate_gaussian_sigma(1.0, eps, delta).unwrap();
        let classical = (2.0 * (1.25 / delta).ln()).sqrt() / eps;
        assert!(sigma < classical, "{sigma} >= classical {classical}");
    }

    #[test]
    fn calibration_monotonicity() {
        let s = |d2: f64, e: f64, d: f64| calibrate_gaussian_sigma(d2, e, d).unwrap();
        assert!(s(1.0, 0.5, 1e-9) > s(1.0, 1.0, 1e-9));
        assert!(s(1.0, 1.0, 1e-12) > s(1.0, 1.0, 1e-6));
        assert!(s(2.0, 1.0, 1e-9) > s(1.0, 1.0, 1e-9));
    }

    #[test]
    fn noise_zero_sigma_identity() {
        let counts = count_marginals(&tiny_pop(), 3, 2).unwrap();
        let scales = NoiseScales {
            f11: 0.0,
            f22: 0.0,
            f12: 0.0,
            count: 0.0,
        };
        let noisy = noise_with_scales(
            &counts,
            &scales,
            CountRelease::Public,
            7,
            ExecMode::Sequential,
        )
        .unwrap();
        assert_eq!(noisy.f11, counts.f11.iter().map(|&v| v as f64).collect::<Vec<_>>());
        assert_eq!(noisy.n_users_dp, 2.0);
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let counts = count_marginals(&tiny_pop(), 3, 2).unwrap();
        let params = PrivacyParams::strict_default();
        let a = add_gaussian_noise(&counts, &params, 5).unwrap();
        let b = add_gaussian_noise(&counts, &params, 5).unwrap();
        assert_eq!(a.f11, b.f11);
        assert_eq!(a.f12, b.f12);
        assert_eq!(a.n_users_dp, b.n_users_dp);
        let c = add_gaussian_noise(&counts, &params, 6).unwrap();
        assert_ne!(a.f11, c.f11);
    }

    #[test]
    fn noise_moments() {
        // one entry, many replays: sample mean near truth, variance near
        // sigma^2
        let counts = RawCounts {
            m: 2,
            k: 2,
            f11: vec![100],
            f22: vec![0],
            f12: vec![0, 0, 0, 0],
            n_users: 100,
        };
        let sigma = 3.0;
        let scales = NoiseScales {
            f11: sigma,
            f22: 0.0,
            f12: 0.0,
            count: 0.0,
        };
        let n = 100_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for seed in 0..n as u64 {
            let noisy = noise_with_scales(
                &counts,
                &scales,
                CountRelease::Public,
                seed,
                ExecMode::Sequential,
            )
            .unwrap();
            let x = noisy.f11[0];
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!((mean - 100.0).abs() < 5.0 * sigma / (n as f64).sqrt(), "mean {mean}");
        assert!((var - sigma * sigma).abs() < 0.05 * sigma * sigma, "var {var}");
    }

    #[test]
    fn normalization_examples() {
        // f11 = 1, f22 = 3, n = 4 -> q_within = 0.5; negatives clip to 0
        let noisy = NoisyCounts {
            m: 2,
            k: 2,
            f11: vec![1.0],
            f22: vec![3.0],
            f12: vec![-2.3, 0.0, 0.0, 4.0],
            n_users_dp: 4.0,
            scales: NoiseScales {
                f11: 0.0,
                f22: 0.0,
                f12: 0.0,
                count: 0.0,
            },
        };
        let bundle = normalize_to_statistics(&noisy, Provenance::Raw).unwrap();
        assert_eq!(bundle.q_within[0], 0.5);
        assert_eq!(bundle.q_across[0], 0.0);
        assert_eq!(bundle.q_across[3], 1.0);
    }

    #[test]
    fn normalization_rejects_nonpositive_count() {
        let noisy = NoisyCounts {
            m: 2,
            k: 2,
            f11: vec![1.0],
            f22: vec![1.0],
            f12: vec![0.0; 4],
            n_users_dp: 0.0,
            scales: NoiseScales {
                f11: 0.0,
                f22: 0.0,
                f12: 0.0,
                count: 0.0,
            },
        };
        assert!(normalize_to_statistics(&noisy, Provenance::Raw).is_err());
    }

    #[test]
    fn noiseless_two_user_across() {
        let bundle = raw_statistics(&count_marginals(&tiny_pop(), 3, 2).unwrap()).unwrap();
        // q_across[2,3]: only user A has 2 in week one and 3 in week two
        let idx = sq_index(3, crate::taxonomy::TopicId::new(2), crate::taxonomy::TopicId::new(3));
        assert_eq!(bundle.q_across[idx], 0.5);
        // both users have 1 in week one and 3 in week two
        let idx = sq_index(3, crate::taxonomy::TopicId::new(1), crate::taxonomy::TopicId::new(3));
        assert_eq!(bundle.q_across[idx], 1.0);
    }

    #[test]
    fn derive_q_single_examples() {
        // single user with S = {1, 2}, k = 2: q_within[1,2] = 1
        let single = derive_q_single(&[1.0], 2, 2).unwrap();
        assert_eq!(single, vec![1.0, 1.0]);
        let zeros = derive_q_single(&vec![0.0; tri_len(5)], 5, 3).unwrap();
        assert!(zeros.iter().all(|&x| x == 0.0));
        assert!(derive_q_single(&[1.0], 2, 1).is_err());
    }

    #[test]
    fn derived_single_matches_direct_count() {
        let api = crate::simulator::ApiConfig::new(
            0.05,
            4,
            2,
            crate::taxonomy::Taxonomy::of_size(30).unwrap(),
        )
        .unwrap();
        let cfg = crate::simulator::PopulationConfig {
            n_users: 2000,
            ..Default::default()
        };
        let pop = crate::simulator::generate_population(&cfg, &api, 33).unwrap();
        let bundle = raw_statistics(&count_marginals(&pop, 30, 4).unwrap()).unwrap();

        // direct per-topic counting oracle, averaged over the two weeks
        let mut direct = vec![0.0f64; 30];
        for s in &pop.sequences {
            for w in 0..2 {
                for t in s.sets[w].iter() {
                    direct[t.index()] += 1.0;
                }
            }
        }
        for d in &mut direct {
            *d /= 2.0 * pop.n_users() as f64;
        }
        for (a, b) in bundle.q_single.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn budget_shares_compose_to_total() {
        let params = PrivacyParams::strict_default();
        let shares = params.shares();
        let eps_sum: f64 = shares.iter().map(|s| s.0).sum();
        let delta_sum: f64 = shares.iter().map(|s| s.1).sum();
        assert!((eps_sum - params.epsilon).abs() < 1e-12);
        assert!((delta_sum - params.delta).abs() < 1e-27);
    }
}
