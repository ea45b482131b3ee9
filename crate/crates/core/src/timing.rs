//! Distributions of the number of trials a stored pair waits after it was
//! generated, and the durations derived from them.

use crate::error::{ModelError, Result};

/// Geometric factors below this are dropped. Every pmf here has a leading
/// weight of at least 1, and letting the factor decay into subnormals slows
/// the loops by orders of magnitude.
const NEGLIGIBLE: f64 = 1e-300;

/// `q^0, q^1, ..`, `len` terms, zero once the power is negligible.
fn geometric_powers(q: f64, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut qm = 1.0;
    for slot in out.iter_mut() {
        if qm < NEGLIGIBLE {
            break;
        }
        *slot = qm;
        qm *= q;
    }
    out
}

/// A pmf over consecutive integers `offset..offset + pmf.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaitDistribution {
    offset: u64,
    pmf: Vec<f64>,
}

impl WaitDistribution {
    /// Normalizes non-negative weights. Returns `None` if they sum to zero.
    pub fn from_weights(offset: u64, weights: Vec<f64>) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return None;
        }
        Some(Self {
            offset,
            pmf: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn point(m: u64) -> Self {
        Self {
            offset: m,
            pmf: vec![1.0],
        }
    }

    /// Smallest and largest `m` in the support, inclusive.
    pub fn support(&self) -> (u64, u64) {
        (self.offset, self.offset + self.pmf.len() as u64 - 1)
    }

    pub fn prob(&self, m: u64) -> f64 {
        m.checked_sub(self.offset)
            .and_then(|i| self.pmf.get(i as usize))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn mean(&self) -> f64 {
        self.pmf
            .iter()
            .enumerate()
            .map(|(i, p)| (self.offset + i as u64) as f64 * p)
            .sum()
    }

    /// Expected duration for the affine model `t(m) = 2 (m t_heg + fixed)`.
    pub fn mean_duration(&self, t_heg_s: f64, fixed_s: f64) -> f64 {
        2.0 * (self.mean() * t_heg_s + fixed_s)
    }
}

/// Number of ways the per-link waits `m_i in [0, trials - 1]` of `n_links`
/// links can add up to each `m in [0, m_max]`, by the recursive convolution.
pub fn multiplicity_counts(n_links: u32, trials: u32, m_max: u64) -> Result<Vec<f64>> {
    if n_links == 0 || trials == 0 {
        return Err(ModelError::InvalidPlan("N and M must be positive".into()));
    }
    let span = n_links as u64 * (trials as u64 - 1);
    if m_max > span {
        return Err(ModelError::CountOutOfRange {
            k: m_max,
            trials: span,
        });
    }
    let per_link = trials as u64 - 1;
    // c^(1)(m) = 1 on [0, M-1]
    let mut counts = vec![1.0; per_link as usize + 1];
    for links in 2..=n_links as u64 {
        let prev_span = (links - 1) * per_link;
        let width = (links * per_link) as usize + 1;
        let mut next = vec![0.0; width];
        for (m, slot) in next.iter_mut().enumerate() {
            let m = m as u64;
            let lo = m.saturating_sub(prev_span);
            let hi = per_link.min(m);
            *slot = (lo..=hi).map(|k| counts[(m - k) as usize]).sum();
        }
        counts = next;
    }
    counts.truncate(m_max as usize + 1);
    Ok(counts)
}

/// Wait after the last success of one link, given at least one success:
/// a geometric law truncated to `[0, trials - 1]`.
pub fn single_link_wait(trials: u32, p_heg: f64) -> WaitDistribution {
    let weights = geometric_powers(1.0 - p_heg, trials as usize);
    WaitDistribution::from_weights(0, weights).expect("q^0 = 1 keeps the total positive")
}

/// Mean of [`single_link_wait`] without materializing the pmf.
pub fn single_link_mean_wait(trials: u32, p_heg: f64) -> f64 {
    let q = 1.0 - p_heg;
    let (mut num, mut den, mut qm) = (0.0, 0.0, 1.0);
    for m in 0..trials {
        num += m as f64 * qm;
        den += qm;
        qm *= q;
        if qm < NEGLIGIBLE {
            break;
        }
    }
    num / den
}

/// Summed waits of all `n_links` links given every link succeeded, over
/// `m in [0, N (M - 1)]`.
pub fn network_wait_pmf(n_links: u32, trials: u32, p_heg: f64) -> Result<WaitDistribution> {
    if !(p_heg > 0.0 && p_heg <= 1.0) {
        return Err(ModelError::InvalidParameter {
            name: "p_HEG",
            value: p_heg,
            reason: "must lie in (0, 1]",
        });
    }
    if n_links == 0 || trials == 0 {
        return Err(ModelError::InvalidPlan("N and M must be positive".into()));
    }
    let link = single_link_wait(trials, p_heg);
    let mut acc = link.pmf().to_vec();
    for _ in 1..n_links {
        let mut next = vec![0.0; acc.len() + link.pmf().len() - 1];
        for (i, a) in acc.iter().enumerate() {
            for (j, b) in link.pmf().iter().enumerate() {
                next[i + j] += a * b;
            }
        }
        acc = next;
    }
    Ok(WaitDistribution::from_weights(0, acc).expect("convolution of pmfs"))
}

/// Wait after the last success of a link that produced one or two pairs,
/// so no purification could be attempted. Support `[0, trials - 1]`.
pub fn no_purification_wait(trials: u32, p_heg: f64) -> WaitDistribution {
    // p (1-p)^(M-1) + p^2 (1-p)^(M-2) (M-m-1) with p (1-p)^(M-2) factored out
    let q = 1.0 - p_heg;
    let weights = (0..trials as u64)
        .map(|m| q + p_heg * (trials as u64 - m - 1) as f64)
        .collect();
    WaitDistribution::from_weights(0, weights).expect("weights are positive for M >= 2")
}

/// Wait after the third-last success, used when purification failed and
/// the reserve pair is swapped. Support `[2, trials - 1]`.
pub fn reserve_wait(trials: u32, p_heg: f64) -> Result<WaitDistribution> {
    require_three(trials)?;
    let mut weights = geometric_powers(1.0 - p_heg, trials as usize - 2);
    for (i, w) in weights.iter_mut().enumerate() {
        let m = i as u64 + 2;
        *w *= (m * (m - 1) / 2) as f64;
    }
    Ok(WaitDistribution::from_weights(2, weights).expect("first weight is 1"))
}

/// Unnormalized joint weight of the waits after the last (`m1`) and
/// second-last (`m2`) successes, given at least three successes.
fn joint_weight(m1: u64, m2: u64, trials: u64, p_heg: f64) -> f64 {
    if m2 < 1 || m2 + 2 > trials || m1 >= m2 {
        return 0.0;
    }
    let q = 1.0 - p_heg;
    let earlier = (trials - m2 - 1) as i32;
    // at least one success among the earlier trials; p -> 0 limit keeps the shape
    let tail = if p_heg > 0.0 {
        -((earlier as f64) * (-p_heg).ln_1p()).exp_m1()
    } else {
        earlier as f64
    };
    q.powi(m2 as i32 - 1) * tail
}

/// Joint pmf of the waits `(m1, m2)` of the two pairs that are purified.
/// `m2 in [1, M-2]`, `m1 in [0, m2-1]`.
pub fn purification_pair_pmf(trials: u32, p_heg: f64) -> Result<Vec<((u64, u64), f64)>> {
    require_three(trials)?;
    let t = trials as u64;
    let mut cells = Vec::new();
    let mut total = 0.0;
    for m2 in 1..=t - 2 {
        for m1 in 0..m2 {
            let w = joint_weight(m1, m2, t, p_heg);
            total += w;
            cells.push(((m1, m2), w));
        }
    }
    for cell in &mut cells {
        cell.1 /= total;
    }
    Ok(cells)
}

/// Expected waits `(<m1>, <m2>)` of the two purified pairs, in O(M).
pub fn purification_pair_means(trials: u32, p_heg: f64) -> Result<(f64, f64)> {
    require_three(trials)?;
    let t = trials as u64;
    // The joint weight does not depend on m1, so E[m1 | m2] = (m2 - 1) / 2.
    let (mut total, mut s1, mut s2) = (0.0, 0.0, 0.0);
    let ln_q = (-p_heg).ln_1p();
    let mut q_pow = 1.0;
    for m2 in 1..=t - 2 {
        if q_pow < NEGLIGIBLE {
            break;
        }
        let earlier = (t - m2 - 1) as f64;
        let tail = if p_heg > 0.0 {
            -(earlier * ln_q).exp_m1()
        } else {
            earlier
        };
        let marginal = m2 as f64 * q_pow * tail;
        q_pow *= 1.0 - p_heg;
        total += marginal;
        s1 += marginal * (m2 as f64 - 1.0) / 2.0;
        s2 += marginal * m2 as f64;
    }
    Ok((s1 / total, s2 / total))
}

fn require_three(trials: u32) -> Result<()> {
    if trials < 3 {
        Err(ModelError::InvalidPlan(format!(
            "link purification needs M >= 3, got {trials}"
        )))
    } else {
        Ok(())
    }
}

/// The three conditional timing models of a link that runs one purification
/// round.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkTimingModels {
    pub no_purification: WaitDistribution,
    pub reserve: WaitDistribution,
    /// Expected waits of the last and second-last pairs.
    pub pair_means: (f64, f64),
}

pub fn link_timing_models(trials: u32, p_heg: f64) -> Result<LinkTimingModels> {
    Ok(LinkTimingModels {
        no_purification: no_purification_wait(trials, p_heg),
        reserve: reserve_wait(trials, p_heg)?,
        pair_means: purification_pair_means(trials, p_heg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Enumerates every success pattern of `trials` trials.
    fn patterns(trials: u32, p: f64) -> impl Iterator<Item = (Vec<u64>, f64)> {
        (0u32..1 << trials).map(move |bits| {
            let successes: Vec<u64> = (0..trials as u64).filter(|i| bits >> i & 1 == 1).collect();
            let k = successes.len() as i32;
            let prob = p.powi(k) * (1.0 - p).powi(trials as i32 - k);
            (successes, prob)
        })
    }

    #[test]
    fn counts_base_case_and_small_enumeration() {
        assert_eq!(multiplicity_counts(1, 4, 3).unwrap(), vec![1.0; 4]);
        assert_eq!(
            multiplicity_counts(2, 3, 4).unwrap(),
            vec![1.0, 2.0, 3.0, 2.0, 1.0]
        );
        assert!(multiplicity_counts(2, 3, 5).is_err());
    }

    #[test]
    fn counts_recover_network_success_probability() {
        let (n, m, p) = (3u32, 5u32, 0.3f64);
        let counts = multiplicity_counts(n, m, (n * (m - 1)) as u64).unwrap();
        let total: f64 = counts
            .iter()
            .enumerate()
            .map(|(k, c)| c * p.powi(n as i32) * (1.0 - p).powi(k as i32))
            .sum();
        let expected = (1.0 - (1.0 - p).powi(m as i32)).powi(n as i32);
        assert!((total - expected).abs() < 1e-14);
    }

    #[test]
    fn network_pmf_matches_count_formula() {
        let (n, m, p) = (3u32, 6u32, 0.2f64);
        let pmf = network_wait_pmf(n, m, p).unwrap();
        let span = (n * (m - 1)) as u64;
        assert_eq!(pmf.support(), (0, span));
        let counts = multiplicity_counts(n, m, span).unwrap();
        let norm = p.powi(n as i32) / (1.0 - (1.0 - p).powi(m as i32)).powi(n as i32);
        for (k, c) in counts.iter().enumerate() {
            let literal = norm * (1.0 - p).powi(k as i32) * c;
            assert!((pmf.prob(k as u64) - literal).abs() < 1e-14);
        }
    }

    #[test]
    fn network_pmf_examples() {
        let pmf = network_wait_pmf(1, 2, 0.5).unwrap();
        assert!((pmf.prob(0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((pmf.prob(1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(network_wait_pmf(1, 1, 0.3).unwrap().pmf(), &[1.0]);
        let sure = network_wait_pmf(4, 7, 1.0).unwrap();
        assert_eq!(sure.prob(0), 1.0);
        assert!(network_wait_pmf(2, 3, 0.0).is_err());
    }

    #[test]
    fn single_link_mean_matches_pmf() {
        for &(m, p) in &[(1u32, 0.3), (10, 0.05), (5000, 1e-3), (20000, 0.3)] {
            let a = single_link_wait(m, p).mean();
            let b = single_link_mean_wait(m, p);
            assert!((a - b).abs() < 1e-9 * a.max(1.0), "{a} {b}");
        }
    }

    #[test]
    fn no_purification_pmf_matches_enumeration() {
        let (m, p) = (3u32, 0.5);
        let pmf = no_purification_wait(m, p);
        assert_eq!(pmf.support(), (0, 2));
        let mut hist = [0.0; 3];
        for (succ, prob) in patterns(m, p) {
            if (1..=2).contains(&succ.len()) {
                hist[(m as u64 - 1 - succ.last().unwrap()) as usize] += prob;
            }
        }
        let total: f64 = hist.iter().sum();
        for (k, h) in hist.iter().enumerate() {
            assert!((pmf.prob(k as u64) - h / total).abs() < 1e-15);
        }
        let expected = [0.5, 1.0 / 3.0, 1.0 / 6.0];
        for (k, e) in expected.iter().enumerate() {
            assert!((pmf.prob(k as u64) - e).abs() < 1e-15);
        }
    }

    #[test]
    fn reserve_and_joint_pmfs_match_enumeration() {
        for &(m, p) in &[(3u32, 0.5), (6, 0.3), (8, 0.12)] {
            let reserve = reserve_wait(m, p).unwrap();
            let joint = purification_pair_pmf(m, p).unwrap();
            let mut res_hist = vec![0.0; m as usize];
            let mut joint_hist = std::collections::HashMap::new();
            let mut total = 0.0;
            for (succ, prob) in patterns(m, p) {
                if succ.len() >= 3 {
                    let after = |i: usize| m as u64 - 1 - succ[succ.len() - i];
                    res_hist[after(3) as usize] += prob;
                    *joint_hist.entry((after(1), after(2))).or_insert(0.0) += prob;
                    total += prob;
                }
            }
            assert_eq!(reserve.support(), (2, m as u64 - 1));
            for (k, h) in res_hist.iter().enumerate() {
                assert!((reserve.prob(k as u64) - h / total).abs() < 1e-14);
            }
            for ((m1, m2), w) in &joint {
                let h = joint_hist.get(&(*m1, *m2)).copied().unwrap_or(0.0);
                assert!((w - h / total).abs() < 1e-14, "({m1},{m2})");
            }
            let (e1, e2) = purification_pair_means(m, p).unwrap();
            let d1: f64 = joint.iter().map(|((a, _), w)| *a as f64 * w).sum();
            let d2: f64 = joint.iter().map(|((_, b), w)| *b as f64 * w).sum();
            assert!((e1 - d1).abs() < 1e-12 && (e2 - d2).abs() < 1e-12);
        }
    }

    #[test]
    fn reserve_forced_at_three_trials() {
        let r = reserve_wait(3, 0.4).unwrap();
        assert_eq!(r.pmf(), &[1.0]);
        assert_eq!(r.support(), (2, 2));
        assert!(reserve_wait(2, 0.4).is_err());
        assert!(link_timing_models(2, 0.4).is_err());
    }

    #[test]
    fn joint_marginal_is_consistent() {
        let (m, p) = (12u32, 0.2);
        let joint = purification_pair_pmf(m, p).unwrap();
        let total: f64 = joint.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // Marginal over m1 of a given m2 is m2 identical cells.
        let mut marg = vec![0.0; m as usize];
        for ((_, m2), w) in &joint {
            marg[*m2 as usize] += w;
        }
        for m2 in 1..=(m as usize - 2) {
            let cell = joint.iter().find(|((a, b), _)| *a == 0 && *b == m2 as u64).unwrap().1;
            assert!((marg[m2] - m2 as f64 * cell).abs() < 1e-14);
        }
    }

    #[test]
    fn pmfs_stay_finite_at_large_m() {
        let t = link_timing_models(20000, 0.3).unwrap();
        assert!(t.no_purification.mean().is_finite());
        assert!(t.reserve.mean().is_finite());
        assert!(t.pair_means.0.is_finite() && t.pair_means.1 > t.pair_means.0);
        let tiny = link_timing_models(50, 1e-12).unwrap();
        assert!(tiny.reserve.mean() > 2.0);
    }
}
