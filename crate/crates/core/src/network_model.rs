//! Physical parameters, session plans and the closed-form probability, timing
//! and rate formulas of the repeater chain.
//!
//! Everything here is a pure function of its arguments. Lengths are in km,
//! times in seconds, rates in Hz.

use crate::bell::BellDiagonal;
use crate::error::{ModelError, Result};

/// Signal speed in optical fiber (km/s).
pub const DEFAULT_FIBER_SPEED_KM_S: f64 = 2.0e5;

/// Physical and experimental scalars of a repeater chain.
///
/// `t2_s` may be `f64::INFINITY` to switch decoherence off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkParams {
    /// End-to-end length, km.
    pub l_tot_km: f64,
    /// Fiber attenuation length, km.
    pub l_att_km: f64,
    /// Collection, conversion and detection efficiency excluding fiber loss.
    pub eta0: f64,
    /// Signal speed in fiber, km/s.
    pub v_km_s: f64,
    /// Period between entanglement-generation trials on one link, s.
    pub t_heg_s: f64,
    /// Entanglement swap duration, s.
    pub t_swap_s: f64,
    /// Purification duration, s.
    pub t_pur_s: f64,
    /// Spin coherence time, s.
    pub t2_s: f64,
    /// Initialization (phase) error probability.
    pub eps_init: f64,
    /// Two-qubit gate error probability.
    pub eps_gate: f64,
    /// Qubit measurement error probability.
    pub eps_meas: f64,
}

impl Default for NetworkParams {
    /// Rare-earth-ion estimates: 40 % efficiency, 1e-3 operation errors,
    /// 500 ms coherence, 25 kHz trial rate, 1000 km chain.
    fn default() -> Self {
        Self {
            l_tot_km: 1000.0,
            l_att_km: 22.0,
            eta0: 0.4,
            v_km_s: DEFAULT_FIBER_SPEED_KM_S,
            t_heg_s: 40e-6,
            t_swap_s: 210e-6,
            t_pur_s: 220e-6,
            t2_s: 0.5,
            eps_init: 1e-3,
            eps_gate: 1e-3,
            eps_meas: 1e-3,
        }
    }
}

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            value,
            reason: "must lie in [0, 1]",
        })
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && !value.is_nan() {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            value,
            reason: "must be strictly positive",
        })
    }
}

fn check_non_negative_finite(name: &'static str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            value,
            reason: "must be finite and non-negative",
        })
    }
}

impl NetworkParams {
    pub fn validate(&self) -> Result<()> {
        check_non_negative_finite("L_tot_km", self.l_tot_km)?;
        check_positive("L_tot_km", self.l_tot_km)?;
        check_positive("L_att_km", self.l_att_km)?;
        check_probability("eta0", self.eta0)?;
        check_positive("v_km_s", self.v_km_s)?;
        check_positive("t_HEG_s", self.t_heg_s)?;
        check_non_negative_finite("t_swap_s", self.t_swap_s)?;
        check_non_negative_finite("t_pur_s", self.t_pur_s)?;
        check_positive("T2_s", self.t2_s)?;
        check_probability("eps_i", self.eps_init)?;
        check_probability("eps_TQG", self.eps_gate)?;
        check_probability("eps_m", self.eps_meas)?;
        Ok(())
    }

    /// Sets the initialization, gate and measurement errors to one value.
    pub fn with_tied_error(mut self, eps: f64) -> Self {
        self.eps_init = eps;
        self.eps_gate = eps;
        self.eps_meas = eps;
        self
    }

    /// Time for a photon to reach the midpoint station and the herald to
    /// return, for a link of length `l0_km`.
    pub fn round_trip_time(&self, l0_km: f64) -> f64 {
        l0_km / self.v_km_s
    }

    /// Classical signalling delay from the chain to the nearest end node.
    pub fn end_node_signal_delay(&self) -> f64 {
        self.l_tot_km / (2.0 * self.v_km_s)
    }
}

/// Purification rounds: `end_rounds` between end nodes (0..=2), `link_rounds`
/// on each elementary link (0..=1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Protocol {
    pub end_rounds: u8,
    pub link_rounds: u8,
}

impl Protocol {
    /// All six (end, link) combinations, ordered by end rounds then link rounds.
    pub const ALL: [Protocol; 6] = [
        Protocol::new_unchecked(0, 0),
        Protocol::new_unchecked(0, 1),
        Protocol::new_unchecked(1, 0),
        Protocol::new_unchecked(1, 1),
        Protocol::new_unchecked(2, 0),
        Protocol::new_unchecked(2, 1),
    ];

    const fn new_unchecked(end_rounds: u8, link_rounds: u8) -> Self {
        Self {
            end_rounds,
            link_rounds,
        }
    }

    pub fn new(end_rounds: u8, link_rounds: u8) -> Result<Self> {
        if end_rounds > 2 {
            return Err(ModelError::InvalidPlan(format!(
                "P_E must be 0, 1 or 2, got {end_rounds}"
            )));
        }
        if link_rounds > 1 {
            return Err(ModelError::InvalidPlan(format!(
                "P_L must be 0 or 1, got {link_rounds}"
            )));
        }
        Ok(Self::new_unchecked(end_rounds, link_rounds))
    }

    /// Smallest number of trials per session the protocol accepts.
    pub fn min_trials(&self) -> u32 {
        if self.link_rounds == 1 {
            3
        } else {
            1
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(P_E={}, P_L={})", self.end_rounds, self.link_rounds)
    }
}

/// The configuration evaluated for one protocol run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SessionPlan {
    /// Number of elementary links N.
    pub n_links: u32,
    /// Entanglement-generation trials per link per session M.
    pub trials: u32,
    pub protocol: Protocol,
}

impl SessionPlan {
    pub fn new(n_links: u32, trials: u32, end_rounds: u8, link_rounds: u8) -> Result<Self> {
        Self::with_protocol(n_links, trials, Protocol::new(end_rounds, link_rounds)?)
    }

    pub fn with_protocol(n_links: u32, trials: u32, protocol: Protocol) -> Result<Self> {
        if n_links == 0 {
            return Err(ModelError::InvalidPlan("N must be at least 1".into()));
        }
        if trials < protocol.min_trials() {
            return Err(ModelError::InvalidPlan(format!(
                "M = {trials} is below the minimum {} for {protocol}",
                protocol.min_trials()
            )));
        }
        Ok(Self {
            n_links,
            trials,
            protocol,
        })
    }

    pub fn end_rounds(&self) -> u8 {
        self.protocol.end_rounds
    }

    pub fn link_rounds(&self) -> u8 {
        self.protocol.link_rounds
    }

    /// Node spacing L0 = L_tot / N.
    pub fn link_length(&self, params: &NetworkParams) -> f64 {
        params.l_tot_km / self.n_links as f64
    }
}

/// Outcome of one analytic protocol evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub plan: SessionPlan,
    pub l0_km: f64,
    pub eta: f64,
    pub p_heg: f64,
    /// Probability that every link heralds at least one pair in a session.
    pub p_session: f64,
    /// Probability a link has at least three pairs, given at least one.
    pub p_link_pur: f64,
    pub p_epr: f64,
    pub t_session_s: f64,
    pub t_epr_s: f64,
    /// Raw EPR rate, Hz.
    pub rate_hz: f64,
    pub e_x: f64,
    pub e_z: f64,
    pub r_inf: f64,
    /// Secret key rate, Hz.
    pub skr_hz: f64,
    pub bell: BellDiagonal,
    /// Heralded success probability of each end-node purification round.
    pub end_purification_success: Vec<f64>,
}

impl RateReport {
    pub fn is_feasible(&self) -> bool {
        self.skr_hz > 0.0
    }
}

/// Probability that an emitted photon is detected after `l0_km / 2` of fiber.
pub fn detection_efficiency(params: &NetworkParams, l0_km: f64) -> Result<f64> {
    check_positive("L0_km", l0_km)?;
    check_positive("L_att_km", params.l_att_km)?;
    check_probability("eta0", params.eta0)?;
    Ok(params.eta0 * (-l0_km / (2.0 * params.l_att_km)).exp())
}

/// Two photons must be detected and only half of those events carry one
/// early and one late photon.
pub fn heg_success_probability(eta: f64) -> Result<f64> {
    check_probability("eta", eta)?;
    Ok(eta * eta / 2.0)
}

/// ln C(n, k) by a product over the shorter side.
pub(crate) fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    let k = k.min(n - k);
    (1..=k)
        .map(|i| ((n - k + i) as f64 / i as f64).ln())
        .sum()
}

/// `ln(1 - p)` that stays exact for small `p`.
fn ln_fail(p: f64) -> f64 {
    (-p).ln_1p()
}

/// Probability that one link succeeds exactly `k` times in `trials` trials.
pub fn link_success_pmf(p_heg: f64, trials: u32, k: u32) -> Result<f64> {
    check_probability("p_HEG", p_heg)?;
    if k > trials {
        return Err(ModelError::CountOutOfRange {
            k: k as u64,
            trials: trials as u64,
        });
    }
    Ok(binomial_pmf(p_heg, trials as u64, k as u64))
}

pub(crate) fn binomial_pmf(p: f64, n: u64, k: u64) -> f64 {
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let ln = ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * ln_fail(p);
    ln.exp()
}

/// Probability that one link succeeds at least `k` times.
pub fn link_at_least(p_heg: f64, trials: u32, k: u32) -> Result<f64> {
    check_probability("p_HEG", p_heg)?;
    if k > trials {
        return Err(ModelError::CountOutOfRange {
            k: k as u64,
            trials: trials as u64,
        });
    }
    Ok(at_least(p_heg, trials as u64, k as u64))
}

pub(crate) fn at_least(p: f64, n: u64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k == 1 {
        // 1 - (1-p)^n without cancellation
        return -(n as f64 * ln_fail(p)).exp_m1();
    }
    if p == 0.0 {
        return 0.0;
    }
    if p == 1.0 {
        return 1.0;
    }
    // Sum whichever side of the mean is shorter and small.
    if (k as f64) > n as f64 * p {
        // k is at or past the mode, so the terms only shrink from here.
        let ratio = p / (1.0 - p);
        let mut term = binomial_pmf(p, n, k);
        let mut total = 0.0;
        for j in k..=n {
            total += term;
            if term <= total * 1e-18 {
                break;
            }
            term *= (n - j) as f64 / (j + 1) as f64 * ratio;
        }
        total.min(1.0)
    } else {
        let below: f64 = (0..k).map(|j| binomial_pmf(p, n, j)).sum();
        (1.0 - below).clamp(0.0, 1.0)
    }
}

/// Probability that all `n_links` links succeed at least `k` times.
pub fn network_at_least(p_heg: f64, trials: u32, k: u32, n_links: u32) -> Result<f64> {
    Ok(link_at_least(p_heg, trials, k)?.powi(n_links as i32))
}

/// Probability that all links reach `k` successes but at least one of them
/// stops short of `k + 1`.
pub fn network_exactly(p_heg: f64, trials: u32, k: u32, n_links: u32) -> Result<f64> {
    let at_k = network_at_least(p_heg, trials, k, n_links)?;
    let above = if k == trials {
        0.0
    } else {
        network_at_least(p_heg, trials, k + 1, n_links)?
    };
    Ok(at_k - above)
}

/// Duration of one session: trials, herald wait, optional link purification
/// with its own herald wait, and the swap.
pub fn session_duration(params: &NetworkParams, plan: &SessionPlan, l0_km: f64) -> f64 {
    let t_rt = params.round_trip_time(l0_km);
    let p_l = plan.link_rounds() as f64;
    plan.trials as f64 * params.t_heg_s + t_rt + p_l * (params.t_pur_s + t_rt) + params.t_swap_s
}

/// Success probability and duration of one attempt at a final EPR pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EprAttempt {
    pub p_epr: f64,
    pub t_epr_s: f64,
    /// Expected number of sessions consumed per attempt.
    pub p_sum: f64,
}

/// Combines session success `p_session` with the heralded success of each
/// end-node purification round into the per-attempt success fraction.
pub fn epr_attempt_stats(
    p_session: f64,
    purification_success: &[f64],
    end_rounds: u8,
    t_session_s: f64,
    t_pur_s: f64,
) -> Result<EprAttempt> {
    check_probability("p_session", p_session)?;
    let rounds = end_rounds as usize;
    if purification_success.len() != rounds {
        return Err(ModelError::LengthMismatch {
            expected: rounds,
            got: purification_success.len(),
        });
    }
    for &q in purification_success {
        check_probability("p_pur_success", q)?;
    }
    let t_epr_s = t_session_s * (rounds as f64 + 1.0) + t_pur_s * rounds as f64;
    let p = p_session;
    let q = |h: usize| purification_success[h - 1];
    let prod_q = |upto: usize| (1..=upto).map(q).product::<f64>();

    let success = (rounds as f64 + 1.0) * p.powi(rounds as i32 + 1) * prod_q(rounds);
    // Session number s fails after s-1 good sessions and s-2 good purifications.
    let session_fail: f64 = (1..=rounds + 1)
        .map(|s| {
            s as f64 * p.powi(s as i32 - 1) * (1.0 - p) * prod_q(s.saturating_sub(2))
        })
        .sum();
    // Purification h fails after h+1 good sessions.
    let purification_fail: f64 = (1..=rounds)
        .map(|h| (h as f64 + 1.0) * p.powi(h as i32 + 1) * (1.0 - q(h)) * prod_q(h - 1))
        .sum();
    let p_sum = success + session_fail + purification_fail;
    let p_epr = if p_sum > 0.0 { success / p_sum } else { 0.0 };
    Ok(EprAttempt {
        p_epr,
        t_epr_s,
        p_sum,
    })
}

/// Binary entropy in bits with h(0) = h(1) = 0.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    term(p) + term(1.0 - p)
}

/// Asymptotic BB84 secret fraction. May be negative.
pub fn secret_fraction(e_x: f64, e_z: f64) -> f64 {
    1.0 - binary_entropy(e_z) - binary_entropy(e_x)
}

/// Qubits required in an inner node and in an end node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QubitCount {
    pub inner: u64,
    pub end: u64,
}

/// Inner nodes store `1 + 2 P_L` pairs plus one qubit per trial in flight,
/// for both of their links; end nodes serve one link and keep `P_E` pairs
/// from earlier sessions.
pub fn qubits_per_node(params: &NetworkParams, plan: &SessionPlan, l0_km: f64) -> QubitCount {
    let ratio = params.round_trip_time(l0_km) / params.t_heg_s;
    // Ratios like 400e-6 / 40e-6 land a few ulps above the integer.
    let in_flight = ((ratio * (1.0 - 1e-12)).ceil() as u64).max(1);
    let per_link = 1 + 2 * plan.link_rounds() as u64 + in_flight;
    QubitCount {
        inner: 2 * per_link,
        end: per_link + plan.end_rounds() as u64,
    }
}

/// Repeaterless secret-key capacity of a pure-loss channel times the
/// repetition rate. Returns `f64::INFINITY` at zero length.
pub fn plob_bound(l_tot_km: f64, l_att_km: f64, repetition_rate_hz: f64) -> f64 {
    let transmissivity = (-l_tot_km / l_att_km).exp();
    if transmissivity >= 1.0 {
        return f64::INFINITY;
    }
    -(-transmissivity).ln_1p() / std::f64::consts::LN_2 * repetition_rate_hz
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn detection_efficiency_examples() {
        let mut p = NetworkParams {
            eta0: 0.4,
            ..Default::default()
        };
        assert!(close(detection_efficiency(&p, 1e-12).unwrap(), 0.4, 1e-12));
        let eta = detection_efficiency(&p, 44.0).unwrap();
        assert!(close(eta, 0.4 * (-1f64).exp(), 1e-15));
        assert!(close(eta, 0.14715, 1e-5));
        p.eta0 = 0.0;
        assert_eq!(detection_efficiency(&p, 10.0).unwrap(), 0.0);
        assert!(detection_efficiency(&p, 0.0).is_err());
        assert!(detection_efficiency(&p, -1.0).is_err());
        p.l_att_km = 0.0;
        assert!(detection_efficiency(&p, 1.0).is_err());
    }

    #[test]
    fn heg_probability_examples() {
        assert_eq!(heg_success_probability(1.0).unwrap(), 0.5);
        assert_eq!(heg_success_probability(0.0).unwrap(), 0.0);
        assert!(close(heg_success_probability(0.14715).unwrap(), 0.010827, 1e-6));
        assert!(heg_success_probability(1.5).is_err());
    }

    #[test]
    fn binomial_edge_cases() {
        assert!(close(link_success_pmf(0.3, 7, 0).unwrap(), 0.7f64.powi(7), 1e-15));
        assert_eq!(link_success_pmf(1.0, 5, 5).unwrap(), 1.0);
        assert_eq!(link_success_pmf(1.0, 5, 4).unwrap(), 0.0);
        assert!(link_success_pmf(0.3, 3, 4).is_err());
        assert!(link_at_least(0.3, 3, 4).is_err());
        assert!(close(network_exactly(0.5, 3, 3, 2).unwrap(), 0.5f64.powi(6), 1e-15));
    }

    #[test]
    fn pmf_sums_to_one_at_large_m() {
        for &(p, m) in &[(0.01, 5000u32), (0.3, 20000), (1e-6, 100)] {
            let total: f64 = (0..=m).map(|k| link_success_pmf(p, m, k).unwrap()).sum();
            assert!(close(total, 1.0, 1e-10), "p={p} M={m} total={total}");
        }
    }

    #[test]
    fn upper_tail_keeps_relative_precision() {
        // P(K >= 3) for tiny p is ~ C(10,3) p^3; a complement sum would lose it.
        let p = 1e-4;
        let tail = link_at_least(p, 10, 3).unwrap();
        let leading = 120.0 * p.powi(3) * (1.0 - p).powi(7);
        assert!((tail - leading).abs() / leading < 1e-3);
    }

    #[test]
    fn session_duration_examples() {
        let params = NetworkParams {
            t_heg_s: 40e-6,
            v_km_s: 2e5,
            t_pur_s: 220e-6,
            t_swap_s: 210e-6,
            ..Default::default()
        };
        let plan = SessionPlan::new(1, 1000, 0, 1).unwrap();
        assert!(close(session_duration(&params, &plan, 50.0), 40.93e-3, 1e-12));

        let unit = NetworkParams {
            t_heg_s: 1.0,
            t_swap_s: 0.0,
            t_pur_s: 0.0,
            v_km_s: f64::INFINITY,
            ..Default::default()
        };
        let plan = SessionPlan::new(1, 1, 0, 0).unwrap();
        assert_eq!(session_duration(&unit, &plan, 10.0), 1.0);

        let a = SessionPlan::new(3, 200, 0, 0).unwrap();
        let b = SessionPlan::new(3, 400, 0, 0).unwrap();
        let diff = session_duration(&params, &b, 20.0) - session_duration(&params, &a, 20.0);
        assert!(close(diff, 200.0 * params.t_heg_s, 1e-15));
    }

    #[test]
    fn epr_attempt_examples() {
        let s = epr_attempt_stats(0.9, &[], 0, 0.01, 220e-6).unwrap();
        assert_eq!(s.p_epr, 0.9);
        assert_eq!(s.t_epr_s, 0.01);

        let s = epr_attempt_stats(1.0, &[1.0], 1, 0.01, 220e-6).unwrap();
        assert_eq!(s.p_sum, 2.0);
        assert_eq!(s.p_epr, 1.0);
        assert!(close(s.t_epr_s, 0.02 + 220e-6, 1e-15));

        let s = epr_attempt_stats(1.0, &[0.5], 1, 0.01, 220e-6).unwrap();
        assert_eq!(s.p_sum, 2.0);
        assert_eq!(s.p_epr, 0.5);

        assert!(matches!(
            epr_attempt_stats(0.5, &[0.5], 2, 1.0, 1.0),
            Err(ModelError::LengthMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn secret_fraction_examples() {
        assert_eq!(secret_fraction(0.0, 0.0), 1.0);
        assert!(close(secret_fraction(0.5, 0.5), -1.0, 1e-15));
        assert!(close(binary_entropy(0.11), 0.49993, 2e-5));
        assert!(close(secret_fraction(0.11, 0.11), 0.0002, 5e-5));
        assert_eq!(binary_entropy(1.0), 0.0);
    }

    #[test]
    fn qubit_golden_values() {
        let params = NetworkParams::default();
        let p0 = SessionPlan::new(1, 10, 0, 0).unwrap();
        let p1 = SessionPlan::new(1, 10, 0, 1).unwrap();
        assert_eq!(qubits_per_node(&params, &p0, 11.0).inner, 6);
        assert_eq!(qubits_per_node(&params, &p1, 100.0).inner, 32);
        assert_eq!(qubits_per_node(&params, &p0, 1e-9).inner, 4);
        // exact multiple: 80 km -> t_rt = 400 us = 10 trials
        assert_eq!(qubits_per_node(&params, &p0, 80.0).inner, 2 * (1 + 10));
        let p21 = SessionPlan::new(1, 10, 2, 1).unwrap();
        let q = qubits_per_node(&params, &p21, 100.0);
        assert_eq!(q.end, 16 + 2);
    }

    #[test]
    fn plob_examples() {
        assert!(plob_bound(0.0, 22.0, 1e9).is_infinite());
        let v = plob_bound(1000.0, 22.0, 1e9);
        let approx = (-1000.0f64 / 22.0).exp() / std::f64::consts::LN_2 * 1e9;
        assert!((v - approx).abs() / approx < 1e-12);
        assert!(v > 2.4e-11 && v < 2.8e-11, "{v}");
    }

    #[test]
    fn params_validation() {
        assert!(NetworkParams::default().validate().is_ok());
        let bad = NetworkParams {
            eps_gate: 1.2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let inf_t2 = NetworkParams {
            t2_s: f64::INFINITY,
            ..Default::default()
        };
        assert!(inf_t2.validate().is_ok());
        assert!(SessionPlan::new(0, 10, 0, 0).is_err());
        assert!(SessionPlan::new(3, 2, 0, 1).is_err());
        assert!(SessionPlan::new(3, 2, 3, 0).is_err());
        assert!(SessionPlan::new(3, 2, 0, 2).is_err());
    }
}
