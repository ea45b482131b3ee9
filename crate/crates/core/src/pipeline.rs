//! Full evaluation of one session plan: link states, swap chain, end-node
//! purification and the resulting rates.

use crate::bell::{entanglement_swap, purify, BellDiagonal};
use crate::ensemble::{WeightedEnsemble, DEFAULT_CAP};
use crate::error::Result;
use crate::network_model::{
    check_probability, detection_efficiency, epr_attempt_stats, heg_success_probability, link_at_least,
    network_at_least, secret_fraction, session_duration, NetworkParams, RateReport, SessionPlan,
};
use crate::timing::{link_timing_models, single_link_mean_wait};

/// Knobs that do not belong to the physical model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Maximum number of ensemble members kept through the swap chain.
    pub ensemble_cap: usize,
    /// Replaces the HEG success probability derived from the fiber model.
    pub heg_probability: Option<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ensemble_cap: DEFAULT_CAP,
            heg_probability: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkBranchKind {
    /// Too few pairs to purify (or no purification planned); latest pair used.
    Latest,
    /// Purification failed; the third-latest pair is used.
    Reserve,
    Purified,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBranch {
    pub kind: LinkBranchKind,
    pub weight: f64,
    pub state: BellDiagonal,
    /// Expected entanglement time summed over both qubits, s.
    pub duration_s: f64,
}

/// Conditional outcome of one link given that it produced at least one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkOutcome {
    /// Probability that purification can be attempted.
    pub p_pur: f64,
    /// Heralded success probability of the attempted purification.
    pub p_measured: f64,
    pub branches: Vec<LinkBranch>,
}

impl LinkOutcome {
    fn weight_of(&self, kind: LinkBranchKind) -> f64 {
        self.branches
            .iter()
            .filter(|b| b.kind == kind)
            .map(|b| b.weight)
            .sum()
    }

    pub fn p_no_pur(&self) -> f64 {
        self.weight_of(LinkBranchKind::Latest)
    }

    pub fn p_pur_fail(&self) -> f64 {
        self.weight_of(LinkBranchKind::Reserve)
    }

    pub fn p_pur_success(&self) -> f64 {
        self.weight_of(LinkBranchKind::Purified)
    }

    pub fn ensemble(&self, cap: usize) -> WeightedEnsemble {
        let mut e = WeightedEnsemble::new(cap);
        for b in &self.branches {
            e.push(b.weight, b.state);
        }
        e
    }
}

/// Branches of a single link for HEG success probability `p_heg`.
pub fn link_outcome(
    params: &NetworkParams,
    plan: &SessionPlan,
    l0_km: f64,
    p_heg: f64,
) -> Result<LinkOutcome> {
    let initial = BellDiagonal::from_initialization(params.eps_init, 1);
    let t_rt = params.round_trip_time(l0_km);
    let t_heg = params.t_heg_s;

    if plan.link_rounds() == 0 {
        let m = single_link_mean_wait(plan.trials, p_heg);
        let duration_s = 2.0 * (m * t_heg + t_rt + params.t_swap_s);
        return Ok(LinkOutcome {
            p_pur: 0.0,
            p_measured: 0.0,
            branches: vec![LinkBranch {
                kind: LinkBranchKind::Latest,
                weight: 1.0,
                state: initial.dephase(duration_s, params.t2_s),
                duration_s,
            }],
        });
    }

    let timing = link_timing_models(plan.trials, p_heg)?;
    let p_pur = (link_at_least(p_heg, plan.trials, 3)? / link_at_least(p_heg, plan.trials, 1)?)
        .clamp(0.0, 1.0);
    let unpurified_fixed = 2.0 * t_rt + params.t_pur_s + params.t_swap_s;
    let t_no_pur = timing.no_purification.mean_duration(t_heg, unpurified_fixed);
    let t_res = timing.reserve.mean_duration(t_heg, unpurified_fixed);
    let (m1, m2) = timing.pair_means;
    let last = initial.dephase(2.0 * (m1 * t_heg + t_rt), params.t2_s);
    let second = initial.dephase(2.0 * (m2 * t_heg + t_rt), params.t2_s);
    let purified = purify(&last, &second, params.eps_gate, params.eps_meas)?;
    let t_after = 2.0 * (params.t_pur_s + t_rt + params.t_swap_s);
    let p_m = purified.p_measured.min(1.0);

    Ok(LinkOutcome {
        p_pur,
        p_measured: p_m,
        branches: vec![
            LinkBranch {
                kind: LinkBranchKind::Latest,
                weight: 1.0 - p_pur,
                state: initial.dephase(t_no_pur, params.t2_s),
                duration_s: t_no_pur,
            },
            LinkBranch {
                kind: LinkBranchKind::Reserve,
                weight: p_pur * (1.0 - p_m),
                state: initial.dephase(t_res, params.t2_s),
                duration_s: t_res,
            },
            LinkBranch {
                kind: LinkBranchKind::Purified,
                weight: p_pur * p_m,
                state: purified.state.dephase(t_after, params.t2_s),
                duration_s: t_after,
            },
        ],
    })
}

/// Link ensemble and the probability that purification was attempted.
pub fn link_ensemble(
    params: &NetworkParams,
    plan: &SessionPlan,
    p_heg: f64,
    cap: usize,
) -> Result<(WeightedEnsemble, f64)> {
    let outcome = link_outcome(params, plan, plan.link_length(params), p_heg)?;
    Ok((outcome.ensemble(cap), outcome.p_pur))
}

/// Swaps the links together from left to right, then adds the gate and
/// readout errors of the `N - 1` swaps.
pub fn chain_links(links: &[WeightedEnsemble], params: &NetworkParams) -> WeightedEnsemble {
    assert!(!links.is_empty(), "need at least one link");
    let n = links.len() as u32;
    let mut acc = links[0].clone();
    acc.compress();
    for link in &links[1..] {
        acc = acc.product(link, entanglement_swap);
    }
    acc.map_states(|s| {
        s.depolarize(params.eps_gate, n - 1)
            .swap_measurement_errors(params.eps_meas, n)
    })
}

/// Final end-to-end state after `P_E` rounds of purification on pairs from
/// sequential sessions, with the heralded success probability of each round.
pub fn end_node_chain(
    sessions: &WeightedEnsemble,
    params: &NetworkParams,
    plan: &SessionPlan,
    t_session_s: f64,
) -> Result<(BellDiagonal, Vec<f64>)> {
    let session = sessions.mean();
    let rounds = plan.end_rounds();
    let delay = params.end_node_signal_delay();
    let mut success = Vec::with_capacity(rounds as usize);
    let mut current = session;
    for h in 0..rounds {
        let held = if h == 0 { t_session_s + delay } else { t_session_s };
        let older = current.dephase(held, params.t2_s).depolarize(params.eps_gate, 1);
        let newer = session
            .dephase(delay, params.t2_s)
            .depolarize(params.eps_gate, 1);
        let out = purify(&older, &newer, params.eps_gate, params.eps_meas)?;
        success.push(out.p_measured.min(1.0));
        current = out.state.dephase(params.t_pur_s, params.t2_s);
    }
    Ok((current, success))
}

/// Evaluates a plan with the default options.
pub fn evaluate_protocol(params: &NetworkParams, plan: &SessionPlan) -> Result<RateReport> {
    evaluate_with_options(params, plan, &EvalOptions::default())
}

pub fn evaluate_with_options(
    params: &NetworkParams,
    plan: &SessionPlan,
    options: &EvalOptions,
) -> Result<RateReport> {
    params.validate()?;
    let l0_km = plan.link_length(params);
    let eta = detection_efficiency(params, l0_km)?;
    let p_heg = match options.heg_probability {
        Some(p) => {
            check_probability("p_HEG", p)?;
            p
        }
        None => heg_success_probability(eta)?,
    };
    let t_session_s = session_duration(params, plan, l0_km);

    let p_session = if p_heg > 0.0 {
        network_at_least(p_heg, plan.trials, 1, plan.n_links)?
    } else {
        0.0
    };

    let (bell, p_link_pur, end_success) = if p_session > 0.0 {
        let (link, p_pur) = link_ensemble(params, plan, p_heg, options.ensemble_cap)?;
        let links = vec![link; plan.n_links as usize];
        let sessions = chain_links(&links, params);
        let (bell, success) = end_node_chain(&sessions, params, plan, t_session_s)?;
        (bell, p_pur, success)
    } else {
        (
            BellDiagonal::FULLY_MIXED,
            0.0,
            vec![0.0; plan.end_rounds() as usize],
        )
    };

    let attempt = epr_attempt_stats(
        p_session,
        &end_success,
        plan.end_rounds(),
        t_session_s,
        params.t_pur_s,
    )?;
    let (e_x, e_z) = bell.quantum_bit_errors();
    let r_inf = secret_fraction(e_x, e_z);
    let rate_hz = attempt.p_epr / attempt.t_epr_s;
    Ok(RateReport {
        plan: *plan,
        l0_km,
        eta,
        p_heg,
        p_session,
        p_link_pur,
        p_epr: attempt.p_epr,
        t_session_s,
        t_epr_s: attempt.t_epr_s,
        rate_hz,
        e_x,
        e_z,
        r_inf,
        skr_hz: (rate_hz * r_inf).max(0.0),
        bell,
        end_purification_success: end_success,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network_model::Protocol;
    use crate::timing::network_wait_pmf;

    fn perfect() -> NetworkParams {
        NetworkParams {
            t2_s: f64::INFINITY,
            ..NetworkParams::default().with_tied_error(0.0)
        }
    }

    fn plan(n: u32, m: u32, pe: u8, pl: u8) -> SessionPlan {
        SessionPlan::new(n, m, pe, pl).unwrap()
    }

    #[test]
    fn perfect_hardware_gives_ideal_pairs() {
        let params = perfect();
        for protocol in Protocol::ALL {
            for &(n, m) in &[(1u32, 10u32), (3, 40), (20, 300)] {
                let p = SessionPlan::with_protocol(n, m, protocol).unwrap();
                let r = evaluate_protocol(&params, &p).unwrap();
                assert_eq!(r.bell, BellDiagonal::IDEAL, "{p:?}");
                assert_eq!((r.e_x, r.e_z), (0.0, 0.0));
                for q in &r.end_purification_success {
                    assert!((q - 1.0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn single_link_without_errors_reaches_plain_rate() {
        let params = NetworkParams {
            eta0: 1.0,
            ..perfect()
        };
        let p = plan(1, 10, 0, 0);
        let r = evaluate_protocol(&params, &p).unwrap();
        let expected = link_at_least(r.p_heg, 10, 1).unwrap() / r.t_session_s;
        assert!((r.rate_hz - expected).abs() < 1e-12 * expected);
        assert_eq!(r.skr_hz, r.rate_hz);
    }

    #[test]
    fn zero_efficiency_gives_zero_rate() {
        let params = NetworkParams {
            eta0: 0.0,
            ..NetworkParams::default()
        };
        for protocol in Protocol::ALL {
            let p = SessionPlan::with_protocol(10, 100, protocol).unwrap();
            let r = evaluate_protocol(&params, &p).unwrap();
            assert_eq!((r.p_session, r.rate_hz, r.skr_hz), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn branch_weights_sum_to_one() {
        let params = NetworkParams::default();
        let p = plan(4, 5, 0, 1);
        let out = link_outcome(&params, &p, 250.0, 0.3).unwrap();
        let total = out.p_no_pur() + out.p_pur_fail() + out.p_pur_success();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((out.p_pur - 0.196_02).abs() < 1e-5, "{}", out.p_pur);
    }

    #[test]
    fn purified_branch_beats_unpurified_link() {
        let params = NetworkParams::default();
        let l0 = 20.0;
        let with = link_outcome(&params, &plan(50, 2000, 0, 1), l0, 0.1).unwrap();
        let without = link_outcome(&params, &plan(50, 2000, 0, 0), l0, 0.1).unwrap();
        let purified = with.branches[2].state;
        assert!(purified.b() < without.branches[0].state.b());
    }

    #[test]
    fn link_chain_matches_whole_network_formula() {
        let params = NetworkParams {
            eps_init: 2e-3,
            eps_gate: 3e-3,
            eps_meas: 4e-3,
            t2_s: 0.2,
            ..NetworkParams::default()
        };
        let (n, m, p) = (6u32, 40u32, 0.08);
        let sp = plan(n, m, 0, 0);
        let l0 = sp.link_length(&params);
        let (link, _) = link_ensemble(&params, &sp, p, DEFAULT_CAP).unwrap();
        let chained = chain_links(&vec![link; n as usize], &params).mean();

        let wait = network_wait_pmf(n, m, p).unwrap();
        let t_wait = wait.mean_duration(
            params.t_heg_s,
            n as f64 * (params.round_trip_time(l0) + params.t_swap_s),
        );
        let direct = BellDiagonal::from_initialization(params.eps_init, n)
            .depolarize(params.eps_gate, n - 1)
            .swap_measurement_errors(params.eps_meas, n)
            .dephase(t_wait, params.t2_s);
        for (x, y) in chained.coeffs().iter().zip(direct.coeffs()) {
            assert!((x - y).abs() < 1e-12, "{chained:?} {direct:?}");
        }
    }

    #[test]
    fn nine_sets_before_capping_and_weight_preserved() {
        let params = NetworkParams::default();
        let sp = plan(2, 60, 0, 1);
        let (link, _) = link_ensemble(&params, &sp, 0.1, DEFAULT_CAP).unwrap();
        assert_eq!(link.len(), 3);
        let chained = chain_links(&[link.clone(), link], &params);
        assert_eq!(chained.len(), 9);
        assert!((chained.total_weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cap_does_not_move_the_mean() {
        let params = NetworkParams::default();
        let sp = plan(4, 60, 1, 1);
        let at = |cap| {
            evaluate_with_options(
                &params,
                &sp,
                &EvalOptions {
                    ensemble_cap: cap,
                    heg_probability: Some(0.05),
                },
            )
            .unwrap()
        };
        let reference = at(10_000);
        for cap in [1, 10, 100] {
            let r = at(cap);
            assert!((r.e_x - reference.e_x).abs() < 1e-12);
            assert!((r.e_z - reference.e_z).abs() < 1e-12);
            assert!((r.p_epr - reference.p_epr).abs() < 1e-12);
        }
    }

    #[test]
    fn end_node_purification_on_phase_errors() {
        let params = perfect();
        let mut sessions = WeightedEnsemble::new(DEFAULT_CAP);
        sessions.push(1.0, BellDiagonal::new(0.0, 0.1, 0.9, 0.0).unwrap());
        let (out, success) = end_node_chain(&sessions, &params, &plan(3, 10, 1, 0), 0.01).unwrap();
        assert!((success[0] - 0.82).abs() < 1e-12);
        assert!((out.a() - 0.0122).abs() < 1e-4, "{out:?}");
        assert!((out.c() - 0.987_80).abs() < 1e-5);
        let (out, success) = end_node_chain(&sessions, &params, &plan(3, 10, 0, 0), 0.01).unwrap();
        assert_eq!(out, sessions.mean());
        assert!(success.is_empty());
    }

    #[test]
    fn end_node_rounds_feed_rate_formula() {
        let params = NetworkParams::default();
        let r = evaluate_protocol(&params, &plan(25, 300, 2, 1)).unwrap();
        assert_eq!(r.end_purification_success.len(), 2);
        let attempt = epr_attempt_stats(
            r.p_session,
            &r.end_purification_success,
            2,
            r.t_session_s,
            params.t_pur_s,
        )
        .unwrap();
        assert_eq!(attempt.p_epr, r.p_epr);
        assert!((r.t_epr_s - (3.0 * r.t_session_s + 2.0 * params.t_pur_s)).abs() < 1e-15);
    }

    #[test]
    fn errors_grow_with_noise_and_shrink_with_coherence() {
        let sp = plan(20, 400, 1, 1);
        let mut last = (0.0, 0.0);
        for eps in [0.0, 1e-4, 1e-3, 5e-3] {
            let params = NetworkParams::default().with_tied_error(eps);
            let r = evaluate_protocol(&params, &sp).unwrap();
            assert!(r.e_x >= last.0 - 1e-15 && r.e_z >= last.1 - 1e-15);
            last = (r.e_x, r.e_z);
        }
        let mut last = (1.0, 1.0);
        for t2 in [0.05, 0.5, 5.0, f64::INFINITY] {
            let params = NetworkParams {
                t2_s: t2,
                ..NetworkParams::default()
            };
            let r = evaluate_protocol(&params, &sp).unwrap();
            assert!(r.e_x <= last.0 + 1e-15 && r.e_z <= last.1 + 1e-15);
            last = (r.e_x, r.e_z);
        }
    }
}
