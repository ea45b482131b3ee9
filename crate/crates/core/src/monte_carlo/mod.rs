//! Session-by-session stochastic simulation of the repeater protocol, used
//! to check the analytic pipeline.
//!
//! Every classical event is sampled: the trial index of each heralded pair,
//! link and end-node purification heralds, session failures. The two-qubit
//! state is either carried as Bell coefficients given those events
//! ([`TrackMode::Probabilities`]) or collapsed to one Bell state after every
//! channel ([`TrackMode::Trajectories`]). Purification outputs can carry
//! slightly negative coefficients; trajectories sample them as a
//! quasi-probability and carry the sign and norm as a weight.
//!
//! Two independent phases run per report. The first simulates attempts as
//! they happen and estimates `p_session` and `p_EPR`. The second draws only
//! successful sessions so the error estimates do not starve when sessions
//! rarely succeed.

pub mod circuit;

pub use circuit::{circuit_oracle_purify, circuit_oracle_swap, CircuitPurification};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;

use crate::bell::{entanglement_swap, heralded_vector, purification_branches, purify, BellDiagonal};
use crate::error::{ModelError, Result};
use crate::network_model::{
    detection_efficiency, heg_success_probability, session_duration, NetworkParams, RateReport,
    SessionPlan,
};
use crate::timing::single_link_mean_wait;

/// Attempts simulated per random stream. Fixed so that results do not
/// depend on how batches are spread over threads.
pub const BATCH_ATTEMPTS: u64 = 2048;

/// Relative disagreement tolerated on top of three standard errors.
pub const SYSTEMATIC_ALLOWANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackMode {
    Probabilities,
    Trajectories,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    /// Sessions per phase.
    pub n_sessions: u64,
    pub params: NetworkParams,
    pub plan: SessionPlan,
    pub mode: TrackMode,
    /// Replaces the HEG success probability derived from the fiber model.
    pub heg_probability: Option<f64>,
}

impl SimConfig {
    pub fn new(params: NetworkParams, plan: SessionPlan) -> Self {
        Self {
            seed: 0,
            n_sessions: 100_000,
            params,
            plan,
            mode: TrackMode::Probabilities,
            heg_probability: None,
        }
    }

    fn heg_probability(&self) -> Result<f64> {
        match self.heg_probability {
            Some(p) if (0.0..=1.0).contains(&p) => Ok(p),
            Some(p) => Err(ModelError::InvalidParameter {
                name: "p_HEG",
                value: p,
                reason: "must lie in [0, 1]",
            }),
            None => {
                let l0 = self.plan.link_length(&self.params);
                heg_success_probability(detection_efficiency(&self.params, l0)?)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub p_heg: f64,
    /// Sessions simulated in the first phase.
    pub sessions: u64,
    pub attempts: u64,
    pub p_session: Estimate,
    pub p_epr: Estimate,
    pub e_x: Estimate,
    pub e_z: Estimate,
    /// Trials after the last heralded pair, averaged over links of
    /// successful sessions.
    pub mean_link_wait: Estimate,
    /// Same wait for the first link only, indexed by trial count.
    pub wait_histogram: Vec<u64>,
}

/// One row of an analytic-versus-simulated comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub quantity: &'static str,
    pub analytic: f64,
    pub simulated: f64,
    pub sigma: f64,
    pub z: f64,
    pub within_tolerance: bool,
}

impl Divergence {
    fn new(quantity: &'static str, analytic: f64, simulated: f64, sigma: f64) -> Self {
        let diff = simulated - analytic;
        let z = if sigma > 0.0 {
            diff / sigma
        } else if diff.abs() <= 1e-12 * (1.0 + analytic.abs()) {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        };
        Self {
            quantity,
            analytic,
            simulated,
            sigma,
            z,
            within_tolerance: diff.abs() <= 3.0 * sigma + SYSTEMATIC_ALLOWANCE * analytic.abs(),
        }
    }
}

impl SimReport {
    /// Compares against an analytic report of the same plan and `p_HEG`.
    pub fn compare(&self, analytic: &RateReport) -> Vec<Divergence> {
        let n = self.sessions as f64;
        // A binomial floor keeps sigma meaningful when every sample agreed.
        let counted = |a: f64, est: &Estimate| est.std_error.max((a * (1.0 - a) / n).sqrt());
        let wait = single_link_mean_wait(analytic.plan.trials, analytic.p_heg);
        let mut rows = vec![
            Divergence::new(
                "p_session",
                analytic.p_session,
                self.p_session.value,
                counted(analytic.p_session, &self.p_session),
            ),
            Divergence::new(
                "p_EPR",
                analytic.p_epr,
                self.p_epr.value,
                counted(analytic.p_epr, &self.p_epr),
            ),
            Divergence::new("e_X", analytic.e_x, self.e_x.value, self.e_x.std_error),
            Divergence::new("e_Z", analytic.e_z, self.e_z.value, self.e_z.std_error),
        ];
        if self.mean_link_wait.samples > 0 {
            rows.push(Divergence::new(
                "mean_link_wait",
                wait,
                self.mean_link_wait.value,
                self.mean_link_wait.std_error,
            ));
        }
        rows
    }
}

/// Fixed inputs of one simulation.
struct Context {
    p: f64,
    gap: Option<Geometric>,
    trials: u64,
    n_links: u32,
    end_rounds: u8,
    link_rounds: u8,
    mode: TrackMode,
    params: NetworkParams,
    initial: BellDiagonal,
    t_rt: f64,
    t_session: f64,
    delay: f64,
}

impl Context {
    fn collapse(&self, rng: &mut ChaCha8Rng, state: BellDiagonal) -> BellDiagonal {
        match self.mode {
            TrackMode::Probabilities => state,
            TrackMode::Trajectories => {
                let u: f64 = rng.random();
                let c = state.coeffs();
                let mut acc = 0.0;
                for (k, x) in c.iter().enumerate() {
                    acc += x;
                    if u < acc {
                        return BellDiagonal::basis(k);
                    }
                }
                // rounding left u above the running sum
                BellDiagonal::basis(c.iter().rposition(|&x| x > 0.0).unwrap_or(2))
            }
        }
    }

    /// Samples a basis state from `|raw|` and multiplies `sign` by the
    /// sign of the picked coefficient times the total absolute mass.
    fn collapse_signed(&self, rng: &mut ChaCha8Rng, raw: [f64; 4], sign: &mut f64) -> BellDiagonal {
        let norm: f64 = raw.iter().map(|x| x.abs()).sum();
        let u = rng.random::<f64>() * norm;
        let mut pick = raw.iter().rposition(|&x| x != 0.0).unwrap_or(2);
        let mut acc = 0.0;
        for (k, x) in raw.iter().enumerate() {
            acc += x.abs();
            if u < acc {
                pick = k;
                break;
            }
        }
        *sign *= raw[pick].signum() * norm;
        BellDiagonal::basis(pick)
    }

    /// Heralded purification: `(p_m, kept state)`, or `None` when success
    /// can never be heralded.
    fn purify_pair(
        &self,
        rng: &mut ChaCha8Rng,
        first: &BellDiagonal,
        second: &BellDiagonal,
        sign: &mut f64,
    ) -> Option<(f64, BellDiagonal)> {
        let p = &self.params;
        match self.mode {
            TrackMode::Probabilities => purify(first, second, p.eps_gate, p.eps_meas)
                .ok()
                .map(|o| (o.p_measured.min(1.0), o.state)),
            TrackMode::Trajectories => {
                let branches = purification_branches(first, second, p.eps_gate);
                let (p_m, raw) = heralded_vector(&branches, p.eps_meas).ok()?;
                Some((p_m.min(1.0), self.collapse_signed(rng, raw, sign)))
            }
        }
    }

    fn dephase(&self, rng: &mut ChaCha8Rng, state: BellDiagonal, t: f64) -> BellDiagonal {
        self.collapse(rng, state.dephase(t, self.params.t2_s))
    }

    /// Failed trials after the last success, unconditioned. Values `>= M`
    /// mean no success in the session.
    fn last_gap(&self, rng: &mut ChaCha8Rng) -> u64 {
        match &self.gap {
            Some(g) => g.sample(rng),
            None => self.trials,
        }
    }

    /// Failed trials after the last success given at least one success.
    fn conditioned_last(&self, rng: &mut ChaCha8Rng) -> u64 {
        let ln_q = (-self.p).ln_1p();
        if ln_q == 0.0 {
            return rng.random_range(0..self.trials);
        }
        let mass = -(self.trials as f64 * ln_q).exp_m1();
        let u: f64 = rng.random();
        let m = ((-u * mass).ln_1p() / ln_q).floor();
        (m.max(0.0) as u64).min(self.trials - 1)
    }

    /// Trials after the last, second-last and third-last successes, as many
    /// as the link protocol needs and the session produced.
    fn sample_link(&self, rng: &mut ChaCha8Rng, conditioned: bool) -> Option<([u64; 3], usize)> {
        let last = if conditioned {
            self.conditioned_last(rng)
        } else {
            self.last_gap(rng)
        };
        if last >= self.trials {
            return None;
        }
        let needed = if self.link_rounds == 0 { 1 } else { 3 };
        let mut waits = [last, 0, 0];
        let mut count = 1;
        while count < needed {
            let next = waits[count - 1] + 1 + self.last_gap(rng);
            if next >= self.trials {
                break;
            }
            waits[count] = next;
            count += 1;
        }
        Some((waits, count))
    }

    fn fresh_pair(&self, rng: &mut ChaCha8Rng) -> BellDiagonal {
        self.collapse(rng, self.initial)
    }

    fn link_state(
        &self,
        rng: &mut ChaCha8Rng,
        waits: [u64; 3],
        count: usize,
        sign: &mut f64,
    ) -> BellDiagonal {
        let p = &self.params;
        let heg = |m: u64| m as f64 * p.t_heg_s;
        if self.link_rounds == 0 {
            let t = 2.0 * (heg(waits[0]) + self.t_rt + p.t_swap_s);
            let pair = self.fresh_pair(rng);
            return self.dephase(rng, pair, t);
        }
        let unpurified = |m: u64| 2.0 * (heg(m) + 2.0 * self.t_rt + p.t_pur_s + p.t_swap_s);
        if count < 3 {
            let pair = self.fresh_pair(rng);
            return self.dephase(rng, pair, unpurified(waits[0]));
        }
        let first = self.fresh_pair(rng);
        let first = self.dephase(rng, first, 2.0 * (heg(waits[0]) + self.t_rt));
        let second = self.fresh_pair(rng);
        let second = self.dephase(rng, second, 2.0 * (heg(waits[1]) + self.t_rt));
        let reserve = self.fresh_pair(rng);
        let reserve = self.dephase(rng, reserve, unpurified(waits[2]));
        let after = 2.0 * (p.t_pur_s + self.t_rt + p.t_swap_s);
        let Some((p_m, state)) = self.purify_pair(rng, &first, &second, sign) else {
            return reserve;
        };
        match self.mode {
            TrackMode::Probabilities => {
                let kept = state.dephase(after, p.t2_s).coeffs();
                let fallback = reserve.coeffs();
                let mut mix = [0.0; 4];
                for k in 0..4 {
                    mix[k] = p_m * kept[k] + (1.0 - p_m) * fallback[k];
                }
                BellDiagonal::from_unnormalized(mix).expect("mixture of two states")
            }
            TrackMode::Trajectories => {
                if rng.random::<f64>() < p_m {
                    self.dephase(rng, state, after)
                } else {
                    reserve
                }
            }
        }
    }

    /// One session; `None` if some link produced no pair.
    fn session(
        &self,
        rng: &mut ChaCha8Rng,
        conditioned: bool,
        waits: &mut Vec<u64>,
        sign: &mut f64,
    ) -> Option<BellDiagonal> {
        waits.clear();
        let mut chain: Option<BellDiagonal> = None;
        for _ in 0..self.n_links {
            let (w, count) = self.sample_link(rng, conditioned)?;
            waits.push(w[0]);
            let link = self.link_state(rng, w, count, sign);
            chain = Some(match chain {
                None => link,
                Some(left) => self.collapse(rng, entanglement_swap(&left, &link)),
            });
        }
        let p = &self.params;
        let swaps = self.n_links - 1;
        let state = chain.expect("at least one link");
        let state = self.collapse(rng, state.depolarize(p.eps_gate, swaps));
        Some(self.collapse(rng, state.swap_measurement_errors(p.eps_meas, self.n_links)))
    }

    /// One attempt at a final pair. In the conditioned phase every session
    /// succeeds and, when tracking probabilities, end-node heralds become
    /// weights instead of coin flips.
    fn attempt(&self, rng: &mut ChaCha8Rng, conditioned: bool, tally: &mut Tally) {
        let mut waits = Vec::with_capacity(self.n_links as usize);
        let mut sessions = 0u64;
        let mut weight = 1.0;
        let mut sign = 1.0;
        let record_session = |tally: &mut Tally, waits: &[u64], ok: bool| {
            if conditioned {
                tally.record_waits(waits);
                return;
            }
            tally.sessions += 1;
            if ok {
                tally.sessions_ok += 1;
                tally.record_waits(waits);
            }
        };

        let mut outcome = None;
        'attempt: {
            sessions += 1;
            let Some(mut current) = self.session(rng, conditioned, &mut waits, &mut sign) else {
                record_session(tally, &waits, false);
                break 'attempt;
            };
            record_session(tally, &waits, true);
            let p = &self.params;
            for round in 0..self.end_rounds {
                sessions += 1;
                let Some(next) = self.session(rng, conditioned, &mut waits, &mut sign) else {
                    record_session(tally, &waits, false);
                    break 'attempt;
                };
                record_session(tally, &waits, true);
                let held = if round == 0 {
                    self.t_session + self.delay
                } else {
                    self.t_session
                };
                let older = self.dephase(rng, current, held);
                let older = self.collapse(rng, older.depolarize(p.eps_gate, 1));
                let newer = self.dephase(rng, next, self.delay);
                let newer = self.collapse(rng, newer.depolarize(p.eps_gate, 1));
                let Some((p_m, kept)) = self.purify_pair(rng, &older, &newer, &mut sign) else {
                    break 'attempt;
                };
                if conditioned && self.mode == TrackMode::Probabilities {
                    weight *= p_m;
                } else if rng.random::<f64>() >= p_m {
                    break 'attempt;
                }
                current = self.dephase(rng, kept, p.t_pur_s);
            }
            outcome = Some(current);
        }

        if conditioned {
            let (e_x, e_z) = outcome.map_or((0.0, 0.0), |s| s.quantum_bit_errors());
            let w = if outcome.is_some() { weight * sign } else { 0.0 };
            tally.errors.push(w, e_x, e_z);
        } else {
            tally.attempts += 1;
            let x = if outcome.is_some() {
                self.end_rounds as f64 + 1.0
            } else {
                0.0
            };
            tally.epr.push(sign * x, sign * sessions as f64);
        }
    }
}

/// Sums for a ratio estimator `sum x / sum y` with delta-method variance.
#[derive(Debug, Clone, Copy, Default)]
struct RatioSums {
    x: f64,
    y: f64,
    xx: f64,
    xy: f64,
    yy: f64,
    n: u64,
}

impl RatioSums {
    fn push(&mut self, x: f64, y: f64) {
        self.x += x;
        self.y += y;
        self.xx += x * x;
        self.xy += x * y;
        self.yy += y * y;
        self.n += 1;
    }

    fn merge(&mut self, o: &RatioSums) {
        self.x += o.x;
        self.y += o.y;
        self.xx += o.xx;
        self.xy += o.xy;
        self.yy += o.yy;
        self.n += o.n;
    }

    fn estimate(&self) -> Estimate {
        if self.y <= 0.0 {
            return Estimate {
                value: 0.0,
                std_error: 0.0,
                samples: self.n,
            };
        }
        let r = self.x / self.y;
        let resid = (self.xx - 2.0 * r * self.xy + r * r * self.yy).max(0.0);
        Estimate {
            value: r,
            std_error: resid.sqrt() / self.y,
            samples: self.n,
        }
    }
}

/// Weighted means of e_X and e_Z.
#[derive(Debug, Clone, Copy, Default)]
struct WeightedErrors {
    x: RatioSums,
    z: RatioSums,
}

impl WeightedErrors {
    fn push(&mut self, w: f64, e_x: f64, e_z: f64) {
        self.x.push(w * e_x, w);
        self.z.push(w * e_z, w);
    }
}

#[derive(Debug, Clone, Default)]
struct Tally {
    sessions: u64,
    sessions_ok: u64,
    attempts: u64,
    epr: RatioSums,
    errors: WeightedErrors,
    wait_sum: f64,
    wait_sq: f64,
    wait_n: u64,
    histogram: Vec<u64>,
}

impl Tally {
    fn record_waits(&mut self, waits: &[u64]) {
        for &w in waits {
            self.wait_sum += w as f64;
            self.wait_sq += (w * w) as f64;
            self.wait_n += 1;
        }
        if let Some(&first) = waits.first() {
            self.histogram[first as usize] += 1;
        }
    }

    fn merge(&mut self, o: &Tally) {
        self.sessions += o.sessions;
        self.sessions_ok += o.sessions_ok;
        self.attempts += o.attempts;
        self.epr.merge(&o.epr);
        self.errors.x.merge(&o.errors.x);
        self.errors.z.merge(&o.errors.z);
        self.wait_sum += o.wait_sum;
        self.wait_sq += o.wait_sq;
        self.wait_n += o.wait_n;
        for (a, b) in self.histogram.iter_mut().zip(&o.histogram) {
            *a += b;
        }
    }
}

fn run_phase(ctx: &Context, cfg: &SimConfig, attempts: u64, conditioned: bool) -> Tally {
    let batches = attempts.div_ceil(BATCH_ATTEMPTS);
    let partial: Vec<Tally> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(2 * b + conditioned as u64);
            let mut tally = Tally {
                histogram: vec![0; ctx.trials as usize],
                ..Tally::default()
            };
            let n = BATCH_ATTEMPTS.min(attempts - b * BATCH_ATTEMPTS);
            for _ in 0..n {
                ctx.attempt(&mut rng, conditioned, &mut tally);
            }
            tally
        })
        .collect();
    let mut total = Tally {
        histogram: vec![0; ctx.trials as usize],
        ..Tally::default()
    };
    for t in &partial {
        total.merge(t);
    }
    total
}

/// Simulates `cfg.n_sessions` sessions in each phase. Results are identical
/// for a fixed seed whatever the thread count.
pub fn simulate_sessions(cfg: &SimConfig) -> Result<SimReport> {
    cfg.params.validate()?;
    if cfg.n_sessions == 0 {
        return Err(ModelError::InvalidPlan("need at least one session".into()));
    }
    let p = cfg.heg_probability()?;
    let plan = cfg.plan;
    let l0 = plan.link_length(&cfg.params);
    let ctx = Context {
        p,
        gap: if p > 0.0 { Geometric::new(p).ok() } else { None },
        trials: plan.trials as u64,
        n_links: plan.n_links,
        end_rounds: plan.end_rounds(),
        link_rounds: plan.link_rounds(),
        mode: cfg.mode,
        params: cfg.params,
        initial: BellDiagonal::from_initialization(cfg.params.eps_init, 1),
        t_rt: cfg.params.round_trip_time(l0),
        t_session: session_duration(&cfg.params, &plan, l0),
        delay: cfg.params.end_node_signal_delay(),
    };
    let attempts = cfg.n_sessions.div_ceil(plan.end_rounds() as u64 + 1);

    let raw = run_phase(&ctx, cfg, attempts, false);
    let p_session = raw.sessions_ok as f64 / raw.sessions as f64;

    // Waits come from the conditioned phase, which has samples even when
    // successes are too rare to show up in the raw one.
    let (e_x, e_z, cond) = if p > 0.0 {
        let cond = run_phase(&ctx, cfg, attempts, true);
        (cond.errors.x.estimate(), cond.errors.z.estimate(), cond)
    } else {
        let mixed = Estimate {
            value: 0.5,
            std_error: 0.0,
            samples: 0,
        };
        (mixed, mixed, raw.clone())
    };
    let n_ok = cond.wait_n.max(1) as f64;
    let wait_mean = cond.wait_sum / n_ok;
    let wait_var = (cond.wait_sq / n_ok - wait_mean * wait_mean).max(0.0);

    Ok(SimReport {
        p_heg: p,
        sessions: raw.sessions,
        attempts: raw.attempts,
        p_session: Estimate {
            value: p_session,
            std_error: (p_session * (1.0 - p_session) / raw.sessions as f64).sqrt(),
            samples: raw.sessions,
        },
        p_epr: raw.epr.estimate(),
        e_x,
        e_z,
        mean_link_wait: Estimate {
            value: wait_mean,
            std_error: (wait_var / n_ok).sqrt(),
            samples: cond.wait_n,
        },
        wait_histogram: cond.histogram,
    })
}
