//! Integer pattern search over (N, M) for each protocol, and parameter sweeps.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{ModelError, Result};
use crate::network_model::{NetworkParams, Protocol, RateReport, SessionPlan};
use crate::pipeline::{evaluate_protocol, evaluate_with_options, EvalOptions};

/// Values of M below this are searched one by one; above it the lattice
/// grows geometrically by `1 / DENSE_M_LIMIT` per step.
pub const DENSE_M_LIMIT: u32 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub n_bounds: (u32, u32),
    pub m_bounds: (u32, u32),
    /// Initial poll step in lattice units.
    pub initial_mesh: f64,
    /// The search stops once the mesh drops below this.
    pub mesh_tolerance: f64,
    pub starts: usize,
    /// Ensemble cap used while searching. Only the weighted mean of the
    /// ensemble enters the report, so the cap does not change the ranking.
    pub search_cap: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            n_bounds: (1, 200),
            m_bounds: (1, 20_000),
            initial_mesh: 16.0,
            mesh_tolerance: 0.9,
            starts: 5,
            search_cap: 1,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let (n0, n1) = self.n_bounds;
        let (m0, m1) = self.m_bounds;
        if n0 == 0 || m0 == 0 || n0 > n1 || m0 > m1 {
            return Err(ModelError::InvalidPlan(format!(
                "search bounds N {:?}, M {:?} must be positive and ordered",
                self.n_bounds, self.m_bounds
            )));
        }
        if !(self.mesh_tolerance > 0.0) || !(self.initial_mesh >= self.mesh_tolerance) {
            return Err(ModelError::InvalidParameter {
                name: "mesh",
                value: self.initial_mesh,
                reason: "need initial mesh >= tolerance > 0",
            });
        }
        if self.starts == 0 || self.search_cap == 0 {
            return Err(ModelError::InvalidPlan("starts and search cap must be positive".into()));
        }
        Ok(())
    }
}

/// Search lattice for M: every integer up to [`DENSE_M_LIMIT`], then
/// geometric steps, clipped to `[lo, hi]` with `hi` always included.
pub fn m_lattice(lo: u32, hi: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut j = 1u32;
    loop {
        let m = if j <= DENSE_M_LIMIT {
            j
        } else {
            let growth = 1.0 + 1.0 / DENSE_M_LIMIT as f64;
            (DENSE_M_LIMIT as f64 * growth.powi((j - DENSE_M_LIMIT) as i32)).round() as u32
        };
        if m > hi {
            break;
        }
        if m >= lo {
            out.push(m);
        }
        j += 1;
    }
    if out.last() != Some(&hi) {
        out.push(hi);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOutcome {
    pub point: (i64, i64),
    pub value: f64,
    pub evaluations: usize,
    pub cache_hits: usize,
}

/// Memoized objective over a 2-D integer box.
pub struct CachedObjective<F> {
    f: F,
    cache: HashMap<(i64, i64), f64>,
    pub evaluations: usize,
    pub cache_hits: usize,
}

impl<F: FnMut(i64, i64) -> f64> CachedObjective<F> {
    pub fn new(f: F) -> Self {
        Self {
            f,
            cache: HashMap::new(),
            evaluations: 0,
            cache_hits: 0,
        }
    }

    pub fn value(&mut self, p: (i64, i64)) -> f64 {
        if let Some(v) = self.cache.get(&p) {
            self.cache_hits += 1;
            return *v;
        }
        self.evaluations += 1;
        let v = (self.f)(p.0, p.1);
        self.cache.insert(p, v);
        v
    }
}

/// Maximizes `objective` with a positive-basis-2N poll on the integer box
/// `bounds = ((x_lo, x_hi), (y_lo, y_hi))`. The mesh doubles after an
/// improving poll and halves otherwise.
pub fn pattern_search(
    objective: impl FnMut(i64, i64) -> f64,
    start: (i64, i64),
    bounds: ((i64, i64), (i64, i64)),
    initial_mesh: f64,
    tolerance: f64,
) -> SearchOutcome {
    let mut cached = CachedObjective::new(objective);
    let (point, value) = search_cached(&mut cached, start, bounds, initial_mesh, tolerance);
    SearchOutcome {
        point,
        value,
        evaluations: cached.evaluations,
        cache_hits: cached.cache_hits,
    }
}

fn search_cached<F: FnMut(i64, i64) -> f64>(
    cached: &mut CachedObjective<F>,
    start: (i64, i64),
    bounds: ((i64, i64), (i64, i64)),
    initial_mesh: f64,
    tolerance: f64,
) -> ((i64, i64), f64) {
    let ((x_lo, x_hi), (y_lo, y_hi)) = bounds;
    let clamp = |p: (i64, i64)| (p.0.clamp(x_lo, x_hi), p.1.clamp(y_lo, y_hi));
    let span = (x_hi - x_lo).max(y_hi - y_lo).max(1) as f64;
    let mut best = clamp(start);
    let mut best_value = cached.value(best);
    let mut mesh = initial_mesh;
    while mesh >= tolerance {
        let step = (mesh.round() as i64).max(1);
        let mut improved = None;
        for (dx, dy) in [(step, 0), (0, step), (-step, 0), (0, -step)] {
            let candidate = clamp((best.0 + dx, best.1 + dy));
            if candidate == best {
                continue;
            }
            let v = cached.value(candidate);
            if v > improved.map_or(best_value, |(_, bv)| bv) {
                improved = Some((candidate, v));
            }
        }
        match improved {
            Some((p, v)) => {
                best = p;
                best_value = v;
                mesh = (mesh * 2.0).min(span);
            }
            None => mesh /= 2.0,
        }
    }
    (best, best_value)
}

/// Score used by the search. Feasible plans score their key rate; the rest
/// score below zero, rising as the secret fraction approaches zero.
pub fn search_score(report: &RateReport) -> f64 {
    if report.skr_hz > 0.0 {
        report.skr_hz
    } else if report.r_inf.is_finite() {
        report.r_inf.min(0.0) - 1.0
    } else {
        -2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolBest {
    pub protocol: Protocol,
    pub report: RateReport,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub best: RateReport,
    pub per_protocol: Vec<ProtocolBest>,
    pub evaluations: usize,
    pub cache_hits: usize,
}

impl OptimizationResult {
    pub fn is_feasible(&self) -> bool {
        self.best.is_feasible()
    }
}

fn start_points(cfg: &SearchConfig, lattice_len: usize) -> Vec<(i64, i64)> {
    let (n0, n1) = cfg.n_bounds;
    let k = cfg.starts;
    (0..k)
        .map(|i| {
            let frac = (i as f64 + 0.5) / k as f64;
            let n = n0 as f64 + frac * (n1 - n0) as f64;
            // Log-uniform in M, paired in reverse so few links get many trials.
            let j = ((1.0 - frac) * (lattice_len - 1) as f64).round();
            (n.round() as i64, j as i64)
        })
        .collect()
}

/// Best plan for one protocol over multistart pattern searches.
pub fn optimize_single(
    params: &NetworkParams,
    protocol: Protocol,
    cfg: &SearchConfig,
) -> Result<(ProtocolBest, usize, usize)> {
    cfg.validate()?;
    params.validate()?;
    let m_lo = cfg.m_bounds.0.max(protocol.min_trials());
    if m_lo > cfg.m_bounds.1 {
        return Err(ModelError::InvalidPlan(format!(
            "M bounds {:?} leave no valid M for {protocol}",
            cfg.m_bounds
        )));
    }
    let lattice = m_lattice(m_lo, cfg.m_bounds.1);
    let options = EvalOptions {
        ensemble_cap: cfg.search_cap,
        heg_probability: None,
    };
    let objective = |n: i64, j: i64| -> f64 {
        let plan = match SessionPlan::with_protocol(n as u32, lattice[j as usize], protocol) {
            Ok(p) => p,
            Err(_) => return f64::NEG_INFINITY,
        };
        evaluate_with_options(params, &plan, &options)
            .map(|r| search_score(&r))
            .unwrap_or(f64::NEG_INFINITY)
    };
    let mut cached = CachedObjective::new(objective);
    let bounds = (
        (cfg.n_bounds.0 as i64, cfg.n_bounds.1 as i64),
        (0, lattice.len() as i64 - 1),
    );
    let mut best: Option<((i64, i64), f64)> = None;
    for start in start_points(cfg, lattice.len()) {
        let found = search_cached(&mut cached, start, bounds, cfg.initial_mesh, cfg.mesh_tolerance);
        if best.is_none_or(|(_, v)| found.1 > v) {
            best = Some(found);
        }
    }
    let ((n, j), score) = best.expect("at least one start");
    let plan = SessionPlan::with_protocol(n as u32, lattice[j as usize], protocol)?;
    let report = evaluate_protocol(params, &plan)?;
    Ok((
        ProtocolBest {
            protocol,
            report,
            score,
        },
        cached.evaluations,
        cached.cache_hits,
    ))
}

/// Optimizes every protocol and returns the best plan overall.
pub fn optimize_protocol(params: &NetworkParams, cfg: &SearchConfig) -> Result<OptimizationResult> {
    optimize_protocols(params, cfg, &Protocol::ALL)
}

pub fn optimize_protocols(
    params: &NetworkParams,
    cfg: &SearchConfig,
    protocols: &[Protocol],
) -> Result<OptimizationResult> {
    let mut per_protocol = Vec::with_capacity(protocols.len());
    let (mut evaluations, mut cache_hits) = (0, 0);
    for &protocol in protocols {
        let (best, e, h) = optimize_single(params, protocol, cfg)?;
        evaluations += e;
        cache_hits += h;
        per_protocol.push(best);
    }
    let winner = per_protocol
        .iter()
        .fold(None::<&ProtocolBest>, |acc, p| match acc {
            Some(a) if !(rank(p) > rank(a)) => Some(a),
            _ => Some(p),
        })
        .ok_or_else(|| ModelError::InvalidPlan("no protocol to optimize".into()))?;
    Ok(OptimizationResult {
        best: winner.report.clone(),
        per_protocol,
        evaluations,
        cache_hits,
    })
}

fn rank(p: &ProtocolBest) -> (f64, f64) {
    (p.report.skr_hz, p.score)
}

/// A parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepParameter {
    /// Tied initialization, gate and measurement error.
    Eps,
    T2,
    Eta0,
    LTot,
    THeg,
}

impl SweepParameter {
    pub const ALL: [SweepParameter; 5] = [
        SweepParameter::Eps,
        SweepParameter::T2,
        SweepParameter::Eta0,
        SweepParameter::LTot,
        SweepParameter::THeg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Eps => "eps",
            SweepParameter::T2 => "T2_s",
            SweepParameter::Eta0 => "eta0",
            SweepParameter::LTot => "L_tot_km",
            SweepParameter::THeg => "t_HEG_s",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn apply(self, params: &mut NetworkParams, value: f64) {
        match self {
            SweepParameter::Eps => *params = params.with_tied_error(value),
            SweepParameter::T2 => params.t2_s = value,
            SweepParameter::Eta0 => params.eta0 = value,
            SweepParameter::LTot => params.l_tot_km = value,
            SweepParameter::THeg => params.t_heg_s = value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

/// Cartesian product of the axes applied to `base`; the first axis varies
/// slowest.
pub fn grid_points(base: &NetworkParams, axes: &[SweepAxis]) -> Vec<NetworkParams> {
    let mut points = vec![*base];
    for axis in axes {
        points = points
            .iter()
            .flat_map(|p| {
                axis.values.iter().map(move |&v| {
                    let mut q = *p;
                    axis.parameter.apply(&mut q, v);
                    q
                })
            })
            .collect();
    }
    points
}

/// Optimizes every grid point. Rows come back in grid order whatever the
/// thread count.
pub fn sweep(points: &[NetworkParams], cfg: &SearchConfig) -> Vec<Result<OptimizationResult>> {
    points
        .par_iter()
        .map(|p| optimize_protocol(p, cfg))
        .collect()
}
