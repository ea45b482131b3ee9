//! Run configuration: TOML files, `section.key=value` overrides and sweep
//! axis specs.
//!
//! ```toml
//! [network]
//! L_tot_km = 1000.0
//! eps = 1e-3        # sets eps_i, eps_TQG and eps_m; the specific keys win
//! T2_s = inf
//!
//! [plan]
//! N = 30
//! M = 500
//! P_E = 0
//! P_L = 1
//!
//! [sweep]
//! axes = ["eta0=0.1,0.4,0.8", "eps=log:1e-4:1e-2:5"]
//! ```

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Deserialize;
use thiserror::Error;
use toml::{Table, Value};

use crate::monte_carlo::TrackMode;
use crate::network_model::{NetworkParams, SessionPlan};
use crate::optimizer::{SearchConfig, SweepAxis, SweepParameter};

/// Most points a single `lin:`/`log:` axis may expand to.
pub const MAX_AXIS_POINTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("bad override `{arg}`: {reason}")]
    Override { arg: String, reason: String },
    #[error("bad axis `{spec}`: {reason}")]
    Axis { spec: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    network: RawNetwork,
    #[serde(default)]
    plan: RawPlan,
    #[serde(default)]
    search: RawSearch,
    #[serde(default)]
    sim: RawSim,
    #[serde(default)]
    sweep: RawSweep,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    #[serde(rename = "L_tot_km")]
    l_tot_km: Option<f64>,
    #[serde(rename = "L_att_km")]
    l_att_km: Option<f64>,
    eta0: Option<f64>,
    v_km_s: Option<f64>,
    #[serde(rename = "t_HEG_s")]
    t_heg_s: Option<f64>,
    t_swap_s: Option<f64>,
    t_pur_s: Option<f64>,
    #[serde(rename = "T2_s")]
    t2_s: Option<f64>,
    eps: Option<f64>,
    eps_i: Option<f64>,
    #[serde(rename = "eps_TQG")]
    eps_tqg: Option<f64>,
    eps_m: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlan {
    #[serde(rename = "N")]
    n: Option<u32>,
    #[serde(rename = "M")]
    m: Option<u32>,
    #[serde(rename = "P_E")]
    p_e: Option<u8>,
    #[serde(rename = "P_L")]
    p_l: Option<u8>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSearch {
    #[serde(rename = "N_min")]
    n_min: Option<u32>,
    #[serde(rename = "N_max")]
    n_max: Option<u32>,
    #[serde(rename = "M_min")]
    m_min: Option<u32>,
    #[serde(rename = "M_max")]
    m_max: Option<u32>,
    initial_mesh: Option<f64>,
    mesh_tolerance: Option<f64>,
    starts: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    seed: Option<u64>,
    sessions: Option<u64>,
    mode: Option<String>,
    #[serde(rename = "p_HEG")]
    p_heg: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    #[serde(default)]
    axes: Vec<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    path: Option<PathBuf>,
}

/// Session plan fields as given; a plan is only required by some commands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanSpec {
    pub n_links: u32,
    pub trials: u32,
    pub end_rounds: u8,
    pub link_rounds: u8,
}

impl Default for PlanSpec {
    fn default() -> Self {
        Self {
            n_links: 30,
            trials: 500,
            end_rounds: 0,
            link_rounds: 1,
        }
    }
}

impl PlanSpec {
    pub fn to_plan(&self) -> Result<SessionPlan, ConfigError> {
        SessionPlan::new(self.n_links, self.trials, self.end_rounds, self.link_rounds)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub seed: u64,
    pub sessions: u64,
    pub mode: TrackMode,
    pub heg_probability: Option<f64>,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            sessions: 100_000,
            mode: TrackMode::Probabilities,
            heg_probability: None,
        }
    }
}

/// Fully resolved configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub network: NetworkParams,
    pub plan: PlanSpec,
    pub search: SearchConfig,
    pub sim: SimSettings,
    pub sweep: Vec<SweepAxis>,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::load(text, &[])
    }

    /// Parses `text` (may be empty), applies `overrides` in order, and
    /// resolves defaults.
    pub fn load(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        // Deserializing the text directly keeps line numbers in schema errors.
        toml::from_str::<RawConfig>(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut table: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        if overrides.is_empty() {
            return Self::from_table(table);
        }
        for arg in overrides {
            let (path, value) = parse_override(arg)?;
            insert_path(&mut table, &path, value).map_err(|reason| ConfigError::Override {
                arg: arg.clone(),
                reason,
            })?;
        }
        Self::from_table(table).map_err(|e| match e {
            ConfigError::Parse(msg) => ConfigError::Parse(format!("with --set overrides: {msg}")),
            other => other,
        })
    }

    fn from_table(table: Table) -> Result<Self, ConfigError> {
        let raw: RawConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let defaults = NetworkParams::default();
        let n = &raw.network;
        let mut network = NetworkParams {
            l_tot_km: n.l_tot_km.unwrap_or(defaults.l_tot_km),
            l_att_km: n.l_att_km.unwrap_or(defaults.l_att_km),
            eta0: n.eta0.unwrap_or(defaults.eta0),
            v_km_s: n.v_km_s.unwrap_or(defaults.v_km_s),
            t_heg_s: n.t_heg_s.unwrap_or(defaults.t_heg_s),
            t_swap_s: n.t_swap_s.unwrap_or(defaults.t_swap_s),
            t_pur_s: n.t_pur_s.unwrap_or(defaults.t_pur_s),
            t2_s: n.t2_s.unwrap_or(defaults.t2_s),
            ..defaults
        };
        if let Some(eps) = n.eps {
            network = network.with_tied_error(eps);
        }
        network.eps_init = n.eps_i.unwrap_or(network.eps_init);
        network.eps_gate = n.eps_tqg.unwrap_or(network.eps_gate);
        network.eps_meas = n.eps_m.unwrap_or(network.eps_meas);
        network
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let pd = PlanSpec::default();
        let plan = PlanSpec {
            n_links: raw.plan.n.unwrap_or(pd.n_links),
            trials: raw.plan.m.unwrap_or(pd.trials),
            end_rounds: raw.plan.p_e.unwrap_or(pd.end_rounds),
            link_rounds: raw.plan.p_l.unwrap_or(pd.link_rounds),
        };

        let sd = SearchConfig::default();
        let s = &raw.search;
        let search = SearchConfig {
            n_bounds: (s.n_min.unwrap_or(sd.n_bounds.0), s.n_max.unwrap_or(sd.n_bounds.1)),
            m_bounds: (s.m_min.unwrap_or(sd.m_bounds.0), s.m_max.unwrap_or(sd.m_bounds.1)),
            initial_mesh: s.initial_mesh.unwrap_or(sd.initial_mesh),
            mesh_tolerance: s.mesh_tolerance.unwrap_or(sd.mesh_tolerance),
            starts: s.starts.unwrap_or(sd.starts),
            ..sd
        };
        search
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let simd = SimSettings::default();
        let mode = match raw.sim.mode.as_deref() {
            None | Some("probabilities") => TrackMode::Probabilities,
            Some("trajectories") => TrackMode::Trajectories,
            Some(other) => {
                return Err(ConfigError::Invalid(format!(
                    "sim.mode must be `probabilities` or `trajectories`, got `{other}`"
                )))
            }
        };
        if let Some(p) = raw.sim.p_heg {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Invalid(format!("sim.p_HEG = {p} is not a probability")));
            }
        }
        let sim = SimSettings {
            seed: raw.sim.seed.unwrap_or(simd.seed),
            sessions: raw.sim.sessions.unwrap_or(simd.sessions),
            mode,
            heg_probability: raw.sim.p_heg,
        };
        if sim.sessions == 0 {
            return Err(ConfigError::Invalid("sim.sessions must be positive".into()));
        }

        let sweep = raw
            .sweep
            .axes
            .iter()
            .map(|s| parse_axis_spec(s))
            .collect::<Result<Vec<_>, _>>()?;

        Ok(Self {
            network,
            plan,
            search,
            sim,
            sweep,
            output: raw.output.path,
        })
    }

    /// `# key = value` lines describing the resolved configuration.
    pub fn header_lines(&self) -> Vec<String> {
        let n = &self.network;
        let mut out = Vec::new();
        let mut push = |k: &str, v: String| out.push(format!("# {k} = {v}"));
        push("network.L_tot_km", n.l_tot_km.to_string());
        push("network.L_att_km", n.l_att_km.to_string());
        push("network.eta0", n.eta0.to_string());
        push("network.v_km_s", n.v_km_s.to_string());
        push("network.t_HEG_s", n.t_heg_s.to_string());
        push("network.t_swap_s", n.t_swap_s.to_string());
        push("network.t_pur_s", n.t_pur_s.to_string());
        push("network.T2_s", n.t2_s.to_string());
        push("network.eps_i", n.eps_init.to_string());
        push("network.eps_TQG", n.eps_gate.to_string());
        push("network.eps_m", n.eps_meas.to_string());
        let p = &self.plan;
        push("plan.N", p.n_links.to_string());
        push("plan.M", p.trials.to_string());
        push("plan.P_E", p.end_rounds.to_string());
        push("plan.P_L", p.link_rounds.to_string());
        let s = &self.search;
        push("search.N_min", s.n_bounds.0.to_string());
        push("search.N_max", s.n_bounds.1.to_string());
        push("search.M_min", s.m_bounds.0.to_string());
        push("search.M_max", s.m_bounds.1.to_string());
        push("search.initial_mesh", s.initial_mesh.to_string());
        push("search.mesh_tolerance", s.mesh_tolerance.to_string());
        push("search.starts", s.starts.to_string());
        push("sim.seed", self.sim.seed.to_string());
        push("sim.sessions", self.sim.sessions.to_string());
        push(
            "sim.mode",
            match self.sim.mode {
                TrackMode::Probabilities => "probabilities".into(),
                TrackMode::Trajectories => "trajectories".into(),
            },
        );
        push(
            "sim.p_HEG",
            self.sim
                .heg_probability
                .map_or_else(|| "model".into(), |p| p.to_string()),
        );
        for axis in &self.sweep {
            push("sweep.axis", format_axis(axis));
        }
        out
    }
}

fn format_axis(axis: &SweepAxis) -> String {
    let mut s = format!("{}=", axis.parameter.name());
    for (i, v) in axis.values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v}");
    }
    s
}

/// Splits `section.key=value` into the key path and a TOML value. Values
/// that do not parse as TOML are taken as bare strings.
pub fn parse_override(arg: &str) -> Result<(Vec<String>, Value), ConfigError> {
    let err = |reason: &str| ConfigError::Override {
        arg: arg.to_string(),
        reason: reason.to_string(),
    };
    let (key, raw) = arg.split_once('=').ok_or_else(|| err("expected KEY=VALUE"))?;
    let path: Vec<String> = key.trim().split('.').map(|p| p.trim().to_string()).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(err("empty key segment"));
    }
    let raw = raw.trim();
    if raw.is_empty() {
        return Err(err("empty value"));
    }
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((path, value))
}

fn insert_path(table: &mut Table, path: &[String], value: Value) -> Result<(), String> {
    let (last, parents) = path.split_last().expect("path is non-empty");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| format!("`{p}` is not a section"))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Parses `NAME=SPEC` where SPEC is a comma list of numbers, `lin:a:b:n`
/// or `log:a:b:n`.
pub fn parse_axis_spec(spec: &str) -> Result<SweepAxis, ConfigError> {
    let err = |reason: String| ConfigError::Axis {
        spec: spec.to_string(),
        reason,
    };
    let (name, body) = spec
        .split_once('=')
        .ok_or_else(|| err("expected NAME=VALUES".into()))?;
    let parameter = SweepParameter::from_name(name.trim()).ok_or_else(|| {
        let names: Vec<_> = SweepParameter::ALL.iter().map(|p| p.name()).collect();
        err(format!("unknown axis, expected one of {}", names.join(", ")))
    })?;
    let body = body.trim();
    let number = |s: &str| -> Result<f64, ConfigError> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| err(format!("`{}` is not a number", s.trim())))
    };
    let values = if let Some(range) = body.strip_prefix("lin:").or_else(|| body.strip_prefix("log:")) {
        let parts: Vec<&str> = range.split(':').collect();
        let [a, b, n] = parts[..] else {
            return Err(err("ranges take the form lin:a:b:n or log:a:b:n".into()));
        };
        let (a, b) = (number(a)?, number(b)?);
        let n: usize = n
            .trim()
            .parse()
            .map_err(|_| err(format!("`{}` is not a point count", n.trim())))?;
        if n == 0 || n > MAX_AXIS_POINTS {
            return Err(err(format!("point count must be in 1..={MAX_AXIS_POINTS}")));
        }
        let log = body.starts_with("log:");
        if log && !(a > 0.0 && b > 0.0) {
            return Err(err("log ranges need positive ends".into()));
        }
        let (lo, hi) = if log { (a.ln(), b.ln()) } else { (a, b) };
        (0..n)
            .map(|i| {
                let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
                let x = lo + (hi - lo) * t;
                if log {
                    x.exp()
                } else {
                    x
                }
            })
            .collect()
    } else {
        body.split(',').map(number).collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite() && *v != f64::INFINITY) {
        return Err(err("values must be numbers".into()));
    }
    for &v in &values {
        let mut probe = NetworkParams::default();
        parameter.apply(&mut probe, v);
        probe
            .validate()
            .map_err(|e| err(e.to_string()))?;
    }
    Ok(SweepAxis { parameter, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c.network, NetworkParams::default());
        assert_eq!(c.search, SearchConfig::default());
        assert!(c.sweep.is_empty());
    }

    #[test]
    fn keys_and_tied_error() {
        let c = RunConfig::from_toml_str(
            "[network]\neps = 2e-3\neps_m = 5e-3\nT2_s = inf\nL_tot_km = 500\n[plan]\nN = 4\nP_E = 2\n",
        )
        .unwrap();
        assert_eq!(c.network.eps_init, 2e-3);
        assert_eq!(c.network.eps_gate, 2e-3);
        assert_eq!(c.network.eps_meas, 5e-3);
        assert!(c.network.t2_s.is_infinite());
        assert_eq!(c.network.l_tot_km, 500.0);
        assert_eq!((c.plan.n_links, c.plan.end_rounds), (4, 2));
    }

    #[test]
    fn unknown_keys_rejected_with_location() {
        let e = RunConfig::from_toml_str("[network]\netaa0 = 0.3\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("etaa0"), "{msg}");
        let e = RunConfig::from_toml_str("[plan]\nN = 3\nM_max = 4\n").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        let e = RunConfig::from_toml_str("[network]\neta0 = \n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        assert!(RunConfig::from_toml_str("[nope]\n").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml_str("[network]\neta0 = 1.5\n").is_err());
        assert!(RunConfig::from_toml_str("[sim]\nmode = \"fast\"\n").is_err());
        assert!(RunConfig::from_toml_str("[search]\nN_min = 0\n").is_err());
    }

    #[test]
    fn overrides_apply_in_order() {
        let c = RunConfig::load(
            "[network]\neta0 = 0.3\n",
            &[
                "network.eta0=0.8".into(),
                "plan.M=42".into(),
                "sim.mode=trajectories".into(),
                "network.T2_s=inf".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.network.eta0, 0.8);
        assert_eq!(c.plan.trials, 42);
        assert_eq!(c.sim.mode, TrackMode::Trajectories);
        assert!(c.network.t2_s.is_infinite());
        assert!(RunConfig::load("", &["network.bogus=1".into()]).is_err());
        assert!(RunConfig::load("", &["novalue".into()]).is_err());
        assert!(RunConfig::load("", &["network.eta0.x=1".into()]).is_err());
    }

    #[test]
    fn axis_specs() {
        let a = parse_axis_spec("eta0=0.1,0.4,0.8").unwrap();
        assert_eq!(a.parameter, SweepParameter::Eta0);
        assert_eq!(a.values, vec![0.1, 0.4, 0.8]);
        let a = parse_axis_spec("eps=log:1e-4:1e-2:3").unwrap();
        assert!((a.values[1] - 1e-3).abs() < 1e-15);
        let a = parse_axis_spec("L_tot_km=lin:250:2000:8").unwrap();
        assert_eq!(a.values, (1..=8).map(|i| 250.0 * i as f64).collect::<Vec<_>>());
        assert_eq!(parse_axis_spec("T2_s=lin:1:1:1").unwrap().values, vec![1.0]);
        for bad in ["eta0", "foo=1", "eta0=", "eta0=1.5", "eps=log:0:1:3", "eps=lin:1:2", "eps=lin:1:2:0", "eta0=a,b"] {
            assert!(parse_axis_spec(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn header_echo_is_complete() {
        let c = RunConfig::load("", &["network.eps=1e-4".into()]).unwrap();
        let lines = c.header_lines();
        assert!(lines.iter().all(|l| l.starts_with("# ")));
        assert!(lines.contains(&"# network.eps_TQG = 0.0001".to_string()));
        assert!(lines.contains(&"# network.T2_s = 0.5".to_string()));
    }
}
