//! `qrepeater`: evaluate, optimize, sweep and validate repeater protocols.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 numerical
//! failure.

mod output;

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qrepeater::config::{parse_axis_spec, RunConfig};
use qrepeater::monte_carlo::{simulate_sessions, SimConfig};
use qrepeater::network_model::{plob_bound, qubits_per_node};
use qrepeater::optimizer::{grid_points, optimize_protocol, sweep, SweepAxis, SweepParameter};
use qrepeater::pipeline::{evaluate_with_options, EvalOptions};
use qrepeater::{ModelError, NetworkParams, RateReport};

use output::{num, open, rate_row, validate_rows, write_header, RATE_COLUMNS, VALIDATE_COLUMNS};

#[derive(Parser)]
#[command(name = "qrepeater", version, about = "Quantum repeater chain rate and key model")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one key, e.g. `network.eta0=0.8` or `plan.P_L=0`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output file; defaults to `output.path`, then stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Monte Carlo seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, value_name = "COUNT")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Report the configured plan: rates, Bell vector, qubits, error budget.
    Evaluate,
    /// Optimize N, M and the protocol at the configured parameters.
    Optimize {
        /// Emit the best plan of every protocol instead of the overall best.
        #[arg(long)]
        per_protocol: bool,
    },
    /// Optimize every point of a parameter grid.
    Sweep {
        /// `NAME=a,b,c`, `NAME=lin:a:b:n` or `NAME=log:a:b:n`; replaces the
        /// axes of `[sweep]`. The first axis varies slowest.
        #[arg(long = "axis", value_name = "SPEC")]
        axes: Vec<String>,
    },
    /// Compare the analytic model with Monte Carlo for the configured plan.
    Validate,
    /// Repeaterless bound over distance, optionally against the optimized rate.
    Plob {
        /// Distances as an `L_tot_km` axis spec; defaults to the configured length.
        #[arg(long = "axis", value_name = "SPEC")]
        axes: Vec<String>,
        /// Source repetition rate in Hz.
        #[arg(long, default_value_t = 1e9)]
        rate_hz: f64,
        /// Also optimize each distance and report its key rate.
        #[arg(long)]
        with_skr: bool,
    },
}

enum Failure {
    Config(String),
    Numerical(String),
    Io(io::Error),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.into())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Numerical(e.to_string())
    }
}

impl From<qrepeater::config::ConfigError> for Failure {
    fn from(e: qrepeater::config::ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = &cli.common;
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    let text = match &c.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut cfg = RunConfig::load(&text, &c.overrides).map_err(|e| match &c.config {
        Some(path) => Failure::Config(format!("{}: {e}", path.display())),
        None => e.into(),
    })?;
    if let Some(seed) = c.seed {
        cfg.sim.seed = seed;
    }
    let out_path = c.out.clone().or_else(|| cfg.output.clone());

    match cli.command {
        Command::Evaluate => evaluate(&cfg, out_path),
        Command::Optimize { per_protocol } => optimize(&cfg, out_path, per_protocol),
        Command::Sweep { axes } => {
            if !axes.is_empty() {
                cfg.sweep = parse_axes(&axes)?;
            }
            run_sweep(&cfg, out_path)
        }
        Command::Validate => validate(&cfg, out_path),
        Command::Plob {
            axes,
            rate_hz,
            with_skr,
        } => plob(&cfg, out_path, &axes, rate_hz, with_skr),
    }
}

fn parse_axes(specs: &[String]) -> Result<Vec<SweepAxis>, Failure> {
    specs
        .iter()
        .map(|s| parse_axis_spec(s).map_err(Failure::from))
        .collect()
}

fn evaluate(cfg: &RunConfig, out_path: Option<PathBuf>) -> Result<(), Failure> {
    let plan = cfg.plan.to_plan()?;
    let options = EvalOptions {
        heg_probability: cfg.sim.heg_probability,
        ..EvalOptions::default()
    };
    let params = cfg.network;
    let r = evaluate_with_options(&params, &plan, &options)?;
    let q = qubits_per_node(&params, &plan, r.l0_km);

    let mut s = String::new();
    let kv = |s: &mut String, k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv(&mut s, "L0_km", num(r.l0_km));
    kv(&mut s, "eta", num(r.eta));
    kv(&mut s, "p_HEG", num(r.p_heg));
    kv(&mut s, "p_session", num(r.p_session));
    kv(&mut s, "p_link_pur", num(r.p_link_pur));
    kv(&mut s, "p_EPR", num(r.p_epr));
    kv(&mut s, "t_session_s", num(r.t_session_s));
    kv(&mut s, "t_EPR_s", num(r.t_epr_s));
    kv(&mut s, "R_Hz", num(r.rate_hz));
    kv(&mut s, "e_X", num(r.e_x));
    kv(&mut s, "e_Z", num(r.e_z));
    kv(&mut s, "r_inf", num(r.r_inf));
    kv(&mut s, "SKR_Hz", num(r.skr_hz));
    let b = r.bell.coeffs();
    kv(
        &mut s,
        "bell_ABCD",
        b.iter().map(|x| num(*x)).collect::<Vec<_>>().join(" "),
    );
    for (i, p) in r.end_purification_success.iter().enumerate() {
        kv(&mut s, &format!("p_end_pur_{}", i + 1), num(*p));
    }
    kv(&mut s, "qubits_inner_node", q.inner.to_string());
    kv(&mut s, "qubits_end_node", q.end.to_string());

    // Error budget: drop in e_X + e_Z when one source is switched off.
    let total = r.e_x + r.e_z;
    let sources: [(&str, fn(&mut NetworkParams)); 4] = [
        ("eps_i", |p| p.eps_init = 0.0),
        ("eps_TQG", |p| p.eps_gate = 0.0),
        ("eps_m", |p| p.eps_meas = 0.0),
        ("T2_s", |p| p.t2_s = f64::INFINITY),
    ];
    let mut attributed = 0.0;
    for (name, zero) in sources {
        let mut p = params;
        zero(&mut p);
        let without = evaluate_with_options(&p, &plan, &options)?;
        let share = total - (without.e_x + without.e_z);
        attributed += share;
        kv(&mut s, &format!("error_from_{name}"), num(share));
    }
    kv(&mut s, "error_total", num(total));
    kv(&mut s, "error_attributed", num(attributed));

    let mut out = open(out_path.as_deref())?;
    write_header(&mut out, "evaluate", &cfg.header_lines())?;
    out.write_all(s.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn optimize(cfg: &RunConfig, out_path: Option<PathBuf>, per_protocol: bool) -> Result<(), Failure> {
    let result = optimize_protocol(&cfg.network, &cfg.search)?;
    let mut out = open(out_path.as_deref())?;
    write_header(&mut out, "optimize", &cfg.header_lines())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RATE_COLUMNS)?;
    if per_protocol {
        for p in &result.per_protocol {
            w.write_record(rate_row(&cfg.network, &p.report))?;
        }
    } else {
        w.write_record(rate_row(&cfg.network, &result.best))?;
    }
    w.flush()?;
    Ok(())
}

fn checked_grid(cfg: &RunConfig) -> Result<Vec<NetworkParams>, Failure> {
    let points = grid_points(&cfg.network, &cfg.sweep);
    for p in &points {
        p.validate()
            .map_err(|e| Failure::Config(format!("grid point rejected: {e}")))?;
    }
    Ok(points)
}

fn run_sweep(cfg: &RunConfig, out_path: Option<PathBuf>) -> Result<(), Failure> {
    let points = checked_grid(cfg)?;
    let mut out = open(out_path.as_deref())?;
    write_header(&mut out, "sweep", &cfg.header_lines())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RATE_COLUMNS)?;
    w.flush()?;
    // Rows are flushed chunk by chunk so an interrupted sweep keeps its
    // finished points.
    let chunk = 2 * rayon::current_num_threads();
    for batch in points.chunks(chunk) {
        for (p, result) in batch.iter().zip(sweep(batch, &cfg.search)) {
            w.write_record(rate_row(p, &result?.best))?;
        }
        w.flush()?;
    }
    Ok(())
}

fn validate(cfg: &RunConfig, out_path: Option<PathBuf>) -> Result<(), Failure> {
    let plan = cfg.plan.to_plan()?;
    let sim_cfg = SimConfig {
        seed: cfg.sim.seed,
        n_sessions: cfg.sim.sessions,
        params: cfg.network,
        plan,
        mode: cfg.sim.mode,
        heg_probability: cfg.sim.heg_probability,
    };
    let sim = simulate_sessions(&sim_cfg)?;
    let analytic: RateReport = evaluate_with_options(
        &cfg.network,
        &plan,
        &EvalOptions {
            heg_probability: Some(sim.p_heg),
            ..EvalOptions::default()
        },
    )?;
    let rows = validate_rows(&sim, &analytic);
    let failed = rows.iter().filter(|r| r[10] == "false").count();

    let mut out = open(out_path.as_deref())?;
    write_header(&mut out, "validate", &cfg.header_lines())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(VALIDATE_COLUMNS)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    if failed > 0 {
        eprintln!("{failed} quantities outside tolerance");
    }
    Ok(())
}

fn plob(
    cfg: &RunConfig,
    out_path: Option<PathBuf>,
    specs: &[String],
    rate_hz: f64,
    with_skr: bool,
) -> Result<(), Failure> {
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(Failure::Config(format!("--rate-hz must be positive, got {rate_hz}")));
    }
    let axes = if specs.is_empty() {
        cfg.sweep.clone()
    } else {
        parse_axes(specs)?
    };
    let lengths = match axes.as_slice() {
        [] => vec![cfg.network.l_tot_km],
        [a] if a.parameter == SweepParameter::LTot => a.values.clone(),
        _ => {
            return Err(Failure::Config(
                "plob takes a single L_tot_km axis".into(),
            ))
        }
    };
    let points = grid_points(
        &cfg.network,
        &[SweepAxis {
            parameter: SweepParameter::LTot,
            values: lengths,
        }],
    );
    for p in &points {
        p.validate()
            .map_err(|e| Failure::Config(format!("grid point rejected: {e}")))?;
    }
    let skr = if with_skr {
        sweep(&points, &cfg.search)
            .into_iter()
            .map(|r| r.map(|o| Some(o.best)))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        vec![None; points.len()]
    };

    let mut out = open(out_path.as_deref())?;
    let mut header = cfg.header_lines();
    header.push(format!("# plob.rate_Hz = {rate_hz}"));
    write_header(&mut out, "plob", &header)?;
    let mut w = csv::Writer::from_writer(out);
    let mut cols = vec!["L_tot_km", "rate_Hz", "PLOB_Hz"];
    if with_skr {
        cols.extend(["P_E", "P_L", "N", "M", "SKR_Hz"]);
    }
    w.write_record(&cols)?;
    for (p, best) in points.iter().zip(skr) {
        let mut row = vec![
            num(p.l_tot_km),
            num(rate_hz),
            num(plob_bound(p.l_tot_km, p.l_att_km, rate_hz)),
        ];
        if let Some(b) = best {
            row.extend([
                b.plan.end_rounds().to_string(),
                b.plan.link_rounds().to_string(),
                b.plan.n_links.to_string(),
                b.plan.trials.to_string(),
                num(b.skr_hz),
            ]);
        }
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}
