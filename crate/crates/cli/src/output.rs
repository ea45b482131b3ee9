use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use qrepeater::monte_carlo::{Divergence, SimReport};
use qrepeater::{NetworkParams, RateReport};

pub const RATE_COLUMNS: [&str; 18] = [
    "eta0", "eps", "T2_s", "L_tot_km", "t_HEG_s", "P_E", "P_L", "N", "M", "L0_km", "p_HEG",
    "p_EPR", "t_EPR_s", "R_Hz", "e_X", "e_Z", "r_inf", "SKR_Hz",
];

pub const VALIDATE_COLUMNS: [&str; 11] = [
    "P_E", "P_L", "N", "M", "p_HEG", "quantity", "analytic", "simulated", "sigma", "z", "pass",
];

/// Nine significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn open(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn write_header(out: &mut dyn Write, command: &str, lines: &[String]) -> io::Result<()> {
    writeln!(out, "# command = {command}")?;
    for l in lines {
        writeln!(out, "{l}")?;
    }
    Ok(())
}

/// The `eps` column reports the two-qubit gate error.
pub fn rate_row(params: &NetworkParams, r: &RateReport) -> Vec<String> {
    vec![
        num(params.eta0),
        num(params.eps_gate),
        num(params.t2_s),
        num(params.l_tot_km),
        num(params.t_heg_s),
        r.plan.end_rounds().to_string(),
        r.plan.link_rounds().to_string(),
        r.plan.n_links.to_string(),
        r.plan.trials.to_string(),
        num(r.l0_km),
        num(r.p_heg),
        num(r.p_epr),
        num(r.t_epr_s),
        num(r.rate_hz),
        num(r.e_x),
        num(r.e_z),
        num(r.r_inf),
        num(r.skr_hz),
    ]
}

pub fn validate_rows(sim: &SimReport, analytic: &RateReport) -> Vec<Vec<String>> {
    let plan = analytic.plan;
    sim.compare(analytic)
        .iter()
        .map(|d: &Divergence| {
            vec![
                plan.end_rounds().to_string(),
                plan.link_rounds().to_string(),
                plan.n_links.to_string(),
                plan.trials.to_string(),
                num(sim.p_heg),
                d.quantity.to_string(),
                num(d.analytic),
                num(d.simulated),
                num(d.sigma),
                num(d.z),
                d.within_tolerance.to_string(),
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_width_mantissa() {
        assert_eq!(num(1000.0), "1.00000000e3");
        assert_eq!(num(2.6e-11), "2.60000000e-11");
        assert_eq!(num(0.0), "0.00000000e0");
        assert_eq!(num(f64::INFINITY), "inf");
    }
}
