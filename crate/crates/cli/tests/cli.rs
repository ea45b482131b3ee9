use std::collections::HashMap;
use std::process::{Command, Output};

fn qrepeater(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrepeater"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn key_values(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn f(map: &HashMap<String, String>, k: &str) -> f64 {
    map[k].parse().unwrap()
}

/// Header names and data rows of a CSV document with `#` comment lines.
fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

#[test]
fn evaluate_report_is_well_formed() {
    let text = stdout(&qrepeater(&["evaluate", "--set", "plan.N=30", "--set", "plan.M=500"]));
    assert!(text.starts_with("# command = evaluate\n"));
    assert!(text.contains("# network.eta0 = 0.4"));
    let kv = key_values(&text);
    assert!(f(&kv, "SKR_Hz") >= 0.0);
    assert_eq!(kv["bell_ABCD"].split(' ').count(), 4);
    assert_eq!(kv["qubits_inner_node"].parse::<u64>().unwrap(), 16);
    let total = f(&kv, "error_total");
    let attributed = f(&kv, "error_attributed");
    assert!((attributed - total).abs() <= 0.2 * total, "{attributed} vs {total}");
}

#[test]
fn error_free_hardware_reports_no_errors() {
    let kv = key_values(&stdout(&qrepeater(&[
        "evaluate",
        "--set",
        "network.eps=0",
        "--set",
        "network.T2_s=inf",
    ])));
    assert_eq!(f(&kv, "e_X"), 0.0);
    assert_eq!(f(&kv, "e_Z"), 0.0);
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "[network]\neta0 = 0.8\n[plan]\nN = 10\nM = 200\n").unwrap();
    let cfg = path.to_str().unwrap();
    let kv = key_values(&stdout(&qrepeater(&["evaluate", "--config", cfg, "--set", "plan.N=20"])));
    assert_eq!(f(&kv, "L0_km"), 50.0);
    let text = stdout(&qrepeater(&["evaluate", "--config", cfg]));
    assert!(text.contains("# network.eta0 = 0.8"));
    assert!(text.contains("# plan.N = 10"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[network]\neta0 = 0.4\nL_tot = 5\n").unwrap();
    let o = qrepeater(&["evaluate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("L_tot") && err.contains("line 3"), "{err}");

    assert_eq!(qrepeater(&["evaluate", "--set", "network.eta0=7"]).status.code(), Some(2));
    assert_eq!(qrepeater(&["evaluate", "--config", "/nonexistent.toml"]).status.code(), Some(2));
    assert_eq!(qrepeater(&["evaluate", "--set", "plan.P_L=3"]).status.code(), Some(2));
}

#[test]
fn malformed_axis_rejected_before_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = qrepeater(&[
        "sweep",
        "--axis",
        "eta0=0.2,0.4",
        "--axis",
        "T2_s=lin:1:2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn optimize_emits_fixed_columns() {
    let (header, rows) = csv_rows(&stdout(&qrepeater(&["optimize", "--per-protocol"])));
    assert_eq!(
        header.join(","),
        "eta0,eps,T2_s,L_tot_km,t_HEG_s,P_E,P_L,N,M,L0_km,p_HEG,p_EPR,t_EPR_s,R_Hz,e_X,e_Z,r_inf,SKR_Hz"
    );
    assert_eq!(rows.len(), 6);
    let (_, best) = csv_rows(&stdout(&qrepeater(&["optimize"])));
    let skr = column(&header, &rows, "SKR_Hz");
    let top = skr.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(column(&header, &best, "SKR_Hz")[0], top);
}

#[test]
fn distance_sweep_loses_rate_and_drops_error_at_protocol_switches() {
    let (header, rows) = csv_rows(&stdout(&qrepeater(&[
        "sweep",
        "--axis",
        "L_tot_km=lin:250:2000:8",
    ])));
    assert_eq!(rows.len(), 8);
    let skr = column(&header, &rows, "SKR_Hz");
    assert!(skr[0] > 10.0 * skr[7], "{skr:?}");
    let pe = column(&header, &rows, "P_E");
    let err: Vec<f64> = column(&header, &rows, "e_X")
        .iter()
        .zip(column(&header, &rows, "e_Z"))
        .map(|(x, z)| x + z)
        .collect();
    for i in 1..rows.len() {
        if pe[i] > pe[i - 1] {
            assert!(err[i] < err[i - 1], "P_E step at row {i}: {err:?}");
        }
    }
}

#[test]
fn validate_small_plan_passes() {
    let (header, rows) = csv_rows(&stdout(&qrepeater(&[
        "validate",
        "--set",
        "plan.N=2",
        "--set",
        "plan.M=20",
        "--set",
        "sim.p_HEG=0.3",
        "--seed",
        "7",
    ])));
    assert_eq!(header.last().unwrap(), "pass");
    assert_eq!(rows.len(), 5);
    for r in &rows {
        let z: f64 = r[9].parse().unwrap();
        assert!(z.abs() < 3.0, "{r:?}");
    }
}

#[test]
fn plob_matches_reference_point() {
    let (header, rows) = csv_rows(&stdout(&qrepeater(&["plob"])));
    let v = column(&header, &rows, "PLOB_Hz")[0];
    assert!((v - 2.6e-11).abs() < 0.05e-11, "{v}");
    let (header, rows) = csv_rows(&stdout(&qrepeater(&[
        "plob",
        "--axis",
        "L_tot_km=200,400",
        "--rate-hz",
        "25000",
        "--with-skr",
    ])));
    assert_eq!(rows.len(), 2);
    let skr = column(&header, &rows, "SKR_Hz");
    let bound = column(&header, &rows, "PLOB_Hz");
    assert!(skr[1] > bound[1]);
    assert_eq!(qrepeater(&["plob", "--axis", "eta0=0.3"]).status.code(), Some(2));
}

#[test]
fn output_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.csv");
    let printed = stdout(&qrepeater(&["plob", "--axis", "L_tot_km=100,500"]));
    stdout(&qrepeater(&["plob", "--axis", "L_tot_km=100,500", "--out", out.to_str().unwrap()]));
    assert_eq!(std::fs::read_to_string(out).unwrap(), printed);
}
