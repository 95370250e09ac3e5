use std::process::Command;

use platoon_noma::harness::{
    run, summarize, write_records, ChsMethod, OutputRecord, PaMethod, RunSpec, SolverSettings,
    RECORD_HEADER,
};
use platoon_noma::schemes::Scheme;

fn small_spec() -> RunSpec {
    RunSpec {
        scenario: "3lc-unicast".into(),
        zetas: vec![0.0, 0.1],
        snrs_db: vec![50.0, 30.0],
        qs: vec![6, 12],
        trials: 4,
        seed: 7,
        ..RunSpec::default()
    }
}

fn csv_bytes(records: &[OutputRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    write_records(records, &mut out).unwrap();
    out
}

#[test]
fn record_count_matches_sweep() {
    let spec = small_spec();
    let recs = run(&spec).unwrap();
    assert_eq!(recs.len(), 4 * 2 * 2 * 2 * 4);
    assert_eq!(recs.len(), spec.expected_records(3));
}

#[test]
fn runs_are_byte_reproducible() {
    let spec = small_spec();
    let a = csv_bytes(&run(&spec).unwrap());
    let b = csv_bytes(&run(&spec).unwrap());
    assert_eq!(a, b);
    let other = csv_bytes(
        &run(&RunSpec {
            seed: 8,
            ..small_spec()
        })
        .unwrap(),
    );
    assert_ne!(a, other);
}

#[test]
fn summary_means_are_record_means() {
    let recs = run(&small_spec()).unwrap();
    for s in summarize(&recs) {
        let sel: Vec<f64> = recs
            .iter()
            .filter(|r| {
                r.scheme == s.scheme && r.zeta == s.zeta && r.snr_db == s.snr_db && r.q == s.q
            })
            .map(|r| r.sum_rate_bps_hz)
            .collect();
        assert_eq!(sel.len(), s.trials);
        let mean = sel.iter().sum::<f64>() / sel.len() as f64;
        assert!((mean - s.mean_sum_rate).abs() < 1e-12);
    }
}

#[test]
fn every_method_combination_runs() {
    for pa in [
        PaMethod::Epa,
        PaMethod::Fpa,
        PaMethod::Gpa,
        PaMethod::Oracle,
    ] {
        for chs in [ChsMethod::Fixed, ChsMethod::Md, ChsMethod::ExhaustiveFpa] {
            let spec = RunSpec {
                scenario: "3lc-unicast".into(),
                schemes: vec![Scheme::Udm, Scheme::Oma],
                settings: SolverSettings {
                    pa,
                    chs,
                    ..SolverSettings::default()
                },
                zetas: vec![0.01],
                qs: vec![4],
                trials: 2,
                ..RunSpec::default()
            };
            let recs = run(&spec).unwrap();
            assert_eq!(recs.len(), 4);
            assert!(recs
                .iter()
                .all(|r| r.sum_rate_bps_hz.is_finite() && r.pa_method == pa));
        }
    }
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(run(&RunSpec {
        trials: 0,
        ..small_spec()
    })
    .is_err());
    assert!(run(&RunSpec {
        zetas: vec![1.5],
        ..small_spec()
    })
    .is_err());
    assert!(run(&RunSpec {
        qs: vec![0],
        ..small_spec()
    })
    .is_err());
    assert!(run(&RunSpec {
        scenario: "5lc-nothing".into(),
        ..small_spec()
    })
    .is_err());
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_platoon-noma"))
}

#[test]
fn cli_run_writes_records_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.csv");
    let status = cli()
        .args([
            "run",
            "--scenario",
            "3lc-unicast",
            "--scheme",
            "udm,oma",
            "--trials",
            "3",
            "--zeta",
            "0,0.1",
        ])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), RECORD_HEADER.join(","));
    assert_eq!(lines.count(), 3 * 2 * 2);
    let summary = std::fs::read_to_string(dir.path().join("run.summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4);
}

#[test]
fn cli_reads_scenario_files() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("two.toml");
    std::fs::write(
        &file,
        "lanes = [1, 2]\nvehicles_per_lc = 3\nmsg = [[0, 1], [1, 0]]\n",
    )
    .unwrap();
    let out = cli()
        .arg("run")
        .arg("--scenario")
        .arg(&file)
        .args(["--trials", "2"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        String::from_utf8(out.stdout).unwrap().lines().count(),
        1 + 4 * 3
    );
}

#[test]
fn cli_scfp_and_oracle_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.csv");
    let status = cli()
        .args(["scfp", "--agents", "6", "--seed", "3", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(std::fs::read_to_string(&out)
        .unwrap()
        .starts_with("time_s,event,sender,receiver,payload"));
    let assignment = std::fs::read_to_string(dir.path().join("trace.assignment.csv")).unwrap();
    assert_eq!(assignment.lines().count(), 1 + 6);

    let out = cli()
        .args(["oracle-check", "--trials", "3", "--q", "4"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap().lines().count(),
        1 + 3
    );
}

#[test]
fn cli_reports_errors_with_nonzero_exit() {
    let out = cli()
        .args(["run", "--scenario", "nowhere"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = cli().args(["run", "--pa", "magic"]).output().unwrap();
    assert!(!out.status.success());
}
