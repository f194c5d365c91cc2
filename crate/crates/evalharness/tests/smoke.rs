use std::process::Command;

use kgranger_cli::Method;
use kgranger_eval::acceptance::{write_summary_csv, write_table_csv, UNREALISTIC_TOLERANCE};
use kgranger_eval::checks;
use kgranger_eval::scm;
use kgranger_eval::{run_acceptance, AcceptanceTarget, EvalError};

#[test]
fn empty_target_list_is_rejected() {
    assert!(matches!(run_acceptance(&[], 5, 0), Err(EvalError::NoTargets)));
}

#[test]
fn targets_report_seeds_and_flags() {
    let targets = vec![
        AcceptanceTarget::new("mediator", Method::Kgc, 150, 0.99, 0.04),
        AcceptanceTarget::new("mediator", Method::Lsngc, 150, 0.98, 0.07).with_tolerance(0.0),
    ];
    let report = run_acceptance(&targets, 2, 7).unwrap();
    assert_eq!(report.outcomes.len(), 2);
    let zero = &report.outcomes[1];
    assert_eq!(zero.flag.as_deref(), Some(UNREALISTIC_TOLERANCE));
    assert!(!zero.passed);
    assert_eq!(zero.mc_runs, 2);
    assert_ne!(report.outcomes[0].seed, zero.seed);

    let again = run_acceptance(&targets[..1], 2, 7).unwrap();
    assert_eq!(again.outcomes[0].seed, report.outcomes[0].seed);
    assert_eq!(again.outcomes[0].observed_mean, report.outcomes[0].observed_mean);

    let mut summary = Vec::new();
    write_summary_csv(&report, &mut summary).unwrap();
    let summary = String::from_utf8(summary).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.contains(UNREALISTIC_TOLERANCE));

    let mut table = Vec::new();
    write_table_csv(&report, &mut table).unwrap();
    let table = String::from_utf8(table).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "Time Series System,gpsic,lsngc,kgc,kpcr");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("Mediator,,"));
}

#[test]
fn identity_checks_pass_on_small_batches() {
    for outcome in [
        checks::principal_component_equivalence(6, 1).unwrap(),
        checks::radial_basis_equivalence(6, 1).unwrap(),
        checks::gradient_accuracy(2, 1).unwrap(),
        checks::nystrom_exactness(4, 1).unwrap(),
    ] {
        assert!(outcome.passed, "{}: {}", outcome.name, outcome.detail);
    }
}

#[test]
fn f_test_is_calibrated() {
    let outcome = checks::f_test_calibration(2000, 120, 1, 3).unwrap();
    assert!(outcome.passed, "{}", outcome.detail);
}

#[test]
fn pair_levels_follow_each_correction() {
    assert_eq!(checks::pair_level(Method::Kgc, 2), 0.05);
    assert_eq!(checks::pair_level(Method::Kpcr, 2), 0.025);
    assert_eq!(checks::pair_level(Method::Lsngc, 3), 0.05 / 6.0);
}

#[test]
fn structural_models_simulate_their_truth() {
    let model = scm::diamond_five();
    let sys = model.simulate(200, 1).unwrap();
    assert_eq!(sys.n_series(), 5);
    let truth = model.truth();
    let perfect = scm::score_replicate(&truth, &truth).unwrap();
    assert_eq!(perfect.lagged_f1, 1.0);
    assert_eq!(perfect.adjacency_f1, 1.0);
    assert_eq!(perfect.oriented, perfect.correctly_oriented);
}

#[test]
fn binary_prints_one_line_per_criterion() {
    let out = Command::new(env!("CARGO_BIN_EXE_acceptance"))
        .args(["--tier", "smoke", "--criteria", "2,3,5"])
        .output()
        .unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    let verdicts: Vec<&str> = stdout.lines().filter(|l| l.starts_with("criterion ")).collect();
    assert_eq!(verdicts.len(), 3, "{stdout}");
    assert!(verdicts.iter().all(|l| l.contains(": PASS")), "{stdout}");
    assert!(out.status.success());

    let bad = Command::new(env!("CARGO_BIN_EXE_acceptance"))
        .args(["--criteria", "9"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
