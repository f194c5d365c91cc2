use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use kgranger_cli::Method;
use kgranger_eval::checks::{self, CheckOutcome};
use kgranger_eval::scm;
use kgranger_eval::targets::{headline_targets, large_system_targets};
use kgranger_eval::{acceptance, run_acceptance, EvalError, EvalResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Tier {
    /// Seconds-to-minutes sanity pass with tiny replicate counts.
    Smoke,
    /// Headline benchmark rows at 20 replicates plus every numerical check.
    Fast,
    /// 100 replicates, the large-system rows and full-size model recovery.
    Full,
}

#[derive(Parser)]
#[command(name = "acceptance", about = "Run the kgranger acceptance criteria")]
struct Args {
    /// Defaults to $KGRANGER_TIER, then `fast`.
    #[arg(long, value_enum)]
    tier: Option<Tier>,
    /// Comma-separated criterion numbers (1-8); all when omitted.
    #[arg(long, value_delimiter = ',')]
    criteria: Vec<u8>,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Replicates per benchmark target, overriding the tier.
    #[arg(long)]
    mc: Option<usize>,
    /// Replicates per structural model, overriding the tier.
    #[arg(long)]
    scm_mc: Option<usize>,
    /// Directory for CSV summaries.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Leave out the 20- and 30-series targets of the full tier.
    #[arg(long)]
    no_large_systems: bool,
}

struct Plan {
    benchmark_mc: usize,
    large_systems: bool,
    identity_instances: usize,
    gradient_points: usize,
    nystrom_instances: usize,
    f_replicates: usize,
    pipeline_mc: usize,
    scm_n: usize,
    scm_mc: usize,
    golden_n: usize,
    golden_replicates: usize,
}

impl Plan {
    fn for_tier(tier: Tier) -> Self {
        match tier {
            Tier::Smoke => Plan {
                benchmark_mc: 2,
                large_systems: false,
                identity_instances: 10,
                gradient_points: 4,
                nystrom_instances: 5,
                f_replicates: 1000,
                pipeline_mc: 20,
                scm_n: 300,
                scm_mc: 2,
                golden_n: 300,
                golden_replicates: 1,
            },
            Tier::Fast => Plan {
                benchmark_mc: 20,
                large_systems: false,
                identity_instances: 50,
                gradient_points: 20,
                nystrom_instances: 20,
                f_replicates: 10_000,
                pipeline_mc: 200,
                scm_n: 500,
                scm_mc: 5,
                golden_n: 500,
                golden_replicates: 5,
            },
            Tier::Full => Plan {
                benchmark_mc: 100,
                large_systems: true,
                identity_instances: 50,
                gradient_points: 20,
                nystrom_instances: 20,
                f_replicates: 10_000,
                pipeline_mc: 200,
                scm_n: 1000,
                scm_mc: 100,
                golden_n: 500,
                golden_replicates: 5,
            },
        }
    }
}

fn tier_from_env() -> Option<Tier> {
    let value = std::env::var("KGRANGER_TIER").ok()?;
    Tier::from_str(&value, true).ok()
}

fn io_error(path: &Path, source: std::io::Error) -> EvalError {
    EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn create(path: &Path) -> EvalResult<std::fs::File> {
    std::fs::File::create(path).map_err(|e| io_error(path, e))
}

fn benchmark_checks(plan: &Plan, seed: u64, out: Option<&Path>) -> EvalResult<Vec<CheckOutcome>> {
    let started = Instant::now();
    let mut targets = headline_targets();
    if plan.large_systems {
        targets.extend(large_system_targets());
    }
    let report = run_acceptance(&targets, plan.benchmark_mc, seed)?;
    if let Some(dir) = out {
        acceptance::write_summary_csv(&report, create(&dir.join("benchmark_summary.csv"))?)?;
        acceptance::write_table_csv(&report, create(&dir.join("benchmark_table.csv"))?)?;
    }
    Ok(report
        .outcomes
        .iter()
        .map(|o| {
            let t = &o.target;
            let flag = o.flag.as_deref().map(|f| format!(" [{f}]")).unwrap_or_default();
            CheckOutcome {
                criterion: 1,
                name: t.label(),
                passed: o.passed,
                detail: format!(
                    "{}: mean F1 {:.3} (sd {:.3}) vs {:.2} ± {:.2}, {} runs, seed {}{flag}",
                    t.table_row, o.observed_mean, o.observed_sd, t.expected_mean, t.tolerance, o.mc_runs, o.seed
                ),
                seconds: o.seconds,
            }
        })
        .chain(std::iter::once(CheckOutcome {
            criterion: 1,
            name: "benchmark wall time".into(),
            passed: true,
            detail: format!("{:.0}s", started.elapsed().as_secs_f64()),
            seconds: started.elapsed().as_secs_f64(),
        }))
        .collect())
}

fn fit_count_check(n_t: usize, expected: usize, seed: u64) -> EvalResult<CheckOutcome> {
    let started = Instant::now();
    let fits = checks::contemporaneous_fit_count(n_t, 120, seed)?;
    Ok(CheckOutcome {
        criterion: 8,
        name: format!("fit count at {n_t} series"),
        passed: fits == expected,
        detail: format!("{fits} GP fits (expected {expected})"),
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn run_criterion(criterion: u8, plan: &Plan, seed: u64, out: Option<&Path>) -> EvalResult<Vec<CheckOutcome>> {
    Ok(match criterion {
        1 => benchmark_checks(plan, seed, out)?,
        2 => vec![checks::principal_component_equivalence(plan.identity_instances, seed)?],
        3 => vec![checks::radial_basis_equivalence(plan.identity_instances, seed)?],
        4 => vec![checks::gradient_accuracy(plan.gradient_points, seed)?],
        5 => vec![checks::nystrom_exactness(plan.nystrom_instances, seed)?],
        6 => {
            let mut v = vec![checks::f_test_calibration(plan.f_replicates, 250, 2, seed)?];
            for method in [Method::Kgc, Method::Kpcr, Method::Lsngc] {
                v.push(checks::pipeline_calibration(method, plan.pipeline_mc, 250, seed)?);
            }
            v
        }
        7 => {
            let mut v = Vec::new();
            for model in [scm::chain_four(), scm::diamond_five()] {
                v.push(scm::model_recovery(&model, plan.scm_n, plan.scm_mc, seed)?);
            }
            for golden in [scm::golden_collider(), scm::golden_chain(), scm::golden_no_contemp_collider()] {
                v.push(scm::golden_recovery(&golden, plan.golden_n, plan.golden_replicates, seed)?);
            }
            v
        }
        8 => vec![fit_count_check(5, 10, seed)?, fit_count_check(20, 40, seed)?],
        other => unreachable!("criterion {other} was validated"),
    })
}

fn write_checks_csv(results: &BTreeMap<u8, Vec<CheckOutcome>>, path: &Path) -> EvalResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["criterion", "check", "passed", "seconds", "detail"])?;
    for outcome in results.values().flatten() {
        w.write_record([
            outcome.criterion.to_string(),
            outcome.name.clone(),
            outcome.passed.to_string(),
            format!("{:.1}", outcome.seconds),
            outcome.detail.clone(),
        ])?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let tier = args.tier.or_else(tier_from_env).unwrap_or(Tier::Fast);
    let mut plan = Plan::for_tier(tier);
    plan.large_systems &= !args.no_large_systems;
    if let Some(mc) = args.mc {
        plan.benchmark_mc = mc;
    }
    if let Some(mc) = args.scm_mc {
        plan.scm_mc = mc;
    }
    let criteria: Vec<u8> = if args.criteria.is_empty() { (1..=8).collect() } else { args.criteria.clone() };
    if let Some(bad) = criteria.iter().find(|c| !(1..=8).contains(*c)) {
        eprintln!("error: unknown criterion {bad}; expected 1-8");
        return ExitCode::from(2);
    }
    if let Some(dir) = &args.out {
        if let Err(e) = std::fs::create_dir_all(dir) {
            eprintln!("error: {}: {e}", dir.display());
            return ExitCode::from(2);
        }
    }
    println!("tier {tier:?}, seed {}", args.seed);

    let mut results = BTreeMap::new();
    let mut all_passed = true;
    for &criterion in &criteria {
        let started = Instant::now();
        let outcomes = match run_criterion(criterion, &plan, args.seed, args.out.as_deref()) {
            Ok(o) => o,
            Err(e) => {
                println!("criterion {criterion}: FAIL (error: {e})");
                all_passed = false;
                continue;
            }
        };
        let passed = outcomes.iter().all(|o| o.passed);
        all_passed &= passed;
        let failed = outcomes.iter().filter(|o| !o.passed).count();
        println!(
            "criterion {criterion}: {} ({} checks, {failed} failed, {:.0}s)",
            if passed { "PASS" } else { "FAIL" },
            outcomes.len(),
            started.elapsed().as_secs_f64()
        );
        for o in &outcomes {
            println!("    [{}] {}: {}", if o.passed { "ok" } else { "FAIL" }, o.name, o.detail);
        }
        results.insert(criterion, outcomes);
    }
    if let Some(dir) = &args.out {
        if let Err(e) = write_checks_csv(&results, &dir.join("checks.csv")) {
            eprintln!("error: {e}");
        }
    }
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
