use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kgranger::graph::CausalGraph;
use kgranger::simulate::{simulate, BenchmarkSpec, SystemId};
use kgranger::stats::{contemp_metrics, graph_metrics};
use kgranger_cli::export::{self, Format};
use kgranger_cli::{run_experiment, write_report, CliError, CliResult, ExperimentConfig, LagSetting, Method};

#[derive(Parser)]
#[command(name = "kgranger", version, about = "Nonlinear Granger-causality discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML file.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mc_runs: Option<usize>,
        #[arg(long, value_enum)]
        method: Option<Method>,
        /// Lag order, or "auto" for per-target selection (gpsic only).
        #[arg(long)]
        lag: Option<LagSetting>,
        /// Output directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a benchmark system and write `data.csv` and `truth.json`.
    Simulate {
        #[arg(long)]
        system: String,
        #[arg(long, default_value_t = 250)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        burn_in: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare an estimated graph with a truth graph.
    Score {
        #[arg(long)]
        estimated: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Also score same-step adjacencies and orientations.
        #[arg(long)]
        contemp: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a graph JSON file to another format.
    Export {
        graph: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Dot)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn emit(text: &str, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_graph(path: &Path) -> CliResult<CausalGraph> {
    Ok(CausalGraph::from_json(&read(path)?)?)
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Run {
            config,
            seed,
            mc_runs,
            method,
            lag,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = mc_runs {
                cfg.mc_runs = r;
            }
            if let Some(m) = method {
                cfg.method = m;
            }
            if lag.is_some() {
                cfg.m = lag;
            }
            if out.is_some() {
                cfg.output.dir = out;
            }
            let report = run_experiment(&cfg)?;
            match &report.config.output.dir {
                Some(dir) => {
                    write_report(&report, dir)?;
                    if let Some(f1) = report.f1 {
                        println!(
                            "{} runs={} f1_mean={:.4} f1_sd={:.4} f1_median={:.4}",
                            report.config.method, report.runs.len(), f1.mean, f1.sd, f1.median
                        );
                    }
                    println!("report written to {}", dir.display());
                }
                None => print!("{}", serde_json::to_string_pretty(&report)? + "\n"),
            }
            Ok(())
        }
        Command::Simulate {
            system,
            n,
            burn_in,
            seed,
            out,
        } => {
            let spec = BenchmarkSpec {
                burn_in,
                ..BenchmarkSpec::new(SystemId::from_name(&system)?, n, seed)
            };
            let sim = simulate(&spec)?;
            std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
            let data = out.join("data.csv");
            let file = std::fs::File::create(&data).map_err(|e| CliError::io(&data, e))?;
            sim.system.write_csv(std::io::BufWriter::new(file))?;
            emit(&sim.truth.to_json(), Some(&out.join("truth.json")))
        }
        Command::Score {
            estimated,
            truth,
            contemp,
            out,
        } => {
            let est = load_graph(&estimated)?;
            let truth = load_graph(&truth)?;
            if est.names() != truth.names() {
                return Err(CliError::Config("estimated and truth graphs list different nodes".into()));
            }
            let text = if contemp {
                serde_json::to_string_pretty(&contemp_metrics(&est, &truth)?)?
            } else {
                serde_json::to_string_pretty(&graph_metrics(&est, &truth)?)?
            };
            emit(&(text + "\n"), out.as_deref())
        }
        Command::Export { graph, format, out } => {
            let doc = export::from_json(&read(&graph)?)?;
            emit(&export::render(&doc, format)?, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
