//! Runs a configured experiment and collects per-replicate results.

use std::path::Path;
use std::time::Instant;

use kgranger::contemp::{contemp_graph, ContempConfig, OrientationTrace};
use kgranger::data::{load_csv, standardize, TimeSeriesSystem};
use kgranger::gpsic::{gp_baseline_graph, gpsic_graph, gpsic_target_parents, select_lag};
use kgranger::graph::{CausalGraph, GraphDocument};
use kgranger::kgc::kgc_graph;
use kgranger::kpcr::kpcr_graph;
use kgranger::lsngc::lsngc_graph;
use kgranger::seeding::derive_seed;
use kgranger::simulate::{simulate, BenchmarkSpec, Simulation};
use kgranger::stats::{contemp_metrics, graph_metrics, summarize, ContempMetrics, GraphMetrics};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, LagSetting, Method};
use crate::error::{CliError, CliResult};

/// Simulations are redrawn this many times when they diverge.
pub const MAX_SIMULATION_ATTEMPTS: u64 = 10;

/// Candidate lag ceiling for `m = "auto"` when `max_lag` is unset.
pub const DEFAULT_MAX_LAG: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let (mean, sd, median) = summarize(values);
        Some(Summary { mean, sd, median })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub replicate: usize,
    /// Seed of the simulated data set (benchmarks only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    pub method_seed: u64,
    /// Simulation draws needed to get a non-divergent series.
    pub attempts: u64,
    pub graph: GraphDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<GraphMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contemp_metrics: Option<ContempMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<OrientationTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gp_fits: Option<usize>,
    /// Lag chosen per target when the lag order is selected automatically.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_lags: Option<Vec<usize>>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    /// The configuration after defaults were filled in.
    pub config: ExperimentConfig,
    /// Summary-graph F1 across replicates, when a truth graph exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<Summary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency_f1: Option<Summary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation_precision: Option<Summary>,
    pub runs: Vec<RunRecord>,
}

struct MethodOutput {
    graph: CausalGraph,
    trace: Option<OrientationTrace>,
    gp_fits: Option<usize>,
    selected_lags: Option<Vec<usize>>,
}

/// Fills in defaults that depend on the data source. Benchmarks default
/// to the generating lag order.
pub fn resolve(config: &ExperimentConfig) -> CliResult<ExperimentConfig> {
    config.validate()?;
    let mut resolved = config.clone();
    if resolved.m.is_none() {
        if let Some(spec) = &config.source.benchmark {
            let probe = BenchmarkSpec { n: 10, ..spec.clone() };
            let m_true = simulate_with_retry(&probe)?.0.m_true;
            resolved.m = Some(LagSetting::Fixed(m_true));
        }
    }
    if matches!(resolved.m, Some(LagSetting::Auto)) && resolved.params.max_lag.is_none() {
        resolved.params.max_lag = Some(DEFAULT_MAX_LAG);
    }
    Ok(resolved)
}

fn simulate_with_retry(spec: &BenchmarkSpec) -> CliResult<(Simulation, u64, u64)> {
    let mut last = None;
    for attempt in 0..MAX_SIMULATION_ATTEMPTS {
        let seed = derive_seed(spec.seed, &[0, attempt]);
        match simulate(&BenchmarkSpec { seed, ..spec.clone() }) {
            Ok(sim) => return Ok((sim, seed, attempt + 1)),
            Err(e) if e.is_numerical() => {
                log::warn!("simulation with seed {seed} diverged, redrawing");
                last = Some(e);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Err(last.expect("at least one attempt").into())
}

fn dispatch(config: &ExperimentConfig, system: &TimeSeriesSystem, seed: u64) -> CliResult<MethodOutput> {
    let params = &config.params;
    let plain = |graph| MethodOutput {
        graph,
        trace: None,
        gp_fits: None,
        selected_lags: None,
    };
    let m = match config.m {
        Some(LagSetting::Fixed(m)) => m,
        Some(LagSetting::Auto) => {
            let cfg = params.gpsic()?;
            let max_lag = params.max_lag.unwrap_or(DEFAULT_MAX_LAG);
            let mut graph = CausalGraph::new(system.names().to_vec());
            let per_target: Vec<(usize, Vec<_>)> = (0..system.n_series())
                .into_par_iter()
                .map(|b| {
                    let s = derive_seed(seed, &[b as u64]);
                    let lag = select_lag(system, b, max_lag, &cfg, s)?;
                    Ok((lag, gpsic_target_parents(system, b, lag, &cfg, s)?))
                })
                .collect::<kgranger::Result<_>>()?;
            let mut lags = Vec::with_capacity(per_target.len());
            for (b, (lag, parents)) in per_target.into_iter().enumerate() {
                lags.push(lag);
                for p in parents.into_iter().filter(|p| p.series != b) {
                    graph.add_lagged(p.series, b, p.lag)?;
                }
            }
            return Ok(MethodOutput {
                graph,
                trace: None,
                gp_fits: None,
                selected_lags: Some(lags),
            });
        }
        None => return Err(CliError::config("lag order is unresolved")),
    };
    Ok(match config.method {
        Method::Kgc => plain(kgc_graph(system, m, &params.kgc())?),
        Method::Kpcr => plain(kpcr_graph(system, m, &params.kpcr(), seed)?),
        Method::Lsngc => plain(lsngc_graph(system, m, &params.lsngc(), seed)?),
        Method::Gpsic => plain(gpsic_graph(system, m, &params.gpsic()?, seed)?),
        Method::GpDelta => plain(gp_baseline_graph(system, m, &params.gpsic()?, seed, None)?),
        Method::GpGlrt => {
            let alpha = params.alpha.unwrap_or(0.05);
            plain(gp_baseline_graph(system, m, &params.gpsic()?, seed, Some(alpha))?)
        }
        Method::GpsicContemp => {
            let cfg = ContempConfig {
                gpsic: params.gpsic()?,
                propagate_to_fixpoint: !params.single_pass.unwrap_or(false),
            };
            let result = contemp_graph(system, m, &cfg, seed)?;
            MethodOutput {
                graph: result.graph,
                trace: Some(result.trace),
                gp_fits: Some(result.adjacencies.fits),
                selected_lags: None,
            }
        }
    })
}

fn run_once(config: &ExperimentConfig, replicate: usize) -> CliResult<RunRecord> {
    let rep_seed = derive_seed(config.seed, &[replicate as u64]);
    let method_seed = derive_seed(rep_seed, &[1]);
    let (system, truth, data_seed, attempts) = match (&config.source.benchmark, &config.source.csv) {
        (Some(spec), _) => {
            let spec = BenchmarkSpec {
                seed: derive_seed(rep_seed, &[0, spec.seed]),
                ..spec.clone()
            };
            let (sim, seed, attempts) = simulate_with_retry(&spec)?;
            (sim.system, Some(sim.truth), Some(seed), attempts)
        }
        (None, Some(path)) => {
            let system = load_csv(path, config.source.has_header)?;
            let truth = match &config.source.truth {
                Some(t) => {
                    let text = std::fs::read_to_string(t).map_err(|e| CliError::io(t, e))?;
                    Some(CausalGraph::from_json(&text)?)
                }
                None => None,
            };
            (system, truth, None, 1)
        }
        (None, None) => return Err(CliError::config("source needs a csv path or a benchmark")),
    };
    let system = standardize(&system)?;
    let start = Instant::now();
    let out = dispatch(config, &system, method_seed)?;
    let seconds = start.elapsed().as_secs_f64();

    let (metrics, contemp) = match &truth {
        Some(t) => {
            let t = align_truth(t, system.names())?;
            let contemp = if config.method == Method::GpsicContemp {
                Some(contemp_metrics(&out.graph, &t)?)
            } else {
                None
            };
            (Some(graph_metrics(&out.graph, &t)?), contemp)
        }
        None => (None, None),
    };
    log::info!(
        "replicate {replicate}: {:.2}s{}",
        seconds,
        metrics.map(|m| format!(", F1 {:.3}", m.f1)).unwrap_or_default()
    );
    Ok(RunRecord {
        replicate,
        data_seed,
        method_seed,
        attempts,
        graph: out.graph.to_document(),
        metrics,
        contemp_metrics: contemp,
        trace: out.trace,
        gp_fits: out.gp_fits,
        selected_lags: out.selected_lags,
        seconds,
    })
}

/// Re-indexes a truth graph so its nodes follow the data's column order.
fn align_truth(truth: &CausalGraph, names: &[String]) -> CliResult<CausalGraph> {
    if truth.names() == names {
        return Ok(truth.clone());
    }
    let mut doc = truth.to_document();
    let mut sorted_truth = doc.nodes.clone();
    let mut sorted_data = names.to_vec();
    sorted_truth.sort();
    sorted_data.sort();
    if sorted_truth != sorted_data {
        return Err(CliError::config("truth graph nodes do not match the data columns"));
    }
    doc.nodes = names.to_vec();
    Ok(CausalGraph::from_document(&doc)?)
}

/// Runs every replicate in parallel. Replicate `r` derives all of its
/// randomness from `(seed, r)`, so results do not depend on scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> CliResult<RunReport> {
    let config = resolve(config)?;
    let runs: Vec<RunRecord> = (0..config.mc_runs)
        .into_par_iter()
        .map(|r| run_once(&config, r))
        .collect::<CliResult<_>>()?;
    let f1: Vec<f64> = runs.iter().filter_map(|r| r.metrics.map(|m| m.f1)).collect();
    let adjacency: Vec<f64> = runs.iter().filter_map(|r| r.contemp_metrics.map(|m| m.adjacency.f1)).collect();
    let orientation: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.contemp_metrics.map(|m| m.orientation.precision))
        .collect();
    Ok(RunReport {
        f1: Summary::of(&f1),
        adjacency_f1: Summary::of(&adjacency),
        orientation_precision: Summary::of(&orientation),
        config,
        runs,
    })
}

/// Writes `report.json`, the resolved `config.toml` and one graph per
/// replicate under `graphs/`.
pub fn write_report(report: &RunReport, dir: &Path) -> CliResult<()> {
    let graphs = dir.join("graphs");
    std::fs::create_dir_all(&graphs).map_err(|e| CliError::io(&graphs, e))?;
    let write = |path: &Path, text: String| std::fs::write(path, text).map_err(|e| CliError::io(path, e));
    write(&dir.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;
    write(&dir.join("config.toml"), report.config.to_toml()?)?;
    for run in &report.runs {
        let text = serde_json::to_string_pretty(&run.graph)? + "\n";
        write(&graphs.join(format!("run_{:04}.json", run.replicate)), text)?;
    }
    Ok(())
}
