//! Benchmark systems with known causal structure.
//!
//! Every generator returns the observed series together with a ground-truth
//! graph that lists each driving term at the lag it enters the update,
//! self-dependence included.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesSystem;
use crate::error::{Error, Result};
use crate::graph::CausalGraph;
use crate::seeding::derive_seed;

const DIVERGENCE_LIMIT: f64 = 1e6;
pub const DEFAULT_BURN_IN: usize = 50;
pub const REJECTION_BUDGET: usize = 10_000;

fn default_a() -> f64 {
    0.4
}

fn default_c() -> f64 {
    0.4
}

fn default_m() -> usize {
    1
}

fn default_contemp_fraction() -> f64 {
    0.3
}

/// Benchmark system identifier. Parametric systems carry their settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id")]
pub enum SystemId {
    #[serde(rename = "logistic_1way")]
    Logistic1Way,
    #[serde(rename = "logistic_2way")]
    Logistic2Way,
    #[serde(rename = "stochastic_linear")]
    StochasticLinear,
    #[serde(rename = "stochastic_nonlinear")]
    StochasticNonlinear,
    #[serde(rename = "fan_in_3")]
    FanIn3,
    #[serde(rename = "fan_out_3")]
    FanOut3,
    #[serde(rename = "confounder")]
    Confounder,
    #[serde(rename = "mediator")]
    Mediator,
    #[serde(rename = "synergistic_collider")]
    SynergisticCollider,
    #[serde(rename = "redundant_collider")]
    RedundantCollider,
    #[serde(rename = "sync_1way_intermediate")]
    Sync1WayIntermediate,
    #[serde(rename = "sync_1way_strong")]
    Sync1WayStrong,
    #[serde(rename = "sync_2way_strong")]
    Sync2WayStrong,
    #[serde(rename = "moran")]
    Moran,
    #[serde(rename = "linear_5")]
    Linear5,
    #[serde(rename = "nonlinear_5")]
    Nonlinear5,
    #[serde(rename = "nonlinear_8")]
    Nonlinear8,
    /// `edges` defaults to `⌊1.5·n_t⌋`.
    #[serde(rename = "random_nonlinear")]
    RandomNonlinear {
        n_t: usize,
        #[serde(default)]
        edges: Option<usize>,
        #[serde(default = "default_a")]
        a: f64,
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default = "default_m")]
        m: usize,
    },
    #[serde(rename = "contemporaneous_random")]
    ContemporaneousRandom {
        n_t: usize,
        #[serde(default = "default_m")]
        m: usize,
        #[serde(default = "default_a")]
        a: f64,
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default = "default_contemp_fraction")]
        contemp_fraction: f64,
        #[serde(default)]
        edges: Option<usize>,
        /// Use the identity instead of the nonlinear coupling function.
        #[serde(default)]
        linear: bool,
    },
}

const NAMED: [(&str, SystemId); 17] = [
    ("logistic_1way", SystemId::Logistic1Way),
    ("logistic_2way", SystemId::Logistic2Way),
    ("stochastic_linear", SystemId::StochasticLinear),
    ("stochastic_nonlinear", SystemId::StochasticNonlinear),
    ("fan_in_3", SystemId::FanIn3),
    ("fan_out_3", SystemId::FanOut3),
    ("confounder", SystemId::Confounder),
    ("mediator", SystemId::Mediator),
    ("synergistic_collider", SystemId::SynergisticCollider),
    ("redundant_collider", SystemId::RedundantCollider),
    ("sync_1way_intermediate", SystemId::Sync1WayIntermediate),
    ("sync_1way_strong", SystemId::Sync1WayStrong),
    ("sync_2way_strong", SystemId::Sync2WayStrong),
    ("moran", SystemId::Moran),
    ("linear_5", SystemId::Linear5),
    ("nonlinear_5", SystemId::Nonlinear5),
    ("nonlinear_8", SystemId::Nonlinear8),
];

impl SystemId {
    /// Looks up a system by name. Besides the fixed systems this accepts
    /// `nonlinear_20` and `nonlinear_30` for the random nonlinear systems
    /// with their default settings.
    pub fn from_name(name: &str) -> Result<Self> {
        if let Some((_, id)) = NAMED.iter().find(|(n, _)| *n == name) {
            return Ok(id.clone());
        }
        match name {
            "nonlinear_20" => Ok(Self::random_nonlinear(20)),
            "nonlinear_30" => Ok(Self::random_nonlinear(30)),
            _ => Err(Error::invalid(format!("unknown system id '{name}'"))),
        }
    }

    pub fn fixed_systems() -> impl Iterator<Item = (&'static str, SystemId)> {
        NAMED.iter().cloned()
    }

    pub fn random_nonlinear(n_t: usize) -> Self {
        SystemId::RandomNonlinear {
            n_t,
            edges: None,
            a: default_a(),
            c: default_c(),
            m: 1,
        }
    }

    pub fn contemporaneous_random(n_t: usize) -> Self {
        SystemId::ContemporaneousRandom {
            n_t,
            m: default_m(),
            a: default_a(),
            c: default_c(),
            contemp_fraction: default_contemp_fraction(),
            edges: None,
            linear: false,
        }
    }

    pub fn name(&self) -> String {
        match self {
            SystemId::RandomNonlinear { n_t, .. } => format!("nonlinear_{n_t}"),
            SystemId::ContemporaneousRandom { n_t, m, .. } => format!("contemporaneous_{n_t}_m{m}"),
            other => NAMED
                .iter()
                .find(|(_, id)| id == other)
                .map(|(n, _)| n.to_string())
                .expect("every fixed system is named"),
        }
    }
}

/// What to simulate. `n` is the number of retained time points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    #[serde(flatten)]
    pub system: SystemId,
    pub n: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

impl BenchmarkSpec {
    pub fn new(system: SystemId, n: usize, seed: u64) -> Self {
        BenchmarkSpec {
            system,
            n,
            burn_in: DEFAULT_BURN_IN,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub system: TimeSeriesSystem,
    pub truth: CausalGraph,
    /// Largest lag in the generating equations.
    pub m_true: usize,
}

/// Generates `burn_in + n` steps and keeps the last `n`.
pub fn simulate(spec: &BenchmarkSpec) -> Result<Simulation> {
    if spec.n < 10 {
        return Err(Error::invalid("simulations need at least 10 retained points"));
    }
    let steps = spec.burn_in + spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[1]));
    let (rows, truth, m_true) = match &spec.system {
        SystemId::Logistic1Way => two_species(3.7, 3.7, 0.0, 0.2, steps, &mut rng)?,
        SystemId::Logistic2Way => two_species(3.5, 3.9, 0.01, 0.2, steps, &mut rng)?,
        SystemId::StochasticLinear => stochastic_linear(steps, &mut rng)?,
        SystemId::StochasticNonlinear => stochastic_nonlinear(steps, &mut rng)?,
        SystemId::FanIn3 => fan(&[[4.0, 0.0, 0.0], [0.0, 3.6, 0.0], [0.636, -0.636, 2.12]], steps, &mut rng)?,
        SystemId::FanOut3 => fan(&[[4.0, 0.0, 0.0], [0.21, 3.1, 0.0], [-0.636, 0.0, 2.12]], steps, &mut rng)?,
        SystemId::Confounder => confounder(steps, &mut rng)?,
        SystemId::Mediator => mediator(steps, &mut rng)?,
        SystemId::SynergisticCollider => collider(false, steps, &mut rng)?,
        SystemId::RedundantCollider => collider(true, steps, &mut rng)?,
        SystemId::Sync1WayIntermediate => sync(0.1, 0.0, steps, &mut rng)?,
        SystemId::Sync1WayStrong => sync(1.0, 0.0, steps, &mut rng)?,
        SystemId::Sync2WayStrong => sync(0.0, 1.0, steps, &mut rng)?,
        SystemId::Moran => moran(steps, &mut rng)?,
        SystemId::Linear5 => five(false, steps, &mut rng)?,
        SystemId::Nonlinear5 => five(true, steps, &mut rng)?,
        SystemId::Nonlinear8 => eight_species(steps, &mut rng)?,
        SystemId::RandomNonlinear { n_t, edges, a, c, m } => {
            let l = edges.unwrap_or(default_edge_count(*n_t));
            let graph = random_graph(*n_t, l, *m, 0.0, derive_seed(spec.seed, &[0]), false)?;
            random_system(&graph, *a, *c, *m, false, steps, &mut rng)?
        }
        SystemId::ContemporaneousRandom {
            n_t,
            m,
            a,
            c,
            contemp_fraction,
            edges,
            linear,
        } => {
            let l = edges.unwrap_or(default_edge_count(*n_t));
            let graph = random_graph(*n_t, l, *m, *contemp_fraction, derive_seed(spec.seed, &[0]), true)?;
            random_system(&graph, *a, *c, *m, *linear, steps, &mut rng)?
        }
    };
    let n_t = truth.n_nodes();
    let kept = &rows[rows.len() - spec.n..];
    let series = (0..n_t).map(|j| kept.iter().map(|r| r[j]).collect()).collect();
    let system = TimeSeriesSystem::new(truth.names().to_vec(), series)?;
    Ok(Simulation { system, truth, m_true })
}

/// `⌊1.5·n_t⌋`.
pub fn default_edge_count(n_t: usize) -> usize {
    3 * n_t / 2
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Runs `step` from the given history rows (oldest first) and returns the
/// `steps` new rows. `clip` clamps every state to the unit interval.
fn iterate(
    mut history: Vec<Vec<f64>>,
    steps: usize,
    clip: bool,
    rng: &mut ChaCha8Rng,
    mut step: impl FnMut(&[Vec<f64>], &mut ChaCha8Rng) -> Vec<f64>,
) -> Result<Vec<Vec<f64>>> {
    let start = history.len();
    history.reserve(steps);
    for _ in 0..steps {
        let mut row = step(&history, rng);
        if clip {
            row.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
        if row.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(Error::numerical("simulation diverged"));
        }
        history.push(row);
    }
    Ok(history.split_off(start))
}

/// Builds a truth graph from `(src, dst, lag)` triples, 1-based as written
/// in the equations.
fn truth(n_t: usize, edges: &[(usize, usize, usize)]) -> CausalGraph {
    let mut g = CausalGraph::with_nodes(n_t);
    for &(s, d, l) in edges {
        g.add_lagged(s - 1, d - 1, l).expect("static truth is valid");
    }
    g
}

type Generated = (Vec<Vec<f64>>, CausalGraph, usize);

fn two_species(r1: f64, r2: f64, g12: f64, g21: f64, steps: usize, rng: &mut ChaCha8Rng) -> Result<Generated> {
    let sd = 0.01f64.sqrt();
    let rows = iterate(vec![vec![0.2, 0.4]], steps, true, rng, |h, rng| {
        let x = h.last().expect("history");
        vec![
            x[0] * (r1 - r1 * x[0] - g12 * x[1]) + sd * normal(rng),
            x[1] * (r2 - r2 * x[1] - g21 * x[0]) + sd * normal(rng),
        ]
    })?;
    let mut edges = vec![(1, 1, 1), (2, 2, 1), (1, 2, 1)];
    if g12 != 0.0 {
        edges.push((2, 1, 1));
    }
    Ok((rows, truth(2, &edges), 1))
}

fn stochastic_linear(steps: usize, rng: &mut ChaCha8Rng) -> Result<Generated> {
    let rows = iterate(vec![vec![0.0; 2]; 2], steps, false, rng, |h, rng| {
        let (x, xp) = (&h[h.len() - 1], &h[h.len() - 2]);
        vec![
            0.95 * 2f64.sqrt() * x[0] - 0.9025 * xp[0] + normal(rng),
            0.5 * xp[0] + normal(rng),
        ]
    })?;
    Ok((rows, truth(2, &[(1, 1, 1), (1, 1, 2), (1, 2, 2)]), 2))
}

fn stochastic_nonlinear(steps: usize, rng: &mut ChaCha8Rng) -> Result<Generated> {
    let rows = iterate(vec![vec![0.0; 2]; 2], steps, false, rng, |h, rng| {
        let (x, xp) = (&h[h.len() - 1], &h[h.len() - 2]);
        vec![
            3.4 * x[0] * (1.0 - x[0] * x[0]) * (-x[0] * x[0]).exp() + normal(rng),
            3.4 * x[1] * (1.0 - x[1] * x[1]) * (-x[1] * x[1]).exp() + xp[0] * x[1] / 2.0 + normal(rng),
        ]
    })?;
    Ok((rows, truth(2, &[(1, 1, 1), (2, 2, 1), (1, 2, 2)]), 2))
}

/// `x_j(t+1) = x_j(t)(γ_jj − Σ_i γ_ji x_i(t))` with `γ_jj` also acting on
/// `x_j` inside the sum.
fn fan(gamma: &[[f64; 3]; 3], steps: usize, rng: &mut ChaCha8Rng) -> Result<Generated> {
    let init = vec![(0..3).map(|_| rng.random::<f64>()).collect()];
    let g = *gamma;
    let rows = iterate(init, steps, true, rng, |h, _| {
        let x = h.last().expect("history");
        (0..3)
            .map(|j| x[j] * (g[j][j] - (0..3).map(|i| g[j][i] * x[i]).sum::<f64>()))
            .collect()
    })?;
    let mut edges: Vec<(usize, usize, usize)> = (1..=3).map(|j| (j, j, 1)).collect();
    for (j, row) in gamma.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            if i != j && v != 0.0 {
                edges.push((i + 1, j + 1, 1));
            }
        }
    }
    Ok((rows, truth(3, &edges), 1))
}

fn confounder(steps: usize, rng: &mut ChaCha8Rng) -> Result<Generated> {
    let rows = iterate(vec![vec![0.0; 3]], steps, false, rng, |h, rng| {
        let x = h.last().expect("history");
        vec![
            (x[0] + x[2]).sin() + 0.01 * normal(rng),
            (x[1] - x[2]).cos() + 0.01 * normal(rng),
            0.5 * x[2] + 0.1 * normal(rng),
        ]
    })?;
    Ok((rows, truth(3, &[(1, 1, 1), (2, 2, 1), (3, 3, 1), (3, 1, 1), (3, 2, 1)]), 1))
}

fn mediator(steps: usize, rng: &mut ChaCha8Rng) -> Result<Generated> {
    let rows = iterate(vec![vec![0.0; 3]], steps, false, rng, |h, rng| {
        let x = h.last().expect("history");
        vec![
            x[1].sin() + 0.001 * normal(rng),
            x[2].cos() + 0.01 * normal(rng),
            0.5 * x[2] + 0.1 * normal(rng),
        ]
    })?;
    Ok((rows, truth(3, &[(3, 3, 1), (2, 1, 1), (3, 2, 1)]), 1))
}

/// Synergistic collider, or its redundant variant in which the third
/// series is a copy of the second.
fn collider(redundant: bool, steps: usize, rng: &mut ChaCha8Rng) -> Result<Generated> {
    let rows = iterate(vec![vec![0.0; 3]], steps, false, rng, |h, rng| {
        let x = h.last().expect("history");
        let own = if redundant { 0.3 * x[0] } else { 0.0 };
        let x1 = own + (x[1] * x[2]).sin() + 0.001 * normal(rng);
        let x2 = 0.5 * x[1] + 0.1 * normal(rng);
        let x3 = if redundant { x2 } else { 0.5 * x[2] + 0.1 * normal(rng) };
        vec![x1, x2, x3]
    })?;
    let graph = if redundant {
        truth(3, &[(1, 1, 1), (2, 2, 1), (3, 3, 1), (2, 1, 1), (3, 1, 1), (2, 3, 1), (3, 2, 1)])
    } else {
        truth(3, &[(2, 2, 1), (3, 3, 1), (2, 1, 1), (3, 1, 1)])
    };
    Ok((rows, graph, 1))
}

fn sync(c12: f64, c123: f64, steps: usize, rng: &mut ChaCha8Rng) -> Result<Generated> {
    let (r1, r2, r3) = (3.68, 3.67, 3.78);
    let sd = 1e-5f64.sqrt();
    let init = vec![(0..3).map(|_| rng.random::<f64>()).collect()];
    let rows = iterate(init, steps, true, rng, |h, rng| {
        let x = h.last().expect("history");
        let u = (x[1] + c12 * x[0]) / (1.0 + c12);
        let w = (x[2] + c123 * x[0] + c123 * x[1]) / (1.0 + 2.0 * c123);
        vec![
            r1 * x[0] * (1.0 - x[0]) + sd * normal(rng),
            r2 * u * (1.0 - u) + sd * normal(rng),
            r3 * w * (1.0 - w) + sd * normal(rng),
        ]
    })?;
    let mut edges = vec![(1, 1, 1), (2, 2, 1), (3, 3, 1)];
    if c12 != 0.0 {
        edges.push((1, 2, 1));
    }
    if c123 != 0.0 {
        edges.extend([(1, 3, 1), (2, 3, 1)]);
    }
    Ok((rows, truth(3, &edges), 1))
}

/// Series order `[N1, N2, R1, R2, V]`.
fn moran(steps: usize, rng: &mut ChaCha8Rng) -> Result<Generated> {
    let (r, s, psi) = ([3.4, 2.9], [0.4, 0.35], [0.5, 0.6]);
    const DELAY: usize = 4;
    let init: Vec<Vec<f64>> = (0..=DELAY).map(|_| vec![0.5, 0.5, 1.0, 1.0, normal(rng)]).collect();
    let rows = iterate(init, steps, false, rng, |h, rng| {
        let x = h.last().expect("history");
        let old = &h[h.len() - 1 - DELAY];
        let mut next = vec![0.0; 5];
        for i in 0..2 {
            next[i] = s[i] * x[i] + old[2 + i].max(0.0);
            next[2 + i] = r[i] * x[i] * (1.0 - x[i]) * (-psi[i] * x[4]).exp();
        }
        next[4] = normal(rng);
        next
    })?;
    let mut graph = truth(5, &[(1, 1, 1), (2, 2, 1), (1, 3, 1), (2, 4, 1), (5, 3, 1), (5, 4, 1), (3, 1, 5), (4, 2, 5)]);
    graph = graph.with_names(["N1", "N2", "R1", "R2", "V"].iter().map(|s| s.to_string()).collect())?;
    Ok((rows, graph, 5))
}

/// Every slot starts as a standard normal draw. The equations that add to
/// their own slot keep that draw as a unit-variance innovation; the third
/// equation overwrites its slot.
fn five(nonlinear: bool, steps: usize, rng: &mut ChaCha8Rng) -> Result<Generated> {
    let sigma = 0.01;
    let r2 = 2f64.sqrt();
    let init: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| normal(rng)).collect()).collect();
    let rows = iterate(init, steps, false, rng, |h, rng| {
        let n = h.len();
        let (x1, x2, x3) = (&h[n - 1], &h[n - 2], &h[n - 3]);
        let slot: Vec<f64> = (0..5).map(|_| normal(rng)).collect();
        let drive = if nonlinear { x2[0] * x2[0] } else { x2[0] };
        vec![
            slot[0] + 0.95 * r2 * x1[0] - 0.9025 * x2[0] + sigma * normal(rng),
            slot[1] + 0.5 * drive + sigma * normal(rng),
            -0.4 * x3[0] + sigma * normal(rng),
            slot[3] - 0.5 * drive + 0.5 * r2 * x1[3] + 0.25 * r2 * x1[4] + sigma * normal(rng),
            slot[4] - 0.5 * r2 * x1[3] + 0.5 * r2 * x1[4] + sigma * normal(rng),
        ]
    })?;
    let graph = truth(
        5,
        &[(1, 1, 1), (1, 1, 2), (1, 2, 2), (1, 3, 3), (1, 4, 2), (4, 4, 1), (5, 4, 1), (4, 5, 1), (5, 5, 1)],
    );
    Ok((rows, graph, 3))
}

fn eight_species(steps: usize, rng: &mut ChaCha8Rng) -> Result<Generated> {
    let r = [3.9, 3.5, 3.62, 3.75, 3.65, 3.72, 3.57, 3.68];
    // (driver, driven), 1-based; every coupling has strength 0.35.
    let couplings = [(1, 3), (2, 3), (2, 4), (3, 5), (3, 6), (6, 7), (6, 8)];
    let sd = 0.005f64.sqrt();
    let init = vec![(0..8).map(|_| rng.random::<f64>()).collect()];
    let rows = iterate(init, steps, true, rng, |h, rng| {
        let x = h.last().expect("history");
        (0..8)
            .map(|j| {
                let pressure: f64 = couplings.iter().filter(|(_, d)| *d == j + 1).map(|(s, _)| 0.35 * x[s - 1]).sum();
                x[j] * (r[j] - r[j] * x[j] - pressure) + sd * normal(rng)
            })
            .collect()
    })?;
    let mut edges: Vec<(usize, usize, usize)> = (1..=8).map(|j| (j, j, 1)).collect();
    edges.extend(couplings.iter().map(|&(s, d)| (s, d, 1)));
    Ok((rows, truth(8, &edges), 1))
}

/// `(1 + 5x·exp(−x²/20))·x`.
pub fn coupling(x: f64) -> f64 {
    (1.0 + 5.0 * x * (-x * x / 20.0).exp()) * x
}

/// Random graph with `edges` links between distinct nodes:
/// `round(contemp_fraction · edges)` (ties up) same-step links, the rest
/// lagged with a lag drawn uniformly from `1..=m`. No node pair carries
/// more than one link. With `forbid_contemporaneous_colliders`, draws are
/// rejected until every node has at most one same-step parent and the
/// same-step links are acyclic.
pub fn random_graph(
    n_t: usize,
    edges: usize,
    m: usize,
    contemp_fraction: f64,
    seed: u64,
    forbid_contemporaneous_colliders: bool,
) -> Result<CausalGraph> {
    if n_t < 2 || m == 0 {
        return Err(Error::invalid("random graphs need at least two nodes and m ≥ 1"));
    }
    if !(0.0..=1.0).contains(&contemp_fraction) {
        return Err(Error::invalid("contemp_fraction must lie in [0, 1]"));
    }
    let n_contemp = (contemp_fraction * edges as f64 + 0.5).floor() as usize;
    let n_lagged = edges - n_contemp.min(edges);
    if n_contemp * 2 + n_lagged > n_t * (n_t - 1) {
        return Err(Error::invalid(format!("{edges} edges do not fit on {n_t} nodes")));
    }
    let pairs: Vec<(usize, usize)> = (0..n_t).flat_map(|a| (0..n_t).map(move |b| (a, b))).filter(|(a, b)| a != b).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..REJECTION_BUDGET {
        let mut order = pairs.clone();
        order.shuffle(&mut rng);
        let mut used: BTreeSet<(usize, usize)> = BTreeSet::new();
        let mut contemp = Vec::new();
        let mut lagged = Vec::new();
        for (a, b) in order {
            let key = (a.min(b), a.max(b));
            if used.contains(&key) {
                continue;
            }
            if contemp.len() < n_contemp {
                contemp.push((a, b));
            } else if lagged.len() < n_lagged {
                lagged.push((a, b, rng.random_range(1..=m)));
            } else {
                break;
            }
            used.insert(key);
        }
        if contemp.len() < n_contemp || lagged.len() < n_lagged {
            return Err(Error::invalid(format!("{edges} edges do not fit on {n_t} nodes")));
        }
        if forbid_contemporaneous_colliders && !admissible(n_t, &contemp) {
            continue;
        }
        let mut g = CausalGraph::with_nodes(n_t);
        for (a, b) in contemp {
            g.add_directed(a, b)?;
        }
        for (a, b, l) in lagged {
            g.add_lagged(a, b, l)?;
        }
        return Ok(g);
    }
    Err(Error::invalid("rejection budget exhausted while drawing a random graph"))
}

/// At most one same-step parent per node, and no same-step cycles.
fn admissible(n_t: usize, contemp: &[(usize, usize)]) -> bool {
    let mut parent = vec![None; n_t];
    for &(a, b) in contemp {
        if parent[b].replace(a).is_some() {
            return false;
        }
    }
    // With one parent each, a cycle shows up as a walk that revisits a node.
    (0..n_t).all(|start| {
        let mut v = start;
        for _ in 0..n_t {
            match parent[v] {
                Some(p) if p == start => return false,
                Some(p) => v = p,
                None => return true,
            }
        }
        true
    })
}

/// Same-step topological order: parents before children.
fn topological(graph: &CausalGraph) -> Vec<usize> {
    let n = graph.n_nodes();
    let mut parents = vec![Vec::new(); n];
    for (_, mark) in graph.contemporaneous_edges() {
        if let crate::graph::Mark::Directed { src, dst } = mark {
            parents[dst].push(src);
        }
    }
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        for v in 0..n {
            if !placed[v] && parents[v].iter().all(|&p| placed[p]) {
                placed[v] = true;
                order.push(v);
            }
        }
    }
    order
}

/// `x_j(t) = a·x_j(t−1) + Σ c·f(x_i(t−τ)) + Σ c·f(x_k(t)) + ε_j(t)` over the
/// lagged and same-step parents of `graph`. The truth adds each self lag.
fn random_system(graph: &CausalGraph, a: f64, c: f64, m: usize, linear: bool, steps: usize, rng: &mut ChaCha8Rng) -> Result<Generated> {
    let n_t = graph.n_nodes();
    let f = |x: f64| if linear { x } else { coupling(x) };
    let lagged: Vec<_> = graph.lagged_edges().collect();
    let contemp: Vec<(usize, usize)> = graph
        .contemporaneous_edges()
        .filter_map(|(_, mark)| match mark {
            crate::graph::Mark::Directed { src, dst } => Some((src, dst)),
            _ => None,
        })
        .collect();
    let order = topological(graph);
    let rows = iterate(vec![vec![0.0; n_t]; m], steps, false, rng, |h, rng| {
        let n = h.len();
        let mut next: Vec<f64> = (0..n_t).map(|j| a * h[n - 1][j] + normal(rng)).collect();
        for e in &lagged {
            next[e.dst] += c * f(h[n - e.lag][e.src]);
        }
        for &v in &order {
            for &(s, d) in &contemp {
                if d == v {
                    next[v] += c * f(next[s]);
                }
            }
        }
        next
    })?;
    let mut truth = graph.clone();
    for j in 0..n_t {
        truth.add_lagged(j, j, 1)?;
    }
    Ok((rows, truth, m))
}
