//! Hypothesis tests, multiple-comparison corrections and graph scoring.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{Error, Result};
use crate::graph::{CausalGraph, Mark};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DegreesOfFreedom {
    Single(f64),
    Pair(f64, f64),
}

/// Outcome of a single test; `reject` holds iff `p_value < corrected_alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub df: DegreesOfFreedom,
    pub p_value: f64,
    pub reject: bool,
    pub corrected_alpha: f64,
}

impl TestOutcome {
    fn new(statistic: f64, df: DegreesOfFreedom, p_value: f64, corrected_alpha: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        TestOutcome {
            statistic,
            df,
            p_value,
            reject: p_value < corrected_alpha,
            corrected_alpha,
        }
    }

    /// Re-decides the outcome against a different threshold.
    pub fn with_alpha(self, corrected_alpha: f64) -> Self {
        TestOutcome::new(self.statistic, self.df, self.p_value, corrected_alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Nested-model F-test on residual sums of squares.
pub fn f_test(ssr_r: f64, ssr_u: f64, p_r: usize, p_u: usize, n: usize, alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    if p_u <= p_r {
        return Err(Error::invalid("models not nested"));
    }
    if n <= p_u {
        return Err(Error::invalid("insufficient residual df"));
    }
    if !(ssr_r >= 0.0 && ssr_u >= 0.0) {
        return Err(Error::invalid("residual sums of squares must be non-negative"));
    }
    if !(ssr_u > 0.0) {
        return Err(Error::numerical("unrestricted model fits exactly"));
    }
    let d1 = (p_u - p_r) as f64;
    let d2 = (n - p_u) as f64;
    let statistic = (((ssr_r - ssr_u) / d1) / (ssr_u / d2)).max(0.0);
    let p = if statistic == 0.0 {
        1.0
    } else {
        FisherSnedecor::new(d1, d2)
            .map_err(|e| Error::numerical(e.to_string()))?
            .sf(statistic)
    };
    Ok(TestOutcome::new(statistic, DegreesOfFreedom::Pair(d1, d2), p, alpha))
}

/// Two-sided Student-t test of a Pearson correlation against zero.
pub fn correlation_t_test(r: f64, n: usize, alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    if n < 3 {
        return Err(Error::invalid("correlation test needs n ≥ 3"));
    }
    if !(r.abs() < 1.0) {
        return Err(Error::invalid(format!("correlation {r} outside (-1, 1)")));
    }
    let df = (n - 2) as f64;
    let statistic = r * (df / (1.0 - r * r)).sqrt();
    let p = if statistic == 0.0 {
        1.0
    } else {
        let t = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::numerical(e.to_string()))?;
        2.0 * t.sf(statistic.abs())
    };
    Ok(TestOutcome::new(statistic, DegreesOfFreedom::Single(df), p, alpha))
}

/// Upper-tail chi-squared test; negative statistics are clamped to zero.
pub fn chi_squared_test(statistic: f64, df: usize, alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    if df == 0 {
        return Err(Error::invalid("chi-squared test needs df ≥ 1"));
    }
    let statistic = statistic.max(0.0);
    let p = if statistic == 0.0 {
        1.0
    } else {
        ChiSquared::new(df as f64)
            .map_err(|e| Error::numerical(e.to_string()))?
            .sf(statistic)
    };
    Ok(TestOutcome::new(statistic, DegreesOfFreedom::Single(df as f64), p, alpha))
}

pub fn bonferroni(alpha: f64, k: usize) -> Result<f64> {
    check_alpha(alpha)?;
    if k == 0 {
        return Err(Error::invalid("Bonferroni correction over zero tests"));
    }
    Ok(alpha / k as f64)
}

/// Benjamini–Hochberg step-up procedure; returns the rejection mask.
pub fn bh_fdr(p_values: &[f64], alpha: f64) -> Result<Vec<bool>> {
    check_alpha(alpha)?;
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("p-value {p} outside [0, 1]")));
    }
    let k = p_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let cutoff = (1..=k)
        .rev()
        .find(|&rank| p_values[order[rank - 1]] <= rank as f64 * alpha / k as f64)
        .unwrap_or(0);
    let mut mask = vec![false; k];
    for &i in &order[..cutoff] {
        mask[i] = true;
    }
    Ok(mask)
}

/// Confusion counts and derived rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl GraphMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        GraphMetrics {
            precision,
            recall,
            f1,
            fpr: ratio(fp, fp + tn),
            tp,
            fp,
            fn_,
            tn,
        }
    }
}

fn check_nodes(estimated: &CausalGraph, truth: &CausalGraph) -> Result<()> {
    if estimated.n_nodes() != truth.n_nodes() {
        return Err(Error::invalid(format!(
            "graphs have {} and {} nodes",
            estimated.n_nodes(),
            truth.n_nodes()
        )));
    }
    Ok(())
}

fn tally(pairs: impl Iterator<Item = (bool, bool)>) -> GraphMetrics {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (est, tru) in pairs {
        match (est, tru) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    GraphMetrics::from_counts(tp, fp, fn_, tn)
}

/// Summary-graph scoring over ordered pairs `a ≠ b`, lagged edges only.
pub fn graph_metrics(estimated: &CausalGraph, truth: &CausalGraph) -> Result<GraphMetrics> {
    check_nodes(estimated, truth)?;
    let n = truth.n_nodes();
    let pairs = (0..n)
        .flat_map(|a| (0..n).map(move |b| (a, b)))
        .filter(|(a, b)| a != b)
        .map(|(a, b)| (estimated.summary_edge(a, b), truth.summary_edge(a, b)));
    Ok(tally(pairs))
}

/// Scores for graphs with same-step edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContempMetrics {
    /// Lag-resolved lagged edges, self edges excluded.
    pub lagged: GraphMetrics,
    /// Same-step adjacencies over unordered pairs.
    pub adjacency: GraphMetrics,
    /// Correctly oriented same-step edges against all estimated and all true adjacencies.
    pub orientation: GraphMetrics,
}

pub fn contemp_metrics(estimated: &CausalGraph, truth: &CausalGraph) -> Result<ContempMetrics> {
    check_nodes(estimated, truth)?;
    let n = truth.n_nodes();
    let max_lag = estimated.max_lag().max(truth.max_lag()).max(1);
    let lagged = tally(
        (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .filter(|(a, b)| a != b)
            .flat_map(|(a, b)| (1..=max_lag).map(move |lag| (a, b, lag)))
            .map(|(a, b, lag)| (estimated.has_lagged(a, b, lag), truth.has_lagged(a, b, lag))),
    );
    let unordered = || (0..n).flat_map(move |a| (a + 1..n).map(move |b| (a, b)));
    let adjacency = tally(unordered().map(|(a, b)| (estimated.adjacent(a, b), truth.adjacent(a, b))));

    let mut correct = 0;
    for ((a, b), mark) in estimated.contemporaneous_edges() {
        if let Mark::Directed { .. } = mark {
            if truth.mark(a, b) == Some(mark) {
                correct += 1;
            }
        }
    }
    let n_est = estimated.contemporaneous_edges().count();
    let n_true = truth.contemporaneous_edges().count();
    let fp = n_est - correct;
    let fn_ = n_true - correct;
    let tn = (n * n.saturating_sub(1) / 2).saturating_sub(correct + fp + fn_);
    let orientation = GraphMetrics::from_counts(correct, fp, fn_, tn);
    Ok(ContempMetrics {
        lagged,
        adjacency,
        orientation,
    })
}

/// Sample mean, sample standard deviation (`n − 1`) and median.
pub fn summarize(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    };
    (mean, sd, median)
}
