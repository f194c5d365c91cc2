//! Benchmark F1 expectations for the four lagged methods at `n = 250`.

use kgranger_cli::Method;
use serde::Serialize;

/// One benchmark expectation: run `method` on `experiment` and compare the
/// mean summary-graph F1 with `expected_mean ± tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcceptanceTarget {
    /// Benchmark system id, as accepted by `SystemId::from_name`.
    pub experiment: String,
    pub method: Method,
    /// Retained series length.
    pub n: usize,
    pub expected_mean: f64,
    pub expected_sd: f64,
    pub tolerance: f64,
    /// Row label of the reference table, e.g. `"n=250 / Mediator"`.
    pub table_row: String,
    /// Replicate count for this target; `None` uses the suite-wide count.
    pub mc_runs: Option<usize>,
}

impl AcceptanceTarget {
    /// Tolerance defaults to 0.05 for expectations of at least 0.9 and 0.10 below.
    pub fn new(experiment: &str, method: Method, n: usize, expected_mean: f64, expected_sd: f64) -> Self {
        AcceptanceTarget {
            experiment: experiment.to_string(),
            method,
            n,
            expected_mean,
            expected_sd,
            tolerance: default_tolerance(expected_mean),
            table_row: format!("n={n} / {}", row_label(experiment)),
            mc_runs: None,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_mc_runs(mut self, mc_runs: usize) -> Self {
        self.mc_runs = Some(mc_runs);
        self
    }

    pub fn label(&self) -> String {
        format!("{}:{}", self.method, self.experiment)
    }
}

pub fn default_tolerance(expected: f64) -> f64 {
    if expected >= 0.9 {
        0.05
    } else {
        0.10
    }
}

/// `(system id, row label)` in table order.
pub const TABLE_ROWS: &[(&str, &str)] = &[
    ("logistic_1way", "1-way Logistic"),
    ("logistic_2way", "2-way Logistic"),
    ("stochastic_linear", "Stochastic Linear"),
    ("stochastic_nonlinear", "Stochastic Nonlinear"),
    ("fan_in_3", "3 Fan-in"),
    ("fan_out_3", "3 Fan-out"),
    ("confounder", "Confounder"),
    ("mediator", "Mediator"),
    ("redundant_collider", "Redundant Collider"),
    ("synergistic_collider", "Synergistic Collider"),
    ("sync_1way_intermediate", "Sync. (1-way intermediate)"),
    ("sync_1way_strong", "Sync. (1-way strong)"),
    ("sync_2way_strong", "Sync. (2-way strong)"),
    ("moran", "Moran Effect"),
    ("linear_5", "5 Linear"),
    ("nonlinear_5", "5 Nonlinear"),
    ("nonlinear_8", "8 Nonlinear"),
    ("nonlinear_20", "20 Nonlinear"),
    ("nonlinear_30", "30 Nonlinear"),
];

/// Method columns of the reference table.
pub const TABLE_METHODS: [Method; 4] = [Method::Gpsic, Method::Lsngc, Method::Kgc, Method::Kpcr];

/// Mean and sd per row, in [`TABLE_METHODS`] order.
const REFERENCE_N250: &[[(f64, f64); 4]] = &[
    [(0.98, 0.07), (0.99, 0.07), (0.99, 0.05), (0.98, 0.09)],
    [(0.69, 0.09), (0.71, 0.11), (0.68, 0.07), (0.70, 0.10)],
    [(0.93, 0.14), (0.95, 0.12), (0.95, 0.12), (0.94, 0.13)],
    [(0.96, 0.14), (0.81, 0.39), (0.99, 0.05), (1.00, 0.03)],
    [(0.99, 0.05), (0.94, 0.12), (0.96, 0.10), (0.96, 0.11)],
    [(0.98, 0.07), (0.95, 0.11), (0.98, 0.07), (0.98, 0.07)],
    [(0.97, 0.07), (0.94, 0.10), (0.97, 0.08), (0.96, 0.09)],
    [(0.99, 0.05), (0.98, 0.07), (0.99, 0.04), (0.98, 0.06)],
    [(0.99, 0.04), (0.14, 0.28), (0.02, 0.11), (0.03, 0.13)],
    [(0.97, 0.07), (0.70, 0.31), (0.98, 0.05), (0.99, 0.03)],
    [(0.96, 0.14), (0.93, 0.18), (0.90, 0.21), (0.90, 0.22)],
    [(0.67, 0.46), (0.24, 0.31), (0.24, 0.34), (0.26, 0.34)],
    [(0.96, 0.09), (0.92, 0.14), (0.92, 0.15), (0.89, 0.19)],
    [(0.79, 0.05), (0.55, 0.11), (0.57, 0.08), (0.69, 0.10)],
    [(0.95, 0.06), (0.68, 0.09), (0.86, 0.10), (0.74, 0.12)],
    [(0.97, 0.05), (0.52, 0.05), (0.96, 0.06), (0.99, 0.03)],
    [(0.90, 0.13), (0.63, 0.14), (0.84, 0.21), (0.81, 0.23)],
    [(0.73, 0.06), (0.50, 0.04), (0.47, 0.07), (0.65, 0.06)],
    [(0.68, 0.06), (0.32, 0.05), (0.65, 0.14), (0.68, 0.08)],
];

pub const TABLE_N: usize = 250;

pub fn row_label(experiment: &str) -> &str {
    TABLE_ROWS
        .iter()
        .find(|(id, _)| *id == experiment)
        .map_or(experiment, |(_, label)| label)
}

/// Reference mean and sd for `method` on `experiment`, if tabulated.
pub fn reference(experiment: &str, method: Method) -> Option<(f64, f64)> {
    let row = TABLE_ROWS.iter().position(|(id, _)| *id == experiment)?;
    let col = TABLE_METHODS.iter().position(|&m| m == method)?;
    Some(REFERENCE_N250[row][col])
}

fn tabulated(experiment: &str, method: Method) -> AcceptanceTarget {
    let (mean, sd) = reference(experiment, method).expect("tabulated cell");
    AcceptanceTarget::new(experiment, method, TABLE_N, mean, sd)
}

/// Every cell of the reference table as a target with default tolerance.
pub fn full_table() -> Vec<AcceptanceTarget> {
    TABLE_ROWS
        .iter()
        .flat_map(|(id, _)| TABLE_METHODS.iter().map(move |&m| tabulated(id, m)))
        .collect()
}

/// The small-system cells checked at every tier.
pub fn headline_targets() -> Vec<AcceptanceTarget> {
    vec![
        tabulated("confounder", Method::Gpsic),
        tabulated("mediator", Method::Gpsic),
        tabulated("redundant_collider", Method::Gpsic),
        tabulated("logistic_1way", Method::Gpsic),
        tabulated("nonlinear_5", Method::Kpcr),
        tabulated("synergistic_collider", Method::Kpcr),
        tabulated("logistic_1way", Method::Kgc),
        tabulated("confounder", Method::Kgc),
        tabulated("mediator", Method::Lsngc),
        tabulated("redundant_collider", Method::Lsngc).with_tolerance(0.15),
    ]
}

/// The 20- and 30-series rows, run with 20 replicates and tolerance 0.10.
pub fn large_system_targets() -> Vec<AcceptanceTarget> {
    ["nonlinear_20", "nonlinear_30"]
        .iter()
        .flat_map(|id| {
            TABLE_METHODS
                .iter()
                .map(move |&m| tabulated(id, m).with_tolerance(0.10).with_mc_runs(20))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_rectangular_and_labelled() {
        assert_eq!(TABLE_ROWS.len(), REFERENCE_N250.len());
        assert_eq!(full_table().len(), TABLE_ROWS.len() * 4);
        assert_eq!(reference("mediator", Method::Gpsic), Some((0.99, 0.05)));
        assert_eq!(reference("mediator", Method::GpDelta), None);
    }

    #[test]
    fn headline_tolerances() {
        let t = headline_targets();
        assert!(t.iter().all(|t| t.tolerance > 0.0));
        let rc = t.iter().find(|t| t.label() == "lsngc:redundant_collider").unwrap();
        assert_eq!((rc.expected_mean, rc.tolerance), (0.14, 0.15));
        assert_eq!(rc.table_row, "n=250 / Redundant Collider");
        assert!(large_system_targets().iter().all(|t| t.mc_runs == Some(20)));
    }
}
