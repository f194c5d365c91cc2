//! Experiment configuration, read from a nested TOML file.
//!
//! ```toml
//! method = "gpsic"
//! m = 1            # or "auto" for gpsic
//! mc_runs = 100
//! seed = 7
//!
//! [source.benchmark]
//! id = "confounder"
//! n = 250
//!
//! [params]
//! threshold = 50.0
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use kgranger::gpsic::{omega_schedule, GpsicConfig};
use kgranger::kernels::KernelSpec;
use kgranger::kgc::KgcConfig;
use kgranger::kpcr::KpcrConfig;
use kgranger::lsngc::LsngcConfig;
use kgranger::simulate::BenchmarkSpec;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Kgc,
    Lsngc,
    Kpcr,
    Gpsic,
    #[value(name = "gpsic_contemp")]
    GpsicContemp,
    #[value(name = "gp_delta")]
    GpDelta,
    #[value(name = "gp_glrt")]
    GpGlrt,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Kgc => "kgc",
            Method::Lsngc => "lsngc",
            Method::Kpcr => "kpcr",
            Method::Gpsic => "gpsic",
            Method::GpsicContemp => "gpsic_contemp",
            Method::GpDelta => "gp_delta",
            Method::GpGlrt => "gp_glrt",
        }
    }

    fn accepts(self, param: &str) -> bool {
        let allowed: &[&str] = match self {
            Method::Kgc => &["kernel", "mu", "alpha"],
            Method::Kpcr => &["kernel", "mu", "c", "alpha", "nystrom_threshold", "n_inducing"],
            Method::Lsngc => &["c_f", "c_g", "alpha"],
            Method::Gpsic => &["threshold", "omega_start", "omega_end", "omega_steps", "max_lag"],
            Method::GpsicContemp => &["threshold", "omega_start", "omega_end", "omega_steps", "single_pass"],
            Method::GpDelta => &[],
            Method::GpGlrt => &["alpha"],
        };
        allowed.contains(&param)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Lag order: a fixed value or per-target selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LagSetting {
    Fixed(usize),
    Auto,
}

impl std::str::FromStr for LagSetting {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        if s == "auto" {
            return Ok(LagSetting::Auto);
        }
        s.parse::<usize>()
            .map(LagSetting::Fixed)
            .map_err(|_| CliError::config(format!("lag must be a positive integer or \"auto\", got '{s}'")))
    }
}

impl Serialize for LagSetting {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LagSetting::Fixed(m) => s.serialize_u64(*m as u64),
            LagSetting::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for LagSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(m) => Ok(LagSetting::Fixed(m as usize)),
            Raw::Text(t) if t == "auto" => Ok(LagSetting::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("lag must be an integer or \"auto\", got '{t}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Source {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    /// Whether the CSV's first row holds series names.
    #[serde(default = "yes")]
    pub has_header: bool,
    /// Optional ground-truth graph (JSON) used to score a CSV run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkSpec>,
}

fn yes() -> bool {
    true
}

impl Source {
    pub fn benchmark(spec: BenchmarkSpec) -> Self {
        Source {
            csv: None,
            has_header: true,
            truth: None,
            benchmark: Some(spec),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelChoice {
    Se {
        lengthscale: f64,
        #[serde(default = "unit")]
        variance: f64,
    },
    Polynomial {
        degree: u32,
    },
    Linear,
}

fn unit() -> f64 {
    1.0
}

impl KernelChoice {
    pub fn to_spec(&self) -> KernelSpec {
        match *self {
            KernelChoice::Se { lengthscale, variance } => KernelSpec::SquaredExponential { lengthscale, variance },
            KernelChoice::Polynomial { degree } => KernelSpec::InhomogeneousPolynomial { degree },
            KernelChoice::Linear => KernelSpec::Linear,
        }
    }
}

/// Method parameters. Unset fields take each method's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Lengthscale multiplier for the KPCR default kernel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nystrom_threshold: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_inducing: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_f: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_g: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_steps: Option<usize>,
    /// Largest candidate lag when `m = "auto"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_lag: Option<usize>,
    /// Run the same-step propagation rule once instead of to a fixpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single_pass: Option<bool>,
}

impl MethodParams {
    fn set_names(&self) -> Vec<&'static str> {
        let mut names = Vec::new();
        let mut check = |set: bool, name: &'static str| {
            if set {
                names.push(name);
            }
        };
        check(self.kernel.is_some(), "kernel");
        check(self.mu.is_some(), "mu");
        check(self.alpha.is_some(), "alpha");
        check(self.c.is_some(), "c");
        check(self.nystrom_threshold.is_some(), "nystrom_threshold");
        check(self.n_inducing.is_some(), "n_inducing");
        check(self.c_f.is_some(), "c_f");
        check(self.c_g.is_some(), "c_g");
        check(self.threshold.is_some(), "threshold");
        check(self.omega_start.is_some(), "omega_start");
        check(self.omega_end.is_some(), "omega_end");
        check(self.omega_steps.is_some(), "omega_steps");
        check(self.max_lag.is_some(), "max_lag");
        check(self.single_pass.is_some(), "single_pass");
        names
    }

    pub fn kgc(&self) -> KgcConfig {
        let d = KgcConfig::default();
        KgcConfig {
            kernel: self.kernel.as_ref().map(KernelChoice::to_spec),
            mu: self.mu.unwrap_or(d.mu),
            alpha: self.alpha.unwrap_or(d.alpha),
        }
    }

    pub fn kpcr(&self) -> KpcrConfig {
        let d = KpcrConfig::default();
        KpcrConfig {
            kernel: self.kernel.as_ref().map(KernelChoice::to_spec),
            mu: self.mu.unwrap_or(d.mu),
            c: self.c.unwrap_or(d.c),
            nystrom_threshold: self.nystrom_threshold.unwrap_or(d.nystrom_threshold),
            n_inducing: self.n_inducing.unwrap_or(d.n_inducing),
            alpha: self.alpha.unwrap_or(d.alpha),
            ..d
        }
    }

    pub fn lsngc(&self) -> LsngcConfig {
        let d = LsngcConfig::default();
        LsngcConfig {
            c_f: self.c_f.unwrap_or(d.c_f),
            c_g: self.c_g.unwrap_or(d.c_g),
            alpha: self.alpha.unwrap_or(d.alpha),
        }
    }

    pub fn gpsic(&self) -> CliResult<GpsicConfig> {
        let d = GpsicConfig::default();
        let schedule = if self.omega_start.is_some() || self.omega_end.is_some() || self.omega_steps.is_some() {
            omega_schedule(self.omega_start.unwrap_or(100.0), self.omega_end.unwrap_or(1e-5), self.omega_steps.unwrap_or(50))?
        } else {
            d.schedule.clone()
        };
        Ok(GpsicConfig {
            threshold: self.threshold.unwrap_or(d.threshold),
            schedule,
            ..d
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    /// Directory that receives the report, the resolved config and graph files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<LagSetting>,
    #[serde(default = "one")]
    pub mc_runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: MethodParams,
    #[serde(default)]
    pub output: OutputPaths,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    /// Benchmark experiment with default parameters and the generating lag order.
    pub fn for_benchmark(method: Method, spec: BenchmarkSpec, mc_runs: usize, seed: u64) -> Self {
        ExperimentConfig {
            method,
            source: Source::benchmark(spec),
            m: None,
            mc_runs,
            seed,
            params: MethodParams::default(),
            output: OutputPaths::default(),
        }
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        Ok(toml::to_string(self)?)
    }

    /// Checks cross-field rules that serde cannot express.
    pub fn validate(&self) -> CliResult<()> {
        match (&self.source.csv, &self.source.benchmark) {
            (Some(_), Some(_)) => return Err(CliError::config("source must be either csv or benchmark, not both")),
            (None, None) => return Err(CliError::config("source needs a csv path or a benchmark")),
            (None, Some(_)) if self.source.truth.is_some() => {
                return Err(CliError::config("benchmarks carry their own truth; drop source.truth"))
            }
            (Some(_), None) if self.mc_runs != 1 => {
                return Err(CliError::config("a csv source supports exactly one run (mc_runs = 1)"))
            }
            _ => {}
        }
        if self.mc_runs == 0 {
            return Err(CliError::config("mc_runs must be at least 1"));
        }
        match self.m {
            Some(LagSetting::Fixed(0)) => return Err(CliError::config("lag order must be at least 1")),
            Some(LagSetting::Auto) if self.method != Method::Gpsic => {
                return Err(CliError::config(format!("m = \"auto\" is only available for gpsic, not {}", self.method)))
            }
            None if self.source.csv.is_some() => return Err(CliError::config("a csv source needs an explicit lag order m")),
            _ => {}
        }
        if let Some(bad) = self.params.set_names().into_iter().find(|p| !self.method.accepts(p)) {
            return Err(CliError::config(format!("parameter '{bad}' does not apply to method {}", self.method)));
        }
        if let Some(a) = self.params.alpha {
            if !(a > 0.0 && a < 1.0) {
                return Err(CliError::config("alpha must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
method = "gpsic"
mc_runs = 3
seed = 5

[source.benchmark]
id = "confounder"
n = 250
"#;

    #[test]
    fn parses_nested_benchmark_config() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.method, Method::Gpsic);
        let bench = cfg.source.benchmark.as_ref().unwrap();
        assert_eq!(bench.n, 250);
        assert_eq!(bench.burn_in, 50);
        assert_eq!(cfg.m, None);
    }

    #[test]
    fn auto_lag_only_for_gpsic() {
        let cfg = ExperimentConfig::from_toml(&format!("m = \"auto\"\n{BASE}")).unwrap();
        cfg.validate().unwrap();
        let cfg = ExperimentConfig::from_toml(&format!("m = \"auto\"\n{}", BASE.replace("gpsic", "kgc"))).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn csv_source_rejects_replicates() {
        let text = "method = \"kgc\"\nm = 1\nmc_runs = 2\n[source]\ncsv = \"data.csv\"\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("mc_runs"));
    }

    #[test]
    fn foreign_parameters_are_rejected() {
        let text = format!("{BASE}\n[params]\nc_f = 10\n");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("c_f"));
    }

    #[test]
    fn kernel_tables_parse() {
        let text = "method = \"kgc\"\nm = 2\n[source]\ncsv = \"x.csv\"\n[params.kernel]\ntype = \"se\"\nlengthscale = 3.0\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        cfg.validate().unwrap();
        assert!(matches!(
            cfg.params.kgc().kernel,
            Some(KernelSpec::SquaredExponential { lengthscale, variance }) if lengthscale == 3.0 && variance == 1.0
        ));
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = ExperimentConfig::from_toml(BASE).unwrap();
        cfg.m = Some(LagSetting::Fixed(1));
        cfg.params.threshold = Some(40.0);
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_fail() {
        assert!(ExperimentConfig::from_toml(&format!("{BASE}\n[params]\nbogus = 1\n")).is_err());
    }
}
