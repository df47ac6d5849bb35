//! Experiment configuration: one TOML file fully determines one run.
//!
//! Everything that affects the numbers — the model, the rate sequence, the
//! observable, the budgets, the RNG seed — lives in the file, so rerunning
//! the same file reproduces the certificate table byte for byte. Sections
//! other than `[system]` are optional and are only required by the
//! subcommands that read them.

use std::fmt;
use std::path::Path;

use serde::Deserialize;

/// A configuration problem: unreadable file, parse error, value out of its
/// documented range, or a section a subcommand needs is missing.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn default_eta() -> f64 {
    slowconv::DEFAULT_ETA
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Seed for every random draw the harness makes (weight vectors,
    /// random observables, spot-check row selection).
    #[serde(default)]
    pub seed: u64,
    /// Strict-inequality margin used by the pipelines' certificates.
    #[serde(default = "default_eta")]
    pub eta: f64,
    pub system: SystemConfig,
    pub rates: Option<RatesConfig>,
    pub observable: Option<ObservableConfig>,
    pub aprime: Option<AprimeConfig>,
    pub theorem1: Option<Theorem1Config>,
    pub theorem2: Option<Theorem2Config>,
    pub theorem3: Option<Theorem3Config>,
    pub core_checks: Option<CoreChecksConfig>,
    pub rate_scan: Option<RateScanConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    /// Uniform cyclic rotation on `size` atoms.
    Cyclic,
    /// Adding machine with `digits` digits in the given `base`.
    Odometer,
    /// `dim`-dimensional torus grid of the given `side`, shifted by the
    /// coordinate unit vectors.
    Torus,
}

impl Model {
    pub fn as_str(self) -> &'static str {
        match self {
            Model::Cyclic => "cyclic",
            Model::Odometer => "odometer",
            Model::Torus => "torus",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub model: Model,
    /// Atom count (cyclic).
    pub size: Option<usize>,
    /// Digit base (odometer).
    pub base: Option<usize>,
    /// Digit count (odometer).
    pub digits: Option<u32>,
    /// Grid side length (torus).
    pub side: Option<usize>,
    /// Grid dimension (torus); defaults to 1.
    pub dim: Option<usize>,
    /// Time step of the discretized flow; defaults to 1.0.
    pub delta: Option<f64>,
}

impl SystemConfig {
    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or(1.0)
    }

    pub fn dim(&self) -> usize {
        self.dim.unwrap_or(1)
    }

    /// One-line description for reports.
    pub fn describe(&self) -> String {
        match self.model {
            Model::Cyclic => format!(
                "cyclic rotation, {} atoms, delta = {}",
                self.size.unwrap_or(0),
                self.delta()
            ),
            Model::Odometer => format!(
                "odometer, base {} with {} digits, delta = {}",
                self.base.unwrap_or(0),
                self.digits.unwrap_or(0),
                self.delta()
            ),
            Model::Torus => format!(
                "torus grid, side {} in dimension {}",
                self.side.unwrap_or(0),
                self.dim()
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateKind {
    /// `a_n = n^{-alpha}`.
    Power,
    /// `a_n = log(n + 2)^{-alpha}`.
    Logpow,
    /// Explicit table, clamped at its last value.
    Table,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    pub kind: RateKind,
    pub alpha: Option<f64>,
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObsKind {
    /// `f ≡ value`.
    Constant,
    /// `f(x) = 1 + (x mod 2)`.
    Alternating,
    /// `f(x) = 1 + x / n` (the atom's fractional coordinate, shifted up).
    Fractional,
    /// Indicator of the lowest `fraction` of the atoms.
    Indicator,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableConfig {
    pub kind: ObsKind,
    /// Constant value (kind = constant); defaults to 1.0.
    pub value: Option<f64>,
    /// Indicator mass fraction (kind = indicator); defaults to 0.5.
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AprimeConfig {
    /// The host set A' is the lowest `fraction` of the atoms.
    pub fraction: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theorem1Config {
    /// Total deviation budget; must lie strictly between 0 and 1/3.
    pub eps: f64,
    /// Number of prescribed indices K.
    pub count: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theorem2Config {
    /// Total measure budget for the invariant sets.
    pub eps: f64,
    /// Invariance threshold c.
    pub c: f64,
    /// Number of window radii J.
    pub count: usize,
    /// Random weight vectors per radius (the uniform vector is always
    /// tested in addition).
    pub trials: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theorem3Config {
    /// Total mass budget removed from the observable's support.
    pub eps: f64,
    /// Number of prescribed indices K.
    pub count: usize,
    /// Index-grid growth factor; defaults to 1.5.
    pub grid_growth: Option<f64>,
    /// Tower height as a multiple of the chosen index; defaults to 100.
    pub height_factor: Option<usize>,
    /// Count one-sided exceedances in the summary; defaults to false.
    pub one_sided_summary: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreChecksConfig {
    /// Largest telescoping horizon N; defaults to 50.
    pub max_horizon: Option<usize>,
    /// Number of random observables; defaults to 20.
    pub random_observables: Option<usize>,
}

impl CoreChecksConfig {
    pub fn max_horizon(&self) -> usize {
        self.max_horizon.unwrap_or(50)
    }

    pub fn random_observables(&self) -> usize {
        self.random_observables.unwrap_or(20)
    }
}

impl Default for CoreChecksConfig {
    fn default() -> Self {
        CoreChecksConfig {
            max_horizon: None,
            random_observables: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanFamily {
    /// Orbit (Cesàro) averages of the configured observable.
    Cesaro,
    /// Flow averages against the uniform time measure on `[-n, n]`.
    Flow,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateScanConfig {
    pub family: ScanFamily,
    /// Largest index to evaluate.
    pub max_index: usize,
    /// Geometric sweep size; omit to evaluate every index up to
    /// `max_index`.
    pub points: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Output directory; overridden by `--out` and by `SLOWCONV_OUT`.
    pub dir: Option<String>,
    pub report: String,
    pub certificates: String,
    pub plotdata: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            report: "report.txt".into(),
            certificates: "certificates.csv".into(),
            plotdata: "plotdata.csv".into(),
        }
    }
}

/// Reads, parses, and validates a configuration file, returning the parsed
/// config together with the raw file text (echoed into reports).
pub fn load(path: &Path) -> Result<(Config, String), ConfigError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let config: Config = toml::from_str(&raw)
        .map_err(|e| ConfigError(format!("cannot parse {}: {e}", path.display())))?;
    config.validate()?;
    Ok((config, raw))
}

impl Config {
    /// Range checks for every present section. Missing sections are fine
    /// here; each subcommand demands the ones it needs via the `require_*`
    /// accessors.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(ConfigError(format!(
                "eta must be finite and nonnegative (got {})",
                self.eta
            )));
        }
        self.validate_system()?;
        if let Some(rates) = &self.rates {
            validate_rates(rates)?;
        }
        if let Some(obs) = &self.observable {
            validate_observable(obs)?;
        }
        if let Some(aprime) = &self.aprime {
            if !(aprime.fraction > 0.0 && aprime.fraction <= 1.0) {
                return Err(ConfigError(format!(
                    "aprime.fraction must lie in (0, 1] (got {})",
                    aprime.fraction
                )));
            }
        }
        if let Some(t1) = &self.theorem1 {
            if !(t1.eps > 0.0 && t1.eps < 1.0 / 3.0) {
                return Err(ConfigError(format!(
                    "theorem1.eps must lie strictly between 0 and 1/3 (got {})",
                    t1.eps
                )));
            }
        }
        if let Some(t2) = &self.theorem2 {
            if !(t2.eps > 0.0 && t2.eps < 1.0) {
                return Err(ConfigError(format!(
                    "theorem2.eps must lie strictly between 0 and 1 (got {})",
                    t2.eps
                )));
            }
            if !(t2.c > 0.0 && t2.c < 1.0) {
                return Err(ConfigError(format!(
                    "theorem2.c must lie strictly between 0 and 1 (got {})",
                    t2.c
                )));
            }
        }
        if let Some(t3) = &self.theorem3 {
            if !(t3.eps > 0.0 && t3.eps < 1.0) {
                return Err(ConfigError(format!(
                    "theorem3.eps must lie strictly between 0 and 1 (got {})",
                    t3.eps
                )));
            }
            if let Some(g) = t3.grid_growth {
                if !(g.is_finite() && g > 1.0) {
                    return Err(ConfigError(format!(
                        "theorem3.grid_growth must be a finite number above 1 (got {g})"
                    )));
                }
            }
            if t3.height_factor == Some(0) {
                return Err(ConfigError(
                    "theorem3.height_factor must be at least 1".into(),
                ));
            }
        }
        if let Some(cc) = &self.core_checks {
            if cc.max_horizon == Some(0) {
                return Err(ConfigError("core_checks.max_horizon must be at least 1".into()));
            }
            if cc.random_observables == Some(0) {
                return Err(ConfigError(
                    "core_checks.random_observables must be at least 1".into(),
                ));
            }
        }
        if let Some(rs) = &self.rate_scan {
            if rs.max_index == 0 {
                return Err(ConfigError("rate_scan.max_index must be at least 1".into()));
            }
            if rs.points == Some(0) || rs.points == Some(1) {
                return Err(ConfigError(
                    "rate_scan.points must be at least 2 when given".into(),
                ));
            }
        }
        for (name, file) in [
            ("output.report", &self.output.report),
            ("output.certificates", &self.output.certificates),
            ("output.plotdata", &self.output.plotdata),
        ] {
            if file.is_empty() {
                return Err(ConfigError(format!("{name} must not be empty")));
            }
        }
        Ok(())
    }

    fn validate_system(&self) -> Result<(), ConfigError> {
        let sys = &self.system;
        let delta = sys.delta();
        if !(delta.is_finite() && delta > 0.0) {
            return Err(ConfigError(format!(
                "system.delta must be finite and positive (got {delta})"
            )));
        }
        match sys.model {
            Model::Cyclic => {
                let size = sys
                    .size
                    .ok_or_else(|| ConfigError("system.size is required for model = \"cyclic\"".into()))?;
                if size < 2 {
                    return Err(ConfigError(format!(
                        "system.size must be at least 2 (got {size})"
                    )));
                }
            }
            Model::Odometer => {
                let base = sys
                    .base
                    .ok_or_else(|| ConfigError("system.base is required for model = \"odometer\"".into()))?;
                let digits = sys.digits.ok_or_else(|| {
                    ConfigError("system.digits is required for model = \"odometer\"".into())
                })?;
                if base < 2 {
                    return Err(ConfigError(format!(
                        "system.base must be at least 2 (got {base})"
                    )));
                }
                if digits == 0 {
                    return Err(ConfigError("system.digits must be at least 1".into()));
                }
            }
            Model::Torus => {
                let side = sys
                    .side
                    .ok_or_else(|| ConfigError("system.side is required for model = \"torus\"".into()))?;
                if side < 2 {
                    return Err(ConfigError(format!(
                        "system.side must be at least 2 (got {side})"
                    )));
                }
                if sys.dim() == 0 {
                    return Err(ConfigError("system.dim must be at least 1".into()));
                }
            }
        }
        Ok(())
    }

    pub fn require_rates(&self) -> Result<&RatesConfig, ConfigError> {
        self.rates
            .as_ref()
            .ok_or_else(|| ConfigError("the [rates] section is required by this subcommand".into()))
    }

    pub fn require_observable(&self) -> Result<&ObservableConfig, ConfigError> {
        self.observable.as_ref().ok_or_else(|| {
            ConfigError("the [observable] section is required by this subcommand".into())
        })
    }

    pub fn require_aprime(&self) -> Result<&AprimeConfig, ConfigError> {
        self.aprime
            .as_ref()
            .ok_or_else(|| ConfigError("the [aprime] section is required by this subcommand".into()))
    }

    pub fn require_theorem1(&self) -> Result<&Theorem1Config, ConfigError> {
        self.theorem1.as_ref().ok_or_else(|| {
            ConfigError("the [theorem1] section is required by this subcommand".into())
        })
    }

    pub fn require_theorem2(&self) -> Result<&Theorem2Config, ConfigError> {
        self.theorem2.as_ref().ok_or_else(|| {
            ConfigError("the [theorem2] section is required by this subcommand".into())
        })
    }

    pub fn require_theorem3(&self) -> Result<&Theorem3Config, ConfigError> {
        self.theorem3.as_ref().ok_or_else(|| {
            ConfigError("the [theorem3] section is required by this subcommand".into())
        })
    }

    pub fn require_rate_scan(&self) -> Result<&RateScanConfig, ConfigError> {
        self.rate_scan.as_ref().ok_or_else(|| {
            ConfigError("the [rate_scan] section is required by this subcommand".into())
        })
    }
}

fn validate_rates(rates: &RatesConfig) -> Result<(), ConfigError> {
    match rates.kind {
        RateKind::Power | RateKind::Logpow => {
            let alpha = rates.alpha.ok_or_else(|| {
                ConfigError("rates.alpha is required for power and logpow rates".into())
            })?;
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(ConfigError(format!(
                    "rates.alpha must be finite and positive (got {alpha})"
                )));
            }
        }
        RateKind::Table => {
            let values = rates
                .values
                .as_ref()
                .ok_or_else(|| ConfigError("rates.values is required for table rates".into()))?;
            if values.is_empty() {
                return Err(ConfigError("rates.values must not be empty".into()));
            }
            if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(ConfigError(format!(
                    "rates.values must all be finite and positive (found {bad})"
                )));
            }
        }
    }
    Ok(())
}

fn validate_observable(obs: &ObservableConfig) -> Result<(), ConfigError> {
    if let Some(v) = obs.value {
        if !v.is_finite() {
            return Err(ConfigError(format!(
                "observable.value must be finite (got {v})"
            )));
        }
    }
    if let Some(fr) = obs.fraction {
        if !(fr > 0.0 && fr <= 1.0) {
            return Err(ConfigError(format!(
                "observable.fraction must lie in (0, 1] (got {fr})"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Config, ConfigError> {
        let config: Config =
            toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    #[test]
    fn a_minimal_cyclic_config_parses_with_defaults() {
        let config = parse("[system]\nmodel = \"cyclic\"\nsize = 8\n").unwrap();
        assert_eq!(config.seed, 0);
        assert_eq!(config.eta, slowconv::DEFAULT_ETA);
        assert_eq!(config.system.delta(), 1.0);
        assert_eq!(config.output.report, "report.txt");
    }

    #[test]
    fn an_oversized_theorem1_budget_is_rejected_naming_the_bound() {
        let err = parse(
            "[system]\nmodel = \"cyclic\"\nsize = 8\n[theorem1]\neps = 0.5\ncount = 1\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("1/3"), "message: {err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse("[system]\nmodel = \"cyclic\"\nsize = 8\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "message: {err}");
    }

    #[test]
    fn missing_model_fields_are_named() {
        let err = parse("[system]\nmodel = \"odometer\"\n").unwrap_err();
        assert!(err.to_string().contains("system.base"), "message: {err}");
    }

    #[test]
    fn table_rates_must_be_positive() {
        let err = parse(
            "[system]\nmodel = \"cyclic\"\nsize = 8\n[rates]\nkind = \"table\"\nvalues = [0.5, -1.0]\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("positive"), "message: {err}");
    }
}
