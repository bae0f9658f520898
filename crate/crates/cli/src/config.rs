//! Run configuration: a TOML file with defaults matching the standard
//! five-year training / five-month hold-out study, plus CLI overrides.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use portopt::analytics::AnnualReturnMethod;
use portopt::forecaster::ModelConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub universe: UniverseSection,
    #[serde(default)]
    pub dates: DatesSection,
    #[serde(default)]
    pub portfolio: PortfolioSection,
    #[serde(default)]
    pub forecaster: ForecasterSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub prices_csv: String,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
}

fn default_out_dir() -> String {
    "out".into()
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            prices_csv: String::new(),
            out_dir: default_out_dir(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniverseSection {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub tickers: Vec<String>,
    /// When set, the ticker list must have exactly this many entries.
    #[serde(default)]
    pub portfolio_size: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatesSection {
    #[serde(default = "default_train_start")]
    pub train_start: String,
    #[serde(default = "default_train_end")]
    pub train_end: String,
    #[serde(default = "default_holdout_start")]
    pub holdout_start: String,
    #[serde(default = "default_horizon")]
    pub horizon: String,
}

fn default_train_start() -> String {
    "2016-01-01".into()
}
fn default_train_end() -> String {
    "2020-12-31".into()
}
fn default_holdout_start() -> String {
    "2021-01-01".into()
}
fn default_horizon() -> String {
    "2021-06-01".into()
}

impl Default for DatesSection {
    fn default() -> Self {
        Self {
            train_start: default_train_start(),
            train_end: default_train_end(),
            holdout_start: default_holdout_start(),
            horizon: default_horizon(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioSection {
    #[serde(default = "default_capital")]
    pub capital: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_risk_free")]
    pub risk_free: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// `per_year_mean` or `global_mean`.
    #[serde(default = "default_annual_return_method")]
    pub annual_return_method: String,
    /// Which optimized portfolio the backtest invests in: `opt_risk`,
    /// `min_risk`, or `equal_weight`.
    #[serde(default = "default_backtest_weights")]
    pub backtest_weights: String,
}

fn default_capital() -> f64 {
    100_000.0
}
fn default_samples() -> usize {
    10_000
}
fn default_risk_free() -> f64 {
    0.01
}
fn default_seed() -> u64 {
    42
}
fn default_annual_return_method() -> String {
    "per_year_mean".into()
}
fn default_backtest_weights() -> String {
    "opt_risk".into()
}

impl Default for PortfolioSection {
    fn default() -> Self {
        Self {
            capital: default_capital(),
            samples: default_samples(),
            risk_free: default_risk_free(),
            seed: default_seed(),
            annual_return_method: default_annual_return_method(),
            backtest_weights: default_backtest_weights(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecasterSection {
    #[serde(flatten)]
    pub model: ModelConfig,
    #[serde(default = "default_split_fraction")]
    pub split_fraction: f64,
}

fn default_split_fraction() -> f64 {
    0.8
}

impl Default for ForecasterSection {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            split_fraction: default_split_fraction(),
        }
    }
}

/// Which optimized portfolio the backtest invests in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightChoice {
    MinRisk,
    OptRisk,
    EqualWeight,
}

/// Validated configuration with every path and date resolved, plus the hash
/// that stamps output artifacts.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub prices_csv: PathBuf,
    pub out_dir: PathBuf,
    pub universe_name: String,
    pub tickers: Vec<String>,
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub holdout_start: NaiveDate,
    pub horizon: NaiveDate,
    pub capital: f64,
    pub samples: usize,
    pub risk_free: f64,
    pub seed: u64,
    pub annual_return_method: AnnualReturnMethod,
    pub backtest_weights: WeightChoice,
    pub model: ModelConfig,
    pub split_fraction: f64,
    pub config_hash: String,
}

fn parse_date(field: &str, value: &str) -> Result<NaiveDate, CliError> {
    NaiveDate::parse_from_str(value, "%Y-%m-%d")
        .map_err(|_| CliError::Config(format!("dates.{field}: `{value}` is not YYYY-MM-DD")))
}

/// Loads, overrides, validates, and hashes a configuration file.
pub fn load(
    path: &Path,
    seed_override: Option<u64>,
    out_override: Option<&Path>,
) -> Result<ResolvedConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut raw: RawConfig =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;

    if let Some(seed) = seed_override {
        raw.portfolio.seed = seed;
        raw.forecaster.model.seed = seed;
    }
    if let Some(out) = out_override {
        raw.data.out_dir = out.display().to_string();
    }
    resolve(&raw)
}

/// Validates a parsed configuration and computes its hash.
pub fn resolve(raw: &RawConfig) -> Result<ResolvedConfig, CliError> {
    if raw.data.prices_csv.is_empty() {
        return Err(CliError::Config("data.prices_csv: required".into()));
    }

    if raw.universe.tickers.is_empty() {
        return Err(CliError::Config("universe.tickers: at least one required".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for t in &raw.universe.tickers {
        if !seen.insert(t) {
            return Err(CliError::Config(format!(
                "universe.tickers: duplicate ticker {t}"
            )));
        }
    }
    if let Some(size) = raw.universe.portfolio_size {
        if raw.universe.tickers.len() != size {
            return Err(CliError::Config(format!(
                "universe.portfolio_size: expected exactly {size} tickers, got {}",
                raw.universe.tickers.len()
            )));
        }
    }

    let train_start = parse_date("train_start", &raw.dates.train_start)?;
    let train_end = parse_date("train_end", &raw.dates.train_end)?;
    let holdout_start = parse_date("holdout_start", &raw.dates.holdout_start)?;
    let horizon = parse_date("horizon", &raw.dates.horizon)?;
    if train_start >= train_end {
        return Err(CliError::Config(format!(
            "dates.train_end: training range {train_start}..{train_end} is empty"
        )));
    }
    if train_end >= holdout_start {
        return Err(CliError::Config(format!(
            "dates.holdout_start: {holdout_start} must follow train_end {train_end}"
        )));
    }
    if horizon <= holdout_start {
        return Err(CliError::Config(format!(
            "dates.horizon: {horizon} must follow holdout_start {holdout_start}"
        )));
    }

    if raw.portfolio.capital <= 0.0 || !raw.portfolio.capital.is_finite() {
        return Err(CliError::Config(format!(
            "portfolio.capital: {} must be positive",
            raw.portfolio.capital
        )));
    }
    if raw.portfolio.samples == 0 {
        return Err(CliError::Config("portfolio.samples: must be >= 1".into()));
    }
    if !raw.portfolio.risk_free.is_finite() {
        return Err(CliError::Config("portfolio.risk_free: must be finite".into()));
    }
    let annual_return_method = match raw.portfolio.annual_return_method.as_str() {
        "per_year_mean" => AnnualReturnMethod::PerYearMean,
        "global_mean" => AnnualReturnMethod::GlobalMean,
        other => {
            return Err(CliError::Config(format!(
                "portfolio.annual_return_method: `{other}` is not per_year_mean | global_mean"
            )))
        }
    };
    let backtest_weights = match raw.portfolio.backtest_weights.as_str() {
        "min_risk" => WeightChoice::MinRisk,
        "opt_risk" => WeightChoice::OptRisk,
        "equal_weight" => WeightChoice::EqualWeight,
        other => {
            return Err(CliError::Config(format!(
                "portfolio.backtest_weights: `{other}` is not opt_risk | min_risk | equal_weight"
            )))
        }
    };

    if !(raw.forecaster.split_fraction > 0.0 && raw.forecaster.split_fraction < 1.0) {
        return Err(CliError::Config(format!(
            "forecaster.split_fraction: {} outside (0, 1)",
            raw.forecaster.split_fraction
        )));
    }
    raw.forecaster
        .model
        .validate()
        .map_err(|e| CliError::Config(format!("forecaster: {e}")))?;

    let canonical = serde_json::to_string(raw)
        .map_err(|e| CliError::Config(format!("cannot canonicalize config: {e}")))?;
    let digest = Sha256::digest(canonical.as_bytes());
    let config_hash: String = digest.iter().map(|b| format!("{b:02x}")).collect();

    Ok(ResolvedConfig {
        prices_csv: PathBuf::from(&raw.data.prices_csv),
        out_dir: PathBuf::from(&raw.data.out_dir),
        universe_name: if raw.universe.name.is_empty() {
            "portfolio".into()
        } else {
            raw.universe.name.clone()
        },
        tickers: raw.universe.tickers.clone(),
        train_start,
        train_end,
        holdout_start,
        horizon,
        capital: raw.portfolio.capital,
        samples: raw.portfolio.samples,
        risk_free: raw.portfolio.risk_free,
        seed: raw.portfolio.seed,
        annual_return_method,
        backtest_weights,
        model: raw.forecaster.model.clone(),
        split_fraction: raw.forecaster.split_fraction,
        config_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_toml() -> String {
        r#"
[data]
prices_csv = "prices.csv"

[universe]
name = "test"
tickers = ["AAA", "BBB"]

[dates]
train_start = "2020-01-01"
train_end = "2020-12-31"
holdout_start = "2021-01-01"
horizon = "2021-03-01"
"#
        .to_string()
    }

    fn parse(text: &str) -> Result<ResolvedConfig, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        resolve(&raw)
    }

    #[test]
    fn defaults_fill_portfolio_and_forecaster() {
        let cfg = parse(&base_toml()).unwrap();
        assert_eq!(cfg.capital, 100_000.0);
        assert_eq!(cfg.samples, 10_000);
        assert_eq!(cfg.risk_free, 0.01);
        assert_eq!(cfg.model.lookback, 50);
        assert_eq!(cfg.model.lstm_units, 256);
        assert_eq!(cfg.model.epochs, 100);
        assert_eq!(cfg.split_fraction, 0.8);
        assert_eq!(cfg.backtest_weights, WeightChoice::OptRisk);
    }

    #[test]
    fn horizon_before_holdout_is_config_error() {
        let text = base_toml().replace("2021-03-01", "2020-12-15");
        let err = parse(&text).unwrap_err();
        assert!(matches!(err, CliError::Config(_)), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn train_end_after_holdout_is_config_error() {
        let text = base_toml().replace("2020-12-31", "2021-02-01");
        assert!(parse(&text).is_err());
    }

    #[test]
    fn duplicate_tickers_rejected() {
        let text = base_toml().replace("[\"AAA\", \"BBB\"]", "[\"AAA\", \"AAA\"]");
        let err = parse(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn portfolio_size_must_match() {
        let text = base_toml() + "\n[universe.extra]\n";
        assert!(parse(&text).is_err()); // unknown field

        let mut text = base_toml();
        text = text.replace("tickers = [\"AAA\", \"BBB\"]", "tickers = [\"AAA\", \"BBB\"]\nportfolio_size = 5");
        let err = parse(&text).unwrap_err();
        assert!(err.to_string().contains("exactly 5"), "{err}");
    }

    #[test]
    fn hash_is_deterministic_and_seed_sensitive() {
        let raw: RawConfig = toml::from_str(&base_toml()).unwrap();
        let a = resolve(&raw).unwrap();
        let b = resolve(&raw).unwrap();
        assert_eq!(a.config_hash, b.config_hash);

        let mut raw2 = raw.clone();
        raw2.portfolio.seed = 7;
        let c = resolve(&raw2).unwrap();
        assert_ne!(a.config_hash, c.config_hash);
    }

    #[test]
    fn forecaster_overrides_parse() {
        let text = base_toml()
            + r#"
[forecaster]
lookback = 10
lstm_units = 8
epochs = 5
split_fraction = 0.75
"#;
        let cfg = parse(&text).unwrap();
        assert_eq!(cfg.model.lookback, 10);
        assert_eq!(cfg.model.lstm_units, 8);
        assert_eq!(cfg.model.epochs, 5);
        assert_eq!(cfg.split_fraction, 0.75);
        // Untouched fields keep their defaults.
        assert_eq!(cfg.model.dropout_rate, 0.3);
    }

    #[test]
    fn bad_method_strings_are_config_errors() {
        let text = base_toml()
            + r#"
[portfolio]
annual_return_method = "median"
"#;
        assert!(parse(&text).is_err());
    }
}
