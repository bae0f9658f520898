//! The eight pipeline commands. Each is idempotent for fixed inputs and
//! seed, reads upstream artifacts from the output directory, and writes its
//! own artifacts atomically.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use portopt::analytics::{
    self, covariance_matrix, correlation_matrix, CovarianceMatrix, ReturnMatrix,
};
use portopt::backtest::{self, BacktestReport, PriceMap};
use portopt::forecaster::{self, load_checkpoint, save_checkpoint, ModelConfig};
use portopt::ingest::{self, AlignedPanel, PriceSeries};
use portopt::optimizer::{
    equal_weight, max_sharpe_portfolio, min_risk_portfolio, monte_carlo_frontier,
    PortfolioCandidate, WeightVector,
};

use crate::artifacts::{
    read_required, write_atomic, write_csv_artifact, write_json_artifact, Meta, Paths,
};
use crate::config::{ResolvedConfig, WeightChoice};
use crate::error::CliError;

/// Loads the raw prices file, restricts it to the configured universe and
/// date span, and writes the canonical cache CSV.
pub fn cmd_ingest(cfg: &ResolvedConfig) -> Result<(), CliError> {
    let all = ingest::load_csv(&cfg.prices_csv)?;
    let mut selected = Vec::with_capacity(cfg.tickers.len());
    for ticker in &cfg.tickers {
        let series = all
            .iter()
            .find(|s| s.ticker() == ticker)
            .ok_or_else(|| {
                CliError::Data(format!(
                    "ticker {ticker} not present in {}",
                    cfg.prices_csv.display()
                ))
            })?
            .slice_dates(cfg.train_start, cfg.horizon);
        if series.len() < 2 {
            return Err(CliError::Data(format!(
                "ticker {ticker}: fewer than 2 bars inside {}..{}",
                cfg.train_start, cfg.horizon
            )));
        }
        selected.push(series);
    }

    let paths = Paths::new(cfg);
    let text = ingest::to_csv_string(&selected);
    write_csv_artifact(&paths.cache_csv(), &text, &Meta::of(cfg))?;
    let rows: usize = selected.iter().map(|s| s.len()).sum();
    println!(
        "wrote {} ({} tickers, {rows} rows)",
        paths.cache_csv().display(),
        selected.len()
    );
    Ok(())
}

/// Reads the cache written by `ingest`, in configured ticker order.
fn load_cache(cfg: &ResolvedConfig) -> Result<Vec<PriceSeries>, CliError> {
    let paths = Paths::new(cfg);
    let text = read_required(&paths.cache_csv(), "ingest")?;
    let all = ingest::parse_csv(&text)?;
    cfg.tickers
        .iter()
        .map(|ticker| {
            all.iter()
                .find(|s| s.ticker() == ticker)
                .cloned()
                .ok_or_else(|| {
                    CliError::Data(format!(
                        "ticker {ticker} missing from cache; run `portopt ingest` again"
                    ))
                })
        })
        .collect()
}

/// Aligned panel over the training range.
fn train_panel(cfg: &ResolvedConfig) -> Result<AlignedPanel, CliError> {
    let series: Vec<PriceSeries> = load_cache(cfg)?
        .iter()
        .map(|s| s.slice_dates(cfg.train_start, cfg.train_end))
        .collect();
    Ok(ingest::align(&series)?)
}

/// Per-ticker expected annual returns and the annualized covariance matrix
/// from the training panel.
fn frontier_inputs(
    cfg: &ResolvedConfig,
    panel: &AlignedPanel,
) -> Result<(Vec<f64>, CovarianceMatrix), CliError> {
    let rm = ReturnMatrix::from_panel(panel)?;
    let expected: Vec<f64> = (0..rm.n())
        .map(|i| analytics::annual_return_with(&rm.row_series(i), cfg.annual_return_method))
        .collect::<Result<_, _>>()?;
    let cov_annual = covariance_matrix(&rm)?.annualized();
    Ok((expected, cov_annual))
}

fn square_matrix_csv(m: &CovarianceMatrix) -> String {
    let mut out = String::from("ticker");
    for t in &m.tickers {
        let _ = write!(out, ",{t}");
    }
    out.push('\n');
    for (i, t) in m.tickers.iter().enumerate() {
        let _ = write!(out, "{t}");
        for j in 0..m.n() {
            let _ = write!(out, ",{}", m.get(i, j));
        }
        out.push('\n');
    }
    out
}

/// Per-ticker stats plus the daily covariance and correlation matrices.
pub fn cmd_stats(cfg: &ResolvedConfig) -> Result<(), CliError> {
    let panel = train_panel(cfg)?;
    let rm = ReturnMatrix::from_panel(&panel)?;

    let mut stats_csv = String::from("ticker,daily_vol,annual_vol,annual_return\n");
    for i in 0..rm.n() {
        let series = rm.row_series(i);
        let daily_vol = analytics::daily_volatility(&series)?;
        let annual_vol = analytics::annualize_volatility(daily_vol)?;
        let annual_return = analytics::annual_return_with(&series, cfg.annual_return_method)?;
        let _ = writeln!(
            stats_csv,
            "{},{daily_vol},{annual_vol},{annual_return}",
            rm.tickers[i]
        );
    }

    let paths = Paths::new(cfg);
    let meta = Meta::of(cfg);
    write_csv_artifact(&paths.stats_csv(), &stats_csv, &meta)?;
    write_csv_artifact(
        &paths.covariance_csv(),
        &square_matrix_csv(&covariance_matrix(&rm)?),
        &meta,
    )?;
    write_csv_artifact(
        &paths.correlation_csv(),
        &square_matrix_csv(&correlation_matrix(&rm)?),
        &meta,
    )?;
    println!(
        "wrote {} {} {}",
        paths.stats_csv().display(),
        paths.covariance_csv().display(),
        paths.correlation_csv().display()
    );
    Ok(())
}

/// Samples the efficient-frontier cloud and writes one row per candidate.
pub fn cmd_frontier(cfg: &ResolvedConfig) -> Result<(), CliError> {
    let panel = train_panel(cfg)?;
    let (expected, cov) = frontier_inputs(cfg, &panel)?;
    let frontier = monte_carlo_frontier(&expected, &cov, cfg.samples, cfg.risk_free, cfg.seed)?;

    let mut csv = String::from("sample_id,annual_return,annual_vol,sharpe");
    for t in panel.tickers() {
        let _ = write!(csv, ",w_{t}");
    }
    csv.push('\n');
    for (i, c) in frontier.candidates.iter().enumerate() {
        let _ = write!(csv, "{i},{},{},{}", c.annual_return, c.annual_vol, c.sharpe);
        for w in c.weights.as_slice() {
            let _ = write!(csv, ",{w}");
        }
        csv.push('\n');
    }

    let paths = Paths::new(cfg);
    write_csv_artifact(&paths.frontier_csv(), &csv, &Meta::of(cfg))?;
    println!(
        "wrote {} ({} candidates)",
        paths.frontier_csv().display(),
        frontier.candidates.len()
    );
    Ok(())
}

/// One optimized portfolio in the artifact file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PortfolioEntry {
    pub weights: BTreeMap<String, f64>,
    pub annual_return_pct: f64,
    pub annual_risk_pct: f64,
    pub sharpe: f64,
}

impl PortfolioEntry {
    fn from_candidate(c: &PortfolioCandidate, tickers: &[String]) -> Self {
        Self {
            weights: tickers
                .iter()
                .cloned()
                .zip(c.weights.as_slice().iter().copied())
                .collect(),
            annual_return_pct: c.annual_return * 100.0,
            annual_risk_pct: c.annual_vol * 100.0,
            sharpe: c.sharpe,
        }
    }
}

/// The `optimize` output artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PortfolioFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta: Option<Meta>,
    pub universe: String,
    pub tickers: Vec<String>,
    pub risk_free: f64,
    pub samples: usize,
    pub seed: u64,
    pub min_risk: PortfolioEntry,
    pub opt_risk: PortfolioEntry,
}

/// Picks the minimum-risk and maximum-Sharpe portfolios from a fresh
/// frontier run and writes the portfolio artifact.
pub fn cmd_optimize(cfg: &ResolvedConfig) -> Result<(), CliError> {
    let panel = train_panel(cfg)?;
    let (expected, cov) = frontier_inputs(cfg, &panel)?;
    let frontier = monte_carlo_frontier(&expected, &cov, cfg.samples, cfg.risk_free, cfg.seed)?;
    let min_risk = min_risk_portfolio(&frontier)?;
    let opt_risk = max_sharpe_portfolio(&frontier)?;

    let file = PortfolioFile {
        meta: Some(Meta::of(cfg)),
        universe: cfg.universe_name.clone(),
        tickers: panel.tickers().to_vec(),
        risk_free: cfg.risk_free,
        samples: cfg.samples,
        seed: cfg.seed,
        min_risk: PortfolioEntry::from_candidate(min_risk, panel.tickers()),
        opt_risk: PortfolioEntry::from_candidate(opt_risk, panel.tickers()),
    };
    let paths = Paths::new(cfg);
    write_json_artifact(&paths.portfolio_json(), &file)?;
    println!(
        "wrote {} (min_risk vol {:.4}, opt_risk sharpe {:.4})",
        paths.portfolio_json().display(),
        min_risk.annual_vol,
        opt_risk.sharpe
    );
    Ok(())
}

/// Per-ticker model seed: offset the run seed by the ticker's position so
/// models differ but stay reproducible.
fn ticker_model_config(cfg: &ResolvedConfig, index: usize) -> ModelConfig {
    ModelConfig {
        seed: cfg.seed.wrapping_add(index as u64),
        ..cfg.model.clone()
    }
}

/// Trains one model per ticker on the training range and writes checkpoints
/// plus per-epoch history CSVs.
pub fn cmd_train(cfg: &ResolvedConfig) -> Result<(), CliError> {
    let series = load_cache(cfg)?;
    let paths = Paths::new(cfg);
    let meta = Meta::of(cfg);
    for (i, s) in series.iter().enumerate() {
        let train_series = s.slice_dates(cfg.train_start, cfg.train_end);
        let data = forecaster::window(&train_series, cfg.model.lookback, cfg.split_fraction)?;
        let model_cfg = ticker_model_config(cfg, i);
        let (model, history) = forecaster::train(&data, &model_cfg)?;

        let ckpt = paths.checkpoint(s.ticker());
        if let Some(parent) = ckpt.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
        }
        let tmp = ckpt.with_extension("tmp");
        save_checkpoint(&model, &tmp)?;
        std::fs::rename(&tmp, &ckpt)
            .map_err(|e| CliError::Data(format!("cannot rename into {}: {e}", ckpt.display())))?;
        write_atomic(
            &crate::artifacts::sidecar_path(&ckpt),
            format!(
                "{}\n",
                serde_json::to_string_pretty(&meta)
                    .map_err(|e| CliError::Data(e.to_string()))?
            )
            .as_bytes(),
        )?;
        write_csv_artifact(&paths.history_csv(s.ticker()), &history.to_csv(), &meta)?;

        let last = history.epochs.last().expect("at least one epoch");
        let span = model.scaler.max - model.scaler.min;
        println!(
            "trained {} ({} epochs): val_mae {:.6} scaled / {:.4} price units -> {}",
            s.ticker(),
            history.epochs.len(),
            last.val_mae,
            last.val_mae * span,
            ckpt.display()
        );
    }
    Ok(())
}

/// Predicts each ticker's close for the horizon date from the last
/// `lookback` cached closes before it.
pub fn cmd_predict(cfg: &ResolvedConfig) -> Result<(), CliError> {
    let series = load_cache(cfg)?;
    let paths = Paths::new(cfg);

    let mut csv = String::from("ticker,date,predicted_close\n");
    for s in &series {
        let ckpt_path = paths.checkpoint(s.ticker());
        if !ckpt_path.exists() {
            return Err(CliError::missing_artifact(&ckpt_path, "train"));
        }
        let model = load_checkpoint(&ckpt_path)?;
        let closes: Vec<f64> = s
            .bars()
            .iter()
            .filter(|b| b.date < cfg.horizon)
            .map(|b| b.close)
            .collect();
        if closes.len() < model.config.lookback {
            return Err(CliError::Data(format!(
                "ticker {}: only {} closes before {}, need {}",
                s.ticker(),
                closes.len(),
                cfg.horizon,
                model.config.lookback
            )));
        }
        let window = &closes[closes.len() - model.config.lookback..];
        let predicted = model.predict_horizon(window, model.config.horizon)?;
        let _ = writeln!(csv, "{},{},{predicted}", s.ticker(), cfg.horizon);
    }

    write_csv_artifact(&paths.predicted_csv(), &csv, &Meta::of(cfg))?;
    println!("wrote {}", paths.predicted_csv().display());
    Ok(())
}

/// Parses the `ticker,date,predicted_close` artifact into a price map.
fn parse_predicted_csv(text: &str, path: &Path) -> Result<PriceMap, CliError> {
    let mut lines = text.lines();
    match lines.next() {
        Some("ticker,date,predicted_close") => {}
        other => {
            return Err(CliError::Data(format!(
                "{}: expected header `ticker,date,predicted_close`, got {:?}",
                path.display(),
                other.unwrap_or("")
            )))
        }
    }
    let mut map = PriceMap::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(CliError::Data(format!(
                "{} line {}: expected 3 fields",
                path.display(),
                i + 2
            )));
        }
        let price: f64 = fields[2].trim().parse().map_err(|_| {
            CliError::Data(format!(
                "{} line {}: unparsable price `{}`",
                path.display(),
                i + 2,
                fields[2]
            ))
        })?;
        map.insert(fields[0].trim().to_string(), price);
    }
    Ok(map)
}

/// The `backtest` output artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestArtifact {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta: Option<Meta>,
    pub entry_date: String,
    pub horizon_date: String,
    #[serde(flatten)]
    pub report: BacktestReport,
}

/// Values the chosen optimized portfolio over the hold-out window under
/// actual prices and, when a predictions artifact exists, predicted prices.
pub fn cmd_backtest(cfg: &ResolvedConfig, predicted: Option<&Path>) -> Result<(), CliError> {
    let paths = Paths::new(cfg);
    let text = read_required(&paths.portfolio_json(), "optimize")?;
    let portfolio: PortfolioFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", paths.portfolio_json().display())))?;

    let weights = match cfg.backtest_weights {
        WeightChoice::EqualWeight => equal_weight(cfg.tickers.len())?,
        choice => {
            let entry = match choice {
                WeightChoice::MinRisk => &portfolio.min_risk,
                _ => &portfolio.opt_risk,
            };
            let values: Vec<f64> = cfg
                .tickers
                .iter()
                .map(|t| {
                    entry.weights.get(t).copied().ok_or_else(|| {
                        CliError::Data(format!(
                            "ticker {t} missing from {}",
                            paths.portfolio_json().display()
                        ))
                    })
                })
                .collect::<Result<_, _>>()?;
            WeightVector::new(values)?
        }
    };

    // Hold-out price panel: entry at the first trading date on or after the
    // hold-out start, horizon at the last trading date on or before the
    // horizon date.
    let series = load_cache(cfg)?;
    let panel = ingest::align(&series)?.slice_dates(cfg.holdout_start, cfg.horizon)?;
    let entry_date = panel.dates()[0];
    let horizon_date = *panel.dates().last().unwrap();
    let entry_prices: PriceMap = panel
        .tickers()
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), panel.row(i)[0]))
        .collect();
    let actual_prices: PriceMap = panel
        .tickers()
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), *panel.row(i).last().unwrap()))
        .collect();

    let predicted_map = match predicted {
        Some(path) => {
            let text = read_required(path, "predict")?;
            Some(parse_predicted_csv(&text, path)?)
        }
        None => {
            let default = paths.predicted_csv();
            if default.exists() {
                let text = read_required(&default, "predict")?;
                Some(parse_predicted_csv(&text, &default)?)
            } else {
                None
            }
        }
    };

    let report = backtest::run_backtest(
        cfg.universe_name.clone(),
        cfg.capital,
        &weights,
        &cfg.tickers,
        &entry_prices,
        &actual_prices,
        predicted_map.as_ref(),
    )?;

    let artifact = BacktestArtifact {
        meta: Some(Meta::of(cfg)),
        entry_date: entry_date.to_string(),
        horizon_date: horizon_date.to_string(),
        report,
    };
    write_json_artifact(&paths.backtest_json(), &artifact)?;
    println!(
        "entry {entry_date} -> horizon {horizon_date}\n{}",
        backtest::render_table(&artifact.report)
    );
    println!("wrote {}", paths.backtest_json().display());
    Ok(())
}

/// Aggregates backtest reports into the actual-vs-predicted summary CSV.
pub fn cmd_summary(cfg: &ResolvedConfig, reports: &[PathBuf]) -> Result<(), CliError> {
    if reports.is_empty() {
        return Err(CliError::Config(
            "summary: at least one backtest report path required".into(),
        ));
    }
    let mut parsed = Vec::with_capacity(reports.len());
    for path in reports {
        let text = read_required(path, "backtest")?;
        let artifact: BacktestArtifact = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        parsed.push(artifact.report);
    }
    let rows = backtest::summary(&parsed)?;

    let mut csv = String::from("portfolio,actual_return_pct,predicted_return_pct\n");
    for row in &rows {
        let predicted = row
            .predicted_return_pct
            .map_or(String::new(), |v| v.to_string());
        let _ = writeln!(csv, "{},{},{predicted}", row.portfolio, row.actual_return_pct);
    }
    let paths = Paths::new(cfg);
    write_csv_artifact(&paths.summary_csv(), &csv, &Meta::of(cfg))?;
    for row in &rows {
        println!(
            "{}: actual {:.2}% predicted {}",
            row.portfolio,
            row.actual_return_pct,
            row.predicted_return_pct
                .map_or("-".into(), |v| format!("{v:.2}%"))
        );
    }
    println!("wrote {}", paths.summary_csv().display());
    Ok(())
}
