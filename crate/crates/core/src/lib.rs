//! Portfolio construction and price forecasting over daily close prices.
//!
//! The pipeline: ingest close prices from long-format CSV, compute per-stock
//! return/volatility statistics and cross-stock covariance, sample random
//! portfolios to trace the efficient frontier, pick the minimum-risk and
//! maximum-Sharpe portfolios, forecast next-day closes with a from-scratch
//! LSTM, and value the resulting holdings over a hold-out window.

pub mod analytics;
pub mod backtest;
pub mod forecaster;
pub mod ingest;
pub mod optimizer;

pub use analytics::{CovarianceMatrix, ReturnMatrix, ReturnSeries, StockStats};
pub use backtest::{BacktestReport, Holding};
pub use forecaster::{LstmModel, ModelConfig, TrainHistory, WindowedDataset};
pub use ingest::{AlignedPanel, PriceBar, PriceSeries};
pub use optimizer::{FrontierResult, PortfolioCandidate, WeightVector};
