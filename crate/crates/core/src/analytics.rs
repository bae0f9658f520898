//! Per-stock return and volatility statistics, plus the cross-stock
//! covariance and correlation matrices that feed portfolio construction.
//!
//! Conventions: sample (m-1) denominators everywhere, 250 trading days per
//! year, volatility annualized by sqrt(250) and mean returns by 250.

use chrono::{Datelike, NaiveDate};
use thiserror::Error;

use crate::ingest::{AlignedPanel, PriceSeries};

/// Trading days per calendar year used for annualization.
pub const TRADING_DAYS_PER_YEAR: f64 = 250.0;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("series {0} too short: need at least 2 bars for returns")]
    SeriesTooShort(String),
    #[error("need at least {required} observations, got {actual}")]
    TooFewObservations { required: usize, actual: usize },
    #[error("negative daily volatility {0}")]
    NegativeVolatility(f64),
    #[error("row {0} has zero daily volatility; correlation undefined")]
    ZeroVarianceRow(String),
    #[error("return matrix is empty")]
    EmptyMatrix,
}

/// Whether a return series holds simple (`close[t+1]/close[t] - 1`) or
/// natural-log returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReturnKind {
    Simple,
    Log,
}

/// Daily returns for one ticker, aligned to the later date of each pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    pub ticker: String,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
    pub kind: ReturnKind,
}

impl ReturnSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Daily simple returns for an n-ticker universe over a common date axis.
/// Row i derives from panel row i.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMatrix {
    pub tickers: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<Vec<f64>>,
}

impl ReturnMatrix {
    /// Daily simple returns from an aligned close-price panel.
    pub fn from_panel(panel: &AlignedPanel) -> Result<Self, AnalyticsError> {
        if panel.len() < 2 {
            return Err(AnalyticsError::TooFewObservations {
                required: 2,
                actual: panel.len(),
            });
        }
        let values = panel
            .closes()
            .iter()
            .map(|row| row.windows(2).map(|w| w[1] / w[0] - 1.0).collect())
            .collect();
        Ok(Self {
            tickers: panel.tickers().to_vec(),
            dates: panel.dates()[1..].to_vec(),
            values,
        })
    }

    /// Per-ticker [`ReturnSeries`] view of row `i`.
    pub fn row_series(&self, i: usize) -> ReturnSeries {
        ReturnSeries {
            ticker: self.tickers[i].clone(),
            dates: self.dates.clone(),
            values: self.values[i].clone(),
            kind: ReturnKind::Simple,
        }
    }

    pub fn n(&self) -> usize {
        self.tickers.len()
    }

    pub fn observations(&self) -> usize {
        self.dates.len()
    }
}

/// Symmetric n-by-n matrix of daily-return covariances (fraction^2 units).
/// Also used for the correlation matrix, which shares the shape.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    pub tickers: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl CovarianceMatrix {
    pub fn n(&self) -> usize {
        self.tickers.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    /// Scales daily covariances to annual ones (times 250).
    pub fn annualized(&self) -> Self {
        Self {
            tickers: self.tickers.clone(),
            values: self
                .values
                .iter()
                .map(|row| row.iter().map(|v| v * TRADING_DAYS_PER_YEAR).collect())
                .collect(),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..n).all(|j| self.values[i][j] == self.values[j][i]))
    }
}

/// Per-stock volatility and return statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct StockStats {
    pub ticker: String,
    pub daily_vol: f64,
    pub annual_vol: f64,
    pub annual_return: f64,
}

/// Daily simple returns: `values[t] = close[t+1]/close[t] - 1`.
pub fn daily_returns(prices: &PriceSeries) -> Result<ReturnSeries, AnalyticsError> {
    returns_of_kind(prices, ReturnKind::Simple)
}

/// Daily log returns: `values[t] = ln(close[t+1]/close[t])`.
pub fn log_returns(prices: &PriceSeries) -> Result<ReturnSeries, AnalyticsError> {
    returns_of_kind(prices, ReturnKind::Log)
}

fn returns_of_kind(prices: &PriceSeries, kind: ReturnKind) -> Result<ReturnSeries, AnalyticsError> {
    let bars = prices.bars();
    if bars.len() < 2 {
        return Err(AnalyticsError::SeriesTooShort(prices.ticker().to_string()));
    }
    let values = bars
        .windows(2)
        .map(|w| match kind {
            ReturnKind::Simple => w[1].close / w[0].close - 1.0,
            ReturnKind::Log => (w[1].close / w[0].close).ln(),
        })
        .collect();
    Ok(ReturnSeries {
        ticker: prices.ticker().to_string(),
        dates: bars[1..].iter().map(|b| b.date).collect(),
        values,
        kind,
    })
}

/// Sample standard deviation with an (m-1) denominator.
pub(crate) fn sample_std(values: &[f64]) -> f64 {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (m - 1.0)).sqrt()
}

/// Daily volatility: sample standard deviation of the daily returns.
pub fn daily_volatility(returns: &ReturnSeries) -> Result<f64, AnalyticsError> {
    if returns.len() < 2 {
        return Err(AnalyticsError::TooFewObservations {
            required: 2,
            actual: returns.len(),
        });
    }
    Ok(sample_std(&returns.values))
}

/// Annualizes a daily volatility by sqrt(250).
pub fn annualize_volatility(daily_vol: f64) -> Result<f64, AnalyticsError> {
    if daily_vol < 0.0 {
        return Err(AnalyticsError::NegativeVolatility(daily_vol));
    }
    Ok(daily_vol * TRADING_DAYS_PER_YEAR.sqrt())
}

/// How yearly mean returns are aggregated from daily returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnnualReturnMethod {
    /// Group by calendar year, scale each year's mean daily return by 250,
    /// then average the yearly figures.
    #[default]
    PerYearMean,
    /// Mean daily return over the whole sample, scaled by 250.
    GlobalMean,
}

/// Annualized mean return using the default per-year aggregation.
pub fn annual_return(returns: &ReturnSeries) -> Result<f64, AnalyticsError> {
    annual_return_with(returns, AnnualReturnMethod::PerYearMean)
}

/// Annualized mean return with an explicit aggregation method.
pub fn annual_return_with(
    returns: &ReturnSeries,
    method: AnnualReturnMethod,
) -> Result<f64, AnalyticsError> {
    if returns.len() < 2 {
        return Err(AnalyticsError::TooFewObservations {
            required: 2,
            actual: returns.len(),
        });
    }
    match method {
        AnnualReturnMethod::GlobalMean => {
            let mean = returns.values.iter().sum::<f64>() / returns.len() as f64;
            Ok(mean * TRADING_DAYS_PER_YEAR)
        }
        AnnualReturnMethod::PerYearMean => {
            // Group by calendar year, preserving chronological year order.
            let mut years: Vec<(i32, f64, usize)> = Vec::new();
            for (date, value) in returns.dates.iter().zip(&returns.values) {
                let y = date.year();
                match years.last_mut() {
                    Some(entry) if entry.0 == y => {
                        entry.1 += value;
                        entry.2 += 1;
                    }
                    _ => years.push((y, *value, 1)),
                }
            }
            let yearly: Vec<f64> = years
                .iter()
                .map(|&(_, sum, count)| sum / count as f64 * TRADING_DAYS_PER_YEAR)
                .collect();
            Ok(yearly.iter().sum::<f64>() / yearly.len() as f64)
        }
    }
}

/// Sample covariance matrix (m-1 denominator) of the daily returns.
/// Symmetric by construction: the upper triangle is mirrored exactly.
pub fn covariance_matrix(rm: &ReturnMatrix) -> Result<CovarianceMatrix, AnalyticsError> {
    let n = rm.n();
    if n == 0 {
        return Err(AnalyticsError::EmptyMatrix);
    }
    let m = rm.observations();
    if m < 2 {
        return Err(AnalyticsError::TooFewObservations {
            required: 2,
            actual: m,
        });
    }
    let means: Vec<f64> = rm
        .values
        .iter()
        .map(|row| row.iter().sum::<f64>() / m as f64)
        .collect();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let mut sum = 0.0;
            for t in 0..m {
                sum += (rm.values[i][t] - means[i]) * (rm.values[j][t] - means[j]);
            }
            let cov = sum / (m as f64 - 1.0);
            values[i][j] = cov;
            values[j][i] = cov;
        }
    }
    Ok(CovarianceMatrix {
        tickers: rm.tickers.clone(),
        values,
    })
}

/// Pearson correlation matrix: `cov[i][j] / (sd_i * sd_j)` with an exact unit
/// diagonal. Errors on any zero-variance row.
pub fn correlation_matrix(rm: &ReturnMatrix) -> Result<CovarianceMatrix, AnalyticsError> {
    let cov = covariance_matrix(rm)?;
    let n = cov.n();
    let sd: Vec<f64> = (0..n).map(|i| cov.values[i][i].sqrt()).collect();
    for (i, s) in sd.iter().enumerate() {
        if *s == 0.0 {
            return Err(AnalyticsError::ZeroVarianceRow(rm.tickers[i].clone()));
        }
    }
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        values[i][i] = 1.0;
        for j in (i + 1)..n {
            let r = cov.values[i][j] / (sd[i] * sd[j]);
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CovarianceMatrix {
        tickers: rm.tickers.clone(),
        values,
    })
}

/// Volatility and return statistics for one price series.
pub fn stock_stats(
    prices: &PriceSeries,
    method: AnnualReturnMethod,
) -> Result<StockStats, AnalyticsError> {
    let returns = daily_returns(prices)?;
    let daily_vol = daily_volatility(&returns)?;
    Ok(StockStats {
        ticker: prices.ticker().to_string(),
        daily_vol,
        annual_vol: annualize_volatility(daily_vol)?,
        annual_return: annual_return_with(&returns, method)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::PriceBar;
    use approx::assert_abs_diff_eq;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn prices(closes: &[f64]) -> PriceSeries {
        let bars = closes
            .iter()
            .enumerate()
            .map(|(i, &close)| PriceBar {
                date: d("2020-01-01") + chrono::Duration::days(i as i64),
                close,
            })
            .collect();
        PriceSeries::new("T", bars).unwrap()
    }

    fn rs(values: &[f64]) -> ReturnSeries {
        ReturnSeries {
            ticker: "T".into(),
            dates: (0..values.len())
                .map(|i| d("2020-01-02") + chrono::Duration::days(i as i64))
                .collect(),
            values: values.to_vec(),
            kind: ReturnKind::Simple,
        }
    }

    #[test]
    fn simple_returns_basic_cases() {
        let r = daily_returns(&prices(&[100.0, 110.0])).unwrap();
        assert_abs_diff_eq!(r.values[0], 0.10, epsilon = 1e-12);

        let r = daily_returns(&prices(&[50.0, 50.0, 50.0])).unwrap();
        assert_eq!(r.values, vec![0.0, 0.0]);

        // Hand arithmetic: 110/100 - 1 = 0.10, 99/110 - 1 = -0.10.
        let r = daily_returns(&prices(&[100.0, 110.0, 99.0])).unwrap();
        assert_abs_diff_eq!(r.values[0], 0.10, epsilon = 1e-12);
        assert_abs_diff_eq!(r.values[1], -0.10, epsilon = 1e-12);
    }

    #[test]
    fn returns_align_to_later_date() {
        let r = daily_returns(&prices(&[100.0, 110.0])).unwrap();
        assert_eq!(r.dates, vec![d("2020-01-02")]);
    }

    #[test]
    fn returns_require_two_bars() {
        assert!(matches!(
            daily_returns(&prices(&[100.0])),
            Err(AnalyticsError::SeriesTooShort(_))
        ));
        assert!(matches!(
            log_returns(&prices(&[100.0])),
            Err(AnalyticsError::SeriesTooShort(_))
        ));
    }

    #[test]
    fn log_returns_basic_cases() {
        let r = log_returns(&prices(&[100.0, 100.0])).unwrap();
        assert_eq!(r.values, vec![0.0]);

        let r = log_returns(&prices(&[1.0, std::f64::consts::E])).unwrap();
        assert_abs_diff_eq!(r.values[0], 1.0, epsilon = 1e-12);

        let r = log_returns(&prices(&[100.0, 110.0])).unwrap();
        assert_abs_diff_eq!(r.values[0], 0.0953102, epsilon = 1e-6);
        assert_eq!(r.kind, ReturnKind::Log);
    }

    #[test]
    fn daily_volatility_cases() {
        assert_eq!(daily_volatility(&rs(&[0.01, 0.01, 0.01])).unwrap(), 0.0);
        // Two-point sample sd: sqrt(2) * 0.01.
        assert_abs_diff_eq!(
            daily_volatility(&rs(&[-0.01, 0.01])).unwrap(),
            0.0141421,
            epsilon = 1e-6
        );
        assert!(matches!(
            daily_volatility(&rs(&[0.01])),
            Err(AnalyticsError::TooFewObservations { .. })
        ));
    }

    #[test]
    fn annualize_volatility_cases() {
        assert_eq!(annualize_volatility(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            annualize_volatility(0.01).unwrap(),
            0.1581139,
            epsilon = 1e-6
        );
        assert_eq!(
            annualize_volatility(0.02).unwrap(),
            2.0 * annualize_volatility(0.01).unwrap()
        );
        assert!(matches!(
            annualize_volatility(-0.01),
            Err(AnalyticsError::NegativeVolatility(_))
        ));
    }

    #[test]
    fn annual_return_constant_daily() {
        let r = rs(&[0.001; 30]);
        assert_abs_diff_eq!(annual_return(&r).unwrap(), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(
            annual_return_with(&r, AnnualReturnMethod::GlobalMean).unwrap(),
            0.25,
            epsilon = 1e-12
        );
    }

    #[test]
    fn annual_return_single_year_is_scaled_mean() {
        let values = [0.002, -0.001, 0.004, 0.0005];
        let r = rs(&values);
        let mean: f64 = values.iter().sum::<f64>() / values.len() as f64;
        assert_abs_diff_eq!(annual_return(&r).unwrap(), mean * 250.0, epsilon = 1e-12);
    }

    #[test]
    fn annual_return_averages_across_years() {
        // Year 1 mean daily 0.0004 -> 0.10; year 2 mean daily 0.0012 -> 0.30.
        let mut dates = Vec::new();
        let mut values = Vec::new();
        for i in 0..10 {
            dates.push(d("2019-03-01") + chrono::Duration::days(i));
            values.push(0.0004);
        }
        for i in 0..7 {
            dates.push(d("2020-03-01") + chrono::Duration::days(i));
            values.push(0.0012);
        }
        let r = ReturnSeries {
            ticker: "T".into(),
            dates,
            values,
            kind: ReturnKind::Simple,
        };
        assert_abs_diff_eq!(annual_return(&r).unwrap(), 0.20, epsilon = 1e-12);
    }

    fn matrix(tickers: &[&str], rows: &[&[f64]]) -> ReturnMatrix {
        ReturnMatrix {
            tickers: tickers.iter().map(|s| s.to_string()).collect(),
            dates: (0..rows[0].len())
                .map(|i| d("2020-01-02") + chrono::Duration::days(i as i64))
                .collect(),
            values: rows.iter().map(|r| r.to_vec()).collect(),
        }
    }

    #[test]
    fn covariance_single_stock_two_points() {
        let rm = matrix(&["A"], &[&[-0.01, 0.01]]);
        let cov = covariance_matrix(&rm).unwrap();
        assert_abs_diff_eq!(cov.get(0, 0), 2e-4, epsilon = 1e-18);
    }

    #[test]
    fn covariance_identical_rows_all_equal() {
        let row = [0.01, -0.02, 0.005, 0.0];
        let rm = matrix(&["A", "B"], &[&row, &row]);
        let cov = covariance_matrix(&rm).unwrap();
        let v = cov.get(0, 0);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(cov.get(i, j), v);
            }
        }
    }

    #[test]
    fn covariance_negated_row_flips_sign() {
        let row = [0.01, -0.02, 0.005, 0.0];
        let neg: Vec<f64> = row.iter().map(|v| -v).collect();
        let rm = matrix(&["A", "B"], &[&row, &neg]);
        let cov = covariance_matrix(&rm).unwrap();
        assert_abs_diff_eq!(cov.get(0, 1), -cov.get(0, 0), epsilon = 1e-18);
        assert!(cov.is_symmetric());
    }

    #[test]
    fn correlation_diagonal_and_scale_invariance() {
        let row = [0.01, -0.02, 0.005, 0.003];
        let doubled: Vec<f64> = row.iter().map(|v| 2.0 * v).collect();
        let rm = matrix(&["A", "B"], &[&row, &doubled]);
        let corr = correlation_matrix(&rm).unwrap();
        assert_eq!(corr.get(0, 0), 1.0);
        assert_eq!(corr.get(1, 1), 1.0);
        assert_abs_diff_eq!(corr.get(0, 1), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn correlation_matches_pearson_oracle() {
        // Independent alternating patterns of period 2 and 4.
        let a: Vec<f64> = (0..16)
            .map(|t| if t % 2 == 0 { 1e-2 } else { -1e-2 })
            .collect();
        let b: Vec<f64> = (0..16)
            .map(|t| if (t / 2) % 2 == 0 { 1e-2 } else { -1e-2 })
            .collect();
        let rm = matrix(&["A", "B"], &[&a, &b]);
        let corr = correlation_matrix(&rm).unwrap();

        // Brute-force Pearson formula.
        let mean_a: f64 = a.iter().sum::<f64>() / a.len() as f64;
        let mean_b: f64 = b.iter().sum::<f64>() / b.len() as f64;
        let num: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - mean_a) * (y - mean_b))
            .sum();
        let da: f64 = a.iter().map(|x| (x - mean_a).powi(2)).sum::<f64>().sqrt();
        let db: f64 = b.iter().map(|y| (y - mean_b).powi(2)).sum::<f64>().sqrt();
        let expected = num / (da * db);

        assert_abs_diff_eq!(corr.get(0, 1), expected, epsilon = 1e-12);
    }

    #[test]
    fn correlation_rejects_zero_variance_row() {
        let rm = matrix(&["A", "B"], &[&[0.01, -0.01, 0.0], &[0.0, 0.0, 0.0]]);
        assert!(matches!(
            correlation_matrix(&rm),
            Err(AnalyticsError::ZeroVarianceRow(_))
        ));
    }

    #[test]
    fn stock_stats_ties_fields_together() {
        let p = prices(&[100.0, 101.0, 99.5, 102.0, 103.0]);
        let stats = stock_stats(&p, AnnualReturnMethod::PerYearMean).unwrap();
        assert_eq!(stats.ticker, "T");
        assert_eq!(stats.annual_vol, stats.daily_vol * 250f64.sqrt());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn volatility_matches_brute_force(values in proptest::collection::vec(-0.2f64..0.2, 2..100)) {
                let got = daily_volatility(&rs(&values)).unwrap();
                let m = values.len() as f64;
                let mean = values.iter().sum::<f64>() / m;
                let expected = (values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                    / (m - 1.0)).sqrt();
                prop_assert!((got - expected).abs() <= 1e-12);
            }

            #[test]
            fn log_and_simple_agree_to_first_order(
                closes in proptest::collection::vec(10f64..1000.0, 2..30)
            ) {
                let p = prices(&closes);
                let simple = daily_returns(&p).unwrap();
                let log = log_returns(&p).unwrap();
                for (s, l) in simple.values.iter().zip(&log.values) {
                    if s.abs() <= 0.1 {
                        prop_assert!((l - s).abs() <= s * s + 1e-15);
                    }
                    // Simple returns on positive prices stay above -1.
                    prop_assert!(*s > -1.0);
                }
            }

            #[test]
            fn covariance_is_symmetric_and_diag_nonneg(
                rows in proptest::collection::vec(
                    proptest::collection::vec(-0.1f64..0.1, 8),
                    1..5
                )
            ) {
                let tickers: Vec<String> = (0..rows.len()).map(|i| format!("T{i}")).collect();
                let rm = ReturnMatrix {
                    tickers,
                    dates: (0..8).map(|i| d("2020-01-02") + chrono::Duration::days(i)).collect(),
                    values: rows,
                };
                let cov = covariance_matrix(&rm).unwrap();
                prop_assert!(cov.is_symmetric());
                for i in 0..cov.n() {
                    prop_assert!(cov.get(i, i) >= 0.0);
                }
            }
        }
    }
}
