//! Capital allocation, holdings valuation, and ROI reporting over a hold-out
//! window, under both actual and model-predicted horizon prices.
//!
//! Internal arithmetic stays at full precision; rounding happens only when a
//! report is rendered for display.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimizer::WeightVector;

/// Prices keyed by ticker.
pub type PriceMap = BTreeMap<String, f64>;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("capital must be positive, got {0}")]
    NonPositiveCapital(f64),
    #[error("invested amount must be positive, got {0}")]
    NonPositiveInvested(f64),
    #[error("entry price for {ticker} must be positive, got {price}")]
    NonPositivePrice { ticker: String, price: f64 },
    #[error("no price for {0}")]
    MissingPrice(String),
    #[error("dimension mismatch: {tickers} tickers vs {weights} weights")]
    DimensionMismatch { tickers: usize, weights: usize },
    #[error("no reports to summarize")]
    EmptyInput,
    #[error("report {0} lacks predicted prices")]
    MissingPredicted(String),
}

/// One position: capital assigned to a ticker at an entry price. Shares are
/// fractional, `amount_invested / entry_price`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Holding {
    pub ticker: String,
    pub amount_invested: f64,
    pub entry_price: f64,
    pub shares: f64,
}

impl Holding {
    pub fn new(
        ticker: impl Into<String>,
        amount_invested: f64,
        entry_price: f64,
    ) -> Result<Self, BacktestError> {
        let ticker = ticker.into();
        if amount_invested < 0.0 {
            return Err(BacktestError::NonPositiveInvested(amount_invested));
        }
        if entry_price <= 0.0 {
            return Err(BacktestError::NonPositivePrice {
                ticker,
                price: entry_price,
            });
        }
        Ok(Self {
            shares: amount_invested / entry_price,
            ticker,
            amount_invested,
            entry_price,
        })
    }
}

/// One report row: a holding valued at the horizon under actual and
/// (optionally) predicted prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub ticker: String,
    pub amount_invested: f64,
    pub entry_price: f64,
    pub shares: f64,
    pub actual_price: f64,
    pub actual_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_price: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_value: Option<f64>,
}

/// Valuation of one portfolio over the hold-out window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub label: String,
    pub rows: Vec<ReportRow>,
    pub total_invested: f64,
    pub total_actual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_predicted: Option<f64>,
    pub roi_actual_pct: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roi_predicted_pct: Option<f64>,
}

/// Splits `capital` across tickers by weight: `amount_i = capital * w_i`,
/// `shares_i = amount_i / price_i`, fractional with no lot rounding.
pub fn allocate(
    capital: f64,
    weights: &WeightVector,
    tickers: &[String],
    entry_prices: &PriceMap,
) -> Result<Vec<Holding>, BacktestError> {
    if capital <= 0.0 {
        return Err(BacktestError::NonPositiveCapital(capital));
    }
    if tickers.len() != weights.len() {
        return Err(BacktestError::DimensionMismatch {
            tickers: tickers.len(),
            weights: weights.len(),
        });
    }
    tickers
        .iter()
        .zip(weights.as_slice())
        .map(|(ticker, w)| {
            let price = *entry_prices
                .get(ticker)
                .ok_or_else(|| BacktestError::MissingPrice(ticker.clone()))?;
            Holding::new(ticker.clone(), capital * w, price)
        })
        .collect()
}

/// Total value of the holdings at the given prices.
pub fn value(holdings: &[Holding], prices: &PriceMap) -> Result<f64, BacktestError> {
    holdings
        .iter()
        .map(|h| {
            prices
                .get(&h.ticker)
                .map(|p| h.shares * p)
                .ok_or_else(|| BacktestError::MissingPrice(h.ticker.clone()))
        })
        .sum()
}

/// Return on investment in percent.
pub fn roi(invested: f64, final_value: f64) -> Result<f64, BacktestError> {
    if invested <= 0.0 {
        return Err(BacktestError::NonPositiveInvested(invested));
    }
    Ok((final_value - invested) / invested * 100.0)
}

/// Allocates at the entry prices and values the holdings at the horizon under
/// actual and (when given) predicted prices.
pub fn run_backtest(
    label: impl Into<String>,
    capital: f64,
    weights: &WeightVector,
    tickers: &[String],
    entry_prices: &PriceMap,
    horizon_actual: &PriceMap,
    horizon_predicted: Option<&PriceMap>,
) -> Result<BacktestReport, BacktestError> {
    let holdings = allocate(capital, weights, tickers, entry_prices)?;

    let mut rows = Vec::with_capacity(holdings.len());
    for h in &holdings {
        let actual_price = *horizon_actual
            .get(&h.ticker)
            .ok_or_else(|| BacktestError::MissingPrice(h.ticker.clone()))?;
        let predicted_price = match horizon_predicted {
            Some(map) => Some(
                *map.get(&h.ticker)
                    .ok_or_else(|| BacktestError::MissingPrice(h.ticker.clone()))?,
            ),
            None => None,
        };
        rows.push(ReportRow {
            ticker: h.ticker.clone(),
            amount_invested: h.amount_invested,
            entry_price: h.entry_price,
            shares: h.shares,
            actual_price,
            actual_value: h.shares * actual_price,
            predicted_price,
            predicted_value: predicted_price.map(|p| h.shares * p),
        });
    }

    let total_invested: f64 = rows.iter().map(|r| r.amount_invested).sum();
    let total_actual: f64 = rows.iter().map(|r| r.actual_value).sum();
    let total_predicted = horizon_predicted
        .is_some()
        .then(|| rows.iter().filter_map(|r| r.predicted_value).sum::<f64>());

    Ok(BacktestReport {
        label: label.into(),
        roi_actual_pct: roi(total_invested, total_actual)?,
        roi_predicted_pct: match total_predicted {
            Some(tp) => Some(roi(total_invested, tp)?),
            None => None,
        },
        rows,
        total_invested,
        total_actual,
        total_predicted,
    })
}

/// One line of the cross-portfolio summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub portfolio: String,
    pub actual_return_pct: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_return_pct: Option<f64>,
}

/// Actual vs. predicted return per portfolio, in the order given.
pub fn summary(reports: &[BacktestReport]) -> Result<Vec<SummaryRow>, BacktestError> {
    if reports.is_empty() {
        return Err(BacktestError::EmptyInput);
    }
    Ok(reports
        .iter()
        .map(|r| SummaryRow {
            portfolio: r.label.clone(),
            actual_return_pct: r.roi_actual_pct,
            predicted_return_pct: r.roi_predicted_pct,
        })
        .collect())
}

/// Renders the report as a fixed-width table: prices and values rounded to
/// whole currency units, shares to 2 decimals, ROI to 2 decimals.
pub fn render_table(report: &BacktestReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("portfolio: {}\n", report.label));
    out.push_str(&format!(
        "{:<8} {:>12} {:>12} {:>10} {:>11} {:>11} {:>11} {:>11}\n",
        "stock", "amt_invstd", "entry_price", "shares", "act_price", "act_val", "pred_price",
        "pred_val"
    ));
    for r in &report.rows {
        out.push_str(&format!(
            "{:<8} {:>12.0} {:>12.0} {:>10.2} {:>11.0} {:>11.0} {:>11} {:>11}\n",
            r.ticker,
            r.amount_invested,
            r.entry_price,
            r.shares,
            r.actual_price,
            r.actual_value,
            r.predicted_price
                .map_or("-".to_string(), |p| format!("{p:.0}")),
            r.predicted_value
                .map_or("-".to_string(), |v| format!("{v:.0}")),
        ));
    }
    out.push_str(&format!(
        "{:<8} {:>12.0} {:>12} {:>10} {:>11} {:>11.0} {:>11} {:>11}\n",
        "total",
        report.total_invested,
        "",
        "",
        "",
        report.total_actual,
        "",
        report
            .total_predicted
            .map_or("-".to_string(), |v| format!("{v:.0}")),
    ));
    out.push_str(&format!(
        "roi_pct  actual: {:.2}  predicted: {}\n",
        report.roi_actual_pct,
        report
            .roi_predicted_pct
            .map_or("-".to_string(), |v| format!("{v:.2}")),
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn prices(pairs: &[(&str, f64)]) -> PriceMap {
        pairs.iter().map(|&(t, p)| (t.to_string(), p)).collect()
    }

    fn tickers(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn allocate_reference_share_count() {
        // 2020 at 596 buys 3.39 shares.
        let h = Holding::new("SNP", 2020.0, 596.0).unwrap();
        assert_abs_diff_eq!(h.shares, 3.39, epsilon = 0.005);
    }

    #[test]
    fn allocate_zero_weight_zero_shares() {
        let w = WeightVector::new(vec![1.0, 0.0]).unwrap();
        let holdings = allocate(
            1000.0,
            &w,
            &tickers(&["A", "B"]),
            &prices(&[("A", 10.0), ("B", 20.0)]),
        )
        .unwrap();
        assert_eq!(holdings[1].shares, 0.0);
        assert_eq!(holdings[1].amount_invested, 0.0);
    }

    #[test]
    fn allocate_equal_weights_flat_prices() {
        let w = WeightVector::new(vec![0.2; 5]).unwrap();
        let names = tickers(&["A", "B", "C", "D", "E"]);
        let entry = prices(&[("A", 100.0), ("B", 100.0), ("C", 100.0), ("D", 100.0), ("E", 100.0)]);
        let holdings = allocate(100_000.0, &w, &names, &entry).unwrap();
        for h in &holdings {
            assert_abs_diff_eq!(h.shares, 200.0, epsilon = 1e-9);
        }
        // Amounts sum back to the capital before any display rounding.
        let total: f64 = holdings.iter().map(|h| h.amount_invested).sum();
        assert_abs_diff_eq!(total, 100_000.0, epsilon = 1e-9);
    }

    #[test]
    fn allocate_error_cases() {
        let w = WeightVector::new(vec![1.0]).unwrap();
        assert!(matches!(
            allocate(0.0, &w, &tickers(&["A"]), &prices(&[("A", 10.0)])),
            Err(BacktestError::NonPositiveCapital(_))
        ));
        assert!(matches!(
            allocate(10.0, &w, &tickers(&["A"]), &prices(&[("A", 0.0)])),
            Err(BacktestError::NonPositivePrice { .. })
        ));
        assert!(matches!(
            allocate(10.0, &w, &tickers(&["A"]), &prices(&[("B", 1.0)])),
            Err(BacktestError::MissingPrice(_))
        ));
    }

    #[test]
    fn value_reference_row() {
        // 3.389 shares at 671 is about 2274; the reference table rounds to
        // 2275.
        let h = Holding {
            ticker: "SNP".into(),
            amount_invested: 2020.0,
            entry_price: 596.0,
            shares: 3.389,
        };
        let v = value(std::slice::from_ref(&h), &prices(&[("SNP", 671.0)])).unwrap();
        assert_abs_diff_eq!(v, 2274.0, epsilon = 2.0);
    }

    #[test]
    fn value_at_entry_prices_returns_capital() {
        let w = WeightVector::new(vec![0.3, 0.7]).unwrap();
        let names = tickers(&["A", "B"]);
        let entry = prices(&[("A", 12.5), ("B", 94.0)]);
        let holdings = allocate(5000.0, &w, &names, &entry).unwrap();
        let v = value(&holdings, &entry).unwrap();
        assert!((v - 5000.0).abs() / 5000.0 < 1e-6);
    }

    #[test]
    fn value_missing_price_is_error() {
        let h = Holding::new("A", 100.0, 10.0).unwrap();
        assert!(matches!(
            value(std::slice::from_ref(&h), &prices(&[("B", 1.0)])),
            Err(BacktestError::MissingPrice(_))
        ));
    }

    #[test]
    fn roi_reference_values() {
        assert_abs_diff_eq!(roi(100_000.0, 109_301.0).unwrap(), 9.30, epsilon = 0.02);
        assert_eq!(roi(500.0, 500.0).unwrap(), 0.0);
        assert_abs_diff_eq!(roi(100_000.0, 98_747.0).unwrap(), -1.25, epsilon = 0.02);
        assert!(matches!(
            roi(0.0, 1.0),
            Err(BacktestError::NonPositiveInvested(_))
        ));
    }

    /// Pharma hold-out rows: (ticker, amount, entry, actual, predicted).
    const PHARMA: [(&str, f64, f64, f64, f64); 5] = [
        ("SNP", 2020.0, 596.0, 671.0, 669.0),
        ("DRL", 19070.0, 5241.0, 5317.0, 5295.0),
        ("DVL", 60730.0, 3849.0, 4220.0, 4232.0),
        ("CPL", 13780.0, 827.0, 946.0, 956.0),
        ("LUP", 4400.0, 1001.0, 1209.0, 1195.0),
    ];

    fn fixture_backtest(
        rows: &[(&str, f64, f64, f64, f64)],
        capital: f64,
    ) -> BacktestReport {
        let names: Vec<String> = rows.iter().map(|r| r.0.to_string()).collect();
        let weights =
            WeightVector::new(rows.iter().map(|r| r.1 / capital).collect()).unwrap();
        let entry: PriceMap = rows.iter().map(|r| (r.0.to_string(), r.2)).collect();
        let actual: PriceMap = rows.iter().map(|r| (r.0.to_string(), r.3)).collect();
        let predicted: PriceMap = rows.iter().map(|r| (r.0.to_string(), r.4)).collect();
        run_backtest(
            "fixture",
            capital,
            &weights,
            &names,
            &entry,
            &actual,
            Some(&predicted),
        )
        .unwrap()
    }

    #[test]
    fn pharma_fixture_rois() {
        let report = fixture_backtest(&PHARMA, 100_000.0);
        assert_abs_diff_eq!(report.roi_actual_pct, 9.30, epsilon = 0.05);
        assert_abs_diff_eq!(report.roi_predicted_pct.unwrap(), 9.51, epsilon = 0.05);
        assert_abs_diff_eq!(report.total_invested, 100_000.0, epsilon = 1e-9);
    }

    #[test]
    fn psu_banks_fixture_rois() {
        let rows = [
            ("SBI", 73120.0, 279.0, 433.0, 418.0),
            ("BOB", 4140.0, 65.0, 79.0, 81.0),
            ("PNB", 4560.0, 35.0, 42.0, 42.0),
            ("CNB", 14010.0, 133.0, 159.0, 161.0),
            ("BOI", 4170.0, 50.0, 76.0, 76.0),
        ];
        let report = fixture_backtest(&rows, 100_000.0);
        assert_abs_diff_eq!(report.roi_actual_pct, 47.07, epsilon = 0.05);
        assert_abs_diff_eq!(report.roi_predicted_pct.unwrap(), 43.48, epsilon = 0.05);
    }

    #[test]
    fn predicted_equal_actual_gives_equal_roi() {
        let rows: Vec<(&str, f64, f64, f64, f64)> = PHARMA
            .iter()
            .map(|&(t, a, e, act, _)| (t, a, e, act, act))
            .collect();
        let report = fixture_backtest(&rows, 100_000.0);
        assert_eq!(report.roi_actual_pct, report.roi_predicted_pct.unwrap());
    }

    #[test]
    fn totals_equal_row_sums() {
        let report = fixture_backtest(&PHARMA, 100_000.0);
        let sum_actual: f64 = report.rows.iter().map(|r| r.actual_value).sum();
        assert!((report.total_actual - sum_actual).abs() < 0.5);
        let sum_pred: f64 = report.rows.iter().filter_map(|r| r.predicted_value).sum();
        assert!((report.total_predicted.unwrap() - sum_pred).abs() < 0.5);
    }

    #[test]
    fn value_is_linear_in_prices_and_shares() {
        let holdings = vec![
            Holding::new("A", 100.0, 10.0).unwrap(),
            Holding::new("B", 300.0, 30.0).unwrap(),
        ];
        let p1 = prices(&[("A", 12.0), ("B", 28.0)]);
        let p2 = prices(&[("A", 3.0), ("B", 7.0)]);
        let combined = prices(&[("A", 15.0), ("B", 35.0)]);
        let v1 = value(&holdings, &p1).unwrap();
        let v2 = value(&holdings, &p2).unwrap();
        let vc = value(&holdings, &combined).unwrap();
        assert_abs_diff_eq!(v1 + v2, vc, epsilon = 1e-9);

        let doubled: Vec<Holding> = holdings
            .iter()
            .map(|h| Holding {
                shares: h.shares * 2.0,
                ..h.clone()
            })
            .collect();
        assert_abs_diff_eq!(value(&doubled, &p1).unwrap(), 2.0 * v1, epsilon = 1e-9);
    }

    #[test]
    fn summary_rows_follow_input_order() {
        let a = fixture_backtest(&PHARMA, 100_000.0);
        let mut b = a.clone();
        b.label = "second".into();
        let rows = summary(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].portfolio, "fixture");
        assert_eq!(rows[1].portfolio, "second");
        assert_eq!(rows[0].actual_return_pct, a.roi_actual_pct);

        let swapped = summary(&[b, a]).unwrap();
        assert_eq!(swapped[0].portfolio, "second");
        assert!(matches!(summary(&[]), Err(BacktestError::EmptyInput)));
    }

    #[test]
    fn single_report_summary_echoes_rois() {
        let report = fixture_backtest(&PHARMA, 100_000.0);
        let rows = summary(std::slice::from_ref(&report)).unwrap();
        assert_eq!(rows[0].actual_return_pct, report.roi_actual_pct);
        assert_eq!(rows[0].predicted_return_pct, report.roi_predicted_pct);
    }

    #[test]
    fn rendered_table_rounds_for_display() {
        let report = fixture_backtest(&PHARMA, 100_000.0);
        let table = render_table(&report);
        assert!(table.contains("SNP"));
        assert!(table.contains("2020"));
        assert!(table.contains("roi_pct"));
    }
}
