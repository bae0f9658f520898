//! Price data ingestion: long-format CSV loading, validation, forward-fill
//! alignment across tickers, and a cache-backed remote fetcher.
//!
//! The CSV contract is shared by the load input and the fetch cache output:
//! UTF-8, header exactly `date,ticker,close`, ISO-8601 dates, `\n` line
//! endings, closes with up to 6 fractional digits.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::NaiveDate;
use thiserror::Error;

/// Expected CSV header line.
pub const CSV_HEADER: &str = "date,ticker,close";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: expected `{CSV_HEADER}`, got `{0}`")]
    MalformedHeader(String),
    #[error("line {line}: expected 3 fields `date,ticker,close`, got {count}")]
    BadFieldCount { line: u64, count: usize },
    #[error("line {line}: unparsable date `{value}`")]
    BadDate { line: u64, value: String },
    #[error("line {line}: unparsable close `{value}` for {ticker}")]
    BadClose {
        line: u64,
        ticker: String,
        value: String,
    },
    #[error("line {line}: non-positive close {value} for {ticker}")]
    NonPositiveClose {
        line: u64,
        ticker: String,
        value: f64,
    },
    #[error("line {line}: duplicate date {date} for {ticker}")]
    DuplicateDate {
        line: u64,
        ticker: String,
        date: NaiveDate,
    },
    #[error("series for {0} has fewer than 2 bars")]
    TooShort(String),
    #[error("duplicate ticker {0} in alignment input")]
    DuplicateTicker(String),
    #[error("no series given to align")]
    EmptyInput,
    #[error("aligned date axis is empty: series share no dates after forward-fill")]
    EmptyIntersection,
    #[error("fetch precondition violated: start {start} is not before end {end}")]
    BadDateRange { start: NaiveDate, end: NaiveDate },
    #[error("network failure fetching {ticker}: {detail}")]
    Network { ticker: String, detail: String },
    #[error("unknown ticker {0}")]
    UnknownTicker(String),
    #[error("empty response for {ticker} over {start}..{end}")]
    EmptyResponse {
        ticker: String,
        start: NaiveDate,
        end: NaiveDate,
    },
}

/// One dated close price. `close` is strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceBar {
    pub date: NaiveDate,
    pub close: f64,
}

/// A per-ticker series of close prices, strictly increasing by date with no
/// duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    ticker: String,
    bars: Vec<PriceBar>,
}

impl PriceSeries {
    /// Builds a validated series: bars are sorted by date, duplicates and
    /// non-positive closes are rejected.
    pub fn new(ticker: impl Into<String>, mut bars: Vec<PriceBar>) -> Result<Self, IngestError> {
        let ticker = ticker.into();
        bars.sort_by_key(|b| b.date);
        for pair in bars.windows(2) {
            if pair[0].date == pair[1].date {
                return Err(IngestError::DuplicateDate {
                    line: 0,
                    ticker,
                    date: pair[0].date,
                });
            }
        }
        for bar in &bars {
            if !(bar.close > 0.0) || !bar.close.is_finite() {
                return Err(IngestError::NonPositiveClose {
                    line: 0,
                    ticker,
                    value: bar.close,
                });
            }
        }
        Ok(Self { ticker, bars })
    }

    pub fn ticker(&self) -> &str {
        &self.ticker
    }

    pub fn bars(&self) -> &[PriceBar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.bars.iter().map(|b| b.date).collect()
    }

    /// Sub-series restricted to `start..=end`, keeping the ticker name.
    pub fn slice_dates(&self, start: NaiveDate, end: NaiveDate) -> PriceSeries {
        let bars = self
            .bars
            .iter()
            .copied()
            .filter(|b| b.date >= start && b.date <= end)
            .collect();
        PriceSeries {
            ticker: self.ticker.clone(),
            bars,
        }
    }
}

/// Close prices for an n-ticker universe over a common date axis.
/// `closes[i]` is the row for `tickers[i]`; every cell is populated.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPanel {
    tickers: Vec<String>,
    dates: Vec<NaiveDate>,
    closes: Vec<Vec<f64>>,
}

impl AlignedPanel {
    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn closes(&self) -> &[Vec<f64>] {
        &self.closes
    }

    /// Number of tickers (rows).
    pub fn n(&self) -> usize {
        self.tickers.len()
    }

    /// Length of the date axis (columns).
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.closes[i]
    }

    /// Panel restricted to dates in `start..=end`.
    pub fn slice_dates(&self, start: NaiveDate, end: NaiveDate) -> Result<Self, IngestError> {
        let keep: Vec<usize> = (0..self.dates.len())
            .filter(|&j| self.dates[j] >= start && self.dates[j] <= end)
            .collect();
        if keep.is_empty() {
            return Err(IngestError::EmptyIntersection);
        }
        Ok(Self {
            tickers: self.tickers.clone(),
            dates: keep.iter().map(|&j| self.dates[j]).collect(),
            closes: self
                .closes
                .iter()
                .map(|row| keep.iter().map(|&j| row[j]).collect())
                .collect(),
        })
    }
}

fn parse_close(line: u64, ticker: &str, raw: &str) -> Result<f64, IngestError> {
    let value: f64 = raw.trim().parse().map_err(|_| IngestError::BadClose {
        line,
        ticker: ticker.to_string(),
        value: raw.to_string(),
    })?;
    if !value.is_finite() {
        return Err(IngestError::BadClose {
            line,
            ticker: ticker.to_string(),
            value: raw.to_string(),
        });
    }
    if value <= 0.0 {
        return Err(IngestError::NonPositiveClose {
            line,
            ticker: ticker.to_string(),
            value,
        });
    }
    Ok(value)
}

/// Parses long-format CSV text into one series per distinct ticker, in order
/// of first appearance. Rows may arrive in any order; each series comes back
/// date-sorted. Row-level problems carry the 1-based line number.
pub fn parse_csv(text: &str) -> Result<Vec<PriceSeries>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<PriceBar>> = HashMap::new();
    let mut seen: HashSet<(String, NaiveDate)> = HashSet::new();

    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| IngestError::BadFieldCount {
            line: idx as u64 + 1,
            count: e.to_string().len().min(0), // unreachable with flexible(true)
        })?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(idx as u64 + 1);

        if idx == 0 {
            let header = record.iter().collect::<Vec<_>>().join(",");
            if header != CSV_HEADER {
                return Err(IngestError::MalformedHeader(header));
            }
            continue;
        }
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != 3 {
            return Err(IngestError::BadFieldCount {
                line,
                count: record.len(),
            });
        }

        let date = NaiveDate::parse_from_str(record[0].trim(), "%Y-%m-%d").map_err(|_| {
            IngestError::BadDate {
                line,
                value: record[0].to_string(),
            }
        })?;
        let ticker = record[1].trim().to_string();
        let close = parse_close(line, &ticker, &record[2])?;

        if !seen.insert((ticker.clone(), date)) {
            return Err(IngestError::DuplicateDate { line, ticker, date });
        }
        if !grouped.contains_key(&ticker) {
            order.push(ticker.clone());
        }
        grouped
            .entry(ticker)
            .or_default()
            .push(PriceBar { date, close });
    }

    order
        .into_iter()
        .map(|t| {
            let bars = grouped.remove(&t).unwrap();
            PriceSeries::new(t, bars)
        })
        .collect()
}

/// Loads long-format CSV from a file. See [`parse_csv`].
pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<PriceSeries>, IngestError> {
    let path = path.as_ref();
    let mut text = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    parse_csv(&text)
}

/// Canonical close formatting: up to 6 fractional digits, trailing zeros
/// trimmed, no thousands separators.
pub fn format_close(value: f64) -> String {
    let mut s = format!("{:.6}", value);
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

/// Renders series to the canonical CSV text: header, then each series' bars
/// date-ascending, series in input order, `\n` endings throughout.
pub fn to_csv_string(series: &[PriceSeries]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in series {
        for bar in s.bars() {
            out.push_str(&format!(
                "{},{},{}\n",
                bar.date.format("%Y-%m-%d"),
                s.ticker(),
                format_close(bar.close)
            ));
        }
    }
    out
}

/// Writes series to `path` in the canonical CSV format.
pub fn write_csv(series: &[PriceSeries], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| IngestError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        }
    }
    fs::write(path, to_csv_string(series)).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Maximum gap, in consecutive missing calendar days, that forward-fill will
/// bridge inside one series.
pub const MAX_FILL_GAP_DAYS: i64 = 5;

/// Aligns series onto a common date axis.
///
/// Candidate dates are those where at least one series traded. Within each
/// series, a candidate date falling in a gap of at most [`MAX_FILL_GAP_DAYS`]
/// consecutive missing calendar days is forward-filled with the previous
/// close. The axis is the intersection of the filled date sets; dates still
/// missing in some series are dropped. Ticker order is preserved from the
/// input.
pub fn align(series: &[PriceSeries]) -> Result<AlignedPanel, IngestError> {
    if series.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let mut names = HashSet::new();
    for s in series {
        if !names.insert(s.ticker().to_string()) {
            return Err(IngestError::DuplicateTicker(s.ticker().to_string()));
        }
    }

    let traded: BTreeSet<NaiveDate> = series
        .iter()
        .flat_map(|s| s.bars().iter().map(|b| b.date))
        .collect();

    let filled: Vec<BTreeMap<NaiveDate, f64>> = series
        .iter()
        .map(|s| {
            let mut map: BTreeMap<NaiveDate, f64> = BTreeMap::new();
            for bar in s.bars() {
                map.insert(bar.date, bar.close);
            }
            let dates: Vec<NaiveDate> = map.keys().copied().collect();
            for pair in dates.windows(2) {
                let gap = (pair[1] - pair[0]).num_days() - 1;
                if gap >= 1 && gap <= MAX_FILL_GAP_DAYS {
                    let fill = map[&pair[0]];
                    for d in traded.range(pair[0]..pair[1]).skip(1) {
                        map.insert(*d, fill);
                    }
                }
            }
            map
        })
        .collect();

    let mut axis: BTreeSet<NaiveDate> = filled[0].keys().copied().collect();
    for map in &filled[1..] {
        axis.retain(|d| map.contains_key(d));
    }
    if axis.is_empty() {
        return Err(IngestError::EmptyIntersection);
    }
    let dates: Vec<NaiveDate> = axis.into_iter().collect();
    let closes: Vec<Vec<f64>> = filled
        .iter()
        .map(|map| dates.iter().map(|d| map[d]).collect())
        .collect();

    Ok(AlignedPanel {
        tickers: series.iter().map(|s| s.ticker().to_string()).collect(),
        dates,
        closes,
    })
}

/// Transport behind [`RemoteFetcher`]. Implementations return raw bars for a
/// ticker over `start..=end`.
pub trait RemoteSource: Send + Sync {
    fn fetch(
        &self,
        ticker: &str,
        start: NaiveDate,
        end: NaiveDate,
    ) -> Result<Vec<PriceBar>, IngestError>;
}

/// Replays a recorded long-format CSV file as if it were a remote price API.
/// Unknown tickers and empty date ranges map to the distinct fetch errors.
pub struct ReplaySource {
    path: PathBuf,
}

impl ReplaySource {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }
}

impl RemoteSource for ReplaySource {
    fn fetch(
        &self,
        ticker: &str,
        start: NaiveDate,
        end: NaiveDate,
    ) -> Result<Vec<PriceBar>, IngestError> {
        let all = load_csv(&self.path).map_err(|e| IngestError::Network {
            ticker: ticker.to_string(),
            detail: e.to_string(),
        })?;
        let series = all
            .iter()
            .find(|s| s.ticker() == ticker)
            .ok_or_else(|| IngestError::UnknownTicker(ticker.to_string()))?;
        let bars: Vec<PriceBar> = series
            .bars()
            .iter()
            .copied()
            .filter(|b| b.date >= start && b.date <= end)
            .collect();
        if bars.is_empty() {
            return Err(IngestError::EmptyResponse {
                ticker: ticker.to_string(),
                start,
                end,
            });
        }
        Ok(bars)
    }
}

/// Fetches remote price series and caches each result in the canonical CSV
/// format, so downstream runs stay offline. At most one in-flight request per
/// ticker; concurrent callers for the same ticker serialize on its lock.
pub struct RemoteFetcher {
    source: Box<dyn RemoteSource>,
    cache_dir: PathBuf,
    in_flight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl RemoteFetcher {
    pub fn new(source: Box<dyn RemoteSource>, cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            source,
            cache_dir: cache_dir.into(),
            in_flight: Mutex::new(HashMap::new()),
        }
    }

    /// Cache file for one ticker.
    pub fn cache_path(&self, ticker: &str) -> PathBuf {
        self.cache_dir.join(format!("{ticker}.csv"))
    }

    /// Returns the series for `ticker` over `start..end`, from cache when
    /// present, otherwise from the remote source (then cached).
    pub fn fetch(
        &self,
        ticker: &str,
        start: NaiveDate,
        end: NaiveDate,
    ) -> Result<PriceSeries, IngestError> {
        if start >= end {
            return Err(IngestError::BadDateRange { start, end });
        }

        let lock = {
            let mut map = self.in_flight.lock().unwrap();
            map.entry(ticker.to_string())
                .or_insert_with(|| Arc::new(Mutex::new(())))
                .clone()
        };
        let _guard = lock.lock().unwrap();

        let cache = self.cache_path(ticker);
        if cache.exists() {
            let cached = load_csv(&cache)?;
            if let Some(series) = cached.into_iter().find(|s| s.ticker() == ticker) {
                return Ok(series);
            }
        }

        let bars = self.source.fetch(ticker, start, end)?;
        let series = PriceSeries::new(ticker, bars)?;
        write_csv(std::slice::from_ref(&series), &cache)?;
        Ok(series)
    }
}
