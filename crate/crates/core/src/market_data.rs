//! OHLCV ingestion, trading-day episodes, and the (decision, price change)
//! training samples derived from each bar.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MarketDataError {
    #[error("invalid bar: {0}")]
    InvalidBar(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: timestamp {timestamp} does not follow the previous bar of the same day")]
    Ordering { line: u64, timestamp: String },
    #[error("episode has no samples left after dropping the first slot")]
    EmptyEpisode,
    #[error("bar in slot {0} carries no timestamp")]
    MissingTimestamp(usize),
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for MarketDataError {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line());
        match line {
            Some(line) => MarketDataError::Parse {
                line,
                message: err.to_string(),
            },
            None => MarketDataError::Csv(err.to_string()),
        }
    }
}

/// One candlestick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhlcvBar {
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
    pub slot_index: usize,
    #[serde(default)]
    pub timestamp: Option<NaiveDateTime>,
}

impl OhlcvBar {
    pub fn new(
        slot_index: usize,
        open: f64,
        high: f64,
        low: f64,
        close: f64,
        volume: f64,
    ) -> Result<Self, MarketDataError> {
        let bar = OhlcvBar {
            open,
            high,
            low,
            close,
            volume,
            slot_index,
            timestamp: None,
        };
        bar.validate()?;
        Ok(bar)
    }

    pub fn with_timestamp(mut self, timestamp: NaiveDateTime) -> Self {
        self.timestamp = Some(timestamp);
        self
    }

    pub fn validate(&self) -> Result<(), MarketDataError> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(MarketDataError::InvalidBar(format!(
                "prices must be finite and positive (o={}, h={}, l={}, c={})",
                self.open, self.high, self.low, self.close
            )));
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            return Err(MarketDataError::InvalidBar(format!(
                "volume {} is negative",
                self.volume
            )));
        }
        if self.low > self.open.min(self.close) || self.open.max(self.close) > self.high {
            return Err(MarketDataError::InvalidBar(format!(
                "range violated: l={} o={} c={} h={}",
                self.low, self.open, self.close, self.high
            )));
        }
        Ok(())
    }
}

/// The bars of one trading day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    bars: Vec<OhlcvBar>,
    pub label: String,
    /// Whether `build_dataset` excludes the opening slot.
    pub first_slot_dropped: bool,
}

impl Episode {
    pub fn new(
        bars: Vec<OhlcvBar>,
        label: impl Into<String>,
        first_slot_dropped: bool,
    ) -> Result<Self, MarketDataError> {
        if bars.is_empty() {
            return Err(MarketDataError::EmptyEpisode);
        }
        for bar in &bars {
            bar.validate()?;
        }
        if bars.windows(2).any(|w| w[0].slot_index >= w[1].slot_index) {
            return Err(MarketDataError::InvalidBar(
                "slot indices must be strictly increasing".into(),
            ));
        }
        Ok(Episode {
            bars,
            label: label.into(),
            first_slot_dropped,
        })
    }

    pub fn bars(&self) -> &[OhlcvBar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }
}

/// A (decision, price change) training pair. `slot` and `open` identify the
/// source bar; `open` also feeds the visible-state sequence of the Markov network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionSample {
    pub slot: usize,
    pub open: f64,
    pub d: f64,
    pub g: f64,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Signed USD money-flow proxy `v·h·(h−o)/(h−l)·sign(c−o)`. Flat bars (`h = l`)
/// and unchanged bars (`c = o`) map to zero.
pub fn quantize_decision(bar: &OhlcvBar) -> f64 {
    let direction = sign(bar.close - bar.open);
    if bar.high == bar.low || direction == 0.0 {
        return 0.0;
    }
    let flow = bar.volume * bar.high * (bar.high - bar.open) / (bar.high - bar.low);
    if flow == 0.0 {
        0.0
    } else {
        direction * flow
    }
}

pub fn price_change(bar: &OhlcvBar) -> Result<f64, MarketDataError> {
    if !(bar.open > 0.0) {
        return Err(MarketDataError::InvalidBar(format!(
            "open price {} is not positive",
            bar.open
        )));
    }
    Ok(bar.close / bar.open - 1.0)
}

pub fn build_dataset(episode: &Episode) -> Result<Vec<DecisionSample>, MarketDataError> {
    let skip = usize::from(episode.first_slot_dropped);
    let samples = episode
        .bars
        .iter()
        .skip(skip)
        .map(|bar| {
            Ok(DecisionSample {
                slot: bar.slot_index,
                open: bar.open,
                d: quantize_decision(bar),
                g: price_change(bar)?,
            })
        })
        .collect::<Result<Vec<_>, MarketDataError>>()?;
    if samples.is_empty() {
        return Err(MarketDataError::EmptyEpisode);
    }
    Ok(samples)
}

/// Header names of the OHLCV columns plus the first-slot policy applied to
/// every loaded episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub timestamp: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub volume: String,
    pub drop_first_slot: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            timestamp: "timestamp".into(),
            open: "open".into(),
            high: "high".into(),
            low: "low".into(),
            close: "close".into(),
            volume: "volume".into(),
            drop_first_slot: true,
        }
    }
}

pub fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    if let Ok(ts) = DateTime::parse_from_rfc3339(raw) {
        return Some(ts.naive_local());
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, MarketDataError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| MarketDataError::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })
}

/// Reads an OHLCV CSV and groups rows into one episode per calendar day.
/// Rows within a day must have strictly increasing timestamps.
pub fn load_ohlcv_csv<R: Read>(
    source: R,
    schema: &CsvSchema,
) -> Result<Vec<Episode>, MarketDataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(Vec::new());
    }
    let idx = [
        column(&headers, &schema.timestamp)?,
        column(&headers, &schema.open)?,
        column(&headers, &schema.high)?,
        column(&headers, &schema.low)?,
        column(&headers, &schema.close)?,
        column(&headers, &schema.volume)?,
    ];

    let mut days: BTreeMap<NaiveDate, Vec<OhlcvBar>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| {
            record.get(i).ok_or_else(|| MarketDataError::Parse {
                line,
                message: format!("row has only {} fields", record.len()),
            })
        };
        let number = |i: usize, name: &str| -> Result<f64, MarketDataError> {
            let raw = field(i)?;
            raw.trim()
                .parse::<f64>()
                .map_err(|_| MarketDataError::Parse {
                    line,
                    message: format!("{name}: cannot parse `{raw}` as a number"),
                })
        };
        let raw_ts = field(idx[0])?;
        let timestamp = parse_timestamp(raw_ts).ok_or_else(|| MarketDataError::Parse {
            line,
            message: format!("cannot parse timestamp `{raw_ts}`"),
        })?;
        let day = days.entry(timestamp.date()).or_default();
        if let Some(prev) = day.last().and_then(|b| b.timestamp) {
            if timestamp <= prev {
                return Err(MarketDataError::Ordering {
                    line,
                    timestamp: raw_ts.to_string(),
                });
            }
        }
        let bar = OhlcvBar::new(
            day.len(),
            number(idx[1], "open")?,
            number(idx[2], "high")?,
            number(idx[3], "low")?,
            number(idx[4], "close")?,
            number(idx[5], "volume")?,
        )
        .map_err(|err| MarketDataError::Parse {
            line,
            message: err.to_string(),
        })?
        .with_timestamp(timestamp);
        day.push(bar);
    }

    days.into_iter()
        .map(|(date, bars)| Episode::new(bars, date.to_string(), schema.drop_first_slot))
        .collect()
}

/// Writes episodes back in the default column layout.
pub fn write_ohlcv_csv<W: Write>(episodes: &[Episode], sink: W) -> Result<(), MarketDataError> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(["timestamp", "open", "high", "low", "close", "volume"])?;
    for bar in episodes.iter().flat_map(|e| e.bars()) {
        let ts = bar
            .timestamp
            .ok_or(MarketDataError::MissingTimestamp(bar.slot_index))?;
        writer.write_record([
            ts.format("%Y-%m-%dT%H:%M:%S%.f").to_string(),
            bar.open.to_string(),
            bar.high.to_string(),
            bar.low.to_string(),
            bar.close.to_string(),
            bar.volume.to_string(),
        ])?;
    }
    writer
        .flush()
        .map_err(|e| MarketDataError::Csv(e.to_string()))?;
    Ok(())
}

/// Dataset dump with columns `slot,d,g`.
pub fn write_dataset_csv<W: Write>(
    samples: &[DecisionSample],
    sink: W,
) -> Result<(), MarketDataError> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(["slot", "d", "g"])?;
    for s in samples {
        writer.write_record([s.slot.to_string(), s.d.to_string(), s.g.to_string()])?;
    }
    writer
        .flush()
        .map_err(|e| MarketDataError::Csv(e.to_string()))?;
    Ok(())
}
