//! Minute-price CSV ingestion and the matching writer.
//!
//! Input rows are `symbol,timestamp,price`, with an optional header row,
//! blank lines and `#` comment lines. Fields are not quoted. Rows may arrive in any order and mix several symbols
//! and days; they are grouped by `(symbol, date)` and sorted by time.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeDelta};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PricePath;

/// Longest run of missing minutes that is forward-filled. Longer gaps split
/// the day into separate segments.
pub const MAX_FILL_MINUTES: i64 = 5;

/// One contiguous trading session (or a segment of one) for one symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayData {
    pub symbol: String,
    pub date: NaiveDate,
    /// 0 unless a long gap split the day.
    pub segment: usize,
    /// Prices with their minute timestamps.
    pub path: PricePath,
    /// `filled[i]` marks a minute that was missing from the input and carries
    /// the previous price.
    pub filled: Vec<bool>,
}

impl DayData {
    pub fn timestamps(&self) -> &[NaiveDateTime] {
        self.path.timestamps.as_deref().unwrap_or(&[])
    }

    pub fn n_filled(&self) -> usize {
        self.filled.iter().filter(|&&f| f).count()
    }

    /// File-name friendly identifier, e.g. `AAPL_2024-01-02` or
    /// `AAPL_2024-01-02_s1`.
    pub fn label(&self) -> String {
        let base = format!("{}_{}", self.symbol, self.date);
        if self.segment == 0 {
            base
        } else {
            format!("{base}_s{}", self.segment)
        }
    }
}

const NAIVE_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

/// Parses an ISO-8601 timestamp. A UTC offset, when present, is dropped and
/// the local wall-clock time kept.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.naive_local());
    }
    NAIVE_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S%.f").to_string()
}

struct Row {
    time: NaiveDateTime,
    price: f64,
    line: usize,
}

pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Vec<DayData>> {
    let path = path.as_ref();
    ingest_reader(File::open(path)?, path)
}

/// Like [`ingest_csv`] for an arbitrary reader; `source` is only used in
/// error messages.
pub fn ingest_reader<R: Read>(reader: R, source: &Path) -> Result<Vec<DayData>> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        msg,
    };
    let mut groups: BTreeMap<(String, NaiveDate), Vec<Row>> = BTreeMap::new();
    let mut seen_data = false;
    for (i, text) in BufReader::new(reader).lines().enumerate() {
        let line = i + 1;
        let text = text?;
        let text = text.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let rec: Vec<&str> = text.split(',').map(str::trim).collect();
        if !std::mem::replace(&mut seen_data, true) && rec[0].eq_ignore_ascii_case("symbol") {
            continue;
        }
        if rec.len() != 3 {
            return Err(parse_err(line, format!("expected 3 fields, found {}", rec.len())));
        }
        let symbol = rec[0];
        if symbol.is_empty() {
            return Err(parse_err(line, "empty symbol".into()));
        }
        let time = parse_timestamp(rec[1])
            .ok_or_else(|| parse_err(line, format!("unparseable timestamp {:?}", rec[1])))?;
        let price: f64 = rec[2]
            .parse()
            .map_err(|_| parse_err(line, format!("unparseable price {:?}", rec[2])))?;
        if !price.is_finite() || price <= 0.0 {
            return Err(parse_err(line, format!("price must be positive, got {price}")));
        }
        groups
            .entry((symbol.to_string(), time.date()))
            .or_default()
            .push(Row { time, price, line });
    }

    let mut days = Vec::new();
    for ((symbol, date), mut rows) in groups {
        rows.sort_by_key(|r| (r.time, r.line));
        if let Some(w) = rows.windows(2).find(|w| w[0].time == w[1].time) {
            return Err(parse_err(
                w[1].line,
                format!(
                    "duplicate timestamp {} for {symbol} (first seen on line {})",
                    format_timestamp(&w[1].time),
                    w[0].line
                ),
            ));
        }
        for (segment, seg) in split_and_fill(&rows, &symbol).into_iter().enumerate() {
            let (times, prices, filled) = seg;
            if prices.len() < 2 {
                warn!("{symbol} {date}: dropping single-observation segment at {}", times[0]);
                continue;
            }
            days.push(DayData {
                symbol: symbol.clone(),
                date,
                segment,
                path: PricePath::with_timestamps(prices, times)?,
                filled,
            });
        }
    }
    renumber_segments(&mut days);
    Ok(days)
}

type Segment = (Vec<NaiveDateTime>, Vec<f64>, Vec<bool>);

fn split_and_fill(rows: &[Row], symbol: &str) -> Vec<Segment> {
    let minute = TimeDelta::minutes(1);
    let mut segments = Vec::new();
    let mut cur: Segment = (Vec::new(), Vec::new(), Vec::new());
    for row in rows {
        if let (Some(&last_t), Some(&last_p)) = (cur.0.last(), cur.1.last()) {
            let secs = (row.time - last_t).num_seconds();
            let missing = (secs + 59) / 60 - 1;
            if missing > MAX_FILL_MINUTES {
                warn!(
                    "{symbol}: {missing}-minute gap after {}, splitting the day",
                    format_timestamp(&last_t)
                );
                segments.push(std::mem::take(&mut cur));
            } else {
                for k in 1..=missing {
                    cur.0.push(last_t + minute * k as i32);
                    cur.1.push(last_p);
                    cur.2.push(true);
                }
            }
        }
        cur.0.push(row.time);
        cur.1.push(row.price);
        cur.2.push(false);
    }
    segments.push(cur);
    segments
}

fn renumber_segments(days: &mut [DayData]) {
    let mut prev: Option<(String, NaiveDate)> = None;
    let mut next = 0;
    for d in days.iter_mut() {
        let key = (d.symbol.clone(), d.date);
        if prev.as_ref() != Some(&key) {
            next = 0;
            prev = Some(key);
        }
        d.segment = next;
        next += 1;
    }
}

/// Writes days in the ingestion format, omitting forward-filled minutes so
/// that re-ingesting the file reproduces the same [`DayData`].
pub fn write_days<W: Write>(days: &[DayData], mut w: W) -> Result<()> {
    writeln!(w, "symbol,timestamp,price")?;
    for d in days {
        let ts = d.timestamps();
        if ts.len() != d.path.len() {
            return Err(Error::InvalidInput(format!("{} has no timestamps", d.label())));
        }
        for ((t, p), filled) in ts.iter().zip(&d.path.prices).zip(&d.filled) {
            if !filled {
                writeln!(w, "{},{},{}", d.symbol, format_timestamp(t), p)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_days_csv(days: &[DayData], path: impl AsRef<Path>) -> Result<()> {
    write_days(days, std::io::BufWriter::new(File::create(path)?))
}

/// Timestamps for a path of `n` prices starting at `start`, one per minute.
pub fn minute_grid(start: NaiveDateTime, n: usize) -> Vec<NaiveDateTime> {
    (0..n)
        .map(|i| start + TimeDelta::minutes(i as i64))
        .collect()
}

/// Wraps a bare price path as a day, inventing a minute grid when the path
/// has no timestamps.
pub fn day_from_path(symbol: &str, path: PricePath, start: NaiveDateTime) -> Result<DayData> {
    let path = match path.timestamps {
        Some(_) => path,
        None => {
            let ts = minute_grid(start, path.len());
            PricePath::with_timestamps(path.prices, ts)?
        }
    };
    let date = path.timestamps.as_ref().expect("set above")[0].date();
    Ok(DayData {
        symbol: symbol.to_string(),
        date,
        segment: 0,
        filled: vec![false; path.len()],
        path,
    })
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

/// Creates `dir` if needed and returns `dir/name`.
pub(crate) fn out_file(dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    Ok(dir.join(name))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest(s: &str) -> Result<Vec<DayData>> {
        ingest_reader(s.as_bytes(), Path::new("test.csv"))
    }

    fn ts(s: &str) -> NaiveDateTime {
        parse_timestamp(s).unwrap()
    }

    #[test]
    fn three_rows() {
        let days = ingest(
            "symbol,timestamp,price\n\
             AAA,2024-01-02T09:30:00,10.0\n\
             AAA,2024-01-02T09:31:00,10.5\n\
             AAA,2024-01-02T09:32:00,10.25\n",
        )
        .unwrap();
        assert_eq!(days.len(), 1);
        assert_eq!(days[0].path.prices, vec![10.0, 10.5, 10.25]);
        assert_eq!(days[0].n_filled(), 0);
        assert_eq!(days[0].label(), "AAA_2024-01-02");
    }

    #[test]
    fn timestamp_forms() {
        let t = ts("2024-01-02T09:30:00");
        assert_eq!(ts("2024-01-02 09:30"), t);
        assert_eq!(ts("2024-01-02T09:30:00-05:00"), t);
        assert_eq!(ts("2024-01-02T09:30:00Z"), t);
        assert_eq!(format_timestamp(&t), "2024-01-02T09:30:00");
        assert!(parse_timestamp("yesterday").is_none());
    }

    #[test]
    fn sorts_and_groups() {
        let days = ingest(
            "BBB,2024-01-02T09:31:00,2\n\
             AAA,2024-01-03T09:30:00,5\n\
             BBB,2024-01-02T09:30:00,1\n\
             AAA,2024-01-03T09:31:00,6\n",
        )
        .unwrap();
        assert_eq!(days.len(), 2);
        assert_eq!(days[0].symbol, "AAA");
        assert_eq!(days[1].path.prices, vec![1.0, 2.0]);
    }

    #[test]
    fn duplicate_is_rejected() {
        let err = ingest(
            "AAA,2024-01-02T09:30:00,10\n\
             AAA,2024-01-02T09:31:00,11\n\
             AAA,2024-01-02T09:31:00,12\n",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("duplicate timestamp 2024-01-02T09:31:00"), "{msg}");
        assert!(msg.contains(":3:"), "{msg}");
    }

    #[test]
    fn bad_rows_report_line() {
        let err = ingest("AAA,2024-01-02T09:30:00,10\nAAA,2024-01-02T09:31:00,abc\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = ingest("AAA,2024-01-02T09:30:00,10\n\nAAA,2024-01-02T09:31:00,-1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = ingest("AAA,2024-01-02T09:30:00\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = ingest("AAA,noon,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn short_gap_is_filled() {
        let days = ingest(
            "AAA,2024-01-02T09:30:00,10\n\
             AAA,2024-01-02T09:31:00,11\n\
             AAA,2024-01-02T09:34:00,12\n\
             AAA,2024-01-02T09:35:00,13\n",
        )
        .unwrap();
        assert_eq!(days.len(), 1);
        let d = &days[0];
        assert_eq!(d.path.prices, vec![10.0, 11.0, 11.0, 11.0, 12.0, 13.0]);
        assert_eq!(d.filled, vec![false, false, true, true, false, false]);
        assert_eq!(d.timestamps()[2], ts("2024-01-02T09:32:00"));
        assert_eq!(d.timestamps()[3], ts("2024-01-02T09:33:00"));
    }

    #[test]
    fn long_gap_splits() {
        let days = ingest(
            "AAA,2024-01-02T09:30:00,10\n\
             AAA,2024-01-02T09:31:00,11\n\
             AAA,2024-01-02T09:37:00,12\n\
             AAA,2024-01-02T09:38:00,13\n\
             AAA,2024-01-02T09:44:00,14\n\
             AAA,2024-01-02T09:45:00,15\n",
        )
        .unwrap();
        // 09:31 -> 09:37 misses 5 minutes and is filled; 09:38 -> 09:44 too.
        assert_eq!(days.len(), 1);
        let days = ingest(
            "AAA,2024-01-02T09:30:00,10\n\
             AAA,2024-01-02T09:31:00,11\n\
             AAA,2024-01-02T09:38:00,12\n\
             AAA,2024-01-02T09:39:00,13\n",
        )
        .unwrap();
        assert_eq!(days.len(), 2);
        assert_eq!(days[1].segment, 1);
        assert_eq!(days[1].path.prices, vec![12.0, 13.0]);
        assert_eq!(days[1].label(), "AAA_2024-01-02_s1");
    }

    #[test]
    fn round_trip_through_writer() {
        let src = "AAA,2024-01-02T09:30:00,10.123456789\n\
                   AAA,2024-01-02T09:31:00,11\n\
                   AAA,2024-01-02T09:34:00,0.1\n\
                   BBB,2024-01-02T09:30:00.5,3\n\
                   BBB,2024-01-02T09:31:00.5,4\n";
        let days = ingest(src).unwrap();
        let mut buf = Vec::new();
        write_days(&days, &mut buf).unwrap();
        let again = ingest(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(days, again);
    }
}
