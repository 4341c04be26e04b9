//! Dataset construction and the canonical record format.
//!
//! Records are stored one JSON object per line (`.ndrec`), with a
//! `<stem>.manifest.json` file alongside describing the dataset.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{Months, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalization::{compute_domain_stats, DomainStats, TimeSeries};
use crate::prompting::SpanUnit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Hourly,
    Monthly,
}

impl Granularity {
    pub fn span_unit(self) -> SpanUnit {
        match self {
            Granularity::Hourly => SpanUnit::Hours,
            Granularity::Monthly => SpanUnit::Months,
        }
    }
}

/// Where a record's start date came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DateSource {
    #[default]
    Source,
    Synthesized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub granularity: Granularity,
    pub start_date: NaiveDateTime,
    #[serde(default)]
    pub date_source: DateSource,
    pub context: TimeSeries<f64>,
    pub target: TimeSeries<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub horizon: usize,
    pub context_lengths: Vec<usize>,
    pub record_count: usize,
    #[serde(default)]
    pub stats: Option<DomainStats<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub horizon: usize,
    pub records: Vec<DatasetRecord>,
    pub stats: Option<DomainStats<f64>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, horizon: usize, records: Vec<DatasetRecord>) -> Self {
        Self { name: name.into(), horizon, records, stats: None }
    }

    /// Distinct context lengths in order of first appearance.
    pub fn context_lengths(&self) -> Vec<usize> {
        let mut seen = HashSet::new();
        self.records.iter().map(|r| r.context.len()).filter(|l| seen.insert(*l)).collect()
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            name: self.name.clone(),
            horizon: self.horizon,
            context_lengths: self.context_lengths(),
            record_count: self.records.len(),
            stats: self.stats,
        }
    }

    pub fn get(&self, id: &str) -> Option<&DatasetRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Pooled context statistics of the first `n` records.
    pub fn calibration_stats(&self, n: usize) -> Result<DomainStats<f64>> {
        compute_domain_stats(self.records.iter().take(n).map(|r| &r.context))
    }
}

/// `<dir>/<stem>.manifest.json` for a records file `<dir>/<stem>.<ext>`.
pub fn manifest_path(records_path: &Path) -> PathBuf {
    let stem = records_path.file_stem().and_then(|s| s.to_str()).unwrap_or("records");
    records_path.with_file_name(format!("{stem}.manifest.json"))
}

pub fn write_records(dataset: &Dataset, path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in &dataset.records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;

    let manifest = dataset.manifest();
    write_manifest(&manifest, &manifest_path(path))?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Reads a records file. When a manifest sits alongside, the horizon,
/// context lengths and record count are checked against it; otherwise the
/// first record sets the horizon.
pub fn read_records(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mpath = manifest_path(path);
    let manifest: Option<DatasetManifest> =
        if mpath.exists() {
            let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
            Some(serde_json::from_str(&text).map_err(|e| Error::SchemaViolation {
                line: 0,
                reason: format!("manifest {}: {e}", mpath.display()),
            })?)
        } else {
            None
        };

    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut horizon = manifest.as_ref().map(|m| m.horizon);
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord =
            serde_json::from_str(&line).map_err(|e| Error::SchemaViolation { line: line_no, reason: e.to_string() })?;
        let h = *horizon.get_or_insert(record.target.len());
        if record.target.len() != h {
            return Err(Error::SchemaViolation {
                line: line_no,
                reason: format!("target length {} differs from horizon {h}", record.target.len()),
            });
        }
        if let Some(m) = &manifest {
            if !m.context_lengths.contains(&record.context.len()) {
                return Err(Error::SchemaViolation {
                    line: line_no,
                    reason: format!(
                        "context length {} not among declared {:?}",
                        record.context.len(),
                        m.context_lengths
                    ),
                });
            }
        }
        records.push(record);
    }

    let name = manifest
        .as_ref()
        .map(|m| m.name.clone())
        .or_else(|| path.file_stem().and_then(|s| s.to_str()).map(str::to_string))
        .unwrap_or_default();
    if let Some(m) = &manifest {
        if m.record_count != records.len() {
            return Err(Error::SchemaViolation {
                line: records.len(),
                reason: format!("manifest declares {} records, file holds {}", m.record_count, records.len()),
            });
        }
    }
    Ok(Dataset { name, horizon: horizon.unwrap_or(0), records, stats: manifest.and_then(|m| m.stats) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IhepcOptions {
    pub horizon: usize,
    pub context_len: usize,
    pub max_series: usize,
    /// Distance between window starts; `None` means back-to-back windows.
    pub stride: Option<usize>,
    /// Minimum valid minutes for an hour to count.
    pub min_valid_minutes: usize,
}

impl Default for IhepcOptions {
    fn default() -> Self {
        Self { horizon: 6, context_len: 96, max_series: 3000, stride: None, min_valid_minutes: 30 }
    }
}

/// Hourly means of `Global_intensity`, one entry per clock hour from the
/// first to the last observed hour. `None` marks hours with too few valid
/// minutes.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlySeries {
    pub start: NaiveDateTime,
    pub values: Vec<Option<f64>>,
}

pub fn ihepc_hourly(reader: impl BufRead, min_valid_minutes: usize) -> Result<HourlySeries> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::UnparsableRow { row: 1, reason: e.to_string() })?,
        None => return Err(Error::MissingColumn("Date".into())),
    };
    let columns: Vec<&str> = header.trim().split(';').map(str::trim).collect();
    let find = |name: &str| {
        columns.iter().position(|c| c.eq_ignore_ascii_case(name)).ok_or_else(|| Error::MissingColumn(name.into()))
    };
    let (date_col, time_col, value_col) = (find("Date")?, find("Time")?, find("Global_intensity")?);
    let needed = date_col.max(time_col).max(value_col) + 1;

    let mut hours: BTreeMap<NaiveDateTime, Vec<f64>> = BTreeMap::new();
    for (idx, line) in lines.enumerate() {
        let row = idx + 2;
        let line = line.map_err(|e| Error::UnparsableRow { row, reason: e.to_string() })?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(';').collect();
        let bad = |reason: String| Error::UnparsableRow { row, reason };
        if fields.len() < needed {
            return Err(bad(format!("expected at least {needed} fields, found {}", fields.len())));
        }
        let date = NaiveDate::parse_from_str(fields[date_col].trim(), "%d/%m/%Y")
            .map_err(|e| bad(format!("date `{}`: {e}", fields[date_col])))?;
        let time = NaiveTime::parse_from_str(fields[time_col].trim(), "%H:%M:%S")
            .map_err(|e| bad(format!("time `{}`: {e}", fields[time_col])))?;
        let raw = fields[value_col].trim();
        if raw == "?" || raw.is_empty() {
            continue;
        }
        let value: f64 = raw.parse().map_err(|_| bad(format!("value `{raw}`")))?;
        if !value.is_finite() {
            return Err(bad(format!("value `{raw}` is not finite")));
        }
        let hour = date.and_hms_opt(time.hour(), 0, 0).expect("valid hour");
        hours.entry(hour).or_default().push(value);
    }

    let Some((&start, _)) = hours.first_key_value() else {
        return Ok(HourlySeries { start: NaiveDateTime::MIN, values: Vec::new() });
    };
    let (&end, _) = hours.last_key_value().expect("non-empty");
    let span = (end - start).num_hours() as usize + 1;
    let mut values = vec![None; span];
    for (hour, mut minutes) in hours {
        if minutes.len() < min_valid_minutes.max(1) {
            continue;
        }
        // sorted summation makes the mean independent of row order
        minutes.sort_by(f64::total_cmp);
        let mean = minutes.iter().sum::<f64>() / minutes.len() as f64;
        values[(hour - start).num_hours() as usize] = Some(mean);
    }
    Ok(HourlySeries { start, values })
}

pub fn ingest_ihepc(input: impl AsRef<Path>, opts: &IhepcOptions) -> Result<Dataset> {
    let input = input.as_ref();
    let file = File::open(input).map_err(|e| Error::io(input, e))?;
    let hourly = ihepc_hourly(BufReader::new(file), opts.min_valid_minutes)?;
    windows_from_hourly(&hourly, opts)
}

pub fn windows_from_hourly(hourly: &HourlySeries, opts: &IhepcOptions) -> Result<Dataset> {
    if opts.horizon == 0 || opts.context_len == 0 {
        return Err(Error::InvalidParams("context_len and horizon must be positive".into()));
    }
    let window = opts.context_len + opts.horizon;
    let stride = opts.stride.unwrap_or(window);
    if stride == 0 {
        return Err(Error::InvalidParams("stride must be positive".into()));
    }
    let mut records = Vec::new();
    let mut start = 0;
    while start + window <= hourly.values.len() && records.len() < opts.max_series {
        let slice = &hourly.values[start..start + window];
        if let Some(values) = slice.iter().copied().collect::<Option<Vec<f64>>>() {
            let (context, target) = values.split_at(opts.context_len);
            records.push(DatasetRecord {
                id: format!("aihepc-{:05}", records.len()),
                granularity: Granularity::Hourly,
                start_date: hourly.start + chrono::Duration::hours(start as i64),
                date_source: DateSource::Source,
                context: TimeSeries::new(context.to_vec())?,
                target: TimeSeries::new(target.to_vec())?,
            });
        }
        start += stride;
    }
    Ok(Dataset::new("aihepc", opts.horizon, records))
}

#[derive(Debug, Clone, PartialEq)]
pub struct M4Options {
    pub lengths: Vec<usize>,
    pub horizon: usize,
    pub counts: Vec<usize>,
    /// `M4-info.csv` with per-series starting dates.
    pub info_path: Option<PathBuf>,
}

impl Default for M4Options {
    fn default() -> Self {
        Self { lengths: vec![64, 49], horizon: 18, counts: vec![965, 1104], info_path: None }
    }
}

/// Epoch for start dates when no metadata is available.
pub fn synthetic_epoch() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2000, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
}

fn csv_fields(line: &str) -> Vec<&str> {
    line.split(',').map(|f| f.trim().trim_matches('"')).collect()
}

/// Raw M4 rows as `(id, values)` in file order. A header row (second field
/// not numeric) is skipped.
pub fn parse_m4_table(reader: impl BufRead) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let row = idx + 1;
        let line = line.map_err(|e| Error::UnparsableRow { row, reason: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields = csv_fields(&line);
        if idx == 0 && fields.get(1).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let id = fields[0].to_string();
        if id.is_empty() {
            return Err(Error::UnparsableRow { row, reason: "empty series id".into() });
        }
        let values = fields[1..]
            .iter()
            .filter(|f| !f.is_empty())
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::UnparsableRow { row, reason: format!("value `{f}`") })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((id, values));
    }
    Ok(rows)
}

/// Starting dates from `M4-info.csv` (`M4id,...,StartingDate`).
pub fn parse_m4_info(reader: impl BufRead) -> Result<HashMap<String, NaiveDateTime>> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::UnparsableRow { row: 1, reason: e.to_string() })?,
        None => return Ok(HashMap::new()),
    };
    let cols = csv_fields(&header);
    let id_col = cols.iter().position(|c| *c == "M4id").ok_or_else(|| Error::MissingColumn("M4id".into()))?;
    let date_col =
        cols.iter().position(|c| *c == "StartingDate").ok_or_else(|| Error::MissingColumn("StartingDate".into()))?;
    let mut out = HashMap::new();
    for (idx, line) in lines.enumerate() {
        let row = idx + 2;
        let line = line.map_err(|e| Error::UnparsableRow { row, reason: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields = csv_fields(&line);
        let (Some(id), Some(date)) = (fields.get(id_col), fields.get(date_col)) else {
            return Err(Error::UnparsableRow { row, reason: "missing fields".into() });
        };
        let parsed = NaiveDateTime::parse_from_str(date, "%d-%m-%y %H:%M")
            .or_else(|_| NaiveDateTime::parse_from_str(date, "%Y-%m-%d %H:%M:%S"))
            .or_else(|_| NaiveDate::parse_from_str(date, "%Y-%m-%d").map(|d| d.and_hms_opt(0, 0, 0).unwrap()))
            .map_err(|e| Error::UnparsableRow { row, reason: format!("date `{date}`: {e}") })?;
        out.insert(id.to_string(), parsed);
    }
    Ok(out)
}

pub fn ingest_m4(input: impl AsRef<Path>, opts: &M4Options) -> Result<Dataset> {
    let input = input.as_ref();
    let file = File::open(input).map_err(|e| Error::io(input, e))?;
    let rows = parse_m4_table(BufReader::new(file))?;
    let info = match &opts.info_path {
        Some(p) => {
            let f = File::open(p).map_err(|e| Error::io(p, e))?;
            parse_m4_info(BufReader::new(f))?
        }
        None => HashMap::new(),
    };
    select_m4(&rows, &info, opts)
}

/// Fills each requested `(length, count)` bucket in file order, using every
/// source series at most once and keeping its trailing `length + horizon`
/// values.
pub fn select_m4(
    rows: &[(String, Vec<f64>)],
    info: &HashMap<String, NaiveDateTime>,
    opts: &M4Options,
) -> Result<Dataset> {
    if opts.lengths.len() != opts.counts.len() {
        return Err(Error::InvalidParams(format!("{} lengths but {} counts", opts.lengths.len(), opts.counts.len())));
    }
    if opts.horizon == 0 || opts.lengths.contains(&0) {
        return Err(Error::InvalidParams("lengths and horizon must be positive".into()));
    }
    let mut used = vec![false; rows.len()];
    let mut records = Vec::new();
    for (&len, &count) in opts.lengths.iter().zip(&opts.counts) {
        let total = len + opts.horizon;
        let mut filled = 0;
        for (i, (id, values)) in rows.iter().enumerate() {
            if filled == count {
                break;
            }
            if used[i] || values.len() < total {
                continue;
            }
            used[i] = true;
            filled += 1;
            let offset = values.len() - total;
            let tail = &values[offset..];
            let (start, source) = match info.get(id) {
                Some(d) => (*d, DateSource::Source),
                None => (synthetic_epoch(), DateSource::Synthesized),
            };
            let start_date = start
                .checked_add_months(Months::new(offset as u32))
                .ok_or_else(|| Error::InvalidParams(format!("start date overflow for {id}")))?;
            records.push(DatasetRecord {
                id: id.clone(),
                granularity: Granularity::Monthly,
                start_date,
                date_source: source,
                context: TimeSeries::new(tail[..len].to_vec())?,
                target: TimeSeries::new(tail[len..].to_vec())?,
            });
        }
        if filled < count {
            return Err(Error::InsufficientSeries { context_len: len, requested: count, found: filled });
        }
    }
    Ok(Dataset::new("sm4", opts.horizon, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    const HEADER: &str = "Date;Time;Global_active_power;Global_reactive_power;Voltage;Global_intensity;Sub_metering_1;Sub_metering_2;Sub_metering_3";

    fn minute_file(days: u32, value: impl Fn(u32, u32) -> Option<f64>) -> String {
        let mut s = String::from(HEADER);
        s.push('\n');
        for d in 0..days {
            for h in 0..24 {
                for m in 0..60 {
                    let v = value(d * 24 + h, m).map_or("?".to_string(), |v| format!("{v}"));
                    s.push_str(&format!("{}/1/2007;{h:02}:{m:02}:00;1;0;240;{v};0;0;0\n", d + 1));
                }
            }
        }
        s
    }

    #[test]
    fn constant_three_days_yields_no_full_window() {
        let text = minute_file(3, |_, _| Some(5.0));
        let hourly = ihepc_hourly(Cursor::new(text), 30).unwrap();
        assert_eq!(hourly.values.len(), 72);
        assert!(hourly.values.iter().all(|v| *v == Some(5.0)));
        let ds = windows_from_hourly(&hourly, &IhepcOptions::default()).unwrap();
        assert!(ds.records.is_empty());
    }

    #[test]
    fn hourly_mean_of_one_to_sixty() {
        let text = minute_file(1, |h, m| (h == 0).then_some(m as f64 + 1.0).or(Some(0.0)));
        let hourly = ihepc_hourly(Cursor::new(text), 30).unwrap();
        assert_eq!(hourly.values[0], Some(30.5));
    }

    #[test]
    fn sparse_hours_are_invalid_and_break_windows() {
        // hour 3 keeps only 20 valid minutes
        let text = minute_file(1, |h, m| if h == 3 && m >= 20 { None } else { Some(h as f64) });
        let hourly = ihepc_hourly(Cursor::new(text), 30).unwrap();
        assert_eq!(hourly.values[3], None);
        assert_eq!(hourly.values[4], Some(4.0));
        let opts = IhepcOptions { horizon: 1, context_len: 3, max_series: 10, ..Default::default() };
        let ds = windows_from_hourly(&hourly, &opts).unwrap();
        // windows [0,4) contains hour 3 -> skipped; 6 windows of 4 hours
        assert_eq!(ds.records.len(), 5);
        assert_eq!(ds.records[0].context.values(), &[4.0, 5.0, 6.0]);
        assert_eq!(ds.records[0].target.values(), &[7.0]);
        assert_eq!(ds.records[0].start_date.hour(), 4);
    }

    #[test]
    fn windows_are_disjoint_and_cover_their_slice() {
        let hourly = HourlySeries { start: synthetic_epoch(), values: (0..50).map(|i| Some(i as f64)).collect() };
        let opts = IhepcOptions { horizon: 2, context_len: 5, max_series: 100, ..Default::default() };
        let ds = windows_from_hourly(&hourly, &opts).unwrap();
        assert_eq!(ds.records.len(), 7);
        let mut expected = 0.0;
        for r in &ds.records {
            for v in r.context.values().iter().chain(r.target.values()) {
                assert_eq!(*v, expected);
                expected += 1.0;
            }
        }
        let capped = windows_from_hourly(&hourly, &IhepcOptions { max_series: 2, ..opts.clone() }).unwrap();
        assert_eq!(capped.records.len(), 2);
        let strided = windows_from_hourly(&hourly, &IhepcOptions { stride: Some(3), ..opts }).unwrap();
        assert_eq!(strided.records.len(), 15);
    }

    #[test]
    fn ihepc_errors() {
        let missing = "Date;Time;Voltage\n1/1/2007;00:00:00;240\n";
        assert!(
            matches!(ihepc_hourly(Cursor::new(missing), 30), Err(Error::MissingColumn(c)) if c == "Global_intensity")
        );
        let bad = format!("{HEADER}\n1/1/2007;00:00:00;1;0;240;abc;0;0;0\n");
        assert!(matches!(ihepc_hourly(Cursor::new(bad), 30), Err(Error::UnparsableRow { row: 2, .. })));
        let short = format!("{HEADER}\n1/1/2007;00:00:00\n");
        assert!(matches!(ihepc_hourly(Cursor::new(short), 30), Err(Error::UnparsableRow { row: 2, .. })));
    }

    #[test]
    fn hourly_mean_ignores_row_order() {
        let text = minute_file(1, |h, m| Some(0.1 * (h * 60 + m) as f64 + 1e-3 * (m * m) as f64));
        let mut lines: Vec<&str> = text.lines().collect();
        let header = lines.remove(0);
        let forward = ihepc_hourly(Cursor::new(text.clone()), 30).unwrap();
        lines.reverse();
        let reversed = format!("{header}\n{}\n", lines.join("\n"));
        let backward = ihepc_hourly(Cursor::new(reversed), 30).unwrap();
        assert_eq!(forward, backward);
    }

    fn m4_rows() -> Vec<(String, Vec<f64>)> {
        vec![
            ("M1".into(), (0..67).map(f64::from).collect()),
            ("M2".into(), (0..50).map(f64::from).collect()),
            ("M3".into(), (0..90).map(f64::from).collect()),
        ]
    }

    #[test]
    fn m4_slicing_takes_trailing_window() {
        let opts = M4Options { lengths: vec![49], horizon: 18, counts: vec![2], info_path: None };
        let ds = select_m4(&m4_rows(), &HashMap::new(), &opts).unwrap();
        assert_eq!(ds.records.len(), 2);
        let r = &ds.records[0];
        assert_eq!(r.id, "M1");
        assert_eq!(r.context.values(), (0..49).map(f64::from).collect::<Vec<_>>().as_slice());
        assert_eq!(r.target.values(), (49..67).map(f64::from).collect::<Vec<_>>().as_slice());
        // M2 has 50 < 67 values
        assert_eq!(ds.records[1].id, "M3");
        assert_eq!(ds.records[1].context.values()[0], 23.0);
        assert_eq!(ds.records[1].date_source, DateSource::Synthesized);
        assert_eq!(
            ds.records[1].start_date,
            NaiveDate::from_ymd_opt(2001, 12, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
        );
    }

    #[test]
    fn m4_buckets_do_not_share_series() {
        let opts = M4Options { lengths: vec![64, 49], horizon: 18, counts: vec![1, 1], info_path: None };
        let ds = select_m4(&m4_rows(), &HashMap::new(), &opts).unwrap();
        assert_eq!(ds.records.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), vec!["M3", "M1"]);
        assert_eq!(ds.context_lengths(), vec![64, 49]);
        let greedy = M4Options { counts: vec![1, 2], ..opts };
        assert!(matches!(
            select_m4(&m4_rows(), &HashMap::new(), &greedy),
            Err(Error::InsufficientSeries { context_len: 49, requested: 2, found: 1 })
        ));
    }

    #[test]
    fn m4_table_and_info_parsing() {
        let table = "\"V1\",\"V2\",\"V3\",\"V4\"\n\"M1\",\"1\",\"2.5\",\"\"\n\"M2\",\"3\",\"\",\"\"\n";
        let rows = parse_m4_table(Cursor::new(table)).unwrap();
        assert_eq!(rows, vec![("M1".into(), vec![1.0, 2.5]), ("M2".into(), vec![3.0])]);
        let bad = "V1,V2\nM1,x\n";
        assert!(matches!(parse_m4_table(Cursor::new(bad)), Err(Error::UnparsableRow { row: 2, .. })));

        let info = "\"M4id\",\"category\",\"Frequency\",\"Horizon\",\"SP\",\"StartingDate\"\n\"M1\",\"Macro\",12,18,\"Monthly\",\"01-12-09 12:00\"\n";
        let map = parse_m4_info(Cursor::new(info)).unwrap();
        assert_eq!(map["M1"], NaiveDate::from_ymd_opt(2009, 12, 1).unwrap().and_hms_opt(12, 0, 0).unwrap());
    }

    #[test]
    fn records_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ndrec");
        let mut ds = select_m4(
            &[("A".into(), vec![0.1, 1.0 / 3.0, 2e-17, 12345.678901234567, 5.0, 6.0])],
            &HashMap::new(),
            &M4Options { lengths: vec![4], horizon: 2, counts: vec![1], info_path: None },
        )
        .unwrap();
        ds.stats = Some(DomainStats::new(1.0, 2.0, 6).unwrap());
        let manifest = write_records(&ds, &path).unwrap();
        assert_eq!(manifest.record_count, 1);
        assert!(dir.path().join("d.manifest.json").exists());
        let back = read_records(&path).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn schema_violations_report_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ndrec");
        let rec = |target: &str| {
            format!(
                "{{\"id\":\"x\",\"granularity\":\"monthly\",\"start_date\":\"2000-01-01T00:00:00\",\"context\":[1.0,2.0],\"target\":{target}}}\n"
            )
        };
        std::fs::write(&path, rec("[1.0,2.0]") + &rec("[1.0]")).unwrap();
        assert!(matches!(read_records(&path), Err(Error::SchemaViolation { line: 2, .. })));
        std::fs::write(&path, rec("[]")).unwrap();
        assert!(matches!(read_records(&path), Err(Error::SchemaViolation { line: 1, .. })));
        std::fs::write(&path, "").unwrap();
        let empty = read_records(&path).unwrap();
        assert!(empty.records.is_empty());
    }
}
