//! CSV and config-file readers and writers.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(1970, 1, 1) {
    Some(d) => d,
    None => panic!("valid epoch"),
};

/// How the time column was written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeFormat {
    /// ISO-8601 calendar dates, stored as days since 1970-01-01.
    Date,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub entity: String,
    pub time: f64,
    /// `None` for the literal `NA`.
    pub value: Option<f64>,
    pub label: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    pub time_format: TimeFormat,
    pub has_labels: bool,
    pub records: Vec<SeriesRecord>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn csv_line(e: &csv::Error) -> usize {
    e.position().map_or(0, |p| p.line() as usize)
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(input)
}

fn check_header(rdr: &mut csv::Reader<impl Read>, required: &[&str], optional: &[&str]) -> Result<usize> {
    let header = rdr.headers().map_err(|e| parse_err(csv_line(&e), e.to_string()))?.clone();
    let names: Vec<String> = header.iter().map(|h| h.trim_start_matches('\u{feff}').to_ascii_lowercase()).collect();
    let ok = names.len() >= required.len()
        && names.len() <= required.len() + optional.len()
        && names.iter().zip(required.iter().chain(optional)).all(|(a, b)| a == b);
    if !ok {
        let expected = required.iter().chain(optional).copied().collect::<Vec<_>>().join(",");
        return Err(parse_err(1, format!("expected header `{expected}`, got `{}`", names.join(","))));
    }
    Ok(names.len())
}

fn parse_time(field: &str, line: usize) -> Result<(f64, TimeFormat)> {
    if let Ok(d) = NaiveDate::parse_from_str(field, "%Y-%m-%d") {
        return Ok(((d - EPOCH).num_days() as f64, TimeFormat::Date));
    }
    match field.parse::<f64>() {
        Ok(t) if t.is_finite() => Ok((t, TimeFormat::Numeric)),
        _ => Err(parse_err(line, format!("invalid time `{field}`"))),
    }
}

fn format_time(t: f64, format: TimeFormat) -> Result<String> {
    match format {
        TimeFormat::Numeric => Ok(format!("{t}")),
        TimeFormat::Date => {
            let day = (t.fract() == 0.0)
                .then(|| chrono::Duration::try_days(t as i64))
                .flatten()
                .and_then(|d| EPOCH.checked_add_signed(d))
                .ok_or_else(|| Error::InvalidInput(format!("time {t} is not a representable day")))?;
            Ok(day.format("%Y-%m-%d").to_string())
        }
    }
}

fn parse_value(field: &str, line: usize) -> Result<Option<f64>> {
    if field == "NA" {
        return Ok(None);
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(parse_err(line, format!("invalid value `{field}` (use NA for missing)"))),
    }
}

fn parse_label(field: &str, line: usize) -> Result<Option<bool>> {
    match field.to_ascii_lowercase().as_str() {
        "" | "na" => Ok(None),
        "1" | "true" => Ok(Some(true)),
        "0" | "false" => Ok(Some(false)),
        _ => Err(parse_err(line, format!("invalid label `{field}`"))),
    }
}

fn settle_format(current: &mut Option<TimeFormat>, seen: TimeFormat, line: usize) -> Result<()> {
    match current {
        Some(f) if *f != seen => Err(parse_err(line, "time column mixes dates and numbers")),
        _ => {
            *current = Some(seen);
            Ok(())
        }
    }
}

/// Reads `entity,time,value[,label]`.
pub fn parse_series_csv<R: Read>(input: R) -> Result<SeriesTable> {
    let mut rdr = reader(input);
    let columns = check_header(&mut rdr, &["entity", "time", "value"], &["label"])?;
    let mut format = None;
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| parse_err(csv_line(&e), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != columns {
            return Err(parse_err(line, format!("expected {columns} fields, found {}", row.len())));
        }
        let entity = row[0].to_string();
        if entity.is_empty() {
            return Err(parse_err(line, "empty entity id"));
        }
        let (time, f) = parse_time(&row[1], line)?;
        settle_format(&mut format, f, line)?;
        let value = parse_value(&row[2], line)?;
        let label = if columns == 4 { parse_label(&row[3], line)? } else { None };
        records.push(SeriesRecord { entity, time, value, label });
    }
    Ok(SeriesTable {
        time_format: format.unwrap_or(TimeFormat::Numeric),
        has_labels: columns == 4,
        records,
    })
}

pub fn write_series_csv<W: Write>(table: &SeriesTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::InvalidInput(e.to_string());
    if table.has_labels {
        w.write_record(["entity", "time", "value", "label"]).map_err(io)?;
    } else {
        w.write_record(["entity", "time", "value"]).map_err(io)?;
    }
    for r in &table.records {
        let time = format_time(r.time, table.time_format)?;
        let value = r.value.map_or_else(|| "NA".to_string(), |v| format!("{v}"));
        if table.has_labels {
            let label = match r.label {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            };
            w.write_record([r.entity.as_str(), &time, &value, label]).map_err(io)?;
        } else {
            w.write_record([r.entity.as_str(), &time, &value]).map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `time,hazard`; times must be strictly increasing.
pub fn parse_hazard_csv<R: Read>(input: R) -> Result<Vec<(f64, f64)>> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &["time", "hazard"], &[])?;
    let mut format = None;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| parse_err(csv_line(&e), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != 2 {
            return Err(parse_err(line, format!("expected 2 fields, found {}", row.len())));
        }
        let (t, f) = parse_time(&row[0], line)?;
        settle_format(&mut format, f, line)?;
        let h: f64 = row[1].parse().map_err(|_| parse_err(line, format!("invalid hazard `{}`", &row[1])))?;
        if !(0.0..=1.0).contains(&h) {
            return Err(parse_err(line, format!("hazard {h} outside [0, 1]")));
        }
        if let Some(&(prev, _)) = out.last() {
            if !(t > prev) {
                return Err(parse_err(line, format!("hazard times must increase ({t} after {prev})")));
            }
        }
        out.push((t, h));
    }
    Ok(out)
}

/// Flat `key = value` file; `#` starts a comment line.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| parse_err(line, format!("expected `key = value`, got `{s}`")))?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return Err(parse_err(line, format!("invalid key `{key}`")));
        }
        let value = value.trim().trim_matches('"').to_string();
        if out.insert(key.clone(), value).is_some() {
            return Err(parse_err(line, format!("duplicate key `{key}`")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_dates_na_and_labels() {
        let text = "entity,time,value,label\na,2020-03-01,0.1,0\na,2020-03-02,NA,1\nb,2020-03-01,0.5,\n";
        let t = parse_series_csv(text.as_bytes()).unwrap();
        assert_eq!(t.time_format, TimeFormat::Date);
        assert!(t.has_labels);
        assert_eq!(t.records[0].time, 18322.0);
        assert_eq!(t.records[1].value, None);
        assert_eq!(t.records[1].label, Some(true));
        assert_eq!(t.records[2].label, None);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_series_csv("id,time,value\n".as_bytes()).is_err());
        let e = parse_series_csv("entity,time,value\na,1,x\n".as_bytes()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        assert!(parse_series_csv("entity,time,value\na,1,2,3\n".as_bytes()).is_err());
        assert!(parse_series_csv("entity,time,value\na,2020-01-01,1\na,3,1\n".as_bytes()).is_err());
        assert!(parse_series_csv("entity,time,value\na,1,inf\n".as_bytes()).is_err());
        assert!(parse_hazard_csv("time,hazard\n1,0.1\n1,0.2\n".as_bytes()).is_err());
        assert!(parse_hazard_csv("time,hazard\n1,1.5\n".as_bytes()).is_err());
        assert!(parse_config("seed 4").is_err());
        assert!(parse_config("a=1\na=2").is_err());
    }

    #[test]
    fn config_file() {
        let c = parse_config("# run\nkernel = matern12\n\nnugget_ratio=0.1\nout = \"x.json\"\n").unwrap();
        assert_eq!(c["kernel"], "matern12");
        assert_eq!(c["nugget-ratio"], "0.1");
        assert_eq!(c["out"], "x.json");
    }

    #[test]
    fn hazard_file() {
        let h = parse_hazard_csv("time,hazard\n2021-01-01,0.01\n2021-01-02,0.02\n".as_bytes()).unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!(h[1].1, 0.02);
    }

    fn arb_table() -> impl Strategy<Value = SeriesTable> {
        (any::<bool>(), any::<bool>(), prop::collection::vec(
            ("[a-z][a-z0-9_]{0,6}", -5000i32..5000, prop::option::of(-1e6f64..1e6), prop::option::of(any::<bool>())),
            0..30,
        ))
            .prop_map(|(dates, labels, rows)| SeriesTable {
                time_format: if dates { TimeFormat::Date } else { TimeFormat::Numeric },
                has_labels: labels,
                records: rows
                    .into_iter()
                    .map(|(entity, t, value, label)| SeriesRecord {
                        entity,
                        time: if dates { t as f64 } else { t as f64 / 8.0 },
                        value,
                        label: if labels { label } else { None },
                    })
                    .collect(),
            })
    }

    proptest! {
        #[test]
        fn round_trip(table in arb_table()) {
            let mut buf = Vec::new();
            write_series_csv(&table, &mut buf).unwrap();
            let back = parse_series_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(&back.records, &table.records);
            prop_assert_eq!(back.has_labels, table.has_labels);
            if !table.records.is_empty() {
                prop_assert_eq!(back.time_format, table.time_format);
            }
            let mut again = Vec::new();
            write_series_csv(&back, &mut again).unwrap();
            prop_assert_eq!(buf, again);
        }

        #[test]
        fn parsers_never_panic(s in "\\PC{0,200}") {
            let _ = parse_series_csv(s.as_bytes());
            let _ = parse_hazard_csv(s.as_bytes());
            let _ = parse_config(&s);
        }
    }
}
