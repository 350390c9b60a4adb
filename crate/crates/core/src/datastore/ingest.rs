use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{AssetRecord, AttrValue, DataError};
use crate::geo::GeoPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "ndjson" => Ok(Format::Jsonl),
            other => Err(format!("unknown dataset format {other:?}")),
        }
    }
}

const REQUIRED: [&str; 4] = ["id", "lat", "lon", "ts"];

/// Records paired with their 1-based file line.
pub(super) fn read(reader: impl Read, format: Format) -> Result<Vec<(usize, AssetRecord)>, DataError> {
    match format {
        Format::Csv => read_csv(reader),
        Format::Jsonl => read_jsonl(reader),
    }
}

fn parse_err(row: usize, reason: impl Into<String>) -> DataError {
    DataError::Parse {
        row,
        reason: reason.into(),
    }
}

fn parse_ts(row: usize, s: &str) -> Result<DateTime<Utc>, DataError> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| parse_err(row, format!("ts {s:?}: {e}")))
}

fn parse_coord(row: usize, name: &str, s: &str) -> Result<f64, DataError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| parse_err(row, format!("{name} {s:?} is not a number")))
}

fn finish(row: usize, id: String, lat: f64, lon: f64, ts: DateTime<Utc>, attrs: BTreeMap<String, AttrValue>) -> Result<AssetRecord, DataError> {
    let pos = GeoPoint::new(lat, lon).map_err(|e| parse_err(row, e.to_string()))?;
    if id.is_empty() {
        return Err(parse_err(row, "empty id"));
    }
    Ok(AssetRecord { id, pos, ts, attrs })
}

/// Rows are numbered by file line, header = line 1.
fn read_csv(reader: impl Read) -> Result<Vec<(usize, AssetRecord)>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(REQUIRED) {
        *slot = col(name).ok_or_else(|| parse_err(1, format!("missing column {name:?}")))?;
    }
    let mut extra = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        if REQUIRED.contains(&h) {
            continue;
        }
        if !crate::query::is_identifier(h) {
            return Err(parse_err(1, format!("invalid attribute column {h:?}")));
        }
        extra.push((i, h.to_string()));
    }
    let mut out = Vec::new();
    for result in rdr.records() {
        let rec = result.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            parse_err(row, e.to_string())
        })?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let lat = parse_coord(row, "lat", field(idx[1]))?;
        let lon = parse_coord(row, "lon", field(idx[2]))?;
        let ts = parse_ts(row, field(idx[3]))?;
        let mut attrs = BTreeMap::new();
        for (i, name) in &extra {
            let raw = field(*i);
            if raw.is_empty() {
                continue;
            }
            let v = match raw.parse::<f64>() {
                Ok(n) if n.is_finite() => AttrValue::Num(n),
                _ => AttrValue::Str(raw.to_string()),
            };
            attrs.insert(name.clone(), v);
        }
        out.push((row, finish(row, field(idx[0]).to_string(), lat, lon, ts, attrs)?));
    }
    Ok(out)
}

fn read_jsonl(reader: impl Read) -> Result<Vec<(usize, AssetRecord)>, DataError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let row = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| parse_err(row, e.to_string()))?;
        let serde_json::Value::Object(map) = v else {
            return Err(parse_err(row, "expected a JSON object"));
        };
        let id = match map.get("id") {
            Some(serde_json::Value::String(s)) => s.clone(),
            _ => return Err(parse_err(row, "id must be a string")),
        };
        let num = |k: &str| {
            map.get(k)
                .and_then(|v| v.as_f64())
                .ok_or_else(|| parse_err(row, format!("{k} must be a number")))
        };
        let (lat, lon) = (num("lat")?, num("lon")?);
        let ts = match map.get("ts") {
            Some(serde_json::Value::String(s)) => parse_ts(row, s)?,
            _ => return Err(parse_err(row, "ts must be an RFC 3339 string")),
        };
        let mut attrs = BTreeMap::new();
        for (k, v) in &map {
            if REQUIRED.contains(&k.as_str()) {
                continue;
            }
            if !crate::query::is_identifier(k) {
                return Err(parse_err(row, format!("invalid attribute name {k:?}")));
            }
            let v = match v {
                serde_json::Value::Null => continue,
                serde_json::Value::String(s) => AttrValue::Str(s.clone()),
                serde_json::Value::Number(n) => match n.as_f64() {
                    Some(x) if x.is_finite() => AttrValue::Num(x),
                    _ => return Err(parse_err(row, format!("{k}: unrepresentable number"))),
                },
                _ => return Err(parse_err(row, format!("{k}: expected string or number"))),
            };
            attrs.insert(k.clone(), v);
        }
        out.push((row, finish(row, id, lat, lon, ts, attrs)?));
    }
    Ok(out)
}
