use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layout of a delimiter-separated event log with one header line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvFormat {
    pub delimiter: char,
    pub session_column: usize,
    pub item_column: usize,
    pub time_column: usize,
}

impl Default for CsvFormat {
    fn default() -> Self {
        CsvFormat {
            delimiter: ',',
            session_column: 0,
            item_column: 1,
            time_column: 2,
        }
    }
}

/// Events of one session in timestamp order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSession {
    pub key: String,
    pub items: Vec<String>,
}

pub fn ingest(path: &Path, format: &CsvFormat) -> Result<Vec<RawSession>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, path, format)
}

/// Groups events by session key (sessions returned in key order) and sorts each
/// group by timestamp, keeping input order among equal timestamps.
pub fn ingest_reader(reader: impl Read, path: &Path, format: &CsvFormat) -> Result<Vec<RawSession>> {
    if !format.delimiter.is_ascii() {
        return Err(Error::config("delimiter", "must be a single ASCII character"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter as u8)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut groups: BTreeMap<String, Vec<(i64, String)>> = BTreeMap::new();
    let needed = format
        .session_column
        .max(format.item_column)
        .max(format.time_column);
    let mut events = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() <= needed {
            return Err(parse_err(
                line,
                format!("expected at least {} columns, found {}", needed + 1, rec.len()),
            ));
        }
        let ts = rec[format.time_column].trim();
        let ts: i64 = ts
            .parse()
            .map_err(|_| parse_err(line, format!("timestamp {ts:?} is not an integer")))?;
        groups
            .entry(rec[format.session_column].trim().to_owned())
            .or_default()
            .push((ts, rec[format.item_column].trim().to_owned()));
        events += 1;
    }
    if events == 0 {
        return Err(Error::Format(format!("{}: no events", path.display())));
    }
    Ok(groups
        .into_iter()
        .map(|(key, mut ev)| {
            ev.sort_by_key(|e| e.0);
            RawSession {
                key,
                items: ev.into_iter().map(|e| e.1).collect(),
            }
        })
        .collect())
}
