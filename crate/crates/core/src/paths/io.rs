//! CSV path batches: header `series_id,t,ch0,ch1,...`, rows grouped by
//! `series_id`, strictly increasing `t` within a group.
//!
//! Time channels are not written; `t` already carries them.

use std::io::{Read, Write};

use super::{Path, PathBatch, TimeGrid};
use crate::error::{Error, Result};

pub fn write_batch_csv<W: Write>(batch: &PathBatch, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let first = batch.get(0);
    let channels = first.value_channels().count();
    let mut header = vec!["series_id".to_string(), "t".to_string()];
    header.extend((0..channels).map(|c| format!("ch{c}")));
    w.write_record(&header).map_err(csv_io)?;
    for (i, p) in batch.iter().enumerate() {
        for k in 0..p.len() {
            let mut rec = vec![i.to_string(), p.times()[k].to_string()];
            rec.extend(p.value_channels().map(|c| p.value(k, c).to_string()));
            w.write_record(&rec).map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads all series in file order as `(series_id, path)` pairs.
pub fn read_series_csv<R: Read>(reader: R) -> Result<Vec<(String, Path)>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = r.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.len() < 3 || &header[0] != "series_id" || &header[1] != "t" {
        return Err(parse_err(1, "header must be `series_id,t,ch0,...`".into()));
    }
    for (c, name) in header.iter().skip(2).enumerate() {
        if name != format!("ch{c}") {
            return Err(parse_err(1, format!("expected column `ch{c}`, found `{name}`")));
        }
    }
    let d = header.len() - 2;

    struct Group {
        id: String,
        times: Vec<f64>,
        values: Vec<f64>,
        first_line: usize,
    }
    let mut groups: Vec<Group> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != d + 2 {
            return Err(parse_err(line, format!("expected {} fields, got {}", d + 2, rec.len())));
        }
        let num = |s: &str| -> Result<f64> {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("not a number: `{s}`")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(line, format!("non-finite value `{s}`")))
            }
        };
        let id = rec[0].to_string();
        let t = num(&rec[1])?;
        let same_group = groups.last().map(|g| g.id == id).unwrap_or(false);
        if !same_group {
            if groups.iter().any(|g| g.id == id) {
                return Err(parse_err(line, format!("series `{id}` is not contiguous")));
            }
            groups.push(Group {
                id: id.clone(),
                times: Vec::new(),
                values: Vec::new(),
                first_line: line,
            });
        }
        let g = groups.last_mut().unwrap();
        if let Some(prev) = g.times.last() {
            if t <= *prev {
                return Err(parse_err(line, format!("time {t} not after {prev} in series `{id}`")));
            }
        }
        g.times.push(t);
        for c in 0..d {
            g.values.push(num(&rec[c + 2])?);
        }
    }
    if groups.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    groups
        .into_iter()
        .map(|g| {
            if g.times.len() < 2 {
                return Err(parse_err(
                    g.first_line,
                    format!("series `{}` has fewer than 2 rows", g.id),
                ));
            }
            let p = Path::new(TimeGrid::new(g.times)?, g.values, d)?;
            Ok((g.id, p))
        })
        .collect()
}

/// Reads a homogeneous batch (all series of equal length).
pub fn read_batch_csv<R: Read>(reader: R) -> Result<PathBatch> {
    PathBatch::new(read_series_csv(reader)?.into_iter().map(|(_, p)| p).collect())
}

fn parse_err(line: usize, msg: String) -> Error {
    Error::Parse { line, msg }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}
