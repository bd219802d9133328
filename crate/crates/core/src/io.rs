//! Measurement files: CSV with header `t,V,freq,P,Q,Id,Iq`; an empty cell
//! marks a masked channel.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scenario::{MeasurementRecord, CHANNELS};

pub const HEADER: [&str; 7] = ["t", "V", "freq", "P", "Q", "Id", "Iq"];

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_measurements_to<W: Write>(w: W, records: &[MeasurementRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wr.write_record(HEADER).map_err(io)?;
    for r in records {
        let mut row = vec![r.t.to_string()];
        row.extend(r.channels().iter().map(|c| cell(*c)));
        wr.write_record(&row).map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_measurements(path: &Path, records: &[MeasurementRecord]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_measurements_to(std::io::BufWriter::new(f), records)
}

fn parse_err(line: u64, column: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        reason: reason.into(),
    }
}

/// Reads records, rejecting malformed rows and non-increasing timestamps.
/// Lines and columns are 1-based.
pub fn read_measurements_from<R: Read>(r: R) -> Result<Vec<MeasurementRecord>> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(r);
    let mut out: Vec<MeasurementRecord> = Vec::new();
    let mut header_seen = false;
    for row in rd.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, 0, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if !header_seen {
            let got: Vec<&str> = row.iter().collect();
            if got != HEADER {
                return Err(parse_err(line, 1, format!("expected header {}", HEADER.join(","))));
            }
            header_seen = true;
            continue;
        }
        if row.len() != HEADER.len() {
            return Err(parse_err(
                line,
                row.len().min(HEADER.len()) + 1,
                format!("expected {} fields, found {}", HEADER.len(), row.len()),
            ));
        }
        let num = |i: usize, s: &str| -> Result<f64> {
            let v: f64 = s
                .parse()
                .map_err(|_| parse_err(line, i + 1, format!("`{s}` is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(line, i + 1, format!("`{s}` is not finite")))
            }
        };
        let t = num(0, &row[0])?;
        let mut c = [None; 6];
        for (k, dst) in c.iter_mut().enumerate() {
            let s = &row[k + 1];
            if !s.is_empty() {
                *dst = Some(num(k + 1, s)?);
            }
        }
        if let Some(prev) = out.last() {
            if t <= prev.t {
                return Err(parse_err(line, 1, format!("time {t} does not increase")));
            }
        }
        out.push(MeasurementRecord::from_channels(t, c));
    }
    if !header_seen {
        return Err(parse_err(1, 1, "missing header"));
    }
    Ok(out)
}

pub fn read_measurements(path: &Path) -> Result<Vec<MeasurementRecord>> {
    read_measurements_from(std::fs::File::open(path)?)
}

/// Index of a channel name in [`CHANNELS`].
pub fn channel_index(name: &str) -> Option<usize> {
    CHANNELS.iter().position(|c| *c == name)
}
