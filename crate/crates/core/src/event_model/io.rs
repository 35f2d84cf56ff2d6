//! Event stream containers: `t,h,w,p` CSV and the packed little-endian `EVT1` format.
//!
//! `EVT1` layout: magic `b"EVT1"`, `u32` record count, then per record
//! `f64 t, u16 h, u16 w, i8 p` (13 bytes, no padding).

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use super::{Event, FusedEvent};
use crate::error::{Error, Result};

pub const EVT1_MAGIC: &[u8; 4] = b"EVT1";
pub const EVT1_RECORD_BYTES: usize = 13;
pub const EVENT_CSV_HEADER: &str = "t,h,w,p";
pub const FUSED_CSV_HEADER: &str = "h,w,t_avg,p_acc,c";

pub fn read_csv<R: BufRead>(reader: R) -> Result<Vec<Event>> {
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != EVENT_CSV_HEADER {
        return Err(Error::Format(format!("line 1: expected header `{EVENT_CSV_HEADER}`, found `{}`", header.trim())));
    }
    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = i + 2;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!("line {lineno}: expected 4 fields, found {}", fields.len())));
        }
        let bad = |what: &str| Error::Format(format!("line {lineno}: invalid {what} `{line}`"));
        let t: f64 = fields[0].parse().map_err(|_| bad("timestamp"))?;
        let h: u16 = fields[1].parse().map_err(|_| bad("row"))?;
        let w: u16 = fields[2].parse().map_err(|_| bad("column"))?;
        let p: i8 = fields[3].parse().map_err(|_| bad("polarity"))?;
        if p != 1 && p != -1 {
            return Err(bad("polarity"));
        }
        if !t.is_finite() || t < 0.0 {
            return Err(bad("timestamp"));
        }
        events.push(Event::new(h, w, t, p));
    }
    Ok(events)
}

pub fn write_csv<W: Write>(mut writer: W, events: &[Event]) -> Result<()> {
    writeln!(writer, "{EVENT_CSV_HEADER}")?;
    for e in events {
        writeln!(writer, "{},{},{},{}", e.t, e.h, e.w, e.p)?;
    }
    Ok(())
}

pub fn write_fused_csv<W: Write>(mut writer: W, fused: &[FusedEvent]) -> Result<()> {
    writeln!(writer, "{FUSED_CSV_HEADER}")?;
    for f in fused {
        writeln!(writer, "{},{},{},{},{}", f.h, f.w, f.t_avg, f.p_acc, f.c)?;
    }
    Ok(())
}

pub fn encode_evt1(events: &[Event]) -> Result<Vec<u8>> {
    let count = u32::try_from(events.len()).map_err(|_| Error::Range("too many events for EVT1".into()))?;
    let mut out = Vec::with_capacity(8 + events.len() * EVT1_RECORD_BYTES);
    out.extend_from_slice(EVT1_MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    for e in events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.h.to_le_bytes());
        out.extend_from_slice(&e.w.to_le_bytes());
        out.extend_from_slice(&e.p.to_le_bytes());
    }
    Ok(out)
}

/// Decode the record section of an `EVT1` buffer (no magic, no count).
pub fn decode_evt1_records(records: &[u8], count: usize) -> Result<Vec<Event>> {
    if records.len() != count * EVT1_RECORD_BYTES {
        return Err(Error::Format(format!(
            "EVT1: {count} records need {} bytes, found {}",
            count * EVT1_RECORD_BYTES,
            records.len()
        )));
    }
    records
        .chunks_exact(EVT1_RECORD_BYTES)
        .enumerate()
        .map(|(i, r)| {
            let t = f64::from_le_bytes(r[0..8].try_into().unwrap());
            let h = u16::from_le_bytes([r[8], r[9]]);
            let w = u16::from_le_bytes([r[10], r[11]]);
            let p = r[12] as i8;
            if p != 1 && p != -1 {
                return Err(Error::Format(format!("EVT1 record {i}: polarity {p}")));
            }
            if !t.is_finite() || t < 0.0 {
                return Err(Error::Format(format!("EVT1 record {i}: timestamp {t}")));
            }
            Ok(Event::new(h, w, t, p))
        })
        .collect()
}

pub fn decode_evt1(bytes: &[u8]) -> Result<Vec<Event>> {
    if bytes.len() < 8 || &bytes[0..4] != EVT1_MAGIC {
        return Err(Error::Format("missing EVT1 magic".into()));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    decode_evt1_records(&bytes[8..], count)
}

/// Read an event file, detecting `EVT1` by its magic and falling back to CSV.
pub fn read_events_file(path: &Path) -> Result<Vec<Event>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(EVT1_MAGIC) {
        decode_evt1(&bytes)
    } else {
        read_csv(bytes.as_slice())
    }
}

/// Write events as `EVT1` when the path ends in `.evt`/`.evt1`, CSV otherwise.
pub fn write_events_file(path: &Path, events: &[Event]) -> Result<()> {
    let binary = matches!(path.extension().and_then(|e| e.to_str()), Some("evt" | "evt1"));
    if binary {
        fs::write(path, encode_evt1(events)?)?;
    } else {
        let mut buf = Vec::new();
        write_csv(&mut buf, events)?;
        fs::write(path, buf)?;
    }
    Ok(())
}
