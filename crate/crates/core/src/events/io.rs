use serde::Deserialize;
use thiserror::Error;

use super::{Event, Polarity};

pub const EVT1_MAGIC: &[u8] = b"EVT1\n";
/// t:u64, x:u16, y:u16, polarity:u8, reserved:u8, all little-endian.
pub const EVT1_RECORD_LEN: usize = 14;

const CSV_HEADER: &str = "t_us,x,y,polarity";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Evt1,
    Csv,
}

#[derive(Debug, Error)]
pub enum EventError {
    #[error("bad header: {0}")]
    Header(String),
    #[error("truncated record at byte offset {offset} ({available} of {EVT1_RECORD_LEN} bytes)")]
    Truncated { offset: usize, available: usize },
    #[error("record {index}: timestamp {t} precedes previous timestamp {prev}")]
    Ordering { index: usize, prev: u64, t: u64 },
    #[error("record {index}: pixel ({x}, {y}) outside the 240x180 array")]
    OutOfBounds { index: usize, x: u16, y: u16 },
    #[error("record {index}: invalid polarity {value}")]
    Polarity { index: usize, value: u64 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub fn parse_events(bytes: &[u8], format: EventFormat) -> Result<Vec<Event>, EventError> {
    let events = match format {
        EventFormat::Evt1 => parse_evt1(bytes)?,
        EventFormat::Csv => parse_csv(bytes)?,
    };
    validate(&events)?;
    Ok(events)
}

fn parse_evt1(bytes: &[u8]) -> Result<Vec<Event>, EventError> {
    if !bytes.starts_with(EVT1_MAGIC) {
        let shown = String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into_owned();
        return Err(EventError::Header(format!("expected \"EVT1\\n\", found {shown:?}")));
    }
    let payload = &bytes[EVT1_MAGIC.len()..];
    let mut events = Vec::with_capacity(payload.len() / EVT1_RECORD_LEN);
    for (index, record) in payload.chunks(EVT1_RECORD_LEN).enumerate() {
        let offset = EVT1_MAGIC.len() + index * EVT1_RECORD_LEN;
        if record.len() < EVT1_RECORD_LEN {
            return Err(EventError::Truncated {
                offset,
                available: record.len(),
            });
        }
        let t = u64::from_le_bytes(record[0..8].try_into().unwrap());
        let x = u16::from_le_bytes(record[8..10].try_into().unwrap());
        let y = u16::from_le_bytes(record[10..12].try_into().unwrap());
        let polarity = Polarity::from_bit(record[12]).ok_or(EventError::Polarity {
            index,
            value: record[12] as u64,
        })?;
        events.push(Event { t, x, y, polarity });
    }
    Ok(events)
}

#[derive(Deserialize)]
struct CsvRow {
    t_us: u64,
    x: u16,
    y: u16,
    polarity: u8,
}

fn parse_csv(bytes: &[u8]) -> Result<Vec<Event>, EventError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let header = reader.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(EventError::Header(format!(
            "expected csv header {CSV_HEADER:?}, found {header:?}"
        )));
    }
    let mut events = Vec::new();
    for (index, row) in reader.deserialize::<CsvRow>().enumerate() {
        let row = row?;
        let polarity = Polarity::from_bit(row.polarity).ok_or(EventError::Polarity {
            index,
            value: row.polarity as u64,
        })?;
        events.push(Event::new(row.t_us, row.x, row.y, polarity));
    }
    Ok(events)
}

fn validate(events: &[Event]) -> Result<(), EventError> {
    let mut prev = 0;
    for (index, e) in events.iter().enumerate() {
        if !e.in_bounds() {
            return Err(EventError::OutOfBounds {
                index,
                x: e.x,
                y: e.y,
            });
        }
        if e.t < prev {
            return Err(EventError::Ordering {
                index,
                prev,
                t: e.t,
            });
        }
        prev = e.t;
    }
    Ok(())
}

pub fn write_evt1(events: &[Event]) -> Vec<u8> {
    let mut out = Vec::with_capacity(EVT1_MAGIC.len() + events.len() * EVT1_RECORD_LEN);
    out.extend_from_slice(EVT1_MAGIC);
    for e in events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.polarity.bit());
        out.push(0);
    }
    out
}

pub fn write_csv(events: &[Event]) -> String {
    let mut out = String::with_capacity(CSV_HEADER.len() + 1 + events.len() * 16);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for e in events {
        out.push_str(&format!("{},{},{},{}\n", e.t, e.x, e.y, e.polarity.bit()));
    }
    out
}
