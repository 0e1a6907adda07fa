//! File formats: event streams (CSV and packed binary), trajectories, and
//! the atomic write helper every exporter goes through.
//!
//! Event CSV: a `width,height` line followed by one `x,y,t,p` line per event.
//!
//! Packed binary (little-endian): `EVS1`, u32 width, u32 height, u32 count,
//! then 16 bytes per event: u16 x, u16 y, u64 t, u8 p, three zero bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::event::{Event, EventStream};
use crate::trajectory::{TrackPoint, Trajectory, TrajectorySet};

pub const EVENT_MAGIC: &[u8; 4] = b"EVS1";
pub const EVENT_HEADER_LEN: usize = 16;
pub const EVENT_RECORD_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Binary,
}

impl EventFormat {
    /// `.csv` is CSV; anything else is treated as packed binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EventFormat::Csv,
            _ => EventFormat::Binary,
        }
    }
}

impl std::str::FromStr for EventFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(EventFormat::Csv),
            "bin" | "binary" | "packed-binary" => Ok(EventFormat::Binary),
            other => Err(Error::param("format", format!("unknown event format `{other}`"))),
        }
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so a failed write never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    // temporary files are created owner-only
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(fs::Permissions::from_mode(0o644))
            .map_err(|e| Error::io(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_events(path: &Path, format: EventFormat) -> Result<EventStream> {
    let bytes = read_file(path)?;
    match format {
        EventFormat::Csv => {
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::parse(path.display().to_string(), "not valid UTF-8"))?;
            parse_events_csv(&text)
        }
        EventFormat::Binary => decode_events_binary(&bytes),
    }
}

pub fn write_events(stream: &EventStream, path: &Path, format: EventFormat) -> Result<()> {
    let bytes = match format {
        EventFormat::Csv => encode_events_csv(stream).into_bytes(),
        EventFormat::Binary => encode_events_binary(stream),
    };
    write_atomic(path, &bytes)
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, line: usize, what: &str) -> Result<T> {
    let raw = field.ok_or_else(|| Error::parse(format!("line {line}"), format!("missing {what}")))?;
    raw.trim()
        .parse()
        .map_err(|_| Error::parse(format!("line {line}"), format!("bad {what} `{}`", raw.trim())))
}

pub fn parse_events_csv(text: &str) -> Result<EventStream> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hdr_no, header) = lines
        .next()
        .ok_or_else(|| Error::parse("line 1", "missing `width,height` header"))?;
    let mut hf = header.split(',');
    let width: u32 = parse_field(hf.next(), hdr_no + 1, "width")?;
    let height: u32 = parse_field(hf.next(), hdr_no + 1, "height")?;
    if hf.next().is_some() {
        return Err(Error::parse(format!("line {}", hdr_no + 1), "header must be `width,height`"));
    }

    let mut events = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let mut f = line.split(',');
        let x: u32 = parse_field(f.next(), n, "x")?;
        let y: u32 = parse_field(f.next(), n, "y")?;
        let t: u64 = parse_field(f.next(), n, "t")?;
        let p: u8 = parse_field(f.next(), n, "p")?;
        if f.next().is_some() {
            return Err(Error::parse(format!("line {n}"), "expected 4 fields `x,y,t,p`"));
        }
        if p > 1 {
            return Err(Error::parse(format!("line {n}"), format!("polarity must be 0 or 1, got {p}")));
        }
        if x >= width || y >= height {
            return Err(Error::OutOfBounds { x, y, width, height });
        }
        events.push(Event::new(x as u16, y as u16, t, p == 1));
    }
    EventStream::new(width, height, events)
}

pub fn encode_events_csv(stream: &EventStream) -> String {
    let mut out = String::with_capacity(16 + stream.len() * 20);
    out.push_str(&format!("{},{}\n", stream.width(), stream.height()));
    for e in stream.events() {
        out.push_str(&format!("{},{},{},{}\n", e.x, e.y, e.t, e.p as u8));
    }
    out
}

pub fn encode_events_binary(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(EVENT_HEADER_LEN + stream.len() * EVENT_RECORD_LEN);
    out.extend_from_slice(EVENT_MAGIC);
    out.extend_from_slice(&stream.width().to_le_bytes());
    out.extend_from_slice(&stream.height().to_le_bytes());
    out.extend_from_slice(&(stream.len() as u32).to_le_bytes());
    for e in stream.events() {
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.extend_from_slice(&e.t.to_le_bytes());
        out.push(e.p as u8);
        out.extend_from_slice(&[0, 0, 0]);
    }
    out
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().unwrap())
}

pub fn decode_events_binary(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < EVENT_HEADER_LEN {
        return Err(Error::parse("offset 0", "truncated header"));
    }
    if &bytes[0..4] != EVENT_MAGIC {
        return Err(Error::parse("offset 0", "bad magic, expected `EVS1`"));
    }
    let width = le_u32(&bytes[4..8]);
    let height = le_u32(&bytes[8..12]);
    let count = le_u32(&bytes[12..16]) as usize;
    let body = &bytes[EVENT_HEADER_LEN..];
    if body.len() != count * EVENT_RECORD_LEN {
        return Err(Error::parse(
            format!("offset {}", EVENT_HEADER_LEN),
            format!(
                "header declares {count} records but body holds {} bytes",
                body.len()
            ),
        ));
    }
    let mut events = Vec::with_capacity(count);
    for (i, rec) in body.chunks_exact(EVENT_RECORD_LEN).enumerate() {
        let offset = EVENT_HEADER_LEN + i * EVENT_RECORD_LEN;
        let x = u16::from_le_bytes([rec[0], rec[1]]);
        let y = u16::from_le_bytes([rec[2], rec[3]]);
        let t = u64::from_le_bytes(rec[4..12].try_into().unwrap());
        let p = rec[12];
        if p > 1 {
            return Err(Error::parse(format!("offset {}", offset + 12), format!("polarity byte {p}")));
        }
        if rec[13..16] != [0, 0, 0] {
            return Err(Error::parse(format!("offset {}", offset + 13), "non-zero padding"));
        }
        if x as u32 >= width || y as u32 >= height {
            return Err(Error::OutOfBounds {
                x: x as u32,
                y: y as u32,
                width,
                height,
            });
        }
        events.push(Event::new(x, y, t, p == 1));
    }
    EventStream::new(width, height, events)
}

/// Trajectory CSV: `id,x,y,t` header, then one sample per line. Samples are
/// grouped by id in order of first appearance.
pub fn encode_trajectories(set: &TrajectorySet) -> String {
    let mut out = String::from("id,x,y,t\n");
    for tr in set.iter() {
        for s in &tr.samples {
            out.push_str(&format!("{},{},{},{}\n", tr.id, s.x, s.y, s.t));
        }
    }
    out
}

pub fn parse_trajectories(text: &str) -> Result<TrajectorySet> {
    let mut set: Vec<Trajectory> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() || (n == 1 && line.starts_with("id")) {
            continue;
        }
        let mut f = line.split(',');
        let id: u32 = parse_field(f.next(), n, "id")?;
        let x: f64 = parse_field(f.next(), n, "x")?;
        let y: f64 = parse_field(f.next(), n, "y")?;
        let t: u64 = parse_field(f.next(), n, "t")?;
        if f.next().is_some() {
            return Err(Error::parse(format!("line {n}"), "expected 4 fields `id,x,y,t`"));
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::parse(format!("line {n}"), "non-finite coordinate"));
        }
        let p = TrackPoint::new(x, y, t);
        match set.iter_mut().find(|tr| tr.id == id) {
            Some(tr) => {
                if tr.samples.last().is_some_and(|l| l.t > t) {
                    return Err(Error::parse(format!("line {n}"), format!("samples of id {id} not sorted by t")));
                }
                tr.samples.push(p)
            }
            None => set.push(Trajectory::new(id, vec![p])),
        }
    }
    Ok(TrajectorySet::new(set))
}

pub fn load_trajectories(path: &Path) -> Result<TrajectorySet> {
    parse_trajectories(&read_text(path)?).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn write_trajectories(set: &TrajectorySet, path: &Path) -> Result<()> {
    write_atomic(path, encode_trajectories(set).as_bytes())
}
