//! Timestamped per-pixel polarity events and their CSV file format.
//!
//! File layout:
//!
//! ```text
//! # width=640 height=480
//! t_us,x,y,p
//! 1000,5,7,1
//! ```
//!
//! Rows must already be in canonical order: non-decreasing `t_us`, ties
//! broken by `(y, x, p)` ascending.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const EVENTS_HEADER: &str = "t_us,x,y,p";

/// Sign of the log-intensity change. `Off` sorts before `On`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    Off,
    On,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Off => -1,
            Polarity::On => 1,
        }
    }

    pub fn from_sign(p: i64) -> Option<Self> {
        match p {
            -1 => Some(Polarity::Off),
            1 => Some(Polarity::On),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    /// Microseconds.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Event { t, x, y, p }
    }

    /// Canonical ordering key.
    #[inline]
    pub fn key(&self) -> (u64, u16, u16, Polarity) {
        (self.t, self.y, self.x, self.p)
    }
}

/// Events from one sensor, kept in canonical order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: usize,
    height: usize,
    events: Vec<Event>,
}

impl EventStream {
    pub fn empty(width: usize, height: usize) -> Self {
        EventStream {
            width,
            height,
            events: Vec::new(),
        }
    }

    /// Builds a stream from events that are already in canonical order.
    pub fn new(width: usize, height: usize, events: Vec<Event>) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            check_bounds(e, width, height)?;
            if i > 0 && events[i - 1].key() > e.key() {
                return Err(Error::invalid(
                    "event stream",
                    format!("event {i} is out of canonical order"),
                ));
            }
        }
        Ok(EventStream {
            width,
            height,
            events,
        })
    }

    /// Sorts into canonical order, then validates.
    pub fn from_unsorted(width: usize, height: usize, mut events: Vec<Event>) -> Result<Self> {
        events.sort_unstable_by_key(Event::key);
        Self::new(width, height, events)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    /// Merges two streams of the same geometry, preserving canonical order.
    pub fn merge(&self, other: &EventStream) -> Result<EventStream> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                actual: (other.width, other.height),
            });
        }
        let (a, b) = (&self.events, &other.events);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            if a[i].key() <= b[j].key() {
                out.push(a[i]);
                i += 1;
            } else {
                out.push(b[j]);
                j += 1;
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Ok(EventStream {
            width: self.width,
            height: self.height,
            events: out,
        })
    }

    /// Serializes to the CSV format described in the module docs.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(32 + self.events.len() * 16);
        let _ = writeln!(s, "# width={} height={}", self.width, self.height);
        s.push_str(EVENTS_HEADER);
        s.push('\n');
        for e in &self.events {
            let _ = writeln!(s, "{},{},{},{}", e.t, e.x, e.y, e.p.sign());
        }
        s
    }
}

fn check_bounds(e: &Event, width: usize, height: usize) -> Result<()> {
    if (e.x as usize) >= width || (e.y as usize) >= height {
        return Err(Error::invalid(
            "event",
            format!(
                "coordinates ({}, {}) outside {}x{} sensor",
                e.x, e.y, width, height
            ),
        ));
    }
    Ok(())
}

fn parse_geometry(line: &str) -> Option<(usize, usize)> {
    let rest = line.strip_prefix('#')?.trim();
    let mut width = None;
    let mut height = None;
    for tok in rest.split_whitespace() {
        let (k, v) = tok.split_once('=')?;
        match k {
            "width" => width = v.parse().ok(),
            "height" => height = v.parse().ok(),
            _ => return None,
        }
    }
    Some((width?, height?))
}

/// Parses the event CSV format from any reader.
pub fn read_events_from<R: Read>(reader: R) -> Result<EventStream> {
    let mut lines = BufReader::new(reader).lines();
    let geometry_line = lines
        .next()
        .ok_or_else(|| Error::parse(1, "missing geometry line"))??;
    let (width, height) = parse_geometry(geometry_line.trim_end())
        .ok_or_else(|| Error::parse(1, "expected '# width=<W> height=<H>'"))?;
    if width == 0 || height == 0 || width > u16::MAX as usize + 1 || height > u16::MAX as usize + 1
    {
        return Err(Error::parse(1, "sensor geometry out of range"));
    }
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(2, "missing column header"))??;
    if header.trim_end() != EVENTS_HEADER {
        return Err(Error::parse(
            2,
            format!("expected header '{EVENTS_HEADER}', found '{}'", header.trim_end()),
        ));
    }

    let mut events: Vec<Event> = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 3;
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut next = |name: &str| -> Result<i64> {
            let f = fields
                .next()
                .ok_or_else(|| Error::parse(lineno, format!("missing field '{name}'")))?;
            f.trim()
                .parse::<i64>()
                .map_err(|_| Error::parse(lineno, format!("field '{name}' is not an integer: '{f}'")))
        };
        let t = next("t_us")?;
        let x = next("x")?;
        let y = next("y")?;
        let p = next("p")?;
        if fields.next().is_some() {
            return Err(Error::parse(lineno, "too many fields"));
        }
        if t < 0 {
            return Err(Error::parse(lineno, "negative timestamp"));
        }
        let p = Polarity::from_sign(p)
            .ok_or_else(|| Error::parse(lineno, format!("polarity must be -1 or 1, got {p}")))?;
        if x < 0 || y < 0 || x as usize >= width || y as usize >= height {
            return Err(Error::invalid(
                "event",
                format!("line {lineno}: coordinates ({x}, {y}) outside {width}x{height} sensor"),
            ));
        }
        let e = Event::new(t as u64, x as u16, y as u16, p);
        if let Some(prev) = events.last() {
            if prev.key() > e.key() {
                return Err(Error::parse(lineno, "events are not in canonical order"));
            }
        }
        events.push(e);
    }
    Ok(EventStream {
        width,
        height,
        events,
    })
}

pub fn read_events(path: impl AsRef<Path>) -> Result<EventStream> {
    read_events_from(fs::File::open(path)?)
}

pub fn write_events_to<W: Write>(stream: &EventStream, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    w.write_all(stream.to_csv().as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn write_events(stream: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    write_events_to(stream, fs::File::create(path)?)
}
