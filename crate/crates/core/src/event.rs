//! Event stream types, parsing, serialization, and summary statistics.
//!
//! Two on-disk formats are supported:
//!
//! * `evs1` — binary, little-endian. 16-byte header: magic `EVS1`, width
//!   `u16`, height `u16`, count `u64`; then `count` 16-byte records of
//!   x `u16`, y `u16`, t `u64`, p `i8`, 3 zero pad bytes. Fixed-size
//!   records allow O(1) seeking.
//! * `csv` — ASCII decimal, one event per line `x,y,t,p`, with an
//!   optional `x,y,t,p` header line.

use thiserror::Error;

pub const EVS1_MAGIC: &[u8; 4] = b"EVS1";
pub const EVS1_HEADER_LEN: usize = 16;
pub const EVS1_RECORD_LEN: usize = 16;

/// Coarse spatial histogram grid: 16 columns by 9 rows.
pub const HIST_COLS: usize = 16;
pub const HIST_ROWS: usize = 9;

/// A single sensor event: pixel position, timestamp in microseconds, and
/// brightness-change polarity (+1 or -1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventPoint {
    pub x: u16,
    pub y: u16,
    pub t: u64,
    pub p: i8,
}

/// An ordered event recording with its sensor geometry.
///
/// Events are non-decreasing in `t`; ties keep their input order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub events: Vec<EventPoint>,
    pub source_id: String,
}

/// Result of a parse: the stream plus a flag telling whether the input
/// had to be re-sorted by timestamp.
#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub stream: EventStream,
    pub resorted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Evs1,
}

#[derive(Debug, Error)]
pub enum EventError {
    #[error("evs1 magic/version mismatch")]
    BadMagic,
    #[error("evs1 header truncated: {0} bytes")]
    TruncatedHeader(usize),
    #[error("truncated record {index}: expected {expected} payload bytes, got {got}")]
    TruncatedRecord {
        index: u64,
        expected: usize,
        got: usize,
    },
    #[error("invalid polarity at record {0}")]
    InvalidPolarity(u64),
    #[error("coordinate out of range at record {index}: ({x},{y}) vs {width}x{height}")]
    CoordinateOutOfRange {
        index: u64,
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },
    #[error("malformed csv record {0}: {1}")]
    MalformedCsv(u64, String),
    #[error("evs1 geometry {actual_w}x{actual_h} does not match expected {expected_w}x{expected_h}")]
    GeometryMismatch {
        expected_w: u16,
        expected_h: u16,
        actual_w: u16,
        actual_h: u16,
    },
    #[error("zero sensor dimension {0}x{1}")]
    ZeroDimension(u16, u16),
}

impl EventStream {
    /// Validate every type invariant; used by constructors and tests.
    pub fn validate(&self) -> Result<(), EventError> {
        if self.width == 0 || self.height == 0 {
            return Err(EventError::ZeroDimension(self.width, self.height));
        }
        let mut prev_t = 0u64;
        for (i, e) in self.events.iter().enumerate() {
            if e.p != 1 && e.p != -1 {
                return Err(EventError::InvalidPolarity(i as u64 + 1));
            }
            if e.x >= self.width || e.y >= self.height {
                return Err(EventError::CoordinateOutOfRange {
                    index: i as u64 + 1,
                    x: e.x,
                    y: e.y,
                    width: self.width,
                    height: self.height,
                });
            }
            debug_assert!(i == 0 || e.t >= prev_t);
            prev_t = e.t;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Summary counters over one stream. `spatial_histogram` is a fixed
/// 16x9 grid (row-major) over the sensor area.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamStats {
    pub n_events: u64,
    pub n_positive: u64,
    pub n_negative: u64,
    pub duration_us: u64,
    pub events_per_second: f64,
    pub spatial_histogram: [u64; HIST_COLS * HIST_ROWS],
}

/// Parse raw bytes into an event stream.
///
/// For `csv` the caller supplies the sensor geometry. For `evs1` the
/// header is authoritative and must match `width`/`height`. Unsorted
/// input is repaired with a stable sort and reported via
/// [`ParseOutcome::resorted`].
pub fn parse_events(
    bytes: &[u8],
    format: EventFormat,
    width: u16,
    height: u16,
) -> Result<ParseOutcome, EventError> {
    match format {
        EventFormat::Csv => parse_csv(bytes, width, height),
        EventFormat::Evs1 => {
            let out = parse_evs1(bytes)?;
            if out.stream.width != width || out.stream.height != height {
                return Err(EventError::GeometryMismatch {
                    expected_w: width,
                    expected_h: height,
                    actual_w: out.stream.width,
                    actual_h: out.stream.height,
                });
            }
            Ok(out)
        }
    }
}

/// Parse an `evs1` file using the geometry declared in its header.
pub fn parse_evs1(bytes: &[u8]) -> Result<ParseOutcome, EventError> {
    if bytes.len() < EVS1_HEADER_LEN {
        return Err(EventError::TruncatedHeader(bytes.len()));
    }
    if &bytes[0..4] != EVS1_MAGIC {
        return Err(EventError::BadMagic);
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]);
    let height = u16::from_le_bytes([bytes[6], bytes[7]]);
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    if width == 0 || height == 0 {
        return Err(EventError::ZeroDimension(width, height));
    }
    let payload = &bytes[EVS1_HEADER_LEN..];
    let expected = (count as usize).checked_mul(EVS1_RECORD_LEN).unwrap_or(usize::MAX);
    if payload.len() < expected {
        return Err(EventError::TruncatedRecord {
            index: (payload.len() / EVS1_RECORD_LEN) as u64 + 1,
            expected,
            got: payload.len(),
        });
    }
    let mut events = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        let rec = &payload[i * EVS1_RECORD_LEN..(i + 1) * EVS1_RECORD_LEN];
        let x = u16::from_le_bytes([rec[0], rec[1]]);
        let y = u16::from_le_bytes([rec[2], rec[3]]);
        let t = u64::from_le_bytes(rec[4..12].try_into().unwrap());
        let p = rec[12] as i8;
        if p != 1 && p != -1 {
            return Err(EventError::InvalidPolarity(i as u64 + 1));
        }
        if x >= width || y >= height {
            return Err(EventError::CoordinateOutOfRange {
                index: i as u64 + 1,
                x,
                y,
                width,
                height,
            });
        }
        events.push(EventPoint { x, y, t, p });
    }
    let resorted = repair_order(&mut events);
    Ok(ParseOutcome {
        stream: EventStream {
            width,
            height,
            events,
            source_id: String::new(),
        },
        resorted,
    })
}

fn parse_csv(bytes: &[u8], width: u16, height: u16) -> Result<ParseOutcome, EventError> {
    if width == 0 || height == 0 {
        return Err(EventError::ZeroDimension(width, height));
    }
    let text = std::str::from_utf8(bytes)
        .map_err(|e| EventError::MalformedCsv(0, format!("invalid UTF-8: {e}")))?;
    let mut events = Vec::new();
    let mut record = 0u64;
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        if line_no == 0 && line == "x,y,t,p" {
            continue;
        }
        record += 1;
        let mut fields = line.split(',');
        let (xs, ys, ts, ps) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), Some(c), Some(d)) if fields.next().is_none() => (a, b, c, d),
            _ => {
                return Err(EventError::MalformedCsv(
                    record,
                    format!("expected 4 fields, got line {line:?}"),
                ))
            }
        };
        let x: u16 = xs
            .trim()
            .parse()
            .map_err(|_| EventError::MalformedCsv(record, format!("bad x {xs:?}")))?;
        let y: u16 = ys
            .trim()
            .parse()
            .map_err(|_| EventError::MalformedCsv(record, format!("bad y {ys:?}")))?;
        let t: u64 = ts
            .trim()
            .parse()
            .map_err(|_| EventError::MalformedCsv(record, format!("bad t {ts:?}")))?;
        let p: i8 = match ps.trim() {
            "1" | "+1" => 1,
            "-1" => -1,
            _ => return Err(EventError::InvalidPolarity(record)),
        };
        if x >= width || y >= height {
            return Err(EventError::CoordinateOutOfRange {
                index: record,
                x,
                y,
                width,
                height,
            });
        }
        events.push(EventPoint { x, y, t, p });
    }
    let resorted = repair_order(&mut events);
    Ok(ParseOutcome {
        stream: EventStream {
            width,
            height,
            events,
            source_id: String::new(),
        },
        resorted,
    })
}

/// Stable-sort by timestamp if needed; returns true when a sort ran.
fn repair_order(events: &mut [EventPoint]) -> bool {
    let sorted = events.windows(2).all(|w| w[0].t <= w[1].t);
    if !sorted {
        events.sort_by_key(|e| e.t);
    }
    !sorted
}

/// Serialize a valid stream; the output parses back to an equal stream.
pub fn serialize_events(stream: &EventStream, format: EventFormat) -> Vec<u8> {
    match format {
        EventFormat::Evs1 => {
            let mut out = Vec::with_capacity(EVS1_HEADER_LEN + stream.events.len() * EVS1_RECORD_LEN);
            out.extend_from_slice(EVS1_MAGIC);
            out.extend_from_slice(&stream.width.to_le_bytes());
            out.extend_from_slice(&stream.height.to_le_bytes());
            out.extend_from_slice(&(stream.events.len() as u64).to_le_bytes());
            for e in &stream.events {
                out.extend_from_slice(&e.x.to_le_bytes());
                out.extend_from_slice(&e.y.to_le_bytes());
                out.extend_from_slice(&e.t.to_le_bytes());
                out.push(e.p as u8);
                out.extend_from_slice(&[0, 0, 0]);
            }
            out
        }
        EventFormat::Csv => {
            let mut s = String::from("x,y,t,p\n");
            for e in &stream.events {
                s.push_str(&format!("{},{},{},{}\n", e.x, e.y, e.t, e.p));
            }
            s.into_bytes()
        }
    }
}

/// Summarize one stream. Rate is defined as 0 when the duration is 0.
pub fn compute_stats(stream: &EventStream) -> StreamStats {
    let n_events = stream.events.len() as u64;
    let mut n_positive = 0u64;
    let mut hist = [0u64; HIST_COLS * HIST_ROWS];
    for e in &stream.events {
        if e.p > 0 {
            n_positive += 1;
        }
        let cx = (e.x as usize * HIST_COLS) / stream.width as usize;
        let cy = (e.y as usize * HIST_ROWS) / stream.height as usize;
        hist[cy * HIST_COLS + cx] += 1;
    }
    let duration_us = if stream.events.len() <= 1 {
        0
    } else {
        stream.events.last().unwrap().t - stream.events.first().unwrap().t
    };
    let events_per_second = if duration_us == 0 {
        0.0
    } else {
        n_events as f64 / (duration_us as f64 / 1e6)
    };
    StreamStats {
        n_events,
        n_positive,
        n_negative: n_events - n_positive,
        duration_us,
        events_per_second,
        spatial_histogram: hist,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(events: Vec<EventPoint>) -> EventStream {
        EventStream {
            width: 10,
            height: 10,
            events,
            source_id: "test".into(),
        }
    }

    #[test]
    fn csv_single_event() {
        let out = parse_events(b"3,5,1000,1", EventFormat::Csv, 10, 10).unwrap();
        assert_eq!(
            out.stream.events,
            vec![EventPoint { x: 3, y: 5, t: 1000, p: 1 }]
        );
        assert!(!out.resorted);
    }

    #[test]
    fn csv_zero_polarity_rejected() {
        let err = parse_events(b"3,5,1000,0", EventFormat::Csv, 10, 10).unwrap_err();
        assert!(matches!(err, EventError::InvalidPolarity(1)));
        assert_eq!(err.to_string(), "invalid polarity at record 1");
    }

    #[test]
    fn csv_header_and_negative_polarity() {
        let out = parse_events(b"x,y,t,p\n1,2,5,-1\n", EventFormat::Csv, 10, 10).unwrap();
        assert_eq!(out.stream.events[0].p, -1);
    }

    #[test]
    fn csv_coordinate_out_of_range() {
        let err = parse_events(b"10,0,0,1", EventFormat::Csv, 10, 10).unwrap_err();
        assert!(matches!(err, EventError::CoordinateOutOfRange { index: 1, .. }));
    }

    #[test]
    fn evs1_empty_stream_is_header_only() {
        let s = stream(vec![]);
        let bytes = serialize_events(&s, EventFormat::Evs1);
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[8..16], &0u64.to_le_bytes());
    }

    #[test]
    fn evs1_single_record_layout() {
        let s = stream(vec![EventPoint { x: 3, y: 5, t: 1000, p: 1 }]);
        let bytes = serialize_events(&s, EventFormat::Evs1);
        assert_eq!(bytes.len(), 32);
        assert_eq!(&bytes[16..18], &3u16.to_le_bytes());
        assert_eq!(&bytes[18..20], &5u16.to_le_bytes());
        assert_eq!(&bytes[20..28], &1000u64.to_le_bytes());
        assert_eq!(bytes[28], 1);
        assert_eq!(&bytes[29..32], &[0, 0, 0]);
    }

    #[test]
    fn evs1_bad_magic() {
        let err = parse_evs1(b"NOPE\0\0\0\0\0\0\0\0\0\0\0\0").unwrap_err();
        assert!(matches!(err, EventError::BadMagic));
    }

    #[test]
    fn evs1_truncated_record() {
        let s = stream(vec![EventPoint { x: 1, y: 1, t: 7, p: -1 }]);
        let mut bytes = serialize_events(&s, EventFormat::Evs1);
        bytes.truncate(bytes.len() - 4);
        let err = parse_evs1(&bytes).unwrap_err();
        assert!(matches!(err, EventError::TruncatedRecord { .. }));
    }

    #[test]
    fn evs1_invalid_polarity_byte() {
        let s = stream(vec![EventPoint { x: 1, y: 1, t: 7, p: 1 }]);
        let mut bytes = serialize_events(&s, EventFormat::Evs1);
        bytes[28] = 0;
        let err = parse_evs1(&bytes).unwrap_err();
        assert!(matches!(err, EventError::InvalidPolarity(1)));
    }

    #[test]
    fn unsorted_input_is_stable_sorted_and_flagged() {
        let out = parse_events(b"0,0,20,1\n1,1,10,1\n2,2,20,-1", EventFormat::Csv, 10, 10).unwrap();
        assert!(out.resorted);
        let ts: Vec<u64> = out.stream.events.iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![10, 20, 20]);
        // equal-t events keep input order
        assert_eq!(out.stream.events[1].x, 0);
        assert_eq!(out.stream.events[2].x, 2);
    }

    #[test]
    fn stats_empty() {
        let st = compute_stats(&stream(vec![]));
        assert_eq!(st.n_events, 0);
        assert_eq!(st.events_per_second, 0.0);
        assert_eq!(st.duration_us, 0);
    }

    #[test]
    fn stats_two_events() {
        let st = compute_stats(&stream(vec![
            EventPoint { x: 0, y: 0, t: 0, p: 1 },
            EventPoint { x: 1, y: 1, t: 1_000_000, p: -1 },
        ]));
        assert_eq!(st.duration_us, 1_000_000);
        assert_eq!(st.events_per_second, 2.0);
        assert_eq!(st.n_positive, 1);
        assert_eq!(st.n_negative, 1);
    }

    #[test]
    fn stats_histogram_conservation() {
        let events: Vec<EventPoint> = (0u64..100)
            .map(|i| EventPoint {
                x: ((i * 7) % 10) as u16,
                y: ((i * 3) % 10) as u16,
                t: i,
                p: if i % 2 == 0 { 1 } else { -1 },
            })
            .collect();
        let st = compute_stats(&stream(events));
        assert_eq!(st.spatial_histogram.iter().sum::<u64>(), st.n_events);
        assert_eq!(st.n_positive + st.n_negative, st.n_events);
    }
}
