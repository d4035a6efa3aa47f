//! Event types, fixed-duration batching and the `EVT1` binary event file.
//!
//! An `EVT1` file is a 16-byte header followed by 16-byte little-endian
//! records:
//!
//! ```text
//! header: b"EVT1" | width: u16 | height: u16 | 8 reserved bytes (zero)
//! record: x: u16 | y: u16 | polarity: i8 | 3 padding bytes | t_us: u64
//! ```
//!
//! The record mirrors the in-memory layout of [`Event`] (x, y, polarity,
//! padding, timestamp), so a file is a flat array of events behind the header.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"EVT1";
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 16;

/// Sign of a brightness change. `On` is encoded as +1, `Off` as -1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(i8)]
pub enum Polarity {
    Off = -1,
    On = 1,
}

impl Polarity {
    pub fn from_i8(value: i8) -> Option<Self> {
        match value {
            1 => Some(Polarity::On),
            -1 => Some(Polarity::Off),
            _ => None,
        }
    }

    #[inline]
    pub fn sign(self) -> i16 {
        self as i8 as i16
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::On => Polarity::Off,
            Polarity::Off => Polarity::On,
        }
    }
}

/// A single camera event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(C)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
    pub t: u64,
}

impl Event {
    pub fn new(x: u16, y: u16, polarity: Polarity, t: u64) -> Self {
        Self { x, y, polarity, t }
    }

    pub fn to_bytes(&self) -> [u8; RECORD_LEN] {
        let mut out = [0u8; RECORD_LEN];
        out[0..2].copy_from_slice(&self.x.to_le_bytes());
        out[2..4].copy_from_slice(&self.y.to_le_bytes());
        out[4] = self.polarity as i8 as u8;
        out[8..16].copy_from_slice(&self.t.to_le_bytes());
        out
    }
}

/// Sensor resolution. `W >= 1`, `H >= 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SensorGeometry {
    pub width: u16,
    pub height: u16,
}

impl SensorGeometry {
    pub fn new(width: u16, height: u16) -> Result<Self, EventError> {
        if width == 0 || height == 0 {
            return Err(EventError::InvalidGeometry { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        x < self.width && y < self.height
    }

    #[inline]
    pub fn index(&self, x: u16, y: u16) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (u16, u16) {
        let w = self.width as usize;
        ((index % w) as u16, (index / w) as u16)
    }
}

#[derive(Debug, Error)]
pub enum EventError {
    #[error("invalid sensor geometry {width}x{height}")]
    InvalidGeometry { width: u16, height: u16 },
    #[error("events out of order at index {index}: t={t} after t={previous}")]
    Unsorted { index: usize, previous: u64, t: u64 },
    #[error("event at index {index} precedes the batch origin {origin}")]
    BeforeOrigin { index: usize, origin: u64 },
    #[error("event ({x}, {y}) outside the {width}x{height} sensor")]
    OutOfBounds {
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },
    #[error("batch duration must be positive")]
    ZeroDuration,
    #[error("bad magic {found:?} at offset 0")]
    BadMagic { found: [u8; 4] },
    #[error("truncated header: {len} bytes")]
    TruncatedHeader { len: usize },
    #[error("truncated record at offset {offset}: {len} of {RECORD_LEN} bytes")]
    TruncatedRecord { offset: u64, len: usize },
    #[error("invalid polarity byte {value:#04x} at offset {offset}")]
    InvalidPolarity { offset: u64, value: u8 },
    #[error("non-monotonic timestamp at offset {offset}: {t} < {previous}")]
    NonMonotonic { offset: u64, previous: u64, t: u64 },
    #[error("event ({x}, {y}) at offset {offset} outside the {width}x{height} sensor")]
    RecordOutOfBounds {
        offset: u64,
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Events of one half-open window `[t_start, t_end)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventBatch {
    pub events: Vec<Event>,
    pub t_start: u64,
    pub t_end: u64,
}

impl EventBatch {
    pub fn duration_us(&self) -> u64 {
        self.t_end - self.t_start
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Anything that yields time-ordered events: a file reader, the simulator,
/// an in-memory buffer, or a live driver.
pub trait EventSource: Send {
    fn geometry(&self) -> SensorGeometry;

    /// Appends up to `max` further events to `out`. Returns the number of
    /// events appended; zero means the source is exhausted.
    fn fill(&mut self, out: &mut Vec<Event>, max: usize) -> Result<usize, EventError>;

    /// Known end of the stream, if any. Lets the batcher emit trailing empty
    /// batches up to the end of a recording.
    fn end_time(&self) -> Option<u64> {
        None
    }
}

/// An in-memory source over a sorted event vector.
#[derive(Clone, Debug)]
pub struct VecSource {
    geometry: SensorGeometry,
    events: Vec<Event>,
    pos: usize,
    end: Option<u64>,
}

impl VecSource {
    pub fn new(geometry: SensorGeometry, events: Vec<Event>) -> Self {
        Self {
            geometry,
            events,
            pos: 0,
            end: None,
        }
    }

    pub fn with_end_time(mut self, end: u64) -> Self {
        self.end = Some(end);
        self
    }
}

impl EventSource for VecSource {
    fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    fn fill(&mut self, out: &mut Vec<Event>, max: usize) -> Result<usize, EventError> {
        let n = max.min(self.events.len() - self.pos);
        out.extend_from_slice(&self.events[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }

    fn end_time(&self) -> Option<u64> {
        self.end
    }
}

/// Cuts a source into consecutive batches `[origin + i*d, origin + (i+1)*d)`.
///
/// Empty batches are emitted. When the source knows its end time the last
/// batch ends there (and may be shorter than `d`); otherwise the stream ends
/// with the batch holding the last event, truncated to `last_t + 1`.
pub struct Batcher<S> {
    source: S,
    duration: u64,
    next_start: u64,
    pending: Vec<Event>,
    pending_pos: usize,
    last_t: Option<u64>,
    exhausted: bool,
    read_index: usize,
}

const FILL_CHUNK: usize = 1 << 12;

impl<S: EventSource> Batcher<S> {
    pub fn new(source: S, duration_us: u64, t_origin: u64) -> Result<Self, EventError> {
        if duration_us == 0 {
            return Err(EventError::ZeroDuration);
        }
        Ok(Self {
            source,
            duration: duration_us,
            next_start: t_origin,
            pending: Vec::with_capacity(FILL_CHUNK),
            pending_pos: 0,
            last_t: None,
            exhausted: false,
            read_index: 0,
        })
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.source.geometry()
    }

    pub fn duration_us(&self) -> u64 {
        self.duration
    }

    fn peek(&mut self) -> Result<Option<Event>, EventError> {
        if self.pending_pos == self.pending.len() {
            if self.exhausted {
                return Ok(None);
            }
            self.pending.clear();
            self.pending_pos = 0;
            if self.source.fill(&mut self.pending, FILL_CHUNK)? == 0 {
                self.exhausted = true;
                return Ok(None);
            }
        }
        Ok(Some(self.pending[self.pending_pos]))
    }

    /// Fills `batch` with the next window. Returns `false` once the stream is
    /// exhausted (and `batch` is left empty).
    pub fn next_batch(&mut self, batch: &mut EventBatch) -> Result<bool, EventError> {
        batch.events.clear();
        let start = self.next_start;
        let end = start + self.duration;
        let geometry = self.source.geometry();
        let stop = self.source.end_time();
        let mut any = false;

        while let Some(ev) = self.peek()? {
            if ev.t < start {
                return Err(match self.last_t {
                    Some(previous) => EventError::Unsorted {
                        index: self.read_index,
                        previous,
                        t: ev.t,
                    },
                    None => EventError::BeforeOrigin {
                        index: self.read_index,
                        origin: start,
                    },
                });
            }
            if ev.t >= end {
                break;
            }
            if !geometry.contains(ev.x, ev.y) {
                return Err(EventError::OutOfBounds {
                    x: ev.x,
                    y: ev.y,
                    width: geometry.width,
                    height: geometry.height,
                });
            }
            self.last_t = Some(ev.t);
            batch.events.push(ev);
            self.pending_pos += 1;
            self.read_index += 1;
            any = true;
        }

        let more_events = self.peek()?.is_some();
        let finished = !more_events;
        match (finished, stop) {
            (true, Some(stop)) if start >= stop && !any => return Ok(false),
            (true, None) if !any => return Ok(false),
            _ => {}
        }

        batch.t_start = start;
        batch.t_end = match (finished, stop) {
            (true, Some(stop)) => end.min(stop.max(start + 1)),
            (true, None) => end.min(self.last_t.map_or(end, |t| t + 1)),
            _ => end,
        };
        self.next_start = end;
        if finished && stop.is_none() {
            // Nothing more can follow a truncated final window.
            self.next_start = u64::MAX - self.duration;
        }
        Ok(true)
    }
}

/// Splits an in-memory, time-sorted event sequence into batches.
///
/// `t_stop`, when given, extends the batch sequence over trailing empty time.
pub fn batch_stream(
    events: &[Event],
    batch_duration_us: u64,
    t_origin: u64,
    t_stop: Option<u64>,
) -> Result<Vec<EventBatch>, EventError> {
    if !(1000..=2500).contains(&batch_duration_us) {
        log::warn!(
            "batch duration {batch_duration_us} us is outside the real-time range [1000, 2500] us"
        );
    }
    check_sorted(events)?;
    // Geometry is irrelevant here; use the largest so bounds never trip.
    let geometry = SensorGeometry {
        width: u16::MAX,
        height: u16::MAX,
    };
    let mut source = VecSource::new(geometry, events.to_vec());
    if let Some(stop) = t_stop {
        source = source.with_end_time(stop);
    }
    let mut batcher = Batcher::new(source, batch_duration_us, t_origin)?;
    let mut out = Vec::new();
    loop {
        let mut batch = EventBatch::default();
        if !batcher.next_batch(&mut batch)? {
            break;
        }
        out.push(batch);
    }
    Ok(out)
}

fn check_sorted(events: &[Event]) -> Result<(), EventError> {
    for (index, pair) in events.windows(2).enumerate() {
        if pair[1].t < pair[0].t {
            return Err(EventError::Unsorted {
                index: index + 1,
                previous: pair[0].t,
                t: pair[1].t,
            });
        }
    }
    Ok(())
}

/// Streaming `EVT1` writer. Rejects out-of-order or out-of-bounds events.
pub struct EventWriter<W: Write> {
    inner: W,
    geometry: SensorGeometry,
    last_t: u64,
    count: u64,
}

impl<W: Write> EventWriter<W> {
    pub fn new(mut inner: W, geometry: SensorGeometry) -> Result<Self, EventError> {
        let mut header = [0u8; HEADER_LEN];
        header[0..4].copy_from_slice(&MAGIC);
        header[4..6].copy_from_slice(&geometry.width.to_le_bytes());
        header[6..8].copy_from_slice(&geometry.height.to_le_bytes());
        inner.write_all(&header)?;
        Ok(Self {
            inner,
            geometry,
            last_t: 0,
            count: 0,
        })
    }

    pub fn write(&mut self, ev: &Event) -> Result<(), EventError> {
        if ev.t < self.last_t {
            return Err(EventError::Unsorted {
                index: self.count as usize,
                previous: self.last_t,
                t: ev.t,
            });
        }
        if !self.geometry.contains(ev.x, ev.y) {
            return Err(EventError::OutOfBounds {
                x: ev.x,
                y: ev.y,
                width: self.geometry.width,
                height: self.geometry.height,
            });
        }
        self.inner.write_all(&ev.to_bytes())?;
        self.last_t = ev.t;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(mut self) -> Result<W, EventError> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Writes a complete `EVT1` file. File size is `16 + 16 * events.len()`.
pub fn write_event_file(
    path: impl AsRef<Path>,
    geometry: SensorGeometry,
    events: &[Event],
) -> Result<(), EventError> {
    check_sorted(events)?;
    let file = File::create(path)?;
    let mut writer = EventWriter::new(BufWriter::new(file), geometry)?;
    for ev in events {
        writer.write(ev)?;
    }
    writer.finish()?;
    Ok(())
}

/// Streaming `EVT1` reader; also an [`EventSource`].
pub struct EventReader<R: Read> {
    inner: R,
    geometry: SensorGeometry,
    offset: u64,
    last_t: u64,
    done: bool,
    block: Vec<u8>,
    /// Error found while bulk-parsing, reported after the good records.
    deferred: Option<EventError>,
}

impl EventReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, EventError> {
        let file = File::open(path)?;
        Self::new(BufReader::with_capacity(1 << 20, file))
    }
}

impl<R: Read> EventReader<R> {
    pub fn new(mut inner: R) -> Result<Self, EventError> {
        let mut header = [0u8; HEADER_LEN];
        let len = read_full(&mut inner, &mut header)?;
        if len >= 4 && header[0..4] != MAGIC {
            return Err(EventError::BadMagic {
                found: [header[0], header[1], header[2], header[3]],
            });
        }
        if len < HEADER_LEN {
            return Err(EventError::TruncatedHeader { len });
        }
        let width = u16::from_le_bytes([header[4], header[5]]);
        let height = u16::from_le_bytes([header[6], header[7]]);
        let geometry = SensorGeometry::new(width, height)?;
        Ok(Self {
            inner,
            geometry,
            offset: HEADER_LEN as u64,
            last_t: 0,
            done: false,
            block: Vec::new(),
            deferred: None,
        })
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    /// Next event, `None` at a clean end of file.
    pub fn read_event(&mut self) -> Result<Option<Event>, EventError> {
        if let Some(e) = self.deferred.take() {
            return Err(e);
        }
        if self.done {
            return Ok(None);
        }
        let mut rec = [0u8; RECORD_LEN];
        let len = read_full(&mut self.inner, &mut rec)?;
        if len == 0 {
            self.done = true;
            return Ok(None);
        }
        if len < RECORD_LEN {
            self.done = true;
            return Err(EventError::TruncatedRecord {
                offset: self.offset,
                len,
            });
        }
        self.parse(&rec).map(Some)
    }

    fn parse(&mut self, rec: &[u8]) -> Result<Event, EventError> {
        let offset = self.offset;
        let x = u16::from_le_bytes([rec[0], rec[1]]);
        let y = u16::from_le_bytes([rec[2], rec[3]]);
        let polarity = Polarity::from_i8(rec[4] as i8).ok_or(EventError::InvalidPolarity {
            offset: offset + 4,
            value: rec[4],
        })?;
        let t = u64::from_le_bytes(rec[8..16].try_into().expect("8-byte slice"));
        if t < self.last_t {
            return Err(EventError::NonMonotonic {
                offset: offset + 8,
                previous: self.last_t,
                t,
            });
        }
        if !self.geometry.contains(x, y) {
            return Err(EventError::RecordOutOfBounds {
                offset,
                x,
                y,
                width: self.geometry.width,
                height: self.geometry.height,
            });
        }
        self.last_t = t;
        self.offset += RECORD_LEN as u64;
        Ok(Event { x, y, polarity, t })
    }
}

impl<R: Read + Send> EventSource for EventReader<R> {
    fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    fn fill(&mut self, out: &mut Vec<Event>, max: usize) -> Result<usize, EventError> {
        if let Some(e) = self.deferred.take() {
            return Err(e);
        }
        let mut n = 0;
        let mut block = std::mem::take(&mut self.block);
        while n < max && !self.done {
            let want = (max - n).min(READ_BLOCK_RECORDS) * RECORD_LEN;
            block.resize(want, 0);
            let len = read_full(&mut self.inner, &mut block)?;
            if len < want {
                self.done = true;
            }
            for rec in block[..len].chunks_exact(RECORD_LEN) {
                match self.parse(rec) {
                    Ok(ev) => {
                        out.push(ev);
                        n += 1;
                    }
                    Err(e) => {
                        self.done = true;
                        self.deferred = Some(e);
                        break;
                    }
                }
            }
            let tail = len % RECORD_LEN;
            if tail != 0 && self.deferred.is_none() {
                self.deferred = Some(EventError::TruncatedRecord {
                    offset: self.offset,
                    len: tail,
                });
            }
        }
        self.block = block;
        if n == 0 {
            if let Some(e) = self.deferred.take() {
                return Err(e);
            }
        }
        Ok(n)
    }
}

const READ_BLOCK_RECORDS: usize = 4096;

/// Reads a whole `EVT1` file.
pub fn read_event_file(path: impl AsRef<Path>) -> Result<(SensorGeometry, Vec<Event>), EventError> {
    let mut reader = EventReader::open(path)?;
    let mut events = Vec::new();
    while let Some(ev) = reader.read_event()? {
        events.push(ev);
    }
    Ok((reader.geometry(), events))
}

fn read_full(reader: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(x: u16, y: u16, p: i8, t: u64) -> Event {
        Event::new(x, y, Polarity::from_i8(p).unwrap(), t)
    }

    #[test]
    fn record_layout_is_little_endian() {
        let bytes = ev(3, 7, 1, 1000).to_bytes();
        assert_eq!(
            bytes,
            [0x03, 0x00, 0x07, 0x00, 0x01, 0, 0, 0, 0xE8, 0x03, 0, 0, 0, 0, 0, 0]
        );
        assert_eq!(ev(0, 0, -1, 0).to_bytes()[4], 0xFF);
    }

    #[test]
    fn empty_file_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.evt");
        let geometry = SensorGeometry::new(640, 480).unwrap();
        write_event_file(&path, geometry, &[]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[0..4], b"EVT1");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 640);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 480);
        let (g, events) = read_event_file(&path).unwrap();
        assert_eq!(g, geometry);
        assert!(events.is_empty());
    }

    #[test]
    fn writer_rejects_unsorted_input() {
        let geometry = SensorGeometry::new(10, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = write_event_file(
            dir.path().join("x.evt"),
            geometry,
            &[ev(0, 0, 1, 5), ev(0, 0, 1, 4)],
        )
        .unwrap_err();
        assert!(matches!(err, EventError::Unsorted { index: 1, .. }));
    }

    #[test]
    fn trailing_bytes_report_truncated_record() {
        let geometry = SensorGeometry::new(10, 10).unwrap();
        let mut buf = Vec::new();
        let mut w = EventWriter::new(&mut buf, geometry).unwrap();
        w.write(&ev(1, 1, 1, 10)).unwrap();
        w.finish().unwrap();
        // 17 trailing bytes: one full extra record plus one stray byte.
        buf.extend_from_slice(&ev(2, 2, -1, 20).to_bytes());
        buf.push(0xAB);
        let mut r = EventReader::new(buf.as_slice()).unwrap();
        assert!(r.read_event().unwrap().is_some());
        assert!(r.read_event().unwrap().is_some());
        match r.read_event() {
            Err(EventError::TruncatedRecord { offset, len }) => {
                assert_eq!(offset, 16 + 2 * 16);
                assert_eq!(len, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_polarity_is_rejected() {
        let geometry = SensorGeometry::new(10, 10).unwrap();
        let mut buf = Vec::new();
        EventWriter::new(&mut buf, geometry)
            .unwrap()
            .finish()
            .unwrap();
        let mut rec = ev(1, 1, 1, 10).to_bytes();
        rec[4] = 0;
        buf.extend_from_slice(&rec);
        let err = EventReader::new(buf.as_slice())
            .unwrap()
            .read_event()
            .unwrap_err();
        assert!(err.to_string().contains("invalid polarity"), "{err}");
        assert!(matches!(
            err,
            EventError::InvalidPolarity {
                offset: 20,
                value: 0
            }
        ));
    }

    #[test]
    fn bad_magic_and_non_monotonic_are_distinct_errors() {
        let err = EventReader::new(&b"EVT2\x01\x00\x01\x00\0\0\0\0\0\0\0\0"[..])
            .err()
            .unwrap();
        assert!(matches!(err, EventError::BadMagic { .. }));

        let geometry = SensorGeometry::new(10, 10).unwrap();
        let mut buf = Vec::new();
        EventWriter::new(&mut buf, geometry)
            .unwrap()
            .finish()
            .unwrap();
        buf.extend_from_slice(&ev(1, 1, 1, 10).to_bytes());
        buf.extend_from_slice(&ev(1, 1, 1, 9).to_bytes());
        let mut r = EventReader::new(buf.as_slice()).unwrap();
        r.read_event().unwrap();
        assert!(matches!(
            r.read_event(),
            Err(EventError::NonMonotonic { offset: 40, .. })
        ));
    }

    #[test]
    fn half_open_batch_boundaries() {
        let events = [ev(0, 0, 1, 0), ev(0, 0, -1, 999), ev(0, 0, 1, 1000)];
        let batches = batch_stream(&events, 1000, 0, None).unwrap();
        assert_eq!(batches.len(), 2);
        assert_eq!(
            batches[0].events.iter().map(|e| e.t).collect::<Vec<_>>(),
            vec![0, 999]
        );
        assert_eq!(
            batches[1].events.iter().map(|e| e.t).collect::<Vec<_>>(),
            vec![1000]
        );
        assert_eq!((batches[0].t_start, batches[0].t_end), (0, 1000));
        assert_eq!(batches[1].t_start, 1000);
    }

    #[test]
    fn silent_stream_yields_empty_batches() {
        let batches = batch_stream(&[], 1000, 0, Some(5000)).unwrap();
        assert_eq!(batches.len(), 5);
        assert!(batches
            .iter()
            .all(|b| b.is_empty() && b.duration_us() == 1000));
    }

    #[test]
    fn ten_ms_at_400_hz_is_four_batches() {
        let events: Vec<_> = (0..10_000).step_by(7).map(|t| ev(0, 0, 1, t)).collect();
        let batches = batch_stream(&events, 2500, 0, Some(10_000)).unwrap();
        assert_eq!(batches.len(), 4);
        assert_eq!(
            batches.iter().map(|b| b.events.len()).sum::<usize>(),
            events.len()
        );
    }

    #[test]
    fn last_batch_may_be_shorter() {
        let batches = batch_stream(&[ev(0, 0, 1, 100)], 1000, 0, Some(1500)).unwrap();
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[1].duration_us(), 500);
    }

    #[test]
    fn events_before_origin_are_rejected() {
        let err = batch_stream(&[ev(0, 0, 1, 5)], 1000, 10, None).unwrap_err();
        assert!(matches!(err, EventError::BeforeOrigin { .. }));
    }
}
