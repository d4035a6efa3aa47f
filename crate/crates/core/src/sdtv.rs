//! Signed delta-time volume.
//!
//! Every pixel owns a cyclic stack of `D` signed 16-bit values. Each value is
//! the time in microseconds since the pixel's previous event, with the sign set
//! to the polarity of the event that closed the interval. Raw deltas are
//! strictly positive, so the sign bit is free to carry polarity.
//!
//! Stacks are stored contiguously per pixel (`[pixel][slot]`), so per-pixel
//! period extraction touches a single cache line for typical depths.

use std::io::{self, Write};

use thiserror::Error;

use crate::event::{Event, SensorGeometry};

/// Largest storable delta; larger gaps saturate and mark the pixel stale.
pub const SATURATED: i16 = i16::MAX;

const NEVER: u64 = u64::MAX;
const MIN_DEPTH: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SdtvError {
    #[error("event ({x}, {y}) outside the {width}x{height} sensor")]
    OutOfBounds {
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },
    #[error("stack depth {0} outside [1, 255]")]
    InvalidDepth(usize),
    #[error("count frame geometry does not match the volume")]
    GeometryMismatch,
}

/// Minimum stack depth so that a window of `window_us` holds two events per
/// period of the fastest LED: `ceil(2 * T * f_max)`, never below 4.
pub fn min_depth(window_us: u64, f_max_hz: f64) -> usize {
    let exact = 2.0 * window_us as f64 * 1e-6 * f_max_hz;
    // Guard against representation error pushing an exact integer up.
    let depth = (exact - 1e-9).ceil().max(0.0) as usize;
    depth.max(MIN_DEPTH)
}

/// Bytes used by the stacks of a `W x H x D` volume of 16-bit values.
pub fn footprint_bytes(width: u64, height: u64, depth: u64) -> u64 {
    width * height * depth * 2
}

/// Bytes used by a dense event volume binned at `resolution_us` over
/// `window_us`, one byte per cell.
pub fn event_volume_bytes(width: u64, height: u64, window_us: u64, resolution_us: u64) -> u64 {
    width * height * (window_us / resolution_us)
}

/// Cell-count reduction of a depth-`D` volume over a dense event volume with
/// the same window and bin resolution (`bins / D`).
pub fn cell_reduction_factor(window_us: u64, resolution_us: u64, depth: u64) -> f64 {
    (window_us / resolution_us) as f64 / depth as f64
}

/// Per-pixel event counts of one batch, saturating at `u16::MAX`.
///
/// Tracks which pixels were touched so clearing and scanning cost is
/// proportional to the batch, not the sensor.
#[derive(Clone, Debug)]
pub struct CountFrame {
    geometry: SensorGeometry,
    counts: Vec<u16>,
    touched: Vec<u32>,
}

impl CountFrame {
    pub fn new(geometry: SensorGeometry) -> Self {
        Self {
            geometry,
            counts: vec![0; geometry.pixel_count()],
            touched: Vec::new(),
        }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    #[inline]
    pub fn get(&self, pixel: usize) -> u16 {
        self.counts[pixel]
    }

    #[inline]
    fn bump(&mut self, pixel: usize) {
        let c = &mut self.counts[pixel];
        if *c == 0 {
            self.touched.push(pixel as u32);
        }
        *c = c.saturating_add(1);
    }

    /// Pixels with at least one event, in first-touch order.
    pub fn touched(&self) -> &[u32] {
        &self.touched
    }

    pub fn clear(&mut self) {
        for &p in &self.touched {
            self.counts[p as usize] = 0;
        }
        self.touched.clear();
    }

    pub fn total(&self) -> u64 {
        self.touched
            .iter()
            .map(|&p| self.counts[p as usize] as u64)
            .sum()
    }
}

/// Read access to ordered pixel stacks. Implemented by the live volume and
/// by the candidate-pixel snapshots that cross pipeline stages.
pub trait StackSource {
    fn geometry(&self) -> SensorGeometry;

    /// Appends the stack of `pixel`, oldest entry first, to `out`.
    fn ordered_stack(&self, pixel: usize, out: &mut Vec<i16>);
}

/// The signed delta-time volume.
#[derive(Clone, Debug)]
pub struct Sdtv {
    geometry: SensorGeometry,
    depth: usize,
    stacks: Vec<i16>,
    last_t: Vec<u64>,
    write_pos: Vec<u8>,
    fill: Vec<u8>,
}

impl Sdtv {
    pub fn new(geometry: SensorGeometry, depth: usize) -> Result<Self, SdtvError> {
        if depth == 0 || depth > u8::MAX as usize {
            return Err(SdtvError::InvalidDepth(depth));
        }
        let n = geometry.pixel_count();
        Ok(Self {
            geometry,
            depth,
            stacks: vec![0; n * depth],
            last_t: vec![NEVER; n],
            write_pos: vec![0; n],
            fill: vec![0; n],
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn stack_bytes(&self) -> usize {
        self.stacks.len() * std::mem::size_of::<i16>()
    }

    pub fn last_timestamp(&self, pixel: usize) -> Option<u64> {
        let t = self.last_t[pixel];
        (t != NEVER).then_some(t)
    }

    pub fn fill_count(&self, pixel: usize) -> usize {
        self.fill[pixel] as usize
    }

    /// A pixel is stale while its stack holds a saturated delta.
    pub fn is_stale(&self, pixel: usize) -> bool {
        let base = pixel * self.depth;
        let n = self.fill[pixel] as usize;
        // Filled slots are always a prefix until the first wrap, then all.
        self.stacks[base..base + n]
            .iter()
            .any(|v| v.abs() == SATURATED)
    }

    /// Ingests a batch and returns its count frame.
    pub fn ingest_batch(&mut self, events: &[Event]) -> Result<CountFrame, SdtvError> {
        let mut frame = CountFrame::new(self.geometry);
        self.ingest_into(events, &mut frame)?;
        Ok(frame)
    }

    /// Ingests a batch, accumulating counts into `frame` (which is not
    /// cleared). The batch is rejected as a whole if any event is out of
    /// bounds.
    pub fn ingest_into(
        &mut self,
        events: &[Event],
        frame: &mut CountFrame,
    ) -> Result<(), SdtvError> {
        if frame.geometry != self.geometry {
            return Err(SdtvError::GeometryMismatch);
        }
        if let Some(ev) = events.iter().find(|e| !self.geometry.contains(e.x, e.y)) {
            return Err(SdtvError::OutOfBounds {
                x: ev.x,
                y: ev.y,
                width: self.geometry.width,
                height: self.geometry.height,
            });
        }
        for ev in events {
            let pixel = self.geometry.index(ev.x, ev.y);
            frame.bump(pixel);
            self.push(pixel, ev);
        }
        Ok(())
    }

    #[inline]
    fn push(&mut self, pixel: usize, ev: &Event) {
        let last = self.last_t[pixel];
        self.last_t[pixel] = ev.t;
        if last == NEVER {
            return;
        }
        let delta = ev.t.saturating_sub(last);
        let base = pixel * self.depth;
        if delta == 0 {
            // Same-timestamp pair: keep one delta carrying the later polarity.
            if self.fill[pixel] > 0 {
                let newest = (self.write_pos[pixel] as usize + self.depth - 1) % self.depth;
                let slot = &mut self.stacks[base + newest];
                *slot = slot.abs() * ev.polarity.sign();
            }
            return;
        }
        let magnitude = delta.min(SATURATED as u64) as i16;
        let pos = self.write_pos[pixel] as usize;
        self.stacks[base + pos] = magnitude * ev.polarity.sign();
        self.write_pos[pixel] = ((pos + 1) % self.depth) as u8;
        if (self.fill[pixel] as usize) < self.depth {
            self.fill[pixel] += 1;
        }
    }

    /// Copies the ordered stacks of `pixels` into a snapshot.
    pub fn snapshot_into(&self, pixels: &[u32], snapshot: &mut SdtvSnapshot) {
        snapshot.geometry = self.geometry;
        snapshot.index.clear();
        snapshot.values.clear();
        let mut sorted: Vec<u32> = pixels.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for p in sorted {
            let start = snapshot.values.len() as u32;
            self.ordered_stack(p as usize, &mut snapshot.values);
            let len = snapshot.values.len() as u32 - start;
            snapshot.index.push((p, start, len));
        }
    }

    /// Writes `pixel,slot,delta` rows (slot 0 = oldest) for every pixel with
    /// stored deltas.
    pub fn dump_csv(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "pixel,slot,delta")?;
        let mut stack = Vec::with_capacity(self.depth);
        for pixel in 0..self.geometry.pixel_count() {
            if self.fill[pixel] == 0 {
                continue;
            }
            stack.clear();
            self.ordered_stack(pixel, &mut stack);
            for (slot, v) in stack.iter().enumerate() {
                writeln!(out, "{pixel},{slot},{v}")?;
            }
        }
        Ok(())
    }
}

impl StackSource for Sdtv {
    fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    fn ordered_stack(&self, pixel: usize, out: &mut Vec<i16>) {
        let base = pixel * self.depth;
        let n = self.fill[pixel] as usize;
        let pos = self.write_pos[pixel] as usize;
        let stack = &self.stacks[base..base + self.depth];
        if n < self.depth {
            out.extend_from_slice(&stack[..n]);
        } else {
            out.extend_from_slice(&stack[pos..]);
            out.extend_from_slice(&stack[..pos]);
        }
    }
}

/// Ordered stacks of a subset of pixels, detached from the live volume.
#[derive(Clone, Debug)]
pub struct SdtvSnapshot {
    geometry: SensorGeometry,
    index: Vec<(u32, u32, u32)>,
    values: Vec<i16>,
}

impl SdtvSnapshot {
    pub fn new(geometry: SensorGeometry) -> Self {
        Self {
            geometry,
            index: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.index.len()
    }

    pub fn contains(&self, pixel: usize) -> bool {
        self.lookup(pixel).is_some()
    }

    fn lookup(&self, pixel: usize) -> Option<(usize, usize)> {
        self.index
            .binary_search_by_key(&(pixel as u32), |e| e.0)
            .ok()
            .map(|i| (self.index[i].1 as usize, self.index[i].2 as usize))
    }
}

impl StackSource for SdtvSnapshot {
    fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    fn ordered_stack(&self, pixel: usize, out: &mut Vec<i16>) {
        if let Some((start, len)) = self.lookup(pixel) {
            out.extend_from_slice(&self.values[start..start + len]);
        }
    }
}

/// Period measurements (µs) from an oldest-first stack.
///
/// Entries up to and including the first positive-to-negative transition are
/// discarded. Each following period starts at a negative-to-positive
/// transition (that first positive value included) and runs through the
/// subsequent negative run; same-sign runs are absorbed into the sum. A
/// trailing positive run without an off-event is incomplete and ignored.
/// Stacks holding a saturated delta yield nothing.
pub fn pixel_periods(stack: &[i16]) -> Vec<u32> {
    let mut out = Vec::new();
    pixel_periods_into(stack, &mut out);
    out
}

/// As [`pixel_periods`], appending into `out`.
pub fn pixel_periods_into(stack: &[i16], out: &mut Vec<u32>) {
    if stack.len() < 3 || stack.iter().any(|v| v.abs() == SATURATED) {
        return;
    }
    let Some(first_off) = stack.windows(2).position(|w| w[0] > 0 && w[1] < 0) else {
        return;
    };
    let rest = &stack[first_off + 2..];

    let mut sum: u32 = 0;
    let mut in_period = false;
    let mut seen_off = false;
    let mut prev_negative = true;
    for &v in rest {
        let positive = v > 0;
        if positive && prev_negative {
            if in_period && seen_off {
                out.push(sum);
            }
            in_period = true;
            seen_off = false;
            sum = 0;
        }
        if in_period {
            sum += v.unsigned_abs() as u32;
            if !positive {
                seen_off = true;
            }
        }
        prev_negative = !positive;
    }
    if in_period && seen_off {
        out.push(sum);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Polarity;

    fn geometry() -> SensorGeometry {
        SensorGeometry::new(4, 3).unwrap()
    }

    fn ev(x: u16, y: u16, p: Polarity, t: u64) -> Event {
        Event::new(x, y, p, t)
    }

    fn stack_of(v: &Sdtv, pixel: usize) -> Vec<i16> {
        let mut out = Vec::new();
        v.ordered_stack(pixel, &mut out);
        out
    }

    #[test]
    fn depth_formula() {
        assert_eq!(min_depth(2000, 2860.0), 12);
        assert_eq!(min_depth(2000, 1000.0), 4);
        assert_eq!(min_depth(2500, 2860.0), 15);
        assert_eq!(min_depth(1000, 2000.0), 4);
        assert_eq!(min_depth(2000, 4000.0), 16);
    }

    #[test]
    fn direct_differencing() {
        let mut v = Sdtv::new(geometry(), 8).unwrap();
        let frame = v
            .ingest_batch(&[
                ev(1, 1, Polarity::On, 100),
                ev(1, 1, Polarity::Off, 130),
                ev(1, 1, Polarity::On, 400),
            ])
            .unwrap();
        let p = geometry().index(1, 1);
        assert_eq!(stack_of(&v, p), vec![-30, 270]);
        assert_eq!(frame.get(p), 3);
        assert_eq!(frame.touched(), &[p as u32]);
        assert_eq!(v.last_timestamp(p), Some(400));
    }

    #[test]
    fn long_gap_saturates_and_marks_stale() {
        let mut v = Sdtv::new(geometry(), 8).unwrap();
        v.ingest_batch(&[ev(0, 0, Polarity::On, 0), ev(0, 0, Polarity::Off, 40_000)])
            .unwrap();
        assert_eq!(stack_of(&v, 0), vec![-SATURATED]);
        assert!(v.is_stale(0));
        v.ingest_batch(&[
            ev(0, 0, Polarity::On, 40_300),
            ev(0, 0, Polarity::Off, 40_330),
            ev(0, 0, Polarity::On, 40_600),
        ])
        .unwrap();
        assert!(pixel_periods(&stack_of(&v, 0)).is_empty());
    }

    #[test]
    fn stale_flag_clears_once_evicted() {
        let mut v = Sdtv::new(geometry(), 4).unwrap();
        v.ingest_batch(&[ev(0, 0, Polarity::On, 0), ev(0, 0, Polarity::Off, 50_000)])
            .unwrap();
        let events: Vec<_> = (1..=4)
            .map(|i| {
                ev(
                    0,
                    0,
                    if i % 2 == 0 {
                        Polarity::Off
                    } else {
                        Polarity::On
                    },
                    50_000 + i * 100,
                )
            })
            .collect();
        v.ingest_batch(&events).unwrap();
        assert!(!v.is_stale(0));
    }

    #[test]
    fn zero_delta_keeps_later_polarity() {
        let mut v = Sdtv::new(geometry(), 8).unwrap();
        v.ingest_batch(&[
            ev(2, 0, Polarity::On, 10),
            ev(2, 0, Polarity::On, 50),
            ev(2, 0, Polarity::Off, 50),
        ])
        .unwrap();
        assert_eq!(stack_of(&v, 2), vec![-40]);
    }

    #[test]
    fn out_of_bounds_rejects_whole_batch() {
        let mut v = Sdtv::new(geometry(), 8).unwrap();
        let err = v
            .ingest_batch(&[ev(0, 0, Polarity::On, 1), ev(9, 0, Polarity::On, 2)])
            .unwrap_err();
        assert!(matches!(err, SdtvError::OutOfBounds { x: 9, .. }));
        assert_eq!(v.last_timestamp(0), None);
    }

    #[test]
    fn cyclic_overwrite_keeps_latest() {
        let mut v = Sdtv::new(geometry(), 4).unwrap();
        let mut t = 0;
        let mut events = Vec::new();
        for i in 0..10u64 {
            t += 10 + i;
            events.push(ev(3, 2, Polarity::On, t));
        }
        v.ingest_batch(&events).unwrap();
        let p = geometry().index(3, 2);
        assert_eq!(stack_of(&v, p), vec![16, 17, 18, 19]);
    }

    #[test]
    fn clean_square_wave_periods() {
        assert_eq!(pixel_periods(&[5, -30, 270, -30, 270, -30]), vec![300, 300]);
        assert!(pixel_periods(&[10, 20, 30, 40]).is_empty());
        assert!(pixel_periods(&[10, -20]).is_empty());
        assert_eq!(pixel_periods(&[5, -30, 270, -30, 270]), vec![300]);
    }

    #[test]
    fn same_sign_runs_are_absorbed() {
        // A doubled off-event shifts one boundary but conserves total time.
        assert_eq!(
            pixel_periods(&[5, -30, 270, -15, -15, 270, -30]),
            vec![300, 300]
        );
        assert_eq!(
            pixel_periods(&[5, -30, 135, 135, -30, 270, -30]),
            vec![300, 300]
        );
    }

    #[test]
    fn count_frame_clear_resets_touched_only() {
        let mut frame = CountFrame::new(geometry());
        for _ in 0..3 {
            frame.bump(5);
        }
        frame.bump(1);
        assert_eq!(frame.total(), 4);
        frame.clear();
        assert_eq!(frame.get(5), 0);
        assert!(frame.touched().is_empty());
    }

    #[test]
    fn count_saturates() {
        let mut frame = CountFrame::new(geometry());
        for _ in 0..70_000 {
            frame.bump(0);
        }
        assert_eq!(frame.get(0), u16::MAX);
    }

    #[test]
    fn snapshot_matches_live_volume() {
        let mut v = Sdtv::new(geometry(), 6).unwrap();
        let events: Vec<_> = (0..40u64)
            .map(|i| {
                let pol = if i % 3 == 0 {
                    Polarity::Off
                } else {
                    Polarity::On
                };
                ev((i % 4) as u16, (i % 3) as u16, pol, i * 37)
            })
            .collect();
        v.ingest_batch(&events).unwrap();
        let mut snap = SdtvSnapshot::new(geometry());
        v.snapshot_into(&[7, 0, 5, 7], &mut snap);
        assert_eq!(snap.pixel_count(), 3);
        for p in [0usize, 5, 7] {
            let mut a = Vec::new();
            snap.ordered_stack(p, &mut a);
            assert_eq!(a, stack_of(&v, p));
        }
        let mut none = Vec::new();
        snap.ordered_stack(1, &mut none);
        assert!(none.is_empty());
    }

    #[test]
    fn footprints() {
        assert_eq!(event_volume_bytes(640, 480, 2000, 5), 122_880_000);
        assert_eq!(footprint_bytes(640, 480, 16), 9_830_400);
        assert_eq!(footprint_bytes(0, 0, 0), 0);
        assert_eq!(cell_reduction_factor(2000, 5, 4), 100.0);
        assert_eq!(cell_reduction_factor(2000, 5, 16), 25.0);
        let v = Sdtv::new(SensorGeometry::new(640, 480).unwrap(), 16).unwrap();
        assert_eq!(v.stack_bytes() as u64, footprint_bytes(640, 480, 16));
    }

    #[test]
    fn csv_dump_lists_slots_oldest_first() {
        let mut v = Sdtv::new(geometry(), 4).unwrap();
        v.ingest_batch(&[
            ev(1, 0, Polarity::On, 0),
            ev(1, 0, Polarity::Off, 7),
            ev(1, 0, Polarity::On, 20),
        ])
        .unwrap();
        let mut buf = Vec::new();
        v.dump_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "pixel,slot,delta\n1,0,-7\n1,1,13\n"
        );
    }
}
