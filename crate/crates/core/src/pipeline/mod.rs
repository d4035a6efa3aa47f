//! Three-stage real-time pipeline.
//!
//! Stage 1 cuts the source into batches, stage 2 folds each batch into the
//! signed delta-time volume and snapshots the candidate pixels, stage 3
//! detects, tracks and solves the pose. Consecutive stages swap between two
//! buffers per link (see [`handoff`]). The same stage code also runs in a
//! single thread via [`run_reference`].

pub mod handoff;
mod sink;
mod stats;

use std::thread;
use std::time::{Duration, Instant};

use nalgebra::{Isometry3, Point2};
use thiserror::Error;

pub use handoff::{Backpressure, Handoff};
pub use sink::{CsvSink, JsonlSink, MemorySink, PoseRecord, PoseSink, CSV_HEADER};
pub use stats::{Histogram, HistogramSummary, PipelineStats, StatsSummary};

use crate::camera::{CameraError, DsIntrinsics};
use crate::detector::{
    candidate_pixels, rate_threshold, DetectionReport, Detector, DetectorConfig, LedRig,
};
use crate::event::{Batcher, EventBatch, EventError, EventSource, SensorGeometry};
use crate::pose::{reprojection_rmse_px, to_world, Correspondence, SolverKind};
use crate::sdtv::{min_depth, CountFrame, Sdtv, SdtvError, SdtvSnapshot};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("camera: {0}")]
    Camera(#[from] CameraError),
    #[error("event source: {0}")]
    Source(#[from] EventError),
    #[error("volume: {0}")]
    Volume(#[from] SdtvError),
    #[error("pose sink: {0}")]
    Sink(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    /// Every batch is processed and latency is left out of the records, so
    /// that repeated runs produce identical output.
    Deterministic,
    /// Overload drops the oldest unconsumed batch; latency is recorded.
    Live,
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub batch_us: u64,
    /// Time span the volume depth is sized for; at least one batch.
    pub window_us: u64,
    /// Start of the first batch window.
    pub t_origin_us: u64,
    pub rig: LedRig,
    pub intrinsics: DsIntrinsics,
    /// World to camera.
    pub t_cw: Isometry3<f64>,
    pub detector: DetectorConfig,
    pub solver: SolverKind,
    pub mode: RunMode,
    /// Release batches no faster than their timestamps, as a live camera
    /// would deliver them.
    pub pace_realtime: bool,
    /// Fault injection: extra sleep in stage 3 for every batch.
    pub stage3_delay: Option<Duration>,
}

impl PipelineConfig {
    pub fn new(rig: LedRig, intrinsics: DsIntrinsics, t_cw: Isometry3<f64>) -> Self {
        Self {
            batch_us: 2500,
            window_us: 2500,
            t_origin_us: 0,
            rig,
            intrinsics,
            t_cw,
            detector: DetectorConfig::default(),
            solver: SolverKind::Sqpnp,
            mode: RunMode::Deterministic,
            pace_realtime: false,
            stage3_delay: None,
        }
    }

    pub fn depth(&self) -> usize {
        min_depth(self.window_us, self.rig.f_max())
    }

    pub fn batch_rate_hz(&self) -> f64 {
        1e6 / self.batch_us as f64
    }

    /// Checks the configuration against the sensor and returns warnings.
    pub fn validate(&self, geometry: SensorGeometry) -> Result<Vec<String>, PipelineError> {
        if self.batch_us == 0 {
            return Err(PipelineError::Config(
                "batch duration must be positive".into(),
            ));
        }
        if self.window_us < self.batch_us {
            return Err(PipelineError::Config(format!(
                "volume window {} us is shorter than the batch {} us",
                self.window_us, self.batch_us
            )));
        }
        if self.depth() > i16::MAX as usize {
            return Err(PipelineError::Config("volume depth too large".into()));
        }
        self.intrinsics.validate()?;
        if self.intrinsics.geometry() != geometry {
            return Err(PipelineError::Config(format!(
                "intrinsics are for {}x{} but the source is {}x{}",
                self.intrinsics.width, self.intrinsics.height, geometry.width, geometry.height
            )));
        }
        let mut warnings = Vec::new();
        let half = self.rig.f_min() / 2.0;
        if self.batch_rate_hz() > half {
            warnings.push(format!(
                "batch rate {:.0} Hz exceeds half the slowest LED frequency ({half:.0} Hz); \
                 a batch may not contain a full period and detection can degrade",
                self.batch_rate_hz()
            ));
        }
        warnings.extend(
            self.rig
                .warnings(self.detector.match_tol_us)
                .iter()
                .map(|w| w.to_string()),
        );
        Ok(warnings)
    }
}

/// Batches cut by stage 1 and not yet taken by stage 2. Holds more than one
/// only when stage 2 fell behind in live mode.
struct RawBatches {
    slots: Vec<(EventBatch, Instant)>,
    len: usize,
}

/// Backlog bound for coalesced batches; beyond it the oldest is dropped.
const MAX_COALESCED: usize = 64;

impl RawBatches {
    fn new() -> Self {
        Self {
            slots: Vec::new(),
            len: 0,
        }
    }

    fn clear(&mut self) {
        self.len = 0;
    }

    fn next_slot(&mut self) -> &mut (EventBatch, Instant) {
        if self.len == self.slots.len() {
            self.slots.push((EventBatch::default(), Instant::now()));
        }
        self.len += 1;
        &mut self.slots[self.len - 1]
    }

    fn unpush(&mut self) {
        self.len -= 1;
    }

    /// Drops the oldest batch if the backlog is over its bound.
    fn trim(&mut self) -> bool {
        if self.len <= MAX_COALESCED {
            return false;
        }
        self.slots[..self.len].rotate_left(1);
        self.len -= 1;
        true
    }

    fn batches(&self) -> &[(EventBatch, Instant)] {
        &self.slots[..self.len]
    }
}

/// What crosses from stage 2 to stage 3.
struct VolumeView {
    t_start: u64,
    t_end: u64,
    events: usize,
    candidates: Vec<u32>,
    snapshot: SdtvSnapshot,
    ready_at: Instant,
}

impl VolumeView {
    fn new(geometry: SensorGeometry) -> Self {
        Self {
            t_start: 0,
            t_end: 0,
            events: 0,
            candidates: Vec::new(),
            snapshot: SdtvSnapshot::new(geometry),
            ready_at: Instant::now(),
        }
    }
}

/// Owns the persistent volume; only candidate stacks leave this stage.
struct Converter {
    sdtv: Sdtv,
    frame: CountFrame,
    threshold: u32,
    candidates: Vec<u32>,
}

impl Converter {
    fn new(config: &PipelineConfig, geometry: SensorGeometry) -> Result<Self, PipelineError> {
        Ok(Self {
            sdtv: Sdtv::new(geometry, config.depth())?,
            frame: CountFrame::new(geometry),
            threshold: rate_threshold(config.batch_us, config.rig.f_min(), config.detector.beta),
            candidates: Vec::new(),
        })
    }

    fn ingest(&mut self, batch: &EventBatch) -> Result<(), PipelineError> {
        self.frame.clear();
        self.sdtv.ingest_into(&batch.events, &mut self.frame)?;
        self.candidates = candidate_pixels(&self.frame, self.threshold);
        Ok(())
    }

    fn emit(&self, batch_span: (u64, u64, usize), out: &mut VolumeView) {
        (out.t_start, out.t_end, out.events) = batch_span;
        out.candidates.clone_from(&self.candidates);
        self.sdtv.snapshot_into(&self.candidates, &mut out.snapshot);
    }
}

/// Detection, tracking, PnP and the world transform.
struct Solver {
    detector: Detector,
    intrinsics: DsIntrinsics,
    t_cw: Isometry3<f64>,
    solver: SolverKind,
}

enum PoseOutcome {
    Pose(PoseRecord),
    TooFew,
    Failed,
}

impl Solver {
    fn new(config: &PipelineConfig, geometry: SensorGeometry) -> Self {
        Self {
            detector: Detector::new(
                config.rig.clone(),
                config.detector.clone(),
                geometry,
                config.batch_us,
            ),
            intrinsics: config.intrinsics,
            t_cw: config.t_cw,
            solver: config.solver,
        }
    }

    fn process(&mut self, view: &VolumeView) -> (DetectionReport, PoseOutcome) {
        let report = self
            .detector
            .detect_candidates(&view.snapshot, &view.candidates, view.t_end);
        let outcome = self.solve(&report);
        (report, outcome)
    }

    fn solve(&self, report: &DetectionReport) -> PoseOutcome {
        if !report.pose_sufficient() {
            return PoseOutcome::TooFew;
        }
        let rig = self.detector.rig();
        let mut corr = Vec::with_capacity(report.centroids.len());
        let mut ids = Vec::with_capacity(report.centroids.len());
        let mut pixels: Vec<Point2<f64>> = Vec::with_capacity(report.centroids.len());
        for (id, c) in &report.centroids {
            let (Some(spec), Ok(n)) = (rig.get(*id), self.intrinsics.undistort_to_normalized(c))
            else {
                continue;
            };
            corr.push(Correspondence::new(spec.position.coords, n));
            ids.push(id.0);
            pixels.push(*c);
        }
        if corr.len() < crate::detector::MIN_MARKERS {
            return PoseOutcome::TooFew;
        }
        let Ok(est) = self.solver.solve(&corr) else {
            return PoseOutcome::Failed;
        };
        let body: Vec<_> = corr.iter().map(|c| c.body).collect();
        let rmse = reprojection_rmse_px(&est.t_cb, &body, &pixels, &self.intrinsics);
        let t_wb = to_world(&est.t_cb, &self.t_cw);
        let p = t_wb.translation.vector;
        let mut q = *t_wb.rotation.quaternion();
        if q.w < 0.0 {
            q = -q;
        }
        PoseOutcome::Pose(PoseRecord {
            t_us: report.t_us,
            frame: "world",
            position_m: [p.x, p.y, p.z],
            quaternion_wxyz: [q.w, q.i, q.j, q.k],
            leds_used: ids,
            reproj_rmse_px: rmse,
            latency_us: None,
        })
    }
}

fn micros(d: Duration) -> u64 {
    d.as_micros().min(u64::MAX as u128) as u64
}

/// Per-batch bookkeeping and sink writes shared by both runners.
fn finish_batch<K: PoseSink + ?Sized>(
    stats: &mut PipelineStats,
    sink: &mut K,
    report: &DetectionReport,
    outcome: PoseOutcome,
    ready_at: Instant,
    record_latency: bool,
) -> Result<(), PipelineError> {
    stats.processed += 1;
    for id in &report.observed {
        *stats.led_observed.entry(*id).or_insert(0) += 1;
    }
    for id in report.centroids.keys() {
        *stats.led_live.entry(*id).or_insert(0) += 1;
    }
    sink.detection(report)?;
    match outcome {
        PoseOutcome::Pose(mut rec) => {
            let latency = micros(ready_at.elapsed());
            stats.latency_us.record(latency);
            if record_latency {
                rec.latency_us = Some(latency);
            }
            sink.pose(&rec)?;
            stats.poses += 1;
        }
        PoseOutcome::Failed => stats.pose_failures += 1,
        PoseOutcome::TooFew => {}
    }
    Ok(())
}

fn init_stats(config: &PipelineConfig, warnings: Vec<String>) -> PipelineStats {
    for w in &warnings {
        log::warn!("{w}");
    }
    let mut stats = PipelineStats {
        warnings,
        ..PipelineStats::default()
    };
    for m in config.rig.markers() {
        stats.led_observed.insert(m.id, 0);
        stats.led_live.insert(m.id, 0);
    }
    stats
}

fn join<T>(h: thread::ScopedJoinHandle<'_, T>) -> T {
    h.join().unwrap_or_else(|p| std::panic::resume_unwind(p))
}

/// Sleeps until `offset_us` after `start`.
fn pace(start: Instant, offset_us: u64) {
    let due = start + Duration::from_micros(offset_us);
    let now = Instant::now();
    if due > now {
        thread::sleep(due - now);
    }
}

/// Runs the three stages on their own threads.
///
/// Configuration errors are returned before any thread starts. Failures
/// while running stop all stages and are reported in
/// [`PipelineStats::failure`] together with the partial counters.
pub fn run<S, K>(
    source: S,
    config: &PipelineConfig,
    sink: &mut K,
) -> Result<PipelineStats, PipelineError>
where
    S: EventSource,
    K: PoseSink + ?Sized,
{
    let geometry = source.geometry();
    let warnings = config.validate(geometry)?;
    let mut batcher = Batcher::new(source, config.batch_us, config.t_origin_us)?;
    let mut converter = Converter::new(config, geometry)?;
    let mut solver = Solver::new(config, geometry);
    let mut stats = init_stats(config, warnings);

    let (raw_policy, view_policy) = match config.mode {
        RunMode::Deterministic => (Backpressure::Block, Backpressure::Block),
        RunMode::Live => (Backpressure::Coalesce, Backpressure::DropOldest),
    };
    let record_latency = config.mode == RunMode::Live;
    let raw = Handoff::new(RawBatches::new(), RawBatches::new(), raw_policy);
    let views = Handoff::new(
        VolumeView::new(geometry),
        VolumeView::new(geometry),
        view_policy,
    );
    let start = Instant::now();

    let (s1, s2, s3) = thread::scope(|scope| {
        let stage1 = scope.spawn(|| {
            let mut times = Histogram::default();
            let (mut produced, mut events, mut evicted) = (0u64, 0u64, 0u64);
            let mut failure = None;
            for k in 1u64.. {
                if config.pace_realtime {
                    pace(start, k.saturating_mul(config.batch_us));
                }
                let Some(handoff::Acquired { mut buf, pending }) = raw.acquire() else {
                    break;
                };
                if !pending {
                    buf.clear();
                }
                let t0 = Instant::now();
                let slot = buf.next_slot();
                match batcher.next_batch(&mut slot.0) {
                    Ok(true) => {
                        produced += 1;
                        events += slot.0.events.len() as u64;
                        slot.1 = Instant::now();
                        evicted += buf.trim() as u64;
                        times.record(micros(t0.elapsed()));
                        if !raw.publish(buf) {
                            break;
                        }
                    }
                    Ok(false) => {
                        buf.unpush();
                        if pending {
                            raw.publish(buf);
                        }
                        break;
                    }
                    Err(e) => {
                        failure = Some(PipelineError::from(e));
                        views.close();
                        break;
                    }
                }
            }
            raw.close();
            (times, produced, events, evicted, failure)
        });

        let stage2 = scope.spawn(|| {
            let mut times = Histogram::default();
            let mut failure = None;
            'outer: while let Some((_, input)) = raw.take() {
                for (batch, ready_at) in input.batches() {
                    let t0 = Instant::now();
                    if let Err(e) = converter.ingest(batch) {
                        failure = Some(e);
                        raw.close();
                        break 'outer;
                    }
                    let Some(handoff::Acquired { buf: mut out, .. }) = views.acquire() else {
                        raw.close();
                        break 'outer;
                    };
                    converter.emit((batch.t_start, batch.t_end, batch.events.len()), &mut out);
                    out.ready_at = *ready_at;
                    times.record(micros(t0.elapsed()));
                    if !views.publish(out) {
                        raw.close();
                        break 'outer;
                    }
                }
                raw.release(input);
            }
            views.close();
            (times, failure)
        });

        let stage3 = scope.spawn(|| {
            let mut times = Histogram::default();
            let mut local = PipelineStats::default();
            let mut failure = None;
            let mut last_generation = 0;
            while let Some((generation, view)) = views.take() {
                debug_assert!(generation > last_generation);
                last_generation = generation;
                let t0 = Instant::now();
                if let Some(d) = config.stage3_delay {
                    thread::sleep(d);
                }
                let (report, outcome) = solver.process(&view);
                let ready_at = view.ready_at;
                views.release(view);
                let res = finish_batch(
                    &mut local,
                    &mut *sink,
                    &report,
                    outcome,
                    ready_at,
                    record_latency,
                );
                times.record(micros(t0.elapsed()));
                if let Err(e) = res {
                    failure = Some(e);
                    views.close();
                    raw.close();
                    break;
                }
            }
            if failure.is_none() {
                if let Err(e) = sink.finish() {
                    failure = Some(e.into());
                }
            }
            (times, local, failure)
        });

        (join(stage1), join(stage2), join(stage3))
    });

    stats.wall = start.elapsed();
    let (t1, produced, events, evicted, f1) = s1;
    let (t2, f2) = s2;
    let (t3, local, f3) = s3;
    stats.stage_us = [t1, t2, t3];
    stats.events = events;
    stats.processed = local.processed;
    stats.poses = local.poses;
    stats.pose_failures = local.pose_failures;
    stats.latency_us = local.latency_us;
    stats.led_observed.extend(local.led_observed);
    stats.led_live.extend(local.led_live);
    stats.produced = produced;
    stats.failure = f1.or(f2).or(f3);
    if stats.failure.is_none() {
        stats.dropped = evicted + raw.dropped() + views.dropped();
        debug_assert_eq!(stats.processed + stats.dropped, stats.produced);
    } else {
        // Batches still in flight when a stage stopped are lost as well.
        stats.dropped = stats.produced - stats.processed;
    }
    Ok(stats)
}

/// Single-threaded execution of the same stages; never drops.
pub fn run_reference<S, K>(
    source: S,
    config: &PipelineConfig,
    sink: &mut K,
) -> Result<PipelineStats, PipelineError>
where
    S: EventSource,
    K: PoseSink + ?Sized,
{
    let geometry = source.geometry();
    let warnings = config.validate(geometry)?;
    let mut batcher = Batcher::new(source, config.batch_us, config.t_origin_us)?;
    let mut converter = Converter::new(config, geometry)?;
    let mut solver = Solver::new(config, geometry);
    let mut stats = init_stats(config, warnings);
    let mut raw = EventBatch::default();
    let mut view = VolumeView::new(geometry);
    let start = Instant::now();

    let result = (|| -> Result<(), PipelineError> {
        loop {
            let t0 = Instant::now();
            if !batcher.next_batch(&mut raw)? {
                break;
            }
            let ready_at = Instant::now();
            stats.produced += 1;
            stats.events += raw.events.len() as u64;
            stats.stage_us[0].record(micros(t0.elapsed()));

            let t1 = Instant::now();
            converter.ingest(&raw)?;
            converter.emit((raw.t_start, raw.t_end, raw.events.len()), &mut view);
            stats.stage_us[1].record(micros(t1.elapsed()));

            let t2 = Instant::now();
            let (report, outcome) = solver.process(&view);
            finish_batch(&mut stats, &mut *sink, &report, outcome, ready_at, false)?;
            stats.stage_us[2].record(micros(t2.elapsed()));
        }
        sink.finish()?;
        Ok(())
    })();

    stats.wall = start.elapsed();
    stats.dropped = stats.produced - stats.processed;
    stats.failure = result.err();
    Ok(stats)
}
