//! Synthetic event streams of a blinking LED rig with ground truth.
//!
//! Each LED is a square wave with a per-seed random phase. At every on and
//! off transition the marker is projected through the camera and the pixels
//! of a small disk blob fire independently with a probability that falls off
//! towards the rim. Timestamp jitter, double events and spurious events are
//! layered on top. Events are produced chunk by chunk so long scenes stream
//! without holding the whole recording in memory.

mod trajectory;

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{
    Isometry3, Matrix3, Point2, Point3, Rotation3, Translation3, UnitQuaternion, Vector3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use trajectory::{
    RectangleParams, Trajectory, TrajectoryError, TrajectoryKind, SAMPLE_PERIOD_US,
};

use crate::camera::{CameraError, DsIntrinsics};
use crate::detector::{LedId, LedRig, LedSpec};
use crate::event::{Event, EventError, EventSource, EventWriter, Polarity, SensorGeometry};

/// Default blink frequencies, Hz.
pub const DEFAULT_FREQUENCIES_HZ: [f64; 5] = [1730.0, 1980.0, 2290.0, 2610.0, 2860.0];
/// Default duty cycles, fractions.
pub const DEFAULT_DUTIES: [f64; 5] = [0.0066, 0.0075, 0.0087, 0.0099, 0.0109];
/// Horizontal field of view of the default 25 mm lens on a 640 px sensor.
pub const DEFAULT_HFOV_DEG: f64 = 22.0;

const CHUNK_US: u64 = 10_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("marker {id} is behind the camera at t = {t_us} us")]
    BehindCamera { id: LedId, t_us: u64 },
    #[error("invalid noise model: {0}")]
    Noise(&'static str),
    #[error("scene duration must be positive")]
    ZeroDuration,
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Polarity of spurious events inside LED blobs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpuriousPolarity {
    /// Always positive, like a stray on-event between pulses.
    Positive,
    Random,
}

/// Detection probability profile across the blob.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Falloff {
    /// Full probability inside the core radius, then a quarter cosine down
    /// to zero at the blob radius.
    Cosine,
    /// Uniform inside radius `r`.
    Flat,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Peak per-pixel transition detection probability.
    pub beta_sim: f64,
    pub double_prob: f64,
    pub double_lag_us: f64,
    pub double_lag_jitter_us: f64,
    /// Spurious events per pixel per second inside LED blobs.
    pub spurious_blob_rate: f64,
    pub spurious_blob_polarity: SpuriousPolarity,
    /// Spurious events per pixel per second everywhere.
    pub spurious_background_rate: f64,
    /// Timestamp jitter standard deviation, clamped at 4 sigma.
    pub jitter_us: f64,
    pub blob_radius_px: f64,
    /// Radius of the full-probability core; at most `blob_radius_px`.
    pub core_radius_px: f64,
    pub falloff: Falloff,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            beta_sim: 1.0,
            double_prob: 0.1,
            double_lag_us: 15.0,
            double_lag_jitter_us: 5.0,
            spurious_blob_rate: 1000.0,
            spurious_blob_polarity: SpuriousPolarity::Positive,
            spurious_background_rate: 10.0,
            jitter_us: 2.0,
            blob_radius_px: 2.0,
            core_radius_px: 1.0,
            falloff: Falloff::Cosine,
        }
    }
}

impl NoiseModel {
    /// Every blob pixel fires at every transition, exactly on time.
    pub fn noiseless() -> Self {
        Self {
            beta_sim: 1.0,
            double_prob: 0.0,
            double_lag_us: 15.0,
            double_lag_jitter_us: 0.0,
            spurious_blob_rate: 0.0,
            spurious_blob_polarity: SpuriousPolarity::Positive,
            spurious_background_rate: 0.0,
            jitter_us: 0.0,
            blob_radius_px: 2.0,
            core_radius_px: 1.0,
            falloff: Falloff::Flat,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.beta_sim) || !prob(self.double_prob) {
            return Err(SimError::Noise("probabilities must lie in [0, 1]"));
        }
        if !(self.spurious_blob_rate >= 0.0 && self.spurious_background_rate >= 0.0) {
            return Err(SimError::Noise("rates must be non-negative"));
        }
        if !(self.jitter_us >= 0.0 && self.double_lag_jitter_us >= 0.0 && self.double_lag_us >= 0.0)
        {
            return Err(SimError::Noise("jitter and lag must be non-negative"));
        }
        if !(self.blob_radius_px > 0.0) {
            return Err(SimError::Noise("blob radius must be positive"));
        }
        if !(self.core_radius_px >= 0.0 && self.core_radius_px <= self.blob_radius_px) {
            return Err(SimError::Noise("core radius must lie in [0, blob radius]"));
        }
        Ok(())
    }

    pub fn detection_probability(&self, d: f64) -> f64 {
        let r = self.blob_radius_px;
        if d >= r {
            return 0.0;
        }
        match self.falloff {
            Falloff::Cosine => {
                let c = self.core_radius_px;
                if d <= c {
                    self.beta_sim
                } else {
                    self.beta_sim * (PI * (d - c) / (2.0 * (r - c))).cos()
                }
            }
            Falloff::Flat => self.beta_sim,
        }
    }
}

/// A window during which a marker is hidden.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occlusion {
    pub led: LedId,
    pub start_us: u64,
    pub end_us: u64,
}

#[derive(Clone, Debug)]
pub struct SimScene {
    pub rig: LedRig,
    pub intrinsics: DsIntrinsics,
    /// World-to-camera transform.
    pub t_cw: Isometry3<f64>,
    pub trajectory: Trajectory,
    pub noise: NoiseModel,
    pub duration_us: u64,
    pub occlusions: Vec<Occlusion>,
    /// Fixed per-LED phases in microseconds; random per seed when `None`.
    pub phases_us: Option<Vec<f64>>,
    /// Ground-truth cadence.
    pub truth_period_us: u64,
}

/// 80 mm square with a raised center, body frame, meters.
pub fn default_layout() -> [Point3<f64>; 5] {
    [
        Point3::new(-0.04, -0.04, 0.0),
        Point3::new(0.04, -0.04, 0.0),
        Point3::new(0.04, 0.04, 0.0),
        Point3::new(-0.04, 0.04, 0.0),
        Point3::new(0.0, 0.0, 0.015),
    ]
}

pub fn default_rig() -> LedRig {
    let markers = default_layout()
        .iter()
        .enumerate()
        .map(|(i, p)| LedSpec {
            id: LedId(i as u32),
            position: *p,
            frequency_hz: DEFAULT_FREQUENCIES_HZ[i],
            duty: DEFAULT_DUTIES[i],
        })
        .collect();
    LedRig::new(markers).expect("default rig is valid")
}

pub fn default_intrinsics() -> DsIntrinsics {
    let g = SensorGeometry::new(640, 480).expect("non-empty");
    DsIntrinsics::from_hfov(g, DEFAULT_HFOV_DEG, 0.0, 0.1).expect("valid defaults")
}

/// Camera at the world origin looking along world `+x`, image `x` towards
/// world `-y` and image `y` towards world `-z`.
pub fn default_t_cw() -> Isometry3<f64> {
    let r = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    Isometry3::from_parts(
        Translation3::identity(),
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r)),
    )
}

/// Body orientation in the world that shows the rig face-on to the camera:
/// body `+z` (the raised marker) points at the lens.
pub fn frontal_rotation(t_cw: &Isometry3<f64>) -> UnitQuaternion<f64> {
    let r_cb =
        Rotation3::from_matrix_unchecked(Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)));
    t_cw.rotation.inverse() * UnitQuaternion::from_rotation_matrix(&r_cb)
}

/// Body pose in the world that places the rig face-on on the optical axis
/// at `distance_m`.
pub fn frontal_pose(t_cw: &Isometry3<f64>, distance_m: f64) -> Isometry3<f64> {
    let center = t_cw.inverse() * Point3::new(0.0, 0.0, distance_m);
    Isometry3::from_parts(Translation3::from(center.coords), frontal_rotation(t_cw))
}

impl SimScene {
    /// Default rig and camera, static face-on at `distance_m`.
    pub fn static_default(distance_m: f64, duration_us: u64) -> Self {
        let t_cw = default_t_cw();
        Self {
            rig: default_rig(),
            intrinsics: default_intrinsics(),
            t_cw,
            trajectory: Trajectory::fixed(frontal_pose(&t_cw, distance_m)),
            noise: NoiseModel::default(),
            duration_us,
            occlusions: Vec::new(),
            phases_us: None,
            truth_period_us: 2500,
        }
    }

    /// Default rig and camera flying the default rectangle.
    pub fn rectangle_default(duration_us: u64) -> Self {
        let t_cw = default_t_cw();
        let trajectory = Trajectory::rectangle(
            &RectangleParams::default(),
            frontal_rotation(&t_cw),
            duration_us,
        )
        .expect("default rectangle is valid");
        Self {
            trajectory,
            ..Self::static_default(2.0, duration_us)
        }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.intrinsics.geometry()
    }

    /// Camera-from-body transform at `t_us`.
    pub fn t_cb(&self, t_us: f64) -> Isometry3<f64> {
        self.t_cw * self.trajectory.pose_at(t_us)
    }

    pub fn occluded(&self, id: LedId, t_us: f64) -> bool {
        self.occlusions
            .iter()
            .any(|o| o.led == id && t_us >= o.start_us as f64 && t_us < o.end_us as f64)
    }

    /// True marker pixel, `None` if hidden or outside the projection domain.
    pub fn marker_pixel(&self, m: &LedSpec, t_us: f64) -> Option<Point2<f64>> {
        if self.occluded(m.id, t_us) {
            return None;
        }
        let p = self.t_cb(t_us) * m.position;
        if p.z <= 0.0 {
            return None;
        }
        self.intrinsics.project(&p.coords).ok()
    }

    /// Hard checks plus warnings for markers leaving the image.
    pub fn validate(&self) -> Result<Vec<String>, SimError> {
        self.noise.validate()?;
        if self.duration_us == 0 {
            return Err(SimError::ZeroDuration);
        }
        let mut warnings = Vec::new();
        let mut t = 0;
        while t <= self.duration_us {
            let t_cb = self.t_cb(t as f64);
            for m in self.rig.markers() {
                let p = t_cb * m.position;
                if p.z <= 0.0 {
                    return Err(SimError::BehindCamera { id: m.id, t_us: t });
                }
                let inside = self
                    .intrinsics
                    .project(&p.coords)
                    .map(|px| self.intrinsics.in_image(px))
                    .unwrap_or(false);
                if !inside && warnings.len() < 10 {
                    warnings.push(format!(
                        "marker {} projects outside the image at t = {} us",
                        m.id, t
                    ));
                }
            }
            t += CHUNK_US;
        }
        Ok(warnings)
    }
}

/// One ground-truth line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub t_us: u64,
    pub position_m: [f64; 3],
    pub quaternion_wxyz: [f64; 4],
    pub marker_pixels: Vec<MarkerPixel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerPixel {
    pub id: LedId,
    pub px: Option<[f64; 2]>,
}

pub fn truth_at(scene: &SimScene, t_us: u64) -> TruthRecord {
    let pose = scene.trajectory.pose_at(t_us as f64);
    let q = pose.rotation.quaternion();
    let v = pose.translation.vector;
    TruthRecord {
        t_us,
        position_m: [v.x, v.y, v.z],
        quaternion_wxyz: [q.w, q.i, q.j, q.k],
        marker_pixels: scene
            .rig
            .markers()
            .iter()
            .map(|m| MarkerPixel {
                id: m.id,
                px: scene.marker_pixel(m, t_us as f64).map(|p| [p.x, p.y]),
            })
            .collect(),
    }
}

/// Truth at every multiple of the truth period up to the duration.
pub fn truth_records(scene: &SimScene) -> Vec<TruthRecord> {
    let step = scene.truth_period_us.max(1);
    (1..=scene.duration_us / step)
        .map(|k| truth_at(scene, k * step))
        .collect()
}

pub fn write_truth(scene: &SimScene, mut out: impl Write) -> Result<usize, SimError> {
    let records = truth_records(scene);
    for r in &records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(records.len())
}

struct LedState {
    spec: LedSpec,
    period_us: f64,
    phase_us: f64,
    next_pulse: u64,
}

/// Streaming simulator output; implements [`EventSource`].
pub struct SimSource {
    scene: SimScene,
    rng: ChaCha8Rng,
    leds: Vec<LedState>,
    chunk_start: u64,
    pending: Vec<Event>,
    ready: VecDeque<Event>,
    guard_us: u64,
    blob: Vec<(u16, u16, f64)>,
    produced: u64,
}

impl SimSource {
    pub fn new(scene: SimScene, seed: u64) -> Result<Self, SimError> {
        scene.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let leds = scene
            .rig
            .markers()
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let period_us = m.period_us();
                let phase_us = match &scene.phases_us {
                    Some(p) => p.get(i).copied().unwrap_or(0.0),
                    None => rng.random::<f64>() * period_us,
                };
                LedState {
                    spec: m.clone(),
                    period_us,
                    phase_us,
                    next_pulse: 0,
                }
            })
            .collect();
        let guard_us = (4.0 * scene.noise.jitter_us).ceil() as u64 + 2;
        Ok(Self {
            scene,
            rng,
            leds,
            chunk_start: 0,
            pending: Vec::new(),
            ready: VecDeque::new(),
            guard_us,
            blob: Vec::new(),
            produced: 0,
        })
    }

    pub fn scene(&self) -> &SimScene {
        &self.scene
    }

    /// Per-LED phases actually used.
    pub fn phases_us(&self) -> Vec<f64> {
        self.leds.iter().map(|l| l.phase_us).collect()
    }

    pub fn produced(&self) -> u64 {
        self.produced
    }

    fn finished(&self) -> bool {
        self.chunk_start >= self.scene.duration_us
    }

    fn blob_pixels(&mut self, center: Point2<f64>) {
        self.blob.clear();
        let r = self.scene.noise.blob_radius_px;
        let g = self.scene.geometry();
        let x0 = (center.x - r).floor().max(0.0) as i64;
        let x1 = ((center.x + r).ceil() as i64).min(g.width as i64 - 1);
        let y0 = (center.y - r).floor().max(0.0) as i64;
        let y1 = ((center.y + r).ceil() as i64).min(g.height as i64 - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = (x as f64 - center.x).hypot(y as f64 - center.y);
                let p = self.scene.noise.detection_probability(d);
                if p > 0.0 {
                    self.blob.push((x as u16, y as u16, p));
                }
            }
        }
    }

    fn jittered(&mut self, t: f64) -> f64 {
        let s = self.scene.noise.jitter_us;
        if s == 0.0 {
            return t;
        }
        let j: f64 = self.rng.sample::<f64, _>(rand_distr::StandardNormal) * s;
        t + j.clamp(-4.0 * s, 4.0 * s)
    }

    fn push(&mut self, x: u16, y: u16, p: Polarity, t: f64) {
        let t = t.round();
        if t >= 0.0 && t < self.scene.duration_us as f64 {
            self.pending.push(Event::new(x, y, p, t as u64));
        }
    }

    fn push_with_double(&mut self, x: u16, y: u16, p: Polarity, t: f64) {
        self.push(x, y, p, t);
        let n = self.scene.noise;
        if n.double_prob > 0.0 && self.rng.random::<f64>() < n.double_prob {
            let lag = if n.double_lag_jitter_us > 0.0 {
                Normal::new(n.double_lag_us, n.double_lag_jitter_us)
                    .expect("finite")
                    .sample(&mut self.rng)
            } else {
                n.double_lag_us
            };
            self.push(x, y, p, t.round() + lag.round().max(1.0));
        }
    }

    fn pulse(&mut self, led: usize, t_on: f64) {
        let spec = self.leds[led].spec.clone();
        let t_off = t_on + spec.duty * self.leds[led].period_us;
        let Some(center) = self.scene.marker_pixel(&spec, t_on) else {
            return;
        };
        self.blob_pixels(center);
        let blob = std::mem::take(&mut self.blob);
        for &(x, y, p) in &blob {
            let on = self.rng.random::<f64>() < p;
            let off = self.rng.random::<f64>() < p;
            let ton = self.jittered(t_on).round();
            let mut toff = self.jittered(t_off).round();
            if on && off && toff <= ton {
                // Keep on before off at a pixel.
                toff = ton + 1.0;
            }
            if on {
                self.push_with_double(x, y, Polarity::On, ton);
            }
            if off {
                self.push_with_double(x, y, Polarity::Off, toff);
            }
        }
        self.blob = blob;
    }

    fn spurious(
        &mut self,
        x: u16,
        y: u16,
        t0: u64,
        t1: u64,
        rate: f64,
        polarity: SpuriousPolarity,
    ) {
        let lambda = rate * (t1 - t0) as f64 * 1e-6;
        if lambda <= 0.0 {
            return;
        }
        let n = Poisson::new(lambda)
            .expect("positive rate")
            .sample(&mut self.rng) as u64;
        for _ in 0..n {
            let t = self.rng.random_range(t0..t1);
            let p = match polarity {
                SpuriousPolarity::Positive => Polarity::On,
                SpuriousPolarity::Random if self.rng.random::<bool>() => Polarity::On,
                SpuriousPolarity::Random => Polarity::Off,
            };
            self.pending.push(Event::new(x, y, p, t));
        }
    }

    fn generate_chunk(&mut self) {
        let t0 = self.chunk_start;
        let t1 = (t0 + CHUNK_US).min(self.scene.duration_us);

        for i in 0..self.leds.len() {
            loop {
                let l = &self.leds[i];
                let t_on = l.phase_us + l.next_pulse as f64 * l.period_us;
                if t_on >= t1 as f64 {
                    break;
                }
                self.leds[i].next_pulse += 1;
                self.pulse(i, t_on);
            }
        }

        let noise = self.scene.noise;
        if noise.spurious_blob_rate > 0.0 {
            let mid = (t0 + t1) as f64 / 2.0;
            for i in 0..self.leds.len() {
                let spec = self.leds[i].spec.clone();
                let Some(center) = self.scene.marker_pixel(&spec, mid) else {
                    continue;
                };
                self.blob_pixels(center);
                let blob = std::mem::take(&mut self.blob);
                for &(x, y, _) in &blob {
                    self.spurious(
                        x,
                        y,
                        t0,
                        t1,
                        noise.spurious_blob_rate,
                        noise.spurious_blob_polarity,
                    );
                }
                self.blob = blob;
            }
        }
        if noise.spurious_background_rate > 0.0 {
            let g = self.scene.geometry();
            let lambda =
                noise.spurious_background_rate * g.pixel_count() as f64 * (t1 - t0) as f64 * 1e-6;
            let n = Poisson::new(lambda)
                .expect("positive rate")
                .sample(&mut self.rng) as u64;
            for _ in 0..n {
                let x = self.rng.random_range(0..g.width);
                let y = self.rng.random_range(0..g.height);
                let t = self.rng.random_range(t0..t1);
                let p = if self.rng.random::<bool>() {
                    Polarity::On
                } else {
                    Polarity::Off
                };
                self.pending.push(Event::new(x, y, p, t));
            }
        }

        self.chunk_start = t1;
        self.pending
            .sort_unstable_by_key(|e| (e.t, e.y, e.x, e.polarity as i8));
        let cut = if self.finished() {
            u64::MAX
        } else {
            t1.saturating_sub(self.guard_us)
        };
        let split = self.pending.partition_point(|e| e.t < cut);
        self.ready.extend(self.pending.drain(..split));
    }
}

impl EventSource for SimSource {
    fn geometry(&self) -> SensorGeometry {
        self.scene.geometry()
    }

    fn fill(&mut self, out: &mut Vec<Event>, max: usize) -> Result<usize, EventError> {
        while self.ready.is_empty() && !self.finished() {
            self.generate_chunk();
        }
        let n = max.min(self.ready.len());
        out.extend(self.ready.drain(..n));
        self.produced += n as u64;
        Ok(n)
    }

    fn end_time(&self) -> Option<u64> {
        Some(self.scene.duration_us)
    }
}

/// Whole recording in memory. Prefer [`SimSource`] for long scenes.
pub fn simulate(scene: &SimScene, seed: u64) -> Result<Vec<Event>, SimError> {
    let mut src = SimSource::new(scene.clone(), seed)?;
    let mut out = Vec::new();
    while src.fill(&mut out, 1 << 16)? > 0 {}
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimSummary {
    pub events: u64,
    pub truth_records: usize,
}

/// Streams the scene into an `EVT1` writer and the truth into `truth`.
pub fn simulate_to(
    scene: &SimScene,
    seed: u64,
    events: impl Write,
    truth: impl Write,
) -> Result<SimSummary, SimError> {
    let mut src = SimSource::new(scene.clone(), seed)?;
    let mut writer = EventWriter::new(events, scene.geometry())?;
    let mut buf = Vec::with_capacity(1 << 16);
    loop {
        buf.clear();
        if src.fill(&mut buf, 1 << 16)? == 0 {
            break;
        }
        for e in &buf {
            writer.write(e)?;
        }
    }
    let events = writer.count();
    writer.finish()?;
    let truth_records = write_truth(scene, truth)?;
    Ok(SimSummary {
        events,
        truth_records,
    })
}

/// Canned single-pixel recording of a 300 µs blinker at 10 % duty.
///
/// The LED switches on at `150 + 300k` and off 30 µs later, for five
/// periods. The first on-edge fires twice (150 and 165 µs) and a stray
/// on-event lands at 630 µs, between pulses. Returns a 1x1 sensor.
pub fn noisy_blink_fixture() -> (SensorGeometry, Vec<Event>) {
    let mut events = Vec::new();
    for k in 0..5u64 {
        let on = 150 + 300 * k;
        events.push(Event::new(0, 0, Polarity::On, on));
        if k == 0 {
            events.push(Event::new(0, 0, Polarity::On, 165));
        }
        if k == 1 {
            events.push(Event::new(0, 0, Polarity::Off, on + 30));
            events.push(Event::new(0, 0, Polarity::On, 630));
            continue;
        }
        events.push(Event::new(0, 0, Polarity::Off, on + 30));
    }
    (SensorGeometry::new(1, 1).expect("non-empty"), events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdtv::{pixel_periods, Sdtv, StackSource};

    #[test]
    fn blink_fixture_stack_and_periods() {
        let (g, events) = noisy_blink_fixture();
        assert!(events.windows(2).all(|w| w[0].t < w[1].t));
        let mut v = Sdtv::new(g, 16).unwrap();
        v.ingest_batch(&events).unwrap();
        let mut stack = Vec::new();
        v.ordered_stack(0, &mut stack);
        assert_eq!(
            stack,
            vec![15, -15, 270, -30, 150, 120, -30, 270, -30, 270, -30]
        );
        assert_eq!(pixel_periods(&stack), vec![300; 4]);
    }

    #[test]
    fn default_rig_matches_measured_values() {
        let rig = default_rig();
        let f: Vec<f64> = rig.markers().iter().map(|m| m.frequency_hz).collect();
        assert_eq!(f, DEFAULT_FREQUENCIES_HZ.to_vec());
        assert!(rig.f_max() / rig.f_min() <= 2.0);
        assert!(rig.markers().iter().all(|m| m.duty <= 0.02));
    }

    #[test]
    fn static_scene_centers_rig() {
        let scene = SimScene::static_default(2.0, 10_000);
        let t_cb = scene.t_cb(0.0);
        assert!((t_cb.translation.vector - Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        let raised = t_cb * Point3::new(0.0, 0.0, 0.015);
        assert!((raised.z - 1.985).abs() < 1e-12);
        let px = scene.marker_pixel(&scene.rig.markers()[4], 0.0).unwrap();
        assert!((px - Point2::new(319.5, 239.5)).norm() < 1e-9);
    }

    #[test]
    fn output_is_sorted_in_bounds_and_deterministic() {
        let scene = SimScene::static_default(1.0, 30_000);
        let a = simulate(&scene, 7).unwrap();
        let b = simulate(&scene, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0].t <= w[1].t));
        let g = scene.geometry();
        assert!(a.iter().all(|e| g.contains(e.x, e.y) && e.t < 30_000));
        assert_ne!(a, simulate(&scene, 8).unwrap());
    }

    #[test]
    fn behind_camera_is_an_error() {
        let mut scene = SimScene::static_default(1.0, 10_000);
        scene.trajectory = Trajectory::fixed(frontal_pose(&scene.t_cw, -1.0));
        assert!(matches!(
            SimSource::new(scene, 0),
            Err(SimError::BehindCamera { .. })
        ));
    }
}
