//! Body trajectories in the world frame, sampled at 1 kHz and interpolated.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3};
use thiserror::Error;

pub const SAMPLE_PERIOD_US: u64 = 1000;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("trajectory needs at least one sample")]
    Empty,
    #[error("sample {0}: timestamps must be strictly increasing")]
    NotMonotonic(usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid trajectory parameter: {0}")]
    Invalid(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryKind {
    Static,
    Rectangle,
    Csv,
}

/// Rounded-rectangle loop in the world x-y plane at constant speed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RectangleParams {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub height: f64,
    pub corner_radius: f64,
    pub speed: f64,
}

impl Default for RectangleParams {
    fn default() -> Self {
        Self {
            x_min: 2.0,
            x_max: 3.0,
            y_min: -0.1,
            y_max: 0.1,
            height: 0.0,
            corner_radius: 0.05,
            speed: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    samples: Vec<(u64, Isometry3<f64>)>,
}

impl Trajectory {
    pub fn from_samples(
        kind: TrajectoryKind,
        samples: Vec<(u64, Isometry3<f64>)>,
    ) -> Result<Self, TrajectoryError> {
        if samples.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        for i in 1..samples.len() {
            if samples[i].0 <= samples[i - 1].0 {
                return Err(TrajectoryError::NotMonotonic(i));
            }
        }
        Ok(Self { kind, samples })
    }

    pub fn fixed(pose: Isometry3<f64>) -> Self {
        Self {
            kind: TrajectoryKind::Static,
            samples: vec![(0, pose)],
        }
    }

    /// Rounded rectangle starting at the beginning of the `y = y_max` edge
    /// and heading towards `+x`, with constant body orientation `rotation`.
    pub fn rectangle(
        params: &RectangleParams,
        rotation: UnitQuaternion<f64>,
        duration_us: u64,
    ) -> Result<Self, TrajectoryError> {
        let p = params;
        let r = p.corner_radius;
        let (w, h) = (p.x_max - p.x_min - 2.0 * r, p.y_max - p.y_min - 2.0 * r);
        if !(p.speed > 0.0) || r < 0.0 || w < 0.0 || h < 0.0 {
            return Err(TrajectoryError::Invalid(
                "rectangle needs positive speed and room for its corners",
            ));
        }
        let arc = PI * r / 2.0;
        let perimeter = 2.0 * (w + h) + 4.0 * arc;
        // Straight edges (start, direction, length) in loop order, each
        // followed by a quarter arc turning clockwise seen from +z.
        let edges = [
            (
                Vector3::new(p.x_min + r, p.y_max, p.height),
                Vector3::new(1.0, 0.0, 0.0),
                w,
            ),
            (
                Vector3::new(p.x_max, p.y_max - r, p.height),
                Vector3::new(0.0, -1.0, 0.0),
                h,
            ),
            (
                Vector3::new(p.x_max - r, p.y_min, p.height),
                Vector3::new(-1.0, 0.0, 0.0),
                w,
            ),
            (
                Vector3::new(p.x_min, p.y_min + r, p.height),
                Vector3::new(0.0, 1.0, 0.0),
                h,
            ),
        ];
        let at = |s: f64| -> Vector3<f64> {
            let mut s = s.rem_euclid(perimeter);
            for (start, dir, len) in edges {
                if s <= len {
                    return start + dir * s;
                }
                s -= len;
                if s <= arc {
                    let end = start + dir * len;
                    // Inward normal for a clockwise loop.
                    let inward = Vector3::new(-dir.y, dir.x, 0.0) * -1.0;
                    let center = end + inward * r;
                    let phi = s / r;
                    return center - inward * r * phi.cos() + dir * r * phi.sin();
                }
                s -= arc;
            }
            edges[0].0
        };
        let n = duration_us / SAMPLE_PERIOD_US + 2;
        let samples = (0..n)
            .map(|k| {
                let t = k * SAMPLE_PERIOD_US;
                let pos = at(p.speed * t as f64 * 1e-6);
                (t, Isometry3::from_parts(Translation3::from(pos), rotation))
            })
            .collect();
        Self::from_samples(TrajectoryKind::Rectangle, samples)
    }

    pub fn samples(&self) -> &[(u64, Isometry3<f64>)] {
        &self.samples
    }

    /// Body pose in the world at `t_us`; held constant outside the samples.
    pub fn pose_at(&self, t_us: f64) -> Isometry3<f64> {
        let s = &self.samples;
        if s.len() == 1 || t_us <= s[0].0 as f64 {
            return s[0].1;
        }
        let last = s.len() - 1;
        if t_us >= s[last].0 as f64 {
            return s[last].1;
        }
        let i = s.partition_point(|(t, _)| (*t as f64) <= t_us) - 1;
        let (t0, a) = s[i];
        let (t1, b) = s[i + 1];
        let f = (t_us - t0 as f64) / (t1 - t0) as f64;
        let pos = a.translation.vector.lerp(&b.translation.vector, f);
        let rot = a
            .rotation
            .try_slerp(&b.rotation, f, 1e-12)
            .unwrap_or(a.rotation);
        Isometry3::from_parts(Translation3::from(pos), rot)
    }

    /// `t_us,x,y,z,qw,qx,qy,qz` with a header line.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "t_us,x,y,z,qw,qx,qy,qz")?;
        for (t, p) in &self.samples {
            let v = p.translation.vector;
            let q = p.rotation.quaternion();
            writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                t, v.x, v.y, v.z, q.w, q.i, q.j, q.k
            )?;
        }
        Ok(())
    }

    pub fn read_csv(input: impl BufRead) -> Result<Self, TrajectoryError> {
        let mut samples = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("t_us")) {
                continue;
            }
            let parse_err = |msg: String| TrajectoryError::Parse { line: i + 1, msg };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 8 {
                return Err(parse_err(format!(
                    "expected 8 fields, found {}",
                    fields.len()
                )));
            }
            let t: u64 = fields[0]
                .parse()
                .map_err(|e| parse_err(format!("t_us: {e}")))?;
            let mut v = [0.0; 7];
            for (k, f) in fields[1..].iter().enumerate() {
                v[k] = f
                    .parse()
                    .map_err(|e| parse_err(format!("field {}: {e}", k + 2)))?;
            }
            let q = Quaternion::new(v[3], v[4], v[5], v[6]);
            if !(q.norm() > 0.0) {
                return Err(parse_err("zero quaternion".into()));
            }
            let pose = Isometry3::from_parts(
                Translation3::new(v[0], v[1], v[2]),
                UnitQuaternion::from_quaternion(q),
            );
            samples.push((t, pose));
        }
        Self::from_samples(TrajectoryKind::Csv, samples)
    }
}
