use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Marker identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LedId(pub u32);

impl std::fmt::Display for LedId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "led{}", self.0)
    }
}

/// One blinking marker on the tracked body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedSpec {
    pub id: LedId,
    /// Position in the body frame, meters.
    pub position: Point3<f64>,
    pub frequency_hz: f64,
    /// On-time fraction of the period.
    pub duty: f64,
}

impl LedSpec {
    pub fn period_us(&self) -> f64 {
        1e6 / self.frequency_hz
    }
}

/// Largest duty cycle the pulsed LED drive tolerates.
pub const MAX_DUTY: f64 = 0.02;
/// Frequencies must lie within this ratio of each other to avoid aliasing.
pub const MAX_FREQUENCY_RATIO: f64 = 2.0;
pub const MIN_MARKERS: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum RigError {
    #[error(
        "rig has {0} markers; at least four 3D-2D correspondences are needed for a unique pose"
    )]
    TooFewMarkers(usize),
    #[error("marker {0} has non-positive blink frequency")]
    BadFrequency(LedId),
    #[error("marker {0} has duty cycle outside (0, 1)")]
    BadDuty(LedId),
    #[error("duplicate marker id {0}")]
    DuplicateId(LedId),
    #[error(
        "blink frequencies span a factor of {ratio:.3} (> 2); frequencies must lie within a factor of two to avoid aliasing"
    )]
    Aliasing { ratio: f64 },
}

/// Non-fatal rig findings.
#[derive(Clone, Debug, PartialEq)]
pub enum RigWarning {
    /// Duty above the LED's pulsed-current limit.
    DutyAboveLimit { id: LedId, duty: f64 },
    /// Two markers' periods are closer than twice the association tolerance,
    /// so their association windows overlap.
    PeriodsOverlap {
        a: LedId,
        b: LedId,
        separation_us: f64,
    },
}

impl std::fmt::Display for RigWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RigWarning::DutyAboveLimit { id, duty } => write!(
                f,
                "{id} duty cycle {:.2} % exceeds the 2 % pulsed-current limit of the LED",
                duty * 100.0
            ),
            RigWarning::PeriodsOverlap { a, b, separation_us } => write!(
                f,
                "{a} and {b} periods differ by only {separation_us:.1} us; association windows overlap and the nearest period wins"
            ),
        }
    }
}

/// The tracked object: markers with body-frame positions and blink codes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedRig {
    markers: Vec<LedSpec>,
}

impl LedRig {
    /// Builds a rig, enforcing the hard invariants (count, frequency
    /// validity, factor-of-two span, unique ids).
    pub fn new(markers: Vec<LedSpec>) -> Result<Self, RigError> {
        if markers.len() < MIN_MARKERS {
            return Err(RigError::TooFewMarkers(markers.len()));
        }
        for (i, m) in markers.iter().enumerate() {
            if !(m.frequency_hz.is_finite() && m.frequency_hz > 0.0) {
                return Err(RigError::BadFrequency(m.id));
            }
            if !(m.duty > 0.0 && m.duty < 1.0) {
                return Err(RigError::BadDuty(m.id));
            }
            if markers[..i].iter().any(|o| o.id == m.id) {
                return Err(RigError::DuplicateId(m.id));
            }
        }
        let rig = Self { markers };
        let ratio = rig.f_max() / rig.f_min();
        if ratio > MAX_FREQUENCY_RATIO {
            return Err(RigError::Aliasing { ratio });
        }
        Ok(rig)
    }

    pub fn markers(&self) -> &[LedSpec] {
        &self.markers
    }

    pub fn get(&self, id: LedId) -> Option<&LedSpec> {
        self.markers.iter().find(|m| m.id == id)
    }

    pub fn len(&self) -> usize {
        self.markers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markers.is_empty()
    }

    pub fn f_min(&self) -> f64 {
        self.markers
            .iter()
            .map(|m| m.frequency_hz)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn f_max(&self) -> f64 {
        self.markers
            .iter()
            .map(|m| m.frequency_hz)
            .fold(0.0, f64::max)
    }

    /// Soft findings given the association tolerance in period space.
    pub fn warnings(&self, match_tol_us: f64) -> Vec<RigWarning> {
        let mut out = Vec::new();
        for m in &self.markers {
            if m.duty > MAX_DUTY {
                out.push(RigWarning::DutyAboveLimit {
                    id: m.id,
                    duty: m.duty,
                });
            }
        }
        for (i, a) in self.markers.iter().enumerate() {
            for b in &self.markers[i + 1..] {
                let separation_us = (a.period_us() - b.period_us()).abs();
                if separation_us <= 2.0 * match_tol_us {
                    out.push(RigWarning::PeriodsOverlap {
                        a: a.id,
                        b: b.id,
                        separation_us,
                    });
                }
            }
        }
        out
    }
}
