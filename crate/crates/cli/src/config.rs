//! Application configuration: one TOML file with `camera`, `rig`,
//! `pipeline` and `simulator` sections and a `schema_version` key.
//!
//! Every section is optional and falls back to the built-in defaults, so an
//! empty file containing only `schema_version = 1` describes the default
//! setup. Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use ledmocap::camera::DsIntrinsics;
use ledmocap::detector::{
    DetectorConfig, FilterConfig, LedId, LedRig, LedSpec, RigError, RigWarning, SizeBounds,
    StdBound,
};
use ledmocap::event::SensorGeometry;
use ledmocap::pipeline::PipelineConfig;
use ledmocap::pose::SolverKind;
use ledmocap::sim::{
    default_intrinsics, default_rig, default_t_cw, frontal_pose, frontal_rotation, NoiseModel,
    Occlusion, RectangleParams, SimScene, Trajectory,
};
use nalgebra::{Isometry3, Point3, Quaternion, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// LEDs faster than this are hard for the sensor to resolve.
pub const MAX_RELIABLE_FREQUENCY_HZ: f64 = 3000.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub camera: CameraSection,
    #[serde(default)]
    pub rig: RigSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub simulator: SimulatorSection,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            camera: CameraSection::default(),
            rig: RigSection::default(),
            pipeline: PipelineSection::default(),
            simulator: SimulatorSection::default(),
        }
    }
}

/// Rigid transform as translation plus unit quaternion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSection {
    pub translation_m: [f64; 3],
    pub quaternion_wxyz: [f64; 4],
}

impl PoseSection {
    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let v = iso.translation.vector;
        let q = iso.rotation.quaternion();
        Self {
            translation_m: [v.x, v.y, v.z],
            quaternion_wxyz: [q.w, q.i, q.j, q.k],
        }
    }

    pub fn to_isometry(&self) -> Option<Isometry3<f64>> {
        let [w, x, y, z] = self.quaternion_wxyz;
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !(n.is_finite() && n > 0.0) || !self.translation_m.iter().all(|v| v.is_finite()) {
            return None;
        }
        let [tx, ty, tz] = self.translation_m;
        Some(Isometry3::from_parts(
            Translation3::new(tx, ty, tz),
            UnitQuaternion::from_quaternion(q),
        ))
    }
}

/// Double-sphere intrinsics and the world-to-camera transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSection {
    pub width: u16,
    pub height: u16,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub xi: f64,
    pub alpha: f64,
    pub t_cw: PoseSection,
}

impl Default for CameraSection {
    fn default() -> Self {
        let k = default_intrinsics();
        Self {
            width: k.width,
            height: k.height,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            xi: k.xi,
            alpha: k.alpha_ds,
            t_cw: PoseSection::from_isometry(&default_t_cw()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerSection {
    pub id: u32,
    pub position_m: [f64; 3],
    pub frequency_hz: f64,
    pub duty: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigSection {
    pub markers: Vec<MarkerSection>,
}

impl Default for RigSection {
    fn default() -> Self {
        let markers = default_rig()
            .markers()
            .iter()
            .map(|m| MarkerSection {
                id: m.id.0,
                position_m: [m.position.x, m.position.y, m.position.z],
                frequency_hz: m.frequency_hz,
                duty: m.duty,
            })
            .collect();
        Self { markers }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub particles: usize,
    pub q_pos: f64,
    pub q_vel: f64,
    pub sigma_meas: f64,
    pub gate_sigma: f64,
}

impl Default for FilterSection {
    fn default() -> Self {
        let f = FilterConfig::default();
        Self {
            particles: f.particles,
            q_pos: f.q_pos,
            q_vel: f.q_vel,
            sigma_meas: f.sigma_meas,
            gate_sigma: f.gate_sigma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub batch_us: u64,
    /// Time span the volume depth is sized for.
    pub window_us: u64,
    pub solver: SolverKind,
    pub beta: f64,
    pub std_absolute_us: f64,
    pub std_relative: f64,
    pub min_periods: u32,
    pub link_tol_us: f64,
    pub match_tol_us: f64,
    pub cluster_min_px: usize,
    pub cluster_max_px: usize,
    pub stale_us: u64,
    /// Particle filter seed.
    pub seed: u64,
    pub filter: FilterSection,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let d = DetectorConfig::default();
        Self {
            batch_us: 2500,
            window_us: 2500,
            solver: SolverKind::Sqpnp,
            beta: d.beta,
            std_absolute_us: d.std_bound.absolute_us,
            std_relative: d.std_bound.relative,
            min_periods: d.std_bound.min_periods,
            link_tol_us: d.link_tol_us,
            match_tol_us: d.match_tol_us,
            cluster_min_px: d.size_bounds.min,
            cluster_max_px: d.size_bounds.max,
            stale_us: d.stale_us,
            seed: d.seed,
            filter: FilterSection::default(),
        }
    }
}

impl PipelineSection {
    pub fn detector(&self) -> DetectorConfig {
        let f = &self.filter;
        DetectorConfig {
            beta: self.beta,
            std_bound: StdBound {
                absolute_us: self.std_absolute_us,
                relative: self.std_relative,
                min_periods: self.min_periods,
            },
            link_tol_us: self.link_tol_us,
            size_bounds: SizeBounds {
                min: self.cluster_min_px,
                max: self.cluster_max_px,
            },
            match_tol_us: self.match_tol_us,
            filter: FilterConfig {
                particles: f.particles,
                q_pos: f.q_pos,
                q_vel: f.q_vel,
                sigma_meas: f.sigma_meas,
                gate_sigma: f.gate_sigma,
            },
            stale_us: self.stale_us,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TrajectorySection {
    /// Rig face-on to the camera on the optical axis.
    Static { distance_m: f64 },
    /// Rounded rectangle in the world x-y plane, rig face-on.
    Rectangle {
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
        height: f64,
        corner_radius: f64,
        speed: f64,
    },
    /// `t_us,x,y,z,qw,qx,qy,qz` samples, body in the world.
    Csv { path: PathBuf },
}

impl Default for TrajectorySection {
    fn default() -> Self {
        TrajectorySection::Static { distance_m: 1.0 }
    }
}

impl TrajectorySection {
    pub fn rectangle_default() -> Self {
        let p = RectangleParams::default();
        TrajectorySection::Rectangle {
            x_min: p.x_min,
            x_max: p.x_max,
            y_min: p.y_min,
            y_max: p.y_max,
            height: p.height,
            corner_radius: p.corner_radius,
            speed: p.speed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorSection {
    pub duration_s: f64,
    pub truth_period_us: u64,
    pub noise: NoiseModel,
    pub trajectory: TrajectorySection,
    pub occlusions: Vec<Occlusion>,
}

impl Default for SimulatorSection {
    fn default() -> Self {
        Self {
            duration_s: 10.0,
            truth_period_us: 2500,
            noise: NoiseModel::default(),
            trajectory: TrajectorySection::default(),
            occlusions: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Pass,
    Warning,
    Error,
}

/// Outcome of one validation rule.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Finding {
    pub rule: &'static str,
    pub level: Level,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.level {
            Level::Pass => "pass",
            Level::Warning => "warning",
            Level::Error => "error",
        };
        write!(f, "[{level}] {}: {}", self.rule, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config is not valid TOML for this schema: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config rejected:\n{}", .0.iter().map(|f| format!("  {f}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Finding>),
}

/// A validated configuration turned into library types.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: AppConfig,
    pub rig: LedRig,
    pub intrinsics: DsIntrinsics,
    pub t_cw: Isometry3<f64>,
    pub warnings: Vec<Finding>,
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.into(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn markers(&self) -> Vec<LedSpec> {
        self.rig
            .markers
            .iter()
            .map(|m| LedSpec {
                id: LedId(m.id),
                position: Point3::from(m.position_m),
                frequency_hz: m.frequency_hz,
                duty: m.duty,
            })
            .collect()
    }

    fn intrinsics(&self) -> Result<DsIntrinsics, String> {
        let c = &self.camera;
        let g = SensorGeometry::new(c.width, c.height).map_err(|e| e.to_string())?;
        DsIntrinsics::new(g, c.fx, c.fy, c.cx, c.cy, c.xi, c.alpha).map_err(|e| e.to_string())
    }

    /// Runs every validation rule. Each rule reports exactly once, as a
    /// pass, a warning or an error.
    pub fn check(&self) -> Vec<Finding> {
        let mut out = Vec::new();
        let mut push = |rule, level, message: String| {
            out.push(Finding {
                rule,
                level,
                message,
            })
        };

        if self.schema_version == SCHEMA_VERSION {
            push(
                "schema-version",
                Level::Pass,
                format!("version {SCHEMA_VERSION}"),
            );
        } else {
            push(
                "schema-version",
                Level::Error,
                format!(
                    "schema_version is {}, this build reads version {SCHEMA_VERSION}",
                    self.schema_version
                ),
            );
        }

        match self.intrinsics() {
            Ok(_) => push("camera", Level::Pass, "intrinsics valid".into()),
            Err(e) => push("camera", Level::Error, e),
        }
        match self.camera.t_cw.to_isometry() {
            Some(_) => push("camera-pose", Level::Pass, "t_cw valid".into()),
            None => push(
                "camera-pose",
                Level::Error,
                "t_cw needs finite values and a non-zero quaternion".into(),
            ),
        }

        let markers = self.markers();
        let rig = LedRig::new(markers.clone());
        let count = markers.len();
        let ratio_msg = |markers: &[LedSpec]| {
            let f: Vec<f64> = markers.iter().map(|m| m.frequency_hz).collect();
            let (lo, hi) = f.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
            format!(
                "frequencies {lo:.0}..{hi:.0} Hz span a factor of {:.3}",
                hi / lo
            )
        };
        match &rig {
            Err(RigError::TooFewMarkers(n)) => push(
                "marker-count",
                Level::Error,
                format!(
                    "{n} markers configured; at least four are needed for a unique PnP solution"
                ),
            ),
            _ => push("marker-count", Level::Pass, format!("{count} markers")),
        }
        match &rig {
            Err(
                e @ (RigError::BadFrequency(_) | RigError::BadDuty(_) | RigError::DuplicateId(_)),
            ) => push("marker-definition", Level::Error, e.to_string()),
            _ => push(
                "marker-definition",
                Level::Pass,
                "ids unique, frequencies and duties in range".into(),
            ),
        }
        match &rig {
            Err(e @ RigError::Aliasing { .. }) => push("aliasing", Level::Error, e.to_string()),
            Ok(_) => push(
                "aliasing",
                Level::Pass,
                format!("{}, within a factor of two", ratio_msg(&markers)),
            ),
            Err(_) => push(
                "aliasing",
                Level::Pass,
                "not checked, rig already invalid".into(),
            ),
        }

        let p = &self.pipeline;
        if p.batch_us == 0 || p.window_us < p.batch_us {
            push(
                "pipeline",
                Level::Error,
                "batch_us must be positive and window_us at least batch_us".into(),
            );
        } else if !(p.beta > 0.0 && p.beta <= 1.0) {
            push("pipeline", Level::Error, "beta must lie in (0, 1]".into());
        } else if p.cluster_min_px == 0 || p.cluster_min_px > p.cluster_max_px {
            push(
                "pipeline",
                Level::Error,
                "cluster size bounds must satisfy 1 <= min <= max".into(),
            );
        } else if p.filter.particles == 0 {
            push(
                "pipeline",
                Level::Error,
                "the particle filter needs at least one particle".into(),
            );
        } else {
            push(
                "pipeline",
                Level::Pass,
                format!("{} us batches", p.batch_us),
            );
        }

        if let Ok(rig) = &rig {
            let half = rig.f_min() / 2.0;
            let rate = if p.batch_us > 0 {
                1e6 / p.batch_us as f64
            } else {
                f64::INFINITY
            };
            if rate > half {
                push(
                    "period-coverage",
                    Level::Warning,
                    format!(
                        "batch rate {rate:.0} Hz exceeds half the slowest LED frequency ({half:.0} Hz); \
                         batches may miss a full period and detection can degrade"
                    ),
                );
            } else {
                push(
                    "period-coverage",
                    Level::Pass,
                    format!("batch rate {rate:.0} Hz <= {half:.0} Hz"),
                );
            }
            if rig.f_max() > MAX_RELIABLE_FREQUENCY_HZ {
                push(
                    "frequency-ceiling",
                    Level::Warning,
                    format!(
                        "fastest LED blinks at {:.0} Hz; event sensors resolve blinking reliably only up to about {:.0} Hz",
                        rig.f_max(),
                        MAX_RELIABLE_FREQUENCY_HZ
                    ),
                );
            } else {
                push(
                    "frequency-ceiling",
                    Level::Pass,
                    format!("fastest LED {:.0} Hz", rig.f_max()),
                );
            }
            let warnings = rig.warnings(p.match_tol_us);
            let duty: Vec<String> = warnings
                .iter()
                .filter(|w| matches!(w, RigWarning::DutyAboveLimit { .. }))
                .map(|w| w.to_string())
                .collect();
            if duty.is_empty() {
                push(
                    "duty-limit",
                    Level::Pass,
                    "all duty cycles within 2 %".into(),
                );
            } else {
                push("duty-limit", Level::Warning, duty.join("; "));
            }
            let overlap: Vec<String> = warnings
                .iter()
                .filter(|w| matches!(w, RigWarning::PeriodsOverlap { .. }))
                .map(|w| w.to_string())
                .collect();
            if overlap.is_empty() {
                push(
                    "period-separation",
                    Level::Pass,
                    "association windows are disjoint".into(),
                );
            } else {
                push("period-separation", Level::Warning, overlap.join("; "));
            }
        }

        let s = &self.simulator;
        let sim = if !(s.duration_s > 0.0 && s.duration_s.is_finite()) {
            Err("duration_s must be positive".to_string())
        } else if s.truth_period_us == 0 {
            Err("truth_period_us must be positive".to_string())
        } else {
            s.noise.validate().map_err(|e| e.to_string())
        };
        match sim {
            Ok(()) => push(
                "simulator",
                Level::Pass,
                "noise model and timing valid".into(),
            ),
            Err(e) => push("simulator", Level::Error, e),
        }
        out
    }

    /// Validates and converts. Errors carry every failing rule.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let findings = self.check();
        let errors: Vec<Finding> = findings
            .iter()
            .filter(|f| f.level == Level::Error)
            .cloned()
            .collect();
        if !errors.is_empty() {
            return Err(ConfigError::Invalid(errors));
        }
        let rig = LedRig::new(self.markers()).expect("checked");
        let intrinsics = self.intrinsics().expect("checked");
        let t_cw = self.camera.t_cw.to_isometry().expect("checked");
        let warnings = findings
            .into_iter()
            .filter(|f| f.level == Level::Warning)
            .collect();
        Ok(Resolved {
            config: self.clone(),
            rig,
            intrinsics,
            t_cw,
            warnings,
        })
    }
}

impl Resolved {
    pub fn pipeline(&self) -> PipelineConfig {
        let p = &self.config.pipeline;
        let mut cfg = PipelineConfig::new(self.rig.clone(), self.intrinsics, self.t_cw);
        cfg.batch_us = p.batch_us;
        cfg.window_us = p.window_us;
        cfg.solver = p.solver;
        cfg.detector = p.detector();
        cfg
    }

    /// Scene from the simulator section; `duration_s` overrides the file.
    pub fn scene(&self, duration_s: Option<f64>) -> anyhow::Result<SimScene> {
        let s = &self.config.simulator;
        let duration_s = duration_s.unwrap_or(s.duration_s);
        anyhow::ensure!(
            duration_s > 0.0 && duration_s.is_finite(),
            "duration must be positive"
        );
        let duration_us = (duration_s * 1e6).round() as u64;
        let trajectory = match &s.trajectory {
            TrajectorySection::Static { distance_m } => {
                Trajectory::fixed(frontal_pose(&self.t_cw, *distance_m))
            }
            &TrajectorySection::Rectangle {
                x_min,
                x_max,
                y_min,
                y_max,
                height,
                corner_radius,
                speed,
            } => {
                let params = RectangleParams {
                    x_min,
                    x_max,
                    y_min,
                    y_max,
                    height,
                    corner_radius,
                    speed,
                };
                Trajectory::rectangle(&params, frontal_rotation(&self.t_cw), duration_us)?
            }
            TrajectorySection::Csv { path } => {
                let file = std::fs::File::open(path).map_err(|e| {
                    anyhow::anyhow!("cannot open trajectory {}: {e}", path.display())
                })?;
                Trajectory::read_csv(std::io::BufReader::new(file))?
            }
        };
        Ok(SimScene {
            rig: self.rig.clone(),
            intrinsics: self.intrinsics,
            t_cw: self.t_cw,
            trajectory,
            noise: s.noise,
            duration_us,
            occlusions: s.occlusions.clone(),
            phases_us: None,
            truth_period_us: s.truth_period_us,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn errors(cfg: &AppConfig) -> Vec<&'static str> {
        cfg.check()
            .into_iter()
            .filter(|f| f.level == Level::Error)
            .map(|f| f.rule)
            .collect()
    }

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = AppConfig::default();
        let back = AppConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert!(errors(&cfg).is_empty());
    }

    #[test]
    fn minimal_file_is_the_default() {
        assert_eq!(
            AppConfig::from_toml("schema_version = 1").unwrap(),
            AppConfig::default()
        );
    }

    #[test]
    fn every_rule_reports_once() {
        let rules: Vec<_> = AppConfig::default()
            .check()
            .into_iter()
            .map(|f| f.rule)
            .collect();
        let mut unique = rules.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(rules.len(), unique.len());
        for r in [
            "marker-count",
            "aliasing",
            "period-coverage",
            "frequency-ceiling",
            "duty-limit",
        ] {
            assert!(rules.contains(&r), "{r}");
        }
    }

    #[test]
    fn schema_and_unknown_keys() {
        assert!(AppConfig::from_toml("").is_err());
        assert!(AppConfig::from_toml("schema_version = 1\nfoo = 2").is_err());
        let cfg = AppConfig::from_toml("schema_version = 2").unwrap();
        assert_eq!(errors(&cfg), ["schema-version"]);
    }

    #[test]
    fn rule_violations() {
        let mut cfg = AppConfig::default();
        cfg.rig.markers.truncate(3);
        assert_eq!(errors(&cfg), ["marker-count"]);

        let mut cfg = AppConfig::default();
        cfg.rig.markers[0].frequency_hz = 1000.0;
        assert_eq!(errors(&cfg), ["aliasing"]);

        let mut cfg = AppConfig::default();
        cfg.rig.markers[1].duty = 0.05;
        let f = cfg.check();
        let duty = f.iter().find(|f| f.rule == "duty-limit").unwrap();
        assert_eq!(duty.level, Level::Warning);
        assert!(duty.message.contains("2 %"));

        let mut cfg = AppConfig::default();
        cfg.pipeline.batch_us = 1000;
        cfg.pipeline.window_us = 2500;
        let cov = cfg
            .check()
            .into_iter()
            .find(|f| f.rule == "period-coverage")
            .unwrap();
        assert_eq!(cov.level, Level::Warning);
        assert!(cfg.resolve().is_ok());
    }

    #[test]
    fn scene_follows_the_trajectory_section() {
        let mut cfg = AppConfig::default();
        cfg.simulator.trajectory = TrajectorySection::rectangle_default();
        let r = cfg.resolve().unwrap();
        let scene = r.scene(Some(1.0)).unwrap();
        assert_eq!(scene.duration_us, 1_000_000);
        assert_ne!(
            scene.trajectory.pose_at(0.0),
            scene.trajectory.pose_at(500_000.0)
        );
        assert_eq!(r.pipeline().batch_us, 2500);
    }
}
