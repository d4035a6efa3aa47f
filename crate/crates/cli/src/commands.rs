use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ledmocap::detector::{DebugCsv, DetectionReport};
use ledmocap::event::EventReader;
use ledmocap::pipeline::{
    run, run_reference, CsvSink, JsonlSink, MemorySink, PipelineStats, PoseRecord, PoseSink,
    RunMode,
};
use ledmocap::pose::SolverKind;
use ledmocap::sim::{simulate_to, SimSource, SimSummary, TruthRecord};
use log::{info, warn};
use nalgebra::{Point3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::{Resolved, TrajectorySection};
use crate::metrics::{axis_sigma, loglog_slope, orientation_sigma, quat_wxyz};

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn output(path: &Path) -> Result<Box<dyn Write + Send>> {
    if path.as_os_str() == "-" {
        Ok(Box::new(io::stdout()))
    } else {
        Ok(Box::new(create(path)?))
    }
}

pub fn simulate(
    resolved: &Resolved,
    out: &Path,
    truth: Option<&Path>,
    seed: u64,
    duration_s: Option<f64>,
) -> Result<SimSummary> {
    let scene = resolved.scene(duration_s)?;
    for w in scene.validate()? {
        warn!("{w}");
    }
    let events = create(out)?;
    let summary = match truth {
        Some(p) => simulate_to(&scene, seed, events, create(p)?)?,
        None => simulate_to(&scene, seed, events, io::sink())?,
    };
    info!(
        "simulated {} us, {} events, {} truth records",
        scene.duration_us, summary.events, summary.truth_records
    );
    Ok(summary)
}

#[derive(Clone, Debug, Default)]
pub struct TrackOptions {
    pub solver: Option<SolverKind>,
    pub rate_hz: Option<f64>,
    pub seed: Option<u64>,
    /// Replay at recording speed with drop-oldest backpressure.
    pub realtime: bool,
    /// Directory for per-batch candidate, cluster and association tables.
    pub debug_dir: Option<PathBuf>,
}

/// Forwards poses to the output and detections to the debug tables.
struct TrackSink {
    poses: Box<dyn PoseSink>,
    debug: Option<DebugCsv<BufWriter<File>>>,
}

impl PoseSink for TrackSink {
    fn pose(&mut self, record: &PoseRecord) -> io::Result<()> {
        self.poses.pose(record)
    }

    fn detection(&mut self, report: &DetectionReport) -> io::Result<()> {
        match &mut self.debug {
            Some(d) => d.record(report),
            None => Ok(()),
        }
    }

    fn finish(&mut self) -> io::Result<()> {
        if let Some(d) = &mut self.debug {
            d.flush()?;
        }
        self.poses.finish()
    }
}

pub fn track(
    resolved: &Resolved,
    input: &Path,
    out: &Path,
    opts: &TrackOptions,
) -> Result<PipelineStats> {
    let mut cfg = resolved.pipeline();
    if let Some(s) = opts.solver {
        cfg.solver = s;
    }
    if let Some(rate) = opts.rate_hz {
        ensure!(rate > 0.0 && rate.is_finite(), "--rate-hz must be positive");
        cfg.batch_us = (1e6 / rate).round().max(1.0) as u64;
        cfg.window_us = cfg.window_us.max(cfg.batch_us);
    }
    if let Some(seed) = opts.seed {
        cfg.detector.seed = seed;
    }
    if opts.realtime {
        cfg.mode = RunMode::Live;
        cfg.pace_realtime = true;
    }
    let source = EventReader::open(input)
        .with_context(|| format!("cannot read events from {}", input.display()))?;
    let poses: Box<dyn PoseSink> = if out.extension().is_some_and(|e| e == "csv") {
        Box::new(CsvSink::new(output(out)?))
    } else {
        Box::new(JsonlSink::new(output(out)?))
    };
    let debug = match &opts.debug_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("cannot create {}", dir.display()))?;
            Some(DebugCsv::new(
                create(&dir.join("candidates.csv"))?,
                create(&dir.join("clusters.csv"))?,
                create(&dir.join("associations.csv"))?,
            )?)
        }
        None => None,
    };
    let mut sink = TrackSink { poses, debug };
    let stats = run(source, &cfg, &mut sink)?;
    if let Some(e) = &stats.failure {
        bail!("pipeline stopped: {e}");
    }
    Ok(stats)
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub distances_m: Vec<f64>,
    pub repeats: usize,
    /// Length of each simulated repeat.
    pub duration_s: f64,
    /// Poses before this time are discarded while the trackers settle.
    pub warmup_s: f64,
    pub seed: u64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            distances_m: vec![0.7, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0],
            repeats: 20,
            duration_s: 0.5,
            warmup_s: 0.1,
            seed: 0,
        }
    }
}

/// Position spread in the camera frame (`z` along the optical axis) and
/// orientation spread, pooled over repeats.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub distance: f64,
    pub solver: SolverKind,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_z: f64,
    pub sigma_rot: f64,
    pub samples: usize,
    /// Fraction of post-warmup batches that produced a pose.
    pub availability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlopeRow {
    pub solver: SolverKind,
    pub metric: &'static str,
    pub slope: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub slopes: Vec<SlopeRow>,
}

impl SweepReport {
    pub fn row(&self, distance: f64, solver: SolverKind) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.solver == solver && (r.distance - distance).abs() < 1e-9)
    }

    pub fn slope(&self, solver: SolverKind, metric: &str) -> Option<f64> {
        self.slopes
            .iter()
            .find(|s| s.solver == solver && s.metric == metric)
            .and_then(|s| s.slope)
    }

    pub fn write_csv(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(
            out,
            "distance,solver,sigma_x,sigma_y,sigma_z,sigma_rot,samples,availability"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:e},{:e},{:e},{:e},{},{:.4}",
                r.distance,
                r.solver.name(),
                r.sigma_x,
                r.sigma_y,
                r.sigma_z,
                r.sigma_rot,
                r.samples,
                r.availability
            )?;
        }
        out.flush()
    }

    pub fn write_slopes_csv(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "solver,metric,slope")?;
        for s in &self.slopes {
            let v = s.slope.map(|v| format!("{v:.4}")).unwrap_or_default();
            writeln!(out, "{},{},{v}", s.solver.name(), s.metric)?;
        }
        out.flush()
    }
}

/// Static-scene precision of both solvers across distances.
///
/// Each repeat simulates the configured scene with the rig face-on at the
/// given distance and a fresh seed, tracks it once per solver on identical
/// events, and measures the spread of the poses after the warmup. Spreads
/// are pooled over repeats as the root mean within-repeat variance.
pub fn noise_sweep(resolved: &Resolved, opts: &SweepOptions) -> Result<SweepReport> {
    ensure!(opts.repeats > 0, "need at least one repeat");
    ensure!(
        opts.duration_s > opts.warmup_s,
        "repeat duration must exceed the warmup"
    );
    ensure!(!opts.distances_m.is_empty(), "no distances given");
    let solvers = [SolverKind::Sqpnp, SolverKind::Epnp];
    let warmup_us = (opts.warmup_s * 1e6) as u64;
    let mut report = SweepReport::default();
    for (di, &d) in opts.distances_m.iter().enumerate() {
        ensure!(d > 0.0, "distances must be positive");
        let mut with_distance = resolved.clone();
        with_distance.config.simulator.trajectory = TrajectorySection::Static { distance_m: d };
        let scene = with_distance.scene(Some(opts.duration_s))?;
        for solver in solvers {
            let (mut var, mut rot_ss) = (Vector3::zeros(), 0.0);
            let (mut samples, mut batches) = (0, 0);
            for k in 0..opts.repeats {
                let seed = opts.seed.wrapping_add((di as u64) << 32 | k as u64);
                let mut cfg = with_distance.pipeline();
                cfg.solver = solver;
                cfg.detector.seed = seed;
                let mut sink = MemorySink::default();
                let stats = run_reference(SimSource::new(scene.clone(), seed)?, &cfg, &mut sink)?;
                if let Some(e) = stats.failure {
                    bail!("repeat {k} at {d} m: {e}");
                }
                batches += stats.processed.saturating_sub(warmup_us / cfg.batch_us) as usize;
                let kept: Vec<&PoseRecord> =
                    sink.poses.iter().filter(|p| p.t_us > warmup_us).collect();
                let pos: Vec<Vector3<f64>> = kept
                    .iter()
                    .map(|p| (cfg.t_cw * Point3::from(p.position_m)).coords)
                    .collect();
                let rot: Vec<UnitQuaternion<f64>> =
                    kept.iter().map(|p| quat_wxyz(p.quaternion_wxyz)).collect();
                if let (Some(s), Some(r)) = (axis_sigma(&pos), orientation_sigma(&rot)) {
                    var += s.component_mul(&s);
                    rot_ss += r * r;
                }
                samples += kept.len();
            }
            let n = opts.repeats as f64;
            let sigma = (var / n).map(f64::sqrt);
            report.rows.push(SweepRow {
                distance: d,
                solver,
                sigma_x: sigma.x,
                sigma_y: sigma.y,
                sigma_z: sigma.z,
                sigma_rot: (rot_ss / n).sqrt(),
                samples,
                availability: if batches > 0 {
                    samples as f64 / batches as f64
                } else {
                    0.0
                },
            });
            info!(
                "{d} m {}: sigma {:.3e} {:.3e} {:.3e} m, {:.3e} rad",
                solver.name(),
                sigma.x,
                sigma.y,
                sigma.z,
                (rot_ss / n).sqrt()
            );
        }
    }
    type Metric = (&'static str, fn(&SweepRow) -> f64);
    for solver in solvers {
        let rows: Vec<&SweepRow> = report.rows.iter().filter(|r| r.solver == solver).collect();
        let x: Vec<f64> = rows.iter().map(|r| r.distance).collect();
        let metrics: [Metric; 4] = [
            ("sigma_x", |r| r.sigma_x),
            ("sigma_y", |r| r.sigma_y),
            ("sigma_z", |r| r.sigma_z),
            ("sigma_rot", |r| r.sigma_rot),
        ];
        for (metric, f) in metrics {
            let y: Vec<f64> = rows.iter().map(|r| f(r)).collect();
            report.slopes.push(SlopeRow {
                solver,
                metric,
                slope: loglog_slope(&x, &y),
            });
        }
    }
    Ok(report)
}

/// The subset of a pose record needed for comparison.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct PoseLine {
    pub t_us: u64,
    pub position_m: [f64; 3],
    pub quaternion_wxyz: [f64; 4],
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

/// Pose records from JSON lines, or from CSV with the pipeline's columns.
pub fn read_poses(path: &Path) -> Result<Vec<PoseLine>> {
    if !path.extension().is_some_and(|e| e == "csv") {
        return read_jsonl(path);
    }
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        ensure!(
            cols.len() >= 9,
            "{}:{}: expected at least 9 columns",
            path.display(),
            i + 1
        );
        let num = |j: usize| -> Result<f64> {
            cols[j]
                .parse()
                .with_context(|| format!("{}:{}: column {}", path.display(), i + 1, j + 1))
        };
        out.push(PoseLine {
            t_us: cols[0]
                .parse()
                .with_context(|| format!("{}:{}: t_us", path.display(), i + 1))?,
            position_m: [num(2)?, num(3)?, num(4)?],
            quaternion_wxyz: [num(5)?, num(6)?, num(7)?, num(8)?],
        });
    }
    Ok(out)
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRecord>> {
    read_jsonl(path)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareReport {
    pub truth_records: usize,
    pub poses: usize,
    pub matched: usize,
    /// Matched truth records over all truth records.
    pub availability: f64,
    pub tolerance_us: u64,
    pub position_rmse_m: Option<f64>,
    pub position_max_m: Option<f64>,
    pub orientation_rmse_rad: Option<f64>,
    pub orientation_max_rad: Option<f64>,
}

/// Pairs each truth record with the pose nearest in time, if it lies within
/// `tolerance_us`, and summarizes the errors.
pub fn compare(
    poses: &[PoseLine],
    truth: &[TruthRecord],
    tolerance_us: u64,
) -> Result<CompareReport> {
    ensure!(
        !truth.is_empty(),
        "truth is empty; nothing to compare against"
    );
    let mut sorted: Vec<&PoseLine> = poses.iter().collect();
    sorted.sort_by_key(|p| p.t_us);
    let (mut pos_ss, mut rot_ss, mut pos_max, mut rot_max, mut matched) =
        (0.0, 0.0, 0.0f64, 0.0f64, 0);
    for t in truth {
        let i = sorted.partition_point(|p| p.t_us < t.t_us);
        let nearest = [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|j| sorted.get(j))
            .min_by_key(|p| p.t_us.abs_diff(t.t_us));
        let Some(p) = nearest.filter(|p| p.t_us.abs_diff(t.t_us) <= tolerance_us) else {
            continue;
        };
        let e = (Vector3::from(p.position_m) - Vector3::from(t.position_m)).norm();
        let a = quat_wxyz(p.quaternion_wxyz).angle_to(&quat_wxyz(t.quaternion_wxyz));
        pos_ss += e * e;
        rot_ss += a * a;
        pos_max = pos_max.max(e);
        rot_max = rot_max.max(a);
        matched += 1;
    }
    let some = |v: f64| (matched > 0).then_some(v);
    Ok(CompareReport {
        truth_records: truth.len(),
        poses: poses.len(),
        matched,
        availability: matched as f64 / truth.len() as f64,
        tolerance_us,
        position_rmse_m: some((pos_ss / matched.max(1) as f64).sqrt()),
        position_max_m: some(pos_max),
        orientation_rmse_rad: some((rot_ss / matched.max(1) as f64).sqrt()),
        orientation_max_rad: some(rot_max),
    })
}
