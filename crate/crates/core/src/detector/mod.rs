//! LED detection: rate filter, period statistics, clustering, frequency
//! association and per-LED tracking.

mod associate;
mod cluster;
mod filter;
mod rig;
mod tracker;

use std::collections::BTreeMap;
use std::io::{self, Write};

use nalgebra::Point2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use associate::{associate_clusters, Association};
pub use cluster::{cluster_candidates, Cluster, SizeBounds};
pub use filter::{candidate_pixels, period_stats, rate_threshold, stats_of, PeriodStats, StdBound};
pub use rig::{
    LedId, LedRig, LedSpec, RigError, RigWarning, MAX_DUTY, MAX_FREQUENCY_RATIO, MIN_MARKERS,
};
pub use tracker::{FilterConfig, LedTrack};

use crate::event::SensorGeometry;
use crate::sdtv::{CountFrame, StackSource};

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    pub beta: f64,
    pub std_bound: StdBound,
    pub link_tol_us: f64,
    pub size_bounds: SizeBounds,
    pub match_tol_us: f64,
    pub filter: FilterConfig,
    /// Tracks without an observation for this long are dropped.
    pub stale_us: u64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            beta: 0.8,
            std_bound: StdBound::default(),
            link_tol_us: 25.0,
            size_bounds: SizeBounds::default(),
            match_tol_us: 25.0,
            filter: FilterConfig::default(),
            stale_us: 50_000,
            seed: 0,
        }
    }
}

/// Result of one detection step.
#[derive(Clone, Debug, Default)]
pub struct DetectionReport {
    pub t_us: u64,
    pub candidates: usize,
    pub clusters: Vec<Cluster>,
    pub association: Association,
    /// Filtered centroids of all live tracks.
    pub centroids: BTreeMap<LedId, Point2<f64>>,
    /// LEDs that received a fresh cluster this step.
    pub observed: Vec<LedId>,
    /// LEDs whose track was reinitialized this step.
    pub reinitialized: Vec<LedId>,
}

impl DetectionReport {
    /// At least four live markers are needed for a unique pose.
    pub fn pose_sufficient(&self) -> bool {
        self.centroids.len() >= MIN_MARKERS
    }
}

/// Stateful detector owning the per-LED tracks.
pub struct Detector {
    rig: LedRig,
    config: DetectorConfig,
    geometry: SensorGeometry,
    batch_us: u64,
    threshold: u32,
    tracks: BTreeMap<LedId, LedTrack>,
    rng: ChaCha8Rng,
}

impl Detector {
    pub fn new(
        rig: LedRig,
        config: DetectorConfig,
        geometry: SensorGeometry,
        batch_us: u64,
    ) -> Self {
        let threshold = rate_threshold(batch_us, rig.f_min(), config.beta);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self {
            rig,
            config,
            geometry,
            batch_us,
            threshold,
            tracks: BTreeMap::new(),
            rng,
        }
    }

    pub fn rig(&self) -> &LedRig {
        &self.rig
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    /// Minimum per-batch event count for a candidate pixel.
    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    pub fn tracks(&self) -> impl Iterator<Item = &LedTrack> {
        self.tracks.values()
    }

    /// Full chain on a live or snapshotted volume and the batch count frame.
    pub fn detect(
        &mut self,
        stacks: &impl StackSource,
        frame: &CountFrame,
        t_us: u64,
    ) -> DetectionReport {
        let candidates = candidate_pixels(frame, self.threshold);
        self.detect_candidates(stacks, &candidates, t_us)
    }

    /// Chain from an already rate-filtered candidate list.
    pub fn detect_candidates(
        &mut self,
        stacks: &impl StackSource,
        candidates: &[u32],
        t_us: u64,
    ) -> DetectionReport {
        let cfg = &self.config;
        let stats = period_stats(stacks, candidates, cfg.std_bound);
        let clusters = cluster_candidates(&stats, self.geometry, cfg.link_tol_us, cfg.size_bounds);
        let association = associate_clusters(&clusters, &self.rig, cfg.match_tol_us);

        let mut observed = Vec::new();
        let mut reinitialized = Vec::new();
        for m in self.rig.markers() {
            let obs = association
                .cluster_for(m.id)
                .map(|ci| clusters[ci].centroid);
            match (self.tracks.get_mut(&m.id), obs) {
                (Some(track), _) => {
                    track.update(obs, t_us, self.batch_us, &cfg.filter, &mut self.rng);
                    if track.reinitialized {
                        reinitialized.push(m.id);
                    }
                }
                (None, Some(z)) => {
                    let track = LedTrack::new(
                        m.id,
                        z,
                        t_us,
                        self.geometry.width,
                        self.geometry.height,
                        &cfg.filter,
                        &mut self.rng,
                    );
                    self.tracks.insert(m.id, track);
                }
                (None, None) => {}
            }
            if obs.is_some() {
                observed.push(m.id);
            }
        }
        let stale = cfg.stale_us;
        self.tracks
            .retain(|_, tr| t_us.saturating_sub(tr.last_observed_us) <= stale);

        DetectionReport {
            t_us,
            candidates: candidates.len(),
            centroids: self
                .tracks
                .iter()
                .map(|(id, tr)| (*id, tr.centroid))
                .collect(),
            clusters,
            association,
            observed,
            reinitialized,
        }
    }
}

/// Per-batch debug tables written next to the pose output.
pub struct DebugCsv<W: Write> {
    candidates: W,
    clusters: W,
    associations: W,
}

impl<W: Write> DebugCsv<W> {
    pub fn new(mut candidates: W, mut clusters: W, mut associations: W) -> io::Result<Self> {
        writeln!(candidates, "t_us,candidates,clusters")?;
        writeln!(clusters, "t_us,cluster,size,period_us,u,v,samples")?;
        writeln!(associations, "t_us,led,cluster,period_us,u,v")?;
        Ok(Self {
            candidates,
            clusters,
            associations,
        })
    }

    pub fn record(&mut self, r: &DetectionReport) -> io::Result<()> {
        writeln!(
            self.candidates,
            "{},{},{}",
            r.t_us,
            r.candidates,
            r.clusters.len()
        )?;
        for (i, c) in r.clusters.iter().enumerate() {
            writeln!(
                self.clusters,
                "{},{},{},{:.3},{:.4},{:.4},{}",
                r.t_us,
                i,
                c.members.len(),
                c.period_us,
                c.centroid.x,
                c.centroid.y,
                c.samples
            )?;
        }
        for &(id, ci) in &r.association.matches {
            let c = &r.clusters[ci];
            writeln!(
                self.associations,
                "{},{},{},{:.3},{:.4},{:.4}",
                r.t_us, id.0, ci, c.period_us, c.centroid.x, c.centroid.y
            )?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.candidates.flush()?;
        self.clusters.flush()?;
        self.associations.flush()
    }
}
