use std::collections::BTreeMap;
use std::time::Duration;

use serde::Serialize;

use super::PipelineError;
use crate::detector::LedId;

/// Raw microsecond samples; quantiles are computed on demand.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Histogram {
    samples: Vec<u64>,
}

impl Histogram {
    pub fn record(&mut self, us: u64) {
        self.samples.push(us);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[u64] {
        &self.samples
    }

    /// Nearest-rank quantile, `q` in [0, 1].
    pub fn quantile(&self, q: f64) -> Option<u64> {
        if self.samples.is_empty() {
            return None;
        }
        let mut s = self.samples.clone();
        s.sort_unstable();
        let rank = (q.clamp(0.0, 1.0) * (s.len() - 1) as f64).round() as usize;
        Some(s[rank])
    }

    pub fn median(&self) -> Option<u64> {
        self.quantile(0.5)
    }

    pub fn max(&self) -> Option<u64> {
        self.samples.iter().copied().max()
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.samples.is_empty())
            .then(|| self.samples.iter().sum::<u64>() as f64 / self.samples.len() as f64)
    }

    fn summary(&self) -> HistogramSummary {
        HistogramSummary {
            count: self.len(),
            median_us: self.median(),
            p99_us: self.quantile(0.99),
            max_us: self.max(),
        }
    }
}

#[derive(Debug, Default)]
pub struct PipelineStats {
    /// Batches cut from the source.
    pub produced: u64,
    /// Batches that completed stage 3.
    pub processed: u64,
    pub dropped: u64,
    pub poses: u64,
    /// Batches with enough markers whose solve still failed.
    pub pose_failures: u64,
    /// Per-stage processing time, stages 1 to 3.
    pub stage_us: [Histogram; 3],
    /// From batch availability to its pose record being written.
    pub latency_us: Histogram,
    /// Batches in which each LED received a fresh cluster.
    pub led_observed: BTreeMap<LedId, u64>,
    /// Batches in which each LED had a live track.
    pub led_live: BTreeMap<LedId, u64>,
    pub events: u64,
    pub wall: Duration,
    pub warnings: Vec<String>,
    /// Set when a stage stopped the run early; the counters are partial.
    pub failure: Option<PipelineError>,
}

impl PipelineStats {
    pub fn pose_rate_hz(&self) -> f64 {
        let s = self.wall.as_secs_f64();
        if s > 0.0 {
            self.poses as f64 / s
        } else {
            0.0
        }
    }

    /// Fraction of processed batches with a live track for `id`.
    pub fn detection_rate(&self, id: LedId) -> f64 {
        if self.processed == 0 {
            return 0.0;
        }
        self.led_live.get(&id).copied().unwrap_or(0) as f64 / self.processed as f64
    }

    pub fn observation_rate(&self, id: LedId) -> f64 {
        if self.processed == 0 {
            return 0.0;
        }
        self.led_observed.get(&id).copied().unwrap_or(0) as f64 / self.processed as f64
    }

    pub fn summary(&self) -> StatsSummary {
        let rates = |m: &BTreeMap<LedId, u64>| -> BTreeMap<u32, f64> {
            m.keys()
                .map(|id| (id.0, m[id] as f64 / self.processed.max(1) as f64))
                .collect()
        };
        StatsSummary {
            produced: self.produced,
            processed: self.processed,
            dropped: self.dropped,
            poses: self.poses,
            pose_failures: self.pose_failures,
            events: self.events,
            wall_s: self.wall.as_secs_f64(),
            pose_rate_hz: self.pose_rate_hz(),
            stage1: self.stage_us[0].summary(),
            stage2: self.stage_us[1].summary(),
            stage3: self.stage_us[2].summary(),
            latency: self.latency_us.summary(),
            detection_rate: rates(&self.led_live),
            observation_rate: rates(&self.led_observed),
            warnings: self.warnings.clone(),
            failure: self.failure.as_ref().map(|e| e.to_string()),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HistogramSummary {
    pub count: usize,
    pub median_us: Option<u64>,
    pub p99_us: Option<u64>,
    pub max_us: Option<u64>,
}

/// Serializable digest of a run.
#[derive(Clone, Debug, Serialize)]
pub struct StatsSummary {
    pub produced: u64,
    pub processed: u64,
    pub dropped: u64,
    pub poses: u64,
    pub pose_failures: u64,
    pub events: u64,
    pub wall_s: f64,
    pub pose_rate_hz: f64,
    pub stage1: HistogramSummary,
    pub stage2: HistogramSummary,
    pub stage3: HistogramSummary,
    pub latency: HistogramSummary,
    pub detection_rate: BTreeMap<u32, f64>,
    pub observation_rate: BTreeMap<u32, f64>,
    pub warnings: Vec<String>,
    pub failure: Option<String>,
}
