//! Event-rate gating and per-pixel period statistics.

use crate::sdtv::{pixel_periods_into, CountFrame, StackSource};

/// Minimum events per batch for a pixel to be an LED candidate:
/// `ceil(beta * 2 * t * f_min)`.
pub fn rate_threshold(batch_duration_us: u64, f_min_hz: f64, beta: f64) -> u32 {
    let expected = beta * 2.0 * batch_duration_us as f64 * 1e-6 * f_min_hz;
    (expected - 1e-9).ceil().max(0.0) as u32
}

/// Pixels whose batch count reaches `threshold`, ascending by index.
pub fn candidate_pixels(frame: &CountFrame, threshold: u32) -> Vec<u32> {
    let mut out: Vec<u32> = frame
        .touched()
        .iter()
        .copied()
        .filter(|&p| frame.get(p as usize) as u32 >= threshold)
        .collect();
    out.sort_unstable();
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodStats {
    pub pixel: u32,
    pub mean_us: f64,
    pub median_us: f64,
    pub std_us: f64,
    pub samples: u32,
}

/// Rejection bound on the period spread of a pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StdBound {
    pub absolute_us: f64,
    pub relative: f64,
    /// Fewer complete periods than this give no usable spread.
    pub min_periods: u32,
}

impl Default for StdBound {
    fn default() -> Self {
        Self {
            absolute_us: 25.0,
            relative: 0.05,
            min_periods: 2,
        }
    }
}

impl StdBound {
    pub fn limit(&self, mean_us: f64) -> f64 {
        self.absolute_us.max(self.relative * mean_us)
    }
}

/// Statistics of the complete periods in one stack, or `None` without any.
pub fn stats_of(pixel: u32, periods: &[u32]) -> Option<PeriodStats> {
    if periods.is_empty() {
        return None;
    }
    let n = periods.len() as f64;
    let mean = periods.iter().map(|&p| p as f64).sum::<f64>() / n;
    let var = periods
        .iter()
        .map(|&p| (p as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let mut sorted = periods.to_vec();
    sorted.sort_unstable();
    let mid = sorted.len() / 2;
    let median = if sorted.len().is_multiple_of(2) {
        (sorted[mid - 1] as f64 + sorted[mid] as f64) / 2.0
    } else {
        sorted[mid] as f64
    };
    Some(PeriodStats {
        pixel,
        mean_us: mean,
        median_us: median,
        std_us: var.sqrt(),
        samples: periods.len() as u32,
    })
}

/// Period statistics for `pixels`. Pixels with fewer than
/// `bound.min_periods` complete periods or a spread above the bound are
/// dropped.
pub fn period_stats(
    source: &impl StackSource,
    pixels: &[u32],
    bound: StdBound,
) -> Vec<PeriodStats> {
    let mut stack = Vec::with_capacity(32);
    let mut periods = Vec::with_capacity(16);
    let mut out = Vec::with_capacity(pixels.len());
    for &p in pixels {
        stack.clear();
        periods.clear();
        source.ordered_stack(p as usize, &mut stack);
        pixel_periods_into(&stack, &mut periods);
        if let Some(s) = stats_of(p, &periods) {
            if s.samples >= bound.min_periods && s.std_us <= bound.limit(s.mean_us) {
                out.push(s);
            }
        }
    }
    out
}
