//! 8-connected clustering of candidate pixels with similar periods.

use std::collections::HashMap;

use nalgebra::Point2;

use super::filter::PeriodStats;
use crate::event::SensorGeometry;

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub members: Vec<u32>,
    /// Sample-count weighted mean of member pixel centers.
    pub centroid: Point2<f64>,
    /// Sample-count weighted mean of member mean periods.
    pub period_us: f64,
    pub samples: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SizeBounds {
    pub min: usize,
    pub max: usize,
}

impl Default for SizeBounds {
    fn default() -> Self {
        Self { min: 2, max: 500 }
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller index as root keeps labelling independent of edge order.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Groups `stats` into clusters: two 8-adjacent pixels are linked when their
/// mean periods differ by at most `link_tol_us`. Clusters outside `bounds`
/// are discarded. Output is ordered by the smallest member pixel index.
pub fn cluster_candidates(
    stats: &[PeriodStats],
    geometry: SensorGeometry,
    link_tol_us: f64,
    bounds: SizeBounds,
) -> Vec<Cluster> {
    let mut order: Vec<usize> = (0..stats.len()).collect();
    order.sort_by_key(|&i| stats[i].pixel);
    let stats: Vec<&PeriodStats> = order.iter().map(|&i| &stats[i]).collect();

    let lookup: HashMap<u32, usize> = stats
        .iter()
        .enumerate()
        .map(|(i, s)| (s.pixel, i))
        .collect();
    let mut sets = DisjointSet::new(stats.len());
    let (w, h) = (geometry.width as i32, geometry.height as i32);

    for (i, s) in stats.iter().enumerate() {
        let (x, y) = geometry.coords(s.pixel as usize);
        let (x, y) = (x as i32, y as i32);
        // Forward half of the 8-neighbourhood; the rest is covered by symmetry.
        for (dx, dy) in [(1, 0), (-1, 1), (0, 1), (1, 1)] {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                continue;
            }
            let np = (ny * w + nx) as u32;
            if let Some(&j) = lookup.get(&np) {
                if (stats[j].mean_us - s.mean_us).abs() <= link_tol_us {
                    sets.union(i, j);
                }
            }
        }
    }

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..stats.len() {
        let root = sets.find(i);
        let slot = *root_slot.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(i);
    }

    groups
        .into_iter()
        .filter(|g| g.len() >= bounds.min && g.len() <= bounds.max)
        .map(|g| {
            let mut wsum = 0.0;
            let (mut cx, mut cy, mut period) = (0.0, 0.0, 0.0);
            for &i in &g {
                let s = stats[i];
                let wgt = s.samples as f64;
                let (x, y) = geometry.coords(s.pixel as usize);
                cx += wgt * x as f64;
                cy += wgt * y as f64;
                period += wgt * s.mean_us;
                wsum += wgt;
            }
            Cluster {
                members: g.iter().map(|&i| stats[i].pixel).collect(),
                centroid: Point2::new(cx / wsum, cy / wsum),
                period_us: period / wsum,
                samples: wsum as u32,
            }
        })
        .collect()
}
