//! Frequency-based identification of clusters.

use super::cluster::Cluster;
use super::rig::{LedId, LedRig};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Association {
    /// `(led, cluster index)` pairs, ordered by LED id.
    pub matches: Vec<(LedId, usize)>,
    /// Clusters equally close to two LEDs; discarded.
    pub ties: usize,
    /// Clusters with no LED within tolerance or beaten by a closer cluster.
    pub unmatched: usize,
}

impl Association {
    pub fn cluster_for(&self, id: LedId) -> Option<usize> {
        self.matches.iter().find(|(l, _)| *l == id).map(|&(_, c)| c)
    }
}

/// Assigns clusters to LEDs whose period is within `match_tol_us`. Each LED
/// and each cluster is used at most once; pairs are taken greedily by period
/// distance, then by larger sample count.
pub fn associate_clusters(clusters: &[Cluster], rig: &LedRig, match_tol_us: f64) -> Association {
    let periods: Vec<(LedId, f64)> = rig
        .markers()
        .iter()
        .map(|m| (m.id, m.period_us()))
        .collect();
    let mut pairs: Vec<(f64, u32, LedId, usize)> = Vec::new();
    let mut ties = 0;

    for (ci, c) in clusters.iter().enumerate() {
        let mut dists: Vec<(f64, LedId)> = periods
            .iter()
            .map(|&(id, p)| ((c.period_us - p).abs(), id))
            .filter(|&(d, _)| d <= match_tol_us)
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if dists.len() >= 2 && dists[0].0 == dists[1].0 {
            ties += 1;
            continue;
        }
        pairs.extend(dists.into_iter().map(|(d, id)| (d, c.samples, id, ci)));
    }

    pairs.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(b.1.cmp(&a.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });

    let mut led_used: Vec<LedId> = Vec::new();
    let mut cluster_used = vec![false; clusters.len()];
    let mut matches = Vec::new();
    for (_, _, id, ci) in pairs {
        if cluster_used[ci] || led_used.contains(&id) {
            continue;
        }
        cluster_used[ci] = true;
        led_used.push(id);
        matches.push((id, ci));
    }
    matches.sort();
    let unmatched = clusters.len() - matches.len() - ties;
    Association {
        matches,
        ties,
        unmatched,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::rig::LedSpec;
    use nalgebra::{Point2, Point3};

    fn rig() -> LedRig {
        let f = [1730.0, 1980.0, 2290.0, 2610.0, 2860.0];
        LedRig::new(
            f.iter()
                .enumerate()
                .map(|(i, &f)| LedSpec {
                    id: LedId(i as u32),
                    position: Point3::new(i as f64, 0.0, 0.0),
                    frequency_hz: f,
                    duty: 0.01,
                })
                .collect(),
        )
        .unwrap()
    }

    fn cluster(period: f64, samples: u32) -> Cluster {
        Cluster {
            members: vec![0, 1],
            centroid: Point2::new(0.0, 0.0),
            period_us: period,
            samples,
        }
    }

    #[test]
    fn within_tolerance_matches() {
        let a = associate_clusters(&[cluster(565.0, 4)], &rig(), 25.0);
        assert_eq!(a.matches, vec![(LedId(0), 0)]);
        let a = associate_clusters(&[cluster(540.0, 4)], &rig(), 25.0);
        assert!(a.matches.is_empty());
        assert_eq!(a.unmatched, 1);
    }

    #[test]
    fn exact_periods_are_bijective() {
        let r = rig();
        let clusters: Vec<_> = r
            .markers()
            .iter()
            .rev()
            .map(|m| cluster(m.period_us(), 3))
            .collect();
        let a = associate_clusters(&clusters, &r, 25.0);
        assert_eq!(a.matches.len(), 5);
        for (id, ci) in &a.matches {
            assert_eq!(*ci, 4 - id.0 as usize);
        }
    }

    #[test]
    fn closer_cluster_wins_then_more_samples() {
        let a = associate_clusters(&[cluster(570.0, 9), cluster(575.0, 1)], &rig(), 25.0);
        assert_eq!(a.matches, vec![(LedId(0), 1)]);
        let a = associate_clusters(&[cluster(570.0, 1), cluster(587.0, 9)], &rig(), 25.0);
        assert_eq!(a.matches, vec![(LedId(0), 0)]);
        let a = associate_clusters(&[cluster(570.0, 1), cluster(570.0, 9)], &rig(), 25.0);
        assert_eq!(a.matches, vec![(LedId(0), 1)]);
    }

    #[test]
    fn equidistant_cluster_is_discarded() {
        let r = rig();
        let mid = (r.markers()[3].period_us() + r.markers()[4].period_us()) / 2.0;
        let a = associate_clusters(&[cluster(mid, 3)], &r, 25.0);
        assert!(a.matches.is_empty());
        assert_eq!(a.ties, 1);
    }
}
