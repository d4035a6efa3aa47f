use std::collections::BTreeSet;

use ledmocap::detector::{
    associate_clusters, candidate_pixels, cluster_candidates, period_stats, Cluster,
    DetectionReport, Detector, DetectorConfig, FilterConfig, LedId, LedRig, LedSpec, LedTrack,
    PeriodStats, SizeBounds, StdBound,
};
use ledmocap::event::{Batcher, Event, EventBatch, Polarity, SensorGeometry};
use ledmocap::pose::{solve_sqpnp, Correspondence};
use ledmocap::sdtv::{min_depth, Sdtv};
use ledmocap::sim::{default_layout, NoiseModel, Occlusion, SimScene, SimSource};
use nalgebra::Point2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const BATCH_US: u64 = 2500;

struct Run {
    reports: Vec<DetectionReport>,
    candidates: Vec<Vec<u32>>,
    batches: Vec<(u64, u64)>,
}

/// Streams a scene through volume and detector, batch by batch.
fn run(scene: &SimScene, seed: u64) -> Run {
    let geometry = scene.geometry();
    let mut volume = Sdtv::new(geometry, min_depth(BATCH_US, scene.rig.f_max())).unwrap();
    let mut detector = Detector::new(
        scene.rig.clone(),
        DetectorConfig::default(),
        geometry,
        BATCH_US,
    );
    let mut batcher =
        Batcher::new(SimSource::new(scene.clone(), seed).unwrap(), BATCH_US, 0).unwrap();
    let mut batch = EventBatch::default();
    let mut out = Run {
        reports: Vec::new(),
        candidates: Vec::new(),
        batches: Vec::new(),
    };
    while batcher.next_batch(&mut batch).unwrap() {
        let frame = volume.ingest_batch(&batch.events).unwrap();
        out.candidates
            .push(candidate_pixels(&frame, detector.threshold()));
        out.reports
            .push(detector.detect(&volume, &frame, batch.t_end));
        out.batches.push((batch.t_start, batch.t_end));
    }
    out
}

fn truth_pixel(scene: &SimScene, id: LedId, t_us: f64) -> Point2<f64> {
    scene
        .marker_pixel(scene.rig.get(id).unwrap(), t_us)
        .unwrap()
}

#[test]
fn clean_static_scene_centroids() {
    let mut scene = SimScene::static_default(1.0, 100_000);
    scene.noise = NoiseModel::noiseless();
    let r = run(&scene, 1);
    let last = r.reports.last().unwrap();
    assert_eq!(last.centroids.len(), 5);
    for (id, c) in &last.centroids {
        let err = (c - truth_pixel(&scene, *id, 0.0)).norm();
        assert!(err < 0.5, "{id}: {err}");
    }
}

#[test]
fn clean_frames_have_exactly_five_clusters() {
    let mut scene = SimScene::static_default(1.0, 100_000);
    scene.noise = NoiseModel::noiseless();
    let r = run(&scene, 6);
    // The volume needs a few batches before every stack holds full periods.
    for rep in &r.reports[4..] {
        assert_eq!(rep.clusters.len(), 5, "at {}", rep.t_us);
    }
}

/// Rim pixels that miss an on-edge occasionally form a small extra cluster
/// at a multiple of the true period; it must never be associated.
#[test]
fn default_noise_frames_have_five_clusters() {
    let scene = SimScene::static_default(1.0, 250_000);
    for seed in [2, 12, 22] {
        let r = run(&scene, seed);
        let settled = &r.reports[4..];
        let five = settled.iter().filter(|rep| rep.clusters.len() == 5).count();
        assert!(
            five as f64 >= 0.9 * settled.len() as f64,
            "{five}/{}",
            settled.len()
        );
        for rep in settled {
            for &(id, ci) in &rep.association.matches {
                let c = truth_pixel(&scene, id, 0.0);
                assert!(
                    (rep.clusters[ci].centroid - c).norm() < 2.0,
                    "{id} matched a foreign cluster"
                );
            }
        }
        let last = r.reports.last().unwrap();
        assert_eq!(last.association.matches.len(), 5);
        for (id, c) in &last.centroids {
            assert!((c - truth_pixel(&scene, *id, 0.0)).norm() < 0.5);
        }
    }
}

#[test]
fn candidates_cover_blob_cores() {
    let scene = SimScene::static_default(1.0, 100_000);
    let r = run(&scene, 3);
    let core = scene.noise.core_radius_px;
    for (cands, &(t0, t1)) in r.candidates.iter().zip(&r.batches).skip(1) {
        let set: BTreeSet<u32> = cands.iter().copied().collect();
        if t1 - t0 < BATCH_US {
            continue;
        }
        for m in scene.rig.markers() {
            let c = truth_pixel(&scene, m.id, t0 as f64);
            for y in (c.y - core).ceil() as i64..=(c.y + core).floor() as i64 {
                for x in (c.x - core).ceil() as i64..=(c.x + core).floor() as i64 {
                    if (x as f64 - c.x).hypot(y as f64 - c.y) <= core {
                        let p = scene.geometry().index(x as u16, y as u16) as u32;
                        assert!(
                            set.contains(&p),
                            "core pixel ({x}, {y}) of {} missing at {t0}",
                            m.id
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn occluded_marker_leaves_four_and_a_pose() {
    let mut scene = SimScene::static_default(1.0, 100_000);
    scene.occlusions.push(Occlusion {
        led: LedId(2),
        start_us: 0,
        end_us: 100_000,
    });
    let r = run(&scene, 4);
    let last = r.reports.last().unwrap();
    assert_eq!(
        last.centroids.keys().copied().collect::<Vec<_>>(),
        vec![LedId(0), LedId(1), LedId(3), LedId(4)]
    );
    assert!(last.pose_sufficient());
    let corr: Vec<_> = last
        .centroids
        .iter()
        .map(|(id, c)| {
            let n = scene.intrinsics.undistort_to_normalized(c).unwrap();
            Correspondence::new(scene.rig.get(*id).unwrap().position.coords, n)
        })
        .collect();
    let est = solve_sqpnp(&corr).unwrap();
    assert!((est.translation() - scene.t_cb(0.0).translation.vector).norm() < 0.02);
}

#[test]
fn noise_free_integer_periods_are_exact() {
    let periods = [500.0, 450.0, 400.0, 350.0, 300.0];
    let markers = default_layout()
        .iter()
        .zip(periods)
        .enumerate()
        .map(|(i, (p, per))| LedSpec {
            id: LedId(i as u32),
            position: *p,
            frequency_hz: 1e6 / per,
            duty: 0.01,
        })
        .collect();
    let mut scene = SimScene::static_default(1.0, 50_000);
    scene.rig = LedRig::new(markers).unwrap();
    scene.noise = NoiseModel::noiseless();

    let g = scene.geometry();
    let mut volume = Sdtv::new(g, 16).unwrap();
    let mut all = Vec::new();
    let mut src = SimSource::new(scene.clone(), 5).unwrap();
    while ledmocap::event::EventSource::fill(&mut src, &mut all, 1 << 16).unwrap() > 0 {}
    let frame = volume.ingest_batch(&all).unwrap();
    let stats = period_stats(&volume, &candidate_pixels(&frame, 1), StdBound::default());
    assert!(!stats.is_empty());
    for s in &stats {
        assert_eq!(s.std_us, 0.0);
        assert!(periods.contains(&s.mean_us), "{}", s.mean_us);
    }
    let clusters = cluster_candidates(&stats, g, 25.0, SizeBounds::default());
    let mut found: Vec<f64> = clusters.iter().map(|c| c.period_us).collect();
    found.sort_by(f64::total_cmp);
    assert_eq!(found, vec![300.0, 350.0, 400.0, 450.0, 500.0]);
}

/// Tracker noise floor: 50 seeds, observation noise sigma, error checked at
/// the end of 100 static updates.
#[test]
fn particle_filter_reduces_observation_noise() {
    let cfg = FilterConfig::default();
    let sigma = cfg.sigma_meas;
    let target = Point2::new(100.0, 100.0);
    let mut sq = Vec::new();
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy = |rng: &mut ChaCha8Rng| {
            let dx: f64 = StandardNormal.sample(rng);
            let dy: f64 = StandardNormal.sample(rng);
            target + nalgebra::Vector2::new(dx, dy) * sigma
        };
        let first = noisy(&mut rng);
        let mut track = LedTrack::new(LedId(0), first, 0, 640, 480, &cfg, &mut rng);
        for k in 1..=100u64 {
            let z = noisy(&mut rng);
            track.update(Some(z), k * BATCH_US, BATCH_US, &cfg, &mut rng);
            assert!((track.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let e = track.centroid - target;
        sq.push(e.x * e.x);
        sq.push(e.y * e.y);
    }
    let n = sq.len() as f64;
    let mean = sq.iter().sum::<f64>() / n;
    let sd = (sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(
        mean + 3.0 * sd / n.sqrt() <= sigma * sigma,
        "mse {mean} sd {sd}"
    );
}

/// Square-wave events for `periods[pixel]` repeated `cycles[pixel]` times.
fn grid_events(g: SensorGeometry, periods: &[u64], cycles: &[u64]) -> Vec<Event> {
    let mut ev = Vec::new();
    for (pixel, (&per, &n)) in periods.iter().zip(cycles).enumerate() {
        let (x, y) = g.coords(pixel);
        for k in 0..n {
            ev.push(Event::new(x, y, Polarity::On, 10 + k * per));
            ev.push(Event::new(x, y, Polarity::Off, 15 + k * per));
        }
    }
    ev.sort_by_key(|e| e.t);
    ev
}

fn cover(clusters: &[Cluster]) -> Vec<BTreeSet<u32>> {
    clusters
        .iter()
        .map(|c| c.members.iter().copied().collect())
        .collect()
}

fn stats_of_block(w: usize, h: usize, samples: &[u32]) -> Vec<PeriodStats> {
    (0..w * h)
        .map(|i| PeriodStats {
            pixel: ((i / w) * 16 + i % w) as u32,
            mean_us: 400.0,
            median_us: 400.0,
            std_us: 0.0,
            samples: samples[i],
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn raising_the_threshold_never_adds_clusters(
        periods in prop::collection::vec(prop::sample::select(vec![300u64, 310, 520]), 64),
        cycles in prop::collection::vec(0u64..7, 64),
        lo in 1u32..8,
        extra in 1u32..6,
    ) {
        let g = SensorGeometry::new(8, 8).unwrap();
        let mut volume = Sdtv::new(g, 16).unwrap();
        let frame = volume.ingest_batch(&grid_events(g, &periods, &cycles)).unwrap();
        let open = SizeBounds { min: 1, max: usize::MAX };
        let clusters_at = |t: u32| {
            let stats = period_stats(&volume, &candidate_pixels(&frame, t), StdBound::default());
            cluster_candidates(&stats, g, 25.0, open)
        };
        let low = cover(&clusters_at(lo));
        let high = cover(&clusters_at(lo + extra));
        for c in &high {
            prop_assert!(low.iter().any(|l| c.is_subset(l)), "cluster {:?} is new", c);
        }
    }

    #[test]
    fn association_is_injective(raw in prop::collection::vec((0usize..5, -40.0f64..40.0, 1u32..50), 0..12)) {
        let rig = ledmocap::sim::default_rig();
        let clusters: Vec<Cluster> = raw
            .iter()
            .map(|&(led, off, samples)| Cluster {
                members: vec![0, 1],
                centroid: Point2::new(0.0, 0.0),
                period_us: rig.markers()[led].period_us() + off,
                samples,
            })
            .collect();
        let a = associate_clusters(&clusters, &rig, 25.0);
        let leds: BTreeSet<LedId> = a.matches.iter().map(|m| m.0).collect();
        let used: BTreeSet<usize> = a.matches.iter().map(|m| m.1).collect();
        prop_assert_eq!(leds.len(), a.matches.len());
        prop_assert_eq!(used.len(), a.matches.len());
        for &(id, ci) in &a.matches {
            prop_assert!((clusters[ci].period_us - rig.get(id).unwrap().period_us()).abs() <= 25.0);
        }
    }

    /// Removing weight share `s` of a cluster moves its centroid by at most
    /// `s` times the cluster diameter.
    #[test]
    fn rejection_moves_centroid_by_its_weight_share(
        w in 2usize..6,
        h in 2usize..6,
        samples in prop::collection::vec(1u32..20, 36),
        removed in 1usize..6,
    ) {
        let g = SensorGeometry::new(16, 16).unwrap();
        let all = stats_of_block(w, h, &samples);
        // Trimming from the end of the last row keeps the block connected.
        let removed = removed.min(w - 1);
        let kept = &all[..all.len() - removed];
        let open = SizeBounds { min: 1, max: usize::MAX };
        let full = cluster_candidates(&all, g, 25.0, open);
        let part = cluster_candidates(kept, g, 25.0, open);
        prop_assert_eq!(full.len(), 1);
        prop_assert_eq!(part.len(), 1);
        let total: u32 = all.iter().map(|s| s.samples).sum();
        let gone: u32 = all[all.len() - removed..].iter().map(|s| s.samples).sum();
        let diameter = ((w - 1) as f64).hypot((h - 1) as f64);
        let shift = (full[0].centroid - part[0].centroid).norm();
        prop_assert!(shift <= gone as f64 / total as f64 * diameter + 1e-12);

        // Recompute the reduced centroid by hand.
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        for s in kept {
            let (x, y) = g.coords(s.pixel as usize);
            sx += x as f64 * s.samples as f64;
            sy += y as f64 * s.samples as f64;
            sw += s.samples as f64;
        }
        prop_assert!((part[0].centroid - Point2::new(sx / sw, sy / sw)).norm() < 1e-9);
    }
}

#[test]
fn association_examples() {
    let rig = ledmocap::sim::default_rig();
    let cl = |p: f64| Cluster {
        members: vec![0, 1],
        centroid: Point2::new(0.0, 0.0),
        period_us: p,
        samples: 4,
    };
    assert_eq!(
        associate_clusters(&[cl(565.0)], &rig, 25.0).cluster_for(LedId(0)),
        Some(0)
    );
    assert!(associate_clusters(&[cl(540.0)], &rig, 25.0)
        .matches
        .is_empty());
    let exact: Vec<_> = rig.markers().iter().map(|m| cl(m.period_us())).collect();
    let a = associate_clusters(&exact, &rig, 25.0);
    assert_eq!(
        a.matches,
        (0..5).map(|i| (LedId(i), i as usize)).collect::<Vec<_>>()
    );
}

#[test]
fn empty_stream_gives_nothing() {
    let g = SensorGeometry::new(64, 48).unwrap();
    let volume = Sdtv::new(g, 15).unwrap();
    let mut det = Detector::new(
        ledmocap::sim::default_rig(),
        DetectorConfig::default(),
        g,
        BATCH_US,
    );
    let frame = ledmocap::sdtv::CountFrame::new(g);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for k in 0..rng.random_range(3..10) {
        let rep = det.detect(&volume, &frame, k * BATCH_US);
        assert!(rep.centroids.is_empty() && !rep.pose_sufficient());
    }
}
