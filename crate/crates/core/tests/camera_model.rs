use ledmocap::camera::DsIntrinsics;
use ledmocap::event::SensorGeometry;
use nalgebra::{Point2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn geom() -> SensorGeometry {
    SensorGeometry::new(640, 480).unwrap()
}

fn random_intrinsics(rng: &mut impl Rng) -> DsIntrinsics {
    let f = rng.random_range(200.0..2000.0);
    DsIntrinsics::new(
        geom(),
        f,
        f * rng.random_range(0.95..1.05),
        rng.random_range(300.0..340.0),
        rng.random_range(220.0..260.0),
        rng.random_range(-0.3..1.0),
        rng.random_range(0.0..0.9),
    )
    .unwrap()
}

/// A point within 60 degrees of the optical axis.
fn random_point(rng: &mut impl Rng) -> Vector3<f64> {
    let theta = rng.random_range(0.0..60f64.to_radians());
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let r = rng.random_range(0.05..20.0);
    Vector3::new(
        theta.sin() * phi.cos(),
        theta.sin() * phi.sin(),
        theta.cos(),
    ) * r
}

#[test]
fn round_trip_over_random_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for _ in 0..100 {
        let k = random_intrinsics(&mut rng);
        for _ in 0..1000 {
            let p = random_point(&mut rng);
            let px = k.project(&p).unwrap();
            let ray = k.unproject(&px).unwrap();
            assert!((ray.norm() - 1.0).abs() < 1e-12);
            let err = (ray - p.normalize()).norm();
            assert!(err < 1e-9, "{k:?} {p:?} err {err}");
            checked += 1;
        }
    }
    assert_eq!(checked, 100_000);
}

#[test]
fn pinhole_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..1000 {
        let (fx, fy, cx, cy) = (
            rng.random_range(100.0..3000.0),
            rng.random_range(100.0..3000.0),
            rng.random_range(0.0..640.0),
            rng.random_range(0.0..480.0),
        );
        let k = DsIntrinsics::new(geom(), fx, fy, cx, cy, 0.0, 0.0).unwrap();
        let p = random_point(&mut rng);
        let px = k.project(&p).unwrap();
        assert_eq!(px.x, fx * p.x / p.z + cx);
        assert_eq!(px.y, fy * p.y / p.z + cy);
    }
    let k = DsIntrinsics::new(geom(), 500.0, 400.0, 320.0, 240.0, 0.0, 0.0).unwrap();
    let n = k
        .undistort_to_normalized(&Point2::new(820.0, 240.0))
        .unwrap();
    assert!((n.x - 1.0).abs() < 1e-12 && n.y.abs() < 1e-12);
    let ray = k.unproject(&Point2::new(820.0, 240.0)).unwrap();
    assert!((ray - Vector3::new(1.0, 0.0, 1.0).normalize()).norm() < 1e-12);
}

#[test]
fn principal_point_is_the_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let k = random_intrinsics(&mut rng);
        let px = k
            .project(&Vector3::new(0.0, 0.0, rng.random_range(0.1..10.0)))
            .unwrap();
        assert!((px - Point2::new(k.cx, k.cy)).norm() < 1e-9);
        let ray = k.unproject(&Point2::new(k.cx, k.cy)).unwrap();
        assert!((ray - Vector3::z()).norm() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    /// Central differences at two step sizes agree, so the projection is
    /// smooth (and locally Lipschitz) on the valid domain.
    #[test]
    fn projection_is_locally_smooth(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = random_intrinsics(&mut rng);
        let p = random_point(&mut rng).normalize() * rng.random_range(0.5..5.0);
        for axis in 0..3 {
            let diff = |h: f64| {
                let mut d = Vector3::zeros();
                d[axis] = h;
                (k.project(&(p + d)).unwrap() - k.project(&(p - d)).unwrap()) / (2.0 * h)
            };
            let (coarse, fine) = (diff(1e-4), diff(5e-5));
            let scale = fine.norm().max(1.0);
            prop_assert!((coarse - fine).norm() / scale < 1e-5, "{} vs {}", coarse, fine);
        }
    }
}
