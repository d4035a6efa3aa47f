//! Random PnP instances and a Levenberg-Marquardt refinement oracle,
//! shared by test targets.

use ledmocap::pose::{algebraic_objective, Correspondence};
use nalgebra::{
    Isometry3, Matrix6, Point3, Translation3, UnitQuaternion, Vector2, Vector3, Vector6,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Focal length of the default camera; converts pixel noise to normalized units.
pub const FOCAL_PX: f64 = 1646.0;

pub fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]))
}

pub struct Instance {
    pub truth: Isometry3<f64>,
    pub corr: Vec<Correspondence>,
}

pub fn instance(rng: &mut impl Rng, sigma_px: f64) -> Instance {
    loop {
        let z = rng.random_range(0.5..5.0);
        let t = Vector3::new(
            rng.random_range(-0.1..0.1) * z,
            rng.random_range(-0.1..0.1) * z,
            z,
        );
        let truth = Isometry3::from_parts(Translation3::from(t), random_rotation(rng));
        let n = rng.random_range(5..10);
        let body: Vec<Vector3<f64>> = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-0.15..0.15),
                    rng.random_range(-0.15..0.15),
                    rng.random_range(-0.15..0.15),
                )
            })
            .collect();
        let mut corr = Vec::with_capacity(n);
        let mut ok = true;
        for b in body {
            let p = truth * Point3::from(b);
            ok &= p.z > 0.1;
            let noise = Vector2::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
                * (sigma_px / FOCAL_PX);
            corr.push(Correspondence::new(
                b,
                Vector2::new(p.x / p.z, p.y / p.z) + noise,
            ));
        }
        if ok {
            return Instance { truth, corr };
        }
    }
}

pub fn rotation_error(a: &Isometry3<f64>, b: &Isometry3<f64>) -> f64 {
    a.rotation.angle_to(&b.rotation)
}

/// Levenberg-Marquardt on the algebraic objective over a left rotation
/// increment and the translation.
pub fn refine(start: &Isometry3<f64>, corr: &[Correspondence]) -> Isometry3<f64> {
    let mut pose = *start;
    let mut cost = algebraic_objective(&pose, corr);
    let mut lambda = 1e-6;
    for _ in 0..200 {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for c in corr {
            let rx = pose.rotation * c.body;
            let p = rx + pose.translation.vector;
            let rows = [
                Vector3::new(1.0, 0.0, -c.image.x),
                Vector3::new(0.0, 1.0, -c.image.y),
            ];
            for a in rows {
                let r = a.dot(&p);
                // d(a.p)/d(omega) = a . (-[Rx]x) = (Rx x a)
                let jw = rx.cross(&a);
                let j = Vector6::new(jw.x, jw.y, jw.z, a.x, a.y, a.z);
                jtj += j * j.transpose();
                jtr += j * r;
            }
        }
        let mut improved = false;
        for _ in 0..20 {
            let mut damped = jtj;
            for i in 0..6 {
                damped[(i, i)] += lambda * (1.0 + jtj[(i, i)]);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let dr = UnitQuaternion::from_scaled_axis(Vector3::new(step[0], step[1], step[2]));
            let cand = Isometry3::from_parts(
                Translation3::from(
                    pose.translation.vector + Vector3::new(step[3], step[4], step[5]),
                ),
                dr * pose.rotation,
            );
            let c = algebraic_objective(&cand, corr);
            if c < cost {
                pose = cand;
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    pose
}
