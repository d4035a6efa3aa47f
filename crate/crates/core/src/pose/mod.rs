//! Perspective-n-point solvers and frame bookkeeping.

mod epnp;
mod sqpnp;

use nalgebra::{
    Isometry3, Matrix3, Point2, Rotation3, SymmetricEigen, Translation3, UnitQuaternion, Vector2,
    Vector3,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::DsIntrinsics;

pub use epnp::solve_epnp;
pub use sqpnp::{solve_sqpnp, sqpnp_objective_matrix, SqpnpSystem};

/// One body-frame point and its normalized image coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub body: Vector3<f64>,
    pub image: Vector2<f64>,
}

impl Correspondence {
    pub fn new(body: Vector3<f64>, image: Vector2<f64>) -> Self {
        Self { body, image }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Sqpnp,
    Epnp,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Sqpnp => "sqpnp",
            SolverKind::Epnp => "epnp",
        }
    }

    pub fn solve(self, corr: &[Correspondence]) -> Result<PoseEstimate, PnpError> {
        match self {
            SolverKind::Sqpnp => solve_sqpnp(corr),
            SolverKind::Epnp => solve_epnp(corr),
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sqpnp" => Ok(SolverKind::Sqpnp),
            "epnp" => Ok(SolverKind::Epnp),
            other => Err(format!("unknown solver '{other}' (expected sqpnp or epnp)")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PnpError {
    #[error("{0} correspondences given; at least four are needed")]
    Insufficient(usize),
    #[error("degenerate configuration: body points are collinear or coincident")]
    Degenerate,
    #[error("non-finite input")]
    NonFinite,
    #[error("solver failed: {0}")]
    Failed(&'static str),
}

/// Body-to-camera transform with quality metadata.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseEstimate {
    pub t_cb: Isometry3<f64>,
    /// RMS reprojection residual in normalized image units.
    pub rmse_norm: f64,
    pub solver: SolverKind,
    pub t_us: u64,
}

impl PoseEstimate {
    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.t_cb.rotation
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.t_cb.translation.vector
    }
}

pub(crate) fn check_input(corr: &[Correspondence]) -> Result<(), PnpError> {
    if corr.len() < 4 {
        return Err(PnpError::Insufficient(corr.len()));
    }
    if corr
        .iter()
        .any(|c| !c.body.iter().chain(c.image.iter()).all(|v| v.is_finite()))
    {
        return Err(PnpError::NonFinite);
    }
    let (_, eig) = body_covariance(corr);
    let largest = eig[2];
    if !(largest > 0.0) || eig[1] <= 1e-12 * largest {
        return Err(PnpError::Degenerate);
    }
    Ok(())
}

/// Centroid and ascending covariance eigenvalues of the body points.
pub(crate) fn body_covariance(corr: &[Correspondence]) -> (Vector3<f64>, Vector3<f64>) {
    let n = corr.len() as f64;
    let c = corr.iter().fold(Vector3::zeros(), |a, p| a + p.body) / n;
    let mut cov = Matrix3::zeros();
    for p in corr {
        let d = p.body - c;
        cov += d * d.transpose();
    }
    let mut e: Vec<f64> = SymmetricEigen::new(cov / n)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    e.sort_by(f64::total_cmp);
    (c, Vector3::new(e[0], e[1], e[2]))
}

/// Closest rotation in the Frobenius sense.
pub(crate) fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (u * vt).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * vt
}

pub(crate) fn make_estimate(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    corr: &[Correspondence],
    solver: SolverKind,
) -> PoseEstimate {
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    let t_cb = Isometry3::from_parts(Translation3::from(*t), rot);
    let rmse_norm = reprojection_rmse(&t_cb, corr);
    PoseEstimate {
        t_cb,
        rmse_norm,
        solver,
        t_us: 0,
    }
}

/// RMS of the normalized-plane residual norms.
pub fn reprojection_rmse(t_cb: &Isometry3<f64>, corr: &[Correspondence]) -> f64 {
    if corr.is_empty() {
        return 0.0;
    }
    let sum: f64 = corr
        .iter()
        .map(|c| {
            let p = t_cb.transform_vector(&c.body) + t_cb.translation.vector;
            (Vector2::new(p.x / p.z, p.y / p.z) - c.image).norm_squared()
        })
        .sum();
    (sum / corr.len() as f64).sqrt()
}

/// RMS pixel residual of body points projected through `intr` against
/// measured pixels. Points outside the projection domain count as missing.
pub fn reprojection_rmse_px(
    t_cb: &Isometry3<f64>,
    body: &[Vector3<f64>],
    pixels: &[Point2<f64>],
    intr: &DsIntrinsics,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (b, px) in body.iter().zip(pixels) {
        let p = t_cb.transform_vector(b) + t_cb.translation.vector;
        if let Ok(q) = intr.project(&p) {
            sum += (q - px).norm_squared();
            n += 1;
        }
    }
    (n > 0).then(|| (sum / n as f64).sqrt())
}

/// Sum of squared algebraic residuals `(X_c - u Z_c)^2 + (Y_c - v Z_c)^2`.
pub fn algebraic_objective(t_cb: &Isometry3<f64>, corr: &[Correspondence]) -> f64 {
    corr.iter()
        .map(|c| {
            let p = t_cb.transform_vector(&c.body) + t_cb.translation.vector;
            (p.x - c.image.x * p.z).powi(2) + (p.y - c.image.y * p.z).powi(2)
        })
        .sum()
}

/// World pose of the body given the world-to-camera transform `t_cw`.
pub fn to_world(t_cb: &Isometry3<f64>, t_cw: &Isometry3<f64>) -> Isometry3<f64> {
    t_cw.inverse() * t_cb
}

/// Depth standard deviation for a marker span `b` seen at depth `z`:
/// `z^2 * sigma_u / (b * f)`.
pub fn depth_sigma(z_c: f64, marker_span_b: f64, focal_f: f64, sigma_u: f64) -> f64 {
    z_c * z_c * sigma_u / (marker_span_b * focal_f)
}

/// Largest pairwise marker distance perpendicular to the optical axis, for
/// points given in the camera frame.
pub fn marker_span_perpendicular(points_c: &[Vector3<f64>]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, a) in points_c.iter().enumerate() {
        for b in &points_c[i + 1..] {
            best = best.max((a.x - b.x).hypot(a.y - b.y));
        }
    }
    best
}
