//! SQPnP: globally optimal PnP by sequential quadratic programming over the
//! nine entries of the rotation, started from the near-null eigenvectors of
//! the reduced objective.

use nalgebra::{Matrix3, SMatrix, SVector, SymmetricEigen, Vector3};

use super::{
    check_input, make_estimate, nearest_rotation, Correspondence, PnpError, PoseEstimate,
    SolverKind,
};

type Mat9 = SMatrix<f64, 9, 9>;
type Vec9 = SVector<f64, 9>;
type Mat39 = SMatrix<f64, 3, 9>;

const RANK_TOLERANCE: f64 = 1e-7;
const ORTHOGONALITY_SQ_THRESHOLD: f64 = 1e-8;
const SQP_SQ_TOLERANCE: f64 = 1e-10;
const SQP_MAX_ITERATIONS: usize = 15;
const SQP_MAX_ROUNDS: usize = 4;
const SQP_DET_THRESHOLD: f64 = 1.001;
const EQUAL_SQ_ERRORS: f64 = 1e-10;
const EQUAL_SQ_VECTORS: f64 = 1e-10;

/// Reduced quadratic objective `r' Omega r` over the row-major rotation `r`,
/// with the optimal translation `t = P r` eliminated.
#[derive(Clone, Debug)]
pub struct SqpnpSystem {
    pub omega: Mat9,
    pub p: Mat39,
}

impl SqpnpSystem {
    pub fn objective(&self, r: &Vec9) -> f64 {
        (self.omega * r).dot(r)
    }

    pub fn translation(&self, r: &Vec9) -> Vector3<f64> {
        self.p * r
    }
}

/// Builds `Omega` and `P` from the correspondences.
pub fn sqpnp_objective_matrix(corr: &[Correspondence]) -> Option<SqpnpSystem> {
    let mut omega = Mat9::zeros();
    let mut q_sum = Matrix3::zeros();
    let mut a_sum = Mat39::zeros();
    for c in corr {
        let (x, y) = (c.image.x, c.image.y);
        let q = Matrix3::new(1.0, 0.0, -x, 0.0, 1.0, -y, -x, -y, x * x + y * y);
        let mut m = Mat39::zeros();
        for k in 0..3 {
            for j in 0..3 {
                m[(k, 3 * k + j)] = c.body[j];
            }
        }
        let qm = q * m;
        omega += m.transpose() * qm;
        q_sum += q;
        a_sum += qm;
    }
    let q_inv = q_sum.try_inverse()?;
    let p = -(q_inv * a_sum);
    omega += a_sum.transpose() * p;
    // Symmetrize against round-off so the eigen-solver sees an exact
    // symmetric matrix.
    omega = (omega + omega.transpose()) * 0.5;
    Some(SqpnpSystem { omega, p })
}

fn as_mat(r: &Vec9) -> Matrix3<f64> {
    Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8])
}

fn as_vec(m: &Matrix3<f64>) -> Vec9 {
    Vec9::from_iterator((0..3).flat_map(|i| (0..3).map(move |j| m[(i, j)])))
}

fn orthogonality_error(a: &Vec9) -> f64 {
    let r1 = Vector3::new(a[0], a[1], a[2]);
    let r2 = Vector3::new(a[3], a[4], a[5]);
    let r3 = Vector3::new(a[6], a[7], a[8]);
    (r1.norm_squared() - 1.0).powi(2)
        + (r2.norm_squared() - 1.0).powi(2)
        + (r3.norm_squared() - 1.0).powi(2)
        + 2.0 * (r1.dot(&r2).powi(2) + r2.dot(&r3).powi(2) + r1.dot(&r3).powi(2))
}

/// One SQP step: linearize the six orthogonality constraints, take the
/// minimum-norm step onto them, then minimize the objective in their null
/// space.
fn sqp_step(omega: &Mat9, r: &Vec9) -> Vec9 {
    let r1 = Vector3::new(r[0], r[1], r[2]);
    let r2 = Vector3::new(r[3], r[4], r[5]);
    let r3 = Vector3::new(r[6], r[7], r[8]);

    // Constraint Jacobian transposed, padded to square so the QR yields a
    // full orthogonal basis; its last three columns span the null space.
    let mut jt = Mat9::zeros();
    for k in 0..3 {
        jt[(k, 0)] = 2.0 * r1[k];
        jt[(3 + k, 1)] = 2.0 * r2[k];
        jt[(6 + k, 2)] = 2.0 * r3[k];
        jt[(k, 3)] = r2[k];
        jt[(3 + k, 3)] = r1[k];
        jt[(3 + k, 4)] = r3[k];
        jt[(6 + k, 4)] = r2[k];
        jt[(k, 5)] = r3[k];
        jt[(6 + k, 5)] = r1[k];
    }
    let qr = jt.qr();
    let q = qr.q();
    let rr = qr.r();
    let h = q.fixed_columns::<6>(0).into_owned();
    let n = q.fixed_columns::<3>(6).into_owned();

    let g = [
        1.0 - r1.norm_squared(),
        1.0 - r2.norm_squared(),
        1.0 - r3.norm_squared(),
        -r1.dot(&r2),
        -r2.dot(&r3),
        -r1.dot(&r3),
    ];
    // J = K H' with K = R' lower triangular; forward substitution.
    let mut x = SVector::<f64, 6>::zeros();
    for i in 0..6 {
        let mut s = g[i];
        for j in 0..i {
            s -= rr[(j, i)] * x[j];
        }
        let d = rr[(i, i)];
        x[i] = if d.abs() > 1e-300 { s / d } else { 0.0 };
    }
    let mut delta = h * x;

    let nt_omega = n.transpose() * omega;
    let w = nt_omega * n;
    let rhs = -(nt_omega * (r + delta));
    let y = match w.cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => w
            .pseudo_inverse(1e-15)
            .map(|pi| pi * rhs)
            .unwrap_or_else(|_| Vector3::zeros()),
    };
    delta += n * y;
    delta
}

/// Runs SQP from `r0`. A run that exhausts its iteration budget is
/// projected back onto SO(3) and continued, up to `SQP_MAX_ROUNDS` times.
fn run_sqp(omega: &Mat9, r0: &Vec9) -> Vec9 {
    let mut r = *r0;
    for round in 0..SQP_MAX_ROUNDS {
        if round > 0 {
            r = as_vec(&nearest_rotation(&as_mat(&r)));
        }
        let mut delta_sq = f64::INFINITY;
        let mut step = 0;
        while delta_sq > SQP_SQ_TOLERANCE && step < SQP_MAX_ITERATIONS {
            let d = sqp_step(omega, &r);
            r += d;
            delta_sq = d.norm_squared();
            step += 1;
        }
        if delta_sq <= SQP_SQ_TOLERANCE {
            break;
        }
    }
    let mut det = as_mat(&r).determinant();
    if det < 0.0 {
        r = -r;
        det = -det;
    }
    if det > SQP_DET_THRESHOLD {
        as_vec(&nearest_rotation(&as_mat(&r)))
    } else {
        r
    }
}

struct Candidate {
    r: Vec9,
    drift: f64,
    t: Vector3<f64>,
    sq_error: f64,
}

struct Search<'a> {
    sys: &'a SqpnpSystem,
    corr: &'a [Correspondence],
    mean: Vector3<f64>,
    best: Vec<Candidate>,
    min_sq_error: f64,
}

impl Search<'_> {
    fn positive_depth(&self, r: &Vec9, t: &Vector3<f64>) -> bool {
        let row3 = Vector3::new(r[6], r[7], r[8]);
        if row3.dot(&self.mean) + t.z > 0.0 {
            return true;
        }
        let pos = self
            .corr
            .iter()
            .filter(|c| row3.dot(&c.body) + t.z > 0.0)
            .count();
        2 * pos >= self.corr.len()
    }

    fn handle(&mut self, r: Vec9) {
        // Rotation rows drift slightly from orthonormal within the SQP
        // tolerance; project onto SO(3) before scoring.
        let m = as_mat(&r);
        let fixed = nearest_rotation(&m);
        let drift = (fixed - m).norm();
        let r = as_vec(&fixed);
        let t = self.sys.translation(&r);
        if !self.positive_depth(&r, &t) {
            return;
        }
        let sq_error = self.sys.objective(&r);
        if (self.min_sq_error - sq_error).abs() > EQUAL_SQ_ERRORS {
            if self.min_sq_error > sq_error {
                self.min_sq_error = sq_error;
                self.best.clear();
                self.best.push(Candidate {
                    r,
                    drift,
                    t,
                    sq_error,
                });
            }
        } else {
            match self
                .best
                .iter_mut()
                .find(|c| (c.r - r).norm_squared() < EQUAL_SQ_VECTORS)
            {
                Some(c) => {
                    if c.sq_error > sq_error {
                        *c = Candidate {
                            r,
                            drift,
                            t,
                            sq_error,
                        };
                    }
                }
                None => self.best.push(Candidate {
                    r,
                    drift,
                    t,
                    sq_error,
                }),
            }
            self.min_sq_error = self.min_sq_error.min(sq_error);
        }
    }

    fn try_eigenvector(&mut self, e: Vec9) {
        let e = e * 3f64.sqrt();
        if orthogonality_error(&e) < ORTHOGONALITY_SQ_THRESHOLD {
            let start = e * as_mat(&e).determinant().signum();
            let r = run_sqp(&self.sys.omega, &start);
            self.handle(r);
        } else {
            for s in [e, -e] {
                let start = as_vec(&nearest_rotation(&as_mat(&s)));
                let r = run_sqp(&self.sys.omega, &start);
                self.handle(r);
            }
        }
    }
}

pub fn solve_sqpnp(corr: &[Correspondence]) -> Result<PoseEstimate, PnpError> {
    check_input(corr)?;
    let sys = sqpnp_objective_matrix(corr).ok_or(PnpError::Degenerate)?;

    let eig = SymmetricEigen::new(sys.omega);
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vector = |k: usize| -> Vec9 { eig.eigenvectors.column(order[k]).into_owned() };

    let null = values.iter().filter(|&&v| v < RANK_TOLERANCE).count();
    let n_eigen = null.max(1);

    let mean = corr.iter().fold(Vector3::zeros(), |a, c| a + c.body) / corr.len() as f64;
    let mut search = Search {
        sys: &sys,
        corr,
        mean,
        best: Vec::new(),
        min_sq_error: f64::INFINITY,
    };

    for k in 0..n_eigen.min(9) {
        search.try_eigenvector(vector(k));
    }
    let mut k = n_eigen;
    while k < 8 && search.min_sq_error > 3.0 * values[k] {
        search.try_eigenvector(vector(k));
        k += 1;
    }

    let best = search
        .best
        .iter()
        .min_by(|a, b| a.sq_error.total_cmp(&b.sq_error))
        .ok_or(PnpError::Failed("no candidate in front of the camera"))?;
    debug_assert!(best.drift < 1e-6, "rotation drift {}", best.drift);
    Ok(make_estimate(
        &as_mat(&best.r),
        &best.t,
        corr,
        SolverKind::Sqpnp,
    ))
}
