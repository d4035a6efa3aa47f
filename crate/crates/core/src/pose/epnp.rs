//! EPnP: body points expressed in a basis of control points whose camera
//! coordinates lie in the near-null space of a linear system. No pose
//! refinement is applied after the closed-form step.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};

use super::{
    body_covariance, check_input, make_estimate, nearest_rotation, reprojection_rmse,
    Correspondence, PnpError, PoseEstimate, SolverKind,
};

const PLANAR_RATIO: f64 = 1e-8;
const GAUSS_NEWTON_ITERATIONS: usize = 5;

struct Basis {
    /// Control points in the body frame.
    ctrl: Vec<Vector3<f64>>,
    /// Barycentric coordinates per correspondence.
    alphas: Vec<Vec<f64>>,
}

fn control_basis(corr: &[Correspondence], planar: bool) -> Option<Basis> {
    let n = corr.len() as f64;
    let c0 = corr.iter().fold(Vector3::zeros(), |a, c| a + c.body) / n;
    let mut cov = Matrix3::zeros();
    for c in corr {
        let d = c.body - c0;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axes = if planar { 2 } else { 3 };
    let mut ctrl = vec![c0];
    for &k in order.iter().take(axes) {
        let scale = (eig.eigenvalues[k].max(0.0) / n).sqrt();
        ctrl.push(c0 + eig.eigenvectors.column(k).into_owned() * scale);
    }

    let mut basis = DMatrix::zeros(3, axes);
    for j in 0..axes {
        basis.set_column(j, &(ctrl[j + 1] - c0));
    }
    let pinv = basis.pseudo_inverse(1e-300).ok()?;
    let alphas = corr
        .iter()
        .map(|c| {
            let a = &pinv * DVector::from_column_slice((c.body - c0).as_slice());
            let mut out = vec![1.0 - a.sum()];
            out.extend(a.iter());
            out
        })
        .collect();
    Some(Basis { ctrl, alphas })
}

/// Pairs of control points whose distances constrain the betas.
fn pairs(k: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            out.push((a, b));
        }
    }
    out
}

struct Problem {
    k: usize,
    /// Near-null vectors, smallest eigenvalue first; each is `3k` long.
    v: Vec<DVector<f64>>,
    rho: Vec<f64>,
    pairs: Vec<(usize, usize)>,
}

impl Problem {
    fn diff(&self, i: usize, pair: (usize, usize)) -> Vector3<f64> {
        let (a, b) = pair;
        let v = &self.v[i];
        Vector3::new(
            v[3 * a] - v[3 * b],
            v[3 * a + 1] - v[3 * b + 1],
            v[3 * a + 2] - v[3 * b + 2],
        )
    }

    /// Rows of the quadratic distance constraints over beta products
    /// `b_ij`, i <= j, for the first `nb` null vectors. Column order is
    /// (00, 01, 11, 02, 12, 22, 03, 13, 23, 33).
    fn l_matrix(&self, nb: usize) -> DMatrix<f64> {
        let cols = nb * (nb + 1) / 2;
        let mut l = DMatrix::zeros(self.pairs.len(), cols);
        for (row, &pair) in self.pairs.iter().enumerate() {
            let dv: Vec<Vector3<f64>> = (0..nb).map(|i| self.diff(i, pair)).collect();
            let mut col = 0;
            for j in 0..nb {
                for i in 0..=j {
                    let f = if i == j { 1.0 } else { 2.0 };
                    l[(row, col)] = f * dv[i].dot(&dv[j]);
                    col += 1;
                }
            }
        }
        l
    }

    fn residual(&self, l: &DMatrix<f64>, betas: &[f64]) -> DVector<f64> {
        let nb = betas.len();
        let mut prod = DVector::zeros(nb * (nb + 1) / 2);
        let mut col = 0;
        for j in 0..nb {
            for i in 0..=j {
                prod[col] = betas[i] * betas[j];
                col += 1;
            }
        }
        DVector::from_vec(self.rho.clone()) - l * prod
    }

    fn gauss_newton(&self, betas: &mut [f64]) {
        let nb = betas.len();
        let l = self.l_matrix(nb);
        for _ in 0..GAUSS_NEWTON_ITERATIONS {
            let mut jac = DMatrix::zeros(self.pairs.len(), nb);
            for row in 0..self.pairs.len() {
                let mut col = 0;
                for j in 0..nb {
                    for i in 0..=j {
                        let c = l[(row, col)];
                        jac[(row, i)] += c * betas[j];
                        jac[(row, j)] += c * betas[i];
                        col += 1;
                    }
                }
            }
            let r = self.residual(&l, betas);
            let Some(step) = lstsq(&jac, &r) else { return };
            for (b, s) in betas.iter_mut().zip(step.iter()) {
                *b += s;
            }
        }
    }

    fn camera_points(&self, betas: &[f64], alphas: &[Vec<f64>]) -> Vec<Vector3<f64>> {
        let mut ctrl = vec![Vector3::zeros(); self.k];
        for (i, &b) in betas.iter().enumerate() {
            for (j, c) in ctrl.iter_mut().enumerate() {
                *c +=
                    Vector3::new(self.v[i][3 * j], self.v[i][3 * j + 1], self.v[i][3 * j + 2]) * b;
            }
        }
        alphas
            .iter()
            .map(|a| {
                a.iter()
                    .zip(&ctrl)
                    .fold(Vector3::zeros(), |s, (w, c)| s + c * *w)
            })
            .collect()
    }
}

fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().svd(true, true).solve(b, 1e-14).ok()
}

/// Rigid alignment of body points onto camera-frame points.
fn align(body: &[Vector3<f64>], cam: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = body.len() as f64;
    let cb = body.iter().sum::<Vector3<f64>>() / n;
    let cc = cam.iter().sum::<Vector3<f64>>() / n;
    let mut m = Matrix3::zeros();
    for (b, c) in body.iter().zip(cam) {
        m += (c - cc) * (b - cb).transpose();
    }
    let r = nearest_rotation(&m);
    (r, cc - r * cb)
}

fn betas_n1(p: &Problem) -> Vec<f64> {
    let l = p.l_matrix(1);
    let rho = DVector::from_vec(p.rho.clone());
    let b = lstsq(&l, &rho).map(|s| s[0]).unwrap_or(0.0);
    vec![b.abs().sqrt()]
}

fn betas_from_products(b11: f64, b12: f64, b22: f64) -> Vec<f64> {
    let mut b1 = b11.abs().sqrt();
    let b2 = if b11 * b22 > 0.0 {
        b22.abs().sqrt()
    } else {
        0.0
    };
    if b12 * b11.signum() < 0.0 {
        b1 = -b1;
    }
    vec![b1, b2]
}

fn betas_n2(p: &Problem) -> Vec<Vec<f64>> {
    let l = p.l_matrix(2);
    let rho = DVector::from_vec(p.rho.clone());
    let svd = l.clone().svd(true, true);
    let Ok(s) = svd.solve(&rho, 1e-14) else {
        return Vec::new();
    };
    let sv = &svd.singular_values;
    let (imax, imin) = (sv.imax(), sv.imin());
    if sv[imin] > 1e-9 * sv[imax] {
        return vec![betas_from_products(s[0], s[1], s[2])];
    }
    // The distance rows leave one product direction free; pick the points
    // on that line consistent with b12^2 = b11 b22.
    let v_t = svd.v_t.as_ref().expect("requested");
    let n = v_t.row(imin).transpose();
    let a = n[1] * n[1] - n[0] * n[2];
    let b = 2.0 * s[1] * n[1] - s[0] * n[2] - n[0] * s[2];
    let c = s[1] * s[1] - s[0] * s[2];
    let roots: Vec<f64> = if a.abs() < 1e-300 {
        if b.abs() > 1e-300 {
            vec![-c / b]
        } else {
            vec![0.0]
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        let r = disc.max(0.0).sqrt();
        vec![(-b + r) / (2.0 * a), (-b - r) / (2.0 * a)]
    };
    roots
        .into_iter()
        .map(|lam| {
            let q = &s + &n * lam;
            betas_from_products(q[0], q[1], q[2])
        })
        .collect()
}

fn betas_n3(p: &Problem) -> Option<Vec<f64>> {
    // Five of the six products (00, 01, 11, 02, 12); b22 is dropped.
    let full = p.l_matrix(3);
    let l = full.columns(0, 5).into_owned();
    let s = lstsq(&l, &DVector::from_vec(p.rho.clone()))?;
    let (b11, b12, b22, b13) = (s[0], s[1], s[2], s[3]);
    let mut out = betas_from_products(b11, b12, b22);
    let b3 = if out[0] != 0.0 {
        b13 * b11.signum() / out[0]
    } else {
        0.0
    };
    out.push(b3);
    Some(out)
}

/// Four-term linearization of the single-vector products b00..b03.
fn betas_n4_approx(p: &Problem) -> Option<Vec<f64>> {
    let full = p.l_matrix(4);
    let cols = [0usize, 1, 3, 6];
    let l = DMatrix::from_fn(p.pairs.len(), 4, |r, c| full[(r, cols[c])]);
    let s = lstsq(&l, &DVector::from_vec(p.rho.clone()))?;
    let b0 = s[0].abs().sqrt();
    if b0 == 0.0 {
        return None;
    }
    let sign = s[0].signum();
    Some(vec![
        b0,
        sign * s[1] / b0,
        sign * s[2] / b0,
        sign * s[3] / b0,
    ])
}

pub fn solve_epnp(corr: &[Correspondence]) -> Result<PoseEstimate, PnpError> {
    check_input(corr)?;
    let (_, eig) = body_covariance(corr);
    let planar = eig[0] < PLANAR_RATIO * eig[2];
    let basis = control_basis(corr, planar).ok_or(PnpError::Degenerate)?;
    let k = basis.ctrl.len();

    let mut m = DMatrix::zeros(2 * corr.len(), 3 * k);
    for (i, c) in corr.iter().enumerate() {
        for (j, &a) in basis.alphas[i].iter().enumerate() {
            m[(2 * i, 3 * j)] = a;
            m[(2 * i, 3 * j + 2)] = -a * c.image.x;
            m[(2 * i + 1, 3 * j + 1)] = a;
            m[(2 * i + 1, 3 * j + 2)] = -a * c.image.y;
        }
    }
    let mtm = m.transpose() * &m;
    let e = SymmetricEigen::new(mtm);
    let mut order: Vec<usize> = (0..3 * k).collect();
    order.sort_by(|&a, &b| e.eigenvalues[a].total_cmp(&e.eigenvalues[b]));
    let nv = if planar { 3 } else { 4 };
    let v: Vec<DVector<f64>> = order
        .iter()
        .take(nv)
        .map(|&i| e.eigenvectors.column(i).into_owned())
        .collect();

    let pairs = pairs(k);
    let rho = pairs
        .iter()
        .map(|&(a, b)| (basis.ctrl[a] - basis.ctrl[b]).norm_squared())
        .collect();
    let problem = Problem { k, v, rho, pairs };

    let mut starts: Vec<Vec<f64>> = vec![betas_n1(&problem)];
    starts.extend(betas_n2(&problem));
    if planar {
        // Only three distance constraints: the three-vector case starts
        // from the two-vector solution.
        for mut b in betas_n2(&problem) {
            b.push(0.0);
            starts.push(b);
        }
    } else {
        starts.extend(betas_n3(&problem));
        starts.extend(betas_n4_approx(&problem));
    }

    let body: Vec<Vector3<f64>> = corr.iter().map(|c| c.body).collect();
    let mut best: Option<(f64, Matrix3<f64>, Vector3<f64>)> = None;
    for mut betas in starts {
        problem.gauss_newton(&mut betas);
        let mut cam = problem.camera_points(&betas, &basis.alphas);
        if cam.iter().map(|p| p.z).sum::<f64>() < 0.0 {
            cam.iter_mut().for_each(|p| *p = -*p);
        }
        if !cam.iter().all(|p| p.iter().all(|x| x.is_finite())) {
            continue;
        }
        let (r, t) = align(&body, &cam);
        let est = make_estimate(&r, &t, corr, SolverKind::Epnp);
        let err = reprojection_rmse(&est.t_cb, corr);
        if err.is_finite() && best.as_ref().is_none_or(|b| err < b.0) {
            best = Some((err, r, t));
        }
    }
    let (_, r, t) = best.ok_or(PnpError::Failed("no finite EPnP solution"))?;
    Ok(make_estimate(&r, &t, corr, SolverKind::Epnp))
}
