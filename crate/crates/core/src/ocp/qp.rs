//! Dense convex QP `min ½xᵀHx + cᵀx  s.t.  Ax ≤ b` by a Mehrotra
//! predictor–corrector primal–dual interior-point method, followed by an
//! active-set polish that recovers the exact solution of the identified
//! active set.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    /// The reduced Newton system could not be factorized.
    Numerical,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of the rows of `A` (nonnegative).
    pub z: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 80,
        }
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&x, &d)| -x / d)
        .fold(1.0, f64::min)
}

pub fn solve_qp(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    settings: QpSettings,
) -> QpSolution {
    let sol = interior_point(h, c, a, b, settings);
    if sol.status == QpStatus::Numerical {
        return sol;
    }
    match polish(h, c, a, b, &sol) {
        Some(polished) => polished,
        None => sol,
    }
}

/// Re-solves the equality-constrained problem on the constraints the
/// interior-point iterate identifies as active. Accepted only when the result
/// is primal feasible, dual feasible and not worse than the unpolished point.
fn polish(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    sol: &QpSolution,
) -> Option<QpSolution> {
    let n = c.len();
    let slack = b - a * &sol.x;
    let active: Vec<usize> = (0..b.len()).filter(|&i| sol.z[i] > slack[i]).collect();
    let k = active.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-c));
    for (r, &i) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = a[(i, j)];
            kkt[(j, n + r)] = a[(i, j)];
        }
        rhs[n + r] = b[i];
    }
    let y = kkt.lu().solve(&rhs)?;
    if !y.iter().all(|v| v.is_finite()) {
        return None;
    }
    let x = y.rows(0, n).into_owned();
    let scale = 1.0 + b.amax() + c.amax();
    let tol = 1e-9 * scale;
    if (a * &x - b).iter().any(|&v| v > tol) {
        return None;
    }
    let mut z = DVector::zeros(b.len());
    for (r, &i) in active.iter().enumerate() {
        if y[n + r] < -tol {
            return None;
        }
        z[i] = y[n + r].max(0.0);
    }
    let objective = |x: &DVector<f64>| 0.5 * x.dot(&(h * x)) + c.dot(x);
    if objective(&x) > objective(&sol.x) + tol * (1.0 + objective(&sol.x).abs()) {
        return None;
    }
    Some(QpSolution {
        x,
        z,
        status: QpStatus::Solved,
        iterations: sol.iterations,
    })
}

fn interior_point(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    settings: QpSettings,
) -> QpSolution {
    let n = c.len();
    let p = b.len();
    let at = a.transpose();
    let mut x = DVector::zeros(n);
    let mut s = (b - a * &x).map(|v| v.max(1.0));
    let mut z = DVector::from_element(p, 1.0);
    let scale_d = 1.0 + c.amax();
    let scale_p = 1.0 + b.amax();
    let reg = 1e-12 * (1.0 + h.amax());

    for it in 0..settings.max_iterations {
        let r_d = h * &x + c + &at * &z;
        let r_p = a * &x + &s - b;
        let mu = if p > 0 { s.dot(&z) / p as f64 } else { 0.0 };
        if r_d.amax() <= settings.tolerance * scale_d
            && (p == 0 || r_p.amax() <= settings.tolerance * scale_p)
            && mu <= settings.tolerance
        {
            return QpSolution { x, z, status: QpStatus::Solved, iterations: it };
        }

        let w = z.component_div(&s);
        let mut kkt = h.clone();
        for i in 0..p {
            let row = a.row(i);
            let wi = w[i];
            for (j, &aj) in row.iter().enumerate() {
                if aj == 0.0 {
                    continue;
                }
                for (k, &ak) in row.iter().enumerate() {
                    if ak != 0.0 {
                        kkt[(j, k)] += wi * aj * ak;
                    }
                }
            }
        }
        let scale = 1.0 + kkt.amax();
        let mut chol = None;
        for level in [reg, 1e-10 * scale, 1e-7 * scale] {
            let mut m = kkt.clone();
            for j in 0..n {
                m[(j, j)] += level;
            }
            if let Some(c) = m.cholesky() {
                chol = Some(c);
                break;
            }
        }
        let Some(chol) = chol else {
            return QpSolution { x, z, status: QpStatus::Numerical, iterations: it };
        };

        let newton = |r_c: &DVector<f64>| {
            let rhs = -&r_d - &at * (w.component_mul(&r_p) - r_c.component_div(&s));
            let dx = chol.solve(&rhs);
            let dz = w.component_mul(&(a * &dx + &r_p)) - r_c.component_div(&s);
            let ds = -&r_p - a * &dx;
            (dx, ds, dz)
        };

        // predictor
        let r_c = s.component_mul(&z);
        let (_, ds_a, dz_a) = newton(&r_c);
        let alpha_a = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let mu_aff = (&s + &ds_a * alpha_a).dot(&(&z + &dz_a * alpha_a)) / p.max(1) as f64;
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).min(1.0) } else { 0.0 };

        // corrector
        let r_c = s.component_mul(&z) + ds_a.component_mul(&dz_a) - DVector::from_element(p, sigma * mu);
        let (dx, ds, dz) = newton(&r_c);
        let alpha = (0.995 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        x += &dx * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
        s.apply(|v| *v = v.max(1e-300));
        z.apply(|v| *v = v.max(1e-300));
    }
    QpSolution {
        x,
        z,
        status: QpStatus::MaxIterations,
        iterations: settings.max_iterations,
    }
}

/// Solution of an elastic QP.
#[derive(Debug, Clone)]
pub struct ElasticSolution {
    pub d: DVector<f64>,
    /// Multipliers of the linearized constraints, in `[0, weight]`.
    pub z: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

/// Constraint rows of the elastic QP in the variables `(d, t)`:
/// `Jd − t ≤ −c`, `−t ≤ 0`, `d ≤ hi`, `−d ≤ −lo`, stacked in that order.
struct ElasticRows<'a> {
    jac: &'a DMatrix<f64>,
    jt: DMatrix<f64>,
    n: usize,
    p: usize,
}

impl ElasticRows<'_> {
    fn mul(&self, d: &DVector<f64>, t: &DVector<f64>) -> DVector<f64> {
        let (n, p) = (self.n, self.p);
        let mut out = DVector::zeros(2 * p + 2 * n);
        out.rows_mut(0, p).copy_from(&(self.jac * d - t));
        out.rows_mut(p, p).copy_from(&(-t));
        out.rows_mut(2 * p, n).copy_from(d);
        out.rows_mut(2 * p + n, n).copy_from(&(-d));
        out
    }

    fn mul_t(&self, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (n, p) = (self.n, self.p);
        let y1 = y.rows(0, p);
        let vd = &self.jt * y1 + y.rows(2 * p, n) - y.rows(2 * p + n, n);
        let vt = -(y1 + y.rows(p, p));
        (vd, vt)
    }
}

/// Elastic QP with box bounds:
///
/// `min ½dᵀHd + gᵀd + w·Σ max(0, c + Jd)  s.t.  lo ≤ d ≤ hi`
///
/// solved with slacks `t ≥ 0`, `c + Jd ≤ t` by the same predictor–corrector
/// scheme as [`solve_qp`]. The slack block of the Newton system is diagonal
/// and is eliminated, so each iteration factorizes a matrix of the size of
/// `d` only. An active-set polish recovers the exact solution.
#[allow(clippy::too_many_arguments)]
pub fn solve_elastic_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    jac: &DMatrix<f64>,
    c: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    weight: f64,
    settings: QpSettings,
) -> ElasticSolution {
    let n = g.len();
    let p = c.len();
    let rows = ElasticRows { jac, jt: jac.transpose(), n, p };
    let m = 2 * p + 2 * n;
    let mut b = DVector::zeros(m);
    b.rows_mut(0, p).copy_from(&(-c));
    b.rows_mut(2 * p, n).copy_from(hi);
    b.rows_mut(2 * p + n, n).copy_from(&(-lo));

    let mut d = DVector::zeros(n);
    let mut t = DVector::zeros(p);
    let mut s = (&b - rows.mul(&d, &t)).map(|v| v.max(1.0));
    let mut z = DVector::from_element(m, 1.0);
    let scale_d = 1.0 + g.amax().max(weight);
    let scale_p = 1.0 + b.amax();
    let reg = 1e-12 * (1.0 + h.amax());

    let mut status = QpStatus::MaxIterations;
    let mut iterations = settings.max_iterations;
    for it in 0..settings.max_iterations {
        let (atz_d, atz_t) = rows.mul_t(&z);
        let r_d = h * &d + g + atz_d;
        let r_t = DVector::from_element(p, weight) + atz_t;
        let r_p = rows.mul(&d, &t) + &s - &b;
        let mu = s.dot(&z) / m as f64;
        if r_d.amax().max(r_t.amax()) <= settings.tolerance * scale_d
            && r_p.amax() <= settings.tolerance * scale_p
            && mu <= settings.tolerance
        {
            status = QpStatus::Solved;
            iterations = it;
            break;
        }

        let w = z.component_div(&s);
        let w1 = w.rows(0, p).into_owned();
        let w2 = w.rows(p, p).into_owned();
        let wt = &w1 + &w2;
        let schur = w1.zip_map(&w2, |a, b| a * b / (a + b));
        let mut kkt = h.clone();
        for r in 0..p {
            let row = jac.row(r);
            kkt.ger(schur[r], &row.transpose(), &row.transpose(), 1.0);
        }
        for k in 0..n {
            kkt[(k, k)] += w[2 * p + k] + w[2 * p + n + k];
        }
        let kscale = 1.0 + kkt.amax();
        let mut chol = None;
        for level in [reg, 1e-10 * kscale, 1e-7 * kscale] {
            let mut mtx = kkt.clone();
            for k in 0..n {
                mtx[(k, k)] += level;
            }
            if let Some(f) = mtx.cholesky() {
                chol = Some(f);
                break;
            }
        }
        let Some(chol) = chol else {
            status = QpStatus::Numerical;
            iterations = it;
            break;
        };

        // (Q + AᵀWA) dx = −r_d − Aᵀ(W r_p − r_c/s), with the t-block eliminated
        let newton = |r_c: &DVector<f64>| {
            let y = w.component_mul(&r_p) - r_c.component_div(&s);
            let (yd, yt) = rows.mul_t(&y);
            let rd = -&r_d - yd;
            let rt = -&r_t - yt;
            // [K_dd  −JᵀW1; −W1J  diag(wt)] [dd; dt] = [rd; rt]
            let u = rt.component_div(&wt);
            let rhs = &rd + &rows.jt * w1.component_mul(&u);
            let dd = chol.solve(&rhs);
            let dt = &u + w1.component_mul(&(jac * &dd)).component_div(&wt);
            let adx = rows.mul(&dd, &dt);
            let dz = w.component_mul(&(&adx + &r_p)) - r_c.component_div(&s);
            let ds = -&r_p - adx;
            (dd, dt, ds, dz)
        };

        let r_c = s.component_mul(&z);
        let (_, _, ds_a, dz_a) = newton(&r_c);
        let alpha_a = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let mu_aff = (&s + &ds_a * alpha_a).dot(&(&z + &dz_a * alpha_a)) / m as f64;
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).min(1.0) } else { 0.0 };
        let r_c = s.component_mul(&z) + ds_a.component_mul(&dz_a) - DVector::from_element(m, sigma * mu);
        let (dd, dt, ds, dz) = newton(&r_c);
        let alpha = (0.995 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        d += &dd * alpha;
        t += &dt * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
        s.apply(|v| *v = v.max(1e-300));
        z.apply(|v| *v = v.max(1e-300));
    }

    let sol = ElasticSolution {
        d,
        z: z.rows(0, p).into_owned(),
        status,
        iterations,
    };
    if sol.status == QpStatus::Numerical {
        return sol;
    }
    let active_hi: Vec<bool> = (0..n).map(|k| z[2 * p + k] > s[2 * p + k]).collect();
    let active_lo: Vec<bool> = (0..n).map(|k| z[2 * p + n + k] > s[2 * p + n + k]).collect();
    // constraint classes: 0 inactive, 1 active with zero slack, 2 violated
    let class: Vec<u8> = (0..p)
        .map(|i| match (z[i] > s[i], z[p + i] > t[i]) {
            (false, _) => 0,
            (true, true) => 1,
            (true, false) => 2,
        })
        .collect();
    polish_elastic(h, g, jac, c, lo, hi, weight, &active_lo, &active_hi, &class, &sol).unwrap_or(sol)
}

fn elastic_objective(h: &DMatrix<f64>, g: &DVector<f64>, jac: &DMatrix<f64>, c: &DVector<f64>, w: f64, d: &DVector<f64>) -> f64 {
    0.5 * d.dot(&(h * d)) + g.dot(d) + w * (c + jac * d).iter().map(|v| v.max(0.0)).sum::<f64>()
}

/// Exact solution of the elastic QP on a guessed active set, accepted only if
/// it passes every primal and dual sign check.
#[allow(clippy::too_many_arguments)]
fn polish_elastic(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    jac: &DMatrix<f64>,
    c: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    w: f64,
    active_lo: &[bool],
    active_hi: &[bool],
    class: &[u8],
    ipm: &ElasticSolution,
) -> Option<ElasticSolution> {
    let n = g.len();
    let p = c.len();
    let mut fixed = DVector::zeros(n);
    let free: Vec<usize> = (0..n).filter(|&k| !(active_lo[k] || active_hi[k])).collect();
    for k in 0..n {
        if active_hi[k] {
            fixed[k] = hi[k];
        } else if active_lo[k] {
            fixed[k] = lo[k];
        }
    }
    let eq: Vec<usize> = (0..p).filter(|&i| class[i] == 1).collect();
    let mut g_eff = g.clone();
    for i in (0..p).filter(|&i| class[i] == 2) {
        g_eff += jac.row(i).transpose() * w;
    }
    let (nf, ne) = (free.len(), eq.len());
    let mut kkt = DMatrix::zeros(nf + ne, nf + ne);
    let mut rhs = DVector::zeros(nf + ne);
    let hx = h * &fixed;
    for (a, &ka) in free.iter().enumerate() {
        for (b, &kb) in free.iter().enumerate() {
            kkt[(a, b)] = h[(ka, kb)];
        }
        rhs[a] = -(g_eff[ka] + hx[ka]);
    }
    for (r, &i) in eq.iter().enumerate() {
        let mut acc = c[i];
        for k in 0..n {
            if !free.contains(&k) {
                acc += jac[(i, k)] * fixed[k];
            }
        }
        for (a, &ka) in free.iter().enumerate() {
            kkt[(nf + r, a)] = jac[(i, ka)];
            kkt[(a, nf + r)] = jac[(i, ka)];
        }
        rhs[nf + r] = -acc;
    }
    let y = if nf + ne == 0 { DVector::zeros(0) } else { kkt.lu().solve(&rhs)? };
    if !y.iter().all(|v| v.is_finite()) {
        return None;
    }
    let mut d = fixed;
    for (a, &ka) in free.iter().enumerate() {
        d[ka] = y[a];
    }
    let tol = 1e-9 * (1.0 + c.amax() + g.amax() + w);
    // primal checks
    if (0..n).any(|k| d[k] > hi[k] + tol || d[k] < lo[k] - tol) {
        return None;
    }
    let lin = c + jac * &d;
    let mut z = DVector::zeros(p);
    for i in 0..p {
        match class[i] {
            0 if lin[i] > tol => return None,
            2 if lin[i] < -tol => return None,
            2 => z[i] = w,
            _ => {}
        }
    }
    for (r, &i) in eq.iter().enumerate() {
        let y_i = y[nf + r];
        if y_i < -tol || y_i > w + tol {
            return None;
        }
        z[i] = y_i.clamp(0.0, w);
    }
    // dual sign checks on the fixed bounds
    let grad = h * &d + g + jac.transpose() * &z;
    for k in 0..n {
        if active_hi[k] && grad[k] > tol {
            return None;
        }
        if active_lo[k] && !active_hi[k] && grad[k] < -tol {
            return None;
        }
    }
    let obj = elastic_objective(h, g, jac, c, w, &d);
    let obj_ipm = elastic_objective(h, g, jac, c, w, &ipm.d);
    if obj > obj_ipm + tol * (1.0 + obj_ipm.abs()) {
        return None;
    }
    Some(ElasticSolution {
        d,
        z,
        status: QpStatus::Solved,
        iterations: ipm.iterations,
    })
}
