//! Trust-region Sℓ₁QP solver for the single-shooting OCP.
//!
//! Decision variables are the `N·m` stacked inputs. States are eliminated by
//! rollout and first derivatives come from forward sensitivities. The model
//! Hessian is the Lagrangian Hessian from central differences of an adjoint
//! gradient, convexified along the normals of active constraints near a
//! feasible point and by eigenvalue clipping elsewhere. Input bounds are kept
//! exactly in every subproblem; the nonlinear constraints enter through
//! elastic ℓ₁ slacks so that every subproblem is feasible, which also yields a
//! minimum-violation iterate when the OCP itself is infeasible.

use nalgebra::{DMatrix, DVector};

use super::qp::{solve_elastic_qp, QpSettings, QpStatus};
use super::{evaluate, worst_violation, OcpProblem, PredictedSolution, SolverStatus};
use crate::linalg::weight_factor;
use crate::sampling::Halton;
use crate::{Error, Result};

/// Internal back-offs keep converged iterates strictly inside the acceptance
/// tolerances.
const STATE_BACKOFF: f64 = 1e-9;
const TERMINAL_BACKOFF: f64 = 1e-7;
const STABILITY_BACKOFF: f64 = 1e-9;
const MAX_PENALTY: f64 = 1e8;
const MIN_PENALTY: f64 = 1e-2;
const MULTISTART_SEED: u64 = 0x5eed;
const STALL_WINDOW: usize = 25;
const HESSIAN_FD_STEP: f64 = 1e-5;
const BOUND_ACTIVE_TOL: f64 = 1e-8;
const NEAR_FEASIBLE: f64 = 1e-2;

#[derive(Debug, Clone, Copy)]
pub struct SqpSettings {
    pub max_iterations: usize,
    pub kkt_tolerance: f64,
    pub initial_radius: f64,
    /// Additional starting points tried when a run ends without an
    /// acceptable iterate: the terminal-controller rollout, zero (after a warm
    /// start), then quasi-random input sequences.
    pub restarts: usize,
}

impl Default for SqpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            kkt_tolerance: 1e-7,
            initial_radius: 0.5,
            restarts: 6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Best iterate: the lowest-cost feasible one, or the least-violating one
    /// when no feasible iterate was found.
    pub solution: PredictedSolution,
    pub iterations: usize,
    pub kkt: f64,
    /// Worst remaining constraint violation of the returned iterate.
    pub violation: Option<(String, f64)>,
}

struct Eval {
    cost: f64,
    grad: DVector<f64>,
    /// Gauss–Newton cost Hessian `2 JᵀJ`.
    gn: DMatrix<f64>,
    /// Scaled constraint values (≤ 0 feasible) and their Jacobian.
    cons: DVector<f64>,
    cons_jac: DMatrix<f64>,
    /// Whether the point meets every constraint within the acceptance
    /// tolerances.
    acceptable: bool,
}

struct Layout {
    n: usize,
    m: usize,
    horizon: usize,
    has_phi: bool,
    phi_scale: f64,
    eps2: f64,
}

impl Layout {
    fn new(p: &OcpProblem<'_>) -> Self {
        Self {
            n: p.model.state_dim(),
            m: p.model.input_dim(),
            horizon: p.horizon,
            has_phi: p.phi.is_some(),
            phi_scale: p.phi.map_or(1.0, |v| v.abs().max(1.0)),
            eps2: p.ing.eps * p.ing.eps,
        }
    }

    fn n_state_cons(&self) -> usize {
        2 * self.n * self.horizon.saturating_sub(1)
    }

    fn n_cons(&self) -> usize {
        self.n_state_cons() + 1 + usize::from(self.has_phi)
    }
}

fn unpack(x: &DVector<f64>, m: usize) -> Vec<DVector<f64>> {
    x.as_slice().chunks(m).map(DVector::from_column_slice).collect()
}

fn pack(u: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(u.iter().map(|v| v.len()).sum(), u.iter().flat_map(|v| v.iter().copied()))
}

fn evaluate_point(p: &OcpProblem<'_>, lay: &Layout, x: &DVector<f64>, factors: &Factors) -> Result<Eval> {
    let (n, m, hz) = (lay.n, lay.m, lay.horizon);
    let nu = hz * m;
    let u = unpack(x, m);

    // forward rollout with sensitivities
    let mut e = Vec::with_capacity(hz + 1);
    let mut sens = Vec::with_capacity(hz + 1);
    e.push(p.e0.clone());
    sens.push(DMatrix::<f64>::zeros(n, nu));
    for t in 0..hz {
        let (a, b) = p.model.jacobians(&e[t], &u[t], &p.references[t]);
        let next = p.model.step(&e[t], &u[t], &p.references[t]);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::DivergedRollout { step: t + 1 });
        }
        let mut s_next = &a * &sens[t];
        let mut block = s_next.columns_mut(t * m, m);
        block += &b;
        e.push(next);
        sens.push(s_next);
    }
    let mut s = vec![p.s0];
    for t in 0..hz {
        s.push(p.sync.step(s[t], &u[t], &p.references[t]));
    }

    // residuals: stage part, then coupling part
    let n_cpl: usize = p.assumed.len() * hz;
    let n_stage_res = hz * n + hz * m + n;
    let mut res = DVector::zeros(n_stage_res + n_cpl);
    let mut jac = DMatrix::zeros(n_stage_res + n_cpl, nu);
    let mut row = 0;
    for t in 0..hz {
        res.rows_mut(row, n).copy_from(&(&factors.q * &e[t]));
        jac.rows_mut(row, n).copy_from(&(&factors.q * &sens[t]));
        row += n;
    }
    for t in 0..hz {
        res.rows_mut(row, m).copy_from(&(&factors.r * &u[t]));
        jac.view_mut((row, t * m), (m, m)).copy_from(&factors.r);
        row += m;
    }
    res.rows_mut(row, n).copy_from(&(&factors.p * &e[hz]));
    jac.rows_mut(row, n).copy_from(&(&factors.p * &sens[hz]));
    row += n;
    let dy = &p.sync.y * p.sync.period;
    for (rho, hat) in &p.assumed {
        let w = rho.sqrt();
        for t in 0..hz {
            res[row] = w * (s[t] - hat[t]);
            for k in 0..t {
                for c in 0..m {
                    jac[(row, k * m + c)] = w * dy[c];
                }
            }
            row += 1;
        }
    }

    let cost = res.norm_squared();
    let jt = jac.transpose();
    let grad = &jt * &res * 2.0;
    let gn = &jt * &jac * 2.0;
    let js = jac.rows(0, n_stage_res);
    let stage = res.rows(0, n_stage_res).norm_squared();
    let grad_stage = js.transpose() * res.rows(0, n_stage_res) * 2.0;

    // constraints
    let nc = lay.n_cons();
    let mut cons = DVector::zeros(nc);
    let mut cons_jac = DMatrix::zeros(nc, nu);
    let mut r = 0;
    for t in 1..hz {
        let bx = &p.state_boxes[t];
        for j in 0..n {
            cons[r] = e[t][j] - (bx.upper[j] - STATE_BACKOFF);
            cons_jac.row_mut(r).copy_from(&sens[t].row(j));
            cons[r + 1] = (bx.lower[j] + STATE_BACKOFF) - e[t][j];
            cons_jac.row_mut(r + 1).copy_from(&(-sens[t].row(j)));
            r += 2;
        }
    }
    let pe = &p.ing.p * &e[hz];
    cons[r] = (e[hz].dot(&pe) - lay.eps2 * (1.0 - TERMINAL_BACKOFF)) / lay.eps2;
    cons_jac.row_mut(r).copy_from(&((sens[hz].transpose() * &pe).transpose() * (2.0 / lay.eps2)));
    r += 1;
    if let Some(phi) = p.phi {
        cons[r] = (stage - phi + STABILITY_BACKOFF * lay.phi_scale) / lay.phi_scale;
        cons_jac.row_mut(r).copy_from(&(grad_stage.transpose() / lay.phi_scale));
    }

    let acceptable = worst_violation(p, &e, &u, stage).is_none();
    Ok(Eval {
        acceptable,
        cost,
        grad,
        gn,
        cons,
        cons_jac,
    })
}

struct Factors {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    p: DMatrix<f64>,
}

/// Gradient of the Lagrangian `J + λᵀc` by one forward rollout and a
/// backward adjoint sweep.
fn lagrangian_gradient(p: &OcpProblem<'_>, lay: &Layout, x: &DVector<f64>, lambda: &DVector<f64>) -> Option<DVector<f64>> {
    let (n, m, hz) = (lay.n, lay.m, lay.horizon);
    let u = unpack(x, m);
    let mut e = Vec::with_capacity(hz + 1);
    let mut jacobians = Vec::with_capacity(hz);
    e.push(p.e0.clone());
    for t in 0..hz {
        jacobians.push(p.model.jacobians(&e[t], &u[t], &p.references[t]));
        let next = p.model.step(&e[t], &u[t], &p.references[t]);
        if !next.iter().all(|v| v.is_finite()) {
            return None;
        }
        e.push(next);
    }
    let mut s = vec![p.s0];
    for t in 0..hz {
        s.push(p.sync.step(s[t], &u[t], &p.references[t]));
    }

    let stage_weight = 1.0 + if lay.has_phi { lambda[lay.n_cons() - 1] / lay.phi_scale } else { 0.0 };
    let terminal_weight = lambda[lay.n_state_cons()] / lay.eps2;
    let mut grad = DVector::zeros(hz * m);
    let mut adjoint = (&p.ing.p * &e[hz]) * (2.0 * stage_weight + 2.0 * terminal_weight);
    for t in (0..hz).rev() {
        let (a, b) = &jacobians[t];
        let mut g_u = b.transpose() * &adjoint + (&p.ing.r * &u[t]) * (2.0 * stage_weight);
        // coupling: s(τ) depends on u(t) for every τ > t
        let dy = &p.sync.y * p.sync.period;
        for (rho, hat) in &p.assumed {
            let tail: f64 = (t + 1..hz).map(|tau| s[tau] - hat[tau]).sum();
            g_u += &dy * (2.0 * rho * tail);
        }
        grad.rows_mut(t * m, m).copy_from(&g_u);
        if t > 0 {
            let mut w = (&p.ing.q * &e[t]) * (2.0 * stage_weight);
            let base = 2 * n * (t - 1);
            for j in 0..n {
                w[j] += lambda[base + 2 * j] - lambda[base + 2 * j + 1];
            }
            adjoint = a.transpose() * adjoint + w;
        }
    }
    Some(grad)
}

/// Hessian of the Lagrangian `J + λᵀc` by central differences of its exact
/// gradient, projected onto the positive-definite cone by eigenvalue clipping.
fn lagrangian_hessian(
    p: &OcpProblem<'_>,
    lay: &Layout,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    cons_jac: &DMatrix<f64>,
    near_feasible: bool,
) -> Option<DMatrix<f64>> {
    let nu = x.len();
    let grad_l = |y: &DVector<f64>| lagrangian_gradient(p, lay, y, lambda);
    let mut h = DMatrix::zeros(nu, nu);
    for k in 0..nu {
        let step = HESSIAN_FD_STEP * (1.0 + x[k].abs());
        let mut xp = x.clone();
        xp[k] += step;
        let mut xm = x.clone();
        xm[k] -= step;
        let col = (grad_l(&xp)? - grad_l(&xm)?) / (2.0 * step);
        h.set_column(k, &col);
    }
    let h = crate::linalg::symmetrize(&h);
    let floor = 1e-8 * (1.0 + h.amax());
    let with_floor = |mut m: DMatrix<f64>| {
        for i in 0..nu {
            m[(i, i)] += floor;
        }
        m
    };
    // Near a feasible point, convexify along the normals of the active
    // constraints and bounds; this leaves the curvature in the tangent space
    // untouched. Elsewhere fall back to eigenvalue clipping.
    let plain = with_floor(h.clone());
    if plain.clone().cholesky().is_some() {
        return Some(plain);
    }
    let active: Vec<usize> = (0..lambda.len()).filter(|&i| lambda[i] > 1e-10).collect();
    let at_bound: Vec<usize> = (0..nu)
        .filter(|&k| {
            let (lo, hi) = (p.input_set.lower[k % lay.m], p.input_set.upper[k % lay.m]);
            x[k] - lo <= BOUND_ACTIVE_TOL * (1.0 + lo.abs()) || hi - x[k] <= BOUND_ACTIVE_TOL * (1.0 + hi.abs())
        })
        .collect();
    if near_feasible && (!active.is_empty() || !at_bound.is_empty()) {
        let mut ata = DMatrix::zeros(nu, nu);
        for &i in &active {
            let row = cons_jac.row(i);
            ata += row.transpose() * row;
        }
        for &k in &at_bound {
            ata[(k, k)] += 1.0;
        }
        let scale = (1.0 + h.amax()) / (1.0 + ata.amax());
        let mut rho = scale;
        for _ in 0..8 {
            let candidate = with_floor(&h + &ata * rho);
            if candidate.clone().cholesky().is_some() {
                return Some(candidate);
            }
            rho *= 10.0;
        }
    }
    let eig = h.symmetric_eigen();
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose())
}

fn violation(cons: &DVector<f64>) -> f64 {
    cons.iter().map(|c| c.max(0.0)).sum()
}

/// Least-norm correction that pulls the constraints that are active in the
/// linearization, or violated at the trial point, back onto their
/// linearization around the current iterate (counteracts the curvature that
/// otherwise makes the ℓ₁ merit reject good steps).
fn second_order_correction(
    ev: &Eval,
    lin: &DVector<f64>,
    trial: &Eval,
    x: &DVector<f64>,
    d: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
) -> Option<DVector<f64>> {
    let active: Vec<usize> = (0..lin.len())
        .filter(|&i| lin[i] >= -1e-8 || trial.cons[i] > 0.0)
        .collect();
    if active.is_empty() {
        return None;
    }
    let nu = d.len();
    let ca = DMatrix::from_fn(active.len(), nu, |r, c| ev.cons_jac[(active[r], c)]);
    let rhs = DVector::from_iterator(
        active.len(),
        active.iter().map(|&i| trial.cons[i] - lin[i].max(0.0)),
    );
    let mut gram = &ca * ca.transpose();
    let reg = 1e-12 * (1.0 + gram.amax());
    for i in 0..active.len() {
        gram[(i, i)] += reg;
    }
    let y = gram.cholesky()?.solve(&rhs);
    let corr = -(ca.transpose() * y);
    let mut out = x + d + corr;
    for k in 0..nu {
        out[k] = out[k].clamp(lb[k], ub[k]);
    }
    Some(out)
}

struct Run {
    /// Best iterate: `(acceptable, violation, cost, x)`.
    best: (bool, f64, f64, DVector<f64>),
    iterations: usize,
    kkt: f64,
    converged: bool,
}

/// Inputs of the local controller applied along its own nominal rollout.
fn feedback_start(p: &OcpProblem<'_>, m: usize) -> DVector<f64> {
    let mut e = p.e0.clone();
    let mut u_seq = Vec::with_capacity(p.horizon);
    for r in &p.references {
        let u = p.ing.feedback(&e).zip_map(&p.input_set.lower, f64::max).zip_map(&p.input_set.upper, f64::min);
        e = p.model.step(&e, &u, r);
        u_seq.push(u);
    }
    debug_assert!(u_seq.iter().all(|u| u.len() == m));
    pack(&u_seq)
}

/// One trust-region SQP run from `x0`.
fn run(
    problem: &OcpProblem<'_>,
    lay: &Layout,
    factors: &Factors,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
    x0: DVector<f64>,
    settings: SqpSettings,
) -> Result<Run> {
    let (nu, nc) = (lay.horizon * lay.m, lay.n_cons());
    let lay = lay;
    let mut x = x0;
    for i in 0..nu {
        x[i] = x[i].clamp(lb[i], ub[i]);
    }

    let mut ev = evaluate_point(problem, &lay, &x, &factors)?;
    let mut radius = settings.initial_radius;
    let mut penalty = 10.0_f64.max(ev.cost);
    let mut lambda = DVector::<f64>::zeros(nc);
    let mut best: Option<(bool, f64, f64, DVector<f64>)> = None; // (feasible, violation, cost, x)
    let mut kkt = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut stall_ref = f64::INFINITY;
    let mut stall_since = 0;

    let mut record = |x: &DVector<f64>, ev: &Eval| {
        let v = violation(&ev.cons);
        let feasible = ev.acceptable;
        let better = match &best {
            None => true,
            Some((bf, bv, bc, _)) => match (feasible, *bf) {
                (true, true) => ev.cost < *bc,
                (true, false) => true,
                (false, true) => false,
                (false, false) => v < *bv,
            },
        };
        if better {
            best = Some((feasible, v, ev.cost, x.clone()));
        }
    };
    record(&x, &ev);

    while iterations < settings.max_iterations {
        iterations += 1;

        // Hessian model
        let hess = lagrangian_hessian(
            problem,
            &lay,
            &x,
            &lambda,
            &ev.cons_jac,
            violation(&ev.cons) <= NEAR_FEASIBLE,
        ).unwrap_or_else(|| {
            let mut h = ev.gn.clone();
            for i in 0..nu {
                h[(i, i)] += 1e-10;
            }
            h
        });

        // elastic QP in (d, t)
        // elastic QP on the step, inside the trust region and the input box
        let lo = DVector::from_iterator(nu, (0..nu).map(|k| (lb[k] - x[k]).max(-radius)));
        let hi = DVector::from_iterator(nu, (0..nu).map(|k| (ub[k] - x[k]).min(radius)));
        let feasibility_hess = DMatrix::<f64>::identity(nu, nu) * 1e-8;
        let zero_grad = DVector::<f64>::zeros(nu);
        let subproblem = |objective: Option<f64>| {
            let (h, g, weight) = match objective {
                Some(weight) => (&hess, &ev.grad, weight),
                // pure linearized-infeasibility minimization
                None => (&feasibility_hess, &zero_grad, 1.0),
            };
            let sol = solve_elastic_qp(h, g, &ev.cons_jac, &ev.cons, &lo, &hi, weight, QpSettings::default());
            if sol.status == QpStatus::Numerical {
                return None;
            }
            let lin = &ev.cons + &ev.cons_jac * &sol.d;
            Some((sol.d, sol.z, lin))
        };
        let viol_now = violation(&ev.cons);
        // Near feasibility, keep the ℓ₁ penalty a modest multiple of the
        // multipliers: an oversized penalty makes the merit punish the
        // second-order violation of curved constraints and stalls the
        // trust region. Steering below raises it again when needed.
        if viol_now <= NEAR_FEASIBLE && iterations > 1 {
            penalty = penalty.min((10.0 * lambda.amax()).max(MIN_PENALTY));
        }
        let mut best_lin: Option<f64> = None;
        let step = loop {
            let Some((d, lam, lin)) = subproblem(Some(penalty)) else { break None };
            let viol_lin = violation(&lin);
            if viol_lin <= 1e-12 || penalty >= MAX_PENALTY {
                break Some((d, lam, lin));
            }
            // steering: the step must achieve a fair share of the linearized
            // infeasibility reduction that is possible inside the trust region
            let target = match best_lin {
                Some(v) => v,
                None => {
                    let v = subproblem(None).map_or(viol_lin, |(_, _, l)| violation(&l));
                    best_lin = Some(v);
                    v
                }
            };
            if viol_now - viol_lin >= 0.1 * (viol_now - target) - 1e-14 {
                break Some((d, lam, lin));
            }
            penalty = (penalty * 10.0).min(MAX_PENALTY);
        };
        let Some((d, lam, lin)) = step else { break };
        lambda = lam;

        let d_norm = d.amax();
        let model_red = -(ev.grad.dot(&d) + 0.5 * d.dot(&(&hess * &d)))
            + penalty * (violation(&ev.cons) - violation(&lin));

        // first-order optimality of the current iterate
        let stationarity = (&hess * &d).amax();
        let feas = ev.cons.iter().fold(0.0_f64, |acc, &v| acc.max(v));
        let compl = ev
            .cons
            .iter()
            .zip(lambda.iter())
            .fold(0.0_f64, |acc, (&c, &l)| acc.max((c * l).abs()));
        let tr_active = d_norm >= 0.999 * radius;
        kkt = stationarity.max(feas.max(0.0)).max(compl);
        if !tr_active && kkt <= settings.kkt_tolerance && ev.acceptable {
            converged = true;
            break;
        }
        if d_norm <= 1e-14 || model_red <= 1e-16 * (1.0 + ev.cost.abs()) {
            converged = ev.acceptable && kkt <= settings.kkt_tolerance;
            break;
        }

        let merit_now = ev.cost + penalty * viol_now;
        let ratio_of = |tev: &Eval| (merit_now - (tev.cost + penalty * violation(&tev.cons))) / model_red;
        let trial = &x + &d;
        let mut accepted = None;
        if let Ok(tev) = evaluate_point(problem, &lay, &trial, &factors) {
            let ratio = ratio_of(&tev);
            // Along curved constraints a corrected step often follows the
            // boundary much better than the plain one.
            let corrected = if ratio < 0.75 {
                second_order_correction(&ev, &lin, &tev, &x, &d, &lb, &ub)
                    .and_then(|c| evaluate_point(problem, &lay, &c, &factors).ok().map(|cev| (c, cev)))
                    .map(|(c, cev)| {
                        let r = ratio_of(&cev);
                        (c, cev, r)
                    })
            } else {
                None
            };
            accepted = match corrected {
                Some(c) if c.2 >= 0.1 && c.2 > ratio => Some(c),
                _ if ratio >= 0.1 => Some((trial, tev, ratio)),
                _ => None,
            };
        }
        let accepted = match accepted {
            Some((xn, tev, ratio)) => {
                if ratio > 0.75 && tr_active {
                    radius = (2.0 * radius).min(4.0);
                } else if ratio < 0.25 {
                    radius = 0.5 * radius;
                }
                Some((xn, tev))
            }
            None => {
                radius = 0.25 * d_norm;
                None
            }
        };
        if let Some((xn, tev)) = accepted {
            x = xn;
            ev = tev;
            record(&x, &ev);
        }
        // give up on runs stuck at a local minimizer of the infeasibility
        if ev.acceptable {
            stall_ref = f64::INFINITY;
            stall_since = iterations;
        } else {
            let v = violation(&ev.cons);
            if v < stall_ref * (1.0 - 1e-3) {
                stall_ref = v;
                stall_since = iterations;
            } else if iterations - stall_since >= STALL_WINDOW {
                break;
            }
        }
        if radius < 1e-12 {
            break;
        }
    }

    Ok(Run {
        best: best.expect("initial iterate recorded"),
        iterations,
        kkt,
        converged,
    })
}

/// Solves the OCP from `warm_start` (zeros when absent). Never fails on
/// infeasibility: the report carries the best iterate and its worst violation.
pub fn solve_detailed(
    problem: &OcpProblem<'_>,
    warm_start: Option<&[DVector<f64>]>,
    settings: SqpSettings,
) -> Result<SolveReport> {
    problem.validate()?;
    let lay = Layout::new(problem);
    let (m, hz) = (lay.m, lay.horizon);
    let nu = hz * m;
    let ing = problem.ing;
    let factors = Factors {
        q: weight_factor(&ing.q)?,
        r: weight_factor(&ing.r)?,
        p: weight_factor(&ing.p)?,
    };
    let lb = DVector::from_iterator(nu, (0..nu).map(|i| problem.input_set.lower[i % m]));
    let ub = DVector::from_iterator(nu, (0..nu).map(|i| problem.input_set.upper[i % m]));

    let mut starts: Vec<DVector<f64>> = Vec::new();
    match warm_start {
        Some(w) if w.len() == hz => starts.push(pack(w)),
        _ => starts.push(DVector::zeros(nu)),
    }
    let mut total_iterations = 0;
    let mut chosen: Option<Run> = None;
    let mut attempt = 0;
    let mut halton = Halton::new(nu.min(12), MULTISTART_SEED);
    while attempt <= settings.restarts {
        let x0 = match starts.get(attempt) {
            Some(x0) => x0.clone(),
            None if attempt == 1 => feedback_start(problem, m),
            None if attempt == 2 && warm_start.is_some() => DVector::zeros(nu),
            None => {
                let unit = halton.next_point();
                DVector::from_iterator(nu, (0..nu).map(|i| lb[i] + unit[i % unit.len()] * (ub[i] - lb[i])))
            }
        };
        let r = run(problem, &lay, &factors, &lb, &ub, x0, settings)?;
        total_iterations += r.iterations;
        let better = match &chosen {
            None => true,
            Some(c) => match (r.best.0, c.best.0) {
                (true, true) => r.best.2 < c.best.2,
                (true, false) => true,
                (false, true) => false,
                (false, false) => r.best.1 < c.best.1,
            },
        };
        if better {
            chosen = Some(r);
        }
        if chosen.as_ref().is_some_and(|c| c.best.0) {
            break;
        }
        attempt += 1;
    }
    let Run { best, kkt, converged, .. } = chosen.expect("at least one start");
    let best_x = best.3;
    let iterations = total_iterations;
    let mut solution = evaluate(problem, unpack(&best_x, m), SolverStatus::Converged)?;
    let worst = worst_violation(problem, &solution.e_seq, &solution.u_seq, solution.stage_cost);
    solution.status = match (&worst, converged) {
        (Some(_), _) => SolverStatus::Infeasible,
        (None, true) => SolverStatus::Converged,
        (None, false) => SolverStatus::MaxIter,
    };
    log::debug!(
        "sqp: {} iterations, kkt {:.2e}, status {}",
        iterations,
        kkt,
        solution.status.as_str()
    );
    Ok(SolveReport {
        solution,
        iterations,
        kkt,
        violation: worst,
    })
}

/// Solves the OCP; infeasibility is an error naming the most-violated
/// constraint.
pub fn solve(problem: &OcpProblem<'_>, warm_start: Option<&[DVector<f64>]>) -> Result<PredictedSolution> {
    let report = solve_detailed(problem, warm_start, SqpSettings::default())?;
    match report.violation {
        Some((constraint, violation)) => Err(Error::Infeasible { constraint, violation }),
        None => Ok(report.solution),
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{SyncLaw, Unicycle};
    use crate::ingredients::{linearize, synthesize_terminal, AgentIngredients, IngredientSpec};
    use crate::tightening::{tightened_boxes, BoxSet};
    use nalgebra::DMatrix;

    #[test]
    fn adjoint_gradient_matches_forward_sensitivities() {
        let model = Unicycle { period: 0.2 };
        let reference = DVector::from_column_slice(&[0.3, 0.1]);
        let (g, h) = linearize(&model, &reference).unwrap();
        let q = DMatrix::identity(3, 3) * 3.0;
        let r = DMatrix::identity(2, 2) * 0.01;
        let (k, p) = synthesize_terminal(&g, &h, &q, &r, 0.05).unwrap();
        let states = BoxSet::symmetric(&[0.3, 0.3, std::f64::consts::PI / 10.0]);
        let ing = AgentIngredients::new(
            IngredientSpec { k, p, q, r, eps: 0.05, eps_r: 0.06, l_g: 0.28, l_kappa: 1.0 },
            &states,
        )
        .unwrap();
        let boxes = tightened_boxes(&states, 1e-4, &ing, 6).unwrap();
        let sync = SyncLaw::new(DVector::from_column_slice(&[0.0, -1.0]), DVector::from_column_slice(&[0.0, 1.0]), 0.2).unwrap();
        let inputs = BoxSet::symmetric(&[1.0, 1.0]);
        let problem = OcpProblem {
            model: &model,
            ing: &ing,
            sync: &sync,
            horizon: 6,
            e0: DVector::from_column_slice(&[0.1, -0.2, 0.05]),
            s0: 0.3,
            references: vec![reference; 6],
            assumed: vec![(1.0, vec![0.25, 0.2, 0.3, 0.1, 0.0, -0.1]), (0.5, vec![0.4; 6])],
            phi: Some(0.7),
            input_set: &inputs,
            state_boxes: &boxes,
        };
        let lay = Layout::new(&problem);
        let factors = Factors {
            q: weight_factor(&ing.q).unwrap(),
            r: weight_factor(&ing.r).unwrap(),
            p: weight_factor(&ing.p).unwrap(),
        };
        let x = DVector::from_fn(12, |i, _| 0.3 * ((i as f64) * 1.7).sin());
        let lambda = DVector::from_fn(lay.n_cons(), |i, _| 0.1 + 0.05 * ((i as f64) * 0.9).cos());
        let ev = evaluate_point(&problem, &lay, &x, &factors).unwrap();
        let reference = &ev.grad + ev.cons_jac.transpose() * &lambda;
        let adjoint = lagrangian_gradient(&problem, &lay, &x, &lambda).unwrap();
        for i in 0..12 {
            assert!((adjoint[i] - reference[i]).abs() <= 1e-10 * (1.0 + reference[i].abs()), "{i}: {} vs {}", adjoint[i], reference[i]);
        }
    }
}
