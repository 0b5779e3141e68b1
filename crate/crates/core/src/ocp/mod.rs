//! The finite-horizon optimal control problem of one agent: nominal rollout,
//! cost, tightened state constraints, terminal and stability constraints, the
//! shifted candidate sequence and the stability bound.

mod qp;
mod sqp;

pub use qp::{solve_qp, QpSettings, QpSolution, QpStatus};
pub use sqp::{solve, solve_detailed, SolveReport, SqpSettings};

use nalgebra::DVector;
use serde::Serialize;

use crate::coordination::coupling_cost;
use crate::dynamics::{ErrorModel, SyncLaw};
use crate::ingredients::AgentIngredients;
use crate::linalg::quad_form;
use crate::tightening::BoxSet;
use crate::{Error, Result};

/// Post-solve acceptance tolerances.
pub const INPUT_TOL: f64 = 1e-9;
pub const STATE_TOL: f64 = 1e-7;
pub const TERMINAL_TOL: f64 = 1e-9;
pub const STABILITY_TOL: f64 = 1e-7;

/// One instance of the OCP at a trigger instant.
#[derive(Debug, Clone)]
pub struct OcpProblem<'a> {
    pub model: &'a dyn ErrorModel,
    pub ing: &'a AgentIngredients,
    pub sync: &'a SyncLaw,
    pub horizon: usize,
    /// Measured state at the trigger instant.
    pub e0: DVector<f64>,
    /// Own synchronization value at the trigger instant.
    pub s0: f64,
    /// Reference inputs for prediction steps `0..N`.
    pub references: Vec<DVector<f64>>,
    /// `(ρ_ij, ŝ_ij)` per neighbor, sequences of length `N`.
    pub assumed: Vec<(f64, Vec<f64>)>,
    /// Stability bound; absent at the first trigger and after a broken chain.
    pub phi: Option<f64>,
    pub input_set: &'a BoxSet,
    /// Tightened state boxes `E ⊖ Λ(τ)`, indexed by `τ` (at least `N` entries).
    pub state_boxes: &'a [BoxSet],
}

impl OcpProblem<'_> {
    pub fn validate(&self) -> Result<()> {
        let n = self.model.state_dim();
        let m = self.model.input_dim();
        let checks = [
            ("initial state", n, self.e0.len()),
            ("reference horizon", self.horizon, self.references.len()),
            ("input set", m, self.input_set.dim()),
            ("terminal weight", n, self.ing.state_dim()),
            ("feedback gain", m, self.ing.input_dim()),
        ];
        for (context, expected, got) in checks {
            if expected != got {
                return Err(Error::Dimension { context, expected, got });
            }
        }
        if self.state_boxes.len() < self.horizon {
            return Err(Error::Dimension {
                context: "tightened boxes",
                expected: self.horizon,
                got: self.state_boxes.len(),
            });
        }
        if let Some((tau, b)) = self.state_boxes.iter().enumerate().find(|(_, b)| b.is_empty()) {
            return Err(Error::EmptyTightening {
                tau: Some(tau),
                component: b.first_empty_component().unwrap_or(0),
            });
        }
        for (rho, seq) in &self.assumed {
            if *rho < 0.0 {
                return Err(Error::config("coupling weight", format!("rho = {rho} is negative")));
            }
            if seq.len() != self.horizon {
                return Err(Error::Dimension {
                    context: "assumed sequence",
                    expected: self.horizon,
                    got: seq.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    Converged,
    MaxIter,
    Infeasible,
}

impl SolverStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverStatus::Converged => "converged",
            SolverStatus::MaxIter => "max-iter",
            SolverStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedSolution {
    pub u_seq: Vec<DVector<f64>>,
    pub e_seq: Vec<DVector<f64>>,
    pub s_seq: Vec<f64>,
    pub stage_cost: f64,
    pub coupling_cost: f64,
    pub total: f64,
    pub status: SolverStatus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub total: f64,
    pub stage: f64,
    pub coupling: f64,
}

/// Nominal error and synchronization rollouts of `u_seq` from `(e0, s0)`.
pub fn rollout(
    model: &dyn ErrorModel,
    sync: &SyncLaw,
    e0: &DVector<f64>,
    s0: f64,
    u_seq: &[DVector<f64>],
    references: &[DVector<f64>],
) -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
    let mut e_seq = Vec::with_capacity(u_seq.len() + 1);
    let mut s_seq = Vec::with_capacity(u_seq.len() + 1);
    e_seq.push(e0.clone());
    s_seq.push(s0);
    for (tau, (u, r)) in u_seq.iter().zip(references).enumerate() {
        let next = model.step(&e_seq[tau], u, r);
        let s_next = sync.step(s_seq[tau], u, r);
        if !next.iter().all(|v| v.is_finite()) || !s_next.is_finite() {
            return Err(Error::DivergedRollout { step: tau + 1 });
        }
        e_seq.push(next);
        s_seq.push(s_next);
    }
    Ok((e_seq, s_seq))
}

/// `H = Σ_{τ<N}(‖ẽ(τ)‖²_Q + ‖ũ(τ)‖²_R) + ‖ẽ(N)‖²_P` for a rolled-out sequence.
pub fn stage_cost(ing: &AgentIngredients, e_seq: &[DVector<f64>], u_seq: &[DVector<f64>]) -> f64 {
    let n = u_seq.len();
    (0..n).map(|t| ing.stage_cost(&e_seq[t], &u_seq[t])).sum::<f64>() + ing.terminal_value(&e_seq[n])
}

/// Total cost `J = H + coupling` of a control sequence.
pub fn build_cost(problem: &OcpProblem<'_>, u_seq: &[DVector<f64>]) -> Result<CostBreakdown> {
    if u_seq.len() != problem.horizon {
        return Err(Error::Dimension {
            context: "control sequence",
            expected: problem.horizon,
            got: u_seq.len(),
        });
    }
    let (e_seq, s_seq) = rollout(
        problem.model,
        problem.sync,
        &problem.e0,
        problem.s0,
        u_seq,
        &problem.references,
    )?;
    let stage = stage_cost(problem.ing, &e_seq, u_seq);
    let coupling = coupling_cost(&s_seq, &problem.assumed, problem.horizon);
    Ok(CostBreakdown {
        total: stage + coupling,
        stage,
        coupling,
    })
}

/// Packs a control sequence into a [`PredictedSolution`].
pub fn evaluate(problem: &OcpProblem<'_>, u_seq: Vec<DVector<f64>>, status: SolverStatus) -> Result<PredictedSolution> {
    let (e_seq, s_seq) = rollout(
        problem.model,
        problem.sync,
        &problem.e0,
        problem.s0,
        &u_seq,
        &problem.references,
    )?;
    let stage = stage_cost(problem.ing, &e_seq, &u_seq);
    let coupling = coupling_cost(&s_seq, &problem.assumed, problem.horizon);
    Ok(PredictedSolution {
        u_seq,
        e_seq,
        s_seq,
        stage_cost: stage,
        coupling_cost: coupling,
        total: stage + coupling,
        status,
    })
}

/// Largest violation among the input, tightened-state, terminal and stability
/// constraints, each measured against its acceptance tolerance. Returns the
/// name and raw excess of the worst offender, or `None` when all hold.
pub fn worst_violation(
    problem: &OcpProblem<'_>,
    e_seq: &[DVector<f64>],
    u_seq: &[DVector<f64>],
    stage: f64,
) -> Option<(String, f64)> {
    #[derive(Clone, Copy)]
    enum Site {
        Input(usize),
        State(usize),
        Terminal,
        Stability,
    }
    let mut worst: Option<(Site, f64, f64)> = None;
    let mut consider = |site: Site, excess: f64, tol: f64| {
        if excess > tol && worst.is_none_or(|(_, _, score)| excess / tol > score) {
            worst = Some((site, excess, excess / tol));
        }
    };
    for (t, u) in u_seq.iter().enumerate() {
        consider(Site::Input(t), problem.input_set.violation(u), INPUT_TOL);
    }
    for t in 1..problem.horizon {
        consider(Site::State(t), problem.state_boxes[t].violation(&e_seq[t]), STATE_TOL);
    }
    let eps2 = problem.ing.eps * problem.ing.eps;
    consider(
        Site::Terminal,
        problem.ing.terminal_value(&e_seq[problem.horizon]) - eps2,
        TERMINAL_TOL,
    );
    if let Some(phi) = problem.phi {
        consider(Site::Stability, stage - phi, STABILITY_TOL);
    }
    worst.map(|(site, excess, _)| {
        let name = match site {
            Site::Input(t) => format!("input[{t}]"),
            Site::State(t) => format!("state[{t}]"),
            Site::Terminal => "terminal".to_string(),
            Site::Stability => "stability".to_string(),
        };
        (name, excess)
    })
}

/// Whether a solution satisfies every constraint of `problem` within the
/// acceptance tolerances.
pub fn is_feasible(problem: &OcpProblem<'_>, sol: &PredictedSolution) -> bool {
    worst_violation(problem, &sol.e_seq, &sol.u_seq, sol.stage_cost).is_none()
}

/// Shifted candidate: `ū(τ) = u*(τ+j)` for `τ ≤ N−j−1`, then local feedback
/// `K ē(τ)` on the candidate rollout from the measured state `e_now`.
pub fn warm_start_from(
    prev_u: &[DVector<f64>],
    shift: usize,
    ing: &AgentIngredients,
    model: &dyn ErrorModel,
    e_now: &DVector<f64>,
    references: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    let n = prev_u.len();
    let shift = shift.clamp(1, n);
    let mut e = e_now.clone();
    let mut out = Vec::with_capacity(n);
    for tau in 0..n {
        let u = if tau + shift < n {
            prev_u[tau + shift].clone()
        } else {
            ing.feedback(&e)
        };
        e = model.step(&e, &u, &references[tau]);
        out.push(u);
    }
    out
}

/// `φ = H_prev − ‖e‖²_Q − ‖u‖²_R + ψη` with the state and input of the step
/// just before the trigger instant.
pub fn phi_bound(
    prev_e: &DVector<f64>,
    prev_u: &DVector<f64>,
    prev_h: f64,
    psi_eta: f64,
    ing: &AgentIngredients,
) -> f64 {
    prev_h - quad_form(prev_e, &ing.q) - quad_form(prev_u, &ing.r) + psi_eta
}

#[cfg(test)]
mod tests;
