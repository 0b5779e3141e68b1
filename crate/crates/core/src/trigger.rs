//! Self-triggered scheduling: the contraction condition `Υ(m)`, the
//! disturbance-growth constant `ψ(m)`, the state lower bound `α(m)` and the
//! selection of the open-loop phase.

use nalgebra::DVector;
use serde::Serialize;

use crate::ingredients::AgentIngredients;
use crate::linalg::quad_form;
use crate::tightening::geometric_gap;
use crate::{Error, Result};

/// Contraction factor `1 − λ_min(Q*)/λ_max(P)`, required to lie in `[0, 1)`.
pub fn contraction_factor(ing: &AgentIngredients) -> Result<f64> {
    let ratio = ing.lambda_min_qstar / ing.lambda_max_p;
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::config(
            "contraction factor",
            format!("λ_min(Q*)/λ_max(P) = {ratio} must lie in (0, 1]"),
        ));
    }
    Ok(1.0 - ratio)
}

/// `c^m·(ε + (η λ_max(√P)/L_g)[(1+L_g)^N − (1+L_g)^{N−m}])² − ε²`.
/// Nonpositive when the disturbed candidate still lands in `Ω(ε)` after an
/// open-loop phase of length `m`.
pub fn upsilon(m: usize, ing: &AgentIngredients, eta: f64, horizon: usize) -> Result<f64> {
    check_phase(m, horizon)?;
    let c = contraction_factor(ing)?;
    let radius = ing.eps
        + eta * ing.lambda_max_sqrt_p * geometric_gap(ing.l_g, horizon as i32, (horizon - m) as i32);
    Ok(c.powi(m as i32) * radius * radius - ing.eps * ing.eps)
}

/// `ψ(m) = ϖ L_Q + ν τ L_{Q*} + ν ς L_P` with `ν = (1+L_g)^{N−m}`,
/// `ϖ = (ν−1)/L_g`, `ς = (1+L_κ)^{m−1}`, `τ = (ς−1)/L_κ` (the quotients taken in
/// their limits `N−m` and `m−1` when the constants vanish).
pub fn psi(m: usize, ing: &AgentIngredients, horizon: usize) -> Result<f64> {
    check_phase(m, horizon)?;
    let nu = (1.0 + ing.l_g).powi((horizon - m) as i32);
    let varpi = geometric_gap(ing.l_g, (horizon - m) as i32, 0);
    let varsigma = (1.0 + ing.l_kappa).powi(m as i32 - 1);
    let tau = geometric_gap(ing.l_kappa, m as i32 - 1, 0);
    Ok(varpi * ing.l_q + nu * tau * ing.l_qstar + nu * varsigma * ing.l_p)
}

/// `max(0, ‖ẽ*(m−1|k)‖ − m(1+L_g)^{m−1}η)`
pub fn alpha(m: usize, predicted_norm: f64, l_g: f64, eta: f64) -> f64 {
    (predicted_norm - m as f64 * (1.0 + l_g).powi(m as i32 - 1) * eta).max(0.0)
}

fn check_phase(m: usize, horizon: usize) -> Result<()> {
    if m == 0 || m > horizon {
        return Err(Error::config(
            "open-loop phase",
            format!("phase {m} outside [1, {horizon}]"),
        ));
    }
    Ok(())
}

/// Per-agent trigger constants with precomputed `Υ` and `ψ` tables
/// (index `m − 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerConstants {
    pub sigma: f64,
    pub eta: f64,
    pub horizon: usize,
    pub upsilon: Vec<f64>,
    pub psi: Vec<f64>,
    pub lambda_min_q: f64,
    pub l_g: f64,
}

impl TriggerConstants {
    pub fn new(ing: &AgentIngredients, sigma: f64, eta: f64, horizon: usize) -> Result<Self> {
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(Error::config(
                "triggering factor",
                format!("sigma = {sigma} must lie in (0, 1)"),
            ));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::config("disturbance bound", format!("eta = {eta} must be finite and ≥ 0")));
        }
        if horizon == 0 {
            return Err(Error::config("horizon", "N must be at least 1"));
        }
        Ok(Self {
            sigma,
            eta,
            horizon,
            upsilon: (1..=horizon).map(|m| upsilon(m, ing, eta, horizon)).collect::<Result<_>>()?,
            psi: (1..=horizon).map(|m| psi(m, ing, horizon)).collect::<Result<_>>()?,
            lambda_min_q: ing.lambda_min_q,
            l_g: ing.l_g,
        })
    }

    /// `ψ(m)·η`
    pub fn psi_eta(&self, m: usize) -> f64 {
        self.psi[m - 1] * self.eta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitingCondition {
    /// `Υ(m) > 0` stopped the phase from growing.
    Feasibility,
    /// The stage-decrease inequality stopped the phase from growing.
    StageDecrease,
    /// Nothing qualified, not even a single step; `m = 1` by default.
    Fallback,
    /// Every condition held up to the horizon.
    Horizon,
}

impl LimitingCondition {
    pub fn as_str(&self) -> &'static str {
        match self {
            LimitingCondition::Feasibility => "feasibility",
            LimitingCondition::StageDecrease => "stage-decrease",
            LimitingCondition::Fallback => "fallback",
            LimitingCondition::Horizon => "horizon",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerDecision {
    pub m: usize,
    pub next_instant: usize,
    pub upsilon_values: Vec<f64>,
    pub psi_values: Vec<f64>,
    /// Right-hand sides `σ[λ_min(Q)α(m)² + ‖ũ*(m−1|k)‖²_R]`, index `m − 1`
    /// (the entry for `m = 1` uses the measured state instead of `α`).
    pub thresholds: Vec<f64>,
    pub limiting: LimitingCondition,
    /// Phase given by reading the trigger rule's indicator literally.
    pub literal_m: usize,
}

/// Selects the open-loop phase: the largest `m*` such that `Υ(m') ≤ 0` for all
/// `m' ≤ m*` and the stage-decrease inequality holds for all `2 ≤ m' ≤ m*`.
///
/// `e_seq` and `u_seq` are the fresh optimal predictions, `current_e` the
/// measured state at the trigger instant `now`.
pub fn decide(
    e_seq: &[DVector<f64>],
    u_seq: &[DVector<f64>],
    current_e: &DVector<f64>,
    constants: &TriggerConstants,
    ing: &AgentIngredients,
    now: usize,
) -> TriggerDecision {
    let n = constants.horizon;
    let eta = constants.eta;
    let mut thresholds = Vec::with_capacity(n);
    thresholds.push(constants.sigma * (quad_form(current_e, &ing.q) + quad_form(&u_seq[0], &ing.r)));
    for m in 2..=n {
        let a = alpha(m, e_seq[m - 1].norm(), constants.l_g, eta);
        thresholds.push(
            constants.sigma * (constants.lambda_min_q * a * a + quad_form(&u_seq[m - 1], &ing.r)),
        );
    }
    let feasible = |m: usize| constants.upsilon[m - 1] <= 0.0;
    let decreasing = |m: usize| constants.psi_eta(m) <= thresholds[m - 1];

    let (m, limiting) = if !feasible(1) {
        (1, LimitingCondition::Fallback)
    } else {
        let mut m = 1;
        let mut limiting = LimitingCondition::Horizon;
        for cand in 2..=n {
            if !feasible(cand) {
                limiting = LimitingCondition::Feasibility;
                break;
            }
            if !decreasing(cand) {
                limiting = LimitingCondition::StageDecrease;
                break;
            }
            m = cand;
        }
        (m, limiting)
    };

    let indicator = decreasing(1);
    let m_f = (2..=n).filter(|&m| feasible(m)).max();
    let m_s = (2..=n).filter(|&m| decreasing(m)).max();
    let literal_m = if indicator {
        1
    } else {
        match (m_f, m_s) {
            (Some(a), Some(b)) => a.min(b),
            _ => 1,
        }
    };

    TriggerDecision {
        m,
        next_instant: now + m,
        upsilon_values: constants.upsilon.clone(),
        psi_values: constants.psi.clone(),
        thresholds,
        limiting,
        literal_m,
    }
}
