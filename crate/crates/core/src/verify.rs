//! Offline configuration gates and construction of a runnable experiment.
//!
//! Every agent is checked for: sampled Lipschitz bounds of `g` (and of the
//! terminal closed loop when `L_κ` is configured), the terminal-region
//! conditions on `Ω(ε_r)`, non-empty tightened state sets, the inclusion
//! `Ω(ε_r) ⊆ E ⊖ Λ(N)`, the disturbance bound `η ≤ admissible` and the
//! initial state lying in `E`.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DVector;
use serde::Serialize;

use crate::config::{matrix, ExperimentConfig, ModelConfig, TerminalConfig};
use crate::dynamics::{
    estimate_kappa_slope, sample_lipschitz_g, sample_lipschitz_kappa, ErrorModel, LinearModel, SyncLaw,
    Unicycle,
};
use crate::ingredients::{linearize, synthesize_terminal, validate_terminal_region, AgentIngredients, IngredientSpec, ValidationReport};
use crate::sim::{AgentSetup, Experiment, Neighbor};
use crate::tightening::{admissible_eta, check_inclusion, lemma_eta_bound, tightened_boxes, WeightedBall};
use crate::trigger::TriggerConstants;
use crate::{Error, Result};

const LIPSCHITZ_SAMPLES: usize = 20_000;
const TERMINAL_SAMPLES: usize = 4_000;
const KAPPA_SAMPLES: usize = 2_000;
const GATE_SEED: u64 = 0x6a7e;
/// Safety factor applied to the sampled slope when `L_κ` is estimated.
pub const KAPPA_INFLATION: f64 = 1.1;

/// Gate results of one agent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentGates {
    pub id: usize,
    /// Disturbance bound from the terminal-radius slack.
    pub admissible_eta: f64,
    /// Largest `η` with `Υ(m) ≤ 0` for every phase `m ∈ [1, N]` (informative).
    pub contraction_eta: f64,
    /// Disturbance bound in use.
    pub eta: f64,
    pub eta_ok: bool,
    pub l_g: f64,
    pub l_g_sampled: f64,
    pub l_g_ok: bool,
    pub l_kappa: f64,
    pub l_kappa_estimated: bool,
    pub l_kappa_sampled: f64,
    pub l_kappa_ok: bool,
    pub terminal: ValidationReport,
    /// `None` when every tightened set is non-empty, else the reason.
    pub tightening_error: Option<String>,
    pub inclusion: bool,
    pub initial_state_ok: bool,
}

impl AgentGates {
    /// Names and details of the failed gates.
    pub fn failures(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if !self.l_g_ok {
            out.push((
                "lipschitz-g".into(),
                format!("sampled slope {:.6} exceeds L_g = {}", self.l_g_sampled, self.l_g),
            ));
        }
        if !self.l_kappa_ok {
            out.push((
                "lipschitz-kappa".into(),
                format!("sampled slope {:.6} exceeds L_kappa = {}", self.l_kappa_sampled, self.l_kappa),
            ));
        }
        if !self.terminal.passed() {
            out.push((
                "terminal-region".into(),
                format!(
                    "{} input, {} invariance and {} decrease violations in {} samples (worst decrease {:.3e})",
                    self.terminal.input_violations,
                    self.terminal.invariance_violations,
                    self.terminal.decrease_violations,
                    self.terminal.samples,
                    self.terminal.worst_decrease
                ),
            ));
        }
        if let Some(e) = &self.tightening_error {
            out.push(("tightening".into(), e.clone()));
        }
        if !self.inclusion {
            out.push(("inclusion".into(), "Ω(ε_r) does not fit inside E ⊖ Λ(N)".into()));
        }
        if !self.eta_ok {
            out.push((
                "disturbance-bound".into(),
                format!("η = {:.6e} exceeds admissible {:.6e}", self.eta, self.admissible_eta),
            ));
        }
        if !self.initial_state_ok {
            out.push(("initial-state".into(), "e0 lies outside the state set".into()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateReport {
    pub agents: Vec<AgentGates>,
}

impl GateReport {
    pub fn passed(&self) -> bool {
        self.agents.iter().all(|a| a.failures().is_empty())
    }

    /// `(agent id, gate, detail)` for every failed gate.
    pub fn failures(&self) -> Vec<(usize, String, String)> {
        self.agents
            .iter()
            .flat_map(|a| a.failures().into_iter().map(move |(g, d)| (a.id, g, d)))
            .collect()
    }

    /// Human-readable summary, one block per agent.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for a in &self.agents {
            let _ = writeln!(s, "agent {}", a.id);
            let _ = writeln!(s, "  admissible_eta   {:.6e}", a.admissible_eta);
            let _ = writeln!(s, "  contraction_eta  {:.6e}", a.contraction_eta);
            let _ = writeln!(s, "  eta              {:.6e} ({})", a.eta, ok(a.eta_ok));
            let _ = writeln!(s, "  L_g              {} sampled {:.6} ({})", a.l_g, a.l_g_sampled, ok(a.l_g_ok));
            let _ = writeln!(
                s,
                "  L_kappa          {:.6}{} sampled {:.6} ({})",
                a.l_kappa,
                if a.l_kappa_estimated { " (estimated)" } else { "" },
                a.l_kappa_sampled,
                ok(a.l_kappa_ok)
            );
            let t = &a.terminal;
            let _ = writeln!(
                s,
                "  terminal region  {} samples, violations input {} invariance {} decrease {} ({})",
                t.samples,
                t.input_violations,
                t.invariance_violations,
                t.decrease_violations,
                ok(t.passed())
            );
            let _ = writeln!(
                s,
                "  tightening       {}",
                a.tightening_error.as_deref().unwrap_or("nonempty (ok)")
            );
            let _ = writeln!(s, "  inclusion        {}", ok(a.inclusion));
            let _ = writeln!(s, "  initial state    {}", ok(a.initial_state_ok));
        }
        let _ = writeln!(s, "result: {}", if self.passed() { "all gates passed" } else { "gate failure" });
        s
    }
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

/// Builds every agent and evaluates all gates without stopping at the first
/// failure. Errors only on malformed ingredients (e.g. an indefinite `P`).
pub fn assess(config: &ExperimentConfig) -> Result<(GateReport, Experiment)> {
    config.check_shape()?;
    let mut gates = Vec::with_capacity(config.agents.len());
    let mut agents = Vec::with_capacity(config.agents.len());
    for a in &config.agents {
        let label = |field: &str| format!("agents[{}].{field}", a.id);
        let model: Arc<dyn ErrorModel> = match &a.model {
            ModelConfig::Unicycle => Arc::new(Unicycle { period: config.period }),
            ModelConfig::Linear { g, h } => Arc::new(LinearModel::new(matrix(g, &label("model.g"))?, matrix(h, &label("model.h"))?)?),
        };
        let m = model.input_dim();
        let reference = match &a.path {
            Some(path) => path.inputs(0.0, crate::dynamics::REFERENCE_FD_STEP)?.as_vector(),
            None => DVector::zeros(m),
        };
        if reference.len() != m {
            return Err(Error::config(label("path"), "reference input dimension differs from the model"));
        }
        let q = matrix(&a.q, &label("q"))?;
        let r = matrix(&a.r, &label("r"))?;
        let state_set = a.state_bounds.to_box()?;
        let input_set = a.input_bounds.to_box()?;
        let (k, p) = match &a.terminal {
            TerminalConfig::Synthesize { margin } => {
                let (g, h) = linearize(model.as_ref(), &reference)?;
                synthesize_terminal(&g, &h, &q, &r, *margin)?
            }
            TerminalConfig::Fixed { k, p } => (matrix(k, &label("terminal.k"))?, matrix(p, &label("terminal.p"))?),
        };
        let (l_kappa, l_kappa_estimated) = match a.l_kappa {
            Some(l) => (l, false),
            None => {
                let slope = estimate_kappa_slope(model.as_ref(), &k, &p, a.eps_r, &reference, KAPPA_SAMPLES, GATE_SEED)?;
                (KAPPA_INFLATION * slope, true)
            }
        };
        let ing = AgentIngredients::new(
            IngredientSpec {
                k: k.clone(),
                p: p.clone(),
                q,
                r,
                eps: a.eps,
                eps_r: a.eps_r,
                l_g: a.l_g,
                l_kappa,
            },
            &state_set,
        )
        .map_err(|e| Error::config(label("terminal"), e.to_string()))?;

        let admissible = admissible_eta(&ing, config.horizon);
        let eta = a.eta.unwrap_or(config.eta_scale * admissible);
        let lip_g = sample_lipschitz_g(model.as_ref(), &state_set, &input_set, &reference, a.l_g, LIPSCHITZ_SAMPLES, GATE_SEED);
        let lip_kappa = sample_lipschitz_kappa(model.as_ref(), &k, &p, a.eps_r, &reference, l_kappa, LIPSCHITZ_SAMPLES, GATE_SEED)?;
        let terminal = validate_terminal_region(model.as_ref(), &reference, &ing, &input_set, TERMINAL_SAMPLES, GATE_SEED)?;
        let (boxes, tightening_error) = match tightened_boxes(&state_set, eta, &ing, config.horizon) {
            Ok(b) => (Some(b), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let inclusion = match &boxes {
            Some(b) => check_inclusion(
                &WeightedBall {
                    weight: p.clone(),
                    radius: a.eps_r,
                },
                &b[config.horizon],
            )?,
            None => false,
        };
        let e0 = DVector::from_column_slice(&a.e0);
        gates.push(AgentGates {
            id: a.id,
            admissible_eta: admissible,
            contraction_eta: lemma_eta_bound(&ing, config.horizon),
            eta,
            eta_ok: eta <= admissible * (1.0 + 1e-12),
            l_g: a.l_g,
            l_g_sampled: lip_g.max_ratio,
            l_g_ok: lip_g.holds(),
            l_kappa,
            l_kappa_estimated,
            l_kappa_sampled: lip_kappa.max_ratio,
            l_kappa_ok: lip_kappa.holds(),
            terminal,
            tightening_error,
            inclusion,
            initial_state_ok: state_set.contains(&e0, 0.0),
        });

        let trigger = TriggerConstants::new(&ing, a.sigma, eta, config.horizon)?;
        agents.push(AgentSetup {
            id: a.id,
            model,
            sync: SyncLaw::new(DVector::from_column_slice(&a.y), DVector::from_column_slice(&a.z), config.period)?,
            boxes: boxes.unwrap_or_else(|| vec![state_set.clone(); config.horizon + 1]),
            ing,
            state_set,
            input_set,
            trigger,
            eta,
            path: a.path.clone(),
            e0,
            s0: a.s0,
            neighbors: a
                .neighbors
                .iter()
                .map(|nb| Neighbor {
                    id: nb.id,
                    rho: nb.rho,
                    mu: nb.mu,
                })
                .collect(),
        });
    }
    let experiment = Experiment {
        period: config.period,
        horizon: config.horizon,
        steps: config.steps,
        seed: config.seed,
        strict: config.strict,
        agents,
    };
    Ok((GateReport { agents: gates }, experiment))
}

/// Builds the experiment, rejecting it with the first failed gate.
pub fn build(config: &ExperimentConfig) -> Result<Experiment> {
    let (report, experiment) = assess(config)?;
    match report.failures().into_iter().next() {
        Some((id, gate, detail)) => Err(Error::config(format!("agent {id}: {gate}"), detail)),
        None => Ok(experiment),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_fixture_passes_every_gate() {
        let (report, exp) = assess(&ExperimentConfig::sec5()).unwrap();
        assert!(report.passed(), "{}", report.render());
        assert_eq!(exp.agents.len(), 3);
        for a in &report.agents {
            assert!(a.l_kappa_estimated);
            assert!((a.eta - a.admissible_eta).abs() <= 1e-18);
        }
    }

    #[test]
    fn printed_ingredients_fail_the_terminal_gate() {
        let (report, _) = assess(&ExperimentConfig::sec5_printed()).unwrap();
        assert!(!report.passed());
        assert!(report.failures().iter().any(|(_, g, _)| g == "terminal-region"));
        assert!(build(&ExperimentConfig::sec5_printed()).is_err());
    }

    #[test]
    fn disturbance_above_bound_is_rejected() {
        let mut c = ExperimentConfig::sec5();
        c.eta_scale = 1.5;
        let err = build(&c).unwrap_err().to_string();
        assert!(err.contains("disturbance-bound"), "{err}");
    }

    #[test]
    fn inflated_state_box_changes_inclusion() {
        // a box too small for Ω(ε_r) fails the inclusion gate
        let mut c = ExperimentConfig::sec5();
        c.agents[0].state_bounds = crate::config::BoxConfig::symmetric(&[0.3, 0.3, 0.02]);
        c.agents[0].e0 = vec![0.0, 0.0, 0.0];
        let (report, _) = assess(&c).unwrap();
        assert!(!report.agents[0].inclusion);
        // a wider box restores it
        c.agents[0].state_bounds = crate::config::BoxConfig::symmetric(&[0.6, 0.6, 0.6]);
        let (report, _) = assess(&c).unwrap();
        assert!(report.agents[0].inclusion);
    }

    #[test]
    fn underclaimed_lipschitz_constant_is_rejected() {
        let mut c = ExperimentConfig::sec5();
        c.agents[2].l_g = 0.1;
        let err = build(&c).unwrap_err().to_string();
        assert!(err.contains("lipschitz-g"), "{err}");
    }
}
