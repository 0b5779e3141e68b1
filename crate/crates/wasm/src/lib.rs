//! Browser bindings for the bundled three-robot experiment.
//!
//! Three operations are exported, each returning a JSON string:
//!
//! * [`simulate`]: closed-loop run with a chosen seed, length and
//!   disturbance scale; per-agent series for plotting.
//! * [`gate_report`]: the offline configuration gates.
//! * [`trigger_table`]: `Υ(m)` and `ψ(m)η` for every phase length, showing
//!   which phases the trigger rule may select.

use std::collections::BTreeMap;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use syncdmpc::config::ExperimentConfig;
use syncdmpc::sim::{self, RunReport};
use syncdmpc::verify::{self, GateReport};
use syncdmpc::Result;

/// Longest run the demo accepts.
pub const MAX_STEPS: usize = 400;

#[derive(Debug, Serialize)]
pub struct AgentSeries {
    pub id: usize,
    pub e: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub s: Vec<f64>,
    pub pose: Vec<[f64; 3]>,
    pub reference: Vec<[f64; 2]>,
    /// Steps at which an OCP was solved.
    pub solves: Vec<usize>,
    /// Phase length chosen at each solve.
    pub phases: Vec<usize>,
    /// First step spent under the local feedback law, if any.
    pub terminal_from: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct Simulation {
    pub steps: usize,
    pub seed: u64,
    pub eta: Vec<f64>,
    pub agents: Vec<AgentSeries>,
    pub report: RunReport,
}

#[derive(Debug, Serialize)]
pub struct TriggerRow {
    pub id: usize,
    pub eta: f64,
    pub admissible_eta: f64,
    pub contraction_eta: f64,
    pub upsilon: Vec<f64>,
    pub psi_eta: Vec<f64>,
}

fn fixture(eta_scale: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::sec5();
    cfg.eta_scale = eta_scale;
    cfg
}

/// Runs the bundled experiment and collects plot series.
pub fn run_fixture(seed: u64, steps: usize, eta_scale: f64) -> Result<Simulation> {
    let mut cfg = fixture(eta_scale);
    cfg.seed = seed;
    cfg.steps = steps.clamp(1, MAX_STEPS);
    let exp = verify::build(&cfg)?;
    let (report, trace) = sim::run(&exp)?;
    let agents = trace
        .agents
        .iter()
        .map(|a| {
            let solved: Vec<_> = a.rows.iter().filter(|r| r.triggered && r.mode == "mpc").collect();
            AgentSeries {
                id: a.id,
                e: a.rows.iter().map(|r| r.e.clone()).collect(),
                u: a.rows.iter().map(|r| r.u.clone()).collect(),
                s: a.rows.iter().map(|r| r.s).collect(),
                pose: a.rows.iter().filter_map(|r| r.pose).collect(),
                reference: a.rows.iter().filter_map(|r| r.reference).collect(),
                solves: solved.iter().map(|r| r.k).collect(),
                phases: solved.iter().map(|r| r.phase).collect(),
                terminal_from: a.rows.iter().find(|r| r.mode == "terminal").map(|r| r.k),
            }
        })
        .collect();
    Ok(Simulation {
        steps: cfg.steps,
        seed,
        eta: exp.agents.iter().map(|a| a.eta).collect(),
        agents,
        report,
    })
}

pub fn gates(eta_scale: f64) -> Result<GateReport> {
    Ok(verify::assess(&fixture(eta_scale))?.0)
}

pub fn triggers(eta_scale: f64) -> Result<Vec<TriggerRow>> {
    let (report, exp) = verify::assess(&fixture(eta_scale))?;
    Ok(exp
        .agents
        .iter()
        .zip(&report.agents)
        .map(|(a, g)| TriggerRow {
            id: a.id,
            eta: a.eta,
            admissible_eta: g.admissible_eta,
            contraction_eta: g.contraction_eta,
            upsilon: a.trigger.upsilon.clone(),
            psi_eta: (1..=exp.horizon).map(|m| a.trigger.psi_eta(m)).collect(),
        })
        .collect())
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    let json = serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))?;
    Ok(json)
}

/// Closed-loop run of the bundled experiment as JSON.
#[wasm_bindgen]
pub fn simulate(seed: u32, steps: usize, eta_scale: f64) -> std::result::Result<String, JsError> {
    to_js(run_fixture(u64::from(seed), steps, eta_scale))
}

/// Offline gate results as JSON.
#[wasm_bindgen]
pub fn gate_report(eta_scale: f64) -> std::result::Result<String, JsError> {
    to_js(gates(eta_scale).map(|g| {
        let failures: BTreeMap<String, Vec<(String, String)>> = g
            .agents
            .iter()
            .map(|a| (a.id.to_string(), a.failures()))
            .collect();
        serde_json::json!({ "passed": g.passed(), "agents": g.agents, "failures": failures })
    }))
}

/// Per-agent `Υ(m)` and `ψ(m)η` tables as JSON.
#[wasm_bindgen]
pub fn trigger_table(eta_scale: f64) -> std::result::Result<String, JsError> {
    to_js(triggers(eta_scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulation_series_have_one_entry_per_step() {
        let sim = run_fixture(1, 30, 1.0).unwrap();
        assert_eq!(sim.agents.len(), 3);
        for a in &sim.agents {
            assert_eq!(a.e.len(), 30);
            assert_eq!(a.pose.len(), 30);
            assert_eq!(a.solves.first(), Some(&0));
            assert_eq!(a.solves.len(), a.phases.len());
        }
        assert!(serde_json::to_string(&sim).unwrap().contains("\"solves\""));
    }

    #[test]
    fn steps_are_capped() {
        assert_eq!(run_fixture(1, 0, 1.0).unwrap().steps, 1);
    }

    #[test]
    fn over_scaled_disturbance_fails_the_gate() {
        assert!(gates(1.0).unwrap().passed());
        let g = gates(2.0).unwrap();
        assert!(g.failures().iter().all(|(_, gate, _)| gate == "disturbance-bound"));
        assert!(run_fixture(1, 10, 2.0).is_err());
    }

    #[test]
    fn zero_disturbance_admits_every_phase() {
        for row in triggers(0.0).unwrap() {
            assert!(row.upsilon.iter().all(|&u| u <= 0.0));
            assert!(row.psi_eta.iter().all(|&p| p == 0.0));
        }
    }
}
