//! Deterministic asynchronous closed-loop simulation.
//!
//! Every step `k` runs in three passes over the agents in ascending id:
//!
//! 1. **Sample**: agents whose next sampling instant is `k` measure their
//!    state. Inside `Ω(ε_r)` they switch to the terminal law `u = Ke` and
//!    resample at `k + 1`; otherwise they solve the OCP against the latest
//!    broadcasts of their neighbors, pick the open-loop phase `m` and
//!    schedule the next sample at `k + m`.
//! 2. **Apply**: every agent applies its input, draws a disturbance and
//!    advances its state and synchronization value.
//! 3. **Deliver**: broadcasts made during this step become visible to the
//!    neighbors, so a plan sent at `k_j` is only read at instants `> k_j`.
//!
//! Verification hooks evaluate the recursive-feasibility and decrease
//! inequalities along the way. In strict mode the first failed hook aborts
//! the run with [`Error::Verification`].

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::coordination::{Broadcast, NeighborBuffer};
use crate::dynamics::{pose_from_error, ErrorModel, ReferenceInput, ReferencePath, SyncLaw, REFERENCE_FD_STEP};
use crate::ingredients::AgentIngredients;
use crate::linalg::quad_form;
use crate::ocp::{
    evaluate, is_feasible, phi_bound, rollout, solve_detailed, stage_cost, warm_start_from, worst_violation,
    OcpProblem, PredictedSolution, SolverStatus, SqpSettings, INPUT_TOL,
};
use crate::sampling::DisturbanceSampler;
use crate::tightening::BoxSet;
use crate::trace::{AgentRow, AgentTrace, Event, EventKind, Trace};
use crate::trigger::{decide, TriggerConstants};
use crate::{Error, Result};

/// Slack added to the right-hand side of the per-step decrease checks.
pub const LYAPUNOV_TOL: f64 = 1e-6;
/// Slack of the terminal-containment and terminal-decrease checks.
pub const TERMINAL_HOOK_TOL: f64 = 1e-9;

pub const HOOK_CANDIDATE: &str = "candidate-feasibility";
pub const HOOK_CONTAINMENT: &str = "terminal-containment";
pub const HOOK_LYAPUNOV: &str = "lyapunov-decrease";
pub const HOOK_TERMINAL: &str = "terminal-decrease";
pub const HOOK_ISS: &str = "iss-envelope";
pub const HOOK_CONSTRAINTS: &str = "constraint-satisfaction";

/// Coupling to one neighbor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    /// Coupling weight `ρ_ij`.
    pub rho: f64,
    /// Extrapolation factor `μ_j` for stale plans.
    pub mu: f64,
}

/// Everything the simulator needs about one agent.
#[derive(Debug, Clone)]
pub struct AgentSetup {
    pub id: usize,
    pub model: Arc<dyn ErrorModel>,
    pub sync: SyncLaw,
    /// Tightened state boxes `E ⊖ Λ(τ)` for `τ = 0..=N`.
    pub boxes: Vec<BoxSet>,
    pub ing: AgentIngredients,
    pub state_set: BoxSet,
    pub input_set: BoxSet,
    pub trigger: TriggerConstants,
    /// Disturbance bound `η`.
    pub eta: f64,
    /// Reference path; `None` means a zero reference input.
    pub path: Option<ReferencePath>,
    pub e0: DVector<f64>,
    pub s0: f64,
    pub neighbors: Vec<Neighbor>,
}

impl AgentSetup {
    /// Reference input at step `k` and, with a path, the reference pose. The
    /// path is evaluated at the elapsed time `k·T`.
    pub fn reference(&self, k: usize, period: f64) -> Result<(DVector<f64>, Option<ReferenceInput>)> {
        match &self.path {
            Some(path) => {
                let r = path.inputs(k as f64 * period, REFERENCE_FD_STEP)?;
                Ok((r.as_vector(), Some(r)))
            }
            None => Ok((DVector::zeros(self.model.input_dim()), None)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub period: f64,
    pub horizon: usize,
    pub steps: usize,
    pub seed: u64,
    pub strict: bool,
    pub agents: Vec<AgentSetup>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Mpc,
    Terminal,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Mpc => "mpc",
            Mode::Terminal => "terminal",
        }
    }
}

/// Per-agent counters.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct AgentStats {
    pub id: usize,
    pub steps: usize,
    /// Sampling instants, in either mode.
    pub samples: usize,
    pub solves: usize,
    /// Solves that returned a violating iterate.
    pub solver_failures: usize,
    /// Failures resolved by applying the feasible shifted candidate.
    pub fallbacks: usize,
    /// Failures with no feasible candidate; the least-violating iterate was used.
    pub recoveries: usize,
    pub mpc_steps: usize,
    pub terminal_steps: usize,
    pub max_phase: usize,
    pub input_violations: usize,
    pub state_violations: usize,
    pub final_error_norm: f64,
    pub final_sync: f64,
}

/// Outcomes of one verification hook across the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HookTally {
    pub checked: usize,
    pub failed: usize,
    /// Largest `lhs − rhs` seen (negative when every check passed).
    pub worst_margin: f64,
}

impl Default for HookTally {
    fn default() -> Self {
        Self {
            checked: 0,
            failed: 0,
            worst_margin: f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub steps: usize,
    pub agents: Vec<AgentStats>,
    pub hooks: BTreeMap<String, HookTally>,
    /// Description of the first failed hook, if any.
    pub first_failure: Option<String>,
}

impl RunReport {
    pub fn hook_failures(&self) -> usize {
        self.hooks.values().map(|h| h.failed).sum()
    }

    pub fn constraint_violations(&self) -> usize {
        self.agents.iter().map(|a| a.input_violations + a.state_violations).sum()
    }

    pub fn solves(&self) -> usize {
        self.agents.iter().map(|a| a.solves).sum()
    }
}

struct Recorder {
    events: Vec<Event>,
    hooks: BTreeMap<String, HookTally>,
    first_failure: Option<String>,
    strict: bool,
}

impl Recorder {
    fn push(&mut self, e: Event) {
        self.events.push(e);
    }

    /// Records the check `lhs ≤ rhs`.
    fn hook(&mut self, k: usize, agent: usize, name: &str, lhs: f64, rhs: f64, detail: String) -> Result<()> {
        let pass = lhs <= rhs;
        let tally = self.hooks.entry(name.to_string()).or_default();
        tally.checked += 1;
        tally.worst_margin = tally.worst_margin.max(lhs - rhs);
        self.events.push(
            Event::new(k, agent, EventKind::HookResult, name, if pass { "pass" } else { "fail" })
                .values(lhs, rhs)
                .detail(detail.clone()),
        );
        if pass {
            return Ok(());
        }
        tally.failed += 1;
        let msg = format!("{name} failed for agent {agent} at k = {k}: {lhs:.6e} > {rhs:.6e} ({detail})");
        log::warn!("{msg}");
        if self.first_failure.is_none() {
            self.first_failure = Some(msg.clone());
        }
        if self.strict {
            return Err(Error::Verification(msg));
        }
        Ok(())
    }
}

/// The open-loop plan of the current phase.
struct Plan {
    start: usize,
    m: usize,
    u_seq: Vec<DVector<f64>>,
    /// Whether the plan satisfies every OCP constraint (false after recovery).
    certified: bool,
    /// Lyapunov value at the current step of the phase.
    value: f64,
}

struct Runtime<'a> {
    setup: &'a AgentSetup,
    refs: Vec<DVector<f64>>,
    ref_inputs: Vec<Option<ReferenceInput>>,
    lambda_max_q: f64,
    lambda_max_r: f64,
    mode: Mode,
    e: DVector<f64>,
    s: f64,
    plan: Option<Plan>,
    next_sample: usize,
    buffer: NeighborBuffer,
    sampler: DisturbanceSampler,
    last: Option<(DVector<f64>, DVector<f64>)>,
    triggered: bool,
    outbox: Option<Broadcast>,
    stats: AgentStats,
    rows: Vec<AgentRow>,
}

fn lambda_max(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().max()
}

/// Disturbance seed of one agent, derived from the run seed.
pub fn agent_seed(seed: u64, id: usize) -> u64 {
    seed ^ (id as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl<'a> Runtime<'a> {
    fn new(setup: &'a AgentSetup, exp: &Experiment) -> Result<Self> {
        let mut refs = Vec::with_capacity(exp.steps + exp.horizon + 1);
        let mut ref_inputs = Vec::with_capacity(refs.capacity());
        for k in 0..exp.steps + exp.horizon + 1 {
            let (r, ri) = setup.reference(k, exp.period)?;
            refs.push(r);
            ref_inputs.push(ri);
        }
        Ok(Self {
            setup,
            refs,
            ref_inputs,
            lambda_max_q: lambda_max(&setup.ing.q),
            lambda_max_r: lambda_max(&setup.ing.r),
            mode: Mode::Mpc,
            e: setup.e0.clone(),
            s: setup.s0,
            plan: None,
            next_sample: 0,
            buffer: NeighborBuffer::new(setup.neighbors.iter().map(|n| (n.id, n.mu))),
            sampler: DisturbanceSampler::new(setup.eta, setup.model.state_dim(), agent_seed(exp.seed, setup.id)),
            last: None,
            triggered: false,
            outbox: None,
            stats: AgentStats {
                id: setup.id,
                ..AgentStats::default()
            },
            rows: Vec::with_capacity(exp.steps),
        })
    }

    fn problem(&self, k: usize, horizon: usize, phi: Option<f64>) -> Result<OcpProblem<'a>> {
        let setup = self.setup;
        let mut assumed = Vec::with_capacity(setup.neighbors.len());
        for nb in &setup.neighbors {
            if let Some(b) = self.buffer.latest(nb.id) {
                if k - b.instant > horizon {
                    return Err(Error::Verification(format!(
                        "agent {} at k = {k}: plan of neighbor {} is {} steps old (horizon {horizon})",
                        setup.id,
                        nb.id,
                        k - b.instant
                    )));
                }
            }
            assumed.push((nb.rho, self.buffer.assumed_or_hold(nb.id, k, horizon, self.s)?));
        }
        Ok(OcpProblem {
            model: setup.model.as_ref(),
            ing: &setup.ing,
            sync: &setup.sync,
            horizon,
            e0: self.e.clone(),
            s0: self.s,
            references: self.refs[k..k + horizon].to_vec(),
            assumed,
            phi,
            input_set: &setup.input_set,
            state_boxes: &setup.boxes,
        })
    }

    /// `λ_min(Q)‖e‖² ≤ V ≤ λ_max(Q)Σ‖ē‖² + λ_max(R)Σ‖ū‖² + λ_max(P)‖ē(N)‖²`.
    fn iss_check(&self, rec: &mut Recorder, k: usize, value: f64, e_seq: &[DVector<f64>], u_seq: &[DVector<f64>]) -> Result<()> {
        let ing = &self.setup.ing;
        let n = u_seq.len();
        let lower = ing.lambda_min_q * e_seq[0].norm_squared();
        let upper = self.lambda_max_q * e_seq[..n].iter().map(|e| e.norm_squared()).sum::<f64>()
            + self.lambda_max_r * u_seq.iter().map(|u| u.norm_squared()).sum::<f64>()
            + ing.lambda_max_p * e_seq[n].norm_squared();
        let excess = (lower - value).max(value - upper);
        rec.hook(
            k,
            self.setup.id,
            HOOK_ISS,
            excess,
            1e-12 * (1.0 + upper),
            format!("lower={lower:.6e} V={value:.6e} upper={upper:.6e}"),
        )
    }

    fn sample(&mut self, k: usize, exp: &Experiment, rec: &mut Recorder) -> Result<()> {
        let setup = self.setup;
        let ing = &setup.ing;
        let id = setup.id;
        let horizon = exp.horizon;
        self.stats.samples += 1;
        self.triggered = true;

        let p_val = ing.terminal_value(&self.e);
        let terminal = p_val <= ing.eps_r * ing.eps_r;
        let mode = if terminal { Mode::Terminal } else { Mode::Mpc };
        rec.push(
            Event::new(k, id, EventKind::Sample, "mode", mode.as_str())
                .values(p_val, ing.eps_r * ing.eps_r)
                .detail(format!("s={}", self.s)),
        );

        // A certified phase ending exactly now continues the Lyapunov chain.
        let chain = match (&self.plan, &self.last) {
            (Some(p), Some((pe, pu))) if p.certified && p.start + p.m == k => {
                let phi = phi_bound(pe, pu, p.value, setup.trigger.psi_eta(p.m), ing);
                Some((phi, p.m, p.value))
            }
            _ => None,
        };
        let problem = self.problem(k, horizon, chain.map(|c| c.0))?;
        let candidate = match (&self.plan, chain) {
            (Some(p), Some(_)) => {
                let u = warm_start_from(&p.u_seq, p.m, ing, setup.model.as_ref(), &self.e, &problem.references);
                let cand = evaluate(&problem, u, SolverStatus::Converged)?;
                let violation = worst_violation(&problem, &cand.e_seq, &cand.u_seq, cand.stage_cost);
                let (excess, detail) = match &violation {
                    Some((name, v)) => (*v, format!("{name} violated")),
                    None => (0.0, "all constraints hold".to_string()),
                };
                rec.hook(k, id, HOOK_CANDIDATE, excess, 0.0, detail)?;
                let eps2 = ing.eps * ing.eps;
                rec.hook(
                    k,
                    id,
                    HOOK_CONTAINMENT,
                    ing.terminal_value(&cand.e_seq[horizon]),
                    eps2 + TERMINAL_HOOK_TOL,
                    format!("shift {}", p.m),
                )?;
                Some(cand)
            }
            _ => None,
        };

        if terminal {
            self.mode = Mode::Terminal;
            self.plan = None;
            self.next_sample = k + 1;
            let mut e = self.e.clone();
            let mut s_seq = vec![self.s];
            for r in &problem.references {
                let u = ing.feedback(&e);
                s_seq.push(setup.sync.step(*s_seq.last().unwrap_or(&self.s), &u, r));
                e = setup.model.step(&e, &u, r);
            }
            rec.push(
                Event::new(k, id, EventKind::TriggerDecision, "phase", "terminal")
                    .values(1.0, f64::NAN)
                    .detail("local feedback"),
            );
            self.broadcast(k, s_seq, rec);
            return Ok(());
        }

        self.mode = Mode::Mpc;
        let warm = match (&candidate, &self.plan) {
            (Some(c), _) => Some(c.u_seq.clone()),
            (None, Some(p)) => Some(warm_start_from(
                &p.u_seq,
                k - p.start,
                ing,
                setup.model.as_ref(),
                &self.e,
                &problem.references,
            )),
            (None, None) => None,
        };
        let report = solve_detailed(&problem, warm.as_deref(), SqpSettings::default())?;
        self.stats.solves += 1;
        let mut detail = format!("iterations={} kkt={:.3e}", report.iterations, report.kkt);
        let (sol, certified, status): (PredictedSolution, bool, &str) = match report.violation {
            None => {
                let status = report.solution.status.as_str();
                (report.solution, true, status)
            }
            Some((name, v)) => {
                self.stats.solver_failures += 1;
                detail.push_str(&format!(" violated={name}:{v:.3e}"));
                match candidate.filter(|c| is_feasible(&problem, c)) {
                    Some(c) => {
                        self.stats.fallbacks += 1;
                        (c, true, "fallback")
                    }
                    None => {
                        // never apply inputs outside U, even from a failed solve
                        self.stats.recoveries += 1;
                        let u = report.solution.u_seq.iter().map(|u| setup.input_set.project(u)).collect();
                        (evaluate(&problem, u, SolverStatus::Infeasible)?, false, "recovery")
                    }
                }
            }
        };
        rec.push(
            Event::new(k, id, EventKind::Solve, "ocp", status)
                .values(sol.total, problem.phi.unwrap_or(f64::NAN))
                .detail(detail),
        );

        if let (Some((phi, m_prev, v_prev)), true) = (chain, certified) {
            let rhs = phi - v_prev + LYAPUNOV_TOL;
            let case = if m_prev == 1 { "iii" } else { "iv" };
            rec.hook(
                k,
                id,
                HOOK_LYAPUNOV,
                sol.stage_cost - v_prev,
                rhs,
                format!("case {case}, previous phase {m_prev}"),
            )?;
        }
        if certified {
            self.iss_check(rec, k, sol.stage_cost, &sol.e_seq, &sol.u_seq)?;
        }

        let m = if certified {
            let d = decide(&sol.e_seq, &sol.u_seq, &self.e, &setup.trigger, ing, k);
            rec.push(
                Event::new(k, id, EventKind::TriggerDecision, "phase", d.limiting.as_str())
                    .values(d.m as f64, d.thresholds[0])
                    .detail(format!(
                        "literal_m={} upsilon1={:.6e} psi_eta1={:.6e}",
                        d.literal_m,
                        d.upsilon_values[0],
                        setup.trigger.psi_eta(1)
                    )),
            );
            d.m
        } else {
            rec.push(
                Event::new(k, id, EventKind::TriggerDecision, "phase", "recovery")
                    .values(1.0, f64::NAN)
                    .detail("uncertified plan"),
            );
            1
        };
        self.stats.max_phase = self.stats.max_phase.max(m);
        self.next_sample = k + m;
        self.broadcast(k, sol.s_seq.clone(), rec);
        self.plan = Some(Plan {
            start: k,
            m,
            u_seq: sol.u_seq,
            certified,
            value: sol.stage_cost,
        });
        Ok(())
    }

    fn broadcast(&mut self, k: usize, s_seq: Vec<f64>, rec: &mut Recorder) {
        rec.push(
            Event::new(k, self.setup.id, EventKind::Broadcast, "s", "sent")
                .values(s_seq[0], s_seq[s_seq.len() - 1])
                .detail(format!("{} values", s_seq.len())),
        );
        self.outbox = Some(Broadcast {
            sender: self.setup.id,
            instant: k,
            s_seq,
        });
    }

    fn apply(&mut self, k: usize, exp: &Experiment, rec: &mut Recorder) -> Result<()> {
        let setup = self.setup;
        let ing = &setup.ing;
        let id = setup.id;
        let model = setup.model.as_ref();
        let r = &self.refs[k];
        let (u, value, phase) = match (self.mode, &self.plan) {
            (Mode::Terminal, _) => (ing.feedback(&self.e), None, 0),
            (Mode::Mpc, Some(p)) => (
                p.u_seq[k - p.start].clone(),
                p.certified.then_some(p.value),
                p.m,
            ),
            (Mode::Mpc, None) => {
                return Err(Error::Verification(format!("agent {id} at k = {k}: no plan to apply")));
            }
        };

        let u_excess = setup.input_set.violation(&u);
        let e_excess = setup.state_set.violation(&self.e);
        if u_excess > INPUT_TOL {
            self.stats.input_violations += 1;
        }
        if e_excess > 0.0 {
            self.stats.state_violations += 1;
        }
        rec.hook(
            k,
            id,
            HOOK_CONSTRAINTS,
            (u_excess - INPUT_TOL).max(e_excess),
            0.0,
            format!("input excess {u_excess:.3e}, state excess {e_excess:.3e}"),
        )?;
        rec.push(
            Event::new(k, id, EventKind::Apply, "u", self.mode.as_str())
                .values(u.amax(), setup.input_set.violation(&u))
                .detail(u.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ")),
        );

        let d = self.sampler.sample();
        let e_next = model.step(&self.e, &u, r) + &d;
        let s_next = setup.sync.step(self.s, &u, r);

        match (self.mode, &mut self.plan) {
            (Mode::Terminal, _) => {
                let lhs = ing.terminal_value(&e_next) - ing.terminal_value(&self.e);
                let rhs = -quad_form(&self.e, &ing.q_star)
                    + 2.0 * ing.eps_r * ing.lambda_max_sqrt_p * setup.eta
                    + ing.lambda_max_p * setup.eta * setup.eta
                    + TERMINAL_HOOK_TOL;
                rec.hook(k, id, HOOK_TERMINAL, lhs, rhs, "local feedback step".into())?;
            }
            (Mode::Mpc, Some(p)) if p.certified && k + 1 < p.start + p.m => {
                let j = k - p.start;
                let refs = &self.refs[k + 1..k + 1 + exp.horizon];
                let cand = warm_start_from(&p.u_seq, j + 1, ing, model, &e_next, refs);
                let (e_seq, _) = rollout(model, &setup.sync, &e_next, s_next, &cand, refs)?;
                let v_next = stage_cost(ing, &e_seq, &cand);
                let rhs = -quad_form(&self.e, &ing.q) - quad_form(&u, &ing.r)
                    + setup.trigger.psi_eta(j + 1)
                    + LYAPUNOV_TOL;
                let case = if j == 0 { "i" } else { "ii" };
                let v_now = p.value;
                p.value = v_next;
                rec.hook(
                    k + 1,
                    id,
                    HOOK_LYAPUNOV,
                    v_next - v_now,
                    rhs,
                    format!("case {case}, step {} of phase {}", j + 1, p.m),
                )?;
                self.iss_check(rec, k + 1, v_next, &e_seq, &cand)?;
            }
            _ => {}
        }

        let ri = self.ref_inputs[k];
        self.rows.push(AgentRow {
            k,
            agent: id,
            mode: self.mode.as_str().to_string(),
            triggered: self.triggered,
            phase,
            e: self.e.iter().copied().collect(),
            u: u.iter().copied().collect(),
            s: self.s,
            d_norm: d.norm(),
            value,
            pose: ri.map(|ri| pose_from_error(&ri, &self.e)),
            reference: ri.map(|ri| ri.position),
        });
        self.stats.steps += 1;
        match self.mode {
            Mode::Mpc => self.stats.mpc_steps += 1,
            Mode::Terminal => self.stats.terminal_steps += 1,
        }
        self.triggered = false;
        self.last = Some((std::mem::replace(&mut self.e, e_next), u));
        self.s = s_next;
        Ok(())
    }
}

/// Runs the closed loop for `exp.steps` steps.
pub fn run(exp: &Experiment) -> Result<(RunReport, Trace)> {
    let mut ids: Vec<usize> = exp.agents.iter().map(|a| a.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::config("agent ids", "ids must be unique"));
    }
    let mut order: Vec<&AgentSetup> = exp.agents.iter().collect();
    order.sort_by_key(|a| a.id);
    let mut agents = order
        .into_iter()
        .map(|a| Runtime::new(a, exp))
        .collect::<Result<Vec<_>>>()?;
    let mut rec = Recorder {
        events: Vec::new(),
        hooks: BTreeMap::new(),
        first_failure: None,
        strict: exp.strict,
    };

    for k in 0..exp.steps {
        for a in agents.iter_mut().filter(|a| a.next_sample == k) {
            a.sample(k, exp, &mut rec)?;
        }
        for a in agents.iter_mut() {
            a.apply(k, exp, &mut rec)?;
        }
        let sent: Vec<Broadcast> = agents.iter_mut().filter_map(|a| a.outbox.take()).collect();
        for a in agents.iter_mut() {
            for b in &sent {
                if a.buffer.mu(b.sender).is_some() {
                    a.buffer.ingest(b.clone());
                }
            }
        }
    }

    let mut trace = Trace::default();
    let mut stats = Vec::with_capacity(agents.len());
    for a in agents {
        let mut st = a.stats;
        st.final_error_norm = a.e.norm();
        st.final_sync = a.s;
        stats.push(st);
        trace.agents.push(AgentTrace {
            id: a.setup.id,
            state_dim: a.setup.model.state_dim(),
            input_dim: a.setup.model.input_dim(),
            rows: a.rows,
        });
    }
    trace.events = rec.events;
    trace.sort_events();
    Ok((
        RunReport {
            seed: exp.seed,
            steps: exp.steps,
            agents: stats,
            hooks: rec.hooks,
            first_failure: rec.first_failure,
        },
        trace,
    ))
}

#[cfg(test)]
mod tests;
