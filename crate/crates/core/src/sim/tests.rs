use nalgebra::{DMatrix, DVector};

use super::*;
use crate::dynamics::LinearModel;
use crate::ingredients::{synthesize_terminal, IngredientSpec};
use crate::tightening::tightened_boxes;

const N: usize = 8;

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

/// Double integrator agent; agents are chained `1 – 2 – … – count`.
fn agent(id: usize, count: usize, e0: &[f64], eta: f64) -> AgentSetup {
    let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]);
    let h = DMatrix::from_row_slice(2, 1, &[0.02, 0.2]);
    let q = DMatrix::identity(2, 2);
    let r = DMatrix::identity(1, 1) * 0.1;
    let (k, p) = synthesize_terminal(&g, &h, &q, &r, 0.3).unwrap();
    let state_set = BoxSet::symmetric(&[5.0, 5.0]);
    let ing = AgentIngredients::new(
        IngredientSpec {
            k,
            p,
            q,
            r,
            eps: 0.4,
            eps_r: 0.5,
            l_g: 1.25,
            l_kappa: 1.0,
        },
        &state_set,
    )
    .unwrap();
    let neighbors = [id.wrapping_sub(1), id + 1]
        .into_iter()
        .filter(|&j| (1..=count).contains(&j))
        .map(|j| Neighbor { id: j, rho: 1.0, mu: 1.0 })
        .collect();
    AgentSetup {
        id,
        model: Arc::new(LinearModel::new(g, h).unwrap()),
        sync: SyncLaw::new(v(&[1.0]), v(&[0.0]), 0.2).unwrap(),
        boxes: tightened_boxes(&state_set, eta, &ing, N).unwrap(),
        trigger: TriggerConstants::new(&ing, 0.5, eta, N).unwrap(),
        ing,
        state_set,
        input_set: BoxSet::symmetric(&[2.0]),
        eta,
        path: None,
        e0: v(e0),
        s0: 0.0,
        neighbors,
    }
}

fn experiment(eta: f64, seed: u64) -> Experiment {
    Experiment {
        period: 0.2,
        horizon: N,
        steps: 40,
        seed,
        strict: false,
        agents: vec![agent(2, 2, &[-0.8, 0.1], eta), agent(1, 2, &[1.0, 0.0], eta)],
    }
}

#[test]
fn nominal_run_reaches_terminal_mode_without_hook_failures() {
    let (report, trace) = run(&experiment(0.0, 1)).unwrap();
    assert_eq!(report.hook_failures(), 0, "{:?}", report.first_failure);
    assert_eq!(report.constraint_violations(), 0);
    for a in &report.agents {
        assert_eq!(a.steps, 40);
        assert!(a.terminal_steps > 0, "agent {} never reached the terminal region", a.id);
        assert!(a.solves < a.steps);
        assert_eq!(a.recoveries, 0);
    }
    // agents are reported in ascending id regardless of setup order
    assert_eq!(trace.agents.iter().map(|a| a.id).collect::<Vec<_>>(), [1, 2]);
    for a in &trace.agents {
        assert_eq!(a.rows.len(), 40);
        assert!(a.rows.iter().enumerate().all(|(k, r)| r.k == k));
        assert_eq!(a.rows.last().unwrap().mode, "terminal");
    }
}

#[test]
fn every_agent_triggers_at_the_first_step() {
    let (_, trace) = run(&experiment(0.0, 1)).unwrap();
    for a in &trace.agents {
        assert!(a.rows[0].triggered);
    }
    let first: Vec<_> = trace.events.iter().filter(|e| e.k == 0 && e.kind == EventKind::Solve).collect();
    assert_eq!(first.len(), 2);
}

#[test]
fn triggers_follow_the_chosen_phase() {
    let (_, trace) = run(&experiment(0.0, 1)).unwrap();
    for a in &trace.agents {
        let mut next = 0;
        for r in &a.rows {
            assert_eq!(r.triggered, r.k == next, "agent {} at k = {}", a.id, r.k);
            if r.triggered {
                next = r.k + r.phase.max(1);
            }
        }
    }
}

#[test]
fn events_are_sorted_and_plans_are_read_after_they_are_sent() {
    let (_, trace) = run(&experiment(1e-3, 3)).unwrap();
    let keys: Vec<_> = trace.events.iter().map(|e| (e.k, e.agent, e.kind)).collect();
    assert!(keys.windows(2).all(|w| w[0] <= w[1]));
    // the first solves of both agents see no neighbor plan: their coupling is
    // against a held constant, equal to their own value (zero)
    let solves: Vec<_> = trace.events.iter().filter(|e| e.kind == EventKind::Solve).collect();
    assert!(solves.iter().all(|e| e.status != "recovery"));
}

#[test]
fn identical_seeds_give_identical_traces() {
    let a = run(&experiment(1e-3, 7)).unwrap();
    let b = run(&experiment(1e-3, 7)).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    let c = run(&experiment(1e-3, 8)).unwrap();
    assert_ne!(a.1, c.1);
}

#[test]
fn disturbances_respect_the_bound() {
    let (_, trace) = run(&experiment(1e-3, 11)).unwrap();
    let norms: Vec<f64> = trace.agents.iter().flat_map(|a| a.rows.iter().map(|r| r.d_norm)).collect();
    assert!(norms.iter().all(|&d| d <= 1e-3 * (1.0 + 1e-12)));
    assert!(norms.iter().any(|&d| d > 0.0));
}

#[test]
fn sync_values_follow_the_sync_law() {
    let (_, trace) = run(&experiment(0.0, 1)).unwrap();
    for a in &trace.agents {
        for w in a.rows.windows(2) {
            assert!((w[1].s - (w[0].s + 0.2 * w[0].u[0])).abs() < 1e-15);
        }
    }
}

#[test]
fn strict_mode_aborts_on_the_first_failed_hook() {
    let mut exp = experiment(0.0, 1);
    exp.agents[1].e0 = v(&[6.0, 0.0]);
    let (report, _) = run(&exp).unwrap();
    assert!(report.hooks[HOOK_CONSTRAINTS].failed > 0);
    assert!(report.first_failure.as_deref().unwrap().contains(HOOK_CONSTRAINTS));
    exp.strict = true;
    match run(&exp) {
        Err(Error::Verification(msg)) => assert!(msg.contains("agent 1 at k = 0"), "{msg}"),
        other => panic!("expected a verification error, got {other:?}"),
    }
}

#[test]
fn duplicate_ids_are_rejected() {
    let mut exp = experiment(0.0, 1);
    exp.agents[0].id = 1;
    assert!(matches!(run(&exp), Err(Error::Config { .. })));
}

#[test]
fn agent_seeds_differ() {
    assert_ne!(agent_seed(5, 1), agent_seed(5, 2));
    assert_ne!(agent_seed(5, 1), agent_seed(6, 1));
}
