use nalgebra::{DMatrix, DVector};

use super::*;
use crate::dynamics::{LinearModel, Unicycle};
use crate::ingredients::{linearize, synthesize_terminal, IngredientSpec};
use crate::tightening::tightened_boxes;

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

struct Setup {
    model: Unicycle,
    ing: AgentIngredients,
    sync: SyncLaw,
    inputs: BoxSet,
    boxes: Vec<BoxSet>,
    reference: DVector<f64>,
}

fn unicycle_setup(eta: f64) -> Setup {
    let model = Unicycle { period: 0.2 };
    let reference = v(&[0.3, 0.1]);
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
    let boxes = tightened_boxes(&states, eta, &ing, 6).unwrap();
    Setup {
        model,
        ing,
        sync: SyncLaw::new(v(&[0.0, -1.0]), v(&[0.0, 1.0]), 0.2).unwrap(),
        inputs: BoxSet::symmetric(&[1.0, 1.0]),
        boxes,
        reference,
    }
}

fn problem<'a>(s: &'a Setup, e0: DVector<f64>, assumed: Vec<(f64, Vec<f64>)>, phi: Option<f64>) -> OcpProblem<'a> {
    OcpProblem {
        model: &s.model,
        ing: &s.ing,
        sync: &s.sync,
        horizon: 6,
        e0,
        s0: 0.0,
        references: vec![s.reference.clone(); 6],
        assumed,
        phi,
        input_set: &s.inputs,
        state_boxes: &s.boxes,
    }
}

#[test]
fn cost_at_origin_is_zero() {
    let s = unicycle_setup(0.0);
    let p = problem(&s, v(&[0.0; 3]), vec![], None);
    let c = build_cost(&p, &vec![v(&[0.0, 0.0]); 6]).unwrap();
    assert_eq!(c.total, 0.0);
    assert_eq!(c.stage, 0.0);
}

#[test]
fn cost_without_neighbors_is_stage_cost() {
    let s = unicycle_setup(0.0);
    let p = problem(&s, v(&[0.1, 0.0, 0.05]), vec![(0.0, vec![3.0; 6])], None);
    let c = build_cost(&p, &vec![v(&[0.1, -0.2]); 6]).unwrap();
    assert_eq!(c.total, c.stage);
}

#[test]
fn scalar_toy_cost() {
    let model = LinearModel::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
    let one = DMatrix::from_element(1, 1, 1.0);
    let ing = AgentIngredients::new(
        IngredientSpec {
            k: DMatrix::from_element(1, 1, -0.5),
            p: one.clone(),
            q: one.clone(),
            r: one,
            eps: 0.5,
            eps_r: 1.0,
            l_g: 0.0,
            l_kappa: 0.5,
        },
        &BoxSet::symmetric(&[2.0]),
    )
    .unwrap();
    let sync = SyncLaw::new(v(&[0.0]), v(&[0.0]), 1.0).unwrap();
    let inputs = BoxSet::symmetric(&[2.0]);
    let boxes = vec![BoxSet::symmetric(&[2.0]); 2];
    let p = OcpProblem {
        model: &model,
        ing: &ing,
        sync: &sync,
        horizon: 1,
        e0: v(&[1.0]),
        s0: 0.0,
        references: vec![v(&[0.0])],
        assumed: vec![],
        phi: None,
        input_set: &inputs,
        state_boxes: &boxes,
    };
    let c = build_cost(&p, &[v(&[-1.0])]).unwrap();
    assert_eq!(c.stage, 2.0);
    assert_eq!(c.total, 2.0);
}

#[test]
fn origin_solves_to_zero() {
    let s = unicycle_setup(0.0);
    let p = problem(&s, v(&[0.0; 3]), vec![], None);
    let sol = solve(&p, None).unwrap();
    assert_eq!(sol.status, SolverStatus::Converged);
    assert!(sol.total.abs() < 1e-14);
    assert!(sol.u_seq.iter().all(|u| u.amax() < 1e-8));
}

#[test]
fn terminal_controller_bounds_optimal_cost() {
    let s = unicycle_setup(0.0);
    let e0 = v(&[0.004, -0.003, 0.005]);
    assert!(s.ing.terminal_value(&e0) <= s.ing.eps * s.ing.eps);
    let p = problem(&s, e0.clone(), vec![], None);
    let mut e = e0.clone();
    let mut feedback = Vec::new();
    for r in &p.references {
        let u = s.ing.feedback(&e);
        e = s.model.step(&e, &u, r);
        feedback.push(u);
    }
    let oracle = build_cost(&p, &feedback).unwrap().total;
    let sol = solve(&p, None).unwrap();
    assert!(sol.total <= oracle + 1e-12, "{} > {}", sol.total, oracle);
}

#[test]
fn disturbed_agent_start_improves_on_zero_input() {
    let s = unicycle_setup(1e-4);
    let p = problem(&s, v(&[0.1, 0.2, -0.1]), vec![], None);
    let zero = build_cost(&p, &vec![v(&[0.0, 0.0]); 6]).unwrap();
    let sol = solve(&p, None).unwrap();
    assert_eq!(sol.status, SolverStatus::Converged);
    assert!(sol.stage_cost < zero.stage);
    assert!(is_feasible(&p, &sol));
    // recursion invariants of the returned prediction
    assert_eq!(sol.e_seq[0], p.e0);
    for t in 0..6 {
        let next = s.model.step(&sol.e_seq[t], &sol.u_seq[t], &p.references[t]);
        assert!((next - &sol.e_seq[t + 1]).amax() <= 1e-9);
        let sn = s.sync.step(sol.s_seq[t], &sol.u_seq[t], &p.references[t]);
        assert!((sn - sol.s_seq[t + 1]).abs() <= 1e-12);
    }
}

#[test]
fn solution_never_worse_than_feasible_warm_start() {
    let s = unicycle_setup(1e-4);
    let hat = vec![0.05; 6];
    let p = problem(&s, v(&[0.1, 0.2, -0.1]), vec![(1.0, hat)], None);
    let first = solve(&p, None).unwrap();
    let perturbed: Vec<_> = first.u_seq.iter().map(|u| u * 0.999).collect();
    let warm = evaluate(&p, perturbed.clone(), SolverStatus::Converged).unwrap();
    let again = solve(&p, Some(&perturbed)).unwrap();
    if is_feasible(&p, &warm) {
        assert!(again.total <= warm.total + 1e-12);
    }
    assert!(again.total <= first.total + 1e-6);
}

#[test]
fn stability_bound_is_respected() {
    let s = unicycle_setup(1e-4);
    let free = solve(&problem(&s, v(&[0.1, 0.2, -0.1]), vec![(1.0, vec![0.2; 6])], None), None).unwrap();
    let phi = free.stage_cost * 0.999;
    let p = problem(&s, v(&[0.1, 0.2, -0.1]), vec![(1.0, vec![0.2; 6])], Some(phi));
    let sol = solve(&p, Some(&free.u_seq)).unwrap();
    assert!(sol.stage_cost <= phi + STABILITY_TOL);
}

#[test]
fn infeasible_problem_names_a_constraint() {
    let s = unicycle_setup(1e-4);
    // far outside what six steps can fix, with an unreachable stability bound
    let p = problem(&s, v(&[0.29, 0.29, 0.3]), vec![], Some(0.0));
    match solve(&p, None) {
        Err(Error::Infeasible { constraint, violation }) => {
            assert!(!constraint.is_empty());
            assert!(violation > 0.0);
        }
        other => panic!("expected infeasibility, got {other:?}"),
    }
}

#[test]
fn solve_is_deterministic() {
    let s = unicycle_setup(1e-4);
    let p = problem(&s, v(&[0.1, 0.2, -0.1]), vec![(1.0, vec![0.1; 6])], None);
    let a = solve(&p, None).unwrap();
    let b = solve(&p, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn candidate_shapes() {
    let s = unicycle_setup(0.0);
    let prev: Vec<_> = (0..6).map(|i| v(&[0.1 * i as f64, -0.05 * i as f64])).collect();
    let refs = vec![s.reference.clone(); 6];
    let e_now = v(&[0.01, 0.02, -0.01]);
    let all_fb = warm_start_from(&prev, 6, &s.ing, &s.model, &e_now, &refs);
    let mut e = e_now.clone();
    for (t, u) in all_fb.iter().enumerate() {
        assert!((u - s.ing.feedback(&e)).amax() < 1e-15);
        e = s.model.step(&e, u, &refs[t]);
    }
    let shifted = warm_start_from(&prev, 1, &s.ing, &s.model, &e_now, &refs);
    for t in 0..5 {
        assert_eq!(shifted[t], prev[t + 1]);
    }
}

#[test]
fn nominal_candidate_replays_previous_tail() {
    let s = unicycle_setup(0.0);
    let p = problem(&s, v(&[0.1, 0.2, -0.1]), vec![], None);
    let sol = solve(&p, None).unwrap();
    let cand = warm_start_from(&sol.u_seq, 1, &s.ing, &s.model, &sol.e_seq[1], &p.references);
    let (e, _) = rollout(&s.model, &s.sync, &sol.e_seq[1], 0.0, &cand, &p.references).unwrap();
    for t in 0..5 {
        assert!((&e[t] - &sol.e_seq[t + 1]).amax() < 1e-15);
    }
}

#[test]
fn phi_examples() {
    let s = unicycle_setup(0.0);
    let mut ing = s.ing.clone();
    assert_eq!(phi_bound(&v(&[0.0; 3]), &v(&[0.0; 2]), 2.0, 0.0, &ing), 2.0);
    assert!(phi_bound(&v(&[0.1, 0.0, 0.0]), &v(&[0.0; 2]), 2.0, 0.0, &ing) < 2.0);
    // ‖e‖²_Q = 0.5, ‖u‖²_R = 0.1
    ing.q = DMatrix::identity(3, 3) * 0.5;
    ing.r = DMatrix::identity(2, 2) * 0.1;
    let phi = phi_bound(&v(&[1.0, 0.0, 0.0]), &v(&[1.0, 0.0]), 2.0, 0.01, &ing);
    assert!((phi - 1.41).abs() < 1e-14);
}
