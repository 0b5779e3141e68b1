//! Terminal ingredients: local feedback `K`, terminal weight `P`, terminal radii
//! and the constants derived from them.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::{finite_difference_jacobians, ControlInput, ErrorModel};
use crate::linalg::{
    dare, dlyap, is_positive_definite, lambda_max, lambda_min, quad_form, spectral_radius,
    symmetrize, weight_factor,
};
use crate::sampling::Halton;
use crate::tightening::BoxSet;
use crate::{Error, Result};

/// Offline constants of one agent, with cached spectral quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentIngredients {
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_star: DMatrix<f64>,
    pub eps: f64,
    pub eps_r: f64,
    pub l_g: f64,
    pub l_kappa: f64,
    pub l_q: f64,
    pub l_qstar: f64,
    pub l_p: f64,
    pub lambda_max_sqrt_p: f64,
    pub lambda_min_qstar: f64,
    pub lambda_max_p: f64,
    pub lambda_min_q: f64,
}

/// Raw inputs to [`AgentIngredients::new`].
#[derive(Debug, Clone)]
pub struct IngredientSpec {
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub eps: f64,
    pub eps_r: f64,
    pub l_g: f64,
    pub l_kappa: f64,
}

impl AgentIngredients {
    /// Validates the invariants and computes `Q*`, the cached spectra and the
    /// weighted-norm constants over `state_set`.
    pub fn new(spec: IngredientSpec, state_set: &BoxSet) -> Result<Self> {
        let IngredientSpec { k, p, q, r, eps, eps_r, l_g, l_kappa } = spec;
        let n = p.nrows();
        if !p.is_square() || q.shape() != (n, n) || k.ncols() != n || r.shape() != (k.nrows(), k.nrows()) {
            return Err(Error::Dimension {
                context: "terminal ingredients",
                expected: n,
                got: q.nrows(),
            });
        }
        for (name, m) in [("P", &p), ("Q", &q), ("R", &r)] {
            if !is_positive_definite(m) {
                return Err(Error::config(
                    "positive definiteness",
                    format!("{name} must be symmetric positive definite"),
                ));
            }
        }
        if !(eps > 0.0 && eps < eps_r) {
            return Err(Error::config(
                "terminal radii",
                format!("need 0 < eps < eps_r, got eps = {eps}, eps_r = {eps_r}"),
            ));
        }
        if !(l_g >= 0.0 && l_kappa >= 0.0) {
            return Err(Error::config("Lipschitz constants", "L_g and L_kappa must be nonnegative"));
        }
        let q_star = symmetrize(&(&q + k.transpose() * &r * &k));
        let (l_q, l_qstar, l_p) = weighted_norm_constants(&q, &q_star, &p, state_set)?;
        let lambda_max_p = lambda_max(&p);
        Ok(Self {
            lambda_max_sqrt_p: lambda_max_p.sqrt(),
            lambda_min_qstar: lambda_min(&q_star),
            lambda_max_p,
            lambda_min_q: lambda_min(&q),
            k,
            p,
            q,
            r,
            q_star,
            eps,
            eps_r,
            l_g,
            l_kappa,
            l_q,
            l_qstar,
            l_p,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.k.nrows()
    }

    /// `‖e‖²_P`
    pub fn terminal_value(&self, e: &DVector<f64>) -> f64 {
        quad_form(e, &self.p)
    }

    /// Stage cost `‖e‖²_Q + ‖u‖²_R`.
    pub fn stage_cost(&self, e: &DVector<f64>, u: &DVector<f64>) -> f64 {
        quad_form(e, &self.q) + quad_form(u, &self.r)
    }

    pub fn feedback(&self, e: &DVector<f64>) -> DVector<f64> {
        &self.k * e
    }
}

/// Jacobians of the model at the origin with zero input, by central differences.
pub fn linearize(model: &dyn ErrorModel, reference: &ControlInput) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let e = DVector::zeros(model.state_dim());
    let u = DVector::zeros(model.input_dim());
    let (g, h) = finite_difference_jacobians(model, &e, &u, reference, 1e-6);
    if g.iter().chain(h.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Model("non-finite Jacobian at the origin".into()));
    }
    Ok((g, h))
}

/// Default inflation of `Q*` in the Lyapunov solve.
pub const LYAPUNOV_MARGIN: f64 = 0.05;

/// LQR gain `K` on `(G, H, Q, R)` and `P` solving `G_cᵀ P G_c − P = −(1+margin)·Q*`.
pub fn synthesize_terminal(
    g: &DMatrix<f64>,
    h: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    margin: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let x = dare(g, h, q, r)?;
    let ht = h.transpose();
    let s = (r + &ht * &x * h)
        .try_inverse()
        .ok_or_else(|| Error::Synthesis("singular R + HᵀXH".into()))?;
    let k = -(s * &ht * &x * g);
    let gc = g + h * &k;
    if spectral_radius(&gc) >= 1.0 {
        return Err(Error::Synthesis("closed loop is not Schur stable".into()));
    }
    let q_star = q + k.transpose() * r * &k;
    let p = dlyap(&gc, &(q_star * (1.0 + margin)))?;
    Ok((k, p))
}

/// Relative residual of the linearized decrease condition
/// `G_cᵀPG_c − P + Q* ≼ 0`: the largest eigenvalue of the left-hand side divided
/// by `λ_max(Q*)`. Nonpositive when the condition holds.
pub fn lyapunov_residual(
    g: &DMatrix<f64>,
    h: &DMatrix<f64>,
    k: &DMatrix<f64>,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> f64 {
    let gc = g + h * k;
    let q_star = q + k.transpose() * r * k;
    lambda_max(&(gc.transpose() * p * &gc - p + &q_star)) / lambda_max(&q_star)
}

/// `L_M = 2·λ_max(M)·sup‖e‖` for `M ∈ {Q, Q*, P}`.
pub fn weighted_norm_constants(
    q: &DMatrix<f64>,
    q_star: &DMatrix<f64>,
    p: &DMatrix<f64>,
    state_set: &BoxSet,
) -> Result<(f64, f64, f64)> {
    let radius = state_set.max_norm()?;
    Ok((
        weighted_norm_constant(q, radius),
        weighted_norm_constant(q_star, radius),
        weighted_norm_constant(p, radius),
    ))
}

/// `2·λ_max(M)·radius`, valid for `‖e₁‖²_M − ‖e₂‖²_M` on the ball of `radius`.
pub fn weighted_norm_constant(m: &DMatrix<f64>, radius: f64) -> f64 {
    2.0 * lambda_max(m).max(0.0) * radius
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub input_violations: usize,
    pub invariance_violations: usize,
    pub decrease_violations: usize,
    /// Largest `‖f(e,Ke)‖²_P − ‖e‖²_P + ‖e‖²_{Q*}` seen (≤ 0 when decrease holds).
    pub worst_decrease: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.input_violations == 0 && self.invariance_violations == 0 && self.decrease_violations == 0
    }
}

/// Samples `Ω(ε_r)` (half interior, half boundary, plus the origin) and checks
/// input admissibility of `Ke`, invariance and the terminal decrease condition
/// on the nonlinear model.
pub fn validate_terminal_region(
    model: &dyn ErrorModel,
    reference: &ControlInput,
    ing: &AgentIngredients,
    input_set: &BoxSet,
    samples: usize,
    seed: u64,
) -> Result<ValidationReport> {
    let n = ing.state_dim();
    let finv = weight_factor(&ing.p)?
        .try_inverse()
        .ok_or_else(|| Error::Model("singular terminal weight".into()))?;
    let mut halton = Halton::new(n, seed);
    let mut report = ValidationReport {
        worst_decrease: f64::NEG_INFINITY,
        ..Default::default()
    };
    let r2 = ing.eps_r * ing.eps_r;
    for i in 0..samples {
        let b = match i {
            0 => DVector::zeros(n),
            _ if i % 2 == 0 => halton.next_on_unit_sphere(),
            _ => halton.next_in_unit_ball(),
        };
        let e = &finv * b * ing.eps_r;
        let u = ing.feedback(&e);
        let next = model.step(&e, &u, reference);
        let now = ing.terminal_value(&e);
        let after = ing.terminal_value(&next);
        let decrease = after - now + quad_form(&e, &ing.q_star);
        report.samples += 1;
        report.worst_decrease = report.worst_decrease.max(decrease);
        if !input_set.contains(&u, 1e-12) {
            report.input_violations += 1;
        }
        if after > r2 * (1.0 + 1e-12) {
            report.invariance_violations += 1;
        }
        if decrease > 1e-12 * (1.0 + now) {
            report.decrease_violations += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{LinearModel, Unicycle};
    use approx::assert_relative_eq;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn linearize_linear_model_is_exact() {
        let g = m(2, 2, &[0.9, 0.2, -0.1, 1.1]);
        let h = m(2, 1, &[0.0, 0.5]);
        let model = LinearModel::new(g.clone(), h.clone()).unwrap();
        let (gl, hl) = linearize(&model, &DVector::zeros(0)).unwrap();
        assert!((gl - g).amax() < 1e-8);
        assert!((hl - h).amax() < 1e-8);
    }

    #[test]
    fn linearize_unicycle_at_origin() {
        let reference = DVector::from_vec(vec![0.3, 0.1]);
        let (g, h) = linearize(&Unicycle { period: 0.2 }, &reference).unwrap();
        let g_expected = m(3, 3, &[1.0, 0.02, 0.0, -0.02, 1.0, 0.06, 0.0, 0.0, 1.0]);
        let h_expected = m(3, 2, &[0.2, 0.0, 0.0, 0.0, 0.0, 0.2]);
        assert!((&g - g_expected).amax() < 1e-8);
        assert!((&h - h_expected).amax() < 1e-8);
        let (g2, h2) = linearize(&Unicycle { period: 0.4 }, &reference).unwrap();
        let eye = DMatrix::identity(3, 3);
        assert!(((&g2 - &eye) - (&g - &eye) * 2.0).amax() < 1e-8);
        assert!((h2 - h * 2.0).amax() < 1e-8);
    }

    #[test]
    fn scalar_synthesis_closed_form() {
        let one = m(1, 1, &[1.0]);
        let (k, p) = synthesize_terminal(&m(1, 1, &[0.5]), &m(1, 1, &[0.0]), &one, &one, 0.05).unwrap();
        assert_relative_eq!(k[(0, 0)], 0.0);
        assert_relative_eq!(p[(0, 0)], 1.4, epsilon = 1e-12);
    }

    #[test]
    fn synthesis_stabilizes_marginal_system() {
        let eye = DMatrix::identity(2, 2);
        let (k, p) = synthesize_terminal(&eye, &eye, &eye, &eye, 0.05).unwrap();
        assert!(spectral_radius(&(&eye + &eye * &k)) < 1.0);
        assert!(lyapunov_residual(&eye, &eye, &k, &p, &eye, &eye) < 0.0);
    }

    #[test]
    fn unstabilizable_pair_is_rejected() {
        let g = m(1, 1, &[1.5]);
        let h = m(1, 1, &[0.0]);
        let one = m(1, 1, &[1.0]);
        assert!(matches!(synthesize_terminal(&g, &h, &one, &one, 0.05), Err(Error::Synthesis(_))));
    }

    #[test]
    fn weighted_norm_constant_examples() {
        assert_relative_eq!(weighted_norm_constant(&DMatrix::identity(3, 3), 1.0), 2.0);
        assert_eq!(weighted_norm_constant(&DMatrix::zeros(3, 3), 1.0), 0.0);
        let q = DMatrix::identity(3, 3) * 3.0;
        assert_relative_eq!(weighted_norm_constant(&q, 1.0), 3.0 * 2.0);
    }

    fn linear_ingredients(eps_r: f64) -> (LinearModel, AgentIngredients) {
        let g = m(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let h = m(2, 1, &[0.005, 0.1]);
        let q = DMatrix::identity(2, 2);
        let r = m(1, 1, &[0.1]);
        let (k, p) = synthesize_terminal(&g, &h, &q, &r, 0.05).unwrap();
        let ing = AgentIngredients::new(
            IngredientSpec { k, p, q, r, eps: eps_r / 2.0, eps_r, l_g: 0.1, l_kappa: 0.1 },
            &BoxSet::symmetric(&[10.0, 10.0]),
        )
        .unwrap();
        (LinearModel::new(g, h).unwrap(), ing)
    }

    #[test]
    fn linear_closed_loop_validates() {
        let (model, ing) = linear_ingredients(0.5);
        let report = validate_terminal_region(
            &model,
            &DVector::zeros(0),
            &ing,
            &BoxSet::symmetric(&[100.0]),
            2000,
            1,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.worst_decrease <= 0.0);
    }

    #[test]
    fn inflated_region_violates_inputs() {
        let (model, ing) = linear_ingredients(500.0);
        let report =
            validate_terminal_region(&model, &DVector::zeros(0), &ing, &BoxSet::symmetric(&[1.0]), 500, 1)
                .unwrap();
        assert!(report.input_violations > 0);
    }

    #[test]
    fn invalid_radii_are_rejected() {
        let (_, ing) = linear_ingredients(0.5);
        let spec = IngredientSpec {
            k: ing.k.clone(),
            p: ing.p.clone(),
            q: ing.q.clone(),
            r: ing.r.clone(),
            eps: 0.06,
            eps_r: 0.06,
            l_g: 0.1,
            l_kappa: 0.1,
        };
        let err = AgentIngredients::new(spec, &BoxSet::symmetric(&[1.0, 1.0])).unwrap_err();
        assert!(err.to_string().contains("terminal radii"), "{err}");
    }
}
