//! Discrete-time error-subsystem models, the synchronization-parameter law and
//! parameterized reference paths.
//!
//! A model maps `(e, u, u_r)` to the nominal successor `f(e, u)`, where `u_r`
//! is the reference input at the current step (for the unicycle: reference
//! linear and angular velocity). The true plant adds a bounded disturbance.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::spectral_norm;
use crate::sampling::Halton;
use crate::tightening::BoxSet;
use crate::{Error, Result};

pub type ErrorState = DVector<f64>;
pub type ControlInput = DVector<f64>;
pub type Disturbance = DVector<f64>;

const FD_STEP: f64 = 1e-6;

pub trait ErrorModel: Debug + Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    /// Nominal successor `f(e, u)` given the reference input `u_r` at this step.
    fn step(&self, e: &ErrorState, u: &ControlInput, reference: &ControlInput) -> ErrorState;

    /// `(∂f/∂e, ∂f/∂u)` at `(e, u)`. Defaults to central differences.
    fn jacobians(
        &self,
        e: &ErrorState,
        u: &ControlInput,
        reference: &ControlInput,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        finite_difference_jacobians(self, e, u, reference, FD_STEP)
    }
}

pub fn finite_difference_jacobians<M: ErrorModel + ?Sized>(
    model: &M,
    e: &ErrorState,
    u: &ControlInput,
    reference: &ControlInput,
    h: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = model.state_dim();
    let m = model.input_dim();
    let mut ja = DMatrix::zeros(n, n);
    let mut jb = DMatrix::zeros(n, m);
    for j in 0..n {
        let mut ep = e.clone();
        let mut em = e.clone();
        ep[j] += h;
        em[j] -= h;
        let col = (model.step(&ep, u, reference) - model.step(&em, u, reference)) / (2.0 * h);
        ja.set_column(j, &col);
    }
    for j in 0..m {
        let mut up = u.clone();
        let mut um = u.clone();
        up[j] += h;
        um[j] -= h;
        let col = (model.step(e, &up, reference) - model.step(e, &um, reference)) / (2.0 * h);
        jb.set_column(j, &col);
    }
    (ja, jb)
}

/// Tracking-error model of a nonholonomic wheeled robot, forward-Euler
/// discretized with period `T`.
///
/// State `(x_e, y_e, θ_e)`, input `(v_e, w_e)`, reference input `(v_r, w_r)`.
/// The robot's own angular velocity is reconstructed as `w = w_r − w_e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Unicycle {
    pub period: f64,
}

impl ErrorModel for Unicycle {
    fn state_dim(&self) -> usize {
        3
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn step(&self, e: &ErrorState, u: &ControlInput, reference: &ControlInput) -> ErrorState {
        let t = self.period;
        let (x, y, th) = (e[0], e[1], e[2]);
        let (ve, we) = (u[0], u[1]);
        let (vr, wr) = (reference[0], reference[1]);
        let w = wr - we;
        DVector::from_vec(vec![
            x + t * (w * y + ve),
            y + t * (-w * x + vr * th.sin()),
            th + t * we,
        ])
    }

    fn jacobians(
        &self,
        e: &ErrorState,
        u: &ControlInput,
        reference: &ControlInput,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let t = self.period;
        let (x, y, th) = (e[0], e[1], e[2]);
        let (vr, wr) = (reference[0], reference[1]);
        let w = wr - u[1];
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, t * w, 0.0, -t * w, 1.0, t * vr * th.cos(), 0.0, 0.0, 1.0],
        );
        let b = DMatrix::from_row_slice(3, 2, &[t, -t * y, 0.0, t * x, 0.0, t]);
        (a, b)
    }
}

/// `e⁺ = G e + H u`; ignores the reference input.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(g: DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        if !g.is_square() || h.nrows() != g.nrows() {
            return Err(Error::Dimension {
                context: "linear model",
                expected: g.nrows(),
                got: h.nrows(),
            });
        }
        Ok(Self { g, h })
    }
}

impl ErrorModel for LinearModel {
    fn state_dim(&self) -> usize {
        self.g.nrows()
    }

    fn input_dim(&self) -> usize {
        self.h.ncols()
    }

    fn step(&self, e: &ErrorState, u: &ControlInput, _reference: &ControlInput) -> ErrorState {
        &self.g * e + &self.h * u
    }

    fn jacobians(
        &self,
        _e: &ErrorState,
        _u: &ControlInput,
        _reference: &ControlInput,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.g.clone(), self.h.clone())
    }
}

fn check_dims(model: &dyn ErrorModel, e: &ErrorState, u: &ControlInput) -> Result<()> {
    if e.len() != model.state_dim() {
        return Err(Error::Dimension {
            context: "error state",
            expected: model.state_dim(),
            got: e.len(),
        });
    }
    if u.len() != model.input_dim() {
        return Err(Error::Dimension {
            context: "control input",
            expected: model.input_dim(),
            got: u.len(),
        });
    }
    Ok(())
}

/// Nominal prediction step `f(e, u)`.
pub fn step_nominal(
    model: &dyn ErrorModel,
    e: &ErrorState,
    u: &ControlInput,
    reference: &ControlInput,
) -> Result<ErrorState> {
    check_dims(model, e, u)?;
    Ok(model.step(e, u, reference))
}

/// True plant step `f(e, u) + d`, rejecting disturbances outside the `eta` ball.
pub fn step_true(
    model: &dyn ErrorModel,
    e: &ErrorState,
    u: &ControlInput,
    reference: &ControlInput,
    d: &Disturbance,
    eta: f64,
) -> Result<ErrorState> {
    check_dims(model, e, u)?;
    if d.len() != model.state_dim() {
        return Err(Error::Dimension {
            context: "disturbance",
            expected: model.state_dim(),
            got: d.len(),
        });
    }
    let norm = d.norm();
    if norm > eta * (1.0 + 1e-12) {
        return Err(Error::DisturbanceBound { norm, bound: eta });
    }
    Ok(model.step(e, u, reference) + d)
}

/// Synchronization-parameter update `s⁺ = s + T·(Y u + Z u_r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncLaw {
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub period: f64,
}

impl SyncLaw {
    pub fn new(y: DVector<f64>, z: DVector<f64>, period: f64) -> Result<Self> {
        if y.len() != z.len() {
            return Err(Error::Dimension {
                context: "sync weights",
                expected: y.len(),
                got: z.len(),
            });
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::config("sync law", format!("period must be positive, got {period}")));
        }
        Ok(Self { y, z, period })
    }

    pub fn step(&self, s: f64, u: &ControlInput, reference: &ControlInput) -> f64 {
        s + self.period * (self.y.dot(u) + self.z.dot(reference))
    }

    pub fn try_step(&self, s: f64, u: &ControlInput, reference: &ControlInput) -> Result<f64> {
        for (v, ctx) in [(u, "sync input"), (reference, "sync reference")] {
            if v.len() != self.y.len() {
                return Err(Error::Dimension {
                    context: ctx,
                    expected: self.y.len(),
                    got: v.len(),
                });
            }
        }
        Ok(self.step(s, u, reference))
    }
}

/// One rotating term `a·(cos(ω s + φ), sin(ω s + φ))` of an epicycle path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathTerm {
    pub amplitude: f64,
    pub rate: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Planar reference path `Γ(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferencePath {
    /// Sum of rotating terms; circles and formation offsets on circles.
    Epicycle { terms: Vec<PathTerm> },
    /// `origin + velocity·s`
    Line { origin: [f64; 2], velocity: [f64; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceInput {
    pub position: [f64; 2],
    pub heading: f64,
    /// Reference linear velocity `v_r`.
    pub speed: f64,
    /// Reference angular velocity `w_r`.
    pub turn_rate: f64,
}

impl ReferenceInput {
    /// `(v_r, w_r)` as a model reference vector.
    pub fn as_vector(&self) -> ControlInput {
        DVector::from_vec(vec![self.speed, self.turn_rate])
    }
}

impl ReferencePath {
    pub fn position(&self, s: f64) -> [f64; 2] {
        match self {
            ReferencePath::Epicycle { terms } => terms.iter().fold([0.0, 0.0], |acc, t| {
                let arg = t.rate * s + t.phase;
                [acc[0] + t.amplitude * arg.cos(), acc[1] + t.amplitude * arg.sin()]
            }),
            ReferencePath::Line { origin, velocity } => {
                [origin[0] + velocity[0] * s, origin[1] + velocity[1] * s]
            }
        }
    }

    /// Reference velocities at path parameter `s`, by central differences with
    /// step `h`. The parameter advances at one unit per second.
    pub fn inputs(&self, s: f64, h: f64) -> Result<ReferenceInput> {
        let p0 = self.position(s);
        let pp = self.position(s + h);
        let pm = self.position(s - h);
        let d1 = [(pp[0] - pm[0]) / (2.0 * h), (pp[1] - pm[1]) / (2.0 * h)];
        let d2 = [
            (pp[0] - 2.0 * p0[0] + pm[0]) / (h * h),
            (pp[1] - 2.0 * p0[1] + pm[1]) / (h * h),
        ];
        let speed = d1[0].hypot(d1[1]);
        if speed < 1e-9 {
            return Err(Error::SingularReference { s, speed });
        }
        Ok(ReferenceInput {
            position: p0,
            heading: d1[1].atan2(d1[0]),
            speed,
            turn_rate: (d1[0] * d2[1] - d1[1] * d2[0]) / (speed * speed),
        })
    }
}

/// Default finite-difference step for [`ReferencePath::inputs`].
pub const REFERENCE_FD_STEP: f64 = 1e-4;

/// `(v_r, w_r)` of `path` at `s` with the default difference step.
pub fn reference_inputs(path: &ReferencePath, s: f64) -> Result<(f64, f64)> {
    let r = path.inputs(s, REFERENCE_FD_STEP)?;
    Ok((r.speed, r.turn_rate))
}

/// Planar robot pose `(x, y, θ)` from the reference pose and the tracking
/// error, inverting `e = R(θ)ᵀ (p_r − p)`, `θ_e = θ_r − θ`.
pub fn pose_from_error(reference: &ReferenceInput, e: &ErrorState) -> [f64; 3] {
    let th = reference.heading - e[2];
    let (s, c) = th.sin_cos();
    [
        reference.position[0] - (c * e[0] - s * e[1]),
        reference.position[1] - (s * e[0] + c * e[1]),
        th,
    ]
}

/// Result of a sampled Lipschitz falsification.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzCheck {
    pub claimed: f64,
    pub max_ratio: f64,
    pub samples: usize,
}

impl LipschitzCheck {
    pub fn holds(&self) -> bool {
        self.max_ratio <= self.claimed
    }
}

/// Largest observed `‖g(e₁,u) − g(e₂,u)‖ / ‖e₁ − e₂‖` with `g(e,u) = f(e,u) − e`,
/// over pairs from `states` and inputs from `inputs`. Half of the pairs are
/// close pairs so the local slope is probed as well as the secant.
pub fn sample_lipschitz_g(
    model: &dyn ErrorModel,
    states: &BoxSet,
    inputs: &BoxSet,
    reference: &ControlInput,
    claimed: f64,
    samples: usize,
    seed: u64,
) -> LipschitzCheck {
    let n = model.state_dim();
    let m = model.input_dim();
    let mut halton = Halton::new(2 * n + m, seed);
    let g = |e: &ErrorState, u: &ControlInput| model.step(e, u, reference) - e;
    let mut max_ratio: f64 = 0.0;
    for i in 0..samples {
        let p = halton.next_point();
        let e1 = states.point_at(&p.rows(0, n).into_owned());
        let u = inputs.point_at(&p.rows(n, m).into_owned());
        let mut e2 = states.point_at(&p.rows(n + m, n).into_owned());
        if i % 2 == 1 {
            e2 = &e1 + (&e2 - &e1) * 1e-3;
        }
        let de = (&e1 - &e2).norm();
        if de < 1e-12 {
            continue;
        }
        max_ratio = max_ratio.max((g(&e1, &u) - g(&e2, &u)).norm() / de);
    }
    LipschitzCheck {
        claimed,
        max_ratio,
        samples,
    }
}

/// Same as [`sample_lipschitz_g`] but for the closed loop `g(e, K e)` on the
/// ellipsoid `{‖e‖_P ≤ radius}`.
pub fn sample_lipschitz_kappa(
    model: &dyn ErrorModel,
    gain: &DMatrix<f64>,
    weight: &DMatrix<f64>,
    radius: f64,
    reference: &ControlInput,
    claimed: f64,
    samples: usize,
    seed: u64,
) -> Result<LipschitzCheck> {
    let n = model.state_dim();
    let finv = crate::linalg::weight_factor(weight)?
        .try_inverse()
        .ok_or_else(|| Error::Model("singular terminal weight".into()))?;
    let mut a = Halton::new(n, seed);
    let mut b = Halton::new(n, seed ^ 0x9e37_79b9);
    let g = |e: &ErrorState| model.step(e, &(gain * e), reference) - e;
    let mut max_ratio: f64 = 0.0;
    for i in 0..samples {
        let e1 = &finv * a.next_in_unit_ball() * radius;
        let mut e2 = &finv * b.next_in_unit_ball() * radius;
        if i % 2 == 1 {
            e2 = &e1 + (&e2 - &e1) * 1e-3;
        }
        let de = (&e1 - &e2).norm();
        if de < 1e-14 {
            continue;
        }
        max_ratio = max_ratio.max((g(&e1) - g(&e2)).norm() / de);
    }
    Ok(LipschitzCheck {
        claimed,
        max_ratio,
        samples,
    })
}

/// Upper estimate of the Jacobian norm of `g(e, Ke) = f(e, Ke) − e` over sampled
/// points of the ellipsoid. Used to fill in `L_κ` when a configuration omits it.
pub fn estimate_kappa_slope(
    model: &dyn ErrorModel,
    gain: &DMatrix<f64>,
    weight: &DMatrix<f64>,
    radius: f64,
    reference: &ControlInput,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let n = model.state_dim();
    let finv = crate::linalg::weight_factor(weight)?
        .try_inverse()
        .ok_or_else(|| Error::Model("singular terminal weight".into()))?;
    let mut h = Halton::new(n, seed);
    let mut worst: f64 = 0.0;
    for i in 0..samples {
        let e = if i == 0 {
            DVector::zeros(n)
        } else {
            &finv * h.next_in_unit_ball() * radius
        };
        let u = gain * &e;
        let (a, b) = model.jacobians(&e, &u, reference);
        let jac = a + b * gain - DMatrix::identity(n, n);
        worst = worst.max(spectral_norm(&jac));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn origin_is_fixed_point() {
        let m = Unicycle { period: 0.2 };
        let r = v(&[0.3, 0.1]);
        assert_eq!(step_nominal(&m, &v(&[0.0; 3]), &v(&[0.0; 2]), &r).unwrap(), v(&[0.0; 3]));
    }

    #[test]
    fn unicycle_heading_error_feeds_lateral_error() {
        let m = Unicycle { period: 0.2 };
        let next = step_nominal(&m, &v(&[0.0, 0.0, PI / 10.0]), &v(&[0.0, 0.0]), &v(&[1.0, 0.0])).unwrap();
        assert_relative_eq!(next[0], 0.0);
        assert_relative_eq!(next[1], 0.2 * (PI / 10.0).sin(), epsilon = 1e-15);
        assert_relative_eq!(next[1], 0.061_803_398_874_989_48, epsilon = 1e-15);
        assert_relative_eq!(next[2], PI / 10.0);
    }

    #[test]
    fn unicycle_rotation_coupling() {
        // w = 0.5 with w_e = 0, so w_r = 0.5
        let m = Unicycle { period: 0.2 };
        for vr in [0.0, 0.7, 3.0] {
            let next =
                step_nominal(&m, &v(&[0.1, 0.2, 0.0]), &v(&[0.3, 0.0]), &v(&[vr, 0.5])).unwrap();
            assert_relative_eq!(next[0], 0.18, epsilon = 1e-15);
            assert_relative_eq!(next[1], 0.19, epsilon = 1e-15);
            assert_relative_eq!(next[2], 0.0);
        }
    }

    #[test]
    fn analytic_jacobians_match_differences() {
        let m = Unicycle { period: 0.2 };
        let e = v(&[0.1, -0.2, 0.25]);
        let u = v(&[0.4, -0.3]);
        let r = v(&[0.3, 0.1]);
        let (a, b) = m.jacobians(&e, &u, &r);
        let (fa, fb) = finite_difference_jacobians(&m, &e, &u, &r, 1e-6);
        assert!((a - fa).amax() < 1e-9);
        assert!((b - fb).amax() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = Unicycle { period: 0.2 };
        let err = step_nominal(&m, &v(&[0.0; 2]), &v(&[0.0; 2]), &v(&[0.0; 2])).unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 3, got: 2, .. }));
    }

    #[test]
    fn true_step_adds_disturbance() {
        let m = Unicycle { period: 0.2 };
        let eta = 1e-3;
        let d = v(&[eta, 0.0, 0.0]);
        let out = step_true(&m, &v(&[0.0; 3]), &v(&[0.0; 2]), &v(&[0.3, 0.1]), &d, eta).unwrap();
        assert_eq!(out, d);
        let too_big = v(&[2.0 * eta, 0.0, 0.0]);
        assert!(matches!(
            step_true(&m, &v(&[0.0; 3]), &v(&[0.0; 2]), &v(&[0.3, 0.1]), &too_big, eta),
            Err(Error::DisturbanceBound { .. })
        ));
    }

    #[test]
    fn sync_law_examples() {
        let law = SyncLaw::new(v(&[0.0, -1.0]), v(&[0.0, 1.0]), 0.2).unwrap();
        assert_relative_eq!(law.step(0.0, &v(&[0.5, 0.2]), &v(&[1.0, 0.1])), -0.02, epsilon = 1e-15);
        let u = v(&[0.4, 0.7]);
        let cancel = SyncLaw::new(v(&[1.0, -2.0]), v(&[-1.0, 2.0]), 0.2).unwrap();
        assert_eq!(cancel.step(1.5, &u, &u), 1.5);
        assert_eq!(law.step(1.5, &v(&[0.0, 0.0]), &v(&[0.0, 0.0])), 1.5);
        assert!(law.try_step(0.0, &v(&[0.0]), &v(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn circle_reference_velocities() {
        let path = ReferencePath::Epicycle {
            terms: vec![PathTerm { amplitude: 3.0, rate: 0.1, phase: 0.0 }],
        };
        for s in [0.0, 1.7, 25.0] {
            let (vr, wr) = reference_inputs(&path, s).unwrap();
            assert_relative_eq!(vr, 0.3, epsilon = 1e-7);
            assert_relative_eq!(wr, 0.1, epsilon = 1e-6);
        }
    }

    #[test]
    fn line_has_no_turn_rate_and_constant_is_singular() {
        let line = ReferencePath::Line { origin: [0.0, 0.0], velocity: [1.0, 0.0] };
        let (vr, wr) = reference_inputs(&line, 3.0).unwrap();
        assert_relative_eq!(vr, 1.0, epsilon = 1e-9);
        assert_eq!(wr, 0.0);
        let still = ReferencePath::Line { origin: [1.0, 2.0], velocity: [0.0, 0.0] };
        assert!(matches!(reference_inputs(&still, 0.0), Err(Error::SingularReference { .. })));
    }

    #[test]
    fn pose_inverts_error_definition() {
        let r = ReferenceInput { position: [1.0, 2.0], heading: 0.7, speed: 0.3, turn_rate: 0.1 };
        let e = v(&[0.05, -0.1, 0.2]);
        let [x, y, th] = pose_from_error(&r, &e);
        let (s, c) = th.sin_cos();
        let (dx, dy) = (r.position[0] - x, r.position[1] - y);
        assert_relative_eq!(c * dx + s * dy, e[0], epsilon = 1e-14);
        assert_relative_eq!(-s * dx + c * dy, e[1], epsilon = 1e-14);
        assert_relative_eq!(r.heading - th, e[2], epsilon = 1e-14);
    }
}
