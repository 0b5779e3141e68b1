//! Constraint-set machinery: boxes, P-weighted balls, disturbance propagation
//! radii, box erosion and the admissible disturbance bound.

use nalgebra::{DMatrix, DVector};

use crate::ingredients::AgentIngredients;
use crate::{Error, Result};

/// Axis-aligned box `{x : lower ≤ x ≤ upper}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                context: "box bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().chain(upper.iter()).any(|v| v.is_nan()) {
            return Err(Error::config("box bounds", "NaN bound"));
        }
        Ok(Self { lower, upper })
    }

    /// `[−b_j, b_j]` in every component.
    pub fn symmetric(bounds: &[f64]) -> Self {
        let upper = DVector::from_column_slice(bounds);
        Self {
            lower: -&upper,
            upper,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// First component whose interval is inverted, if any.
    pub fn first_empty_component(&self) -> Option<usize> {
        (0..self.dim()).find(|&j| self.lower[j] > self.upper[j])
    }

    pub fn is_empty(&self) -> bool {
        self.first_empty_component().is_some()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|j| x[j] >= self.lower[j] - tol && x[j] <= self.upper[j] + tol)
    }

    /// Largest signed bound excess of `x` (≤ 0 inside).
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        (0..self.dim())
            .map(|j| (x[j] - self.upper[j]).max(self.lower[j] - x[j]))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Componentwise nearest point of the box.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dim(), (0..self.dim()).map(|j| x[j].clamp(self.lower[j], self.upper[j])))
    }

    /// Affine image of a point of the unit cube `[0,1]^n`.
    pub fn point_at(&self, unit: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|j| self.lower[j] + unit[j] * (self.upper[j] - self.lower[j])),
        )
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(self.upper.iter()).all(|v| v.is_finite())
    }

    /// `sup_{x ∈ box} ‖x‖`, attained at a vertex.
    pub fn max_norm(&self) -> Result<f64> {
        if !self.is_bounded() {
            return Err(Error::config("state set", "unbounded box has no finite radius"));
        }
        Ok(self
            .lower
            .iter()
            .zip(self.upper.iter())
            .map(|(l, u)| l.abs().max(u.abs()).powi(2))
            .sum::<f64>()
            .sqrt())
    }
}

/// `{x : ‖x‖_P ≤ radius}`
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedBall {
    pub weight: DMatrix<f64>,
    pub radius: f64,
}

impl WeightedBall {
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.dot(&(&self.weight * x)).max(0.0).sqrt() <= self.radius + tol
    }

    /// Support in the coordinate directions: `r·√((P⁻¹)_jj)`.
    pub fn axis_support(&self) -> Result<DVector<f64>> {
        let inv = self
            .weight
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Model("singular ball weight".into()))?;
        Ok(DVector::from_iterator(
            inv.nrows(),
            (0..inv.nrows()).map(|j| self.radius * inv[(j, j)].max(0.0).sqrt()),
        ))
    }
}

/// `(a^hi − a^lo)/(a − 1)` with `a = 1 + l`, continuous at `l = 0`.
pub(crate) fn geometric_gap(l: f64, hi: i32, lo: i32) -> f64 {
    if l.abs() < 1e-12 {
        (hi - lo) as f64
    } else {
        ((1.0 + l).powi(hi) - (1.0 + l).powi(lo)) / l
    }
}

/// Radius of the disturbance propagation set after `tau` steps:
/// `τ·η·λ_max(√P)·(1+L_g)^{τ−1}`.
pub fn lambda_radius(tau: usize, eta: f64, ing: &AgentIngredients) -> f64 {
    lambda_radius_raw(tau, eta, ing.lambda_max_sqrt_p, ing.l_g)
}

pub fn lambda_radius_raw(tau: usize, eta: f64, lambda_max_sqrt_p: f64, l_g: f64) -> f64 {
    if tau == 0 {
        return 0.0;
    }
    tau as f64 * eta * lambda_max_sqrt_p * (1.0 + l_g).powi(tau as i32 - 1)
}

/// Pontryagin difference `box ⊖ ball`, exact for boxes. Emptiness is reported
/// through [`BoxSet::is_empty`]; see [`tightened_boxes`] for the erroring form.
pub fn erode_box(b: &BoxSet, ball: &WeightedBall) -> Result<BoxSet> {
    if ball.weight.nrows() != b.dim() {
        return Err(Error::Dimension {
            context: "erosion weight",
            expected: b.dim(),
            got: ball.weight.nrows(),
        });
    }
    if ball.radius == 0.0 {
        return Ok(b.clone());
    }
    let h = ball.axis_support()?;
    Ok(BoxSet {
        lower: &b.lower + &h,
        upper: &b.upper - &h,
    })
}

/// `E ⊖ Λ(τ)` for `τ = 0..=N`; errors on the first empty set.
pub fn tightened_boxes(
    state_set: &BoxSet,
    eta: f64,
    ing: &AgentIngredients,
    horizon: usize,
) -> Result<Vec<BoxSet>> {
    (0..=horizon)
        .map(|tau| {
            let ball = WeightedBall {
                weight: ing.p.clone(),
                radius: lambda_radius(tau, eta, ing),
            };
            let eroded = erode_box(state_set, &ball)?;
            match eroded.first_empty_component() {
                Some(j) => Err(Error::EmptyTightening {
                    tau: Some(tau),
                    component: j,
                }),
                None => Ok(eroded),
            }
        })
        .collect()
}

/// Largest disturbance bound for which the propagated disturbance after the
/// full horizon fits between the terminal and the enlarged terminal radius:
/// `L_g(ε_r − ε) / (λ_max(√P)·[(1+L_g)^N − 1])`.
pub fn admissible_eta(ing: &AgentIngredients, horizon: usize) -> f64 {
    admissible_eta_raw(ing.eps, ing.eps_r, ing.lambda_max_sqrt_p, ing.l_g, horizon)
}

pub fn admissible_eta_raw(eps: f64, eps_r: f64, lambda_max_sqrt_p: f64, l_g: f64, horizon: usize) -> f64 {
    (eps_r - eps) / (lambda_max_sqrt_p * geometric_gap(l_g, horizon as i32, 0))
}

/// Largest `η` for which every contraction condition `Υ(m) ≤ 0`, `m ∈ [1, N]`,
/// holds. Closed form per `m`: `ε(c^{−m/2} − 1)·L_g / (λ_max(√P)[(1+L_g)^N − (1+L_g)^{N−m}])`.
pub fn lemma_eta_bound(ing: &AgentIngredients, horizon: usize) -> f64 {
    let c = 1.0 - ing.lambda_min_qstar / ing.lambda_max_p;
    (1..=horizon)
        .map(|m| {
            let gap = geometric_gap(ing.l_g, horizon as i32, (horizon - m) as i32);
            ing.eps * (c.powf(-(m as f64) / 2.0) - 1.0) / (ing.lambda_max_sqrt_p * gap)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Whether `Ω(ε_r)` fits inside the (tightened) box: per facet
/// `ε_r·√((P⁻¹)_jj) ≤ bound`.
pub fn check_inclusion(omega: &WeightedBall, tightened: &BoxSet) -> Result<bool> {
    if tightened.is_empty() {
        return Ok(false);
    }
    if omega.radius == 0.0 {
        return Ok(tightened.contains(&DVector::zeros(tightened.dim()), 0.0));
    }
    let h = omega.axis_support()?;
    Ok((0..tightened.dim()).all(|j| h[j] <= tightened.upper[j] && -h[j] >= tightened.lower[j]))
}
