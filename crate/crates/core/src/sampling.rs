//! Deterministic sampling: scrambled Halton points for offline validation and
//! seeded uniform-ball draws for disturbances.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Halton sequence in `[0,1)^dim` with a seeded Cranley–Patterson rotation.
#[derive(Debug, Clone)]
pub struct Halton {
    dim: usize,
    shift: Vec<f64>,
    index: u64,
}

impl Halton {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim <= PRIMES.len(), "Halton dimension {dim} unsupported");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = (0..dim).map(|_| rng.random::<f64>()).collect();
        Self { dim, shift, index: 1 }
    }

    pub fn next_point(&mut self) -> DVector<f64> {
        let i = self.index;
        self.index += 1;
        DVector::from_iterator(
            self.dim,
            (0..self.dim).map(|d| (radical_inverse(i, PRIMES[d]) + self.shift[d]).fract()),
        )
    }

    /// Next point of the sequence that falls inside the unit ball, mapped from
    /// the cube `[-1,1]^dim`.
    pub fn next_in_unit_ball(&mut self) -> DVector<f64> {
        loop {
            let p = self.next_point().map(|x| 2.0 * x - 1.0);
            if p.norm_squared() <= 1.0 {
                return p;
            }
        }
    }

    /// Point on the unit sphere (radial projection of a ball point).
    pub fn next_on_unit_sphere(&mut self) -> DVector<f64> {
        loop {
            let p = self.next_in_unit_ball();
            let n = p.norm();
            if n > 1e-6 {
                return p / n;
            }
        }
    }
}

/// Maps a point `b` of the unit Euclidean ball into `{x : ‖x‖_P ≤ r}` given the
/// inverse weight factor `F⁻¹` (with `FᵀF = P`).
pub fn to_ellipsoid(b: &DVector<f64>, factor_inv: &DMatrix<f64>, radius: f64) -> DVector<f64> {
    factor_inv * b * radius
}

/// Seeded generator of disturbances uniform on the Euclidean ball of radius `eta`.
#[derive(Debug, Clone)]
pub struct DisturbanceSampler {
    eta: f64,
    dim: usize,
    rng: ChaCha8Rng,
}

impl DisturbanceSampler {
    pub fn new(eta: f64, dim: usize, seed: u64) -> Self {
        Self {
            eta,
            dim,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn sample(&mut self) -> DVector<f64> {
        if self.eta == 0.0 || self.dim == 0 {
            return DVector::zeros(self.dim);
        }
        let dir = loop {
            let g = DVector::from_iterator(
                self.dim,
                (0..self.dim).map(|_| self.rng.sample::<f64, _>(StandardNormal)),
            );
            let n = g.norm();
            if n > 1e-12 {
                break g / n;
            }
        };
        // inverse CDF of the radius of a uniform ball point
        let u: f64 = self.rng.random();
        dir * (self.eta * u.powf(1.0 / self.dim as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_is_deterministic_and_in_cube() {
        let mut a = Halton::new(3, 9);
        let mut b = Halton::new(3, 9);
        for _ in 0..100 {
            let p = a.next_point();
            assert_eq!(p, b.next_point());
            assert!(p.iter().all(|&x| (0.0..1.0).contains(&x)));
        }
    }

    #[test]
    fn disturbances_stay_in_ball() {
        let mut s = DisturbanceSampler::new(1e-3, 3, 4);
        let mut max: f64 = 0.0;
        for _ in 0..2000 {
            let d = s.sample();
            assert!(d.norm() <= 1e-3 * (1.0 + 1e-12));
            max = max.max(d.norm());
        }
        // radius law puts plenty of mass near the boundary
        assert!(max > 0.99e-3);
    }

    #[test]
    fn zero_bound_gives_zero() {
        let mut s = DisturbanceSampler::new(0.0, 3, 1);
        assert_eq!(s.sample(), DVector::zeros(3));
    }
}
