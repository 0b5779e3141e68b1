//! Exchange of synchronization-parameter plans between neighbors.

use std::collections::BTreeMap;

use crate::{Error, Result};

/// A neighbor's predicted synchronization sequence `s*_j(τ|k_j)`, `τ = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    pub sender: usize,
    pub instant: usize,
    pub s_seq: Vec<f64>,
}

/// Latest broadcast per neighbor plus the per-neighbor extrapolation factor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborBuffer {
    latest: BTreeMap<usize, Broadcast>,
    mu: BTreeMap<usize, f64>,
}

impl NeighborBuffer {
    /// Buffer for the given `(neighbor, μ_j)` pairs.
    pub fn new(neighbors: impl IntoIterator<Item = (usize, f64)>) -> Self {
        Self {
            latest: BTreeMap::new(),
            mu: neighbors.into_iter().collect(),
        }
    }

    pub fn neighbors(&self) -> impl Iterator<Item = usize> + '_ {
        self.mu.keys().copied()
    }

    pub fn mu(&self, neighbor: usize) -> Option<f64> {
        self.mu.get(&neighbor).copied()
    }

    pub fn latest(&self, neighbor: usize) -> Option<&Broadcast> {
        self.latest.get(&neighbor)
    }

    /// Stores `b` if it is strictly newer than what is held for its sender;
    /// for equal instants the first arrival is kept. Returns whether it was stored.
    pub fn ingest(&mut self, b: Broadcast) -> bool {
        match self.latest.get(&b.sender) {
            Some(old) if old.instant >= b.instant => false,
            _ => {
                self.latest.insert(b.sender, b);
                true
            }
        }
    }

    /// Time-aligned assumed sequence of length `horizon` for neighbor `j` at
    /// `now`: `ŝ(τ) = s*_j(Δ+τ)` while `Δ+τ ≤ N`, then `ŝ(τ) = μ_j·ŝ(τ−1)`,
    /// where `Δ = now − k_j`.
    pub fn assumed_sequence(&self, j: usize, now: usize, horizon: usize) -> Result<Vec<f64>> {
        let b = self.latest.get(&j).ok_or(Error::ColdStart { neighbor: j })?;
        let mu = self.mu.get(&j).copied().unwrap_or(1.0);
        if now < b.instant {
            return Err(Error::config(
                "assumed sequence",
                format!("broadcast from {j} at {} lies after {now}", b.instant),
            ));
        }
        if b.s_seq.len() != horizon + 1 {
            return Err(Error::Dimension {
                context: "broadcast sequence",
                expected: horizon + 1,
                got: b.s_seq.len(),
            });
        }
        Ok(align(&b.s_seq, now - b.instant, horizon, mu))
    }

    /// Like [`Self::assumed_sequence`], holding `fallback` constant before the
    /// first broadcast from `j` has arrived.
    pub fn assumed_or_hold(&self, j: usize, now: usize, horizon: usize, fallback: f64) -> Result<Vec<f64>> {
        match self.assumed_sequence(j, now, horizon) {
            Err(Error::ColdStart { .. }) => Ok(vec![fallback; horizon]),
            other => other,
        }
    }
}

fn align(seq: &[f64], delta: usize, horizon: usize, mu: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(horizon);
    for tau in 0..horizon {
        let idx = delta + tau;
        let v = if idx <= horizon {
            seq[idx]
        } else if tau == 0 {
            seq[horizon] * mu.powi((idx - horizon) as i32)
        } else {
            mu * out[tau - 1]
        };
        out.push(v);
    }
    out
}

/// `Σ_τ Σ_j ρ_j |s(τ) − ŝ_j(τ)|²` over the first `horizon` entries.
pub fn coupling_cost(s_seq: &[f64], assumed: &[(f64, Vec<f64>)], horizon: usize) -> f64 {
    assumed
        .iter()
        .map(|(rho, hat)| {
            rho * (0..horizon)
                .map(|t| (s_seq[t] - hat[t]).powi(2))
                .sum::<f64>()
        })
        .sum()
}
