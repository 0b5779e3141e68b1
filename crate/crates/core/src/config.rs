//! Experiment configuration: a TOML document with global settings and one
//! block per agent. Matrices are written row-major as arrays of rows.
//!
//! ```toml
//! period = 0.2
//! horizon = 6
//! steps = 100
//! seed = 7
//!
//! [[agents]]
//! id = 1
//! model = { kind = "unicycle" }
//! q = [[3.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 3.0]]
//! # ...
//! ```
//!
//! Parsing only checks the shape of the document; the mathematical gates
//! (Lipschitz sampling, terminal-region validation, tightening, inclusion,
//! disturbance bound) run in [`crate::verify`].

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::ReferencePath;
use crate::tightening::BoxSet;
use crate::{Error, Result};

/// The bundled three-robot formation experiment with synthesized terminal
/// ingredients.
pub const SEC5_FIXTURE: &str = include_str!("../fixtures/sec5.toml");

/// The same experiment with the printed terminal weights and gains in place of
/// synthesized ones. It does not pass the configuration gates.
pub const SEC5_PRINTED_FIXTURE: &str = include_str!("../fixtures/sec5_printed.toml");

fn default_eta_scale() -> f64 {
    1.0
}

fn is_false(v: &bool) -> bool {
    !*v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Sampling period `T` [s].
    pub period: f64,
    /// Prediction horizon `N`.
    pub horizon: usize,
    /// Number of simulated steps.
    pub steps: usize,
    /// Seed of the disturbance generators.
    pub seed: u64,
    /// Abort on the first failed verification hook.
    #[serde(default, skip_serializing_if = "is_false")]
    pub strict: bool,
    /// Disturbance bound of agents without an explicit `eta`, as a fraction
    /// of their admissible bound.
    #[serde(default = "default_eta_scale")]
    pub eta_scale: f64,
    #[serde(default)]
    pub output: OutputConfig,
    pub agents: Vec<AgentConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory for trace files; the CLI flag `--out-dir` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub id: usize,
    pub model: ModelConfig,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    /// Triggering performance factor `σ ∈ (0, 1)`.
    pub sigma: f64,
    /// Terminal radius `ε`.
    pub eps: f64,
    /// Enlarged terminal radius `ε_r > ε`.
    pub eps_r: f64,
    /// Initial error state.
    pub e0: Vec<f64>,
    /// Initial synchronization value.
    #[serde(default)]
    pub s0: f64,
    /// Synchronization weights `Y`, `Z`.
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// Lipschitz constant of `g(e, u) = f(e, u) − e` on the state set.
    pub l_g: f64,
    /// Lipschitz constant of the terminal closed loop; estimated from samples
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_kappa: Option<f64>,
    /// Explicit disturbance bound; `eta_scale × admissible` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    pub state_bounds: BoxConfig,
    pub input_bounds: BoxConfig,
    /// Planar reference path; required by the unicycle model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<ReferencePath>,
    pub terminal: TerminalConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub neighbors: Vec<NeighborConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Unicycle tracking-error model with the sampling period of the experiment.
    Unicycle,
    /// `e⁺ = G e + H u`.
    Linear { g: Vec<Vec<f64>>, h: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxConfig {
    pub fn symmetric(bounds: &[f64]) -> Self {
        Self {
            lower: bounds.iter().map(|b| -b).collect(),
            upper: bounds.to_vec(),
        }
    }

    pub fn to_box(&self) -> Result<BoxSet> {
        BoxSet::new(
            DVector::from_column_slice(&self.lower),
            DVector::from_column_slice(&self.upper),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalConfig {
    /// LQR gain on the linearization at the initial reference and `P` from
    /// the Lyapunov equation with `Q*` inflated by `1 + margin`.
    Synthesize { margin: f64 },
    /// Given gain and weight.
    Fixed { k: Vec<Vec<f64>>, p: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeighborConfig {
    pub id: usize,
    /// Coupling weight `ρ_ij ≥ 0`.
    pub rho: f64,
    /// Extrapolation factor `μ_j`.
    pub mu: f64,
}

/// Row-major nested arrays to a matrix; `field` names the offending entry.
pub fn matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::config(field, "matrix must be nonempty"));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::config(
            field,
            format!("row {bad} has {} entries, expected {ncols}", rows[bad].len()),
        ));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Matrix to row-major nested arrays.
pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.check_shape()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// The bundled experiment.
    pub fn sec5() -> Self {
        Self::from_toml_str(SEC5_FIXTURE).expect("bundled fixture parses")
    }

    /// The bundled experiment with the printed terminal ingredients.
    pub fn sec5_printed() -> Self {
        Self::from_toml_str(SEC5_PRINTED_FIXTURE).expect("bundled fixture parses")
    }

    /// Index of the agent with `id`.
    pub fn agent_index(&self, id: usize) -> Option<usize> {
        self.agents.iter().position(|a| a.id == id)
    }

    /// Structural checks: dimensions, identifiers, adjacency and scalar ranges.
    pub fn check_shape(&self) -> Result<()> {
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::config("period", format!("T = {} must be positive", self.period)));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "N must be at least 1"));
        }
        if !(self.eta_scale >= 0.0 && self.eta_scale.is_finite()) {
            return Err(Error::config("eta_scale", format!("{} must be finite and ≥ 0", self.eta_scale)));
        }
        if self.agents.is_empty() {
            return Err(Error::config("agents", "at least one agent is required"));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if self.agents[..i].iter().any(|b| b.id == a.id) {
                return Err(Error::config("agents.id", format!("duplicate agent id {}", a.id)));
            }
        }
        for a in &self.agents {
            a.check_shape()?;
            for nb in &a.neighbors {
                if nb.id == a.id {
                    return Err(Error::config(
                        "adjacency",
                        format!("agent {} lists itself as a neighbor", a.id),
                    ));
                }
                if self.agent_index(nb.id).is_none() {
                    return Err(Error::config(
                        "adjacency",
                        format!("agent {} lists unknown neighbor {}", a.id, nb.id),
                    ));
                }
            }
        }
        Ok(())
    }
}

impl AgentConfig {
    /// `(n, m)` of the configured model.
    pub fn dims(&self) -> Result<(usize, usize)> {
        match &self.model {
            ModelConfig::Unicycle => Ok((3, 2)),
            ModelConfig::Linear { g, h } => {
                let g = matrix(g, "model.g")?;
                let h = matrix(h, "model.h")?;
                if !g.is_square() || h.nrows() != g.nrows() {
                    return Err(Error::config("model", "G must be square and H must have as many rows as G"));
                }
                Ok((g.nrows(), h.ncols()))
            }
        }
    }

    fn check_shape(&self) -> Result<()> {
        let id = self.id;
        let ctx = |field: &str| format!("agents[{id}].{field}");
        let (n, m) = self.dims()?;
        let square = |rows: &[Vec<f64>], size: usize, field: &str| -> Result<()> {
            let mat = matrix(rows, &ctx(field))?;
            if mat.shape() != (size, size) {
                return Err(Error::config(
                    ctx(field),
                    format!("expected {size}×{size}, got {}×{}", mat.nrows(), mat.ncols()),
                ));
            }
            Ok(())
        };
        square(&self.q, n, "q")?;
        square(&self.r, m, "r")?;
        for (field, len, want) in [
            ("e0", self.e0.len(), n),
            ("y", self.y.len(), m),
            ("z", self.z.len(), m),
            ("state_bounds.lower", self.state_bounds.lower.len(), n),
            ("state_bounds.upper", self.state_bounds.upper.len(), n),
            ("input_bounds.lower", self.input_bounds.lower.len(), m),
            ("input_bounds.upper", self.input_bounds.upper.len(), m),
        ] {
            if len != want {
                return Err(Error::config(ctx(field), format!("expected {want} entries, got {len}")));
            }
        }
        self.state_bounds.to_box().map_err(|e| Error::config(ctx("state_bounds"), e.to_string()))?;
        self.input_bounds.to_box().map_err(|e| Error::config(ctx("input_bounds"), e.to_string()))?;
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::config(ctx("sigma"), format!("σ = {} must lie in (0, 1)", self.sigma)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config(ctx("eps"), format!("ε = {} must be positive", self.eps)));
        }
        if !(self.eps_r > self.eps) {
            return Err(Error::config(
                ctx("eps_r"),
                format!("need ε_r > ε, got ε_r = {} and ε = {}", self.eps_r, self.eps),
            ));
        }
        if !(self.l_g > 0.0) {
            return Err(Error::config(ctx("l_g"), format!("L_g = {} must be positive", self.l_g)));
        }
        if let Some(l) = self.l_kappa {
            if !(l > 0.0) {
                return Err(Error::config(ctx("l_kappa"), format!("L_κ = {l} must be positive")));
            }
        }
        if let Some(eta) = self.eta {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(Error::config(ctx("eta"), format!("η = {eta} must be finite and ≥ 0")));
            }
        }
        if matches!(self.model, ModelConfig::Unicycle) && self.path.is_none() {
            return Err(Error::config(ctx("path"), "the unicycle model needs a reference path"));
        }
        match &self.terminal {
            TerminalConfig::Synthesize { margin } => {
                if !(*margin >= 0.0 && margin.is_finite()) {
                    return Err(Error::config(ctx("terminal.margin"), format!("{margin} must be ≥ 0")));
                }
            }
            TerminalConfig::Fixed { k, p } => {
                let k = matrix(k, &ctx("terminal.k"))?;
                if k.shape() != (m, n) {
                    return Err(Error::config(
                        ctx("terminal.k"),
                        format!("expected {m}×{n}, got {}×{}", k.nrows(), k.ncols()),
                    ));
                }
                square(p, n, "terminal.p")?;
            }
        }
        for nb in &self.neighbors {
            if !(nb.rho >= 0.0) {
                return Err(Error::config(ctx("neighbors.rho"), format!("ρ = {} must be ≥ 0", nb.rho)));
            }
            if !nb.mu.is_finite() {
                return Err(Error::config(ctx("neighbors.mu"), "μ must be finite"));
            }
        }
        Ok(())
    }
}
