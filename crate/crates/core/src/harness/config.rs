//! Declarative experiment configuration, accepted as TOML or JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::BUILTIN_IDS;

/// Evaluation times must stay this far away from the horizon: the
/// estimator is defined on [0, T) and gradient variance grows near T.
pub const NEAR_TERMINAL_CAP: f64 = 1e-3;

/// Largest number of evaluation points a lattice may expand to.
pub const MAX_LATTICE_POINTS: usize = 4096;

/// What the runner should measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Error against the reference at each depth in `levels`.
    Convergence,
    /// The convergence sweep repeated for each dimension in `dimensions`.
    DimensionScan,
    /// Coupled-path strong errors of the forward scheme over `grids`.
    EmRate,
    /// Instrumented ledgers reconciled against the cost model.
    CostAudit,
    /// Fixed-point residuals of estimator candidates at each depth.
    Residual,
}

impl Mode {
    pub fn tag(&self) -> &'static str {
        match self {
            Mode::Convergence => "convergence",
            Mode::DimensionScan => "dimension-scan",
            Mode::EmRate => "em-rate",
            Mode::CostAudit => "cost-audit",
            Mode::Residual => "residual",
        }
    }
}

/// One evaluation point (t, x).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub t: f64,
    pub x: Vec<f64>,
}

/// Evaluation points, either written out or spanned by a lattice over
/// [-radius, radius]^d at the listed times (per_axis = 1 places the single
/// node at the origin).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointsSpec {
    Explicit(Vec<EvalPoint>),
    Lattice { radius: f64, per_axis: usize, times: Vec<f64> },
}

impl Default for PointsSpec {
    fn default() -> Self {
        PointsSpec::Explicit(Vec::new())
    }
}

fn default_dim() -> usize {
    1
}

fn default_horizon() -> f64 {
    1.0
}

fn default_replications() -> u32 {
    100
}

/// A complete experiment description; (config, seed) determines every
/// numeric output byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in problem id; `mlp-pde problems` lists them.
    pub problem: String,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Growth rate of the manufactured solution; required by
    /// manufactured-grad, rejected elsewhere.
    #[serde(default)]
    pub kappa: Option<f64>,
    pub mode: Mode,
    /// Estimator depths n; used by convergence, dimension-scan,
    /// cost-audit, and residual modes.
    #[serde(default)]
    pub levels: Vec<u32>,
    /// Dimensions for dimension-scan.
    #[serde(default)]
    pub dimensions: Vec<usize>,
    /// Coarse grid counts K for em-rate.
    #[serde(default)]
    pub grids: Vec<u64>,
    /// Fine reference grid for em-rate (default 1024).
    #[serde(default)]
    pub reference_grid: Option<u64>,
    /// Coupled path count for em-rate (default 10000).
    #[serde(default)]
    pub paths: Option<u64>,
    /// Residual mode: Monte Carlo draws (default 20000).
    #[serde(default)]
    pub residual_samples: Option<u64>,
    /// Residual mode: grid count of the residual estimate (default 128).
    #[serde(default)]
    pub residual_grid: Option<u64>,
    #[serde(default = "default_replications")]
    pub replications: u32,
    #[serde(default)]
    pub points: PointsSpec,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !BUILTIN_IDS.contains(&self.problem.as_str()) {
            return Err(Error::Config(format!(
                "unknown problem {:?}; built-ins are {}",
                self.problem,
                BUILTIN_IDS.join(", ")
            )));
        }
        if self.dim == 0 {
            return Err(Error::Config("dim must be >= 1".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.problem == "manufactured-grad" {
            if self.kappa.is_none() {
                return Err(Error::Config("manufactured-grad needs kappa".into()));
            }
        } else if self.kappa.is_some() {
            return Err(Error::Config(format!("kappa has no meaning for {}", self.problem)));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        match self.mode {
            Mode::Convergence | Mode::DimensionScan => {
                if self.levels.is_empty() {
                    return Err(Error::Config(format!("{} mode needs levels", self.mode.tag())));
                }
                if self.replications < 2 {
                    return Err(Error::Config(
                        "error estimation needs replications >= 2".into(),
                    ));
                }
                if self.mode == Mode::DimensionScan {
                    if self.dimensions.is_empty() {
                        return Err(Error::Config("dimension-scan needs dimensions".into()));
                    }
                    if self.dimensions.contains(&0) {
                        return Err(Error::Config("dimensions must be >= 1".into()));
                    }
                    if matches!(self.points, PointsSpec::Explicit(_)) {
                        return Err(Error::Config(
                            "dimension-scan needs a lattice points spec, explicit points cannot span several dimensions".into(),
                        ));
                    }
                }
                self.require_points()?;
            }
            Mode::EmRate => {
                if self.grids.is_empty() {
                    return Err(Error::Config("em-rate mode needs grids".into()));
                }
                let k_ref = self.reference_grid.unwrap_or(1024);
                for &k in &self.grids {
                    if k == 0 || k >= k_ref || k_ref % k != 0 {
                        return Err(Error::Config(format!(
                            "em-rate grid {k} must be a proper divisor of the reference grid {k_ref}"
                        )));
                    }
                }
                if self.paths == Some(0) {
                    return Err(Error::Config("em-rate needs paths >= 1".into()));
                }
            }
            Mode::CostAudit => {
                if self.levels.is_empty() {
                    return Err(Error::Config("cost-audit mode needs levels".into()));
                }
            }
            Mode::Residual => {
                if self.levels.is_empty() {
                    return Err(Error::Config("residual mode needs levels".into()));
                }
                if self.residual_samples == Some(0) {
                    return Err(Error::Config("residual_samples must be >= 1".into()));
                }
                if self.residual_grid == Some(0) {
                    return Err(Error::Config("residual_grid must be >= 1".into()));
                }
                self.require_points()?;
            }
        }
        self.check_points_shape()?;
        Ok(())
    }

    fn require_points(&self) -> Result<()> {
        let empty = match &self.points {
            PointsSpec::Explicit(list) => list.is_empty(),
            PointsSpec::Lattice { times, .. } => times.is_empty(),
        };
        if empty {
            return Err(Error::Config(format!("{} mode needs evaluation points", self.mode.tag())));
        }
        Ok(())
    }

    fn check_points_shape(&self) -> Result<()> {
        let t_hi = self.horizon - NEAR_TERMINAL_CAP;
        let check_t = |t: f64| -> Result<()> {
            if !(t >= 0.0 && t <= t_hi) {
                return Err(Error::Config(format!(
                    "evaluation time {t} outside [0, {t_hi}] (horizon minus the near-terminal cap)"
                )));
            }
            Ok(())
        };
        match &self.points {
            PointsSpec::Explicit(list) => {
                for p in list {
                    check_t(p.t)?;
                    if self.mode != Mode::DimensionScan && p.x.len() != self.dim {
                        return Err(Error::Config(format!(
                            "point at t = {} has {} coordinates, dim is {}",
                            p.t,
                            p.x.len(),
                            self.dim
                        )));
                    }
                    if p.x.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Config("evaluation points must be finite".into()));
                    }
                }
            }
            PointsSpec::Lattice { radius, per_axis, times } => {
                if !(*radius >= 0.0 && radius.is_finite()) {
                    return Err(Error::Config(format!("lattice radius must be >= 0, got {radius}")));
                }
                if *per_axis == 0 {
                    return Err(Error::Config("lattice needs per_axis >= 1".into()));
                }
                for &t in times {
                    check_t(t)?;
                }
            }
        }
        Ok(())
    }

    /// Expands the point spec for a d-dimensional problem.
    pub fn expand_points(&self, dim: usize) -> Result<Vec<(f64, Vec<f64>)>> {
        match &self.points {
            PointsSpec::Explicit(list) => {
                Ok(list.iter().map(|p| (p.t, p.x.clone())).collect())
            }
            PointsSpec::Lattice { radius, per_axis, times } => {
                let total = per_axis
                    .checked_pow(dim as u32)
                    .and_then(|n| n.checked_mul(times.len()))
                    .unwrap_or(usize::MAX);
                if total > MAX_LATTICE_POINTS {
                    return Err(Error::Config(format!(
                        "lattice expands to {total} points in dimension {dim}, past the {MAX_LATTICE_POINTS} cap"
                    )));
                }
                let axis: Vec<f64> = if *per_axis == 1 {
                    vec![0.0]
                } else {
                    (0..*per_axis)
                        .map(|i| -radius + 2.0 * radius * i as f64 / (*per_axis - 1) as f64)
                        .collect()
                };
                let mut nodes: Vec<Vec<f64>> = vec![Vec::new()];
                for _ in 0..dim {
                    let mut next = Vec::with_capacity(nodes.len() * axis.len());
                    for node in &nodes {
                        for &a in &axis {
                            let mut n = node.clone();
                            n.push(a);
                            next.push(n);
                        }
                    }
                    nodes = next;
                }
                let mut points = Vec::with_capacity(times.len() * nodes.len());
                for &t in times {
                    for node in &nodes {
                        points.push((t, node.clone()));
                    }
                }
                Ok(points)
            }
        }
    }
}

/// Reads a configuration from TOML (default) or JSON (by extension) and
/// validates it. Parse errors keep the deserializer's line and field
/// diagnostics.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("could not read {}: {e}", path.display())))?;
    let is_json = path.extension().and_then(|e| e.to_str()) == Some("json");
    let config: ExperimentConfig = if is_json {
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    };
    config.validate()?;
    Ok(config)
}
