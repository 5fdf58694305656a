//! JSON experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assembly::LoadMode;
use crate::error::{Error, Result};
use crate::mesh::{Grid1D, TensorMesh};
use crate::solver::DEFAULT_TOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Solve,
    SweepEps,
    #[serde(alias = "sweep-h")]
    SweepHUniform,
    CheckDecomp,
    CheckH2,
    Validate,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::SweepEps => "sweep-eps",
            Self::SweepHUniform => "sweep-h-uniform",
            Self::CheckDecomp => "check-decomp",
            Self::CheckH2 => "check-h2",
            Self::Validate => "validate",
        }
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub diffusion: String,
    /// Named parameters of the diffusion builtin.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub source: String,
    #[serde(default = "one")]
    pub source_scale: f64,
}

/// Cells per axis: one count for every axis or one per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellCounts {
    Cube(usize),
    PerAxis(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeshConfig {
    Uniform(CellCounts),
    /// Explicit breakpoints per axis.
    Points(Vec<Vec<f64>>),
}

impl MeshConfig {
    pub fn build(&self, dim: usize, q: usize) -> Result<TensorMesh> {
        match self {
            MeshConfig::Uniform(CellCounts::Cube(m)) => TensorMesh::uniform_cube(dim, *m, q),
            MeshConfig::Uniform(CellCounts::PerAxis(ms)) => {
                if ms.len() != dim {
                    return Err(Error::Config(format!(
                        "mesh has {} axes, dim is {dim}",
                        ms.len()
                    )));
                }
                TensorMesh::uniform(ms, q)
            }
            MeshConfig::Points(axes) => {
                if axes.len() != dim {
                    return Err(Error::Config(format!(
                        "mesh has {} axes, dim is {dim}",
                        axes.len()
                    )));
                }
                let grids = axes
                    .iter()
                    .map(|p| Grid1D::new(p.clone()))
                    .collect::<Result<Vec<_>>>()?;
                TensorMesh::new(grids, q)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Defaults to `20 sqrt(n) + 1000`.
    #[serde(default)]
    pub max_iter: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: None,
        }
    }
}

/// Pass criteria. Unset fields fall back to per-experiment defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub slope_min: Option<f64>,
    pub slope_max: Option<f64>,
    /// Allowed distance from the target slopes in `check-decomp`.
    pub slope_tolerance: Option<f64>,
    /// Largest max/min ratio of the combined indicator in `check-h2`.
    pub ratio_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Stem of the report files; defaults to the experiment kind.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub kind: Option<ExperimentKind>,
    pub problem: ProblemConfig,
    #[serde(default = "two")]
    pub dim: usize,
    #[serde(default = "one_usize")]
    pub q: usize,
    #[serde(default)]
    pub mesh: Option<MeshConfig>,
    #[serde(default)]
    pub eps: Vec<f64>,
    /// Cells per axis for each mesh of an h-sweep, coarsest first.
    #[serde(default)]
    pub cells: Vec<usize>,
    #[serde(default)]
    pub delta: Vec<f64>,
    #[serde(default = "one")]
    pub c2: f64,
    #[serde(default)]
    pub load: LoadMode,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Solve the limit problem instead (kind `solve` only).
    #[serde(default)]
    pub limit: bool,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default = "two")]
    pub reference_halvings: usize,
    /// Gauss points per axis used for stiffness, loads and norms.
    #[serde(default = "two")]
    pub quadrature_points: usize,
    /// Per-axis intervals of the decomposition quadrature.
    #[serde(default)]
    pub decomp_subdivisions: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn two() -> usize {
    2
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Minimal config for `kind` on the named problem; everything else at
    /// its default.
    pub fn new(kind: ExperimentKind, diffusion: &str, source: &str) -> Self {
        Self {
            name: None,
            kind: Some(kind),
            problem: ProblemConfig {
                diffusion: diffusion.into(),
                params: BTreeMap::new(),
                source: source.into(),
                source_scale: 1.0,
            },
            dim: 2,
            q: 1,
            mesh: None,
            eps: Vec::new(),
            cells: Vec::new(),
            delta: Vec::new(),
            c2: 1.0,
            load: LoadMode::default(),
            solver: SolverConfig::default(),
            limit: false,
            thresholds: Thresholds::default(),
            reference_halvings: 2,
            quadrature_points: 2,
            decomp_subdivisions: None,
            output: None,
            threads: None,
        }
    }

    pub fn kind(&self) -> Result<ExperimentKind> {
        self.kind
            .ok_or_else(|| Error::Config("experiment kind not set".into()))
    }

    /// Set the kind from the command line, refusing a conflicting value in
    /// the file.
    pub fn with_kind(mut self, kind: ExperimentKind) -> Result<Self> {
        match self.kind {
            Some(k) if k != kind => Err(Error::Config(format!(
                "config declares kind '{k}' but '{kind}' was requested"
            ))),
            _ => {
                self.kind = Some(kind);
                Ok(self)
            }
        }
    }

    pub fn stem(&self) -> String {
        match (&self.name, self.kind) {
            (Some(n), _) => n.clone(),
            (None, Some(k)) => k.as_str().into(),
            (None, None) => "experiment".into(),
        }
    }

    /// Checks that do not need the problem registry.
    pub fn validate(&self) -> Result<()> {
        let kind = self.kind()?;
        if !(2..=3).contains(&self.dim) || self.q == 0 || self.q >= self.dim {
            return Err(Error::InvalidSplit {
                q: self.q,
                dim: self.dim,
            });
        }
        if let Some(&e) = self.eps.iter().find(|&&e| !(e > 0.0 && e <= 1.0)) {
            return Err(Error::InvalidEpsilon(e));
        }
        if let Some(&m) = self.cells.iter().find(|&&m| m < 2) {
            return Err(Error::Config(format!(
                "cells per axis must be >= 2, got {m}"
            )));
        }
        if !(self.solver.tol > 0.0) {
            return Err(Error::Config(format!(
                "solver tolerance must be positive, got {}",
                self.solver.tol
            )));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("thread count must be positive".into()));
        }
        if !self.problem.source_scale.is_finite() {
            return Err(Error::Config("source_scale must be finite".into()));
        }
        match kind {
            ExperimentKind::Solve => {
                if self.eps.len() > 1 {
                    return Err(Error::Config("solve takes at most one eps".into()));
                }
            }
            ExperimentKind::SweepEps | ExperimentKind::CheckH2 => {
                if self.eps.len() < 2 {
                    return Err(Error::Config(format!(
                        "{kind} needs at least 2 eps values, got {}",
                        self.eps.len()
                    )));
                }
            }
            ExperimentKind::SweepHUniform => {
                if self.eps.is_empty() {
                    return Err(Error::Config(
                        "sweep-h-uniform needs a non-empty eps list".into(),
                    ));
                }
                if self.cells.len() < 2 {
                    return Err(Error::Config(
                        "sweep-h-uniform needs at least 2 meshes".into(),
                    ));
                }
                if self.cells.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Config(
                        "cells must increase strictly (h sorted descending)".into(),
                    ));
                }
                if self.reference_halvings == 0 {
                    return Err(Error::Config("reference_halvings must be positive".into()));
                }
            }
            ExperimentKind::CheckDecomp => {
                if self.delta.len() < 2 {
                    return Err(Error::Config(
                        "check-decomp needs at least 2 delta values".into(),
                    ));
                }
                if let Some(&d) = self.delta.iter().find(|&&d| !(d > 0.0 && d < 1.0)) {
                    return Err(Error::InvalidDelta(d));
                }
            }
            ExperimentKind::Validate => {}
        }
        if self.mesh.is_none()
            && matches!(
                kind,
                ExperimentKind::Solve | ExperimentKind::SweepEps | ExperimentKind::CheckH2
            )
        {
            return Err(Error::Config(format!("{kind} needs a mesh")));
        }
        if self.limit && kind != ExperimentKind::Solve {
            return Err(Error::Config("limit applies to solve only".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let c = ExperimentConfig::from_json(
            r#"{
                "kind": "sweep-eps",
                "problem": {"diffusion": "variable-offdiag", "params": {"c": 12}, "source": "sine-product"},
                "mesh": {"uniform": 64},
                "eps": [0.5, 0.25],
                "solver": {"tol": 1e-11},
                "thresholds": {"slope_min": 0.9, "slope_max": 1.1}
            }"#,
        )
        .unwrap();
        assert_eq!(c.kind, Some(ExperimentKind::SweepEps));
        assert_eq!(c.problem.params["c"], 12.0);
        assert_eq!(c.mesh, Some(MeshConfig::Uniform(CellCounts::Cube(64))));
        assert_eq!(c.solver.max_iter, None);
        assert_eq!(c.dim, 2);
        c.validate().unwrap();
    }

    #[test]
    fn mesh_variants() {
        let m: MeshConfig = serde_json::from_str(r#"{"uniform": [2, 4]}"#).unwrap();
        assert_eq!(m.build(2, 1).unwrap().node_count(), 15);
        let m: MeshConfig =
            serde_json::from_str(r#"{"points": [[0, 0.2, 1], [0, 0.5, 1]]}"#).unwrap();
        assert_eq!(m.build(2, 1).unwrap().grid(0).step(0), 0.2);
        assert!(m.build(3, 1).is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ExperimentConfig::new(ExperimentKind::SweepHUniform, "identity", "one");
        c.cells = vec![8, 16];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.eps = vec![1.0, 0.0];
        assert!(matches!(c.validate(), Err(Error::InvalidEpsilon(_))));
        c.eps = vec![1.0];
        c.validate().unwrap();
        c.cells = vec![16, 8];
        assert!(c.validate().is_err());

        let mut s = ExperimentConfig::new(ExperimentKind::SweepEps, "identity", "one");
        s.mesh = Some(MeshConfig::Uniform(CellCounts::Cube(4)));
        s.eps = vec![0.5];
        assert!(matches!(s.validate(), Err(Error::Config(_))));

        assert!(ExperimentConfig::from_json(
            r#"{"problem": {"diffusion": "identity", "source": "one"}, "bogus": 1}"#
        )
        .is_err());
    }

    #[test]
    fn kind_conflict() {
        let c = ExperimentConfig::new(ExperimentKind::Solve, "identity", "one");
        assert!(c.clone().with_kind(ExperimentKind::Solve).is_ok());
        assert!(c.with_kind(ExperimentKind::SweepEps).is_err());
        assert_eq!(
            ExperimentConfig::new(ExperimentKind::CheckH2, "identity", "one").stem(),
            "check-h2"
        );
    }
}
