//! Tensor-product rectangular meshes of the unit square and cube.
//!
//! Nodes are numbered lexicographically by their per-axis indices
//! `(k_1, ..., k_N)` with `k_1` the slowest-varying index. Cells follow the
//! same ordering over cell indices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// Per-axis index tuple; only the first `dim` entries are meaningful.
pub type MultiIndex = [usize; MAX_DIM];

const SUM_TOL: f64 = 1e-12;

/// Partition `0 = x_0 < x_1 < ... < x_M = 1` of the unit interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Grid1D {
    points: Vec<f64>,
}

impl Grid1D {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidMesh(format!(
                "a grid needs at least 2 cells, got {} points",
                points.len()
            )));
        }
        if points[0] != 0.0 || points[points.len() - 1] != 1.0 {
            return Err(Error::InvalidMesh(
                "grid must start at 0 and end at 1".into(),
            ));
        }
        if let Some(w) = points.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidMesh(format!(
                "grid points must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        let grid = Self { points };
        let total: f64 = grid.steps().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidMesh(format!("steps sum to {total}")));
        }
        Ok(grid)
    }

    /// `m` equal cells.
    pub fn uniform(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidMesh(format!(
                "need at least 2 cells per axis, got {m}"
            )));
        }
        let mut points: Vec<f64> = (0..=m).map(|k| k as f64 / m as f64).collect();
        points[m] = 1.0;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn cells(&self) -> usize {
        self.points.len() - 1
    }

    pub fn steps(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.windows(2).map(|w| w[1] - w[0])
    }

    pub fn step(&self, cell: usize) -> f64 {
        self.points[cell + 1] - self.points[cell]
    }

    pub fn max_step(&self) -> f64 {
        self.steps().fold(0.0, f64::max)
    }

    /// Uniform step if all steps agree to 1e-12 relative.
    pub fn uniform_step(&self) -> Option<f64> {
        let h = 1.0 / self.cells() as f64;
        self.steps()
            .all(|s| (s - h).abs() <= 1e-12 * h.max(1e-300) + 1e-15)
            .then_some(h)
    }

    /// Insert the midpoint of every cell.
    pub fn refine_halve(&self) -> Self {
        let mut points = Vec::with_capacity(2 * self.points.len() - 1);
        for w in self.points.windows(2) {
            points.push(w[0]);
            points.push(0.5 * (w[0] + w[1]));
        }
        points.push(1.0);
        Self { points }
    }

    /// Cell containing `x`; interior faces go to the lower cell.
    pub fn locate(&self, x: f64) -> Option<usize> {
        if !(0.0..=1.0).contains(&x) {
            return None;
        }
        // first index with points[i] >= x
        let i = self.points.partition_point(|&p| p < x);
        Some(i.saturating_sub(1).min(self.cells() - 1))
    }

    /// Index of the grid point equal to `x`, if any.
    pub fn point_index(&self, x: f64) -> Option<usize> {
        self.points
            .binary_search_by(|p| p.partial_cmp(&x).unwrap())
            .ok()
    }

    /// True if every point of `self` is also a point of `finer`.
    pub fn is_nested_in(&self, finer: &Grid1D) -> bool {
        self.points.iter().all(|&p| finer.point_index(p).is_some())
    }
}

impl TryFrom<Vec<f64>> for Grid1D {
    type Error = Error;
    fn try_from(points: Vec<f64>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<Grid1D> for Vec<f64> {
    fn from(g: Grid1D) -> Self {
        g.points
    }
}

/// Rectangular tensor mesh of `(0,1)^N` with coordinate split index `q`:
/// axes `0..q` form `X1`, axes `q..N` form `X2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorMesh {
    grids: Vec<Grid1D>,
    q: usize,
    h_max: f64,
    node_strides: MultiIndex,
    cell_strides: MultiIndex,
    boundary: Vec<bool>,
}

impl TensorMesh {
    pub fn new(grids: Vec<Grid1D>, q: usize) -> Result<Self> {
        let dim = grids.len();
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidMesh(format!(
                "dimension must be 2 or 3, got {dim}"
            )));
        }
        if q < 1 || q >= dim {
            return Err(Error::InvalidSplit { q, dim });
        }
        let h_max = grids.iter().map(Grid1D::max_step).fold(0.0, f64::max);

        let mut node_strides = [0; MAX_DIM];
        let mut cell_strides = [0; MAX_DIM];
        let (mut ns, mut cs) = (1, 1);
        for a in (0..dim).rev() {
            node_strides[a] = ns;
            cell_strides[a] = cs;
            ns *= grids[a].points().len();
            cs *= grids[a].cells();
        }

        let mut mesh = Self {
            grids,
            q,
            h_max,
            node_strides,
            cell_strides,
            boundary: Vec::new(),
        };
        mesh.boundary = (0..mesh.node_count())
            .map(|n| {
                let k = mesh.node_multi_index(n);
                (0..dim).any(|a| k[a] == 0 || k[a] == mesh.grids[a].cells())
            })
            .collect();
        Ok(mesh)
    }

    /// Uniform mesh with `cells[a]` cells along axis `a`.
    pub fn uniform(cells: &[usize], q: usize) -> Result<Self> {
        let grids = cells
            .iter()
            .map(|&m| Grid1D::uniform(m))
            .collect::<Result<Vec<_>>>()?;
        Self::new(grids, q)
    }

    /// Uniform mesh with `m` cells along each of `dim` axes.
    pub fn uniform_cube(dim: usize, m: usize, q: usize) -> Result<Self> {
        Self::uniform(&vec![m; dim], q)
    }

    pub fn dim(&self) -> usize {
        self.grids.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn grids(&self) -> &[Grid1D] {
        &self.grids
    }

    pub fn grid(&self, axis: usize) -> &Grid1D {
        &self.grids[axis]
    }

    /// Largest step over all axes.
    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn node_count(&self) -> usize {
        self.grids.iter().map(|g| g.points().len()).product()
    }

    pub fn cell_count(&self) -> usize {
        self.grids.iter().map(Grid1D::cells).product()
    }

    pub fn interior_count(&self) -> usize {
        self.grids.iter().map(|g| g.cells() - 1).product()
    }

    pub fn node_index(&self, k: &MultiIndex) -> usize {
        (0..self.dim()).map(|a| k[a] * self.node_strides[a]).sum()
    }

    pub fn node_multi_index(&self, mut n: usize) -> MultiIndex {
        let mut k = [0; MAX_DIM];
        for a in 0..self.dim() {
            k[a] = n / self.node_strides[a];
            n %= self.node_strides[a];
        }
        k
    }

    pub fn node_stride(&self, axis: usize) -> usize {
        self.node_strides[axis]
    }

    pub fn node_coords(&self, n: usize) -> [f64; MAX_DIM] {
        let k = self.node_multi_index(n);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.dim() {
            x[a] = self.grids[a].points()[k[a]];
        }
        x
    }

    pub fn is_boundary(&self, n: usize) -> bool {
        self.boundary[n]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn cell_multi_index(&self, mut c: usize) -> MultiIndex {
        let mut k = [0; MAX_DIM];
        for a in 0..self.dim() {
            k[a] = c / self.cell_strides[a];
            c %= self.cell_strides[a];
        }
        k
    }

    pub fn cell_index(&self, k: &MultiIndex) -> usize {
        (0..self.dim()).map(|a| k[a] * self.cell_strides[a]).sum()
    }

    /// Lower corner and extents of a cell.
    pub fn cell_box(&self, k: &MultiIndex) -> ([f64; MAX_DIM], [f64; MAX_DIM]) {
        let mut lo = [0.0; MAX_DIM];
        let mut h = [0.0; MAX_DIM];
        for a in 0..self.dim() {
            lo[a] = self.grids[a].points()[k[a]];
            h[a] = self.grids[a].step(k[a]);
        }
        (lo, h)
    }

    /// Node ids of the `2^N` cell corners. Corner `c` takes the upper node
    /// along axis `a` when bit `a` of `c` is set.
    pub fn cell_corners(&self, k: &MultiIndex) -> [usize; 1 << MAX_DIM] {
        let dim = self.dim();
        let base = self.node_index(k);
        let mut out = [0; 1 << MAX_DIM];
        for (c, slot) in out.iter_mut().enumerate().take(1 << dim) {
            *slot = base
                + (0..dim)
                    .filter(|a| c >> a & 1 == 1)
                    .map(|a| self.node_strides[a])
                    .sum::<usize>();
        }
        out
    }

    /// Split every cell in half along every axis.
    pub fn refine_halve(&self) -> Self {
        let grids = self.grids.iter().map(Grid1D::refine_halve).collect();
        Self::new(grids, self.q).expect("refinement of a valid mesh is valid")
    }

    /// True if every axis of `self` is nested in the matching axis of `fine`.
    pub fn is_nested_in(&self, fine: &TensorMesh) -> bool {
        self.dim() == fine.dim()
            && self
                .grids
                .iter()
                .zip(&fine.grids)
                .all(|(c, f)| c.is_nested_in(f))
    }

    /// Per-axis uniform steps, or `None` if any axis is graded.
    pub fn uniform_steps(&self) -> Option<Vec<f64>> {
        self.grids.iter().map(Grid1D::uniform_step).collect()
    }

    pub fn is_x1_axis(&self, axis: usize) -> bool {
        axis < self.q
    }
}
