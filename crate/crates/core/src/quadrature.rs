//! Tensorized Gauss-Legendre rules on mesh cells.

use crate::error::{Error, Result};
use crate::mesh::{MultiIndex, TensorMesh, MAX_DIM};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureRule {
    points: &'static [f64],
    weights: &'static [f64],
}

// Gauss-Legendre nodes and weights mapped to [0, 1].
const G2_POINTS: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];
const G2_WEIGHTS: [f64; 2] = [0.5, 0.5];
const G3_POINTS: [f64; 3] = [0.112_701_665_379_258_31, 0.5, 0.887_298_334_620_741_7];
const G3_WEIGHTS: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];

impl QuadratureRule {
    /// `g`-point Gauss rule per axis, `g` in {2, 3}.
    pub fn gauss(g: usize) -> Result<Self> {
        match g {
            2 => Ok(Self {
                points: &G2_POINTS,
                weights: &G2_WEIGHTS,
            }),
            3 => Ok(Self {
                points: &G3_POINTS,
                weights: &G3_WEIGHTS,
            }),
            _ => Err(Error::Config(format!(
                "quadrature must use 2 or 3 points per axis, got {g}"
            ))),
        }
    }

    pub fn points_per_axis(&self) -> usize {
        self.points.len()
    }

    /// Reference points and weights on `[0, 1]`.
    pub fn reference(&self) -> (&'static [f64], &'static [f64]) {
        (self.points, self.weights)
    }

    /// Number of tensor points in dimension `dim`.
    pub fn len(&self, dim: usize) -> usize {
        self.points.len().pow(dim as u32)
    }

    /// Visit every tensor point of `cell`: physical point `x`, reference
    /// coordinates `t` and physical weight `w`.
    pub fn for_each_point<F>(&self, mesh: &TensorMesh, cell: &MultiIndex, mut visit: F)
    where
        F: FnMut(&[f64], &[f64], f64),
    {
        let dim = mesh.dim();
        let (lo, h) = mesh.cell_box(cell);
        let g = self.points.len();
        let vol: f64 = h[..dim].iter().product();
        let mut x = [0.0; MAX_DIM];
        let mut t = [0.0; MAX_DIM];
        for p in 0..self.len(dim) {
            let mut rem = p;
            let mut w = vol;
            for a in (0..dim).rev() {
                let i = rem % g;
                rem /= g;
                t[a] = self.points[i];
                x[a] = lo[a] + h[a] * t[a];
                w *= self.weights[i];
            }
            visit(&x[..dim], &t[..dim], w);
        }
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss(2).expect("2-point rule exists")
    }
}
