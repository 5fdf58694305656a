//! Stiffness, mass and load assembly for Q1 elements on tensor meshes.
//!
//! Element contributions are computed in parallel over fixed-size chunks of
//! cells and scattered in cell order, which makes the assembled values
//! independent of the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{MultiIndex, TensorMesh, MAX_DIM};
use crate::problems::{check_epsilon, min_sym_eigenvalue, DiffusionSpec, Mat, SourceSpec};
use crate::quadrature::QuadratureRule;
use crate::space::{shape_gradient, shape_value, DofMap};
use crate::sparse::SparseMatrix;

const CELL_CHUNK: usize = 2048;
const MAX_LOCAL: usize = 1 << MAX_DIM;

/// How the right-hand side `f` enters the scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadMode {
    /// `int I_h(f) v`, computed exactly through the mass matrix.
    #[default]
    Interpolated,
    /// `int f v` by cell quadrature.
    Quadrature,
}

/// Sparsity pattern of the Q1 stencil restricted to `dofs`, or over all
/// nodes when `dofs` is `None`.
fn tensor_pattern(mesh: &TensorMesh, dofs: Option<&DofMap>) -> SparseMatrix {
    let dim = mesh.dim();
    let nodes: Vec<usize> = match dofs {
        Some(d) => d.nodes().to_vec(),
        None => (0..mesh.node_count()).collect(),
    };
    let rows = nodes
        .iter()
        .map(|&n| {
            let k = mesh.node_multi_index(n);
            let mut cols = Vec::with_capacity(3usize.pow(dim as u32));
            for s in 0..3usize.pow(dim as u32) {
                let mut kk = [0; MAX_DIM];
                let mut rem = s;
                let mut ok = true;
                for a in (0..dim).rev() {
                    let off = (rem % 3) as isize - 1;
                    rem /= 3;
                    let v = k[a] as isize + off;
                    if v < 0 || v > mesh.grid(a).cells() as isize {
                        ok = false;
                    }
                    kk[a] = v.max(0) as usize;
                }
                if !ok {
                    continue;
                }
                let nn = mesh.node_index(&kk);
                match dofs {
                    Some(d) => {
                        if let Some(j) = d.dof(nn) {
                            cols.push(j);
                        }
                    }
                    None => cols.push(nn),
                }
            }
            cols
        })
        .collect();
    SparseMatrix::with_pattern(rows)
}

/// Assemble `sum_cells E_cell` where `kernel` fills the `2^N x 2^N`
/// row-major element matrix of a cell.
fn assemble_matrix<K>(mesh: &TensorMesh, dofs: Option<&DofMap>, kernel: K) -> Result<SparseMatrix>
where
    K: Fn(&MultiIndex, &mut [f64]) -> Result<()> + Sync,
{
    let nloc = 1 << mesh.dim();
    let mut mat = tensor_pattern(mesh, dofs);
    let ncell = mesh.cell_count();
    let map = |node: usize| match dofs {
        Some(d) => d.dof(node),
        None => Some(node),
    };
    for start in (0..ncell).step_by(CELL_CHUNK) {
        let end = (start + CELL_CHUNK).min(ncell);
        let local: Vec<Vec<f64>> = (start..end)
            .into_par_iter()
            .map(|c| {
                let mut e = vec![0.0; nloc * nloc];
                kernel(&mesh.cell_multi_index(c), &mut e)?;
                Ok(e)
            })
            .collect::<Result<_>>()?;
        for (c, e) in (start..end).zip(&local) {
            let corners = mesh.cell_corners(&mesh.cell_multi_index(c));
            for i in 0..nloc {
                let Some(di) = map(corners[i]) else { continue };
                for j in 0..nloc {
                    let Some(dj) = map(corners[j]) else { continue };
                    let s = mat.slot(di, dj);
                    mat.values_mut()[s] += e[i * nloc + j];
                }
            }
        }
    }
    Ok(mat)
}

fn check_spec_matches(mesh: &TensorMesh, a: &DiffusionSpec) -> Result<()> {
    if a.dim() != mesh.dim() || a.q() != mesh.q() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient is (N={}, q={}) but mesh is (N={}, q={})",
            a.dim(),
            a.q(),
            mesh.dim(),
            mesh.q()
        )));
    }
    Ok(())
}

/// Element matrix of `int (K grad N_j) . grad N_i` for a pointwise `K`.
fn diffusion_kernel<C>(
    mesh: &TensorMesh,
    quad: &QuadratureRule,
    cell: &MultiIndex,
    out: &mut [f64],
    coefficient: &C,
) -> Result<()>
where
    C: Fn(&[f64]) -> Result<Mat>,
{
    let dim = mesh.dim();
    let nloc = 1 << dim;
    let (_, h) = mesh.cell_box(cell);
    let mut grads = [[0.0; MAX_DIM]; MAX_LOCAL];
    let mut err = None;
    quad.for_each_point(mesh, cell, |x, t, w| {
        if err.is_some() {
            return;
        }
        let k = match coefficient(x) {
            Ok(k) => k,
            Err(e) => {
                err = Some(e);
                return;
            }
        };
        for (c, g) in grads.iter_mut().enumerate().take(nloc) {
            shape_gradient(c, t, &h[..dim], &mut g[..dim]);
        }
        for j in 0..nloc {
            let mut kg = [0.0; MAX_DIM];
            for (a, kga) in kg.iter_mut().enumerate().take(dim) {
                *kga = (0..dim).map(|b| k[a][b] * grads[j][b]).sum();
            }
            for i in 0..nloc {
                let dot: f64 = (0..dim).map(|a| kg[a] * grads[i][a]).sum();
                out[i * nloc + j] += w * dot;
            }
        }
    });
    err.map_or(Ok(()), Err)
}

fn ellipticity_error(x: &[f64], value: f64) -> Error {
    Error::Validation(vec![format!(
        "coefficient not elliptic at {x:?}: smallest eigenvalue {value}"
    )])
}

/// Stiffness matrix of `int A_eps grad u . grad v` on the interior DOFs.
pub fn assemble_stiffness_eps(
    mesh: &TensorMesh,
    a: &DiffusionSpec,
    eps: f64,
    quad: &QuadratureRule,
) -> Result<SparseMatrix> {
    check_epsilon(eps)?;
    check_spec_matches(mesh, a)?;
    let dim = mesh.dim();
    let q = mesh.q();
    let dofs = DofMap::new(mesh);
    let coefficient = |x: &[f64]| -> Result<Mat> {
        let mut m = a.matrix(x);
        let lam = min_sym_eigenvalue(&m, dim);
        if !(lam > 0.0) {
            return Err(ellipticity_error(x, lam));
        }
        for (i, row) in m.iter_mut().enumerate().take(dim) {
            for (j, v) in row.iter_mut().enumerate().take(dim) {
                if i < q {
                    *v *= eps;
                }
                if j < q {
                    *v *= eps;
                }
            }
        }
        Ok(m)
    };
    assemble_matrix(mesh, Some(&dofs), |cell, out| {
        diffusion_kernel(mesh, quad, cell, out, &coefficient)
    })
}

/// Stiffness matrix of the limit form `int A22 grad_X2 u . grad_X2 v`.
pub fn assemble_limit_stiffness(
    mesh: &TensorMesh,
    a: &DiffusionSpec,
    quad: &QuadratureRule,
) -> Result<SparseMatrix> {
    check_spec_matches(mesh, a)?;
    if !a.flags().a22_x2_only {
        return Err(Error::AssumptionViolated(
            "limit problem requires A22 to depend on X2 only".into(),
        ));
    }
    let dim = mesh.dim();
    let q = mesh.q();
    let dofs = DofMap::new(mesh);
    let coefficient = |x: &[f64]| -> Result<Mat> {
        let full = a.matrix(x);
        let mut m = [[0.0; MAX_DIM]; MAX_DIM];
        for i in q..dim {
            for j in q..dim {
                m[i][j] = full[i][j];
            }
        }
        let lam = block_min_eigenvalue(&m, q, dim);
        if !(lam > 0.0) {
            return Err(ellipticity_error(x, lam));
        }
        Ok(m)
    };
    assemble_matrix(mesh, Some(&dofs), |cell, out| {
        diffusion_kernel(mesh, quad, cell, out, &coefficient)
    })
}

/// Smallest eigenvalue of the symmetric part of the trailing block.
fn block_min_eigenvalue(m: &Mat, q: usize, dim: usize) -> f64 {
    match dim - q {
        1 => m[q][q],
        2 => {
            let mut b = [[0.0; MAX_DIM]; MAX_DIM];
            for i in 0..2 {
                for j in 0..2 {
                    b[i][j] = m[q + i][q + j];
                }
            }
            min_sym_eigenvalue(&b, 2)
        }
        _ => unreachable!("q >= 1 and dim <= 3"),
    }
}

/// Full mass matrix over all nodes, boundary included.
pub fn assemble_mass(mesh: &TensorMesh) -> SparseMatrix {
    let quad = QuadratureRule::default();
    let nloc = 1 << mesh.dim();
    assemble_matrix(mesh, None, |cell, out| {
        quad.for_each_point(mesh, cell, |_, t, w| {
            for i in 0..nloc {
                let ni = shape_value(i, t);
                for j in 0..nloc {
                    out[i * nloc + j] += w * ni * shape_value(j, t);
                }
            }
        });
        Ok(())
    })
    .expect("mass kernel is infallible")
}

/// Load vector on the interior DOFs.
pub fn assemble_load(
    mesh: &TensorMesh,
    f: &SourceSpec,
    mode: LoadMode,
    quad: &QuadratureRule,
) -> Result<Vec<f64>> {
    let dofs = DofMap::new(mesh);
    match mode {
        LoadMode::Interpolated => {
            let mass = assemble_mass(mesh);
            load_from_mass(mesh, &mass, &dofs, f)
        }
        LoadMode::Quadrature => quadrature_load(mesh, &dofs, f, quad),
    }
}

/// `int I_h(f) N_i` for interior `i`, reusing a precomputed full mass matrix.
pub fn load_from_mass(
    mesh: &TensorMesh,
    mass: &SparseMatrix,
    dofs: &DofMap,
    f: &SourceSpec,
) -> Result<Vec<f64>> {
    let dim = mesh.dim();
    let nodal = (0..mesh.node_count())
        .map(|n| {
            let x = mesh.node_coords(n);
            let v = f.eval(&x[..dim]);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::InvalidSource(format!(
                    "non-finite value at {:?}",
                    &x[..dim]
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(dofs.restrict(&mass.mul(&nodal)))
}

fn quadrature_load(
    mesh: &TensorMesh,
    dofs: &DofMap,
    f: &SourceSpec,
    quad: &QuadratureRule,
) -> Result<Vec<f64>> {
    let nloc = 1 << mesh.dim();
    let ncell = mesh.cell_count();
    let mut b = vec![0.0; dofs.len()];
    for start in (0..ncell).step_by(CELL_CHUNK) {
        let end = (start + CELL_CHUNK).min(ncell);
        let local: Vec<[f64; MAX_LOCAL]> = (start..end)
            .into_par_iter()
            .map(|c| {
                let mut e = [0.0; MAX_LOCAL];
                let mut bad = None;
                quad.for_each_point(mesh, &mesh.cell_multi_index(c), |x, t, w| {
                    let v = f.eval(x);
                    if !v.is_finite() {
                        bad = Some(x.to_vec());
                    }
                    for (i, ei) in e.iter_mut().enumerate().take(nloc) {
                        *ei += w * v * shape_value(i, t);
                    }
                });
                match bad {
                    Some(x) => Err(Error::InvalidSource(format!("non-finite value at {x:?}"))),
                    None => Ok(e),
                }
            })
            .collect::<Result<_>>()?;
        for (c, e) in (start..end).zip(&local) {
            let corners = mesh.cell_corners(&mesh.cell_multi_index(c));
            for i in 0..nloc {
                if let Some(d) = dofs.dof(corners[i]) {
                    b[d] += e[i];
                }
            }
        }
    }
    Ok(b)
}
