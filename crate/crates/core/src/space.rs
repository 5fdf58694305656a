//! Continuous piecewise-Q1 functions on a [`TensorMesh`].
//!
//! A [`NodalField`] stores one value per mesh node, boundary nodes included,
//! so the same type represents members of both the unconstrained space and
//! the zero-trace subspace.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{MultiIndex, TensorMesh, MAX_DIM};

/// Bijection between interior nodes and consecutive degree-of-freedom ids,
/// in lexicographic node order.
#[derive(Debug, Clone)]
pub struct DofMap {
    node_to_dof: Vec<Option<usize>>,
    dof_to_node: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &TensorMesh) -> Self {
        let mut node_to_dof = vec![None; mesh.node_count()];
        let mut dof_to_node = Vec::with_capacity(mesh.interior_count());
        for (n, slot) in node_to_dof.iter_mut().enumerate() {
            if !mesh.is_boundary(n) {
                *slot = Some(dof_to_node.len());
                dof_to_node.push(n);
            }
        }
        Self {
            node_to_dof,
            dof_to_node,
        }
    }

    pub fn len(&self) -> usize {
        self.dof_to_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dof_to_node.is_empty()
    }

    pub fn dof(&self, node: usize) -> Option<usize> {
        self.node_to_dof[node]
    }

    pub fn node(&self, dof: usize) -> usize {
        self.dof_to_node[dof]
    }

    pub fn nodes(&self) -> &[usize] {
        &self.dof_to_node
    }

    /// Interior entries of a full nodal vector.
    pub fn restrict(&self, nodal: &[f64]) -> Vec<f64> {
        self.dof_to_node.iter().map(|&n| nodal[n]).collect()
    }

    /// Full nodal vector with zeros on the boundary.
    pub fn extend(&self, dofs: &[f64], node_count: usize) -> Vec<f64> {
        let mut out = vec![0.0; node_count];
        for (&n, &v) in self.dof_to_node.iter().zip(dofs) {
            out[n] = v;
        }
        out
    }
}

/// Values of a continuous piecewise-Q1 function at every mesh node.
#[derive(Debug, Clone)]
pub struct NodalField {
    mesh: Arc<TensorMesh>,
    values: Vec<f64>,
}

/// Q1 shape value of local corner `c` at reference coordinates `t`.
#[inline]
pub(crate) fn shape_value(c: usize, t: &[f64]) -> f64 {
    t.iter()
        .enumerate()
        .map(|(a, &ta)| if c >> a & 1 == 1 { ta } else { 1.0 - ta })
        .product()
}

/// Physical gradient of local corner `c` at reference coordinates `t` in a
/// cell with extents `h`.
#[inline]
pub(crate) fn shape_gradient(c: usize, t: &[f64], h: &[f64], out: &mut [f64]) {
    let dim = t.len();
    for a in 0..dim {
        let mut g = if c >> a & 1 == 1 { 1.0 } else { -1.0 } / h[a];
        for (b, &tb) in t.iter().enumerate() {
            if b != a {
                g *= if c >> b & 1 == 1 { tb } else { 1.0 - tb };
            }
        }
        out[a] = g;
    }
}

impl NodalField {
    pub fn new(mesh: Arc<TensorMesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.node_count() {
            return Err(Error::DimensionMismatch(format!(
                "field has {} values, mesh has {} nodes",
                values.len(),
                mesh.node_count()
            )));
        }
        Ok(Self { mesh, values })
    }

    pub fn zeros(mesh: Arc<TensorMesh>) -> Self {
        let values = vec![0.0; mesh.node_count()];
        Self { mesh, values }
    }

    /// Field from interior DOF values with zero boundary values.
    pub fn from_dofs(mesh: Arc<TensorMesh>, dofs: &DofMap, x: &[f64]) -> Self {
        let values = dofs.extend(x, mesh.node_count());
        Self { mesh, values }
    }

    pub fn mesh(&self) -> &Arc<TensorMesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Zero at every boundary node, i.e. a member of the zero-trace space.
    pub fn is_in_vh(&self) -> bool {
        self.values
            .iter()
            .zip(self.mesh.boundary_mask())
            .all(|(&v, &b)| !b || v == 0.0)
    }

    /// Pointwise difference of two fields on the same mesh.
    pub fn sub(&self, other: &NodalField) -> Result<NodalField> {
        if *self.mesh != *other.mesh {
            return Err(Error::DimensionMismatch(
                "fields live on different meshes".into(),
            ));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(NodalField {
            mesh: self.mesh.clone(),
            values,
        })
    }

    pub fn scaled(&self, c: f64) -> NodalField {
        NodalField {
            mesh: self.mesh.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<MultiIndex> {
        let dim = self.mesh.dim();
        if x.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "point has {} coordinates, mesh dimension is {dim}",
                x.len()
            )));
        }
        let mut cell = [0; MAX_DIM];
        for a in 0..dim {
            cell[a] = self
                .mesh
                .grid(a)
                .locate(x[a])
                .ok_or_else(|| Error::OutOfDomain(x.to_vec()))?;
        }
        Ok(cell)
    }

    fn reference_coords(&self, cell: &MultiIndex, x: &[f64]) -> [f64; MAX_DIM] {
        let (lo, h) = self.mesh.cell_box(cell);
        let mut t = [0.0; MAX_DIM];
        for a in 0..self.mesh.dim() {
            t[a] = (x[a] - lo[a]) / h[a];
        }
        t
    }

    /// Value of the Q1 function at `x` in the closed unit cube.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let cell = self.check_point(x)?;
        Ok(self.evaluate_in_cell(&cell, x))
    }

    pub(crate) fn evaluate_in_cell(&self, cell: &MultiIndex, x: &[f64]) -> f64 {
        let dim = self.mesh.dim();
        let t = self.reference_coords(cell, x);
        let corners = self.mesh.cell_corners(cell);
        (0..1 << dim)
            .map(|c| self.values[corners[c]] * shape_value(c, &t[..dim]))
            .sum()
    }

    /// Gradient of the cell interpolant at `x`. On an interior face the
    /// gradient is two-valued and a `cell` hint is required.
    pub fn evaluate_gradient(&self, x: &[f64], cell: Option<MultiIndex>) -> Result<Vec<f64>> {
        let dim = self.mesh.dim();
        let cell = match cell {
            Some(k) => {
                self.check_point(x)?;
                for a in 0..dim {
                    let g = self.mesh.grid(a);
                    if k[a] >= g.cells() || x[a] < g.points()[k[a]] || x[a] > g.points()[k[a] + 1] {
                        return Err(Error::OutOfDomain(x.to_vec()));
                    }
                }
                k
            }
            None => {
                let k = self.check_point(x)?;
                for a in 0..dim {
                    let g = self.mesh.grid(a);
                    if let Some(i) = g.point_index(x[a]) {
                        if i > 0 && i < g.cells() {
                            return Err(Error::AmbiguousGradient(x.to_vec()));
                        }
                    }
                }
                k
            }
        };
        let (_, h) = self.mesh.cell_box(&cell);
        let t = self.reference_coords(&cell, x);
        let corners = self.mesh.cell_corners(&cell);
        let mut grad = vec![0.0; dim];
        let mut g = [0.0; MAX_DIM];
        for c in 0..1 << dim {
            shape_gradient(c, &t[..dim], &h[..dim], &mut g[..dim]);
            let v = self.values[corners[c]];
            for a in 0..dim {
                grad[a] += v * g[a];
            }
        }
        Ok(grad)
    }

    /// Write `x1,...,xN,value` rows in lexicographic node order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = self.mesh.dim();
        let header: Vec<String> = (1..=dim).map(|a| format!("x{a}")).collect();
        writeln!(w, "{},value", header.join(","))?;
        for (n, v) in self.values.iter().enumerate() {
            let x = self.mesh.node_coords(n);
            for xa in &x[..dim] {
                write!(w, "{xa:.16e},")?;
            }
            writeln!(w, "{v:.16e}")?;
        }
        Ok(())
    }
}

/// Nodal interpolant of `f`.
pub fn interpolate<F>(f: F, mesh: Arc<TensorMesh>) -> Result<NodalField>
where
    F: Fn(&[f64]) -> f64,
{
    let dim = mesh.dim();
    let values = (0..mesh.node_count())
        .map(|n| {
            let x = mesh.node_coords(n);
            let v = f(&x[..dim]);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::InvalidSource(format!(
                    "non-finite value {v} at node {:?}",
                    &x[..dim]
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NodalField { mesh, values })
}

/// Represent `coarse` exactly on the nested mesh `fine_mesh`.
pub fn prolongate(coarse: &NodalField, fine_mesh: Arc<TensorMesh>) -> Result<NodalField> {
    let cmesh = coarse.mesh();
    if !cmesh.is_nested_in(&fine_mesh) {
        return Err(Error::NonNested(
            "coarse grid points are not all fine grid points".into(),
        ));
    }
    let dim = cmesh.dim();
    // per axis: containing coarse cell and reference coordinate of each fine point
    let axis_maps: Vec<Vec<(usize, f64)>> = (0..dim)
        .map(|a| {
            let cg = cmesh.grid(a);
            fine_mesh
                .grid(a)
                .points()
                .iter()
                .map(|&x| {
                    let k = cg.locate(x).expect("fine point inside unit interval");
                    (k, (x - cg.points()[k]) / cg.step(k))
                })
                .collect()
        })
        .collect();

    let values = (0..fine_mesh.node_count())
        .map(|n| {
            let kf = fine_mesh.node_multi_index(n);
            let mut cell = [0; MAX_DIM];
            let mut t = [0.0; MAX_DIM];
            for a in 0..dim {
                (cell[a], t[a]) = axis_maps[a][kf[a]];
            }
            let corners = cmesh.cell_corners(&cell);
            (0..1 << dim)
                .map(|c| coarse.values[corners[c]] * shape_value(c, &t[..dim]))
                .sum()
        })
        .collect();
    Ok(NodalField {
        mesh: fine_mesh,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn mesh2(m: usize) -> Arc<TensorMesh> {
        Arc::new(TensorMesh::uniform_cube(2, m, 1).unwrap())
    }

    #[test]
    fn constants_and_linears_reproduced() {
        let m = mesh2(2);
        let one = interpolate(|_| 1.0, m.clone()).unwrap();
        assert!(one.values().iter().all(|&v| v == 1.0));
        let x1 = interpolate(|x| x[0], m.clone()).unwrap();
        for n in 0..m.node_count() {
            assert_eq!(x1.values()[n], m.node_coords(n)[0]);
        }
        let mut seen: Vec<f64> = x1.values().to_vec();
        seen.sort_by(f64::total_cmp);
        seen.dedup();
        assert_eq!(seen, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn sine_product_nodal_values() {
        let m = mesh2(2);
        let f = interpolate(|x| (PI * x[0]).sin() * (PI * x[1]).sin(), m.clone()).unwrap();
        assert_abs_diff_eq!(f.values()[4], 1.0, epsilon = 1e-15);
        for n in 0..9 {
            if m.is_boundary(n) {
                assert_abs_diff_eq!(f.values()[n], 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn non_finite_source_rejected() {
        let r = interpolate(|x| 1.0 / x[0], mesh2(2));
        assert!(matches!(r, Err(Error::InvalidSource(_))));
    }

    #[test]
    fn evaluate_bilinear_and_constant() {
        let m = mesh2(2);
        let f = interpolate(|x| x[0] * x[1], m.clone()).unwrap();
        assert_abs_diff_eq!(f.evaluate(&[0.25, 0.25]).unwrap(), 0.0625, epsilon = 1e-15);
        let c = interpolate(|_| 3.5, m).unwrap();
        assert_abs_diff_eq!(c.evaluate(&[0.7, 0.1]).unwrap(), 3.5, epsilon = 1e-14);
        assert!(matches!(
            c.evaluate(&[1.5, 0.0]),
            Err(Error::OutOfDomain(_))
        ));
    }

    #[test]
    fn gradients() {
        let m = mesh2(2);
        let x2 = interpolate(|x| x[1], m.clone()).unwrap();
        let g = x2.evaluate_gradient(&[0.3, 0.7], None).unwrap();
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g[1], 1.0, epsilon = 1e-14);

        let c = interpolate(|_| 2.0, m.clone()).unwrap();
        let g = c.evaluate_gradient(&[0.1, 0.9], None).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-14));

        let b = interpolate(|x| x[0] * x[1], m).unwrap();
        let g = b.evaluate_gradient(&[0.25, 0.25], None).unwrap();
        assert_abs_diff_eq!(g[0], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(g[1], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn gradient_on_face_needs_hint() {
        let m = mesh2(2);
        let b = interpolate(|x| x[0] * x[1], m).unwrap();
        assert!(matches!(
            b.evaluate_gradient(&[0.5, 0.25], None),
            Err(Error::AmbiguousGradient(_))
        ));
        // lower cell: d/dx2 (x1 x2) = x1 = 0.5 either side; d/dx1 = x2
        let g = b.evaluate_gradient(&[0.5, 0.25], Some([0, 0, 0])).unwrap();
        assert_abs_diff_eq!(g[0], 0.25, epsilon = 1e-14);
        // hat function gradient jumps across x1 = 0.5
        let mut v = vec![0.0; 9];
        v[4] = 1.0;
        let hat = NodalField::new(mesh2(2), v).unwrap();
        let gl = hat.evaluate_gradient(&[0.5, 0.5], Some([0, 0, 0])).unwrap();
        let gr = hat.evaluate_gradient(&[0.5, 0.5], Some([1, 1, 0])).unwrap();
        assert_abs_diff_eq!(gl[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(gr[0], -2.0, epsilon = 1e-14);
        // outer boundary face is not ambiguous
        assert!(hat.evaluate_gradient(&[0.0, 0.3], None).is_ok());
    }

    #[test]
    fn prolongation_examples() {
        let coarse = mesh2(2);
        let fine = Arc::new(coarse.refine_halve());
        let x1 = interpolate(|x| x[0], coarse.clone()).unwrap();
        let p = prolongate(&x1, fine.clone()).unwrap();
        for n in 0..fine.node_count() {
            assert_abs_diff_eq!(p.values()[n], fine.node_coords(n)[0], epsilon = 1e-15);
        }
        let c = interpolate(|_| -1.25, coarse.clone()).unwrap();
        let p = prolongate(&c, fine.clone()).unwrap();
        assert!(p.values().iter().all(|&v| (v + 1.25).abs() < 1e-15));

        let mut v = vec![0.0; 9];
        v[4] = 1.0;
        let hat = NodalField::new(coarse, v).unwrap();
        let p = prolongate(&hat, fine.clone()).unwrap();
        let n = fine.node_index(&[1, 1, 0]);
        assert_abs_diff_eq!(p.values()[n], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn prolongation_rejects_non_nested() {
        let c = interpolate(|x| x[0], mesh2(2)).unwrap();
        let other = Arc::new(TensorMesh::uniform_cube(2, 3, 1).unwrap());
        assert!(matches!(prolongate(&c, other), Err(Error::NonNested(_))));
    }

    #[test]
    fn csv_dump_rows() {
        let f = interpolate(|x| x[0] + x[1], mesh2(2)).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines[0], "x1,x2,value");
        assert_eq!(lines.len(), 10);
        assert!(lines[2].starts_with("0.0000000000000000e0,5.0000000000000000e-1,"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn multilinear_reproduction(
                c in prop::array::uniform8(-2.0f64..2.0),
                x in prop::array::uniform3(0.0f64..=1.0),
                m in 2usize..6,
            ) {
                let p = |x: &[f64]| {
                    let mut s = 0.0;
                    for (i, ci) in c.iter().enumerate() {
                        let mut t = *ci;
                        for (a, xa) in x.iter().enumerate() {
                            if i >> a & 1 == 1 { t *= xa; }
                        }
                        s += t;
                    }
                    s
                };
                let mesh = Arc::new(TensorMesh::new(
                    vec![
                        crate::mesh::Grid1D::uniform(m).unwrap(),
                        crate::mesh::Grid1D::new(vec![0.0, 0.1, 0.45, 1.0]).unwrap(),
                        crate::mesh::Grid1D::uniform(m + 1).unwrap(),
                    ],
                    1,
                ).unwrap());
                let f = interpolate(p, mesh).unwrap();
                prop_assert!((f.evaluate(&x).unwrap() - p(&x)).abs() <= 1e-12);
            }
        }
    }
}
