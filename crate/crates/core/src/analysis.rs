//! Norms, nested-mesh errors, discrete second-derivative indicators,
//! Poincare ratios and log-log rate fits.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{TensorMesh, MAX_DIM};
use crate::problems::{split_source_with, SmoothCutoff, SourceSpec, Vec3};
use crate::quadrature::QuadratureRule;
use crate::space::{prolongate, shape_gradient, shape_value, NodalField};

const CELL_CHUNK: usize = 1024;

/// Which (semi)norm to measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L2,
    /// Full gradient.
    Grad,
    /// Gradient components along `X1` (axes `0..q`).
    GradX1,
    /// Gradient components along `X2` (axes `q..N`).
    GradX2,
}

impl Norm {
    fn axes(self, mesh: &TensorMesh) -> std::ops::Range<usize> {
        match self {
            Norm::L2 | Norm::Grad => 0..mesh.dim(),
            Norm::GradX1 => 0..mesh.q(),
            Norm::GradX2 => mesh.q()..mesh.dim(),
        }
    }
}

/// `sum_cells f(cell)` with a reduction order fixed by the cell order.
fn cell_sum<F>(mesh: &TensorMesh, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let ncell = mesh.cell_count();
    let partial: Vec<f64> = (0..ncell.div_ceil(CELL_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let start = chunk * CELL_CHUNK;
            (start..(start + CELL_CHUNK).min(ncell)).map(&f).sum()
        })
        .collect();
    partial.iter().sum()
}

/// Squared integral of the selected quantity, optionally against an exact
/// reference.
fn squared_norm<E>(field: &NodalField, which: Norm, quad: &QuadratureRule, exact: E) -> f64
where
    E: Fn(&[f64]) -> (f64, Vec3) + Sync,
{
    let mesh = field.mesh();
    let dim = mesh.dim();
    let nloc = 1 << dim;
    let axes = which.axes(mesh);
    let values = field.values();
    cell_sum(mesh, |c| {
        let cell = mesh.cell_multi_index(c);
        let corners = mesh.cell_corners(&cell);
        let (_, h) = mesh.cell_box(&cell);
        let mut acc = 0.0;
        let mut g = [0.0; MAX_DIM];
        quad.for_each_point(mesh, &cell, |x, t, w| {
            let (ev, eg) = exact(x);
            match which {
                Norm::L2 => {
                    let v: f64 = (0..nloc)
                        .map(|i| values[corners[i]] * shape_value(i, t))
                        .sum();
                    acc += w * (v - ev).powi(2);
                }
                _ => {
                    let mut grad = [0.0; MAX_DIM];
                    for i in 0..nloc {
                        shape_gradient(i, t, &h[..dim], &mut g[..dim]);
                        for a in 0..dim {
                            grad[a] += values[corners[i]] * g[a];
                        }
                    }
                    acc += w * axes.clone().map(|a| (grad[a] - eg[a]).powi(2)).sum::<f64>();
                }
            }
        });
        acc
    })
}

/// (Semi)norm of a Q1 field. With the 2-point rule the integrand is
/// integrated exactly.
pub fn seminorm(field: &NodalField, which: Norm, quad: &QuadratureRule) -> f64 {
    squared_norm(field, which, quad, |_| (0.0, [0.0; MAX_DIM])).sqrt()
}

/// Norm of `prolongate(coarse) - fine` on the fine mesh.
pub fn error_between(coarse: &NodalField, fine: &NodalField, which: Norm) -> Result<f64> {
    let p = prolongate(coarse, fine.mesh().clone())?;
    Ok(seminorm(&p.sub(fine)?, which, &QuadratureRule::default()))
}

/// Gradient-type norm of `grad(field) - exact_gradient`.
pub fn error_vs_exact<G>(
    field: &NodalField,
    exact_gradient: G,
    which: Norm,
    quad: &QuadratureRule,
) -> Result<f64>
where
    G: Fn(&[f64]) -> Vec3 + Sync,
{
    if which == Norm::L2 {
        return Err(Error::Config(
            "use l2_error_vs_exact for value errors".into(),
        ));
    }
    Ok(squared_norm(field, which, quad, |x| (0.0, exact_gradient(x))).sqrt())
}

/// `||field - exact||_{L2}`.
pub fn l2_error_vs_exact<F>(field: &NodalField, exact: F, quad: &QuadratureRule) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    squared_norm(field, Norm::L2, quad, |x| (exact(x), [0.0; MAX_DIM])).sqrt()
}

/// Discrete surrogates for the `X1X1`, `X1X2` and `X2X2` blocks of the
/// Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct H2Indicators {
    pub d2x1: f64,
    pub d2x1x2: f64,
    pub d2x2: f64,
    /// `eps^2 d2x1 + eps d2x1x2 + d2x2`.
    pub combined: f64,
}

/// Second differences at interior nodes of a uniform mesh, weighted by the
/// cell volume.
pub fn second_difference_indicators(field: &NodalField, eps: f64) -> Result<H2Indicators> {
    let mesh = field.mesh();
    let h = mesh
        .uniform_steps()
        .ok_or_else(|| Error::UnsupportedMesh("second differences need a uniform mesh".into()))?;
    let dim = mesh.dim();
    let q = mesh.q();
    let vol: f64 = h.iter().product();
    let v = field.values();
    let stride: Vec<usize> = (0..dim).map(|a| mesh.node_stride(a)).collect();

    let mut sums = [0.0; 3];
    for n in 0..mesh.node_count() {
        if mesh.is_boundary(n) {
            continue;
        }
        for a in 0..dim {
            for b in 0..dim {
                let d = if a == b {
                    (v[n + stride[a]] - 2.0 * v[n] + v[n - stride[a]]) / (h[a] * h[a])
                } else {
                    (v[n + stride[a] + stride[b]]
                        - v[n + stride[a] - stride[b]]
                        - v[n - stride[a] + stride[b]]
                        + v[n - stride[a] - stride[b]])
                        / (4.0 * h[a] * h[b])
                };
                let block = match (a < q, b < q) {
                    (true, true) => 0,
                    (true, false) => 1,
                    (false, false) => 2,
                    // the X2X1 block duplicates X1X2
                    (false, true) => continue,
                };
                sums[block] += vol * d * d;
            }
        }
    }
    let [d2x1, d2x1x2, d2x2] = sums.map(f64::sqrt);
    Ok(H2Indicators {
        d2x1,
        d2x1x2,
        d2x2,
        combined: eps * eps * d2x1 + eps * d2x1x2 + d2x2,
    })
}

/// `||v||_{L2} / ||grad_X2 v||` for a field vanishing on the `X2` part of
/// the boundary.
pub fn poincare_ratio(field: &NodalField) -> Result<f64> {
    let mesh = field.mesh();
    let dim = mesh.dim();
    // interpolated trig functions leave round-off on the boundary
    let scale = field.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;
    for (n, &val) in field.values().iter().enumerate() {
        let k = mesh.node_multi_index(n);
        let on_x2_boundary = (mesh.q()..dim).any(|a| k[a] == 0 || k[a] == mesh.grid(a).cells());
        if on_x2_boundary && val.abs() > tol {
            return Err(Error::NotInSpace(format!(
                "nonzero value {val} on the X2 boundary at node {n}"
            )));
        }
    }
    let quad = QuadratureRule::default();
    let l2 = seminorm(field, Norm::L2, &quad);
    if l2 == 0.0 {
        return Err(Error::UndefinedRatio);
    }
    Ok(l2 / seminorm(field, Norm::GradX2, &quad))
}

/// Least-squares fit of `log(error) = slope log(param) + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub samples: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn fit_rate(samples: &[(f64, f64)]) -> Result<RateFit> {
    if samples.len() < 2 {
        return Err(Error::InvalidSample(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    if let Some(s) = samples
        .iter()
        .find(|(p, e)| !(*p > 0.0 && *e > 0.0 && p.is_finite() && e.is_finite()))
    {
        return Err(Error::InvalidSample(format!("non-positive sample {s:?}")));
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidSample("all parameters are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        let ss_res: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - slope * x - intercept).powi(2))
            .sum();
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(RateFit {
        samples: samples.to_vec(),
        slope,
        intercept,
        r2,
    })
}

/// [`fit_rate`] over the samples whose error is at least `floor`.
pub fn fit_rate_above_floor(samples: &[(f64, f64)], floor: f64) -> Result<RateFit> {
    let kept: Vec<(f64, f64)> = samples.iter().copied().filter(|s| s.1 >= floor).collect();
    fit_rate(&kept)
}

/// Convenience: nodal interpolant of a scalar function on a shared mesh.
pub fn interpolant<F>(f: F, mesh: &Arc<TensorMesh>) -> Result<NodalField>
where
    F: Fn(&[f64]) -> f64,
{
    crate::space::interpolate(f, mesh.clone())
}

/// Sobolev norms of the two parts of `f = rho f + (1 - rho) f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecompositionNorms {
    pub f1_l2: f64,
    pub f1_h1: f64,
    pub f1_h2: f64,
    pub f2_l2: f64,
}

/// Computes [`DecompositionNorms`] by 3-point Gauss quadrature of the analytic
/// derivatives on a per-axis grid of `subdivisions` uniform intervals, split
/// further at the cutoff breakpoints so that every piece is smooth.
pub fn decomposition_norms(
    f: &SourceSpec,
    cutoff: SmoothCutoff,
    dim: usize,
    subdivisions: usize,
) -> Result<DecompositionNorms> {
    if !(2..=MAX_DIM).contains(&dim) {
        return Err(Error::InvalidMesh(format!(
            "dimension must be 2 or 3, got {dim}"
        )));
    }
    if subdivisions == 0 {
        return Err(Error::Config("subdivisions must be positive".into()));
    }
    if !f.has_derivatives() {
        return Err(Error::InvalidSource(format!(
            "source '{}' has no analytic derivatives",
            f.name()
        )));
    }
    let (f1, f2) = split_source_with(f, cutoff);

    let mut axis: Vec<f64> = (0..=subdivisions)
        .map(|i| i as f64 / subdivisions as f64)
        .collect();
    axis.extend(cutoff.breakpoints());
    axis.sort_by(f64::total_cmp);
    axis.dedup_by(|a, b| (*a - *b).abs() <= 1e-14);
    let intervals: Vec<(f64, f64)> = axis.windows(2).map(|w| (w[0], w[1] - w[0])).collect();
    let (gp, gw) = QuadratureRule::gauss(3)?.reference();

    let n = intervals.len();
    let slab = |i0: usize| -> [f64; 4] {
        let mut acc = [0.0; 4];
        let mut idx = [i0, 0, 0];
        let inner = n.pow(dim as u32 - 1);
        let g = gp.len();
        for rest in 0..inner {
            let mut r = rest;
            for a in (1..dim).rev() {
                idx[a] = r % n;
                r /= n;
            }
            for p in 0..g.pow(dim as u32) {
                let mut x = [0.0; MAX_DIM];
                let mut w = 1.0;
                let mut pr = p;
                for a in (0..dim).rev() {
                    let k = pr % g;
                    pr /= g;
                    let (lo, h) = intervals[idx[a]];
                    x[a] = lo + h * gp[k];
                    w *= h * gw[k];
                }
                let x = &x[..dim];
                let v1 = f1.eval(x);
                let g1 = f1.gradient(x).expect("derivatives checked above");
                let h1 = f1.hessian(x).expect("derivatives checked above");
                let v2 = f2.eval(x);
                acc[0] += w * v1 * v1;
                acc[1] += w * g1[..dim].iter().map(|d| d * d).sum::<f64>();
                acc[2] += w * h1[..dim]
                    .iter()
                    .flat_map(|row| &row[..dim])
                    .map(|d| d * d)
                    .sum::<f64>();
                acc[3] += w * v2 * v2;
            }
        }
        acc
    };
    let partial: Vec<[f64; 4]> = (0..n).into_par_iter().map(slab).collect();
    let mut s = [0.0; 4];
    for p in &partial {
        for k in 0..4 {
            s[k] += p[k];
        }
    }
    Ok(DecompositionNorms {
        f1_l2: s[0].sqrt(),
        f1_h1: (s[0] + s[1]).sqrt(),
        f1_h2: (s[0] + s[1] + s[2]).sqrt(),
        f2_l2: s[3].sqrt(),
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

    fn q2() -> QuadratureRule {
        QuadratureRule::default()
    }

    #[test]
    fn seminorms_of_coordinates() {
        let m = mesh2(4);
        let x2 = interpolant(|x| x[1], &m).unwrap();
        assert_abs_diff_eq!(seminorm(&x2, Norm::GradX2, &q2()), 1.0, epsilon = 1e-14);
        let x1 = interpolant(|x| x[0], &m).unwrap();
        assert_abs_diff_eq!(seminorm(&x1, Norm::GradX2, &q2()), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(seminorm(&x1, Norm::GradX1, &q2()), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(
            seminorm(&x1, Norm::L2, &q2()),
            (1.0f64 / 3.0).sqrt(),
            epsilon = 1e-14
        );
        let c = interpolant(|_| 4.0, &m).unwrap();
        assert!(seminorm(&c, Norm::Grad, &q2()) <= 1e-13);
    }

    #[test]
    fn error_between_examples() {
        let coarse = mesh2(4);
        let fine = Arc::new(coarse.refine_halve().refine_halve());
        let f = |x: &[f64]| x[0] * x[1] + 0.3 * x[1];
        let a = interpolant(f, &coarse).unwrap();
        let b = interpolant(f, &fine).unwrap();
        assert!(error_between(&a, &b, Norm::Grad).unwrap() <= 1e-12);
        let zero = NodalField::zeros(coarse);
        let x2 = interpolant(|x| x[1], &fine).unwrap();
        assert_abs_diff_eq!(
            error_between(&zero, &x2, Norm::GradX2).unwrap(),
            1.0,
            epsilon = 1e-14
        );
        let other = Arc::new(TensorMesh::uniform_cube(2, 3, 1).unwrap());
        let o = interpolant(|x| x[1], &other).unwrap();
        assert!(matches!(
            error_between(&a, &o, Norm::L2),
            Err(Error::NonNested(_))
        ));
    }

    #[test]
    fn error_vs_exact_examples() {
        let m = mesh2(8);
        let x2 = interpolant(|x| x[1], &m).unwrap();
        let e = error_vs_exact(&x2, |_| [0.0, 1.0, 0.0], Norm::GradX2, &q2()).unwrap();
        assert!(e <= 1e-12);
        let z = NodalField::zeros(m.clone());
        let e = error_vs_exact(&z, |_| [0.0, 1.0, 0.0], Norm::GradX2, &q2()).unwrap();
        assert_abs_diff_eq!(e, 1.0, epsilon = 1e-14);
        assert!(error_vs_exact(&z, |_| [0.0; 3], Norm::L2, &q2()).is_err());
    }

    /// Independent oracle: 1D Gauss-Legendre with 8 points per cell written
    /// out here, integrating the exact bilinear-interpolant gradient error.
    #[test]
    fn interpolation_gradient_error_matches_fine_quadrature() {
        let m = 32;
        let mesh = mesh2(m);
        let u = |x: &[f64]| (PI * x[0]).sin() * (PI * x[1]).sin();
        let grad = |x: &[f64]| {
            [
                PI * (PI * x[0]).cos() * (PI * x[1]).sin(),
                PI * (PI * x[0]).sin() * (PI * x[1]).cos(),
                0.0,
            ]
        };
        let field = interpolant(u, &mesh).unwrap();
        let got =
            error_vs_exact(&field, grad, Norm::Grad, &QuadratureRule::gauss(3).unwrap()).unwrap();

        // 8-point Gauss on [-1, 1]
        let gp = [
            (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
            (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
            (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
            (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
            (0.183_434_642_495_649_8, 0.362_683_783_378_362),
            (0.525_532_409_916_329, 0.313_706_645_877_887_3),
            (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
            (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
        ];
        let h = 1.0 / m as f64;
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                let (x0, y0) = (i as f64 * h, j as f64 * h);
                let v = |a: f64, b: f64| u(&[a, b]);
                let (v00, v10, v01, v11) =
                    (v(x0, y0), v(x0 + h, y0), v(x0, y0 + h), v(x0 + h, y0 + h));
                for &(px, wx) in &gp {
                    for &(py, wy) in &gp {
                        let tx = 0.5 * (px + 1.0);
                        let ty = 0.5 * (py + 1.0);
                        let x = [x0 + h * tx, y0 + h * ty];
                        let gx = ((v10 - v00) * (1.0 - ty) + (v11 - v01) * ty) / h;
                        let gy = ((v01 - v00) * (1.0 - tx) + (v11 - v10) * tx) / h;
                        let e = grad(&x);
                        s += 0.25 * h * h * wx * wy * ((gx - e[0]).powi(2) + (gy - e[1]).powi(2));
                    }
                }
            }
        }
        assert!((got - s.sqrt()).abs() <= 1e-8, "{got} vs {}", s.sqrt());
    }

    #[test]
    fn h2_indicator_examples() {
        let m = mesh2(64);
        let sq = interpolant(|x| x[1] * x[1], &m).unwrap();
        let ind = second_difference_indicators(&sq, 1.0).unwrap();
        assert!((ind.d2x2 - 2.0).abs() <= 0.02 * 2.0, "{ind:?}");
        assert!(ind.d2x1.abs() < 1e-9);
        let c = interpolant(|_| 1.0, &m).unwrap();
        let ind = second_difference_indicators(&c, 0.3).unwrap();
        assert_eq!(
            (ind.d2x1, ind.d2x1x2, ind.d2x2, ind.combined),
            (0.0, 0.0, 0.0, 0.0)
        );
        let b = interpolant(|x| x[0] * x[1], &m).unwrap();
        let ind = second_difference_indicators(&b, 1.0).unwrap();
        assert!((ind.d2x1x2 - 1.0).abs() <= 0.02, "{ind:?}");
        assert!(ind.d2x1 < 1e-9 && ind.d2x2 < 1e-9);
    }

    #[test]
    fn h2_indicator_combination_weights() {
        let m = mesh2(16);
        let f = interpolant(|x| x[0] * x[0] + x[0] * x[1] + 3.0 * x[1] * x[1], &m).unwrap();
        let ind = second_difference_indicators(&f, 0.5).unwrap();
        let want = 0.25 * ind.d2x1 + 0.5 * ind.d2x1x2 + ind.d2x2;
        assert_abs_diff_eq!(ind.combined, want, epsilon = 1e-14);
    }

    #[test]
    fn h2_indicator_rejects_graded_mesh() {
        let mesh = Arc::new(
            TensorMesh::new(
                vec![
                    crate::mesh::Grid1D::new(vec![0.0, 0.2, 1.0]).unwrap(),
                    crate::mesh::Grid1D::uniform(2).unwrap(),
                ],
                1,
            )
            .unwrap(),
        );
        let f = NodalField::zeros(mesh);
        assert!(matches!(
            second_difference_indicators(&f, 1.0),
            Err(Error::UnsupportedMesh(_))
        ));
    }

    #[test]
    fn poincare_examples() {
        let m = mesh2(32);
        let s = interpolant(|x| (PI * x[0]).sin() * (PI * x[1]).sin(), &m).unwrap();
        let r = poincare_ratio(&s).unwrap();
        assert!(r <= 1.0 / PI + 1e-3);
        assert!(r > 0.3);

        // single hat: ||v||^2 = (1/3)^2, ||d2 v||^2 = (1/3) * 4
        let mut v = vec![0.0; 9];
        v[4] = 1.0;
        let hat = NodalField::new(mesh2(2), v).unwrap();
        let r = poincare_ratio(&hat).unwrap();
        assert_abs_diff_eq!(r, (1.0f64 / 12.0).sqrt(), epsilon = 1e-14);
        assert!(r <= 1.0 / PI);

        assert!(matches!(
            poincare_ratio(&NodalField::zeros(mesh2(4))),
            Err(Error::UndefinedRatio)
        ));
        let one = interpolant(|_| 1.0, &mesh2(4)).unwrap();
        assert!(matches!(poincare_ratio(&one), Err(Error::NotInSpace(_))));
    }

    #[test]
    fn fit_examples() {
        let f = fit_rate(&[(1.0, 1.0), (0.5, 0.5), (0.25, 0.25)]).unwrap();
        assert_abs_diff_eq!(f.slope, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.r2, 1.0, epsilon = 1e-14);
        let f = fit_rate(&[(1.0, 1.0), (0.5, 0.25)]).unwrap();
        assert_abs_diff_eq!(f.slope, 2.0, epsilon = 1e-14);
        assert!(fit_rate(&[(1.0, 1.0)]).is_err());
        assert!(matches!(
            fit_rate(&[(1.0, 1.0), (0.5, 0.0)]),
            Err(Error::InvalidSample(_))
        ));
        let f = fit_rate_above_floor(&[(1.0, 1.0), (0.5, 0.5), (0.25, 1e-14)], 1e-8).unwrap();
        assert_eq!(f.samples.len(), 2);
    }

    /// Independent oracle: the cutoff interpolated on a fine uniform mesh,
    /// with norms from difference quotients.
    #[test]
    fn decomposition_norms_match_stencil_oracle() {
        let cutoff = SmoothCutoff::new(0.25, 1.0).unwrap();
        let norms = decomposition_norms(&SourceSpec::one(), cutoff, 2, 128).unwrap();
        let m = 512;
        let h = 1.0 / m as f64;
        let v = |i: usize, j: usize| cutoff.value(&[i as f64 * h, j as f64 * h]);
        let (mut l2, mut g2, mut d2, mut o2) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..m {
            for j in 0..m {
                // cell-centred values and gradients by averaging corners
                let c = [v(i, j), v(i + 1, j), v(i, j + 1), v(i + 1, j + 1)];
                let mean = 0.25 * c.iter().sum::<f64>();
                l2 += h * h * mean * mean;
                o2 += h * h * (1.0 - mean).powi(2);
                let gx = 0.5 * (c[1] - c[0] + c[3] - c[2]) / h;
                let gy = 0.5 * (c[2] - c[0] + c[3] - c[1]) / h;
                g2 += h * h * (gx * gx + gy * gy);
                if i > 0 && j > 0 {
                    let dxx = (v(i + 1, j) - 2.0 * v(i, j) + v(i - 1, j)) / (h * h);
                    let dyy = (v(i, j + 1) - 2.0 * v(i, j) + v(i, j - 1)) / (h * h);
                    let dxy = (v(i + 1, j + 1) - v(i + 1, j - 1) - v(i - 1, j + 1)
                        + v(i - 1, j - 1))
                        / (4.0 * h * h);
                    d2 += h * h * (dxx * dxx + dyy * dyy + 2.0 * dxy * dxy);
                }
            }
        }
        let rel = |a: f64, b: f64| (a - b).abs() / b;
        assert!(rel(norms.f1_l2, l2.sqrt()) < 1e-3, "{norms:?}");
        assert!(
            rel(norms.f2_l2, o2.sqrt()) < 1e-2,
            "{norms:?} {}",
            o2.sqrt()
        );
        assert!(rel(norms.f1_h1, (l2 + g2).sqrt()) < 1e-3, "{norms:?}");
        assert!(
            rel(norms.f1_h2, (l2 + g2 + d2).sqrt()) < 1e-2,
            "{norms:?} {}",
            (l2 + g2 + d2).sqrt()
        );
    }

    #[test]
    fn decomposition_needs_derivatives() {
        let f = SourceSpec::new(
            "bare",
            Arc::new(|_| 1.0),
            crate::problems::SourceTags {
                h2: true,
                h10: false,
                linf: true,
            },
        );
        let c = SmoothCutoff::new(0.25, 1.0).unwrap();
        assert!(matches!(
            decomposition_norms(&f, c, 2, 16),
            Err(Error::InvalidSource(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn gradient_norm_splits(vals in prop::collection::vec(-1.0f64..1.0, 25), dim3 in any::<bool>()) {
                let mesh = if dim3 {
                    Arc::new(TensorMesh::uniform(&[2, 2, 4], 2).unwrap())
                } else {
                    mesh2(4)
                };
                let v: Vec<f64> = (0..mesh.node_count()).map(|i| vals[i % vals.len()] * (1.0 + i as f64).sqrt()).collect();
                let f = NodalField::new(mesh, v).unwrap();
                let g = seminorm(&f, Norm::Grad, &q2()).powi(2);
                let g1 = seminorm(&f, Norm::GradX1, &q2()).powi(2);
                let g2 = seminorm(&f, Norm::GradX2, &q2()).powi(2);
                prop_assert!((g - g1 - g2).abs() <= 1e-12 * g.max(1e-300));
            }

            #[test]
            fn self_error_vanishes(vals in prop::collection::vec(-1.0f64..1.0, 9), halvings in 1usize..3) {
                let coarse = mesh2(2);
                let f = NodalField::new(coarse.clone(), vals).unwrap();
                let mut fine = (*coarse).clone();
                for _ in 0..halvings { fine = fine.refine_halve(); }
                let p = prolongate(&f, Arc::new(fine)).unwrap();
                for norm in [Norm::L2, Norm::Grad, Norm::GradX2] {
                    prop_assert!(error_between(&f, &p, norm).unwrap() <= 1e-12);
                    let a = seminorm(&f, norm, &q2());
                    let b = seminorm(&p, norm, &q2());
                    prop_assert!((a - b).abs() <= 1e-10);
                }
            }

            #[test]
            fn fit_recovers_power_laws(c in 0.01f64..100.0, k in 0usize..5) {
                let exp = [0.2, 1.0 / 3.0, 0.5, 1.0, 2.0][k];
                let s: Vec<(f64, f64)> = (1..6).map(|i| {
                    let p = 0.5f64.powi(i);
                    (p, c * p.powf(exp))
                }).collect();
                let f = fit_rate(&s).unwrap();
                prop_assert!((f.slope - exp).abs() <= 1e-12);
                prop_assert!((f.r2 - 1.0).abs() <= 1e-12);
            }
        }
    }
}
