//! Builtin problems addressable by name.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::problems::{DiffusionSpec, SourceSpec};

pub const DIFFUSIONS: [&str; 3] = ["identity", "anisotropic-constant", "variable-offdiag"];
pub const SOURCES: [&str; 4] = ["sine-product", "one", "x2-profile", "zero"];

/// Amplitude of `variable-offdiag` giving a claimed ellipticity constant of
/// 1/4 for every `(dim, q)`.
pub fn default_offdiag_amplitude(dim: usize, q: usize) -> f64 {
    0.75 * 4f64.powi(dim as i32) / ((q * (dim - q)) as f64).sqrt()
}

fn take_params(name: &str, params: &BTreeMap<String, f64>, allowed: &[&str]) -> Result<()> {
    match params.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(Error::Config(format!(
            "unknown parameter '{k}' for diffusion '{name}' (allowed: {allowed:?})"
        ))),
        None => Ok(()),
    }
}

pub fn diffusion(
    name: &str,
    dim: usize,
    q: usize,
    params: &BTreeMap<String, f64>,
) -> Result<DiffusionSpec> {
    match name {
        "identity" => {
            take_params(name, params, &[])?;
            DiffusionSpec::identity(dim, q)
        }
        "anisotropic-constant" => {
            take_params(name, params, &["a", "b"])?;
            let a = params.get("a").copied().unwrap_or(2.0);
            let b = params.get("b").copied().unwrap_or(0.5);
            DiffusionSpec::anisotropic_constant(dim, q, a, b)
        }
        "variable-offdiag" => {
            take_params(name, params, &["c"])?;
            let c = params
                .get("c")
                .copied()
                .unwrap_or_else(|| default_offdiag_amplitude(dim, q));
            DiffusionSpec::variable_offdiag(dim, q, c)
        }
        _ => Err(Error::Config(format!(
            "unknown diffusion '{name}' (known: {DIFFUSIONS:?})"
        ))),
    }
}

pub fn source(name: &str, q: usize, scale: f64) -> Result<SourceSpec> {
    let f = match name {
        "sine-product" => SourceSpec::sine_product(),
        "one" => SourceSpec::one(),
        "x2-profile" => SourceSpec::x2_profile(q),
        "zero" => SourceSpec::zero(),
        _ => {
            return Err(Error::Config(format!(
                "unknown source '{name}' (known: {SOURCES:?})"
            )))
        }
    };
    Ok(if scale == 1.0 { f } else { f.scaled(scale) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_resolve() {
        let none = BTreeMap::new();
        for d in DIFFUSIONS {
            for (dim, q) in [(2, 1), (3, 1), (3, 2)] {
                let spec = diffusion(d, dim, q, &none).unwrap();
                assert_eq!(spec.dim(), dim);
                assert!(spec.lambda_claimed() > 0.0);
            }
        }
        for s in SOURCES {
            source(s, 1, 1.0).unwrap();
        }
        assert!(
            (diffusion("variable-offdiag", 3, 2, &none)
                .unwrap()
                .lambda_claimed()
                - 0.25)
                .abs()
                < 1e-14
        );
        assert_eq!(source("one", 1, 3.0).unwrap().eval(&[0.2, 0.3]), 3.0);
    }

    #[test]
    fn unknown_names_and_params() {
        let mut p = BTreeMap::new();
        assert!(diffusion("nope", 2, 1, &p).is_err());
        assert!(source("nope", 1, 1.0).is_err());
        p.insert("c".to_string(), 1.0);
        assert!(diffusion("identity", 2, 1, &p).is_err());
        assert!(diffusion("variable-offdiag", 2, 1, &p).is_ok());
    }
}
