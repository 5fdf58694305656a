use std::sync::Arc;

use anisofem::analysis::second_difference_indicators;
use anisofem::harness::{
    gate, run_case, run_decomp_check, run_eps_sweep, run_experiment, run_h2_indicator_sweep,
    run_validate, CellCounts, ExperimentConfig, ExperimentKind, MeshConfig, Problem, PRIMARY_ERROR,
};
use anisofem::problems::{
    AssumptionFlags, CoefficientFn, DiffusionSpec, SourceSpec, CHECK_ELLIPTIC, CHECK_SYMMETRIC,
};
use anisofem::{Error, TensorMesh};

fn config(kind: ExperimentKind, diffusion: &str, source: &str, m: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(kind, diffusion, source);
    c.mesh = Some(MeshConfig::Uniform(CellCounts::Cube(m)));
    c
}

fn dyadic(n: i32) -> Vec<f64> {
    (1..=n).map(|k| 0.5f64.powi(k)).collect()
}

#[test]
fn solve_center_values() {
    let mut c = config(ExperimentKind::Solve, "identity", "one", 2);
    let case = run_case(&c).unwrap();
    assert!((case.field.values()[4] - 3.0 / 32.0).abs() <= 1e-12);
    assert!(case.result.stats[0].converged);

    c.limit = true;
    let case = run_case(&c).unwrap();
    assert!((case.field.values()[4] - 3.0 / 16.0).abs() <= 1e-12);
    assert_eq!(case.result.param_name, "limit");
}

#[test]
fn zero_source_gives_zero_field() {
    let case = run_case(&config(
        ExperimentKind::Solve,
        "variable-offdiag",
        "zero",
        8,
    ))
    .unwrap();
    assert!(case.field.values().iter().all(|&v| v == 0.0));
    assert!(case.result.values.iter().all(|(_, v)| *v == 0.0));
}

#[test]
fn sweep_needs_two_eps() {
    let mut c = config(ExperimentKind::SweepEps, "identity", "sine-product", 8);
    c.eps = vec![0.5];
    assert!(matches!(run_eps_sweep(&c), Err(Error::Config(_))));
    c.eps = vec![0.5, 1.5];
    assert!(matches!(run_eps_sweep(&c), Err(Error::InvalidEpsilon(_))));
}

#[test]
fn h_sweep_needs_eps() {
    let mut c = ExperimentConfig::new(ExperimentKind::SweepHUniform, "identity", "sine-product");
    c.cells = vec![4, 8];
    assert!(matches!(run_experiment(&c), Err(Error::Config(_))));
}

/// With A = I and the sine-product source the perturbed and limit solutions
/// are multiples of one discrete eigenvector, and the gap closes like eps^2.
#[test]
fn identity_eps_sweep_is_second_order() {
    let mut c = config(ExperimentKind::SweepEps, "identity", "sine-product", 64);
    c.eps = dyadic(6);
    let r = run_eps_sweep(&c).unwrap();
    let slope = r.fit(PRIMARY_ERROR).unwrap().slope;
    assert!((slope - 2.0).abs() < 0.1, "{slope}");
    assert_eq!(r.pass, Some(true));
}

#[test]
fn eps_sweep_matches_dense_at_small_size() {
    use anisofem::analysis::{seminorm, Norm};
    use anisofem::assembly::{
        assemble_limit_stiffness, assemble_load, assemble_stiffness_eps, LoadMode,
    };
    use anisofem::quadrature::QuadratureRule;
    use anisofem::solver::dense_solve;
    use anisofem::{DofMap, NodalField};

    let mut c = config(
        ExperimentKind::SweepEps,
        "variable-offdiag",
        "sine-product",
        8,
    );
    c.eps = vec![0.5, 0.25, 0.125];
    c.solver.tol = 1e-13;
    let r = run_eps_sweep(&c).unwrap();

    let p = Problem::from_config(&c).unwrap();
    let mesh = Arc::new(TensorMesh::uniform_cube(2, 8, 1).unwrap());
    let q = QuadratureRule::default();
    let dofs = DofMap::new(&mesh);
    let b = assemble_load(&mesh, &p.source, LoadMode::Interpolated, &q).unwrap();
    let ul = dense_solve(
        &assemble_limit_stiffness(&mesh, &p.diffusion, &q).unwrap(),
        &b,
    )
    .unwrap();
    let ul = NodalField::from_dofs(mesh.clone(), &dofs, &ul);
    for case in &r.cases {
        let k = assemble_stiffness_eps(&mesh, &p.diffusion, case.param, &q).unwrap();
        let ue = NodalField::from_dofs(mesh.clone(), &dofs, &dense_solve(&k, &b).unwrap());
        let want = seminorm(&ue.sub(&ul).unwrap(), Norm::GradX2, &q);
        let got = case.value(PRIMARY_ERROR).unwrap();
        assert!((got - want).abs() <= 1e-9 * want, "{got} vs {want}");
    }
}

#[test]
fn non_h10_source_is_reported_only() {
    let mut c = config(ExperimentKind::SweepEps, "identity", "one", 32);
    c.eps = dyadic(5);
    let r = run_eps_sweep(&c).unwrap();
    assert_eq!(r.pass, None);
    assert!(r.to_csv().ends_with("pass,skipped\n"));
    assert!(r
        .cases
        .iter()
        .all(|c| c.value(PRIMARY_ERROR).unwrap() > 0.0));
}

#[test]
fn at_floor_cases_are_flagged_and_excluded() {
    // the identity sweep reaches the solver floor quickly with a loose tol
    let mut c = config(ExperimentKind::SweepEps, "identity", "sine-product", 16);
    c.eps = vec![0.5, 0.25, 0.125, 1e-4];
    c.solver.tol = 1e-8;
    let r = run_eps_sweep(&c).unwrap();
    let last = r.cases.last().unwrap();
    assert!(last.at_floor, "{:?}", last);
    assert_eq!(r.fit(PRIMARY_ERROR).unwrap().samples.len(), 3);
    for case in &r.cases {
        assert_eq!(
            case.at_floor,
            case.value(PRIMARY_ERROR).unwrap() < 100.0 * c.solver.tol
        );
    }
}

#[test]
fn sine_decomposition_outer_part_decays_fast() {
    let mut c = ExperimentConfig::new(ExperimentKind::CheckDecomp, "identity", "sine-product");
    c.delta = dyadic(6)[1..].to_vec();
    let r = run_decomp_check(&c).unwrap();
    assert!(r.fit("f2_l2").unwrap().slope >= 0.5);
    assert_eq!(r.pass, Some(true));
}

#[test]
fn degenerate_cutoff_rejected() {
    let mut c = ExperimentConfig::new(ExperimentKind::CheckDecomp, "identity", "one");
    c.delta = vec![0.9, 0.5];
    assert!(matches!(
        run_decomp_check(&c),
        Err(Error::DegenerateCutoff(_))
    ));
}

#[test]
fn small_eps_in_h2_sweep_is_unasserted() {
    let mut c = config(ExperimentKind::CheckH2, "identity", "sine-product", 32);
    c.eps = vec![1.0, 0.5, 0.01];
    let r = run_h2_indicator_sweep(&c).unwrap();
    assert_eq!(r.cases.len(), 3);
    assert!(r.notes.iter().any(|n| n.contains("warning")));
    assert!(r.pass.is_some());
}

/// At eps = 1 with A = I, u = f / (2 pi^2) and ||d^2 u / dx2^2|| = 1/4.
#[test]
fn h2_indicator_in_resolved_regime() {
    let case = run_case(&config(
        ExperimentKind::Solve,
        "identity",
        "sine-product",
        64,
    ))
    .unwrap();
    let ind = second_difference_indicators(&case.field, 1.0).unwrap();
    assert!((ind.d2x2 - 0.25).abs() <= 0.02 * 0.25, "{ind:?}");
    // the mixed derivative peaks on the boundary rows the stencil skips
    assert!((ind.d2x1x2 - 0.25).abs() <= 0.05 * 0.25, "{ind:?}");
}

#[test]
fn h2_sweep_rejects_graded_mesh() {
    let mut c = ExperimentConfig::new(ExperimentKind::CheckH2, "identity", "sine-product");
    c.mesh = Some(MeshConfig::Points(vec![
        vec![0.0, 0.3, 0.6, 1.0],
        vec![0.0, 0.5, 1.0],
    ]));
    c.eps = vec![1.0, 0.5];
    assert!(matches!(
        run_h2_indicator_sweep(&c),
        Err(Error::UnsupportedMesh(_))
    ));
}

#[test]
fn validate_reports_failures() {
    let ok = run_validate(&ExperimentConfig::new(
        ExperimentKind::Validate,
        "identity",
        "sine-product",
    ))
    .unwrap();
    assert_eq!(ok.pass, Some(true));
    assert_eq!(ok.metric("min_eigenvalue"), Some(1.0));

    let mut bad = ExperimentConfig::new(ExperimentKind::Validate, "anisotropic-constant", "one");
    bad.problem.params.insert("a".into(), -1.0);
    assert!(matches!(
        run_validate(&bad),
        Err(Error::AssumptionViolated(_))
    ));

    // claimed elliptic but indefinite
    let coeff: CoefficientFn = Arc::new(|_| [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0; 3]]);
    let p = Problem {
        diffusion: DiffusionSpec::new("indefinite", 2, 1, coeff, 1.0, AssumptionFlags::ALL)
            .unwrap(),
        source: SourceSpec::one(),
    };
    let mesh = TensorMesh::uniform_cube(2, 4, 1).unwrap();
    match gate(&p, &mesh, &[CHECK_ELLIPTIC]) {
        Err(Error::Validation(f)) => assert!(f[0].starts_with(CHECK_ELLIPTIC)),
        other => panic!("expected validation failure, got {other:?}"),
    }
}

#[test]
fn nonsymmetric_spec_is_refused() {
    let coeff: CoefficientFn = Arc::new(|_| [[1.0, 0.3, 0.0], [-0.3, 1.0, 0.0], [0.0; 3]]);
    let flags = AssumptionFlags {
        symmetric: false,
        ..AssumptionFlags::ALL
    };
    let p = Problem {
        diffusion: DiffusionSpec::new("skew", 2, 1, coeff, 1.0, flags).unwrap(),
        source: SourceSpec::one(),
    };
    let mesh = TensorMesh::uniform_cube(2, 4, 1).unwrap();
    assert!(matches!(
        gate(&p, &mesh, &[CHECK_SYMMETRIC]),
        Err(Error::AssumptionViolated(_))
    ));
    assert!(gate(&p, &mesh, &[CHECK_ELLIPTIC]).is_ok());
}

#[test]
fn reports_are_deterministic_across_runs_and_threads() {
    let mut c = config(
        ExperimentKind::SweepEps,
        "variable-offdiag",
        "sine-product",
        32,
    );
    c.eps = dyadic(4);
    c.threads = Some(1);
    let a = run_experiment(&c).unwrap().to_csv();
    let b = run_experiment(&c).unwrap().to_csv();
    c.threads = Some(4);
    let d = run_experiment(&c).unwrap().to_csv();
    assert_eq!(a, b);
    assert_eq!(a, d);

    let mut h = ExperimentConfig::new(ExperimentKind::SweepHUniform, "anisotropic-constant", "one");
    h.eps = vec![1.0, 0.01];
    h.cells = vec![4, 8];
    h.threads = Some(1);
    let a = run_experiment(&h).unwrap().to_csv();
    h.threads = Some(3);
    assert_eq!(a, run_experiment(&h).unwrap().to_csv());
}

#[test]
fn three_dimensional_runs() {
    for q in [1, 2] {
        let mut c = config(ExperimentKind::Solve, "variable-offdiag", "sine-product", 6);
        c.dim = 3;
        c.q = q;
        c.eps = vec![0.1];
        let case = run_case(&c).unwrap();
        assert!(case.result.value("gradX2").unwrap() > 0.0);
        c.limit = true;
        c.eps.clear();
        run_case(&c).unwrap();
    }
}
