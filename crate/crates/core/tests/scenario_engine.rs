//! Scenario engine: common-random-number pairing across the grid, generator
//! consistency between the two study streams, report structure, and the
//! single-frame missing-data workflows.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};

use estfuse::equations::{Dataset, FamilySpec, FeatureMap};
use estfuse::scenarios::{
    self, generate_missing_frame, generate_pair, missing_covariate_workflow,
    missing_outcome_workflow, run_scenario, ScenarioKind, ScenarioSpec,
};
use estfuse::shrinkage::WeightMatrixSpec;
use estfuse::{io, Error};

fn small_spec(kind: ScenarioKind) -> ScenarioSpec {
    ScenarioSpec {
        n_internal: 150,
        n_external: 1500,
        mc_replicates: 3,
        offset_grid: vec![0.0, 0.1],
        rho_grid: vec![0.7, 1.0],
        eval_rows: 400,
        bootstrap_replicates: 25,
        ..ScenarioSpec::defaults(kind)
    }
}

#[test]
fn replicates_share_random_inputs_across_grid_values() {
    let spec = small_spec(ScenarioKind::Linear);
    let low = generate_pair(&spec, 0.0, 2).unwrap();
    let high = generate_pair(&spec, 0.3, 2).unwrap();

    assert_eq!(low.internal.y(), high.internal.y());
    assert_eq!(low.internal.x(), high.internal.x());
    assert_eq!(low.internal.z(), high.internal.z());
    assert_eq!(low.external.x(), high.external.x());
    assert_ne!(low.external.y(), high.external.y());

    let other = generate_pair(&spec, 0.0, 3).unwrap();
    assert_ne!(low.internal.y(), other.internal.y());
}

#[test]
fn both_study_streams_draw_from_the_same_law_at_offset_zero() {
    let spec = ScenarioSpec {
        n_internal: 20_000,
        n_external: 20_000,
        ..ScenarioSpec::defaults(ScenarioKind::Linear)
    };
    let pair = generate_pair(&spec, 0.0, 0).unwrap();
    let theta_spec = FamilySpec::linear(FeatureMap::x_block(5));
    let fit_i = fit_model(&theta_spec, &pair.internal);
    let fit_e = fit_model(&theta_spec, &pair.external);
    for j in 0..5 {
        let se = (fit_i.sigma_estimate.as_matrix()[(j, j)]
            + fit_e.sigma_estimate.as_matrix()[(j, j)])
        .sqrt();
        let diff = (fit_i.params[j] - fit_e.params[j]).abs();
        assert!(diff < 4.0 * se, "coordinate {j}: streams differ by {diff:.4} (se {se:.4})");
    }
}

#[test]
fn evaluation_sets_carry_finite_targets_of_the_right_shape() {
    for kind in [ScenarioKind::Linear, ScenarioKind::Logistic, ScenarioKind::Cate] {
        let spec = small_spec(kind);
        let eval = scenarios::generate_eval(&spec, 1).unwrap();
        assert_eq!(eval.data.n(), spec.eval_rows);
        assert_eq!(eval.target.len(), spec.eval_rows);
        assert!(eval.target.iter().all(|v| v.is_finite()));
        if kind == ScenarioKind::Logistic {
            assert!(eval.target.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn scenario_reports_cover_the_grid_with_a_unit_internal_baseline() {
    let spec = small_spec(ScenarioKind::Linear);
    let report = run_scenario(&spec).unwrap();
    assert_eq!(report.grid_label, "offset");
    assert_eq!(report.rows.len(), 2 * 3);
    assert_eq!(report.raw.len(), 2 * 3 * 3);
    for row in &report.rows {
        assert!(row.rel_pmse_mean.is_finite());
        assert!((0.0..=1.0).contains(&row.mean_js_weight));
        assert!(row.coverage_all.is_none());
        if row.estimator == "internal" {
            assert_eq!(row.rel_pmse_mean, 1.0);
            assert_eq!(row.rel_pmse_se, 0.0);
        }
        assert_eq!(row.n_failed, 0);
    }
    let grids: Vec<f64> = report.rows.iter().map(|r| r.grid).collect();
    assert!(grids.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn scenario_runs_are_reproducible_byte_for_byte() {
    let spec = small_spec(ScenarioKind::Surrogate);
    let a = run_scenario(&spec).unwrap();
    let b = run_scenario(&spec).unwrap();
    assert_eq!(io::report_csv(&a), io::report_csv(&b));
    assert_eq!(io::raw_csv(&a), io::raw_csv(&b));
}

#[test]
fn coverage_mode_reports_rates_inside_the_unit_interval() {
    let spec = ScenarioSpec {
        coverage: true,
        offset_grid: vec![0.0],
        ..small_spec(ScenarioKind::Linear)
    };
    let report = run_scenario(&spec).unwrap();
    for row in &report.rows {
        for cov in [row.coverage_all, row.coverage_external, row.coverage_other] {
            let c = cov.expect("coverage mode must fill the coverage columns");
            assert!((0.0..=1.0).contains(&c), "coverage {c} outside [0, 1]");
        }
    }
}

#[test]
fn missing_outcome_workflow_splits_and_tightens_the_covariance() {
    let spec = ScenarioSpec {
        n_internal: 2000,
        n_external: 2000,
        missing_fraction: 0.4,
        ..ScenarioSpec::defaults(ScenarioKind::MissingOutcome)
    };
    let frame = generate_missing_frame(&spec, 0).unwrap();
    let fit = missing_outcome_workflow(&frame, None, &WeightMatrixSpec::Identity).unwrap();

    let n = frame.n();
    assert_eq!(fit.n_internal + fit.n_external, n);
    let frac = fit.n_external as f64 / n as f64;
    assert!((frac - 0.4).abs() < 0.04, "incomplete fraction {frac:.3}");

    let tr_int = fit.fuse.cond.cov_internal.as_matrix().trace();
    let tr_cond = fit.fuse.cond.cov_cond.as_matrix().trace();
    assert!(tr_cond < tr_int, "no information gained: {tr_cond} vs {tr_int}");
    assert!(fit.fuse.cond.gamma_cond.iter().all(|v| v.is_finite()));
    assert_eq!(fit.external.n, fit.n_external);
}

#[test]
fn missing_covariate_workflow_fuses_the_incomplete_rows() {
    let spec = ScenarioSpec {
        n_internal: 2000,
        n_external: 2000,
        missing_fraction: 0.5,
        ..ScenarioSpec::defaults(ScenarioKind::MissingCovariate)
    };
    let frame = generate_missing_frame(&spec, 4).unwrap();
    let fit = missing_covariate_workflow(&frame, &WeightMatrixSpec::Identity).unwrap();
    assert_eq!(fit.n_internal + fit.n_external, frame.n());
    let tr_int = fit.fuse.cond.cov_internal.as_matrix().trace();
    let tr_cond = fit.fuse.cond.cov_cond.as_matrix().trace();
    assert!(tr_cond < tr_int);
    let min_eig = fit.fuse.cond.cov_cond.min_eigenvalue().unwrap();
    assert!(min_eig >= -1e-9);
}

#[test]
fn undersized_complete_splits_are_rejected() {
    let mut r = rng(401);
    let n = 30;
    let x = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { snorm(&mut r) });
    let z = DMatrix::from_fn(n, 2, |_, _| snorm(&mut r));
    let y = DVector::from_fn(n, |_, _| snorm(&mut r));
    let missing = DVector::from_fn(n, |i, _| (i < 5) as u8 as f64);
    let frame = Dataset::new(y, x)
        .unwrap()
        .with_z(z)
        .unwrap()
        .with_missing(missing)
        .unwrap();
    let err = missing_covariate_workflow(&frame, &WeightMatrixSpec::Identity).unwrap_err();
    assert!(matches!(err, Error::InsufficientData(_)), "got {err}");
}

#[test]
fn treatment_scenario_covariates_pair_across_the_grid_too() {
    let spec = small_spec(ScenarioKind::Cate);
    let low = generate_pair(&spec, 0.0, 1).unwrap();
    let high = generate_pair(&spec, 0.2, 1).unwrap();
    assert_eq!(low.external.x(), high.external.x());
    assert_eq!(low.external.treatment(), high.external.treatment());
    assert_eq!(low.external.propensity(), high.external.propensity());
    assert_ne!(low.external.y(), high.external.y());
}
