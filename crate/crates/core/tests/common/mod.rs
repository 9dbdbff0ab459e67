//! Shared fixtures for the integration suites: small deterministic synthetic
//! frames, finite-difference helpers, and rank statistics.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use estfuse::equations::{self, Dataset, FamilySpec};
use estfuse::sandwich::{self, FittedModel};
use estfuse::zsolve::{self, SolveOptions, SolveReport};

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

pub fn snorm(rng: &mut ChaCha12Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn expit(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Covariate block shared by the frame builders: x = (1, x1, x2) with a
/// skewed first covariate, z = (z1, z2) with z2 leaning on x1.
fn covariates(n: usize, rng: &mut ChaCha12Rng) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut x = DMatrix::zeros(n, 3);
    let mut z = DMatrix::zeros(n, 2);
    for i in 0..n {
        let x1: f64 = rand_distr::Exp1.sample(rng);
        let x2 = snorm(rng);
        x[(i, 0)] = 1.0;
        x[(i, 1)] = x1;
        x[(i, 2)] = x2;
        z[(i, 0)] = snorm(rng);
        z[(i, 1)] = 0.3 * x1 + snorm(rng);
    }
    (x, z)
}

pub const LINEAR_BETA: [f64; 5] = [0.5, 0.8, -0.5, 0.4, 0.3];

fn linear_mean(x: &DMatrix<f64>, z: &DMatrix<f64>, i: usize) -> f64 {
    LINEAR_BETA[0] + LINEAR_BETA[1] * x[(i, 1)] + LINEAR_BETA[2] * x[(i, 2)]
        + LINEAR_BETA[3] * z[(i, 0)]
        + LINEAR_BETA[4] * z[(i, 1)]
}

pub fn linear_frame(n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let (x, z) = covariates(n, &mut r);
    let y = DVector::from_fn(n, |i, _| linear_mean(&x, &z, i) + 0.7 * snorm(&mut r));
    Dataset::new(y, x).unwrap().with_z(z).unwrap()
}

pub fn binary_frame(n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let (x, z) = covariates(n, &mut r);
    let y = DVector::from_fn(n, |i, _| {
        let lp = 0.3 + 0.6 * x[(i, 1)] - 0.5 * x[(i, 2)] + 0.4 * z[(i, 0)];
        (r.gen::<f64>() < expit(lp)) as u8 as f64
    });
    Dataset::new(y, x).unwrap().with_z(z).unwrap()
}

pub fn count_frame(n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let (x, z) = covariates(n, &mut r);
    let y = DVector::from_fn(n, |i, _| {
        let lp = 0.2 + 0.3 * x[(i, 1)] - 0.2 * x[(i, 2)];
        rand_distr::Poisson::new(lp.exp()).unwrap().sample(&mut r)
    });
    Dataset::new(y, x).unwrap().with_z(z).unwrap()
}

/// Randomized-treatment frame for the centered families: propensity
/// expit(0.2 + 0.3 x1), additive effect 0.4 + 0.3 x1 + 0.2 z1.
pub fn treatment_frame(n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let (x, z) = covariates(n, &mut r);
    let mut y = DVector::zeros(n);
    let mut a = DVector::zeros(n);
    let mut p = DVector::zeros(n);
    for i in 0..n {
        p[i] = expit(0.2 + 0.3 * x[(i, 1)]);
        a[i] = (r.gen::<f64>() < p[i]) as u8 as f64;
        let effect = 0.4 + 0.3 * x[(i, 1)] + 0.2 * z[(i, 0)];
        y[i] = linear_mean(&x, &z, i) + a[i] * effect + 0.7 * snorm(&mut r);
    }
    Dataset::new(y, x)
        .unwrap()
        .with_z(z)
        .unwrap()
        .with_treatment(a)
        .unwrap()
        .with_propensity(p)
        .unwrap()
}

pub const RISK_ALPHA: [f64; 2] = [0.3, 0.25];
pub const RISK_GAMMA: [f64; 2] = [0.4, -0.3];

/// Multiplicative-outcome frame: mean exp(alpha'g + omitted + a gamma'f)
/// with unit-mean lognormal noise and a constant 1/2 propensity. The
/// omitted term makes any control model over (1, x1) wrong on purpose.
pub fn risk_frame(n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let (x, z) = covariates(n, &mut r);
    let mut y = DVector::zeros(n);
    let mut a = DVector::zeros(n);
    let p = DVector::from_element(n, 0.5);
    let noise_sd: f64 = 0.4;
    for i in 0..n {
        a[i] = (r.gen::<f64>() < 0.5) as u8 as f64;
        let lp = RISK_ALPHA[0] + RISK_ALPHA[1] * x[(i, 1)] + 0.3 * x[(i, 2)]
            + a[i] * (RISK_GAMMA[0] + RISK_GAMMA[1] * x[(i, 1)]);
        let eps = (noise_sd * snorm(&mut r) - 0.5 * noise_sd * noise_sd).exp();
        y[i] = lp.exp() * eps;
    }
    Dataset::new(y, x)
        .unwrap()
        .with_z(z)
        .unwrap()
        .with_treatment(a)
        .unwrap()
        .with_propensity(p)
        .unwrap()
}

/// Paired outcomes with residual correlation `rho` and a mean that is exact
/// in the x design, so an x-block model is correctly specified for both.
pub fn surrogate_frame(n: usize, rho: f64, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let (x, z) = covariates(n, &mut r);
    let mut y1 = DVector::zeros(n);
    let mut y2 = DVector::zeros(n);
    let tail = (1.0 - rho * rho).max(0.0).sqrt();
    for i in 0..n {
        let m = LINEAR_BETA[0] + LINEAR_BETA[1] * x[(i, 1)] + LINEAR_BETA[2] * x[(i, 2)];
        let u1 = snorm(&mut r);
        let u2 = snorm(&mut r);
        y1[i] = m + 0.8 * u1;
        y2[i] = m + 0.6 * (rho * u1 + tail * u2);
    }
    Dataset::new(y1, x)
        .unwrap()
        .with_y2(y2)
        .unwrap()
        .with_z(z)
        .unwrap()
}

/// Ready-to-fuse linear setup: internal frame, external x-only summary from
/// a larger draw of the same law, and the matching model pair.
pub fn linear_fuse_inputs(
    n_internal: usize,
    n_external: usize,
    seed: u64,
) -> (Dataset, estfuse::fusion::ExternalSummary, estfuse::sandwich::ModelPair) {
    use estfuse::equations::FeatureMap;
    let internal = linear_frame(n_internal, seed);
    let external = linear_frame(n_external, seed ^ 0x5bd1_e995);
    let theta_spec = FamilySpec::linear(FeatureMap::x_block(3));
    let ext = estfuse::fusion::ExternalSummary::from_fit(
        &fit_model(&theta_spec, &external),
        estfuse::transform::TransformSpec::identity(),
    );
    let pair = estfuse::sandwich::ModelPair::Separate {
        theta: theta_spec,
        gamma: FamilySpec::linear(FeatureMap::full_block(3, 2)),
    };
    (internal, ext, pair)
}

/// Every family paired with a frame that carries its required columns.
pub fn family_fixtures(n: usize, seed: u64) -> Vec<(FamilySpec, Dataset)> {
    use estfuse::equations::{Feature, FeatureMap};
    let effect = FeatureMap(vec![Feature::X(0), Feature::X(1), Feature::Z(0)]);
    let short = FeatureMap(vec![Feature::X(0), Feature::X(1)]);
    vec![
        (FamilySpec::linear(FeatureMap::full_block(3, 2)), linear_frame(n, seed)),
        (FamilySpec::logistic(FeatureMap::full_block(3, 2)), binary_frame(n, seed + 1)),
        (FamilySpec::poisson(FeatureMap::x_block(3)), count_frame(n, seed + 2)),
        (FamilySpec::wcls(FeatureMap::x_block(3), effect), treatment_frame(n, seed + 3)),
        (FamilySpec::log_relative_risk(short.clone(), short), risk_frame(n, seed + 4)),
        (FamilySpec::surrogate(FeatureMap::x_block(3)), surrogate_frame(n, 0.5, seed + 5)),
    ]
}

pub fn param_dim(spec: &FamilySpec, data: &Dataset) -> usize {
    let ev = equations::registry::build(spec).unwrap();
    ev.validate(data).unwrap();
    ev.param_dim()
}

pub fn solve_default(spec: &FamilySpec, data: &Dataset) -> SolveReport {
    zsolve::solve(spec, data, &SolveOptions::default()).unwrap()
}

pub fn fit_model(spec: &FamilySpec, data: &Dataset) -> FittedModel {
    let sol = solve_default(spec, data);
    sandwich::sandwich_fit(spec, data, &sol).unwrap()
}

/// Central finite differences of the weighted mean score, step
/// 1e-6 (1 + |param|) per coordinate.
pub fn fd_mean_jacobian(
    spec: &FamilySpec,
    data: &Dataset,
    params: &DVector<f64>,
) -> DMatrix<f64> {
    let d = params.len();
    let mean_score = |p: &DVector<f64>| -> DVector<f64> {
        let ev = equations::eval_equation(spec, data, p).unwrap();
        ev.mean_score
    };
    let mut out = DMatrix::zeros(d, d);
    for j in 0..d {
        let h = 1e-6 * (1.0 + params[j].abs());
        let mut up = params.clone();
        let mut dn = params.clone();
        up[j] += h;
        dn[j] -= h;
        let diff = (mean_score(&up) - mean_score(&dn)) / (2.0 * h);
        out.set_column(j, &diff);
    }
    out
}

/// Central finite differences of one score row.
pub fn fd_row_jacobian(
    spec: &FamilySpec,
    data: &Dataset,
    params: &DVector<f64>,
    row: usize,
) -> DMatrix<f64> {
    let d = params.len();
    let score_row = |p: &DVector<f64>| -> DVector<f64> {
        let ev = equations::eval_equation(spec, data, p).unwrap();
        ev.scores.row(row).transpose()
    };
    let mut out = DMatrix::zeros(d, d);
    for j in 0..d {
        let h = 1e-6 * (1.0 + params[j].abs());
        let mut up = params.clone();
        let mut dn = params.clone();
        up[j] += h;
        dn[j] -= h;
        let diff = (score_row(&up) - score_row(&dn)) / (2.0 * h);
        out.set_column(j, &diff);
    }
    out
}

pub fn max_rel_err(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    assert_eq!((got.nrows(), got.ncols()), (want.nrows(), want.ncols()));
    let mut worst: f64 = 0.0;
    for (a, b) in got.iter().zip(want.iter()) {
        worst = worst.max((a - b).abs() / (1.0 + b.abs()));
    }
    worst
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = ranks(a);
    let rb = ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        let da = ra[i] - ma;
        let db = rb[i] - mb;
        num += da * db;
        va += da * da;
        vb += db * db;
    }
    num / (va * vb).sqrt()
}

/// One-sided p-value for mean(a - b) < 0 from a paired t statistic.
pub fn paired_t_pvalue_less(a: &[f64], b: &[f64]) -> f64 {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = mean / (var / n).sqrt();
    StudentsT::new(0.0, 1.0, n - 1.0).unwrap().cdf(t)
}
