//! Synthetic study generators for the benchmark scenarios.
//!
//! One covariate law is shared by every scenario: a positively skewed
//! exponential covariate, three correlated Gaussians plus a thresholded
//! binary, and two internal-only covariates, one of which depends on the
//! skewed covariate. The shared block `x` holds the columns an external
//! study would also record; `z` holds internal-only columns, including the
//! binary and interaction terms the external model omits. Heterogeneity
//! between studies enters as an additive offset on the external study's
//! shared-covariate coefficients.
//!
//! Draw order per row is fixed and independent of coefficient values, so
//! two generations with the same seed and different offsets (or residual
//! correlations) are driven by identical random inputs. Replicate seeds are
//! derived from (base seed, replicate, stream role) only, which is what
//! makes paired comparisons across a grid exact.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::equations::Dataset;
use crate::error::{Error, Result};

use super::{ScenarioCoeffs, ScenarioKind, ScenarioSpec};

pub const SALT_INTERNAL: u64 = 1;
pub const SALT_EXTERNAL: u64 = 2;
pub const SALT_EVAL: u64 = 3;
pub const SALT_BOOTSTRAP: u64 = 4;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one random stream of one replicate. Grid values are absent on
/// purpose; see the module docs.
pub fn stream_seed(base: u64, replicate: usize, salt: u64) -> u64 {
    splitmix(splitmix(base ^ splitmix(salt)) ^ replicate as u64)
}

#[derive(Clone, Copy, Debug)]
struct BaseRow {
    x: [f64; 5],
    z1: f64,
    z2: f64,
}

impl BaseRow {
    fn x1x3(&self) -> f64 {
        self.x[0] * self.x[2]
    }

    fn x2z2(&self) -> f64 {
        self.x[1] * self.z2
    }
}

struct RowSampler {
    chol: DMatrix<f64>,
    z2_slope: f64,
}

impl RowSampler {
    fn new(c: &ScenarioCoeffs) -> Result<Self> {
        let mut corr = DMatrix::from_element(4, 4, c.corr);
        for i in 0..4 {
            corr[(i, i)] = 1.0;
        }
        let chol = Cholesky::new(corr)
            .ok_or_else(|| Error::Config(format!("covariate correlation {} is not valid", c.corr)))?
            .l();
        Ok(RowSampler { chol, z2_slope: c.z2_slope })
    }

    fn draw(&self, rng: &mut ChaCha12Rng) -> BaseRow {
        let x1: f64 = Exp1.sample(rng);
        let u = DVector::from_iterator(4, (0..4).map(|_| snorm(rng)));
        let v = &self.chol * u;
        let x2 = v[0];
        let x3 = if v[1] > 0.7 * x2 { 1.0 } else { 0.0 };
        let z1 = snorm(rng);
        let z2 = self.z2_slope * x1.ln() + snorm(rng);
        BaseRow { x: [x1, x2, x3, v[2], v[3]], z1, z2 }
    }
}

/// Mean outcome surface; `delta` shifts the shared-covariate coefficient
/// group, which is how between-study heterogeneity is injected.
fn mean_main(r: &BaseRow, c: &ScenarioCoeffs, delta: f64) -> f64 {
    let bx = c.beta_x + delta;
    c.beta_c
        + bx * (r.x.iter().sum::<f64>() + r.x1x3())
        + c.beta_z * (r.z1 + r.z2)
        + c.beta_xz * r.x2z2()
}

/// Treatment-effect surface over (1, x1, x2, z1, x2 z2).
fn cate_delta(r: &BaseRow, c: &ScenarioCoeffs) -> f64 {
    c.tau[0] + c.tau[1] * r.x[0] + c.tau[2] * r.x[1] + c.tau[3] * r.z1 + c.tau[4] * r.x2z2()
}

fn snorm(rng: &mut ChaCha12Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn expit(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        v.exp() / (1.0 + v.exp())
    }
}

fn assign_prob(r: &BaseRow, c: &ScenarioCoeffs) -> f64 {
    expit(c.assign[0] + c.assign[1] * r.x[0] + c.assign[2] * r.z1)
}

fn draw_rows(sampler: &RowSampler, n: usize, rng: &mut ChaCha12Rng) -> Vec<BaseRow> {
    (0..n).map(|_| sampler.draw(rng)).collect()
}

/// Shared frame for the regression scenarios: x = (1, x1, x2, x4, x5),
/// z = (x3, x1 x3, z1, z2, x2 z2). The external model sees only x, so the
/// binary covariate and every interaction live in z.
fn xz_frame(rows: &[BaseRow]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = rows.len();
    let x = DMatrix::from_fn(n, 5, |i, j| match j {
        0 => 1.0,
        1 => rows[i].x[0],
        2 => rows[i].x[1],
        3 => rows[i].x[3],
        _ => rows[i].x[4],
    });
    let z = DMatrix::from_fn(n, 5, |i, j| match j {
        0 => rows[i].x[2],
        1 => rows[i].x1x3(),
        2 => rows[i].z1,
        3 => rows[i].z2,
        _ => rows[i].x2z2(),
    });
    (x, z)
}

/// Treatment-effect frame: x = (1, x1..x5) since the external effect model
/// uses all shared covariates; z = (z1, z2, x2 z2).
fn cate_frame(rows: &[BaseRow]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = rows.len();
    let x = DMatrix::from_fn(n, 6, |i, j| if j == 0 { 1.0 } else { rows[i].x[j - 1] });
    let z = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => rows[i].z1,
        1 => rows[i].z2,
        _ => rows[i].x2z2(),
    });
    (x, z)
}

#[derive(Clone, Debug)]
pub struct StudyPair {
    pub internal: Dataset,
    pub external: Dataset,
}

#[derive(Clone, Debug)]
pub struct EvalSet {
    pub data: Dataset,
    /// True value of the scenario's prediction target per row.
    pub target: DVector<f64>,
}

fn linear_like_study(
    kind: ScenarioKind,
    c: &ScenarioCoeffs,
    n: usize,
    delta: f64,
    external: bool,
    rng: &mut ChaCha12Rng,
) -> Result<Dataset> {
    let sampler = RowSampler::new(c)?;
    let rows = draw_rows(&sampler, n, rng);
    let (x, z) = xz_frame(&rows);
    let y = DVector::from_iterator(
        n,
        rows.iter().map(|r| {
            let m = mean_main(r, c, delta);
            match kind {
                ScenarioKind::Linear => m + c.noise_sd * snorm(rng),
                ScenarioKind::Logistic => (rng.gen::<f64>() < expit(m)) as u8 as f64,
                _ => unreachable!("linear_like_study called for {kind:?}"),
            }
        }),
    );
    let d = Dataset::new(y, x)?;
    if external { Ok(d) } else { d.with_z(z) }
}

fn cate_study(
    c: &ScenarioCoeffs,
    n: usize,
    delta: f64,
    external: bool,
    rng: &mut ChaCha12Rng,
) -> Result<Dataset> {
    let sampler = RowSampler::new(c)?;
    let rows = draw_rows(&sampler, n, rng);
    let (x, z) = cate_frame(&rows);
    let mut y = DVector::zeros(n);
    let mut a = DVector::zeros(n);
    let mut p = DVector::zeros(n);
    for (i, r) in rows.iter().enumerate() {
        p[i] = assign_prob(r, c);
        a[i] = (rng.gen::<f64>() < p[i]) as u8 as f64;
        y[i] = mean_main(r, c, delta)
            + a[i] * cate_delta(r, c)
            + c.noise_sd * snorm(rng);
    }
    let mut d = Dataset::new(y, x)?.with_treatment(a)?.with_propensity(p)?;
    if !external {
        d = d.with_z(z)?;
    }
    Ok(d)
}

fn surrogate_internal(
    c: &ScenarioCoeffs,
    n: usize,
    rho: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Dataset> {
    let sampler = RowSampler::new(c)?;
    let rows = draw_rows(&sampler, n, rng);
    let (x, z) = xz_frame(&rows);
    let mut y1 = DVector::zeros(n);
    let mut y2 = DVector::zeros(n);
    let tail = (1.0 - rho * rho).max(0.0).sqrt();
    for (i, r) in rows.iter().enumerate() {
        let m = mean_main(r, c, 0.0);
        let u1 = snorm(rng);
        let u2 = snorm(rng);
        y1[i] = m + c.sigma1 * u1;
        y2[i] = m + c.sigma2 * (rho * u1 + tail * u2);
    }
    Dataset::new(y1, x)?.with_y2(y2)?.with_z(z)
}

fn surrogate_external(
    c: &ScenarioCoeffs,
    n: usize,
    delta: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Dataset> {
    let sampler = RowSampler::new(c)?;
    let rows = draw_rows(&sampler, n, rng);
    let (x, _) = xz_frame(&rows);
    let y2 = DVector::from_iterator(
        n,
        rows.iter()
            .map(|r| mean_main(r, c, delta) + c.sigma2 * snorm(rng)),
    );
    Dataset::new(y2, x)
}

/// Internal and external studies for one replicate at one grid value.
/// For the regression and treatment-effect scenarios `grid` is the external
/// coefficient offset; for the surrogate scenario it is the residual
/// correlation and the offset comes from `spec.surrogate_offset`.
pub fn generate_pair(spec: &ScenarioSpec, grid: f64, replicate: usize) -> Result<StudyPair> {
    let c = &spec.coeffs;
    let mut rng_i =
        ChaCha12Rng::seed_from_u64(stream_seed(spec.base_seed, replicate, SALT_INTERNAL));
    let mut rng_e =
        ChaCha12Rng::seed_from_u64(stream_seed(spec.base_seed, replicate, SALT_EXTERNAL));
    match spec.kind {
        ScenarioKind::Linear | ScenarioKind::Logistic => Ok(StudyPair {
            internal: linear_like_study(spec.kind, c, spec.n_internal, 0.0, false, &mut rng_i)?,
            external: linear_like_study(spec.kind, c, spec.n_external, grid, true, &mut rng_e)?,
        }),
        ScenarioKind::Cate => Ok(StudyPair {
            internal: cate_study(c, spec.n_internal, 0.0, false, &mut rng_i)?,
            external: cate_study(c, spec.n_external, grid, true, &mut rng_e)?,
        }),
        ScenarioKind::Surrogate => Ok(StudyPair {
            internal: surrogate_internal(c, spec.n_internal, grid, &mut rng_i)?,
            external: surrogate_external(c, spec.n_external, spec.surrogate_offset, &mut rng_e)?,
        }),
        other => Err(Error::Config(format!(
            "scenario {} generates a single frame, not a study pair",
            other.name()
        ))),
    }
}

/// Fresh rows from the internal-study law with the true prediction target.
pub fn generate_eval(spec: &ScenarioSpec, replicate: usize) -> Result<EvalSet> {
    let c = &spec.coeffs;
    let mut rng = ChaCha12Rng::seed_from_u64(stream_seed(spec.base_seed, replicate, SALT_EVAL));
    let sampler = RowSampler::new(c)?;
    let rows = draw_rows(&sampler, spec.eval_rows, &mut rng);
    let (target, data) = match spec.kind {
        ScenarioKind::Linear
        | ScenarioKind::Surrogate
        | ScenarioKind::MissingOutcome
        | ScenarioKind::MissingCovariate => {
            let t = DVector::from_iterator(rows.len(), rows.iter().map(|r| mean_main(r, c, 0.0)));
            let (x, z) = xz_frame(&rows);
            (t.clone(), Dataset::new(t, x)?.with_z(z)?)
        }
        ScenarioKind::Logistic => {
            let t = DVector::from_iterator(
                rows.len(),
                rows.iter().map(|r| expit(mean_main(r, c, 0.0))),
            );
            let (x, z) = xz_frame(&rows);
            (t.clone(), Dataset::new(t, x)?.with_z(z)?)
        }
        ScenarioKind::Cate => {
            let t = DVector::from_iterator(rows.len(), rows.iter().map(|r| cate_delta(r, c)));
            let (x, z) = cate_frame(&rows);
            (t.clone(), Dataset::new(t, x)?.with_z(z)?)
        }
    };
    Ok(EvalSet { data, target })
}

/// One frame with a missingness indicator for the workflow scenarios:
/// missing completely at random with probability `missing_fraction`, linear
/// outcome at offset zero. The indicator is 1 where the row is complete
/// (outcome present for missing_outcome, z present for missing_covariate).
pub fn generate_missing_frame(spec: &ScenarioSpec, replicate: usize) -> Result<Dataset> {
    if !matches!(spec.kind, ScenarioKind::MissingOutcome | ScenarioKind::MissingCovariate) {
        return Err(Error::Config(format!(
            "scenario {} does not use a missingness frame",
            spec.kind.name()
        )));
    }
    let c = &spec.coeffs;
    let n = spec.n_internal + spec.n_external;
    let mut rng =
        ChaCha12Rng::seed_from_u64(stream_seed(spec.base_seed, replicate, SALT_INTERNAL));
    let sampler = RowSampler::new(c)?;
    let rows = draw_rows(&sampler, n, &mut rng);
    let (x, z) = xz_frame(&rows);
    let mut y = DVector::zeros(n);
    let mut r_col = DVector::zeros(n);
    for (i, r) in rows.iter().enumerate() {
        y[i] = mean_main(r, c, 0.0) + c.noise_sd * snorm(&mut rng);
        r_col[i] = (rng.gen::<f64>() >= spec.missing_fraction) as u8 as f64;
    }
    Dataset::new(y, x)?.with_z(z)?.with_missing(r_col)
}
