//! Generalized (multiplier) bootstrap for the fused estimators.
//!
//! Each replicate draws i.i.d. unit-mean exponential observation weights,
//! re-solves both internal estimating equations under those weights, and
//! reruns the conditional step against the unchanged external summary. The
//! James-Stein weight of a replicate reuses the original fit's J matrix and
//! tau_star with the replicate's own discrepancy, matching how the weight
//! behaves as a smooth functional of the data rather than re-estimating its
//! ingredients from reweighted scores.
//!
//! Replicate k is seeded with base_seed + k, so results are independent of
//! thread count and replicate execution order. Replicates that fail to
//! converge (or hit a numeric dead end) are recorded as NaN rows; more than
//! `max_failure_fraction` of them fails the whole run.

use nalgebra::{DMatrix, DVector};
use rand::distributions::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::equations::Dataset;
use crate::error::{Error, Result};
use crate::fusion::{self, ConditionalResult, ExternalSummary};
use crate::numerics::SymMatrix;
use crate::sandwich::ModelPair;
use crate::shrinkage::{self, ShrinkageResult, WeightMatrixSpec};

/// Multiplier distribution. The degenerate law keeps every weight at 1 and
/// exists to pin down plumbing in tests: all replicates must then reproduce
/// the base fit exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MultiplierLaw {
    UnitExponential,
    AllOnes,
}

#[derive(Clone, Debug)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub base_seed: u64,
    /// Two-sided percentile interval level, e.g. 0.90.
    pub ci_level: f64,
    pub law: MultiplierLaw,
    pub max_failure_fraction: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 200,
            base_seed: 0,
            ci_level: 0.90,
            law: MultiplierLaw::UnitExponential,
            max_failure_fraction: 0.05,
        }
    }
}

impl BootstrapConfig {
    fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("bootstrap needs at least one replicate".into()));
        }
        if !(0.0 < self.ci_level && self.ci_level < 1.0) {
            return Err(Error::Config(format!("ci_level must lie in (0, 1), got {}", self.ci_level)));
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return Err(Error::Config("max_failure_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One full point-estimate pipeline: joint fit, loss matrix, conditional
/// step, shrinkage step. This is exactly what the bootstrap repeats under
/// replicate weights.
#[derive(Clone, Debug)]
pub struct FuseFit {
    pub joint: crate::sandwich::JointFit,
    pub a: SymMatrix,
    pub cond: ConditionalResult,
    pub shrink: ShrinkageResult,
}

pub fn fuse_once(
    pair: &ModelPair,
    data: &Dataset,
    ext: &ExternalSummary,
    a_spec: &WeightMatrixSpec,
) -> Result<FuseFit> {
    let joint = pair.fit(data, None)?;
    let a = shrinkage::build_a(a_spec, &joint, data)?;
    let cond = fusion::conditional_estimate(&joint, ext)?;
    let shrink = shrinkage::james_stein(&cond, &a)?;
    Ok(FuseFit { joint, a, cond, shrink })
}

/// Draws and percentile interval for one estimator.
#[derive(Clone, Debug)]
pub struct EstimatorDraws {
    pub label: &'static str,
    pub point: DVector<f64>,
    /// replicates x dim; failed replicates are NaN rows.
    pub draws: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct BootstrapOutput {
    pub base: FuseFit,
    pub internal: EstimatorDraws,
    pub conditional: EstimatorDraws,
    pub js: EstimatorDraws,
    /// Replicate James-Stein weights, NaN where the replicate failed.
    pub js_weights: Vec<f64>,
    pub n_failed: usize,
    pub replicates: usize,
    pub ci_level: f64,
}

impl BootstrapOutput {
    pub fn estimators(&self) -> [&EstimatorDraws; 3] {
        [&self.internal, &self.conditional, &self.js]
    }
}

/// Quantile of ascending order statistics at the (m + 1)p plotting position,
/// the usual convention for bootstrap percentile intervals, interpolated
/// linearly between adjacent order statistics and clamped to the extremes.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let m = sorted.len();
    let h = ((m + 1) as f64 * p.clamp(0.0, 1.0) - 1.0).clamp(0.0, (m - 1) as f64);
    let lo = h.floor() as usize;
    if lo + 1 >= m {
        return sorted[m - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

struct ReplicateRow {
    internal: DVector<f64>,
    conditional: DVector<f64>,
    js: DVector<f64>,
    weight: f64,
}

/// An error a replicate is allowed to absorb as a failure, as opposed to a
/// misconfiguration that would fail every replicate identically.
fn is_soft(err: &Error) -> bool {
    matches!(
        err,
        Error::Numeric(_)
            | Error::SingularMatrix(_)
            | Error::IllConditioned { .. }
            | Error::NonConvergence { .. }
            | Error::DegenerateTransform(_)
            | Error::InsufficientData(_)
    )
}

fn draw_weights(law: MultiplierLaw, n: usize, rng: &mut ChaCha12Rng) -> DVector<f64> {
    match law {
        MultiplierLaw::AllOnes => DVector::from_element(n, 1.0),
        MultiplierLaw::UnitExponential => {
            let exp = rand_distr::Exp1;
            DVector::from_iterator(n, (0..n).map(|_| exp.sample(rng)))
        }
    }
}

fn interval(draws: &DMatrix<f64>, level: f64, j: usize) -> (f64, f64) {
    let mut vals: Vec<f64> = draws.column(j).iter().copied().filter(|v| v.is_finite()).collect();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
    let alpha = (1.0 - level) / 2.0;
    (percentile(&vals, alpha), percentile(&vals, 1.0 - alpha))
}

/// Bootstrap the full fusion pipeline. The external summary is treated as a
/// fixed constant: only internal-study uncertainty is resampled, which is
/// the right frame when the external study is much larger or simply not
/// re-observable.
pub fn bootstrap_fuse(
    pair: &ModelPair,
    data: &Dataset,
    ext: &ExternalSummary,
    a_spec: &WeightMatrixSpec,
    cfg: &BootstrapConfig,
) -> Result<BootstrapOutput> {
    cfg.validate()?;
    let base = fuse_once(pair, data, ext, a_spec)?;
    let frozen = shrinkage::freeze(&base.cond, &base.a)?;
    let theta_warm = base.joint.theta.params.clone();
    let gamma_warm = base.joint.gamma.params.clone();

    let rows: Vec<Option<ReplicateRow>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|k| -> Result<Option<ReplicateRow>> {
            let mut rng = ChaCha12Rng::seed_from_u64(cfg.base_seed.wrapping_add(k as u64));
            let w = draw_weights(cfg.law, data.n(), &mut rng);
            let run = || -> Result<ReplicateRow> {
                let wdata = data.with_weights(w)?;
                let joint = pair.fit(&wdata, Some((&theta_warm, &gamma_warm)))?;
                let cond = fusion::conditional_estimate(&joint, ext)?;
                let (weight, _) = frozen.weight(&cond.h_diff);
                let js = weight * &cond.gamma_cond + (1.0 - weight) * &cond.gamma_internal;
                Ok(ReplicateRow {
                    internal: cond.gamma_internal.clone(),
                    conditional: cond.gamma_cond.clone(),
                    js,
                    weight,
                })
            };
            match run() {
                Ok(row) => Ok(Some(row)),
                Err(e) if is_soft(&e) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let q = base.cond.gamma_internal.len();
    let b = cfg.replicates;
    let nan = f64::NAN;
    let mut d_int = DMatrix::from_element(b, q, nan);
    let mut d_cond = DMatrix::from_element(b, q, nan);
    let mut d_js = DMatrix::from_element(b, q, nan);
    let mut js_weights = vec![nan; b];
    let mut n_failed = 0;
    for (k, row) in rows.iter().enumerate() {
        match row {
            Some(r) => {
                for j in 0..q {
                    d_int[(k, j)] = r.internal[j];
                    d_cond[(k, j)] = r.conditional[j];
                    d_js[(k, j)] = r.js[j];
                }
                js_weights[k] = r.weight;
            }
            None => n_failed += 1,
        }
    }
    if (n_failed as f64) > cfg.max_failure_fraction * b as f64 {
        return Err(Error::BootstrapDegenerate { failed: n_failed, total: b });
    }

    let make = |label: &'static str, point: &DVector<f64>, draws: DMatrix<f64>| {
        let mut lower = DVector::zeros(q);
        let mut upper = DVector::zeros(q);
        for j in 0..q {
            let (lo, hi) = interval(&draws, cfg.ci_level, j);
            lower[j] = lo;
            upper[j] = hi;
        }
        EstimatorDraws { label, point: point.clone(), draws, lower, upper }
    };
    let internal = make("internal", &base.cond.gamma_internal, d_int);
    let conditional = make("conditional", &base.cond.gamma_cond, d_cond);
    let js = make("js", &base.shrink.gamma_js, d_js);
    Ok(BootstrapOutput {
        base,
        internal,
        conditional,
        js,
        js_weights,
        n_failed,
        replicates: b,
        ci_level: cfg.ci_level,
    })
}
