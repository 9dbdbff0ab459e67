//! James-Stein shrinkage between the internal and conditional estimates.
//!
//! The conditional estimator is best when the two studies estimate the same
//! transformed parameter, but its gain turns into bias when they do not.
//! The shrinkage estimator interpolates,
//!
//!   gamma_js = w gamma_cond + (1 - w) gamma_I,
//!   w = min(tau_star / d_hat, 1),
//!
//! where d_hat = (gamma_cond - gamma_I)' A (gamma_cond - gamma_I) measures
//! the realized disagreement under a user-chosen positive semidefinite loss
//! matrix A, and tau_star = tr(J) - 2 ||J|| is the loss-weighted gain of
//! conditioning, computed from J = S^{-1/2} C' A C S^{-1/2} with
//! S = Cov(h-discrepancy) and C = Cov(gamma_I, h(theta_I)). Large observed
//! disagreement drives w to 0 (keep the internal estimate); small
//! disagreement relative to the gain drives w to 1 (keep the conditional
//! estimate). tau_star <= 0 happens exactly when the effective dimension
//! tr(J)/||J|| is at most 2, where shrinkage cannot dominate and the
//! internal estimate is returned unchanged.
//!
//! The weight is invariant to rescaling A, since J and d_hat are both
//! linear in A. It is not invariant to the covariance scale: S and C must
//! be estimate-scale covariances so that tau_star and the realized
//! disagreement shrink together as the sample grows.

use nalgebra::{DMatrix, DVector};

use crate::equations::registry;
use crate::error::{Error, Result};
use crate::fusion::ConditionalResult;
use crate::numerics::{self, SymMatrix};
use crate::sandwich::JointFit;

/// Loss matrix used in the disagreement quadratic form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WeightMatrixSpec {
    /// Unweighted parameter distance.
    Identity,
    /// Inverse of the internal model's per-observation sandwich covariance.
    InverseCovariance,
    /// Gram matrix of the internal model's prediction design: parameter
    /// error is weighted by its effect on fitted responses.
    Predictive,
    /// Predictive loss restricted to the named parameter coordinates,
    /// zero elsewhere.
    PredictiveSubset(Vec<usize>),
}

impl WeightMatrixSpec {
    pub fn name(&self) -> &'static str {
        match self {
            WeightMatrixSpec::Identity => "identity",
            WeightMatrixSpec::InverseCovariance => "inv_cov",
            WeightMatrixSpec::Predictive => "pmse",
            WeightMatrixSpec::PredictiveSubset(_) => "pmse_subset",
        }
    }

    pub fn parse(name: &str, indices: Vec<usize>) -> Result<Self> {
        match name {
            "identity" => Ok(WeightMatrixSpec::Identity),
            "inv_cov" => Ok(WeightMatrixSpec::InverseCovariance),
            "pmse" => Ok(WeightMatrixSpec::Predictive),
            "pmse_subset" => {
                if indices.is_empty() {
                    return Err(Error::Config("pmse_subset requires coordinate indices".into()));
                }
                Ok(WeightMatrixSpec::PredictiveSubset(indices))
            }
            other => Err(Error::Config(format!("unknown loss matrix {other:?}"))),
        }
    }
}

/// Build the loss matrix for the internal model of a joint fit.
pub fn build_a(spec: &WeightMatrixSpec, joint: &JointFit, data: &crate::equations::Dataset) -> Result<SymMatrix> {
    let q = joint.gamma_dim();
    match spec {
        WeightMatrixSpec::Identity => Ok(SymMatrix::identity(q)),
        WeightMatrixSpec::InverseCovariance => {
            let inv = numerics::reg_inverse(&joint.gamma.sigma_per_obs, 0.0)?;
            Ok(SymMatrix::symmetrize(inv.solution))
        }
        WeightMatrixSpec::Predictive | WeightMatrixSpec::PredictiveSubset(_) => {
            let eq = registry::build(&joint.gamma.family)?;
            let h = eq.prediction_design(data)?;
            if h.ncols() != q {
                return Err(Error::Schema(format!(
                    "prediction design has {} columns, internal model has {q} parameters",
                    h.ncols()
                )));
            }
            let total = data.total_weight();
            let w = data.weights();
            match spec {
                WeightMatrixSpec::PredictiveSubset(coords) => {
                    let mut seen = vec![false; q];
                    for &c in coords {
                        if c >= q {
                            return Err(Error::Config(format!(
                                "pmse_subset index {c} out of range for {q} parameters"
                            )));
                        }
                        if seen[c] {
                            return Err(Error::Config(format!("pmse_subset repeats index {c}")));
                        }
                        seen[c] = true;
                    }
                    let mut a = DMatrix::zeros(q, q);
                    for i in 0..h.nrows() {
                        let wi = w[i];
                        for (r, &cr) in coords.iter().enumerate() {
                            for &cc in coords.iter().skip(r) {
                                let v = wi * h[(i, cr)] * h[(i, cc)];
                                a[(cr, cc)] += v;
                                if cr != cc {
                                    a[(cc, cr)] += v;
                                }
                            }
                        }
                    }
                    Ok(SymMatrix::symmetrize(a / total))
                }
                _ => {
                    let mut hw = h.clone();
                    for i in 0..hw.nrows() {
                        let wi = w[i];
                        for j in 0..q {
                            hw[(i, j)] *= wi;
                        }
                    }
                    Ok(SymMatrix::symmetrize(hw.transpose() * &h / total))
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShrinkageFallback {
    /// No fallback: the interior weight formula applied.
    None,
    /// tau_star <= 0 (effective dimension at most 2): weight forced to 0.
    DLe2,
    /// Zero observed disagreement with tau_star > 0: weight forced to 0 by
    /// convention since the estimates already coincide.
    ZeroDenominator,
}

impl ShrinkageFallback {
    pub fn name(&self) -> &'static str {
        match self {
            ShrinkageFallback::None => "none",
            ShrinkageFallback::DLe2 => "d_le_2",
            ShrinkageFallback::ZeroDenominator => "zero_denominator",
        }
    }
}

fn weight_rule(tau_star: f64, denominator: f64) -> (f64, ShrinkageFallback) {
    if tau_star <= 0.0 {
        (0.0, ShrinkageFallback::DLe2)
    } else if denominator <= 0.0 {
        (0.0, ShrinkageFallback::ZeroDenominator)
    } else {
        ((tau_star / denominator).min(1.0), ShrinkageFallback::None)
    }
}

/// The pieces of the weight formula that stay fixed across bootstrap
/// replicates: J, its invariants, and S^{-1/2} for mapping a replicate's
/// h-scale discrepancy into the frozen quadratic form.
#[derive(Clone, Debug)]
pub struct FrozenWeights {
    pub inv_sqrt_s: DMatrix<f64>,
    pub j_matrix: SymMatrix,
    pub trace_j: f64,
    pub norm_j: f64,
    pub tau_star: f64,
}

impl FrozenWeights {
    /// Weight for a (possibly replicate) h-scale discrepancy. Identical to
    /// the gamma-scale quadratic form in `james_stein`: with
    /// v = S^{-1/2} h_diff,
    /// v' J v = (K h_diff)' A (K h_diff) = (gamma_cond - gamma_I)' A (...).
    pub fn weight(&self, h_diff: &DVector<f64>) -> (f64, ShrinkageFallback) {
        let v = &self.inv_sqrt_s * h_diff;
        let denominator = v.dot(&(self.j_matrix.as_matrix() * &v));
        weight_rule(self.tau_star, denominator)
    }
}

/// Compute the frozen weight pieces for a conditional result under loss A.
pub fn freeze(cond: &ConditionalResult, a: &SymMatrix) -> Result<FrozenWeights> {
    let q = cond.gamma_internal.len();
    if a.dim() != q {
        return Err(Error::Schema(format!(
            "loss matrix is {}x{}, internal model has {q} parameters",
            a.dim(),
            a.dim()
        )));
    }
    let m = numerics::inv_sqrt(&cond.sigma_h_theta)?;
    let c = &cond.sigma_h_cross;
    let g = c.transpose() * a.as_matrix() * c;
    let j_matrix = SymMatrix::symmetrize(m.as_matrix() * g * m.as_matrix());
    let trace_j = j_matrix.as_matrix().trace();
    let norm_j = numerics::spectral_norm(&j_matrix)?;
    let tau_star = trace_j - 2.0 * norm_j;
    Ok(FrozenWeights { inv_sqrt_s: m.into_matrix(), j_matrix, trace_j, norm_j, tau_star })
}

#[derive(Clone, Debug)]
pub struct ShrinkageResult {
    pub gamma_js: DVector<f64>,
    /// Weight on the conditional estimate.
    pub weight: f64,
    pub tau_star: f64,
    pub trace_j: f64,
    pub norm_j: f64,
    /// Effective dimension tr(J) / ||J||; 0 when J vanishes.
    pub d_ratio: f64,
    /// Observed disagreement (gamma_cond - gamma_I)' A (gamma_cond - gamma_I).
    pub denominator: f64,
    pub fallback: ShrinkageFallback,
    pub j_matrix: SymMatrix,
}

/// Shrink the conditional estimate toward the internal one under loss A.
pub fn james_stein(cond: &ConditionalResult, a: &SymMatrix) -> Result<ShrinkageResult> {
    let frozen = freeze(cond, a)?;
    let diff = &cond.gamma_cond - &cond.gamma_internal;
    let denominator = diff.dot(&(a.as_matrix() * &diff));
    let (weight, fallback) = weight_rule(frozen.tau_star, denominator);
    let gamma_js = weight * &cond.gamma_cond + (1.0 - weight) * &cond.gamma_internal;
    let d_ratio = if frozen.norm_j > 0.0 { frozen.trace_j / frozen.norm_j } else { 0.0 };
    Ok(ShrinkageResult {
        gamma_js,
        weight,
        tau_star: frozen.tau_star,
        trace_j: frozen.trace_j,
        norm_j: frozen.norm_j,
        d_ratio,
        denominator,
        fallback,
        j_matrix: frozen.j_matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Conditional result with prescribed covariance pieces: K = C S^{-1}
    /// and gamma_cond = gamma_I - K h_diff, exactly as the fusion step
    /// would produce them.
    fn cond_fixture(
        c: DMatrix<f64>,
        s: SymMatrix,
        gamma_internal: DVector<f64>,
        h_diff: DVector<f64>,
    ) -> ConditionalResult {
        let s_inv = s.as_matrix().clone().try_inverse().expect("SPD fixture");
        let k = &c * s_inv;
        let gamma_cond = &gamma_internal - &k * &h_diff;
        let gain = SymMatrix::symmetrize(&k * c.transpose());
        let q = gamma_internal.len();
        let cov_internal = SymMatrix::identity(q);
        let cov_cond =
            SymMatrix::symmetrize(cov_internal.as_matrix() - gain.as_matrix());
        ConditionalResult {
            gamma_internal,
            cov_internal,
            gamma_cond,
            cov_cond,
            sigma_h_theta: s,
            sigma_h_cross: c,
            h_diff,
            gain,
            certified: true,
        }
    }

    fn diag_fixture() -> ConditionalResult {
        // J = diag(1.44, 1.0, 0.64): trace 3.08, norm 1.44, tau_star 0.2.
        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![1.2, 1.0, 0.8]));
        let s = SymMatrix::identity(3);
        cond_fixture(
            c,
            s,
            DVector::from_vec(vec![1.0, -2.0, 0.5]),
            DVector::from_vec(vec![0.5, 0.5, 0.5]),
        )
    }

    #[test]
    fn weight_matches_hand_computed_diagonal_case() {
        let cond = diag_fixture();
        let out = james_stein(&cond, &SymMatrix::identity(3)).unwrap();
        let tau = (1.44 + 1.0 + 0.64) - 2.0 * 1.44;
        let denom = 0.6f64.powi(2) + 0.5f64.powi(2) + 0.4f64.powi(2);
        assert_relative_eq!(out.tau_star, tau, epsilon = 1e-12);
        assert_relative_eq!(out.denominator, denom, epsilon = 1e-12);
        assert_relative_eq!(out.weight, tau / denom, epsilon = 1e-12);
        assert_relative_eq!(out.d_ratio, 3.08 / 1.44, epsilon = 1e-12);
        assert_eq!(out.fallback, ShrinkageFallback::None);
    }

    #[test]
    fn js_estimate_lies_on_the_segment() {
        let cond = diag_fixture();
        let out = james_stein(&cond, &SymMatrix::identity(3)).unwrap();
        assert!(out.weight > 0.0 && out.weight < 1.0);
        for i in 0..3 {
            let int = cond.gamma_internal[i];
            let full = cond.gamma_cond[i];
            let js = out.gamma_js[i];
            assert!((js - int) * (full - int) >= 0.0);
            assert!((js - int).abs() <= (full - int).abs() + 1e-15);
            assert_relative_eq!(
                js,
                out.weight * full + (1.0 - out.weight) * int,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn weight_caps_at_one_for_tiny_disagreement() {
        let mut cond = diag_fixture();
        cond.h_diff *= 1e-4;
        let k_h = cond.sigma_h_cross.clone() * &cond.h_diff;
        cond.gamma_cond = &cond.gamma_internal - k_h;
        let out = james_stein(&cond, &SymMatrix::identity(3)).unwrap();
        assert_eq!(out.weight, 1.0);
        assert_eq!(out.fallback, ShrinkageFallback::None);
        for i in 0..3 {
            assert_relative_eq!(out.gamma_js[i], cond.gamma_cond[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn weight_invariant_to_loss_rescaling() {
        let cond = diag_fixture();
        let a = SymMatrix::identity(3);
        let scaled = a.scale(17.0);
        let w1 = james_stein(&cond, &a).unwrap().weight;
        let w2 = james_stein(&cond, &scaled).unwrap().weight;
        assert_relative_eq!(w1, w2, epsilon = 1e-12);
    }

    #[test]
    fn frozen_h_scale_weight_matches_direct_form() {
        // Non-diagonal C (3 gamma coordinates, 2 transformed ones),
        // correlated S, non-identity loss: the h-scale quadratic form must
        // agree with the gamma-scale one.
        let c = DMatrix::from_row_slice(3, 2, &[1.0, 0.3, -0.4, 0.8, 0.2, -0.1]);
        let s = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 0.5])).unwrap();
        let a = SymMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[2.0, 0.1, 0.0, 0.1, 1.5, -0.2, 0.0, -0.2, 1.0],
        ))
        .unwrap();
        let cond = cond_fixture(
            c,
            s,
            DVector::from_vec(vec![0.4, -0.2, 1.1]),
            DVector::from_vec(vec![0.3, -0.6]),
        );
        let direct = james_stein(&cond, &a).unwrap();
        let frozen = freeze(&cond, &a).unwrap();
        let (w, fb) = frozen.weight(&cond.h_diff);
        assert_relative_eq!(w, direct.weight, epsilon = 1e-10);
        assert_eq!(fb, direct.fallback);
    }

    #[test]
    fn rank_one_gain_disables_shrinkage() {
        // One transformed coordinate: J has rank 1, so tr(J) = ||J|| and
        // tau_star < 0 whenever the gain is nonzero.
        let c = DMatrix::from_row_slice(3, 1, &[1.0, 0.5, -0.25]);
        let s = SymMatrix::identity(1);
        let cond = cond_fixture(
            c,
            s,
            DVector::from_vec(vec![1.0, 1.0, 1.0]),
            DVector::from_vec(vec![0.7]),
        );
        let out = james_stein(&cond, &SymMatrix::identity(3)).unwrap();
        assert_eq!(out.fallback, ShrinkageFallback::DLe2);
        assert_eq!(out.weight, 0.0);
        assert!(out.d_ratio <= 2.0);
        assert_eq!(out.gamma_js, cond.gamma_internal);
    }

    #[test]
    fn zero_disagreement_keeps_internal() {
        let c = DMatrix::identity(3, 3);
        let s = SymMatrix::identity(3);
        let cond = cond_fixture(
            c,
            s,
            DVector::from_vec(vec![0.3, 0.6, -0.9]),
            DVector::zeros(3),
        );
        let out = james_stein(&cond, &SymMatrix::identity(3)).unwrap();
        assert!(out.tau_star > 0.0);
        assert_eq!(out.fallback, ShrinkageFallback::ZeroDenominator);
        assert_eq!(out.weight, 0.0);
        assert_eq!(out.gamma_js, cond.gamma_internal);
    }

    #[test]
    fn vanishing_j_reports_zero_ratio() {
        let cond = cond_fixture(
            DMatrix::zeros(3, 2),
            SymMatrix::identity(2),
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
            DVector::from_vec(vec![0.1, 0.1]),
        );
        let out = james_stein(&cond, &SymMatrix::identity(3)).unwrap();
        assert_eq!(out.d_ratio, 0.0);
        assert_eq!(out.weight, 0.0);
        assert_eq!(out.fallback, ShrinkageFallback::DLe2);
    }

    #[test]
    fn growing_disagreement_drives_weight_to_zero() {
        let base = diag_fixture();
        let frozen = freeze(&base, &SymMatrix::identity(3)).unwrap();
        let (w1, _) = frozen.weight(&base.h_diff);
        let (w2, _) = frozen.weight(&(&base.h_diff * 1e3));
        assert!(w2 < w1 * 1e-5);
        assert!(w2 > 0.0);
    }

    #[test]
    fn loss_spec_parse_rejects_bad_input() {
        assert!(WeightMatrixSpec::parse("pmse_subset", vec![]).is_err());
        assert!(WeightMatrixSpec::parse("mahalanobis", vec![]).is_err());
        assert_eq!(
            WeightMatrixSpec::parse("inv_cov", vec![]).unwrap(),
            WeightMatrixSpec::InverseCovariance
        );
    }
}
