//! The conditional (fusion) estimator.
//!
//! Given a joint internal fit of the external-model parameters theta and the
//! internal-model parameters gamma, plus the external study's summary
//! (theta estimate and its covariance on the estimate scale), the internal
//! gamma estimate is corrected by its covariance-implied regression onto the
//! transformed discrepancy h(theta_internal) - h(theta_external):
//!
//!   gamma_cond = gamma_I - K (h(theta_I) - h(theta_E)),
//!   K = Cov(gamma_I, h(theta_I)) [Cov(h(theta_I)) + Cov(h(theta_E))]^{-1}.
//!
//! Because the two studies are independent, the combined transformed
//! covariance is the sum of the delta-method covariances from each side,
//! each evaluated at its own estimate. Everything here works on the
//! estimate scale, so no sample-size ratio appears explicitly: the relative
//! precision of the external study enters through the magnitude of its
//! covariance. The conditional covariance is the internal one minus a
//! positive semidefinite gain, so fusing never inflates the asymptotic
//! variance.

use nalgebra::{DMatrix, DVector};

use crate::equations::FamilyId;
use crate::error::{Error, Result};
use crate::numerics::{reg_solve, SymMatrix};
use crate::sandwich::{FittedModel, JointFit};
use crate::transform::{self, Transform, TransformSpec};

/// Tolerated relative negativity in the external covariance spectrum.
const PSD_RTOL: f64 = 1e-8;

/// What an external study publishes: its model family, parameter estimate,
/// estimate-scale covariance, sample size, and the transform under which
/// its parameters are comparable to an internal refit.
#[derive(Clone, Debug)]
pub struct ExternalSummary {
    pub family: FamilyId,
    pub n: usize,
    pub theta: DVector<f64>,
    pub cov: SymMatrix,
    pub transform: TransformSpec,
}

impl ExternalSummary {
    pub fn from_fit(model: &FittedModel, transform: TransformSpec) -> Self {
        ExternalSummary {
            family: model.family.id,
            n: model.n,
            theta: model.params.clone(),
            cov: model.sigma_estimate.clone(),
            transform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Schema("external summary has n = 0".into()));
        }
        if self.theta.is_empty() {
            return Err(Error::Schema("external summary has an empty parameter vector".into()));
        }
        if self.cov.dim() != self.theta.len() {
            return Err(Error::Schema(format!(
                "external covariance is {}x{} but theta has {} coordinates",
                self.cov.dim(),
                self.cov.dim(),
                self.theta.len()
            )));
        }
        let min = self.cov.min_eigenvalue()?;
        let scale = crate::numerics::spectral_norm(&self.cov)?.max(1e-300);
        if min < -PSD_RTOL * scale {
            return Err(Error::Schema(format!(
                "external covariance has eigenvalue {min:.3e}, not positive semidefinite"
            )));
        }
        Ok(())
    }
}

/// Output of the conditional step. Covariances are on the estimate scale.
#[derive(Clone, Debug)]
pub struct ConditionalResult {
    pub gamma_internal: DVector<f64>,
    pub cov_internal: SymMatrix,
    pub gamma_cond: DVector<f64>,
    pub cov_cond: SymMatrix,
    /// Combined covariance of the transformed discrepancy, both studies.
    pub sigma_h_theta: SymMatrix,
    /// Cov(gamma_I, h(theta_I)): gamma rows, transformed-theta columns.
    pub sigma_h_cross: DMatrix<f64>,
    /// h(theta_internal) - h(theta_external).
    pub h_diff: DVector<f64>,
    /// K Cov(h)^... the covariance reduction cov_internal - cov_cond.
    pub gain: SymMatrix,
    /// No linear solve anywhere in the pipeline needed a ridge fallback.
    pub certified: bool,
}

/// Conditional estimate using the transform declared in the summary.
pub fn conditional_estimate(joint: &JointFit, ext: &ExternalSummary) -> Result<ConditionalResult> {
    let t = transform::build(&ext.transform, joint.theta_dim())?;
    conditional_estimate_with(joint, ext, t.as_ref())
}

/// Conditional estimate under an explicit transform object (entry point for
/// custom transforms; the summary's declared transform is ignored).
pub fn conditional_estimate_with(
    joint: &JointFit,
    ext: &ExternalSummary,
    t: &dyn Transform,
) -> Result<ConditionalResult> {
    ext.validate()?;
    if ext.family != joint.theta.family.id {
        return Err(Error::Schema(format!(
            "external summary family {} does not match internal theta-model family {}",
            ext.family.name(),
            joint.theta.family.id.name()
        )));
    }
    let p = joint.theta_dim();
    if ext.theta.len() != p {
        return Err(Error::Schema(format!(
            "external summary has {} parameters, internal theta model has {p}",
            ext.theta.len()
        )));
    }
    if t.input_dim() != p {
        return Err(Error::Schema(format!(
            "transform expects {} coordinates, theta model has {p}",
            t.input_dim()
        )));
    }

    let theta_int = &joint.theta.params;
    let h_int = t.apply(theta_int)?;
    let h_ext = t.apply(&ext.theta)?;
    let grad_int = t.gradient(theta_int)?;
    let grad_ext = t.gradient(&ext.theta)?;
    let h_diff = h_int - h_ext;

    let cov_theta_int = joint.theta.sigma_estimate.as_matrix();
    let sigma_h_theta = SymMatrix::symmetrize(
        grad_ext.transpose() * ext.cov.as_matrix() * &grad_ext
            + grad_int.transpose() * cov_theta_int * &grad_int,
    );
    // Cov(gamma_I, theta_I) is the transpose of the joint fit's theta-row
    // cross block.
    let cross_gt = joint.cross_estimate().transpose();
    let sigma_h_cross = cross_gt * &grad_int;

    let solved = reg_solve(&sigma_h_theta, &sigma_h_cross.transpose(), 0.0)?;
    let k = solved.solution.transpose();
    let gamma_internal = joint.gamma.params.clone();
    let gamma_cond = &gamma_internal - &k * &h_diff;
    let gain = SymMatrix::symmetrize(&k * sigma_h_cross.transpose());
    let cov_internal = joint.gamma.sigma_estimate.clone();
    let cov_cond =
        SymMatrix::symmetrize(cov_internal.as_matrix() - gain.as_matrix());
    Ok(ConditionalResult {
        gamma_internal,
        cov_internal,
        gamma_cond,
        cov_cond,
        sigma_h_theta,
        sigma_h_cross,
        h_diff,
        gain,
        certified: !joint.ridge_used && !solved.ridge_used,
    })
}

/// Closed form for the stacked secondary-endpoint case: both outcomes
/// regressed on one shared design with homoskedastic errors of standard
/// deviations sigma1 (primary) and sigma2 (secondary) and residual
/// correlation rho. The conditional estimator reduces coordinate-wise to
///
///   gamma_cond = gamma_I + w rho (sigma1 / sigma2) (theta_E - theta_I),
///   w = n_E / (n_I + n_E).
pub fn secondary_endpoint_closed_form(
    rho: f64,
    sigma1: f64,
    sigma2: f64,
    n_internal: usize,
    n_external: usize,
    gamma_internal: &DVector<f64>,
    theta_diff: &DVector<f64>,
) -> Result<DVector<f64>> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("rho must lie in [-1, 1], got {rho}")));
    }
    if sigma1 <= 0.0 || sigma2 <= 0.0 {
        return Err(Error::Config("sigma1 and sigma2 must be positive".into()));
    }
    if n_internal == 0 || n_external == 0 {
        return Err(Error::Config("sample sizes must be positive".into()));
    }
    let w = n_external as f64 / (n_internal as f64 + n_external as f64);
    Ok(gamma_internal + w * rho * (sigma1 / sigma2) * theta_diff)
}
