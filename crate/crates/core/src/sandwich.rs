//! Sandwich covariance estimation for solved estimating equations, single
//! and stacked.
//!
//! For a solution b of one family, the per-observation covariance is
//! Q^{-1} W Q^{-T} with Q the weighted mean score Jacobian and W the
//! weighted mean score outer product; dividing by n gives the estimate-scale
//! covariance. Stacking two families solved on the same rows adds one
//! off-diagonal block, Q_t^{-1} W_tg Q_g^{-T}, built from the cross outer
//! product of the two score matrices. The diagonal blocks of a joint fit are
//! copied from the single-model fits unchanged, so marginal and joint
//! answers can never drift apart.

use nalgebra::{DMatrix, DVector};

use crate::equations::{registry, Dataset, FamilyId, FamilySpec, OutcomeRole};
use crate::error::{Error, Result};
use crate::numerics::{solve_square, SymMatrix};
use crate::zsolve::{self, SolveOptions, SolveReport};

/// One solved family with its sandwich covariance.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub family: FamilySpec,
    pub params: DVector<f64>,
    /// Weighted mean score Jacobian at the solution.
    pub q_hat: DMatrix<f64>,
    /// Weighted mean score outer product at the solution.
    pub w_hat: SymMatrix,
    /// Sandwich covariance of sqrt(n)-scaled estimation error.
    pub sigma_per_obs: SymMatrix,
    /// sigma_per_obs / n: covariance of the estimate itself.
    pub sigma_estimate: SymMatrix,
    pub n: usize,
    /// Some linear solve on the way here fell back to a ridge.
    pub ridge_used: bool,
}

/// Joint fit of the external-model equations (theta) and the internal-model
/// equations (gamma) on the same rows.
#[derive(Clone, Debug)]
pub struct JointFit {
    pub theta: FittedModel,
    pub gamma: FittedModel,
    /// Per-observation Cov(theta_hat, gamma_hat) block, theta rows by gamma
    /// columns.
    pub cross_per_obs: DMatrix<f64>,
    /// Full (p + q) estimate-scale covariance, theta block first.
    pub joint_sigma_estimate: SymMatrix,
    pub ridge_used: bool,
}

impl JointFit {
    pub fn theta_dim(&self) -> usize {
        self.theta.params.len()
    }

    pub fn gamma_dim(&self) -> usize {
        self.gamma.params.len()
    }

    /// Estimate-scale Cov(theta_hat, gamma_hat).
    pub fn cross_estimate(&self) -> DMatrix<f64> {
        &self.cross_per_obs / (self.theta.n as f64)
    }
}

fn sandwich_from_parts(
    q_hat: &DMatrix<f64>,
    w_hat: &SymMatrix,
    n: usize,
) -> Result<(SymMatrix, SymMatrix, bool)> {
    let inner = solve_square(q_hat, w_hat.as_matrix())?;
    let outer = solve_square(q_hat, &inner.solution.transpose())?;
    let per_obs = SymMatrix::symmetrize(outer.solution.transpose());
    let estimate = per_obs.scale(1.0 / n as f64);
    Ok((per_obs, estimate, inner.ridge_used || outer.ridge_used))
}

/// Sandwich covariance at a converged solve.
pub fn sandwich_fit(spec: &FamilySpec, data: &Dataset, solved: &SolveReport) -> Result<FittedModel> {
    if !solved.converged {
        return Err(Error::Schema("sandwich_fit requires a converged solve report".into()));
    }
    let eq = registry::build(spec)?;
    eq.validate(data)?;
    if solved.params.len() != eq.param_dim() {
        return Err(Error::Schema(format!(
            "solve report has {} parameters, family {} expects {}",
            solved.params.len(),
            spec.id.name(),
            eq.param_dim()
        )));
    }
    let n = data.n();
    let scores = eq.scores(data, &solved.params)?;
    let total = data.total_weight();
    let mut sw = scores.values.clone();
    for i in 0..n {
        let w = data.weights()[i];
        for j in 0..sw.ncols() {
            sw[(i, j)] *= w;
        }
    }
    let w_hat = SymMatrix::symmetrize(sw.transpose() * &scores.values / total);
    let q_hat = eq.mean_jacobian(data, &solved.params)?;
    let (sigma_per_obs, sigma_estimate, ridge) = sandwich_from_parts(&q_hat, &w_hat, n)?;
    Ok(FittedModel {
        family: spec.clone(),
        params: solved.params.clone(),
        q_hat,
        w_hat,
        sigma_per_obs,
        sigma_estimate,
        n,
        ridge_used: ridge || solved.ridge_used,
    })
}

/// Stack two fitted models solved on the same rows into a joint covariance.
/// Computes only the cross block; the diagonal blocks are taken from the
/// inputs bit for bit.
pub fn joint_sandwich(theta: &FittedModel, gamma: &FittedModel, data: &Dataset) -> Result<JointFit> {
    let n = data.n();
    if theta.n != n || gamma.n != n {
        return Err(Error::Schema(format!(
            "joint_sandwich row mismatch: theta fit n = {}, gamma fit n = {}, data n = {n}",
            theta.n, gamma.n
        )));
    }
    let eq_t = registry::build(&theta.family)?;
    let eq_g = registry::build(&gamma.family)?;
    let s_t = eq_t.scores(data, &theta.params)?.values;
    let s_g = eq_g.scores(data, &gamma.params)?.values;
    let total = data.total_weight();
    let mut s_tw = s_t;
    for i in 0..n {
        let w = data.weights()[i];
        for j in 0..s_tw.ncols() {
            s_tw[(i, j)] *= w;
        }
    }
    let w_cross = s_tw.transpose() * &s_g / total;
    // theta-side: Q_t^{-1} W_tg; gamma-side applied to the transpose.
    let left = solve_square(&theta.q_hat, &w_cross)?;
    let right = solve_square(&gamma.q_hat, &left.solution.transpose())?;
    let cross_per_obs = right.solution.transpose();

    let p = theta.params.len();
    let q = gamma.params.len();
    let mut joint = DMatrix::zeros(p + q, p + q);
    joint.view_mut((0, 0), (p, p)).copy_from(theta.sigma_estimate.as_matrix());
    joint.view_mut((p, p), (q, q)).copy_from(gamma.sigma_estimate.as_matrix());
    let cross_est = &cross_per_obs / (n as f64);
    joint.view_mut((0, p), (p, q)).copy_from(&cross_est);
    joint.view_mut((p, 0), (q, p)).copy_from(&cross_est.transpose());
    Ok(JointFit {
        theta: theta.clone(),
        gamma: gamma.clone(),
        cross_per_obs,
        joint_sigma_estimate: SymMatrix::symmetrize(joint),
        ridge_used: theta.ridge_used
            || gamma.ridge_used
            || left.ridge_used
            || right.ridge_used,
    })
}

/// Split a fitted surrogate stack into a JointFit: the primary-outcome
/// block is the internal target (gamma), the secondary-outcome block is the
/// external-model side (theta). All blocks are sliced from the stacked
/// sandwich, so no re-estimation happens here.
pub fn split_surrogate(model: &FittedModel) -> Result<JointFit> {
    if model.family.id != FamilyId::SurrogateStack {
        return Err(Error::Schema(format!(
            "split_surrogate requires a surrogate_stack fit, got {}",
            model.family.id.name()
        )));
    }
    let p = model.params.len() / 2;
    let slice_model = |offset: usize, outcome: OutcomeRole| -> FittedModel {
        let spec = FamilySpec {
            id: FamilyId::Linear,
            outcome,
            design: model.family.design.clone(),
            control: None,
            effect: None,
        };
        let take = |m: &DMatrix<f64>| m.view((offset, offset), (p, p)).into_owned();
        FittedModel {
            family: spec,
            params: model.params.rows(offset, p).into_owned(),
            q_hat: take(&model.q_hat),
            w_hat: SymMatrix::symmetrize(take(model.w_hat.as_matrix())),
            sigma_per_obs: SymMatrix::symmetrize(take(model.sigma_per_obs.as_matrix())),
            sigma_estimate: SymMatrix::symmetrize(take(model.sigma_estimate.as_matrix())),
            n: model.n,
            ridge_used: model.ridge_used,
        }
    };
    let gamma = slice_model(0, OutcomeRole::Primary);
    let theta = slice_model(p, OutcomeRole::Secondary);
    // stacked order is [gamma theta]; the joint order is [theta gamma].
    let cross_per_obs = model.sigma_per_obs.as_matrix().view((p, 0), (p, p)).into_owned();
    let mut joint = DMatrix::zeros(2 * p, 2 * p);
    let est = model.sigma_estimate.as_matrix();
    joint.view_mut((0, 0), (p, p)).copy_from(&est.view((p, p), (p, p)));
    joint.view_mut((0, p), (p, p)).copy_from(&est.view((p, 0), (p, p)));
    joint.view_mut((p, 0), (p, p)).copy_from(&est.view((0, p), (p, p)));
    joint.view_mut((p, p), (p, p)).copy_from(&est.view((0, 0), (p, p)));
    Ok(JointFit {
        theta,
        gamma,
        cross_per_obs,
        joint_sigma_estimate: SymMatrix::symmetrize(joint),
        ridge_used: model.ridge_used,
    })
}

/// How the theta and gamma equations are solved on internal data: two
/// separate families on the same rows, or one stacked surrogate family
/// split afterwards.
#[derive(Clone, Debug)]
pub enum ModelPair {
    Separate { theta: FamilySpec, gamma: FamilySpec },
    Stacked { spec: FamilySpec },
}

impl ModelPair {
    /// Solve and assemble the joint sandwich. `warm` carries starting points
    /// for (theta, gamma) solves, used by bootstrap replicates.
    pub fn fit(
        &self,
        data: &Dataset,
        warm: Option<(&DVector<f64>, &DVector<f64>)>,
    ) -> Result<JointFit> {
        match self {
            ModelPair::Separate { theta, gamma } => {
                let mut opts_t = SolveOptions::default();
                let mut opts_g = SolveOptions::default();
                if let Some((wt, wg)) = warm {
                    opts_t.init = Some(wt.clone());
                    opts_g.init = Some(wg.clone());
                }
                let sol_t = zsolve::solve(theta, data, &opts_t)?;
                let sol_g = zsolve::solve(gamma, data, &opts_g)?;
                let fit_t = sandwich_fit(theta, data, &sol_t)?;
                let fit_g = sandwich_fit(gamma, data, &sol_g)?;
                joint_sandwich(&fit_t, &fit_g, data)
            }
            ModelPair::Stacked { spec } => {
                let mut opts = SolveOptions::default();
                if let Some((wt, wg)) = warm {
                    let mut init = DVector::zeros(wt.len() + wg.len());
                    init.rows_mut(0, wg.len()).copy_from(wg);
                    init.rows_mut(wg.len(), wt.len()).copy_from(wt);
                    opts.init = Some(init);
                }
                let sol = zsolve::solve(spec, data, &opts)?;
                let fit = sandwich_fit(spec, data, &sol)?;
                split_surrogate(&fit)
            }
        }
    }
}
