//! The built-in estimating-equation families.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::{Dataset, EstimatingEquation, FamilyId, FeatureMap, OutcomeRole, ScoreMatrix};

/// Linear predictors are clamped to this magnitude inside exp/expit so
/// scores stay finite on wild iterates. A converged solution must have zero
/// clamped rows; otherwise the solver reports non-convergence (separation).
pub const LP_CLAMP: f64 = 30.0;

fn check_map(data: &Dataset, map: &FeatureMap, what: &str) -> Result<()> {
    if map.is_empty() {
        return Err(Error::Schema(format!("{what} design map is empty")));
    }
    for f in &map.0 {
        match *f {
            super::Feature::X(j) => {
                if j >= data.x().ncols() {
                    return Err(Error::Schema(format!(
                        "{what} design references x column {j}, dataset has {}",
                        data.x().ncols()
                    )));
                }
            }
            super::Feature::Z(j) => {
                let w = data.z().map_or(0, |z| z.ncols());
                if j >= w {
                    return Err(Error::Schema(format!(
                        "{what} design references z column {j}, dataset has {w}"
                    )));
                }
            }
        }
    }
    Ok(())
}

fn outcome_vector<'a>(data: &'a Dataset, role: OutcomeRole) -> Result<&'a DVector<f64>> {
    match role {
        OutcomeRole::Primary => Ok(data.y()),
        OutcomeRole::Secondary => data
            .y2()
            .ok_or_else(|| Error::Schema("family regresses y2 but dataset has no y2 column".into())),
    }
}

fn params_len(params: &DVector<f64>, dim: usize, family: FamilyId) -> Result<()> {
    if params.len() != dim {
        return Err(Error::Schema(format!(
            "family {} expects {dim} parameters, got {}",
            family.name(),
            params.len()
        )));
    }
    Ok(())
}

/// Rows of `m` scaled by the matching entry of `s`.
fn scale_rows(m: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..out.nrows() {
        let v = s[i];
        for j in 0..out.ncols() {
            out[(i, j)] *= v;
        }
    }
    out
}

/// a' diag(w) b without materializing the diagonal.
fn weighted_cross(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    scale_rows(a, w).transpose() * b
}

#[derive(Clone, Copy, Debug)]
enum Link {
    Identity,
    Logit,
    Log,
}

impl Link {
    /// (mean, derivative, clamped) at a linear predictor value.
    fn mu_dmu(&self, lp: f64) -> (f64, f64, bool) {
        match self {
            Link::Identity => (lp, 1.0, false),
            Link::Logit => {
                let clamped = lp.abs() > LP_CLAMP;
                let l = lp.clamp(-LP_CLAMP, LP_CLAMP);
                let m = if l >= 0.0 { 1.0 / (1.0 + (-l).exp()) } else { l.exp() / (1.0 + l.exp()) };
                (m, m * (1.0 - m), clamped)
            }
            Link::Log => {
                let clamped = lp.abs() > LP_CLAMP;
                let m = lp.clamp(-LP_CLAMP, LP_CLAMP).exp();
                (m, m, clamped)
            }
        }
    }
}

/// linear / glm_logistic / glm_poisson: score rows d_i (y_i - mu(d_i' b)).
pub(super) struct SingleOutcome {
    pub(super) id: FamilyId,
    pub(super) outcome: OutcomeRole,
    pub(super) map: FeatureMap,
    link: Link,
}

impl SingleOutcome {
    pub(super) fn new(id: FamilyId, outcome: OutcomeRole, map: FeatureMap) -> Self {
        let link = match id {
            FamilyId::Linear => Link::Identity,
            FamilyId::GlmLogistic => Link::Logit,
            FamilyId::GlmPoisson => Link::Log,
            other => unreachable!("SingleOutcome built with {other:?}"),
        };
        SingleOutcome { id, outcome, map, link }
    }

    /// (design, mu, dmu, clamped count)
    fn evaluate(
        &self,
        data: &Dataset,
        params: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>, usize)> {
        params_len(params, self.map.len(), self.id)?;
        let d = data.design(&self.map)?;
        let lp = &d * params;
        let mut mu = DVector::zeros(lp.len());
        let mut dmu = DVector::zeros(lp.len());
        let mut clamped = 0;
        for i in 0..lp.len() {
            let (m, dm, c) = self.link.mu_dmu(lp[i]);
            mu[i] = m;
            dmu[i] = dm;
            clamped += c as usize;
        }
        Ok((d, mu, dmu, clamped))
    }
}

impl EstimatingEquation for SingleOutcome {
    fn id(&self) -> FamilyId {
        self.id
    }

    fn param_dim(&self) -> usize {
        self.map.len()
    }

    fn validate(&self, data: &Dataset) -> Result<()> {
        check_map(data, &self.map, self.id.name())?;
        outcome_vector(data, self.outcome)?;
        if matches!(self.id, FamilyId::GlmPoisson) {
            let y = outcome_vector(data, self.outcome)?;
            if y.iter().any(|v| *v < 0.0) {
                return Err(Error::Schema("glm_poisson outcome must be nonnegative".into()));
            }
        }
        Ok(())
    }

    fn scores(&self, data: &Dataset, params: &DVector<f64>) -> Result<ScoreMatrix> {
        let (d, mu, _, clamped_rows) = self.evaluate(data, params)?;
        let y = outcome_vector(data, self.outcome)?;
        let resid = y - mu;
        Ok(ScoreMatrix { values: scale_rows(&d, &resid), clamped_rows })
    }

    fn mean_jacobian(&self, data: &Dataset, params: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (d, _, dmu, _) = self.evaluate(data, params)?;
        let w = data.weights().component_mul(&dmu);
        Ok(-weighted_cross(&d, &d, &w) / data.total_weight())
    }

    fn jacobians(&self, data: &Dataset, params: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        let (d, _, dmu, _) = self.evaluate(data, params)?;
        let mut out = Vec::with_capacity(d.nrows());
        for i in 0..d.nrows() {
            let row = d.row(i).transpose();
            out.push(-dmu[i] * &row * row.transpose());
        }
        Ok(out)
    }

    fn design_matrix(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        data.design(&self.map)
    }

    fn mean_response(&self, data: &Dataset, params: &DVector<f64>) -> Result<DVector<f64>> {
        let (_, mu, _, _) = self.evaluate(data, params)?;
        Ok(mu)
    }
}

/// Weighted centered least squares for conditional average treatment
/// effects: score rows u_i (y_i - u_i' b) with u_i = [g_i, (a_i - p_i) f_i].
/// Centering by the propensity makes the control block orthogonal to the
/// effect block in population, so the control-model fit transports across
/// studies with different effect-modifier sets.
pub(super) struct CenteredTreatment {
    pub(super) control: FeatureMap,
    pub(super) effect: FeatureMap,
}

impl CenteredTreatment {
    fn score_design(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        let g = data.design(&self.control)?;
        let f = data.design(&self.effect)?;
        let a = data
            .treatment()
            .ok_or_else(|| Error::Schema("wcls_cate requires a treatment column".into()))?;
        let p = data
            .propensity()
            .ok_or_else(|| Error::Schema("wcls_cate requires a propensity column".into()))?;
        let mut u = DMatrix::zeros(data.n(), g.ncols() + f.ncols());
        for i in 0..data.n() {
            let c = a[i] - p[i];
            for j in 0..g.ncols() {
                u[(i, j)] = g[(i, j)];
            }
            for j in 0..f.ncols() {
                u[(i, g.ncols() + j)] = c * f[(i, j)];
            }
        }
        Ok(u)
    }
}

impl EstimatingEquation for CenteredTreatment {
    fn id(&self) -> FamilyId {
        FamilyId::WclsCate
    }

    fn param_dim(&self) -> usize {
        self.control.len() + self.effect.len()
    }

    fn validate(&self, data: &Dataset) -> Result<()> {
        check_map(data, &self.control, "wcls_cate control")?;
        check_map(data, &self.effect, "wcls_cate effect")?;
        if data.treatment().is_none() {
            return Err(Error::Schema("wcls_cate requires a treatment column".into()));
        }
        if data.propensity().is_none() {
            return Err(Error::Schema("wcls_cate requires a propensity column".into()));
        }
        Ok(())
    }

    fn scores(&self, data: &Dataset, params: &DVector<f64>) -> Result<ScoreMatrix> {
        params_len(params, self.param_dim(), self.id())?;
        let u = self.score_design(data)?;
        let resid = data.y() - &u * params;
        Ok(ScoreMatrix { values: scale_rows(&u, &resid), clamped_rows: 0 })
    }

    fn mean_jacobian(&self, data: &Dataset, params: &DVector<f64>) -> Result<DMatrix<f64>> {
        params_len(params, self.param_dim(), self.id())?;
        let u = self.score_design(data)?;
        Ok(-weighted_cross(&u, &u, data.weights()) / data.total_weight())
    }

    fn jacobians(&self, data: &Dataset, params: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        params_len(params, self.param_dim(), self.id())?;
        let u = self.score_design(data)?;
        let mut out = Vec::with_capacity(u.nrows());
        for i in 0..u.nrows() {
            let row = u.row(i).transpose();
            out.push(-(&row * row.transpose()));
        }
        Ok(out)
    }

    fn design_matrix(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        self.score_design(data)
    }

    fn prediction_design(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        let g = data.design(&self.control)?;
        let f = data.design(&self.effect)?;
        let mut out = DMatrix::zeros(data.n(), g.ncols() + f.ncols());
        out.view_mut((0, 0), (data.n(), g.ncols())).copy_from(&g);
        out.view_mut((0, g.ncols()), (data.n(), f.ncols())).copy_from(&f);
        Ok(out)
    }

    fn effect_range(&self) -> Option<std::ops::Range<usize>> {
        Some(self.control.len()..self.control.len() + self.effect.len())
    }

    fn mean_response(&self, data: &Dataset, params: &DVector<f64>) -> Result<DVector<f64>> {
        params_len(params, self.param_dim(), self.id())?;
        let u = self.score_design(data)?;
        Ok(&u * params)
    }
}

/// Multiplicative treatment-effect model on a nonnegative outcome:
/// score rows u_i s_i with u_i = [g_i, (a_i - p_i) f_i] and
/// s_i = y_i exp(-a_i f_i' gamma) - exp(g_i' alpha). Centering the effect
/// block at the propensity makes the gamma equations mean zero at the true
/// log relative risk even when the control mean model is wrong.
pub(super) struct LogRelativeRisk {
    pub(super) control: FeatureMap,
    pub(super) effect: FeatureMap,
}

impl LogRelativeRisk {
    /// (U, s, V, clamped) with jacobian rows J_i = -u_i v_i'.
    fn evaluate(
        &self,
        data: &Dataset,
        params: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>, usize)> {
        params_len(params, self.param_dim(), self.id())?;
        let g = data.design(&self.control)?;
        let f = data.design(&self.effect)?;
        let a = data
            .treatment()
            .ok_or_else(|| Error::Schema("log_relative_risk requires a treatment column".into()))?;
        let prop = data
            .propensity()
            .ok_or_else(|| Error::Schema("log_relative_risk requires a propensity column".into()))?;
        let y = data.y();
        let pg = g.ncols();
        let pf = f.ncols();
        let alpha = params.rows(0, pg).into_owned();
        let gamma = params.rows(pg, pf).into_owned();
        let lp_g = &g * alpha;
        let lp_f = &f * gamma;
        let mut u = DMatrix::zeros(data.n(), pg + pf);
        let mut v = DMatrix::zeros(data.n(), pg + pf);
        let mut s = DVector::zeros(data.n());
        let mut clamped = 0;
        for i in 0..data.n() {
            let cg = lp_g[i].abs() > LP_CLAMP;
            let eg = lp_g[i].clamp(-LP_CLAMP, LP_CLAMP).exp();
            let le = a[i] * lp_f[i];
            let cf = le.abs() > LP_CLAMP;
            let ef = (-le.clamp(-LP_CLAMP, LP_CLAMP)).exp();
            clamped += (cg || cf) as usize;
            s[i] = y[i] * ef - eg;
            for j in 0..pg {
                u[(i, j)] = g[(i, j)];
                v[(i, j)] = eg * g[(i, j)];
            }
            for j in 0..pf {
                u[(i, pg + j)] = (a[i] - prop[i]) * f[(i, j)];
                v[(i, pg + j)] = a[i] * y[i] * ef * f[(i, j)];
            }
        }
        Ok((u, s, v, clamped))
    }
}

impl EstimatingEquation for LogRelativeRisk {
    fn id(&self) -> FamilyId {
        FamilyId::LogRelativeRisk
    }

    fn param_dim(&self) -> usize {
        self.control.len() + self.effect.len()
    }

    fn validate(&self, data: &Dataset) -> Result<()> {
        check_map(data, &self.control, "log_relative_risk control")?;
        check_map(data, &self.effect, "log_relative_risk effect")?;
        if data.treatment().is_none() {
            return Err(Error::Schema("log_relative_risk requires a treatment column".into()));
        }
        if data.propensity().is_none() {
            return Err(Error::Schema("log_relative_risk requires a propensity column".into()));
        }
        if data.y().iter().any(|v| *v < 0.0) {
            return Err(Error::Schema("log_relative_risk outcome must be nonnegative".into()));
        }
        Ok(())
    }

    fn scores(&self, data: &Dataset, params: &DVector<f64>) -> Result<ScoreMatrix> {
        let (u, s, _, clamped_rows) = self.evaluate(data, params)?;
        Ok(ScoreMatrix { values: scale_rows(&u, &s), clamped_rows })
    }

    fn mean_jacobian(&self, data: &Dataset, params: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (u, _, v, _) = self.evaluate(data, params)?;
        Ok(-weighted_cross(&u, &v, data.weights()) / data.total_weight())
    }

    fn jacobians(&self, data: &Dataset, params: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        let (u, _, v, _) = self.evaluate(data, params)?;
        let mut out = Vec::with_capacity(u.nrows());
        for i in 0..u.nrows() {
            let ui = u.row(i).transpose();
            let vi = v.row(i).transpose();
            out.push(-(&ui * vi.transpose()));
        }
        Ok(out)
    }

    fn design_matrix(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        let (u, _, _, _) = self.evaluate(data, &DVector::zeros(self.param_dim()))?;
        Ok(u)
    }

    fn prediction_design(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        let g = data.design(&self.control)?;
        let f = data.design(&self.effect)?;
        let mut out = DMatrix::zeros(data.n(), g.ncols() + f.ncols());
        out.view_mut((0, 0), (data.n(), g.ncols())).copy_from(&g);
        out.view_mut((0, g.ncols()), (data.n(), f.ncols())).copy_from(&f);
        Ok(out)
    }

    fn effect_range(&self) -> Option<std::ops::Range<usize>> {
        Some(self.control.len()..self.control.len() + self.effect.len())
    }

    fn mean_response(&self, data: &Dataset, params: &DVector<f64>) -> Result<DVector<f64>> {
        params_len(params, self.param_dim(), self.id())?;
        let g = data.design(&self.control)?;
        let f = data.design(&self.effect)?;
        let a = data
            .treatment()
            .ok_or_else(|| Error::Schema("log_relative_risk requires a treatment column".into()))?;
        let pg = g.ncols();
        let alpha = params.rows(0, pg).into_owned();
        let gamma = params.rows(pg, f.ncols()).into_owned();
        let lp_g = &g * alpha;
        let lp_f = &f * gamma;
        let mut out = DVector::zeros(data.n());
        for i in 0..data.n() {
            out[i] = (lp_g[i] + a[i] * lp_f[i]).clamp(-LP_CLAMP, LP_CLAMP).exp();
        }
        Ok(out)
    }
}

/// Two linear regressions of (y, y2) on one shared design, stacked into a
/// single parameter vector: coordinates [0, p) model y, [p, 2p) model y2.
/// Solving the stack jointly is what exposes the cross-outcome score
/// covariance the fusion step needs.
pub(super) struct SurrogateStack {
    pub(super) map: FeatureMap,
}

impl SurrogateStack {
    fn residuals(
        &self,
        data: &Dataset,
        params: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
        params_len(params, self.param_dim(), self.id())?;
        let d = data.design(&self.map)?;
        let y2 = data
            .y2()
            .ok_or_else(|| Error::Schema("surrogate_stack requires a y2 column".into()))?;
        let p = self.map.len();
        let b1 = params.rows(0, p).into_owned();
        let b2 = params.rows(p, p).into_owned();
        let r1 = data.y() - &d * b1;
        let r2 = y2 - &d * b2;
        Ok((d, r1, r2))
    }
}

impl EstimatingEquation for SurrogateStack {
    fn id(&self) -> FamilyId {
        FamilyId::SurrogateStack
    }

    fn param_dim(&self) -> usize {
        2 * self.map.len()
    }

    fn validate(&self, data: &Dataset) -> Result<()> {
        check_map(data, &self.map, "surrogate_stack")?;
        if data.y2().is_none() {
            return Err(Error::Schema("surrogate_stack requires a y2 column".into()));
        }
        Ok(())
    }

    fn scores(&self, data: &Dataset, params: &DVector<f64>) -> Result<ScoreMatrix> {
        let (d, r1, r2) = self.residuals(data, params)?;
        let p = self.map.len();
        let mut values = DMatrix::zeros(data.n(), 2 * p);
        for i in 0..data.n() {
            for j in 0..p {
                values[(i, j)] = d[(i, j)] * r1[i];
                values[(i, p + j)] = d[(i, j)] * r2[i];
            }
        }
        Ok(ScoreMatrix { values, clamped_rows: 0 })
    }

    fn mean_jacobian(&self, data: &Dataset, params: &DVector<f64>) -> Result<DMatrix<f64>> {
        params_len(params, self.param_dim(), self.id())?;
        let d = data.design(&self.map)?;
        let p = self.map.len();
        let gram = weighted_cross(&d, &d, data.weights()) / data.total_weight();
        let mut out = DMatrix::zeros(2 * p, 2 * p);
        out.view_mut((0, 0), (p, p)).copy_from(&(-&gram));
        out.view_mut((p, p), (p, p)).copy_from(&(-gram));
        Ok(out)
    }

    fn jacobians(&self, data: &Dataset, params: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        params_len(params, self.param_dim(), self.id())?;
        let d = data.design(&self.map)?;
        let p = self.map.len();
        let mut out = Vec::with_capacity(data.n());
        for i in 0..data.n() {
            let row = d.row(i).transpose();
            let block = -(&row * row.transpose());
            let mut j = DMatrix::zeros(2 * p, 2 * p);
            j.view_mut((0, 0), (p, p)).copy_from(&block);
            j.view_mut((p, p), (p, p)).copy_from(&block);
            out.push(j);
        }
        Ok(out)
    }

    fn design_matrix(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        let d = data.design(&self.map)?;
        let p = self.map.len();
        let mut out = DMatrix::zeros(data.n(), 2 * p);
        out.view_mut((0, 0), (data.n(), p)).copy_from(&d);
        out.view_mut((0, p), (data.n(), p)).copy_from(&d);
        Ok(out)
    }

    /// Design of the primary-outcome block; predictions use coordinates
    /// [0, p).
    fn prediction_design(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        data.design(&self.map)
    }

    fn mean_response(&self, data: &Dataset, params: &DVector<f64>) -> Result<DVector<f64>> {
        params_len(params, self.param_dim(), self.id())?;
        let d = data.design(&self.map)?;
        let b1 = params.rows(0, self.map.len()).into_owned();
        Ok(&d * b1)
    }
}
