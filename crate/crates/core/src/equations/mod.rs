//! Observation frames and estimating-equation families.
//!
//! A [`Dataset`] is a columnar frame: shared covariates `x` (the columns an
//! external study also observes), internal-only covariates `z`, one or two
//! outcomes, and optional treatment / propensity / missingness columns. Every
//! row carries a nonnegative weight; solvers and covariance estimators always
//! work with weighted means normalized by the total weight, which is what
//! makes multiplier-bootstrap reweighting a drop-in operation.
//!
//! An estimating-equation family maps parameters to per-observation score
//! rows `psi_i(params)` whose weighted mean is zero at the solution. Families
//! implement [`EstimatingEquation`] and are built by name through
//! [`registry::build`], so configuration files select them at runtime.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

mod families;
pub mod registry;

pub use families::LP_CLAMP;

/// Column reference into a [`Dataset`]: shared block or internal-only block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    X(usize),
    Z(usize),
}

/// Ordered list of dataset columns forming a regression design.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureMap(pub Vec<Feature>);

impl FeatureMap {
    /// The first `p` shared columns, in order.
    pub fn x_block(p: usize) -> Self {
        FeatureMap((0..p).map(Feature::X).collect())
    }

    /// All `p` shared columns followed by all `q` internal-only columns.
    pub fn full_block(p: usize, q: usize) -> Self {
        let mut cols: Vec<Feature> = (0..p).map(Feature::X).collect();
        cols.extend((0..q).map(Feature::Z));
        FeatureMap(cols)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Which outcome column a single-outcome family regresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutcomeRole {
    Primary,
    Secondary,
}

/// Family identifiers, stable across config files and summary files.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyId {
    Linear,
    GlmLogistic,
    GlmPoisson,
    WclsCate,
    LogRelativeRisk,
    SurrogateStack,
}

impl FamilyId {
    pub fn name(&self) -> &'static str {
        match self {
            FamilyId::Linear => "linear",
            FamilyId::GlmLogistic => "glm_logistic",
            FamilyId::GlmPoisson => "glm_poisson",
            FamilyId::WclsCate => "wcls_cate",
            FamilyId::LogRelativeRisk => "log_relative_risk",
            FamilyId::SurrogateStack => "surrogate_stack",
        }
    }

    pub fn parse(name: &str) -> Result<FamilyId> {
        match name {
            "linear" => Ok(FamilyId::Linear),
            "glm_logistic" => Ok(FamilyId::GlmLogistic),
            "glm_poisson" => Ok(FamilyId::GlmPoisson),
            "wcls_cate" => Ok(FamilyId::WclsCate),
            "log_relative_risk" => Ok(FamilyId::LogRelativeRisk),
            "surrogate_stack" => Ok(FamilyId::SurrogateStack),
            other => Err(Error::Config(format!("unknown family {other:?}"))),
        }
    }
}

/// Fully resolved family configuration: identifier plus the column maps the
/// family needs. `design` drives single-design families; treatment-effect
/// families use `control` and `effect` instead and ignore `design`.
#[derive(Clone, Debug)]
pub struct FamilySpec {
    pub id: FamilyId,
    pub outcome: OutcomeRole,
    pub design: FeatureMap,
    pub control: Option<FeatureMap>,
    pub effect: Option<FeatureMap>,
}

impl FamilySpec {
    pub fn linear(design: FeatureMap) -> Self {
        FamilySpec {
            id: FamilyId::Linear,
            outcome: OutcomeRole::Primary,
            design,
            control: None,
            effect: None,
        }
    }

    pub fn logistic(design: FeatureMap) -> Self {
        FamilySpec { id: FamilyId::GlmLogistic, ..FamilySpec::linear(design) }
    }

    pub fn poisson(design: FeatureMap) -> Self {
        FamilySpec { id: FamilyId::GlmPoisson, ..FamilySpec::linear(design) }
    }

    pub fn wcls(control: FeatureMap, effect: FeatureMap) -> Self {
        FamilySpec {
            id: FamilyId::WclsCate,
            outcome: OutcomeRole::Primary,
            design: FeatureMap(Vec::new()),
            control: Some(control),
            effect: Some(effect),
        }
    }

    pub fn log_relative_risk(control: FeatureMap, effect: FeatureMap) -> Self {
        FamilySpec { id: FamilyId::LogRelativeRisk, ..FamilySpec::wcls(control, effect) }
    }

    pub fn surrogate(design: FeatureMap) -> Self {
        FamilySpec { id: FamilyId::SurrogateStack, ..FamilySpec::linear(design) }
    }

    /// Same family regressing the secondary outcome column.
    pub fn with_secondary_outcome(mut self) -> Self {
        self.outcome = OutcomeRole::Secondary;
        self
    }
}

/// Columnar observation frame. Construct with [`Dataset::new`] and the
/// chainable `with_*` adders; every adder validates length and content so a
/// built frame is always internally consistent.
#[derive(Clone, Debug)]
pub struct Dataset {
    y: DVector<f64>,
    y2: Option<DVector<f64>>,
    x: DMatrix<f64>,
    z: Option<DMatrix<f64>>,
    treatment: Option<DVector<f64>>,
    propensity: Option<DVector<f64>>,
    missing: Option<DVector<f64>>,
    weights: DVector<f64>,
}

fn check_finite_vec(name: &str, v: &DVector<f64>) -> Result<()> {
    for (i, val) in v.iter().enumerate() {
        if !val.is_finite() {
            return Err(Error::Schema(format!("column {name:?} has non-finite value at row {i}")));
        }
    }
    Ok(())
}

fn check_finite_mat(name: &str, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Err(Error::Schema(format!(
                    "column block {name:?} has non-finite value at row {i}, col {j}"
                )));
            }
        }
    }
    Ok(())
}

fn check_rows(name: &str, got: usize, expect: usize) -> Result<()> {
    if got != expect {
        return Err(Error::Schema(format!("column {name:?} has {got} rows, dataset has {expect}")));
    }
    Ok(())
}

impl Dataset {
    /// Frame with a primary outcome and shared covariates; unit weights.
    pub fn new(y: DVector<f64>, x: DMatrix<f64>) -> Result<Dataset> {
        if y.is_empty() {
            return Err(Error::Schema("dataset must have at least one row".into()));
        }
        check_rows("x", x.nrows(), y.len())?;
        check_finite_vec("y", &y)?;
        check_finite_mat("x", &x)?;
        let n = y.len();
        Ok(Dataset {
            y,
            y2: None,
            x,
            z: None,
            treatment: None,
            propensity: None,
            missing: None,
            weights: DVector::from_element(n, 1.0),
        })
    }

    pub fn with_y2(mut self, y2: DVector<f64>) -> Result<Dataset> {
        check_rows("y2", y2.len(), self.n())?;
        check_finite_vec("y2", &y2)?;
        self.y2 = Some(y2);
        Ok(self)
    }

    pub fn with_z(mut self, z: DMatrix<f64>) -> Result<Dataset> {
        check_rows("z", z.nrows(), self.n())?;
        check_finite_mat("z", &z)?;
        self.z = Some(z);
        Ok(self)
    }

    pub fn with_treatment(mut self, a: DVector<f64>) -> Result<Dataset> {
        check_rows("treatment", a.len(), self.n())?;
        for (i, v) in a.iter().enumerate() {
            if *v != 0.0 && *v != 1.0 {
                return Err(Error::Schema(format!(
                    "column \"treatment\" must be 0 or 1, got {v} at row {i}"
                )));
            }
        }
        self.treatment = Some(a);
        Ok(self)
    }

    pub fn with_propensity(mut self, p: DVector<f64>) -> Result<Dataset> {
        check_rows("propensity", p.len(), self.n())?;
        for (i, v) in p.iter().enumerate() {
            if !v.is_finite() || *v <= 0.0 || *v >= 1.0 {
                return Err(Error::Schema(format!(
                    "column \"propensity\" must lie strictly in (0, 1), got {v} at row {i}"
                )));
            }
        }
        self.propensity = Some(p);
        Ok(self)
    }

    pub fn with_missing(mut self, r: DVector<f64>) -> Result<Dataset> {
        check_rows("missing", r.len(), self.n())?;
        for (i, v) in r.iter().enumerate() {
            if *v != 0.0 && *v != 1.0 {
                return Err(Error::Schema(format!(
                    "column \"missing\" must be 0 or 1, got {v} at row {i}"
                )));
            }
        }
        self.missing = Some(r);
        Ok(self)
    }

    /// Copy of the frame with replacement observation weights. Weights must
    /// be finite, nonnegative, and not all zero.
    pub fn with_weights(&self, w: DVector<f64>) -> Result<Dataset> {
        check_rows("weights", w.len(), self.n())?;
        let mut total = 0.0;
        for (i, v) in w.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::Schema(format!(
                    "column \"weights\" must be finite and >= 0, got {v} at row {i}"
                )));
            }
            total += *v;
        }
        if total <= 0.0 {
            return Err(Error::Schema("observation weights sum to zero".into()));
        }
        let mut out = self.clone();
        out.weights = w;
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn y2(&self) -> Option<&DVector<f64>> {
        self.y2.as_ref()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> Option<&DMatrix<f64>> {
        self.z.as_ref()
    }

    pub fn treatment(&self) -> Option<&DVector<f64>> {
        self.treatment.as_ref()
    }

    pub fn propensity(&self) -> Option<&DVector<f64>> {
        self.propensity.as_ref()
    }

    pub fn missing(&self) -> Option<&DVector<f64>> {
        self.missing.as_ref()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.sum()
    }

    fn feature_column(&self, f: Feature) -> Result<nalgebra::DVectorView<'_, f64>> {
        match f {
            Feature::X(j) => {
                if j >= self.x.ncols() {
                    return Err(Error::Schema(format!(
                        "design references x column {j}, dataset has {}",
                        self.x.ncols()
                    )));
                }
                Ok(self.x.column(j))
            }
            Feature::Z(j) => {
                let z = self
                    .z
                    .as_ref()
                    .ok_or_else(|| Error::Schema("design references z but dataset has no z block".into()))?;
                if j >= z.ncols() {
                    return Err(Error::Schema(format!(
                        "design references z column {j}, dataset has {}",
                        z.ncols()
                    )));
                }
                Ok(z.column(j))
            }
        }
    }

    /// Materialize the design matrix named by a feature map.
    pub fn design(&self, map: &FeatureMap) -> Result<DMatrix<f64>> {
        if map.is_empty() {
            return Err(Error::Schema("design map is empty".into()));
        }
        let mut out = DMatrix::zeros(self.n(), map.len());
        for (j, f) in map.0.iter().enumerate() {
            out.set_column(j, &self.feature_column(*f)?);
        }
        Ok(out)
    }

    /// Rows selected by index, all columns retained. Indices may repeat.
    pub fn subset_rows(&self, idx: &[usize]) -> Result<Dataset> {
        if idx.is_empty() {
            return Err(Error::Schema("row subset is empty".into()));
        }
        for &i in idx {
            if i >= self.n() {
                return Err(Error::Schema(format!("row index {i} out of range (n = {})", self.n())));
            }
        }
        let take_vec = |v: &DVector<f64>| DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]));
        let take_mat = |m: &DMatrix<f64>| {
            DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
        };
        Ok(Dataset {
            y: take_vec(&self.y),
            y2: self.y2.as_ref().map(take_vec),
            x: take_mat(&self.x),
            z: self.z.as_ref().map(take_mat),
            treatment: self.treatment.as_ref().map(take_vec),
            propensity: self.propensity.as_ref().map(take_vec),
            missing: self.missing.as_ref().map(take_vec),
            weights: take_vec(&self.weights),
        })
    }

    /// Replace `z` with its residual after weighted projection onto `x`.
    /// Afterwards the x and z blocks are orthogonal in sample, which
    /// decouples the shared-design coordinates of a full-frame regression
    /// from the z coordinates.
    pub fn orthogonalize_z(&self) -> Result<Dataset> {
        let z = self
            .z
            .as_ref()
            .ok_or_else(|| Error::Schema("orthogonalize_z requires a z block".into()))?;
        let n = self.n();
        let mut xw = self.x.clone();
        for i in 0..n {
            let w = self.weights[i];
            for j in 0..xw.ncols() {
                xw[(i, j)] *= w;
            }
        }
        let gram = xw.transpose() * &self.x;
        let xtz = xw.transpose() * z;
        let coef = crate::numerics::solve_square(&gram, &xtz)?;
        let resid = z - &self.x * coef.solution;
        let mut out = self.clone();
        out.z = Some(resid);
        Ok(out)
    }
}

/// Per-observation score rows with a count of linear predictors that hit the
/// stability clamp. A solution with clamped rows is not trusted as converged.
#[derive(Clone, Debug)]
pub struct ScoreMatrix {
    /// n x d, row i = psi_i(params).
    pub values: DMatrix<f64>,
    pub clamped_rows: usize,
}

/// One estimating-equation family: per-observation scores, their Jacobians
/// in the parameters, and the designs downstream consumers need.
pub trait EstimatingEquation: Send + Sync {
    fn id(&self) -> FamilyId;

    /// Length of the parameter vector.
    fn param_dim(&self) -> usize;

    /// Check that the dataset carries every column the family references.
    fn validate(&self, data: &Dataset) -> Result<()>;

    /// Score rows at `params`.
    fn scores(&self, data: &Dataset, params: &DVector<f64>) -> Result<ScoreMatrix>;

    /// Weighted mean of the per-observation score Jacobians, normalized by
    /// total weight. Families compute this with Gram products rather than by
    /// materializing per-row matrices.
    fn mean_jacobian(&self, data: &Dataset, params: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// Per-observation Jacobians, one d x d matrix per row. Intended for
    /// diagnostics and tests; quadratic in memory.
    fn jacobians(&self, data: &Dataset, params: &DVector<f64>) -> Result<Vec<DMatrix<f64>>>;

    /// The design whose rows multiply the per-observation residual, columns
    /// aligned with parameter coordinates.
    fn design_matrix(&self, data: &Dataset) -> Result<DMatrix<f64>>;

    /// Design for out-of-sample prediction. Treatment-effect families return
    /// the uncentered `[control, effect]` columns here even though their
    /// scores use treatment-centered effect columns.
    fn prediction_design(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        self.design_matrix(data)
    }

    /// Parameter coordinates that form the treatment-effect block, when the
    /// family has one.
    fn effect_range(&self) -> Option<std::ops::Range<usize>> {
        None
    }

    /// Fitted mean response per row on the outcome scale. For
    /// treatment-effect families this is the fitted regression surface at
    /// the observed treatment.
    fn mean_response(&self, data: &Dataset, params: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Scores, per-row Jacobians, and their weighted means in one pass.
/// Diagnostic/test entry point; hot paths call the trait methods directly.
#[derive(Clone, Debug)]
pub struct EquationEval {
    pub scores: DMatrix<f64>,
    pub jacobians: Vec<DMatrix<f64>>,
    pub mean_score: DVector<f64>,
    pub mean_jacobian: DMatrix<f64>,
    pub clamped_rows: usize,
}

pub fn eval_equation(
    spec: &FamilySpec,
    data: &Dataset,
    params: &DVector<f64>,
) -> Result<EquationEval> {
    let eq = registry::build(spec)?;
    eq.validate(data)?;
    let sm = eq.scores(data, params)?;
    let jacobians = eq.jacobians(data, params)?;
    let mean_jacobian = eq.mean_jacobian(data, params)?;
    let mean_score = weighted_mean_rows(&sm.values, data.weights());
    Ok(EquationEval {
        scores: sm.values,
        jacobians,
        mean_score,
        mean_jacobian,
        clamped_rows: sm.clamped_rows,
    })
}

/// Weighted column means of a row-per-observation matrix, normalized by the
/// total weight.
pub fn weighted_mean_rows(rows: &DMatrix<f64>, weights: &DVector<f64>) -> DVector<f64> {
    let total = weights.sum();
    let mut out = DVector::zeros(rows.ncols());
    for i in 0..rows.nrows() {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        for j in 0..rows.ncols() {
            out[j] += w * rows[(i, j)];
        }
    }
    out / total
}
