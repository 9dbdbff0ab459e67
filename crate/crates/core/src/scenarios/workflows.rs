//! Single-frame missing-data workflows.
//!
//! Both workflows reshape one partially observed frame into the two-study
//! layout and run the full fusion pipeline on it. The "external" side is
//! the incomplete split, whose rows still identify the shared-design
//! regression; the internal side is the complete split fitted jointly.

use nalgebra::DVector;

use crate::bootstrap::FuseFit;
use crate::equations::{Dataset, FamilySpec, FeatureMap};
use crate::error::{Error, Result};
use crate::fusion::{self, ExternalSummary};
use crate::sandwich::{self, ModelPair};
use crate::shrinkage::{self, WeightMatrixSpec};
use crate::transform::TransformSpec;
use crate::zsolve::{self, SolveOptions};

/// Fusion pipeline output plus the split bookkeeping.
#[derive(Clone, Debug)]
pub struct WorkflowFit {
    pub fuse: FuseFit,
    pub external: ExternalSummary,
    /// Rows in the complete (internal) split.
    pub n_internal: usize,
    /// Rows in the incomplete (external) split.
    pub n_external: usize,
}

fn split_indices(data: &Dataset) -> Result<(Vec<usize>, Vec<usize>)> {
    let r = data
        .missing()
        .ok_or_else(|| Error::Schema("workflow requires a missing indicator column".into()))?;
    let mut complete = Vec::new();
    let mut incomplete = Vec::new();
    for i in 0..data.n() {
        if r[i] == 1.0 {
            complete.push(i);
        } else {
            incomplete.push(i);
        }
    }
    Ok((complete, incomplete))
}

fn require_rows(label: &str, got: usize, dim: usize) -> Result<()> {
    if got < 2 * dim {
        return Err(Error::InsufficientData(format!(
            "{label} split has {got} rows, need at least {} for {dim} parameters",
            2 * dim
        )));
    }
    Ok(())
}

fn solve_and_fit(
    spec: &FamilySpec,
    data: &Dataset,
) -> Result<crate::sandwich::FittedModel> {
    let sol = zsolve::solve(spec, data, &SolveOptions::default())?;
    sandwich::sandwich_fit(spec, data, &sol)
}

/// Outcome missing at random on part of the frame. The observed-outcome
/// split regresses both the outcome and an imputed outcome on the shared
/// design as a stacked pair; the missing-outcome split regresses only the
/// imputed outcome, acting as the external study. The fused estimate
/// recovers most of the information the incomplete rows carry about the
/// shared-design regression.
///
/// `predictive` holds imputation coefficients over the concatenated (x, z)
/// columns; when absent they are fitted by least squares on the complete
/// split. The imputation must use more than the x block: an imputed outcome
/// that is an exact function of x has zero residual in the external
/// regression and degenerates its sandwich.
pub fn missing_outcome_workflow(
    data: &Dataset,
    predictive: Option<&DVector<f64>>,
    a_spec: &WeightMatrixSpec,
) -> Result<WorkflowFit> {
    let p = data.x().ncols();
    let zw = data.z().map_or(0, |z| z.ncols());
    let frame_dim = p + zw;
    let (complete, incomplete) = split_indices(data)?;
    require_rows("observed-outcome", complete.len(), 2 * p)?;
    require_rows("missing-outcome", incomplete.len(), p)?;

    let full_map = FeatureMap::full_block(p, zw);
    let coef = match predictive {
        Some(c) => {
            if c.len() != frame_dim {
                return Err(Error::Schema(format!(
                    "predictive coefficients have {} entries, frame has {frame_dim} columns",
                    c.len()
                )));
            }
            c.clone()
        }
        None => {
            let cc = data.subset_rows(&complete)?;
            let spec = FamilySpec::linear(full_map.clone());
            zsolve::solve(&spec, &cc, &SolveOptions::default())?.params
        }
    };
    let full_design = data.design(&full_map)?;
    let imputed = full_design * coef;

    let ext_rows = data.subset_rows(&incomplete)?;
    let ext_imputed = DVector::from_iterator(incomplete.len(), incomplete.iter().map(|&i| imputed[i]));
    let ext_frame = Dataset::new(ext_imputed, ext_rows.x().clone())?
        .with_weights(ext_rows.weights().clone())?;
    let x_map = FeatureMap::x_block(p);
    let ext_fit = solve_and_fit(&FamilySpec::linear(x_map.clone()), &ext_frame)?;
    let external = ExternalSummary::from_fit(&ext_fit, TransformSpec::identity());

    let int_rows = data.subset_rows(&complete)?;
    let int_imputed =
        DVector::from_iterator(complete.len(), complete.iter().map(|&i| imputed[i]));
    let stack_frame = Dataset::new(int_rows.y().clone(), int_rows.x().clone())?
        .with_y2(int_imputed)?
        .with_weights(int_rows.weights().clone())?;
    let pair = ModelPair::Stacked { spec: FamilySpec::surrogate(x_map) };
    let joint = pair.fit(&stack_frame, None)?;

    let a = shrinkage::build_a(a_spec, &joint, &stack_frame)?;
    let cond = fusion::conditional_estimate(&joint, &external)?;
    let shrink = shrinkage::james_stein(&cond, &a)?;
    Ok(WorkflowFit {
        fuse: FuseFit { joint, a, cond, shrink },
        external,
        n_internal: complete.len(),
        n_external: incomplete.len(),
    })
}

/// Internal-only covariates missing at random on part of the frame. Rows
/// without z carry the shared-design regression of the outcome and act as
/// the external study; complete rows fit the shared-design and full-frame
/// regressions jointly.
pub fn missing_covariate_workflow(
    data: &Dataset,
    a_spec: &WeightMatrixSpec,
) -> Result<WorkflowFit> {
    let p = data.x().ncols();
    let zw = data
        .z()
        .map(|z| z.ncols())
        .ok_or_else(|| Error::Schema("missing_covariate_workflow requires a z block".into()))?;
    let (complete, incomplete) = split_indices(data)?;
    require_rows("complete-case", complete.len(), p + zw)?;
    require_rows("missing-covariate", incomplete.len(), p)?;

    let x_map = FeatureMap::x_block(p);
    let ext_rows = data.subset_rows(&incomplete)?;
    let ext_frame = Dataset::new(ext_rows.y().clone(), ext_rows.x().clone())?
        .with_weights(ext_rows.weights().clone())?;
    let ext_fit = solve_and_fit(&FamilySpec::linear(x_map.clone()), &ext_frame)?;
    let external = ExternalSummary::from_fit(&ext_fit, TransformSpec::identity());

    let int_rows = data.subset_rows(&complete)?;
    let pair = ModelPair::Separate {
        theta: FamilySpec::linear(x_map),
        gamma: FamilySpec::linear(FeatureMap::full_block(p, zw)),
    };
    let joint = pair.fit(&int_rows, None)?;

    let a = shrinkage::build_a(a_spec, &joint, &int_rows)?;
    let cond = fusion::conditional_estimate(&joint, &external)?;
    let shrink = shrinkage::james_stein(&cond, &a)?;
    Ok(WorkflowFit {
        fuse: FuseFit { joint, a, cond, shrink },
        external,
        n_internal: complete.len(),
        n_external: incomplete.len(),
    })
}
