//! Damped Newton root finder for estimating equations.
//!
//! Solves for parameters where the weighted mean score vanishes. Steps use
//! the family's analytic mean Jacobian; a step is accepted only if it
//! reduces the max-abs mean score, halving up to a bounded number of times
//! otherwise. Convergence additionally requires that no observation sits at
//! the linear-predictor clamp, so quasi-separated GLM fits surface as
//! NonConvergenceError instead of returning a silently boundary-pinned
//! solution.

use nalgebra::{DMatrix, DVector};

use crate::equations::{self, registry, Dataset, EstimatingEquation, FamilySpec, FeatureMap};
use crate::error::{Error, Result};
use crate::numerics;

/// Max-abs weighted mean score at an accepted solution.
pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_MAX_HALVINGS: usize = 30;

/// Iterates whose max-abs coordinate exceeds this are treated as divergent.
const PARAM_BOUND: f64 = 1e8;

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Starting point; zeros when absent.
    pub init: Option<DVector<f64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            max_halvings: DEFAULT_MAX_HALVINGS,
            init: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub params: DVector<f64>,
    /// Accepted Newton steps.
    pub iterations: usize,
    pub score_norm: f64,
    pub converged: bool,
    /// Any Jacobian solve fell back to a ridge during the iteration.
    pub ridge_used: bool,
    /// Rows at the linear-predictor clamp in the final evaluation.
    pub clamped_rows: usize,
}

/// Build the family named by `spec` and solve it on `data`.
pub fn solve(spec: &FamilySpec, data: &Dataset, opts: &SolveOptions) -> Result<SolveReport> {
    let eq = registry::build(spec)?;
    solve_equation(eq.as_ref(), data, opts)
}

struct Eval {
    mean: DVector<f64>,
    norm: f64,
    clamped: usize,
}

fn evaluate(eq: &dyn EstimatingEquation, data: &Dataset, params: &DVector<f64>) -> Result<Eval> {
    let sm = eq.scores(data, params)?;
    let mean = equations::weighted_mean_rows(&sm.values, data.weights());
    let norm = mean.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    Ok(Eval { mean, norm, clamped: sm.clamped_rows })
}

pub fn solve_equation(
    eq: &dyn EstimatingEquation,
    data: &Dataset,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    eq.validate(data)?;
    let dim = eq.param_dim();
    if data.n() < dim {
        return Err(Error::InsufficientData(format!(
            "{} rows cannot identify {dim} parameters",
            data.n()
        )));
    }
    let mut params = match &opts.init {
        Some(p) => {
            if p.len() != dim {
                return Err(Error::Config(format!(
                    "init has {} coordinates, family expects {dim}",
                    p.len()
                )));
            }
            p.clone()
        }
        None => DVector::zeros(dim),
    };

    let mut cur = evaluate(eq, data, &params)?;
    if !cur.norm.is_finite() {
        return Err(Error::Numeric("mean score is non-finite at the starting point".into()));
    }
    let mut ridge_used = false;
    let mut iterations = 0;
    let mut stall: Option<String> = None;

    for _ in 0..opts.max_iter {
        if cur.norm <= opts.tol && cur.clamped == 0 {
            return Ok(SolveReport {
                params,
                iterations,
                score_norm: cur.norm,
                converged: true,
                ridge_used,
                clamped_rows: 0,
            });
        }
        let jac = eq.mean_jacobian(data, &params)?;
        let mean_col = DMatrix::from_column_slice(dim, 1, cur.mean.as_slice());
        let step = numerics::solve_square(&jac, &mean_col)?;
        ridge_used |= step.ridge_used;
        let delta = DVector::from_column_slice(step.solution.as_slice());

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand = &params - scale * &delta;
            if cand.amax() > PARAM_BOUND {
                scale *= 0.5;
                continue;
            }
            match evaluate(eq, data, &cand) {
                Ok(next) if next.norm.is_finite() && next.norm < cur.norm => {
                    accepted = Some((cand, next));
                    break;
                }
                Ok(_) => {}
                Err(Error::Numeric(_)) => {}
                Err(e) => return Err(e),
            }
            scale *= 0.5;
        }
        match accepted {
            Some((cand, next)) => {
                params = cand;
                cur = next;
                iterations += 1;
            }
            None => {
                stall = Some(format!("step search stalled after {iterations} accepted steps"));
                break;
            }
        }
    }

    let mut message = stall.unwrap_or_else(|| {
        format!("score norm {:.3e} above tolerance after {} iterations", cur.norm, opts.max_iter)
    });
    if cur.clamped > 0 {
        message.push_str(&format!(
            "; {} rows at the linear-predictor clamp (possible separation)",
            cur.clamped
        ));
    }
    Err(Error::NonConvergence {
        message,
        report: SolveReport {
            params,
            iterations,
            score_norm: cur.norm,
            converged: false,
            ridge_used,
            clamped_rows: cur.clamped,
        },
    })
}

/// Fit a logistic regression of the treatment indicator on `map` and store
/// the fitted probabilities as the dataset's propensity column.
pub fn fit_propensity(data: &Dataset, map: &FeatureMap) -> Result<Dataset> {
    let a = data
        .treatment()
        .ok_or_else(|| Error::Schema("fit_propensity requires a treatment column".into()))?
        .clone();
    let mut frame = Dataset::new(a, data.x().clone())?;
    if let Some(z) = data.z() {
        frame = frame.with_z(z.clone())?;
    }
    frame = frame.with_weights(data.weights().clone())?;
    let spec = FamilySpec::logistic(map.clone());
    let report = solve(&spec, &frame, &SolveOptions::default())?;
    let eq = registry::build(&spec)?;
    let fitted = eq.mean_response(&frame, &report.params)?;
    data.clone().with_propensity(fitted)
}
