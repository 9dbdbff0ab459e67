//! Monte Carlo benchmark scenarios comparing the internal, conditional, and
//! James-Stein estimators.
//!
//! Each scenario sweeps a grid (external coefficient offset, or residual
//! correlation for the surrogate scenario), runs paired replicates at every
//! grid value, and reports prediction mean squared error relative to the
//! internal-only estimator, optional bootstrap coverage, and the average
//! shrinkage weight. Replicates are paired by common random numbers across
//! the grid, so differences along the grid are not drowned in replicate
//! noise.

use nalgebra::DVector;

use crate::bootstrap::{self, BootstrapConfig, MultiplierLaw};
use crate::equations::{registry, Feature, FamilySpec, FeatureMap};
use crate::error::{Error, Result};
use crate::fusion::{self, ExternalSummary};
use crate::sandwich::{self, ModelPair};
use crate::shrinkage::{self, WeightMatrixSpec};
use crate::transform::TransformSpec;
use crate::zsolve::{self, SolveOptions};

pub mod generate;
pub mod workflows;

pub use generate::{generate_eval, generate_missing_frame, generate_pair, EvalSet, StudyPair};
pub use workflows::{missing_covariate_workflow, missing_outcome_workflow, WorkflowFit};

pub const ESTIMATOR_LABELS: [&str; 3] = ["internal", "conditional", "js"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioKind {
    Linear,
    Logistic,
    Cate,
    Surrogate,
    MissingOutcome,
    MissingCovariate,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Linear => "linear",
            ScenarioKind::Logistic => "logistic",
            ScenarioKind::Cate => "cate",
            ScenarioKind::Surrogate => "surrogate",
            ScenarioKind::MissingOutcome => "missing_outcome",
            ScenarioKind::MissingCovariate => "missing_covariate",
        }
    }

    pub fn parse(name: &str) -> Result<ScenarioKind> {
        match name {
            "linear" => Ok(ScenarioKind::Linear),
            "logistic" => Ok(ScenarioKind::Logistic),
            "cate" => Ok(ScenarioKind::Cate),
            "surrogate" => Ok(ScenarioKind::Surrogate),
            "missing_outcome" => Ok(ScenarioKind::MissingOutcome),
            "missing_covariate" => Ok(ScenarioKind::MissingCovariate),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

/// Data-generating coefficients shared by the scenarios.
#[derive(Clone, Debug)]
pub struct ScenarioCoeffs {
    pub beta_c: f64,
    pub beta_x: f64,
    pub beta_z: f64,
    pub beta_xz: f64,
    pub noise_sd: f64,
    /// Slope of the skewed covariate's log in the second internal covariate.
    pub z2_slope: f64,
    /// Pairwise correlation of the Gaussian covariate block.
    pub corr: f64,
    /// Treatment-effect coefficients over (1, x1, x2, z1, x2 z2).
    pub tau: [f64; 5],
    /// Treatment-assignment logit over (1, x1, z1).
    pub assign: [f64; 3],
    /// Residual standard deviations of the primary and surrogate outcomes.
    pub sigma1: f64,
    pub sigma2: f64,
}

impl Default for ScenarioCoeffs {
    fn default() -> Self {
        ScenarioCoeffs {
            beta_c: 0.5,
            beta_x: 0.5,
            beta_z: 0.2,
            beta_xz: 0.2,
            noise_sd: 2.0,
            z2_slope: 0.2,
            corr: 0.3,
            tau: [0.5, 0.2, 0.2, 0.2, 0.2],
            assign: [0.0, 0.3, 0.3],
            sigma1: 2.0,
            sigma2: 2.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n_internal: usize,
    pub n_external: usize,
    pub mc_replicates: usize,
    /// External coefficient offsets (regression and treatment scenarios).
    pub offset_grid: Vec<f64>,
    /// Residual correlations (surrogate scenario).
    pub rho_grid: Vec<f64>,
    /// Fixed external offset used by the surrogate scenario.
    pub surrogate_offset: f64,
    pub eval_rows: usize,
    pub base_seed: u64,
    /// Also run a bootstrap per replicate and report CI coverage.
    pub coverage: bool,
    pub bootstrap_replicates: usize,
    pub ci_level: f64,
    /// Probability a row is incomplete (missing-data scenarios).
    pub missing_fraction: f64,
    pub max_failure_fraction: f64,
    pub coeffs: ScenarioCoeffs,
}

impl ScenarioSpec {
    pub fn defaults(kind: ScenarioKind) -> Self {
        ScenarioSpec {
            kind,
            n_internal: 200,
            n_external: 20_000,
            mc_replicates: 200,
            offset_grid: (0..=12).map(|i| i as f64 * 0.025).collect(),
            rho_grid: vec![0.7, 0.8, 0.9, 1.0],
            surrogate_offset: 0.0,
            eval_rows: 10_000,
            base_seed: 1729,
            coverage: false,
            bootstrap_replicates: 200,
            ci_level: 0.90,
            missing_fraction: 0.5,
            max_failure_fraction: 0.05,
            coeffs: ScenarioCoeffs::default(),
        }
    }

    /// The grid the scenario sweeps; the missing-data scenarios run once.
    pub fn grid_values(&self) -> Vec<f64> {
        match self.kind {
            ScenarioKind::Surrogate => self.rho_grid.clone(),
            ScenarioKind::MissingOutcome | ScenarioKind::MissingCovariate => vec![0.0],
            _ => self.offset_grid.clone(),
        }
    }

    pub fn grid_label(&self) -> &'static str {
        match self.kind {
            ScenarioKind::Surrogate => "rho",
            _ => "offset",
        }
    }

    fn validate(&self) -> Result<()> {
        if self.mc_replicates == 0 {
            return Err(Error::Config("scenario needs at least one replicate".into()));
        }
        if self.eval_rows == 0 {
            return Err(Error::Config("scenario needs evaluation rows".into()));
        }
        if self.grid_values().is_empty() {
            return Err(Error::Config("scenario grid is empty".into()));
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return Err(Error::Config("missing_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One aggregated report line: a (grid value, estimator) cell.
#[derive(Clone, Debug)]
pub struct ReportRow {
    pub scenario: &'static str,
    pub grid: f64,
    pub estimator: &'static str,
    pub rel_pmse_mean: f64,
    pub rel_pmse_se: f64,
    pub coverage_all: Option<f64>,
    pub coverage_external: Option<f64>,
    pub coverage_other: Option<f64>,
    pub mean_js_weight: f64,
    pub n_failed: usize,
}

/// One per-replicate record, kept for plotting and debugging.
#[derive(Clone, Debug)]
pub struct RawRow {
    pub scenario: &'static str,
    pub grid: f64,
    pub replicate: usize,
    pub estimator: &'static str,
    pub pmse: f64,
    pub js_weight: f64,
}

#[derive(Clone, Debug)]
pub struct ScenarioReport {
    pub kind: ScenarioKind,
    pub grid_label: &'static str,
    pub rows: Vec<ReportRow>,
    pub raw: Vec<RawRow>,
}

/// Model wiring of one scenario: what is fitted where, how the studies are
/// compared, and which truth the coverage columns check.
struct Wiring {
    pair: ModelPair,
    external_family: FamilySpec,
    transform: TransformSpec,
    a_spec: WeightMatrixSpec,
    /// (gamma coordinate, true value) pairs the coverage columns check.
    truth: Vec<(usize, f64)>,
    /// Gamma coordinates aligned with the external model's columns.
    external_coords: Vec<usize>,
}

impl Wiring {
    fn gamma_spec(&self) -> &FamilySpec {
        match &self.pair {
            ModelPair::Separate { gamma, .. } => gamma,
            ModelPair::Stacked { spec } => spec,
        }
    }
}

fn wiring(spec: &ScenarioSpec) -> Result<Wiring> {
    let c = &spec.coeffs;
    match spec.kind {
        ScenarioKind::Linear | ScenarioKind::Logistic => {
            let x_map = FeatureMap::x_block(5);
            let full = FeatureMap::full_block(5, 5);
            let (theta, gamma, external_family) = if spec.kind == ScenarioKind::Linear {
                (FamilySpec::linear(x_map.clone()), FamilySpec::linear(full), FamilySpec::linear(x_map))
            } else {
                (
                    FamilySpec::logistic(x_map.clone()),
                    FamilySpec::logistic(full),
                    FamilySpec::logistic(x_map),
                )
            };
            let bx = c.beta_x;
            let truth: Vec<(usize, f64)> = vec![
                (0, c.beta_c),
                (1, bx),
                (2, bx),
                (3, bx),
                (4, bx),
                (5, bx),
                (6, bx),
                (7, c.beta_z),
                (8, c.beta_z),
                (9, c.beta_xz),
            ];
            Ok(Wiring {
                pair: ModelPair::Separate { theta, gamma },
                external_family,
                transform: TransformSpec::identity(),
                a_spec: WeightMatrixSpec::Predictive,
                truth,
                external_coords: (0..5).collect(),
            })
        }
        ScenarioKind::Cate => {
            let x_map = FeatureMap::x_block(6);
            let mut control = x_map.0.clone();
            control.extend([Feature::Z(0), Feature::Z(1)]);
            let mut effect = x_map.0.clone();
            effect.extend([Feature::Z(0), Feature::Z(2)]);
            let gamma = FamilySpec::wcls(FeatureMap(control), FeatureMap(effect));
            let theta = FamilySpec::wcls(x_map.clone(), x_map.clone());
            let external_family = theta.clone();
            // effect block of gamma: (1, x1..x5, z1, x2 z2) at coordinates
            // 8..16; the treatment-effect surface is tau over
            // (1, x1, x2, z1, x2 z2).
            let truth = vec![
                (8, c.tau[0]),
                (9, c.tau[1]),
                (10, c.tau[2]),
                (11, 0.0),
                (12, 0.0),
                (13, 0.0),
                (14, c.tau[3]),
                (15, c.tau[4]),
            ];
            Ok(Wiring {
                pair: ModelPair::Separate { theta, gamma },
                external_family,
                transform: TransformSpec::subset((6..12).collect()),
                a_spec: WeightMatrixSpec::PredictiveSubset((8..16).collect()),
                truth,
                external_coords: (8..14).collect(),
            })
        }
        ScenarioKind::Surrogate => {
            let x_map = FeatureMap::x_block(5);
            let full = FeatureMap::full_block(5, 5);
            let bx = c.beta_x;
            let truth: Vec<(usize, f64)> = vec![
                (0, c.beta_c),
                (1, bx),
                (2, bx),
                (3, bx),
                (4, bx),
                (5, bx),
                (6, bx),
                (7, c.beta_z),
                (8, c.beta_z),
                (9, c.beta_xz),
            ];
            Ok(Wiring {
                pair: ModelPair::Separate {
                    theta: FamilySpec::linear(x_map.clone()).with_secondary_outcome(),
                    gamma: FamilySpec::linear(full),
                },
                external_family: FamilySpec::linear(x_map),
                transform: TransformSpec::identity(),
                a_spec: WeightMatrixSpec::Predictive,
                truth,
                external_coords: (0..5).collect(),
            })
        }
        other => Err(Error::Config(format!("scenario {} has no study-pair wiring", other.name()))),
    }
}

struct CoverageCount {
    hits: usize,
    total: usize,
}

struct RepOutcome {
    pmse: [f64; 3],
    weight: f64,
    /// Per estimator: (all coords, external coords, other coords).
    covered: Option<[[CoverageCount; 3]; 3]>,
}

fn prediction_error(
    gamma_spec: &FamilySpec,
    kind: ScenarioKind,
    eval: &EvalSet,
    params: &DVector<f64>,
) -> Result<f64> {
    let eq = registry::build(gamma_spec)?;
    let pred = match kind {
        ScenarioKind::Cate => {
            let range = eq
                .effect_range()
                .ok_or_else(|| Error::Config("treatment scenario family has no effect block".into()))?;
            let h = eq.prediction_design(&eval.data)?;
            let block = h.columns(range.start, range.len());
            &block * params.rows(range.start, range.len())
        }
        _ => eq.mean_response(&eval.data, params)?,
    };
    let n = eval.target.len();
    let mut acc = 0.0;
    for i in 0..n {
        let d = pred[i] - eval.target[i];
        acc += d * d;
    }
    Ok(acc / n as f64)
}

fn is_soft(err: &Error) -> bool {
    matches!(
        err,
        Error::Numeric(_)
            | Error::SingularMatrix(_)
            | Error::IllConditioned { .. }
            | Error::NonConvergence { .. }
            | Error::DegenerateTransform(_)
            | Error::InsufficientData(_)
            | Error::BootstrapDegenerate { .. }
    )
}

fn coverage_counts(
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    truth: &[(usize, f64)],
    external_coords: &[usize],
) -> [CoverageCount; 3] {
    let mut all = CoverageCount { hits: 0, total: 0 };
    let mut ext = CoverageCount { hits: 0, total: 0 };
    let mut other = CoverageCount { hits: 0, total: 0 };
    for &(coord, value) in truth {
        let hit = (lower[coord] <= value && value <= upper[coord]) as usize;
        all.hits += hit;
        all.total += 1;
        if external_coords.contains(&coord) {
            ext.hits += hit;
            ext.total += 1;
        } else {
            other.hits += hit;
            other.total += 1;
        }
    }
    [all, ext, other]
}

fn run_standard_replicate(
    spec: &ScenarioSpec,
    w: &Wiring,
    grid: f64,
    replicate: usize,
) -> Result<RepOutcome> {
    let pair_data = generate_pair(spec, grid, replicate)?;
    let eval = generate_eval(spec, replicate)?;

    let sol = zsolve::solve(&w.external_family, &pair_data.external, &SolveOptions::default())?;
    let ext_fit = sandwich::sandwich_fit(&w.external_family, &pair_data.external, &sol)?;
    let ext = ExternalSummary::from_fit(&ext_fit, w.transform.clone());

    let joint = w.pair.fit(&pair_data.internal, None)?;
    let a = shrinkage::build_a(&w.a_spec, &joint, &pair_data.internal)?;
    let cond = fusion::conditional_estimate(&joint, &ext)?;
    let shrink = shrinkage::james_stein(&cond, &a)?;

    let gamma_spec = w.gamma_spec();
    let pmse = [
        prediction_error(gamma_spec, spec.kind, &eval, &cond.gamma_internal)?,
        prediction_error(gamma_spec, spec.kind, &eval, &cond.gamma_cond)?,
        prediction_error(gamma_spec, spec.kind, &eval, &shrink.gamma_js)?,
    ];

    let covered = if spec.coverage {
        let cfg = BootstrapConfig {
            replicates: spec.bootstrap_replicates,
            base_seed: generate::stream_seed(spec.base_seed, replicate, generate::SALT_BOOTSTRAP),
            ci_level: spec.ci_level,
            law: MultiplierLaw::UnitExponential,
            max_failure_fraction: spec.max_failure_fraction,
        };
        let boot = bootstrap::bootstrap_fuse(&w.pair, &pair_data.internal, &ext, &w.a_spec, &cfg)?;
        Some([
            coverage_counts(&boot.internal.lower, &boot.internal.upper, &w.truth, &w.external_coords),
            coverage_counts(
                &boot.conditional.lower,
                &boot.conditional.upper,
                &w.truth,
                &w.external_coords,
            ),
            coverage_counts(&boot.js.lower, &boot.js.upper, &w.truth, &w.external_coords),
        ])
    } else {
        None
    };

    Ok(RepOutcome { pmse, weight: shrink.weight, covered })
}

fn aggregate_grid(
    kind: ScenarioKind,
    grid: f64,
    outcomes: &[(usize, RepOutcome)],
    n_failed: usize,
    rows: &mut Vec<ReportRow>,
    raw: &mut Vec<RawRow>,
) {
    let name = kind.name();
    let m = outcomes.len();
    let mean_weight = outcomes.iter().map(|(_, o)| o.weight).sum::<f64>() / m as f64;
    for (est_idx, label) in ESTIMATOR_LABELS.iter().enumerate() {
        let rels: Vec<f64> =
            outcomes.iter().map(|(_, o)| o.pmse[est_idx] / o.pmse[0]).collect();
        let mean = rels.iter().sum::<f64>() / m as f64;
        let se = if m > 1 {
            let var = rels.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (m - 1) as f64;
            (var / m as f64).sqrt()
        } else {
            0.0
        };
        let mut cov = [None, None, None];
        if outcomes.iter().all(|(_, o)| o.covered.is_some()) && m > 0 {
            for class in 0..3 {
                let mut hits = 0;
                let mut total = 0;
                for (_, o) in outcomes {
                    let counts = &o.covered.as_ref().expect("checked above")[est_idx][class];
                    hits += counts.hits;
                    total += counts.total;
                }
                if total > 0 {
                    cov[class] = Some(hits as f64 / total as f64);
                }
            }
        }
        rows.push(ReportRow {
            scenario: name,
            grid,
            estimator: label,
            rel_pmse_mean: mean,
            rel_pmse_se: se,
            coverage_all: cov[0],
            coverage_external: cov[1],
            coverage_other: cov[2],
            mean_js_weight: mean_weight,
            n_failed,
        });
        for (rep, o) in outcomes {
            raw.push(RawRow {
                scenario: name,
                grid,
                replicate: *rep,
                estimator: label,
                pmse: o.pmse[est_idx],
                js_weight: o.weight,
            });
        }
    }
}

fn run_missing_replicate(spec: &ScenarioSpec, replicate: usize) -> Result<RepOutcome> {
    let frame = generate_missing_frame(spec, replicate)?;
    let wf = match spec.kind {
        ScenarioKind::MissingOutcome => {
            missing_outcome_workflow(&frame, None, &WeightMatrixSpec::Predictive)?
        }
        ScenarioKind::MissingCovariate => {
            missing_covariate_workflow(&frame, &WeightMatrixSpec::Predictive)?
        }
        other => {
            return Err(Error::Config(format!("scenario {} is not a workflow", other.name())))
        }
    };
    let eval = generate_eval(spec, replicate)?;
    let gamma_spec = wf.fuse.joint.gamma.family.clone();
    let pmse = [
        prediction_error(&gamma_spec, spec.kind, &eval, &wf.fuse.cond.gamma_internal)?,
        prediction_error(&gamma_spec, spec.kind, &eval, &wf.fuse.cond.gamma_cond)?,
        prediction_error(&gamma_spec, spec.kind, &eval, &wf.fuse.shrink.gamma_js)?,
    ];
    Ok(RepOutcome { pmse, weight: wf.fuse.shrink.weight, covered: None })
}

/// Run a scenario end to end.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<ScenarioReport> {
    spec.validate()?;
    let standard = !matches!(
        spec.kind,
        ScenarioKind::MissingOutcome | ScenarioKind::MissingCovariate
    );
    let w = if standard { Some(wiring(spec)?) } else { None };

    let mut rows = Vec::new();
    let mut raw = Vec::new();
    for grid in spec.grid_values() {
        let mut outcomes: Vec<(usize, RepOutcome)> = Vec::with_capacity(spec.mc_replicates);
        let mut n_failed = 0;
        for rep in 0..spec.mc_replicates {
            let result = match &w {
                Some(w) => run_standard_replicate(spec, w, grid, rep),
                None => run_missing_replicate(spec, rep),
            };
            match result {
                Ok(o) => outcomes.push((rep, o)),
                Err(e) if is_soft(&e) => n_failed += 1,
                Err(e) => return Err(e),
            }
        }
        if (n_failed as f64) > spec.max_failure_fraction * spec.mc_replicates as f64 {
            return Err(Error::ScenarioDegenerate {
                failed: n_failed,
                total: spec.mc_replicates,
                grid_value: grid,
            });
        }
        aggregate_grid(spec.kind, grid, &outcomes, n_failed, &mut rows, &mut raw);
    }
    Ok(ScenarioReport { kind: spec.kind, grid_label: spec.grid_label(), rows, raw })
}
