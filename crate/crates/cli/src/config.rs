//! Run configuration: a TOML file declaring data paths, column roles, the
//! model pair, the transform, the loss matrix, bootstrap settings, and the
//! simulation scenario. Each section is optional at parse time; the
//! subcommands check for what they actually need so one file can drive a
//! whole fit/fuse/bootstrap sequence.

use std::path::{Path, PathBuf};

use estfuse::bootstrap::{BootstrapConfig, MultiplierLaw};
use estfuse::equations::{FamilyId, FamilySpec, Feature, FeatureMap};
use estfuse::error::{Error, Result};
use estfuse::io::ColumnRoles;
use estfuse::scenarios::{ScenarioKind, ScenarioSpec};
use estfuse::shrinkage::WeightMatrixSpec;
use estfuse::transform::TransformSpec;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<DataSection>,
    pub columns: Option<ColumnsSection>,
    pub model: Option<ModelSection>,
    pub transform: Option<TransformSection>,
    pub loss: Option<LossSection>,
    pub bootstrap: Option<BootstrapSection>,
    pub scenario: Option<ScenarioSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Dataset ingested by fit, fuse, and bootstrap-ci.
    pub csv: PathBuf,
    /// Summary file consumed by fuse and bootstrap-ci.
    pub external_summary: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnsSection {
    pub outcome: String,
    pub outcome2: Option<String>,
    pub x: Vec<String>,
    #[serde(default)]
    pub z: Vec<String>,
    pub treatment: Option<String>,
    pub propensity: Option<String>,
    pub missing: Option<String>,
    pub weights: Option<String>,
    #[serde(default = "default_true")]
    pub intercept: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Family fitted by `fit`, and the internal model in fuse runs.
    pub family: String,
    /// Design column names; defaults to all of x then z.
    pub design: Option<Vec<String>>,
    /// Control/effect designs for the treatment families.
    pub control: Option<Vec<String>>,
    pub effect: Option<Vec<String>>,
    /// The external study's family, refitted on internal rows during fuse.
    /// Defaults to `family`.
    pub external_family: Option<String>,
    /// External design; defaults to the x block.
    pub external_design: Option<Vec<String>>,
    pub external_control: Option<Vec<String>>,
    pub external_effect: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSection {
    pub kind: String,
    #[serde(default)]
    pub indices: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub kind: String,
    #[serde(default)]
    pub indices: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSection {
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub level: Option<f64>,
    pub max_failure_fraction: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: String,
    pub n_internal: Option<usize>,
    pub n_external: Option<usize>,
    pub replicates: Option<usize>,
    pub offsets: Option<Vec<f64>>,
    pub rhos: Option<Vec<f64>>,
    pub surrogate_offset: Option<f64>,
    pub eval_rows: Option<usize>,
    pub seed: Option<u64>,
    pub coverage: Option<bool>,
    pub bootstrap_replicates: Option<usize>,
    pub ci_level: Option<f64>,
    pub missing_fraction: Option<f64>,
    pub max_failure_fraction: Option<f64>,
    pub coeffs: Option<CoeffsSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoeffsSection {
    pub beta_c: Option<f64>,
    pub beta_x: Option<f64>,
    pub beta_z: Option<f64>,
    pub beta_xz: Option<f64>,
    pub noise_sd: Option<f64>,
    pub z2_slope: Option<f64>,
    pub corr: Option<f64>,
    pub tau: Option<Vec<f64>>,
    pub assign: Option<Vec<f64>>,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn data(&self) -> Result<&DataSection> {
        self.data
            .as_ref()
            .ok_or_else(|| Error::Config("data: section required".into()))
    }

    pub fn external_summary_path(&self) -> Result<&Path> {
        self.data()?
            .external_summary
            .as_deref()
            .ok_or_else(|| Error::Config("data.external_summary: required for this subcommand".into()))
    }

    pub fn columns(&self) -> Result<&ColumnsSection> {
        self.columns
            .as_ref()
            .ok_or_else(|| Error::Config("columns: section required".into()))
    }

    pub fn model(&self) -> Result<&ModelSection> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Config("model: section required".into()))
    }

    pub fn roles(&self) -> Result<ColumnRoles> {
        let c = self.columns()?;
        if c.x.is_empty() {
            return Err(Error::Config("columns.x: at least one column required".into()));
        }
        Ok(ColumnRoles {
            y: c.outcome.clone(),
            y2: c.outcome2.clone(),
            x: c.x.clone(),
            z: c.z.clone(),
            treatment: c.treatment.clone(),
            propensity: c.propensity.clone(),
            missing: c.missing.clone(),
            weights: c.weights.clone(),
            intercept: c.intercept,
        })
    }

    pub fn transform_spec(&self) -> Result<TransformSpec> {
        match &self.transform {
            None => Ok(TransformSpec::identity()),
            Some(t) => TransformSpec::parse(&t.kind, t.indices.clone())
                .map_err(|e| Error::Config(format!("transform: {e}"))),
        }
    }

    pub fn loss_spec(&self) -> Result<WeightMatrixSpec> {
        match &self.loss {
            None => Ok(WeightMatrixSpec::Identity),
            Some(l) => WeightMatrixSpec::parse(&l.kind, l.indices.clone())
                .map_err(|e| Error::Config(format!("loss: {e}"))),
        }
    }

    pub fn bootstrap_config(&self) -> Result<BootstrapConfig> {
        let mut cfg = BootstrapConfig::default();
        if let Some(b) = &self.bootstrap {
            if let Some(r) = b.replicates {
                cfg.replicates = r;
            }
            if let Some(s) = b.seed {
                cfg.base_seed = s;
            }
            if let Some(l) = b.level {
                cfg.ci_level = l;
            }
            if let Some(f) = b.max_failure_fraction {
                cfg.max_failure_fraction = f;
            }
        }
        cfg.law = MultiplierLaw::UnitExponential;
        Ok(cfg)
    }

    /// Internal-model family over the declared roles (the phi equations).
    pub fn internal_family(&self, roles: &ColumnRoles) -> Result<FamilySpec> {
        let m = self.model()?;
        let id = FamilyId::parse(&m.family).map_err(|e| Error::Config(format!("model.family: {e}")))?;
        build_family(
            id,
            m.design.as_deref(),
            m.control.as_deref(),
            m.effect.as_deref(),
            roles,
            DesignDefault::FullBlock,
            "model",
        )
    }

    /// External-model family (the psi equations), refitted on internal rows.
    pub fn external_family(&self, roles: &ColumnRoles) -> Result<FamilySpec> {
        let m = self.model()?;
        let name = m.external_family.as_deref().unwrap_or(&m.family);
        let id =
            FamilyId::parse(name).map_err(|e| Error::Config(format!("model.external_family: {e}")))?;
        build_family(
            id,
            m.external_design.as_deref(),
            m.external_control.as_deref(),
            m.external_effect.as_deref(),
            roles,
            DesignDefault::XBlock,
            "model.external",
        )
    }

    pub fn scenario_spec(&self) -> Result<ScenarioSpec> {
        let s = self
            .scenario
            .as_ref()
            .ok_or_else(|| Error::Config("scenario: section required".into()))?;
        let kind = ScenarioKind::parse(&s.kind).map_err(|e| Error::Config(format!("scenario.kind: {e}")))?;
        let mut spec = ScenarioSpec::defaults(kind);
        if let Some(v) = s.n_internal {
            spec.n_internal = v;
        }
        if let Some(v) = s.n_external {
            spec.n_external = v;
        }
        if let Some(v) = s.replicates {
            spec.mc_replicates = v;
        }
        if let Some(v) = &s.offsets {
            spec.offset_grid = v.clone();
        }
        if let Some(v) = &s.rhos {
            spec.rho_grid = v.clone();
        }
        if let Some(v) = s.surrogate_offset {
            spec.surrogate_offset = v;
        }
        if let Some(v) = s.eval_rows {
            spec.eval_rows = v;
        }
        if let Some(v) = s.seed {
            spec.base_seed = v;
        }
        if let Some(v) = s.coverage {
            spec.coverage = v;
        }
        if let Some(v) = s.bootstrap_replicates {
            spec.bootstrap_replicates = v;
        }
        if let Some(v) = s.ci_level {
            spec.ci_level = v;
        }
        if let Some(v) = s.missing_fraction {
            spec.missing_fraction = v;
        }
        if let Some(v) = s.max_failure_fraction {
            spec.max_failure_fraction = v;
        }
        if let Some(c) = &s.coeffs {
            apply_coeffs(c, &mut spec)?;
        }
        Ok(spec)
    }
}

fn apply_coeffs(c: &CoeffsSection, spec: &mut ScenarioSpec) -> Result<()> {
    let k = &mut spec.coeffs;
    if let Some(v) = c.beta_c {
        k.beta_c = v;
    }
    if let Some(v) = c.beta_x {
        k.beta_x = v;
    }
    if let Some(v) = c.beta_z {
        k.beta_z = v;
    }
    if let Some(v) = c.beta_xz {
        k.beta_xz = v;
    }
    if let Some(v) = c.noise_sd {
        k.noise_sd = v;
    }
    if let Some(v) = c.z2_slope {
        k.z2_slope = v;
    }
    if let Some(v) = c.corr {
        k.corr = v;
    }
    if let Some(v) = &c.tau {
        if v.len() != k.tau.len() {
            return Err(Error::Config(format!(
                "scenario.coeffs.tau: expected {} values, got {}",
                k.tau.len(),
                v.len()
            )));
        }
        k.tau.copy_from_slice(v);
    }
    if let Some(v) = &c.assign {
        if v.len() != k.assign.len() {
            return Err(Error::Config(format!(
                "scenario.coeffs.assign: expected {} values, got {}",
                k.assign.len(),
                v.len()
            )));
        }
        k.assign.copy_from_slice(v);
    }
    if let Some(v) = c.sigma1 {
        k.sigma1 = v;
    }
    if let Some(v) = c.sigma2 {
        k.sigma2 = v;
    }
    Ok(())
}

enum DesignDefault {
    /// x columns then z columns.
    FullBlock,
    /// x columns only.
    XBlock,
}

/// Resolve a design name list against the declared columns. The intercept
/// column is addressable as "intercept" when enabled.
fn resolve_names(names: &[String], roles: &ColumnRoles, field: &str) -> Result<FeatureMap> {
    let x_names = roles.x_names();
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        if let Some(i) = x_names.iter().position(|n| n == name) {
            out.push(Feature::X(i));
        } else if let Some(j) = roles.z.iter().position(|n| n == name) {
            out.push(Feature::Z(j));
        } else {
            return Err(Error::Config(format!(
                "{field}: column {name:?} is not a declared x or z column"
            )));
        }
    }
    Ok(FeatureMap(out))
}

fn default_map(which: &DesignDefault, roles: &ColumnRoles) -> FeatureMap {
    let p = roles.x_names().len();
    match which {
        DesignDefault::XBlock => FeatureMap::x_block(p),
        DesignDefault::FullBlock => FeatureMap::full_block(p, roles.z.len()),
    }
}

fn build_family(
    id: FamilyId,
    design: Option<&[String]>,
    control: Option<&[String]>,
    effect: Option<&[String]>,
    roles: &ColumnRoles,
    fallback: DesignDefault,
    field: &str,
) -> Result<FamilySpec> {
    let resolve = |names: Option<&[String]>, sub: &str| -> Result<Option<FeatureMap>> {
        names
            .map(|n| resolve_names(n, roles, &format!("{field}.{sub}")))
            .transpose()
    };
    match id {
        FamilyId::Linear | FamilyId::GlmLogistic | FamilyId::GlmPoisson | FamilyId::SurrogateStack => {
            let map = resolve(design, "design")?.unwrap_or_else(|| default_map(&fallback, roles));
            let spec = match id {
                FamilyId::Linear => FamilySpec::linear(map),
                FamilyId::GlmLogistic => FamilySpec::logistic(map),
                FamilyId::GlmPoisson => FamilySpec::poisson(map),
                _ => FamilySpec::surrogate(map),
            };
            Ok(spec)
        }
        FamilyId::WclsCate | FamilyId::LogRelativeRisk => {
            let control = resolve(control, "control")?
                .ok_or_else(|| Error::Config(format!("{field}.control: required for {}", id.name())))?;
            let effect = resolve(effect, "effect")?
                .ok_or_else(|| Error::Config(format!("{field}.effect: required for {}", id.name())))?;
            Ok(match id {
                FamilyId::WclsCate => FamilySpec::wcls(control, effect),
                _ => FamilySpec::log_relative_risk(control, effect),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roles() -> ColumnRoles {
        ColumnRoles {
            y: "y".into(),
            y2: None,
            x: vec!["x1".into(), "x2".into()],
            z: vec!["z1".into()],
            treatment: None,
            propensity: None,
            missing: None,
            weights: None,
            intercept: true,
        }
    }

    #[test]
    fn design_names_resolve_across_blocks() {
        let map = resolve_names(
            &["intercept".into(), "z1".into(), "x2".into()],
            &roles(),
            "model.design",
        )
        .unwrap();
        assert_eq!(map, FeatureMap(vec![Feature::X(0), Feature::Z(0), Feature::X(2)]));
    }

    #[test]
    fn unknown_design_name_reports_field_path() {
        let err = resolve_names(&["bogus".into()], &roles(), "model.design").unwrap_err();
        assert!(err.to_string().contains("model.design"));
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn minimal_config_gets_default_designs() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [data]
            csv = "d.csv"

            [columns]
            outcome = "y"
            x = ["x1", "x2"]
            z = ["z1"]

            [model]
            family = "linear"
            "#,
        )
        .unwrap();
        let roles = cfg.roles().unwrap();
        let int = cfg.internal_family(&roles).unwrap();
        let ext = cfg.external_family(&roles).unwrap();
        assert_eq!(int.design, FeatureMap::full_block(3, 1));
        assert_eq!(ext.design, FeatureMap::x_block(3));
    }

    #[test]
    fn unknown_section_key_is_a_config_error() {
        let err = toml::from_str::<RunConfig>("[data]\ncsv = \"d.csv\"\nbogus = 1\n");
        assert!(err.is_err());
    }

    #[test]
    fn scenario_overrides_apply() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [scenario]
            kind = "logistic"
            replicates = 7
            offsets = [0.0, 0.1]
            seed = 42

            [scenario.coeffs]
            beta_x = 0.9
            "#,
        )
        .unwrap();
        let spec = cfg.scenario_spec().unwrap();
        assert_eq!(spec.mc_replicates, 7);
        assert_eq!(spec.offset_grid, vec![0.0, 0.1]);
        assert_eq!(spec.base_seed, 42);
        assert_eq!(spec.coeffs.beta_x, 0.9);
    }
}
