//! Name-keyed construction of estimating-equation strategies.

use crate::error::{Error, Result};

use super::families::{CenteredTreatment, LogRelativeRisk, SingleOutcome, SurrogateStack};
use super::{EstimatingEquation, FamilyId, FamilySpec};

/// Every family name accepted by [`build`] and by config files.
pub fn family_names() -> &'static [&'static str] {
    &["linear", "glm_logistic", "glm_poisson", "wcls_cate", "log_relative_risk", "surrogate_stack"]
}

/// Instantiate the family a spec names. Fails with ConfigError when the spec
/// lacks the column maps its family requires.
pub fn build(spec: &FamilySpec) -> Result<Box<dyn EstimatingEquation>> {
    match spec.id {
        FamilyId::Linear | FamilyId::GlmLogistic | FamilyId::GlmPoisson => {
            if spec.design.is_empty() {
                return Err(Error::Config(format!("family {} requires a design map", spec.id.name())));
            }
            Ok(Box::new(SingleOutcome::new(spec.id, spec.outcome, spec.design.clone())))
        }
        FamilyId::WclsCate | FamilyId::LogRelativeRisk => {
            let control = spec.control.clone().ok_or_else(|| {
                Error::Config(format!("family {} requires a control map", spec.id.name()))
            })?;
            let effect = spec.effect.clone().ok_or_else(|| {
                Error::Config(format!("family {} requires an effect map", spec.id.name()))
            })?;
            if spec.id == FamilyId::WclsCate {
                Ok(Box::new(CenteredTreatment { control, effect }))
            } else {
                Ok(Box::new(LogRelativeRisk { control, effect }))
            }
        }
        FamilyId::SurrogateStack => {
            if spec.design.is_empty() {
                return Err(Error::Config("family surrogate_stack requires a design map".into()));
            }
            Ok(Box::new(SurrogateStack { map: spec.design.clone() }))
        }
    }
}
