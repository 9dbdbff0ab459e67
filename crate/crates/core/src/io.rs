//! File formats: dataset CSV ingestion, the external summary exchange
//! format, and the deterministic CSV writers for results.
//!
//! Floats are serialized with 17 significant digits, enough to round-trip
//! f64 exactly, and every writer emits rows in a fixed order, so output
//! files are byte-identical across runs and thread counts.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::bootstrap::BootstrapOutput;
use crate::equations::{Dataset, FamilyId};
use crate::error::{Error, Result};
use crate::fusion::{ConditionalResult, ExternalSummary};
use crate::numerics::SymMatrix;
use crate::scenarios::ScenarioReport;
use crate::shrinkage::ShrinkageResult;
use crate::transform::TransformSpec;

/// 17 significant digits: exact f64 round trip.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Which dataset columns play which role. Column names refer to CSV
/// headers; when `intercept` is set, a constant column named "intercept" is
/// prepended to the x block and may be referenced by that name in designs.
#[derive(Clone, Debug)]
pub struct ColumnRoles {
    pub y: String,
    pub y2: Option<String>,
    pub x: Vec<String>,
    pub z: Vec<String>,
    pub treatment: Option<String>,
    pub propensity: Option<String>,
    pub missing: Option<String>,
    pub weights: Option<String>,
    pub intercept: bool,
}

impl ColumnRoles {
    /// Names of the x block as used in designs, intercept included.
    pub fn x_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.x.len() + 1);
        if self.intercept {
            names.push("intercept".to_string());
        }
        names.extend(self.x.iter().cloned());
        names
    }
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("column {name:?} not found in CSV header")))
}

fn parse_field(record: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<f64> {
    let raw = record
        .get(idx)
        .ok_or_else(|| Error::Schema(format!("line {line}: missing field for column {name:?}")))?;
    raw.trim()
        .parse::<f64>()
        .map_err(|_| Error::Schema(format!("line {line}: column {name:?} has non-numeric value {raw:?}")))
}

/// Read a dataset from a headered CSV file under the given column roles.
pub fn read_dataset_csv(path: &Path, roles: &ColumnRoles) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    if roles.intercept && headers.iter().any(|h| h == "intercept") {
        return Err(Error::Schema(
            "intercept requested but the CSV already has a column named \"intercept\"".into(),
        ));
    }
    let y_idx = header_index(&headers, &roles.y)?;
    let y2_idx = roles.y2.as_ref().map(|n| header_index(&headers, n)).transpose()?;
    let x_idx: Vec<usize> =
        roles.x.iter().map(|n| header_index(&headers, n)).collect::<Result<_>>()?;
    let z_idx: Vec<usize> =
        roles.z.iter().map(|n| header_index(&headers, n)).collect::<Result<_>>()?;
    let a_idx = roles.treatment.as_ref().map(|n| header_index(&headers, n)).transpose()?;
    let p_idx = roles.propensity.as_ref().map(|n| header_index(&headers, n)).transpose()?;
    let r_idx = roles.missing.as_ref().map(|n| header_index(&headers, n)).transpose()?;
    let w_idx = roles.weights.as_ref().map(|n| header_index(&headers, n)).transpose()?;

    let mut y = Vec::new();
    let mut y2 = Vec::new();
    let mut x = Vec::new();
    let mut z = Vec::new();
    let mut a = Vec::new();
    let mut p = Vec::new();
    let mut r = Vec::new();
    let mut wt = Vec::new();
    // line 1 is the header.
    let mut line = 1;
    for record in reader.records() {
        let record = record?;
        line += 1;
        y.push(parse_field(&record, y_idx, &roles.y, line)?);
        if let Some(idx) = y2_idx {
            y2.push(parse_field(&record, idx, roles.y2.as_ref().expect("role set"), line)?);
        }
        if roles.intercept {
            x.push(1.0);
        }
        for (j, &idx) in x_idx.iter().enumerate() {
            x.push(parse_field(&record, idx, &roles.x[j], line)?);
        }
        for (j, &idx) in z_idx.iter().enumerate() {
            z.push(parse_field(&record, idx, &roles.z[j], line)?);
        }
        if let Some(idx) = a_idx {
            a.push(parse_field(&record, idx, roles.treatment.as_ref().expect("role set"), line)?);
        }
        if let Some(idx) = p_idx {
            p.push(parse_field(&record, idx, roles.propensity.as_ref().expect("role set"), line)?);
        }
        if let Some(idx) = r_idx {
            r.push(parse_field(&record, idx, roles.missing.as_ref().expect("role set"), line)?);
        }
        if let Some(idx) = w_idx {
            wt.push(parse_field(&record, idx, roles.weights.as_ref().expect("role set"), line)?);
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(Error::Schema("CSV has no data rows".into()));
    }
    let x_width = roles.x.len() + roles.intercept as usize;
    if x_width == 0 {
        return Err(Error::Schema("no x columns configured".into()));
    }
    let mut data = Dataset::new(
        DVector::from_vec(y),
        DMatrix::from_row_slice(n, x_width, &x),
    )?;
    if !z.is_empty() {
        data = data.with_z(DMatrix::from_row_slice(n, roles.z.len(), &z))?;
    }
    if !y2.is_empty() {
        data = data.with_y2(DVector::from_vec(y2))?;
    }
    if !a.is_empty() {
        data = data.with_treatment(DVector::from_vec(a))?;
    }
    if !p.is_empty() {
        data = data.with_propensity(DVector::from_vec(p))?;
    }
    if !r.is_empty() {
        data = data.with_missing(DVector::from_vec(r))?;
    }
    if !wt.is_empty() {
        data = data.with_weights(DVector::from_vec(wt))?;
    }
    Ok(data)
}

/// Serialize an external summary to its line-oriented exchange format:
/// one `key value...` pair per line, covariance row-major on the estimate
/// scale.
pub fn external_summary_to_string(s: &ExternalSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "family {}", s.family.name());
    let _ = writeln!(out, "n {}", s.n);
    let _ = writeln!(out, "transform {}", s.transform.name());
    if !s.transform.indices.is_empty() {
        let idx: Vec<String> = s.transform.indices.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(out, "transform_indices {}", idx.join(" "));
    }
    let theta: Vec<String> = s.theta.iter().map(|v| fmt_float(*v)).collect();
    let _ = writeln!(out, "theta {}", theta.join(" "));
    let m = s.cov.as_matrix();
    let mut cov = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            cov.push(fmt_float(m[(i, j)]));
        }
    }
    let _ = writeln!(out, "cov {}", cov.join(" "));
    out
}

pub fn write_external_summary(path: &Path, s: &ExternalSummary) -> Result<()> {
    std::fs::write(path, external_summary_to_string(s))?;
    Ok(())
}

pub fn external_summary_from_str(text: &str) -> Result<ExternalSummary> {
    let mut family: Option<FamilyId> = None;
    let mut n: Option<usize> = None;
    let mut transform_name: Option<String> = None;
    let mut transform_indices: Vec<usize> = Vec::new();
    let mut theta: Option<Vec<f64>> = None;
    let mut cov: Option<Vec<f64>> = None;
    for (lineno, rawline) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = rawline.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let key = parts.next().expect("non-empty line");
        let rest: Vec<&str> = parts.collect();
        let parse_floats = |what: &str| -> Result<Vec<f64>> {
            rest.iter()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        Error::Schema(format!("line {line}: {what} has non-numeric value {t:?}"))
                    })
                })
                .collect()
        };
        match key {
            "family" => {
                let name = rest
                    .first()
                    .ok_or_else(|| Error::Schema(format!("line {line}: family line is empty")))?;
                family = Some(FamilyId::parse(name).map_err(|_| {
                    Error::Schema(format!("line {line}: unknown family {name:?}"))
                })?);
            }
            "n" => {
                let raw = rest
                    .first()
                    .ok_or_else(|| Error::Schema(format!("line {line}: n line is empty")))?;
                n = Some(raw.parse::<usize>().map_err(|_| {
                    Error::Schema(format!("line {line}: n has non-integer value {raw:?}"))
                })?);
            }
            "transform" => {
                let name = rest
                    .first()
                    .ok_or_else(|| Error::Schema(format!("line {line}: transform line is empty")))?;
                transform_name = Some((*name).to_string());
            }
            "transform_indices" => {
                transform_indices = rest
                    .iter()
                    .map(|t| {
                        t.parse::<usize>().map_err(|_| {
                            Error::Schema(format!(
                                "line {line}: transform_indices has non-integer value {t:?}"
                            ))
                        })
                    })
                    .collect::<Result<_>>()?;
            }
            "theta" => theta = Some(parse_floats("theta")?),
            "cov" => cov = Some(parse_floats("cov")?),
            other => {
                return Err(Error::Schema(format!("line {line}: unknown key {other:?}")));
            }
        }
    }
    let family = family.ok_or_else(|| Error::Schema("summary is missing a family line".into()))?;
    let n = n.ok_or_else(|| Error::Schema("summary is missing an n line".into()))?;
    let theta = theta.ok_or_else(|| Error::Schema("summary is missing a theta line".into()))?;
    let cov = cov.ok_or_else(|| Error::Schema("summary is missing a cov line".into()))?;
    let p = theta.len();
    if cov.len() != p * p {
        return Err(Error::Schema(format!(
            "cov has {} values, expected {} for {p} parameters",
            cov.len(),
            p * p
        )));
    }
    let transform = TransformSpec::parse(
        transform_name.as_deref().unwrap_or("identity"),
        transform_indices,
    )
    .map_err(|e| Error::Schema(format!("summary transform: {e}")))?;
    let summary = ExternalSummary {
        family,
        n,
        theta: DVector::from_vec(theta),
        cov: SymMatrix::new(DMatrix::from_row_slice(p, p, &cov))?,
        transform,
    };
    summary.validate()?;
    Ok(summary)
}

pub fn read_external_summary(path: &Path) -> Result<ExternalSummary> {
    let text = std::fs::read_to_string(path)?;
    external_summary_from_str(&text)
}

/// CSV of point estimates per coordinate with the shrinkage diagnostics.
pub fn fuse_csv(cond: &ConditionalResult, shrink: &ShrinkageResult) -> String {
    let mut out = String::from("coordinate,internal,conditional,js,weight,tau_star,d_ratio\n");
    for i in 0..cond.gamma_internal.len() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{},{}",
            fmt_float(cond.gamma_internal[i]),
            fmt_float(cond.gamma_cond[i]),
            fmt_float(shrink.gamma_js[i]),
            fmt_float(shrink.weight),
            fmt_float(shrink.tau_star),
            fmt_float(shrink.d_ratio),
        );
    }
    out
}

/// CSV of bootstrap percentile intervals, one row per estimator and
/// coordinate.
pub fn bootstrap_csv(out: &BootstrapOutput) -> String {
    let mut text = String::from("estimator,coordinate,point,lower,upper,n_failed\n");
    for est in out.estimators() {
        for i in 0..est.point.len() {
            let _ = writeln!(
                text,
                "{},{i},{},{},{},{}",
                est.label,
                fmt_float(est.point[i]),
                fmt_float(est.lower[i]),
                fmt_float(est.upper[i]),
                out.n_failed,
            );
        }
    }
    text
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

/// Aggregated scenario report CSV. The `offset` column holds the grid
/// value, which is the residual correlation for the surrogate scenario.
pub fn report_csv(report: &ScenarioReport) -> String {
    let mut out = String::from(
        "scenario,offset,estimator,rel_pmse_mean,rel_pmse_se,coverage_all,coverage_external_params,coverage_other_params,mean_js_weight,n_failed\n",
    );
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            row.scenario,
            fmt_float(row.grid),
            row.estimator,
            fmt_float(row.rel_pmse_mean),
            fmt_float(row.rel_pmse_se),
            fmt_opt(row.coverage_all),
            fmt_opt(row.coverage_external),
            fmt_opt(row.coverage_other),
            fmt_float(row.mean_js_weight),
            row.n_failed,
        );
    }
    out
}

/// Per-replicate scenario rows.
pub fn raw_csv(report: &ScenarioReport) -> String {
    let mut out = String::from("scenario,offset,replicate,estimator,pmse,js_weight\n");
    for row in &report.raw {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.scenario,
            fmt_float(row.grid),
            row.replicate,
            row.estimator,
            fmt_float(row.pmse),
            fmt_float(row.js_weight),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn sample_summary() -> ExternalSummary {
        ExternalSummary {
            family: FamilyId::GlmLogistic,
            n: 12345,
            theta: DVector::from_vec(vec![1.0 / 3.0, -2.0e-13, 7.25]),
            cov: SymMatrix::new(DMatrix::from_row_slice(
                3,
                3,
                &[0.5, 0.01, 0.0, 0.01, 1.0 / 7.0, 0.002, 0.0, 0.002, 1.0e-4],
            ))
            .unwrap(),
            transform: TransformSpec::subset(vec![1, 2]),
        }
    }

    #[test]
    fn summary_round_trip_is_bit_exact() {
        let s = sample_summary();
        let back = external_summary_from_str(&external_summary_to_string(&s)).unwrap();
        assert_eq!(back.family, s.family);
        assert_eq!(back.n, s.n);
        assert_eq!(back.transform, s.transform);
        assert_eq!(back.theta, s.theta);
        assert_eq!(back.cov.as_matrix(), s.cov.as_matrix());
    }

    #[test]
    fn summary_parser_skips_comments_and_blank_lines() {
        let text = format!("# produced by a test\n\n{}", external_summary_to_string(&sample_summary()));
        assert!(external_summary_from_str(&text).is_ok());
    }

    #[test]
    fn summary_parser_names_the_offending_line() {
        let text = "family linear\nn 10\nbogus 1 2 3\ntheta 0.0\ncov 1.0\n";
        let err = external_summary_from_str(text).unwrap_err();
        assert!(err.to_string().contains("line 3"));
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn summary_parser_checks_cov_block_size() {
        let text = "family linear\nn 10\ntheta 0.0 1.0\ncov 1.0 0.0 1.0\n";
        let err = external_summary_from_str(text).unwrap_err();
        assert!(err.to_string().contains("expected 4"));
    }

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn xy_roles() -> ColumnRoles {
        ColumnRoles {
            y: "y".into(),
            y2: None,
            x: vec!["x1".into()],
            z: vec!["z1".into()],
            treatment: None,
            propensity: None,
            missing: None,
            weights: None,
            intercept: true,
        }
    }

    #[test]
    fn dataset_csv_reads_roles_and_prepends_intercept() {
        let f = write_csv("y,x1,z1,junk\n1.5,2.0,3.0,9\n-0.5,0.0,1.0,9\n");
        let data = read_dataset_csv(f.path(), &xy_roles()).unwrap();
        assert_eq!(data.n(), 2);
        assert_eq!(data.x().ncols(), 2);
        assert_eq!(data.x()[(0, 0)], 1.0);
        assert_eq!(data.x()[(1, 1)], 0.0);
        assert_eq!(data.z().unwrap()[(0, 0)], 3.0);
    }

    #[test]
    fn missing_column_error_names_the_column() {
        let f = write_csv("y,x2\n1.0,2.0\n");
        let err = read_dataset_csv(f.path(), &xy_roles()).unwrap_err();
        assert!(err.to_string().contains("\"x1\""));
    }

    #[test]
    fn bad_cell_error_carries_the_line_number() {
        let f = write_csv("y,x1,z1\n1.0,2.0,3.0\n1.0,oops,3.0\n");
        let err = read_dataset_csv(f.path(), &xy_roles()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "got: {msg}");
        assert!(msg.contains("oops"));
    }

    #[test]
    fn intercept_name_collision_is_rejected() {
        let f = write_csv("y,x1,z1,intercept\n1.0,2.0,3.0,1.0\n");
        let err = read_dataset_csv(f.path(), &xy_roles()).unwrap_err();
        assert!(err.to_string().contains("intercept"));
    }

    #[test]
    fn float_format_round_trips_f64() {
        for v in [1.0 / 3.0, -2.2250738585072014e-308, 1.7976931348623157e308, 0.1 + 0.2] {
            assert_eq!(fmt_float(v).parse::<f64>().unwrap(), v);
        }
    }
}
