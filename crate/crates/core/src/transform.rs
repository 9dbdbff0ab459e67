//! Transformations of the external-model parameter vector.
//!
//! The two studies are compared on a transformed scale h(theta): the
//! identity when the external study reports the full parameter vector, a
//! subset when only some coordinates are shared, or coordinate ratios when
//! only relative effects transport. Named transforms are built from a
//! [`TransformSpec`] at runtime; arbitrary smooth maps can be supplied as
//! [`CustomTransform`] closures, differentiated by central differences.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative step for finite-difference gradients of custom transforms.
pub const FD_STEP_SCALE: f64 = 1e-6;

/// Ratio transforms reject denominators below this magnitude.
pub const RATIO_DENOM_MIN: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformKind {
    Identity,
    Subset,
    Ratio,
}

/// Serializable transform selector. `indices` are 0-based coordinates of
/// the input vector: the kept coordinates for `subset`; for `ratio` the
/// first index is the denominator and the rest are numerators (all other
/// coordinates, in order, when only the denominator is given).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub indices: Vec<usize>,
}

impl TransformSpec {
    pub fn identity() -> Self {
        TransformSpec { kind: TransformKind::Identity, indices: Vec::new() }
    }

    pub fn subset(indices: Vec<usize>) -> Self {
        TransformSpec { kind: TransformKind::Subset, indices }
    }

    pub fn ratio(indices: Vec<usize>) -> Self {
        TransformSpec { kind: TransformKind::Ratio, indices }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            TransformKind::Identity => "identity",
            TransformKind::Subset => "subset",
            TransformKind::Ratio => "ratio",
        }
    }

    pub fn parse(name: &str, indices: Vec<usize>) -> Result<Self> {
        let kind = match name {
            "identity" => TransformKind::Identity,
            "subset" => TransformKind::Subset,
            "ratio" => TransformKind::Ratio,
            other => return Err(Error::Config(format!("unknown transform {other:?}"))),
        };
        Ok(TransformSpec { kind, indices })
    }
}

/// A smooth map h from the external parameter space to the comparison
/// scale, with its Jacobian laid out input_dim x output_dim (gradient of
/// output j in column j).
pub trait Transform: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>>;
    fn gradient(&self, v: &DVector<f64>) -> Result<DMatrix<f64>>;
}

fn check_input(dim: usize, v: &DVector<f64>) -> Result<()> {
    if v.len() != dim {
        return Err(Error::Schema(format!("transform expects {dim} coordinates, got {}", v.len())));
    }
    Ok(())
}

struct Identity {
    dim: usize,
}

impl Transform for Identity {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_input(self.dim, v)?;
        Ok(v.clone())
    }

    fn gradient(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_input(self.dim, v)?;
        Ok(DMatrix::identity(self.dim, self.dim))
    }
}

struct Subset {
    dim: usize,
    keep: Vec<usize>,
}

impl Transform for Subset {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.keep.len()
    }

    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_input(self.dim, v)?;
        Ok(DVector::from_iterator(self.keep.len(), self.keep.iter().map(|&i| v[i])))
    }

    fn gradient(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_input(self.dim, v)?;
        let mut g = DMatrix::zeros(self.dim, self.keep.len());
        for (j, &i) in self.keep.iter().enumerate() {
            g[(i, j)] = 1.0;
        }
        Ok(g)
    }
}

struct Ratio {
    dim: usize,
    denom: usize,
    numer: Vec<usize>,
}

impl Ratio {
    fn denom_value(&self, v: &DVector<f64>) -> Result<f64> {
        let d = v[self.denom];
        if d.abs() < RATIO_DENOM_MIN {
            return Err(Error::DegenerateTransform(format!(
                "ratio denominator coordinate {} is {d:.3e}, below {RATIO_DENOM_MIN:.0e}",
                self.denom
            )));
        }
        Ok(d)
    }
}

impl Transform for Ratio {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.numer.len()
    }

    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_input(self.dim, v)?;
        let d = self.denom_value(v)?;
        Ok(DVector::from_iterator(self.numer.len(), self.numer.iter().map(|&i| v[i] / d)))
    }

    fn gradient(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_input(self.dim, v)?;
        let d = self.denom_value(v)?;
        let mut g = DMatrix::zeros(self.dim, self.numer.len());
        for (j, &i) in self.numer.iter().enumerate() {
            g[(i, j)] += 1.0 / d;
            g[(self.denom, j)] += -v[i] / (d * d);
        }
        Ok(g)
    }
}

/// User-supplied map with finite-difference gradient. The closure must be
/// deterministic and defined near the evaluation points.
pub struct CustomTransform {
    input_dim: usize,
    output_dim: usize,
    f: Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>,
}

impl CustomTransform {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        f: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        CustomTransform { input_dim, output_dim, f: Box::new(f) }
    }
}

impl Transform for CustomTransform {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_input(self.input_dim, v)?;
        let out = (self.f)(v);
        if out.len() != self.output_dim {
            return Err(Error::Schema(format!(
                "custom transform returned {} coordinates, declared {}",
                out.len(),
                self.output_dim
            )));
        }
        for (i, val) in out.iter().enumerate() {
            if !val.is_finite() {
                return Err(Error::DegenerateTransform(format!(
                    "custom transform produced non-finite output at coordinate {i}"
                )));
            }
        }
        Ok(out)
    }

    fn gradient(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_input(self.input_dim, v)?;
        let mut g = DMatrix::zeros(self.input_dim, self.output_dim);
        for i in 0..self.input_dim {
            let h = FD_STEP_SCALE * (1.0 + v[i].abs());
            let mut hi = v.clone();
            let mut lo = v.clone();
            hi[i] += h;
            lo[i] -= h;
            let fh = self.apply(&hi)?;
            let fl = self.apply(&lo)?;
            for j in 0..self.output_dim {
                g[(i, j)] = (fh[j] - fl[j]) / (2.0 * h);
            }
        }
        Ok(g)
    }
}

/// Build the named transform for an input of the given dimension.
pub fn build(spec: &TransformSpec, input_dim: usize) -> Result<Box<dyn Transform>> {
    if input_dim == 0 {
        return Err(Error::Config("transform input dimension is zero".into()));
    }
    for &i in &spec.indices {
        if i >= input_dim {
            return Err(Error::Config(format!(
                "transform index {i} out of range for {input_dim} coordinates"
            )));
        }
    }
    match spec.kind {
        TransformKind::Identity => {
            if !spec.indices.is_empty() {
                return Err(Error::Config("identity transform takes no indices".into()));
            }
            Ok(Box::new(Identity { dim: input_dim }))
        }
        TransformKind::Subset => {
            if spec.indices.is_empty() {
                return Err(Error::Config("subset transform requires at least one index".into()));
            }
            let mut seen = vec![false; input_dim];
            for &i in &spec.indices {
                if seen[i] {
                    return Err(Error::Config(format!("subset transform repeats index {i}")));
                }
                seen[i] = true;
            }
            Ok(Box::new(Subset { dim: input_dim, keep: spec.indices.clone() }))
        }
        TransformKind::Ratio => {
            if spec.indices.is_empty() {
                return Err(Error::Config(
                    "ratio transform requires at least a denominator index".into(),
                ));
            }
            let denom = spec.indices[0];
            let numer: Vec<usize> = if spec.indices.len() == 1 {
                (0..input_dim).filter(|&i| i != denom).collect()
            } else {
                let rest = &spec.indices[1..];
                if rest.contains(&denom) {
                    return Err(Error::Config(
                        "ratio transform lists the denominator as a numerator".into(),
                    ));
                }
                rest.to_vec()
            };
            if numer.is_empty() {
                return Err(Error::Config("ratio transform has no numerator coordinates".into()));
            }
            Ok(Box::new(Ratio { dim: input_dim, denom, numer }))
        }
    }
}
