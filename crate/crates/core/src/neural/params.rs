use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Version tag written into every serialized parameter document.
pub const PARAM_FORMAT_VERSION: u32 = 1;

/// Named trainable tensors in a fixed insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter and returns its index.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::Argument(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        self.names.push(name);
        self.tensors.push(value);
        Ok(self.tensors.len() - 1)
    }

    /// Adds a `rows x cols` tensor drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> Result<usize> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.add_bounded(name, rows, cols, bound, rng)
    }

    /// Adds a tensor drawn uniformly from `[-bound, bound]`.
    pub fn add_bounded<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut R,
    ) -> Result<usize> {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.add(name, Tensor::from_vec(rows, cols, data)?)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    /// Mutable access to the values of parameter `i`; its shape stays fixed.
    pub fn values_mut(&mut self, i: usize) -> &mut [f64] {
        self.tensors[i].data_mut()
    }

    /// Replaces the values of parameter `name`, which must keep its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::Argument(format!("no parameter `{name}`")))?;
        if self.tensors[i].shape() != value.shape() {
            return Err(Error::Argument(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                self.tensors[i].shape(),
                value.shape()
            )));
        }
        self.tensors[i] = value;
        Ok(())
    }

    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn map_values(&mut self, f: impl Fn(f64) -> f64) {
        for t in &mut self.tensors {
            for x in t.data_mut() {
                *x = f(*x);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Checks that `other` has the same names and shapes.
    pub fn check_compatible(&self, other: &ParameterSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Argument("parameter names differ".into()));
        }
        for (n, (a, b)) in self
            .names
            .iter()
            .zip(self.tensors.iter().zip(&other.tensors))
        {
            if a.shape() != b.shape() {
                return Err(Error::Argument(format!(
                    "parameter `{n}` has shape {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// Records every parameter as a gradient-receiving leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    /// Records every parameter as a constant (no gradients flow back).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|t| tape.constant(t.clone()))
                .collect(),
        }
    }

    pub fn to_document(&self) -> ParamDocument {
        ParamDocument {
            format_version: PARAM_FORMAT_VERSION,
            params: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(n, t)| ParamEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &ParamDocument) -> Result<Self> {
        if doc.format_version != PARAM_FORMAT_VERSION {
            return Err(Error::format(
                "format_version",
                format!(
                    "unsupported version {} (expected {PARAM_FORMAT_VERSION})",
                    doc.format_version
                ),
            ));
        }
        let mut set = ParameterSet::new();
        for entry in &doc.params {
            let field = format!("params.{}", entry.name);
            let [rows, cols] = entry.shape[..] else {
                return Err(Error::format(field, "shape must have two dimensions"));
            };
            let expected = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::format(&field, "shape overflows"))?;
            if entry.values.len() != expected {
                return Err(Error::format(
                    field,
                    format!("{} values for shape {rows}x{cols}", entry.values.len()),
                ));
            }
            if entry.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(field, "non-finite value"));
            }
            let t = Tensor::from_vec(rows, cols, entry.values.clone())?;
            set.add(entry.name.clone(), t)
                .map_err(|e| Error::format("params", e.to_string()))?;
        }
        Ok(set)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("parameters serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ParamDocument =
            serde_json::from_str(text).map_err(|e| Error::format("parameters", e.to_string()))?;
        Self::from_document(&doc)
    }
}

/// Serialized form of a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamDocument {
    pub format_version: u32,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Tape variables standing for the parameters of one [`ParameterSet`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, i: usize) -> Var {
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradient for every parameter, zero for those the root did not reach.
    pub fn gradients(&self, grads: &Gradients, params: &ParameterSet) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(params.tensors())
            .map(|(v, t)| {
                grads
                    .get(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
            })
            .collect()
    }
}
