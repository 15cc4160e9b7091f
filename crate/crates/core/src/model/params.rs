//! The canonical parameter inventory of a model level.
//!
//! Every tensor is addressed by a stable name (`emb`, `layers.3.wq`, ...)
//! and every dimension is tagged with the [`Axis`] it lives on. The axis
//! tags are what the projection operators use to pick a width map for each
//! dimension.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::{Element, Tensor};

/// The space a tensor dimension indexes into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    /// The residual stream (hidden width `E`).
    Residual,
    /// Query/key space, `H` blocks of `D`.
    QueryKey,
    /// Value space, `H` blocks of `D`.
    Value,
    /// FFN inner width (`ffn_mult * E`).
    FfnInner,
    Vocab,
    Position,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Shape and axis tags for one named tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    /// Per-layer tensors carry their layer index and local name.
    pub layer: Option<usize>,
    pub local: &'static str,
    pub axes: Vec<Axis>,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Local names of the per-layer tensors with their axes and init rule.
///
/// `wv` reads the residual stream but is wired with the query/key input map
/// (`F_V_in = F_QK_out`); the mapping validation requires the query/key and
/// residual maps to agree so both views coincide.
pub const LAYER_TENSORS: &[(&str, &[Axis], Init)] = &[
    ("wq", &[Axis::Residual, Axis::QueryKey], Init::Normal),
    ("wk", &[Axis::Residual, Axis::QueryKey], Init::Normal),
    ("wv", &[Axis::QueryKey, Axis::Value], Init::Normal),
    ("wo", &[Axis::Value, Axis::Residual], Init::Normal),
    ("bq", &[Axis::QueryKey], Init::Zeros),
    ("bk", &[Axis::QueryKey], Init::Zeros),
    ("bv", &[Axis::Value], Init::Zeros),
    ("bo", &[Axis::Residual], Init::Zeros),
    ("ln1.w", &[Axis::Residual], Init::Ones),
    ("ln1.b", &[Axis::Residual], Init::Zeros),
    ("ln2.w", &[Axis::Residual], Init::Ones),
    ("ln2.b", &[Axis::Residual], Init::Zeros),
    ("fc1.w", &[Axis::Residual, Axis::FfnInner], Init::Normal),
    ("fc1.b", &[Axis::FfnInner], Init::Zeros),
    ("fc2.w", &[Axis::FfnInner, Axis::Residual], Init::Normal),
    ("fc2.b", &[Axis::Residual], Init::Zeros),
];

pub const GLOBAL_TENSORS: &[(&str, &[Axis], Init)] = &[
    ("emb", &[Axis::Vocab, Axis::Residual], Init::Normal),
    ("pos_emb", &[Axis::Position, Axis::Residual], Init::Normal),
    ("head", &[Axis::Residual, Axis::Vocab], Init::Normal),
    ("lnf.w", &[Axis::Residual], Init::Ones),
    ("lnf.b", &[Axis::Residual], Init::Zeros),
];

pub fn layer_name(layer: usize, local: &str) -> String {
    format!("layers.{layer}.{local}")
}

pub fn axis_len(config: &ModelConfig, axis: Axis) -> usize {
    match axis {
        Axis::Residual | Axis::QueryKey | Axis::Value => config.hidden,
        Axis::FfnInner => config.ffn_hidden(),
        Axis::Vocab => config.vocab,
        Axis::Position => config.max_seq,
    }
}

/// The full, ordered tensor inventory implied by `config`.
pub fn param_specs(config: &ModelConfig) -> Vec<ParamSpec> {
    let spec = |name: String, layer, local, axes: &[Axis], init| ParamSpec {
        name,
        layer,
        local,
        shape: axes.iter().map(|&a| axis_len(config, a)).collect(),
        axes: axes.to_vec(),
        init,
    };
    let mut out: Vec<ParamSpec> = GLOBAL_TENSORS
        .iter()
        .map(|&(local, axes, init)| spec(local.to_string(), None, local, axes, init))
        .collect();
    for l in 0..config.num_layers {
        for &(local, axes, init) in LAYER_TENSORS {
            out.push(spec(layer_name(l, local), Some(l), local, axes, init));
        }
    }
    out
}

pub fn global_spec(name: &str) -> Option<&'static [Axis]> {
    GLOBAL_TENSORS
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|(_, axes, _)| *axes)
}

/// Closed-form parameter count.
pub fn param_count(config: &ModelConfig) -> usize {
    param_specs(config)
        .iter()
        .map(|s| s.shape.iter().product::<usize>())
        .sum()
}

/// Named parameter tensors of one model level.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Shape(format!("missing tensor {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Shape(format!("missing tensor {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Checks that the name set and shapes are exactly those implied by `config`.
    pub fn check_config(&self, config: &ModelConfig) -> Result<()> {
        let specs = param_specs(config);
        if specs.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors for config, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for s in &specs {
            let t = self.get(&s.name)?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Shape(format!(
                    "{}: shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
        }
        Ok(())
    }

    /// Checks that both sets hold the same names with identical shapes.
    pub fn check_compatible(&self, other: &ParamSet<T>) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Shape(format!(
                "parameter sets hold {} and {} tensors",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for (name, t) in &self.tensors {
            let o = other.get(name)?;
            if o.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "{name}: shapes {:?} and {:?} differ",
                    t.shape(),
                    o.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in &self.tensors {
            t.check_finite(name)?;
        }
        Ok(())
    }

    /// Largest element-wise absolute difference over all tensors.
    pub fn max_abs_diff(&self, other: &ParamSet<T>) -> Result<f64> {
        self.check_compatible(other)?;
        let mut m = 0.0f64;
        for (name, t) in &self.tensors {
            m = m.max(t.max_abs_diff(other.get(name)?)?);
        }
        Ok(m)
    }

    /// Per-layer tensors with the given local name, ordered by layer.
    pub fn layer_tensors(&self, config: &ModelConfig, local: &str) -> Result<Vec<&Tensor<T>>> {
        (0..config.num_layers)
            .map(|l| self.get(&layer_name(l, local)))
            .collect()
    }
}

/// Standard deviation of the truncated-normal weight init.
pub const INIT_STD: f64 = 0.02;

/// Weights from a normal with std 0.02 truncated at two standard
/// deviations, biases zero and layernorm scales one. Deterministic per seed.
pub fn init_params<T: Element>(config: &ModelConfig, seed: u64) -> Result<ParamSet<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    let mut params = ParamSet::new();
    for spec in param_specs(config) {
        let n: usize = spec.shape.iter().product();
        let data: Vec<T> = match spec.init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Normal => (0..n)
                .map(|_| loop {
                    let v: f64 = normal.sample(&mut rng);
                    if v.abs() <= 2.0 * INIT_STD {
                        break T::from_f64(v);
                    }
                })
                .collect(),
        };
        params.insert(spec.name.clone(), Tensor::new(spec.shape.clone(), data)?);
    }
    Ok(params)
}
