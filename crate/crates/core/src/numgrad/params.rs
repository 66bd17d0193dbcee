//! Trainable parameters partitioned into shared and per-head groups.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Shared,
    Pred,
    Recon,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Shared, Partition::Pred, Partition::Recon];
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Shared => "shared",
            Partition::Pred => "pred",
            Partition::Recon => "recon",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Uniform {
        fan_in: usize,
    },
    /// Uniform like a weight, redrawn if any row comes out all-zero.
    Embedding {
        fan_in: usize,
    },
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub partition: Partition,
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn weight(partition: Partition, name: impl Into<String>, shape: &[usize], fan_in: usize) -> Self {
        ParamSpec {
            partition,
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Uniform { fan_in },
        }
    }

    pub fn bias(partition: Partition, name: impl Into<String>, len: usize) -> Self {
        ParamSpec {
            partition,
            name: name.into(),
            shape: vec![len],
            init: Init::Zeros,
        }
    }
}

/// Named tensors grouped by partition. Names are unique across partitions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    groups: BTreeMap<Partition, BTreeMap<String, Tensor>>,
    rng_seed: u64,
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        ParamStore {
            groups: BTreeMap::new(),
            rng_seed,
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn insert(&mut self, partition: Partition, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.partition_of(&name).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        self.groups.entry(partition).or_default().insert(name, value);
        Ok(())
    }

    pub fn partition_of(&self, name: &str) -> Option<Partition> {
        self.groups.iter().find(|(_, g)| g.contains_key(name)).map(|(p, _)| *p)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.groups.values().find_map(|g| g.get(name))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.groups.values_mut().find_map(|g| g.get_mut(name))
    }

    pub fn has_partition(&self, partition: Partition) -> bool {
        self.groups.get(&partition).is_some_and(|g| !g.is_empty())
    }

    pub fn group(&self, partition: Partition) -> impl Iterator<Item = (&str, &Tensor)> {
        self.groups
            .get(&partition)
            .into_iter()
            .flatten()
            .map(|(k, v)| (k.as_str(), v))
    }

    /// All parameters in partition order, then name order.
    pub fn iter(&self) -> impl Iterator<Item = (Partition, &str, &Tensor)> {
        self.groups
            .iter()
            .flat_map(|(p, g)| g.iter().map(move |(k, v)| (*p, k.as_str(), v)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (Partition, &str, &mut Tensor)> {
        self.groups
            .iter_mut()
            .flat_map(|(p, g)| g.iter_mut().map(move |(k, v)| (*p, k.as_str(), v)))
    }

    pub fn len(&self) -> usize {
        self.groups.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_scalars(&self) -> usize {
        self.iter().map(|(_, _, t)| t.len()).sum()
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Result<Bound<'t>> {
        let mut vars = BTreeMap::new();
        for (p, name, t) in self.iter() {
            vars.insert(name.to_owned(), (p, tape.leaf(t.clone())?));
        }
        Ok(Bound { vars })
    }
}

/// Draws a fresh store from layer specs. Reproducible from `seed`.
pub fn init_params(specs: &[ParamSpec], seed: u64) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new(seed);
    for spec in specs {
        if spec.shape.is_empty() || spec.shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "parameter `{}` has degenerate shape {:?}",
                spec.name, spec.shape
            )));
        }
        let len: usize = spec.shape.iter().product();
        let data = match spec.init {
            Init::Zeros => vec![0.0; len],
            Init::Uniform { fan_in } => uniform(&mut rng, len, fan_in)?,
            Init::Embedding { fan_in } => {
                let cols = *spec.shape.last().unwrap_or(&1);
                let mut data = uniform(&mut rng, len, fan_in)?;
                let bound = 1.0 / (fan_in as f64).sqrt();
                for row in data.chunks_mut(cols) {
                    while row.iter().all(|v| v.abs() < 1e-12) {
                        for v in row.iter_mut() {
                            *v = rng.random_range(-bound..=bound);
                        }
                    }
                }
                data
            }
        };
        store.insert(
            spec.partition,
            spec.name.clone(),
            Tensor::new(spec.shape.clone(), data)?,
        )?;
    }
    Ok(store)
}

fn uniform(rng: &mut ChaCha8Rng, len: usize, fan_in: usize) -> Result<Vec<f64>> {
    if fan_in == 0 {
        return Err(Error::InvalidArgument("fan_in must be positive".into()));
    }
    let bound = 1.0 / (fan_in as f64).sqrt();
    Ok((0..len).map(|_| rng.random_range(-bound..=bound)).collect())
}

/// Parameters recorded as leaves on one tape.
pub struct Bound<'t> {
    vars: BTreeMap<String, (Partition, Var<'t>)>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::UnknownParam(name.to_owned()))
    }

    /// Extracts ∂loss/∂param for every bound parameter (zero when unused).
    pub fn grads(&self, grads: &Gradients) -> ParamGrads {
        let mut groups: BTreeMap<Partition, BTreeMap<String, Tensor>> = BTreeMap::new();
        for (name, (p, v)) in &self.vars {
            let mut g = grads.wrt(*v);
            if g.shape() != v.shape().as_slice() {
                g = Tensor::zeros(&v.shape());
            }
            groups.entry(*p).or_default().insert(name.clone(), g);
        }
        ParamGrads { groups }
    }
}

/// Gradient tensors keyed like a [`ParamStore`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGrads {
    groups: BTreeMap<Partition, BTreeMap<String, Tensor>>,
}

impl ParamGrads {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.groups.values().find_map(|g| g.get(name))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Partition, &str, &Tensor)> {
        self.groups
            .iter()
            .flat_map(|(p, g)| g.iter().map(move |(k, v)| (*p, k.as_str(), v)))
    }

    pub fn sq_norm(&self) -> f64 {
        self.iter().map(|(_, _, t)| t.sq_norm()).sum()
    }

    pub fn partition_sq_norm(&self, partition: Partition) -> f64 {
        self.iter()
            .filter(|(p, _, _)| *p == partition)
            .map(|(_, _, t)| t.sq_norm())
            .sum()
    }

    /// `self * a + other * b`, keyed by name.
    pub fn combine(&self, a: f64, other: &ParamGrads, b: f64) -> ParamGrads {
        let mut out = self.clone();
        for g in out.groups.values_mut() {
            for (name, t) in g.iter_mut() {
                *t = t.scaled(a);
                if let Some(o) = other.get(name) {
                    t.add_scaled(o, b);
                }
            }
        }
        out
    }

    /// Flattens all gradients in a stable order.
    pub fn flatten(&self) -> Vec<f64> {
        self.iter().flat_map(|(_, _, t)| t.data().iter().copied()).collect()
    }
}
