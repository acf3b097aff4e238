use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::array::FeatureArray;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable array together with its gradient slot and Adam moments.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: FeatureArray,
    pub grad: FeatureArray,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

/// Named, shaped learnable arrays. Names are unique; ids are insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParameterSet {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
}

/// How a fresh parameter is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
    Normal(f64),
    Const(f64),
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        rng: &mut impl Rng,
    ) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            }
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::Const(c) => vec![c; n],
        };
        self.insert(name, FeatureArray::new(shape.to_vec(), values).expect("shape"))
    }

    pub fn insert(&mut self, name: String, value: FeatureArray) -> ParamId {
        let id = self.entries.len();
        let n = value.len();
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            grad: FeatureArray::zeros(value.shape()),
            value,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
        });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &FeatureArray {
        &self.entries[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.values_mut().fill(0.0);
        }
    }

    /// Copies values for every name both sets share, checking shapes.
    pub fn copy_shared_from(&mut self, other: &ParameterSet) -> Result<usize> {
        let mut copied = 0;
        for e in &mut self.entries {
            if let Some(&j) = other.index.get(&e.name) {
                let src = &other.entries[j].value;
                if src.shape() != e.value.shape() {
                    return Err(Error::Shape(format!(
                        "parameter {} has shape {:?} here and {:?} in source",
                        e.name,
                        e.value.shape(),
                        src.shape()
                    )));
                }
                e.value = src.clone();
                copied += 1;
            }
        }
        Ok(copied)
    }

    /// Order-sensitive FNV-1a digest over names and value bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for e in &self.entries {
            eat(e.name.as_bytes());
            for v in e.value.values() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}
