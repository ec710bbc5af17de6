use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// A named tensor of rank 1 or 2, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Ordered named parameter blocks with a flat-vector view.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    blocks: Vec<ParamBlock>,
}

impl ParamStore {
    pub fn new(blocks: Vec<ParamBlock>) -> Result<Self> {
        let mut names = BTreeSet::new();
        for b in &blocks {
            if !names.insert(b.name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate parameter block `{}`", b.name)));
            }
            if b.shape.is_empty() || b.shape.len() > 2 || b.shape.iter().product::<usize>() != b.values.len() {
                return Err(Error::Shape(format!(
                    "block `{}` has shape {:?} but {} values",
                    b.name,
                    b.shape,
                    b.values.len()
                )));
            }
            if b.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("block `{}` holds a non-finite value", b.name)));
            }
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut ParamBlock> {
        self.blocks.iter_mut().find(|b| b.name == name)
    }

    /// Total number of scalars.
    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.values.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for b in &self.blocks {
            out.extend_from_slice(&b.values);
        }
        out
    }

    /// A store with this layout holding `flat`.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.set_flat(flat)?;
        Ok(out)
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Shape(format!("{} values for a store of {}", flat.len(), self.len())));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite parameter value".into()));
        }
        let mut off = 0;
        for b in &mut self.blocks {
            let n = b.values.len();
            b.values.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockInit {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockPlan {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: BlockInit,
}

impl BlockPlan {
    pub fn matrix(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self { name: name.into(), shape: vec![rows, cols], init: BlockInit::Glorot }
    }

    pub fn bias(name: impl Into<String>, len: usize) -> Self {
        Self { name: name.into(), shape: vec![len], init: BlockInit::Zeros }
    }

    /// Glorot bound for a `[rows, cols]` block (`fan_out = rows`, `fan_in = cols`).
    pub fn bound(&self) -> f64 {
        let fan: usize = self.shape.iter().sum();
        libm::sqrt(6.0 / fan as f64)
    }
}

/// Samples a store from `plan`; deterministic in `seed`.
pub fn init_params(plan: &[BlockPlan], seed: u64) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = plan
        .iter()
        .map(|p| {
            let n: usize = p.shape.iter().product();
            let values = match p.init {
                BlockInit::Zeros => vec![0.0; n],
                BlockInit::Glorot => {
                    let bound = p.bound();
                    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
                }
            };
            ParamBlock { name: p.name.clone(), shape: p.shape.clone(), values }
        })
        .collect();
    ParamStore::new(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan() -> Vec<BlockPlan> {
        vec![BlockPlan::matrix("w", 4, 2), BlockPlan::bias("b", 4), BlockPlan::matrix("u", 3, 7)]
    }

    #[test]
    fn glorot_bounds() {
        assert_eq!(BlockPlan::matrix("w", 4, 2).bound(), 1.0);
        let store = init_params(&plan(), 5).unwrap();
        for (b, p) in store.blocks().iter().zip(plan()) {
            match p.init {
                BlockInit::Zeros => assert!(b.values.iter().all(|&v| v == 0.0)),
                BlockInit::Glorot => assert!(b.values.iter().all(|v| v.abs() <= p.bound())),
            }
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(init_params(&plan(), 5).unwrap(), init_params(&plan(), 5).unwrap());
        assert_ne!(init_params(&plan(), 5).unwrap(), init_params(&plan(), 6).unwrap());
    }

    #[test]
    fn flatten_roundtrip() {
        let store = init_params(&plan(), 1).unwrap();
        assert_eq!(store.len(), 8 + 4 + 21);
        let flat = store.flatten();
        assert_eq!(store.unflatten(&flat).unwrap(), store);
        assert!(store.unflatten(&flat[1..]).is_err());
    }

    #[test]
    fn rejects_bad_blocks() {
        let b = ParamBlock { name: "a".into(), shape: vec![2], values: vec![1.0] };
        assert!(ParamStore::new(vec![b]).is_err());
        let b = ParamBlock { name: "a".into(), shape: vec![1], values: vec![f64::NAN] };
        assert!(ParamStore::new(vec![b]).is_err());
        let b = ParamBlock { name: "a".into(), shape: vec![1], values: vec![0.0] };
        assert!(ParamStore::new(vec![b.clone(), b]).is_err());
    }
}
