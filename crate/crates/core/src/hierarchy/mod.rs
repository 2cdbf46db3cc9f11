//! Hierarchical multi-label targets: junta hierarchies over a proximity
//! structure and the brain-dump circuit.

pub mod braindump;
pub mod dataset;
pub mod junta;
pub mod proximity;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use braindump::{alpha_dk, alpha_dk_exact, central_binomial_ratio, gen_braindump, BrainDumpModel, SignedSubset};
pub use dataset::{sample_dataset, validate_braindump, validate_hierarchy, Dataset, DatasetMeta, HierarchyReport, LabelCheck, Sample};
pub use junta::{default_level_sizes, gen_junta_hierarchy, junta_xi, Hierarchy, LabelDef};
pub use proximity::{make_proximity, ProximityKind, ProximityMap, ProximitySpec};

use crate::error::{check_dim, Error, Result};
use crate::poly::table_index;
use crate::rng::Rng;

/// `sign(0) = +1`
#[inline]
pub fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub(crate) fn sign_check(x: &[f64]) -> Result<()> {
    match x.iter().find(|&&v| v != 1.0 && v != -1.0) {
        Some(&v) => Err(Error::Domain(format!("expected a +-1 entry, got {v}"))),
        None => Ok(()),
    }
}

/// A boolean function of `deps.len()` coordinates, as a truth table indexed
/// by [`table_index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Junta {
    pub deps: Vec<usize>,
    pub table: Vec<f64>,
}

impl Junta {
    pub fn eval(&self, v: &[f64]) -> f64 {
        let mut idx = 0;
        for (b, &i) in self.deps.iter().enumerate() {
            if v[i] >= 0.0 {
                idx |= 1 << b;
            }
        }
        self.table[idx]
    }

    pub fn eval_pattern(&self, z: &[f64]) -> f64 {
        self.table[table_index(z)]
    }
}

/// `k` distinct indices from `0..n`, sorted.
pub(crate) fn random_subset(rng: &mut Rng, n: usize, k: usize) -> Vec<usize> {
    let mut v = sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

/// Uniform non-constant `+-1` truth table on `k` inputs (rejection sampling).
pub(crate) fn random_table(rng: &mut Rng, k: usize) -> Vec<f64> {
    loop {
        let t: Vec<f64> = (0..1usize << k).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        if t.iter().any(|&v| v != t[0]) {
            return t;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    Junta(Hierarchy),
    BrainDump(BrainDumpModel),
}

impl Target {
    pub fn generator_name(&self) -> &'static str {
        match self {
            Target::Junta(_) => "junta",
            Target::BrainDump(_) => "braindump",
        }
    }

    pub fn d(&self) -> usize {
        match self {
            Target::Junta(h) => h.d,
            Target::BrainDump(m) => m.d,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Target::Junta(h) => h.n,
            Target::BrainDump(m) => m.n(),
        }
    }

    pub fn r(&self) -> usize {
        match self {
            Target::Junta(h) => h.r(),
            Target::BrainDump(m) => m.r(),
        }
    }

    /// Cumulative level sizes `|L_1|, .., |L_r|`.
    pub fn cum(&self) -> Vec<usize> {
        match self {
            Target::Junta(h) => h.cum.clone(),
            Target::BrainDump(m) => (1..=m.r()).map(|i| i * m.q_labels).collect(),
        }
    }

    pub fn proximity(&self) -> ProximityMap {
        match self {
            Target::Junta(h) => h.proximity.clone(),
            Target::BrainDump(_) => ProximityMap::singleton(),
        }
    }

    /// Labels `y[g][j]` for input `x[g][i]`.
    pub fn eval(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        match self {
            Target::Junta(h) => h.eval(x),
            Target::BrainDump(m) => {
                check_dim(1, x.len())?;
                Ok(vec![m.eval(&x[0])?])
            }
        }
    }
}

/// Free-function form of [`Target::eval`].
pub fn eval_labels(target: &Target, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    target.eval(x)
}
