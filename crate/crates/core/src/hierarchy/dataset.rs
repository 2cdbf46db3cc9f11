use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BrainDumpModel, Hierarchy, Target};
use crate::error::{Error, Result};
use crate::ptf::{ptf_check, ptf_check_points, CheckCoverage};
use crate::rng;

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub version: u32,
    pub d: usize,
    pub n: usize,
    pub r: usize,
    #[serde(rename = "G")]
    pub g: usize,
    pub w: usize,
    pub seed: u64,
    pub generator: String,
}

/// `x[g][i]` inputs and `y[g][j]` labels, one row per location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub meta: DatasetMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn m(&self) -> usize {
        self.samples.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: serde_json::Value = serde_json::from_str(&s).map_err(|e| Error::Corrupt {
            path: path.into(),
            reason: e.to_string(),
        })?;
        let found = v
            .pointer("/meta/version")
            .and_then(|x| x.as_u64())
            .ok_or_else(|| Error::Corrupt {
                path: path.into(),
                reason: "missing meta.version".into(),
            })? as u32;
        if found != DATASET_VERSION {
            return Err(Error::VersionMismatch {
                found,
                expected: DATASET_VERSION,
            });
        }
        let ds: Dataset = serde_json::from_value(v).map_err(|e| Error::Corrupt {
            path: path.into(),
            reason: e.to_string(),
        })?;
        ds.validate().map_err(|e| Error::Corrupt {
            path: path.into(),
            reason: e.to_string(),
        })?;
        Ok(ds)
    }

    /// Shape and `+-1` label checks.
    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        for (i, s) in self.samples.iter().enumerate() {
            let ok = s.x.len() == m.g
                && s.y.len() == m.g
                && s.x.iter().all(|r| r.len() == m.d)
                && s.y.iter().all(|r| r.len() == m.n && r.iter().all(|&v| v == 1.0 || v == -1.0));
            if !ok {
                return Err(Error::InvalidParameter(format!("sample {i} has inconsistent shape or labels")));
            }
        }
        Ok(())
    }
}

/// `m` i.i.d. samples with inputs uniform on `{+-1}^{d x |G|}`.
pub fn sample_dataset(target: &Target, m: usize, seed: u64) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::InvalidParameter("dataset needs m >= 1".into()));
    }
    let prox = target.proximity();
    let (d, gsize) = (target.d(), prox.num_locations());
    let mut rng = rng::stream(seed, rng::STREAM_DATASET);
    let xs: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|_| {
            (0..gsize)
                .map(|_| (0..d).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect())
                .collect()
        })
        .collect();
    let samples = xs
        .into_par_iter()
        .map(|x| {
            let y = target.eval(&x)?;
            Ok(Sample { x, y })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        meta: DatasetMeta {
            version: DATASET_VERSION,
            d,
            n: target.n(),
            r: target.r(),
            g: gsize,
            w: prox.width(),
            seed,
            generator: target.generator_name().into(),
        },
        manifest_hash: None,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCheck {
    pub label: usize,
    pub level: usize,
    pub holds: bool,
    pub worst_margin_low: f64,
    pub worst_margin_high: f64,
    pub coverage: CheckCoverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyReport {
    pub passes: bool,
    pub no_data: bool,
    pub labels: Vec<LabelCheck>,
    pub failing: Vec<usize>,
}

impl HierarchyReport {
    fn from_checks(labels: Vec<LabelCheck>, no_data: bool) -> Self {
        let failing: Vec<usize> = labels.iter().filter(|c| !c.holds).map(|c| c.label).collect();
        HierarchyReport {
            passes: failing.is_empty(),
            no_data,
            labels,
            failing,
        }
    }
}

/// Checks every label's witness against the realized pool vectors
/// (`E_g` of the input or of the lower-level labels) in the dataset.
pub fn validate_hierarchy(dataset: &Dataset, h: &Hierarchy) -> Result<HierarchyReport> {
    let gsize = h.proximity.num_locations();
    let checks = (0..h.n)
        .map(|j| {
            let def = &h.labels[j];
            let claim = def.witness.as_ref().ok_or(Error::MissingWitness(j))?;
            let mut pts = Vec::with_capacity(dataset.m() * gsize);
            let mut labs = Vec::with_capacity(dataset.m() * gsize);
            for s in &dataset.samples {
                for g in 0..gsize {
                    pts.push(h.pool(j, &s.x, &s.y, g));
                    labs.push(s.y[g][j]);
                }
            }
            let r = ptf_check(&pts, &labs, claim, 0, 0)?;
            Ok(LabelCheck {
                label: j,
                level: def.level,
                holds: r.holds,
                worst_margin_low: r.worst_margin_low,
                worst_margin_high: r.worst_margin_high,
                coverage: r.coverage,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HierarchyReport::from_checks(checks, dataset.samples.is_empty()))
}

/// Points-only check of the explicit brain-dump witnesses of `level`
/// (see [`BrainDumpModel::exact_witnesses`]).
pub fn validate_braindump(dataset: &Dataset, model: &BrainDumpModel, level: usize) -> Result<HierarchyReport> {
    let wires = model.witness_wires(level)?;
    let q = model.q_labels;
    let pool_len = if level == 1 { model.d } else { (level - 1) * q };
    let pts: Vec<Vec<f64>> = dataset
        .samples
        .iter()
        .map(|s| if level == 1 { s.x[0].clone() } else { s.y[0][..pool_len].to_vec() })
        .collect();
    let checks = (0..q)
        .map(|t| {
            let claim = model.combine_witness(level, t, &wires)?;
            let j = (level - 1) * q + t;
            let labs: Vec<f64> = dataset.samples.iter().map(|s| s.y[0][j]).collect();
            let r = ptf_check_points(&pts, &labs, &claim)?;
            Ok(LabelCheck {
                label: j,
                level,
                holds: r.holds,
                worst_margin_low: r.worst_margin_low,
                worst_margin_high: r.worst_margin_high,
                coverage: r.coverage,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HierarchyReport::from_checks(checks, dataset.samples.is_empty()))
}
