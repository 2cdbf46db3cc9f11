//! Experiment configuration (JSON, schema-versioned, unknown fields rejected).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{Activation, ActivationSpec};
use crate::hierarchy::{
    default_level_sizes, gen_braindump, gen_junta_hierarchy, ProximityKind, ProximityMap, ProximitySpec, Target,
};
use crate::kernel::beta_threshold;
use crate::loss::LossParams;
use crate::resnet::OrthogonalMode;
use crate::train::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Master seed, split into named streams.
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub train: TrainSection,
    #[serde(default)]
    pub output: OutputConfig,
    /// Set on `config.resolved.json` written by the CLI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Junta,
    Braindump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    pub d: usize,
    /// Number of labels (junta generator).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub r: usize,
    #[serde(rename = "K")]
    pub k_junta: usize,
    /// Majority fan-out (brain-dump generator).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Majority labels per level (brain-dump generator).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_labels: Option<usize>,
    #[serde(default = "singleton_spec")]
    pub proximity: ProximitySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_sizes: Option<Vec<usize>>,
    pub m: usize,
}

fn singleton_spec() -> ProximitySpec {
    ProximitySpec {
        kind: ProximityKind::Singleton,
        t: 1,
        w_half: 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSetting {
    Value(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub q_width: usize,
    #[serde(rename = "D")]
    pub depth: usize,
    /// A number in `[0,1]`, or `"auto"` for `beta_threshold(beta_eps)`.
    pub beta: BetaSetting,
    #[serde(default = "default_beta_eps")]
    pub beta_eps: f64,
    #[serde(default)]
    pub orthogonal_mode: OrthogonalMode,
    #[serde(default = "default_activation")]
    pub activation: String,
}

fn default_beta_eps() -> f64 {
    0.1
}

fn default_activation() -> String {
    "tanh".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(rename = "B")]
    pub b: f64,
    pub xi: f64,
    /// Defaults to the minimum `1e4 max(2B, 1/xi)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub eps_opt: f64,
    pub max_iters: usize,
    #[serde(default = "default_true")]
    pub parallel_labels: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        match v.get("schema_version").and_then(|x| x.as_u64()) {
            None => return Err(Error::Config("missing field `schema_version`".into())),
            Some(found) if found != SCHEMA_VERSION as u64 => {
                return Err(Error::VersionMismatch {
                    found: found as u32,
                    expected: SCHEMA_VERSION,
                })
            }
            _ => {}
        }
        let cfg: ExperimentConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.generator;
        let bad = |m: String| Err(Error::Config(m));
        if g.m == 0 || g.d == 0 || g.r == 0 || g.k_junta == 0 {
            return bad("generator: d, r, K and m must be positive".into());
        }
        match g.kind {
            GeneratorKind::Junta => {
                if g.n.is_none() {
                    return bad("generator: missing field `n` for kind junta".into());
                }
            }
            GeneratorKind::Braindump => {
                if g.k.is_none() || g.q_labels.is_none() {
                    return bad("generator: kind braindump needs `k` and `q_labels`".into());
                }
                if g.proximity.kind != ProximityKind::Singleton {
                    return bad("generator: kind braindump supports singleton proximity only".into());
                }
            }
        }
        if let BetaSetting::Value(b) = self.network.beta {
            if !(0.0..=1.0).contains(&b) {
                return bad(format!("network.beta {b} outside [0,1]"));
            }
        }
        if self.network.q_width == 0 || self.network.depth < 2 {
            return bad("network: q_width >= 1 and D >= 2 required".into());
        }
        self.activation()?;
        Ok(())
    }

    pub fn activation(&self) -> Result<Activation> {
        Activation::from_name(&self.network.activation).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn activation_spec(&self) -> Result<ActivationSpec> {
        ActivationSpec::new(self.activation()?, self.generator.k_junta)
    }

    /// Replaces `"auto"` by the computed threshold.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut out = self.clone();
        if let BetaSetting::Auto(_) = self.network.beta {
            let spec = self.activation_spec()?;
            out.network.beta = BetaSetting::Value(beta_threshold(&spec, self.network.beta_eps)?);
        }
        Ok(out)
    }

    /// Resolved beta; errors if still `"auto"`.
    pub fn beta(&self) -> Result<f64> {
        match self.network.beta {
            BetaSetting::Value(b) => Ok(b),
            BetaSetting::Auto(_) => Err(Error::Config("beta is unresolved".into())),
        }
    }

    pub fn proximity(&self) -> Result<ProximityMap> {
        ProximityMap::try_from(self.generator.proximity)
    }

    pub fn build_target(&self) -> Result<Target> {
        let g = &self.generator;
        match g.kind {
            GeneratorKind::Junta => {
                let n = g.n.expect("validated");
                let sizes = g.level_sizes.clone().unwrap_or_else(|| default_level_sizes(n, g.r));
                let h = gen_junta_hierarchy(g.d, n, g.k_junta, &self.proximity()?, &sizes, self.seed)?;
                Ok(Target::Junta(h))
            }
            GeneratorKind::Braindump => {
                let m = gen_braindump(
                    g.d,
                    g.r,
                    g.k_junta,
                    g.k.expect("validated"),
                    g.q_labels.expect("validated"),
                    self.seed,
                )?;
                Ok(Target::BrainDump(m))
            }
        }
    }

    /// Matches `Target::generator_name`.
    pub fn generator_name(&self) -> &'static str {
        match self.generator.kind {
            GeneratorKind::Junta => "junta",
            GeneratorKind::Braindump => "braindump",
        }
    }

    pub fn loss_params(&self, g_size: usize) -> Result<LossParams> {
        let l = &self.loss;
        match l.barrier {
            Some(b) => LossParams::with_barrier(l.b, l.xi, self.generator.m, g_size, b),
            None => LossParams::new(l.b, l.xi, self.generator.m, g_size),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            eps_opt: self.train.eps_opt,
            max_iters: self.train.max_iters,
            parallel_labels: self.train.parallel_labels,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SMALL: &str = r#"{
        "schema_version": 1,
        "seed": 7,
        "generator": {"kind": "junta", "d": 6, "n": 6, "r": 2, "K": 2, "m": 50,
                      "proximity": {"kind": "window1d", "T": 3, "w_half": 1}},
        "network": {"q_width": 32, "D": 3, "beta": "auto"},
        "loss": {"B": 3, "xi": 0.125},
        "train": {"eps_opt": 1e-4, "max_iters": 20}
    }"#;

    #[test]
    fn parses_and_resolves_auto_beta() {
        let c = ExperimentConfig::from_json(SMALL).unwrap();
        assert!(matches!(c.network.beta, BetaSetting::Auto(AutoTag::Auto)));
        let r = c.resolve().unwrap();
        let b = r.beta().unwrap();
        assert!(b > 0.75 && b < 1.0);
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(ExperimentConfig::from_json(&s).unwrap(), r);
        let t = c.build_target().unwrap();
        assert_eq!((t.d(), t.n(), t.proximity().num_locations()), (6, 6, 3));
    }

    #[test]
    fn schema_errors_name_the_field() {
        let missing = SMALL.replace(r#""m": 50,"#, "");
        let e = ExperimentConfig::from_json(&missing).unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("`m`")), "{e}");
        let unknown = SMALL.replace(r#""seed": 7,"#, r#""seed": 7, "sed": 1,"#);
        let e = ExperimentConfig::from_json(&unknown).unwrap_err();
        assert!(e.to_string().contains("sed"), "{e}");
        let v2 = SMALL.replace(r#""schema_version": 1"#, r#""schema_version": 2"#);
        assert!(matches!(ExperimentConfig::from_json(&v2), Err(Error::VersionMismatch { found: 2, .. })));
        let beta = SMALL.replace(r#""auto""#, "1.5");
        assert!(ExperimentConfig::from_json(&beta).is_err());
        let act = SMALL.replace(r#""beta": "auto""#, r#""beta": 0.5, "activation": "relu""#);
        assert!(ExperimentConfig::from_json(&act).unwrap_err().to_string().contains("relu"));
    }
}
