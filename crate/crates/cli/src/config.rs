use std::fs;
use std::path::{Path, PathBuf};

use netcoupler::coupling::{FitConfig, SIGN_THRESHOLD};
use netcoupler::eval::BenchConfig;
use netcoupler::favi::FaviTrainConfig;
use netcoupler::neuro::NeuroConfig;
use netcoupler::{KernelShape, ModelConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::failure::Failure;

/// Learning rate used by the baseline unless the config sets one. Its
/// parameters are raw latent moments and need larger steps than the
/// regressor weights.
pub const BASELINE_LR: f64 = 1e-2;

fn d_mixture() -> usize {
    64
}
fn d_threshold() -> f64 {
    SIGN_THRESHOLD
}

/// How fitted posteriors are summarized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryConfig {
    /// Hyper-parameter draws forming the coupling mixture.
    #[serde(default = "d_mixture")]
    pub mixture_draws: usize,
    /// Magnitude threshold of the sign probabilities.
    #[serde(default = "d_threshold")]
    pub threshold: f64,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self {
            mixture_draws: d_mixture(),
            threshold: d_threshold(),
        }
    }
}

/// Paths that may be given in the config instead of on the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hp_checkpoint: Option<PathBuf>,
}

/// Fully resolved run configuration. Section seeds are always the root seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub kernel: KernelShape,
    pub favi: FaviTrainConfig,
    pub fit: FitConfig,
    pub baseline: FitConfig,
    pub bench: BenchConfig,
    pub summary: SummaryConfig,
    pub neuro: Option<NeuroConfig>,
    pub io: IoConfig,
}

const SEEDED: [&str; 3] = ["favi", "fit", "baseline"];
const DEFAULTED: [&str; 5] = ["model", "kernel", "bench", "summary", "io"];

impl RunConfig {
    /// Parses a config document. `seed_override` (from `NETCOUPLER_SEED`)
    /// replaces the top-level seed.
    pub fn from_json(text: &str, seed_override: Option<u64>) -> Result<Self, Failure> {
        let mut doc: Value = serde_json::from_str(text)
            .map_err(|e| Failure::config(format!("invalid JSON: {e}")))?;
        let root = doc
            .as_object_mut()
            .ok_or_else(|| Failure::config("the config must be a JSON object"))?;
        if let Some(seed) = seed_override {
            root.insert("seed".into(), json!(seed));
        }
        let seed = root
            .get("seed")
            .ok_or_else(|| Failure::config("missing top-level \"seed\""))?
            .as_u64()
            .ok_or_else(|| Failure::config("\"seed\" must be a non-negative integer"))?;
        for name in SEEDED {
            let section = root
                .entry(name)
                .or_insert_with(|| Value::Object(Map::new()));
            let obj = section
                .as_object_mut()
                .ok_or_else(|| Failure::config(format!("\"{name}\" must be an object")))?;
            if obj.contains_key("seed") {
                return Err(Failure::config(format!(
                    "\"{name}.seed\" is not allowed; set the top-level seed"
                )));
            }
            obj.insert("seed".into(), json!(seed));
            if name == "baseline" {
                obj.entry("lr").or_insert(json!(BASELINE_LR));
            }
        }
        for name in DEFAULTED {
            if !root.contains_key(name) {
                let value = match name {
                    "model" => serde_json::to_value(ModelConfig::default()),
                    "kernel" => serde_json::to_value(KernelShape::default()),
                    "bench" => serde_json::to_value(BenchConfig::default()),
                    "summary" => serde_json::to_value(SummaryConfig::default()),
                    _ => serde_json::to_value(IoConfig::default()),
                }
                .expect("defaults serialize");
                root.insert(name.into(), value);
            }
        }
        root.entry("neuro").or_insert(Value::Null);
        let cfg: RunConfig =
            serde_json::from_value(doc).map_err(|e| Failure::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
        let env = match std::env::var("NETCOUPLER_SEED") {
            Ok(s) => Some(
                s.trim()
                    .parse::<u64>()
                    .map_err(|e| Failure::config(format!("NETCOUPLER_SEED: {e}")))?,
            ),
            Err(_) => None,
        };
        Self::from_json(&text, env)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.model.validate()?;
        self.favi.validate()?;
        self.fit.validate()?;
        self.baseline.validate()?;
        self.bench.validate()?;
        if self.summary.mixture_draws == 0 || !(self.summary.threshold >= 0.0) {
            return Err(Failure::config(
                "summary needs mixture_draws >= 1 and a non-negative threshold",
            ));
        }
        if let Some(n) = &self.neuro {
            n.validate()?;
        }
        Ok(())
    }
}
