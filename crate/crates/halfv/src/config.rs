//! JSON run configurations. Unknown keys are rejected everywhere.

use std::fs;
use std::path::Path;

use halfv_core::decoder::DecoderConfig;
use halfv_core::lifecycle::StageParams;
use halfv_core::ArchProfile;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{Error, Result};

/// A parsed config together with the raw bytes it came from.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub value: T,
    pub bytes: Vec<u8>,
}

pub fn parse<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::Config(e.to_string()))
}

pub fn load<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Loaded<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Loaded { value: parse(&bytes)?, bytes })
}

fn default_rope_base() -> f64 {
    10000.0
}

fn yes() -> bool {
    true
}

/// Decoder shape for `simulate`; weights are seeded from `--seed`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderShape {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub vocab: usize,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
}

impl DecoderShape {
    pub fn with_seed(&self, seed: u64) -> DecoderConfig {
        DecoderConfig {
            num_layers: self.num_layers,
            hidden_dim: self.hidden_dim,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            vocab: self.vocab,
            rope_base: self.rope_base,
            seed,
        }
    }
}

/// Configuration of `simulate`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub decoder: DecoderShape,
    pub profile: ArchProfile,
    pub num_visual: usize,
    pub num_text: usize,
    /// Also write the per-layer KL probe.
    #[serde(default = "yes")]
    pub kl_probe: bool,
    /// Also write the vanilla and accelerated traces as HVTD files.
    #[serde(default = "yes")]
    pub dump_traces: bool,
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_text == 0 {
            return Err(Error::Config("num_text must be at least 1".into()));
        }
        let cfg = self.decoder.with_seed(0);
        cfg.validate()?;
        self.profile.validate(cfg.num_layers)?;
        Ok(())
    }
}

/// Value lists swept by `flops --sweep`; an empty list keeps the profile's value.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub l_ivr: Vec<usize>,
    pub r_ivr: Vec<f64>,
    pub l_ssr: Vec<usize>,
    pub r_ssr: Vec<f64>,
}

/// Configuration of `flops`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlopsConfig {
    pub t: usize,
    pub v: usize,
    pub h: usize,
    pub m: usize,
    pub num_layers: usize,
    #[serde(default)]
    pub profile: Option<ArchProfile>,
    #[serde(default)]
    pub sweep: Option<SweepGrid>,
}

/// Configuration of `detect-stages`.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectConfig {
    #[serde(default)]
    pub stages: StageParams,
    /// Stage II onset to report instead of the detected one.
    #[serde(default)]
    pub l_ivr: Option<usize>,
    /// Stage III onset to report instead of the detected one.
    #[serde(default)]
    pub l_ssr: Option<usize>,
}
