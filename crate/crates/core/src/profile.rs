//! Architecture-aware acceleration settings.

use alloc::vec::Vec;

use crate::error::{bail, Result};

/// How saturation-stage redundancy is removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SsrMode {
    /// Visual tokens stop updating; text still attends to their frozen states.
    LayerInactivity,
    /// Only the top-scoring visual tokens stay in the sequence.
    TokenSparsity,
}

/// Visual-token retention: a single fraction, or a (stage II, stage III) pair.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(untagged))]
pub enum Retention {
    Single(f64),
    Schedule(Vec<f64>),
}

impl Retention {
    pub fn ivr(&self) -> f64 {
        match self {
            Retention::Single(r) => *r,
            Retention::Schedule(v) => v.first().copied().unwrap_or(f64::NAN),
        }
    }

    /// The second value of a two-value schedule.
    pub fn ssr(&self) -> Option<f64> {
        match self {
            Retention::Single(_) => None,
            Retention::Schedule(v) => v.get(1).copied(),
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            Retention::Single(r) => core::slice::from_ref(r),
            Retention::Schedule(v) => v,
        }
    }
}

fn default_lambda() -> f64 {
    1.0
}

fn default_epsilon() -> f64 {
    1e-8
}

/// Pruning and saturation settings for one backbone.
///
/// Layer indices are 0-based decoder layers: IVR pruning happens before layer
/// `l_ivr` runs, and the SSR handler governs layers `l_ssr..`. `l_ssr = None`
/// disables the second step.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ArchProfile {
    pub ssr_mode: SsrMode,
    pub l_ivr: usize,
    pub r_ivr: Retention,
    pub r_anchor: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub l_ssr: Option<usize>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub r_ssr: Option<f64>,
    #[cfg_attr(feature = "serde", serde(default = "default_lambda"))]
    pub lambda: f64,
    #[cfg_attr(feature = "serde", serde(default = "default_epsilon"))]
    pub epsilon: f64,
}

impl ArchProfile {
    /// LLaVA-1.5-7B settings: prune to 50% at layer 3, freeze visual updates from layer 15.
    pub fn llava_15_7b() -> Self {
        Self {
            ssr_mode: SsrMode::LayerInactivity,
            l_ivr: 3,
            r_ivr: Retention::Single(0.5),
            r_anchor: 0.2,
            l_ssr: Some(15),
            r_ssr: None,
            lambda: default_lambda(),
            epsilon: default_epsilon(),
        }
    }

    /// Qwen2.5-VL-7B settings: keep 25% at layer 2, then 5% from layer 21.
    pub fn qwen25_vl_7b() -> Self {
        Self {
            ssr_mode: SsrMode::TokenSparsity,
            l_ivr: 2,
            r_ivr: Retention::Schedule(alloc::vec![0.25, 0.05]),
            r_anchor: 0.1,
            l_ssr: Some(21),
            r_ssr: None,
            lambda: default_lambda(),
            epsilon: default_epsilon(),
        }
    }

    /// Retention used by token sparsity: `r_ssr` if set, else the schedule's second value.
    pub fn sparse_retention(&self) -> Option<f64> {
        self.r_ssr.or_else(|| self.r_ivr.ssr())
    }

    /// Checks the profile against a decoder depth.
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        let rv = self.r_ivr.values();
        if rv.is_empty() || rv.len() > 2 {
            bail!(Config, "r_ivr must hold one or two fractions, got {}", rv.len());
        }
        for &r in rv.iter().chain(self.r_ssr.iter()) {
            if !(r > 0.0 && r <= 1.0) {
                bail!(Config, "retention fraction {r} outside (0, 1]");
            }
        }
        if !(0.0..=1.0).contains(&self.r_anchor) {
            bail!(Config, "r_anchor {} outside [0, 1]", self.r_anchor);
        }
        if !(self.lambda >= 0.0) || !(self.epsilon >= 0.0) {
            bail!(Config, "lambda and epsilon must be non-negative");
        }
        if self.l_ivr == 0 || self.l_ivr >= num_layers {
            bail!(Config, "l_ivr {} must satisfy 0 < l_ivr < {num_layers}", self.l_ivr);
        }
        if let Some(l_ssr) = self.l_ssr {
            if l_ssr <= self.l_ivr || l_ssr >= num_layers {
                bail!(Config, "l_ssr {l_ssr} must satisfy {} < l_ssr < {num_layers}", self.l_ivr);
            }
            if self.ssr_mode == SsrMode::TokenSparsity && self.sparse_retention().is_none() {
                bail!(Config, "token sparsity needs r_ssr or a two-value r_ivr schedule");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn presets_validate() {
        ArchProfile::llava_15_7b().validate(32).unwrap();
        ArchProfile::qwen25_vl_7b().validate(28).unwrap();
        assert_eq!(ArchProfile::qwen25_vl_7b().sparse_retention(), Some(0.05));
    }

    #[test]
    fn rejects_bad_layers_and_fractions() {
        let mut p = ArchProfile::llava_15_7b();
        p.l_ssr = Some(2);
        assert!(matches!(p.validate(32), Err(Error::Config(_))));
        let mut p = ArchProfile::llava_15_7b();
        p.r_ivr = Retention::Single(0.0);
        assert!(matches!(p.validate(32), Err(Error::Config(_))));
        let mut p = ArchProfile::llava_15_7b();
        p.ssr_mode = SsrMode::TokenSparsity;
        assert!(matches!(p.validate(32), Err(Error::Config(_))));
        assert!(matches!(ArchProfile::llava_15_7b().validate(15), Err(Error::Config(_))));
    }
}
