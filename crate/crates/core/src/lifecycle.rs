//! Stage-boundary detection, the per-layer KL saturation probe and marginal
//! utility.
//!
//! The per-layer change is `Δ_l = e[l] − e[l−1]`. Stage II starts at the first
//! `l ≥ 1` where `Δ_l..Δ_{l+w−1}` are all negative and drop by at least `δ·R`
//! in total, `R` being the curve range. Stage III starts at the first
//! `l > stage2` where `|Δ|` stays below `τ·R` for `w` consecutive layers.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::decoder::{ForwardOptions, ToyDecoder, VanillaPlanner};
use crate::entropy::EntropyTrajectory;
use crate::error::{bail, Error, Result};
use crate::linalg::DenseMatrix;
use crate::ssr::LayerUpdatePolicy;
use crate::trace::{Modality, TokenGroup};

/// Detector thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct StageParams {
    /// Consecutive layers `w`.
    pub window: usize,
    /// Minimum total decline `δ`, relative to the range.
    pub decline: f64,
    /// Maximum per-layer change `τ` on the plateau, relative to the range.
    pub plateau: f64,
}

impl Default for StageParams {
    fn default() -> Self {
        Self { window: 2, decline: 0.05, plateau: 0.02 }
    }
}

impl StageParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            bail!(Config, "window must be at least 1");
        }
        if !(self.decline >= 0.0 && self.decline.is_finite()) || !(self.plateau > 0.0 && self.plateau.is_finite()) {
            bail!(Config, "decline must be >= 0 and plateau > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifecycleReport {
    pub stage2_onset: usize,
    pub stage3_onset: usize,
    pub entropy_curve: Vec<f64>,
    /// Empty until [`LifecycleReport::attach_kl`] is called.
    pub kl_curve: Vec<f64>,
    pub method_notes: String,
}

impl LifecycleReport {
    /// Attaches a per-layer KL curve of the same length as the entropy curve.
    pub fn attach_kl(&mut self, kl: Vec<f64>) -> Result<()> {
        if kl.len() != self.entropy_curve.len() {
            bail!(Shape, "kl curve has {} values, entropy curve {}", kl.len(), self.entropy_curve.len());
        }
        self.kl_curve = kl;
        Ok(())
    }
}

fn failure(reason: String, curve: &[f64]) -> Error {
    Error::DetectionFailure { reason, curve: curve.to_vec() }
}

/// Detects the stage onsets on the visual-group curve of `traj`.
pub fn detect_stages(traj: &EntropyTrajectory, params: &StageParams) -> Result<LifecycleReport> {
    let Some(curve) = traj.curve(TokenGroup::Visual) else {
        bail!(Validation, "trajectory has no visual-group curve");
    };
    detect_stages_curve(&curve, params)
}

/// Detects the stage onsets on a raw per-layer curve.
pub fn detect_stages_curve(curve: &[f64], params: &StageParams) -> Result<LifecycleReport> {
    params.validate()?;
    let n = curve.len();
    if n < 4 {
        bail!(Validation, "need at least 4 layers, got {n}");
    }
    if curve.iter().any(|v| !v.is_finite()) {
        bail!(Validation, "curve has non-finite values");
    }
    let (lo, hi) = curve.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range <= 0.0 {
        return Err(failure("curve is flat".into(), curve));
    }
    let w = params.window;
    let delta = |l: usize| curve[l] - curve[l - 1];

    // windows Δ_l..Δ_{l+w−1} need l + w − 1 ≤ n − 1
    let last_start = (n - 1).checked_sub(w - 1).filter(|&s| s >= 1);
    let Some(last_start) = last_start else {
        return Err(failure(format!("curve too short for window {w}"), curve));
    };
    let stage2 = (1..=last_start).find(|&l| {
        let ds: Vec<f64> = (l..l + w).map(delta).collect();
        ds.iter().all(|&d| d < 0.0) && -ds.iter().sum::<f64>() >= params.decline * range
    });
    let Some(stage2) = stage2 else {
        return Err(failure("no sustained decline".into(), curve));
    };
    let stage3 = (stage2 + 1..=last_start).find(|&l| (l..l + w).all(|j| delta(j).abs() < params.plateau * range));
    let Some(stage3) = stage3 else {
        return Err(failure(format!("no plateau after layer {stage2}"), curve));
    };
    Ok(LifecycleReport {
        stage2_onset: stage2,
        stage3_onset: stage3,
        entropy_curve: curve.to_vec(),
        kl_curve: Vec::new(),
        method_notes: format!("window={w} decline={} plateau={}", params.decline, params.plateau),
    })
}

const SUM_TOL: f64 = 1e-9;

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        bail!(Domain, "{name} has negative or non-finite entries");
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        bail!(Domain, "{name} sums to {s}");
    }
    Ok(())
}

/// `Σ p_i ln(p_i / q_i)` with `0·ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        bail!(Shape, "distributions have lengths {} and {}", p.len(), q.len());
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            bail!(Domain, "q vanishes where p does not");
        }
        kl += pi * libm::log(pi / qi);
    }
    Ok(kl)
}

/// For each decoder layer `l`: KL(vanilla ‖ visual updates suppressed at `l` only).
pub fn layer_kl_probe(decoder: &ToyDecoder, embeddings: &DenseMatrix, modality: &[Modality]) -> Result<Vec<f64>> {
    layer_kl_probe_with(decoder, embeddings, modality, &[])
}

/// [`layer_kl_probe`] with text-to-visual attention blocked at the flagged
/// layers in both passes.
pub fn layer_kl_probe_with(
    decoder: &ToyDecoder,
    embeddings: &DenseMatrix,
    modality: &[Modality],
    block_text_to_visual: &[bool],
) -> Result<Vec<f64>> {
    let opts = || ForwardOptions { block_text_to_visual: block_text_to_visual.to_vec(), ..Default::default() };
    let base = decoder.forward(embeddings, modality, &mut VanillaPlanner, opts())?;
    let layers = decoder.config().num_layers;
    let mut out = Vec::with_capacity(layers);
    for l in 0..layers {
        let mut schedule = vec![LayerUpdatePolicy::Vanilla; layers];
        schedule[l] = LayerUpdatePolicy::FreezeVisual;
        let mut planner = schedule.as_slice();
        let probe = decoder.forward(embeddings, modality, &mut planner, opts())?;
        out.push(kl_divergence(&base.next_token_distribution, &probe.next_token_distribution)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MarginalUtility {
    pub delta_perf: f64,
    pub delta_cost: f64,
    pub epsilon: f64,
    pub value: f64,
}

/// `(−ΔM) / (ΔC + ε)`; a negative `ΔM` is a performance drop.
pub fn marginal_utility(delta_perf: f64, delta_cost: f64, epsilon: f64) -> Result<MarginalUtility> {
    let denom = delta_cost + epsilon;
    if !(denom > 0.0) || !delta_perf.is_finite() || !denom.is_finite() {
        bail!(Domain, "delta_cost + epsilon must be positive and finite, got {denom}");
    }
    Ok(MarginalUtility { delta_perf, delta_cost, epsilon, value: (-delta_perf) / denom })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_phase(n: usize) -> Vec<f64> {
        (0..n)
            .map(|l| match l {
                0..=4 => 10.0,
                5..=12 => 10.0 - (l - 4) as f64,
                _ => 2.0,
            })
            .collect()
    }

    #[test]
    fn three_phase_onsets() {
        let r = detect_stages_curve(&three_phase(32), &StageParams::default()).unwrap();
        assert_eq!((r.stage2_onset, r.stage3_onset), (5, 13));
        let r = detect_stages_curve(&three_phase(32), &StageParams { window: 3, ..Default::default() }).unwrap();
        assert_eq!((r.stage2_onset, r.stage3_onset), (5, 13));
    }

    #[test]
    fn flat_and_short_curves_fail() {
        assert!(matches!(
            detect_stages_curve(&[1.0; 10], &StageParams::default()),
            Err(Error::DetectionFailure { .. })
        ));
        assert!(matches!(detect_stages_curve(&[3.0, 2.0, 1.0], &StageParams::default()), Err(Error::Validation(_))));
        // decline without a plateau
        let down: Vec<f64> = (0..10).map(|l| -(l as f64)).collect();
        assert!(matches!(detect_stages_curve(&down, &StageParams::default()), Err(Error::DetectionFailure { .. })));
    }

    #[test]
    fn kl_cases() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let kl = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((kl - core::f64::consts::LN_2).abs() < 1e-15);
        assert!(matches!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(kl_divergence(&[0.5, 0.6], &[0.5, 0.5]), Err(Error::Domain(_))));
        assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn mu_cases() {
        assert_eq!(marginal_utility(0.0, 10.0, 1e-8).unwrap().value, 0.0);
        assert!((marginal_utility(-2.0, 10.0, 1e-8).unwrap().value - 0.2).abs() < 1e-9);
        assert!((marginal_utility(1.0, 5.0, 0.0).unwrap().value + 0.2).abs() < 1e-15);
        assert!(marginal_utility(1.0, 0.0, 0.0).is_err());
        assert!(marginal_utility(1.0, -1.0, 1e-8).is_err());
    }
}
