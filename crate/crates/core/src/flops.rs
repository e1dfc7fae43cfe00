//! Closed-form prefill FLOPs for vanilla and staged schedules.
//!
//! A layer where `a` tokens are updated while attending over `c` context
//! tokens costs `2a(4h+3m)h + 4ach`: the first term covers the four attention
//! projections and the gated three-matrix FFN, the second the score and
//! value-weighting products. A vanilla layer over `n` tokens has `a = c = n`;
//! a layer with frozen visual tokens has `a = t`, `c = t + v'`.

use crate::error::{bail, Error, Result};
use crate::profile::{ArchProfile, SsrMode};
use crate::round_half_up;

/// Exact FLOPs of one layer.
pub fn stage_flops_exact(n_active: usize, n_context: usize, h: usize, m: usize) -> u128 {
    let (a, c, h, m) = (n_active as u128, n_context as u128, h as u128, m as u128);
    2 * a * (4 * h + 3 * m) * h + 4 * a * c * h
}

/// FLOPs of one layer as a real.
pub fn stage_flops(n_active: usize, n_context: usize, h: usize, m: usize) -> f64 {
    stage_flops_exact(n_active, n_context, h, m) as f64
}

/// Token counts seen by one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerCost {
    pub active: usize,
    pub context: usize,
}

impl LayerCost {
    pub fn full(n: usize) -> Self {
        Self { active: n, context: n }
    }
}

/// Sum of [`stage_flops_exact`] over a per-layer schedule.
pub fn schedule_flops(layers: &[LayerCost], h: usize, m: usize) -> u128 {
    layers.iter().map(|c| stage_flops_exact(c.active, c.context, h, m)).sum()
}

/// Visual tokens kept by IVR pruning: `round(r·v)`, at least one when `v > 0`.
pub fn ivr_budget(r: f64, v: usize) -> usize {
    if v == 0 {
        return 0;
    }
    round_half_up(r * v as f64).clamp(1, v)
}

/// Visual tokens kept by token sparsity: `max(1, round(r·v))`, capped at `available`.
pub fn sparse_budget(r: f64, v: usize, available: usize) -> usize {
    if v == 0 || available == 0 {
        return 0;
    }
    round_half_up(r * v as f64).max(1).min(available)
}

/// Per-stage and total FLOPs of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FlopsBudget {
    pub t: usize,
    pub v: usize,
    pub v_prime: usize,
    pub v_ssr: usize,
    pub h: usize,
    pub m: usize,
    pub l1: usize,
    pub l2: usize,
    pub l3: usize,
    /// `None` for the vanilla schedule or when the SSR step is disabled.
    pub mode: Option<SsrMode>,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub total: f64,
}

impl FlopsBudget {
    pub fn num_layers(&self) -> usize {
        self.l1 + self.l2 + self.l3
    }
}

/// Every layer runs over all `t + v` tokens.
pub fn vanilla_flops(t: usize, v: usize, h: usize, m: usize, total_layers: usize) -> FlopsBudget {
    let f1 = stage_flops_exact(t + v, t + v, h, m);
    FlopsBudget {
        t,
        v,
        v_prime: v,
        v_ssr: v,
        h,
        m,
        l1: total_layers,
        l2: 0,
        l3: 0,
        mode: None,
        f1: f1 as f64,
        f2: 0.0,
        f3: 0.0,
        total: (f1 * total_layers as u128) as f64,
    }
}

/// Staged FLOPs of `profile`: `L_I·F_I + L_II·F_II + L_III·F_III`.
pub fn total_flops(
    profile: &ArchProfile,
    t: usize,
    v: usize,
    h: usize,
    m: usize,
    total_layers: usize,
) -> Result<FlopsBudget> {
    profile.validate(total_layers)?;
    let v_prime = ivr_budget(profile.r_ivr.ivr(), v);
    let l1 = profile.l_ivr;
    let (l2, l3) = match profile.l_ssr {
        Some(l_ssr) => (l_ssr - l1, total_layers - l_ssr),
        None => (total_layers - l1, 0),
    };
    let f1 = stage_flops_exact(t + v, t + v, h, m);
    let f2 = stage_flops_exact(t + v_prime, t + v_prime, h, m);
    let (mode, v_ssr, f3) = match (profile.l_ssr, profile.ssr_mode) {
        (None, _) => (None, v_prime, 0),
        (Some(_), SsrMode::LayerInactivity) => {
            (Some(SsrMode::LayerInactivity), v_prime, stage_flops_exact(t, t + v_prime, h, m))
        }
        (Some(_), SsrMode::TokenSparsity) => {
            let r =
                profile.sparse_retention().ok_or_else(|| Error::Config("token sparsity without a retention".into()))?;
            let v_ssr = sparse_budget(r, v, v_prime);
            (Some(SsrMode::TokenSparsity), v_ssr, stage_flops_exact(t + v_ssr, t + v_ssr, h, m))
        }
    };
    let total = l1 as u128 * f1 + l2 as u128 * f2 + l3 as u128 * f3;
    Ok(FlopsBudget {
        t,
        v,
        v_prime,
        v_ssr,
        h,
        m,
        l1,
        l2,
        l3,
        mode,
        f1: f1 as f64,
        f2: f2 as f64,
        f3: f3 as f64,
        total: total as f64,
    })
}

/// `vanilla.total / accelerated.total`.
pub fn speedup(vanilla: &FlopsBudget, accelerated: &FlopsBudget) -> Result<f64> {
    if vanilla.h != accelerated.h || vanilla.m != accelerated.m || vanilla.num_layers() != accelerated.num_layers() {
        bail!(Validation, "budgets describe different models");
    }
    if accelerated.total == 0.0 {
        bail!(Domain, "accelerated budget is zero");
    }
    Ok(vanilla.total / accelerated.total)
}
