//! Saturation-stage handlers and the two-step pipeline planner.
//!
//! Layer inactivity keeps visual rows bit-identical through a layer while
//! text rows still attend over the full visual + text context. Token sparsity
//! keeps only the top visual tokens under RoPE-enabled last-text-token
//! relevance and physically drops the rest; survivors keep their original
//! position ids.

use alloc::vec::Vec;

use crate::anchorcover::{plan_prune, rank_by_score, relevance_scores, PrunePlan, RelevanceContext};
use crate::decoder::{DecoderState, LayerPlanner, ToyDecoder, UpdateMode};
use crate::error::{bail, Result};
use crate::flops::{ivr_budget, sparse_budget};
use crate::linalg::DenseMatrix;
use crate::profile::{ArchProfile, SsrMode};
use crate::trace::Modality;

/// How one layer treats visual tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerUpdatePolicy {
    Vanilla,
    /// Visual rows skip both the attention and the FFN update.
    FreezeVisual,
    /// Only visual tokens whose original index is listed stay in the sequence,
    /// from this layer on.
    SparseVisual(Vec<usize>),
}

fn state_for(h: &DenseMatrix, modality: &[Modality]) -> Result<DecoderState> {
    DecoderState::from_embeddings(h, modality)
}

/// One vanilla layer on `h` (positions `0..n`).
pub fn vanilla_layer_forward(
    decoder: &ToyDecoder,
    layer: usize,
    h: &DenseMatrix,
    modality: &[Modality],
) -> Result<DenseMatrix> {
    let state = state_for(h, modality)?;
    Ok(decoder.layer_step(layer, &state, UpdateMode::Vanilla, false, None)?.0)
}

/// One layer with visual updates terminated: visual rows are returned
/// unchanged and text rows attend over all tokens.
pub fn freeze_layer_forward(
    decoder: &ToyDecoder,
    layer: usize,
    h: &DenseMatrix,
    modality: &[Modality],
) -> Result<DenseMatrix> {
    let state = state_for(h, modality)?;
    if h.cols() != decoder.config().hidden_dim {
        bail!(Shape, "hidden states have {} dims, decoder expects {}", h.cols(), decoder.config().hidden_dim);
    }
    Ok(decoder.layer_step(layer, &state, UpdateMode::FreezeVisual, false, None)?.0)
}

/// The `max(1, round(r_ssr·V))` visual tokens with the highest scores,
/// ascending, where `V` is the number of keys in `ctx`.
///
/// `ctx` should carry RoPE-enabled positions; see
/// [`ToyDecoder::relevance_context`].
pub fn select_sparse_set(ctx: &RelevanceContext, r_ssr: f64) -> Result<Vec<usize>> {
    if !(r_ssr > 0.0 && r_ssr <= 1.0) {
        bail!(Validation, "retention {r_ssr} outside (0, 1]");
    }
    let v = ctx.visual_keys.rows();
    top_visual(ctx, sparse_budget(r_ssr, v, v))
}

/// The `keep` visual tokens with the highest scores, ascending; ties go to
/// the lower index.
pub fn top_visual(ctx: &RelevanceContext, keep: usize) -> Result<Vec<usize>> {
    let v = ctx.visual_keys.rows();
    if v == 0 {
        bail!(Validation, "no visual tokens to sparsify");
    }
    if keep == 0 || keep > v {
        bail!(Validation, "sparse budget {keep} outside 1..={v}");
    }
    let scores = relevance_scores(ctx)?;
    let mut top: Vec<usize> = rank_by_score(&scores).into_iter().take(keep).collect();
    top.sort_unstable();
    Ok(top)
}

/// Policy for a layer at or past `profile.l_ssr`.
///
/// `original_visual` is the visual token count before any pruning; sparse
/// budgets are fractions of it.
pub fn apply_ssr(
    decoder: &ToyDecoder,
    layer: usize,
    state: &DecoderState,
    profile: &ArchProfile,
    original_visual: usize,
) -> Result<LayerUpdatePolicy> {
    let Some(l_ssr) = profile.l_ssr else {
        bail!(Config, "profile has no SSR layer");
    };
    if layer < l_ssr {
        bail!(Config, "layer {layer} precedes the SSR onset {l_ssr}");
    }
    if state.num_visual == 0 {
        return Ok(LayerUpdatePolicy::Vanilla);
    }
    match profile.ssr_mode {
        SsrMode::LayerInactivity => Ok(LayerUpdatePolicy::FreezeVisual),
        SsrMode::TokenSparsity if layer == l_ssr => {
            let Some(r) = profile.sparse_retention() else {
                bail!(Config, "token sparsity without a retention fraction");
            };
            let ctx = decoder.relevance_context(layer, state, true)?;
            let keep = sparse_budget(r, original_visual, state.num_visual);
            let local = top_visual(&ctx, keep)?;
            Ok(LayerUpdatePolicy::SparseVisual(local.iter().map(|&i| state.positions[i]).collect()))
        }
        // tokens dropped at the onset stay dropped
        SsrMode::TokenSparsity => Ok(LayerUpdatePolicy::Vanilla),
    }
}

/// Plans the full two-step schedule from a profile while the forward runs:
/// AnchorCover pruning before `l_ivr`, then the SSR handler from `l_ssr`.
#[derive(Debug, Clone)]
pub struct HalfVPlanner {
    pub profile: ArchProfile,
    pub original_visual: usize,
    /// The pruning plan made at `l_ivr`, once the pass reaches it.
    pub prune_plan: Option<PrunePlan>,
}

impl HalfVPlanner {
    pub fn new(profile: ArchProfile, original_visual: usize) -> Self {
        Self { profile, original_visual, prune_plan: None }
    }
}

impl LayerPlanner for HalfVPlanner {
    fn plan(&mut self, decoder: &ToyDecoder, layer: usize, state: &DecoderState) -> Result<LayerUpdatePolicy> {
        if layer == 0 {
            self.profile.validate(decoder.config().num_layers)?;
        }
        if self.profile.l_ssr.is_some_and(|l| layer >= l) {
            return apply_ssr(decoder, layer, state, &self.profile, self.original_visual);
        }
        if layer != self.profile.l_ivr || state.num_visual == 0 {
            return Ok(LayerUpdatePolicy::Vanilla);
        }
        let ctx = decoder.relevance_context(layer, state, false)?;
        let budget = ivr_budget(self.profile.r_ivr.ivr(), self.original_visual).min(state.num_visual);
        let plan = plan_prune(&state.visual_states(), &ctx, budget, self.profile.r_anchor)?;
        let keep = plan.selected.iter().map(|&i| state.positions[i]).collect();
        self.prune_plan = Some(plan);
        Ok(LayerUpdatePolicy::SparseVisual(keep))
    }
}
