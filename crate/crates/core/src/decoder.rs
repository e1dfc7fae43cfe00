//! Seeded toy multimodal decoder with FLOP instrumentation.
//!
//! Each layer is pre-norm: RMS normalization, multi-head causal self-attention
//! with rotary embeddings on queries and keys, residual, RMS normalization, a
//! gated three-matrix FFN (`silu(xW_g) ⊙ xW_u` followed by `W_d`), residual.
//! The last token's final hidden state goes through one more RMS
//! normalization and the output projection.
//!
//! Weights come from [`SplitMix64`] seeded with `DecoderConfig::seed`, drawn
//! uniformly in `[-1/√h, 1/√h)` in the order: per layer `W_q, W_k, W_v, W_o,
//! W_g, W_u, W_d` (row-major), then the output projection.
//!
//! Counted FLOPs cover the matrix products of the decoder layers (two per
//! multiply-accumulate). Attention scores are computed for every query/key
//! pair and then causally masked, so a full layer over `n` tokens counts
//! exactly `2n(4h+3m)h + 4n²h`. Key/value projections of frozen visual tokens
//! are tallied separately in `frozen_kv_flops`, since a frozen stream's keys
//! and values are static and can be reused; the tally is the same whether or
//! not a [`FrozenKvCache`] supplied them.

use alloc::vec;
use alloc::vec::Vec;

use crate::anchorcover::{PositionalEncoding, RelevanceContext};
use crate::error::{bail, Result};
use crate::flops::{schedule_flops, LayerCost};
use crate::linalg::{dot, softmax_in_place, vecmat, DenseMatrix};
use crate::rng::SplitMix64;
use crate::rope::Rope;
use crate::ssr::LayerUpdatePolicy;
use crate::trace::{LayerTrace, Modality};

const RMS_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct DecoderConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub vocab: usize,
    #[cfg_attr(feature = "serde", serde(default = "default_rope_base"))]
    pub rope_base: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub seed: u64,
}

fn default_rope_base() -> f64 {
    10000.0
}

impl DecoderConfig {
    pub fn new(
        num_layers: usize,
        hidden_dim: usize,
        num_heads: usize,
        ffn_dim: usize,
        vocab: usize,
        seed: u64,
    ) -> Self {
        Self { num_layers, hidden_dim, num_heads, ffn_dim, vocab, rope_base: default_rope_base(), seed }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [self.num_layers, self.hidden_dim, self.num_heads, self.ffn_dim, self.vocab];
        if counts.contains(&0) {
            bail!(Config, "all decoder sizes must be at least 1");
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            bail!(Config, "hidden_dim {} is not divisible by {} heads", self.hidden_dim, self.num_heads);
        }
        if !(self.rope_base > 0.0 && self.rope_base.is_finite()) {
            bail!(Config, "rope_base must be a positive finite number");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: DenseMatrix,
    pub wk: DenseMatrix,
    pub wv: DenseMatrix,
    pub wo: DenseMatrix,
    pub w_gate: DenseMatrix,
    pub w_up: DenseMatrix,
    pub w_down: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDecoder {
    cfg: DecoderConfig,
    layers: Vec<LayerWeights>,
    w_out: DenseMatrix,
}

/// Builds a decoder with seeded weights; identical configs give identical weights.
pub fn build_decoder(cfg: &DecoderConfig) -> Result<ToyDecoder> {
    cfg.validate()?;
    let (h, m) = (cfg.hidden_dim, cfg.ffn_dim);
    let bound = 1.0 / libm::sqrt(h as f64);
    let mut rng = SplitMix64::new(cfg.seed);
    let mut draw = |r: usize, c: usize| DenseMatrix::from_raw(r, c, (0..r * c).map(|_| rng.symmetric(bound)).collect());
    let layers = (0..cfg.num_layers)
        .map(|_| LayerWeights {
            wq: draw(h, h),
            wk: draw(h, h),
            wv: draw(h, h),
            wo: draw(h, h),
            w_gate: draw(h, m),
            w_up: draw(h, m),
            w_down: draw(m, h),
        })
        .collect();
    let w_out = draw(h, cfg.vocab);
    Ok(ToyDecoder { cfg: cfg.clone(), layers, w_out })
}

/// Seeded embeddings for `v` visual tokens followed by `t` text tokens,
/// uniform in `[-1, 1)`.
pub fn synthesize_embeddings(seed: u64, v: usize, t: usize, h: usize) -> (DenseMatrix, Vec<Modality>) {
    let mut rng = SplitMix64::new(seed);
    let data = (0..(v + t) * h).map(|_| rng.symmetric(1.0)).collect();
    let mut modality = vec![Modality::Visual; v];
    modality.extend(core::iter::repeat_n(Modality::Text, t));
    (DenseMatrix::from_raw(v + t, h, data), modality)
}

/// Hidden states between layers.
///
/// Rows follow sequence order with the `num_visual` visual tokens first.
/// `positions` holds each row's original sequence index; it drives rotary
/// embeddings and survives token removal.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub hidden: DenseMatrix,
    pub positions: Vec<usize>,
    pub num_visual: usize,
}

impl DecoderState {
    pub fn new(hidden: DenseMatrix, positions: Vec<usize>, num_visual: usize) -> Result<Self> {
        if positions.len() != hidden.rows() {
            bail!(Shape, "{} positions for {} rows", positions.len(), hidden.rows());
        }
        if num_visual >= hidden.rows() {
            bail!(Validation, "state needs at least one text token");
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            bail!(Validation, "positions must be strictly increasing");
        }
        Ok(Self { hidden, positions, num_visual })
    }

    /// State for raw embeddings at positions `0..n`.
    pub fn from_embeddings(embeddings: &DenseMatrix, modality: &[Modality]) -> Result<Self> {
        if modality.len() != embeddings.rows() {
            bail!(Shape, "{} modality labels for {} tokens", modality.len(), embeddings.rows());
        }
        let num_visual = modality.iter().take_while(|m| **m == Modality::Visual).count();
        if modality[num_visual..].contains(&Modality::Visual) {
            bail!(Validation, "visual tokens must form a prefix before all text tokens");
        }
        Self::new(embeddings.clone(), (0..embeddings.rows()).collect(), num_visual)
    }

    pub fn num_tokens(&self) -> usize {
        self.hidden.rows()
    }

    pub fn num_text(&self) -> usize {
        self.hidden.rows() - self.num_visual
    }

    pub fn visual_states(&self) -> DenseMatrix {
        self.hidden.row_range(0, self.num_visual)
    }

    /// Keeps the visual rows whose original position is in `keep` (ascending
    /// or not) plus every text row.
    pub fn retain_visual(&mut self, keep: &[usize]) -> Result<()> {
        let rows: Vec<usize> =
            (0..self.num_tokens()).filter(|&r| r >= self.num_visual || keep.contains(&self.positions[r])).collect();
        let kept_visual = rows.iter().filter(|&&r| r < self.num_visual).count();
        if kept_visual == 0 && self.num_visual > 0 {
            bail!(Validation, "sparse set keeps none of the remaining visual tokens");
        }
        self.hidden = self.hidden.select_rows(&rows)?;
        self.positions = rows.iter().map(|&r| self.positions[r]).collect();
        self.num_visual = kept_visual;
        Ok(())
    }
}

/// Chooses the update policy of each layer while a forward pass runs.
pub trait LayerPlanner {
    fn plan(&mut self, decoder: &ToyDecoder, layer: usize, state: &DecoderState) -> Result<LayerUpdatePolicy>;
}

/// A fixed per-layer schedule.
impl LayerPlanner for &[LayerUpdatePolicy] {
    fn plan(&mut self, decoder: &ToyDecoder, layer: usize, _: &DecoderState) -> Result<LayerUpdatePolicy> {
        if self.len() != decoder.cfg.num_layers {
            bail!(Validation, "schedule has {} entries for {} layers", self.len(), decoder.cfg.num_layers);
        }
        Ok(self[layer].clone())
    }
}

/// Every layer vanilla.
pub struct VanillaPlanner;

impl LayerPlanner for VanillaPlanner {
    fn plan(&mut self, _: &ToyDecoder, _: usize, _: &DecoderState) -> Result<LayerUpdatePolicy> {
        Ok(LayerUpdatePolicy::Vanilla)
    }
}

/// Reusable keys and values of frozen visual tokens, keyed by layer.
///
/// An entry is reused only when the frozen rows and their positions match
/// bit for bit. Visual tokens precede all text, so their states do not
/// depend on the prompt and entries can be shared across forwards.
#[derive(Debug, Clone, Default)]
pub struct FrozenKvCache {
    entries: Vec<Option<FrozenKv>>,
    hits: usize,
}

#[derive(Debug, Clone)]
struct FrozenKv {
    visual: Vec<f64>,
    positions: Vec<usize>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

impl FrozenKvCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hits(&self) -> usize {
        self.hits
    }
}

#[derive(Debug, Default)]
pub struct ForwardOptions<'a> {
    /// Record the hidden states entering and leaving every layer.
    pub capture: bool,
    /// Reuse frozen visual keys/values through this cache.
    pub frozen_kv_cache: Option<&'a mut FrozenKvCache>,
    /// Layers at which text queries may not attend to visual keys.
    pub block_text_to_visual: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    /// Hidden states after the last layer (surviving tokens only).
    pub final_hidden: DenseMatrix,
    /// Original positions of the rows of `final_hidden`.
    pub positions: Vec<usize>,
    pub next_token_logits: Vec<f64>,
    pub next_token_distribution: Vec<f64>,
    pub flops_counted: u64,
    pub frozen_kv_flops: u64,
    /// Active and context token counts of every layer.
    pub layer_costs: Vec<LayerCost>,
    pub policies: Vec<LayerUpdatePolicy>,
    /// Full-size states per layer; removed tokens are zero rows.
    pub trace: Option<LayerTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum UpdateMode {
    Vanilla,
    FreezeVisual,
}

#[derive(Default)]
struct Tally {
    counted: u64,
    frozen_kv: u64,
}

fn rms_norm(x: &[f64]) -> Vec<f64> {
    let ms = dot(x, x) / x.len() as f64;
    let inv = 1.0 / libm::sqrt(ms + RMS_EPS);
    x.iter().map(|v| v * inv).collect()
}

fn silu(x: f64) -> f64 {
    x / (1.0 + libm::exp(-x))
}

impl ToyDecoder {
    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    pub fn output_projection(&self) -> &DenseMatrix {
        &self.w_out
    }

    fn rope(&self) -> Rope {
        Rope::new(self.cfg.head_dim(), self.cfg.rope_base)
    }

    /// Relevance context at `layer`: the query of the last text token against
    /// the keys of the current visual tokens, both from the RMS-normalized
    /// layer input. Scores are summed over heads and scaled by `1/√d_head`.
    pub fn relevance_context(&self, layer: usize, state: &DecoderState, positional: bool) -> Result<RelevanceContext> {
        let w = self.layer_weights(layer)?;
        let last = state.num_tokens() - 1;
        let query = vecmat(&rms_norm(state.hidden.row(last)), &w.wq);
        let h = self.cfg.hidden_dim;
        let mut keys = Vec::with_capacity(state.num_visual * h);
        for r in 0..state.num_visual {
            keys.extend(vecmat(&rms_norm(state.hidden.row(r)), &w.wk));
        }
        let ctx = RelevanceContext::new(query, DenseMatrix::from_raw(state.num_visual, h, keys), self.cfg.head_dim());
        Ok(if positional {
            ctx.with_positions(PositionalEncoding::Enabled {
                rope: self.rope(),
                query_position: state.positions[last],
                key_positions: state.positions[..state.num_visual].to_vec(),
            })
        } else {
            ctx
        })
    }

    fn layer_weights(&self, layer: usize) -> Result<&LayerWeights> {
        match self.layers.get(layer) {
            Some(w) => Ok(w),
            None => bail!(Validation, "layer {layer} out of range for {} layers", self.cfg.num_layers),
        }
    }

    /// One decoder layer on `state`; returns the new hidden matrix.
    pub(crate) fn layer_step(
        &self,
        layer: usize,
        state: &DecoderState,
        mode: UpdateMode,
        block_text_to_visual: bool,
        cache: Option<&mut FrozenKvCache>,
    ) -> Result<(DenseMatrix, u64, u64)> {
        let w = self.layer_weights(layer)?;
        let mut tally = Tally::default();
        let out = self.layer_inner(layer, w, state, mode, block_text_to_visual, cache, &mut tally);
        Ok((out, tally.counted, tally.frozen_kv))
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_inner(
        &self,
        layer: usize,
        w: &LayerWeights,
        state: &DecoderState,
        mode: UpdateMode,
        block_text_to_visual: bool,
        cache: Option<&mut FrozenKvCache>,
        tally: &mut Tally,
    ) -> DenseMatrix {
        let (h, m) = (self.cfg.hidden_dim, self.cfg.ffn_dim);
        let n = state.num_tokens();
        let nv = state.num_visual;
        let hd = self.cfg.head_dim();
        let rope = self.rope();
        let first_active = match mode {
            UpdateMode::Vanilla => 0,
            UpdateMode::FreezeVisual => nv,
        };
        let frozen = first_active > 0;
        let mac = |rows: usize, inner: usize, cols: usize| 2 * (rows * inner * cols) as u64;

        let normed: Vec<Vec<f64>> = (0..n).map(|r| rms_norm(state.hidden.row(r))).collect();

        // keys and values for every token
        let mut keys: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(n);
        if frozen {
            let (fk, fv) = self.frozen_kv(layer, w, state, &normed, cache, tally);
            keys.extend(fk);
            values.extend(fv);
        }
        for r in first_active..n {
            let mut k = vecmat(&normed[r], &w.wk);
            rope.apply(&mut k, state.positions[r]);
            keys.push(k);
            values.push(vecmat(&normed[r], &w.wv));
        }
        tally.counted += 2 * mac(n - first_active, h, h);

        let scale = 1.0 / libm::sqrt(hd as f64);
        let mut out = state.hidden.clone();
        let mut scores = vec![0.0; n];
        for i in first_active..n {
            let mut q = vecmat(&normed[i], &w.wq);
            rope.apply(&mut q, state.positions[i]);
            let mut attn = vec![0.0; h];
            for head in 0..self.cfg.num_heads {
                let span = head * hd..(head + 1) * hd;
                for (j, s) in scores.iter_mut().enumerate() {
                    *s = dot(&q[span.clone()], &keys[j][span.clone()]) * scale;
                    let masked = j > i || (block_text_to_visual && i >= nv && j < nv);
                    if masked {
                        *s = f64::NEG_INFINITY;
                    }
                }
                softmax_in_place(&mut scores);
                for (j, p) in scores.iter().enumerate() {
                    for (a, vv) in attn[span.clone()].iter_mut().zip(&values[j][span.clone()]) {
                        *a += p * vv;
                    }
                }
            }
            let o = vecmat(&attn, &w.wo);
            out.row_mut(i).iter_mut().zip(&o).for_each(|(x, d)| *x += d);
        }
        let active = n - first_active;
        tally.counted += mac(active, h, h) * 2; // W_q and W_o
        tally.counted += mac(active, n, h) * 2; // scores and value weighting

        for i in first_active..n {
            let x = rms_norm(out.row(i));
            let gate = vecmat(&x, &w.w_gate);
            let up = vecmat(&x, &w.w_up);
            let act: Vec<f64> = gate.iter().zip(&up).map(|(g, u)| silu(*g) * u).collect();
            let down = vecmat(&act, &w.w_down);
            out.row_mut(i).iter_mut().zip(&down).for_each(|(x, d)| *x += d);
        }
        tally.counted += 3 * mac(active, h, m);
        out
    }

    fn frozen_kv(
        &self,
        layer: usize,
        w: &LayerWeights,
        state: &DecoderState,
        normed: &[Vec<f64>],
        cache: Option<&mut FrozenKvCache>,
        tally: &mut Tally,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let nv = state.num_visual;
        let h = self.cfg.hidden_dim;
        let visual = &state.hidden.data()[..nv * h];
        let positions = &state.positions[..nv];
        let compute = || {
            let rope = self.rope();
            let keys: Vec<Vec<f64>> = (0..nv)
                .map(|r| {
                    let mut k = vecmat(&normed[r], &w.wk);
                    rope.apply(&mut k, positions[r]);
                    k
                })
                .collect();
            let values = (0..nv).map(|r| vecmat(&normed[r], &w.wv)).collect();
            (keys, values)
        };
        tally.frozen_kv += 4 * (nv * h * h) as u64;
        match cache {
            None => compute(),
            Some(cache) => {
                if cache.entries.len() <= layer {
                    cache.entries.resize(layer + 1, None);
                }
                if let Some(e) = &cache.entries[layer] {
                    if e.visual.as_slice() == visual && e.positions.as_slice() == positions {
                        cache.hits += 1;
                        return (e.keys.clone(), e.values.clone());
                    }
                }
                let (keys, values) = compute();
                cache.entries[layer] = Some(FrozenKv {
                    visual: visual.to_vec(),
                    positions: positions.to_vec(),
                    keys: keys.clone(),
                    values: values.clone(),
                });
                (keys, values)
            }
        }
    }

    /// Forward pass over embeddings laid out as visual prefix + text.
    pub fn forward(
        &self,
        embeddings: &DenseMatrix,
        modality: &[Modality],
        planner: &mut dyn LayerPlanner,
        opts: ForwardOptions<'_>,
    ) -> Result<ForwardResult> {
        if embeddings.cols() != self.cfg.hidden_dim {
            bail!(Shape, "embeddings have {} dims, decoder expects {}", embeddings.cols(), self.cfg.hidden_dim);
        }
        let state = DecoderState::from_embeddings(embeddings, modality)?;
        self.run_from(0, state, modality.len(), planner, opts)
    }

    /// Forward with a static per-layer schedule.
    pub fn forward_schedule(
        &self,
        embeddings: &DenseMatrix,
        modality: &[Modality],
        schedule: &[LayerUpdatePolicy],
    ) -> Result<ForwardResult> {
        let mut planner = schedule;
        self.forward(embeddings, modality, &mut planner, ForwardOptions::default())
    }

    /// Runs layers `start_layer..` on an explicit state. `full_tokens` sizes
    /// the captured trace (original sequence length).
    pub fn run_from(
        &self,
        start_layer: usize,
        mut state: DecoderState,
        full_tokens: usize,
        planner: &mut dyn LayerPlanner,
        mut opts: ForwardOptions<'_>,
    ) -> Result<ForwardResult> {
        let h = self.cfg.hidden_dim;
        if state.hidden.cols() != h {
            bail!(Shape, "state has {} dims, decoder expects {h}", state.hidden.cols());
        }
        if start_layer > self.cfg.num_layers {
            bail!(Validation, "start layer {start_layer} beyond {} layers", self.cfg.num_layers);
        }
        if state.positions.last().is_some_and(|&p| p >= full_tokens) {
            bail!(Validation, "positions exceed the sequence length {full_tokens}");
        }
        // visual tokens form a prefix, so the first text token's position is the original visual count
        let full_visual = state.positions[state.num_visual];
        let mut captured = Vec::new();
        if opts.capture {
            captured.push(scatter(&state, full_tokens, h));
        }
        let mut tally = Tally::default();
        let mut layer_costs = Vec::new();
        let mut policies = Vec::new();
        for layer in start_layer..self.cfg.num_layers {
            let policy = planner.plan(self, layer, &state)?;
            let mode = match &policy {
                LayerUpdatePolicy::Vanilla => UpdateMode::Vanilla,
                LayerUpdatePolicy::FreezeVisual => UpdateMode::FreezeVisual,
                LayerUpdatePolicy::SparseVisual(active) => {
                    if active.is_empty() {
                        bail!(Validation, "sparse policy at layer {layer} keeps no visual token");
                    }
                    if let Some(&bad) = active.iter().find(|&&i| i >= full_visual) {
                        bail!(Validation, "sparse index {bad} out of range at layer {layer}");
                    }
                    state.retain_visual(active)?;
                    UpdateMode::Vanilla
                }
            };
            let n = state.num_tokens();
            layer_costs.push(match mode {
                UpdateMode::Vanilla => LayerCost::full(n),
                UpdateMode::FreezeVisual => LayerCost { active: state.num_text(), context: n },
            });
            let block = opts.block_text_to_visual.get(layer).copied().unwrap_or(false);
            let w = &self.layers[layer];
            let cache = opts.frozen_kv_cache.as_deref_mut();
            state.hidden = self.layer_inner(layer, w, &state, mode, block, cache, &mut tally);
            policies.push(policy);
            if opts.capture {
                captured.push(scatter(&state, full_tokens, h));
            }
        }
        debug_assert_eq!(tally.counted as u128, schedule_flops(&layer_costs, h, self.cfg.ffn_dim));

        let last = rms_norm(state.hidden.row(state.num_tokens() - 1));
        let logits = vecmat(&last, &self.w_out);
        let mut dist = logits.clone();
        softmax_in_place(&mut dist);

        let trace = if opts.capture {
            let mut modality = vec![Modality::Visual; full_visual];
            modality.resize(full_tokens, Modality::Text);
            Some(LayerTrace::new(modality, captured)?)
        } else {
            None
        };
        Ok(ForwardResult {
            final_hidden: state.hidden,
            positions: state.positions,
            next_token_logits: logits,
            next_token_distribution: dist,
            flops_counted: tally.counted,
            frozen_kv_flops: tally.frozen_kv,
            layer_costs,
            policies,
            trace,
        })
    }
}

fn scatter(state: &DecoderState, full_tokens: usize, h: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(full_tokens, h);
    for (r, &p) in state.positions.iter().enumerate() {
        m.row_mut(p).copy_from_slice(state.hidden.row(r));
    }
    m
}

/// Runs `schedule` on `v + t` synthetic tokens and returns the counted FLOPs
/// together with the analytic total derived from the schedule alone.
pub fn flops_counter_audit(
    decoder: &ToyDecoder,
    v: usize,
    t: usize,
    schedule: &[LayerUpdatePolicy],
    seed: u64,
) -> Result<(u64, u64)> {
    let cfg = decoder.config();
    let (emb, modality) = synthesize_embeddings(seed, v, t, cfg.hidden_dim);
    let result = decoder.forward_schedule(&emb, &modality, schedule)?;

    let mut visual: Vec<usize> = (0..v).collect();
    let mut costs = Vec::with_capacity(schedule.len());
    for p in schedule {
        match p {
            LayerUpdatePolicy::Vanilla => costs.push(LayerCost::full(t + visual.len())),
            LayerUpdatePolicy::FreezeVisual => costs.push(LayerCost { active: t, context: t + visual.len() }),
            LayerUpdatePolicy::SparseVisual(active) => {
                visual.retain(|i| active.contains(i));
                costs.push(LayerCost::full(t + visual.len()));
            }
        }
    }
    let analytic = schedule_flops(&costs, cfg.hidden_dim, cfg.ffn_dim);
    Ok((result.flops_counted, analytic as u64))
}
