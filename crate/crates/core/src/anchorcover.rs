//! AnchorCover visual-token selection.
//!
//! A budget of `K` visual tokens is filled in two passes. Anchors are the
//! top-scoring tokens under the last text token's attention logits; the rest
//! of the budget is covered by farthest point sampling over ℓ2-normalized
//! hidden states, seeded with the anchors. Every tie goes to the lower token
//! index.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::linalg::{dot, l2_normalize_rows, DenseMatrix};
use crate::rope::Rope;
use crate::round_half_up;

#[derive(Debug, Clone, PartialEq)]
pub enum PositionalEncoding {
    Disabled,
    /// Rotate the query and keys at their sequence positions before scoring.
    Enabled {
        rope: Rope,
        query_position: usize,
        key_positions: Vec<usize>,
    },
}

/// Query of the last text token against the keys of the visual tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceContext {
    pub query: Vec<f64>,
    pub visual_keys: DenseMatrix,
    pub scale: f64,
    pub positional_encoding: PositionalEncoding,
}

impl RelevanceContext {
    /// Context with `scale = 1/sqrt(d_k)` and positional encoding disabled.
    pub fn new(query: Vec<f64>, visual_keys: DenseMatrix, d_k: usize) -> Self {
        Self {
            query,
            visual_keys,
            scale: 1.0 / libm::sqrt(d_k as f64),
            positional_encoding: PositionalEncoding::Disabled,
        }
    }

    pub fn with_positions(mut self, pe: PositionalEncoding) -> Self {
        self.positional_encoding = pe;
        self
    }
}

/// Scaled attention logits `(q·k_v)·scale`, one per visual token.
pub fn relevance_scores(ctx: &RelevanceContext) -> Result<Vec<f64>> {
    let keys = &ctx.visual_keys;
    if keys.rows() == 0 {
        bail!(Validation, "no visual keys to score");
    }
    if ctx.query.len() != keys.cols() {
        bail!(Shape, "query has {} dims but keys have {}", ctx.query.len(), keys.cols());
    }
    match &ctx.positional_encoding {
        PositionalEncoding::Disabled => {
            Ok((0..keys.rows()).map(|v| dot(&ctx.query, keys.row(v)) * ctx.scale).collect())
        }
        PositionalEncoding::Enabled { rope, query_position, key_positions } => {
            if key_positions.len() != keys.rows() {
                bail!(Shape, "{} key positions for {} keys", key_positions.len(), keys.rows());
            }
            let mut q = ctx.query.clone();
            rope.apply(&mut q, *query_position);
            let mut k = vec![0.0; keys.cols()];
            Ok((0..keys.rows())
                .map(|v| {
                    k.copy_from_slice(keys.row(v));
                    rope.apply(&mut k, key_positions[v]);
                    dot(&q, &k) * ctx.scale
                })
                .collect())
        }
    }
}

/// Indices ordered by descending score, lower index first on ties.
pub(crate) fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// The `k` highest-scoring indices, returned in ascending order.
pub fn select_anchors(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() {
        bail!(Validation, "cannot pick {k} anchors from {} tokens", scores.len());
    }
    let mut top: Vec<usize> = rank_by_score(scores).into_iter().take(k).collect();
    top.sort_unstable();
    Ok(top)
}

/// Farthest point sampling on ℓ2-normalized rows.
///
/// Grows `seed` until it holds `k_total` indices, each step adding the
/// unselected row whose distance to its nearest selected row is largest. With
/// an empty seed the walk starts from row 0. Returns only the added indices,
/// in the order they were picked.
pub fn fps_expand(states: &DenseMatrix, seed: &[usize], k_total: usize) -> Result<Vec<usize>> {
    let v = states.rows();
    if k_total > v {
        bail!(Validation, "cannot select {k_total} of {v} tokens");
    }
    if k_total < seed.len() {
        bail!(Validation, "budget {k_total} is smaller than the {} seed tokens", seed.len());
    }
    let mut selected = vec![false; v];
    for &s in seed {
        if s >= v {
            bail!(Validation, "seed index {s} out of range for {v} tokens");
        }
        if selected[s] {
            bail!(Validation, "seed index {s} repeated");
        }
        selected[s] = true;
    }
    let normed = l2_normalize_rows(states);
    let mut added = Vec::with_capacity(k_total - seed.len());
    let mut nearest = vec![f64::INFINITY; v];
    let absorb = |idx: usize, nearest: &mut [f64]| {
        let hv = normed.row(idx);
        for u in 0..v {
            let d = distance(normed.row(u), hv);
            if d < nearest[u] {
                nearest[u] = d;
            }
        }
    };
    for &s in seed {
        absorb(s, &mut nearest);
    }
    if seed.is_empty() && k_total > 0 {
        selected[0] = true;
        added.push(0);
        absorb(0, &mut nearest);
    }
    while seed.len() + added.len() < k_total {
        let mut best: Option<(usize, f64)> = None;
        for u in (0..v).filter(|&u| !selected[u]) {
            if best.is_none_or(|(_, d)| nearest[u] > d) {
                best = Some((u, nearest[u]));
            }
        }
        let (u, _) = best.expect("budget leaves an unselected token");
        selected[u] = true;
        added.push(u);
        absorb(u, &mut nearest);
    }
    Ok(added)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Anchor,
    Cover,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Anchor => "anchor",
            Role::Cover => "cover",
        }
    }
}

/// Result of AnchorCover on one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunePlan {
    pub anchor_set: Vec<usize>,
    pub cover_set: Vec<usize>,
    pub selected: Vec<usize>,
    pub budget_k: usize,
    pub relevance_scores: Vec<f64>,
}

impl PrunePlan {
    /// `(token, role, score)` for every selected token, ascending by token.
    pub fn roles(&self) -> Vec<(usize, Role, f64)> {
        self.selected
            .iter()
            .map(|&i| {
                let role = if self.anchor_set.binary_search(&i).is_ok() { Role::Anchor } else { Role::Cover };
                (i, role, self.relevance_scores[i])
            })
            .collect()
    }
}

/// Anchors receive `round(r_anchor·K)` of the budget.
pub fn anchor_count(budget_k: usize, r_anchor: f64) -> usize {
    round_half_up(r_anchor * budget_k as f64).min(budget_k)
}

/// Runs relevance scoring, anchor selection and FPS coverage on the visual
/// `states` (one row per visual token).
///
/// When no anchors are allotted, FPS starts from the single most relevant
/// token, which then counts as cover.
pub fn plan_prune(states: &DenseMatrix, ctx: &RelevanceContext, budget_k: usize, r_anchor: f64) -> Result<PrunePlan> {
    let v = states.rows();
    if ctx.visual_keys.rows() != v {
        bail!(Shape, "{} keys for {v} visual tokens", ctx.visual_keys.rows());
    }
    if budget_k == 0 || budget_k > v {
        bail!(Validation, "budget {budget_k} outside 1..={v}");
    }
    if !(0.0..=1.0).contains(&r_anchor) {
        bail!(Validation, "anchor ratio {r_anchor} outside [0, 1]");
    }
    let scores = relevance_scores(ctx)?;
    let k_anchor = anchor_count(budget_k, r_anchor);
    let anchor_set = select_anchors(&scores, k_anchor)?;
    let mut cover_set = if anchor_set.is_empty() {
        let start = select_anchors(&scores, 1)?;
        let mut rest = fps_expand(states, &start, budget_k)?;
        rest.push(start[0]);
        rest
    } else {
        fps_expand(states, &anchor_set, budget_k)?
    };
    cover_set.sort_unstable();
    let mut selected: Vec<usize> = anchor_set.iter().chain(&cover_set).copied().collect();
    selected.sort_unstable();
    Ok(PrunePlan { anchor_set, cover_set, selected, budget_k, relevance_scores: scores })
}

/// Largest instance [`oracle_best_subset`] will enumerate.
pub const ORACLE_MAX_TOKENS: usize = 14;

/// Smallest pairwise distance between ℓ2-normalized rows in `subset`
/// (zero for fewer than two rows).
pub fn min_pairwise_distance(normed: &DenseMatrix, subset: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, &a) in subset.iter().enumerate() {
        for &b in &subset[i + 1..] {
            best = best.min(distance(normed.row(a), normed.row(b)));
        }
    }
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

/// Exhaustive maximizer of `Σ score + λ·min-pairwise-distance` over all
/// `budget_k`-subsets; ties go to the lexicographically smallest subset.
///
/// A reference for testing the greedy pipeline, limited to 14 tokens.
pub fn oracle_best_subset(states: &DenseMatrix, scores: &[f64], budget_k: usize, lambda: f64) -> Result<Vec<usize>> {
    let v = states.rows();
    if v > ORACLE_MAX_TOKENS {
        return Err(crate::Error::Refusal(alloc::format!(
            "exhaustive search over {v} tokens exceeds {ORACLE_MAX_TOKENS}"
        )));
    }
    if scores.len() != v {
        bail!(Shape, "{} scores for {v} tokens", scores.len());
    }
    if budget_k > v {
        bail!(Validation, "budget {budget_k} exceeds {v} tokens");
    }
    let normed = l2_normalize_rows(states);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_combination(v, budget_k, |subset| {
        let rel: f64 = subset.iter().map(|&i| scores[i]).sum();
        let obj = rel + lambda * min_pairwise_distance(&normed, subset);
        if best.as_ref().is_none_or(|(b, _)| obj > *b) {
            best = Some((obj, subset.to_vec()));
        }
    });
    Ok(best.map(|(_, s)| s).unwrap_or_default())
}

/// Visits all `k`-subsets of `0..n` in lexicographic order.
pub fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
