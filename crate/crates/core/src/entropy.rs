//! Truncated matrix entropy of stacked hidden states.
//!
//! For a group of `N` tokens with `D`-dimensional states stacked into `Z`, the
//! Gram matrix is `ZᵀZ` when `N ≥ D` and `ZZᵀ` otherwise (both share the same
//! nonzero spectrum). The top `k` eigenvalues before the spectrum's elbow are
//! normalized by their sum and the Shannon entropy of that distribution is
//! reported.

use alloc::vec::Vec;

use crate::error::{bail, Error, Result};
use crate::linalg::{sym_eig, DenseMatrix};
use crate::trace::{LayerTrace, TokenGroup};

/// Which product the Gram matrix was formed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramSide {
    /// `ZZᵀ`, an `N×N` matrix (`N < D`).
    TokensSide,
    /// `ZᵀZ`, a `D×D` matrix (`N ≥ D`).
    DimsSide,
}

impl GramSide {
    pub fn for_shape(rows: usize, cols: usize) -> Self {
        if rows >= cols {
            GramSide::DimsSide
        } else {
            GramSide::TokensSide
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSummary {
    /// Gram eigenvalues, descending, round-off negatives clipped to zero.
    pub eigenvalues: Vec<f64>,
    pub elbow_k: usize,
    pub truncated_entropy: f64,
    pub gram_side: GramSide,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub layer: usize,
    pub group: TokenGroup,
    pub summary: SpectrumSummary,
}

/// Per-layer, per-group spectra in layer-major order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EntropyTrajectory {
    pub records: Vec<TrajectoryRecord>,
}

impl EntropyTrajectory {
    /// Entropy of `group` at every layer, if that group was probed.
    pub fn curve(&self, group: TokenGroup) -> Option<Vec<f64>> {
        let c: Vec<f64> =
            self.records.iter().filter(|r| r.group == group).map(|r| r.summary.truncated_entropy).collect();
        (!c.is_empty()).then_some(c)
    }

    pub fn num_layers(&self) -> usize {
        self.records.iter().map(|r| r.layer + 1).max().unwrap_or(0)
    }
}

/// Gram matrix of `z`, picking the smaller of `ZᵀZ` and `ZZᵀ`.
///
/// Only the upper triangle is accumulated and then mirrored, so the result is
/// exactly symmetric.
pub fn gram(z: &DenseMatrix) -> Result<DenseMatrix> {
    let (n, d) = (z.rows(), z.cols());
    if n == 0 || d == 0 {
        bail!(Validation, "Gram matrix of an empty {n}x{d} matrix");
    }
    let g = match GramSide::for_shape(n, d) {
        GramSide::DimsSide => {
            let mut g = DenseMatrix::zeros(d, d);
            for i in 0..d {
                for j in i..d {
                    let mut acc = 0.0;
                    for r in 0..n {
                        acc += z.get(r, i) * z.get(r, j);
                    }
                    g.set(i, j, acc);
                    g.set(j, i, acc);
                }
            }
            g
        }
        GramSide::TokensSide => {
            let mut g = DenseMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let acc = crate::linalg::dot(z.row(i), z.row(j));
                    g.set(i, j, acc);
                    g.set(j, i, acc);
                }
            }
            g
        }
    };
    Ok(g)
}

const CLIP_TOL: f64 = 1e-9;

/// Clips round-off negatives of a PSD spectrum to zero.
///
/// Values down to `-1e-9·max(1, λ₁)` are treated as zero; anything more
/// negative means the input was not a Gram matrix.
pub fn clip_spectrum(eigenvalues: &[f64]) -> Result<Vec<f64>> {
    let top = eigenvalues.first().copied().unwrap_or(0.0).abs().max(1.0);
    eigenvalues
        .iter()
        .map(|&l| {
            if l >= 0.0 {
                Ok(l)
            } else if l >= -CLIP_TOL * top {
                Ok(0.0)
            } else {
                Err(Error::Domain(alloc::format!("eigenvalue {l} is too negative for a Gram matrix")))
            }
        })
        .collect()
}

const ELBOW_FLOOR: f64 = 1e-12;

/// Number of eigenvalues kept before the spectrum's elbow.
///
/// Eigenvalues above `1e-12·λ₁` are considered. The elbow sits at the largest
/// log-gap `ln λ_i − ln λ_{i+1}` (first one on ties); if no gap reaches
/// `ln 2` the spectrum has no elbow and all of them are kept.
pub fn elbow_index(eigenvalues: &[f64]) -> Result<usize> {
    let top = match eigenvalues.first() {
        Some(&l) if l > 0.0 => l,
        _ => return Err(Error::DegenerateSpectrum),
    };
    let floor = ELBOW_FLOOR * top;
    let kept = eigenvalues.iter().take_while(|&&l| l > floor).count();
    let mut best_k = kept;
    let mut best_gap = f64::NEG_INFINITY;
    for i in 0..kept.saturating_sub(1) {
        let gap = libm::log(eigenvalues[i]) - libm::log(eigenvalues[i + 1]);
        if gap > best_gap {
            best_gap = gap;
            best_k = i + 1;
        }
    }
    if best_gap < core::f64::consts::LN_2 {
        best_k = kept;
    }
    Ok(best_k)
}

/// Shannon entropy (natural log) of the top `k` eigenvalues normalized by
/// their sum.
pub fn truncated_entropy(eigenvalues: &[f64], k: usize) -> Result<f64> {
    if k == 0 {
        bail!(Validation, "truncation rank must be at least 1");
    }
    let positive = eigenvalues.iter().filter(|&&l| l > 0.0).count();
    if k > positive || eigenvalues[..k].iter().any(|&l| l <= 0.0) {
        bail!(Validation, "truncation rank {k} exceeds the {positive} positive eigenvalues");
    }
    let top = &eigenvalues[..k];
    let trace: f64 = top.iter().sum();
    Ok(-top
        .iter()
        .map(|&l| {
            let p = l / trace;
            p * libm::log(p)
        })
        .sum::<f64>())
}

/// Gram → eigenvalues → elbow → truncated entropy for one token group.
pub fn spectrum_summary(z: &DenseMatrix) -> Result<SpectrumSummary> {
    let g = gram(z)?;
    let eig = sym_eig(&g)?;
    let eigenvalues = clip_spectrum(&eig.eigenvalues)?;
    let elbow_k = elbow_index(&eigenvalues)?;
    let truncated_entropy = truncated_entropy(&eigenvalues, elbow_k)?;
    Ok(SpectrumSummary { eigenvalues, elbow_k, truncated_entropy, gram_side: GramSide::for_shape(z.rows(), z.cols()) })
}

/// Probes every layer of `trace` for each requested token group.
pub fn probe_trace(trace: &LayerTrace, groups: &[TokenGroup]) -> Result<EntropyTrajectory> {
    if groups.is_empty() {
        bail!(Validation, "no token group requested");
    }
    let indices: Vec<(TokenGroup, Vec<usize>)> = groups.iter().map(|&g| (g, trace.group_indices(g))).collect();
    if let Some((g, _)) = indices.iter().find(|(_, idx)| idx.is_empty()) {
        bail!(Validation, "token group '{}' is empty in this trace", g.name());
    }
    let mut records = Vec::with_capacity(trace.num_layers() * groups.len());
    for (layer, states) in trace.states().iter().enumerate() {
        for (group, idx) in &indices {
            let z = states.select_rows(idx)?;
            records.push(TrajectoryRecord { layer, group: *group, summary: spectrum_summary(&z)? });
        }
    }
    Ok(EntropyTrajectory { records })
}
