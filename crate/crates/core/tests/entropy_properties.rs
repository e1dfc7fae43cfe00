mod common;

use common::{random_matrix, random_orthogonal, rng};
use halfv_core::entropy::{
    clip_spectrum, elbow_index, gram, probe_trace, spectrum_summary, truncated_entropy, GramSide,
};
use halfv_core::linalg::{matmul, sym_eig};
use halfv_core::{DenseMatrix, LayerTrace, Modality, TokenGroup};
use proptest::prelude::*;
use rand::Rng;

/// Entropy from an explicitly chosen Gram product.
fn entropy_of_gram(g: &DenseMatrix) -> f64 {
    let ev = clip_spectrum(&sym_eig(g).unwrap().eigenvalues).unwrap();
    let k = elbow_index(&ev).unwrap();
    truncated_entropy(&ev, k).unwrap()
}

#[test]
fn gram_branches_agree() {
    let mut r = rng(4);
    for case in 0..200 {
        let (n, d) = if case % 2 == 0 {
            (r.gen_range(2..8), r.gen_range(8..14))
        } else {
            (r.gen_range(8..14), r.gen_range(2..8))
        };
        let z = random_matrix(&mut r, n, d);
        let zt = z.transpose();
        let dims = entropy_of_gram(&matmul(&zt, &z).unwrap());
        let tokens = entropy_of_gram(&matmul(&z, &zt).unwrap());
        assert!((dims - tokens).abs() <= 1e-9, "case {case}: {dims} vs {tokens}");
        let s = spectrum_summary(&z).unwrap();
        assert_eq!(s.gram_side, GramSide::for_shape(n, d));
        assert!((s.truncated_entropy - dims).abs() <= 1e-9);
    }
}

#[test]
fn uniform_spectrum_gives_ln_k() {
    for k in 1..=64 {
        let h = truncated_entropy(&vec![2.5; k], k).unwrap();
        assert!((h - (k as f64).ln()).abs() <= 1e-12);
    }
}

#[test]
fn entropy_bounds_and_invariances_on_random_matrices() {
    let mut r = rng(11);
    for case in 0..500 {
        let n = r.gen_range(2..12);
        let d = r.gen_range(2..12);
        let z = random_matrix(&mut r, n, d);
        let s = spectrum_summary(&z).unwrap();
        let h = s.truncated_entropy;
        assert!(h >= 0.0 && h <= (s.elbow_k as f64).ln() + 1e-9, "case {case}: H={h} k={}", s.elbow_k);

        let c = r.gen_range(0.01..100.0);
        let scaled = spectrum_summary(&z.scale(c)).unwrap().truncated_entropy;
        assert!((scaled - h).abs() <= 1e-9, "case {case}: scale {c}");

        let q = random_orthogonal(&mut r, d);
        let rotated = spectrum_summary(&matmul(&z, &q).unwrap()).unwrap().truncated_entropy;
        assert!((rotated - h).abs() <= 1e-9, "case {case}: rotation");
    }
}

#[test]
fn orthonormal_rows_have_maximal_entropy() {
    let z = DenseMatrix::identity(5);
    let s = spectrum_summary(&z).unwrap();
    assert_eq!(s.elbow_k, 5);
    assert!((s.truncated_entropy - 5f64.ln()).abs() <= 1e-12);
}

#[test]
fn probe_emits_one_record_per_layer_and_group() {
    let mut r = rng(2);
    let modality = vec![Modality::Visual, Modality::Visual, Modality::Visual, Modality::Text, Modality::Text];
    let states = (0..4).map(|_| random_matrix(&mut r, 5, 6)).collect();
    let trace = LayerTrace::new(modality, states).unwrap();
    let traj = probe_trace(&trace, &[TokenGroup::Visual, TokenGroup::Text, TokenGroup::All]).unwrap();
    assert_eq!(traj.records.len(), 12);
    assert_eq!(traj.num_layers(), 4);
    let visual = traj.curve(TokenGroup::Visual).unwrap();
    for (l, h) in visual.iter().enumerate() {
        let z = trace.layer(l).select_rows(&[0, 1, 2]).unwrap();
        assert_eq!(*h, spectrum_summary(&z).unwrap().truncated_entropy);
    }

    let text_only = LayerTrace::new(vec![Modality::Text; 3], vec![random_matrix(&mut r, 3, 2)]).unwrap();
    assert!(probe_trace(&text_only, &[TokenGroup::Visual]).is_err());
    assert!(probe_trace(&text_only, &[]).is_err());
}

#[test]
fn gram_is_symmetric_psd() {
    let mut r = rng(8);
    for _ in 0..50 {
        let (n, d) = (r.gen_range(1..9), r.gen_range(1..9));
        let z = random_matrix(&mut r, n, d);
        let g = gram(&z).unwrap();
        assert_eq!(g, g.transpose());
        let ev = sym_eig(&g).unwrap().eigenvalues;
        assert!(clip_spectrum(&ev).is_ok());
    }
}

proptest! {
    #[test]
    fn entropy_ignores_row_order(seed in any::<u64>(), n in 2usize..9, d in 2usize..9) {
        let mut r = rng(seed);
        let z = random_matrix(&mut r, n, d);
        let mut order: Vec<usize> = (0..n).collect();
        order.reverse();
        let a = spectrum_summary(&z).unwrap().truncated_entropy;
        let b = spectrum_summary(&z.select_rows(&order).unwrap()).unwrap().truncated_entropy;
        prop_assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn entropy_within_bounds(seed in any::<u64>(), n in 1usize..10, d in 1usize..10) {
        let mut r = rng(seed);
        let s = spectrum_summary(&random_matrix(&mut r, n, d)).unwrap();
        prop_assert!(s.elbow_k >= 1 && s.elbow_k <= n.min(d));
        prop_assert!(s.truncated_entropy >= 0.0);
        prop_assert!(s.truncated_entropy <= (s.elbow_k as f64).ln() + 1e-9);
    }
}
