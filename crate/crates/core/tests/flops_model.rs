use halfv_core::flops::{speedup, stage_flops, total_flops, vanilla_flops};
use halfv_core::{ArchProfile, Retention, SsrMode};
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn vanilla_goldens() {
    let seven = vanilla_flops(50, 576, 4096, 11008, 32);
    assert!(rel(seven.total, 8.31e12) <= 0.005, "{}", seven.total);
    let thirteen = vanilla_flops(50, 576, 5120, 13824, 40);
    assert!(rel(thirteen.total, 16.21e12) <= 0.005, "{}", thirteen.total);
}

#[test]
fn hand_evaluated_llava_budget() {
    let b = total_flops(&ArchProfile::llava_15_7b(), 50, 576, 4096, 11008, 32).unwrap();
    // 3·F(626) + 12·F(338) + 17·F_freeze(50, 338)
    assert_eq!(b.total, 2_792_256_176_128.0);
    assert_eq!(b.f3, stage_flops(50, 338, 4096, 11008));
}

#[test]
fn staged_speedups() {
    let van = vanilla_flops(50, 576, 4096, 11008, 32);
    let llava = total_flops(&ArchProfile::llava_15_7b(), 50, 576, 4096, 11008, 32).unwrap();
    assert!(speedup(&van, &llava).unwrap() >= 2.5);

    let van = vanilla_flops(50, 2352, 3584, 18944, 28);
    let qwen = total_flops(&ArchProfile::qwen25_vl_7b(), 50, 2352, 3584, 18944, 28).unwrap();
    assert_eq!(qwen.mode, Some(SsrMode::TokenSparsity));
    assert!(speedup(&van, &qwen).unwrap() >= 3.5);
}

#[test]
fn inconsistent_profiles_are_config_errors() {
    let mut p = ArchProfile::llava_15_7b();
    p.l_ivr = 40;
    assert!(matches!(total_flops(&p, 50, 576, 4096, 11008, 32), Err(halfv_core::Error::Config(_))));
}

fn profile(l_ivr: usize, r: f64, l_ssr: usize, mode: SsrMode) -> ArchProfile {
    ArchProfile {
        ssr_mode: mode,
        l_ivr,
        r_ivr: Retention::Schedule(vec![r, r / 4.0]),
        r_anchor: 0.2,
        l_ssr: Some(l_ssr),
        r_ssr: None,
        lambda: 1.0,
        epsilon: 1e-8,
    }
}

proptest! {
    #[test]
    fn budgets_are_consistent(t in 1usize..200, v in 0usize..3000, h in 1usize..512, m in 1usize..2048,
                              l in 3usize..48, r in 0.01f64..=1.0, sparse in any::<bool>()) {
        let l_ivr = 1 + l / 4;
        let l_ssr = (l_ivr + 1 + l / 3).min(l - 1);
        let mode = if sparse { SsrMode::TokenSparsity } else { SsrMode::LayerInactivity };
        let b = total_flops(&profile(l_ivr, r, l_ssr, mode), t, v, h, m, l).unwrap();
        prop_assert_eq!(b.l1 + b.l2 + b.l3, l);
        prop_assert_eq!(b.total, b.l1 as f64 * b.f1 + b.l2 as f64 * b.f2 + b.l3 as f64 * b.f3);
        prop_assert!(b.v_ssr <= b.v_prime && b.v_prime <= v);
        let van = vanilla_flops(t, v, h, m, l);
        prop_assert!(b.total <= van.total);
        if v > 1 {
            prop_assert!(b.total < van.total);
        }
    }

    #[test]
    fn totals_grow_with_every_size(t in 1usize..100, v in 1usize..1000, h in 1usize..256, m in 1usize..1024, l in 4usize..40) {
        let p = profile(1, 0.5, 2, SsrMode::LayerInactivity);
        let base = total_flops(&p, t, v, h, m, l).unwrap().total;
        prop_assert!(total_flops(&p, t, v + 2, h, m, l).unwrap().total > base);
        prop_assert!(total_flops(&p, t, v, h + 1, m, l).unwrap().total > base);
        prop_assert!(total_flops(&p, t, v, h, m + 1, l).unwrap().total > base);
        prop_assert!(total_flops(&p, t, v, h, m, l + 1).unwrap().total > base);
        let van = vanilla_flops(t, v, h, m, l).total;
        prop_assert!(vanilla_flops(t, v + 1, h, m, l).total > van);
    }
}

#[test]
fn doubling_tokens_quadruples_attention_term() {
    let attn = |n: usize| stage_flops(n, n, 64, 128) - stage_flops(n, 0, 64, 128);
    assert_eq!(attn(200), 4.0 * attn(100));
}
