mod common;

use ndarray::{Array2, Array3};
use objectadd::backend::ToyConfig;
use objectadd::coalesce::coalesce;
use objectadd::domain::{CrossAttentionMap, EnhanceScope, LayerId, Resolution};
use objectadd::evaluation::{CaseRow, MetricReport};
use objectadd::expansion::{expand, neighbor_distance, neighborhood_mean, swap_latent};
use objectadd::layout::{energy, enhance_attention, inject_latent, should_inject_attention, should_inject_latent};
use objectadd::refocus::{cluster_map, morph_cleanup};
use objectadd::{BinaryMask, DenoiserBackend, GuidanceConfig, Latent, ToyBackend};
use proptest::prelude::*;

use common::flood_regions;

const LAYER: Resolution = Resolution::Layer(LayerId(1));

fn grid(max: usize) -> impl Strategy<Value = (usize, usize)> {
    (1..=max, 1..=max)
}

fn mask_strategy(max: usize) -> impl Strategy<Value = BinaryMask> {
    grid(max).prop_flat_map(|(h, w)| {
        proptest::collection::vec(any::<bool>(), h * w).prop_map(move |bits| {
            let data = Array2::from_shape_vec((h, w), bits.into_iter().map(u8::from).collect()).unwrap();
            BinaryMask::new(data, LAYER).unwrap()
        })
    })
}

fn latent_pair(max: usize) -> impl Strategy<Value = (Latent, Latent, BinaryMask)> {
    (grid(max), 1usize..4).prop_flat_map(|((h, w), c)| {
        (
            proptest::collection::vec(-10.0f64..10.0, h * w * c),
            proptest::collection::vec(-10.0f64..10.0, h * w * c),
            proptest::collection::vec(any::<bool>(), h * w),
        )
            .prop_map(move |(a, b, m)| {
                let a = Latent::new(Array3::from_shape_vec((h, w, c), a).unwrap(), 7).unwrap();
                let b = Latent::new(Array3::from_shape_vec((h, w, c), b).unwrap(), 7).unwrap();
                let m = BinaryMask::new(
                    Array2::from_shape_vec((h, w), m.into_iter().map(u8::from).collect()).unwrap(),
                    Resolution::Latent,
                )
                .unwrap();
                (a, b, m)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn downsample_after_upsample_is_identity(m in mask_strategy(10), f in 1usize..4) {
        let (h, w) = m.shape();
        let up = m.upsample((h * f, w * f), Resolution::Full).unwrap();
        prop_assert!(up.data().iter().all(|&v| v <= 1));
        let down = up.downsample((h, w), LAYER).unwrap();
        prop_assert_eq!(down, m);
    }

    #[test]
    fn energy_is_zero_only_with_all_mass_inside(
        m in mask_strategy(8),
        seed in any::<u64>(),
    ) {
        let (h, w) = m.shape();
        let mut r = common::rng(seed);
        let row = common::normal_array(&mut r, (1, h, w), 1.0).mapv(|v: f64| v.abs() + 1e-6);
        let map = CrossAttentionMap::new(LayerId(1), 3, row).unwrap();
        let e = energy(&map, &m, 0).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert_eq!(e == 0.0, m.count() == h * w);
    }

    #[test]
    fn injection_and_swap_are_idempotent((a, b, m) in latent_pair(8)) {
        let once = inject_latent(&a, &b, &m).unwrap();
        prop_assert_eq!(inject_latent(&once, &b, &m).unwrap(), once);
        let swapped = swap_latent(&a, &b, &m).unwrap();
        prop_assert_eq!(swap_latent(&swapped, &b, &m).unwrap(), swapped);
    }

    #[test]
    fn enhancement_touches_only_row_k(
        m in mask_strategy(8),
        tokens in 1usize..5,
        seed in any::<u64>(),
        masked in any::<bool>(),
    ) {
        let (h, w) = m.shape();
        let mut r = common::rng(seed);
        let scores = common::normal_array(&mut r, (tokens, h, w), 3.0).mapv(f64::abs);
        let map = CrossAttentionMap::new(LayerId(1), 3, scores).unwrap();
        let k = (seed as usize) % tokens;
        let scope = if masked { EnhanceScope::Masked } else { EnhanceScope::Row };
        let out = enhance_attention(&map, &m, k, scope).unwrap();
        prop_assert_eq!(out.skipped, m.is_empty());
        for t in (0..tokens).filter(|&t| t != k) {
            prop_assert_eq!(out.map.row(t), map.row(t));
        }
        if !m.is_empty() {
            prop_assert!((out.map.row(k).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn latent_schedule_within_attention_schedule(
        total in 1usize..200,
        lf in 0.01f64..=1.0,
        extra in 0.0f64..=1.0,
    ) {
        let af = (lf + extra * (1.0 - lf)).min(1.0);
        let config = GuidanceConfig {
            total_steps: total,
            latent_inject_frac: lf,
            attn_inject_frac: af,
            ..GuidanceConfig::default()
        };
        for t in 0..=total {
            if should_inject_latent(t, &config) {
                prop_assert!(should_inject_attention(t, &config));
            }
        }
    }

    #[test]
    fn cleanup_is_idempotent_and_adds_no_components(m in mask_strategy(14), min in 0usize..6) {
        let once = morph_cleanup(&m, min);
        prop_assert_eq!(morph_cleanup(&once, min), once.clone());
        prop_assert!(flood_regions(once.data(), 1).len() <= flood_regions(m.data(), 1).len());
    }

    #[test]
    fn clustering_is_seed_deterministic(
        (h, w) in grid(12),
        k in 2usize..5,
        seed in any::<u64>(),
    ) {
        prop_assume!(h * w >= k);
        let mut r = common::rng(seed);
        let row = common::normal_array(&mut r, (1, h, w), 1.0).index_axis_move(ndarray::Axis(0), 0);
        let a = cluster_map(row.view(), k, seed).unwrap();
        prop_assert_eq!(a.clone(), cluster_map(row.view(), k, seed).unwrap());
        prop_assert_eq!(a.sizes().iter().sum::<usize>(), h * w);
    }

    #[test]
    fn distance_decomposes((x, _, _) in latent_pair(6), i in 0usize..6, j in 0usize..6, di in 0usize..3, dj in 0usize..3) {
        let (h, w) = x.spatial();
        let seed = (i % h, j % w);
        let n = ((seed.0 + di).saturating_sub(1).min(h - 1), (seed.1 + dj).saturating_sub(1).min(w - 1));
        prop_assume!(n != seed);
        let d = neighbor_distance(&x, seed, n).unwrap();
        let mean = neighborhood_mean(&x, seed);
        let to_seed = (&x.cell(n.0, n.1) - &x.cell(seed.0, seed.1)).mapv(|v| v * v).sum().sqrt();
        let to_mean = (&x.cell(n.0, n.1) - &mean).mapv(|v| v * v).sum().sqrt();
        prop_assert!((2.0 * d - to_seed - to_mean).abs() < 1e-12);
    }

    #[test]
    fn expansion_grows_monotonically((x, _, m) in latent_pair(10), h2 in 0.0f64..30.0) {
        let (out, trace) = expand(&m, &x, h2).unwrap();
        prop_assert!(m.is_subset_of(&out));
        prop_assert_eq!(trace.rounds, trace.flipped_per_round.len());
        prop_assert_eq!(trace.flipped_per_round.last(), Some(&0));
        prop_assert_eq!(out.count() - m.count(), trace.flipped_per_round.iter().sum::<usize>());
    }

    #[test]
    fn report_means_match_rows(values in proptest::collection::vec(proptest::option::of(0.0f64..255.0), 1..20)) {
        let rows: Vec<CaseRow> = values
            .iter()
            .enumerate()
            .map(|(i, v)| CaseRow {
                id: format!("{i:03}"),
                by_pixels: *v,
                clip_score: v.map(|x| x / 2.0),
                clip_degenerate: v.map(|_| false),
                external_fid: None,
                error: v.is_none().then(|| "failed".to_owned()),
            })
            .collect();
        let report = MetricReport::new(rows, "toy", None);
        let ok: Vec<f64> = values.iter().flatten().copied().collect();
        let want = if ok.is_empty() { None } else { Some(ok.iter().sum::<f64>() / ok.len() as f64) };
        match (report.means.by_pixels, want) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
        prop_assert_eq!(report.failed_count, values.len() - ok.len());
    }
}

#[test]
fn coalesce_copies_base_rows_and_is_order_sensitive() {
    let b = ToyBackend::new(ToyConfig::default());
    let p = b.encode_text("a dog on a lawn").unwrap().embedding;
    let w = b.encode_text("a red hat").unwrap().embedding;
    let pw = coalesce(&p, &w).unwrap();
    for i in 0..=p.actual_tokens() {
        assert_eq!(pw.data().row(i), p.data().row(i));
    }
    assert_ne!(pw, coalesce(&w, &p).unwrap());
    let empty = b.encode_text("").unwrap().embedding;
    assert_eq!(coalesce(&empty, &empty).unwrap(), coalesce(&empty, &empty).unwrap());
}

#[test]
fn object_rows_do_not_see_the_base_prompt() {
    // The object word's row after coalescing depends only on the object
    // prompt, whatever base prompt it is spliced behind.
    let b = ToyBackend::new(ToyConfig::default());
    let w = b.encode_text("a red hat").unwrap().embedding;
    for base in ["a red dog", "a lake", "the hat hat"] {
        let p = b.encode_text(base).unwrap().embedding;
        let c = coalesce(&p, &w).unwrap();
        for j in 1..=w.actual_tokens() {
            assert_eq!(c.data().row(p.actual_tokens() + j), w.data().row(j));
        }
    }
}

#[test]
fn middle_range_enforced_unless_overridden() {
    let mut c = GuidanceConfig { inpaint_step: Some(30), ..GuidanceConfig::default() };
    assert!(c.validate().is_err());
    c.allow_any_inpaint_step = true;
    c.attn_inject_frac = 0.1;
    c.latent_inject_frac = 0.05;
    assert!(c.validate().is_ok());
}
