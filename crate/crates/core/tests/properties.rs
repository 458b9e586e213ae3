use noisy_cc::decision::{
    clustering_error, decide_pair, path_difference, path_sign, recover_clusters, shift_error, Clustering,
    RecoveryMode, Verdict,
};
use noisy_cc::graph::{sample_query_graph, QueryGraph, SamplingPlan, Variant};
use noisy_cc::paths::{build_path_family, verify_family, PathParams};
use noisy_cc::{Labeling, NoiseSpec, NoisyOracle};
use proptest::prelude::*;

fn small_params(n: usize, depth1: usize, depth2: usize, bf: usize, br: usize) -> PathParams {
    PathParams {
        depth1,
        depth2,
        branch_first: bf,
        branch_rest: br,
        ..PathParams::theoretical(n, 0.4, 4.0).unwrap()
    }
}

fn modular_noise(k: usize, q: f64, general: bool) -> NoiseSpec {
    if general {
        let mut w = vec![0.0; k];
        w[0] = 1.0 - q;
        w[1] = q / 2.0;
        w[k - 1] += q / 2.0;
        NoiseSpec::ModularGeneral { weights: w }
    } else {
        NoiseSpec::ModularPlusMinus { q }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn families_are_well_formed_and_deterministic(
        seed in any::<u64>(),
        n in 40usize..120,
        p in 0.2f64..0.9,
        d1 in 1usize..3,
        d2 in 0usize..2,
        bf in 1usize..6,
        br in 1usize..3,
        u in 0usize..40,
        v in 0usize..40,
    ) {
        prop_assume!(u != v);
        let lab = Labeling::generate(n, 2, None, seed).unwrap();
        let g = sample_query_graph(&lab, &NoiseSpec::SignFlip { q: 0.2 }, SamplingPlan::Bernoulli { p }, seed).unwrap();
        let params = small_params(n, d1, d2, bf, br);
        let a = build_path_family(&g, u, v, &params);
        let b = build_path_family(&g, u, v, &params);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(&a, &b);
                prop_assert_eq!(verify_family(&g, &a, &params), Ok(()));
                prop_assert!(a.max_read >= 1);
            }
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            _ => prop_assert!(false, "nondeterministic success"),
        }
    }

    #[test]
    fn reversed_family_gives_the_mirrored_verdict(
        seed in any::<u64>(),
        k in 2usize..6,
        q in 0.0f64..0.45,
    ) {
        let n = 60;
        let noise = if k == 2 { NoiseSpec::SignFlip { q } } else { NoiseSpec::ModularPlusMinus { q } };
        let lab = Labeling::generate(n, k, None, seed).unwrap();
        let g = sample_query_graph(&lab, &noise, SamplingPlan::Bernoulli { p: 0.6 }, seed).unwrap();
        let params = small_params(n, 1, 1, 8, 2);
        if let Ok(f) = build_path_family(&g, 0, 1, &params) {
            let fwd = decide_pair(&f, &g).unwrap();
            let back = decide_pair(&f.reversed(), &g).unwrap();
            prop_assert_eq!(fwd.n_paths, back.n_paths);
            if !fwd.tie {
                let d = fwd.verdict.as_difference();
                prop_assert_eq!(back.verdict.as_difference(), (k as u32 - d) % k as u32);
            }
        }
    }

    #[test]
    fn signs_match_parity_and_differences_telescope(
        seed in any::<u64>(),
        len in 1usize..12,
        k in 2usize..7,
    ) {
        let n = 30;
        let lab = Labeling::generate(n, k, None, seed).unwrap();
        let noise = if k == 2 { NoiseSpec::SignFlip { q: 0.3 } } else { NoiseSpec::ModularPlusMinus { q: 0.3 } };
        let g = sample_query_graph(&lab, &noise, SamplingPlan::Bernoulli { p: 1.0 }, seed).unwrap();
        let path: Vec<usize> = (0..=len).map(|i| (i * 7 + seed as usize % 5) % n).collect();
        prop_assume!(path.windows(2).all(|w| w[0] != w[1]));
        if k == 2 {
            let negatives = path.windows(2).filter(|w| g.response(w[0], w[1]) == Some(-1)).count();
            let want = if negatives % 2 == 0 { 1 } else { -1 };
            prop_assert_eq!(path_sign(&path, &g).unwrap(), want);
        } else {
            let sum: i64 = path.windows(2).map(|w| g.response(w[0], w[1]).unwrap() as i64).sum();
            prop_assert_eq!(path_difference(&path, &g).unwrap() as i64, sum.rem_euclid(k as i64));
            let rev: Vec<usize> = path.iter().rev().copied().collect();
            let back = path_difference(&rev, &g).unwrap();
            prop_assert_eq!(back as i64, (-sum).rem_euclid(k as i64));
        }
    }

    #[test]
    fn noiseless_recovery_is_exact(seed in any::<u64>(), k in 2usize..5, n in 10usize..40, all_pairs in any::<bool>()) {
        let noise = if k == 2 { NoiseSpec::SignFlip { q: 0.0 } } else { NoiseSpec::ModularPlusMinus { q: 0.0 } };
        let lab = Labeling::generate(n, k, None, seed).unwrap();
        let g = sample_query_graph(&lab, &noise, SamplingPlan::Bernoulli { p: 1.0 }, seed).unwrap();
        let mode = if all_pairs { RecoveryMode::AllPairs } else { RecoveryMode::Anchored };
        let r = recover_clusters(&g, &small_params(n, 1, 0, 3, 1), mode).unwrap();
        prop_assert!(shift_error(&r.clustering, &lab).unwrap().exact);
        if all_pairs {
            prop_assert_eq!(r.diagnostics.inconsistent_triangles, Some(0));
        }
    }

    #[test]
    fn recovery_is_invariant_under_group_shift(seed in any::<u64>(), k in 3usize..6, s in 1u32..5) {
        let n = 45;
        let s = s % k as u32;
        let lab = Labeling::generate(n, k, None, seed).unwrap();
        let shifted = lab.shifted(s);
        let noise = NoiseSpec::ModularPlusMinus { q: 0.1 };
        let plan = SamplingPlan::Bernoulli { p: 0.7 };
        let a = sample_query_graph(&lab, &noise, plan, seed).unwrap();
        let b = sample_query_graph(&shifted, &noise, plan, seed).unwrap();
        // Differences are shift-invariant, so the noisy answers coincide.
        prop_assert_eq!(a.edges().collect::<Vec<_>>(), b.edges().collect::<Vec<_>>());
        let params = small_params(n, 1, 0, 6, 1);
        let ra = recover_clusters(&a, &params, RecoveryMode::Anchored).unwrap();
        let rb = recover_clusters(&b, &params, RecoveryMode::Anchored).unwrap();
        prop_assert_eq!(ra.clustering, rb.clustering);
    }

    #[test]
    fn sign_recovery_is_invariant_under_swapping_colors(seed in any::<u64>()) {
        let n = 50;
        let lab = Labeling::generate(n, 2, None, seed).unwrap();
        let swapped = lab.relabeled(&[1, 0]).unwrap();
        let noise = NoiseSpec::SignFlip { q: 0.1 };
        let plan = SamplingPlan::Bernoulli { p: 0.7 };
        let a = sample_query_graph(&lab, &noise, plan, seed).unwrap();
        let b = sample_query_graph(&swapped, &noise, plan, seed).unwrap();
        prop_assert_eq!(a.edges().collect::<Vec<_>>(), b.edges().collect::<Vec<_>>());
        let params = small_params(n, 1, 0, 6, 1);
        let ra = recover_clusters(&a, &params, RecoveryMode::Anchored).unwrap();
        prop_assert_eq!(
            clustering_error(&ra.clustering, &lab).unwrap(),
            clustering_error(&ra.clustering, &swapped).unwrap()
        );
    }

    #[test]
    fn general_step_law_matches_plus_minus(seed in any::<u64>(), k in 3usize..7, q in 0.0f64..0.45) {
        let lab = Labeling::generate(40, k, None, seed).unwrap();
        let plan = SamplingPlan::Bernoulli { p: 0.5 };
        let a = sample_query_graph(&lab, &modular_noise(k, q, false), plan, seed).unwrap();
        let b = sample_query_graph(&lab, &modular_noise(k, q, true), plan, seed).unwrap();
        prop_assert_eq!(a.edges().collect::<Vec<_>>(), b.edges().collect::<Vec<_>>());
        prop_assert_eq!(a.variant(), Variant::ModularPm);
        prop_assert_eq!(b.variant(), Variant::ModularGeneral);
    }

    #[test]
    fn graph_text_round_trip(seed in any::<u64>(), k in 2usize..6, p in 0.0f64..1.0) {
        let noise = if k == 2 { NoiseSpec::SignFlip { q: 0.2 } } else { NoiseSpec::ModularPlusMinus { q: 0.2 } };
        let lab = Labeling::generate(25, k, None, seed).unwrap();
        let g = sample_query_graph(&lab, &noise, SamplingPlan::Bernoulli { p }, seed).unwrap();
        let mut buf = Vec::new();
        g.write_text(&mut buf).unwrap();
        let back = QueryGraph::read_text(&buf[..]).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn oracle_answers_are_order_free(seed in any::<u64>(), k in 2usize..6, x in 0usize..20, y in 0usize..20) {
        prop_assume!(x != y);
        let lab = Labeling::generate(20, k, None, seed).unwrap();
        let noise = if k == 2 { NoiseSpec::SignFlip { q: 0.3 } } else { NoiseSpec::ModularPlusMinus { q: 0.3 } };
        let modulus = (k > 2).then_some(k as u32);
        let o = NoisyOracle::new(&lab, noise.clone(), seed).unwrap();
        let fwd = o.query(x, y).unwrap();
        let fresh = NoisyOracle::new(&lab, noise, seed).unwrap();
        let back = fresh.query(y, x).unwrap();
        prop_assert_eq!(fwd, back);
        let xy = fwd.read_from(x, modulus);
        let yx = fwd.read_from(y, modulus);
        match modulus {
            None => prop_assert_eq!(xy, yx),
            Some(m) => prop_assert_eq!((xy + yx).rem_euclid(m as i32), 0),
        }
    }
}

#[test]
fn single_edge_path_reads_the_stored_orientation() {
    let g = QueryGraph::from_edges(3, 5, Variant::ModularPm, [(0, 2, 3)]).unwrap();
    assert_eq!(path_difference(&[0, 2], &g).unwrap(), 3);
    assert_eq!(path_difference(&[2, 0], &g).unwrap(), 2);
}

#[test]
fn model_one_verdicts_from_a_noiseless_clustering() {
    let lab = Labeling::from_groups(2, vec![0, 0, 1, 1, 0, 1, 1, 0, 0, 1]).unwrap();
    let g = sample_query_graph(&lab, &NoiseSpec::SignFlip { q: 0.0 }, SamplingPlan::Bernoulli { p: 1.0 }, 3).unwrap();
    let params = small_params(10, 1, 0, 2, 1);
    for v in 1..10 {
        let f = build_path_family(&g, 0, v, &params).unwrap();
        let want = if lab.group(v) == 0 { Verdict::Same } else { Verdict::Different };
        assert_eq!(decide_pair(&f, &g).unwrap().verdict, want);
    }
    let truth = Clustering {
        n: 10,
        k: 2,
        assignment: lab.groups().to_vec(),
    };
    assert!(clustering_error(&truth, &lab).unwrap().exact);
}
