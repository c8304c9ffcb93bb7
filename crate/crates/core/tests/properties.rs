use proptest::prelude::*;
use tspsense::baselines::{score_detour, score_nn_distance, score_splice, score_two_opt_repair};
use tspsense::evaluation::{ranking, spearman_rho, topk_hit, zscore};
use tspsense::labeling::{label_edge_forbid, label_node_removal};
use tspsense::solver::{
    canonicalize, solve_brute_force, solve_brute_force_structural, solve_exact, solve_heuristic, tour_edges,
    tour_length, validate_tour,
};
use tspsense::{make_instance, Instance, SolveConstraints};

fn instance(max_n: usize) -> impl Strategy<Value = Instance> {
    (4..=max_n)
        .prop_flat_map(|n| prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), n))
        .prop_map(|pts| make_instance(pts.into_iter().map(|(x, y)| [x, y]).collect(), "prop").unwrap())
}

fn constraints(n: usize, picks: &[(usize, usize, bool)]) -> SolveConstraints {
    let mut cons = SolveConstraints::new();
    for &(a, b, remove) in picks {
        let (a, b) = (a % n, b % n);
        if remove {
            if n - cons.removed().len() > 3 {
                cons.remove_node(a);
            }
        } else if a != b {
            cons.forbid_edge(a, b);
        }
    }
    cons
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exact_matches_enumeration(inst in instance(9), picks in prop::collection::vec((0usize..20, 0usize..20, any::<bool>()), 0..4)) {
        let cons = constraints(inst.n(), &picks);
        let hk = solve_exact(&inst, &cons);
        let bf = solve_brute_force(&inst, &cons);
        let st = solve_brute_force_structural(&inst, &cons);
        match (hk, bf, st) {
            (Ok(hk), Ok(bf), Ok(st)) => {
                prop_assert!((hk.length - bf.length).abs() < 1e-6);
                prop_assert!((hk.length - st.length).abs() < 1e-6);
                validate_tour(&hk.order, inst.n(), &cons).unwrap();
                prop_assert_eq!(hk.order.clone(), canonicalize(&hk.order));
                prop_assert!((tour_length(&inst, &hk.order).unwrap() - hk.length).abs() < 1e-9);
                prop_assert!(hk.exact);
            }
            (Err(_), Err(_), Err(_)) => {}
            (a, b, c) => prop_assert!(false, "solvers disagree on feasibility: {:?} {:?} {:?}", a.is_ok(), b.is_ok(), c.is_ok()),
        }
    }

    #[test]
    fn heuristic_never_beats_exact(inst in instance(10), seed in any::<u64>()) {
        let cons = SolveConstraints::new();
        let exact = solve_exact(&inst, &cons).unwrap();
        let heur = solve_heuristic(&inst, &cons, seed).unwrap();
        prop_assert!(!heur.exact);
        prop_assert!(heur.length >= exact.length - 1e-6);
        validate_tour(&heur.order, inst.n(), &cons).unwrap();
    }

    #[test]
    fn removal_labels_are_nonnegative_and_relabel_with_nodes(inst in instance(9), rot in 0usize..9) {
        let labels = label_node_removal(&inst).unwrap();
        prop_assert_eq!(labels.solve_seconds.len(), inst.n() + 1);
        for d in &labels.deltas_pct {
            prop_assert!(*d >= -1e-9, "removal delta {d}");
        }
        let n = inst.n();
        let perm: Vec<usize> = (0..n).map(|k| (k + rot) % n).collect();
        let permuted = label_node_removal(&inst.permuted(&perm).unwrap()).unwrap();
        prop_assert!((permuted.base_length - labels.base_length).abs() < 1e-6);
        for k in 0..n {
            prop_assert!((permuted.deltas_pct[k] - labels.deltas_pct[perm[k]]).abs() < 1e-6);
        }
    }

    #[test]
    fn forbid_labels_are_nonnegative(inst in instance(8)) {
        let labels = label_edge_forbid(&inst).unwrap();
        prop_assert_eq!(labels.deltas_pct.len(), inst.n());
        prop_assert_eq!(labels.candidate_edges(), tour_edges(&labels.base_tour));
        for d in &labels.deltas_pct {
            prop_assert!(*d >= -1e-9, "forbid delta {d}");
        }
    }

    #[test]
    fn baseline_scores_are_finite_and_bounded(inst in instance(10)) {
        let tour = solve_exact(&inst, &SolveConstraints::new()).unwrap();
        let nn = score_nn_distance(&inst);
        let splice = score_splice(&inst, &tour.order).unwrap();
        let detour = score_detour(&inst, &tour.order).unwrap();
        let repair = score_two_opt_repair(&inst, &tour.order).unwrap();
        prop_assert_eq!(nn.scores.len(), inst.n());
        prop_assert_eq!(splice.scores.len(), inst.n());
        prop_assert_eq!(detour.scores.len(), inst.n());
        prop_assert_eq!(repair.scores.len(), inst.n());
        for s in [&nn, &splice, &detour, &repair] {
            prop_assert!(s.scores.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
        // splice gain is bounded by the whole tour
        prop_assert!(splice.scores.iter().all(|v| *v <= 100.0 + 1e-9));
    }

    #[test]
    fn ranking_metrics_behave(scores in prop::collection::vec(-5.0f64..5.0, 2..20), seed in any::<u64>(), a in 0.1f64..10.0, b in -10.0f64..10.0) {
        let m = scores.len();
        let deltas: Vec<f64> = (0..m).map(|i| ((seed >> (i % 60)) & 7) as f64).collect();
        let rho = spearman_rho(&scores, &deltas).unwrap();
        prop_assert!((-1.0..=1.0).contains(&rho.rho));
        // hits are monotone in k and certain at k = m
        let mut prev = false;
        for k in 1..=m {
            let hit = topk_hit(&scores, &deltas, k).unwrap();
            prop_assert!(hit || !prev);
            prev = hit;
        }
        prop_assert!(prev);
        let moved: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        prop_assert_eq!(ranking(&moved), ranking(&scores));
        let (z1, z2) = (zscore(&scores), zscore(&moved));
        for (x, y) in z1.iter().zip(&z2) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }
}
