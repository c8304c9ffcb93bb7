use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tspsense::features::CandidateFeatures;
use tspsense::Task;
use tspsense_probes::{score_deepsets, score_linear, score_settransformer, Family, Objective, Probe, ProbeConfig};

fn probe(family: Family, dim: usize, seed: u64) -> Probe {
    let mut c = ProbeConfig::new(family, Objective::SoftCe);
    c.width = 8;
    c.heads = 2;
    c.ff_width = 8;
    Probe::init(&c, dim, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn rows_and_perm() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (1usize..10).prop_flat_map(|m| {
        (
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), m),
            Just((0..m).collect::<Vec<usize>>()).prop_shuffle(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scores_follow_candidate_permutations((rows, perm) in rows_and_perm(), seed in 0u64..100) {
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let f = CandidateFeatures::from_rows(Task::Removal, &rows).unwrap();
        let g = CandidateFeatures::from_rows(Task::Removal, &permuted).unwrap();
        let lin = probe(Family::Linear, 4, seed);
        let ds = probe(Family::DeepSets, 4, seed);
        let st = probe(Family::SetTransformer, 4, seed);
        let checks: [(Vec<f64>, Vec<f64>, f64); 3] = [
            (score_linear(&lin, &f).unwrap(), score_linear(&lin, &g).unwrap(), 0.0),
            (score_deepsets(&ds, &f).unwrap(), score_deepsets(&ds, &g).unwrap(), 1e-12),
            (score_settransformer(&st, &f).unwrap(), score_settransformer(&st, &g).unwrap(), 1e-5),
        ];
        for (a, b, tol) in checks {
            for (k, &i) in perm.iter().enumerate() {
                prop_assert!((b[k] - a[i]).abs() <= tol);
            }
        }
    }
}
