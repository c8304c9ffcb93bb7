use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tspsense_probes::model::Params;
use tspsense_probes::tape::Mat;
use tspsense_probes::{loss_and_gradients, Family, Objective, Probe, ProbeConfig, Standardizer};

fn tiny(family: Family, objective: Objective) -> ProbeConfig {
    let mut c = ProbeConfig::new(family, objective);
    c.width = 6;
    c.depth = 2;
    c.heads = 2;
    c.ff_width = 5;
    c.temperature = 1.5;
    c
}

fn fixture(seed: u64) -> (Mat, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Mat::from_vec(5, 8, (0..40).map(|_| rng.random_range(-1.5..1.5)).collect());
    let deltas = (0..5).map(|_| rng.random_range(0.0..4.0)).collect();
    (x, deltas)
}

fn loss(probe: &Probe, x: &Mat, deltas: &[f64], st: &Standardizer) -> f64 {
    loss_and_gradients(probe, x, deltas, Some(st), None).unwrap().0
}

#[test]
fn analytic_gradients_match_central_differences() {
    let st = Standardizer::identity(8).with_target(1.8, 1.1);
    let families = [Family::Linear, Family::DeepSets, Family::SetTransformer];
    let objectives = [Objective::Regression, Objective::HardCe, Objective::SoftCe];
    for family in families {
        for objective in objectives {
            let mut config = tiny(family, objective);
            if family == Family::SetTransformer {
                config.depth = 1;
            }
            let (x, deltas) = fixture(11);
            let mut probe = Probe::init(&config, 8, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            assert!(probe.params.count() <= 500, "{family}: {} parameters", probe.params.count());
            let (_, grads) = loss_and_gradients(&probe, &x, &deltas, Some(&st), None).unwrap();
            let h = 1e-4;
            let mut worst: f64 = 0.0;
            for t in 0..probe.params.tensors.len() {
                for k in 0..probe.params.tensors[t].len() {
                    let orig = probe.params.tensors[t].data[k];
                    probe.params.tensors[t].data[k] = orig + h;
                    let up = loss(&probe, &x, &deltas, &st);
                    probe.params.tensors[t].data[k] = orig - h;
                    let down = loss(&probe, &x, &deltas, &st);
                    probe.params.tensors[t].data[k] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let an = grads[t].data[k];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                    let name = &probe.params.names[t];
                    assert!(rel <= 1e-3 || (fd - an).abs() < 1e-8, "{family}/{objective} {name}[{k}]: fd {fd} vs analytic {an}");
                    worst = worst.max(rel);
                }
            }
            println!("{family}/{objective}: worst relative error {worst:.2e}");
        }
    }
}

#[test]
fn dropout_changes_training_outputs_only() {
    let mut config = tiny(Family::SetTransformer, Objective::SoftCe);
    config.dropout = 0.5;
    let probe = Probe::init(&config, 8, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let (x, deltas) = fixture(3);
    let st = Standardizer::identity(8);
    let a = loss_and_gradients(&probe, &x, &deltas, Some(&st), None).unwrap().0;
    let b = loss_and_gradients(&probe, &x, &deltas, Some(&st), None).unwrap().0;
    assert_eq!(a, b);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = loss_and_gradients(&probe, &x, &deltas, Some(&st), Some(&mut rng)).unwrap().0;
    assert_ne!(a, c);
    assert_eq!(probe.outputs(&x).unwrap(), probe.outputs(&x).unwrap());
}

#[test]
fn parameter_order_is_stable() {
    let probe = Probe::init(&tiny(Family::DeepSets, Objective::Regression), 8, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let Params { names, .. } = probe.params;
    assert_eq!(names, ["phi.0.w", "phi.0.b", "phi.1.w", "phi.1.b", "rho.0.w", "rho.0.b", "rho.1.w", "rho.1.b"]);
}
