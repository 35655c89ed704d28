use ctr_core::attacks::{evaluate_robustness, AttackKind, AttackSpec};
use ctr_core::data::synth_blobs_split;
use ctr_core::losses::LossKind;
use ctr_core::model::Classifier;
use ctr_core::rng::{RunRng, Stream};
use ctr_core::schedule::LrSchedule;
use ctr_core::training::{train_madry_family, TrainMethod, TrainSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let spread: f64 = args[1].parse().unwrap();
    let eps: f64 = args[2].parse().unwrap();
    let epochs: usize = args[3].parse().unwrap();
    let lr: f64 = args[4].parse().unwrap();
    for seed in [0u64, 1, 2] {
        let (train, test) = synth_blobs_split(seed, 200, 100, 10, 784, spread).unwrap();
        let mut nats = Vec::new();
        let mut robs = Vec::new();
        let mut asrs = Vec::new();
        for gamma in [0.0, 3.0] {
            let spec = TrainSpec {
                method: TrainMethod::MadryAt,
                gamma,
                epochs,
                batch_size: 128,
                epsilon: eps,
                inner_steps: 7,
                schedule: LrSchedule::cyclic(0.0, lr, epochs),
                seed,
                ..TrainSpec::default()
            };
            let mut rng = RunRng::new(seed).stream(Stream::Init);
            let m = Classifier::mlp(784, &[256, 128], 10, 0.0, false, &mut rng).unwrap();
            let out = train_madry_family(m, &spec, &train, &test, None).unwrap();
            nats.push(out.history.records.last().unwrap().nat_acc);
            let spec_a = AttackSpec::new(AttackKind::Pgd, eps).with_steps(20, eps / 4.0);
            let mut arng = RunRng::new(seed).stream(Stream::Attack);
            robs.push(evaluate_robustness(&out.model, &test, &spec_a, &mut arng).unwrap().robust_accuracy);
            if gamma == 3.0 {
                for loss in [LossKind::Ce, LossKind::Sce] {
                    let g = if loss == LossKind::Sce { 5.0 } else { 0.0 };
                    let spec_b = AttackSpec::new(AttackKind::Pgd, 2.0 * eps)
                        .with_steps(20, 2.0 * eps / 4.0)
                        .with_loss(loss, g);
                    let mut arng = RunRng::new(seed).stream(Stream::Attack);
                    asrs.push(evaluate_robustness(&out.model, &test, &spec_b, &mut arng).unwrap().asr);
                }
            }
        }
        println!(
            "spread={spread} eps={eps} epochs={epochs} lr={lr} seed={seed}: g0 nat={:.3} rob={:.3} | g3 nat={:.3} rob={:.3} | c7: rob_ok={} nat_ok={} | AT-asr@2x ce={:.3} sce={:.3} ({})",
            nats[0], robs[0], nats[1], robs[1],
            robs[1] >= robs[0], (nats[1] - nats[0]).abs() <= 0.03,
            asrs[0], asrs[1], asrs[1] >= asrs[0]
        );
    }
}
