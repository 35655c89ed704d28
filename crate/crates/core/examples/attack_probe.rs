use std::time::Instant;
use ctr_core::attacks::{evaluate_robustness, AttackKind, AttackSpec};
use ctr_core::data::synth_blobs_split;
use ctr_core::losses::LossKind;
use ctr_core::model::Classifier;
use ctr_core::rng::{RunRng, Stream};
use ctr_core::schedule::LrSchedule;
use ctr_core::training::{train_madry_family, train_natural, TrainMethod, TrainSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let spread: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.8);
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0);
    let t0 = Instant::now();
    let (train, test) = synth_blobs_split(seed, 200, 100, 10, 784, spread).unwrap();

    let nt_spec = TrainSpec {
        method: TrainMethod::NaturalCe,
        epochs: 10,
        batch_size: 128,
        schedule: LrSchedule::multistep(0.03, 10, vec![0.5, 0.75], 0.1),
        seed,
        ..TrainSpec::default()
    };
    let mut rng = RunRng::new(seed).stream(Stream::Init);
    let nt_model = Classifier::mlp(784, &[256, 128], 10, 0.5, false, &mut rng).unwrap();
    let nt = train_natural(nt_model, &nt_spec, &train, &test, None).unwrap().model;

    let asr = |model: &Classifier, kind: AttackKind, loss: LossKind, gamma: f64, eps: f64| {
        let mut spec = AttackSpec::new(kind, eps).with_loss(loss, gamma);
        if kind == AttackKind::Pgd {
            spec = spec.with_steps(20, eps / 4.0);
        }
        let mut arng = RunRng::new(seed).stream(Stream::Attack);
        evaluate_robustness(model, &test, &spec, &mut arng).unwrap().asr
    };

    for eps in [0.03, 0.05, 0.08] {
        let pc = asr(&nt, AttackKind::Pgd, LossKind::Ce, 0.0, eps);
        let ps = asr(&nt, AttackKind::Pgd, LossKind::Std, 0.0, eps);
        let fc = asr(&nt, AttackKind::Fgsm, LossKind::Ce, 0.0, eps);
        let fs = asr(&nt, AttackKind::Fgsm, LossKind::Std, 0.0, eps);
        println!("seed={seed} spread={spread} NT eps={eps}: pgd ce={pc:.3} std={ps:.3} ({}) fgsm ce={fc:.3} std={fs:.3} ({})", ps>=pc, fs>=fc);
    }

    for gamma in [0.0, 3.0] {
        let at_spec = TrainSpec {
            method: TrainMethod::MadryAt,
            gamma,
            epochs: 10,
            batch_size: 128,
            epsilon: 0.1,
            inner_steps: 7,
            schedule: LrSchedule::multistep(0.05, 10, vec![2.0/3.0, 5.0/6.0], 0.1).with_warmup(1),
            seed,
            ..TrainSpec::default()
        };
        let mut rng = RunRng::new(seed).stream(Stream::Init);
        let at_model = Classifier::mlp(784, &[256, 128], 10, 0.0, false, &mut rng).unwrap();
        let out = train_madry_family(at_model, &at_spec, &train, &test, None).unwrap();
        let nat = ctr_core::analysis::accuracy(&out.model, &test).unwrap();
        for eps in [0.1, 0.15, 0.2, 0.25] {
            let ce = asr(&out.model, AttackKind::Pgd, LossKind::Ce, 0.0, eps);
            let sce = asr(&out.model, AttackKind::Pgd, LossKind::Sce, 5.0, eps);
            let rob = 1.0 - (1.0 - nat.min(1.0)).max(0.0) - ce * nat; // rough
            let _ = rob;
            println!("seed={seed} spread={spread} AT gamma={gamma} nat={nat:.3} eps={eps}: pgd ce={ce:.3} sce={sce:.3} ({})", sce>=ce);
        }
    }
    println!("elapsed {:.0}s", t0.elapsed().as_secs_f64());
}
