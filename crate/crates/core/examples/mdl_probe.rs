use std::time::Instant;
use ctr_core::analysis::{accuracy, ct_census};
use ctr_core::attacks::{evaluate_robustness, AttackKind, AttackSpec};
use ctr_core::data::synth_blobs_split;
use ctr_core::model::Classifier;
use ctr_core::rng::{RunRng, Stream};
use ctr_core::schedule::LrSchedule;
use ctr_core::training::{train_natural, TrainMethod, TrainSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let spread: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.3);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.05);
    let eps = 0.1;
    for seed in [0u64, 1, 2] {
        let t0 = Instant::now();
        let (train, test) = synth_blobs_split(seed, 200, 100, 10, 784, spread).unwrap();
        let mut results = Vec::new();
        for method in [TrainMethod::NaturalCe, TrainMethod::NaturalMdl] {
            let spec = TrainSpec {
                method,
                k: 4,
                rho: 1.0,
                eta: 100.0,
                epochs: 10,
                batch_size: 128,
                schedule: LrSchedule::multistep(lr, 10, vec![0.5, 0.75], 0.1),
                seed,
                ..TrainSpec::default()
            };
            let mut rng = RunRng::new(seed).stream(Stream::Init);
            let model = Classifier::mlp(784, &[256, 128], 10, 0.5, false, &mut rng).unwrap();
            let out = train_natural(model, &spec, &train, &test, None).unwrap();
            let nat = accuracy(&out.model, &test).unwrap();
            let fgsm = AttackSpec::new(AttackKind::Fgsm, eps);
            let mut arng = RunRng::new(seed).stream(Stream::Attack);
            let rob = evaluate_robustness(&out.model, &test, &fgsm, &mut arng).unwrap();
            let census = ct_census(&out.model, &test, 1.0 / 9.0).unwrap();
            results.push((method, nat, rob.robust_accuracy, census.below));
        }
        let (m0, nat0, rob0, c0) = results[0];
        let (m1, nat1, rob1, c1) = results[1];
        println!(
            "seed={seed} spread={spread} lr={lr}: {m0:?} nat={nat0:.3} fgsm={rob0:.3} census={c0} | {m1:?} nat={nat1:.3} fgsm={rob1:.3} census={c1} | (a) {} (b) {} (c) {} | {:.1}s",
            nat1 >= nat0 - 0.005, rob1 > rob0 + 0.03, c1 >= c0, t0.elapsed().as_secs_f64()
        );
    }
}
