use ctr_core::data::synth_blobs_split;
use ctr_core::model::Classifier;
use ctr_core::rng::{RunRng, Stream};
use ctr_core::schedule::LrSchedule;
use ctr_core::training::{train_madry_family, TrainMethod, TrainSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.02);
    let warmup: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1);
    let gamma: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.0);
    let (train, test) = synth_blobs_split(0, 200, 100, 10, 784, 0.8).unwrap();
    let spec = TrainSpec {
        method: TrainMethod::MadryAt,
        gamma,
        epochs: 10,
        batch_size: 128,
        epsilon: 0.1,
        inner_steps: 7,
        robust_eval_examples: 200,
        schedule: LrSchedule::multistep(lr, 10, vec![2.0 / 3.0, 5.0 / 6.0], 0.1).with_warmup(warmup),
        seed: 0,
        ..TrainSpec::default()
    };
    let mut rng = RunRng::new(0).stream(Stream::Init);
    let model = Classifier::mlp(784, &[256, 128], 10, 0.0, false, &mut rng).unwrap();
    let out = train_madry_family(model, &spec, &train, &test, None).unwrap();
    for r in &out.history.records {
        println!(
            "lr_cfg={lr} warmup={warmup} gamma={gamma} epoch={} lr={:.5} loss={:.4} nat={:.3} rob={:?}",
            r.epoch, r.lr, r.train_loss, r.nat_acc, r.robust_acc
        );
    }
}
