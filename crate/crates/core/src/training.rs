//! Training loops: natural training (plain dropout CE, multi-sample
//! dropout, MDL) and adversarial training (Madry, Fast, Free, TRADES), each
//! optionally CTR-augmented through the SCE / SKL losses.
//!
//! At γ = 0 the CTR objectives reduce exactly to their baselines (SCE → CE,
//! SKL → KL), so a γ = 0 run of any adversarial method reproduces the
//! uname-augmented method to machine precision under identical seeds.
//!
//! The optimizer is SGD with momentum and weight decay. History is
//! append-only; an observer callback fires after every epoch so callers can
//! persist checkpoints and history lines incrementally.

use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::analysis::accuracy;
use crate::attacks::{self, AttackKind, AttackSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{
    ce_rows, compute_mask, mdl_batch, sce_rows, skl_rows, DiversityKind, LossKind, ProbVector,
};
use crate::model::{Classifier, Mode};
use crate::rng::{Rng, RunRng, Stream};
use crate::schedule::LrSchedule;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainMethod {
    #[default]
    NaturalCe,
    NaturalMsd,
    NaturalMdl,
    MadryAt,
    FastAt,
    FreeAt,
    Trades,
}

impl TrainMethod {
    pub fn is_adversarial(self) -> bool {
        matches!(self, TrainMethod::MadryAt | TrainMethod::FastAt | TrainMethod::FreeAt | TrainMethod::Trades)
    }
}

/// Everything a training run needs besides the model and the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSpec {
    pub method: TrainMethod,
    /// CTR weight; 0 switches CTR off (SCE → CE, SKL → KL exactly).
    pub gamma: f64,
    /// TRADES trade-off.
    pub beta: f64,
    /// Sub-network count for MSD / MDL.
    pub k: usize,
    /// Orthogonal-term weight.
    pub rho: f64,
    /// Mask percentage in (0, 100].
    pub eta: f64,
    pub diversity: DiversityKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub schedule: LrSchedule,
    /// L∞ training radius for adversarial methods.
    pub epsilon: f64,
    /// Inner-attack steps (Madry PGD-k, TRADES).
    pub inner_steps: usize,
    /// Inner-attack step size; `None` means ε/4.
    pub inner_alpha: Option<f64>,
    pub inner_random_start: bool,
    /// Fast-AT step size; `None` means 1.25·ε (clipped back into the ball).
    pub fast_alpha: Option<f64>,
    /// Free-AT minibatch replays m.
    pub replays: usize,
    /// Free-AT perturbation step; `None` means ε.
    pub free_alpha: Option<f64>,
    /// TRADES inner-start Gaussian noise σ.
    pub trades_noise_sigma: f64,
    /// Record real wall-clock per epoch; off keeps history byte-reproducible.
    pub log_timing: bool,
    /// Cap on test examples for the per-epoch robust-accuracy metric
    /// (adversarial methods only); 0 skips it.
    pub robust_eval_examples: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            method: TrainMethod::NaturalCe,
            gamma: 0.0,
            beta: 6.0,
            k: 4,
            rho: 1.0,
            eta: 100.0,
            diversity: DiversityKind::Cosine,
            epochs: 10,
            batch_size: 128,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            schedule: LrSchedule::multistep(0.01, 10, vec![0.5, 0.75], 0.1),
            epsilon: 0.1,
            inner_steps: 7,
            inner_alpha: None,
            inner_random_start: true,
            fast_alpha: None,
            replays: 8,
            free_alpha: None,
            trades_noise_sigma: 1e-3,
            log_timing: false,
            robust_eval_examples: 0,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Param("epochs and batch size must be positive".into()));
        }
        if self.gamma < 0.0 || !self.gamma.is_finite() {
            return Err(Error::Param(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(Error::Param(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.rho < 0.0 || !self.rho.is_finite() {
            return Err(Error::Param(format!("rho must be >= 0, got {}", self.rho)));
        }
        if !(self.eta > 0.0 && self.eta <= 100.0) {
            return Err(Error::Param(format!("eta {} outside (0, 100]", self.eta)));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::Param(format!("momentum {} outside [0,1]", self.momentum)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Param("weight decay must be >= 0".into()));
        }
        self.schedule.validate()?;
        match self.method {
            TrainMethod::NaturalMsd => {
                if self.k < 1 {
                    return Err(Error::Param("multi-sample dropout needs K >= 1".into()));
                }
            }
            TrainMethod::NaturalMdl => {
                if self.k < 2 {
                    return Err(Error::Param(format!("MDL needs K >= 2, got {}", self.k)));
                }
                if self.diversity == DiversityKind::Pcc && classes < 3 {
                    return Err(Error::Param("PCC diversity needs C >= 3 classes".into()));
                }
            }
            m if m.is_adversarial() => {
                if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
                    return Err(Error::Param(format!(
                        "adversarial training needs epsilon in (0,1], got {}",
                        self.epsilon
                    )));
                }
                if self.gamma > 0.0 && classes < 3 {
                    return Err(Error::Param(
                        "CTR (gamma > 0) needs C >= 3 classes for the deviation loss".into(),
                    ));
                }
                if self.inner_steps == 0 && m != TrainMethod::FastAt {
                    return Err(Error::Param("inner attack needs at least one step".into()));
                }
                if m == TrainMethod::FreeAt && self.replays < 1 {
                    return Err(Error::Param(format!("Free-AT needs replays >= 1, got {}", self.replays)));
                }
                if m == TrainMethod::Trades && !(self.beta > 0.0) {
                    return Err(Error::Param(format!("TRADES needs beta > 0, got {}", self.beta)));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn inner_alpha(&self) -> f64 {
        self.inner_alpha.unwrap_or(self.epsilon / 4.0)
    }

    fn fast_alpha(&self) -> f64 {
        self.fast_alpha.unwrap_or(1.25 * self.epsilon)
    }

    fn free_alpha(&self) -> f64 {
        self.free_alpha.unwrap_or(self.epsilon)
    }
}

/// One epoch of the run log.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub nat_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub robust_acc: Option<f64>,
    pub wall_ms: u64,
}

/// Append-only training history, serialized as JSON lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record encodes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(line)
                    .map_err(|e| Error::Format { offset: i as u64, msg: format!("history line: {e}") })?,
            );
        }
        Ok(Self { records })
    }
}

/// Called after every epoch with the fresh record and the current model.
pub type EpochObserver<'a> = &'a mut dyn FnMut(&EpochRecord, &Classifier) -> Result<()>;

pub struct TrainOutput {
    pub model: Classifier,
    pub history: History,
}

/// SGD with momentum and weight decay:
/// `v ← μ·v + (g + wd·w)`, `w ← w − lr·v`.
pub struct SgdMomentum {
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: Vec::new() }
    }

    pub fn step(&mut self, model: &mut Classifier, lr: f64) -> Result<()> {
        let params = model.parameters();
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::Contract("optimizer bound to a different model".into()));
        }
        let mut updated = Vec::with_capacity(params.len());
        for (p, v) in params.iter().zip(self.velocity.iter_mut()) {
            let grad = p.grad();
            let w = p.values();
            let mut next = Vec::with_capacity(w.len());
            for i in 0..w.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i]) + self.weight_decay * w[i];
                v[i] = self.momentum * v[i] + g;
                next.push(w[i] - lr * v[i]);
            }
            updated.push(next);
        }
        model.set_parameter_values(updated)
    }
}

fn shuffled_indices(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

struct Streams {
    dropout: Rng,
    attack: Rng,
    data: Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let run = RunRng::new(seed);
        Self {
            dropout: run.stream(Stream::Dropout),
            attack: run.stream(Stream::Attack),
            data: run.stream(Stream::Data),
        }
    }
}

/// Shared epoch driver: shuffles, hands batches to `step`, aggregates the
/// epoch loss, evaluates metrics and notifies the observer.
fn run_epochs(
    mut model: Classifier,
    spec: &TrainSpec,
    train: &Dataset,
    test: &Dataset,
    mut observer: Option<EpochObserver>,
    mut step: impl FnMut(&mut Classifier, &Tensor, &[usize], f64, &mut Streams, &mut SgdMomentum) -> Result<f64>,
) -> Result<TrainOutput> {
    let mut streams = Streams::new(spec.seed);
    let mut opt = SgdMomentum::new(spec.momentum, spec.weight_decay);
    let mut history = History::default();
    for epoch in 0..spec.epochs {
        let started = Instant::now();
        let lr = spec.schedule.lr_at(epoch);
        let order = shuffled_indices(train.len(), &mut streams.data);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(spec.batch_size) {
            let (x, y) = train.gather(chunk);
            let batch_loss = step(&mut model, &x, &y, lr, &mut streams, &mut opt)?;
            loss_sum += batch_loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        let nat_acc = accuracy(&model, test)?;
        let robust_acc = if spec.method.is_adversarial() && spec.robust_eval_examples > 0 {
            let subset = test.head(spec.robust_eval_examples.min(test.len()));
            let attack = AttackSpec::new(AttackKind::Pgd, spec.epsilon)
                .with_steps(spec.inner_steps.max(1), spec.inner_alpha());
            Some(attacks::evaluate_robustness(&model, &subset, &attack, &mut streams.attack)?.robust_accuracy)
        } else {
            None
        };
        let wall_ms = if spec.log_timing { started.elapsed().as_millis() as u64 } else { 0 };
        let record = EpochRecord { epoch, lr, train_loss, nat_acc, robust_acc, wall_ms };
        if let Some(obs) = observer.as_mut() {
            obs(&record, &model)?;
        }
        history.records.push(record);
    }
    Ok(TrainOutput { model, history })
}

/// Natural training: plain dropout CE, multi-sample dropout (mean CE over K
/// sub-networks), or MDL with the masked orthogonal term.
pub fn train_natural(
    model: Classifier,
    spec: &TrainSpec,
    train: &Dataset,
    test: &Dataset,
    observer: Option<EpochObserver>,
) -> Result<TrainOutput> {
    spec.validate(model.classes())?;
    if spec.method.is_adversarial() {
        return Err(Error::Param(format!("{:?} is not a natural method", spec.method)));
    }
    let spec_inner = spec.clone();
    run_epochs(model, spec, train, test, observer, move |model, x, y, lr, streams, opt| {
        let loss = match spec_inner.method {
            TrainMethod::NaturalCe => {
                let probs = model
                    .forward(x, &mut Mode::Train(&mut streams.dropout))?
                    .softmax_rows()?;
                ce_rows(&probs, y)?.mean_all()
            }
            TrainMethod::NaturalMsd => {
                let outs = model.forward_multisample(x, spec_inner.k, &mut streams.dropout)?;
                let mut sum = ce_rows(&outs[0], y)?;
                for p in &outs[1..] {
                    sum = sum.add(&ce_rows(p, y)?)?;
                }
                sum.scale(1.0 / spec_inner.k as f64).mean_all()
            }
            TrainMethod::NaturalMdl => {
                let outs = model.forward_multisample(x, spec_inner.k, &mut streams.dropout)?;
                let mask = mdl_mask(&outs, y, spec_inner.eta)?;
                mdl_batch(&outs, y, &mask, spec_inner.rho, spec_inner.diversity)?
            }
            _ => unreachable!("validated natural"),
        };
        let value = loss.item();
        model.zero_grad();
        loss.backward()?;
        opt.step(model, lr)?;
        Ok(value)
    })
}

/// The batch mask over K-averaged sub-network outputs.
fn mdl_mask(outs: &[Tensor], labels: &[usize], eta: f64) -> Result<Vec<bool>> {
    let (b, c) = match outs[0].shape() {
        [b, c] => (*b, *c),
        s => return Err(Error::Shape(format!("expected [B×C] outputs, got {s:?}"))),
    };
    let k = outs.len() as f64;
    let mut averaged = Vec::with_capacity(b);
    for i in 0..b {
        let mut avg = vec![0.0; c];
        for out in outs {
            for (a, &v) in avg.iter_mut().zip(&out.values()[i * c..(i + 1) * c]) {
                *a += v / k;
            }
        }
        averaged.push(ProbVector::new(avg, labels[i])?);
    }
    Ok(compute_mask(&averaged, eta)?.bits)
}

/// Batch-mean SCE objective value of a model on given inputs (evaluation
/// mode); the Madry-family training objective on a fixed batch.
pub fn madry_objective_eval(model: &Classifier, x: &Tensor, y: &[usize], gamma: f64) -> Result<f64> {
    let probs = model.forward(x, &mut Mode::Eval)?.softmax_rows()?;
    Ok(sce_rows(&probs, y, gamma)?.mean_all().item())
}

/// Batch-mean TRADES objective `SCE(f(x),y|γ) + β·SKL(f(x*),f(x),y|γ)` in
/// evaluation mode on a fixed batch.
pub fn trades_objective_eval(
    model: &Classifier,
    x: &Tensor,
    x_adv: &Tensor,
    y: &[usize],
    gamma: f64,
    beta: f64,
) -> Result<f64> {
    let probs_nat = model.forward(x, &mut Mode::Eval)?.softmax_rows()?;
    let probs_adv = model.forward(x_adv, &mut Mode::Eval)?.softmax_rows()?;
    let natural = sce_rows(&probs_nat, y, gamma)?.mean_all();
    let robust = skl_rows(&probs_adv, &probs_nat, y, gamma)?.mean_all();
    Ok(natural.item() + beta * robust.item())
}

fn assert_ball(x_adv: &[f64], x: &[f64], eps: f64) {
    debug_assert!(
        x_adv
            .iter()
            .zip(x)
            .all(|(&a, &o)| (a - o).abs() <= eps + 1e-9 && (0.0..=1.0).contains(&a)),
        "adversarial example escaped the ball"
    );
}

/// Madry-AT, Fast-AT and Free-AT with CTR: inner maximization of the SCE
/// adversarial objective (PGD-k / single randomized FGSM step / replayed
/// warm-started perturbations), outer minimization of SCE on the generated
/// examples. γ = 0 reproduces the CE-based originals exactly.
pub fn train_madry_family(
    model: Classifier,
    spec: &TrainSpec,
    train: &Dataset,
    test: &Dataset,
    observer: Option<EpochObserver>,
) -> Result<TrainOutput> {
    spec.validate(model.classes())?;
    if !matches!(spec.method, TrainMethod::MadryAt | TrainMethod::FastAt | TrainMethod::FreeAt) {
        return Err(Error::Param(format!("{:?} is not a Madry-family method", spec.method)));
    }
    let s = spec.clone();
    run_epochs(model, spec, train, test, observer, move |model, x, y, lr, streams, opt| {
        match s.method {
            TrainMethod::MadryAt => {
                let attack = AttackSpec::new(AttackKind::Pgd, s.epsilon)
                    .with_loss(LossKind::Sce, s.gamma)
                    .with_steps(s.inner_steps, s.inner_alpha())
                    .with_random_start(s.inner_random_start);
                let adv = attacks::pgd(model, x, y, &attack, &mut streams.attack)?;
                assert_ball(&adv.x_adv, x.values(), s.epsilon);
                let x_adv = Tensor::new(x.shape(), adv.x_adv)?;
                outer_sce_step(model, &x_adv, y, s.gamma, lr, streams, opt)
            }
            TrainMethod::FastAt => {
                // single sign step from a uniform random start; the step
                // length may exceed ε (1.25ε default), the projection pulls
                // it back into the ball
                let start: Vec<f64> = x
                    .values()
                    .iter()
                    .map(|&v| (v + streams.attack.random_range(-s.epsilon..=s.epsilon)).clamp(0.0, 1.0))
                    .collect();
                let grad = sce_input_gradient(model, x.shape(), &start, y, s.gamma)?;
                let alpha = s.fast_alpha();
                let x_adv: Vec<f64> = start
                    .iter()
                    .zip(&grad)
                    .zip(x.values())
                    .map(|((&v, &g), &o)| {
                        (v + alpha * g.signum()).clamp((o - s.epsilon).max(0.0), (o + s.epsilon).min(1.0))
                    })
                    .collect();
                assert_ball(&x_adv, x.values(), s.epsilon);
                let x_adv = Tensor::new(x.shape(), x_adv)?;
                outer_sce_step(model, &x_adv, y, s.gamma, lr, streams, opt)
            }
            TrainMethod::FreeAt => {
                // perturbation warm-started across the m replays of a batch
                let n = x.numel();
                let mut delta = vec![0.0; n];
                let alpha = s.free_alpha();
                let mut last = 0.0;
                for _ in 0..s.replays {
                    let x_pert: Vec<f64> = x
                        .values()
                        .iter()
                        .zip(&delta)
                        .map(|(&v, &d)| (v + d).clamp(0.0, 1.0))
                        .collect();
                    let grad = sce_input_gradient(model, x.shape(), &x_pert, y, s.gamma)?;
                    for (d, &g) in delta.iter_mut().zip(&grad) {
                        *d = (*d + alpha * g.signum()).clamp(-s.epsilon, s.epsilon);
                    }
                    let x_adv: Vec<f64> = x
                        .values()
                        .iter()
                        .zip(&delta)
                        .map(|(&v, &d)| (v + d).clamp(0.0, 1.0))
                        .collect();
                    assert_ball(&x_adv, x.values(), s.epsilon);
                    let x_adv = Tensor::new(x.shape(), x_adv)?;
                    last = outer_sce_step(model, &x_adv, y, s.gamma, lr, streams, opt)?;
                }
                Ok(last)
            }
            _ => unreachable!("validated family"),
        }
    })
}

/// Gradient of the batch-sum SCE loss w.r.t. the input, parameters frozen.
fn sce_input_gradient(
    model: &Classifier,
    shape: &[usize],
    x_vals: &[f64],
    y: &[usize],
    gamma: f64,
) -> Result<Vec<f64>> {
    model.set_params_requires_grad(false);
    let result = (|| {
        let x = Tensor::leaf(shape, x_vals.to_vec())?;
        let probs = model.forward(&x, &mut Mode::Eval)?.softmax_rows()?;
        sce_rows(&probs, y, gamma)?.sum_all().backward()?;
        let grad = x.grad().ok_or_else(|| Error::Contract("missing input gradient".into()))?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite input gradient".into()));
        }
        Ok(grad)
    })();
    model.set_params_requires_grad(true);
    result
}

/// One outer minimization step of the mean SCE loss on given inputs.
fn outer_sce_step(
    model: &mut Classifier,
    x_adv: &Tensor,
    y: &[usize],
    gamma: f64,
    lr: f64,
    streams: &mut Streams,
    opt: &mut SgdMomentum,
) -> Result<f64> {
    let probs = model
        .forward(x_adv, &mut Mode::Train(&mut streams.dropout))?
        .softmax_rows()?;
    let loss = sce_rows(&probs, y, gamma)?.mean_all();
    let value = loss.item();
    model.zero_grad();
    loss.backward()?;
    opt.step(model, lr)?;
    Ok(value)
}

/// TRADES with CTR: the adversarial objective maximizes
/// `SKL(f(x'), f(x), y|γ)` from a Gaussian-noise start; the training
/// objective minimizes `SCE(f(x),y|γ) + β·SKL(f(x*),f(x),y|γ)`.
pub fn train_trades(
    model: Classifier,
    spec: &TrainSpec,
    train: &Dataset,
    test: &Dataset,
    observer: Option<EpochObserver>,
) -> Result<TrainOutput> {
    spec.validate(model.classes())?;
    if spec.method != TrainMethod::Trades {
        return Err(Error::Param(format!("{:?} is not TRADES", spec.method)));
    }
    let s = spec.clone();
    run_epochs(model, spec, train, test, observer, move |model, x, y, lr, streams, opt| {
        // inner maximization from x + N(0, σ²)
        let start: Vec<f64> = x
            .values()
            .iter()
            .map(|&v| {
                let noise: f64 = StandardNormal.sample(&mut streams.attack);
                v + s.trades_noise_sigma * noise
            })
            .collect();
        let attack = AttackSpec::new(AttackKind::Pgd, s.epsilon)
            .with_loss(LossKind::Skl, s.gamma)
            .with_steps(s.inner_steps, s.inner_alpha())
            .with_random_start(false);
        let adv = attacks::pgd_from_start(model, x, &start, y, &attack)?;
        assert_ball(&adv.x_adv, x.values(), s.epsilon);
        let x_adv = Tensor::new(x.shape(), adv.x_adv)?;

        // outer minimization through both natural and adversarial branches
        let probs_nat = model
            .forward(x, &mut Mode::Train(&mut streams.dropout))?
            .softmax_rows()?;
        let probs_adv = model
            .forward(&x_adv, &mut Mode::Train(&mut streams.dropout))?
            .softmax_rows()?;
        let natural = sce_rows(&probs_nat, y, s.gamma)?.mean_all();
        let robust = skl_rows(&probs_adv, &probs_nat, y, s.gamma)?.mean_all();
        let loss = natural.add(&robust.scale(s.beta))?;
        let value = loss.item();
        model.zero_grad();
        loss.backward()?;
        opt.step(model, lr)?;
        Ok(value)
    })
}

/// Dispatch on the configured method.
pub fn train_run(
    model: Classifier,
    spec: &TrainSpec,
    train: &Dataset,
    test: &Dataset,
    observer: Option<EpochObserver>,
) -> Result<TrainOutput> {
    match spec.method {
        TrainMethod::NaturalCe | TrainMethod::NaturalMsd | TrainMethod::NaturalMdl => {
            train_natural(model, spec, train, test, observer)
        }
        TrainMethod::MadryAt | TrainMethod::FastAt | TrainMethod::FreeAt => {
            train_madry_family(model, spec, train, test, observer)
        }
        TrainMethod::Trades => train_trades(model, spec, train, test, observer),
    }
}
