//! Gradient attacks with a pluggable loss: FGSM, PGD, MIFGSM and APGD.
//! Selecting the STD loss yields the S-FGSM / S-PGD / S-APGD variants;
//! SCE and SKL plug in the same way.
//!
//! All attacks operate on a frozen model in evaluation mode, take gradients
//! with respect to the input only, and project every iterate onto
//! `B∞(x₀, ε) ∩ [0,1]`. KL-flavored losses receive the clean-distribution
//! snapshot `f(x₀)` captured before the first step.

use std::io::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{loss_rows, LossKind};
use crate::model::{Classifier, Mode};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    #[default]
    Pgd,
    Mifgsm,
    Apgd,
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::Mifgsm => "mifgsm",
            AttackKind::Apgd => "apgd",
        };
        write!(f, "{s}")
    }
}

/// APGD internals. The iteration cap comes from `AttackSpec::steps`; the
/// remaining published constants are exposed here.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApgdParams {
    /// Momentum mixing weight α.
    pub momentum_alpha: f64,
    /// Required fraction of loss-improving steps between checkpoints.
    pub success_ratio: f64,
    /// Initial step size as a multiple of ε.
    pub eta_init_factor: f64,
    /// First checkpoint fraction p₁.
    pub ckpt_first: f64,
    /// Minimum checkpoint gap (fraction of iterations).
    pub ckpt_min_gap: f64,
    /// Gap shrink per checkpoint (fraction of iterations).
    pub ckpt_decay: f64,
}

impl Default for ApgdParams {
    fn default() -> Self {
        Self {
            momentum_alpha: 0.75,
            success_ratio: 0.75,
            eta_init_factor: 2.0,
            ckpt_first: 0.22,
            ckpt_min_gap: 0.06,
            ckpt_decay: 0.03,
        }
    }
}

/// Full attack description: step rule, radius, iteration budget and the
/// loss it maximizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// L∞ radius in input units. `0` degenerates to the identity attack.
    pub epsilon: f64,
    /// Step size for PGD / MIFGSM (FGSM steps by ε, APGD runs its own
    /// schedule starting from `eta_init_factor · ε`).
    pub alpha: f64,
    pub steps: usize,
    pub loss: LossKind,
    /// γ for the SCE / SKL losses.
    pub gamma: f64,
    /// Momentum decay μ for MIFGSM.
    pub momentum_decay: f64,
    /// Uniform random start inside the ball (PGD / MIFGSM / APGD).
    pub random_start: bool,
    pub apgd: ApgdParams,
}

impl AttackSpec {
    /// Defaults: PGD-20 with random start and α = ε/4.
    pub fn new(kind: AttackKind, epsilon: f64) -> Self {
        let steps = match kind {
            AttackKind::Fgsm => 1,
            _ => 20,
        };
        Self {
            kind,
            epsilon,
            alpha: epsilon / 4.0,
            steps,
            loss: LossKind::Ce,
            gamma: 0.0,
            momentum_decay: 1.0,
            random_start: kind != AttackKind::Fgsm,
            apgd: ApgdParams::default(),
        }
    }

    pub fn with_loss(mut self, loss: LossKind, gamma: f64) -> Self {
        self.loss = loss;
        self.gamma = gamma;
        self
    }

    pub fn with_steps(mut self, steps: usize, alpha: f64) -> Self {
        self.steps = steps;
        self.alpha = alpha;
        self
    }

    pub fn with_random_start(mut self, on: bool) -> Self {
        self.random_start = on;
        self
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Param(format!("epsilon {} outside [0,1]", self.epsilon)));
        }
        if self.steps < 1 {
            return Err(Error::Param("steps must be >= 1".into()));
        }
        match self.kind {
            AttackKind::Fgsm => {
                if self.steps != 1 {
                    return Err(Error::Param(format!("fgsm forces steps = 1, got {}", self.steps)));
                }
            }
            AttackKind::Pgd | AttackKind::Mifgsm => {
                if self.epsilon > 0.0 && !(self.alpha > 0.0 && self.alpha <= self.epsilon) {
                    return Err(Error::Param(format!(
                        "alpha {} outside (0, epsilon={}]",
                        self.alpha, self.epsilon
                    )));
                }
                if self.kind == AttackKind::Mifgsm && !(self.momentum_decay > 0.0) {
                    return Err(Error::Param(format!(
                        "mifgsm momentum decay must be > 0, got {}",
                        self.momentum_decay
                    )));
                }
            }
            AttackKind::Apgd => {
                if self.steps < 2 {
                    return Err(Error::Param(format!("apgd needs steps >= 2, got {}", self.steps)));
                }
            }
        }
        if self.gamma < 0.0 || !self.gamma.is_finite() {
            return Err(Error::Param(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.loss.needs_three_classes() && classes < 3 {
            return Err(Error::Param(format!(
                "{} loss undefined for {classes}-class models (needs C >= 3)",
                self.loss
            )));
        }
        Ok(())
    }
}

/// Attack output for one batch.
#[derive(Debug, Clone)]
pub struct AdvBatch {
    /// Flat `[B×D]` adversarial inputs; within ε of the originals and in [0,1].
    pub x_adv: Vec<f64>,
    /// Misclassified after the attack.
    pub success: Vec<bool>,
    /// Batch-mean loss at each gradient evaluation plus the final iterate.
    pub loss_trajectory: Vec<f64>,
    /// Per-example loss at the returned iterate.
    pub final_loss: Vec<f64>,
    pub pred_before: Vec<usize>,
    pub pred_after: Vec<usize>,
    /// Per-example `‖x_adv − x‖∞`.
    pub linf: Vec<f64>,
    /// Batch-max APGD step size per iteration (empty for other attacks).
    pub step_size_trace: Vec<f64>,
}

/// Restores parameter gradient tracking when the attack scope ends.
struct FreezeGuard<'a> {
    model: &'a Classifier,
}

impl<'a> FreezeGuard<'a> {
    fn new(model: &'a Classifier) -> Self {
        model.set_params_requires_grad(false);
        Self { model }
    }
}

impl Drop for FreezeGuard<'_> {
    fn drop(&mut self) {
        self.model.set_params_requires_grad(true);
    }
}

fn argmax_rows(probs: &[f64], rows: usize, cols: usize) -> Vec<usize> {
    (0..rows)
        .map(|r| {
            let row = &probs[r * cols..(r + 1) * cols];
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Loss values and input gradient at a point, with parameters frozen by the
/// caller. Returns `(gradient, per_example_loss)`.
fn input_gradient(
    model: &Classifier,
    x_vals: &[f64],
    batch: usize,
    dim: usize,
    y: &[usize],
    spec: &AttackSpec,
    clean: Option<&Tensor>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = Tensor::leaf(&[batch, dim], x_vals.to_vec())?;
    let probs = model.forward(&x, &mut Mode::Eval)?.softmax_rows()?;
    let rows = loss_rows(spec.loss, &probs, clean, y, spec.gamma)?;
    let per_example = rows.values().to_vec();
    rows.sum_all().backward()?;
    let grad = x.grad().ok_or_else(|| Error::Contract("input gradient missing".into()))?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite input gradient".into()));
    }
    Ok((grad, per_example))
}

/// Loss values only (no gradient).
fn loss_at(
    model: &Classifier,
    x_vals: &[f64],
    batch: usize,
    dim: usize,
    y: &[usize],
    spec: &AttackSpec,
    clean: Option<&Tensor>,
) -> Result<Vec<f64>> {
    let x = Tensor::new(&[batch, dim], x_vals.to_vec())?;
    let probs = model.forward(&x, &mut Mode::Eval)?.softmax_rows()?;
    Ok(loss_rows(spec.loss, &probs, clean, y, spec.gamma)?.values().to_vec())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Clamp onto `B∞(x0, ε) ∩ [0,1]` elementwise.
fn project(x: &mut [f64], x0: &[f64], eps: f64) {
    for (v, &o) in x.iter_mut().zip(x0) {
        let lo = (o - eps).max(0.0);
        let hi = (o + eps).min(1.0);
        *v = v.clamp(lo, hi);
    }
}

struct AttackContext<'a> {
    model: &'a Classifier,
    x0: Vec<f64>,
    batch: usize,
    dim: usize,
    labels: Vec<usize>,
    clean: Option<Tensor>,
    pred_before: Vec<usize>,
}

impl<'a> AttackContext<'a> {
    fn prepare(model: &'a Classifier, x: &Tensor, y: &[usize], spec: &AttackSpec) -> Result<Self> {
        spec.validate(model.classes())?;
        let (batch, dim) = match x.shape() {
            [b, d] => (*b, *d),
            s => return Err(Error::Shape(format!("attack input must be [B×D], got {s:?}"))),
        };
        if y.len() != batch {
            return Err(Error::Shape(format!("{} labels for {batch} rows", y.len())));
        }
        let probs0 = model.predict_probs(x)?;
        let pred_before = argmax_rows(probs0.values(), batch, model.classes());
        let clean = if spec.loss.needs_clean_reference() {
            Some(Tensor::new(probs0.shape(), probs0.values().to_vec())?)
        } else {
            None
        };
        Ok(Self { model, x0: x.values().to_vec(), batch, dim, labels: y.to_vec(), clean, pred_before })
    }

    fn finish(&self, x_adv: Vec<f64>, trajectory: Vec<f64>, final_loss: Vec<f64>, trace: Vec<f64>) -> Result<AdvBatch> {
        let probs = self.model.predict_probs(&Tensor::new(&[self.batch, self.dim], x_adv.clone())?)?;
        let pred_after = argmax_rows(probs.values(), self.batch, self.model.classes());
        let success: Vec<bool> = pred_after.iter().zip(&self.labels).map(|(&p, &y)| p != y).collect();
        let linf: Vec<f64> = (0..self.batch)
            .map(|i| {
                let a = &x_adv[i * self.dim..(i + 1) * self.dim];
                let b = &self.x0[i * self.dim..(i + 1) * self.dim];
                a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).fold(0.0, f64::max)
            })
            .collect();
        Ok(AdvBatch {
            x_adv,
            success,
            loss_trajectory: trajectory,
            final_loss,
            pred_before: self.pred_before.clone(),
            pred_after,
            linf,
            step_size_trace: trace,
        })
    }

    /// ε = 0 short-circuit: the identity attack.
    fn identity(&self, spec: &AttackSpec) -> Result<AdvBatch> {
        let loss = loss_at(self.model, &self.x0, self.batch, self.dim, &self.labels, spec, self.clean.as_ref())?;
        self.finish(self.x0.clone(), vec![mean(&loss)], loss, Vec::new())
    }

    fn uniform_start(&self, eps: f64, rng: &mut Rng) -> Vec<f64> {
        let mut x: Vec<f64> = self
            .x0
            .iter()
            .map(|&v| v + rng.random_range(-eps..=eps))
            .collect();
        project(&mut x, &self.x0, eps);
        x
    }
}

/// Single-step sign attack: `x_adv = clip₀₁(x + ε·sign(∇ₓL))`. No random
/// start regardless of the flag.
pub fn fgsm(model: &Classifier, x: &Tensor, y: &[usize], spec: &AttackSpec) -> Result<AdvBatch> {
    let ctx = AttackContext::prepare(model, x, y, spec)?;
    if spec.epsilon == 0.0 {
        return ctx.identity(spec);
    }
    let _guard = FreezeGuard::new(model);
    let (grad, loss0) = input_gradient(model, &ctx.x0, ctx.batch, ctx.dim, &ctx.labels, spec, ctx.clean.as_ref())?;
    let mut x_adv: Vec<f64> = ctx
        .x0
        .iter()
        .zip(&grad)
        .map(|(&v, &g)| (v + spec.epsilon * g.signum()).clamp(0.0, 1.0))
        .collect();
    project(&mut x_adv, &ctx.x0, spec.epsilon);
    let final_loss = loss_at(model, &x_adv, ctx.batch, ctx.dim, &ctx.labels, spec, ctx.clean.as_ref())?;
    let trajectory = vec![mean(&loss0), mean(&final_loss)];
    ctx.finish(x_adv, trajectory, final_loss, Vec::new())
}

/// Iterated projected sign ascent with optional uniform random start.
pub fn pgd(model: &Classifier, x: &Tensor, y: &[usize], spec: &AttackSpec, rng: &mut Rng) -> Result<AdvBatch> {
    let ctx = AttackContext::prepare(model, x, y, spec)?;
    if spec.epsilon == 0.0 {
        return ctx.identity(spec);
    }
    let start = if spec.random_start {
        ctx.uniform_start(spec.epsilon, rng)
    } else {
        ctx.x0.clone()
    };
    pgd_core(ctx, start, spec)
}

/// PGD from an explicit start point (still projected onto the ball around
/// `x`); used by TRADES' Gaussian-noise initialization.
pub fn pgd_from_start(
    model: &Classifier,
    x: &Tensor,
    start: &[f64],
    y: &[usize],
    spec: &AttackSpec,
) -> Result<AdvBatch> {
    let ctx = AttackContext::prepare(model, x, y, spec)?;
    if spec.epsilon == 0.0 {
        return ctx.identity(spec);
    }
    let mut start = start.to_vec();
    project(&mut start, &ctx.x0, spec.epsilon);
    pgd_core(ctx, start, spec)
}

fn pgd_core(ctx: AttackContext, start: Vec<f64>, spec: &AttackSpec) -> Result<AdvBatch> {
    let _guard = FreezeGuard::new(ctx.model);
    let mut x_cur = start;
    let mut trajectory = Vec::with_capacity(spec.steps + 1);
    for _ in 0..spec.steps {
        let (grad, loss) =
            input_gradient(ctx.model, &x_cur, ctx.batch, ctx.dim, &ctx.labels, spec, ctx.clean.as_ref())?;
        trajectory.push(mean(&loss));
        for (v, &g) in x_cur.iter_mut().zip(&grad) {
            *v += spec.alpha * g.signum();
        }
        project(&mut x_cur, &ctx.x0, spec.epsilon);
    }
    let final_loss = loss_at(ctx.model, &x_cur, ctx.batch, ctx.dim, &ctx.labels, spec, ctx.clean.as_ref())?;
    trajectory.push(mean(&final_loss));
    ctx.finish(x_cur, trajectory, final_loss, Vec::new())
}

/// Momentum-iterative FGSM: accumulates `g ← μ·g + ∇L/‖∇L‖₁` (per example),
/// steps by `α·sign(g)`, projects like PGD.
pub fn mifgsm(model: &Classifier, x: &Tensor, y: &[usize], spec: &AttackSpec, rng: &mut Rng) -> Result<AdvBatch> {
    let ctx = AttackContext::prepare(model, x, y, spec)?;
    if spec.epsilon == 0.0 {
        return ctx.identity(spec);
    }
    let _guard = FreezeGuard::new(model);
    let mut x_cur = if spec.random_start {
        ctx.uniform_start(spec.epsilon, rng)
    } else {
        ctx.x0.clone()
    };
    let mut momentum = vec![0.0; ctx.batch * ctx.dim];
    let mut trajectory = Vec::with_capacity(spec.steps + 1);
    for _ in 0..spec.steps {
        let (grad, loss) =
            input_gradient(model, &x_cur, ctx.batch, ctx.dim, &ctx.labels, spec, ctx.clean.as_ref())?;
        trajectory.push(mean(&loss));
        for i in 0..ctx.batch {
            let row = &grad[i * ctx.dim..(i + 1) * ctx.dim];
            let l1: f64 = row.iter().map(|g| g.abs()).sum::<f64>().max(1e-12);
            let m_row = &mut momentum[i * ctx.dim..(i + 1) * ctx.dim];
            for (m, &g) in m_row.iter_mut().zip(row) {
                *m = spec.momentum_decay * *m + g / l1;
            }
        }
        for (v, &m) in x_cur.iter_mut().zip(&momentum) {
            *v += spec.alpha * m.signum();
        }
        project(&mut x_cur, &ctx.x0, spec.epsilon);
    }
    let final_loss = loss_at(model, &x_cur, ctx.batch, ctx.dim, &ctx.labels, spec, ctx.clean.as_ref())?;
    trajectory.push(mean(&final_loss));
    ctx.finish(x_cur, trajectory, final_loss, Vec::new())
}

/// Checkpoint iterations of the published APGD schedule:
/// `p₀=0, p₁=ckpt_first, p_{j+1} = p_j + max(p_j − p_{j−1} − decay, min_gap)`.
fn apgd_checkpoints(steps: usize, p: &ApgdParams) -> Vec<usize> {
    let mut fractions = vec![0.0, p.ckpt_first];
    while *fractions.last().expect("nonempty") < 1.0 {
        let last = fractions[fractions.len() - 1];
        let prev = fractions[fractions.len() - 2];
        fractions.push(last + (last - prev - p.ckpt_decay).max(p.ckpt_min_gap));
    }
    let mut ckpts: Vec<usize> = fractions[1..]
        .iter()
        .map(|&f| (f * steps as f64).ceil() as usize)
        .filter(|&w| w > 0 && w < steps)
        .collect();
    ckpts.dedup();
    ckpts
}

/// Momentum PGD with per-example adaptive step halving at checkpoint
/// iterations and restart-from-best; the best-loss iterate is returned.
pub fn apgd(model: &Classifier, x: &Tensor, y: &[usize], spec: &AttackSpec, rng: &mut Rng) -> Result<AdvBatch> {
    let ctx = AttackContext::prepare(model, x, y, spec)?;
    if spec.epsilon == 0.0 {
        return ctx.identity(spec);
    }
    let _guard = FreezeGuard::new(model);
    let p = spec.apgd;
    let (b, d) = (ctx.batch, ctx.dim);
    let ckpts = apgd_checkpoints(spec.steps, &p);

    let mut x_cur = if spec.random_start {
        ctx.uniform_start(spec.epsilon, rng)
    } else {
        ctx.x0.clone()
    };
    let mut x_prev = x_cur.clone();
    let mut eta = vec![p.eta_init_factor * spec.epsilon; b];
    let mut trajectory = Vec::with_capacity(spec.steps + 1);
    let mut trace = Vec::with_capacity(spec.steps);

    // first gradient step seeds best tracking
    let (grad, f0) = input_gradient(model, &x_cur, b, d, &ctx.labels, spec, ctx.clean.as_ref())?;
    trajectory.push(mean(&f0));
    trace.push(eta.iter().cloned().fold(0.0, f64::max));
    let mut x_best = x_cur.clone();
    let mut f_best = f0.clone();
    let mut f_iter_prev = f0;
    let mut improved = vec![0usize; b];
    let mut eta_at_ckpt = eta.clone();
    let mut fbest_at_ckpt = f_best.clone();
    let mut last_ckpt = 0usize;

    let mut x_next = x_cur.clone();
    for i in 0..b {
        for j in 0..d {
            let idx = i * d + j;
            x_next[idx] = x_cur[idx] + eta[i] * grad[idx].signum();
        }
    }
    project(&mut x_next, &ctx.x0, spec.epsilon);
    x_prev.copy_from_slice(&x_cur);
    x_cur = x_next;

    for k in 1..spec.steps {
        let (grad, f_cur) = input_gradient(model, &x_cur, b, d, &ctx.labels, spec, ctx.clean.as_ref())?;
        trajectory.push(mean(&f_cur));
        trace.push(eta.iter().cloned().fold(0.0, f64::max));
        for i in 0..b {
            if f_cur[i] > f_iter_prev[i] {
                improved[i] += 1;
            }
            if f_cur[i] > f_best[i] {
                f_best[i] = f_cur[i];
                x_best[i * d..(i + 1) * d].copy_from_slice(&x_cur[i * d..(i + 1) * d]);
            }
        }
        f_iter_prev = f_cur;

        // momentum update toward z, mixed with the previous displacement
        let mut x_new = vec![0.0; b * d];
        for i in 0..b {
            for j in 0..d {
                let idx = i * d + j;
                let z = x_cur[idx] + eta[i] * grad[idx].signum();
                x_new[idx] = x_cur[idx]
                    + p.momentum_alpha * (z - x_cur[idx])
                    + (1.0 - p.momentum_alpha) * (x_cur[idx] - x_prev[idx]);
            }
        }
        project(&mut x_new, &ctx.x0, spec.epsilon);

        if ckpts.contains(&k) {
            let gap = (k - last_ckpt).max(1);
            for i in 0..b {
                let cond_stalled = (improved[i] as f64) < p.success_ratio * gap as f64;
                let cond_no_progress =
                    eta[i] == eta_at_ckpt[i] && f_best[i] == fbest_at_ckpt[i];
                if cond_stalled || cond_no_progress {
                    eta[i] /= 2.0;
                    // restart from the best-known iterate with cleared momentum
                    x_new[i * d..(i + 1) * d].copy_from_slice(&x_best[i * d..(i + 1) * d]);
                    x_cur[i * d..(i + 1) * d].copy_from_slice(&x_best[i * d..(i + 1) * d]);
                }
                improved[i] = 0;
            }
            eta_at_ckpt.copy_from_slice(&eta);
            fbest_at_ckpt.copy_from_slice(&f_best);
            last_ckpt = k;
        }

        x_prev.copy_from_slice(&x_cur);
        x_cur = x_new;
    }

    // fold the final iterate into best tracking
    let f_final = loss_at(model, &x_cur, b, d, &ctx.labels, spec, ctx.clean.as_ref())?;
    trajectory.push(mean(&f_final));
    for i in 0..b {
        if f_final[i] > f_best[i] {
            f_best[i] = f_final[i];
            x_best[i * d..(i + 1) * d].copy_from_slice(&x_cur[i * d..(i + 1) * d]);
        }
    }
    ctx.finish(x_best, trajectory, f_best, trace)
}

/// Dispatch on the attack kind.
pub fn run(model: &Classifier, x: &Tensor, y: &[usize], spec: &AttackSpec, rng: &mut Rng) -> Result<AdvBatch> {
    match spec.kind {
        AttackKind::Fgsm => fgsm(model, x, y, spec),
        AttackKind::Pgd => pgd(model, x, y, spec, rng),
        AttackKind::Mifgsm => mifgsm(model, x, y, spec, rng),
        AttackKind::Apgd => apgd(model, x, y, spec, rng),
    }
}

/// One attacked example, as exported to CSV.
#[derive(Debug, Clone)]
pub struct ExampleRecord {
    pub index: usize,
    pub true_label: usize,
    pub pred_before: usize,
    pub pred_after: usize,
    pub linf_norm: f64,
    pub loss_final: f64,
}

/// Attack-quality metrics over a dataset.
#[derive(Debug, Clone, Serialize)]
pub struct RobustnessReport {
    pub n: usize,
    pub natural_accuracy: f64,
    pub robust_accuracy: f64,
    /// Fraction of initially-correct examples flipped by the attack.
    pub asr: f64,
    pub initially_correct: usize,
    #[serde(skip)]
    pub examples: Vec<ExampleRecord>,
}

const EVAL_BATCH: usize = 256;

/// Attacks the whole dataset in batches and aggregates ASR and robust
/// accuracy. ASR counts only initially-correct examples in its denominator.
pub fn evaluate_robustness(
    model: &Classifier,
    dataset: &Dataset,
    spec: &AttackSpec,
    rng: &mut Rng,
) -> Result<RobustnessReport> {
    if dataset.is_empty() {
        return Err(Error::Param("robustness evaluation on an empty dataset".into()));
    }
    let n = dataset.len();
    let mut correct_before = 0usize;
    let mut correct_after = 0usize;
    let mut flipped = 0usize;
    let mut examples = Vec::with_capacity(n);
    let mut offset = 0;
    while offset < n {
        let idx: Vec<usize> = (offset..(offset + EVAL_BATCH).min(n)).collect();
        let (x, y) = dataset.gather(&idx);
        let out = run(model, &x, &y, spec, rng)?;
        for (i, &global) in idx.iter().enumerate() {
            let before_ok = out.pred_before[i] == y[i];
            let after_ok = out.pred_after[i] == y[i];
            correct_before += before_ok as usize;
            correct_after += after_ok as usize;
            if before_ok && !after_ok {
                flipped += 1;
            }
            examples.push(ExampleRecord {
                index: global,
                true_label: y[i],
                pred_before: out.pred_before[i],
                pred_after: out.pred_after[i],
                linf_norm: out.linf[i],
                loss_final: out.final_loss[i],
            });
        }
        offset += EVAL_BATCH;
    }
    Ok(RobustnessReport {
        n,
        natural_accuracy: correct_before as f64 / n as f64,
        robust_accuracy: correct_after as f64 / n as f64,
        asr: if correct_before == 0 { 0.0 } else { flipped as f64 / correct_before as f64 },
        initially_correct: correct_before,
        examples,
    })
}

/// Per-example results as CSV with fixed float formatting.
pub fn write_examples_csv(path: &Path, examples: &[ExampleRecord]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "index,true_label,pred_before,pred_after,linf_norm,loss_final")?;
    for e in examples {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6}",
            e.index, e.true_label, e.pred_before, e.pred_after, e.linf_norm, e.loss_final
        )?;
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::rng::{RunRng, Stream};

    fn model_and_batch(seed: u64, classes: usize) -> (Classifier, Tensor, Vec<usize>) {
        let run = RunRng::new(seed);
        let mut init = run.stream(Stream::Init);
        let model = Classifier::mlp(6, &[10], classes, 0.0, false, &mut init).unwrap();
        let ds = synth_blobs(seed, 4, classes, 6, 0.15).unwrap();
        let idx: Vec<usize> = (0..ds.len()).collect();
        let (x, y) = ds.gather(&idx);
        (model, x, y)
    }

    fn ball_ok(out: &AdvBatch, x: &Tensor, eps: f64) {
        for (&a, &o) in out.x_adv.iter().zip(x.values()) {
            assert!((a - o).abs() <= eps + 1e-9, "ball violated: {a} vs {o}");
            assert!((0.0..=1.0).contains(&a), "clip violated: {a}");
        }
    }

    #[test]
    fn fgsm_zero_epsilon_is_identity() {
        let (model, x, y) = model_and_batch(1, 3);
        let spec = AttackSpec::new(AttackKind::Fgsm, 0.0);
        let out = fgsm(&model, &x, &y, &spec).unwrap();
        assert_eq!(out.x_adv, x.values());
        assert_eq!(out.pred_before, out.pred_after);
    }

    #[test]
    fn fgsm_direction_on_linear_model() {
        // One dense layer, no hidden: logits = w·x + b. The CE gradient on the
        // input is w[:,other]·p_other − w[:,label]·(1−p_label) summed; for a
        // 1-feature-relevant construction the step must increase the losing
        // logit gap, i.e. move opposite the correct-class margin gradient.
        let mut rng = RunRng::new(2).stream(Stream::Init);
        let mut model = Classifier::mlp(2, &[2], 3, 0.0, false, &mut rng).unwrap();
        // identity-ish first layer so the model is effectively linear
        model
            .set_parameter_values(vec![
                vec![1.0, 0.0, 0.0, 1.0],
                vec![0.0, 0.0],
                vec![1.0, 0.0, -1.0, 0.0, 1.0, -1.0],
                vec![0.0, 0.0, 0.0],
            ])
            .unwrap();
        let x = Tensor::new(&[1, 2], vec![0.6, 0.5]).unwrap();
        let y = vec![0usize];
        let spec = AttackSpec::new(AttackKind::Fgsm, 0.1);
        let out = fgsm(&model, &x, &y, &spec).unwrap();
        // moving against class 0 means decreasing x[0] (w_y = e0 − others)
        assert!(out.x_adv[0] < 0.6);
        ball_ok(&out, &x, 0.1);
    }

    #[test]
    fn ce_fgsm_never_raises_correct_probability_on_linear_softmax() {
        // On a purely linear softmax model the CE loss is convex in x along
        // the sign direction; an ε-step cannot raise p_label.
        let mut rng = RunRng::new(3).stream(Stream::Init);
        let mut model = Classifier::mlp(3, &[3], 3, 0.0, false, &mut rng).unwrap();
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let mut w2 = Vec::new();
        let mut wr = RunRng::new(5).stream(Stream::Data);
        for _ in 0..9 {
            w2.push(wr.random_range(-1.0..1.0));
        }
        model
            .set_parameter_values(vec![eye.clone(), vec![0.0; 3], w2, vec![0.0; 3]])
            .unwrap();
        let spec = AttackSpec::new(AttackKind::Fgsm, 0.05);
        for trial in 0..20 {
            let vals: Vec<f64> = (0..3).map(|_| wr.random_range(0.2..0.8)).collect();
            let x = Tensor::new(&[1, 3], vals).unwrap();
            let y = vec![trial % 3];
            let before = model.predict_probs(&x).unwrap().values()[y[0]];
            let out = fgsm(&model, &x, &y, &spec).unwrap();
            let after = model
                .predict_probs(&Tensor::new(&[1, 3], out.x_adv.clone()).unwrap())
                .unwrap()
                .values()[y[0]];
            assert!(after <= before + 1e-12, "p_label rose: {before} -> {after}");
        }
    }

    #[test]
    fn pgd_single_step_equals_fgsm() {
        let (model, x, y) = model_and_batch(7, 3);
        let eps = 0.08;
        let f = AttackSpec::new(AttackKind::Fgsm, eps);
        let p = AttackSpec::new(AttackKind::Pgd, eps)
            .with_steps(1, eps)
            .with_random_start(false);
        let mut rng = RunRng::new(7).stream(Stream::Attack);
        let a = fgsm(&model, &x, &y, &f).unwrap();
        let b = pgd(&model, &x, &y, &p, &mut rng).unwrap();
        assert_eq!(a.x_adv, b.x_adv);
    }

    #[test]
    fn pgd_ball_and_clip_invariants() {
        let (model, x, y) = model_and_batch(9, 4);
        let spec = AttackSpec::new(AttackKind::Pgd, 0.12).with_steps(10, 0.03);
        let mut rng = RunRng::new(9).stream(Stream::Attack);
        let out = pgd(&model, &x, &y, &spec, &mut rng).unwrap();
        ball_ok(&out, &x, 0.12);
    }

    #[test]
    fn mifgsm_vanishing_momentum_matches_pgd() {
        let (model, x, y) = model_and_batch(11, 3);
        let mut spec_m = AttackSpec::new(AttackKind::Mifgsm, 0.1).with_steps(5, 0.02);
        spec_m.momentum_decay = 1e-300;
        spec_m.random_start = false;
        let spec_p = AttackSpec::new(AttackKind::Pgd, 0.1)
            .with_steps(5, 0.02)
            .with_random_start(false);
        let mut r1 = RunRng::new(11).stream(Stream::Attack);
        let mut r2 = RunRng::new(11).stream(Stream::Attack);
        let a = mifgsm(&model, &x, &y, &spec_m, &mut r1).unwrap();
        let b = pgd(&model, &x, &y, &spec_p, &mut r2).unwrap();
        assert_eq!(a.x_adv, b.x_adv);
    }

    #[test]
    fn mifgsm_records_trajectory_and_ball() {
        let (model, x, y) = model_and_batch(13, 3);
        let spec = AttackSpec::new(AttackKind::Mifgsm, 0.1).with_steps(6, 0.02);
        let mut rng = RunRng::new(13).stream(Stream::Attack);
        let out = mifgsm(&model, &x, &y, &spec, &mut rng).unwrap();
        assert_eq!(out.loss_trajectory.len(), 7);
        ball_ok(&out, &x, 0.1);
    }

    #[test]
    fn apgd_step_sizes_never_increase() {
        let (model, x, y) = model_and_batch(15, 4);
        let spec = AttackSpec::new(AttackKind::Apgd, 0.1).with_steps(30, 0.0);
        let mut rng = RunRng::new(15).stream(Stream::Attack);
        let out = apgd(&model, &x, &y, &spec, &mut rng).unwrap();
        for w in out.step_size_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "step size increased: {w:?}");
        }
        ball_ok(&out, &x, 0.1);
    }

    #[test]
    fn apgd_returns_best_loss_iterate() {
        let (model, x, y) = model_and_batch(17, 4);
        let spec = AttackSpec::new(AttackKind::Apgd, 0.1).with_steps(25, 0.0);
        let mut rng = RunRng::new(17).stream(Stream::Attack);
        let out = apgd(&model, &x, &y, &spec, &mut rng).unwrap();
        // recomputing the loss at the returned iterate reproduces final_loss
        let again = loss_at(&model, &out.x_adv, y.len(), 6, &y, &spec, None).unwrap();
        for (&a, &b) in again.iter().zip(&out.final_loss) {
            assert!((a - b).abs() < 1e-12);
        }
        // and the batch mean dominates every recorded step
        let best_mean = mean(&out.final_loss);
        for &t in &out.loss_trajectory {
            assert!(best_mean >= t - 1e-12);
        }
    }

    #[test]
    fn loss_kind_grid_runs_clean() {
        let (model, x, y) = model_and_batch(19, 3);
        let mut rng = RunRng::new(19).stream(Stream::Attack);
        for kind in [AttackKind::Fgsm, AttackKind::Pgd, AttackKind::Mifgsm, AttackKind::Apgd] {
            for loss in [LossKind::Ce, LossKind::Kl, LossKind::Std, LossKind::Sce, LossKind::Skl] {
                let mut spec = AttackSpec::new(kind, 0.05).with_loss(loss, 2.0);
                if kind == AttackKind::Apgd {
                    spec.steps = 4;
                } else if kind != AttackKind::Fgsm {
                    spec = spec.with_steps(3, 0.02);
                }
                let out = run(&model, &x, &y, &spec, &mut rng)
                    .unwrap_or_else(|e| panic!("{kind:?}/{loss:?}: {e}"));
                ball_ok(&out, &x, 0.05);
            }
        }
    }

    #[test]
    fn std_loss_rejected_on_binary_models() {
        let mut init = RunRng::new(21).stream(Stream::Init);
        let model = Classifier::mlp(4, &[6], 2, 0.0, false, &mut init).unwrap();
        let x = Tensor::new(&[2, 4], vec![0.1, 0.4, 0.7, 0.2, 0.9, 0.3, 0.5, 0.6]).unwrap();
        let y = vec![0, 1];
        let spec = AttackSpec::new(AttackKind::Pgd, 0.1).with_loss(LossKind::Std, 0.0);
        let mut rng = RunRng::new(21).stream(Stream::Attack);
        assert!(matches!(pgd(&model, &x, &y, &spec, &mut rng), Err(Error::Param(_))));
    }

    #[test]
    fn robustness_report_on_uniform_model_is_chance_level() {
        let run = RunRng::new(23);
        let mut init = run.stream(Stream::Init);
        let mut model = Classifier::mlp(4, &[6], 4, 0.0, false, &mut init).unwrap();
        let zeros: Vec<Vec<f64>> = model.parameters().iter().map(|p| vec![0.0; p.numel()]).collect();
        model.set_parameter_values(zeros).unwrap();
        let ds = synth_blobs(23, 25, 4, 4, 0.2).unwrap();
        let spec = AttackSpec::new(AttackKind::Fgsm, 0.0);
        let mut rng = run.stream(Stream::Attack);
        let report = evaluate_robustness(&model, &ds, &spec, &mut rng).unwrap();
        // uniform outputs argmax to class 0; balanced labels give 1/C exactly
        assert!((report.robust_accuracy - 0.25).abs() < 1e-12);
        assert_eq!(report.natural_accuracy, report.robust_accuracy);
    }

    #[test]
    fn robustness_zero_epsilon_keeps_natural_accuracy() {
        let run = RunRng::new(25);
        let mut init = run.stream(Stream::Init);
        let model = Classifier::mlp(5, &[8], 3, 0.0, false, &mut init).unwrap();
        let ds = synth_blobs(25, 20, 3, 5, 0.1).unwrap();
        let spec = AttackSpec::new(AttackKind::Pgd, 0.0);
        let mut rng = run.stream(Stream::Attack);
        let report = evaluate_robustness(&model, &ds, &spec, &mut rng).unwrap();
        assert_eq!(report.natural_accuracy, report.robust_accuracy);
        assert_eq!(report.asr, 0.0);
    }

    #[test]
    fn robustness_rejects_empty_dataset() {
        let run = RunRng::new(27);
        let mut init = run.stream(Stream::Init);
        let model = Classifier::mlp(4, &[5], 3, 0.0, false, &mut init).unwrap();
        let ds = crate::data::Dataset::new(Vec::new(), 4, Vec::new(), 3, "empty").unwrap();
        let spec = AttackSpec::new(AttackKind::Fgsm, 0.1);
        let mut rng = run.stream(Stream::Attack);
        assert!(matches!(
            evaluate_robustness(&model, &ds, &spec, &mut rng),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn attack_params_freeze_and_restore() {
        let (model, x, y) = model_and_batch(29, 3);
        let spec = AttackSpec::new(AttackKind::Fgsm, 0.05);
        assert!(model.parameters().iter().all(|p| p.requires_grad()));
        let _ = fgsm(&model, &x, &y, &spec).unwrap();
        assert!(model.parameters().iter().all(|p| p.requires_grad()));
    }
}
