//! The loss family: cross-entropy, KL divergence, cosine / Pearson
//! diversity, the batch confidence mask, the mask-guided divergence loss
//! (MDL), and the standard-deviation loss with its cross-entropy (SCE) and
//! KL (SKL) variants.
//!
//! Each loss exists twice: as a plain value function over probability
//! vectors, and as a graph builder over `[B×C]` probability tensors so that
//! training and attacks can differentiate through it. The value functions
//! are deliberately free of the tensor engine.
//!
//! Conventions, fixed here and relied on everywhere else:
//! - natural logarithms, probabilities clamped at `PROB_FLOOR` inside logs;
//! - the standard deviation over the `C-1` wrong-category probabilities is
//!   the sample standard deviation (divisor `C-2`), so `C >= 3` is required;
//! - `kl_divergence(p, q) = Σ q·ln(q/p)` with `q` the clean distribution and
//!   `p` the perturbed one;
//! - the batch mask threshold is the nearest-rank percentile of the negative
//!   log correct-probabilities, compared inclusively.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probabilities below this are clamped inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Wrong-category vectors with an L2 norm below this are degenerate: the
/// example has converged to a one-hot output and carries no direction.
const NORM_FLOOR: f64 = 1e-15;

/// A softmax output row together with its correct label.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    probs: Vec<f64>,
    label: usize,
}

impl ProbVector {
    pub fn new(probs: Vec<f64>, label: usize) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::Param(format!("need at least 2 classes, got {}", probs.len())));
        }
        if label >= probs.len() {
            return Err(Error::Param(format!(
                "label {label} out of range for {} classes",
                probs.len()
            )));
        }
        if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Numeric("probabilities outside [0,1]".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Numeric(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probs, label })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn classes(&self) -> usize {
        self.probs.len()
    }

    /// The correct-category probability.
    pub fn correct(&self) -> f64 {
        self.probs[self.label]
    }

    /// The `C-1` wrong-category probabilities, label entry removed.
    pub fn wrong(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.probs.len() - 1);
        for (i, &p) in self.probs.iter().enumerate() {
            if i != self.label {
                w.push(p);
            }
        }
        w
    }
}

/// The K sub-network probability vectors produced for one input by a
/// multi-sample dropout forward pass.
#[derive(Debug, Clone)]
pub struct SubNetOutputs {
    probs: Vec<ProbVector>,
}

impl SubNetOutputs {
    pub fn new(probs: Vec<ProbVector>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Param("need at least one sub-network output".into()));
        }
        let label = probs[0].label();
        let classes = probs[0].classes();
        if probs.iter().any(|p| p.label() != label || p.classes() != classes) {
            return Err(Error::Param(
                "sub-network outputs must share label and class count".into(),
            ));
        }
        Ok(Self { probs })
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[ProbVector] {
        &self.probs
    }

    /// The average predicted probability vector of the K sub-networks.
    pub fn average(&self) -> ProbVector {
        let classes = self.probs[0].classes();
        let k = self.k() as f64;
        let mut avg = vec![0.0; classes];
        for p in &self.probs {
            for (a, &v) in avg.iter_mut().zip(p.probs()) {
                *a += v / k;
            }
        }
        ProbVector { probs: avg, label: self.probs[0].label() }
    }
}

/// Which pairwise diversity the MDL orthogonal term uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiversityKind {
    #[default]
    Cosine,
    Pcc,
}

/// A pairwise diversity value plus a flag for degenerate inputs
/// (zero-norm or zero-variance wrong-category vectors).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diversity {
    pub value: f64,
    pub degenerate: bool,
}

/// Weights of the CTR-augmented objectives.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CtrParams {
    /// Weight of the standard-deviation factor in SCE / SKL.
    pub gamma: f64,
    /// TRADES trade-off between natural and robust terms.
    pub beta: f64,
    /// Weight of the MDL orthogonal term.
    pub rho: f64,
    /// Sub-network count for multi-sample dropout.
    pub k: usize,
}

impl CtrParams {
    pub fn validate(&self, mdl_active: bool) -> Result<()> {
        if self.gamma < 0.0 || !self.gamma.is_finite() {
            return Err(Error::Param(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(Error::Param(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.rho < 0.0 || !self.rho.is_finite() {
            return Err(Error::Param(format!("rho must be >= 0, got {}", self.rho)));
        }
        if mdl_active && self.k < 2 {
            return Err(Error::Param(format!("MDL needs K >= 2 sub-networks, got {}", self.k)));
        }
        Ok(())
    }
}

// ---- value-level losses ---------------------------------------------------

/// `-ln p[label]`, clamped.
pub fn cross_entropy(p: &ProbVector) -> f64 {
    -p.correct().max(PROB_FLOOR).ln()
}

/// `Σ q·ln(q/p)`: `q` is the clean-input distribution, `p` the perturbed one.
pub fn kl_divergence(p_perturbed: &ProbVector, q_clean: &ProbVector) -> Result<f64> {
    if p_perturbed.classes() != q_clean.classes() {
        return Err(Error::Shape(format!(
            "kl: class counts {} and {} differ",
            p_perturbed.classes(),
            q_clean.classes()
        )));
    }
    let mut kl = 0.0;
    for (&p, &q) in p_perturbed.probs().iter().zip(q_clean.probs()) {
        if q > PROB_FLOOR {
            kl += q * (q.ln() - p.max(PROB_FLOOR).ln());
        }
    }
    Ok(kl)
}

fn check_pair(p1: &ProbVector, p2: &ProbVector) -> Result<()> {
    if p1.classes() != p2.classes() {
        return Err(Error::Shape(format!(
            "diversity: class counts {} and {} differ",
            p1.classes(),
            p2.classes()
        )));
    }
    if p1.label() != p2.label() {
        return Err(Error::Param(format!(
            "diversity: labels {} and {} differ",
            p1.label(),
            p2.label()
        )));
    }
    Ok(())
}

/// Cosine similarity of the two wrong-category vectors. Smaller means more
/// diverse. Zero-norm vectors flag the result degenerate with value 0.
pub fn cosine_diversity(p1: &ProbVector, p2: &ProbVector) -> Result<Diversity> {
    check_pair(p1, p2)?;
    let (w1, w2) = (p1.wrong(), p2.wrong());
    let n1 = l2_norm(&w1);
    let n2 = l2_norm(&w2);
    if n1 < NORM_FLOOR || n2 < NORM_FLOOR {
        return Ok(Diversity { value: 0.0, degenerate: true });
    }
    let dot: f64 = w1.iter().zip(&w2).map(|(&a, &b)| a * b).sum();
    Ok(Diversity { value: dot / (n1 * n2), degenerate: false })
}

/// Pearson-correlation diversity `D₂ = (Pe + 1) / 2 ∈ [0,1]`. Wrong-category
/// vectors with zero variance flag the result degenerate with value 0.5.
pub fn pcc_diversity(p1: &ProbVector, p2: &ProbVector) -> Result<Diversity> {
    check_pair(p1, p2)?;
    if p1.classes() < 3 {
        return Err(Error::Param(format!(
            "pcc diversity needs C >= 3 classes, got {}",
            p1.classes()
        )));
    }
    let (w1, w2) = (centered(&p1.wrong()), centered(&p2.wrong()));
    let n1 = l2_norm(&w1);
    let n2 = l2_norm(&w2);
    if n1 < NORM_FLOOR || n2 < NORM_FLOOR {
        return Ok(Diversity { value: 0.5, degenerate: true });
    }
    let dot: f64 = w1.iter().zip(&w2).map(|(&a, &b)| a * b).sum();
    let pe = dot / (n1 * n2);
    Ok(Diversity { value: (pe + 1.0) / 2.0, degenerate: false })
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|&x| x * x).sum::<f64>().sqrt()
}

fn centered(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|&x| x - mean).collect()
}

/// Batch confidence mask. `bits[i]` is set iff input `i` is among the `eta`%
/// most confident of the batch.
#[derive(Debug, Clone)]
pub struct Mask {
    pub bits: Vec<bool>,
    /// Percentage of inputs kept, in `(0, 100]`.
    pub eta: f64,
    /// The derived percentile threshold on `-ln p[label]`.
    pub threshold: f64,
}

/// Computes the batch mask from the (K-averaged) probability vectors:
/// `bits[i] = 1` iff `-ln p_i[label_i] <= T` where `T` is the nearest-rank
/// `eta`-percentile of the batch's negative log correct-probabilities.
/// Ties at the threshold are included.
pub fn compute_mask(batch: &[ProbVector], eta: f64) -> Result<Mask> {
    if batch.is_empty() {
        return Err(Error::Param("mask: empty batch".into()));
    }
    if !(eta > 0.0 && eta <= 100.0) {
        return Err(Error::Param(format!("mask: eta {eta} outside (0, 100]")));
    }
    let nll: Vec<f64> = batch.iter().map(cross_entropy).collect();
    let threshold = nearest_rank_percentile(&nll, eta);
    let bits = nll.iter().map(|&v| v <= threshold).collect();
    Ok(Mask { bits, eta, threshold })
}

/// Nearest-rank percentile: the `ceil(eta/100 · n)`-th smallest value.
fn nearest_rank_percentile(values: &[f64], eta: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite loss"));
    let n = sorted.len();
    let rank = ((eta / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Mask-guided divergence loss for a single input: the mean cross-entropy of
/// the K sub-networks plus the masked, normalized orthogonal term.
/// Degenerate cosine pairs contribute 0; degenerate PCC pairs 0.5.
pub fn mdl_loss(outs: &SubNetOutputs, mask_bit: bool, rho: f64, kind: DiversityKind) -> Result<f64> {
    let k = outs.k();
    if k < 2 {
        return Err(Error::Param(format!(
            "mdl: orthogonal term needs K >= 2 sub-networks, got {k}"
        )));
    }
    let mean_ce: f64 = outs.probs().iter().map(cross_entropy).sum::<f64>() / k as f64;
    let mut pair_sum = 0.0;
    if mask_bit && rho != 0.0 {
        for i in 0..k {
            for j in (i + 1)..k {
                let d = match kind {
                    DiversityKind::Cosine => cosine_diversity(&outs.probs()[i], &outs.probs()[j])?,
                    DiversityKind::Pcc => pcc_diversity(&outs.probs()[i], &outs.probs()[j])?,
                };
                pair_sum += d.value;
            }
        }
    }
    let pairs = (k * (k - 1) / 2) as f64;
    let orthogonal = if mask_bit { pair_sum / pairs } else { 0.0 };
    Ok(mean_ce + rho * orthogonal)
}

/// Sample standard deviation (divisor `C-2`) of the `C-1` wrong-category
/// probabilities. Exactly 0 when all wrong probabilities are equal.
pub fn std_loss(p: &ProbVector) -> Result<f64> {
    if p.classes() < 3 {
        return Err(Error::Param(format!(
            "std loss needs C >= 3 classes, got {}",
            p.classes()
        )));
    }
    let wrong = p.wrong();
    let mean = wrong.iter().sum::<f64>() / wrong.len() as f64;
    let var: f64 = wrong.iter().map(|&x| (mean - x) * (mean - x)).sum::<f64>()
        / (wrong.len() - 1) as f64;
    Ok(var.sqrt())
}

/// `exp(γ·L_STD) · L_CE`; the factor is `>= 1`, so SCE never undercuts CE.
pub fn sce_loss(p: &ProbVector, gamma: f64) -> Result<f64> {
    Ok((gamma * std_loss(p)?).exp() * cross_entropy(p))
}

/// `exp(γ·L_STD(clean)) · L_KL(perturbed, clean)`; the deviation factor is
/// taken on the clean distribution.
pub fn skl_loss(p_adv: &ProbVector, p_nat: &ProbVector, gamma: f64) -> Result<f64> {
    if p_adv.label() != p_nat.label() {
        return Err(Error::Param("skl: labels differ".into()));
    }
    Ok((gamma * std_loss(p_nat)?).exp() * kl_divergence(p_adv, p_nat)?)
}

// ---- graph-level losses ---------------------------------------------------

/// Loss selector shared by attacks and adversarial training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Ce,
    Kl,
    Std,
    Sce,
    Skl,
}

impl LossKind {
    /// KL-flavored losses need the clean-distribution snapshot.
    pub fn needs_clean_reference(self) -> bool {
        matches!(self, LossKind::Kl | LossKind::Skl)
    }

    /// STD-flavored losses are undefined below three classes.
    pub fn needs_three_classes(self) -> bool {
        matches!(self, LossKind::Std | LossKind::Sce | LossKind::Skl)
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LossKind::Ce => "ce",
            LossKind::Kl => "kl",
            LossKind::Std => "std",
            LossKind::Sce => "sce",
            LossKind::Skl => "skl",
        };
        write!(f, "{s}")
    }
}

fn batch_dims(probs: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    match probs.shape() {
        [b, c] if *b == labels.len() => Ok((*b, *c)),
        [b, _] => Err(Error::Shape(format!("{b} rows but {} labels", labels.len()))),
        s => Err(Error::Shape(format!("expected [B×C] probabilities, got {s:?}"))),
    }
}

/// Constant 0/1 tensor masking out the label entry of each row.
fn wrong_mask(labels: &[usize], rows: usize, cols: usize) -> Tensor {
    let mut m = vec![1.0; rows * cols];
    for (r, &y) in labels.iter().enumerate() {
        m[r * cols + y] = 0.0;
    }
    Tensor::new(&[rows, cols], m).expect("mask shape")
}

/// Per-example cross-entropy `[B]` from `[B×C]` probabilities.
pub fn ce_rows(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    batch_dims(probs, labels)?;
    Ok(probs.gather_rows(labels)?.ln_clamped(PROB_FLOOR).scale(-1.0))
}

/// Per-example `Σ q·ln(q/p)` where `q` is the clean distribution (constant
/// during attacks, graph-connected during TRADES training).
pub fn kl_rows(p_perturbed: &Tensor, q_clean: &Tensor) -> Result<Tensor> {
    if p_perturbed.shape() != q_clean.shape() {
        return Err(Error::Shape(format!(
            "kl: shapes {:?} and {:?} differ",
            p_perturbed.shape(),
            q_clean.shape()
        )));
    }
    let log_ratio = q_clean
        .ln_clamped(PROB_FLOOR)
        .sub(&p_perturbed.ln_clamped(PROB_FLOOR))?;
    q_clean.mul(&log_ratio)?.row_sum()
}

/// Per-example sample standard deviation of the wrong-category
/// probabilities, `[B]`. Requires `C >= 3`.
pub fn std_rows(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, c) = batch_dims(probs, labels)?;
    if c < 3 {
        return Err(Error::Param(format!("std loss needs C >= 3 classes, got {c}")));
    }
    let mask = wrong_mask(labels, b, c);
    let wrong = probs.mul(&mask)?;
    let mean = wrong.row_sum()?.scale(1.0 / (c - 1) as f64);
    let dev = probs.sub(&mean.col_broadcast(c)?)?.mul(&mask)?;
    let var = dev.mul(&dev)?.row_sum()?.scale(1.0 / (c - 2) as f64);
    Ok(var.sqrt_guarded())
}

/// Per-example `exp(γ·L_STD) · L_CE`, `[B]`.
pub fn sce_rows(probs: &Tensor, labels: &[usize], gamma: f64) -> Result<Tensor> {
    let factor = std_rows(probs, labels)?.scale(gamma).exp();
    factor.mul(&ce_rows(probs, labels)?)
}

/// Per-example `exp(γ·L_STD(clean)) · L_KL(perturbed, clean)`, `[B]`.
pub fn skl_rows(p_perturbed: &Tensor, q_clean: &Tensor, labels: &[usize], gamma: f64) -> Result<Tensor> {
    let factor = std_rows(q_clean, labels)?.scale(gamma).exp();
    factor.mul(&kl_rows(p_perturbed, q_clean)?)
}

/// Dispatches on the loss kind. `clean` must be provided for KL / SKL.
pub fn loss_rows(
    kind: LossKind,
    probs: &Tensor,
    clean: Option<&Tensor>,
    labels: &[usize],
    gamma: f64,
) -> Result<Tensor> {
    match kind {
        LossKind::Ce => ce_rows(probs, labels),
        LossKind::Std => std_rows(probs, labels),
        LossKind::Sce => sce_rows(probs, labels, gamma),
        LossKind::Kl => {
            let q = clean.ok_or_else(|| Error::Contract("kl loss needs the clean snapshot".into()))?;
            kl_rows(probs, q)
        }
        LossKind::Skl => {
            let q = clean.ok_or_else(|| Error::Contract("skl loss needs the clean snapshot".into()))?;
            skl_rows(probs, q, labels, gamma)
        }
    }
}

/// Pairwise diversity rows used by the MDL orthogonal term. Degenerate
/// examples (zero-norm wrong vectors) are gated to their neutral value with
/// the gradient cut, matching the value-level definitions.
fn diversity_pair_rows(
    p_i: &Tensor,
    p_j: &Tensor,
    labels: &[usize],
    kind: DiversityKind,
) -> Result<Tensor> {
    let (b, c) = batch_dims(p_i, labels)?;
    if kind == DiversityKind::Pcc && c < 3 {
        return Err(Error::Param(format!("pcc diversity needs C >= 3 classes, got {c}")));
    }
    let mask = wrong_mask(labels, b, c);
    let prep = |p: &Tensor| -> Result<Tensor> {
        match kind {
            DiversityKind::Cosine => p.mul(&mask),
            DiversityKind::Pcc => {
                let wrong = p.mul(&mask)?;
                let mean = wrong.row_sum()?.scale(1.0 / (c - 1) as f64);
                p.sub(&mean.col_broadcast(c)?)?.mul(&mask)
            }
        }
    };
    let wi = prep(p_i)?;
    let wj = prep(p_j)?;
    let ni = wi.mul(&wi)?.row_sum()?.sqrt_guarded();
    let nj = wj.mul(&wj)?.row_sum()?.sqrt_guarded();
    // Degeneracy gate from forward values; multiplying by the constant also
    // cuts the huge 1/denom gradients on converged examples.
    let gate: Vec<f64> = ni
        .values()
        .iter()
        .zip(nj.values())
        .map(|(&a, &b)| if a > NORM_FLOOR && b > NORM_FLOOR { 1.0 } else { 0.0 })
        .collect();
    let gate = Tensor::new(&[b], gate)?;
    let dot = wi.mul(&wj)?.row_sum()?;
    let denom = ni.mul(&nj)?.max_scalar(1e-30);
    let sim = dot.div(&denom)?.mul(&gate)?;
    match kind {
        DiversityKind::Cosine => Ok(sim),
        // D₂ = (Pe+1)/2; gated examples land exactly on 0.5
        DiversityKind::Pcc => Ok(sim.add_scalar(1.0).scale(0.5)),
    }
}

/// Batch-mean MDL objective over the K sub-network probability tensors:
/// mean cross-entropy term plus `rho` times the masked, normalized pairwise
/// diversity. `mask_bits` comes from [`compute_mask`] over the K-averaged
/// probabilities and gates examples, not gradients.
pub fn mdl_batch(
    sub_probs: &[Tensor],
    labels: &[usize],
    mask_bits: &[bool],
    rho: f64,
    kind: DiversityKind,
) -> Result<Tensor> {
    let k = sub_probs.len();
    if k < 2 {
        return Err(Error::Param(format!("mdl: orthogonal term needs K >= 2, got {k}")));
    }
    let (b, _) = batch_dims(&sub_probs[0], labels)?;
    if mask_bits.len() != b {
        return Err(Error::Shape(format!("mdl: {} mask bits for {b} rows", mask_bits.len())));
    }
    let mut ce_sum = ce_rows(&sub_probs[0], labels)?;
    for p in &sub_probs[1..] {
        ce_sum = ce_sum.add(&ce_rows(p, labels)?)?;
    }
    let ce_mean = ce_sum.scale(1.0 / k as f64);

    let mut per_example = ce_mean;
    if rho != 0.0 {
        let mut pair_sum: Option<Tensor> = None;
        for i in 0..k {
            for j in (i + 1)..k {
                let d = diversity_pair_rows(&sub_probs[i], &sub_probs[j], labels, kind)?;
                pair_sum = Some(match pair_sum {
                    Some(s) => s.add(&d)?,
                    None => d,
                });
            }
        }
        let pairs = (k * (k - 1) / 2) as f64;
        let mask_vals: Vec<f64> = mask_bits.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let mask_t = Tensor::new(&[b], mask_vals)?;
        let orthogonal = pair_sum.expect("k >= 2").scale(1.0 / pairs).mul(&mask_t)?;
        per_example = per_example.add(&orthogonal.scale(rho))?;
    }
    Ok(per_example.mean_all())
}

/// Batch-mean normalized orthogonal term alone (diagnostics for training
/// history and convergence checks).
pub fn orthogonal_term_value(
    sub_probs: &[Tensor],
    labels: &[usize],
    mask_bits: &[bool],
    kind: DiversityKind,
) -> Result<f64> {
    let k = sub_probs.len();
    if k < 2 {
        return Err(Error::Param("orthogonal term needs K >= 2".into()));
    }
    let (b, _) = batch_dims(&sub_probs[0], labels)?;
    let mut total = vec![0.0; b];
    for i in 0..k {
        for j in (i + 1)..k {
            let d = diversity_pair_rows(&sub_probs[i], &sub_probs[j], labels, kind)?;
            for (t, &v) in total.iter_mut().zip(d.values()) {
                *t += v;
            }
        }
    }
    let pairs = (k * (k - 1) / 2) as f64;
    let masked: f64 = total
        .iter()
        .zip(mask_bits)
        .map(|(&v, &m)| if m { v / pairs } else { 0.0 })
        .sum();
    Ok(masked / b as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RunRng, Stream};
    use rand::Rng as _;

    fn pv(probs: &[f64], label: usize) -> ProbVector {
        ProbVector::new(probs.to_vec(), label).unwrap()
    }

    /// Random point on the C-simplex, bounded away from the boundary.
    fn random_simplex(c: usize, rng: &mut crate::rng::Rng) -> Vec<f64> {
        let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }

    #[test]
    fn ce_certain_correct_is_zero() {
        let p = pv(&[0.0, 1.0, 0.0], 1);
        assert_eq!(cross_entropy(&p), 0.0);
    }

    #[test]
    fn ce_uniform_ten_classes() {
        let p = pv(&[0.1; 10], 3);
        assert!((cross_entropy(&p) - 10.0_f64.ln()).abs() < 1e-12);
        assert!((cross_entropy(&p) - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn ce_half_is_ln_two() {
        let p = pv(&[0.5, 0.25, 0.25], 0);
        assert!((cross_entropy(&p) - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kl_identical_is_zero() {
        let p = pv(&[0.2, 0.3, 0.5], 0);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_closed_form() {
        // KL(perturbed=[.5,.5], clean=[1,0]) = 1·ln(1/.5) = ln 2
        let p = pv(&[0.5, 0.5], 0);
        let q = pv(&[1.0, 0.0], 0);
        assert!((kl_divergence(&p, &q).unwrap() - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kl_nonnegative_on_random_pairs() {
        let mut rng = RunRng::new(5).stream(Stream::Data);
        for _ in 0..100 {
            let p = pv(&random_simplex(6, &mut rng), 0);
            let q = pv(&random_simplex(6, &mut rng), 0);
            assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
        }
    }

    #[test]
    fn cosine_identical_wrong_vectors() {
        let p = pv(&[0.3, 0.3, 0.4], 2);
        let d = cosine_diversity(&p, &p).unwrap();
        assert!((d.value - 1.0).abs() < 1e-12);
        assert!(!d.degenerate);
    }

    #[test]
    fn cosine_disjoint_support() {
        let p1 = pv(&[0.6, 0.0, 0.4], 2);
        let p2 = pv(&[0.0, 0.6, 0.4], 2);
        let d = cosine_diversity(&p1, &p2).unwrap();
        assert_eq!(d.value, 0.0);
        assert!(!d.degenerate);
    }

    #[test]
    fn cosine_hand_example() {
        // wrong vectors proportional to [1,0] and [1,1] -> 1/sqrt(2)
        let p1 = pv(&[0.6, 0.0, 0.4], 2);
        let p2 = pv(&[0.3, 0.3, 0.4], 2);
        let d = cosine_diversity(&p1, &p2).unwrap();
        assert!((d.value - 1.0 / 2.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cosine_degenerate_converged_example() {
        let p1 = pv(&[0.0, 0.0, 1.0], 2);
        let p2 = pv(&[0.3, 0.3, 0.4], 2);
        let d = cosine_diversity(&p1, &p2).unwrap();
        assert_eq!(d.value, 0.0);
        assert!(d.degenerate);
    }

    #[test]
    fn pcc_identical_is_one() {
        let p = pv(&[0.5, 0.2, 0.1, 0.2], 3);
        let d = pcc_diversity(&p, &p).unwrap();
        assert!((d.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pcc_anticorrelated_is_zero() {
        // wrong vectors [.3,.2,.1] and [.1,.2,.3] center to exact negatives
        let p1 = pv(&[0.3, 0.2, 0.1, 0.4], 3);
        let p2 = pv(&[0.1, 0.2, 0.3, 0.4], 3);
        let d = pcc_diversity(&p1, &p2).unwrap();
        assert!(d.value.abs() < 1e-12, "got {}", d.value);
    }

    #[test]
    fn pcc_zero_variance_is_degenerate_half() {
        let p1 = pv(&[0.2, 0.2, 0.2, 0.4], 3);
        let p2 = pv(&[0.5, 0.2, 0.1, 0.2], 3);
        let d = pcc_diversity(&p1, &p2).unwrap();
        assert_eq!(d.value, 0.5);
        assert!(d.degenerate);
    }

    #[test]
    fn pcc_independent_vectors_average_near_half() {
        let mut rng = RunRng::new(17).stream(Stream::Data);
        let n = 1000;
        let mut sum = 0.0;
        for _ in 0..n {
            let p1 = pv(&random_simplex(10, &mut rng), 0);
            let p2 = pv(&random_simplex(10, &mut rng), 0);
            sum += pcc_diversity(&p1, &p2).unwrap().value;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn mask_eta_100_is_all_ones() {
        let batch = vec![
            pv(&[0.8, 0.1, 0.1], 0),
            pv(&[0.1, 0.8, 0.1], 2),
            pv(&[0.4, 0.3, 0.3], 0),
        ];
        let mask = compute_mask(&batch, 100.0).unwrap();
        assert!(mask.bits.iter().all(|&b| b));
    }

    #[test]
    fn mask_identical_probs_all_ones_any_eta() {
        let batch = vec![pv(&[0.5, 0.3, 0.2], 0); 5];
        for eta in [10.0, 40.0, 75.0] {
            let mask = compute_mask(&batch, eta).unwrap();
            assert!(mask.bits.iter().all(|&b| b), "eta {eta}");
        }
    }

    #[test]
    fn mask_nearest_rank_example() {
        // -ln p over the batch = [0.1, 0.2, 0.9, 1.5], eta=50 -> T = 0.2
        let batch: Vec<ProbVector> = [0.1_f64, 0.2, 0.9, 1.5]
            .iter()
            .map(|&nll| {
                let p = (-nll).exp();
                let rest = (1.0 - p) / 2.0;
                pv(&[p, rest, rest], 0)
            })
            .collect();
        let mask = compute_mask(&batch, 50.0).unwrap();
        assert_eq!(mask.bits, vec![true, true, false, false]);
        assert!((mask.threshold - 0.2).abs() < 1e-12);
    }

    #[test]
    fn mask_rejects_eta_zero() {
        let batch = vec![pv(&[0.5, 0.3, 0.2], 0)];
        assert!(matches!(compute_mask(&batch, 0.0), Err(Error::Param(_))));
    }

    #[test]
    fn mdl_mask_zero_is_mean_ce() {
        let outs = SubNetOutputs::new(vec![pv(&[0.5, 0.3, 0.2], 0), pv(&[0.7, 0.2, 0.1], 0)]).unwrap();
        let loss = mdl_loss(&outs, false, 1.0, DiversityKind::Cosine).unwrap();
        let mean_ce = (cross_entropy(&outs.probs()[0]) + cross_entropy(&outs.probs()[1])) / 2.0;
        assert_eq!(loss, mean_ce);
    }

    #[test]
    fn mdl_identical_outputs_add_one() {
        let p = pv(&[0.5, 0.3, 0.2], 0);
        let outs = SubNetOutputs::new(vec![p.clone(), p.clone()]).unwrap();
        let loss = mdl_loss(&outs, true, 1.0, DiversityKind::Cosine).unwrap();
        assert!((loss - (cross_entropy(&p) + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn mdl_orthogonal_wrong_vectors_add_nothing() {
        let p1 = pv(&[0.4, 0.6, 0.0], 0);
        let p2 = pv(&[0.4, 0.0, 0.6], 0);
        let outs = SubNetOutputs::new(vec![p1.clone(), p2.clone()]).unwrap();
        let loss = mdl_loss(&outs, true, 1.0, DiversityKind::Cosine).unwrap();
        let mean_ce = (cross_entropy(&p1) + cross_entropy(&p2)) / 2.0;
        assert!((loss - mean_ce).abs() < 1e-12);
    }

    #[test]
    fn mdl_rejects_single_subnet() {
        let outs = SubNetOutputs::new(vec![pv(&[0.5, 0.3, 0.2], 0)]).unwrap();
        assert!(matches!(
            mdl_loss(&outs, true, 1.0, DiversityKind::Cosine),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn std_equal_wrong_probs_is_zero() {
        let p = pv(&[0.25, 0.25, 0.25, 0.25], 3);
        assert_eq!(std_loss(&p).unwrap(), 0.0);
    }

    #[test]
    fn std_hand_example() {
        // wrong probs [0.1, 0.2, 0.3]: sample std with divisor 2 is 0.1
        let p = pv(&[0.1, 0.2, 0.3, 0.4], 3);
        assert!((std_loss(&p).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn std_permutation_invariant() {
        let p1 = pv(&[0.1, 0.2, 0.3, 0.4], 3);
        let p2 = pv(&[0.3, 0.1, 0.2, 0.4], 3);
        assert_eq!(std_loss(&p1).unwrap(), std_loss(&p2).unwrap());
    }

    #[test]
    fn std_rejects_two_classes() {
        let p = pv(&[0.4, 0.6], 1);
        assert!(matches!(std_loss(&p), Err(Error::Param(_))));
    }

    #[test]
    fn sce_gamma_zero_equals_ce_exactly() {
        let p = pv(&[0.1, 0.2, 0.3, 0.4], 3);
        assert_eq!(sce_loss(&p, 0.0).unwrap(), cross_entropy(&p));
    }

    #[test]
    fn sce_zero_spread_equals_ce() {
        let p = pv(&[0.25, 0.25, 0.25, 0.25], 3);
        assert_eq!(sce_loss(&p, 3.0).unwrap(), cross_entropy(&p));
    }

    #[test]
    fn sce_dominates_ce() {
        let mut rng = RunRng::new(23).stream(Stream::Data);
        for _ in 0..100 {
            let p = pv(&random_simplex(10, &mut rng), 4);
            assert!(sce_loss(&p, 2.0).unwrap() >= cross_entropy(&p));
        }
    }

    #[test]
    fn skl_gamma_zero_equals_kl() {
        let p = pv(&[0.2, 0.3, 0.5], 0);
        let q = pv(&[0.5, 0.3, 0.2], 0);
        assert_eq!(skl_loss(&p, &q, 0.0).unwrap(), kl_divergence(&p, &q).unwrap());
    }

    #[test]
    fn skl_identical_distributions_zero_any_gamma() {
        let p = pv(&[0.2, 0.3, 0.5], 0);
        for gamma in [0.0, 1.0, 5.0] {
            assert_eq!(skl_loss(&p, &p, gamma).unwrap(), 0.0);
        }
    }

    #[test]
    fn skl_dominates_kl() {
        let mut rng = RunRng::new(29).stream(Stream::Data);
        for _ in 0..100 {
            let p = pv(&random_simplex(8, &mut rng), 2);
            let q = pv(&random_simplex(8, &mut rng), 2);
            assert!(skl_loss(&p, &q, 1.5).unwrap() >= kl_divergence(&p, &q).unwrap());
        }
    }

    #[test]
    fn ct_bound_zero_spread_keeps_wrong_probs_below_threshold() {
        let mut rng = RunRng::new(31).stream(Stream::Data);
        for _ in 0..100 {
            let c = 10;
            let label = rng.random_range(0..c);
            let correct: f64 = rng.random_range(0.05..0.95);
            let wrong = (1.0 - correct) / (c - 1) as f64;
            let mut probs = vec![wrong; c];
            probs[label] = correct;
            let p = pv(&probs, label);
            assert!(std_loss(&p).unwrap() <= 1e-9);
            for (i, &pi) in p.probs().iter().enumerate() {
                if i != label {
                    assert!(pi <= 1.0 / (c - 1) as f64 + 1e-6);
                }
            }
        }
    }

    // ---- graph-level ----------------------------------------------------

    fn fd_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    /// Gradient of a graph loss w.r.t. the probability entries themselves.
    fn graph_grad(build: &dyn Fn(&Tensor) -> Tensor, probs: &[f64], shape: &[usize]) -> Vec<f64> {
        let t = Tensor::leaf(shape, probs.to_vec()).unwrap();
        build(&t).backward().unwrap();
        t.grad().unwrap()
    }

    #[test]
    fn graph_losses_match_value_losses() {
        let mut rng = RunRng::new(37).stream(Stream::Data);
        for _ in 0..20 {
            let c = 7;
            let label = rng.random_range(0..c);
            let probs = random_simplex(c, &mut rng);
            let clean = random_simplex(c, &mut rng);
            let p = pv(&probs, label);
            let q = pv(&clean, label);

            let tp = Tensor::new(&[1, c], probs.clone()).unwrap();
            let tq = Tensor::new(&[1, c], clean.clone()).unwrap();

            assert!((ce_rows(&tp, &[label]).unwrap().values()[0] - cross_entropy(&p)).abs() < 1e-12);
            assert!(
                (kl_rows(&tp, &tq).unwrap().values()[0] - kl_divergence(&p, &q).unwrap()).abs()
                    < 1e-12
            );
            assert!(
                (std_rows(&tp, &[label]).unwrap().values()[0] - std_loss(&p).unwrap()).abs() < 1e-12
            );
            assert!(
                (sce_rows(&tp, &[label], 2.0).unwrap().values()[0] - sce_loss(&p, 2.0).unwrap())
                    .abs()
                    < 1e-12
            );
            assert!(
                (skl_rows(&tp, &tq, &[label], 2.0).unwrap().values()[0]
                    - skl_loss(&p, &q, 2.0).unwrap())
                .abs()
                    < 1e-12
            );
        }
    }

    #[test]
    fn ce_gradient_is_zero_on_wrong_categories() {
        // Treating probabilities as free variables, only the label entry
        // carries gradient.
        let mut rng = RunRng::new(41).stream(Stream::Data);
        for _ in 0..20 {
            let c = 10;
            let label = rng.random_range(0..c);
            let probs = random_simplex(c, &mut rng);
            let g = graph_grad(&|t| ce_rows(t, &[label]).unwrap().sum_all(), &probs, &[1, c]);
            for (i, &gi) in g.iter().enumerate() {
                if i == label {
                    assert!(gi < 0.0);
                } else {
                    assert_eq!(gi, 0.0);
                }
            }
        }
    }

    #[test]
    fn std_gradient_signs_and_monotone_weighting() {
        let mut rng = RunRng::new(43).stream(Stream::Data);
        for _ in 0..50 {
            let c = 10;
            let label = rng.random_range(0..c);
            let probs = random_simplex(c, &mut rng);
            let p = pv(&probs, label);
            let wrong = p.wrong();
            let mean = wrong.iter().sum::<f64>() / wrong.len() as f64;

            let g = graph_grad(&|t| std_rows(t, &[label]).unwrap().sum_all(), &probs, &[1, c]);
            assert_eq!(g[label], 0.0, "label gradient must vanish");

            // sign(dL/dp_c) = sign(p_c - mean of wrong probs)
            let mut by_prob: Vec<(f64, f64)> = Vec::new();
            for (i, &gi) in g.iter().enumerate() {
                if i == label {
                    continue;
                }
                if (probs[i] - mean).abs() > 1e-9 {
                    assert_eq!(
                        gi > 0.0,
                        probs[i] > mean,
                        "sign mismatch at p={} mean={mean}",
                        probs[i]
                    );
                }
                by_prob.push((probs[i], gi));
            }
            // strictly increasing in p_c among wrong categories
            by_prob.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            for w in by_prob.windows(2) {
                if w[1].0 - w[0].0 > 1e-9 {
                    assert!(w[1].1 > w[0].1, "gradient not increasing: {w:?}");
                }
            }
        }
    }

    #[test]
    fn sce_gradient_negative_on_correct_class() {
        let mut rng = RunRng::new(47).stream(Stream::Data);
        for _ in 0..50 {
            let c = 10;
            let label = rng.random_range(0..c);
            let probs = random_simplex(c, &mut rng);
            let g = graph_grad(
                &|t| sce_rows(t, &[label], 2.0).unwrap().sum_all(),
                &probs,
                &[1, c],
            );
            assert!(g[label] < 0.0);
        }
    }

    #[test]
    fn graph_gradients_match_finite_differences() {
        let mut rng = RunRng::new(53).stream(Stream::Data);
        let c = 6;
        for _ in 0..10 {
            let label = rng.random_range(0..c);
            let probs = random_simplex(c, &mut rng);
            let clean = random_simplex(c, &mut rng);

            type Builder = Box<dyn Fn(&Tensor) -> Tensor>;
            let clean_t = Tensor::new(&[1, c], clean.clone()).unwrap();
            let cases: Vec<(&str, Builder)> = vec![
                ("ce", Box::new(move |t| ce_rows(t, &[label]).unwrap().sum_all())),
                ("std", Box::new(move |t| std_rows(t, &[label]).unwrap().sum_all())),
                ("sce", Box::new(move |t| sce_rows(t, &[label], 1.5).unwrap().sum_all())),
                ("kl", {
                    let q = clean_t.clone();
                    Box::new(move |t| kl_rows(t, &q).unwrap().sum_all())
                }),
                ("skl", {
                    let q = clean_t.clone();
                    Box::new(move |t| skl_rows(t, &q, &[label], 1.5).unwrap().sum_all())
                }),
            ];
            for (name, build) in &cases {
                let g = graph_grad(build.as_ref(), &probs, &[1, c]);
                let f = |v: &[f64]| {
                    let t = Tensor::new(&[1, c], v.to_vec()).unwrap();
                    build(&t).item()
                };
                let fd = fd_grad(&f, &probs, 1e-7);
                for i in 0..c {
                    let scale = 1.0_f64.max(fd[i].abs());
                    assert!(
                        (g[i] - fd[i]).abs() <= 1e-4 * scale,
                        "{name}[{i}]: {} vs {}",
                        g[i],
                        fd[i]
                    );
                }
            }
        }
    }

    #[test]
    fn mdl_batch_matches_value_function() {
        let mut rng = RunRng::new(59).stream(Stream::Data);
        let c = 5;
        let b = 4;
        let k = 3;
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
        let mut flat: Vec<Vec<f64>> = vec![Vec::new(); k];
        let mut per_input: Vec<Vec<ProbVector>> = vec![Vec::new(); b];
        for (i, &label) in labels.iter().enumerate() {
            for f in flat.iter_mut() {
                let row = random_simplex(c, &mut rng);
                f.extend_from_slice(&row);
                per_input[i].push(pv(&row, label));
            }
        }
        let sub_probs: Vec<Tensor> = flat
            .into_iter()
            .map(|f| Tensor::new(&[b, c], f).unwrap())
            .collect();
        let mask = vec![true, false, true, true];
        for kind in [DiversityKind::Cosine, DiversityKind::Pcc] {
            let graph = mdl_batch(&sub_probs, &labels, &mask, 0.7, kind).unwrap().item();
            let mut value = 0.0;
            for (i, outs) in per_input.iter().enumerate() {
                let outs = SubNetOutputs::new(outs.clone()).unwrap();
                value += mdl_loss(&outs, mask[i], 0.7, kind).unwrap();
            }
            value /= b as f64;
            assert!((graph - value).abs() < 1e-12, "{kind:?}: {graph} vs {value}");
        }
    }

    #[test]
    fn mdl_batch_rho_zero_equals_mean_ce() {
        let mut rng = RunRng::new(61).stream(Stream::Data);
        let c = 4;
        let b = 3;
        let labels = vec![0, 2, 1];
        let subs: Vec<Tensor> = (0..2)
            .map(|_| {
                let mut f = Vec::new();
                for _ in 0..b {
                    f.extend(random_simplex(c, &mut rng));
                }
                Tensor::new(&[b, c], f).unwrap()
            })
            .collect();
        let mask = vec![true; b];
        let with = mdl_batch(&subs, &labels, &mask, 0.0, DiversityKind::Cosine).unwrap().item();
        let mut ce = ce_rows(&subs[0], &labels).unwrap();
        ce = ce.add(&ce_rows(&subs[1], &labels).unwrap()).unwrap();
        let expect = ce.scale(0.5).mean_all().item();
        assert_eq!(with, expect);
    }
}
