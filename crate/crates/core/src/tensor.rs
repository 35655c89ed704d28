//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Values are flat, row-major and immutable once a tensor is built; only the
//! gradient slot is filled in later. Every operation appends a fresh node to
//! a define-by-run graph, so the graph is rebuilt on each forward pass and
//! freed when the last handle drops. `backward` on a scalar fills `grad` for
//! every tensor on the active graph that requires gradients.
//!
//! Graphs are `Rc`-based and confined to one thread; parallelism happens
//! across independent graphs.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Floor used inside `sqrt` gradients so a zero radicand yields a finite
/// (and, after the chain rule, zero) gradient instead of a division by zero.
pub const SQRT_GRAD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { m: usize, k: usize, n: usize },
    Add,
    Sub,
    Mul,
    Div,
    AddRow { rows: usize, cols: usize },
    Scale(f64),
    AddScalar,
    MaxScalar(f64),
    Relu,
    Exp,
    LnClamped(f64),
    SqrtGuarded,
    Softmax { rows: usize, cols: usize },
    RowSum { rows: usize, cols: usize },
    ColBroadcast { rows: usize, cols: usize },
    SumAll,
    MeanAll,
    GatherRows { cols: usize, idx: Vec<usize> },
    Reshape,
    Im2ColHwc(ConvDims),
}

/// Geometry of an HWC im2col expansion.
#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvDims {
    pub fn new(batch: usize, height: usize, width: usize, channels: usize, kernel: usize, stride: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 || kernel > height || kernel > width {
            return Err(Error::Param(format!(
                "conv: kernel {kernel} / stride {stride} invalid for {height}x{width} input"
            )));
        }
        Ok(Self {
            batch,
            height,
            width,
            channels,
            kernel,
            stride,
            out_h: (height - kernel) / stride + 1,
            out_w: (width - kernel) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    pub fn out_positions(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: Cell<bool>,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    op: Op,
}

/// A dense tensor participating in a reverse-mode autodiff graph.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad.get())
            .finish()
    }
}

fn product(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool, parents: Vec<Tensor>, op: Op) -> Tensor {
        debug_assert_eq!(product(&shape), values.len());
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                values,
                requires_grad: Cell::new(requires_grad),
                grad: RefCell::new(None),
                parents,
                op,
            }),
        }
    }

    /// A constant tensor (no gradient tracking).
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        if product(shape) != values.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} values, got {}",
                shape,
                product(shape),
                values.len()
            )));
        }
        Ok(Self::build(shape.to_vec(), values, false, Vec::new(), Op::Leaf))
    }

    /// A leaf tensor whose gradient is requested.
    pub fn leaf(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let t = Self::new(shape, values)?;
        t.inner.requires_grad.set(true);
        Ok(t)
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::build(vec![1], vec![v], false, Vec::new(), Op::Leaf)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::build(shape.to_vec(), vec![0.0; product(shape)], false, Vec::new(), Op::Leaf)
    }

    pub fn filled(shape: &[usize], v: f64) -> Tensor {
        Self::build(shape.to_vec(), vec![v; product(shape)], false, Vec::new(), Op::Leaf)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.inner.values
    }

    pub fn numel(&self) -> usize {
        self.inner.values.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.inner.values[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    /// Toggles gradient tracking for ops built *after* this call. Used to
    /// freeze model parameters while attacking inputs.
    pub fn set_requires_grad(&self, on: bool) {
        self.inner.requires_grad.set(on);
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    fn same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    fn dims2(&self, op: &str) -> Result<(usize, usize)> {
        match self.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!("{op}: expected 2-d tensor, got {s:?}"))),
        }
    }

    fn unary(&self, values: Vec<f64>, op: Op) -> Tensor {
        let rg = self.requires_grad();
        Self::build(self.shape().to_vec(), values, rg, vec![self.clone()], op)
    }

    // ---- arithmetic -----------------------------------------------------

    /// Matrix product `[m×k] · [k×n] -> [m×n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul lhs")?;
        let (k2, n) = rhs.dims2("matmul rhs")?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul: inner dimensions {k} and {k2} disagree"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.values(), rhs.values(), m, k, n, &mut out);
        let rg = self.requires_grad() || rhs.requires_grad();
        Ok(Self::build(
            vec![m, n],
            out,
            rg,
            vec![self.clone(), rhs.clone()],
            Op::Matmul { m, k, n },
        ))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_shape(rhs, "add")?;
        let values = zip_map(self.values(), rhs.values(), |a, b| a + b);
        let rg = self.requires_grad() || rhs.requires_grad();
        Ok(Self::build(self.shape().to_vec(), values, rg, vec![self.clone(), rhs.clone()], Op::Add))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_shape(rhs, "sub")?;
        let values = zip_map(self.values(), rhs.values(), |a, b| a - b);
        let rg = self.requires_grad() || rhs.requires_grad();
        Ok(Self::build(self.shape().to_vec(), values, rg, vec![self.clone(), rhs.clone()], Op::Sub))
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_shape(rhs, "mul")?;
        let values = zip_map(self.values(), rhs.values(), |a, b| a * b);
        let rg = self.requires_grad() || rhs.requires_grad();
        Ok(Self::build(self.shape().to_vec(), values, rg, vec![self.clone(), rhs.clone()], Op::Mul))
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_shape(rhs, "div")?;
        let values = zip_map(self.values(), rhs.values(), |a, b| a / b);
        let rg = self.requires_grad() || rhs.requires_grad();
        Ok(Self::build(self.shape().to_vec(), values, rg, vec![self.clone(), rhs.clone()], Op::Div))
    }

    /// Adds a length-`n` bias row to every row of a `[b×n]` tensor.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let (rows, cols) = self.dims2("add_row")?;
        if bias.shape() != [cols] {
            return Err(Error::Shape(format!(
                "add_row: bias shape {:?} does not match {cols} columns",
                bias.shape()
            )));
        }
        let mut values = self.values().to_vec();
        for r in 0..rows {
            for c in 0..cols {
                values[r * cols + c] += bias.values()[c];
            }
        }
        let rg = self.requires_grad() || bias.requires_grad();
        Ok(Self::build(
            vec![rows, cols],
            values,
            rg,
            vec![self.clone(), bias.clone()],
            Op::AddRow { rows, cols },
        ))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.unary(self.values().iter().map(|v| v * s).collect(), Op::Scale(s))
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        self.unary(self.values().iter().map(|v| v + s).collect(), Op::AddScalar)
    }

    /// Elementwise `max(x, floor)`; gradient passes only where `x > floor`.
    pub fn max_scalar(&self, floor: f64) -> Tensor {
        self.unary(
            self.values().iter().map(|v| v.max(floor)).collect(),
            Op::MaxScalar(floor),
        )
    }

    pub fn relu(&self) -> Tensor {
        self.unary(self.values().iter().map(|v| v.max(0.0)).collect(), Op::Relu)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(self.values().iter().map(|v| v.exp()).collect(), Op::Exp)
    }

    /// `ln(max(x, floor))`; flat (zero gradient) below the floor.
    pub fn ln_clamped(&self, floor: f64) -> Tensor {
        self.unary(
            self.values().iter().map(|v| v.max(floor).ln()).collect(),
            Op::LnClamped(floor),
        )
    }

    /// `sqrt(max(x, 0))` with the gradient denominator floored so that a zero
    /// radicand propagates a zero subgradient instead of NaN.
    pub fn sqrt_guarded(&self) -> Tensor {
        self.unary(
            self.values().iter().map(|v| v.max(0.0).sqrt()).collect(),
            Op::SqrtGuarded,
        )
    }

    /// Numerically stabilized row-wise softmax of a `[b×c]` tensor.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (rows, cols) = self.dims2("softmax")?;
        if cols < 2 {
            return Err(Error::Param(format!("softmax: need at least 2 classes, got {cols}")));
        }
        if !self.values().iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("softmax: non-finite input".into()));
        }
        let mut values = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &self.values()[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut values[r * cols..(r + 1) * cols];
            let mut sum = 0.0;
            for (o, &x) in out.iter_mut().zip(row) {
                *o = (x - max).exp();
                sum += *o;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        let rg = self.requires_grad();
        Ok(Self::build(
            vec![rows, cols],
            values,
            rg,
            vec![self.clone()],
            Op::Softmax { rows, cols },
        ))
    }

    /// Row sums of a `[b×c]` tensor, shape `[b]`.
    pub fn row_sum(&self) -> Result<Tensor> {
        let (rows, cols) = self.dims2("row_sum")?;
        let values = (0..rows)
            .map(|r| self.values()[r * cols..(r + 1) * cols].iter().sum())
            .collect();
        let rg = self.requires_grad();
        Ok(Self::build(vec![rows], values, rg, vec![self.clone()], Op::RowSum { rows, cols }))
    }

    /// Broadcasts a `[b]` vector across `cols` columns, shape `[b×cols]`.
    pub fn col_broadcast(&self, cols: usize) -> Result<Tensor> {
        let rows = match self.shape() {
            [r] => *r,
            s => return Err(Error::Shape(format!("col_broadcast: expected 1-d tensor, got {s:?}"))),
        };
        let mut values = vec![0.0; rows * cols];
        for r in 0..rows {
            let v = self.values()[r];
            for c in 0..cols {
                values[r * cols + c] = v;
            }
        }
        let rg = self.requires_grad();
        Ok(Self::build(
            vec![rows, cols],
            values,
            rg,
            vec![self.clone()],
            Op::ColBroadcast { rows, cols },
        ))
    }

    pub fn sum_all(&self) -> Tensor {
        let total: f64 = self.values().iter().sum();
        let rg = self.requires_grad();
        Self::build(vec![1], vec![total], rg, vec![self.clone()], Op::SumAll)
    }

    pub fn mean_all(&self) -> Tensor {
        let total: f64 = self.values().iter().sum();
        let n = self.numel() as f64;
        let rg = self.requires_grad();
        Self::build(vec![1], vec![total / n], rg, vec![self.clone()], Op::MeanAll)
    }

    /// Picks one element per row: `out[i] = self[i, idx[i]]`, shape `[b]`.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let (rows, cols) = self.dims2("gather_rows")?;
        if idx.len() != rows {
            return Err(Error::Shape(format!(
                "gather_rows: {} indices for {rows} rows",
                idx.len()
            )));
        }
        if let Some(bad) = idx.iter().find(|&&i| i >= cols) {
            return Err(Error::Param(format!("gather_rows: index {bad} out of {cols} columns")));
        }
        let values = idx
            .iter()
            .enumerate()
            .map(|(r, &c)| self.values()[r * cols + c])
            .collect();
        let rg = self.requires_grad();
        Ok(Self::build(
            vec![rows],
            values,
            rg,
            vec![self.clone()],
            Op::GatherRows { cols, idx: idx.to_vec() },
        ))
    }

    /// Reinterprets the flat buffer under a new shape with the same length.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if product(shape) != self.numel() {
            return Err(Error::Shape(format!(
                "reshape: {:?} incompatible with {} elements",
                shape,
                self.numel()
            )));
        }
        let rg = self.requires_grad();
        Ok(Self::build(
            shape.to_vec(),
            self.values().to_vec(),
            rg,
            vec![self.clone()],
            Op::Reshape,
        ))
    }

    /// Expands an HWC image batch `[b, h·w·c]` into convolution patches
    /// `[b·oh·ow, k·k·c]` so convolution reduces to a matrix product.
    pub fn im2col_hwc(&self, dims: ConvDims) -> Result<Tensor> {
        let expect = dims.batch * dims.height * dims.width * dims.channels;
        if self.numel() != expect {
            return Err(Error::Shape(format!(
                "im2col: {} values, geometry implies {expect}",
                self.numel()
            )));
        }
        let mut out = vec![0.0; dims.out_positions() * dims.patch_len()];
        im2col_forward(self.values(), &dims, &mut out);
        let rg = self.requires_grad();
        Ok(Self::build(
            vec![dims.out_positions(), dims.patch_len()],
            out,
            rg,
            vec![self.clone()],
            Op::Im2ColHwc(dims),
        ))
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// scales survivors by `1/(1-rate)`. Returns the output and the mask.
    /// Evaluation-time code simply skips the call, making eval the identity.
    pub fn dropout(&self, rate: f64, rng: &mut Rng) -> Result<(Tensor, Vec<f64>)> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Param(format!("dropout: rate {rate} outside [0,1)")));
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep_scale })
            .collect();
        let mask_t = Tensor::new(self.shape(), mask.clone())?;
        Ok((self.mul(&mask_t)?, mask))
    }

    // ---- backward -------------------------------------------------------

    /// Reverse topological sweep from a scalar output, accumulating `grad`
    /// on every tensor that requires gradients.
    pub fn backward(&self) -> Result<()> {
        if !self.is_scalar() {
            return Err(Error::Contract(format!(
                "backward: output must be scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = topo_order(self);
        *self.inner.grad.borrow_mut() = Some(vec![1.0]);
        for node in order.iter().rev() {
            let grad = node.inner.grad.borrow().clone();
            let Some(grad) = grad else { continue };
            propagate(&node.inner, &grad);
        }
        Ok(())
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Post-order DFS over parents, restricted to gradient-requiring nodes.
/// Reversed, it yields consumers before producers.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited = std::collections::HashSet::new();
    // (node, next parent index) explicit stack; graphs can be deep for long
    // chains of elementwise ops.
    let mut stack: Vec<(Tensor, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.inner.id);
    while let Some((node, pi)) = stack.pop() {
        if pi < node.inner.parents.len() {
            let parent = node.inner.parents[pi].clone();
            stack.push((node, pi + 1));
            if parent.requires_grad() && visited.insert(parent.inner.id) {
                stack.push((parent, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}

fn accumulate(target: &Tensor, contribution: impl FnOnce(&mut [f64])) {
    if !target.requires_grad() {
        return;
    }
    let mut slot = target.inner.grad.borrow_mut();
    let grad = slot.get_or_insert_with(|| vec![0.0; target.numel()]);
    contribution(grad);
}

fn propagate(node: &Inner, g: &[f64]) {
    let parents = &node.parents;
    match &node.op {
        Op::Leaf => {}
        Op::Matmul { m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            let a = parents[0].values();
            let b = parents[1].values();
            accumulate(&parents[0], |da| gemm_nt(g, b, m, n, k, da));
            accumulate(&parents[1], |db| gemm_tn(a, g, m, k, n, db));
        }
        Op::Add => {
            accumulate(&parents[0], |da| add_into(da, g));
            accumulate(&parents[1], |db| add_into(db, g));
        }
        Op::Sub => {
            accumulate(&parents[0], |da| add_into(da, g));
            accumulate(&parents[1], |db| {
                for (d, &gi) in db.iter_mut().zip(g) {
                    *d -= gi;
                }
            });
        }
        Op::Mul => {
            let a = parents[0].values();
            let b = parents[1].values();
            accumulate(&parents[0], |da| {
                for i in 0..g.len() {
                    da[i] += g[i] * b[i];
                }
            });
            accumulate(&parents[1], |db| {
                for i in 0..g.len() {
                    db[i] += g[i] * a[i];
                }
            });
        }
        Op::Div => {
            let a = parents[0].values();
            let b = parents[1].values();
            accumulate(&parents[0], |da| {
                for i in 0..g.len() {
                    da[i] += g[i] / b[i];
                }
            });
            accumulate(&parents[1], |db| {
                for i in 0..g.len() {
                    db[i] -= g[i] * a[i] / (b[i] * b[i]);
                }
            });
        }
        Op::AddRow { rows, cols } => {
            let (rows, cols) = (*rows, *cols);
            accumulate(&parents[0], |da| add_into(da, g));
            accumulate(&parents[1], |db| {
                for r in 0..rows {
                    for c in 0..cols {
                        db[c] += g[r * cols + c];
                    }
                }
            });
        }
        Op::Scale(s) => {
            let s = *s;
            accumulate(&parents[0], |da| {
                for (d, &gi) in da.iter_mut().zip(g) {
                    *d += gi * s;
                }
            });
        }
        Op::AddScalar => {
            accumulate(&parents[0], |da| add_into(da, g));
        }
        Op::MaxScalar(floor) => {
            let floor = *floor;
            let x = parents[0].values();
            accumulate(&parents[0], |da| {
                for i in 0..g.len() {
                    if x[i] > floor {
                        da[i] += g[i];
                    }
                }
            });
        }
        Op::Relu => {
            let x = parents[0].values();
            accumulate(&parents[0], |da| {
                for i in 0..g.len() {
                    if x[i] > 0.0 {
                        da[i] += g[i];
                    }
                }
            });
        }
        Op::Exp => {
            let y = &node.values;
            accumulate(&parents[0], |da| {
                for i in 0..g.len() {
                    da[i] += g[i] * y[i];
                }
            });
        }
        Op::LnClamped(floor) => {
            let floor = *floor;
            let x = parents[0].values();
            accumulate(&parents[0], |da| {
                for i in 0..g.len() {
                    if x[i] > floor {
                        da[i] += g[i] / x[i];
                    }
                }
            });
        }
        Op::SqrtGuarded => {
            let x = parents[0].values();
            accumulate(&parents[0], |da| {
                for i in 0..g.len() {
                    da[i] += g[i] * 0.5 / x[i].max(SQRT_GRAD_FLOOR).sqrt();
                }
            });
        }
        Op::Softmax { rows, cols } => {
            let (rows, cols) = (*rows, *cols);
            let y = &node.values;
            accumulate(&parents[0], |da| {
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(&yi, &gi)| yi * gi).sum();
                    let dr = &mut da[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        dr[c] += yr[c] * (gr[c] - dot);
                    }
                }
            });
        }
        Op::RowSum { rows, cols } => {
            let (rows, cols) = (*rows, *cols);
            accumulate(&parents[0], |da| {
                for r in 0..rows {
                    for c in 0..cols {
                        da[r * cols + c] += g[r];
                    }
                }
            });
        }
        Op::ColBroadcast { rows, cols } => {
            let (rows, cols) = (*rows, *cols);
            accumulate(&parents[0], |da| {
                for r in 0..rows {
                    let mut s = 0.0;
                    for c in 0..cols {
                        s += g[r * cols + c];
                    }
                    da[r] += s;
                }
            });
        }
        Op::SumAll => {
            accumulate(&parents[0], |da| {
                for d in da.iter_mut() {
                    *d += g[0];
                }
            });
        }
        Op::MeanAll => {
            let n = parents[0].numel() as f64;
            accumulate(&parents[0], |da| {
                for d in da.iter_mut() {
                    *d += g[0] / n;
                }
            });
        }
        Op::GatherRows { cols, idx } => {
            let cols = *cols;
            accumulate(&parents[0], |da| {
                for (r, &c) in idx.iter().enumerate() {
                    da[r * cols + c] += g[r];
                }
            });
        }
        Op::Reshape => {
            accumulate(&parents[0], |da| add_into(da, g));
        }
        Op::Im2ColHwc(dims) => {
            let dims = *dims;
            accumulate(&parents[0], |da| im2col_backward(g, &dims, da));
        }
    }
}

fn im2col_forward(input: &[f64], d: &ConvDims, out: &mut [f64]) {
    let row_len = d.patch_len();
    let img = d.height * d.width * d.channels;
    for b in 0..d.batch {
        for oy in 0..d.out_h {
            for ox in 0..d.out_w {
                let row = ((b * d.out_h + oy) * d.out_w + ox) * row_len;
                for ky in 0..d.kernel {
                    let iy = oy * d.stride + ky;
                    for kx in 0..d.kernel {
                        let ix = ox * d.stride + kx;
                        let src = b * img + (iy * d.width + ix) * d.channels;
                        let dst = row + (ky * d.kernel + kx) * d.channels;
                        out[dst..dst + d.channels].copy_from_slice(&input[src..src + d.channels]);
                    }
                }
            }
        }
    }
}

fn im2col_backward(g: &[f64], d: &ConvDims, da: &mut [f64]) {
    let row_len = d.patch_len();
    let img = d.height * d.width * d.channels;
    for b in 0..d.batch {
        for oy in 0..d.out_h {
            for ox in 0..d.out_w {
                let row = ((b * d.out_h + oy) * d.out_w + ox) * row_len;
                for ky in 0..d.kernel {
                    let iy = oy * d.stride + ky;
                    for kx in 0..d.kernel {
                        let ix = ox * d.stride + kx;
                        let dst = b * img + (iy * d.width + ix) * d.channels;
                        let src = row + (ky * d.kernel + kx) * d.channels;
                        for c in 0..d.channels {
                            da[dst + c] += g[src + c];
                        }
                    }
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

// ---- gemm kernels -------------------------------------------------------

/// `out += a[m×k] · b[k×n]`
fn gemm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                o_row[j] += av * b_row[j];
            }
        }
    }
}

/// `out += g[m×n] · b[k×n]^T`, i.e. `out[i,p] += Σ_j g[i,j]·b[p,j]`
fn gemm_nt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        let o_row = &mut out[i * k..(i + 1) * k];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for j in 0..n {
                s += g_row[j] * b_row[j];
            }
            o_row[p] += s;
        }
    }
}

/// `out += a[m×k]^T · g[m×n]`, i.e. `out[p,j] += Σ_i a[i,p]·g[i,j]`
fn gemm_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let o_row = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                o_row[j] += av * g_row[j];
            }
        }
    }
}
