//! Tape-based reverse-mode differentiation over 2-D `f64` tensors.
//!
//! The tape is append-only, so every parent id is smaller than its child id
//! and the node list is already in topological order. Backward walks it in
//! reverse and only touches nodes that lie on a path to one of the requested
//! targets, which is what makes per-group gradient routing cheap.

use rand::Rng;

use super::matrix::{gemm, Tensor};
use crate::error::{shape_err, Error, Result};

/// Standard SELU scale.
pub const SELU_LAMBDA: f64 = 1.0507009873554805;
/// Standard SELU negative-branch coefficient.
pub const SELU_ALPHA: f64 = 1.6732632423543772;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// `x * w + b` with `b` broadcast over rows.
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Selu(Var),
    Exp(Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Mask {
        x: Var,
        mask: Vec<f64>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Sum(Var),
    Mse(Var, Var),
    GaussianKl {
        mu: Var,
        sigma: Var,
    },
    LinComb(Vec<(Var, f64)>),
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Affine { x, w, b } => vec![*x, *w, *b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Mse(a, b) => vec![*a, *b],
            Op::GaussianKl { mu, sigma } => vec![*mu, *sigma],
            Op::AddScalar(x)
            | Op::Scale(x, _)
            | Op::Selu(x)
            | Op::Exp(x)
            | Op::Sum(x)
            | Op::Clamp { x, .. }
            | Op::Mask { x, .. }
            | Op::SliceCols { x, .. } => vec![*x],
            Op::LinComb(terms) => terms.iter().map(|(v, _)| *v).collect(),
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Recorded computation. Gradients of backward targets accumulate across
/// calls until [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_flag(op, value, requires_grad)
    }

    fn push_flag(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, value, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_flag(Op::Leaf, value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_flag(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return shape_err(format!("{what}: {sa:?} vs {sb:?}"));
        }
        Ok(())
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols() {
            return shape_err(format!("affine x{:?} w{:?} b{:?}", xv.shape(), wv.shape(), bv.shape()));
        }
        let mut out = Tensor::new(xv.rows(), wv.cols(), bv.data().repeat(xv.rows()))?;
        gemm(xv, false, wv, false, &mut out, 1.0);
        Ok(self.push(Op::Affine { x, w, b }, out))
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, "elementwise")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.rows(), av.cols(), data)?;
        Ok(self.push(op, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(Op::AddScalar(x), out)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(Op::Scale(x, c), out)
    }

    pub fn selu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(selu);
        self.push(Op::Selu(x), out)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        self.push(Op::Exp(x), out)
    }

    /// Elementwise clamp; the gradient is zero where the input was clipped.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(Op::Clamp { x, lo, hi }, out)
    }

    /// Inverted dropout. Returns the output and the per-element multiplier
    /// (`0` or `1 / (1 - drop_ratio)`); eval mode and `drop_ratio == 0` are
    /// the identity and record nothing.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        drop_ratio: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<(Var, Vec<f64>)> {
        self.masked(x, drop_ratio, training, rng, true)
    }

    /// Masking noise: each element is zeroed with probability `drop_ratio`
    /// and survivors pass through unscaled, so a clean input at eval time
    /// has the same scale as the survivors seen in training.
    pub fn mask_inputs<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        drop_ratio: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<(Var, Vec<f64>)> {
        self.masked(x, drop_ratio, training, rng, false)
    }

    fn masked<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        drop_ratio: f64,
        training: bool,
        rng: &mut R,
        rescale: bool,
    ) -> Result<(Var, Vec<f64>)> {
        if !(0.0..1.0).contains(&drop_ratio) {
            return Err(Error::Config(format!("drop ratio {drop_ratio} outside [0, 1)")));
        }
        let n = self.value(x).len();
        if !training || drop_ratio == 0.0 {
            return Ok((x, vec![1.0; n]));
        }
        let keep = if rescale { 1.0 / (1.0 - drop_ratio) } else { 1.0 };
        let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < drop_ratio { 0.0 } else { keep }).collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(xv.rows(), xv.cols(), data)?;
        Ok((self.push(Op::Mask { x, mask: mask.clone() }, out), mask))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return shape_err(format!("slice {start}+{len} of {} columns", xv.cols()));
        }
        let out = xv.slice_cols(start, len);
        Ok(self.push(Op::SliceCols { x, start }, out))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    /// Mean over all elements of `(a - b)^2`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let v = self.value(a).mse(self.value(b))?;
        Ok(self.push(Op::Mse(a, b), Tensor::scalar(v)))
    }

    /// `KL(N(mu, sigma^2) || N(0, I))` summed over columns, averaged over rows.
    /// Non-positive `sigma` is a domain error; NaN propagates into the result.
    pub fn gaussian_kl(&mut self, mu: Var, sigma: Var) -> Result<Var> {
        self.same_shape(mu, sigma, "gaussian_kl")?;
        let (m, s) = (self.value(mu), self.value(sigma));
        if let Some(bad) = s.data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::Domain(format!("sigma must be positive, got {bad}")));
        }
        let rows = m.rows().max(1) as f64;
        let total: f64 = m.data().iter().zip(s.data()).map(|(&mu, &sd)| mu * mu + sd * sd - 1.0 - (sd * sd).ln()).sum();
        Ok(self.push(Op::GaussianKl { mu, sigma }, Tensor::scalar(0.5 * total / rows)))
    }

    /// `sum_i w_i * s_i` over scalar nodes.
    pub fn lin_comb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return shape_err(format!("lin_comb term {:?} is not scalar", t.shape()));
            }
            total += w * t.item();
        }
        Ok(self.push(Op::LinComb(terms.to_vec()), Tensor::scalar(total)))
    }

    /// Backward from `loss` into every trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let targets: Vec<Var> = (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i].op, Op::Leaf) && self.nodes[i].requires_grad)
            .map(Var)
            .collect();
        self.backward_into(loss, &targets)
    }

    /// Backward from scalar `loss`, propagating only along paths that reach
    /// one of `targets`. Target gradients accumulate into the tape's grad
    /// buffers; targets may be interior nodes.
    pub fn backward_into(&mut self, loss: Var, targets: &[Var]) -> Result<()> {
        let n = self.nodes.len();
        if loss.0 >= n {
            return Err(Error::Structural(format!("loss node {} not on tape", loss.0)));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!("loss must be scalar, got {:?}", self.nodes[loss.0].value.shape())));
        }
        let mut is_target = vec![false; loss.0 + 1];
        for t in targets {
            if t.0 < is_target.len() {
                is_target[t.0] = true;
            }
        }
        let mut needs = is_target.clone();
        for i in 0..=loss.0 {
            for p in self.nodes[i].op.parents() {
                if p.0 >= i {
                    return Err(Error::Structural(format!("node {i} has parent {} not before it", p.0)));
                }
                if needs[p.0] {
                    needs[i] = true;
                }
            }
        }
        if !needs[loss.0] {
            return Ok(());
        }

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if is_target[i] {
                match &mut self.grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g.clone()),
                }
            }
            self.propagate(i, g, &needs, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: Vec<f64>, needs: &[bool], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let want = |v: Var| needs[v.0];
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let out = &node.value;
                let gt = Tensor::new(out.rows(), out.cols(), g).expect("grad shape");
                if want(*x) {
                    accumulate_gemm(adj, *x, val(*x).shape(), (&gt, false), (val(*w), true));
                }
                if want(*w) {
                    accumulate_gemm(adj, *w, val(*w).shape(), (val(*x), true), (&gt, false));
                }
                if want(*b) {
                    let mut db = vec![0.0; out.cols()];
                    for row in gt.data().chunks(out.cols().max(1)) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    accumulate(adj, *b, db);
                }
            }
            Op::Add(a, b) => match (want(*a), want(*b)) {
                (true, true) => {
                    accumulate(adj, *a, g.clone());
                    accumulate(adj, *b, g);
                }
                (true, false) => accumulate(adj, *a, g),
                (false, true) => accumulate(adj, *b, g),
                (false, false) => {}
            },
            Op::Sub(a, b) => {
                if want(*b) {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(adj, *b, neg);
                }
                if want(*a) {
                    accumulate(adj, *a, g);
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    let d: Vec<f64> = g.iter().zip(val(*b).data()).map(|(g, y)| g * y).collect();
                    accumulate(adj, *a, d);
                }
                if want(*b) {
                    let d: Vec<f64> = g.iter().zip(val(*a).data()).map(|(g, x)| g * x).collect();
                    accumulate(adj, *b, d);
                }
            }
            Op::AddScalar(x) => accumulate(adj, *x, g),
            Op::Scale(x, c) => {
                let d: Vec<f64> = g.iter().map(|v| v * c).collect();
                accumulate(adj, *x, d);
            }
            Op::Selu(x) => {
                let d: Vec<f64> = g.iter().zip(node.value.data()).map(|(g, &y)| g * selu_grad_from_output(y)).collect();
                accumulate(adj, *x, d);
            }
            Op::Exp(x) => {
                let d: Vec<f64> = g.iter().zip(node.value.data()).map(|(g, y)| g * y).collect();
                accumulate(adj, *x, d);
            }
            Op::Clamp { x, lo, hi } => {
                let d: Vec<f64> =
                    g.iter().zip(val(*x).data()).map(|(g, v)| if v >= lo && v <= hi { *g } else { 0.0 }).collect();
                accumulate(adj, *x, d);
            }
            Op::Mask { x, mask } => {
                let d: Vec<f64> = g.iter().zip(mask).map(|(g, m)| g * m).collect();
                accumulate(adj, *x, d);
            }
            Op::SliceCols { x, start } => {
                let xv = val(*x);
                let width = node.value.cols();
                let mut d = vec![0.0; xv.len()];
                for r in 0..xv.rows() {
                    let dst = r * xv.cols() + start;
                    d[dst..dst + width].copy_from_slice(&g[r * width..(r + 1) * width]);
                }
                accumulate(adj, *x, d);
            }
            Op::Sum(x) => {
                let d = vec![g[0]; val(*x).len()];
                accumulate(adj, *x, d);
            }
            Op::Mse(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                let k = 2.0 * g[0] / av.len().max(1) as f64;
                let d: Vec<f64> = av.iter().zip(bv).map(|(x, y)| k * (x - y)).collect();
                if want(*b) {
                    let neg: Vec<f64> = d.iter().map(|v| -v).collect();
                    accumulate(adj, *b, neg);
                }
                if want(*a) {
                    accumulate(adj, *a, d);
                }
            }
            Op::GaussianKl { mu, sigma } => {
                let rows = val(*mu).rows().max(1) as f64;
                let k = g[0] / rows;
                if want(*mu) {
                    let d: Vec<f64> = val(*mu).data().iter().map(|m| k * m).collect();
                    accumulate(adj, *mu, d);
                }
                if want(*sigma) {
                    let d: Vec<f64> = val(*sigma).data().iter().map(|s| k * (s - 1.0 / s)).collect();
                    accumulate(adj, *sigma, d);
                }
            }
            Op::LinComb(terms) => {
                for &(v, w) in terms {
                    if want(v) {
                        accumulate(adj, v, vec![w * g[0]]);
                    }
                }
            }
        }
    }
}

/// `adj[v] += op(a) * op(b)`, writing straight into the existing buffer.
fn accumulate_gemm(
    adj: &mut [Option<Vec<f64>>],
    v: Var,
    [rows, cols]: [usize; 2],
    (a, ta): (&Tensor, bool),
    (b, tb): (&Tensor, bool),
) {
    let (buf, beta) = match adj[v.0].take() {
        Some(buf) => (buf, 1.0),
        None => (vec![0.0; rows * cols], 0.0),
    };
    let mut out = Tensor::new(rows, cols, buf).expect("adjoint shape");
    gemm(a, ta, b, tb, &mut out, beta);
    adj[v.0] = Some(out.into_data());
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, d: Vec<f64>) {
    match &mut adj[v.0] {
        Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a += b),
        slot => *slot = Some(d),
    }
}

#[inline]
pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

/// `selu'(x)` recovered from `y = selu(x)`, avoiding a second `exp`.
#[inline]
fn selu_grad_from_output(y: f64) -> f64 {
    if y > 0.0 {
        SELU_LAMBDA
    } else {
        y + SELU_LAMBDA * SELU_ALPHA
    }
}
