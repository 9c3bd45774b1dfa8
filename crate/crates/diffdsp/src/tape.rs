//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Every operation evaluates eagerly when it is recorded, so a [`Tape`] holds
//! both the computation graph and all intermediate values. Nodes only ever
//! reference earlier nodes, which makes a single reverse sweep over the node
//! indices a valid reverse-topological traversal: [`Tape::backward`] seeds the
//! (scalar) root with adjoint 1 and walks the tape backwards, accumulating
//! adjoints additively so fan-out works without any bookkeeping.
//!
//! Besides scalar/vector arithmetic the tape has first-class nodes for the
//! signal-processing kernels in this crate (time-varying FIR and all-pole
//! filters, control-rate upsampling, the branching gain smoother, the
//! frequency-sampling filters, and the multi-resolution spectral loss), each
//! backed by its hand-derived reverse pass.

use crate::allpole::{allpole_backward, allpole_forward};
use crate::compressor::{gain_smoother_backward, gain_smoother_forward, SmootherOutput};
use crate::error::TapeError;
use crate::fs::{
    fs_one_pole, fs_one_pole_backward, fs_tv_filter, fs_tv_filter_backward, FsFilterSpec,
};
use crate::loss::{mss_eval, mss_eval_grad, MssEval, MssTarget, StftSpec};
use crate::signal::CoeffTrajectory;
use crate::sigops::{tv_fir, tv_fir_backward, upsample_linear, upsample_linear_adjoint};
use std::sync::Arc;

/// Handle to a node on a [`Tape`]. Ids are indices into the tape that created
/// them and are meaningless on any other tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    /// Position of the node on its tape.
    pub fn index(self) -> usize {
        self.0
    }
}

/// Shape of a node's value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix { rows: usize, cols: usize },
}

impl Shape {
    /// Number of stored elements.
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix { rows, cols } => rows * cols,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
struct Value {
    shape: Shape,
    data: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Abs(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sqrt(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    ModTwoPi(NodeId),
    PowConst(NodeId, f64),
    Pow { base: NodeId, expo: NodeId },
    MinConst(NodeId, f64),
    MaxConst(NodeId, f64),
    Sum(NodeId),
    Broadcast(NodeId),
    Concat(Vec<NodeId>),
    Dense { weights: NodeId, bias: NodeId, input: NodeId },
    AllPole { x: NodeId, coeffs: Vec<NodeId> },
    TvFir { x: NodeId, taps: Vec<NodeId> },
    Upsample { frames: NodeId, hop: usize },
    GainSmoother { gain: NodeId, attack: NodeId, release: NodeId, mask: Vec<bool> },
    FsOnePole { input: NodeId, alpha: NodeId },
    FsTvFilter { x: NodeId, b: Vec<NodeId>, a: Vec<NodeId>, spec: FsFilterSpec },
    SpectralLoss { y: NodeId, target: Arc<MssTarget>, eval: MssEval },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Value,
}

/// Adjoints produced by [`Tape::backward`], indexed by node id.
#[derive(Debug)]
pub struct Gradients {
    adj: Vec<Vec<f64>>,
}

impl Gradients {
    /// Gradient of the root with respect to the given node, in the node's
    /// storage order.
    pub fn wrt(&self, id: NodeId) -> &[f64] {
        &self.adj[id.0]
    }

    /// Gradient with respect to a scalar node.
    ///
    /// # Panics
    /// Panics if the node does not hold exactly one element.
    pub fn scalar(&self, id: NodeId) -> f64 {
        assert_eq!(self.adj[id.0].len(), 1, "gradient of a non-scalar node read as scalar");
        self.adj[id.0][0]
    }
}

#[inline]
fn elem(data: &[f64], k: usize) -> f64 {
    if data.len() == 1 {
        data[0]
    } else {
        data[k]
    }
}

#[inline]
fn acc(slot: &mut [f64], k: usize, v: f64) {
    if slot.len() == 1 {
        slot[0] += v;
    } else {
        slot[k] += v;
    }
}

fn broadcast_shape(a: Shape, b: Shape) -> Result<Shape, TapeError> {
    if a == b {
        return Ok(a);
    }
    match (a, b) {
        (Shape::Scalar, s) | (s, Shape::Scalar) => Ok(s),
        _ => Err(TapeError::ShapeMismatch(format!(
            "cannot combine values of shapes {a:?} and {b:?}"
        ))),
    }
}

/// Flat autodiff tape; see the module docs.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// The stored value of a node.
    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value.data
    }

    /// The value of a single-element node.
    ///
    /// # Panics
    /// Panics if the node does not hold exactly one element.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        assert_eq!(self.nodes[id.0].value.data.len(), 1, "non-scalar node read as scalar");
        self.nodes[id.0].value.data[0]
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].value.shape
    }

    fn val(&self, id: NodeId) -> Result<&Value, TapeError> {
        self.nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or_else(|| TapeError::BadArgument(format!("unknown node id {}", id.0)))
    }

    fn push(&mut self, shape: Shape, data: Vec<f64>, op: Op) -> NodeId {
        debug_assert_eq!(shape.len(), data.len());
        self.nodes.push(Node { op, value: Value { shape, data } });
        NodeId(self.nodes.len() - 1)
    }

    // ----- leaves -------------------------------------------------------

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.push(Shape::Scalar, vec![v], Op::Leaf)
    }

    pub fn vector(&mut self, v: Vec<f64>) -> NodeId {
        let n = v.len();
        self.push(Shape::Vector(n), v, Op::Leaf)
    }

    pub fn matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<NodeId, TapeError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(TapeError::ShapeMismatch(format!(
                "matrix {rows}x{cols} needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(self.push(Shape::Matrix { rows, cols }, data, Op::Leaf))
    }

    // ----- elementwise arithmetic ---------------------------------------

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        mk: impl FnOnce(NodeId, NodeId) -> Op,
    ) -> Result<NodeId, TapeError> {
        let sa = self.val(a)?.shape;
        let sb = self.val(b)?.shape;
        let shape = broadcast_shape(sa, sb)?;
        let m = shape.len();
        let mut data = Vec::with_capacity(m);
        for k in 0..m {
            let x = elem(&self.nodes[a.0].value.data, k);
            let y = elem(&self.nodes[b.0].value.data, k);
            data.push(f(x, y));
        }
        Ok(self.push(shape, data, mk(a, b)))
    }

    /// Elementwise sum; a scalar operand broadcasts over the other side.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.binary(a, b, |x, y| x + y, Op::Add)
    }

    /// Elementwise difference; a scalar operand broadcasts.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.binary(a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise product; a scalar operand broadcasts.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.binary(a, b, |x, y| x * y, Op::Mul)
    }

    fn unary(
        &mut self,
        a: NodeId,
        f: impl Fn(f64) -> f64,
        mk: impl FnOnce(NodeId) -> Op,
    ) -> Result<NodeId, TapeError> {
        let v = self.val(a)?;
        let shape = v.shape;
        let data = v.data.iter().map(|&x| f(x)).collect();
        Ok(self.push(shape, data, mk(a)))
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(a, f64::abs, Op::Abs)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(a, f64::exp, Op::Exp)
    }

    /// Natural logarithm; every element must be strictly positive.
    pub fn ln(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        if self.val(a)?.data.iter().any(|&x| x <= 0.0) {
            return Err(TapeError::BadArgument("ln needs strictly positive input".into()));
        }
        self.unary(a, f64::ln, Op::Ln)
    }

    /// Square root; every element must be strictly positive (floor the input
    /// first if it can reach zero).
    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        if self.val(a)?.data.iter().any(|&x| x <= 0.0) {
            return Err(TapeError::BadArgument("sqrt needs strictly positive input".into()));
        }
        self.unary(a, f64::sqrt, Op::Sqrt)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(a, f64::tanh, Op::Tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(
            a,
            |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            Op::Sigmoid,
        )
    }

    pub fn sin(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(a, f64::sin, Op::Sin)
    }

    pub fn cos(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(a, f64::cos, Op::Cos)
    }

    /// Reduces each element into `[0, 2*pi)`. The reduction is
    /// piecewise-linear with unit slope, so gradients pass straight through
    /// (the jumps at wrap points are ignored, as in any sawtooth oscillator).
    pub fn mod_two_pi(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(a, |x| x.rem_euclid(2.0 * std::f64::consts::PI), Op::ModTwoPi)
    }

    /// Raises each element to a fixed power. Fractional exponents need
    /// strictly positive input; negative integer exponents need non-zero
    /// input.
    pub fn pow_const(&mut self, a: NodeId, c: f64) -> Result<NodeId, TapeError> {
        let integral = c.fract() == 0.0;
        let v = self.val(a)?;
        if !integral && v.data.iter().any(|&x| x <= 0.0) {
            return Err(TapeError::BadArgument(format!(
                "fractional power {c} needs strictly positive input"
            )));
        }
        if integral && c < 0.0 && v.data.iter().any(|&x| x == 0.0) {
            return Err(TapeError::BadArgument(format!("power {c} of zero element")));
        }
        self.unary(a, |x| x.powf(c), |id| Op::PowConst(id, c))
    }

    /// Elementwise `base^expo` with a scalar node exponent. The base must be
    /// non-negative; zero elements yield value 0 and zero gradients for both
    /// operands (the convention for envelopes that decay exactly to zero),
    /// which requires a positive exponent.
    pub fn pow(&mut self, base: NodeId, expo: NodeId) -> Result<NodeId, TapeError> {
        if self.val(expo)?.shape != Shape::Scalar {
            return Err(TapeError::ShapeMismatch("power exponent must be a scalar node".into()));
        }
        let e = self.nodes[expo.0].value.data[0];
        let v = self.val(base)?;
        if v.data.iter().any(|&x| x < 0.0) {
            return Err(TapeError::BadArgument("power base must be non-negative".into()));
        }
        if e <= 0.0 && v.data.iter().any(|&x| x == 0.0) {
            return Err(TapeError::BadArgument(format!(
                "zero base needs a positive exponent, got {e}"
            )));
        }
        let shape = v.shape;
        let data = v.data.iter().map(|&x| x.powf(e)).collect();
        Ok(self.push(shape, data, Op::Pow { base, expo }))
    }

    /// Elementwise `min(a, c)`; gradients pass only where `a < c`.
    pub fn min_const(&mut self, a: NodeId, c: f64) -> Result<NodeId, TapeError> {
        self.unary(a, |x| x.min(c), |id| Op::MinConst(id, c))
    }

    /// Elementwise `max(a, c)`; gradients pass only where `a > c`.
    pub fn max_const(&mut self, a: NodeId, c: f64) -> Result<NodeId, TapeError> {
        self.unary(a, |x| x.max(c), |id| Op::MaxConst(id, c))
    }

    // ----- structure ----------------------------------------------------

    /// Sums all elements into a scalar.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let total = self.val(a)?.data.iter().sum();
        Ok(self.push(Shape::Scalar, vec![total], Op::Sum(a)))
    }

    /// Repeats a scalar into a length-`n` vector.
    pub fn broadcast(&mut self, a: NodeId, n: usize) -> Result<NodeId, TapeError> {
        if self.val(a)?.shape != Shape::Scalar {
            return Err(TapeError::ShapeMismatch("broadcast input must be a scalar".into()));
        }
        if n == 0 {
            return Err(TapeError::BadArgument("broadcast length must be >= 1".into()));
        }
        let v = self.nodes[a.0].value.data[0];
        Ok(self.push(Shape::Vector(n), vec![v; n], Op::Broadcast(a)))
    }

    /// Concatenates scalar and vector nodes into one vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, TapeError> {
        if parts.is_empty() {
            return Err(TapeError::BadArgument("concat of no nodes".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            let v = self.val(p)?;
            if matches!(v.shape, Shape::Matrix { .. }) {
                return Err(TapeError::ShapeMismatch("cannot concat matrix nodes".into()));
            }
            data.extend_from_slice(&v.data);
        }
        let n = data.len();
        Ok(self.push(Shape::Vector(n), data, Op::Concat(parts.to_vec())))
    }

    /// Affine layer `weights * input + bias` for a `rows x cols` weight
    /// matrix, a length-`rows` bias and a length-`cols` input.
    pub fn dense(
        &mut self,
        weights: NodeId,
        bias: NodeId,
        input: NodeId,
    ) -> Result<NodeId, TapeError> {
        let (rows, cols) = match self.val(weights)?.shape {
            Shape::Matrix { rows, cols } => (rows, cols),
            s => {
                return Err(TapeError::ShapeMismatch(format!(
                    "dense weights must be a matrix, got {s:?}"
                )))
            }
        };
        if self.val(bias)?.shape != Shape::Vector(rows) {
            return Err(TapeError::ShapeMismatch(format!(
                "dense bias must be a length-{rows} vector, got {:?}",
                self.val(bias)?.shape
            )));
        }
        if self.val(input)?.shape != Shape::Vector(cols) {
            return Err(TapeError::ShapeMismatch(format!(
                "dense input must be a length-{cols} vector, got {:?}",
                self.val(input)?.shape
            )));
        }
        let mut data = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut acc = self.nodes[bias.0].value.data[r];
            for c in 0..cols {
                acc += self.nodes[weights.0].value.data[r * cols + c]
                    * self.nodes[input.0].value.data[c];
            }
            data.push(acc);
        }
        Ok(self.push(Shape::Vector(rows), data, Op::Dense { weights, bias, input }))
    }

    // ----- signal-processing kernels -------------------------------------

    fn coeff_columns(&self, ids: &[NodeId], len: usize) -> Result<CoeffTrajectory, TapeError> {
        if ids.is_empty() {
            return Err(TapeError::BadArgument("need at least one coefficient column".into()));
        }
        for &id in ids {
            if self.val(id)?.shape != Shape::Vector(len) {
                return Err(TapeError::ShapeMismatch(format!(
                    "coefficient column must be a length-{len} vector, got {:?}",
                    self.val(id)?.shape
                )));
            }
        }
        let cols: Vec<&[f64]> =
            ids.iter().map(|id| self.nodes[id.0].value.data.as_slice()).collect();
        CoeffTrajectory::from_columns(&cols).map_err(TapeError::Kernel)
    }

    fn vector_len(&self, id: NodeId, what: &str) -> Result<usize, TapeError> {
        match self.val(id)?.shape {
            Shape::Vector(n) => Ok(n),
            s => Err(TapeError::ShapeMismatch(format!("{what} must be a vector, got {s:?}"))),
        }
    }

    fn expect_scalar(&self, id: NodeId, what: &str) -> Result<f64, TapeError> {
        match self.val(id)?.shape {
            Shape::Scalar => Ok(self.nodes[id.0].value.data[0]),
            s => Err(TapeError::ShapeMismatch(format!("{what} must be a scalar, got {s:?}"))),
        }
    }

    /// All-pole recursion `y(n) = x(n) - sum_i a_i(n) y(n - i)` with one
    /// per-sample coefficient column node per lag (lag 1 first).
    pub fn allpole(&mut self, x: NodeId, coeff_cols: &[NodeId]) -> Result<NodeId, TapeError> {
        let n = self.vector_len(x, "all-pole input")?;
        let traj = self.coeff_columns(coeff_cols, n)?;
        let y = allpole_forward(&self.nodes[x.0].value.data, &traj)?;
        Ok(self.push(Shape::Vector(n), y, Op::AllPole { x, coeffs: coeff_cols.to_vec() }))
    }

    /// Time-varying FIR `y(n) = sum_i b_i(n) x(n - i)` with one per-sample tap
    /// column node per lag (lag 0 first).
    pub fn tv_fir(&mut self, x: NodeId, tap_cols: &[NodeId]) -> Result<NodeId, TapeError> {
        let n = self.vector_len(x, "filter input")?;
        let traj = self.coeff_columns(tap_cols, n)?;
        let y = tv_fir(&self.nodes[x.0].value.data, &traj)?;
        Ok(self.push(Shape::Vector(n), y, Op::TvFir { x, taps: tap_cols.to_vec() }))
    }

    /// Linear interpolation of a control-rate vector up to `target_len`
    /// samples with frame `k` at sample `k * hop`.
    pub fn upsample(
        &mut self,
        frames: NodeId,
        target_len: usize,
        hop: usize,
    ) -> Result<NodeId, TapeError> {
        self.vector_len(frames, "control frames")?;
        let out = upsample_linear(&self.nodes[frames.0].value.data, target_len, hop)?;
        Ok(self.push(Shape::Vector(target_len), out, Op::Upsample { frames, hop }))
    }

    /// Branching attack/release one-pole smoother over a gain vector; the
    /// branch decisions recorded on the forward pass drive the reverse pass.
    pub fn gain_smoother(
        &mut self,
        gain: NodeId,
        attack_alpha: NodeId,
        release_alpha: NodeId,
    ) -> Result<NodeId, TapeError> {
        let n = self.vector_len(gain, "smoother input")?;
        let at = self.expect_scalar(attack_alpha, "attack coefficient")?;
        let rt = self.expect_scalar(release_alpha, "release coefficient")?;
        let out = gain_smoother_forward(&self.nodes[gain.0].value.data, at, rt)?;
        Ok(self.push(
            Shape::Vector(n),
            out.smoothed,
            Op::GainSmoother {
                gain,
                attack: attack_alpha,
                release: release_alpha,
                mask: out.attack_mask,
            },
        ))
    }

    /// Frequency-sampling one-pole smoother `alpha / (1 - (1-alpha) z^-1)`
    /// applied to a vector, with a scalar coefficient node in (0, 1).
    pub fn fs_one_pole(&mut self, input: NodeId, alpha: NodeId) -> Result<NodeId, TapeError> {
        let n = self.vector_len(input, "smoother input")?;
        let a = self.expect_scalar(alpha, "smoothing coefficient")?;
        let y = fs_one_pole(&self.nodes[input.0].value.data, a)?;
        Ok(self.push(Shape::Vector(n), y, Op::FsOnePole { input, alpha }))
    }

    /// Frequency-sampling time-varying filter; `b_cols`/`a_cols` are frame-rate
    /// coefficient columns (lag 0 first for `b`, lag 1 first for `a`, unity
    /// feedback lead implied), all sharing one frame count.
    pub fn fs_tv_filter(
        &mut self,
        x: NodeId,
        b_cols: &[NodeId],
        a_cols: &[NodeId],
        spec: FsFilterSpec,
    ) -> Result<NodeId, TapeError> {
        let n = self.vector_len(x, "filter input")?;
        let frames = self.vector_len(
            *b_cols.first().ok_or_else(|| {
                TapeError::BadArgument("need at least one feed-forward column".into())
            })?,
            "coefficient column",
        )?;
        let b = self.coeff_columns(b_cols, frames)?;
        let a = self.coeff_columns(a_cols, frames)?;
        let y = fs_tv_filter(&self.nodes[x.0].value.data, &b, &a, &spec)?;
        Ok(self.push(
            Shape::Vector(n),
            y,
            Op::FsTvFilter { x, b: b_cols.to_vec(), a: a_cols.to_vec(), spec },
        ))
    }

    /// Multi-resolution spectral loss of a vector node against a fixed target.
    pub fn spectral_loss(
        &mut self,
        y: NodeId,
        target: Vec<f64>,
        specs: Vec<StftSpec>,
    ) -> Result<NodeId, TapeError> {
        self.spectral_loss_cached(y, Arc::new(MssTarget::new(&target, &specs)?))
    }

    /// Like [`Tape::spectral_loss`], but against target spectrograms computed
    /// once and shared across tapes. The forward pass also retains the output
    /// spectra so the reverse sweep never recomputes a forward transform.
    pub fn spectral_loss_cached(
        &mut self,
        y: NodeId,
        target: Arc<MssTarget>,
    ) -> Result<NodeId, TapeError> {
        let n = self.vector_len(y, "loss input")?;
        if target.len() != n {
            return Err(TapeError::ShapeMismatch(format!(
                "output has {n} samples but target has {}",
                target.len()
            )));
        }
        let eval = mss_eval(&self.nodes[y.0].value.data, &target)?;
        let loss = eval.loss;
        Ok(self.push(Shape::Scalar, vec![loss], Op::SpectralLoss { y, target, eval }))
    }

    // ----- reverse sweep --------------------------------------------------

    /// Runs the reverse sweep from a scalar root and returns every node's
    /// adjoint.
    pub fn backward(&self, root: NodeId) -> Result<Gradients, TapeError> {
        let rv = self.val(root)?;
        if rv.shape != Shape::Scalar {
            return Err(TapeError::BadArgument(format!(
                "backward root must be a scalar, got {:?}",
                rv.shape
            )));
        }
        let mut adj: Vec<Vec<f64>> =
            self.nodes.iter().map(|n| vec![0.0; n.value.data.len()]).collect();
        adj[root.0][0] = 1.0;
        for i in (0..=root.0).rev() {
            self.backprop_node(i, &mut adj)?;
        }
        Ok(Gradients { adj })
    }

    fn backprop_node(&self, i: usize, adj: &mut [Vec<f64>]) -> Result<(), TapeError> {
        let (lo, hi) = adj.split_at_mut(i);
        let g: &[f64] = &hi[0];
        if g.iter().all(|&v| v == 0.0) {
            return Ok(());
        }
        let node = &self.nodes[i];
        let data = |id: NodeId| -> &[f64] { &self.nodes[id.0].value.data };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (k, &gk) in g.iter().enumerate() {
                    acc(&mut lo[a.0], k, gk);
                    acc(&mut lo[b.0], k, gk);
                }
            }
            Op::Sub(a, b) => {
                for (k, &gk) in g.iter().enumerate() {
                    acc(&mut lo[a.0], k, gk);
                    acc(&mut lo[b.0], k, -gk);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (data(*a), data(*b));
                for (k, &gk) in g.iter().enumerate() {
                    acc(&mut lo[a.0], k, gk * elem(bv, k));
                    acc(&mut lo[b.0], k, gk * elem(av, k));
                }
            }
            Op::Abs(a) => {
                let av = data(*a);
                for (k, &gk) in g.iter().enumerate() {
                    let s = if av[k] > 0.0 {
                        1.0
                    } else if av[k] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    lo[a.0][k] += gk * s;
                }
            }
            Op::Exp(a) => {
                for (k, &gk) in g.iter().enumerate() {
                    lo[a.0][k] += gk * node.value.data[k];
                }
            }
            Op::Ln(a) => {
                let av = data(*a);
                for (k, &gk) in g.iter().enumerate() {
                    lo[a.0][k] += gk / av[k];
                }
            }
            Op::Sqrt(a) => {
                for (k, &gk) in g.iter().enumerate() {
                    lo[a.0][k] += gk * 0.5 / node.value.data[k];
                }
            }
            Op::Tanh(a) => {
                for (k, &gk) in g.iter().enumerate() {
                    let y = node.value.data[k];
                    lo[a.0][k] += gk * (1.0 - y * y);
                }
            }
            Op::Sigmoid(a) => {
                for (k, &gk) in g.iter().enumerate() {
                    let y = node.value.data[k];
                    lo[a.0][k] += gk * y * (1.0 - y);
                }
            }
            Op::Sin(a) => {
                let av = data(*a);
                for (k, &gk) in g.iter().enumerate() {
                    lo[a.0][k] += gk * av[k].cos();
                }
            }
            Op::Cos(a) => {
                let av = data(*a);
                for (k, &gk) in g.iter().enumerate() {
                    lo[a.0][k] -= gk * av[k].sin();
                }
            }
            Op::ModTwoPi(a) => {
                for (k, &gk) in g.iter().enumerate() {
                    lo[a.0][k] += gk;
                }
            }
            Op::PowConst(a, c) => {
                let av = data(*a);
                for (k, &gk) in g.iter().enumerate() {
                    lo[a.0][k] += gk * c * av[k].powf(c - 1.0);
                }
            }
            Op::Pow { base, expo } => {
                let bv = data(*base);
                let e = data(*expo)[0];
                for (k, &gk) in g.iter().enumerate() {
                    let b = bv[k];
                    if b > 0.0 {
                        // b^(e-1) = value / b, reusing the stored forward value.
                        acc(&mut lo[base.0], k, gk * e * node.value.data[k] / b);
                        lo[expo.0][0] += gk * node.value.data[k] * b.ln();
                    }
                }
            }
            Op::MinConst(a, c) => {
                let av = data(*a);
                for (k, &gk) in g.iter().enumerate() {
                    if av[k] < *c {
                        lo[a.0][k] += gk;
                    }
                }
            }
            Op::MaxConst(a, c) => {
                let av = data(*a);
                for (k, &gk) in g.iter().enumerate() {
                    if av[k] > *c {
                        lo[a.0][k] += gk;
                    }
                }
            }
            Op::Sum(a) => {
                let g0 = g[0];
                for v in lo[a.0].iter_mut() {
                    *v += g0;
                }
            }
            Op::Broadcast(a) => {
                lo[a.0][0] += g.iter().sum::<f64>();
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.data.len();
                    for k in 0..len {
                        lo[p.0][k] += g[off + k];
                    }
                    off += len;
                }
            }
            Op::Dense { weights, bias, input } => {
                let (rows, cols) = match self.nodes[weights.0].value.shape {
                    Shape::Matrix { rows, cols } => (rows, cols),
                    _ => unreachable!("dense weights are always a matrix"),
                };
                let wv = data(*weights);
                let xv = data(*input);
                for r in 0..rows {
                    let gr = g[r];
                    lo[bias.0][r] += gr;
                    for c in 0..cols {
                        lo[weights.0][r * cols + c] += gr * xv[c];
                        lo[input.0][c] += gr * wv[r * cols + c];
                    }
                }
            }
            Op::AllPole { x, coeffs } => {
                let cols: Vec<&[f64]> = coeffs.iter().map(|c| data(*c)).collect();
                let traj = CoeffTrajectory::from_columns(&cols)?;
                let grads = allpole_backward(g, &node.value.data, &traj)?;
                for (k, gx) in grads.grad_x.iter().enumerate() {
                    lo[x.0][k] += gx;
                }
                for (ci, cid) in coeffs.iter().enumerate() {
                    for (k, gv) in grads.grad_coeffs.column(ci).iter().enumerate() {
                        lo[cid.0][k] += gv;
                    }
                }
            }
            Op::TvFir { x, taps } => {
                let cols: Vec<&[f64]> = taps.iter().map(|c| data(*c)).collect();
                let traj = CoeffTrajectory::from_columns(&cols)?;
                let grads = tv_fir_backward(g, data(*x), &traj)?;
                for (k, gx) in grads.grad_x.iter().enumerate() {
                    lo[x.0][k] += gx;
                }
                for (ci, cid) in taps.iter().enumerate() {
                    for (k, gv) in grads.grad_coeffs.column(ci).iter().enumerate() {
                        lo[cid.0][k] += gv;
                    }
                }
            }
            Op::Upsample { frames, hop } => {
                let glo = upsample_linear_adjoint(g, self.nodes[frames.0].value.data.len(), *hop)?;
                for (k, gv) in glo.iter().enumerate() {
                    lo[frames.0][k] += gv;
                }
            }
            Op::GainSmoother { gain, attack, release, mask } => {
                let out =
                    SmootherOutput { smoothed: node.value.data.clone(), attack_mask: mask.clone() };
                let grads = gain_smoother_backward(
                    g,
                    &out,
                    data(*gain),
                    data(*attack)[0],
                    data(*release)[0],
                )?;
                for (k, gv) in grads.grad_gain.iter().enumerate() {
                    lo[gain.0][k] += gv;
                }
                lo[attack.0][0] += grads.grad_attack;
                lo[release.0][0] += grads.grad_release;
            }
            Op::FsOnePole { input, alpha } => {
                let grads = fs_one_pole_backward(g, data(*input), data(*alpha)[0])?;
                for (k, gv) in grads.grad_u.iter().enumerate() {
                    lo[input.0][k] += gv;
                }
                lo[alpha.0][0] += grads.grad_alpha;
            }
            Op::FsTvFilter { x, b, a, spec } => {
                let b_cols: Vec<&[f64]> = b.iter().map(|c| data(*c)).collect();
                let a_cols: Vec<&[f64]> = a.iter().map(|c| data(*c)).collect();
                let b_traj = CoeffTrajectory::from_columns(&b_cols)?;
                let a_traj = CoeffTrajectory::from_columns(&a_cols)?;
                let grads = fs_tv_filter_backward(g, data(*x), &b_traj, &a_traj, spec)?;
                for (k, gv) in grads.grad_x.iter().enumerate() {
                    lo[x.0][k] += gv;
                }
                for (ci, cid) in b.iter().enumerate() {
                    for (k, gv) in grads.grad_b.column(ci).iter().enumerate() {
                        lo[cid.0][k] += gv;
                    }
                }
                for (ci, cid) in a.iter().enumerate() {
                    for (k, gv) in grads.grad_a.column(ci).iter().enumerate() {
                        lo[cid.0][k] += gv;
                    }
                }
            }
            Op::SpectralLoss { y, target, eval } => {
                let grad = mss_eval_grad(eval, target);
                let g0 = g[0];
                for (k, gv) in grad.iter().enumerate() {
                    lo[y.0][k] += g0 * gv;
                }
            }
        }
        Ok(())
    }
}
