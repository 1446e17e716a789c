//! Reverse-mode differentiation over matrix-valued operations.
//!
//! A [`Tape`] records every operation eagerly (values are computed as the
//! graph is built) and [`Tape::backward`] walks the records in reverse,
//! accumulating adjoints. Operations work on whole matrices so that the
//! per-node bookkeeping is negligible next to the matrix products.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::tensor::gemm;
use crate::numerics::{ParamId, ParameterSet, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Pointwise nonlinearity applied by dense layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Linear,
    Tanh,
    /// Exponential linear unit with `alpha = 1`.
    Elu,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Tanh => tanh(x),
            Activation::Elu => {
                let e = exp_nonpositive(x.min(0.0)) - 1.0;
                if x > 0.0 {
                    x
                } else {
                    e
                }
            }
            Activation::Relu => x.max(0.0),
        }
    }

    /// `xs ← act(xs)`, with the dispatch hoisted out of the loop.
    pub fn apply_slice(self, xs: &mut [f64]) {
        wide(|| match self {
            Activation::Linear => {}
            Activation::Tanh => xs.iter_mut().for_each(|v| *v = tanh(*v)),
            Activation::Elu => xs.iter_mut().for_each(|v| *v = Activation::Elu.apply(*v)),
            Activation::Relu => xs.iter_mut().for_each(|v| *v = v.max(0.0)),
        })
    }

    /// `dst ← dst + act(src)`.
    pub fn accumulate_slice(self, src: &[f64], dst: &mut [f64]) {
        wide(|| {
            let pairs = dst.iter_mut().zip(src);
            match self {
                Activation::Linear => pairs.for_each(|(d, s)| *d += s),
                Activation::Tanh => pairs.for_each(|(d, s)| *d += tanh(*s)),
                Activation::Elu => pairs.for_each(|(d, s)| *d += Activation::Elu.apply(*s)),
                Activation::Relu => pairs.for_each(|(d, s)| *d += s.max(0.0)),
            }
        })
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Elu => {
                if y > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// True when the derivative jumps somewhere (finite differences across
    /// the jump are meaningless).
    pub fn has_kink(self) -> bool {
        matches!(self, Activation::Relu)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Tanh => "tanh",
            Activation::Elu => "elu",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" | "identity" => Some(Activation::Linear),
            "tanh" => Some(Activation::Tanh),
            "elu" => Some(Activation::Elu),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// `eʸ` for `y ≤ 0`, branch-free so that loops over it vectorize.
/// Cody–Waite reduction by ln 2 and a degree-12 Taylor polynomial;
/// relative error below 1e-15, arguments under -700 flush to ~0.
#[inline(always)]
pub(crate) fn exp_nonpositive(y: f64) -> f64 {
    const ROUND: f64 = 6755399441055744.0;
    const LN2_HI: f64 = 6.93147180369123816490e-01;
    const LN2_LO: f64 = 1.90821492927058770002e-10;
    const TAYLOR: [f64; 12] = [
        1.0 / 39916800.0,
        1.0 / 3628800.0,
        1.0 / 362880.0,
        1.0 / 40320.0,
        1.0 / 5040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ];
    let y = y.max(-700.0);
    let t = y * std::f64::consts::LOG2_E + ROUND;
    let n = t - ROUND;
    let k = t.to_bits().wrapping_sub(ROUND.to_bits());
    let r = y - n * LN2_HI - n * LN2_LO;
    let mut p = 1.0 / 479001600.0;
    for c in TAYLOR {
        p = p * r + c;
    }
    p * f64::from_bits(k.wrapping_add(1023).wrapping_shl(52))
}

/// Runs `f` compiled with AVX2 when the CPU has it. No FMA is enabled, so
/// results are bit-identical to the baseline path.
#[inline(always)]
fn wide<R>(f: impl FnOnce() -> R) -> R {
    #[cfg(target_arch = "x86_64")]
    {
        #[target_feature(enable = "avx2")]
        unsafe fn avx2<R>(f: impl FnOnce() -> R) -> R {
            f()
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { avx2(f) };
        }
    }
    f()
}

#[inline(always)]
pub(crate) fn tanh(x: f64) -> f64 {
    let e = exp_nonpositive(-2.0 * x.abs());
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// `aᵀ·b`
    MatMulTN(Var, Var),
    /// `a·bᵀ`
    MatMulNT(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Vec<f64>),
    Act(Var, Activation),
    Sum(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(Var, ParamId)>,
}

impl Gradients {
    /// Adjoint of `var`, or `None` if the root does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    /// Adds the parameter adjoints into the accumulators of `params`.
    pub fn accumulate_into(&self, params: &mut ParameterSet) {
        for &(var, id) in &self.params {
            if let Some(g) = &self.grads[var.0] {
                params.get_mut(id).grad.add_assign(g);
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records parameter `id`. Repeated calls return the same node.
    pub fn param(&mut self, params: &ParameterSet, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(params.value(id).clone(), Op::Param(id), true);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims(self.value(a));
        let (k2, n) = dims(self.value(b));
        if k != k2 {
            return Err(Error::Dimension(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            1.0,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (n, 1),
            0.0,
            out.data_mut(),
            n,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `aᵀ·b` for `a: k×m`, `b: k×n`.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        let (k, m) = dims(self.value(a));
        let (k2, n) = dims(self.value(b));
        if k != k2 {
            return Err(Error::Dimension(format!("matmul_tn {k}x{m} by {k2}x{n}")));
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            1.0,
            self.value(a).data(),
            (1, m),
            self.value(b).data(),
            (n, 1),
            0.0,
            out.data_mut(),
            n,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulTN(a, b), rg))
    }

    /// `a·bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims(self.value(a));
        let (n, k2) = dims(self.value(b));
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul_nt {m}x{k} by ({n}x{k2})ᵀ"
            )));
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            1.0,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (1, k),
            0.0,
            out.data_mut(),
            n,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulNT(a, b), rg))
    }

    /// Adds a bias row vector to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = dims(self.value(a));
        if self.value(bias).len() != n {
            return Err(Error::Dimension(format!(
                "bias of length {} for {} columns",
                self.value(bias).len(),
                n
            )));
        }
        let mut out = self.value(a).clone();
        let b = self.value(bias).data();
        for i in 0..m {
            for (o, bj) in out.data_mut()[i * n..(i + 1) * n].iter_mut().zip(b) {
                *o += bj;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(out, Op::AddBias(a, bias), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, factor), rg)
    }

    /// Multiplies row `i` of `a` by `weights[i]`.
    pub fn scale_rows(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        let (m, n) = dims(self.value(a));
        if weights.len() != m {
            return Err(Error::Dimension(format!(
                "{} row weights for {} rows",
                weights.len(),
                m
            )));
        }
        let mut out = self.value(a).clone();
        for (i, w) in weights.iter().enumerate() {
            out.data_mut()[i * n..(i + 1) * n]
                .iter_mut()
                .for_each(|v| *v *= w);
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::ScaleRows(a, weights), rg))
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        if act == Activation::Linear {
            return a;
        }
        let mut out = self.value(a).clone();
        act.apply_slice(out.data_mut());
        let rg = self.rg(a);
        self.push(out, Op::Act(a, act), rg)
    }

    /// Sum of all entries, as a 1-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Sum of squared entries.
    pub fn sum_sq(&mut self, a: Var) -> Result<Var> {
        let sq = self.mul(a, a)?;
        Ok(self.sum(sq))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (_, n) = dims(self.value(a));
        if start + len > n {
            return Err(Error::Dimension(format!(
                "columns {start}..{} of {n}",
                start + len
            )));
        }
        let out = self.value(a).slice_cols(start, len);
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let refs: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_cols(&refs)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Sign pattern of every ReLU input on the tape, used to detect when a
    /// perturbation crosses a kink.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Act(input, act) = node.op {
                if act.has_kink() {
                    out.extend(self.value(input).data().iter().map(|&x| x > 0.0));
                }
            }
        }
        out
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let (m, k) = dims(self.value(*a));
                    let n = self.value(*b).cols();
                    if self.rg(*a) {
                        let ga = acc(&mut grads, *a, self.value(*a).shape());
                        gemm(
                            m,
                            n,
                            k,
                            1.0,
                            g.data(),
                            (n, 1),
                            self.value(*b).data(),
                            (1, n),
                            1.0,
                            ga.data_mut(),
                            k,
                        );
                    }
                    if self.rg(*b) {
                        let gb = acc(&mut grads, *b, self.value(*b).shape());
                        gemm(
                            k,
                            m,
                            n,
                            1.0,
                            self.value(*a).data(),
                            (1, k),
                            g.data(),
                            (n, 1),
                            1.0,
                            gb.data_mut(),
                            n,
                        );
                    }
                }
                Op::MatMulTN(a, b) => {
                    // c = aᵀ b, a: k×m, b: k×n, c: m×n
                    let (k, m) = dims(self.value(*a));
                    let n = self.value(*b).cols();
                    if self.rg(*a) {
                        let ga = acc(&mut grads, *a, self.value(*a).shape());
                        gemm(
                            k,
                            n,
                            m,
                            1.0,
                            self.value(*b).data(),
                            (n, 1),
                            g.data(),
                            (1, n),
                            1.0,
                            ga.data_mut(),
                            m,
                        );
                    }
                    if self.rg(*b) {
                        let gb = acc(&mut grads, *b, self.value(*b).shape());
                        gemm(
                            k,
                            m,
                            n,
                            1.0,
                            self.value(*a).data(),
                            (m, 1),
                            g.data(),
                            (n, 1),
                            1.0,
                            gb.data_mut(),
                            n,
                        );
                    }
                }
                Op::MatMulNT(a, b) => {
                    // c = a bᵀ, a: m×k, b: n×k, c: m×n
                    let (m, k) = dims(self.value(*a));
                    let n = self.value(*b).rows();
                    if self.rg(*a) {
                        let ga = acc(&mut grads, *a, self.value(*a).shape());
                        gemm(
                            m,
                            n,
                            k,
                            1.0,
                            g.data(),
                            (n, 1),
                            self.value(*b).data(),
                            (k, 1),
                            1.0,
                            ga.data_mut(),
                            k,
                        );
                    }
                    if self.rg(*b) {
                        let gb = acc(&mut grads, *b, self.value(*b).shape());
                        gemm(
                            n,
                            m,
                            k,
                            1.0,
                            g.data(),
                            (1, n),
                            self.value(*a).data(),
                            (k, 1),
                            1.0,
                            gb.data_mut(),
                            k,
                        );
                    }
                }
                Op::AddBias(a, bias) => {
                    let (m, n) = dims(&g);
                    if self.rg(*bias) {
                        let gb = acc(&mut grads, *bias, self.value(*bias).shape());
                        let gbd = gb.data_mut();
                        for i in 0..m {
                            for (o, v) in gbd.iter_mut().zip(&g.data()[i * n..(i + 1) * n]) {
                                *o += v;
                            }
                        }
                    }
                    if self.rg(*a) {
                        acc_add(&mut grads, *a, &g, |x| x);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        acc_add(&mut grads, *a, &g, |x| x);
                    }
                    if self.rg(*b) {
                        acc_add(&mut grads, *b, &g, |x| x);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        acc_add(&mut grads, *a, &g, |x| x);
                    }
                    if self.rg(*b) {
                        acc_add(&mut grads, *b, &g, |x| -x);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let vb = self.value(*b).data();
                        let ga = acc(&mut grads, *a, self.value(*a).shape());
                        for ((o, gi), bi) in ga.data_mut().iter_mut().zip(g.data()).zip(vb) {
                            *o += gi * bi;
                        }
                    }
                    if self.rg(*b) {
                        let va = self.value(*a).data();
                        let gb = acc(&mut grads, *b, self.value(*b).shape());
                        for ((o, gi), ai) in gb.data_mut().iter_mut().zip(g.data()).zip(va) {
                            *o += gi * ai;
                        }
                    }
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    acc_add(&mut grads, *a, &g, |x| x * f);
                }
                Op::ScaleRows(a, w) => {
                    let n = g.cols();
                    let ga = acc(&mut grads, *a, self.value(*a).shape());
                    for (i, wi) in w.iter().enumerate() {
                        for (o, gi) in ga.data_mut()[i * n..(i + 1) * n]
                            .iter_mut()
                            .zip(&g.data()[i * n..(i + 1) * n])
                        {
                            *o += gi * wi;
                        }
                    }
                }
                Op::Act(a, act) => {
                    let y = node.value.data();
                    let ga = acc(&mut grads, *a, self.value(*a).shape());
                    for ((o, gi), yi) in ga.data_mut().iter_mut().zip(g.data()).zip(y) {
                        *o += gi * act.derivative_from_output(*yi);
                    }
                }
                Op::Sum(a) => {
                    let s = g.data()[0];
                    let ga = acc(&mut grads, *a, self.value(*a).shape());
                    ga.data_mut().iter_mut().for_each(|o| *o += s);
                }
                Op::SliceCols(a, start) => {
                    let (m, len) = dims(&g);
                    let n = self.value(*a).cols();
                    let ga = acc(&mut grads, *a, self.value(*a).shape());
                    for i in 0..m {
                        for j in 0..len {
                            ga.data_mut()[i * n + start + j] += g.data()[i * len + j];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let (m, total) = dims(&g);
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        if self.rg(*p) {
                            let gp = acc(&mut grads, *p, self.value(*p).shape());
                            for i in 0..m {
                                for j in 0..w {
                                    gp.data_mut()[i * w + j] += g.data()[i * total + offset + j];
                                }
                            }
                        }
                        offset += w;
                    }
                }
            }
            // Parameter adjoints are kept for the caller.
            if matches!(node.op, Op::Param(_)) {
                grads[idx] = Some(g);
            }
        }

        let params = (self.nodes.iter().enumerate())
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((Var(i), id)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}

fn acc<'a>(grads: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn acc_add(grads: &mut [Option<Tensor>], v: Var, g: &Tensor, f: impl Fn(f64) -> f64) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (o, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *o += f(*x);
            }
        }
        slot @ None => *slot = Some(g.map(f)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_kernels_match_libm() {
        for i in 0..200_001 {
            let x = (i as f64 - 100_000.0) * 2e-4;
            assert!((tanh(x) - x.tanh()).abs() <= 1e-15, "tanh {x}");
            assert!(
                (Activation::Elu.apply(x) - if x > 0.0 { x } else { x.exp_m1() }).abs() <= 1e-15,
                "elu {x}"
            );
            let y = -(i as f64) * 3.5e-3;
            assert!(
                (exp_nonpositive(y) - y.exp()).abs() <= 1e-15 * y.exp(),
                "exp {y}"
            );
        }
        assert_eq!(tanh(40.0), 1.0);
        assert_eq!(tanh(-40.0), -1.0);
        assert_eq!(tanh(0.0), 0.0);
        assert!(exp_nonpositive(-1e4) < 1e-300);
    }

    fn fd_check(build: impl Fn(&mut Tape, Var) -> Var, x0: Tensor) {
        let mut tape = Tape::new();
        let mut ps = ParameterSet::new();
        let id = ps.insert("x", x0.clone()).unwrap();
        let x = tape.param(&ps, id);
        let root = build(&mut tape, x);
        tape.backward(root).unwrap().accumulate_into(&mut ps);
        let analytic = ps.grad(id).clone();
        let h = 1e-6;
        for k in 0..x0.len() {
            let eval = |delta: f64| {
                let mut t = Tape::new();
                let mut xp = x0.clone();
                xp.data_mut()[k] += delta;
                let v = t.constant(xp);
                let r = build(&mut t, v);
                t.scalar(r)
            };
            let num = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[k];
            assert!(
                (a - num).abs() <= 1e-6 * (1.0 + num.abs()),
                "entry {k}: {a} vs {num}"
            );
        }
    }

    fn sample(rows: usize, cols: usize, seed: u64) -> Tensor {
        let data = (0..rows * cols)
            .map(|i| (((i as u64 + 1) * 2654435761 + seed * 97) % 1000) as f64 / 1000.0 - 0.5)
            .collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let b = sample(3, 4, 1);
        let c = sample(4, 3, 2);
        let bias = sample(1, 4, 3).reshape(&[4]).unwrap();
        fd_check(
            |t, x| {
                let bv = t.constant(b.clone());
                let cv = t.constant(c.clone());
                let biasv = t.constant(bias.clone());
                let y = t.matmul(x, bv).unwrap();
                let y = t.add_bias(y, biasv).unwrap();
                let y = t.activation(y, Activation::Tanh);
                let z = t.matmul_nt(y, y).unwrap(); // 2x2
                let w = t.matmul_tn(x, y).unwrap(); // 3x4
                let w = t.activation(w, Activation::Elu);
                let e = t.matmul(w, cv).unwrap(); // 3x3
                let e2 = t.mul(e, e).unwrap();
                let e3 = t.scale_rows(e2, vec![0.5, 1.5, 2.0]).unwrap();
                let s1 = t.sum(e3);
                let zz = t.sum_sq(z).unwrap();
                let tot = t.add(s1, zz).unwrap();
                let tot2 = t.sub(tot, s1).unwrap();
                let tot3 = t.scale(tot2, 0.3);
                t.add(tot, tot3).unwrap()
            },
            sample(2, 3, 5),
        );
    }

    #[test]
    fn slice_and_concat_gradients() {
        fd_check(
            |t, x| {
                let a = t.slice_cols(x, 0, 2).unwrap();
                let b = t.slice_cols(x, 2, 1).unwrap();
                let c = t.concat_cols(&[b, a, b]).unwrap();
                let c = t.activation(c, Activation::Tanh);
                t.sum_sq(c).unwrap()
            },
            sample(3, 3, 7),
        );
    }

    #[test]
    fn non_scalar_root_is_a_usage_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn linear_loss_gradient_is_outer_product_structure() {
        // L = sum(x W) => dL/dW[i][j] = sum_rows x[:, i]
        let mut ps = ParameterSet::new();
        let w = ps.insert("w", sample(3, 2, 11)).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let wv = tape.param(&ps, w);
        let y = tape.matmul(xv, wv).unwrap();
        let root = tape.sum(y);
        tape.backward(root).unwrap().accumulate_into(&mut ps);
        assert_eq!(ps.grad(w).data(), &[5.0, 5.0, 7.0, 7.0, 9.0, 9.0]);
    }

    #[test]
    fn zero_scaled_loss_gives_exact_zero_gradients() {
        let mut ps = ParameterSet::new();
        let w = ps.insert("w", sample(3, 3, 4)).unwrap();
        let mut tape = Tape::new();
        let wv = tape.param(&ps, w);
        let y = tape.activation(wv, Activation::Tanh);
        let s = tape.sum_sq(y).unwrap();
        let root = tape.scale(s, 0.0);
        tape.backward(root).unwrap().accumulate_into(&mut ps);
        assert!(ps.grad(w).data().iter().all(|&g| g == 0.0));
    }
}
