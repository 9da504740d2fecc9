//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! The tape is define-by-run: every operation appends a node holding its
//! forward value and the indices of its parents. Because nodes are appended
//! in creation order the tape is already topologically sorted, so the
//! backward pass is a single reverse sweep. A tape is single-threaded and
//! rebuilt per rollout; independent tapes may run concurrently.

use std::cell::RefCell;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_inv_cdf, norm_pdf, SQRT_2PI};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`]. Cheap to copy; only valid for the tape
/// that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    /// Differentiable input (parameter).
    Leaf,
    /// Non-differentiable input.
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    /// Matrix plus broadcast row vector.
    AddRow(usize, usize),
    /// Matrix times broadcast row vector (elementwise per row).
    MulRow(usize, usize),
    /// Matrix plus broadcast column vector.
    AddCol(usize, usize),
    Matmul(usize, usize),
    Transpose(usize),
    Scale(usize, f64),
    AddScalar(usize, f64),
    Relu(usize),
    Tanh(usize),
    Sin(usize),
    Cos(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Clamp(usize, f64, f64),
    NormCdf(usize),
    NormInvCdf(usize),
    Sum(usize),
    Mean(usize),
    ConcatCols(Vec<usize>),
    SliceCols(usize, Range<usize>),
    Reshape(usize),
    /// Lower Cholesky factor; reads only the lower triangle of the input.
    Cholesky(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient w.r.t. a leaf, if it received any adjoint.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.adjoints.get(v.0).and_then(|a| a.as_ref())
    }

    /// Gradient w.r.t. a leaf, zeros when the leaf is unreachable from the root.
    pub fn wrt_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// A recording of tensor operations supporting one or more reverse sweeps.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register a differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Register a non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn constant_scalar(&self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Forward value of a node (cloned).
    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.scalar_value()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn unary(
        &self,
        a: Var,
        f: impl Fn(&Tensor) -> Tensor,
        op: impl Fn(usize) -> Op,
    ) -> Var {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            (f(&nodes[a.0].value), nodes[a.0].requires_grad)
        };
        self.push(value, op(a.0), rg)
    }

    fn binary_same_shape(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            if na.value.shape() != nb.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: name,
                    lhs: na.value.shape().to_vec(),
                    rhs: nb.value.shape().to_vec(),
                });
            }
            (
                na.value.zip(&nb.value, f),
                na.requires_grad || nb.requires_grad,
            )
        };
        Ok(self.push(value, op(a.0, b.0), rg))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("div", a, b, |x, y| x / y, Op::Div)
    }

    fn row_op(
        &self,
        name: &'static str,
        a: Var,
        row: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (na, nr) = (&nodes[a.0], &nodes[row.0]);
            let (m, n) = na.value.dims2()?;
            if nr.value.shape() != [n] {
                return Err(Error::ShapeMismatch {
                    op: name,
                    lhs: na.value.shape().to_vec(),
                    rhs: nr.value.shape().to_vec(),
                });
            }
            let mut data = Vec::with_capacity(m * n);
            let rv = nr.value.data();
            for i in 0..m {
                for j in 0..n {
                    data.push(f(na.value.data()[i * n + j], rv[j]));
                }
            }
            (
                Tensor::new(vec![m, n], data)?,
                na.requires_grad || nr.requires_grad,
            )
        };
        Ok(self.push(value, op(a.0, row.0), rg))
    }

    /// `[m, n] + [n]`, row broadcast over the batch.
    pub fn add_row(&self, a: Var, row: Var) -> Result<Var> {
        self.row_op("add_row", a, row, |x, r| x + r, Op::AddRow)
    }

    /// `[m, n] ⊙ [n]`, row broadcast over the batch.
    pub fn mul_row(&self, a: Var, row: Var) -> Result<Var> {
        self.row_op("mul_row", a, row, |x, r| x * r, Op::MulRow)
    }

    /// `[m, n] + [m]`, column broadcast.
    pub fn add_col(&self, a: Var, col: Var) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (na, nc) = (&nodes[a.0], &nodes[col.0]);
            let (m, n) = na.value.dims2()?;
            if nc.value.shape() != [m] {
                return Err(Error::ShapeMismatch {
                    op: "add_col",
                    lhs: na.value.shape().to_vec(),
                    rhs: nc.value.shape().to_vec(),
                });
            }
            let cv = nc.value.data();
            let mut data = Vec::with_capacity(m * n);
            for i in 0..m {
                for j in 0..n {
                    data.push(na.value.data()[i * n + j] + cv[i]);
                }
            }
            (
                Tensor::new(vec![m, n], data)?,
                na.requires_grad || nc.requires_grad,
            )
        };
        Ok(self.push(value, Op::AddCol(a.0, col.0), rg))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            (
                na.value.matmul(&nb.value)?,
                na.requires_grad || nb.requires_grad,
            )
        };
        Ok(self.push(value, Op::Matmul(a.0, b.0), rg))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            (
                nodes[a.0].value.transpose()?,
                nodes[a.0].requires_grad,
            )
        };
        Ok(self.push(value, Op::Transpose(a.0), rg))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, |t| t.scale(c), |i| Op::Scale(i, c))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        self.unary(a, |t| t.map(|x| x + c), |i| Op::AddScalar(i, c))
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |t| t.map(|x| x.max(0.0)), Op::Relu)
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, |t| t.map(f64::tanh), Op::Tanh)
    }

    pub fn sin(&self, a: Var) -> Var {
        self.unary(a, |t| t.map(f64::sin), Op::Sin)
    }

    pub fn cos(&self, a: Var) -> Var {
        self.unary(a, |t| t.map(f64::cos), Op::Cos)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, |t| t.map(f64::exp), Op::Exp)
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, |t| t.map(f64::ln), Op::Log)
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, |t| t.map(f64::sqrt), Op::Sqrt)
    }

    pub fn square(&self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    /// Clamp to `[lo, hi]`; gradient is zero outside the open interval.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |t| t.map(|x| x.clamp(lo, hi)), |i| Op::Clamp(i, lo, hi))
    }

    /// Standard normal CDF, elementwise.
    pub fn norm_cdf(&self, a: Var) -> Var {
        self.unary(a, |t| t.map(norm_cdf), Op::NormCdf)
    }

    /// Standard normal quantile, elementwise; arguments must lie in (0, 1).
    pub fn norm_inv_cdf(&self, a: Var) -> Var {
        self.unary(a, |t| t.map(norm_inv_cdf), Op::NormInvCdf)
    }

    /// Sum of all elements, scalar result.
    pub fn sum(&self, a: Var) -> Var {
        self.unary(a, |t| Tensor::scalar(t.sum()), Op::Sum)
    }

    /// Mean of all elements, scalar result.
    pub fn mean(&self, a: Var) -> Var {
        self.unary(
            a,
            |t| Tensor::scalar(t.sum() / t.numel() as f64),
            Op::Mean,
        )
    }

    /// Concatenate rank-2 tensors along columns.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let m = nodes[parts[0].0].value.dims2()?.0;
            let mut widths = Vec::with_capacity(parts.len());
            let mut rg = false;
            for p in parts {
                let (pm, pn) = nodes[p.0].value.dims2()?;
                if pm != m {
                    return Err(Error::ShapeMismatch {
                        op: "concat_cols",
                        lhs: nodes[parts[0].0].value.shape().to_vec(),
                        rhs: nodes[p.0].value.shape().to_vec(),
                    });
                }
                widths.push(pn);
                rg |= nodes[p.0].requires_grad;
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(m * total);
            for i in 0..m {
                for (p, w) in parts.iter().zip(&widths) {
                    let src = nodes[p.0].value.data();
                    data.extend_from_slice(&src[i * w..(i + 1) * w]);
                }
            }
            (Tensor::new(vec![m, total], data)?, rg)
        };
        Ok(self.push(
            value,
            Op::ConcatCols(parts.iter().map(|p| p.0).collect()),
            rg,
        ))
    }

    /// Column slice `[m, n] -> [m, range.len()]`.
    pub fn slice_cols(&self, a: Var, range: Range<usize>) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            let (m, n) = na.value.dims2()?;
            if range.end > n || range.start >= range.end {
                return Err(Error::InvalidArg(format!(
                    "slice {range:?} out of bounds for {} columns",
                    n
                )));
            }
            let w = range.len();
            let mut data = Vec::with_capacity(m * w);
            for i in 0..m {
                data.extend_from_slice(&na.value.data()[i * n + range.start..i * n + range.end]);
            }
            (Tensor::new(vec![m, w], data)?, na.requires_grad)
        };
        Ok(self.push(value, Op::SliceCols(a.0, range), rg))
    }

    pub fn reshape(&self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            (
                nodes[a.0].value.reshape(shape)?,
                nodes[a.0].requires_grad,
            )
        };
        Ok(self.push(value, Op::Reshape(a.0), rg))
    }

    /// Lower Cholesky factor of a symmetric positive-definite matrix.
    /// Only the lower triangle of the input is read, so the gradient of a
    /// strictly-lower input entry carries the combined sensitivity of the
    /// symmetric pair.
    pub fn cholesky(&self, a: Var) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            let l = na.value.cholesky().ok_or_else(|| {
                Error::Numerical("cholesky: matrix not positive definite".into())
            })?;
            (l, na.requires_grad)
        };
        Ok(self.push(value, Op::Cholesky(a.0), rg))
    }

    /// Reverse sweep from a scalar-valued root. Every reachable leaf receives
    /// its total adjoint; calling again on the same root recomputes from
    /// scratch (reset-then-accumulate), so repeated calls are idempotent.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if !nodes[root.0].value.is_scalar() {
            return Err(Error::InvalidArg(format!(
                "backward root must be scalar, got shape {:?}",
                nodes[root.0].value.shape()
            )));
        }
        let mut adjoints: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        adjoints[root.0] = Some(Tensor::new(
            nodes[root.0].value.shape().to_vec(),
            vec![1.0],
        )?);

        for i in (0..=root.0).rev() {
            if !nodes[i].requires_grad {
                adjoints[i] = None;
                continue;
            }
            if matches!(nodes[i].op, Op::Leaf) {
                continue; // keep the adjoint for the caller
            }
            let Some(g) = adjoints[i].take() else {
                continue;
            };
            self.propagate(&nodes, &mut adjoints, i, g)?;
        }

        Ok(Gradients { adjoints })
    }

    fn propagate(
        &self,
        nodes: &[Node],
        adjoints: &mut [Option<Tensor>],
        i: usize,
        g: Tensor,
    ) -> Result<()> {
        let acc = |adjoints: &mut [Option<Tensor>], idx: usize, delta: Tensor| {
            if !nodes[idx].requires_grad {
                return;
            }
            match &mut adjoints[idx] {
                Some(t) => t.add_in_place(&delta),
                slot => *slot = Some(delta),
            }
        };
        let val = |idx: usize| &nodes[idx].value;

        match &nodes[i].op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                acc(adjoints, *a, g.clone());
                acc(adjoints, *b, g);
            }
            Op::Sub(a, b) => {
                acc(adjoints, *a, g.clone());
                acc(adjoints, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                acc(adjoints, *a, g.zip(val(*b), |gi, bi| gi * bi));
                acc(adjoints, *b, g.zip(val(*a), |gi, ai| gi * ai));
            }
            Op::Div(a, b) => {
                acc(adjoints, *a, g.zip(val(*b), |gi, bi| gi / bi));
                let bb = val(*b);
                let aa = val(*a);
                let mut d = g.clone();
                for (k, x) in d.data_mut().iter_mut().enumerate() {
                    let b = bb.data()[k];
                    *x = -*x * aa.data()[k] / (b * b);
                }
                acc(adjoints, *b, d);
            }
            Op::AddRow(a, r) => {
                acc(adjoints, *r, g.sum_axis0()?);
                acc(adjoints, *a, g);
            }
            Op::MulRow(a, r) => {
                let (m, n) = g.dims2()?;
                let av = val(*a);
                let rv = val(*r);
                // d/dr: column sums of g ⊙ a
                let mut dr = vec![0.0; n];
                let mut da = Vec::with_capacity(m * n);
                for row in 0..m {
                    for col in 0..n {
                        let gi = g.data()[row * n + col];
                        dr[col] += gi * av.data()[row * n + col];
                        da.push(gi * rv.data()[col]);
                    }
                }
                acc(adjoints, *r, Tensor::new(vec![n], dr)?);
                acc(adjoints, *a, Tensor::new(vec![m, n], da)?);
            }
            Op::AddCol(a, c) => {
                acc(adjoints, *c, g.sum_axis1()?);
                acc(adjoints, *a, g);
            }
            Op::Matmul(a, b) => {
                if nodes[*a].requires_grad {
                    acc(adjoints, *a, g.matmul_nt(val(*b))?);
                }
                if nodes[*b].requires_grad {
                    acc(adjoints, *b, val(*a).matmul_tn(&g)?);
                }
            }
            Op::Transpose(a) => acc(adjoints, *a, g.transpose()?),
            Op::Scale(a, c) => acc(adjoints, *a, g.scale(*c)),
            Op::AddScalar(a, _) => acc(adjoints, *a, g),
            Op::Relu(a) => {
                acc(adjoints, *a, g.zip(val(*a), |gi, x| if x > 0.0 { gi } else { 0.0 }));
            }
            Op::Tanh(a) => {
                acc(adjoints, *a, g.zip(val(i), |gi, y| gi * (1.0 - y * y)));
            }
            Op::Sin(a) => acc(adjoints, *a, g.zip(val(*a), |gi, x| gi * x.cos())),
            Op::Cos(a) => acc(adjoints, *a, g.zip(val(*a), |gi, x| -gi * x.sin())),
            Op::Exp(a) => acc(adjoints, *a, g.zip(val(i), |gi, y| gi * y)),
            Op::Log(a) => acc(adjoints, *a, g.zip(val(*a), |gi, x| gi / x)),
            Op::Sqrt(a) => acc(adjoints, *a, g.zip(val(i), |gi, y| gi * 0.5 / y)),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                acc(
                    adjoints,
                    *a,
                    g.zip(val(*a), |gi, x| if x > lo && x < hi { gi } else { 0.0 }),
                );
            }
            Op::NormCdf(a) => acc(adjoints, *a, g.zip(val(*a), |gi, x| gi * norm_pdf(x))),
            Op::NormInvCdf(a) => {
                // d/dp Φ⁻¹(p) = 1/φ(Φ⁻¹(p)), using the cached output.
                acc(
                    adjoints,
                    *a,
                    g.zip(val(i), |gi, y| gi * SQRT_2PI * (0.5 * y * y).exp()),
                );
            }
            Op::Sum(a) => {
                let s = g.scalar_value();
                acc(adjoints, *a, Tensor::full(val(*a).shape(), s));
            }
            Op::Mean(a) => {
                let n = val(*a).numel() as f64;
                acc(adjoints, *a, Tensor::full(val(*a).shape(), g.scalar_value() / n));
            }
            Op::ConcatCols(parts) => {
                let (m, _) = g.dims2()?;
                let widths: Vec<usize> = parts.iter().map(|p| val(*p).shape()[1]).collect();
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (p, w) in parts.iter().zip(&widths) {
                    if nodes[*p].requires_grad {
                        let mut data = Vec::with_capacity(m * w);
                        for row in 0..m {
                            data.extend_from_slice(
                                &g.data()[row * total + offset..row * total + offset + w],
                            );
                        }
                        acc(adjoints, *p, Tensor::new(vec![m, *w], data)?);
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, range) => {
                let (m, n) = val(*a).dims2()?;
                let w = range.len();
                let mut out = Tensor::zeros(&[m, n]);
                for row in 0..m {
                    for (k, col) in (range.start..range.end).enumerate() {
                        out.data_mut()[row * n + col] = g.data()[row * w + k];
                    }
                }
                acc(adjoints, *a, out);
            }
            Op::Reshape(a) => {
                acc(adjoints, *a, g.reshape(val(*a).shape().to_vec())?);
            }
            Op::Cholesky(a) => {
                acc(adjoints, *a, cholesky_reverse(val(i), &g)?);
            }
        }
        Ok(())
    }
}

/// Reverse-mode rule for the Cholesky factorization.
///
/// Given `L = chol(A)` and the adjoint `L̄`, returns `Ā` placed in the lower
/// triangle (upper entries zero). Because the forward pass reads only the
/// lower triangle, each strictly-lower `Ā_ij` carries the combined
/// sensitivity of the symmetric pair `(A_ij, A_ji)`.
fn cholesky_reverse(l: &Tensor, lbar: &Tensor) -> Result<Tensor> {
    let (n, _) = l.dims2()?;
    // P = Φ(Lᵀ L̄): lower triangle, diagonal halved.
    let mut p = l.matmul_tn(lbar)?;
    for i in 0..n {
        for j in 0..n {
            if j > i {
                p.set2(i, j, 0.0);
            } else if j == i {
                let v = p.get2(i, j);
                p.set2(i, j, 0.5 * v);
            }
        }
    }
    // M = P + Pᵀ
    let pt = p.transpose()?;
    let m = p.zip(&pt, |a, b| a + b);
    // S = 0.5 · L⁻ᵀ M L⁻¹, via two triangular solves.
    let x = solve_lt_transpose(l, &m)?; // solves Lᵀ X = M
    let xt = x.transpose()?;
    let st = solve_lt_transpose(l, &xt)?; // solves Lᵀ Sᵀ = Xᵀ  =>  S = X L⁻¹
    let s = st.transpose()?.scale(0.5);
    // Fold the symmetric sensitivity into the lower triangle.
    let mut abar = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..=i {
            let v = if i == j {
                s.get2(i, i)
            } else {
                s.get2(i, j) + s.get2(j, i)
            };
            abar.set2(i, j, v);
        }
    }
    Ok(abar)
}

/// Solve `Lᵀ X = B` for X, with L lower triangular (back substitution).
fn solve_lt_transpose(l: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, _) = l.dims2()?;
    let (bn, m) = b.dims2()?;
    debug_assert_eq!(n, bn);
    let mut x = b.clone();
    for col in 0..m {
        for i in (0..n).rev() {
            let mut s = x.get2(i, col);
            for k in (i + 1)..n {
                s -= l.get2(k, i) * x.get2(k, col);
            }
            x.set2(i, col, s / l.get2(i, i));
        }
    }
    Ok(x)
}
