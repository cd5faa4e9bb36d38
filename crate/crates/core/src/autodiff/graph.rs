//! Tape of tensor operations with reverse-mode gradient propagation.
//!
//! Nodes are appended in evaluation order, so the node index is already a
//! topological order and `backward` is a single reverse sweep.

use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-ray sample lists consumed by [`Graph::volume_integrate`].
///
/// Ray `r` owns entries `offsets[r]..offsets[r + 1]`; each entry names a row
/// of the density/color inputs and its interval length.
#[derive(Clone, Debug, Default)]
pub struct RaySegments {
    pub offsets: Vec<usize>,
    pub rows: Vec<usize>,
    pub deltas: Vec<f64>,
    pub background: Vec<[f64; 3]>,
}

impl RaySegments {
    pub fn new() -> Self {
        RaySegments {
            offsets: vec![0],
            ..Default::default()
        }
    }

    pub fn ray_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn push_sample(&mut self, row: usize, delta: f64) {
        self.rows.push(row);
        self.deltas.push(delta);
    }

    pub fn finish_ray(&mut self, background: [f64; 3]) {
        self.offsets.push(self.rows.len());
        self.background.push(background);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulScalarVar(Var, Var),
    DivScalarVar(Var, Var),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Sin(Var),
    Cos(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Square(Var),
    LeakyRelu(Var, f64),
    SoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    BroadcastCols(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Arc<Vec<usize>>),
    ScatterRows {
        src: Var,
        targets: Arc<Vec<usize>>,
        weights: Arc<Vec<f64>>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    Volume {
        sigma: Var,
        rgb: Var,
        segments: Arc<RaySegments>,
    },
    RowField {
        x: Var,
        jac: Arc<Vec<f64>>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation tape. Build values with the op methods, then call
/// [`Graph::backward`] on a scalar node.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that depends on a
/// differentiable leaf.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}

pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], usize, usize),
    b: (&[f64], usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: callers pass slices sized for the given dims and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn conv_out(size: usize, k: usize, spec: ConvSpec) -> usize {
    (size + 2 * spec.pad - k) / spec.stride + 1
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, spec: ConvSpec) -> Vec<f64> {
    let ho = conv_out(h, k, spec);
    let wo = conv_out(w, k, spec);
    let mut cols = vec![0.0; c * k * k * ho * wo];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * spec.stride + ki) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * spec.stride + kj) as isize - spec.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dst[oy * wo + ox] = x[(ci * h + iy as usize) * w + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, spec: ConvSpec) -> Vec<f64> {
    let ho = conv_out(h, k, spec);
    let wo = conv_out(w, k, spec);
    let mut x = vec![0.0; c * h * w];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * spec.stride + ki) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * spec.stride + kj) as isize - spec.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[(ci * h + iy as usize) * w + ix as usize] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
    x
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
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

    /// Differentiable leaf: parameters and inputs whose gradient is wanted.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn same_len(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        if la != lb {
            return Err(Error::shape(format!(
                "{what}: operand lengths {la} and {lb} differ"
            )));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let shape = va.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(shape, data).expect("same shape"), op, rg)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|x| f(*x)).collect();
        let shape = va.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::new(shape, data).expect("same shape"), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "add")?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "sub")?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "mul")?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "div")?;
        Ok(self.zip(a, b, Op::Div(a, b), |x, y| x / y))
    }

    /// `a[n×m] + b[m]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m) = self.value(a).dims2();
        if self.value(b).len() != m {
            return Err(Error::shape(format!(
                "add_row: row vector of {} for {m} columns",
                self.value(b).len()
            )));
        }
        let vb = self.value(b).data();
        let mut data = self.value(a).data().to_vec();
        for r in 0..n {
            for (x, y) in data[r * m..(r + 1) * m].iter_mut().zip(vb) {
                *x += y;
            }
        }
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddRow(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `a * s` where `s` is a one-element node.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("mul_scalar_var: scalar operand required"));
        }
        let sv = self.value(s).item();
        let rg = self.rg(a) || self.rg(s);
        let value = self.value(a).clone();
        let data = value.data().iter().map(|x| x * sv).collect();
        let t = Tensor::new(value.shape().to_vec(), data)?;
        Ok(self.push(t, Op::MulScalarVar(a, s), rg))
    }

    /// `a / s` where `s` is a one-element node.
    pub fn div_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("div_scalar_var: scalar operand required"));
        }
        let sv = self.value(s).item();
        let rg = self.rg(a) || self.rg(s);
        let value = self.value(a);
        let data = value.data().iter().map(|x| x / sv).collect();
        let t = Tensor::new(value.shape().to_vec(), data)?;
        Ok(self.push(t, Op::DivScalarVar(a, s), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        if k != k2 {
            return Err(Error::shape(format!("matmul: [{m}x{k}] by [{k2}x{n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            (self.data(a), k, 1),
            (self.data(b), n, 1),
            &mut out,
            0.0,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2();
        let (n, k2) = self.value(b).dims2();
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul_nt: [{m}x{k}] by [{n}x{k2}]^T"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            (self.data(a), k, 1),
            (self.data(b), 1, k),
            &mut out,
            0.0,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNT(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).dims2();
        let src = self.data(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(a);
        self.push(
            Tensor::new(vec![c, r], out).expect("transpose"),
            Op::Transpose(a),
            rg,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.map(a, Op::Sin(a), f64::sin)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.map(a, Op::Cos(a), f64::cos)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, Op::Log(a), f64::ln)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, Op::Softplus(a), softplus)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(a, Op::LeakyRelu(a, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (n, m) = self.value(a).dims2();
        let mut out = self.data(a).to_vec();
        for row in out.chunks_mut(m.max(1)).take(n) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a);
        self.push(
            Tensor::new(shape, out).expect("softmax"),
            Op::SoftmaxRows(a),
            rg,
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.data(a).iter().sum::<f64>() / n;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// `[n×m] → [n×1]` sum over columns.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let (n, m) = self.value(a).dims2();
        let out = self
            .data(a)
            .chunks(m.max(1))
            .take(n)
            .map(|r| r.iter().sum())
            .collect();
        let rg = self.rg(a);
        self.push(
            Tensor::new(vec![n, 1], out).expect("row_sum"),
            Op::RowSum(a),
            rg,
        )
    }

    /// `[n×1] → [n×m]` by repeating each entry along the row.
    pub fn broadcast_cols(&mut self, a: Var, m: usize) -> Var {
        let out = self
            .data(a)
            .iter()
            .flat_map(|v| std::iter::repeat_n(*v, m))
            .collect::<Vec<_>>();
        let n = self.value(a).len();
        let rg = self.rg(a);
        self.push(
            Tensor::new(vec![n, m], out).expect("broadcast"),
            Op::BroadcastCols(a),
            rg,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).dims2().0;
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).dims2().1).collect();
        if parts.iter().any(|p| self.value(*p).dims2().0 != n) {
            return Err(Error::shape("concat_cols: row counts differ"));
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for (p, w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(*p)[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(
            Tensor::new(vec![n, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.value(parts[0]).dims2().1;
        if parts.iter().any(|p| self.value(*p).dims2().1 != m) {
            return Err(Error::shape("concat_rows: column counts differ"));
        }
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(self.data(*p));
        }
        let n = out.len() / m.max(1);
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(
            Tensor::new(vec![n, m], out)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let (n, m) = self.value(a).dims2();
        if let Some(bad) = idx.iter().find(|i| **i >= n) {
            return Err(Error::shape(format!("gather_rows: row {bad} of {n}")));
        }
        let src = self.data(a);
        let mut out = Vec::with_capacity(idx.len() * m);
        for &i in &idx {
            out.extend_from_slice(&src[i * m..(i + 1) * m]);
        }
        let rg = self.rg(a);
        let rows = idx.len();
        Ok(self.push(
            Tensor::new(vec![rows, m], out)?,
            Op::GatherRows(a, Arc::new(idx)),
            rg,
        ))
    }

    /// `out[targets[i]] += weights[i] * src[i]` into `n_out` rows.
    pub fn scatter_rows(
        &mut self,
        src: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        n_out: usize,
    ) -> Result<Var> {
        let (n, m) = self.value(src).dims2();
        if targets.len() != n || weights.len() != n {
            return Err(Error::shape("scatter_rows: one target and weight per row"));
        }
        if targets.iter().any(|t| *t >= n_out) {
            return Err(Error::shape("scatter_rows: target out of range"));
        }
        let s = self.data(src);
        let mut out = vec![0.0; n_out * m];
        for (i, (&t, &w)) in targets.iter().zip(&weights).enumerate() {
            for j in 0..m {
                out[t * m + j] += w * s[i * m + j];
            }
        }
        let rg = self.rg(src);
        Ok(self.push(
            Tensor::new(vec![n_out, m], out)?,
            Op::ScatterRows {
                src,
                targets: Arc::new(targets),
                weights: Arc::new(weights),
            },
            rg,
        ))
    }

    /// 2-D convolution of `x[C×H×W]` with `w[O×C×k×k]` and optional bias `b[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let (c, h, wd) = match xs.as_slice() {
            [c, h, w] => (*c, *h, *w),
            _ => return Err(Error::shape(format!("conv2d input {xs:?}"))),
        };
        let (o, k) = match ws.as_slice() {
            [o, ci, k, k2] if *ci == c && k == k2 => (*o, *k),
            _ => {
                return Err(Error::shape(format!(
                    "conv2d weight {ws:?} for input {xs:?}"
                )))
            }
        };
        if h + 2 * spec.pad < k || wd + 2 * spec.pad < k {
            return Err(Error::shape("conv2d: kernel larger than padded input"));
        }
        if let Some(b) = b {
            if self.value(b).len() != o {
                return Err(Error::shape("conv2d: bias length"));
            }
        }
        let ho = conv_out(h, k, spec);
        let wo = conv_out(wd, k, spec);
        let cols = im2col(self.data(x), c, h, wd, k, spec);
        let ckk = c * k * k;
        let mut out = vec![0.0; o * ho * wo];
        gemm(
            o,
            ckk,
            ho * wo,
            (self.data(w), ckk, 1),
            (&cols, ho * wo, 1),
            &mut out,
            0.0,
        );
        if let Some(b) = b {
            let bv = self.data(b);
            for (oc, bias) in bv.iter().enumerate() {
                out[oc * ho * wo..(oc + 1) * ho * wo]
                    .iter_mut()
                    .for_each(|v| *v += bias);
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::new(vec![o, ho, wo], out)?,
            Op::Conv2d { x, w, b, spec },
            rg,
        ))
    }

    /// Exponential-opacity quadrature along each ray: `sigma[P×1]`,
    /// `rgb[P×3]` → `[R×3]`.
    pub fn volume_integrate(
        &mut self,
        sigma: Var,
        rgb: Var,
        segments: Arc<RaySegments>,
    ) -> Result<Var> {
        let p = self.value(sigma).len();
        if self.value(rgb).len() != 3 * p {
            return Err(Error::shape("volume_integrate: rgb must be [P x 3]"));
        }
        if segments.rows.iter().any(|r| *r >= p) {
            return Err(Error::shape("volume_integrate: sample row out of range"));
        }
        let s = self.data(sigma);
        let c = self.data(rgb);
        let rays = segments.ray_count();
        let mut out = vec![0.0; rays * 3];
        for r in 0..rays {
            let mut trans = 1.0;
            let mut acc = [0.0; 3];
            for e in segments.offsets[r]..segments.offsets[r + 1] {
                let row = segments.rows[e];
                let keep = (-s[row] * segments.deltas[e]).exp();
                let wgt = trans * (1.0 - keep);
                for ch in 0..3 {
                    acc[ch] += wgt * c[row * 3 + ch];
                }
                trans *= keep;
            }
            for ch in 0..3 {
                out[r * 3 + ch] = acc[ch] + trans * segments.background[r][ch];
            }
        }
        let rg = self.rg(sigma) || self.rg(rgb);
        Ok(self.push(
            Tensor::new(vec![rays, 3], out)?,
            Op::Volume {
                sigma,
                rgb,
                segments,
            },
            rg,
        ))
    }

    /// Scalar field evaluated per row of `x[n×k]` outside the tape: `values[n]`
    /// with row-wise gradients `jac[n×k]` taken at the current `x`.
    pub fn row_field(&mut self, x: Var, values: Vec<f64>, jac: Vec<f64>) -> Result<Var> {
        let (n, k) = self.value(x).dims2();
        if values.len() != n || jac.len() != n * k {
            return Err(Error::shape("row_field: one value and gradient per row"));
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![n, 1], values)?,
            Op::RowField {
                x,
                jac: Arc::new(jac),
            },
            rg,
        ))
    }

    /// Reverse sweep from a one-element root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                self.accumulate(grads, *b, |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                self.accumulate(grads, *b, |s| s.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.data(*a), self.data(*b));
                self.accumulate(grads, *a, |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * vb[j];
                    }
                });
                self.accumulate(grads, *b, |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * va[j];
                    }
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.data(*a), self.data(*b));
                self.accumulate(grads, *a, |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] / vb[j];
                    }
                });
                self.accumulate(grads, *b, |s| {
                    for j in 0..s.len() {
                        s[j] -= g[j] * va[j] / (vb[j] * vb[j]);
                    }
                });
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                let m = self.value(*b).len();
                self.accumulate(grads, *b, |s| {
                    for row in g.chunks(m) {
                        add_into(s, row);
                    }
                });
            }
            Op::Scale(a, k) => {
                self.accumulate(grads, *a, |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += k * y));
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
            }
            Op::MulScalarVar(a, sc) => {
                let k = self.value(*sc).item();
                let va = self.data(*a);
                self.accumulate(grads, *a, |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += k * y));
                self.accumulate(grads, *sc, |s| {
                    s[0] += g.iter().zip(va).map(|(y, x)| y * x).sum::<f64>();
                });
            }
            Op::DivScalarVar(a, sc) => {
                let k = self.value(*sc).item();
                self.accumulate(grads, *a, |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y / k));
                let o = out.data();
                self.accumulate(grads, *sc, |s| {
                    s[0] -= g.iter().zip(o).map(|(y, q)| y * q).sum::<f64>() / k;
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = self.value(*b).dims2().1;
                let (va, vb) = (self.data(*a), self.data(*b));
                // dA = G Bᵀ, dB = Aᵀ G
                self.accumulate(grads, *a, |s| gemm(m, n, k, (g, n, 1), (vb, 1, n), s, 1.0));
                self.accumulate(grads, *b, |s| gemm(k, m, n, (va, 1, k), (g, n, 1), s, 1.0));
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = self.value(*b).dims2().0;
                let (va, vb) = (self.data(*a), self.data(*b));
                // dA = G B, dB = Gᵀ A
                self.accumulate(grads, *a, |s| gemm(m, n, k, (g, n, 1), (vb, k, 1), s, 1.0));
                self.accumulate(grads, *b, |s| gemm(n, m, k, (g, 1, n), (va, k, 1), s, 1.0));
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2();
                self.accumulate(grads, *a, |s| {
                    for ii in 0..r {
                        for jj in 0..c {
                            s[ii * c + jj] += g[jj * r + ii];
                        }
                    }
                });
            }
            Op::Sin(a) => {
                let va = self.data(*a);
                self.accumulate(grads, *a, |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * va[j].cos();
                    }
                });
            }
            Op::Cos(a) => {
                let va = self.data(*a);
                self.accumulate(grads, *a, |s| {
                    for j in 0..s.len() {
                        s[j] -= g[j] * va[j].sin();
                    }
                });
            }
            Op::Sigmoid(a) => {
                let o = out.data();
                self.accumulate(grads, *a, |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * o[j] * (1.0 - o[j]);
                    }
                });
            }
            Op::Exp(a) => {
                let o = out.data();
                self.accumulate(grads, *a, |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * o[j];
                    }
                });
            }
            Op::Log(a) => {
                let va = self.data(*a);
                self.accumulate(grads, *a, |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] / va[j];
                    }
                });
            }
            Op::Softplus(a) => {
                let va = self.data(*a);
                self.accumulate(grads, *a, |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * sigmoid(va[j]);
                    }
                });
            }
            Op::Square(a) => {
                let va = self.data(*a);
                self.accumulate(grads, *a, |s| {
                    for j in 0..s.len() {
                        s[j] += 2.0 * g[j] * va[j];
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let va = self.data(*a);
                self.accumulate(grads, *a, |s| {
                    for j in 0..s.len() {
                        s[j] += if va[j] > 0.0 { g[j] } else { slope * g[j] };
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let (_, m) = out.dims2();
                let o = out.data();
                self.accumulate(grads, *a, |s| {
                    for ((srow, orow), grow) in
                        s.chunks_mut(m).zip(o.chunks(m)).zip(g.chunks(m))
                    {
                        let dot: f64 = orow.iter().zip(grow).map(|(p, q)| p * q).sum();
                        for j in 0..m {
                            srow[j] += orow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, |s| s.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len().max(1) as f64;
                self.accumulate(grads, *a, |s| s.iter_mut().for_each(|x| *x += g[0] / n));
            }
            Op::RowSum(a) => {
                let (_, m) = self.value(*a).dims2();
                self.accumulate(grads, *a, |s| {
                    for (row, gr) in s.chunks_mut(m).zip(g) {
                        row.iter_mut().for_each(|x| *x += gr);
                    }
                });
            }
            Op::BroadcastCols(a) => {
                let m = out.dims2().1;
                self.accumulate(grads, *a, |s| {
                    for (x, row) in s.iter_mut().zip(g.chunks(m)) {
                        *x += row.iter().sum::<f64>();
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = out.dims2().1;
                let mut off = 0;
                for p in parts {
                    let (n, w) = self.value(*p).dims2();
                    self.accumulate(grads, *p, |s| {
                        for r in 0..n {
                            add_into(
                                &mut s[r * w..(r + 1) * w],
                                &g[r * total + off..r * total + off + w],
                            );
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    self.accumulate(grads, *p, |s| add_into(s, &g[off..off + len]));
                    off += len;
                }
            }
            Op::GatherRows(a, idx) => {
                let m = out.dims2().1;
                self.accumulate(grads, *a, |s| {
                    for (r, &src) in idx.iter().enumerate() {
                        add_into(&mut s[src * m..(src + 1) * m], &g[r * m..(r + 1) * m]);
                    }
                });
            }
            Op::ScatterRows {
                src,
                targets,
                weights,
            } => {
                let m = out.dims2().1;
                self.accumulate(grads, *src, |s| {
                    for (r, (&t, &w)) in targets.iter().zip(weights.iter()).enumerate() {
                        for j in 0..m {
                            s[r * m + j] += w * g[t * m + j];
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b, spec } => {
                let (c, h, wd) = {
                    let s = self.value(*x).shape();
                    (s[0], s[1], s[2])
                };
                let (o, k) = {
                    let s = self.value(*w).shape();
                    (s[0], s[2])
                };
                let hw = out.shape()[1] * out.shape()[2];
                let ckk = c * k * k;
                if let Some(b) = b {
                    self.accumulate(grads, *b, |s| {
                        for (oc, v) in s.iter_mut().enumerate() {
                            *v += g[oc * hw..(oc + 1) * hw].iter().sum::<f64>();
                        }
                    });
                }
                if self.rg(*w) {
                    let cols = im2col(self.data(*x), c, h, wd, k, *spec);
                    // dW = G colsᵀ
                    self.accumulate(grads, *w, |s| {
                        gemm(o, hw, ckk, (g, hw, 1), (&cols, 1, hw), s, 1.0)
                    });
                }
                if self.rg(*x) {
                    let mut dcols = vec![0.0; ckk * hw];
                    gemm(
                        ckk,
                        o,
                        hw,
                        (self.data(*w), 1, ckk),
                        (g, hw, 1),
                        &mut dcols,
                        0.0,
                    );
                    let dx = col2im(&dcols, c, h, wd, k, *spec);
                    self.accumulate(grads, *x, |s| add_into(s, &dx));
                }
            }
            Op::Volume {
                sigma,
                rgb,
                segments,
            } => {
                let sv = self.data(*sigma);
                let cv = self.data(*rgb);
                let mut dsig = vec![0.0; sv.len()];
                let mut dcol = vec![0.0; cv.len()];
                let mut trans_before = Vec::new();
                for r in 0..segments.ray_count() {
                    let span = segments.offsets[r]..segments.offsets[r + 1];
                    let gr = &g[r * 3..r * 3 + 3];
                    trans_before.clear();
                    let mut trans = 1.0;
                    for e in span.clone() {
                        trans_before.push(trans);
                        trans *= (-sv[segments.rows[e]] * segments.deltas[e]).exp();
                    }
                    let bg = segments.background[r];
                    let mut suffix = trans * (bg[0] * gr[0] + bg[1] * gr[1] + bg[2] * gr[2]);
                    for (local, e) in span.enumerate().rev() {
                        let row = segments.rows[e];
                        let delta = segments.deltas[e];
                        let keep = (-sv[row] * delta).exp();
                        let t_in = trans_before[local];
                        let wgt = t_in * (1.0 - keep);
                        let cg = cv[row * 3] * gr[0] + cv[row * 3 + 1] * gr[1] + cv[row * 3 + 2] * gr[2];
                        dsig[row] += delta * (t_in * keep * cg - suffix);
                        for ch in 0..3 {
                            dcol[row * 3 + ch] += wgt * gr[ch];
                        }
                        suffix += wgt * cg;
                    }
                }
                self.accumulate(grads, *sigma, |s| add_into(s, &dsig));
                self.accumulate(grads, *rgb, |s| add_into(s, &dcol));
            }
            Op::RowField { x, jac } => {
                let k = jac.len() / g.len().max(1);
                self.accumulate(grads, *x, |s| {
                    for (r, gr) in g.iter().enumerate() {
                        for j in 0..k {
                            s[r * k + j] += gr * jac[r * k + j];
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(x, y)| *x += y);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let sq = g.square(x);
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn product_plus_operand() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.leaf(Tensor::scalar(-2.0));
        let xy = g.mul(x, y).unwrap();
        let loss = g.add(xy, x).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[-1.0]);
        assert_eq!(grads.get(y).unwrap(), &[3.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = g.sin(x);
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let a = g.scale(x, 3.0);
        let b = g.square(x);
        let loss = g.add(a, b).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[7.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        let x = g.leaf(Tensor::scalar(5.0));
        let p = g.mul(c, x).unwrap();
        let grads = g.backward(p).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap(), &[2.0]);
    }

    #[test]
    fn matmul_shapes_checked() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(g.matmul(a, b).is_err());
        assert!(g.matmul_nt(a, b).is_ok());
    }

    #[test]
    fn conv_output_size() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3, 32, 16]));
        let w = g.constant(Tensor::zeros(&[8, 3, 3, 3]));
        let y = g
            .conv2d(x, w, None, ConvSpec { stride: 2, pad: 1 })
            .unwrap();
        assert_eq!(g.value(y).shape(), &[8, 16, 8]);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut g = Graph::new();
        let xd: Vec<f64> = (0..2 * 5 * 4).map(|i| (i as f64 * 0.37).sin()).collect();
        let wd: Vec<f64> = (0..3 * 2 * 9).map(|i| (i as f64 * 0.11).cos()).collect();
        let bd = vec![0.1, -0.2, 0.3];
        let x = g.constant(Tensor::new(vec![2, 5, 4], xd.clone()).unwrap());
        let w = g.constant(Tensor::new(vec![3, 2, 3, 3], wd.clone()).unwrap());
        let b = g.constant(Tensor::vector(bd.clone()));
        let spec = ConvSpec { stride: 2, pad: 1 };
        let y = g.conv2d(x, w, Some(b), spec).unwrap();
        let out = g.value(y);
        let (ho, wo) = (out.shape()[1], out.shape()[2]);
        for o in 0..3 {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bd[o];
                    for c in 0..2 {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let iy = (oy * 2 + ki) as isize - 1;
                                let ix = (ox * 2 + kj) as isize - 1;
                                if iy < 0 || iy >= 5 || ix < 0 || ix >= 4 {
                                    continue;
                                }
                                acc += wd[((o * 2 + c) * 3 + ki) * 3 + kj]
                                    * xd[(c * 5 + iy as usize) * 4 + ix as usize];
                            }
                        }
                    }
                    let got = out.data()[(o * ho + oy) * wo + ox];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn volume_all_transparent_is_background() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::zeros(&[2, 1]));
        let c = g.constant(Tensor::filled(&[2, 3], 0.3));
        let mut seg = RaySegments::new();
        seg.push_sample(0, 0.5);
        seg.push_sample(1, 0.5);
        seg.finish_ray([0.2, 0.4, 0.6]);
        let out = g.volume_integrate(s, c, Arc::new(seg)).unwrap();
        assert_eq!(g.data(out), &[0.2, 0.4, 0.6]);
    }
}
