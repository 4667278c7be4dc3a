//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every primitive appends one node to the [`Graph`]; construction order is a
//! topological order, and [`Graph::backward`] walks it exactly reversed.
//! Reductions always accumulate left to right over the flattened index, so a
//! given precision produces bit-identical results run to run.
//!
//! ```
//! use htsat_core::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).data(), &[6.0]);
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, mismatch, Error, Result};
use crate::real::Real;
use crate::tensor::{numel, Tensor};

/// Layer-norm variance epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    AddBroadcast(usize, usize),
    Mul(usize, usize),
    Affine(usize, T),
    MatMul(usize, usize),
    Bmm { a: usize, b: usize, trans_b: bool },
    Softmax(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<T>, rstd: Vec<T> },
    Gelu(usize),
    Sigmoid(usize),
    Log(usize),
    Clamp { x: usize, lo: T, hi: T },
    Conv2d { x: usize, w: usize, b: usize, cols: Vec<T>, geom: ConvGeom },
    Reshape(usize),
    Gather { x: usize, indices: Vec<u32> },
    Slice { x: usize, outer: usize, axis_in: usize, axis_out: usize, inner: usize, start: usize },
    Concat { inputs: Vec<usize>, outer: usize, inner: usize, extents: Vec<usize> },
    MeanAxis { x: usize, outer: usize, axis: usize, inner: usize },
    SumAll(usize),
    MeanAll(usize),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A single-owner computation graph.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    macs: u64,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of the loss with respect to each leaf.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Option<Vec<usize>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for a leaf; zeros when the leaf does not reach the loss.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(self.shapes[v.0].as_deref().expect("not a leaf")),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        match self.grads[v.0].take() {
            Some(t) => t,
            None => Tensor::zeros(self.shapes[v.0].as_deref().expect("not a leaf")),
        }
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            macs: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulates executed by matmul, batched matmul and
    /// convolution kernels so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, i: usize) -> &[T] {
        self.nodes[i].value.data()
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch("add", sa, sb));
        }
        let data = self.data(a.0).iter().zip(self.data(b.0)).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(sa, data)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(t, Op::Add(a.0, b.0), rg))
    }

    /// `a + b` where the shape of `b` is a suffix of the shape of `a`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(mismatch("add_broadcast", sa, sb));
        }
        let nb = numel(sb);
        let bd = self.data(b.0);
        let data = self.data(a.0).iter().enumerate().map(|(i, &x)| x + bd[i % nb]).collect();
        let t = Tensor::new(sa, data)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(t, Op::AddBroadcast(a.0, b.0), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch("mul", sa, sb));
        }
        let data = self.data(a.0).iter().zip(self.data(b.0)).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(sa, data)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(t, Op::Mul(a.0, b.0), rg))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let t = self.value(x).map(|v| scale * v + shift);
        let rg = self.rg(x.0);
        self.push(t, Op::Affine(x.0, scale), rg)
    }

    pub fn scale(&mut self, x: Var, scale: T) -> Var {
        self.affine(x, scale, T::ZERO)
    }

    /// `x[..., k] · w[k, n] -> [..., n]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sw.len() != 2 || sx.is_empty() || sx[sx.len() - 1] != sw[0] {
            return Err(mismatch("matmul", sx, sw));
        }
        let (k, n) = (sw[0], sw[1]);
        let rows = numel(sx) / k;
        let mut out_shape = sx.to_vec();
        *out_shape.last_mut().unwrap() = n;
        let (xd, wd) = (self.data(x.0), self.data(w.0));
        let mut out = vec![T::ZERO; rows * n];
        for i in 0..rows {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = xd[i * k + p];
                let wrow = &wd[p * n..(p + 1) * n];
                for (o, &wv) in orow.iter_mut().zip(wrow) {
                    *o += a * wv;
                }
            }
        }
        self.macs += (rows * k * n) as u64;
        let t = Tensor::new(&out_shape, out)?;
        let rg = self.rg(x.0) || self.rg(w.0);
        Ok(self.push(t, Op::MatMul(x.0, w.0), rg))
    }

    /// Batched matmul: `[B, m, k] · [B, k, n]`, or `[B, m, k] · [B, n, k]ᵀ`
    /// when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch("bmm", sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(mismatch("bmm", sa, sb));
        }
        let (ad, bd) = (self.data(a.0), self.data(b.0));
        let mut out = vec![T::ZERO; batch * m * n];
        for bi in 0..batch {
            let am = &ad[bi * m * k..(bi + 1) * m * k];
            let bm = &bd[bi * k * n..(bi + 1) * k * n];
            let om = &mut out[bi * m * n..(bi + 1) * m * n];
            for i in 0..m {
                let arow = &am[i * k..(i + 1) * k];
                let orow = &mut om[i * n..(i + 1) * n];
                if trans_b {
                    for (j, o) in orow.iter_mut().enumerate() {
                        let brow = &bm[j * k..(j + 1) * k];
                        let mut acc = T::ZERO;
                        for (&x, &y) in arow.iter().zip(brow) {
                            acc += x * y;
                        }
                        *o = acc;
                    }
                } else {
                    for (p, &x) in arow.iter().enumerate() {
                        let brow = &bm[p * n..(p + 1) * n];
                        for (o, &y) in orow.iter_mut().zip(brow) {
                            *o += x * y;
                        }
                    }
                }
            }
        }
        self.macs += (batch * m * n * k) as u64;
        let t = Tensor::new(&[batch, m, n], out)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(t, Op::Bmm { a: a.0, b: b.0, trans_b }, rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().unwrap();
        let mut out = self.data(x.0).to_vec();
        for row in out.chunks_mut(c) {
            let mut mx = row[0];
            for &v in row.iter() {
                mx = mx.max(v);
            }
            let mut sum = T::ZERO;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let t = Tensor::new(&shape, out).unwrap();
        let rg = self.rg(x.0);
        self.push(t, Op::Softmax(x.0), rg)
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().unwrap();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(mismatch("layer_norm", &shape, self.shape(gamma)));
        }
        let eps = T::from_f64(LAYER_NORM_EPS);
        let inv_c = T::ONE / T::from_usize(c);
        let xd = self.data(x.0);
        let (gd, bd) = (self.data(gamma.0), self.data(beta.0));
        let rows = xd.len() / c;
        let mut xhat = vec![T::ZERO; xd.len()];
        let mut rstd = vec![T::ZERO; rows];
        let mut out = vec![T::ZERO; xd.len()];
        for r in 0..rows {
            let row = &xd[r * c..(r + 1) * c];
            let mut mean = T::ZERO;
            for &v in row {
                mean += v;
            }
            mean *= inv_c;
            let mut var = T::ZERO;
            for &v in row {
                let d = v - mean;
                var += d * d;
            }
            var *= inv_c;
            let rs = T::ONE / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * gd[j] + bd[j];
            }
        }
        let t = Tensor::new(&shape, out)?;
        let rg = self.rg(x.0) || self.rg(gamma.0) || self.rg(beta.0);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Exact (erf) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let s = T::from_f64(core::f64::consts::FRAC_1_SQRT_2);
        let half = T::from_f64(0.5);
        let t = self.value(x).map(|v| half * v * (T::ONE + (v * s).erf()));
        let rg = self.rg(x.0);
        self.push(t, Op::Gelu(x.0), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        let rg = self.rg(x.0);
        self.push(t, Op::Sigmoid(x.0), rg)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.ln());
        let rg = self.rg(x.0);
        self.push(t, Op::Log(x.0), rg)
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let t = self.value(x).map(|v| v.max(lo).min(hi));
        let rg = self.rg(x.0);
        self.push(t, Op::Clamp { x: x.0, lo, hi }, rg)
    }

    /// Channels-last 2D convolution: `x[H, W, Cin]`, `w[Cout, Cin, kh, kw]`,
    /// `b[Cout]` → `[Ho, Wo, Cout]`, zero padding.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 4 || sx[2] != sw[1] || self.shape(b) != [sw[0]] {
            return Err(mismatch("conv2d", sx, sw));
        }
        let (h, wd_, cin) = (sx[0], sx[1], sx[2]);
        let (cout, kh, kw) = (sw[0], sw[2], sw[3]);
        let (sh, sw_) = stride;
        let (ph, pw) = pad;
        if sh == 0 || sw_ == 0 || h + 2 * ph < kh || wd_ + 2 * pw < kw {
            return Err(mismatch("conv2d", sx, sw));
        }
        let ho = (h + 2 * ph - kh) / sh + 1;
        let wo = (wd_ + 2 * pw - kw) / sw_ + 1;
        let geom = ConvGeom {
            h,
            w: wd_,
            cin,
            cout,
            kh,
            kw,
            sh,
            sw: sw_,
            ph,
            pw,
            ho,
            wo,
        };
        let k = cin * kh * kw;
        let xd = self.data(x.0);
        let mut cols = vec![T::ZERO; ho * wo * k];
        for oi in 0..ho {
            for oj in 0..wo {
                let col = &mut cols[(oi * wo + oj) * k..(oi * wo + oj + 1) * k];
                for ci in 0..cin {
                    for ki in 0..kh {
                        let hi = (oi * sh + ki) as isize - ph as isize;
                        if hi < 0 || hi as usize >= h {
                            continue;
                        }
                        for kj in 0..kw {
                            let wj = (oj * sw_ + kj) as isize - pw as isize;
                            if wj < 0 || wj as usize >= wd_ {
                                continue;
                            }
                            col[(ci * kh + ki) * kw + kj] =
                                xd[(hi as usize * wd_ + wj as usize) * cin + ci];
                        }
                    }
                }
            }
        }
        let (wdat, bdat) = (self.data(w.0), self.data(b.0));
        let mut out = vec![T::ZERO; ho * wo * cout];
        for pos in 0..ho * wo {
            let col = &cols[pos * k..(pos + 1) * k];
            for co in 0..cout {
                let wrow = &wdat[co * k..(co + 1) * k];
                let mut acc = T::ZERO;
                for (&a, &bv) in col.iter().zip(wrow) {
                    acc += a * bv;
                }
                out[pos * cout + co] = acc + bdat[co];
            }
        }
        self.macs += (ho * wo * cout * k) as u64;
        let t = Tensor::new(&[ho, wo, cout], out)?;
        let rg = self.rg(x.0) || self.rg(w.0) || self.rg(b.0);
        Ok(self.push(
            t,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.0,
                cols,
                geom,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x.0);
        Ok(self.push(t, Op::Reshape(x.0), rg))
    }

    /// `out.flat[i] = x.flat[indices[i]]`.
    pub fn gather(&mut self, x: Var, indices: Vec<u32>, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).gather(&indices, shape)?;
        let rg = self.rg(x.0);
        Ok(self.push(t, Op::Gather { x: x.0, indices }, rg))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let idx = crate::tensor::permute_indices(&shape, axes)?;
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        self.gather(x, idx, &out_shape)
    }

    /// Transposes the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(invalid("transpose", "rank must be at least 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 1, r - 2);
        self.permute(x, &axes)
    }

    /// `x[.., start..start+len, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(mismatch("slice", &shape, &[axis, start, len]));
        }
        let (outer, axis_in, inner) = split_axis(&shape, axis);
        let xd = self.data(x.0);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_in + start) * inner;
            out.extend_from_slice(&xd[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let t = Tensor::new(&out_shape, out)?;
        let rg = self.rg(x.0);
        Ok(self.push(
            t,
            Op::Slice {
                x: x.0,
                outer,
                axis_in,
                axis_out: len,
                inner,
                start,
            },
            rg,
        ))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| invalid("concat", "no inputs"))?).to_vec();
        if axis >= first.len() {
            return Err(invalid("concat", "axis out of range"));
        }
        let mut extents = Vec::with_capacity(xs.len());
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(mismatch("concat", &first, s));
            }
            extents.push(s[axis]);
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let total: usize = extents.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &e) in xs.iter().zip(&extents) {
                out.extend_from_slice(&self.data(v.0)[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let t = Tensor::new(&shape, out)?;
        let rg = xs.iter().any(|v| self.rg(v.0));
        Ok(self.push(
            t,
            Op::Concat {
                inputs: xs.iter().map(|v| v.0).collect(),
                outer,
                inner,
                extents,
            },
            rg,
        ))
    }

    /// Mean over one axis; the axis is removed.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(invalid("mean_axis", "axis out of range"));
        }
        let (outer, a, inner) = split_axis(&shape, axis);
        let xd = self.data(x.0);
        let inv = T::ONE / T::from_usize(a);
        let mut out = vec![T::ZERO; outer * inner];
        for o in 0..outer {
            for k in 0..a {
                let src = &xd[(o * a + k) * inner..(o * a + k + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        for v in out.iter_mut() {
            *v *= inv;
        }
        let mut out_shape: Vec<usize> = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let t = Tensor::new(&out_shape, out)?;
        let rg = self.rg(x.0);
        Ok(self.push(
            t,
            Op::MeanAxis {
                x: x.0,
                outer,
                axis: a,
                inner,
            },
            rg,
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x.0);
        self.push(t, Op::SumAll(x.0), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).mean());
        let rg = self.rg(x.0);
        self.push(t, Op::MeanAll(x.0), rg)
    }

    /// Reverse pass from a scalar `loss`. Consumes the graph.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let loss_shape = self.shape(loss);
        if numel(loss_shape) != 1 {
            return Err(Error::NonScalarLoss(loss_shape.to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        let shapes: Vec<Option<Vec<usize>>> = self
            .nodes
            .iter()
            .map(|nd| matches!(nd.op, Op::Leaf).then(|| nd.value.shape().to_vec()))
            .collect();
        grads[loss.0] = Some(vec![T::ONE]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                leaf_grads[i] = Some(Tensor::new(node.value.shape(), g)?);
            }
        }
        Ok(Gradients {
            grads: leaf_grads,
            shapes,
        })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &src in [a, b] {
                    if let Some(d) = self.slot(src, grads) {
                        for (d, &gv) in d.iter_mut().zip(g) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::AddBroadcast(a, b) => {
                if let Some(d) = self.slot(*a, grads) {
                    for (d, &gv) in d.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if let Some(d) = self.slot(*b, grads) {
                    let nb = d.len();
                    for (j, &gv) in g.iter().enumerate() {
                        d[j % nb] += gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                if let Some(d) = self.slot(*a, grads) {
                    for ((d, &gv), &o) in d.iter_mut().zip(g).zip(bd) {
                        *d += gv * o;
                    }
                }
                if let Some(d) = self.slot(*b, grads) {
                    for ((d, &gv), &o) in d.iter_mut().zip(g).zip(ad) {
                        *d += gv * o;
                    }
                }
            }
            Op::Affine(x, s) => {
                if let Some(d) = self.slot(*x, grads) {
                    for (d, &gv) in d.iter_mut().zip(g) {
                        *d += gv * *s;
                    }
                }
            }
            Op::MatMul(x, w) => {
                let sw = self.nodes[*w].value.shape();
                let (k, n) = (sw[0], sw[1]);
                let (xd, wd) = (self.data(*x), self.data(*w));
                let rows = xd.len() / k;
                if let Some(dx) = self.slot(*x, grads) {
                    for r in 0..rows {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let wrow = &wd[p * n..(p + 1) * n];
                            let mut acc = T::ZERO;
                            for (&a, &b) in grow.iter().zip(wrow) {
                                acc += a * b;
                            }
                            dx[r * k + p] += acc;
                        }
                    }
                }
                if let Some(dw) = self.slot(*w, grads) {
                    for r in 0..rows {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let a = xd[r * k + p];
                            let drow = &mut dw[p * n..(p + 1) * n];
                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                *d += a * gv;
                            }
                        }
                    }
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let sa = self.nodes[*a].value.shape();
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = node.value.shape()[2];
                let (ad, bd) = (self.data(*a), self.data(*b));
                if let Some(da) = self.slot(*a, grads) {
                    for bi in 0..batch {
                        let bm = &bd[bi * k * n..(bi + 1) * k * n];
                        for i in 0..m {
                            let grow = &g[(bi * m + i) * n..(bi * m + i + 1) * n];
                            let drow = &mut da[(bi * m + i) * k..(bi * m + i + 1) * k];
                            if *trans_b {
                                // da[i,:] += sum_j g[i,j] * b[j,:]
                                for (j, &gv) in grow.iter().enumerate() {
                                    let brow = &bm[j * k..(j + 1) * k];
                                    for (d, &bv) in drow.iter_mut().zip(brow) {
                                        *d += gv * bv;
                                    }
                                }
                            } else {
                                for (p, d) in drow.iter_mut().enumerate() {
                                    let brow = &bm[p * n..(p + 1) * n];
                                    let mut acc = T::ZERO;
                                    for (&gv, &bv) in grow.iter().zip(brow) {
                                        acc += gv * bv;
                                    }
                                    *d += acc;
                                }
                            }
                        }
                    }
                }
                if let Some(db) = self.slot(*b, grads) {
                    for bi in 0..batch {
                        let am = &ad[bi * m * k..(bi + 1) * m * k];
                        let dm = &mut db[bi * k * n..(bi + 1) * k * n];
                        for i in 0..m {
                            let grow = &g[(bi * m + i) * n..(bi * m + i + 1) * n];
                            let arow = &am[i * k..(i + 1) * k];
                            if *trans_b {
                                // db[j,:] += g[i,j] * a[i,:]
                                for (j, &gv) in grow.iter().enumerate() {
                                    let drow = &mut dm[j * k..(j + 1) * k];
                                    for (d, &av) in drow.iter_mut().zip(arow) {
                                        *d += gv * av;
                                    }
                                }
                            } else {
                                for (p, &av) in arow.iter().enumerate() {
                                    let drow = &mut dm[p * n..(p + 1) * n];
                                    for (d, &gv) in drow.iter_mut().zip(grow) {
                                        *d += av * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                if let Some(dx) = self.slot(*x, grads) {
                    let c = *node.value.shape().last().unwrap();
                    for ((drow, grow), yrow) in dx.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let mut dot = T::ZERO;
                        for (&gv, &yv) in grow.iter().zip(yrow) {
                            dot += gv * yv;
                        }
                        for ((d, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let c = *node.value.shape().last().unwrap();
                let gd = self.data(*gamma);
                if let Some(dg) = self.slot(*gamma, grads) {
                    for (r, grow) in g.chunks(c).enumerate() {
                        for j in 0..c {
                            dg[j] += grow[j] * xhat[r * c + j];
                        }
                    }
                }
                if let Some(db) = self.slot(*beta, grads) {
                    for grow in g.chunks(c) {
                        for (d, &gv) in db.iter_mut().zip(grow) {
                            *d += gv;
                        }
                    }
                }
                if let Some(dx) = self.slot(*x, grads) {
                    let inv_c = T::ONE / T::from_usize(c);
                    for (r, grow) in g.chunks(c).enumerate() {
                        let xh = &xhat[r * c..(r + 1) * c];
                        let mut mean_d = T::ZERO;
                        let mut mean_dx = T::ZERO;
                        for j in 0..c {
                            let dh = grow[j] * gd[j];
                            mean_d += dh;
                            mean_dx += dh * xh[j];
                        }
                        mean_d *= inv_c;
                        mean_dx *= inv_c;
                        let rs = rstd[r];
                        for j in 0..c {
                            let dh = grow[j] * gd[j];
                            dx[r * c + j] += rs * (dh - mean_d - xh[j] * mean_dx);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let xd = self.data(*x);
                if let Some(dx) = self.slot(*x, grads) {
                    let s = T::from_f64(core::f64::consts::FRAC_1_SQRT_2);
                    let inv_sqrt_2pi = T::from_f64(0.398_942_280_401_432_7);
                    let half = T::from_f64(0.5);
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xd) {
                        let cdf = half * (T::ONE + (v * s).erf());
                        let pdf = inv_sqrt_2pi * (-half * v * v).exp();
                        *d += gv * (cdf + v * pdf);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(dx) = self.slot(*x, grads) {
                    for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y) {
                        *d += gv * yv * (T::ONE - yv);
                    }
                }
            }
            Op::Log(x) => {
                let xd = self.data(*x);
                if let Some(dx) = self.slot(*x, grads) {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xd) {
                        *d += gv / v;
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xd = self.data(*x);
                if let Some(dx) = self.slot(*x, grads) {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xd) {
                        if v >= *lo && v <= *hi {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                cols,
                geom,
            } => {
                let c = *geom;
                let k = c.cin * c.kh * c.kw;
                let npos = c.ho * c.wo;
                if let Some(db) = self.slot(*b, grads) {
                    for pos in 0..npos {
                        for co in 0..c.cout {
                            db[co] += g[pos * c.cout + co];
                        }
                    }
                }
                if let Some(dw) = self.slot(*w, grads) {
                    for pos in 0..npos {
                        let col = &cols[pos * k..(pos + 1) * k];
                        for co in 0..c.cout {
                            let gv = g[pos * c.cout + co];
                            let drow = &mut dw[co * k..(co + 1) * k];
                            for (d, &cv) in drow.iter_mut().zip(col) {
                                *d += gv * cv;
                            }
                        }
                    }
                }
                if self.rg(*x) {
                    let wd = self.data(*w);
                    let mut dcol = vec![T::ZERO; k];
                    let dx = self.slot(*x, grads).unwrap();
                    for oi in 0..c.ho {
                        for oj in 0..c.wo {
                            let pos = oi * c.wo + oj;
                            dcol.iter_mut().for_each(|v| *v = T::ZERO);
                            for co in 0..c.cout {
                                let gv = g[pos * c.cout + co];
                                for (d, &wv) in dcol.iter_mut().zip(&wd[co * k..(co + 1) * k]) {
                                    *d += gv * wv;
                                }
                            }
                            for ci in 0..c.cin {
                                for ki in 0..c.kh {
                                    let hi = (oi * c.sh + ki) as isize - c.ph as isize;
                                    if hi < 0 || hi as usize >= c.h {
                                        continue;
                                    }
                                    for kj in 0..c.kw {
                                        let wj = (oj * c.sw + kj) as isize - c.pw as isize;
                                        if wj < 0 || wj as usize >= c.w {
                                            continue;
                                        }
                                        dx[(hi as usize * c.w + wj as usize) * c.cin + ci] +=
                                            dcol[(ci * c.kh + ki) * c.kw + kj];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = self.slot(*x, grads) {
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
            Op::Gather { x, indices } => {
                if let Some(dx) = self.slot(*x, grads) {
                    for (&src, &gv) in indices.iter().zip(g) {
                        dx[src as usize] += gv;
                    }
                }
            }
            Op::Slice {
                x,
                outer,
                axis_in,
                axis_out,
                inner,
                start,
            } => {
                if let Some(dx) = self.slot(*x, grads) {
                    let chunk = axis_out * inner;
                    for o in 0..*outer {
                        let base = (o * axis_in + start) * inner;
                        for (d, &gv) in dx[base..base + chunk].iter_mut().zip(&g[o * chunk..(o + 1) * chunk]) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Concat {
                inputs,
                outer,
                inner,
                extents,
            } => {
                let total: usize = extents.iter().sum();
                let mut offset = 0;
                for (&src, &e) in inputs.iter().zip(extents) {
                    if let Some(dx) = self.slot(src, grads) {
                        for o in 0..*outer {
                            let gbase = (o * total + offset) * inner;
                            for (d, &gv) in dx[o * e * inner..(o + 1) * e * inner]
                                .iter_mut()
                                .zip(&g[gbase..gbase + e * inner])
                            {
                                *d += gv;
                            }
                        }
                    }
                    offset += e;
                }
            }
            Op::MeanAxis {
                x,
                outer,
                axis,
                inner,
            } => {
                if let Some(dx) = self.slot(*x, grads) {
                    let inv = T::ONE / T::from_usize(*axis);
                    for o in 0..*outer {
                        for k in 0..*axis {
                            let dst = &mut dx[(o * axis + k) * inner..(o * axis + k + 1) * inner];
                            for (d, &gv) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                                *d += gv * inv;
                            }
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(dx) = self.slot(*x, grads) {
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::MeanAll(x) => {
                if let Some(dx) = self.slot(*x, grads) {
                    let v = g[0] / T::from_usize(dx.len());
                    for d in dx.iter_mut() {
                        *d += v;
                    }
                }
            }
        }
    }

    /// Gradient accumulator for node `i`, allocated on first use; `None` when
    /// the node does not require a gradient.
    fn slot<'a>(&self, i: usize, grads: &'a mut [Option<Vec<T>>]) -> Option<&'a mut Vec<T>> {
        if !self.nodes[i].requires_grad {
            return None;
        }
        let len = self.nodes[i].value.len();
        Some(grads[i].get_or_insert_with(|| vec![T::ZERO; len]))
    }
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::ZERO {
        T::ONE / (T::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::ONE + e)
    }
}
