use std::collections::BTreeMap;

use rayon::prelude::*;

use super::kernels::{self, ConvGeom};
use super::{gemm, ParamId, ParamStore, Parameter, Tensor, LAYER_NORM_EPS};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    /// Constant data; never receives a gradient.
    Input,
    /// Data whose gradient the caller wants back from [`Tape::backward`].
    Watched,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    AddPositional(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    Relu(Var),
    Softmax(Var),
    LnClamped(Var, f64),
    SumLast(Var),
    SumAll(Var),
    ConcatLast(Vec<Var>),
    Conv2d {
        x: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
        c_out: usize,
        cols: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    ToTokens(Var),
    SplitHeads(Var, usize),
    MergeHeads(Var, usize),
    BatchMatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    SelectToken(Var, usize),
    SelectRows(Var, Vec<usize>),
    Reshape(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Input | Op::Watched | Op::Param(_) => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::AddBias(a, b)
            | Op::AddPositional(a, b)
            | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Softmax(a)
            | Op::LnClamped(a, _)
            | Op::SumLast(a)
            | Op::SumAll(a)
            | Op::ToTokens(a)
            | Op::SplitHeads(a, _)
            | Op::MergeHeads(a, _)
            | Op::SelectToken(a, _)
            | Op::SelectRows(a, _)
            | Op::Reshape(a) => vec![*a],
            Op::ConcatLast(vs) => vs.clone(),
            Op::Conv2d {
                x, kernel, bias, ..
            } => vec![*x, *kernel, *bias],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::BatchMatMul { a, b, .. } => vec![*a, *b],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of watched inputs, returned by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Grads {
    watched: BTreeMap<Var, Tensor>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.watched.get(&v)
    }
}

/// Records one forward pass. Every op computes its value eagerly and keeps
/// whatever its backward rule needs.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    spent: bool,
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    /// Like [`Tape::input`], but its gradient is reported back.
    pub fn watch(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Watched)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    /// `a[..., n] x w[n, m] -> [..., m]`.
    pub fn matmul(&mut self, a: Var, w: Var) -> Result<Var> {
        let (sa, sw) = (self.shape(a).to_vec(), self.shape(w).to_vec());
        if sw.len() != 2 || sa.last() != Some(&sw[0]) {
            return shape_err(format!("matmul {sa:?} x {sw:?}"));
        }
        let (n, m) = (sw[0], sw[1]);
        let rows = self.value(a).rows();
        let mut out = vec![0.0; rows * m];
        gemm(
            rows,
            n,
            m,
            self.value(a).data(),
            (n, 1),
            self.value(w).data(),
            (m, 1),
            &mut out,
            false,
        );
        let mut shape = sa;
        *shape.last_mut().unwrap() = m;
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, w)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("add {:?} + {:?}", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    /// Adds `bias[m]` to every row of `x[..., m]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(bias) != [d] {
            return shape_err(format!("bias {:?} for rows of {d}", self.shape(bias)));
        }
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(b).map(|(v, bb)| v + bb))
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(t, Op::AddBias(x, bias)))
    }

    /// `x[B, L, d] + pos[L, d]`, broadcast over the batch.
    pub fn add_positional(&mut self, x: Var, pos: Var) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 3 || self.shape(pos) != &sx[1..] {
            return shape_err(format!("positional {:?} for {sx:?}", self.shape(pos)));
        }
        let p = self.value(pos).data();
        let data = self
            .value(x)
            .data()
            .chunks_exact(p.len())
            .flat_map(|blk| blk.iter().zip(p).map(|(v, pp)| v + pp))
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(t, Op::AddPositional(x, pos)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a);
        let t = Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().map(|x| x * s).collect(),
        };
        self.push(t, Op::Scale(a, s))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("mul {:?} * {:?}", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let t = Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().map(|x| x.max(0.0)).collect(),
        };
        self.push(t, Op::Relu(a))
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let t = Tensor {
            shape: v.shape().to_vec(),
            data: kernels::softmax_rows(v.data(), v.last_dim()),
        };
        self.push(t, Op::Softmax(a))
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn ln_clamped(&mut self, a: Var, floor: f64) -> Var {
        let v = self.value(a);
        let t = Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().map(|x| x.max(floor).ln()).collect(),
        };
        self.push(t, Op::LnClamped(a, floor))
    }

    pub fn sum_last(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let d = v.last_dim();
        let shape = v.shape()[..v.shape().len().saturating_sub(1)].to_vec();
        let data = v.data().chunks_exact(d).map(|r| r.iter().sum()).collect();
        self.push(Tensor { shape, data }, Op::SumLast(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let rows = self.value(first).rows();
        let mut width = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return shape_err(format!("concat {s:?} with leading {lead:?}"));
            }
            width += s[s.len() - 1];
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(width);
        Ok(self.push(Tensor::new(shape, data)?, Op::ConcatLast(parts.to_vec())))
    }

    /// Same-size 2-D cross-correlation (no kernel flip) with reflect padding:
    /// `x[B, C_in, h, w] * kernel[C_out, C_in, k, k] + bias[C_out]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if sx.len() != 4 || sk.len() != 4 || sk[1] != sx[1] || sk[2] != sk[3] || sk[2] % 2 == 0 {
            return shape_err(format!("conv2d input {sx:?} kernel {sk:?}"));
        }
        if self.shape(bias) != [sk[0]] {
            return shape_err(format!("conv2d bias {:?}", self.shape(bias)));
        }
        let geom = ConvGeom {
            batch: sx[0],
            c_in: sx[1],
            h: sx[2],
            w: sx[3],
            k: sk[2],
        };
        let c_out = sk[0];
        let (l, plen) = (geom.pixels(), geom.patch_len());
        let cols = kernels::im2col(self.value(x).data(), geom);
        // tokens[(b, p), co] = cols[(b, p), :] . kernel[co, :]
        let mut tokens = vec![0.0; geom.batch * l * c_out];
        gemm(
            geom.batch * l,
            plen,
            c_out,
            &cols,
            (plen, 1),
            self.value(kernel).data(),
            (1, plen),
            &mut tokens,
            false,
        );
        let b = self.value(bias).data();
        let mut out = vec![0.0; geom.batch * c_out * l];
        out.par_chunks_mut(c_out * l)
            .enumerate()
            .for_each(|(bi, ob)| {
                let tb = &tokens[bi * l * c_out..(bi + 1) * l * c_out];
                for co in 0..c_out {
                    for p in 0..l {
                        ob[co * l + p] = tb[p * c_out + co] + b[co];
                    }
                }
            });
        let t = Tensor::new(vec![geom.batch, c_out, geom.h, geom.w], out)?;
        Ok(self.push(
            t,
            Op::Conv2d {
                x,
                kernel,
                bias,
                geom,
                c_out,
                cols,
            },
        ))
    }

    /// LayerNorm over the last axis with biased variance and
    /// [`LAYER_NORM_EPS`].
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if d == 0 {
            return shape_err("layer_norm over an empty axis".into());
        }
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return shape_err(format!(
                "layer_norm affine {:?}/{:?} for width {d}",
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        let (out, mean, rstd) = kernels::layer_norm_forward(
            self.value(x).data(),
            d,
            self.value(gamma).data(),
            self.value(beta).data(),
            LAYER_NORM_EPS,
        );
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            },
        ))
    }

    /// `[B, C, h, w] -> [B, h * w, C]`: one token per pixel, row-major.
    pub fn to_tokens(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return shape_err(format!("to_tokens on {s:?}"));
        }
        let (b, c, l) = (s[0], s[1], s[2] * s[3]);
        let data = transpose_blocks(self.value(x).data(), c, l);
        Ok(self.push(Tensor::new(vec![b, l, c], data)?, Op::ToTokens(x)))
    }

    /// `[B, L, H * dh] -> [B * H, L, dh]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || heads == 0 || !s[2].is_multiple_of(heads) {
            return shape_err(format!("split {s:?} into {heads} heads"));
        }
        let (b, l, d) = (s[0], s[1], s[2]);
        let dh = d / heads;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for bi in 0..b {
            for h in 0..heads {
                for t in 0..l {
                    let dst = ((bi * heads + h) * l + t) * dh;
                    let from = (bi * l + t) * d + h * dh;
                    out[dst..dst + dh].copy_from_slice(&src[from..from + dh]);
                }
            }
        }
        Ok(self.push(
            Tensor::new(vec![b * heads, l, dh], out)?,
            Op::SplitHeads(x, heads),
        ))
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || heads == 0 || !s[0].is_multiple_of(heads) {
            return shape_err(format!("merge {s:?} from {heads} heads"));
        }
        let (b, l, dh) = (s[0] / heads, s[1], s[2]);
        let d = dh * heads;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for bi in 0..b {
            for h in 0..heads {
                for t in 0..l {
                    let from = ((bi * heads + h) * l + t) * dh;
                    let dst = (bi * l + t) * d + h * dh;
                    out[dst..dst + dh].copy_from_slice(&src[from..from + dh]);
                }
            }
        }
        Ok(self.push(Tensor::new(vec![b, l, d], out)?, Op::MergeHeads(x, heads)))
    }

    /// Per-slice products: `a[N, M, K] x b[N, K, P]`, or `a x b^T` with
    /// `b[N, P, K]` when `transpose_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if transpose_b {
                sb[2] == sa[2]
            } else {
                sb[1] == sa[2]
            };
        if !ok {
            return shape_err(format!("batch_matmul {sa:?} x {sb:?} (t={transpose_b})"));
        }
        let (n, m, k) = (sa[0], sa[1], sa[2]);
        let p = if transpose_b { sb[1] } else { sb[2] };
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n * m * p];
        out.par_chunks_mut(m * p).enumerate().for_each(|(i, o)| {
            let ai = &av[i * m * k..(i + 1) * m * k];
            let bi = &bv[i * k * p..(i + 1) * k * p];
            let bs = if transpose_b { (1, k) } else { (p, 1) };
            gemm(m, k, p, ai, (k, 1), bi, bs, o, false);
        });
        Ok(self.push(
            Tensor::new(vec![n, m, p], out)?,
            Op::BatchMatMul { a, b, transpose_b },
        ))
    }

    /// `[B, L, d] -> [B, d]`, keeping token `index` of every sample.
    pub fn select_token(&mut self, x: Var, index: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || index >= s[1] {
            return shape_err(format!("token {index} of {s:?}"));
        }
        let (b, l, d) = (s[0], s[1], s[2]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * d);
        for bi in 0..b {
            let from = (bi * l + index) * d;
            out.extend_from_slice(&src[from..from + d]);
        }
        Ok(self.push(Tensor::new(vec![b, d], out)?, Op::SelectToken(x, index)))
    }

    /// Gathers rows of a `[B, K]` tensor.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || rows.iter().any(|&r| r >= s[0]) {
            return shape_err(format!("rows {rows:?} of {s:?}"));
        }
        let v = self.value(x);
        let out: Vec<f64> = rows.iter().flat_map(|&r| v.row(r).to_vec()).collect();
        Ok(self.push(
            Tensor::new(vec![rows.len(), s[1]], out)?,
            Op::SelectRows(x, rows.to_vec()),
        ))
    }

    /// Same data under a new shape of equal element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Gradients are added into `grad` of every parameter accepted by
    /// `filter`; other parameters are not touched and nothing that only feeds
    /// them is differentiated. Watched inputs get their gradient in the
    /// returned [`Grads`]. A tape can be differentiated once.
    pub fn backward(
        &mut self,
        loss: Var,
        store: &mut ParamStore,
        filter: impl Fn(&Parameter) -> bool,
    ) -> Result<Grads> {
        if self.spent {
            return Err(Error::StaleTape);
        }
        if self.nodes.is_empty() {
            return Err(Error::Argument("backward on an empty tape".into()));
        }
        if self.value(loss).len() != 1 {
            return shape_err(format!("loss must be scalar, got {:?}", self.shape(loss)));
        }
        self.spent = true;

        let n = loss.0 + 1;
        let mut needs = vec![false; n];
        for i in 0..n {
            needs[i] = match &self.nodes[i].op {
                Op::Input => false,
                Op::Watched => true,
                Op::Param(id) => filter(store.get(*id)),
                op => op.inputs().iter().any(|v| needs[v.0]),
            };
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if needs[loss.0] {
            grads[loss.0] = Some(vec![1.0]);
        }
        let mut watched = BTreeMap::new();
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Watched => {
                    watched.insert(Var(i), Tensor::new(node.value.shape().to_vec(), g)?);
                }
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    for (dst, v) in p.grad.data_mut().iter_mut().zip(&g) {
                        *dst += v;
                    }
                }
                op => self.backward_op(op, &node.value, &g, &needs, &mut grads),
            }
        }
        Ok(Grads { watched })
    }

    fn backward_op(
        &self,
        op: &Op,
        out: &Tensor,
        g: &[f64],
        needs: &[bool],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let nodes = &self.nodes;
        let val = |v: &Var| &nodes[v.0].value;
        // Accumulator for an input's gradient, created on first use.
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                let len = nodes[v.0].value.len();
                grads[v.0].get_or_insert_with(|| vec![0.0; len])
            }};
        }
        match op {
            Op::Input | Op::Watched | Op::Param(_) => unreachable!(),
            Op::MatMul(a, w) => {
                let (n, m) = (val(w).shape()[0], val(w).shape()[1]);
                let rows = val(a).rows();
                if needs[a.0] {
                    gemm(rows, m, n, g, (m, 1), val(w).data(), (1, m), acc!(*a), true);
                }
                if needs[w.0] {
                    let av = val(a).data();
                    gemm(n, rows, m, av, (1, n), g, (m, 1), acc!(*w), true);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if needs[v.0] {
                        add_into(acc!(*v), g);
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if needs[x.0] {
                    add_into(acc!(*x), g);
                }
                if needs[bias.0] {
                    let d = val(bias).len();
                    let db = acc!(*bias);
                    for row in g.chunks_exact(d) {
                        add_into(db, row);
                    }
                }
            }
            Op::AddPositional(x, pos) => {
                if needs[x.0] {
                    add_into(acc!(*x), g);
                }
                if needs[pos.0] {
                    let d = val(pos).len();
                    let dp = acc!(*pos);
                    for blk in g.chunks_exact(d) {
                        add_into(dp, blk);
                    }
                }
            }
            Op::Scale(a, s) => {
                if needs[a.0] {
                    for (dst, v) in acc!(*a).iter_mut().zip(g) {
                        *dst += v * s;
                    }
                }
            }
            Op::Mul(a, b) => {
                if needs[a.0] {
                    let bv = val(b).data();
                    for ((dst, v), y) in acc!(*a).iter_mut().zip(g).zip(bv) {
                        *dst += v * y;
                    }
                }
                if needs[b.0] {
                    let av = val(a).data();
                    for ((dst, v), x) in acc!(*b).iter_mut().zip(g).zip(av) {
                        *dst += v * x;
                    }
                }
            }
            Op::Relu(a) => {
                if needs[a.0] {
                    let xv = val(a).data();
                    for ((dst, v), x) in acc!(*a).iter_mut().zip(g).zip(xv) {
                        if *x > 0.0 {
                            *dst += v;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if needs[a.0] {
                    kernels::softmax_rows_backward(out.data(), g, out.last_dim(), acc!(*a));
                }
            }
            Op::LnClamped(a, floor) => {
                if needs[a.0] {
                    let xv = val(a).data();
                    for ((dst, v), x) in acc!(*a).iter_mut().zip(g).zip(xv) {
                        if *x > *floor {
                            *dst += v / x;
                        }
                    }
                }
            }
            Op::SumLast(a) => {
                if needs[a.0] {
                    let d = val(a).last_dim();
                    for (row, v) in acc!(*a).chunks_exact_mut(d).zip(g) {
                        row.iter_mut().for_each(|x| *x += v);
                    }
                }
            }
            Op::SumAll(a) => {
                if needs[a.0] {
                    acc!(*a).iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::ConcatLast(parts) => {
                let width = out.last_dim();
                let mut offset = 0;
                for p in parts {
                    let d = val(p).last_dim();
                    if needs[p.0] {
                        let dst = acc!(*p);
                        for (r, row) in dst.chunks_exact_mut(d).enumerate() {
                            add_into(row, &g[r * width + offset..r * width + offset + d]);
                        }
                    }
                    offset += d;
                }
            }
            Op::Conv2d {
                x,
                kernel,
                bias,
                geom,
                c_out,
                cols,
            } => {
                let (l, plen, c_out) = (geom.pixels(), geom.patch_len(), *c_out);
                let bl = geom.batch * l;
                // g is [B, C_out, L]; the token layout [B * L, C_out] is what
                // the column products want.
                let g_tok = transpose_blocks(g, c_out, l);
                if needs[bias.0] {
                    let db = acc!(*bias);
                    for row in g_tok.chunks_exact(c_out) {
                        add_into(db, row);
                    }
                }
                if needs[kernel.0] {
                    gemm(
                        c_out,
                        bl,
                        plen,
                        &g_tok,
                        (1, c_out),
                        cols,
                        (plen, 1),
                        acc!(*kernel),
                        true,
                    );
                }
                if needs[x.0] {
                    let mut dcols = vec![0.0; bl * plen];
                    let kv = val(kernel).data();
                    gemm(
                        bl,
                        c_out,
                        plen,
                        &g_tok,
                        (c_out, 1),
                        kv,
                        (plen, 1),
                        &mut dcols,
                        false,
                    );
                    kernels::col2im_add(&dcols, *geom, acc!(*x));
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let d = out.last_dim();
                let xv = val(x).data();
                let gv = val(gamma).data();
                // Pull each accumulator out so three can be borrowed at once.
                let mut dx = needs[x.0].then(|| acc!(*x).clone());
                let mut dg = needs[gamma.0].then(|| acc!(*gamma).clone());
                let mut dbt = needs[beta.0].then(|| acc!(*beta).clone());
                kernels::layer_norm_backward(
                    g,
                    xv,
                    d,
                    gv,
                    mean,
                    rstd,
                    dx.as_deref_mut(),
                    dg.as_deref_mut(),
                    dbt.as_deref_mut(),
                );
                for (v, buf) in [(x, dx), (gamma, dg), (beta, dbt)] {
                    if let Some(buf) = buf {
                        grads[v.0] = Some(buf);
                    }
                }
            }
            Op::ToTokens(x) => {
                if needs[x.0] {
                    let s = val(x).shape();
                    let (c, l) = (s[1], s[2] * s[3]);
                    add_into(acc!(*x), &transpose_blocks(g, l, c));
                }
            }
            Op::SplitHeads(x, heads) => {
                if needs[x.0] {
                    let s = val(x).shape();
                    let (b, l, d) = (s[0], s[1], s[2]);
                    let dh = d / heads;
                    let dst = acc!(*x);
                    for bi in 0..b {
                        for h in 0..*heads {
                            for t in 0..l {
                                let from = ((bi * heads + h) * l + t) * dh;
                                let to = (bi * l + t) * d + h * dh;
                                add_into(&mut dst[to..to + dh], &g[from..from + dh]);
                            }
                        }
                    }
                }
            }
            Op::MergeHeads(x, heads) => {
                if needs[x.0] {
                    let s = val(x).shape();
                    let (b, l, dh) = (s[0] / heads, s[1], s[2]);
                    let d = dh * heads;
                    let dst = acc!(*x);
                    for bi in 0..b {
                        for h in 0..*heads {
                            for t in 0..l {
                                let to = ((bi * heads + h) * l + t) * dh;
                                let from = (bi * l + t) * d + h * dh;
                                add_into(&mut dst[to..to + dh], &g[from..from + dh]);
                            }
                        }
                    }
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let sa = val(a).shape();
                let (m, k) = (sa[1], sa[2]);
                let p = out.shape()[2];
                let (av, bv) = (val(a).data(), val(b).data());
                if needs[a.0] {
                    // da = g b^T   (or g b when b was used transposed)
                    acc!(*a)
                        .par_chunks_mut(m * k)
                        .enumerate()
                        .for_each(|(i, da)| {
                            let gi = &g[i * m * p..(i + 1) * m * p];
                            let bi = &bv[i * k * p..(i + 1) * k * p];
                            let bs = if *transpose_b { (k, 1) } else { (1, p) };
                            gemm(m, p, k, gi, (p, 1), bi, bs, da, true);
                        });
                }
                if needs[b.0] {
                    acc!(*b)
                        .par_chunks_mut(k * p)
                        .enumerate()
                        .for_each(|(i, db)| {
                            let gi = &g[i * m * p..(i + 1) * m * p];
                            let ai = &av[i * m * k..(i + 1) * m * k];
                            if *transpose_b {
                                // db[P, K] = g^T a
                                gemm(p, m, k, gi, (1, p), ai, (k, 1), db, true);
                            } else {
                                // db[K, P] = a^T g
                                gemm(k, m, p, ai, (1, k), gi, (p, 1), db, true);
                            }
                        });
                }
            }
            Op::SelectToken(x, index) => {
                if needs[x.0] {
                    let s = val(x).shape();
                    let (l, d) = (s[1], s[2]);
                    let dst = acc!(*x);
                    for (bi, row) in g.chunks_exact(d).enumerate() {
                        let to = (bi * l + index) * d;
                        add_into(&mut dst[to..to + d], row);
                    }
                }
            }
            Op::Reshape(x) => {
                if needs[x.0] {
                    add_into(acc!(*x), g);
                }
            }
            Op::SelectRows(x, rows) => {
                if needs[x.0] {
                    let d = val(x).last_dim();
                    let dst = acc!(*x);
                    for (row, &r) in g.chunks_exact(d).zip(rows) {
                        add_into(&mut dst[r * d..(r + 1) * d], row);
                    }
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Per batch item, transposes a `[rows, cols]` block to `[cols, rows]`.
fn transpose_blocks(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    out.par_chunks_mut(rows * cols)
        .enumerate()
        .for_each(|(b, o)| {
            let s = &src[b * rows * cols..(b + 1) * rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    o[c * rows + r] = s[r * cols + c];
                }
            }
        });
    out
}

#[cfg(test)]
#[path = "tape_tests.rs"]
mod tests;
