//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed, not copied; [`Tape::backward`] returns one gradient per
//! parameter slot.

use rand::Rng as _;

use super::attention::{attention_backward, attention_weights};
use super::mat::{gemm, matmul, Mat};
use crate::seed::Rng;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Param(usize),
    Const,
    Embed { table: Var, ids: Vec<usize> },
    Add(Var, Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, rstd: Vec<f64> },
    Gelu(Var),
    CausalAttention { qkv: Var, heads: usize, segments: Vec<usize>, probs: Vec<Mat> },
    Dropout { x: Var, scale: Vec<f64> },
    MaskedLogSoftmax { x: Var, allowed: Option<Vec<bool>> },
    Gather { x: Var, idx: Vec<usize> },
    SelectRow { x: Var, row: usize },
    WeightedSum { x: Var, w: Vec<f64> },
    Sub(Var, Var),
    Scale(Var, f64),
    LogSigmoid(Var),
    Stack(Vec<Var>),
    Sum(Var),
    ClippedSurrogate { logp: Var, old: Vec<f64>, adv: Vec<f64>, eps: f64 },
}

struct Node {
    value: Mat,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p [Mat],
    nodes: Vec<Node>,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
}

fn log_sigmoid(x: f64) -> f64 {
    // -softplus(-x), stable for both signs
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
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

/// `min(r·A, clip(r, 1-ε, 1+ε)·A)`, the clipped surrogate objective.
pub fn clipped_surrogate(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// Derivative of [`clipped_surrogate`] with respect to the ratio.
pub fn clipped_surrogate_grad(ratio: f64, adv: f64, eps: f64) -> f64 {
    if ratio * adv <= ratio.clamp(1.0 - eps, 1.0 + eps) * adv {
        adv
    } else {
        0.0
    }
}

fn block(m: &Mat, r0: usize, nr: usize, c0: usize, nc: usize) -> Mat {
    let mut out = Mat::zeros(nr, nc);
    for r in 0..nr {
        out.row_mut(r).copy_from_slice(&m.row(r0 + r)[c0..c0 + nc]);
    }
    out
}

fn add_block(m: &mut Mat, r0: usize, c0: usize, src: &Mat) {
    for r in 0..src.rows {
        for (a, b) in m.row_mut(r0 + r)[c0..c0 + src.cols].iter_mut().zip(src.row(r)) {
            *a += b;
        }
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Mat]) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn value(&self, v: Var) -> &Mat {
        match self.nodes[v.0].op {
            Op::Param(i) => &self.params[i],
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.len(), 1, "not a scalar node");
        m.data[0]
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, index: usize) -> Var {
        assert!(index < self.params.len());
        self.push(Mat::default(), Op::Param(index))
    }

    /// One leaf per parameter slot, in slot order.
    pub fn bind_params(&mut self) -> Vec<Var> {
        (0..self.params.len()).map(|i| self.param(i)).collect()
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Const)
    }

    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Mat::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(out, Op::Embed { table, ids: ids.to_vec() })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let mut out = self.value(a).clone();
        let b = self.value(bias);
        assert_eq!((b.rows, b.cols), (1, out.cols));
        for r in 0..out.rows {
            for (x, y) in out.row_mut(r).iter_mut().zip(&b.data) {
                *x += y;
            }
        }
        self.push(out, Op::AddRow(a, bias))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `x @ w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let n = xv.cols as f64;
        let mut xhat = Mat::zeros(xv.rows, xv.cols);
        let mut out = Mat::zeros(xv.rows, xv.cols);
        let mut rstd = Vec::with_capacity(xv.rows);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd.push(rs);
            for c in 0..xv.cols {
                let h = (row[c] - mean) * rs;
                xhat.set(r, c, h);
                out.set(r, c, h * g.data[c] + b.data[c]);
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Mat::from_vec(v.rows, v.cols, v.data.iter().map(|&a| gelu(a)).collect());
        self.push(out, Op::Gelu(x))
    }

    /// Multi-head causal self-attention over a packed `N x 3d` projection
    /// laid out as `[q | k | v]`, heads contiguous within each block. Rows
    /// are split into independent sequences of the given lengths.
    pub fn causal_attention(&mut self, qkv: Var, heads: usize, segments: &[usize]) -> Var {
        let x = self.value(qkv);
        assert_eq!(segments.iter().sum::<usize>(), x.rows, "segment lengths must cover all rows");
        let d = x.cols / 3;
        let dk = d / heads;
        let mut out = Mat::zeros(x.rows, d);
        let mut probs = Vec::with_capacity(heads * segments.len());
        let mut r0 = 0;
        for &t in segments {
            for h in 0..heads {
                let q = block(x, r0, t, h * dk, dk);
                let k = block(x, r0, t, d + h * dk, dk);
                let v = block(x, r0, t, 2 * d + h * dk, dk);
                let p = attention_weights(&q, &k, true);
                add_block(&mut out, r0, h * dk, &matmul(&p, &v));
                probs.push(p);
            }
            r0 += t;
        }
        self.push(out, Op::CausalAttention { qkv, heads, segments: segments.to_vec(), probs })
    }

    /// Inverted dropout; identity when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut Rng) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let v = self.value(x);
        let keep = 1.0 / (1.0 - rate);
        let scale: Vec<f64> = (0..v.len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = Mat::from_vec(v.rows, v.cols, v.data.iter().zip(&scale).map(|(a, s)| a * s).collect());
        self.push(out, Op::Dropout { x, scale })
    }

    /// Row-wise log-softmax restricted to `allowed` (row-major, same shape
    /// as `x`). Disallowed entries come out as `-inf`.
    pub fn masked_log_softmax(&mut self, x: Var, allowed: Option<Vec<bool>>) -> Var {
        let v = self.value(x);
        if let Some(a) = &allowed {
            assert_eq!(a.len(), v.len(), "mask shape mismatch");
        }
        let mut out = Mat::zeros(v.rows, v.cols);
        for r in 0..v.rows {
            let row = v.row(r);
            let ok = |c: usize| allowed.as_ref().map_or(true, |a| a[r * v.cols + c]);
            let mut max = f64::NEG_INFINITY;
            for (c, &val) in row.iter().enumerate() {
                if ok(c) {
                    max = max.max(val);
                }
            }
            let mut z = 0.0;
            for (c, &val) in row.iter().enumerate() {
                if ok(c) {
                    z += (val - max).exp();
                }
            }
            let lse = max + z.ln();
            for (c, &val) in row.iter().enumerate() {
                out.set(r, c, if ok(c) { val - lse } else { f64::NEG_INFINITY });
            }
        }
        self.push(out, Op::MaskedLogSoftmax { x, allowed })
    }

    /// Picks `x[r, idx[r]]` for every row, giving a column vector.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Var {
        let v = self.value(x);
        assert_eq!(v.rows, idx.len());
        let out = Mat::from_vec(idx.len(), 1, idx.iter().enumerate().map(|(r, &c)| v.get(r, c)).collect());
        self.push(out, Op::Gather { x, idx: idx.to_vec() })
    }

    pub fn select_row(&mut self, x: Var, row: usize) -> Var {
        let out = Mat::from_vec(1, self.value(x).cols, self.value(x).row(row).to_vec());
        self.push(out, Op::SelectRow { x, row })
    }

    /// `Σ w_i x_i` over all elements.
    pub fn weighted_sum(&mut self, x: Var, w: Vec<f64>) -> Var {
        let v = self.value(x);
        assert_eq!(v.len(), w.len());
        let s = v
            .data
            .iter()
            .zip(&w)
            .filter(|(_, &wi)| wi != 0.0)
            .map(|(a, b)| a * b)
            .sum();
        self.push(Mat::filled(1, 1, s), Op::WeightedSum { x, w })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape());
        let out = Mat::from_vec(av.rows, av.cols, av.data.iter().zip(&bv.data).map(|(x, y)| x - y).collect());
        self.push(out, Op::Sub(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x);
        let out = Mat::from_vec(v.rows, v.cols, v.data.iter().map(|a| a * c).collect());
        self.push(out, Op::Scale(x, c))
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Mat::from_vec(v.rows, v.cols, v.data.iter().map(|&a| log_sigmoid(a)).collect());
        self.push(out, Op::LogSigmoid(x))
    }

    /// Stacks equally wide rows vertically.
    pub fn stack(&mut self, rows: &[Var]) -> Var {
        let cols = self.value(rows[0]).cols;
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            let v = self.value(r);
            assert_eq!((v.rows, v.cols), (1, cols), "stack expects 1 x n rows");
            data.extend_from_slice(&v.data);
        }
        self.push(Mat::from_vec(rows.len(), cols, data), Op::Stack(rows.to_vec()))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.push(Mat::filled(1, 1, s), Op::Sum(x))
    }

    /// `-Σ_i min(r_i A_i, clip(r_i) A_i)` with `r_i = exp(logp_i - old_i)`.
    pub fn clipped_surrogate_loss(&mut self, logp: Var, old: Vec<f64>, adv: Vec<f64>, eps: f64) -> Var {
        let v = self.value(logp);
        assert!(v.len() == old.len() && old.len() == adv.len());
        let s: f64 = v
            .data
            .iter()
            .zip(old.iter().zip(&adv))
            .map(|(&lp, (&o, &a))| -clipped_surrogate((lp - o).exp(), a, eps))
            .sum();
        self.push(Mat::filled(1, 1, s), Op::ClippedSurrogate { logp, old, adv, eps })
    }

    /// Gradients of the scalar `loss` with respect to every parameter slot.
    pub fn backward(&self, loss: Var) -> Vec<Mat> {
        assert_eq!(self.value(loss).len(), 1, "loss must be scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));
        let mut out: Vec<Mat> = self.params.iter().map(|p| Mat::zeros(p.rows, p.cols)).collect();

        fn acc(grads: &mut [Option<Mat>], v: Var, shape: (usize, usize), f: impl FnOnce(&mut Mat)) {
            let g = grads[v.0].get_or_insert_with(|| Mat::zeros(shape.0, shape.1));
            f(g);
        }

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let shape = |v: Var| self.value(v).shape();
            match &node.op {
                Op::Param(p) => out[*p].add_assign(&g),
                Op::Const => {}
                Op::Embed { table, ids } => acc(&mut grads, *table, shape(*table), |t| {
                    for (r, &id) in ids.iter().enumerate() {
                        for (a, b) in t.row_mut(id).iter_mut().zip(g.row(r)) {
                            *a += b;
                        }
                    }
                }),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, shape(*a), |m| m.add_assign(&g));
                    acc(&mut grads, *b, shape(*b), |m| m.add_assign(&g));
                }
                Op::AddRow(a, bias) => {
                    acc(&mut grads, *a, shape(*a), |m| m.add_assign(&g));
                    acc(&mut grads, *bias, shape(*bias), |m| {
                        for r in 0..g.rows {
                            for (x, y) in m.data.iter_mut().zip(g.row(r)) {
                                *x += y;
                            }
                        }
                    });
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, av.shape(), |m| gemm(1.0, &g, false, bv, true, 1.0, m));
                    acc(&mut grads, *b, bv.shape(), |m| gemm(1.0, av, true, &g, false, 1.0, m));
                }
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    let gv = self.value(*gamma);
                    let n = xhat.cols as f64;
                    acc(&mut grads, *gamma, gv.shape(), |m| {
                        for r in 0..g.rows {
                            for c in 0..g.cols {
                                m.data[c] += g.get(r, c) * xhat.get(r, c);
                            }
                        }
                    });
                    acc(&mut grads, *beta, shape(*beta), |m| {
                        for r in 0..g.rows {
                            for (x, y) in m.data.iter_mut().zip(g.row(r)) {
                                *x += y;
                            }
                        }
                    });
                    acc(&mut grads, *x, xhat.shape(), |m| {
                        for r in 0..g.rows {
                            let dxhat: Vec<f64> = g.row(r).iter().zip(&gv.data).map(|(a, b)| a * b).collect();
                            let mean_d = dxhat.iter().sum::<f64>() / n;
                            let mean_dx = dxhat.iter().zip(xhat.row(r)).map(|(a, b)| a * b).sum::<f64>() / n;
                            for (c, dst) in m.row_mut(r).iter_mut().enumerate() {
                                *dst += rstd[r] * (dxhat[c] - mean_d - xhat.get(r, c) * mean_dx);
                            }
                        }
                    });
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    acc(&mut grads, *x, xv.shape(), |m| {
                        for ((d, &a), &gg) in m.data.iter_mut().zip(&xv.data).zip(&g.data) {
                            *d += gg * gelu_grad(a);
                        }
                    });
                }
                Op::CausalAttention { qkv, heads, segments, probs } => {
                    let x = self.value(*qkv);
                    let d = x.cols / 3;
                    let dk = d / heads;
                    acc(&mut grads, *qkv, x.shape(), |m| {
                        let mut r0 = 0;
                        let mut pi = 0;
                        for &t in segments {
                            for h in 0..*heads {
                                let q = block(x, r0, t, h * dk, dk);
                                let k = block(x, r0, t, d + h * dk, dk);
                                let v = block(x, r0, t, 2 * d + h * dk, dk);
                                let go = block(&g, r0, t, h * dk, dk);
                                let (dq, dkk, dv) = attention_backward(&q, &k, &v, &probs[pi], &go);
                                add_block(m, r0, h * dk, &dq);
                                add_block(m, r0, d + h * dk, &dkk);
                                add_block(m, r0, 2 * d + h * dk, &dv);
                                pi += 1;
                            }
                            r0 += t;
                        }
                    });
                }
                Op::Dropout { x, scale } => acc(&mut grads, *x, shape(*x), |m| {
                    for ((d, s), gg) in m.data.iter_mut().zip(scale).zip(&g.data) {
                        *d += gg * s;
                    }
                }),
                Op::MaskedLogSoftmax { x, allowed } => {
                    let lp = &node.value;
                    acc(&mut grads, *x, lp.shape(), |m| {
                        for r in 0..lp.rows {
                            let ok = |c: usize| allowed.as_ref().map_or(true, |a| a[r * lp.cols + c]);
                            let gsum: f64 = (0..lp.cols).filter(|&c| ok(c)).map(|c| g.get(r, c)).sum();
                            for c in 0..lp.cols {
                                if ok(c) {
                                    let p = lp.get(r, c).exp();
                                    m.data[r * lp.cols + c] += g.get(r, c) - p * gsum;
                                }
                            }
                        }
                    });
                }
                Op::Gather { x, idx } => acc(&mut grads, *x, shape(*x), |m| {
                    for (r, &c) in idx.iter().enumerate() {
                        let cols = m.cols;
                        m.data[r * cols + c] += g.data[r];
                    }
                }),
                Op::SelectRow { x, row } => acc(&mut grads, *x, shape(*x), |m| {
                    for (a, b) in m.row_mut(*row).iter_mut().zip(&g.data) {
                        *a += b;
                    }
                }),
                Op::WeightedSum { x, w } => acc(&mut grads, *x, shape(*x), |m| {
                    let s = g.data[0];
                    for (d, wi) in m.data.iter_mut().zip(w) {
                        *d += s * wi;
                    }
                }),
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, shape(*a), |m| m.add_assign(&g));
                    acc(&mut grads, *b, shape(*b), |m| {
                        for (d, gg) in m.data.iter_mut().zip(&g.data) {
                            *d -= gg;
                        }
                    });
                }
                Op::Scale(x, c) => acc(&mut grads, *x, shape(*x), |m| {
                    for (d, gg) in m.data.iter_mut().zip(&g.data) {
                        *d += c * gg;
                    }
                }),
                Op::LogSigmoid(x) => {
                    let xv = self.value(*x);
                    acc(&mut grads, *x, xv.shape(), |m| {
                        for ((d, &a), gg) in m.data.iter_mut().zip(&xv.data).zip(&g.data) {
                            *d += gg * sigmoid(-a);
                        }
                    });
                }
                Op::Stack(rows) => {
                    for (r, &v) in rows.iter().enumerate() {
                        acc(&mut grads, v, shape(v), |m| {
                            for (a, b) in m.data.iter_mut().zip(g.row(r)) {
                                *a += b;
                            }
                        });
                    }
                }
                Op::Sum(x) => acc(&mut grads, *x, shape(*x), |m| {
                    let s = g.data[0];
                    m.data.iter_mut().for_each(|d| *d += s);
                }),
                Op::ClippedSurrogate { logp, old, adv, eps } => {
                    let lp = self.value(*logp);
                    let s = g.data[0];
                    acc(&mut grads, *logp, lp.shape(), |m| {
                        for (k, d) in m.data.iter_mut().enumerate() {
                            let r = (lp.data[k] - old[k]).exp();
                            // d/dlogp of -f(r) = -f'(r) * r
                            *d += -s * clipped_surrogate_grad(r, adv[k], *eps) * r;
                        }
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference check of `build` with respect to every parameter.
    fn check(params: Vec<Mat>, build: impl Fn(&mut Tape, &[Var]) -> Var) {
        let analytic = {
            let mut t = Tape::new(&params);
            let p = t.bind_params();
            let loss = build(&mut t, &p);
            t.backward(loss)
        };
        let h = 1e-5;
        for (pi, pm) in params.iter().enumerate() {
            for k in 0..pm.len() {
                let eval = |delta: f64| {
                    let mut ps = params.clone();
                    ps[pi].data[k] += delta;
                    let mut t = Tape::new(&ps);
                    let p = t.bind_params();
                    let l = build(&mut t, &p);
                    t.scalar(l)
                };
                let num = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic[pi].data[k];
                let denom = a.abs().max(num.abs()).max(1e-6);
                assert!((a - num).abs() / denom < 1e-5, "param {pi}[{k}]: analytic {a} numeric {num}");
            }
        }
    }

    fn rnd(r: usize, c: usize, seed: u64) -> Mat {
        Mat::randn(r, c, 1.0, &mut crate::seed::stream(seed, "tape"))
    }

    #[test]
    fn grad_linear_layernorm_gelu() {
        check(vec![rnd(3, 4, 1), rnd(4, 5, 2), rnd(1, 5, 3), rnd(1, 5, 4), rnd(1, 5, 5)], |t, p| {
            let h = t.linear(p[0], p[1], p[2]);
            let n = t.layer_norm(h, p[3], p[4]);
            let g = t.gelu(n);
            t.weighted_sum(g, (0..15).map(|i| (i as f64 * 0.37).sin()).collect())
        });
    }

    #[test]
    fn grad_attention_and_masked_softmax() {
        let allowed: Vec<bool> = (0..4 * 6).map(|i| i % 3 != 1).collect();
        check(vec![rnd(5, 12, 7), rnd(4, 6, 8)], move |t, p| {
            let a = t.causal_attention(p[0], 2, &[3, 2]);
            let mixed = t.add(p[1], p[1]);
            let lp = t.masked_log_softmax(mixed, Some(allowed.clone()));
            let picked = t.gather(lp, &[0, 2, 3, 5]);
            let s1 = t.sum(picked);
            let s2 = t.weighted_sum(a, (0..20).map(|i| (i as f64).cos()).collect());
            let both = t.stack(&[s1, s2]);
            t.sum(both)
        });
    }

    #[test]
    fn grad_embed_select_logsigmoid() {
        check(vec![rnd(5, 3, 10), rnd(3, 1, 11)], |t, p| {
            let e = t.embed(p[0], &[4, 1, 4]);
            let r = t.select_row(e, 2);
            let s = t.matmul(r, p[1]);
            let r0 = t.select_row(e, 0);
            let s0 = t.matmul(r0, p[1]);
            let d = t.sub(s, s0);
            let d = t.scale(d, 0.7);
            let d2 = t.add(d, s0);
            let l = t.log_sigmoid(d2);
            t.scale(l, -1.0)
        });
    }

    #[test]
    fn grad_clipped_surrogate() {
        // logp values chosen away from the clip kinks
        let old = vec![0.0, 0.0, 0.0, 0.0];
        let adv = vec![1.0, -1.0, 2.0, -0.5];
        check(vec![Mat::from_vec(4, 1, vec![0.05, -0.1, 0.5, -0.6])], move |t, p| {
            t.clipped_surrogate_loss(p[0], old.clone(), adv.clone(), 0.2)
        });
    }

    #[test]
    fn clipped_surrogate_grid_matches_closed_form() {
        let eps = 0.2;
        for i in 0..=40 {
            let r = 0.5 + i as f64 * 0.025;
            for &a in &[-2.0, -0.3, 0.0, 0.4, 1.5] {
                let oracle = if a >= 0.0 {
                    // positive advantage: gain capped above 1 + eps
                    a * r.min(1.0 + eps)
                } else {
                    // negative advantage: penalty floored below 1 - eps
                    a * r.max(1.0 - eps)
                };
                assert!((clipped_surrogate(r, a, eps) - oracle).abs() < 1e-15, "r={r} a={a}");
            }
        }
    }

    #[test]
    fn log_sigmoid_tie_is_ln2() {
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
        assert!(log_sigmoid(800.0) == 0.0);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
    }

    #[test]
    fn masked_entries_are_neg_infinity() {
        let params = vec![Mat::from_vec(1, 3, vec![2.0, 1.0, 0.5])];
        let mut t = Tape::new(&params);
        let p = t.bind_params();
        let lp = t.masked_log_softmax(p[0], Some(vec![true, false, true]));
        let v = t.value(lp);
        assert_eq!(v.data[1], f64::NEG_INFINITY);
        assert!((v.data[0].exp() + v.data[2].exp() - 1.0).abs() < 1e-15);
    }
}
