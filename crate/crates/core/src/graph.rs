//! Reverse-mode automatic differentiation over a per-forward-pass tape.
//!
//! A [`Graph`] borrows a [`ParamStore`], evaluates operations eagerly and
//! records them; [`Graph::backward`] walks the tape in reverse and returns
//! gradients for every parameter and every input that asked for one.

use alloc::vec::Vec;

use crate::kernels::{conv_backward, conv_forward, ConvGeom};
use crate::nn::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    AvgPool2 { x: Var },
    Upsample { x: Var, factor: usize },
    Concat { a: Var, b: Var },
    Slice { x: Var, start: usize },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: T },
    Exp { x: Var },
    Silu { x: Var },
    RmsNorm { x: Var, gain: Var, inv_rms: Vec<T> },
    Modulate { x: Var, ss: Var },
    Linear { x: Var, w: Var, b: Var },
    Attention { q: Var, k: Var, v: Var, probs: Vec<T> },
    WeightedMse { pred: Var, target: Vec<T>, weights: Vec<T> },
    Kl { mu: Var, logvar: Var },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    params: Vec<Option<Vec<T>>>,
    inputs: Vec<(Var, Vec<T>)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a parameter, `None` if it did not take part in the loss.
    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.get(id.index()).and_then(|g| g.as_deref())
    }

    pub fn input(&self, v: Var) -> Option<&[T]> {
        self.inputs.iter().find(|(var, _)| *var == v).map(|(_, g)| g.as_slice())
    }

    pub fn into_params(self) -> Vec<Option<Vec<T>>> {
        self.params
    }

    /// Euclidean norm over the given parameters.
    pub fn norm_of(&self, ids: impl IntoIterator<Item = ParamId>) -> f64 {
        let mut acc = 0.0;
        for id in ids {
            if let Some(g) = self.param(id) {
                acc += g.iter().map(|v| v.to_f64_lossy() * v.to_f64_lossy()).sum::<f64>();
            }
        }
        num_traits::Float::sqrt(acc)
    }
}

pub struct Graph<'a, T: Real> {
    store: &'a ParamStore<T>,
    nodes: Vec<Node<T>>,
    bound: Vec<Option<Var>>,
    param_of: Vec<Option<ParamId>>,
    track: bool,
    scratch: Vec<T>,
}

fn silu<T: Real>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<'a, T: Real> Graph<'a, T> {
    /// A graph that records operations for a later backward pass.
    pub fn new(store: &'a ParamStore<T>) -> Self {
        Self::with_tracking(store, true)
    }

    /// A graph for inference only; `backward` is unavailable.
    pub fn inference(store: &'a ParamStore<T>) -> Self {
        Self::with_tracking(store, false)
    }

    fn with_tracking(store: &'a ParamStore<T>, track: bool) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            bound: alloc::vec![None; store.len()],
            param_of: Vec::new(),
            track,
            scratch: Vec::new(),
        }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad: needs_grad && self.track });
        self.param_of.push(None);
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A constant input.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// An input whose gradient is reported by `backward`.
    pub fn input_with_grad(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a parameter, reusing the leaf if it is already on the tape.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.index()] {
            return v;
        }
        let t = self.store.tensor(id).clone();
        let v = self.push(t, Op::Leaf, true);
        self.param_of[v.0] = Some(id);
        self.bound[id.index()] = Some(v);
        v
    }

    /// 2-D convolution with circular padding. `w` is `[cout, cin, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (n, cin, h, wd) = self.value(x).dims4();
        let (cout, wcin, k, k2) = self.value(w).dims4();
        assert!(wcin == cin && k == k2, "conv weight {:?} does not fit input {:?}", self.shape(w), self.shape(x));
        assert!(h + 2 * pad >= k && wd + 2 * pad >= k, "kernel larger than padded input");
        let geom = ConvGeom { cin, h, w: wd, k, stride, pad };
        let (ho, wo) = geom.out_hw();
        let mut out = Tensor::zeros(&[n, cout, ho, wo]);
        let mut scratch = core::mem::take(&mut self.scratch);
        conv_forward(
            self.value(x).data(),
            n,
            &geom,
            self.value(w).data(),
            b.map(|b| self.nodes[b.0].value.data()),
            cout,
            out.data_mut(),
            &mut scratch,
        );
        self.scratch = scratch;
        let mut deps = alloc::vec![x, w];
        deps.extend(b);
        let ng = self.ng(&deps);
        self.push(out, Op::Conv { x, w, b, geom }, ng)
    }

    /// 2×2 average pooling.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even sides");
        let (ho, wo) = (h / 2, w / 2);
        let xd = self.value(x).data();
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        let q = T::from_f64_lossy(0.25);
        for (p, o) in out.data_mut().chunks_mut(ho * wo).enumerate() {
            let src = &xd[p * h * w..(p + 1) * h * w];
            for i in 0..ho {
                for j in 0..wo {
                    let a = 2 * i * w + 2 * j;
                    o[i * wo + j] = (src[a] + src[a + 1] + src[a + w] + src[a + w + 1]) * q;
                }
            }
        }
        let ng = self.ng(&[x]);
        self.push(out, Op::AvgPool2 { x }, ng)
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let (ho, wo) = (h * factor, w * factor);
        let xd = self.value(x).data();
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        for (p, o) in out.data_mut().chunks_mut(ho * wo).enumerate() {
            let src = &xd[p * h * w..(p + 1) * h * w];
            for i in 0..ho {
                for j in 0..wo {
                    o[i * wo + j] = src[(i / factor) * w + j / factor];
                }
            }
        }
        let ng = self.ng(&[x]);
        self.push(out, Op::Upsample { x, factor }, ng)
    }

    /// Channel concatenation of two NCHW tensors.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (n, ca, h, w) = self.value(a).dims4();
        let (nb, cb, hb, wb) = self.value(b).dims4();
        assert!(n == nb && h == hb && w == wb, "concat shape mismatch");
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
        for s in 0..n {
            data.extend_from_slice(&ad[s * ca * h * w..(s + 1) * ca * h * w]);
            data.extend_from_slice(&bd[s * cb * h * w..(s + 1) * cb * h * w]);
        }
        let ng = self.ng(&[a, b]);
        self.push(Tensor::new(&[n, ca + cb, h, w], data), Op::Concat { a, b }, ng)
    }

    /// Channels `start..start+len` of an NCHW tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert!(start + len <= c, "channel slice out of range");
        let xd = self.value(x).data();
        let plane = h * w;
        let mut data = Vec::with_capacity(n * len * plane);
        for s in 0..n {
            data.extend_from_slice(&xd[(s * c + start) * plane..(s * c + start + len) * plane]);
        }
        let ng = self.ng(&[x]);
        self.push(Tensor::new(&[n, len, h, w], data), Op::Slice { x, start }, ng)
    }

    fn zip_same(&self, a: Var, b: Var) -> (&Tensor<T>, &Tensor<T>) {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        (ta, tb)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = self.zip_same(a, b);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(ta.shape(), data);
        let ng = self.ng(&[a, b]);
        self.push(t, Op::Add { a, b }, ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = self.zip_same(a, b);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(ta.shape(), data);
        let ng = self.ng(&[a, b]);
        self.push(t, Op::Mul { a, b }, ng)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let tx = self.value(x);
        let t = Tensor::new(tx.shape(), tx.data().iter().map(|&v| v * c).collect());
        let ng = self.ng(&[x]);
        self.push(t, Op::Scale { x, c }, ng)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let t = Tensor::new(tx.shape(), tx.data().iter().map(|&v| v.exp()).collect());
        let ng = self.ng(&[x]);
        self.push(t, Op::Exp { x }, ng)
    }

    /// Sigmoid-weighted linear unit `x·σ(x)`.
    pub fn silu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let t = Tensor::new(tx.shape(), tx.data().iter().map(|&v| silu(v)).collect());
        let ng = self.ng(&[x]);
        self.push(t, Op::Silu { x }, ng)
    }

    /// Root-mean-square normalization over channels at each pixel, followed
    /// by a per-channel gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: T) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert_eq!(self.value(gain).numel(), c, "rms gain size");
        let plane = h * w;
        let xd = self.value(x).data();
        let gd = self.value(gain).data();
        let mut inv = alloc::vec![T::zero(); n * plane];
        let inv_c = T::one() / T::from_usize(c).unwrap();
        for s in 0..n {
            let base = s * c * plane;
            let r = &mut inv[s * plane..(s + 1) * plane];
            for ch in 0..c {
                for (ri, &v) in r.iter_mut().zip(&xd[base + ch * plane..base + (ch + 1) * plane]) {
                    *ri += v * v;
                }
            }
            for ri in r.iter_mut() {
                *ri = T::one() / (*ri * inv_c + eps).sqrt();
            }
        }
        let mut out = Tensor::zeros(&[n, c, h, w]);
        let od = out.data_mut();
        for s in 0..n {
            let r = &inv[s * plane..(s + 1) * plane];
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                for p in 0..plane {
                    od[off + p] = xd[off + p] * r[p] * gd[ch];
                }
            }
        }
        let ng = self.ng(&[x, gain]);
        self.push(out, Op::RmsNorm { x, gain, inv_rms: inv }, ng)
    }

    /// `x · (1 + scale) + shift` with `ss = [scale | shift]` of shape `[n, 2c]`.
    pub fn modulate(&mut self, x: Var, ss: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert_eq!(self.shape(ss), &[n, 2 * c], "modulation shape");
        let plane = h * w;
        let xd = self.value(x).data();
        let sd = self.value(ss).data();
        let mut out = Tensor::zeros(&[n, c, h, w]);
        for (p, o) in out.data_mut().chunks_mut(plane).enumerate() {
            let (s, ch) = (p / c, p % c);
            let (sc, sh) = (T::one() + sd[s * 2 * c + ch], sd[s * 2 * c + c + ch]);
            for (oi, &v) in o.iter_mut().zip(&xd[p * plane..(p + 1) * plane]) {
                *oi = v * sc + sh;
            }
        }
        let ng = self.ng(&[x, ss]);
        self.push(out, Op::Modulate { x, ss }, ng)
    }

    /// Dense layer: `x [n, i] · w[o, i]^T + b[o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (n, i) = match self.shape(x) {
            [n, i] => (*n, *i),
            s => panic!("linear expects [n, in], got {s:?}"),
        };
        let o = self.shape(w)[0];
        assert_eq!(self.shape(w), &[o, i], "linear weight shape");
        let mut out = Tensor::zeros(&[n, o]);
        {
            let bd = self.value(b).data();
            for row in out.data_mut().chunks_mut(o) {
                row.copy_from_slice(bd);
            }
        }
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        let mut od = out.into_data();
        T::gemm(n, i, o, T::one(), xd, (i as isize, 1), wd, (1, i as isize), T::one(), &mut od, (o as isize, 1));
        let ng = self.ng(&[x, w, b]);
        self.push(Tensor::new(&[n, o], od), Op::Linear { x, w, b }, ng)
    }

    /// Softmax attention on channel-major token layouts: `q` is `[n, c, l]`,
    /// `k` and `v` are `[n, c, s]` (trailing spatial dims are flattened).
    /// Output has the shape of `q`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Var {
        let qs = self.shape(q).to_vec();
        let (n, c) = (qs[0], qs[1]);
        let l: usize = qs[2..].iter().product();
        let ks = self.shape(k);
        let s_len: usize = ks[2..].iter().product();
        assert!(ks[0] == n && ks[1] == c && self.shape(v) == ks, "attention shapes");
        assert!(q != k && k != v && q != v, "attention operands must be distinct nodes");
        let scale = T::one() / T::from_usize(c).unwrap().sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = alloc::vec![T::zero(); n * l * s_len];
        let mut out = alloc::vec![T::zero(); n * c * l];
        for b in 0..n {
            let qb = &qd[b * c * l..(b + 1) * c * l];
            let kb = &kd[b * c * s_len..(b + 1) * c * s_len];
            let vb = &vd[b * c * s_len..(b + 1) * c * s_len];
            let pb = &mut probs[b * l * s_len..(b + 1) * l * s_len];
            // scores[l, s] = q^T k
            T::gemm(l, c, s_len, scale, qb, (1, l as isize), kb, (s_len as isize, 1), T::zero(), pb, (s_len as isize, 1));
            for row in pb.chunks_mut(s_len) {
                let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for r in row.iter_mut() {
                    *r = (*r - m).exp();
                    z += *r;
                }
                for r in row.iter_mut() {
                    *r /= z;
                }
            }
            // out[c, l] = v[c, s] · P[l, s]^T
            let ob = &mut out[b * c * l..(b + 1) * c * l];
            T::gemm(c, s_len, l, T::one(), vb, (s_len as isize, 1), pb, (1, s_len as isize), T::zero(), ob, (l as isize, 1));
        }
        let ng = self.ng(&[q, k, v]);
        self.push(Tensor::new(&qs, out), Op::Attention { q, k, v, probs }, ng)
    }

    /// `(1/n) Σ_i w_i · mean_p (pred − target)²`, a scalar.
    pub fn weighted_mse(&mut self, pred: Var, target: Vec<T>, weights: Vec<T>) -> Var {
        let tp = self.value(pred);
        let n = tp.shape()[0];
        assert_eq!(tp.numel(), target.len(), "mse target size");
        assert_eq!(weights.len(), n, "one weight per sample");
        let per = tp.numel() / n;
        let mut acc = T::zero();
        for (s, w) in weights.iter().enumerate() {
            let mut e = T::zero();
            for (&p, &t) in tp.data()[s * per..(s + 1) * per].iter().zip(&target[s * per..(s + 1) * per]) {
                e += (p - t) * (p - t);
            }
            acc += *w * e / T::from_usize(per).unwrap();
        }
        let loss = acc / T::from_usize(n).unwrap();
        let ng = self.ng(&[pred]);
        self.push(Tensor::scalar(loss), Op::WeightedMse { pred, target, weights }, ng)
    }

    /// `(1/n) Σ_i ½ Σ_j (μ² + e^{lv} − lv − 1)`, a scalar.
    pub fn kl_divergence(&mut self, mu: Var, logvar: Var) -> Var {
        let (tm, tl) = self.zip_same(mu, logvar);
        let n = tm.shape()[0];
        let half = T::from_f64_lossy(0.5);
        let total: T = tm
            .data()
            .iter()
            .zip(tl.data())
            .map(|(&m, &lv)| half * (m * m + lv.exp() - lv - T::one()))
            .sum();
        let ng = self.ng(&[mu, logvar]);
        self.push(Tensor::scalar(total / T::from_usize(n).unwrap()), Op::Kl { mu, logvar }, ng)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(mut self, loss: Var) -> Gradients<T> {
        assert!(self.track, "backward on an inference graph");
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar loss");
        let len = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..len).map(|_| None).collect();
        grads[loss.0] = Some(alloc::vec![T::one()]);
        let mut dcol = Vec::new();
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backprop_node(i, &gy, &mut grads, &mut dcol);
        }
        let mut params = alloc::vec![None; self.store.len()];
        let mut inputs = Vec::new();
        for (i, g) in grads.into_iter().enumerate() {
            let node = &self.nodes[i];
            if !matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let g = g.unwrap_or_else(|| alloc::vec![T::zero(); node.value.numel()]);
            match self.param_of[i] {
                Some(id) => params[id.index()] = Some(g),
                None => inputs.push((Var(i), g)),
            }
        }
        Gradients { params, inputs }
    }

    fn backprop_node(&mut self, i: usize, gy: &[T], grads: &mut [Option<Vec<T>>], dcol: &mut Vec<T>) {
        fn acc<'g, T: Real>(grads: &'g mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> Option<&'g mut Vec<T>> {
            if !nodes[v.0].needs_grad {
                return None;
            }
            let n = nodes[v.0].value.numel();
            Some(grads[v.0].get_or_insert_with(|| alloc::vec![T::zero(); n]))
        }
        let nodes = &self.nodes;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let n = nodes[x.0].value.shape()[0];
                let cout = nodes[w.0].value.shape()[0];
                // Take the target buffers out so that several can be borrowed at once.
                let mut dw = acc(grads, nodes, *w).map(core::mem::take);
                let mut db = b.and_then(|b| acc(grads, nodes, b).map(core::mem::take));
                let mut dx = acc(grads, nodes, *x).map(core::mem::take);
                conv_backward(
                    nodes[x.0].value.data(),
                    n,
                    geom,
                    nodes[w.0].value.data(),
                    cout,
                    gy,
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                    dx.as_deref_mut(),
                    &mut self.scratch,
                    dcol,
                );
                if let Some(g) = dw {
                    grads[w.0] = Some(g);
                }
                if let (Some(g), Some(b)) = (db, b) {
                    grads[b.0] = Some(g);
                }
                if let Some(g) = dx {
                    grads[x.0] = Some(g);
                }
            }
            Op::AvgPool2 { x } => {
                let (_, _, h, w) = nodes[x.0].value.dims4();
                let (ho, wo) = (h / 2, w / 2);
                if let Some(dx) = acc(grads, nodes, *x) {
                    let q = T::from_f64_lossy(0.25);
                    for (p, g) in gy.chunks(ho * wo).enumerate() {
                        let d = &mut dx[p * h * w..(p + 1) * h * w];
                        for ii in 0..ho {
                            for jj in 0..wo {
                                let v = g[ii * wo + jj] * q;
                                let a = 2 * ii * w + 2 * jj;
                                d[a] += v;
                                d[a + 1] += v;
                                d[a + w] += v;
                                d[a + w + 1] += v;
                            }
                        }
                    }
                }
            }
            Op::Upsample { x, factor } => {
                let (_, _, h, w) = nodes[x.0].value.dims4();
                let (ho, wo) = (h * factor, w * factor);
                if let Some(dx) = acc(grads, nodes, *x) {
                    for (p, g) in gy.chunks(ho * wo).enumerate() {
                        let d = &mut dx[p * h * w..(p + 1) * h * w];
                        for ii in 0..ho {
                            for jj in 0..wo {
                                d[(ii / factor) * w + jj / factor] += g[ii * wo + jj];
                            }
                        }
                    }
                }
            }
            Op::Concat { a, b } => {
                let (n, ca, h, w) = nodes[a.0].value.dims4();
                let cb = nodes[b.0].value.dims4().1;
                let plane = h * w;
                if let Some(da) = acc(grads, nodes, *a) {
                    for s in 0..n {
                        let src = &gy[s * (ca + cb) * plane..(s * (ca + cb) + ca) * plane];
                        for (d, &g) in da[s * ca * plane..(s + 1) * ca * plane].iter_mut().zip(src) {
                            *d += g;
                        }
                    }
                }
                if let Some(db) = acc(grads, nodes, *b) {
                    for s in 0..n {
                        let src = &gy[(s * (ca + cb) + ca) * plane..(s + 1) * (ca + cb) * plane];
                        for (d, &g) in db[s * cb * plane..(s + 1) * cb * plane].iter_mut().zip(src) {
                            *d += g;
                        }
                    }
                }
            }
            Op::Slice { x, start } => {
                let (n, c, h, w) = nodes[x.0].value.dims4();
                let len = nodes[i].value.dims4().1;
                let plane = h * w;
                if let Some(dx) = acc(grads, nodes, *x) {
                    for s in 0..n {
                        let dst = &mut dx[(s * c + start) * plane..(s * c + start + len) * plane];
                        for (d, &g) in dst.iter_mut().zip(&gy[s * len * plane..(s + 1) * len * plane]) {
                            *d += g;
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(d) = acc(grads, nodes, v) {
                        for (d, &g) in d.iter_mut().zip(gy) {
                            *d += g;
                        }
                    }
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if let Some(d) = acc(grads, nodes, *a) {
                    for ((d, &g), &o) in d.iter_mut().zip(gy).zip(bv) {
                        *d += g * o;
                    }
                }
                if let Some(d) = acc(grads, nodes, *b) {
                    for ((d, &g), &o) in d.iter_mut().zip(gy).zip(av) {
                        *d += g * o;
                    }
                }
            }
            Op::Scale { x, c } => {
                if let Some(d) = acc(grads, nodes, *x) {
                    for (d, &g) in d.iter_mut().zip(gy) {
                        *d += g * *c;
                    }
                }
            }
            Op::Exp { x } => {
                let y = nodes[i].value.data();
                if let Some(d) = acc(grads, nodes, *x) {
                    for ((d, &g), &yv) in d.iter_mut().zip(gy).zip(y) {
                        *d += g * yv;
                    }
                }
            }
            Op::Silu { x } => {
                let xv = nodes[x.0].value.data();
                if let Some(d) = acc(grads, nodes, *x) {
                    for ((d, &g), &v) in d.iter_mut().zip(gy).zip(xv) {
                        let s = sigmoid(v);
                        *d += g * s * (T::one() + v * (T::one() - s));
                    }
                }
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (n, c, h, w) = nodes[x.0].value.dims4();
                let plane = h * w;
                let xd = nodes[x.0].value.data();
                let gd = nodes[gain.0].value.data();
                if let Some(dg) = acc(grads, nodes, *gain) {
                    for s in 0..n {
                        let r = &inv_rms[s * plane..(s + 1) * plane];
                        for ch in 0..c {
                            let off = (s * c + ch) * plane;
                            let mut a = T::zero();
                            for p in 0..plane {
                                a += gy[off + p] * xd[off + p] * r[p];
                            }
                            dg[ch] += a;
                        }
                    }
                }
                if let Some(dx) = acc(grads, nodes, *x) {
                    let inv_c = T::one() / T::from_usize(c).unwrap();
                    let mut dot = alloc::vec![T::zero(); plane];
                    for s in 0..n {
                        let r = &inv_rms[s * plane..(s + 1) * plane];
                        dot.fill(T::zero());
                        for ch in 0..c {
                            let off = (s * c + ch) * plane;
                            for p in 0..plane {
                                dot[p] += gy[off + p] * gd[ch] * xd[off + p];
                            }
                        }
                        for ch in 0..c {
                            let off = (s * c + ch) * plane;
                            for p in 0..plane {
                                let rp = r[p];
                                dx[off + p] += rp * gd[ch] * gy[off + p] - rp * rp * rp * xd[off + p] * dot[p] * inv_c;
                            }
                        }
                    }
                }
            }
            Op::Modulate { x, ss } => {
                let (_, c, h, w) = nodes[x.0].value.dims4();
                let plane = h * w;
                let xd = nodes[x.0].value.data();
                let sd = nodes[ss.0].value.data();
                if let Some(dss) = acc(grads, nodes, *ss) {
                    for (p, g) in gy.chunks(plane).enumerate() {
                        let (s, ch) = (p / c, p % c);
                        let mut dsc = T::zero();
                        let mut dsh = T::zero();
                        for (&gv, &xv) in g.iter().zip(&xd[p * plane..(p + 1) * plane]) {
                            dsc += gv * xv;
                            dsh += gv;
                        }
                        dss[s * 2 * c + ch] += dsc;
                        dss[s * 2 * c + c + ch] += dsh;
                    }
                }
                if let Some(dx) = acc(grads, nodes, *x) {
                    for (p, g) in gy.chunks(plane).enumerate() {
                        let (s, ch) = (p / c, p % c);
                        let sc = T::one() + sd[s * 2 * c + ch];
                        for (d, &gv) in dx[p * plane..(p + 1) * plane].iter_mut().zip(g) {
                            *d += gv * sc;
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (n, inp) = (nodes[x.0].value.shape()[0], nodes[x.0].value.shape()[1]);
                let o = nodes[w.0].value.shape()[0];
                if let Some(db) = acc(grads, nodes, *b) {
                    for row in gy.chunks(o) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                }
                if let Some(dw) = acc(grads, nodes, *w) {
                    // dw[o, i] += gy[n, o]^T · x[n, i]
                    T::gemm(o, n, inp, T::one(), gy, (1, o as isize), nodes[x.0].value.data(), (inp as isize, 1), T::one(), dw, (inp as isize, 1));
                }
                if let Some(dx) = acc(grads, nodes, *x) {
                    T::gemm(n, o, inp, T::one(), gy, (o as isize, 1), nodes[w.0].value.data(), (inp as isize, 1), T::one(), dx, (inp as isize, 1));
                }
            }
            Op::Attention { q, k, v, probs } => {
                let qs = nodes[q.0].value.shape();
                let (n, c) = (qs[0], qs[1]);
                let l: usize = qs[2..].iter().product();
                let s_len: usize = nodes[k.0].value.shape()[2..].iter().product();
                let scale = T::one() / T::from_usize(c).unwrap().sqrt();
                let (qd, kd, vd) = (nodes[q.0].value.data(), nodes[k.0].value.data(), nodes[v.0].value.data());
                let mut dp = alloc::vec![T::zero(); l * s_len];
                let mut dq_all = acc(grads, nodes, *q).map(core::mem::take);
                let mut dk_all = acc(grads, nodes, *k).map(core::mem::take);
                let mut dv_all = acc(grads, nodes, *v).map(core::mem::take);
                for b in 0..n {
                    let gb = &gy[b * c * l..(b + 1) * c * l];
                    let pb = &probs[b * l * s_len..(b + 1) * l * s_len];
                    let vb = &vd[b * c * s_len..(b + 1) * c * s_len];
                    if let Some(dv) = dv_all.as_deref_mut() {
                        // dv[c, s] += g[c, l] · P[l, s]
                        T::gemm(c, l, s_len, T::one(), gb, (l as isize, 1), pb, (s_len as isize, 1), T::one(), &mut dv[b * c * s_len..(b + 1) * c * s_len], (s_len as isize, 1));
                    }
                    if dq_all.is_none() && dk_all.is_none() {
                        continue;
                    }
                    // dP[l, s] = g[c, l]^T · v[c, s]
                    T::gemm(l, c, s_len, T::one(), gb, (1, l as isize), vb, (s_len as isize, 1), T::zero(), &mut dp, (s_len as isize, 1));
                    for (drow, prow) in dp.chunks_mut(s_len).zip(pb.chunks(s_len)) {
                        let dotp: T = drow.iter().zip(prow).map(|(&a, &p)| a * p).sum();
                        for (d, &p) in drow.iter_mut().zip(prow) {
                            *d = p * (*d - dotp) * scale;
                        }
                    }
                    if let Some(dq) = dq_all.as_deref_mut() {
                        // dq[c, l] += k[c, s] · dS[l, s]^T
                        T::gemm(c, s_len, l, T::one(), &kd[b * c * s_len..(b + 1) * c * s_len], (s_len as isize, 1), &dp, (1, s_len as isize), T::one(), &mut dq[b * c * l..(b + 1) * c * l], (l as isize, 1));
                    }
                    if let Some(dk) = dk_all.as_deref_mut() {
                        // dk[c, s] += q[c, l] · dS[l, s]
                        T::gemm(c, l, s_len, T::one(), &qd[b * c * l..(b + 1) * c * l], (l as isize, 1), &dp, (s_len as isize, 1), T::one(), &mut dk[b * c * s_len..(b + 1) * c * s_len], (s_len as isize, 1));
                    }
                }
                for (var, g) in [(*q, dq_all), (*k, dk_all), (*v, dv_all)] {
                    if let Some(g) = g {
                        grads[var.0] = Some(g);
                    }
                }
            }
            Op::WeightedMse { pred, target, weights } => {
                let tp = &nodes[pred.0].value;
                let n = tp.shape()[0];
                let per = tp.numel() / n;
                let pd = tp.data();
                let two = T::from_f64_lossy(2.0);
                let denom = T::from_usize(n * per).unwrap();
                if let Some(d) = acc(grads, nodes, *pred) {
                    for (s, &w) in weights.iter().enumerate() {
                        let f = gy[0] * two * w / denom;
                        for p in s * per..(s + 1) * per {
                            d[p] += f * (pd[p] - target[p]);
                        }
                    }
                }
            }
            Op::Kl { mu, logvar } => {
                let n = T::from_usize(nodes[mu.0].value.shape()[0]).unwrap();
                let half = T::from_f64_lossy(0.5);
                let (md, ld) = (nodes[mu.0].value.data(), nodes[logvar.0].value.data());
                if let Some(d) = acc(grads, nodes, *mu) {
                    for (d, &m) in d.iter_mut().zip(md) {
                        *d += gy[0] * m / n;
                    }
                }
                if let Some(d) = acc(grads, nodes, *logvar) {
                    for (d, &lv) in d.iter_mut().zip(ld) {
                        *d += gy[0] * half * (lv.exp() - T::one()) / n;
                    }
                }
            }
        }
    }
}
