//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! copied in on first use, so a graph stays valid while the store it was
//! built from is updated. One graph is built per sample.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, Padding};
use crate::params::{ParamId, ParamStore, Side};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

/// Which parameters receive gradients in a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    None,
    Only(Side),
    All,
}

impl Trainable {
    fn includes(self, side: Side) -> bool {
        match self {
            Trainable::None => false,
            Trainable::Only(s) => s == side,
            Trainable::All => true,
        }
    }
}

enum Op<T> {
    Leaf,
    Param,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    LeakyRelu(Var, T),
    Tanh(Var),
    Softplus(Var),
    AvgPool2(Var),
    Upsample2(Var),
    InstanceNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    GlobalAvgPool(Var),
    Modulate {
        w: Var,
        s: Var,
    },
    Demodulate {
        w: Var,
        norms: Vec<T>,
    },
    Mse(Var, Var),
    Mean(Var),
    Sum(Var),
    Dot(Var, Var),
    Reshape(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<ParamId, Var>,
    trainable: Trainable,
}

impl<T: Scalar> Graph<T> {
    pub fn new(trainable: Trainable) -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            trainable,
        }
    }

    /// Graph in which nothing is differentiated.
    pub fn inference() -> Self {
        Self::new(Trainable::None)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is reported by [`Grads::wrt`].
    pub fn input_with_grad(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Stop-gradient copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.input(t)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.param(id);
        let ng = self.trainable.includes(p.side);
        let v = self.push(p.value.clone(), Op::Param, ng);
        self.params.insert(id, v);
        v
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        self.conv2d_padded(x, w, b, stride, pad, Padding::Zero)
    }

    pub fn conv2d_padded(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        padding: Padding,
    ) -> Result<Var> {
        let (cin, h, wd) = self.value(x).dims3()?;
        let ws = self.shape(w).to_vec();
        let [cout, wcin, k, k2] = ws[..] else {
            return Err(Error::shape(format!(
                "conv weight must be rank 4, got {ws:?}"
            )));
        };
        if wcin != cin || k != k2 {
            return Err(Error::shape(format!(
                "conv weight {ws:?} vs input channels {cin}"
            )));
        }
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::shape(format!(
                "input {h}x{wd} smaller than kernel {k}"
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::shape(format!(
                    "conv bias {:?} vs {cout}",
                    self.shape(b)
                )));
            }
        }
        let geom = ConvGeom {
            cin,
            h,
            w: wd,
            k,
            stride,
            pad,
            padding,
        };
        let (ho, wo) = geom.out_hw();
        let y = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            cout,
            &geom,
        );
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        let t = Tensor::new([cout, ho, wo], y)?;
        Ok(self.push(t, Op::Conv2d { x, w, b, geom }, ng))
    }

    /// `w x + b` with `w` of shape `[m, n]` and `x` holding `n` elements.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        let [m, n] = ws[..] else {
            return Err(Error::shape(format!(
                "linear weight must be rank 2, got {ws:?}"
            )));
        };
        if self.value(x).numel() != n {
            return Err(Error::shape(format!(
                "linear weight {ws:?} applied to {:?}",
                self.shape(x)
            )));
        }
        let mut y = match b {
            Some(b) => {
                if self.shape(b) != [m] {
                    return Err(Error::shape(format!(
                        "linear bias {:?} vs {m}",
                        self.shape(b)
                    )));
                }
                self.value(b).data().to_vec()
            }
            None => vec![T::zero(); m],
        };
        T::gemm(
            m,
            n,
            1,
            self.value(w).data(),
            false,
            self.value(x).data(),
            false,
            T::one(),
            &mut y,
        );
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(Tensor::new([m], y)?, Op::Linear { x, w, b }, ng))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let t = self.value(a).zip_map(self.value(b), f)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a).scale(s);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, s), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let t = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { x * slope });
        let ng = self.ng(a);
        self.push(t, Op::LeakyRelu(a, slope), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(T::tanh);
        let ng = self.ng(a);
        self.push(t, Op::Tanh(a), ng)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let t = self.value(a).map(softplus);
        let ng = self.ng(a);
        self.push(t, Op::Softplus(a), ng)
    }

    pub fn avg_pool2(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = self.value(a).dims3()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!(
                "avg_pool2 needs even size, got {h}x{w}"
            )));
        }
        let y = kernels::avg_pool2(self.value(a).data(), c, h, w);
        let ng = self.ng(a);
        Ok(self.push(Tensor::new([c, h / 2, w / 2], y)?, Op::AvgPool2(a), ng))
    }

    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = self.value(a).dims3()?;
        let y = kernels::upsample2(self.value(a).data(), c, h, w);
        let ng = self.ng(a);
        Ok(self.push(Tensor::new([c, 2 * h, 2 * w], y)?, Op::Upsample2(a), ng))
    }

    /// Per-channel normalization to zero mean and unit (biased) variance.
    pub fn instance_norm(&mut self, a: Var, eps: T) -> Result<Var> {
        let (c, h, w) = self.value(a).dims3()?;
        let plane = h * w;
        let m = T::from_usize(plane).unwrap();
        let x = self.value(a).data();
        let mut y = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(c);
        for (src, dst) in x.chunks(plane).zip(y.chunks_mut(plane)) {
            let mean = src.iter().copied().sum::<T>() / m;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
            let inv = T::one() / (var + eps).sqrt();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * inv;
            }
            inv_std.push(inv);
        }
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::new([c, h, w], y)?,
            Op::InstanceNorm { x: a, inv_std },
            ng,
        ))
    }

    /// `[C, H, W] -> [C]`
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = self.value(a).dims3()?;
        let m = T::from_usize(h * w).unwrap();
        let y: Vec<T> = self
            .value(a)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<T>() / m)
            .collect();
        let ng = self.ng(a);
        Ok(self.push(Tensor::new([c], y)?, Op::GlobalAvgPool(a), ng))
    }

    /// Scale input channel `i` of every filter in `w: [O, I, K, K]` by `s[i]`.
    pub fn modulate(&mut self, w: Var, s: Var) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        let [o, i, k, k2] = ws[..] else {
            return Err(Error::shape(format!(
                "filter bank must be rank 4, got {ws:?}"
            )));
        };
        if self.shape(s) != [i] {
            return Err(Error::shape(format!(
                "scale vector {:?} vs {i} input channels",
                self.shape(s)
            )));
        }
        let kk = k * k2;
        let sv = self.value(s).data();
        let wv = self.value(w).data();
        let mut y = vec![T::zero(); wv.len()];
        for oi in 0..o {
            for ii in 0..i {
                let base = (oi * i + ii) * kk;
                for j in 0..kk {
                    y[base + j] = wv[base + j] * sv[ii];
                }
            }
        }
        let ng = self.ng(w) || self.ng(s);
        Ok(self.push(Tensor::new(ws, y)?, Op::Modulate { w, s }, ng))
    }

    /// Rescale every output filter to unit L2 norm: `w / sqrt(sum w^2 + eps)`.
    pub fn demodulate(&mut self, w: Var, eps: T) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 {
            return Err(Error::shape(format!(
                "filter bank must be rank 4, got {ws:?}"
            )));
        }
        let per = ws[1] * ws[2] * ws[3];
        let wv = self.value(w).data();
        let mut y = vec![T::zero(); wv.len()];
        let mut norms = Vec::with_capacity(ws[0]);
        for (src, dst) in wv.chunks(per).zip(y.chunks_mut(per)) {
            let n = (src.iter().map(|&v| v * v).sum::<T>() + eps).sqrt();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s / n;
            }
            norms.push(n);
        }
        let ng = self.ng(w);
        Ok(self.push(Tensor::new(ws, y)?, Op::Demodulate { w, norms }, ng))
    }

    /// Mean squared difference, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).check_same(self.value(b))?;
        let n = T::from_usize(self.value(a).numel()).unwrap();
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>()
            / n;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar(s), Op::Mse(a, b), ng))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let s = self.value(a).mean();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).numel() != self.value(b).numel() {
            return Err(Error::shape(format!(
                "dot of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .sum::<T>();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape.to_vec())?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Reshape(a), ng))
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Grads<T>> {
        self.backward_seeded(root, T::one())
    }

    pub fn backward_seeded(&self, root: Var, seed: T) -> Result<Grads<T>> {
        if self.value(root).numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar root, got {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.shape(root).to_vec(), seed));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf | Op::Param) {
                grads[i] = Some(g);
            }
        }
        let params = self
            .params
            .iter()
            .filter_map(|(&id, &v)| grads.get(v.0).and_then(|g| g.clone()).map(|g| (id, g)))
            .collect();
        Ok(Grads { grads, params })
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let shape_of = |v: Var| self.shape(v).to_vec();
        let mk =
            |shape: Vec<usize>, data: Vec<T>| Tensor::new(shape, data).expect("gradient shape");
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Conv2d { x, w, b, geom } => {
                let cout = self.shape(*w)[0];
                let r = kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g.data(),
                    cout,
                    geom,
                    self.ng(*x),
                    self.ng(*w),
                    b.is_some_and(|b| self.ng(b)),
                );
                if let Some(dx) = r.dx {
                    self.acc(grads, *x, mk(shape_of(*x), dx));
                }
                if let Some(dw) = r.dw {
                    self.acc(grads, *w, mk(shape_of(*w), dw));
                }
                if let (Some(b), Some(db)) = (b, r.db) {
                    self.acc(grads, *b, mk(shape_of(*b), db));
                }
            }
            Op::Linear { x, w, b } => {
                let (m, n) = (self.shape(*w)[0], self.shape(*w)[1]);
                if self.ng(*w) {
                    let mut dw = vec![T::zero(); m * n];
                    T::gemm(
                        m,
                        1,
                        n,
                        g.data(),
                        false,
                        self.value(*x).data(),
                        false,
                        T::zero(),
                        &mut dw,
                    );
                    self.acc(grads, *w, mk(vec![m, n], dw));
                }
                if self.ng(*x) {
                    let mut dx = vec![T::zero(); n];
                    T::gemm(
                        n,
                        m,
                        1,
                        self.value(*w).data(),
                        true,
                        g.data(),
                        false,
                        T::zero(),
                        &mut dx,
                    );
                    self.acc(grads, *x, mk(shape_of(*x), dx));
                }
                if let Some(b) = b {
                    self.acc(grads, *b, g.clone());
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.acc(grads, *a, g.zip_map(self.value(*b), |x, y| x * y).unwrap());
                }
                if self.ng(*b) {
                    self.acc(grads, *b, g.zip_map(self.value(*a), |x, y| x * y).unwrap());
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, g.scale(*s)),
            Op::LeakyRelu(a, slope) => {
                let d = g
                    .zip_map(
                        self.value(*a),
                        |gv, x| if x > T::zero() { gv } else { gv * *slope },
                    )
                    .unwrap();
                self.acc(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = g
                    .zip_map(&node.value, |gv, y| gv * (T::one() - y * y))
                    .unwrap();
                self.acc(grads, *a, d);
            }
            Op::Softplus(a) => {
                let d = g.zip_map(self.value(*a), |gv, x| gv * sigmoid(x)).unwrap();
                self.acc(grads, *a, d);
            }
            Op::AvgPool2(a) => {
                let (c, h, w) = self.value(*a).dims3().unwrap();
                let dx = kernels::avg_pool2_backward(g.data(), c, h, w);
                self.acc(grads, *a, mk(vec![c, h, w], dx));
            }
            Op::Upsample2(a) => {
                let (c, h, w) = self.value(*a).dims3().unwrap();
                let dx = kernels::upsample2_backward(g.data(), c, h, w);
                self.acc(grads, *a, mk(vec![c, h, w], dx));
            }
            Op::InstanceNorm { x, inv_std } => {
                let (c, h, w) = self.value(*x).dims3().unwrap();
                let plane = h * w;
                let m = T::from_usize(plane).unwrap();
                let y = node.value.data();
                let mut dx = vec![T::zero(); c * plane];
                for ch in 0..c {
                    let r = ch * plane..(ch + 1) * plane;
                    let gy = &g.data()[r.clone()];
                    let yy = &y[r.clone()];
                    let sg: T = gy.iter().copied().sum();
                    let sgy: T = gy.iter().zip(yy).map(|(&a, &b)| a * b).sum();
                    let scale = inv_std[ch] / m;
                    for (j, d) in dx[r].iter_mut().enumerate() {
                        *d = scale * (m * gy[j] - sg - yy[j] * sgy);
                    }
                }
                self.acc(grads, *x, mk(vec![c, h, w], dx));
            }
            Op::GlobalAvgPool(a) => {
                let (c, h, w) = self.value(*a).dims3().unwrap();
                let m = T::from_usize(h * w).unwrap();
                let mut dx = Vec::with_capacity(c * h * w);
                for &gv in g.data() {
                    dx.extend(std::iter::repeat_n(gv / m, h * w));
                }
                self.acc(grads, *a, mk(vec![c, h, w], dx));
            }
            Op::Modulate { w, s } => {
                let ws = shape_of(*w);
                let (o, i, kk) = (ws[0], ws[1], ws[2] * ws[3]);
                let sv = self.value(*s).data();
                let wv = self.value(*w).data();
                let gd = g.data();
                if self.ng(*w) {
                    let mut dw = vec![T::zero(); wv.len()];
                    for oi in 0..o {
                        for ii in 0..i {
                            let base = (oi * i + ii) * kk;
                            for j in 0..kk {
                                dw[base + j] = gd[base + j] * sv[ii];
                            }
                        }
                    }
                    self.acc(grads, *w, mk(ws.clone(), dw));
                }
                if self.ng(*s) {
                    let mut ds = vec![T::zero(); i];
                    for oi in 0..o {
                        for (ii, d) in ds.iter_mut().enumerate() {
                            let base = (oi * i + ii) * kk;
                            for j in 0..kk {
                                *d += gd[base + j] * wv[base + j];
                            }
                        }
                    }
                    self.acc(grads, *s, mk(vec![i], ds));
                }
            }
            Op::Demodulate { w, norms } => {
                let ws = shape_of(*w);
                let per = ws[1] * ws[2] * ws[3];
                let y = node.value.data();
                let mut dw = vec![T::zero(); y.len()];
                for (oi, &n) in norms.iter().enumerate() {
                    let r = oi * per..(oi + 1) * per;
                    let gy = &g.data()[r.clone()];
                    let yy = &y[r.clone()];
                    let proj: T = gy.iter().zip(yy).map(|(&a, &b)| a * b).sum();
                    for (j, d) in dw[r].iter_mut().enumerate() {
                        *d = (gy[j] - yy[j] * proj) / n;
                    }
                }
                self.acc(grads, *w, mk(ws, dw));
            }
            Op::Mse(a, b) => {
                let n = T::from_usize(self.value(*a).numel()).unwrap();
                let k = g.item() * T::from_f64_lossy(2.0) / n;
                let d = self
                    .value(*a)
                    .zip_map(self.value(*b), |x, y| (x - y) * k)
                    .unwrap();
                if self.ng(*b) {
                    self.acc(grads, *b, d.map(|v| -v));
                }
                self.acc(grads, *a, d);
            }
            Op::Mean(a) => {
                let n = T::from_usize(self.value(*a).numel()).unwrap();
                self.acc(grads, *a, Tensor::full(shape_of(*a), g.item() / n));
            }
            Op::Sum(a) => self.acc(grads, *a, Tensor::full(shape_of(*a), g.item())),
            Op::Dot(a, b) => {
                let gv = g.item();
                if self.ng(*a) {
                    let d = self.value(*b).scale(gv).reshape(shape_of(*a)).unwrap();
                    self.acc(grads, *a, d);
                }
                if self.ng(*b) {
                    let d = self.value(*a).scale(gv).reshape(shape_of(*b)).unwrap();
                    self.acc(grads, *b, d);
                }
            }
            Op::Reshape(a) => self.acc(grads, *a, g.clone().reshape(shape_of(*a)).unwrap()),
        }
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Result of a reverse pass.
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient with respect to an input created by [`Graph::input_with_grad`]
    /// or a trainable parameter node.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn params(&self) -> &[(ParamId, Tensor<T>)] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }
}

/// Parameter gradients summed over several graphs.
#[derive(Clone, Debug, Default)]
pub struct GradBuffer<T> {
    slots: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> GradBuffer<T> {
    pub fn new() -> Self {
        Self {
            slots: BTreeMap::new(),
        }
    }

    pub fn accumulate(&mut self, grads: &Grads<T>, scale: T) {
        for (id, g) in grads.params() {
            self.add(*id, g, scale);
        }
    }

    /// Add `scale * grad` to the slot for `id`.
    pub fn add(&mut self, id: ParamId, grad: &Tensor<T>, scale: T) {
        match self.slots.get_mut(&id) {
            Some(slot) => slot.axpy(scale, grad),
            None => {
                self.slots.insert(id, grad.scale(scale));
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.slots.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.slots.iter().map(|(id, t)| (*id, t))
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}
