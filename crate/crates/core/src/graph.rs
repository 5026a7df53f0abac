//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! gradients for every tracked input and trainable parameter. A parameter that
//! is used several times in one graph (for example a shared extractor applied
//! to both LR and SR images) accumulates the contributions of every use.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::param::{Param, ParamId};
use crate::tensor::{gemm, Tensor};

/// Lower clamp applied to every logarithm argument.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    SubScalar(Var, Var),
    ChannelAffine {
        input: Var,
        scale: Vec<f64>,
    },
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    LogSigmoid(Var),
    Log(Var),
    Abs(Var),
    Mean(Var),
    Concat(Vec<Var>),
    Upsample2x(Var),
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    PadReflect {
        input: Var,
        bottom: usize,
        right: usize,
    },
    Crop {
        input: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// `None` tracks every parameter; otherwise only the listed ones.
    trainable: Option<HashSet<ParamId>>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    params: HashMap<ParamId, Tensor>,
    nodes: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn param(&self, p: &Param) -> Option<&Tensor> {
        self.params.get(&p.id())
    }

    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn contains(&self, p: &Param) -> bool {
        self.params.contains_key(&p.id())
    }

    /// Global L2 norm over all parameter gradients.
    pub fn norm(&self) -> f64 {
        let mut ids: Vec<_> = self.params.keys().copied().collect();
        ids.sort_unstable();
        ids.iter()
            .map(|id| self.params[id].data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.params.values_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
}

impl Graph {
    /// A graph in which every parameter is trainable.
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph in which only `params` receive gradients; every other
    /// parameter enters the graph as a constant.
    pub fn with_trainable(params: &[Param]) -> Self {
        Graph {
            nodes: Vec::new(),
            trainable: Some(params.iter().map(Param::id).collect()),
        }
    }

    /// A graph with no trainable parameters.
    pub fn inference() -> Self {
        Graph {
            nodes: Vec::new(),
            trainable: Some(HashSet::new()),
        }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Copies `v`'s value into a new constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn param(&mut self, p: &Param) -> Var {
        let trainable = self
            .trainable
            .as_ref()
            .is_none_or(|set| set.contains(&p.id()));
        let value = p.value().clone();
        if trainable {
            self.push(value, Op::Param(p.id()), true)
        } else {
            self.push(value, Op::Leaf, false)
        }
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (n, cin, h, w) = self.value(input).dims4()?;
        let (cout, wcin, kh, kw) = self.value(weight).dims4()?;
        if wcin != cin || kh != kw {
            return Err(Error::Shape(format!(
                "conv weight {:?} does not accept input {:?}",
                self.shape(weight),
                self.shape(input)
            )));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::Shape(format!(
                "input {}x{} too small for kernel {} with padding {}",
                h, w, kh, pad
            )));
        }
        let geom = ConvGeom::new(cin, h, w, kh, stride, pad);
        let (ho, wo) = (geom.ho, geom.wo);
        let mut out = vec![0.0; n * cout * ho * wo];
        let mut cols = vec![0.0; geom.ckk() * ho * wo];
        {
            let x = self.value(input).data();
            let wt = self.value(weight).data();
            let per_in = cin * h * w;
            let per_out = cout * ho * wo;
            for b in 0..n {
                geom.im2col(&x[b * per_in..(b + 1) * per_in], &mut cols);
                gemm(
                    wt,
                    false,
                    &cols,
                    false,
                    &mut out[b * per_out..(b + 1) * per_out],
                    cout,
                    geom.ckk(),
                    ho * wo,
                    false,
                );
            }
            if let Some(bv) = bias {
                let bd = self.value(bv).data();
                for b in 0..n {
                    for (co, &bias) in bd.iter().enumerate() {
                        let start = b * per_out + co * ho * wo;
                        for v in &mut out[start..start + ho * wo] {
                            *v += bias;
                        }
                    }
                }
            }
        }
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::new(&[n, cout, ho, wo], out)?,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// `y = x · Wᵀ + b` for `x: [N, F]`, `W: [O, F]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::Shape(format!(
                "linear weight {:?} does not accept input {:?}",
                ws, xs
            )));
        }
        let (n, f, o) = (xs[0], xs[1], ws[0]);
        let mut out = vec![0.0; n * o];
        gemm(
            self.value(input).data(),
            false,
            self.value(weight).data(),
            true,
            &mut out,
            n,
            f,
            o,
            false,
        );
        if let Some(bv) = bias {
            let bd = self.value(bv).data();
            for row in out.chunks_mut(o) {
                for (v, b) in row.iter_mut().zip(bd) {
                    *v += b;
                }
            }
        }
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::new(&[n, o], out)?,
            Op::Linear {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{}: {:?} vs {:?}",
                what,
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let t = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "sub")?;
        let t = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "mul")?;
        let t = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, factor), rg)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(t, Op::AddConst(a), rg)
    }

    /// `a − s` where `s` holds a single value broadcast over `a`.
    pub fn sub_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::Shape(format!(
                "sub_scalar expects a single value, got {:?}",
                self.shape(s)
            )));
        }
        let sv = self.scalar(s);
        let t = self.value(a).map(|x| x - sv);
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(t, Op::SubScalar(a, s), rg))
    }

    /// Per-channel `x · scale[c] + shift[c]` on an NCHW tensor.
    pub fn channel_affine(&mut self, input: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        if scale.len() != c || shift.len() != c {
            return Err(Error::Shape(format!(
                "channel_affine with {} coefficients on {} channels",
                scale.len(),
                c
            )));
        }
        let mut t = self.value(input).clone();
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            let ch = (i / (h * w)) % c;
            *v = *v * scale[ch] + shift[ch];
        }
        let _ = n;
        let rg = self.rg(input);
        Ok(self.push(
            t,
            Op::ChannelAffine {
                input,
                scale: scale.to_vec(),
            },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let t = self
            .value(a)
            .map(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(a);
        self.push(t, Op::LeakyRelu(a, slope), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(t, Op::Sigmoid(a), rg)
    }

    /// `max(ln σ(x), ln LOG_EPS)`, evaluated without forming σ(x).
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let floor = LOG_EPS.ln();
        let t = self.value(a).map(|x| log_sigmoid(x).max(floor));
        let rg = self.rg(a);
        self.push(t, Op::LogSigmoid(a), rg)
    }

    /// `ln(max(x, LOG_EPS))`.
    pub fn log(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(LOG_EPS).ln());
        let rg = self.rg(a);
        self.push(t, Op::Log(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::abs);
        let rg = self.rg(a);
        self.push(t, Op::Abs(a), rg)
    }

    /// Mean over every element, as a single-value tensor.
    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a).mean();
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Concatenation along the channel axis of NCHW tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let (n, _, h, w) = self.value(parts[0]).dims4()?;
        let mut channels = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::Shape(format!(
                    "concat of {:?} with {:?}",
                    self.shape(p),
                    self.shape(parts[0])
                )));
            }
            channels.push(pc);
        }
        let total: usize = channels.iter().sum();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total * hw);
        for b in 0..n {
            for (&p, &c) in parts.iter().zip(&channels) {
                let d = self.value(p).data();
                out.extend_from_slice(&d[b * c * hw..(b + 1) * c * hw]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(&[n, total, h, w], out)?,
            Op::Concat(parts.to_vec()),
            rg,
        ))
    }

    /// Nearest-neighbour 2× enlargement.
    pub fn upsample2x(&mut self, a: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(a).dims4()?;
        let src = self.value(a).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![0.0; n * c * h2 * w2];
        for plane in 0..n * c {
            let s = &src[plane * h * w..(plane + 1) * h * w];
            let d = &mut out[plane * h2 * w2..(plane + 1) * h2 * w2];
            for y in 0..h2 {
                for x in 0..w2 {
                    d[y * w2 + x] = s[(y / 2) * w + x / 2];
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&[n, c, h2, w2], out)?, Op::Upsample2x(a), rg))
    }

    /// 2×2 max pooling with stride 2; trailing odd rows/columns are dropped.
    pub fn max_pool2(&mut self, a: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(a).dims4()?;
        let (ho, wo) = (h / 2, w / 2);
        if ho == 0 || wo == 0 {
            return Err(Error::Shape(format!("cannot pool a {}x{} map", h, w)));
        }
        let src = self.value(a).data();
        let mut out = vec![0.0; n * c * ho * wo];
        let mut argmax = vec![0usize; out.len()];
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..ho {
                for x in 0..wo {
                    let mut best = base + 2 * y * w + 2 * x;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * y + dy) * w + 2 * x + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    let o = plane * ho * wo + y * wo + x;
                    out[o] = src[best];
                    argmax[o] = best;
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(&[n, c, ho, wo], out)?,
            Op::MaxPool2 { input: a, argmax },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Flattens `[N, ...]` to `[N, rest]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        let n = shape[0];
        let rest: usize = shape[1..].iter().product();
        self.reshape(a, &[n, rest])
    }

    /// Reflection padding on the bottom and right edges (edge pixel not
    /// repeated). Pads longer than the image keep reflecting back and forth.
    pub fn pad_reflect(&mut self, a: Var, bottom: usize, right: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(a).dims4()?;
        let (hp, wp) = (h + bottom, w + right);
        let src = self.value(a).data();
        let mut out = vec![0.0; n * c * hp * wp];
        for plane in 0..n * c {
            for y in 0..hp {
                let sy = reflect(y, h);
                for x in 0..wp {
                    out[plane * hp * wp + y * wp + x] = src[plane * h * w + sy * w + reflect(x, w)];
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(&[n, c, hp, wp], out)?,
            Op::PadReflect {
                input: a,
                bottom,
                right,
            },
            rg,
        ))
    }

    /// Keeps the top-left `h × w` window.
    pub fn crop(&mut self, a: Var, h: usize, w: usize) -> Result<Var> {
        let (n, c, ih, iw) = self.value(a).dims4()?;
        if h > ih || w > iw {
            return Err(Error::Shape(format!(
                "cannot crop {}x{} to {}x{}",
                ih, iw, h, w
            )));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(n * c * h * w);
        for plane in 0..n * c {
            for y in 0..h {
                let row = plane * ih * iw + y * iw;
                out.extend_from_slice(&src[row..row + w]);
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(&[n, c, h, w], out)?,
            Op::Crop { input: a },
            rg,
        ))
    }

    /// Records which side of every non-smooth point each recorded operation
    /// evaluated on. Two evaluations with equal signatures lie on the same
    /// smooth piece, so finite differences between them are valid.
    pub fn kink_signature(&self) -> Vec<u64> {
        let mut sig = Vec::new();
        let floor = LOG_EPS.ln();
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu(a, _) | Op::Abs(a) => {
                    pack_bits(&mut sig, self.value(*a).data().iter().map(|&x| x > 0.0))
                }
                Op::MaxPool2 { argmax, .. } => sig.extend(argmax.iter().map(|&i| i as u64)),
                Op::LogSigmoid(a) => pack_bits(
                    &mut sig,
                    self.value(*a).data().iter().map(|&x| log_sigmoid(x) > floor),
                ),
                Op::Log(a) => {
                    pack_bits(&mut sig, self.value(*a).data().iter().map(|&x| x > LOG_EPS))
                }
                _ => {}
            }
        }
        sig
    }

    /// Reverse pass from a single-value node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        let mut params: HashMap<ParamId, Tensor> = HashMap::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &gy, &mut grads)?;
            if let Op::Param(id) = node.op {
                match params.get_mut(&id) {
                    Some(acc) => acc.add_assign(&gy),
                    None => {
                        params.insert(id, gy.clone());
                    }
                }
            }
            grads[idx] = Some(gy);
        }
        // Only leaves keep gradients; intermediates are dropped.
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            params,
            nodes: grads,
        })
    }

    fn propagate(&self, node: &Node, gy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut send = |v: Var, g: Tensor| {
            if self.nodes[v.0].requires_grad {
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let x = self.value(*input);
                let wt = self.value(*weight);
                let (n, cin, h, w) = x.dims4()?;
                let (cout, _, k, _) = wt.dims4()?;
                let geom = ConvGeom::new(cin, h, w, k, *stride, *pad);
                let howo = geom.ho * geom.wo;
                let per_in = cin * h * w;
                let per_out = cout * howo;
                let gyd = gy.data();
                let need_x = self.rg(*input);
                let need_w = self.rg(*weight);
                let mut gx = vec![0.0; if need_x { x.numel() } else { 0 }];
                let mut gw = vec![0.0; if need_w { wt.numel() } else { 0 }];
                let mut cols = vec![0.0; geom.ckk() * howo];
                for b in 0..n {
                    let gyb = &gyd[b * per_out..(b + 1) * per_out];
                    if need_w {
                        geom.im2col(&x.data()[b * per_in..(b + 1) * per_in], &mut cols);
                        gemm(gyb, false, &cols, true, &mut gw, cout, howo, geom.ckk(), true);
                    }
                    if need_x {
                        gemm(wt.data(), true, gyb, false, &mut cols, geom.ckk(), cout, howo, false);
                        geom.col2im(&cols, &mut gx[b * per_in..(b + 1) * per_in]);
                    }
                }
                if need_x {
                    send(*input, Tensor::new(x.shape(), gx)?);
                }
                if need_w {
                    send(*weight, Tensor::new(wt.shape(), gw)?);
                }
                if let Some(bv) = bias {
                    let mut gb = vec![0.0; cout];
                    for b in 0..n {
                        for (co, g) in gb.iter_mut().enumerate() {
                            let s = b * per_out + co * howo;
                            *g += gyd[s..s + howo].iter().sum::<f64>();
                        }
                    }
                    send(*bv, Tensor::new(&[cout], gb)?);
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let wt = self.value(*weight);
                let (n, f) = (x.shape()[0], x.shape()[1]);
                let o = wt.shape()[0];
                if self.rg(*input) {
                    let mut gx = vec![0.0; n * f];
                    gemm(gy.data(), false, wt.data(), false, &mut gx, n, o, f, false);
                    send(*input, Tensor::new(x.shape(), gx)?);
                }
                if self.rg(*weight) {
                    let mut gw = vec![0.0; o * f];
                    gemm(gy.data(), true, x.data(), false, &mut gw, o, n, f, false);
                    send(*weight, Tensor::new(wt.shape(), gw)?);
                }
                if let Some(bv) = bias {
                    let mut gb = vec![0.0; o];
                    for row in gy.data().chunks(o) {
                        for (g, v) in gb.iter_mut().zip(row) {
                            *g += v;
                        }
                    }
                    send(*bv, Tensor::new(&[o], gb)?);
                }
            }
            Op::Add(a, b) => {
                send(*a, gy.clone());
                send(*b, gy.clone());
            }
            Op::Sub(a, b) => {
                send(*a, gy.clone());
                send(*b, gy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                send(*a, gy.zip_map(vb, |g, y| g * y));
                send(*b, gy.zip_map(va, |g, x| g * x));
            }
            Op::Scale(a, f) => send(*a, gy.map(|g| g * f)),
            Op::AddConst(a) | Op::Reshape(a) => {
                let shape = self.shape(*a).to_vec();
                send(*a, gy.clone().reshape(&shape)?);
            }
            Op::SubScalar(a, s) => {
                send(*a, gy.clone());
                send(*s, Tensor::scalar(-gy.sum()));
            }
            Op::ChannelAffine { input, scale } => {
                let (_, c, h, w) = self.value(*input).dims4()?;
                let mut g = gy.clone();
                for (i, v) in g.data_mut().iter_mut().enumerate() {
                    *v *= scale[(i / (h * w)) % c];
                }
                send(*input, g);
            }
            Op::LeakyRelu(a, slope) => {
                send(
                    *a,
                    gy.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { g * slope }),
                );
            }
            Op::Sigmoid(a) => {
                send(*a, gy.zip_map(&node.value, |g, s| g * s * (1.0 - s)));
            }
            Op::LogSigmoid(a) => {
                let floor = LOG_EPS.ln();
                send(
                    *a,
                    gy.zip_map(self.value(*a), |g, x| {
                        if log_sigmoid(x) > floor {
                            g * sigmoid(-x)
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::Log(a) => {
                send(
                    *a,
                    gy.zip_map(self.value(*a), |g, x| if x > LOG_EPS { g / x } else { 0.0 }),
                );
            }
            Op::Abs(a) => {
                send(
                    *a,
                    gy.zip_map(self.value(*a), |g, x| {
                        if x > 0.0 {
                            g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::Mean(a) => {
                let shape = self.shape(*a);
                let numel: usize = shape.iter().product();
                let g = gy.data()[0] / numel as f64;
                send(*a, Tensor::full(shape, g));
            }
            Op::Concat(parts) => {
                let (n, total, h, w) = gy.dims4()?;
                let hw = h * w;
                let gyd = gy.data();
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    if self.rg(p) {
                        let mut g = Vec::with_capacity(n * c * hw);
                        for b in 0..n {
                            let s = (b * total + offset) * hw;
                            g.extend_from_slice(&gyd[s..s + c * hw]);
                        }
                        send(p, Tensor::new(&[n, c, h, w], g)?);
                    }
                    offset += c;
                }
            }
            Op::Upsample2x(a) => {
                let (n, c, h, w) = self.value(*a).dims4()?;
                let w2 = 2 * w;
                let gyd = gy.data();
                let mut g = vec![0.0; n * c * h * w];
                for plane in 0..n * c {
                    let src = &gyd[plane * 4 * h * w..(plane + 1) * 4 * h * w];
                    for y in 0..h {
                        for x in 0..w {
                            let top = 2 * y * w2 + 2 * x;
                            g[plane * h * w + y * w + x] =
                                src[top] + src[top + 1] + src[top + w2] + src[top + w2 + 1];
                        }
                    }
                }
                send(*a, Tensor::new(self.shape(*a), g)?);
            }
            Op::MaxPool2 { input, argmax } => {
                let mut g = Tensor::zeros(self.shape(*input));
                let gd = g.data_mut();
                for (&src, &v) in argmax.iter().zip(gy.data()) {
                    gd[src] += v;
                }
                send(*input, g);
            }
            Op::PadReflect {
                input,
                bottom,
                right,
            } => {
                let (n, c, h, w) = self.value(*input).dims4()?;
                let (hp, wp) = (h + bottom, w + right);
                let gyd = gy.data();
                let mut g = vec![0.0; n * c * h * w];
                for plane in 0..n * c {
                    for y in 0..hp {
                        let sy = reflect(y, h);
                        for x in 0..wp {
                            g[plane * h * w + sy * w + reflect(x, w)] +=
                                gyd[plane * hp * wp + y * wp + x];
                        }
                    }
                }
                send(*input, Tensor::new(&[n, c, h, w], g)?);
            }
            Op::Crop { input } => {
                let (n, c, ih, iw) = self.value(*input).dims4()?;
                let (_, _, h, w) = gy.dims4()?;
                let gyd = gy.data();
                let mut g = vec![0.0; n * c * ih * iw];
                for plane in 0..n * c {
                    for y in 0..h {
                        let dst = plane * ih * iw + y * iw;
                        let src = plane * h * w + y * w;
                        g[dst..dst + w].copy_from_slice(&gyd[src..src + w]);
                    }
                }
                send(*input, Tensor::new(&[n, c, ih, iw], g)?);
            }
        }
        Ok(())
    }
}

fn pack_bits(sig: &mut Vec<u64>, bits: impl Iterator<Item = bool>) {
    let mut word = 0u64;
    let mut count = 0;
    for b in bits {
        word = (word << 1) | b as u64;
        count += 1;
        if count == 64 {
            sig.push(word);
            word = 0;
            count = 0;
        }
    }
    sig.push(word);
}

/// Index into `0..n` under repeated edge-excluding reflection.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x) = −softplus(−x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        ConvGeom {
            cin,
            h,
            w,
            k,
            stride,
            pad,
            ho,
            wo,
        }
    }

    fn ckk(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let howo = self.ho * self.wo;
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = ((ci * self.k + ky) * self.k + kx) * howo;
                    let dst = &mut cols[row..row + howo];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let out_row = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            out_row.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], x: &mut [f64]) {
        let howo = self.ho * self.wo;
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = ((ci * self.k + ky) * self.k + kx) * howo;
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            x[ci * self.h * self.w + iy as usize * self.w + ix as usize] +=
                                cols[row + oy * self.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_inputs, GradCheck};

    fn ramp(shape: &[usize], phase: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(
            shape,
            (0..n).map(|i| ((i as f64) * 0.37 + phase).sin()).collect(),
        )
        .unwrap()
    }

    /// Naive direct convolution used as an oracle.
    fn conv_naive(x: &Tensor, w: &Tensor, b: &[f64], stride: usize, pad: usize) -> Tensor {
        let (n, cin, h, wd) = x.dims4().unwrap();
        let (cout, _, k, _) = w.dims4().unwrap();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; n * cout * ho * wo];
        for bi in 0..n {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[co];
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += w.data()[((co * cin + ci) * k + ky) * k + kx]
                                        * x.data()[((bi * cin + ci) * h + iy as usize) * wd
                                            + ix as usize];
                                }
                            }
                        }
                        out[((bi * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        Tensor::new(&[n, cout, ho, wo], out).unwrap()
    }

    #[test]
    fn conv_matches_direct_sum() {
        for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 0)] {
            let x = ramp(&[2, 3, 7, 6], 0.1);
            let w = ramp(&[4, 3, 3, 3], 0.7);
            let b = vec![0.1, -0.2, 0.3, 0.0];
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let wv = g.constant(w.clone());
            let bv = g.constant(Tensor::new(&[4], b.clone()).unwrap());
            let y = g.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
            let expected = conv_naive(&x, &w, &b, stride, pad);
            assert_eq!(g.shape(y), expected.shape());
            assert!(g.value(y).max_abs_diff(&expected) < 1e-12);
        }
    }

    #[test]
    fn op_gradients_match_finite_differences() {
        let cases: Vec<(&str, Box<dyn Fn(&mut Graph, &[Var]) -> Var>, Vec<Tensor>)> = vec![
            (
                "conv_stride2",
                Box::new(|g, v| {
                    let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1).unwrap();
                    let y = g.leaky_relu(y, 0.2);
                    let y = g.mul(y, y).unwrap();
                    g.mean(y)
                }),
                vec![ramp(&[2, 2, 5, 4], 0.3), ramp(&[3, 2, 3, 3], 1.1), ramp(&[3], 0.2)],
            ),
            (
                "linear",
                Box::new(|g, v| {
                    let y = g.linear(v[0], v[1], Some(v[2])).unwrap();
                    let y = g.sigmoid(y);
                    g.mean(y)
                }),
                vec![ramp(&[3, 5], 0.0), ramp(&[2, 5], 0.5), ramp(&[2], 0.9)],
            ),
            (
                "pool_upsample_concat",
                Box::new(|g, v| {
                    let p = g.max_pool2(v[0]).unwrap();
                    let u = g.upsample2x(p).unwrap();
                    let c = g.concat(&[u, v[0]]).unwrap();
                    let c = g.mul(c, c).unwrap();
                    g.mean(c)
                }),
                vec![ramp(&[1, 2, 4, 6], 0.4)],
            ),
            (
                "pad_crop",
                Box::new(|g, v| {
                    let p = g.pad_reflect(v[0], 2, 1).unwrap();
                    let s = g.mul(p, p).unwrap();
                    let c = g.crop(s, 4, 3).unwrap();
                    let c = g.scale(c, 1.5);
                    g.mean(c)
                }),
                vec![ramp(&[1, 2, 3, 4], 0.2)],
            ),
            (
                "logs_and_scalars",
                Box::new(|g, v| {
                    let m = g.mean(v[1]);
                    let d = g.sub_scalar(v[0], m).unwrap();
                    let l = g.log_sigmoid(d);
                    let s = g.sigmoid(v[0]);
                    let one_minus = g.scale(s, -1.0);
                    let one_minus = g.add_const(one_minus, 1.0);
                    let lg = g.log(one_minus);
                    let a = g.abs(v[1]);
                    let t = g.add(l, lg).unwrap();
                    let t = g.sub(t, a).unwrap();
                    g.mean(t)
                }),
                vec![ramp(&[4], 0.3), ramp(&[4], 2.0)],
            ),
            (
                "channel_affine_reshape",
                Box::new(|g, v| {
                    let a = g.channel_affine(v[0], &[2.0, -0.5], &[0.1, 0.3]).unwrap();
                    let f = g.flatten(a).unwrap();
                    let f = g.mul(f, f).unwrap();
                    g.mean(f)
                }),
                vec![ramp(&[2, 2, 2, 2], 0.8)],
            ),
        ];
        for (name, build, inputs) in cases {
            let report = check_inputs(&build, &inputs, &GradCheck::default());
            assert!(report.passed(), "{}: {:?}", name, report);
        }
    }

    #[test]
    fn repeated_param_accumulates() {
        let p = Param::new("w", Tensor::new(&[2], vec![1.5, -2.0]).unwrap());
        let mut g = Graph::new();
        let a = g.param(&p);
        let b = g.param(&p);
        let y = g.mul(a, b).unwrap();
        let loss = g.mean(y);
        let grads = g.backward(loss).unwrap();
        // d/dw mean(w²) = w
        assert_eq!(grads.param(&p).unwrap().data(), &[1.5, -2.0]);
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let p = Param::new("w", Tensor::scalar(2.0));
        let q = Param::new("v", Tensor::scalar(3.0));
        let mut g = Graph::with_trainable(std::slice::from_ref(&q));
        let a = g.param(&p);
        let b = g.param(&q);
        let y = g.mul(a, b).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.param(&p).is_none());
        assert_eq!(grads.param(&q).unwrap().data(), &[2.0]);
    }

    #[test]
    fn log_sigmoid_is_stable_and_clamped() {
        assert!((log_sigmoid(0.0) - 0.5f64.ln()).abs() < 1e-15);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(-1e4));
        let y = g.log_sigmoid(x);
        assert_eq!(g.scalar(y), LOG_EPS.ln());
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.0]);
    }
}
