//! Reverse-mode differentiation over real-valued arrays.
//!
//! The graph is define-by-run: every op evaluates eagerly when pushed, so node
//! ids are already a topological order and `backward` is a single reverse
//! sweep that visits each node exactly once. Complex-valued ops (convolution,
//! modReLU, phase renormalization) appear as fused nodes over packed
//! `[..., re|im]` arrays and differentiate through their (re, im)
//! decomposition, which is exact for the real-valued reconstruction loss.
//!
//! Convolution nodes do not retain their im2col expansion; the backward pass
//! re-expands into a scratch buffer. This trades ~10% extra copies for a
//! several-fold reduction in peak memory, which is what bounds batch size
//! here.
//!
//! Subgradient conventions at kinks: `ReLU'(0) = 0` and the derivative of
//! `|y|` at `y = 0` is 0 in both components.

use crate::ctensor::raw::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::real::{par_gemm, MatRef, Real};
use crate::tensor::Tensor;

/// Handle to a parameter registered in a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// One trainable array plus its gradient accumulator and Adam moments.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    m: Tensor<T>,
    v: Tensor<T>,
}

/// Named trainable arrays with their Adam state and a shared step counter.
#[derive(Debug, Clone)]
pub struct ParameterStore<T> {
    params: Vec<Param<T>>,
    step: u64,
}

impl<T: Real> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore { params: Vec::new(), step: 0 }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let shape = value.shape().to_vec();
        self.params.push(Param {
            name: name.into(),
            value,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(T::zero());
        }
    }

    /// Total number of real-valued scalars across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params.iter().map(|p| p.grad.sq_norm()).sum::<f64>().sqrt()
    }

    fn accumulate_grad(&mut self, id: ParamId, g: &[T]) {
        let dst = self.params[id.0].grad.data_mut();
        for (d, s) in dst.iter_mut().zip(g) {
            *d += *s;
        }
    }

    /// Scale all gradients by `factor`.
    pub fn scale_grads(&mut self, factor: T) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g *= factor;
            }
        }
    }
}

/// Adam hyperparameters. Defaults follow the optimizer's standard constants;
/// the learning rate matches the training protocol's constant 5e-4.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub clip_norm: Option<T>,
}

impl<T: Real> Default for AdamConfig<T> {
    fn default() -> Self {
        AdamConfig {
            lr: T::from_f64(5e-4),
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            clip_norm: Some(T::one()),
        }
    }
}

/// Clip the global gradient norm to `clip`; returns the applied scale (1.0
/// when no clipping was needed). Clipping preserves gradient direction.
pub fn clip_global_norm<T: Real>(store: &mut ParameterStore<T>, clip: T) -> T {
    let norm = store.grad_norm();
    let clip_f = clip.to_f64_lossy();
    if norm > clip_f && norm > 0.0 {
        let scale = T::from_f64(clip_f / norm);
        store.scale_grads(scale);
        scale
    } else {
        T::one()
    }
}

/// One bias-corrected Adam update over every parameter, with global-norm
/// clipping applied first. Non-finite gradients abort the step untouched.
pub fn adam_step<T: Real>(store: &mut ParameterStore<T>, cfg: &AdamConfig<T>) -> Result<()> {
    for p in &store.params {
        if !p.grad.all_finite() {
            return Err(Error::numeric(format!("non-finite gradient in parameter '{}'", p.name)));
        }
    }
    if let Some(clip) = cfg.clip_norm {
        clip_global_norm(store, clip);
    }
    store.step += 1;
    let t = store.step as i32;
    let bc1 = T::one() - cfg.beta1.powi(t);
    let bc2 = T::one() - cfg.beta2.powi(t);
    for p in &mut store.params {
        let g = p.grad.data();
        let m = p.m.data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = cfg.beta1 * *mi + (T::one() - cfg.beta1) * *gi;
        }
        let v = p.v.data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = cfg.beta2 * *vi + (T::one() - cfg.beta2) * *gi * *gi;
        }
        let (m, v) = (p.m.data(), p.v.data());
        let w = p.value.data_mut();
        for i in 0..w.len() {
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] = w[i] - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Reusable buffers for the conv im2col expansions, recycled across graphs.
#[derive(Debug, Default)]
pub struct ScratchPool<T> {
    bufs: Vec<Vec<T>>,
}

impl<T: Real> ScratchPool<T> {
    pub fn new() -> Self {
        ScratchPool { bufs: Vec::new() }
    }

    /// A buffer of exactly `len` elements with unspecified contents; callers
    /// must fully overwrite it. Picks the smallest adequate pooled buffer so
    /// large ones stay available for the conv expansions.
    fn take(&mut self, len: usize) -> Vec<T> {
        let mut best: Option<(usize, usize)> = None;
        for (i, b) in self.bufs.iter().enumerate() {
            let cap = b.capacity();
            if cap >= len && best.is_none_or(|(_, c)| cap < c) {
                best = Some((i, cap));
            }
        }
        let mut buf = match best {
            Some((i, _)) => self.bufs.swap_remove(i),
            None => Vec::with_capacity(len),
        };
        buf.resize(len, T::zero());
        buf.truncate(len);
        buf
    }

    fn put(&mut self, buf: Vec<T>) {
        // Large enough for every expansion of a full rollout to round-trip.
        if self.bufs.len() < 32 {
            self.bufs.push(buf);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Const,
    Param(ParamId),
    /// Forward identity, no gradient flow.
    Detach,
    /// Fused complex convolution of a packed map with a complex kernel pair.
    Conv { x: NodeId, kre_node: NodeId, kim_node: NodeId, geom: ConvGeom },
    ModRelu { x: NodeId, bias: NodeId, channels: usize },
    Magnitude { x: NodeId, channels: usize },
    /// `out = mag ⊙ x/|x|` with constant clamp magnitudes.
    Renorm { x: NodeId, mag: Tensor<T>, channels: usize },
    Upsample2x { x: NodeId, batch: usize, h: usize, w: usize, row: usize },
    CenterCrop { x: NodeId, batch: usize, h: usize, w: usize, row: usize, out_h: usize, out_w: usize },
    /// Scalar mean of squared difference against a constant target.
    MseAgainst { x: NodeId, target: Tensor<T> },
    AddN { xs: Vec<NodeId> },
    Scale { x: NodeId, factor: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Define-by-run computation graph.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    scratch: ScratchPool<T>,
    /// im2col expansions retained by tracked conv nodes for their backward
    /// pass, keyed by node index.
    conv_cols: std::collections::HashMap<usize, Vec<T>>,
    /// When false, parameters enter as plain constants: no gradients flow and
    /// conv nodes do not retain their expansions.
    track: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), scratch: ScratchPool::new(), conv_cols: Default::default(), track: true }
    }

    /// A graph for forward evaluation only: leaner, but `backward` on it is
    /// a no-op for parameters.
    pub fn inference() -> Self {
        Graph { nodes: Vec::new(), scratch: ScratchPool::new(), conv_cols: Default::default(), track: false }
    }

    /// A graph reusing the scratch buffers of a finished one.
    pub fn with_scratch(scratch: ScratchPool<T>) -> Self {
        Graph { nodes: Vec::new(), scratch, conv_cols: Default::default(), track: true }
    }

    /// Recover the scratch buffers for the next step's graph.
    pub fn into_scratch(self) -> ScratchPool<T> {
        self.scratch
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Const, false)
    }

    /// Leaf referencing a stored parameter; the same parameter always maps to
    /// the same node so shared weights accumulate gradients across uses.
    pub fn param(&mut self, store: &ParameterStore<T>, id: ParamId) -> NodeId {
        for (i, n) in self.nodes.iter().enumerate() {
            if let Op::Param(pid) = n.op {
                if pid == id {
                    return NodeId(i);
                }
            }
        }
        let track = self.track;
        self.push(store.value(id).clone(), Op::Param(id), track)
    }

    /// Forward copy of a node with the gradient path cut.
    pub fn detach(&mut self, src: NodeId) -> NodeId {
        let value = self.value(src).clone();
        self.push(value, Op::Detach, false)
    }

    /// Complex convolution of a packed `[B, H, W, 2*Cin]` node with the
    /// kernel parameter pair, producing `[B, OH, OW, 2*Cout]`.
    pub fn complex_conv(
        &mut self,
        store: &ParameterStore<T>,
        x: NodeId,
        kre: ParamId,
        kim: ParamId,
        geom: ConvGeom,
    ) -> NodeId {
        let kre_node = self.param(store, kre);
        let kim_node = self.param(store, kim);
        let r = geom.kh * geom.kw * geom.in_c;
        let cout = self.value(kre_node).len() / r;
        debug_assert_eq!(self.value(kre_node).len(), r * cout);
        debug_assert_eq!(self.value(x).len(), geom.input_len());

        let mut col = self.scratch.take(geom.rows() * geom.col_width());
        raw::im2col(self.value(x).data(), &geom, &mut col);
        let mut packed = self.scratch.take(4 * r * cout);
        raw::pack_kernel(self.value(kre_node).data(), self.value(kim_node).data(), r, cout, &mut packed);
        let mut out = vec![T::zero(); geom.rows() * 2 * cout];
        par_gemm(
            geom.rows(),
            2 * r,
            2 * cout,
            MatRef::row_major(&col, 2 * r),
            MatRef::row_major(&packed, 2 * cout),
            &mut out,
        );
        self.scratch.put(packed);

        let value = Tensor::from_vec(&[geom.batch, geom.out_h, geom.out_w, 2 * cout], out);
        let needs = self.needs(x) || self.needs(kre_node) || self.needs(kim_node);
        let id = self.push(value, Op::Conv { x, kre_node, kim_node, geom }, needs);
        if needs {
            // Keep the expansion for the backward pass instead of redoing it.
            self.conv_cols.insert(id.0, col);
        } else {
            self.scratch.put(col);
        }
        id
    }

    pub fn mod_relu(&mut self, x: NodeId, bias: NodeId, channels: usize) -> NodeId {
        let mut out = vec![T::zero(); self.value(x).len()];
        raw::modrelu_fwd(self.value(x).data(), self.value(bias).data(), channels, &mut out);
        let value = Tensor::from_vec(self.value(x).shape(), out);
        let needs = self.needs(x) || self.needs(bias);
        self.push(value, Op::ModRelu { x, bias, channels }, needs)
    }

    /// Elementwise complex magnitude `[..., 2C] -> [..., C]`.
    pub fn magnitude(&mut self, x: NodeId, channels: usize) -> NodeId {
        let n = self.value(x).len() / 2;
        let mut out = vec![T::zero(); n];
        raw::magnitude_fwd(self.value(x).data(), channels, &mut out);
        let mut shape = self.value(x).shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = channels;
        let needs = self.needs(x);
        self.push(Tensor::from_vec(&shape, out), Op::Magnitude { x, channels }, needs)
    }

    /// Phase feedback `out = mag ⊙ x/|x|`; `mag` is constant (the clamped
    /// image), gradients flow into `x` only.
    pub fn renorm(&mut self, x: NodeId, mag: Tensor<T>, channels: usize) -> NodeId {
        debug_assert_eq!(2 * mag.len(), self.value(x).len());
        let mut out = vec![T::zero(); self.value(x).len()];
        raw::renorm_fwd(self.value(x).data(), mag.data(), channels, &mut out);
        let value = Tensor::from_vec(self.value(x).shape(), out);
        let needs = self.needs(x);
        self.push(value, Op::Renorm { x, mag, channels }, needs)
    }

    pub fn upsample2x(&mut self, x: NodeId) -> NodeId {
        let shape = self.value(x).shape().to_vec();
        let (batch, h, w, row) = (shape[0], shape[1], shape[2], shape[3]);
        let mut out = vec![T::zero(); 4 * self.value(x).len()];
        raw::upsample2x_fwd(self.value(x).data(), batch, h, w, row, &mut out);
        let needs = self.needs(x);
        self.push(
            Tensor::from_vec(&[batch, 2 * h, 2 * w, row], out),
            Op::Upsample2x { x, batch, h, w, row },
            needs,
        )
    }

    pub fn center_crop(&mut self, x: NodeId, out_h: usize, out_w: usize) -> NodeId {
        let shape = self.value(x).shape().to_vec();
        let (batch, h, w, row) = (shape[0], shape[1], shape[2], shape[3]);
        let mut out = vec![T::zero(); batch * out_h * out_w * row];
        raw::crop_fwd(
            self.value(x).data(),
            batch,
            h,
            w,
            row,
            (h - out_h) / 2,
            (w - out_w) / 2,
            out_h,
            out_w,
            &mut out,
        );
        let needs = self.needs(x);
        self.push(
            Tensor::from_vec(&[batch, out_h, out_w, row], out),
            Op::CenterCrop { x, batch, h, w, row, out_h, out_w },
            needs,
        )
    }

    /// Scalar `mean((x - target)^2)` over all elements.
    pub fn mse_against(&mut self, x: NodeId, target: Tensor<T>) -> NodeId {
        debug_assert_eq!(self.value(x).len(), target.len());
        let n = T::from_f64(target.len() as f64);
        let mut acc = T::zero();
        for (a, b) in self.value(x).iter().zip(target.iter()) {
            let d = *a - *b;
            acc += d * d;
        }
        let needs = self.needs(x);
        self.push(Tensor::scalar(acc / n), Op::MseAgainst { x, target }, needs)
    }

    pub fn add_n(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        let mut out = self.value(xs[0]).data().to_vec();
        for id in &xs[1..] {
            debug_assert_eq!(self.value(*id).len(), out.len());
            for (o, v) in out.iter_mut().zip(self.value(*id).iter()) {
                *o += *v;
            }
        }
        let shape = self.value(xs[0]).shape().to_vec();
        let needs = xs.iter().any(|&id| self.needs(id));
        self.push(Tensor::from_vec(&shape, out), Op::AddN { xs: xs.to_vec() }, needs)
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> NodeId {
        let value = self.value(x).map(|v| v * factor);
        let needs = self.needs(x);
        self.push(value, Op::Scale { x, factor }, needs)
    }

    /// Reverse sweep from a scalar loss node; parameter gradients accumulate
    /// into the store (on top of whatever is already there).
    ///
    /// Each node's gradient buffer is dropped as soon as it has been
    /// propagated, so peak memory stays near one layer's working set.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParameterStore<T>) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss node, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads, store);
        }

        for (_, p) in store.params() {
            if !p.grad.all_finite() {
                return Err(Error::numeric(format!("NaN gradient surfaced in parameter '{}'", p.name)));
            }
        }
        Ok(())
    }

    fn grad_buf<'a>(grads: &'a mut [Option<Vec<T>>], id: NodeId, len: usize) -> &'a mut Vec<T> {
        grads[id.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    fn backprop_node(&mut self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>], store: &mut ParameterStore<T>) {
        // Ops only reference earlier nodes, so the value reads below never
        // alias the gradient buffers being written.
        match &self.nodes[i].op {
            Op::Const | Op::Detach => {}
            Op::Param(pid) => store.accumulate_grad(*pid, g),
            Op::Conv { x, kre_node, kim_node, geom } => {
                let (x, kre_node, kim_node, geom) = (*x, *kre_node, *kim_node, *geom);
                let r = geom.kh * geom.kw * geom.in_c;
                let cout = self.value(kre_node).len() / r;
                let rows = geom.rows();

                // The forward pass cached this conv's im2col expansion.
                let mut col = match self.conv_cols.remove(&i) {
                    Some(col) => col,
                    None => {
                        let mut col = self.scratch.take(rows * 2 * r);
                        raw::im2col(self.value(x).data(), &geom, &mut col);
                        col
                    }
                };

                // dK(packed) = col^T @ g, then fold onto the kernel pair.
                if self.needs(kre_node) {
                    let mut dpacked = self.scratch.take(4 * r * cout);
                    par_gemm(
                        2 * r,
                        rows,
                        2 * cout,
                        MatRef::row_major_t(&col, 2 * r),
                        MatRef::row_major(g, 2 * cout),
                        &mut dpacked,
                    );
                    let mut dkre = vec![T::zero(); r * cout];
                    let mut dkim = vec![T::zero(); r * cout];
                    raw::unpack_kernel_grad(&dpacked, r, cout, &mut dkre, &mut dkim);
                    self.scratch.put(dpacked);
                    for (d, s) in Self::grad_buf(grads, kre_node, r * cout).iter_mut().zip(&dkre) {
                        *d += *s;
                    }
                    for (d, s) in Self::grad_buf(grads, kim_node, r * cout).iter_mut().zip(&dkim) {
                        *d += *s;
                    }
                }

                // dx = col2im(g @ P^T), overwriting the spent col buffer.
                if self.needs(x) {
                    let mut packed = self.scratch.take(4 * r * cout);
                    raw::pack_kernel(self.value(kre_node).data(), self.value(kim_node).data(), r, cout, &mut packed);
                    let dcol = &mut col;
                    par_gemm(
                        rows,
                        2 * cout,
                        2 * r,
                        MatRef::row_major(g, 2 * cout),
                        // P^T of the [2R, 2Cout] packed matrix.
                        MatRef::row_major_t(&packed, 2 * cout),
                        dcol,
                    );
                    self.scratch.put(packed);
                    let dx = Self::grad_buf(grads, x, geom.input_len());
                    raw::col2im(dcol, &geom, dx);
                }
                self.scratch.put(col);
            }
            Op::ModRelu { x, bias, channels } => {
                let (x, bias, channels) = (*x, *bias, *channels);
                let xv = self.value(x).clone();
                let bv = self.value(bias).clone();
                let mut dbias = vec![T::zero(); channels];
                {
                    let dx = Self::grad_buf(grads, x, xv.len());
                    raw::modrelu_bwd(xv.data(), bv.data(), g, channels, dx, &mut dbias);
                }
                if self.needs(bias) {
                    for (d, s) in Self::grad_buf(grads, bias, channels).iter_mut().zip(&dbias) {
                        *d += *s;
                    }
                }
            }
            Op::Magnitude { x, channels } => {
                let (x, channels) = (*x, *channels);
                let xv = self.value(x).clone();
                let dx = Self::grad_buf(grads, x, xv.len());
                raw::magnitude_bwd(xv.data(), g, channels, dx);
            }
            Op::Renorm { x, mag, channels } => {
                let (x, channels) = (*x, *channels);
                let mag = mag.clone();
                let xv = self.value(x).clone();
                let dx = Self::grad_buf(grads, x, xv.len());
                raw::renorm_bwd(xv.data(), mag.data(), g, channels, dx);
            }
            Op::Upsample2x { x, batch, h, w, row } => {
                let (x, batch, h, w, row) = (*x, *batch, *h, *w, *row);
                let dx = Self::grad_buf(grads, x, batch * h * w * row);
                raw::upsample2x_bwd(g, batch, h, w, row, dx);
            }
            Op::CenterCrop { x, batch, h, w, row, out_h, out_w } => {
                let (x, batch, h, w, row, out_h, out_w) = (*x, *batch, *h, *w, *row, *out_h, *out_w);
                let dx = Self::grad_buf(grads, x, batch * h * w * row);
                raw::crop_bwd(g, batch, h, w, row, (h - out_h) / 2, (w - out_w) / 2, out_h, out_w, dx);
            }
            Op::MseAgainst { x, target } => {
                let x = *x;
                let target = target.clone();
                let xv = self.value(x).clone();
                let scale = g[0] * T::from_f64(2.0 / target.len() as f64);
                let dx = Self::grad_buf(grads, x, xv.len());
                for ((d, a), b) in dx.iter_mut().zip(xv.iter()).zip(target.iter()) {
                    *d += scale * (*a - *b);
                }
            }
            Op::AddN { xs } => {
                for x in xs.clone() {
                    if self.needs(x) {
                        let len = self.value(x).len();
                        let dx = Self::grad_buf(grads, x, len);
                        for (d, s) in dx.iter_mut().zip(g) {
                            *d += *s;
                        }
                    }
                }
            }
            Op::Scale { x, factor } => {
                let (x, factor) = (*x, *factor);
                let len = self.value(x).len();
                let dx = Self::grad_buf(grads, x, len);
                for (d, s) in dx.iter_mut().zip(g) {
                    *d += factor * *s;
                }
            }
        }
    }
}

/// Max relative error between the analytic gradients already accumulated in
/// `store` and central finite differences of `forward` with step `eps`:
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`, maximized over
/// every scalar parameter.
///
/// Meant for small double-precision graphs; evaluates `forward` twice per
/// parameter scalar.
pub fn grad_check<T: Real>(
    store: &mut ParameterStore<T>,
    mut forward: impl FnMut(&ParameterStore<T>) -> T,
    eps: T,
) -> f64 {
    let mut max_rel: f64 = 0.0;
    let two_eps = (eps + eps).to_f64_lossy();
    for pi in 0..store.params.len() {
        for ei in 0..store.params[pi].value.len() {
            let orig = store.params[pi].value.data()[ei];
            store.params[pi].value.data_mut()[ei] = orig + eps;
            let up = forward(store).to_f64_lossy();
            store.params[pi].value.data_mut()[ei] = orig - eps;
            let down = forward(store).to_f64_lossy();
            store.params[pi].value.data_mut()[ei] = orig;
            let numeric = (up - down) / two_eps;
            let analytic = store.params[pi].grad.data()[ei].to_f64_lossy();
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    max_rel
}
