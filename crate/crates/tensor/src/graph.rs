//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Leaves are either
//! trainable (gradient requested) or constant; every derived node requires a
//! gradient iff one of its inputs does, so frozen sub-networks cost no
//! weight-gradient work during [`Graph::backward`].

use crate::conv::{col2im, im2col, ConvGeometry};
use crate::{Float, ParamSet, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Square window cut from one sample of a 4-d tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub sample: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    LeakyRelu {
        x: NodeId,
        slope: F,
    },
    WeightedSum {
        xs: Vec<NodeId>,
        weights: Vec<F>,
    },
    ConcatChannels {
        xs: Vec<NodeId>,
    },
    PixelShuffle {
        x: NodeId,
        r: usize,
    },
    UpsampleNearest {
        x: NodeId,
        r: usize,
    },
    MaxPool2 {
        x: NodeId,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: NodeId,
    },
    ChannelAffine {
        x: NodeId,
        scale: Vec<F>,
    },
    GatherWindows {
        x: NodeId,
        windows: Vec<Window>,
        size: usize,
    },
    AbsError {
        x: NodeId,
        target: Tensor<F>,
        weights: Option<Tensor<F>>,
    },
    SquaredError {
        a: NodeId,
        b: NodeId,
    },
    RelativisticBce {
        x: NodeId,
        reference: NodeId,
        real: bool,
        eps: F,
    },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<F: Float> {
    nodes: Vec<Node<F>>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Float> Gradients<F> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<F>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }

    /// Pulls the gradients of bound parameters out in binding order.
    pub fn collect(&mut self, ids: &[NodeId]) -> Vec<Option<Tensor<F>>> {
        ids.iter().map(|&id| self.take(id)).collect()
    }
}

fn shape_err(msg: impl Into<String>) -> TensorError {
    TensorError::Shape(msg.into())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<F: Float> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.rg(id)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn variable(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Places every tensor of `params` on the graph as a leaf, in order.
    pub fn bind(&mut self, params: &ParamSet<F>, trainable: bool) -> Vec<NodeId> {
        params
            .tensors()
            .iter()
            .map(|t| self.push(t.clone(), Op::Leaf, trainable))
            .collect()
    }

    /// 2-d convolution, weight `[out, in, k, k]`, zero padding.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId, TensorError> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (o, ci, k, k2) = self.value(w).dims4()?;
        if ci != c || k != k2 {
            return Err(shape_err(format!(
                "conv2d: input {:?} vs weight {:?}",
                self.value(x).shape(),
                self.value(w).shape()
            )));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [o] {
                return Err(shape_err("conv2d: bias length differs from output channels"));
            }
        }
        let geo = ConvGeometry {
            channels: c,
            height: h,
            width: wd,
            kernel: k,
            stride,
            pad,
        };
        if !geo.valid() {
            return Err(shape_err(format!(
                "conv2d: kernel {k} stride {stride} pad {pad} does not fit {h}x{wd}"
            )));
        }
        let (ho, wo) = (geo.out_height(), geo.out_width());
        let p = ho * wo;
        let mut out = vec![F::zero(); n * o * p];
        let mut col = vec![F::zero(); geo.col_rows() * p];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        for s in 0..n {
            im2col(&geo, &xv[s * c * h * wd..(s + 1) * c * h * wd], &mut col);
            F::gemm(
                o,
                geo.col_rows(),
                p,
                wv,
                false,
                &col,
                false,
                &mut out[s * o * p..(s + 1) * o * p],
                false,
            );
        }
        if let Some(b) = b {
            let bv = self.value(b).data();
            for s in 0..n {
                for (oc, &bias) in bv.iter().enumerate() {
                    for v in &mut out[(s * o + oc) * p..(s * o + oc + 1) * p] {
                        *v += bias;
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let value = Tensor::new(&[n, o, ho, wo], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, stride, pad }, rg))
    }

    /// Dense layer: `x [N, in]`, `w [out, in]`, `b [out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId, TensorError> {
        let (n, fin) = self.value(x).dims2()?;
        let (fout, win) = self.value(w).dims2()?;
        if win != fin {
            return Err(shape_err(format!("linear: input width {fin} vs weight width {win}")));
        }
        let mut out = vec![F::zero(); n * fout];
        F::gemm(n, fin, fout, self.value(x).data(), false, self.value(w).data(), true, &mut out, false);
        if let Some(b) = b {
            let bv = self.value(b).data();
            if bv.len() != fout {
                return Err(shape_err("linear: bias length differs from output width"));
            }
            for row in out.chunks_mut(fout) {
                for (v, &bias) in row.iter_mut().zip(bv) {
                    *v += bias;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let value = Tensor::new(&[n, fout], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let slope = F::of(slope);
        let value = self
            .value(x)
            .map(|v| if v > F::zero() { v } else { v * slope });
        let rg = self.rg(x);
        self.push(value, Op::LeakyRelu { x, slope }, rg)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.leaky_relu(x, 0.0)
    }

    /// `sum_i weights[i] * xs[i]` over same-shaped inputs.
    pub fn weighted_sum(&mut self, xs: &[NodeId], weights: &[f64]) -> Result<NodeId, TensorError> {
        if xs.is_empty() || xs.len() != weights.len() {
            return Err(shape_err("weighted_sum: need one weight per input"));
        }
        let shape = self.value(xs[0]).shape().to_vec();
        let mut acc = Tensor::zeros(&shape);
        let weights: Vec<F> = weights.iter().map(|&w| F::of(w)).collect();
        for (&x, &w) in xs.iter().zip(&weights) {
            if self.value(x).shape() != shape.as_slice() {
                return Err(shape_err(format!(
                    "weighted_sum: {:?} vs {:?}",
                    self.value(x).shape(),
                    shape
                )));
            }
            acc.add_scaled(self.value(x), w);
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(acc, Op::WeightedSum { xs: xs.to_vec(), weights }, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.weighted_sum(&[a, b], &[1.0, 1.0])
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        self.weighted_sum(&[x], &[factor])
            .expect("single-input weighted sum is always well-formed")
    }

    /// `x[:, c] * scale[c] + shift[c]` on a `[N, C, H, W]` tensor.
    pub fn channel_affine(&mut self, x: NodeId, scale: &[f64], shift: &[f64]) -> Result<NodeId, TensorError> {
        let (_, c, h, w) = self.value(x).dims4()?;
        if scale.len() != c || shift.len() != c {
            return Err(shape_err(format!("channel_affine: {c} channels, {} scales", scale.len())));
        }
        let scale: Vec<F> = scale.iter().map(|&v| F::of(v)).collect();
        let shift: Vec<F> = shift.iter().map(|&v| F::of(v)).collect();
        let mut value = self.value(x).clone();
        for (i, plane) in value.data_mut().chunks_mut(h * w).enumerate() {
            let (a, b) = (scale[i % c], shift[i % c]);
            plane.iter_mut().for_each(|v| *v = *v * a + b);
        }
        let rg = self.rg(x);
        Ok(self.push(value, Op::ChannelAffine { x, scale }, rg))
    }

    pub fn concat_channels(&mut self, xs: &[NodeId]) -> Result<NodeId, TensorError> {
        let (n, _, h, w) = self.value(xs[0]).dims4()?;
        let mut total = 0;
        for &x in xs {
            let (xn, xc, xh, xw) = self.value(x).dims4()?;
            if (xn, xh, xw) != (n, h, w) {
                return Err(shape_err("concat_channels: batch/spatial sizes differ"));
            }
            total += xc;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total * plane);
        for s in 0..n {
            for &x in xs {
                let v = self.value(x);
                let c = v.shape()[1];
                out.extend_from_slice(&v.data()[s * c * plane..(s + 1) * c * plane]);
            }
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        let value = Tensor::new(&[n, total, h, w], out)?;
        Ok(self.push(value, Op::ConcatChannels { xs: xs.to_vec() }, rg))
    }

    /// Sub-pixel rearrangement `[N, C*r*r, H, W] -> [N, C, H*r, W*r]`.
    pub fn pixel_shuffle(&mut self, x: NodeId, r: usize) -> Result<NodeId, TensorError> {
        let (n, cr, h, w) = self.value(x).dims4()?;
        if r == 0 || cr % (r * r) != 0 {
            return Err(shape_err(format!("pixel_shuffle: {cr} channels not divisible by {r}^2")));
        }
        let c = cr / (r * r);
        let xv = self.value(x).data();
        let mut out = vec![F::zero(); xv.len()];
        let (oh, ow) = (h * r, w * r);
        for s in 0..n {
            for oc in 0..c {
                for i in 0..r {
                    for j in 0..r {
                        let ic = oc * r * r + i * r + j;
                        let src = &xv[(s * cr + ic) * h * w..(s * cr + ic + 1) * h * w];
                        let dst = &mut out[(s * c + oc) * oh * ow..(s * c + oc + 1) * oh * ow];
                        for y in 0..h {
                            for xx in 0..w {
                                dst[(y * r + i) * ow + xx * r + j] = src[y * w + xx];
                            }
                        }
                    }
                }
            }
        }
        let rg = self.rg(x);
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(value, Op::PixelShuffle { x, r }, rg))
    }

    pub fn upsample_nearest(&mut self, x: NodeId, r: usize) -> Result<NodeId, TensorError> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (oh, ow) = (h * r, w * r);
        let xv = self.value(x).data();
        let mut out = vec![F::zero(); n * c * oh * ow];
        for plane in 0..n * c {
            let src = &xv[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    dst[y * ow + xx] = src[(y / r) * w + xx / r];
                }
            }
        }
        let rg = self.rg(x);
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(value, Op::UpsampleNearest { x, r }, rg))
    }

    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn max_pool2(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(shape_err(format!("max_pool2: input {h}x{w} too small")));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = base + 2 * y * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                        if xv[idx] > xv[best] {
                            best = idx;
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(x);
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool2 { x, argmax }, rg))
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let inv = F::of(1.0 / (h * w) as f64);
        let out = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<F>() * inv)
            .collect();
        let rg = self.rg(x);
        let value = Tensor::new(&[n, c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool { x }, rg))
    }

    /// Cuts `size x size` windows out of a `[N, C, H, W]` tensor, stacking
    /// them into `[K, C, size, size]`.
    pub fn gather_windows(
        &mut self,
        x: NodeId,
        windows: &[Window],
        size: usize,
    ) -> Result<NodeId, TensorError> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if windows.is_empty() {
            return Err(shape_err("gather_windows: no windows"));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(windows.len() * c * size * size);
        for win in windows {
            if win.sample >= n || win.row + size > h || win.col + size > w {
                return Err(shape_err(format!(
                    "gather_windows: window {win:?} of size {size} outside {n}x{h}x{w}"
                )));
            }
            for ch in 0..c {
                let plane = &xv[(win.sample * c + ch) * h * w..(win.sample * c + ch + 1) * h * w];
                for y in win.row..win.row + size {
                    out.extend_from_slice(&plane[y * w + win.col..y * w + win.col + size]);
                }
            }
        }
        let rg = self.rg(x);
        let value = Tensor::new(&[windows.len(), c, size, size], out)?;
        Ok(self.push(
            value,
            Op::GatherWindows {
                x,
                windows: windows.to_vec(),
                size,
            },
            rg,
        ))
    }

    /// `mean(weights * |x - target|)`; `weights` must match `x` in shape.
    pub fn abs_error(
        &mut self,
        x: NodeId,
        target: &Tensor<F>,
        weights: Option<&Tensor<F>>,
    ) -> Result<NodeId, TensorError> {
        let xv = self.value(x);
        if xv.shape() != target.shape() || weights.is_some_and(|w| w.shape() != xv.shape()) {
            return Err(shape_err(format!(
                "abs_error: prediction {:?} vs target {:?}",
                xv.shape(),
                target.shape()
            )));
        }
        let total: F = match weights {
            Some(wt) => xv
                .data()
                .iter()
                .zip(target.data())
                .zip(wt.data())
                .map(|((&a, &b), &w)| w * (a - b).abs())
                .sum(),
            None => xv.data().iter().zip(target.data()).map(|(&a, &b)| (a - b).abs()).sum(),
        };
        let value = Tensor::scalar(total / F::of(xv.numel() as f64));
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::AbsError {
                x,
                target: target.clone(),
                weights: weights.cloned(),
            },
            rg,
        ))
    }

    /// `mean((a - b)^2)`.
    pub fn squared_error(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(format!(
                "squared_error: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let total: F = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&p, &q)| (p - q) * (p - q))
            .sum();
        let value = Tensor::scalar(total / F::of(av.numel() as f64));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::SquaredError { a, b }, rg))
    }

    /// Relativistic-average binary cross-entropy of critic scores.
    ///
    /// With `p_i = clamp(sigmoid(x_i - mean(reference)), eps, 1 - eps)` this
    /// is `-mean_i log p_i` when `real`, else `-mean_i log(1 - p_i)`.
    pub fn relativistic_bce(
        &mut self,
        x: NodeId,
        reference: NodeId,
        real: bool,
        eps: f64,
    ) -> Result<NodeId, TensorError> {
        let (xv, rv) = (self.value(x), self.value(reference));
        if xv.numel() == 0 || rv.numel() == 0 {
            return Err(shape_err("relativistic_bce: empty score batch"));
        }
        let m = rv.mean().as_f64();
        let total: f64 = xv
            .data()
            .iter()
            .map(|&s| {
                let p = sigmoid(s.as_f64() - m).clamp(eps, 1.0 - eps);
                if real {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum();
        let value = Tensor::scalar(F::of(total / xv.numel() as f64));
        let rg = self.rg(x) || self.rg(reference);
        Ok(self.push(
            value,
            Op::RelativisticBce {
                x,
                reference,
                real,
                eps: F::of(eps),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<F>, TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(shape_err("backward: loss must be a single element"));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), F::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<F>>], id: NodeId, g: Tensor<F>) {
        if !self.rg(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => acc.add_scaled(&g, F::one()),
            slot => *slot = Some(g),
        }
    }

    fn backprop_node(
        &self,
        node: &Node<F>,
        g: &Tensor<F>,
        grads: &mut [Option<Tensor<F>>],
    ) -> Result<(), TensorError> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, c, h, wd) = xv.dims4()?;
                let (o, _, k, _) = wv.dims4()?;
                let geo = ConvGeometry {
                    channels: c,
                    height: h,
                    width: wd,
                    kernel: k,
                    stride: *stride,
                    pad: *pad,
                };
                let p = geo.col_cols();
                let rows = geo.col_rows();
                let gd = g.data();
                if let Some(b) = b {
                    if self.rg(*b) {
                        let mut db = vec![F::zero(); o];
                        for s in 0..n {
                            for (oc, acc) in db.iter_mut().enumerate() {
                                *acc += gd[(s * o + oc) * p..(s * o + oc + 1) * p].iter().copied().sum::<F>();
                            }
                        }
                        self.accumulate(grads, *b, Tensor::new(&[o], db)?);
                    }
                }
                let need_w = self.rg(*w);
                let need_x = self.rg(*x);
                let mut dw = if need_w { vec![F::zero(); o * rows] } else { Vec::new() };
                let mut dx = if need_x { vec![F::zero(); xv.numel()] } else { Vec::new() };
                let mut col = vec![F::zero(); rows * p];
                for s in 0..n {
                    let gs = &gd[s * o * p..(s + 1) * o * p];
                    if need_w {
                        im2col(&geo, &xv.data()[s * c * h * wd..(s + 1) * c * h * wd], &mut col);
                        F::gemm(o, p, rows, gs, false, &col, true, &mut dw, true);
                    }
                    if need_x {
                        F::gemm(rows, o, p, wv.data(), true, gs, false, &mut col, false);
                        col2im(&geo, &col, &mut dx[s * c * h * wd..(s + 1) * c * h * wd]);
                    }
                }
                if need_w {
                    self.accumulate(grads, *w, Tensor::new(wv.shape(), dw)?);
                }
                if need_x {
                    self.accumulate(grads, *x, Tensor::new(xv.shape(), dx)?);
                }
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, fin) = xv.dims2()?;
                let (fout, _) = wv.dims2()?;
                if let Some(b) = b {
                    if self.rg(*b) {
                        let mut db = vec![F::zero(); fout];
                        for row in g.data().chunks(fout) {
                            for (acc, &v) in db.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        self.accumulate(grads, *b, Tensor::new(&[fout], db)?);
                    }
                }
                if self.rg(*w) {
                    let mut dw = vec![F::zero(); fout * fin];
                    F::gemm(fout, n, fin, g.data(), true, xv.data(), false, &mut dw, false);
                    self.accumulate(grads, *w, Tensor::new(&[fout, fin], dw)?);
                }
                if self.rg(*x) {
                    let mut dx = vec![F::zero(); n * fin];
                    F::gemm(n, fout, fin, g.data(), false, wv.data(), false, &mut dx, false);
                    self.accumulate(grads, *x, Tensor::new(&[n, fin], dx)?);
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x);
                let dx = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v > F::zero() { gv } else { gv * *slope })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape(), dx)?);
            }
            Op::WeightedSum { xs, weights } => {
                for (&x, &w) in xs.iter().zip(weights) {
                    if self.rg(x) {
                        self.accumulate(grads, x, g.map(|v| v * w));
                    }
                }
            }
            Op::ConcatChannels { xs } => {
                let (n, total, h, w) = g.dims4()?;
                let plane = h * w;
                let mut offset = 0;
                for &x in xs {
                    let c = self.value(x).shape()[1];
                    if self.rg(x) {
                        let mut dx = Vec::with_capacity(n * c * plane);
                        for s in 0..n {
                            let start = (s * total + offset) * plane;
                            dx.extend_from_slice(&g.data()[start..start + c * plane]);
                        }
                        self.accumulate(grads, x, Tensor::new(&[n, c, h, w], dx)?);
                    }
                    offset += c;
                }
            }
            Op::PixelShuffle { x, r } => {
                let r = *r;
                let xv = self.value(*x);
                let (n, cr, h, w) = xv.dims4()?;
                let c = cr / (r * r);
                let (oh, ow) = (h * r, w * r);
                let gd = g.data();
                let mut dx = vec![F::zero(); xv.numel()];
                for s in 0..n {
                    for oc in 0..c {
                        for i in 0..r {
                            for j in 0..r {
                                let ic = oc * r * r + i * r + j;
                                let dst = &mut dx[(s * cr + ic) * h * w..(s * cr + ic + 1) * h * w];
                                let src = &gd[(s * c + oc) * oh * ow..(s * c + oc + 1) * oh * ow];
                                for y in 0..h {
                                    for xx in 0..w {
                                        dst[y * w + xx] = src[(y * r + i) * ow + xx * r + j];
                                    }
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape(), dx)?);
            }
            Op::UpsampleNearest { x, r } => {
                let xv = self.value(*x);
                let (n, c, h, w) = xv.dims4()?;
                let (oh, ow) = (h * r, w * r);
                let mut dx = vec![F::zero(); xv.numel()];
                for plane in 0..n * c {
                    let src = &g.data()[plane * oh * ow..(plane + 1) * oh * ow];
                    let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
                    for y in 0..oh {
                        for xx in 0..ow {
                            dst[(y / r) * w + xx / r] += src[y * ow + xx];
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape(), dx)?);
            }
            Op::MaxPool2 { x, argmax } => {
                let xv = self.value(*x);
                let mut dx = vec![F::zero(); xv.numel()];
                for (&idx, &gv) in argmax.iter().zip(g.data()) {
                    dx[idx] += gv;
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape(), dx)?);
            }
            Op::GlobalAvgPool { x } => {
                let xv = self.value(*x);
                let (_, _, h, w) = xv.dims4()?;
                let inv = F::of(1.0 / (h * w) as f64);
                let mut dx = Vec::with_capacity(xv.numel());
                for &gv in g.data() {
                    dx.extend(std::iter::repeat_n(gv * inv, h * w));
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape(), dx)?);
            }
            Op::ChannelAffine { x, scale } => {
                let xv = self.value(*x);
                let (_, c, h, w) = xv.dims4()?;
                let mut dx = g.clone();
                for (i, plane) in dx.data_mut().chunks_mut(h * w).enumerate() {
                    let a = scale[i % c];
                    plane.iter_mut().for_each(|v| *v *= a);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::GatherWindows { x, windows, size } => {
                let xv = self.value(*x);
                let (_, c, h, w) = xv.dims4()?;
                let size = *size;
                let mut dx = vec![F::zero(); xv.numel()];
                let mut src = g.data().chunks(size);
                for win in windows {
                    for ch in 0..c {
                        let base = (win.sample * c + ch) * h * w;
                        for y in win.row..win.row + size {
                            let line = src.next().expect("gradient matches gathered shape");
                            let start = base + y * w + win.col;
                            for (d, &v) in dx[start..start + size].iter_mut().zip(line) {
                                *d += v;
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape(), dx)?);
            }
            Op::AbsError { x, target, weights } => {
                let xv = self.value(*x);
                let scale = g.item() / F::of(xv.numel() as f64);
                let sign = |a: F, b: F| {
                    if a > b {
                        F::one()
                    } else if a < b {
                        -F::one()
                    } else {
                        F::zero()
                    }
                };
                let dx: Vec<F> = match weights {
                    Some(wt) => xv
                        .data()
                        .iter()
                        .zip(target.data())
                        .zip(wt.data())
                        .map(|((&a, &b), &w)| scale * w * sign(a, b))
                        .collect(),
                    None => xv
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(&a, &b)| scale * sign(a, b))
                        .collect(),
                };
                self.accumulate(grads, *x, Tensor::new(xv.shape(), dx)?);
            }
            Op::SquaredError { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let scale = F::of(2.0) * g.item() / F::of(av.numel() as f64);
                let da: Vec<F> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(&p, &q)| scale * (p - q))
                    .collect();
                if self.rg(*b) {
                    let db = da.iter().map(|&v| -v).collect();
                    self.accumulate(grads, *b, Tensor::new(bv.shape(), db)?);
                }
                if self.rg(*a) {
                    self.accumulate(grads, *a, Tensor::new(av.shape(), da)?);
                }
            }
            Op::RelativisticBce {
                x,
                reference,
                real,
                eps,
            } => {
                let (xv, rv) = (self.value(*x), self.value(*reference));
                let m = rv.mean().as_f64();
                let eps = eps.as_f64();
                let upstream = g.item().as_f64();
                let n = xv.numel() as f64;
                // d loss / d (x_i - mean(reference))
                let dd: Vec<f64> = xv
                    .data()
                    .iter()
                    .map(|&s| {
                        let p = sigmoid(s.as_f64() - m);
                        if p < eps || p > 1.0 - eps {
                            0.0
                        } else if *real {
                            -(1.0 - p) / n
                        } else {
                            p / n
                        }
                    })
                    .map(|d| d * upstream)
                    .collect();
                if self.rg(*x) {
                    let dx = dd.iter().map(|&d| F::of(d)).collect();
                    self.accumulate(grads, *x, Tensor::new(xv.shape(), dx)?);
                }
                if self.rg(*reference) {
                    let total: f64 = dd.iter().sum();
                    let per = F::of(-total / rv.numel() as f64);
                    self.accumulate(grads, *reference, Tensor::full(rv.shape(), per));
                }
            }
        }
        Ok(())
    }
}
