//! Reverse-mode tape. Each operation appends one node holding its output;
//! `backward` walks the node list in reverse and accumulates gradients.
//!
//! A tape built with `grad_enabled = false` computes identical values but
//! records no dependencies, which is how warm-up steps and inference run
//! without gradient tracking.

use super::conv::{conv2d_bias_grad, conv2d_forward, conv2d_input_grad, conv2d_weight_grad};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { x: NodeId, w: NodeId, b: Option<NodeId> },
    Sigmoid { x: NodeId },
    Tanh { x: NodeId },
    Relu { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    ConcatC { xs: Vec<NodeId> },
    SliceC { x: NodeId, from: usize },
    PixelShuffle { x: NodeId, r: usize },
    L1Sum { pred: NodeId, target: Vec<f64> },
    Scale { x: NodeId, k: f64 },
    Sum { xs: Vec<NodeId> },
}

pub struct Tape {
    shapes: Vec<Vec<usize>>,
    data: Vec<Vec<f64>>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
    grad_enabled: bool,
}

impl Tape {
    pub fn new(grad_enabled: bool) -> Self {
        Tape {
            shapes: Vec::new(),
            data: Vec::new(),
            ops: Vec::new(),
            needs_grad: Vec::new(),
            grad_enabled,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.data[id]
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.shapes[id]
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.shapes.push(shape);
        self.data.push(data);
        // Dependencies of nodes that cannot require a gradient are dropped.
        if needs_grad {
            self.ops.push(op);
        } else {
            self.ops.push(Op::Leaf);
        }
        self.needs_grad.push(needs_grad);
        self.data.len() - 1
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        self.grad_enabled && ids.iter().any(|&i| self.needs_grad[i])
    }

    /// Input or fixed value; never receives a gradient.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> NodeId {
        self.push(shape, data, Op::Leaf, false)
    }

    /// Trainable leaf; receives a gradient when the tape tracks them.
    pub fn param(&mut self, shape: Vec<usize>, data: Vec<f64>) -> NodeId {
        let ng = self.grad_enabled;
        self.push(shape, data, Op::Leaf, ng)
    }

    /// Constant single-channel map filled with one value.
    pub fn constant_plane(&mut self, h: usize, w: usize, value: f64) -> NodeId {
        self.constant(vec![1, h, w], vec![value; h * w])
    }

    /// Same-size convolution: input `[c_in, h, w]`, weight `[c_out, c_in, k, k]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let (c_in, h, ww) = self.chw(x);
        let ws = self.shapes[w].clone();
        assert_eq!(ws.len(), 4, "conv weight must be 4-d");
        assert_eq!(ws[1], c_in, "conv weight in-channels mismatch");
        assert_eq!(ws[2], ws[3], "conv kernel must be square");
        let (c_out, k) = (ws[0], ws[2]);
        if let Some(b) = b {
            assert_eq!(self.shapes[b], vec![c_out], "conv bias shape mismatch");
        }
        let mut out = vec![0.0; c_out * h * ww];
        conv2d_forward(
            &self.data[x],
            &self.data[w],
            b.map(|b| self.data[b].as_slice()),
            c_in,
            c_out,
            h,
            ww,
            k,
            &mut out,
        );
        let mut parents = vec![x, w];
        if let Some(b) = b {
            parents.push(b);
        }
        let ng = self.any_grad(&parents);
        self.push(vec![c_out, h, ww], out, Op::Conv2d { x, w, b }, ng)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let data = self.data[x].iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let ng = self.any_grad(&[x]);
        self.push(self.shapes[x].clone(), data, Op::Sigmoid { x }, ng)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let data = self.data[x].iter().map(|v| v.tanh()).collect();
        let ng = self.any_grad(&[x]);
        self.push(self.shapes[x].clone(), data, Op::Tanh { x }, ng)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        // f64::max would swallow NaN; keep it visible for diagnostics.
        let data = self.data[x]
            .iter()
            .map(|&v| if v > 0.0 || v.is_nan() { v } else { 0.0 })
            .collect();
        let ng = self.any_grad(&[x]);
        self.push(self.shapes[x].clone(), data, Op::Relu { x }, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shapes[a], self.shapes[b], "add shape mismatch");
        let data = self.data[a]
            .iter()
            .zip(&self.data[b])
            .map(|(x, y)| x + y)
            .collect();
        let ng = self.any_grad(&[a, b]);
        self.push(self.shapes[a].clone(), data, Op::Add { a, b }, ng)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shapes[a], self.shapes[b], "mul shape mismatch");
        let data = self.data[a]
            .iter()
            .zip(&self.data[b])
            .map(|(x, y)| x * y)
            .collect();
        let ng = self.any_grad(&[a, b]);
        self.push(self.shapes[a].clone(), data, Op::Mul { a, b }, ng)
    }

    /// Concatenate `[c_i, h, w]` maps along the channel axis.
    pub fn concat_c(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        let (_, h, w) = self.chw(xs[0]);
        let mut c_total = 0;
        let mut data = Vec::new();
        for &id in xs {
            let (c, hh, ww) = self.chw(id);
            assert_eq!((hh, ww), (h, w), "concat spatial mismatch");
            c_total += c;
            data.extend_from_slice(&self.data[id]);
        }
        let ng = self.any_grad(xs);
        self.push(vec![c_total, h, w], data, Op::ConcatC { xs: xs.to_vec() }, ng)
    }

    /// Contiguous channel range `[from, to)` of a `[c, h, w]` node.
    pub fn slice_c(&mut self, x: NodeId, from: usize, to: usize) -> NodeId {
        let (c, h, w) = self.chw(x);
        assert!(from < to && to <= c, "channel slice {from}..{to} out of {c}");
        let data = self.data[x][from * h * w..to * h * w].to_vec();
        let ng = self.any_grad(&[x]);
        self.push(vec![to - from, h, w], data, Op::SliceC { x, from }, ng)
    }

    /// `[c*r^2, h, w]` -> `[c, h*r, w*r]`. Channel `c*r^2 + dy*r + dx`
    /// lands on output offset `(dy, dx)` within each r x r block.
    pub fn pixel_shuffle(&mut self, x: NodeId, r: usize) -> NodeId {
        let (c_in, h, w) = self.chw(x);
        assert_eq!(c_in % (r * r), 0, "pixel shuffle channel mismatch");
        let c = c_in / (r * r);
        let (oh, ow) = (h * r, w * r);
        let mut out = vec![0.0; c * oh * ow];
        let src = &self.data[x];
        for oc in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let ic = oc * r * r + dy * r + dx;
                    let plane = &src[ic * h * w..(ic + 1) * h * w];
                    for y in 0..h {
                        for xx in 0..w {
                            out[oc * oh * ow + (y * r + dy) * ow + (xx * r + dx)] =
                                plane[y * w + xx];
                        }
                    }
                }
            }
        }
        let ng = self.any_grad(&[x]);
        self.push(vec![c, oh, ow], out, Op::PixelShuffle { x, r }, ng)
    }

    /// Scalar node: sum of absolute differences against a fixed target.
    pub fn l1_sum(&mut self, pred: NodeId, target: &[f64]) -> NodeId {
        assert_eq!(self.data[pred].len(), target.len(), "l1 target length mismatch");
        let v = self.data[pred]
            .iter()
            .zip(target)
            .map(|(p, t)| (p - t).abs())
            .sum();
        let ng = self.any_grad(&[pred]);
        self.push(
            vec![1],
            vec![v],
            Op::L1Sum { pred, target: target.to_vec() },
            ng,
        )
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let data = self.data[x].iter().map(|v| v * k).collect();
        let ng = self.any_grad(&[x]);
        self.push(self.shapes[x].clone(), data, Op::Scale { x, k }, ng)
    }

    /// Elementwise sum of same-shaped nodes.
    pub fn sum(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        let shape = self.shapes[xs[0]].clone();
        let mut data = self.data[xs[0]].clone();
        for &id in &xs[1..] {
            assert_eq!(self.shapes[id], shape, "sum shape mismatch");
            for (d, s) in data.iter_mut().zip(&self.data[id]) {
                *d += s;
            }
        }
        let ng = self.any_grad(xs);
        self.push(shape, data, Op::Sum { xs: xs.to_vec() }, ng)
    }

    fn chw(&self, id: NodeId) -> (usize, usize, usize) {
        let s = &self.shapes[id];
        assert_eq!(s.len(), 3, "expected a [c, h, w] node, got {s:?}");
        (s[0], s[1], s[2])
    }

    /// Reverse pass from a scalar loss node. Returns one gradient slot per
    /// node; leaves that were never reached stay `None`.
    pub fn backward(&self, loss: NodeId) -> Vec<Option<Vec<f64>>> {
        assert!(self.grad_enabled, "backward on a no-grad tape");
        assert_eq!(self.data[loss].len(), 1, "loss must be scalar");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.data.len()];
        grads[loss] = Some(vec![1.0]);

        for id in (0..=loss).rev() {
            if !self.needs_grad[id] {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            // Parameters and other leaves keep their accumulated gradient.
            if matches!(self.ops[id], Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        grads
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, update: impl FnOnce(&mut [f64])) {
        if !self.needs_grad[id] {
            return;
        }
        let slot = grads[id].get_or_insert_with(|| vec![0.0; self.data[id].len()]);
        update(slot);
    }

    fn propagate(&self, id: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.ops[id] {
            Op::Leaf => {}
            Op::Conv2d { x, w, b } => {
                let (c_in, h, ww) = self.chw(*x);
                let ws = &self.shapes[*w];
                let (c_out, k) = (ws[0], ws[2]);
                self.accumulate(grads, *x, |gx| {
                    conv2d_input_grad(g, &self.data[*w], c_in, c_out, h, ww, k, gx)
                });
                self.accumulate(grads, *w, |gw| {
                    conv2d_weight_grad(&self.data[*x], g, c_in, c_out, h, ww, k, gw)
                });
                if let Some(b) = b {
                    self.accumulate(grads, *b, |gb| conv2d_bias_grad(g, c_out, h * ww, gb));
                }
            }
            Op::Sigmoid { x } => {
                let y = &self.data[id];
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Tanh { x } => {
                let y = &self.data[id];
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Relu { x } => {
                let xin = &self.data[*x];
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        if xin[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                for &p in &[*a, *b] {
                    self.accumulate(grads, p, |gp| {
                        for i in 0..gp.len() {
                            gp[i] += g[i];
                        }
                    });
                }
            }
            Op::Mul { a, b } => {
                let (da, db) = (&self.data[*a], &self.data[*b]);
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * db[i];
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * da[i];
                    }
                });
            }
            Op::ConcatC { xs } => {
                let mut offset = 0;
                for &p in xs {
                    let len = self.data[p].len();
                    let gslice = &g[offset..offset + len];
                    self.accumulate(grads, p, |gp| {
                        for i in 0..gp.len() {
                            gp[i] += gslice[i];
                        }
                    });
                    offset += len;
                }
            }
            Op::SliceC { x, from } => {
                let (_, h, w) = self.chw(*x);
                let start = from * h * w;
                self.accumulate(grads, *x, |gx| {
                    for i in 0..g.len() {
                        gx[start + i] += g[i];
                    }
                });
            }
            Op::PixelShuffle { x, r } => {
                let (c_in, h, w) = self.chw(*x);
                let c = c_in / (r * r);
                let (oh, ow) = (h * r, w * r);
                let r = *r;
                self.accumulate(grads, *x, |gx| {
                    for oc in 0..c {
                        for dy in 0..r {
                            for dx in 0..r {
                                let ic = oc * r * r + dy * r + dx;
                                for y in 0..h {
                                    for xx in 0..w {
                                        gx[ic * h * w + y * w + xx] +=
                                            g[oc * oh * ow + (y * r + dy) * ow + (xx * r + dx)];
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::L1Sum { pred, target } => {
                let p = &self.data[*pred];
                let g0 = g[0];
                self.accumulate(grads, *pred, |gp| {
                    for i in 0..gp.len() {
                        // Subgradient 0 at exact ties.
                        let d = p[i] - target[i];
                        if d > 0.0 {
                            gp[i] += g0;
                        } else if d < 0.0 {
                            gp[i] -= g0;
                        }
                    }
                });
            }
            Op::Scale { x, k } => {
                let k = *k;
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * k;
                    }
                });
            }
            Op::Sum { xs } => {
                for &p in xs {
                    self.accumulate(grads, p, |gp| {
                        for i in 0..gp.len() {
                            gp[i] += g[i];
                        }
                    });
                }
            }
        }
    }

    /// First node holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<NodeId> {
        self.data
            .iter()
            .position(|d| d.iter().any(|v| !v.is_finite()))
    }
}
