//! Recorded forward computation with reverse-mode gradients.
//!
//! A [`Graph`] borrows the [`ParamStore`] read-only, so independent samples can
//! be evaluated on separate graphs in parallel. [`Graph::backward`] returns the
//! gradients instead of writing them; callers reduce them into the store.

use crate::engine::conv::{conv_backward, conv_forward, ConvSpec};
use crate::engine::params::{ParamGrads, ParamId, ParamStore};
use crate::engine::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Linear {
        x: NodeId,
        w: ParamId,
        b: ParamId,
    },
    Relu {
        x: NodeId,
    },
    /// Channel max over row segments; `argmax[s * c + ch]` is the winning row or `usize::MAX`.
    SegmentMax {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Reshape {
        x: NodeId,
    },
    CylConv {
        x: NodeId,
        spec: ConvSpec,
        w: ParamId,
        b: ParamId,
    },
    GlobalMax {
        x: NodeId,
        argmax: Vec<usize>,
    },
    L2Normalize {
        x: NodeId,
        norm: f64,
    },
    Stack {
        xs: Vec<NodeId>,
    },
    HardestContrastive {
        anchors: NodeId,
        positives: NodeId,
        cache: ContrastiveCache,
    },
}

#[derive(Debug, Clone)]
struct ContrastiveCache {
    pos_margin: f64,
    neg_margin: f64,
    pos_dist: Vec<f64>,
    /// Hardest negative per anchor: (index, is_positive_list, distance).
    hardest: Vec<(usize, bool, f64)>,
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    pub params: ParamGrads,
}

impl Gradients {
    /// Gradient reaching `node`, if any flowed there.
    pub fn node(&self, node: NodeId) -> Option<&Tensor> {
        self.nodes.get(node.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id)
    }
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

static NO_PARAMS: ParamStore = ParamStore::new();

impl Graph<'static> {
    /// Graph with no parameters, for pure functions of inputs (losses, checks).
    pub fn detached() -> Self {
        Graph {
            params: &NO_PARAMS,
            nodes: Vec::new(),
        }
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input)
    }

    /// `x [N, C_in] · W [C_in, C_out] + b [C_out]`.
    pub fn linear(&mut self, x: NodeId, w: ParamId, b: ParamId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let wt = self.params.value(w);
        let bt = self.params.value(b);
        if xs.len() != 2 || wt.rank() != 2 || wt.shape()[0] != xs[1] || bt.shape() != [wt.shape()[1]] {
            return Err(Error::ShapeMismatch(format!(
                "linear: input {xs:?}, weight {:?}, bias {:?}",
                wt.shape(),
                bt.shape()
            )));
        }
        let (n, cin, cout) = (xs[0], xs[1], wt.shape()[1]);
        let xv = self.value(x).data();
        let (wv, bv) = (wt.data(), bt.data());
        let mut out = vec![0.0; n * cout];
        for i in 0..n {
            let o = &mut out[i * cout..(i + 1) * cout];
            o.copy_from_slice(bv);
            for c in 0..cin {
                let v = xv[i * cin + c];
                if v == 0.0 {
                    continue;
                }
                for (oe, we) in o.iter_mut().zip(&wv[c * cout..(c + 1) * cout]) {
                    *oe += v * we;
                }
            }
        }
        let value = Tensor::new(vec![n, cout], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| if a > 0.0 { a } else { 0.0 }).collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Relu { x })
    }

    /// Channel-wise max over the row ranges `offsets[s]..offsets[s+1]` of a
    /// `[N, C]` input; empty segments yield zeros. Output shape is `out_shape`,
    /// whose product must be `segments × C`.
    pub fn segment_max(&mut self, x: NodeId, offsets: &[usize], out_shape: &[usize]) -> Result<NodeId> {
        let v = self.value(x);
        if v.rank() != 2 || offsets.is_empty() || *offsets.last().unwrap() != v.shape()[0] {
            return Err(Error::ShapeMismatch(format!(
                "segment_max: input {:?} with {} offsets",
                v.shape(),
                offsets.len()
            )));
        }
        let c = v.shape()[1];
        let segs = offsets.len() - 1;
        if out_shape.iter().product::<usize>() != segs * c {
            return Err(Error::ShapeMismatch(format!(
                "segment_max: output {out_shape:?} for {segs} segments of {c} channels"
            )));
        }
        let data = v.data();
        let mut out = vec![0.0; segs * c];
        let mut argmax = vec![usize::MAX; segs * c];
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if lo == hi {
                continue;
            }
            let o = &mut out[s * c..(s + 1) * c];
            let a = &mut argmax[s * c..(s + 1) * c];
            o.copy_from_slice(&data[lo * c..(lo + 1) * c]);
            a.fill(lo);
            for row in lo + 1..hi {
                for ch in 0..c {
                    let val = data[row * c + ch];
                    if val > o[ch] {
                        o[ch] = val;
                        a[ch] = row;
                    }
                }
            }
        }
        let value = Tensor::new(out_shape.to_vec(), out)?;
        Ok(self.push(value, Op::SegmentMax { x, argmax }))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape { x }))
    }

    pub fn cyl_conv(&mut self, x: NodeId, spec: &ConvSpec, w: ParamId, b: ParamId) -> Result<NodeId> {
        let wt = self.params.value(w);
        let bt = self.params.value(b);
        if wt.shape() != spec.weight_shape() || bt.shape() != [spec.out_channels] {
            return Err(Error::ShapeMismatch(format!(
                "conv parameters {:?}/{:?} do not match spec {:?}",
                wt.shape(),
                bt.shape(),
                spec.weight_shape()
            )));
        }
        let input = self.value(x);
        let (ext, out) = conv_forward(spec, input.shape(), input.data(), wt.data(), bt.data())?;
        let value = Tensor::new(vec![ext[0], ext[1], ext[2], spec.out_channels], out)?;
        Ok(self.push(
            value,
            Op::CylConv {
                x,
                spec: spec.clone(),
                w,
                b,
            },
        ))
    }

    /// Channel-wise max over every position of a `[..., C]` map.
    pub fn global_max(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let c = *v.shape().last().ok_or_else(|| Error::ShapeMismatch("global_max on a scalar".into()))?;
        let positions = v.len().checked_div(c).unwrap_or(0);
        if positions == 0 {
            return Err(Error::ShapeMismatch(format!("global_max on empty map {:?}", v.shape())));
        }
        let data = v.data();
        let mut out = data[..c].to_vec();
        let mut argmax: Vec<usize> = (0..c).collect();
        for p in 1..positions {
            for ch in 0..c {
                let val = data[p * c + ch];
                if val > out[ch] {
                    out[ch] = val;
                    argmax[ch] = p * c + ch;
                }
            }
        }
        Ok(self.push(Tensor::vector(out), Op::GlobalMax { x, argmax }))
    }

    pub fn l2_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let norm = v.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::invalid("cannot normalize a zero vector"));
        }
        let value = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a / norm).collect())?;
        Ok(self.push(value, Op::L2Normalize { x, norm }))
    }

    /// Stacks equally shaped vectors `[D]` into `[N, D]`.
    pub fn stack(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = xs
            .first()
            .ok_or_else(|| Error::ShapeMismatch("stack of nothing".into()))?;
        let shape = self.value(*first).shape().to_vec();
        if shape.len() != 1 {
            return Err(Error::ShapeMismatch(format!("stack expects vectors, got {shape:?}")));
        }
        let mut data = Vec::with_capacity(xs.len() * shape[0]);
        for &x in xs {
            let v = self.value(x);
            if v.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "stack: {:?} vs {:?}",
                    v.shape(),
                    shape
                )));
            }
            data.extend_from_slice(v.data());
        }
        let value = Tensor::new(vec![xs.len(), shape[0]], data)?;
        Ok(self.push(value, Op::Stack { xs: xs.to_vec() }))
    }

    /// Hardest-in-batch contrastive loss over `[N, D]` anchors and positives:
    ///
    /// `L = mean_i relu(d(a_i,p_i) − m_p)² + mean_i relu(m_n − min_{j≠i} min(d(a_i,p_j), d(a_i,a_j)))²`
    pub fn hardest_contrastive(
        &mut self,
        anchors: NodeId,
        positives: NodeId,
        pos_margin: f64,
        neg_margin: f64,
    ) -> Result<NodeId> {
        let a = self.value(anchors);
        let p = self.value(positives);
        if a.rank() != 2 || a.shape() != p.shape() {
            return Err(Error::ShapeMismatch(format!(
                "contrastive: anchors {:?}, positives {:?}",
                a.shape(),
                p.shape()
            )));
        }
        let (n, d) = (a.shape()[0], a.shape()[1]);
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let row = |t: &'_ Tensor, i: usize| -> Vec<f64> { t.data()[i * d..(i + 1) * d].to_vec() };
        let dist = |x: &[f64], y: &[f64]| -> f64 {
            x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
        };
        let mut pos_dist = Vec::with_capacity(n);
        let mut hardest = Vec::with_capacity(n);
        let mut loss_pos = 0.0;
        let mut loss_neg = 0.0;
        for i in 0..n {
            let ai = row(a, i);
            let dp = dist(&ai, &row(p, i));
            pos_dist.push(dp);
            loss_pos += (dp - pos_margin).max(0.0).powi(2);
            let mut best = (usize::MAX, true, f64::INFINITY);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let dpj = dist(&ai, &row(p, j));
                if dpj < best.2 {
                    best = (j, true, dpj);
                }
                let daj = dist(&ai, &row(a, j));
                if daj < best.2 {
                    best = (j, false, daj);
                }
            }
            loss_neg += (neg_margin - best.2).max(0.0).powi(2);
            hardest.push(best);
        }
        let loss = (loss_pos + loss_neg) / n as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::HardestContrastive {
                anchors,
                positives,
                cache: ContrastiveCache {
                    pos_margin,
                    neg_margin,
                    pos_dist,
                    hardest,
                },
            },
        ))
    }

    /// Backpropagates from a scalar node with seed 1.
    pub fn backward_scalar(&self, output: NodeId) -> Result<Gradients> {
        if self.nodes.is_empty() || output.0 >= self.nodes.len() {
            return Err(Error::NoForwardRecorded);
        }
        if self.value(output).len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward_scalar on {:?}",
                self.value(output).shape()
            )));
        }
        let seed = Tensor::new(self.value(output).shape().to_vec(), vec![1.0])?;
        self.backward(output, &seed)
    }

    /// Reverse accumulation from `output` seeded with `seed` (same shape).
    pub fn backward(&self, output: NodeId, seed: &Tensor) -> Result<Gradients> {
        if self.nodes.is_empty() || output.0 >= self.nodes.len() {
            return Err(Error::NoForwardRecorded);
        }
        if seed.shape() != self.value(output).shape() {
            return Err(Error::ShapeMismatch(format!(
                "seed {:?} for node of shape {:?}",
                seed.shape(),
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        let mut pgrads: Vec<Option<Tensor>> = vec![None; self.params.len()];
        grads[output.0] = Some(seed.clone());

        fn acc(slot: &mut Option<Tensor>, shape: &[usize], add: impl FnOnce(&mut [f64])) {
            let t = slot.get_or_insert_with(|| Tensor::zeros(shape));
            add(t.data_mut());
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Linear { x, w, b } => {
                    let xv = self.value(*x);
                    let wt = self.params.value(*w);
                    let (n, cin) = (xv.shape()[0], xv.shape()[1]);
                    let cout = wt.shape()[1];
                    let (gd, xd, wd) = (g.data(), xv.data(), wt.data());
                    acc(&mut grads[x.0], xv.shape(), |gx| {
                        for i in 0..n {
                            let gi = &gd[i * cout..(i + 1) * cout];
                            for c in 0..cin {
                                let wr = &wd[c * cout..(c + 1) * cout];
                                gx[i * cin + c] += wr.iter().zip(gi).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    });
                    acc(&mut pgrads[w.index()], wt.shape(), |gw| {
                        for i in 0..n {
                            let gi = &gd[i * cout..(i + 1) * cout];
                            for c in 0..cin {
                                let v = xd[i * cin + c];
                                if v == 0.0 {
                                    continue;
                                }
                                for (a, b) in gw[c * cout..(c + 1) * cout].iter_mut().zip(gi) {
                                    *a += v * b;
                                }
                            }
                        }
                    });
                    acc(&mut pgrads[b.index()], &[cout], |gb| {
                        for i in 0..n {
                            for (a, b) in gb.iter_mut().zip(&gd[i * cout..(i + 1) * cout]) {
                                *a += b;
                            }
                        }
                    });
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    acc(&mut grads[x.0], xv.shape(), |gx| {
                        for ((a, &v), &gi) in gx.iter_mut().zip(xv.data()).zip(g.data()) {
                            if v > 0.0 {
                                *a += gi;
                            }
                        }
                    });
                }
                Op::SegmentMax { x, argmax } => {
                    let xv = self.value(*x);
                    let c = xv.shape()[1];
                    acc(&mut grads[x.0], xv.shape(), |gx| {
                        for (k, &row) in argmax.iter().enumerate() {
                            if row != usize::MAX {
                                gx[row * c + k % c] += g.data()[k];
                            }
                        }
                    });
                }
                Op::Reshape { x } => {
                    let xv = self.value(*x);
                    acc(&mut grads[x.0], xv.shape(), |gx| {
                        for (a, b) in gx.iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    });
                }
                Op::CylConv { x, spec, w, b } => {
                    let xv = self.value(*x);
                    let wt = self.params.value(*w);
                    let (gin, gw, gb) = conv_backward(spec, xv.shape(), xv.data(), wt.data(), g.data())?;
                    acc(&mut grads[x.0], xv.shape(), |gx| {
                        for (a, b) in gx.iter_mut().zip(&gin) {
                            *a += b;
                        }
                    });
                    acc(&mut pgrads[w.index()], wt.shape(), |t| {
                        for (a, b) in t.iter_mut().zip(&gw) {
                            *a += b;
                        }
                    });
                    acc(&mut pgrads[b.index()], &[spec.out_channels], |t| {
                        for (a, b) in t.iter_mut().zip(&gb) {
                            *a += b;
                        }
                    });
                }
                Op::GlobalMax { x, argmax } => {
                    let xv = self.value(*x);
                    acc(&mut grads[x.0], xv.shape(), |gx| {
                        for (ch, &pos) in argmax.iter().enumerate() {
                            gx[pos] += g.data()[ch];
                        }
                    });
                }
                Op::L2Normalize { x, norm } => {
                    let y = node.value.data();
                    let dot: f64 = y.iter().zip(g.data()).map(|(a, b)| a * b).sum();
                    let xv = self.value(*x);
                    acc(&mut grads[x.0], xv.shape(), |gx| {
                        for ((a, yi), gi) in gx.iter_mut().zip(y).zip(g.data()) {
                            *a += (gi - yi * dot) / norm;
                        }
                    });
                }
                Op::Stack { xs } => {
                    let d = node.value.shape()[1];
                    for (i, x) in xs.iter().enumerate() {
                        let part = &g.data()[i * d..(i + 1) * d];
                        acc(&mut grads[x.0], &[d], |gx| {
                            for (a, b) in gx.iter_mut().zip(part) {
                                *a += b;
                            }
                        });
                    }
                }
                Op::HardestContrastive {
                    anchors,
                    positives,
                    cache,
                } => {
                    let av = self.value(*anchors);
                    let pv = self.value(*positives);
                    let (n, d) = (av.shape()[0], av.shape()[1]);
                    let scale = g.item() / n as f64;
                    let mut ga = vec![0.0; n * d];
                    let mut gp = vec![0.0; n * d];
                    let ad = av.data();
                    let pd = pv.data();
                    for i in 0..n {
                        let dp = cache.pos_dist[i];
                        if dp > cache.pos_margin && dp > 0.0 {
                            let coef = scale * 2.0 * (dp - cache.pos_margin) / dp;
                            for k in 0..d {
                                let diff = ad[i * d + k] - pd[i * d + k];
                                ga[i * d + k] += coef * diff;
                                gp[i * d + k] -= coef * diff;
                            }
                        }
                        let (j, is_pos, dn) = cache.hardest[i];
                        if dn < cache.neg_margin && dn > 0.0 {
                            // d/dx (m_n − d)² = −2 (m_n − d) ∂d
                            let coef = -scale * 2.0 * (cache.neg_margin - dn) / dn;
                            let other = if is_pos { pd } else { ad };
                            for k in 0..d {
                                let diff = ad[i * d + k] - other[j * d + k];
                                ga[i * d + k] += coef * diff;
                                if is_pos {
                                    gp[j * d + k] -= coef * diff;
                                } else {
                                    ga[j * d + k] -= coef * diff;
                                }
                            }
                        }
                    }
                    acc(&mut grads[anchors.0], av.shape(), |t| {
                        for (a, b) in t.iter_mut().zip(&ga) {
                            *a += b;
                        }
                    });
                    acc(&mut grads[positives.0], pv.shape(), |t| {
                        for (a, b) in t.iter_mut().zip(&gp) {
                            *a += b;
                        }
                    });
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            nodes: grads,
            params: ParamGrads { grads: pgrads },
        })
    }

    /// Convenience: backward from a scalar and accumulate parameter gradients into `store`.
    pub fn backward_into(&self, output: NodeId, store: &mut ParamStore) -> Result<Gradients> {
        let g = self.backward_scalar(output)?;
        store.accumulate(&g.params);
        Ok(g)
    }
}
