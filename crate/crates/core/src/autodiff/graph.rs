use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use super::tensor::{Scalar, Tensor};
use crate::error::{structural, validation, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

enum Op<F> {
    Leaf,
    Add { a: Var, b: Var },
    ChannelBias { input: Var, bias: Var },
    Relu { input: Var },
    Conv2d { input: Var, kernel: Var, geom: ConvGeom },
    MaxOverAxis { input: Var, len: usize, inner: usize, argmax: Vec<u32> },
    ElementwiseMax { a: Var, b: Var, took_b: Vec<bool> },
    SoftmaxWeightedSum { candidates: Vec<Var>, temperature: Var, weights: Vec<F> },
    Expectation { values: Var, weights: Vec<F> },
    OrientationHead { q: Var, weight: Var, bias: Var },
    MaskedCrossEntropy { logits: Var, labels: Vec<u8>, mask: Vec<bool>, probs: Vec<F>, count: usize },
    Sum { input: Var },
    Reshape { input: Var },
}

struct Node<F> {
    op: Op<F>,
    value: Tensor<F>,
    requires_grad: bool,
}

/// Tape of tensor operations recorded in topological order.
///
/// A graph is built for one forward pass and consumed by exactly one call to
/// [`Graph::backward`]; afterwards only leaf gradients are retained.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
    decisions: Vec<Vec<u32>>,
    backward_done: bool,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), decisions: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<F>, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node<F>> {
        self.nodes.get(v.0).ok_or_else(|| structural!("variable {} does not belong to this graph", v.0))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn parameter(&mut self, value: Tensor<F>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Argmax indices saved by a `max_over_axis` node.
    pub fn argmax(&self, v: Var) -> Option<&[u32]> {
        match &self.nodes.get(v.0)?.op {
            Op::MaxOverAxis { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    /// Records a discrete choice made outside the graph (e.g. a sampled
    /// policy) so that it takes part in [`Graph::kink_signature`].
    pub fn record_decision(&mut self, choice: Vec<u32>) {
        self.decisions.push(choice);
    }

    /// Hash of every discrete branch taken in the forward pass: argmax
    /// slots, elementwise-max winners, rectifier masks and recorded
    /// decisions. Two forward passes with equal signatures lie on the same
    /// smooth piece of the network function.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::MaxOverAxis { argmax, .. } => argmax.iter().for_each(|&a| h.write_u32(a)),
                Op::ElementwiseMax { took_b, .. } => took_b.iter().for_each(|&t| h.write_u8(t as u8)),
                Op::Relu { input } => {
                    for &x in self.nodes[input.0].value.data() {
                        h.write_u8((x > F::zero()) as u8);
                    }
                }
                _ => {}
            }
        }
        for d in &self.decisions {
            d.iter().for_each(|&a| h.write_u32(a));
        }
        h.finish()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.node(a)?.value, &self.node(b)?.value);
        if va.shape() != vb.shape() {
            return Err(structural!("add: shape mismatch {:?} vs {:?}", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add { a, b }, value, rg))
    }

    /// Adds `bias[c]` to every element of channel `c` of a `C×…` tensor.
    pub fn channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let (vi, vb) = (&self.node(input)?.value, &self.node(bias)?.value);
        let c = vi.shape()[0];
        if vb.len() != c {
            return Err(structural!("channel_bias: {} channels but {} biases", c, vb.len()));
        }
        let per = vi.len() / c.max(1);
        let mut data = vi.data().to_vec();
        for (ch, chunk) in data.chunks_mut(per).enumerate() {
            let b = vb.data()[ch];
            chunk.iter_mut().for_each(|x| *x += b);
        }
        let value = Tensor::new(vi.shape().to_vec(), data)?;
        let rg = self.needs(input) || self.needs(bias);
        Ok(self.push(Op::ChannelBias { input, bias }, value, rg))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let vi = &self.node(input)?.value;
        let data = vi.data().iter().map(|&x| if x > F::zero() { x } else { F::zero() }).collect();
        let value = Tensor::new(vi.shape().to_vec(), data)?;
        let rg = self.needs(input);
        Ok(self.push(Op::Relu { input }, value, rg))
    }

    /// Cross-correlation of a `C_in×H×W` input (an `H×W` input counts as one
    /// channel) with `C_out×C_in×k×k` kernels. Taps outside the input read zero.
    pub fn conv2d(&mut self, input: Var, kernel: Var, padding: usize) -> Result<Var> {
        let (vi, vk) = (&self.node(input)?.value, &self.node(kernel)?.value);
        let (c_in, h, w) = match *vi.shape() {
            [c, h, w] => (c, h, w),
            [h, w] => (1, h, w),
            ref s => return Err(structural!("conv2d: input must be C×H×W, got {:?}", s)),
        };
        let [c_out, kc_in, k, k2] = *vk.shape() else {
            return Err(structural!("conv2d: kernel must be C_out×C_in×k×k, got {:?}", vk.shape()));
        };
        if kc_in != c_in {
            return Err(structural!("conv2d: input has {} channels but kernel expects {}", c_in, kc_in));
        }
        if k != k2 || k == 0 {
            return Err(structural!("conv2d: kernel must be square and nonempty, got {}×{}", k, k2));
        }
        if h + 2 * padding < k || w + 2 * padding < k {
            return Err(structural!("conv2d: kernel {} larger than padded input {}×{}", k, h, w));
        }
        let geom = ConvGeom {
            c_in,
            h,
            w,
            c_out,
            k,
            pad: padding,
            h_out: h + 2 * padding - k + 1,
            w_out: w + 2 * padding - k + 1,
        };
        let out = conv_forward(vi.data(), vk.data(), &geom);
        let value = Tensor::new(vec![c_out, geom.h_out, geom.w_out], out)?;
        let rg = self.needs(input) || self.needs(kernel);
        Ok(self.push(Op::Conv2d { input, kernel, geom }, value, rg))
    }

    /// Maximum along `axis` (removed from the shape). Ties resolve to the
    /// lowest index; the gradient flows only to the winning slot.
    pub fn max_over_axis(&mut self, input: Var, axis: usize) -> Result<Var> {
        let vi = &self.node(input)?.value;
        let shape = vi.shape();
        if axis >= shape.len() {
            return Err(structural!("max_over_axis: axis {} out of range for {:?}", axis, shape));
        }
        let len = shape[axis];
        if len == 0 {
            return Err(structural!("max_over_axis: axis {} is empty", axis));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = vi.data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = o * len * inner;
            for r in 0..inner {
                let mut best = src[base + r];
                let mut arg = 0u32;
                for l in 1..len {
                    let x = src[base + l * inner + r];
                    if x > best {
                        best = x;
                        arg = l as u32;
                    }
                }
                out.push(best);
                argmax.push(arg);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let value = Tensor::new(out_shape, out)?;
        let rg = self.needs(input);
        Ok(self.push(Op::MaxOverAxis { input, len, inner, argmax }, value, rg))
    }

    /// Per-position maximum; ties go to `a`.
    pub fn elementwise_max(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.node(a)?.value, &self.node(b)?.value);
        if va.shape() != vb.shape() {
            return Err(structural!("elementwise_max: shape mismatch {:?} vs {:?}", va.shape(), vb.shape()));
        }
        let took_b: Vec<bool> = va.data().iter().zip(vb.data()).map(|(&x, &y)| y > x).collect();
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .zip(&took_b)
            .map(|((&x, &y), &t)| if t { y } else { x })
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Op::ElementwiseMax { a, b, took_b }, value, rg))
    }

    /// Per position, `Σ_l w_l v_l` with `w = softmax(α·v)` taken over the
    /// candidates themselves. The result is clamped to the candidates' range
    /// so rounding never pushes it outside the convex hull.
    pub fn softmax_weighted_sum(&mut self, candidates: &[Var], temperature: Var) -> Result<Var> {
        let first = *candidates
            .first()
            .ok_or_else(|| structural!("softmax_weighted_sum: no candidates"))?;
        let shape = self.node(first)?.value.shape().to_vec();
        for &c in candidates {
            if self.node(c)?.value.shape() != shape.as_slice() {
                return Err(structural!(
                    "softmax_weighted_sum: candidate shape {:?} differs from {:?}",
                    self.nodes[c.0].value.shape(),
                    shape
                ));
            }
        }
        let vt = &self.node(temperature)?.value;
        if vt.len() != 1 {
            return Err(structural!("softmax_weighted_sum: temperature must be a scalar, got {:?}", vt.shape()));
        }
        let alpha = vt.item();
        let n = self.nodes[first.0].value.len();
        let l_count = candidates.len();
        let vals: Vec<&[F]> = candidates.iter().map(|c| self.nodes[c.0].value.data()).collect();
        let mut weights = vec![F::zero(); l_count * n];
        let mut out = vec![F::zero(); n];
        for p in 0..n {
            let mut m = alpha * vals[0][p];
            for v in &vals[1..] {
                let s = alpha * v[p];
                if s > m {
                    m = s;
                }
            }
            let mut z = F::zero();
            for (l, v) in vals.iter().enumerate() {
                let e = (alpha * v[p] - m).exp();
                weights[l * n + p] = e;
                z += e;
            }
            let mut acc = F::zero();
            let (mut lo, mut hi) = (vals[0][p], vals[0][p]);
            for (l, v) in vals.iter().enumerate() {
                let wgt = weights[l * n + p] / z;
                weights[l * n + p] = wgt;
                acc += wgt * v[p];
                lo = lo.min(v[p]);
                hi = hi.max(v[p]);
            }
            out[p] = acc.max(lo).min(hi);
        }
        let value = Tensor::new(shape, out)?;
        let rg = candidates.iter().any(|&c| self.needs(c)) || self.needs(temperature);
        Ok(self.push(
            Op::SoftmaxWeightedSum { candidates: candidates.to_vec(), temperature, weights },
            value,
            rg,
        ))
    }

    /// `Σ_a weights[a]·values[a]` over the leading axis of `A×H×W` tensors.
    /// The weights are constants and must form a distribution per position.
    pub fn expectation_over_axis(&mut self, values: Var, weights: &Tensor<F>) -> Result<Var> {
        let vv = &self.node(values)?.value;
        if vv.shape() != weights.shape() || vv.shape().len() != 3 {
            return Err(structural!(
                "expectation_over_axis: values {:?} and weights {:?} must be equal A×H×W shapes",
                vv.shape(),
                weights.shape()
            ));
        }
        let a_count = vv.shape()[0];
        let n = vv.len() / a_count.max(1);
        let tol = F::from_f64_lossy(1e-6);
        let w = weights.data();
        for p in 0..n {
            let mut s = F::zero();
            for a in 0..a_count {
                let x = w[a * n + p];
                if x < F::zero() {
                    return Err(validation!("expectation_over_axis: negative weight at position {}", p));
                }
                s += x;
            }
            if (s - F::one()).abs() > tol {
                return Err(validation!(
                    "expectation_over_axis: weights at position {} sum to {:?}, not 1",
                    p,
                    s
                ));
            }
        }
        let v = vv.data();
        let mut out = vec![F::zero(); n];
        for (p, o) in out.iter_mut().enumerate() {
            // Zero-weight terms are skipped so that one-hot weights reproduce
            // the selected value bit for bit.
            let mut acc: Option<F> = None;
            for a in 0..a_count {
                let x = w[a * n + p];
                if x != F::zero() {
                    let t = x * v[a * n + p];
                    acc = Some(acc.map_or(t, |s| s + t));
                }
            }
            *o = acc.unwrap_or_else(F::zero);
        }
        let value = Tensor::new(vv.shape()[1..].to_vec(), out)?;
        let rg = self.needs(values);
        Ok(self.push(Op::Expectation { values, weights: weights.data().to_vec() }, value, rg))
    }

    /// Maps latent action values `A×H×W` to per-orientation action logits
    /// `O×H×W×K` with `logits[o,i,j,·] = weight[o]·q[·,i,j] + bias[o]`.
    /// `weight` is `O×K×A`, `bias` is `O×K`.
    pub fn orientation_head(&mut self, q: Var, weight: Var, bias: Var) -> Result<Var> {
        let (vq, vw, vb) = (&self.node(q)?.value, &self.node(weight)?.value, &self.node(bias)?.value);
        let [a_count, h, w] = *vq.shape() else {
            return Err(structural!("orientation_head: q must be A×H×W, got {:?}", vq.shape()));
        };
        let [o_count, k, wa] = *vw.shape() else {
            return Err(structural!("orientation_head: weight must be O×K×A, got {:?}", vw.shape()));
        };
        if wa != a_count || vb.shape() != [o_count, k] {
            return Err(structural!(
                "orientation_head: weight {:?} / bias {:?} incompatible with q {:?}",
                vw.shape(),
                vb.shape(),
                vq.shape()
            ));
        }
        let hw = h * w;
        let (qd, wd, bd) = (vq.data(), vw.data(), vb.data());
        let mut out = vec![F::zero(); o_count * hw * k];
        for o in 0..o_count {
            for c in 0..k {
                let row = &wd[(o * k + c) * a_count..(o * k + c + 1) * a_count];
                let b = bd[o * k + c];
                for p in 0..hw {
                    let mut acc = b;
                    for (a, &wv) in row.iter().enumerate() {
                        acc += wv * qd[a * hw + p];
                    }
                    out[(o * hw + p) * k + c] = acc;
                }
            }
        }
        let value = Tensor::new(vec![o_count, h, w, k], out)?;
        let rg = self.needs(q) || self.needs(weight) || self.needs(bias);
        Ok(self.push(Op::OrientationHead { q, weight, bias }, value, rg))
    }

    /// Mean over masked rows of `-log softmax(logits)[label]`; rows are the
    /// leading dimensions flattened, classes the last dimension.
    pub fn masked_cross_entropy(&mut self, logits: Var, labels: &[u8], mask: &[bool]) -> Result<Var> {
        let vl = &self.node(logits)?.value;
        let k = *vl.shape().last().unwrap_or(&0);
        if k == 0 {
            return Err(structural!("masked_cross_entropy: empty class axis"));
        }
        let rows = vl.len() / k;
        if labels.len() != rows || mask.len() != rows {
            return Err(structural!(
                "masked_cross_entropy: {} rows but {} labels and {} mask entries",
                rows,
                labels.len(),
                mask.len()
            ));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(validation!("masked_cross_entropy: mask selects no rows"));
        }
        let ld = vl.data();
        let mut probs = vec![F::zero(); rows * k];
        let mut total = F::zero();
        for r in 0..rows {
            if !mask[r] {
                continue;
            }
            let label = labels[r] as usize;
            if label >= k {
                return Err(validation!("masked_cross_entropy: label {} at row {} out of range", label, r));
            }
            let row = &ld[r * k..(r + 1) * k];
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let z: F = row.iter().map(|&x| (x - m).exp()).sum();
            let lse = m + z.ln();
            total += lse - row[label];
            for c in 0..k {
                probs[r * k + c] = (row[c] - m).exp() / z;
            }
        }
        let cnt = F::from_usize(count).expect("count fits");
        let value = Tensor::scalar(total / cnt);
        let rg = self.needs(logits);
        Ok(self.push(
            Op::MaskedCrossEntropy { logits, labels: labels.to_vec(), mask: mask.to_vec(), probs, count },
            value,
            rg,
        ))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s: F = self.node(input)?.value.data().iter().copied().sum();
        let rg = self.needs(input);
        Ok(self.push(Op::Sum { input }, Tensor::scalar(s), rg))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.node(input)?.value.clone().reshaped(shape)?;
        let rg = self.needs(input);
        Ok(self.push(Op::Reshape { input }, value, rg))
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively at
    /// fan-out; only leaf gradients are kept afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(structural!("backward called twice on the same graph"));
        }
        if self.node(loss)?.value.len() != 1 {
            return Err(structural!("backward: loss must be a scalar, got {:?}", self.nodes[loss.0].value.shape()));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        let nodes = &self.nodes;
        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Add { a, b } => {
                    for v in [a, b] {
                        if let Some(ga) = slot(&mut grads, nodes, *v) {
                            ga.iter_mut().zip(&g).for_each(|(x, &y)| *x += y);
                        }
                    }
                }
                Op::ChannelBias { input, bias } => {
                    let c = nodes[bias.0].value.len();
                    let per = g.len() / c.max(1);
                    if let Some(gi) = slot(&mut grads, nodes, *input) {
                        gi.iter_mut().zip(&g).for_each(|(x, &y)| *x += y);
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *bias) {
                        for (ch, chunk) in g.chunks(per).enumerate() {
                            gb[ch] += chunk.iter().copied().sum();
                        }
                    }
                }
                Op::Relu { input } => {
                    let x = nodes[input.0].value.data();
                    if let Some(gi) = slot(&mut grads, nodes, *input) {
                        for ((o, &gv), &xv) in gi.iter_mut().zip(&g).zip(x) {
                            if xv > F::zero() {
                                *o += gv;
                            }
                        }
                    }
                }
                Op::Conv2d { input, kernel, geom } => {
                    let xin = nodes[input.0].value.data();
                    let ker = nodes[kernel.0].value.data();
                    if let Some(gi) = slot(&mut grads, nodes, *input) {
                        conv_backward_input(&g, ker, gi, geom);
                    }
                    if let Some(gk) = slot(&mut grads, nodes, *kernel) {
                        conv_backward_kernel(&g, xin, gk, geom);
                    }
                }
                Op::MaxOverAxis { input, len, inner, argmax } => {
                    if let Some(gi) = slot(&mut grads, nodes, *input) {
                        for (q, (&gv, &arg)) in g.iter().zip(argmax).enumerate() {
                            let (o, r) = (q / inner, q % inner);
                            gi[(o * len + arg as usize) * inner + r] += gv;
                        }
                    }
                }
                Op::ElementwiseMax { a, b, took_b } => {
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for ((x, &gv), &t) in ga.iter_mut().zip(&g).zip(took_b) {
                            if !t {
                                *x += gv;
                            }
                        }
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        for ((x, &gv), &t) in gb.iter_mut().zip(&g).zip(took_b) {
                            if t {
                                *x += gv;
                            }
                        }
                    }
                }
                Op::SoftmaxWeightedSum { candidates, temperature, weights } => {
                    let n = g.len();
                    let alpha = nodes[temperature.0].value.item();
                    let out = node.value.data();
                    for (l, c) in candidates.iter().enumerate() {
                        let v = nodes[c.0].value.data();
                        if let Some(gc) = slot(&mut grads, nodes, *c) {
                            for p in 0..n {
                                let wgt = weights[l * n + p];
                                gc[p] += g[p] * wgt * (F::one() + alpha * (v[p] - out[p]));
                            }
                        }
                    }
                    if nodes[temperature.0].requires_grad {
                        let mut d_alpha = F::zero();
                        for (l, c) in candidates.iter().enumerate() {
                            let v = nodes[c.0].value.data();
                            for p in 0..n {
                                d_alpha += g[p] * weights[l * n + p] * v[p] * (v[p] - out[p]);
                            }
                        }
                        if let Some(gt) = slot(&mut grads, nodes, *temperature) {
                            gt[0] += d_alpha;
                        }
                    }
                }
                Op::Expectation { values, weights } => {
                    let n = g.len();
                    if let Some(gv) = slot(&mut grads, nodes, *values) {
                        for (i, x) in gv.iter_mut().enumerate() {
                            *x += weights[i] * g[i % n];
                        }
                    }
                }
                Op::OrientationHead { q, weight, bias } => {
                    let [a_count, h, w] = *nodes[q.0].value.shape() else { unreachable!() };
                    let [o_count, k, _] = *nodes[weight.0].value.shape() else { unreachable!() };
                    let hw = h * w;
                    let qd = nodes[q.0].value.data();
                    let wd = nodes[weight.0].value.data();
                    if let Some(gq) = slot(&mut grads, nodes, *q) {
                        for o in 0..o_count {
                            for c in 0..k {
                                let row = &wd[(o * k + c) * a_count..(o * k + c + 1) * a_count];
                                for p in 0..hw {
                                    let gv = g[(o * hw + p) * k + c];
                                    for (a, &wv) in row.iter().enumerate() {
                                        gq[a * hw + p] += wv * gv;
                                    }
                                }
                            }
                        }
                    }
                    if let Some(gw) = slot(&mut grads, nodes, *weight) {
                        for o in 0..o_count {
                            for c in 0..k {
                                for a in 0..a_count {
                                    let qa = &qd[a * hw..(a + 1) * hw];
                                    let mut acc = F::zero();
                                    for (p, &qv) in qa.iter().enumerate() {
                                        acc += qv * g[(o * hw + p) * k + c];
                                    }
                                    gw[(o * k + c) * a_count + a] += acc;
                                }
                            }
                        }
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *bias) {
                        for o in 0..o_count {
                            for p in 0..hw {
                                for c in 0..k {
                                    gb[o * k + c] += g[(o * hw + p) * k + c];
                                }
                            }
                        }
                    }
                }
                Op::MaskedCrossEntropy { logits, labels, mask, probs, count } => {
                    let k = *nodes[logits.0].value.shape().last().expect("class axis");
                    let scale = g[0] / F::from_usize(*count).expect("count fits");
                    if let Some(gl) = slot(&mut grads, nodes, *logits) {
                        for (r, (&m, &label)) in mask.iter().zip(labels).enumerate() {
                            if !m {
                                continue;
                            }
                            for c in 0..k {
                                let target = if c == label as usize { F::one() } else { F::zero() };
                                gl[r * k + c] += scale * (probs[r * k + c] - target);
                            }
                        }
                    }
                }
                Op::Sum { input } => {
                    if let Some(gi) = slot(&mut grads, nodes, *input) {
                        gi.iter_mut().for_each(|x| *x += g[0]);
                    }
                }
                Op::Reshape { input } => {
                    if let Some(gi) = slot(&mut grads, nodes, *input) {
                        gi.iter_mut().zip(&g).for_each(|(x, &y)| *x += y);
                    }
                }
            }
        }
        self.grads = grads;
        Ok(())
    }
}

fn slot<'a, F: Scalar>(grads: &'a mut [Option<Vec<F>>], nodes: &[Node<F>], v: Var) -> Option<&'a mut Vec<F>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); node.value.len()]))
}

/// Row ranges `[out_lo, out_hi)` for which `out + tap - pad` falls in `[0, size)`.
#[inline]
fn valid_range(tap: usize, pad: usize, size: usize, out_size: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(tap);
    let hi = (size + pad).saturating_sub(tap).min(out_size);
    (lo, hi.max(lo))
}

fn conv_forward<F: Scalar>(x: &[F], ker: &[F], g: &ConvGeom) -> Vec<F> {
    let mut out = vec![F::zero(); g.c_out * g.h_out * g.w_out];
    for co in 0..g.c_out {
        let out_c = &mut out[co * g.h_out * g.w_out..(co + 1) * g.h_out * g.w_out];
        for ci in 0..g.c_in {
            let x_c = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for di in 0..g.k {
                let (i0, i1) = valid_range(di, g.pad, g.h, g.h_out);
                for dj in 0..g.k {
                    let wv = ker[((co * g.c_in + ci) * g.k + di) * g.k + dj];
                    if wv == F::zero() {
                        continue;
                    }
                    let (j0, j1) = valid_range(dj, g.pad, g.w, g.w_out);
                    for i in i0..i1 {
                        let y = i + di - g.pad;
                        let x0 = j0 + dj - g.pad;
                        let src = &x_c[y * g.w + x0..y * g.w + x0 + (j1 - j0)];
                        let dst = &mut out_c[i * g.w_out + j0..i * g.w_out + j1];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward_input<F: Scalar>(gout: &[F], ker: &[F], gin: &mut [F], g: &ConvGeom) {
    for co in 0..g.c_out {
        let go = &gout[co * g.h_out * g.w_out..(co + 1) * g.h_out * g.w_out];
        for ci in 0..g.c_in {
            let gi_c = &mut gin[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for di in 0..g.k {
                let (i0, i1) = valid_range(di, g.pad, g.h, g.h_out);
                for dj in 0..g.k {
                    let wv = ker[((co * g.c_in + ci) * g.k + di) * g.k + dj];
                    let (j0, j1) = valid_range(dj, g.pad, g.w, g.w_out);
                    for i in i0..i1 {
                        let y = i + di - g.pad;
                        let x0 = j0 + dj - g.pad;
                        let dst = &mut gi_c[y * g.w + x0..y * g.w + x0 + (j1 - j0)];
                        let src = &go[i * g.w_out + j0..i * g.w_out + j1];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward_kernel<F: Scalar>(gout: &[F], x: &[F], gk: &mut [F], g: &ConvGeom) {
    for co in 0..g.c_out {
        let go = &gout[co * g.h_out * g.w_out..(co + 1) * g.h_out * g.w_out];
        for ci in 0..g.c_in {
            let x_c = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for di in 0..g.k {
                let (i0, i1) = valid_range(di, g.pad, g.h, g.h_out);
                for dj in 0..g.k {
                    let (j0, j1) = valid_range(dj, g.pad, g.w, g.w_out);
                    let mut acc = F::zero();
                    for i in i0..i1 {
                        let y = i + di - g.pad;
                        let x0 = j0 + dj - g.pad;
                        let src = &x_c[y * g.w + x0..y * g.w + x0 + (j1 - j0)];
                        let gr = &go[i * g.w_out + j0..i * g.w_out + j1];
                        for (&a, &b) in src.iter().zip(gr) {
                            acc += a * b;
                        }
                    }
                    gk[((co * g.c_in + ci) * g.k + di) * g.k + dj] += acc;
                }
            }
        }
    }
}
