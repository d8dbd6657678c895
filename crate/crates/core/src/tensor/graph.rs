use super::kernels::{self, ConvGeometry};
use super::{Float, ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Running statistics carried by a batchnorm layer between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Float> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Batchnorm hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geo: ConvGeometry,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        training: bool,
    },
    Relu(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Concat {
        parts: Vec<Var>,
        widths: Vec<usize>,
    },
    GlobalAvgPool(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Ordered record of executed operations. Every operation's inputs precede it,
/// so a reverse sweep visits each node after all of its consumers.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that takes no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that collects a gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Bring a parameter into the graph. Frozen parameters enter as constants.
    pub fn param(&mut self, params: &ParamSet<T>, id: ParamId) -> Var {
        let v = self.push(params.get(id).clone(), Op::Leaf, !params.is_frozen(id));
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    /// Gradient of the last `backward` loss with respect to `v`, if it received one.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every trainable parameter leaf, summed per parameter when a
    /// parameter entered the graph more than once.
    pub fn param_grads(&self) -> Vec<(ParamId, Vec<T>)> {
        let mut out: Vec<(ParamId, Vec<T>)> = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let (Some(id), Some(g)) = (node.param, self.grads.get(i).and_then(|g| g.as_ref()))
            else {
                continue;
            };
            match out.iter_mut().find(|(pid, _)| *pid == id) {
                Some((_, acc)) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
                None => out.push((id, g.clone())),
            }
        }
        out.sort_by_key(|(id, _)| *id);
        out
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape("conv2d", format!("input {xs:?}, weight {ws:?}")));
        }
        if xs[1] != ws[1] {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels, weight expects {}", xs[1], ws[1]),
            ));
        }
        if stride == 0 || xs[2] + 2 * padding < ws[2] || xs[3] + 2 * padding < ws[3] {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {ws:?} with stride {stride}, padding {padding} on {xs:?}"),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [ws[0]] {
                return Err(Error::shape("conv2d", format!("bias {:?}", self.shape(b))));
            }
        }
        let geo = ConvGeometry {
            batch: xs[0],
            in_channels: xs[1],
            height: xs[2],
            width: xs[3],
            out_channels: ws[0],
            kernel_h: ws[2],
            kernel_w: ws[3],
            stride,
            padding,
        };
        let out = kernels::conv2d_forward(
            &geo,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(&geo.output_shape(), out)?;
        let rg = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geo,
            },
            rg,
        ))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::shape("linear", format!("input {xs:?}, weight {ws:?}")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [ws[0]] {
                return Err(Error::shape("linear", format!("bias {:?}", self.shape(b))));
            }
        }
        let (n, d, k) = (xs[0], xs[1], ws[0]);
        let out = kernels::linear_forward(
            n,
            d,
            k,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(&[n, k], out)?;
        let rg = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    /// Per-channel normalization of an NCHW tensor. Training mode normalizes by
    /// batch statistics and folds them into `stats`; eval mode reads `stats`.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        cfg: BatchNormConfig,
        training: bool,
    ) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 {
            return Err(Error::shape("batchnorm2d", format!("input {xs:?}")));
        }
        let (n, c, spatial) = (xs[0], xs[1], xs[2] * xs[3]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || stats.mean.len() != c {
            return Err(Error::shape(
                "batchnorm2d",
                format!("{c} channels but affine/stats sized {:?}", self.shape(gamma)),
            ));
        }
        let count = n * spatial;
        let eps = T::of(cfg.eps);
        let (mean, var) = if training {
            if count < 2 {
                return Err(Error::DegenerateVariance { channel: 0, count });
            }
            let (mean, var) = kernels::channel_moments(self.value(input).data(), n, c, spatial);
            let m = T::of(cfg.momentum);
            let unbias = T::of(count as f64 / (count - 1) as f64);
            for ch in 0..c {
                stats.mean[ch] = (T::one() - m) * stats.mean[ch] + m * mean[ch];
                stats.var[ch] = (T::one() - m) * stats.var[ch] + m * var[ch] * unbias;
            }
            (mean, var)
        } else {
            (stats.mean.clone(), stats.var.clone())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * spatial;
                for i in off..off + spatial {
                    let h = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g[ch] * h + b[ch];
                }
            }
        }
        let value = Tensor::new(&xs, out)?;
        let rg = self.needs(input) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.needs(input);
        self.push(value, Op::Relu(input), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let f = T::of(factor);
        let value = self.value(input).map(|v| v * f);
        let rg = self.needs(input);
        self.push(value, Op::Scale(input, f), rg)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total: T = self.value(input).data().iter().copied().sum();
        let rg = self.needs(input);
        self.push(Tensor::scalar(total), Op::Sum(input), rg)
    }

    /// Concatenate along dim 1. All parts must agree on dim 0 and on every
    /// dim after 1.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .map(|&p| self.shape(p).to_vec())
            .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
        if first.len() < 2 {
            return Err(Error::shape("concat_channels", format!("rank of {first:?}")));
        }
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s[0] != first[0] || s[2..] != first[2..] {
                return Err(Error::shape(
                    "concat_channels",
                    format!("{s:?} does not line up with {first:?}"),
                ));
            }
            widths.push(s[1..].iter().product::<usize>());
        }
        let batch = first[0];
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(batch * total);
        for n in 0..batch {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[n * w..(n + 1) * w]);
            }
        }
        let mut shape = first.clone();
        shape[1] = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let value = Tensor::new(&shape, data)?;
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                widths,
            },
            rg,
        ))
    }

    /// Mean over spatial dims: [N, C, H, W] -> [N, C].
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("global_avg_pool", format!("input {s:?}")));
        }
        let spatial = s[2] * s[3];
        let denom = T::of(spatial as f64);
        let data = self
            .value(input)
            .data()
            .chunks(spatial)
            .map(|c| c.iter().copied().sum::<T>() / denom)
            .collect();
        let value = Tensor::new(&[s[0], s[1]], data)?;
        let rg = self.needs(input);
        Ok(self.push(value, Op::GlobalAvgPool(input), rg))
    }

    /// Mean softmax cross-entropy over the batch. `allowed`, when given, is an
    /// N x K mask; logits where it is false are treated as negative infinity.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        allowed: Option<&[bool]>,
    ) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits {s:?} with {} labels", labels.len()),
            ));
        }
        let (n, k) = (s[0], s[1]);
        if let Some(mask) = allowed {
            if mask.len() != n * k {
                return Err(Error::shape("softmax_cross_entropy", "mask size"));
            }
        }
        let z = self.value(logits).data();
        let mut probs = vec![T::zero(); n * k];
        let mut total = T::zero();
        for (row, &label) in labels.iter().enumerate() {
            let ok = |j: usize| allowed.is_none_or(|m| m[row * k + j]);
            if label >= k || !ok(label) {
                return Err(Error::Label { label, classes: k });
            }
            let zr = &z[row * k..(row + 1) * k];
            let max = (0..k)
                .filter(|&j| ok(j))
                .map(|j| zr[j])
                .fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for j in 0..k {
                if ok(j) {
                    let e = (zr[j] - max).exp();
                    probs[row * k + j] = e;
                    denom += e;
                }
            }
            for p in &mut probs[row * k..(row + 1) * k] {
                *p /= denom;
            }
            total += denom.ln() - (zr[label] - max);
        }
        let loss = total / T::of(n as f64);
        let rg = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let n = T::of(self.value(a).numel() as f64);
        let total: T = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(total / n), Op::Mse(a, b), rg))
    }

    /// Populate gradients of `loss` with respect to every node that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ls = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss { shape: ls.to_vec() });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, index: usize, g: &[T]) {
        let mut pending: Vec<(Var, Vec<T>)> = Vec::new();
        let node = &self.nodes[index];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geo,
            } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    geo,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    self.needs(*input),
                    self.needs(*weight),
                    bias.is_some_and(|b| self.needs(b)),
                );
                pending.extend(dx.map(|d| (*input, d)));
                pending.extend(dw.map(|d| (*weight, d)));
                if let (Some(b), Some(d)) = (bias, db) {
                    pending.push((*b, d));
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let xs = self.shape(*input);
                let (n, d) = (xs[0], xs[1]);
                let k = self.shape(*weight)[0];
                let (dx, dw, db) = kernels::linear_backward(
                    n,
                    d,
                    k,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    self.needs(*input),
                    self.needs(*weight),
                    bias.is_some_and(|b| self.needs(b)),
                );
                pending.extend(dx.map(|d| (*input, d)));
                pending.extend(dw.map(|d| (*weight, d)));
                if let (Some(b), Some(d)) = (bias, db) {
                    pending.push((*b, d));
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            } => {
                let s = self.shape(*input);
                let (n, c, spatial) = (s[0], s[1], s[2] * s[3]);
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for sample in 0..n {
                    for ch in 0..c {
                        let off = (sample * c + ch) * spatial;
                        for i in off..off + spatial {
                            dgamma[ch] += g[i] * xhat[i];
                            dbeta[ch] += g[i];
                        }
                    }
                }
                if self.needs(*input) {
                    let mut dx = vec![T::zero(); g.len()];
                    let m = T::of((n * spatial) as f64);
                    for ch in 0..c {
                        let scale = gam[ch] * inv_std[ch];
                        // With batch statistics the mean and variance depend on x too.
                        let (mean_term, proj_term) = if *training {
                            (dbeta[ch] / m, dgamma[ch] / m)
                        } else {
                            (T::zero(), T::zero())
                        };
                        for sample in 0..n {
                            let off = (sample * c + ch) * spatial;
                            for i in off..off + spatial {
                                dx[i] = scale * (g[i] - mean_term - xhat[i] * proj_term);
                            }
                        }
                    }
                    pending.push((*input, dx));
                }
                pending.push((*gamma, dgamma));
                pending.push((*beta, dbeta));
            }
            Op::Relu(input) => {
                let x = self.value(*input).data();
                let dx = x
                    .iter()
                    .zip(g)
                    .map(|(&xi, &gi)| if xi > T::zero() { gi } else { T::zero() })
                    .collect();
                pending.push((*input, dx));
            }
            Op::Add(a, b) => {
                pending.push((*a, g.to_vec()));
                pending.push((*b, g.to_vec()));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                pending.push((*a, g.iter().zip(bv).map(|(&gi, &y)| gi * y).collect()));
                pending.push((*b, g.iter().zip(av).map(|(&gi, &x)| gi * x).collect()));
            }
            Op::Scale(input, f) => {
                pending.push((*input, g.iter().map(|&gi| gi * *f).collect()));
            }
            Op::Sum(input) => {
                pending.push((*input, vec![g[0]; self.value(*input).numel()]));
            }
            Op::Concat { parts, widths } => {
                let total: usize = widths.iter().sum();
                let batch = g.len() / total;
                let mut outs: Vec<Vec<T>> = widths.iter().map(|w| Vec::with_capacity(w * batch)).collect();
                for n in 0..batch {
                    let mut off = n * total;
                    for (o, &w) in outs.iter_mut().zip(widths) {
                        o.extend_from_slice(&g[off..off + w]);
                        off += w;
                    }
                }
                pending.extend(parts.iter().copied().zip(outs));
            }
            Op::GlobalAvgPool(input) => {
                let s = self.shape(*input);
                let spatial = s[2] * s[3];
                let denom = T::of(spatial as f64);
                let dx = g
                    .iter()
                    .flat_map(|&gi| std::iter::repeat_n(gi / denom, spatial))
                    .collect();
                pending.push((*input, dx));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let n = labels.len();
                let k = probs.len() / n;
                let scale = g[0] / T::of(n as f64);
                let mut dz: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (row, &label) in labels.iter().enumerate() {
                    dz[row * k + label] -= scale;
                }
                pending.push((*logits, dz));
            }
            Op::Mse(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let scale = T::of(2.0) * g[0] / T::of(av.len() as f64);
                let da: Vec<T> = av.iter().zip(bv).map(|(&x, &y)| scale * (x - y)).collect();
                let db = da.iter().map(|&v| -v).collect();
                pending.push((*a, da));
                pending.push((*b, db));
            }
        }
        for (v, d) in pending {
            self.accumulate(v, d);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn conv_sum_of_ones() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let w = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.shape(y), [1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), [9.0]);
    }

    #[test]
    fn conv_pointwise_scaling() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = g.constant(t(&[1, 1, 1, 1], &[2.0]));
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), [2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn conv_channel_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
        assert!(matches!(g.conv2d(x, w, None, 1, 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn linear_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2], &[1.0, 0.0]));
        let w = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(t(&[2], &[0.0, 0.0]));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), [1.0, 0.0]);

        let x = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = g.constant(t(&[1, 2], &[3.0, 4.0]));
        let b = g.constant(t(&[1], &[1.0]));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), [12.0]);

        let w = g.constant(t(&[1, 3], &[3.0, 4.0, 5.0]));
        assert!(g.linear(x, w, None).is_err());
    }

    #[test]
    fn batchnorm_two_values() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 1, 1, 1], &[1.0, 3.0]));
        let gamma = g.constant(t(&[1], &[1.0]));
        let beta = g.constant(t(&[1], &[0.0]));
        let mut stats = RunningStats::new(1);
        let cfg = BatchNormConfig { momentum: 0.1, eps: 0.0 };
        let y = g.batchnorm2d(x, gamma, beta, &mut stats, cfg, true).unwrap();
        assert_eq!(g.value(y).data(), [-1.0, 1.0]);
        // running mean 0.9*0 + 0.1*2, running var 0.9*1 + 0.1*2 (unbiased var of {1,3})
        assert!((stats.mean[0] - 0.2).abs() < 1e-15);
        assert!((stats.var[0] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn batchnorm_zero_scale_gives_shift() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 1, 2, 1], &[0.3, -2.0, 5.0, 1.5]));
        let gamma = g.constant(t(&[1], &[0.0]));
        let beta = g.constant(t(&[1], &[0.7]));
        let mut stats = RunningStats::new(1);
        let y = g
            .batchnorm2d(x, gamma, beta, &mut stats, BatchNormConfig::default(), true)
            .unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn batchnorm_single_value_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 1, 1]));
        let gamma = g.constant(Tensor::full(&[2], 1.0));
        let beta = g.constant(Tensor::zeros(&[2]));
        let mut stats = RunningStats::new(2);
        let r = g.batchnorm2d(x, gamma, beta, &mut stats, BatchNormConfig::default(), true);
        assert!(matches!(r, Err(Error::DegenerateVariance { .. })));
        // eval mode has no such restriction
        assert!(g
            .batchnorm2d(x, gamma, beta, &mut stats, BatchNormConfig::default(), false)
            .is_ok());
    }

    #[test]
    fn small_op_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[-1.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), [0.0, 2.0]);

        let z = g.constant(t(&[1, 2], &[0.0, 0.0]));
        let ce = g.softmax_cross_entropy(z, &[0], None).unwrap();
        assert!((g.value(ce).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(matches!(
            g.softmax_cross_entropy(z, &[2], None),
            Err(Error::Label { label: 2, classes: 2 })
        ));

        let a = g.constant(t(&[2], &[1.0, 2.0]));
        let b = g.constant(t(&[2], &[1.0, 4.0]));
        let m = g.mse(a, b).unwrap();
        assert_eq!(g.value(m).data(), [2.0]);
    }

    #[test]
    fn masked_cross_entropy_degenerates_to_zero() {
        let mut g = Graph::new();
        let z = g.leaf(t(&[1, 2], &[0.3, 1.7]));
        let ce = g
            .softmax_cross_entropy(z, &[0], Some(&[true, false]))
            .unwrap();
        assert_eq!(g.value(ce).data(), [0.0]);
        g.backward(ce).unwrap();
        assert_eq!(g.grad(z).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn concat_mismatch() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let b = g.constant(Tensor::zeros(&[1, 2, 4, 2]));
        assert!(g.concat_channels(&[a, b]).is_err());
        let c = g.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let ab = g.concat_channels(&[a, c]).unwrap();
        assert_eq!(g.shape(ab), [1, 5, 4, 4]);
    }

    #[test]
    fn sum_of_products_grad_is_input() {
        let mut g = Graph::new();
        let w = g.leaf(t(&[3], &[0.5, -1.0, 2.0]));
        let x = g.constant(t(&[3], &[4.0, 5.0, 6.0]));
        let p = g.mul(w, x).unwrap();
        let loss = g.sum(p);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap(), [4.0, 5.0, 6.0]);
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let w = g.leaf(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(w), Err(Error::NonScalarLoss { .. })));
    }
}
