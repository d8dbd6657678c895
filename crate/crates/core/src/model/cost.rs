//! Analytical cost accounting. Costs are derived from the architecture walk,
//! not measured, so they are exact and independent of the kernels.
//!
//! Conventions: a multiply-accumulate is 2 FLOPs; batchnorm costs 2 FLOPs per
//! output element, relu and add 1, pooling 1 per input element, and the Haar
//! transform 4 per input element. Training costs 3x the forward pass
//! (forward, input gradient, weight gradient).

use super::backbone::{Branch, ConvBn};
use super::dual::{Baseline, DualNet};
use super::AggregatorVariant;
use crate::tensor::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Dwt,
    Concat,
    Conv,
    BatchNorm,
    Relu,
    Add,
    Pool,
    Linear,
}

/// Per-sample cost of one recorded operation.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCost {
    pub name: String,
    pub kind: LayerKind,
    pub params: usize,
    pub macs: u64,
    pub elementwise_flops: u64,
    pub output_elems: u64,
}

impl LayerCost {
    pub fn flops(&self) -> u64 {
        2 * self.macs + self.elementwise_flops
    }
}

/// Anything that can describe its forward pass layer by layer.
pub trait CostModel {
    /// Per-sample costs for a source image of shape `[C, H, W]`.
    fn layer_costs(&self, image: [usize; 3]) -> Vec<LayerCost>;

    /// Bytes per stored activation element.
    fn element_bytes(&self) -> usize;
}

/// Per-sample forward FLOPs.
pub fn flops_forward<M: CostModel + ?Sized>(net: &M, image: [usize; 3]) -> u64 {
    net.layer_costs(image).iter().map(LayerCost::flops).sum()
}

/// Training FLOPs for `samples` forward/backward passes.
pub fn flops_train<M: CostModel + ?Sized>(net: &M, image: [usize; 3], samples: u64) -> u64 {
    3 * flops_forward(net, image) * samples
}

/// Bytes of intermediate activations held for one training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ActivationMemory {
    /// Convolution outputs only.
    pub conv_bytes: u64,
    /// Everything else: normalization, nonlinearities, sums, pooled features, logits.
    pub other_bytes: u64,
}

impl ActivationMemory {
    pub fn total(&self) -> u64 {
        self.conv_bytes + self.other_bytes
    }
}

pub fn estimate_activation_memory<M: CostModel + ?Sized>(
    net: &M,
    image: [usize; 3],
    batch: usize,
) -> ActivationMemory {
    let bytes = (batch * net.element_bytes()) as u64;
    let mut mem = ActivationMemory::default();
    for layer in net.layer_costs(image) {
        let b = layer.output_elems * bytes;
        if layer.kind == LayerKind::Conv {
            mem.conv_bytes += b;
        } else {
            mem.other_bytes += b;
        }
    }
    mem
}

/// Accumulates layer costs while tracking the running activation shape.
struct Walker {
    layers: Vec<LayerCost>,
}

impl Walker {
    fn push(&mut self, name: String, kind: LayerKind, params: usize, macs: u64, ew: u64, out: u64) {
        self.layers.push(LayerCost {
            name,
            kind,
            params,
            macs,
            elementwise_flops: ew,
            output_elems: out,
        });
    }

    /// Returns the output spatial size.
    fn conv_bn(&mut self, name: &str, layer: &ConvBn, hw: (usize, usize)) -> (usize, usize) {
        let out_hw = (layer.out_size(hw.0), layer.out_size(hw.1));
        let out = (layer.out_channels * out_hw.0 * out_hw.1) as u64;
        let k = (layer.in_channels * layer.kernel * layer.kernel) as u64;
        let conv_params = layer.out_channels * layer.in_channels * layer.kernel * layer.kernel;
        self.push(format!("{name}.conv"), LayerKind::Conv, conv_params, k * out, 0, out);
        self.push(format!("{name}.bn"), LayerKind::BatchNorm, 2 * layer.out_channels, 0, 2 * out, out);
        out_hw
    }

    fn relu(&mut self, name: String, elems: u64) {
        self.push(name, LayerKind::Relu, 0, 0, elems, elems);
    }

    fn stem(&mut self, prefix: &str, branch: &Branch, hw: (usize, usize)) -> (usize, usize) {
        let out_hw = self.conv_bn(&format!("{prefix}.stem"), &branch.stem, hw);
        self.relu(
            format!("{prefix}.stem.relu"),
            (branch.stem.out_channels * out_hw.0 * out_hw.1) as u64,
        );
        out_hw
    }

    fn stage(&mut self, prefix: &str, branch: &Branch, s: usize, mut hw: (usize, usize)) -> (usize, usize) {
        for (b, block) in branch.stages[s].iter().enumerate() {
            let name = format!("{prefix}.stage{}.block{b}", s + 1);
            let mid = self.conv_bn(&format!("{name}.conv1"), &block.conv1, hw);
            let elems = (block.conv1.out_channels * mid.0 * mid.1) as u64;
            self.relu(format!("{name}.relu1"), elems);
            let out = self.conv_bn(&format!("{name}.conv2"), &block.conv2, mid);
            if let Some(proj) = &block.shortcut {
                self.conv_bn(&format!("{name}.shortcut"), proj, hw);
            }
            let elems = (block.conv2.out_channels * out.0 * out.1) as u64;
            self.push(format!("{name}.add"), LayerKind::Add, 0, 0, elems, elems);
            self.relu(format!("{name}.relu2"), elems);
            hw = out;
        }
        hw
    }

    fn pool(&mut self, name: String, channels: usize, hw: (usize, usize)) {
        let input = (channels * hw.0 * hw.1) as u64;
        self.push(name, LayerKind::Pool, 0, 0, input, channels as u64);
    }

    fn linear(&mut self, in_features: usize, out_features: usize) {
        let out = out_features as u64;
        self.push(
            "classifier".into(),
            LayerKind::Linear,
            out_features * (in_features + 1),
            (in_features * out_features) as u64,
            out,
            out,
        );
    }
}

impl<T: Float> CostModel for Baseline<T> {
    fn layer_costs(&self, image: [usize; 3]) -> Vec<LayerCost> {
        let mut w = Walker { layers: Vec::new() };
        let mut hw = w.stem("net", &self.branch, (image[1], image[2]));
        for s in 0..self.branch.stages.len() {
            hw = w.stage("net", &self.branch, s, hw);
        }
        w.pool("net.pool".into(), self.branch.feature_width(), hw);
        w.linear(self.classifier.in_features, self.classifier.out_features);
        w.layers
    }

    fn element_bytes(&self) -> usize {
        T::BYTES
    }
}

impl<T: Float> CostModel for DualNet<T> {
    fn layer_costs(&self, image: [usize; 3]) -> Vec<LayerCost> {
        let mut w = Walker { layers: Vec::new() };
        let [c, h, wd] = image;
        let numel = (c * h * wd) as u64;
        w.push("dwt".into(), LayerKind::Dwt, 0, 0, 4 * numel, numel);
        let half = (h / 2, wd / 2);
        if let Some(f) = &self.fuser {
            let stacked = (f.in_channels * half.0 * half.1) as u64;
            w.push("fuser.concat".into(), LayerKind::Concat, 0, 0, 0, stacked);
            let out = (f.out_channels * half.0 * half.1) as u64;
            w.push(
                "fuser.conv".into(),
                LayerKind::Conv,
                f.out_channels * (f.in_channels + 1),
                f.in_channels as u64 * out,
                out,
                out,
            );
        }
        let mut hl = w.stem("l_net", &self.l_net, half);
        let mut hh = w.stem("h_net", &self.h_net, half);
        for s in 0..self.l_net.stages.len() {
            hl = w.stage("l_net", &self.l_net, s, hl);
            hh = w.stage("h_net", &self.h_net, s, hh);
            let elems = ((self.l_net.width << s) * hl.0 * hl.1) as u64;
            if self.variant != AggregatorVariant::NoIntegration {
                w.push(format!("aggregator{}", s + 1), LayerKind::Add, 0, 0, elems, elems);
            }
        }
        w.pool("l_net.pool".into(), self.l_net.feature_width(), hl);
        w.pool("h_net.pool".into(), self.h_net.feature_width(), hh);
        let joint = self.l_net.feature_width() + self.h_net.feature_width();
        w.push("features.concat".into(), LayerKind::Concat, 0, 0, 0, joint as u64);
        w.linear(self.classifier.in_features, self.classifier.out_features);
        w.layers
    }

    fn element_bytes(&self) -> usize {
        T::BYTES
    }
}
