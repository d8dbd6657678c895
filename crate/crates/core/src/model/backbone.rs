use rand::Rng;

use crate::error::Result;
use crate::tensor::{BatchNormConfig, Float, Graph, ParamId, ParamSet, RunningStats, Tensor, Var};

/// Learnable parameters plus batchnorm running statistics of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetState<T> {
    pub params: ParamSet<T>,
    pub stats: Vec<RunningStats<T>>,
    pub bn: BatchNormConfig,
}

impl<T: Float> NetState<T> {
    pub fn new(bn: BatchNormConfig) -> Self {
        Self {
            params: ParamSet::new(),
            stats: Vec::new(),
            bn,
        }
    }

    /// Flat copy of running means and variances, layer by layer.
    pub fn flatten_stats(&self) -> Vec<T> {
        self.stats
            .iter()
            .flat_map(|s| s.mean.iter().chain(&s.var).copied())
            .collect()
    }

    pub fn stats_len(&self) -> usize {
        self.stats.iter().map(|s| 2 * s.mean.len()).sum()
    }

    pub fn load_stats(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.stats_len() {
            return Err(crate::Error::shape(
                "load_stats",
                format!("expected {} values, got {}", self.stats_len(), values.len()),
            ));
        }
        let mut off = 0;
        for s in &mut self.stats {
            let c = s.mean.len();
            s.mean.copy_from_slice(&values[off..off + c]);
            s.var.copy_from_slice(&values[off + c..off + 2 * c]);
            off += 2 * c;
        }
        Ok(())
    }
}

/// Borrowed view of a network's state for one forward pass.
pub struct Ctx<'a, T> {
    pub params: &'a ParamSet<T>,
    pub stats: &'a mut [RunningStats<T>],
    pub bn: BatchNormConfig,
    pub training: bool,
}

impl<T: Float> NetState<T> {
    /// Context that updates running statistics when `training` is set.
    pub fn ctx(&mut self, training: bool) -> Ctx<'_, T> {
        Ctx {
            params: &self.params,
            stats: &mut self.stats,
            bn: self.bn,
            training,
        }
    }
}

pub(crate) fn uniform_tensor<T: Float, R: Rng + ?Sized>(
    shape: &[usize],
    bound: f64,
    rng: &mut R,
) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
    Tensor::new(shape, data).expect("uniform tensor shape")
}

/// Bias-free convolution followed by batchnorm.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBn {
    pub conv: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float, R: Rng + ?Sized>(
        state: &mut NetState<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let conv = state.params.add(
            format!("{name}.conv"),
            uniform_tensor(&[out_channels, in_channels, kernel, kernel], bound, rng),
        );
        let gamma = state
            .params
            .add(format!("{name}.bn.gamma"), Tensor::full(&[out_channels], T::one()));
        let beta = state
            .params
            .add(format!("{name}.bn.beta"), Tensor::zeros(&[out_channels]));
        state.stats.push(RunningStats::new(out_channels));
        Self {
            conv,
            gamma,
            beta,
            stats: state.stats.len() - 1,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(ctx.params, self.conv);
        let y = g.conv2d(x, w, None, self.stride, self.padding)?;
        let gamma = g.param(ctx.params, self.gamma);
        let beta = g.param(ctx.params, self.beta);
        g.batchnorm2d(y, gamma, beta, &mut ctx.stats[self.stats], ctx.bn, ctx.training)
    }

    pub fn out_size(&self, size: usize) -> usize {
        (size + 2 * self.padding - self.kernel) / self.stride + 1
    }
}

/// Two 3x3 conv-bn layers with an identity or 1x1 projection shortcut.
#[derive(Debug, Clone, PartialEq)]
pub struct BasicBlock {
    pub conv1: ConvBn,
    pub conv2: ConvBn,
    pub shortcut: Option<ConvBn>,
}

impl BasicBlock {
    pub fn new<T: Float, R: Rng + ?Sized>(
        state: &mut NetState<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let conv1 = ConvBn::new(state, &format!("{name}.conv1"), in_channels, out_channels, 3, stride, 1, rng);
        let conv2 = ConvBn::new(state, &format!("{name}.conv2"), out_channels, out_channels, 3, 1, 1, rng);
        let shortcut = (stride != 1 || in_channels != out_channels).then(|| {
            ConvBn::new(state, &format!("{name}.shortcut"), in_channels, out_channels, 1, stride, 0, rng)
        });
        Self {
            conv1,
            conv2,
            shortcut,
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, ctx, x)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, ctx, h)?;
        let skip = match &self.shortcut {
            Some(proj) => proj.forward(g, ctx, x)?,
            None => x,
        };
        let sum = g.add(h, skip)?;
        Ok(g.relu(sum))
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvBn> {
        [&self.conv1, &self.conv2].into_iter().chain(self.shortcut.as_ref())
    }
}

/// CIFAR-style residual feature extractor: 3x3 stride-1 stem, four stages of
/// basic blocks with widths `w, 2w, 4w, 8w`, stride-2 entry into stages 2-4.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub stem: ConvBn,
    pub stages: Vec<Vec<BasicBlock>>,
    pub width: usize,
}

impl Branch {
    pub fn new<T: Float, R: Rng + ?Sized>(
        state: &mut NetState<T>,
        name: &str,
        in_channels: usize,
        width: usize,
        blocks_per_stage: [usize; 4],
        rng: &mut R,
    ) -> Self {
        let stem = ConvBn::new(state, &format!("{name}.stem"), in_channels, width, 3, 1, 1, rng);
        let mut stages = Vec::with_capacity(4);
        let mut channels = width;
        for (s, &blocks) in blocks_per_stage.iter().enumerate() {
            let out = width << s;
            let stride = if s == 0 { 1 } else { 2 };
            let stage = (0..blocks)
                .map(|b| {
                    let (cin, st) = if b == 0 { (channels, stride) } else { (out, 1) };
                    BasicBlock::new(state, &format!("{name}.stage{}.block{b}", s + 1), cin, out, st, rng)
                })
                .collect();
            stages.push(stage);
            channels = out;
        }
        Self {
            stem,
            stages,
            width,
        }
    }

    /// Channels leaving the last stage.
    pub fn feature_width(&self) -> usize {
        self.width << (self.stages.len() - 1)
    }

    pub fn stem_forward<T: Float>(&self, g: &mut Graph<T>, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.stem.forward(g, ctx, x)?;
        Ok(g.relu(h))
    }

    pub fn stage_forward<T: Float>(
        &self,
        stage: usize,
        g: &mut Graph<T>,
        ctx: &mut Ctx<'_, T>,
        mut x: Var,
    ) -> Result<Var> {
        for block in &self.stages[stage] {
            x = block.forward(g, ctx, x)?;
        }
        Ok(x)
    }

    /// Stem, all stages, then global average pooling: [N, C, H, W] -> [N, 8w].
    pub fn features<T: Float>(&self, g: &mut Graph<T>, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let mut h = self.stem_forward(g, ctx, x)?;
        for s in 0..self.stages.len() {
            h = self.stage_forward(s, g, ctx, h)?;
        }
        g.global_avg_pool(h)
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvBn> {
        std::iter::once(&self.stem).chain(self.stages.iter().flatten().flat_map(|b| b.layers()))
    }
}

/// A linear layer `y = x W^T + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Classifier {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Classifier {
    pub fn new<T: Float, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let weight = params.add(
            "classifier.weight",
            uniform_tensor(&[out_features, in_features], bound, rng),
        );
        let bias = params.add("classifier.bias", uniform_tensor(&[out_features], bound, rng));
        Self {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let w = g.param(params, self.weight);
        let b = g.param(params, self.bias);
        g.linear(x, w, Some(b))
    }

    pub fn param_count(&self) -> usize {
        self.out_features * (self.in_features + 1)
    }
}
