use rand::Rng;

use super::backbone::{Branch, Classifier, Ctx, NetState};
use super::{AggregatorVariant, BackboneConfig, ScalingMode};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormConfig, Float, Graph, Tensor, Var};
use crate::wavelet::{self, FrequencyPair, PointwiseFuser, Selection, WaveletQuad};

/// Exchange features between the branches at one stage boundary.
/// Returns `(low, high)` features for the next stage.
pub fn aggregate<T: Float>(
    g: &mut Graph<T>,
    x_low: Var,
    x_high: Var,
    variant: AggregatorVariant,
) -> Result<(Var, Var)> {
    if g.shape(x_low) != g.shape(x_high) {
        return Err(Error::shape(
            "aggregate",
            format!("{:?} vs {:?}", g.shape(x_low), g.shape(x_high)),
        ));
    }
    Ok(match variant {
        AggregatorVariant::NoIntegration => (x_low, x_high),
        AggregatorVariant::LowDominance => (x_low, g.add(x_low, x_high)?),
        AggregatorVariant::HighDominance => (g.add(x_low, x_high)?, x_high),
        AggregatorVariant::Mutual => {
            let sum = g.add(x_low, x_high)?;
            (sum, sum)
        }
    })
}

/// Single-branch ResNet classifier over full-resolution images.
#[derive(Debug, Clone)]
pub struct Baseline<T> {
    pub config: BackboneConfig,
    pub branch: Branch,
    pub classifier: Classifier,
    pub state: NetState<T>,
}

impl<T: Float> Baseline<T> {
    pub fn new<R: Rng + ?Sized>(config: BackboneConfig, bn: BatchNormConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if config.scaling_mode != ScalingMode::Full {
            return Err(Error::config(
                "backbone.scaling_mode",
                "the single-branch baseline is always full size",
            ));
        }
        let mut state = NetState::new(bn);
        let branch = Branch::new(
            &mut state,
            "net",
            config.image_channels,
            config.base_width,
            config.blocks_per_stage,
            rng,
        );
        let classifier = Classifier::new(&mut state.params, branch.feature_width(), config.num_classes, rng);
        Ok(Self {
            config,
            branch,
            classifier,
            state,
        })
    }

    pub fn forward(&mut self, g: &mut Graph<T>, images: Var, training: bool) -> Result<Var> {
        let mut ctx = self.state.ctx(training);
        let feats = self.branch.features(g, &mut ctx, images)?;
        self.classifier.forward(g, ctx.params, feats)
    }

    pub fn param_count(&self) -> usize {
        self.state.params.scalar_count()
    }

    /// Everything except the classifier.
    pub fn backbone_param_count(&self) -> usize {
        self.param_count() - self.classifier.param_count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchSide {
    Low,
    High,
}

/// Logits plus the post-aggregation `(low, high)` features of every stage.
#[derive(Debug, Clone)]
pub struct DualOutput {
    pub logits: Var,
    pub stages: Vec<(Var, Var)>,
}

/// Two narrow residual branches over the low- and high-frequency inputs,
/// joined by one aggregator per stage and a classifier over the concatenated
/// pooled features.
#[derive(Debug, Clone)]
pub struct DualNet<T> {
    pub config: BackboneConfig,
    pub variant: AggregatorVariant,
    pub selection: Selection,
    pub fuser: Option<PointwiseFuser>,
    pub l_net: Branch,
    pub h_net: Branch,
    pub classifier: Classifier,
    pub state: NetState<T>,
}

impl<T: Float> DualNet<T> {
    pub fn new<R: Rng + ?Sized>(
        config: BackboneConfig,
        variant: AggregatorVariant,
        selection: Selection,
        bn: BatchNormConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if config.scaling_mode == ScalingMode::Full {
            return Err(Error::config(
                "backbone.scaling_mode",
                "the dual network needs a reduced scaling mode",
            ));
        }
        let mut state = NetState::new(bn);
        let channels = config.image_channels;
        let fuser = selection
            .is_fused()
            .then(|| PointwiseFuser::new(&mut state.params, channels, selection, rng));
        let (width, blocks) = config.branch_layout();
        let l_net = Branch::new(&mut state, "l_net", channels, width, blocks, rng);
        let h_net = Branch::new(&mut state, "h_net", channels, width, blocks, rng);
        let classifier = Classifier::new(
            &mut state.params,
            l_net.feature_width() + h_net.feature_width(),
            config.num_classes,
            rng,
        );
        Ok(Self {
            config,
            variant,
            selection,
            fuser,
            l_net,
            h_net,
            classifier,
            state,
        })
    }

    /// One aggregator per stage, the first after the non-downsampling stage.
    pub fn aggregator_count(&self) -> usize {
        self.l_net.stages.len()
    }

    pub fn param_count(&self) -> usize {
        self.state.params.scalar_count()
    }

    /// Everything except the classifier (branches, fuser; aggregators are free).
    pub fn backbone_param_count(&self) -> usize {
        self.param_count() - self.classifier.param_count()
    }

    pub fn freeze_fuser(&mut self) {
        if let Some(f) = &self.fuser {
            f.freeze(&mut self.state.params);
        }
    }

    pub fn fuser_frozen(&self) -> bool {
        self.fuser.is_none_or(|f| f.is_frozen(&self.state.params))
    }

    /// High-frequency input for live data, with gradients reaching the fuser.
    pub fn high_input(&self, g: &mut Graph<T>, quad: &WaveletQuad<T>) -> Result<Var> {
        wavelet::high_pass(g, &self.state.params, quad, self.fuser.as_ref(), self.selection)
    }

    /// Decompose a batch of images [N, C, H, W] into the two network inputs
    /// using the current fuser weights.
    pub fn frequency_pair(&self, images: &Tensor<T>) -> Result<FrequencyPair<T>> {
        let quad = wavelet::dwt2d(images)?;
        let high = wavelet::high_pass_value(&self.state.params, &quad, self.fuser.as_ref(), self.selection)?;
        Ok(FrequencyPair {
            low: quad.ll,
            high,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn run(
        l_net: &Branch,
        h_net: &Branch,
        classifier: &Classifier,
        variant: AggregatorVariant,
        g: &mut Graph<T>,
        ctx: &mut Ctx<'_, T>,
        low: Var,
        high: Var,
    ) -> Result<DualOutput> {
        let mut xl = l_net.stem_forward(g, ctx, low)?;
        let mut xh = h_net.stem_forward(g, ctx, high)?;
        let mut stages = Vec::with_capacity(l_net.stages.len());
        for s in 0..l_net.stages.len() {
            xl = l_net.stage_forward(s, g, ctx, xl)?;
            xh = h_net.stage_forward(s, g, ctx, xh)?;
            (xl, xh) = aggregate(g, xl, xh, variant)?;
            stages.push((xl, xh));
        }
        let pl = g.global_avg_pool(xl)?;
        let ph = g.global_avg_pool(xh)?;
        let joint = g.concat_channels(&[pl, ph])?;
        let logits = classifier.forward(g, ctx.params, joint)?;
        Ok(DualOutput { logits, stages })
    }

    /// Forward pass. In training mode batchnorm uses batch statistics and
    /// updates the running estimates.
    pub fn forward(&mut self, g: &mut Graph<T>, low: Var, high: Var, training: bool) -> Result<DualOutput> {
        let mut ctx = self.state.ctx(training);
        Self::run(&self.l_net, &self.h_net, &self.classifier, self.variant, g, &mut ctx, low, high)
    }

    /// Inference-mode forward that leaves the running statistics untouched.
    pub fn forward_eval(&self, g: &mut Graph<T>, low: Var, high: Var) -> Result<DualOutput> {
        let mut stats = self.state.stats.clone();
        let mut ctx = Ctx {
            params: &self.state.params,
            stats: &mut stats,
            bn: self.state.bn,
            training: false,
        };
        Self::run(&self.l_net, &self.h_net, &self.classifier, self.variant, g, &mut ctx, low, high)
    }

    /// Run one branch alone to its pooled features, with no aggregation.
    pub fn branch_features(
        &mut self,
        side: BranchSide,
        g: &mut Graph<T>,
        x: Var,
        training: bool,
    ) -> Result<Var> {
        let branch = match side {
            BranchSide::Low => &self.l_net,
            BranchSide::High => &self.h_net,
        };
        branch.features(g, &mut self.state.ctx(training), x)
    }

    /// Classifier over already pooled branch features.
    pub fn classify(&self, g: &mut Graph<T>, low_feats: Var, high_feats: Var) -> Result<Var> {
        let joint = g.concat_channels(&[low_feats, high_feats])?;
        self.classifier.forward(g, &self.state.params, joint)
    }

    /// Eval-mode logits for stored frequency pairs.
    pub fn logits_for_pair(&self, pair: &FrequencyPair<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let low = g.constant(pair.low.clone());
        let high = g.constant(pair.high.clone());
        let out = self.forward_eval(&mut g, low, high)?;
        Ok(g.value(out.logits).clone())
    }

    /// Eval-mode logits for raw images [N, C, H, W].
    pub fn logits_for_images(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.logits_for_pair(&self.frequency_pair(images)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(variant: AggregatorVariant) -> DualNet<f64> {
        let cfg = BackboneConfig {
            base_width: 8,
            blocks_per_stage: [2, 2, 2, 2],
            num_classes: 4,
            scaling_mode: ScalingMode::HalveBoth,
            image_channels: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        DualNet::new(cfg, variant, Selection::FuseNoLl, BatchNormConfig::default(), &mut rng).unwrap()
    }

    #[test]
    fn aggregate_examples() {
        let mut g = Graph::new();
        let xl = g.constant(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
        let xh = g.constant(Tensor::from_f64(&[2], &[3.0, -1.0]).unwrap());
        let (a, b) = aggregate(&mut g, xl, xh, AggregatorVariant::Mutual).unwrap();
        assert_eq!(g.value(a).data(), [4.0, 1.0]);
        assert_eq!(g.value(b).data(), [4.0, 1.0]);
        let (a, b) = aggregate(&mut g, xl, xh, AggregatorVariant::NoIntegration).unwrap();
        assert_eq!((a, b), (xl, xh));

        let one = g.constant(Tensor::from_f64(&[1], &[1.0]).unwrap());
        let two = g.constant(Tensor::from_f64(&[1], &[2.0]).unwrap());
        let (a, b) = aggregate(&mut g, one, two, AggregatorVariant::LowDominance).unwrap();
        assert_eq!((g.value(a).data(), g.value(b).data()), (&[1.0][..], &[3.0][..]));
        let (a, b) = aggregate(&mut g, one, two, AggregatorVariant::HighDominance).unwrap();
        assert_eq!((g.value(a).data(), g.value(b).data()), (&[3.0][..], &[2.0][..]));

        assert!(aggregate(&mut g, one, xl, AggregatorVariant::Mutual).is_err());
    }

    #[test]
    fn full_scaling_rejected_for_dual() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = DualNet::<f32>::new(
            BackboneConfig::resnet18(10),
            AggregatorVariant::Mutual,
            Selection::FuseNoLl,
            BatchNormConfig::default(),
            &mut rng,
        );
        assert!(matches!(r, Err(Error::Config { .. })));
    }

    #[test]
    fn structure_and_shapes() {
        let mut net = tiny(AggregatorVariant::Mutual);
        assert_eq!(net.aggregator_count(), 4);
        assert_eq!(net.l_net.width, 4);
        assert!(net.l_net.stages.iter().all(|s| s.len() == 1));
        assert_eq!(net.classifier.in_features, 64);
        let images = Tensor::full(&[2, 3, 16, 16], 0.25);
        let pair = net.frequency_pair(&images).unwrap();
        assert_eq!(pair.low.shape(), [2, 3, 8, 8]);
        assert_eq!(pair.high.shape(), [2, 3, 8, 8]);
        let mut g = Graph::new();
        let lo = g.constant(pair.low.clone());
        let hi = g.constant(pair.high.clone());
        let out = net.forward(&mut g, lo, hi, true).unwrap();
        assert_eq!(g.shape(out.logits), [2, 4]);
        assert_eq!(out.stages.len(), 4);
    }

    #[test]
    fn halving_modes() {
        let base = BackboneConfig::resnet18(10);
        assert_eq!(base.with_scaling(ScalingMode::HalveBoth).branch_layout(), (32, [1; 4]));
        assert_eq!(base.with_scaling(ScalingMode::HalveWidthOnly).branch_layout(), (32, [2; 4]));
        assert_eq!(base.with_scaling(ScalingMode::HalveDepthOnly).branch_layout(), (64, [1; 4]));
    }
}
