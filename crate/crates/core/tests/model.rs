//! Architecture, counting and cost checks against independent formulas.

use freqcl::model::{
    estimate_activation_memory, flops_forward, AggregatorVariant, Baseline, BackboneConfig, BranchSide, CostModel,
    DualNet, LayerKind, ScalingMode,
};
use freqcl::tensor::{BatchNormConfig, Graph, Tensor};
use freqcl::wavelet::Selection;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Parameters of a CIFAR-style residual feature extractor, summed by hand:
/// 3x3 convs without bias, two batchnorm scalars per channel, 1x1 projection
/// shortcuts wherever shape changes.
fn branch_params(in_ch: usize, width: usize, blocks: [usize; 4]) -> usize {
    let conv = |k: usize, i: usize, o: usize| k * k * i * o + 2 * o;
    let mut total = conv(3, in_ch, width);
    let mut c = width;
    for (s, &b) in blocks.iter().enumerate() {
        let w = width << s;
        for j in 0..b {
            let cin = if j == 0 { c } else { w };
            total += conv(3, cin, w) + conv(3, w, w);
            if cin != w || (j == 0 && s > 0) {
                total += conv(1, cin, w);
            }
        }
        c = w;
    }
    total
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn baseline() -> Baseline<f32> {
    Baseline::new(BackboneConfig::resnet18(10), BatchNormConfig::default(), &mut rng(0)).unwrap()
}

fn dual(cfg: BackboneConfig, variant: AggregatorVariant) -> DualNet<f64> {
    DualNet::new(cfg, variant, Selection::FuseNoLl, BatchNormConfig::default(), &mut rng(1)).unwrap()
}

fn tiny_cfg() -> BackboneConfig {
    BackboneConfig {
        base_width: 8,
        blocks_per_stage: [2, 2, 2, 2],
        num_classes: 5,
        scaling_mode: ScalingMode::HalveBoth,
        image_channels: 3,
    }
}

#[test]
fn resnet18_parameter_count_matches_oracle() {
    let b = baseline();
    let oracle = branch_params(3, 64, [2, 2, 2, 2]) + 512 * 10 + 10;
    assert_eq!(b.param_count(), oracle);
    assert_eq!(oracle, 11_173_962);
    assert!((b.param_count() as f64 / 11.17e6 - 1.0).abs() < 0.01);
}

#[test]
fn halve_both_backbone_ratio_near_a_fifth() {
    let d = DualNet::<f32>::new(
        BackboneConfig::resnet18(10).with_scaling(ScalingMode::HalveBoth),
        AggregatorVariant::Mutual,
        Selection::FuseNoLl,
        BatchNormConfig::default(),
        &mut rng(2),
    )
    .unwrap();
    let fuser = 3 * 9 + 3;
    assert_eq!(d.backbone_param_count(), 2 * branch_params(3, 32, [1, 1, 1, 1]) + fuser);
    let base = baseline().backbone_param_count() as f64;
    let ratio = d.backbone_param_count() as f64 / base;
    assert!((0.18..=0.26).contains(&ratio), "{ratio}");
    let with_head = d.param_count() as f64 / base;
    assert!((0.18..=0.26).contains(&with_head), "{with_head}");
    assert_eq!(d.aggregator_count(), 4);
}

#[test]
fn scaling_modes_follow_width_and_depth_rules() {
    let layout = |m| BackboneConfig::resnet18(10).with_scaling(m).branch_layout();
    assert_eq!(layout(ScalingMode::HalveBoth), (32, [1, 1, 1, 1]));
    assert_eq!(layout(ScalingMode::HalveWidthOnly), (32, [2, 2, 2, 2]));
    assert_eq!(layout(ScalingMode::HalveDepthOnly), (64, [1, 1, 1, 1]));
    let full = branch_params(3, 64, [2, 2, 2, 2]) as f64;
    let width_only = branch_params(3, 32, [2, 2, 2, 2]) as f64;
    assert!((width_only / full - 0.25).abs() < 0.01);
    assert!(DualNet::<f32>::new(
        BackboneConfig::resnet18(10),
        AggregatorVariant::Mutual,
        Selection::FuseNoLl,
        BatchNormConfig::default(),
        &mut rng(0)
    )
    .is_err());
}

#[test]
fn small_layer_counts() {
    let mut params = freqcl::tensor::ParamSet::<f32>::new();
    let c = freqcl::model::Classifier::new(&mut params, 10, 5, &mut rng(0));
    assert_eq!(c.param_count(), 55);
    assert_eq!(params.scalar_count(), 55);
    let mut state = freqcl::model::NetState::<f32>::new(BatchNormConfig::default());
    freqcl::model::ConvBn::new(&mut state, "c", 3, 8, 3, 1, 1, &mut rng(0));
    assert_eq!(state.params.get(state.params.ids().next().unwrap()).numel(), 216);
}

/// Conv multiply-accumulates of the baseline, layer by layer.
fn baseline_conv_macs(size: usize) -> u64 {
    let mut macs = (9 * 3 * 64 * size * size) as u64;
    let (mut c, mut s) = (64, size);
    for stage in 0..4 {
        let w = 64 << stage;
        for j in 0..2 {
            let stride = if j == 0 && stage > 0 { 2 } else { 1 };
            let cin = if j == 0 { c } else { w };
            let out = s / stride;
            macs += (9 * cin * w * out * out + 9 * w * w * out * out) as u64;
            if j == 0 && stage > 0 {
                macs += (cin * w * out * out) as u64;
            }
            s = out;
        }
        c = w;
    }
    macs
}

#[test]
fn flops_ratio_and_conv_macs() {
    let b = baseline();
    let layers = b.layer_costs([3, 32, 32]);
    let conv: u64 = layers.iter().filter(|l| l.kind == LayerKind::Conv).map(|l| l.macs).sum();
    assert_eq!(conv, baseline_conv_macs(32));
    let d = DualNet::<f32>::new(
        BackboneConfig::resnet18(10).with_scaling(ScalingMode::HalveBoth),
        AggregatorVariant::Mutual,
        Selection::FuseNoLl,
        BatchNormConfig::default(),
        &mut rng(2),
    )
    .unwrap();
    let ratio = flops_forward(&d, [3, 32, 32]) as f64 / flops_forward(&b, [3, 32, 32]) as f64;
    assert!(ratio < 0.15, "{ratio}");
    let summed: usize = d.layer_costs([3, 32, 32]).iter().map(|l| l.params).sum();
    assert_eq!(summed, d.param_count());
}

#[test]
fn activation_memory_scaling() {
    let b = baseline();
    let d = dual(BackboneConfig::resnet18(10).with_scaling(ScalingMode::HalveBoth), AggregatorVariant::Mutual);
    for net in [&b as &dyn CostModel, &d as &dyn CostModel] {
        let one = estimate_activation_memory(net, [3, 32, 32], 1);
        let eight = estimate_activation_memory(net, [3, 32, 32], 8);
        assert_eq!(eight.total(), 8 * one.total());
        let big = estimate_activation_memory(net, [3, 64, 64], 1);
        assert_eq!(big.conv_bytes, 4 * one.conv_bytes);
    }
    let bd = estimate_activation_memory(&d, [3, 32, 32], 32).total() as f64 / 8.0;
    let bb = estimate_activation_memory(&b, [3, 32, 32], 32).total() as f64 / 4.0;
    assert!(bd < bb, "per-element-normalized dual {bd} vs baseline {bb}");
}

fn images(n: usize, size: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::new(&[n, 3, size, size], (0..n * 3 * size * size).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn forward_shapes_at_two_resolutions() {
    let d = dual(tiny_cfg(), AggregatorVariant::Mutual);
    for size in [32, 64] {
        assert_eq!(d.logits_for_images(&images(2, size, 0)).unwrap().shape(), &[2, 5]);
    }
    let mut b = Baseline::<f64>::new(
        BackboneConfig { scaling_mode: ScalingMode::Full, ..tiny_cfg() },
        BatchNormConfig::default(),
        &mut rng(0),
    )
    .unwrap();
    for size in [32, 64] {
        let mut g = Graph::new();
        let x = g.constant(images(1, size, 1));
        let y = b.forward(&mut g, x, false).unwrap();
        assert_eq!(g.shape(y), &[1, 5]);
    }
}

#[test]
fn no_integration_equals_independent_branches_bitwise() {
    let mut d = dual(tiny_cfg(), AggregatorVariant::NoIntegration);
    let pair = d.frequency_pair(&images(3, 16, 2)).unwrap();
    let joint = d.logits_for_pair(&pair).unwrap();
    let mut g = Graph::new();
    let low = g.constant(pair.low.clone());
    let high = g.constant(pair.high.clone());
    let stats = d.state.stats.clone();
    let lf = d.branch_features(BranchSide::Low, &mut g, low, false).unwrap();
    let hf = d.branch_features(BranchSide::High, &mut g, high, false).unwrap();
    let logits = d.classify(&mut g, lf, hf).unwrap();
    assert_eq!(g.value(logits).data(), joint.data());
    assert_eq!(d.state.stats, stats);

    // Zero high input gives zero high features at initialization, so the
    // output equals classifying with the high half of the features zeroed.
    let zero = freqcl::wavelet::FrequencyPair { low: pair.low.clone(), high: Tensor::zeros(pair.high.shape()) };
    let zeroed_input = d.logits_for_pair(&zero).unwrap();
    let zf = g.constant(Tensor::zeros(g.shape(hf)));
    let zeroed_feats = d.classify(&mut g, lf, zf).unwrap();
    assert_eq!(g.value(zeroed_feats).data(), zeroed_input.data());
}

#[test]
fn mutual_symmetry_with_shared_weights() {
    let mut d = dual(tiny_cfg(), AggregatorVariant::Mutual);
    // Copy every l_net parameter onto its h_net counterpart.
    let names: Vec<_> = d.state.params.ids().map(|id| (id, d.state.params.name(id).to_string())).collect();
    for (id, name) in &names {
        if let Some(rest) = name.strip_prefix("l_net") {
            let twin = names.iter().find(|(_, n)| n == &format!("h_net{rest}")).unwrap().0;
            let v = d.state.params.get(*id).clone();
            *d.state.params.get_mut(twin) = v;
        }
    }
    let x = images(2, 16, 3).index_first(0).reshape(&[1, 3, 16, 16]).unwrap();
    let half = freqcl::wavelet::dwt2d(&x).unwrap().ll;
    let mut g = Graph::new();
    let low = g.constant(half.clone());
    let high = g.constant(half);
    let out = d.forward_eval(&mut g, low, high).unwrap();
    assert_eq!(out.stages.len(), 4);
    for (l, h) in out.stages {
        assert_eq!(g.value(l).data(), g.value(h).data());
    }
}

#[test]
fn mutual_couples_branches_in_gradient() {
    let mut d = dual(tiny_cfg(), AggregatorVariant::Mutual);
    let quad = freqcl::wavelet::dwt2d(&images(4, 16, 4)).unwrap();
    let mut g = Graph::new();
    let low = g.constant(quad.ll.clone());
    let high = d.high_input(&mut g, &quad).unwrap();
    let out = d.forward(&mut g, low, high, true).unwrap();
    let loss = g.softmax_cross_entropy(out.logits, &[0, 1, 2, 3], None).unwrap();
    g.backward(loss).unwrap();
    let stem = d.h_net.stem.conv;
    let grads = g.param_grads();
    let gs = &grads.iter().find(|(id, _)| *id == stem).unwrap().1;
    assert!(gs.iter().any(|v| v.abs() > 1e-12));
}

#[test]
fn repeated_forward_is_bitwise_deterministic() {
    let d = dual(tiny_cfg(), AggregatorVariant::HighDominance);
    let x = images(2, 16, 5);
    assert_eq!(d.logits_for_images(&x).unwrap(), d.logits_for_images(&x).unwrap());
}
