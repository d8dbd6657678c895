//! Finite-difference gradient checking shared by the gradient suite and the
//! acceptance run.
#![allow(dead_code)]

use freqcl::model::{AggregatorVariant, BackboneConfig, DualNet, ScalingMode};
use freqcl::tensor::{BatchNormConfig, Graph, Tensor, Var};
use freqcl::wavelet::Selection;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor so that near-zero gradients are judged absolutely.
pub const FLOOR: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduce any output to a scalar through a fixed random projection so every
/// output element contributes.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    if g.value(out).numel() == 1 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_tensor(g.shape(out), &mut rng);
    let w = g.constant(w);
    let prod = g.mul(out, w).unwrap();
    g.sum(prod)
}

/// Check `op` against central differences on `probes` random input scalars.
/// Returns the largest relative error seen.
pub fn check_op(
    inputs: &[Tensor<f64>],
    op: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var,
    probes: usize,
    seed: u64,
) -> f64 {
    let eval = |vals: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        let out = op(&mut g, &vars);
        let loss = project(&mut g, out, seed);
        g.value(loss).data()[0]
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = op(&mut g, &vars);
    let loss = project(&mut g, out, seed);
    g.backward(loss).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let which = rng.gen_range(0..inputs.len());
        let k = rng.gen_range(0..inputs[which].numel());
        let analytic = g.grad(vars[which]).map_or(0.0, |gr| gr[k]);
        let mut plus = inputs.to_vec();
        plus[which].data_mut()[k] += STEP;
        let mut minus = inputs.to_vec();
        minus[which].data_mut()[k] -= STEP;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
        worst = worst.max(rel_err(analytic, numeric));
    }
    worst
}

pub fn small_dual(seed: u64, variant: AggregatorVariant) -> DualNet<f64> {
    let cfg = BackboneConfig {
        base_width: 4,
        blocks_per_stage: [2, 2, 2, 2],
        num_classes: 3,
        scaling_mode: ScalingMode::HalveBoth,
        image_channels: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DualNet::new(cfg, variant, Selection::FuseNoLl, BatchNormConfig::default(), &mut rng).unwrap()
}

/// Cross-entropy of a training-mode dual-network forward on fixed data.
fn dual_loss(net: &DualNet<f64>, images: &Tensor<f64>, labels: &[usize]) -> (Graph<f64>, Var) {
    let mut net = net.clone();
    let quad = freqcl::wavelet::dwt2d(images).unwrap();
    let mut g = Graph::new();
    let low = g.constant(quad.ll.clone());
    let high = net.high_input(&mut g, &quad).unwrap();
    let out = net.forward(&mut g, low, high, true).unwrap();
    let loss = g.softmax_cross_entropy(out.logits, labels, None).unwrap();
    (g, loss)
}

/// Check parameter gradients of the full dual network. Probes are spread
/// over every parameter tensor, fuser included.
pub fn check_dual(probes: usize, seed: u64) -> f64 {
    let net = small_dual(seed, AggregatorVariant::Mutual);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd0a1);
    let images = random_tensor(&[4, 3, 16, 16], &mut rng);
    let labels = [0, 1, 2, 1];
    let (mut g, loss) = dual_loss(&net, &images, &labels);
    g.backward(loss).unwrap();
    let grads = g.param_grads();
    let ids: Vec<_> = net.state.params.ids().collect();
    let mut worst: f64 = 0.0;
    for p in 0..probes {
        let id = ids[(p * 7919 + rng.gen_range(0..ids.len())) % ids.len()];
        let k = rng.gen_range(0..net.state.params.get(id).numel());
        let analytic = grads.iter().find(|(i, _)| *i == id).map_or(0.0, |(_, gr)| gr[k]);
        let at = |delta: f64| {
            let mut n = net.clone();
            n.state.params.get_mut(id).data_mut()[k] += delta;
            let (g, l) = dual_loss(&n, &images, &labels);
            g.value(l).data()[0]
        };
        let numeric = (at(STEP) - at(-STEP)) / (2.0 * STEP);
        worst = worst.max(rel_err(analytic, numeric));
    }
    worst
}

pub type OpCase = (&'static str, Vec<Vec<usize>>, Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var>);

/// Every differentiable operation with representative input shapes.
pub fn op_cases() -> Vec<OpCase> {
    use freqcl::tensor::RunningStats;
    let bn = BatchNormConfig::default();
    vec![
        ("conv2d 3x3 stride 2 pad 1 + bias", vec![vec![2, 3, 6, 6], vec![4, 3, 3, 3], vec![4]], Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1).unwrap())),
        ("conv2d 3x3 stride 1 no bias", vec![vec![2, 2, 5, 5], vec![3, 2, 3, 3]], Box::new(|g, v| g.conv2d(v[0], v[1], None, 1, 1).unwrap())),
        ("conv2d 1x1 pointwise", vec![vec![2, 6, 4, 4], vec![3, 6, 1, 1], vec![3]], Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 0).unwrap())),
        ("linear", vec![vec![3, 5], vec![4, 5], vec![4]], Box::new(|g, v| g.linear(v[0], v[1], Some(v[2])).unwrap())),
        ("batchnorm2d training", vec![vec![3, 2, 3, 3], vec![2], vec![2]], Box::new(move |g, v| {
            let mut s = RunningStats::new(2);
            g.batchnorm2d(v[0], v[1], v[2], &mut s, bn, true).unwrap()
        })),
        ("batchnorm2d inference", vec![vec![3, 2, 3, 3], vec![2], vec![2]], Box::new(move |g, v| {
            let mut s = RunningStats { mean: vec![0.1, -0.2], var: vec![0.5, 2.0] };
            g.batchnorm2d(v[0], v[1], v[2], &mut s, bn, false).unwrap()
        })),
        ("relu", vec![vec![4, 6]], Box::new(|g, v| g.relu(v[0]))),
        ("add", vec![vec![3, 4], vec![3, 4]], Box::new(|g, v| g.add(v[0], v[1]).unwrap())),
        ("mul", vec![vec![3, 4], vec![3, 4]], Box::new(|g, v| g.mul(v[0], v[1]).unwrap())),
        ("scale", vec![vec![3, 4]], Box::new(|g, v| g.scale(v[0], -1.7))),
        ("sum", vec![vec![2, 3, 2]], Box::new(|g, v| g.sum(v[0]))),
        ("concat_channels", vec![vec![2, 1, 2, 2], vec![2, 3, 2, 2]], Box::new(|g, v| g.concat_channels(&[v[0], v[1]]).unwrap())),
        ("global_avg_pool", vec![vec![2, 3, 4, 4]], Box::new(|g, v| g.global_avg_pool(v[0]).unwrap())),
        ("softmax_cross_entropy", vec![vec![4, 5]], Box::new(|g, v| g.softmax_cross_entropy(v[0], &[0, 4, 2, 2], None).unwrap())),
        ("softmax_cross_entropy masked", vec![vec![2, 4]], Box::new(|g, v| {
            let mask = [true, true, false, true, false, true, true, false];
            g.softmax_cross_entropy(v[0], &[1, 2], Some(&mask)).unwrap()
        })),
        ("mse", vec![vec![3, 4], vec![3, 4]], Box::new(|g, v| g.mse(v[0], v[1]).unwrap())),
    ]
}

/// Run every op case; returns `(name, worst relative error)`.
pub fn check_all_ops(probes: usize) -> Vec<(&'static str, f64)> {
    op_cases()
        .into_iter()
        .enumerate()
        .map(|(i, (name, shapes, op))| {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
            let inputs: Vec<_> = shapes.iter().map(|s| random_tensor(s, &mut rng)).collect();
            (name, check_op(&inputs, op.as_ref(), probes, 200 + i as u64))
        })
        .collect()
}
