//! Compare tape gradients of a conv + batchnorm + cross-entropy stack with
//! central finite differences.

use freqcl::tensor::{BatchNormConfig, Graph, ParamSet, RunningStats, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn loss(params: &ParamSet<f64>, x: &Tensor<f64>) -> (Graph<f64>, freqcl::tensor::Var) {
    let ids: Vec<_> = params.ids().collect();
    let mut g = Graph::new();
    let input = g.constant(x.clone());
    let w = g.param(params, ids[0]);
    let gamma = g.param(params, ids[1]);
    let beta = g.param(params, ids[2]);
    let fc = g.param(params, ids[3]);
    let h = g.conv2d(input, w, None, 1, 1).unwrap();
    let mut stats = RunningStats::new(4);
    let h = g.batchnorm2d(h, gamma, beta, &mut stats, BatchNormConfig::default(), true).unwrap();
    let h = g.relu(h);
    let h = g.global_avg_pool(h).unwrap();
    let logits = g.linear(h, fc, None).unwrap();
    let l = g.softmax_cross_entropy(logits, &[0, 2, 1], None).unwrap();
    (g, l)
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ParamSet::new();
    params.add("conv", random(&[4, 2, 3, 3], &mut rng));
    params.add("gamma", random(&[4], &mut rng));
    params.add("beta", random(&[4], &mut rng));
    params.add("fc", random(&[3, 4], &mut rng));
    let x = random(&[3, 2, 5, 5], &mut rng);

    let (mut g, l) = loss(&params, &x);
    g.backward(l).unwrap();
    let grads = g.param_grads();

    let h = 1e-4;
    for (id, grad) in &grads {
        let mut worst: f64 = 0.0;
        for (k, &analytic) in grad.iter().enumerate() {
            let at = |d: f64| {
                let mut p = params.clone();
                p.get_mut(*id).data_mut()[k] += d;
                let (g, l) = loss(&p, &x);
                g.value(l).data()[0]
            };
            let numeric = (at(h) - at(-h)) / (2.0 * h);
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3));
        }
        println!("{:<6} {:>3} values, worst relative error {worst:.2e}", params.name(*id), grad.len());
    }
}
