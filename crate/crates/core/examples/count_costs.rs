//! Parameters, forward FLOPs and activation memory of the dual network next
//! to a full-resolution ResNet18 for every scaling mode.

use freqcl::model::{
    estimate_activation_memory, flops_forward, AggregatorVariant, Baseline, BackboneConfig, DualNet, ScalingMode,
};
use freqcl::tensor::BatchNormConfig;
use freqcl::wavelet::Selection;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> freqcl::Result<()> {
    let image = [3, 32, 32];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let base = Baseline::<f32>::new(BackboneConfig::resnet18(10), BatchNormConfig::default(), &mut rng)?;
    let base_flops = flops_forward(&base, image);
    let base_mem = estimate_activation_memory(&base, image, 32).total();
    println!("baseline        params {:>9}  flops {:>11}  act/32 {:>6} KiB", base.backbone_param_count(), base_flops, base_mem / 1024);

    // FULL is the baseline's layout; the dual net only accepts reduced modes.
    for mode in ScalingMode::ALL.into_iter().filter(|m| *m != ScalingMode::Full) {
        let cfg = BackboneConfig::resnet18(10).with_scaling(mode);
        let net = DualNet::<f32>::new(cfg, AggregatorVariant::Mutual, Selection::FuseNoLl, BatchNormConfig::default(), &mut rng)?;
        let flops = flops_forward(&net, image);
        let mem = estimate_activation_memory(&net, image, 32).total();
        println!(
            "{:<15} params {:>9}  flops {:>11}  act/32 {:>6} KiB  ratios {:.3} / {:.3}",
            mode.as_str(),
            net.backbone_param_count(),
            flops,
            mem / 1024,
            net.backbone_param_count() as f64 / base.backbone_param_count() as f64,
            flops as f64 / base_flops as f64,
        );
    }
    Ok(())
}
