//! Aggregator variants and subband selections on a small stream. Single-seed
//! differences at this scale are mostly noise; the CLI `ablate` mode writes
//! the same grid to disk.

use freqcl::config::ExperimentConfig;
use freqcl::experiment::{ablation_grid, run_experiment};

fn main() -> freqcl::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_overrides(&[
        "backbone.base_width=8",
        "synthetic.samples_per_class=100",
        "synthetic.test_per_class=40",
        "synthetic.noise=1.0",
        "epochs=2",
        "buffer_capacity=50",
    ])?;
    for (variant, selection) in ablation_grid(&cfg) {
        let c = ExperimentConfig { variant, selection, ..cfg.clone() };
        let r = run_experiment::<f32>(&c)?.report;
        println!(
            "{:<15} {:<13} class-IL {:.3}  backbone params {:>6}  flops {:>9}",
            variant.as_str(),
            selection.as_str(),
            r.final_class_il(),
            r.cost.backbone_params,
            r.cost.flops_forward
        );
    }
    Ok(())
}
