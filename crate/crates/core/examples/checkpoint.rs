//! Save a trained network, load it back, and check the predictions match.

use freqcl::config::ExperimentConfig;
use freqcl::data::{synthesize_dataset, SyntheticSpec};
use freqcl::experiment::run_experiment;
use freqcl::model::{read_checkpoint, write_checkpoint, ModelSpec};
use freqcl::trainer::predict;

fn main() -> freqcl::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_overrides(&["backbone.base_width=8", "synthetic.samples_per_class=40", "synthetic.image_size=16", "epochs=1"])?;
    let run = run_experiment::<f32>(&cfg)?;
    let net = run.learner.eval_net();

    let mut bytes = Vec::new();
    write_checkpoint(net, &mut bytes)?;
    let loaded = read_checkpoint::<f32, _>(bytes.as_slice())?;
    println!("checkpoint {} bytes\n{}", bytes.len(), ModelSpec::of(&loaded).to_text());

    let probe = synthesize_dataset::<f32>(&SyntheticSpec { samples_per_class: 4, image_size: 16, seed: 5, ..SyntheticSpec::default() })?;
    let same = predict(net, &probe)? == predict(&loaded, &probe)?;
    println!("fuser frozen after load: {}, identical logits: {same}", loaded.fuser_frozen());
    Ok(())
}
