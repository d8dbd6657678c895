//! The same stream under each rehearsal strategy. CLS-ER reports its stable
//! model, which trails the working model on runs this short.

use freqcl::config::ExperimentConfig;
use freqcl::experiment::run_experiment;

fn main() -> freqcl::Result<()> {
    for strategy in ["er", "derpp", "erace", "clser"] {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_overrides(&[
            "backbone.base_width=16",
            "synthetic.samples_per_class=200",
            "synthetic.test_per_class=50",
            "synthetic.noise=1.0",
            "epochs=2",
            "buffer_capacity=125",
            &format!("strategy={strategy}"),
        ])?;
        let r = run_experiment::<f32>(&cfg)?.report;
        println!(
            "{strategy:<6} class-IL {:.3}  task-IL {:.3}  forgetting {:.3}",
            r.final_class_il(),
            r.final_task_il(),
            r.final_forgetting()
        );
    }
    Ok(())
}
