//! Two-task class-incremental run with experience replay on synthetic data.

use freqcl::config::ExperimentConfig;
use freqcl::experiment::run_experiment;
use freqcl::report::metrics_csv;

fn main() -> freqcl::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_overrides(&[
        "backbone.base_width=16",
        "synthetic.samples_per_class=200",
        "synthetic.test_per_class=50",
        "synthetic.noise=1.0",
        "epochs=2",
        "buffer_capacity=125",
    ])?;
    let run = run_experiment::<f32>(&cfg)?;
    let r = &run.report;
    for e in &r.curves {
        println!("task {} epoch {} loss {:.4}", e.task, e.epoch, e.mean_loss);
    }
    print!("{}", metrics_csv(r));
    println!(
        "ACC_T class-IL {:.3}, task-IL {:.3}, forgetting {:.3}, {} samples, {:.1}s",
        r.final_class_il(),
        r.final_task_il(),
        r.final_forgetting(),
        r.train_samples,
        r.wall_seconds
    );
    Ok(())
}
