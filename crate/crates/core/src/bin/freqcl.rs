//! Command-line front end. Exit codes: 0 success, 2 config error, 3 data
//! error, 4 numeric failure, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use freqcl::config::{ExperimentConfig, Precision};
use freqcl::experiment::{ablation_grid, build_net, count, run_experiment, Report};
use freqcl::model::save_checkpoint;
use freqcl::rehearsal::ReplayBuffer;
use freqcl::report::{cost_json, emit_report};
use freqcl::tensor::Float;
use freqcl::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Run,
    Ablate,
    InspectBuffer,
    Count,
}

#[derive(Debug, Parser)]
#[command(name = "freqcl", about = "Frequency-decomposed dual-network continual learning")]
struct Args {
    /// Flat `key = value` experiment config. Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Run)]
    mode: Mode,
    /// `key=value`, applied after the config file. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Parse { .. } => 2,
        Error::Format { .. } | Error::Io(_) | Error::Label { .. } => 3,
        Error::NonFinite { .. } => 4,
        _ => 1,
    }
}

fn load_config(args: &Args) -> freqcl::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_overrides(&args.overrides)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn print_summary(label: &str, r: &Report) {
    println!(
        "{label}: ACC_T class-IL {:.4}, task-IL {:.4}, forgetting {:.4}, flops_train {:.3e}, {:.1}s",
        r.final_class_il(),
        r.final_task_il(),
        r.final_forgetting(),
        r.flops_train as f64,
        r.wall_seconds
    );
}

fn run_one<T: Float>(cfg: &ExperimentConfig, dir: &Path) -> freqcl::Result<Report> {
    let run = run_experiment::<T>(cfg)?;
    emit_report(&run.report, dir)?;
    save_checkpoint(run.learner.eval_net(), &dir.join("model.ckpt"))?;
    run.learner.buffer.save_snapshot(&dir.join("buffer.bin"))?;
    Ok(run.report)
}

fn run_at(cfg: &ExperimentConfig, dir: &Path) -> freqcl::Result<Report> {
    match cfg.precision {
        Precision::F32 => run_one::<f32>(cfg, dir),
        Precision::F64 => run_one::<f64>(cfg, dir),
    }
}

fn ablate(cfg: &ExperimentConfig) -> freqcl::Result<()> {
    let mut csv = String::from("variant,selection,acc_class_il,acc_task_il,forgetting,backbone_params,flops_forward\n");
    for (variant, selection) in ablation_grid(cfg) {
        let c = ExperimentConfig { variant, selection, ..cfg.clone() };
        let dir = cfg.output_dir.join(format!("{}__{}", variant.as_str(), selection.as_str()));
        let r = run_at(&c, &dir)?;
        print_summary(&format!("{} / {}", variant.as_str(), selection.as_str()), &r);
        csv += &format!(
            "{},{},{:?},{:?},{:?},{},{}\n",
            variant.as_str(),
            selection.as_str(),
            r.final_class_il(),
            r.final_task_il(),
            r.final_forgetting(),
            r.cost.backbone_params,
            r.cost.flops_forward
        );
    }
    std::fs::write(cfg.output_dir.join("ablation.csv"), csv)?;
    Ok(())
}

fn inspect_buffer(cfg: &ExperimentConfig) -> freqcl::Result<()> {
    let path = cfg.output_dir.join("buffer.bin");
    let buf = ReplayBuffer::<f64>::load_snapshot(&path)?;
    let tasks = buf.entries().iter().map(|e| e.task_id).max().map_or(0, |t| t + 1);
    let mut per_task = vec![0usize; tasks];
    for e in buf.entries() {
        per_task[e.task_id] += 1;
    }
    let first = buf.entries().first();
    let info = serde_json::json!({
        "path": path.display().to_string(),
        "capacity": buf.capacity(),
        "seen": buf.seen(),
        "entries": buf.len(),
        "per_class": buf.class_histogram(cfg.dataset.num_classes()),
        "per_task": per_task,
        "low_shape": first.map(|e| e.low.shape().to_vec()),
        "high_shape": first.map(|e| e.high.shape().to_vec()),
        "stores_logits": first.is_some_and(|e| e.logits.is_some()),
    });
    println!("{}", serde_json::to_string_pretty(&info).expect("json"));
    Ok(())
}

fn count_only(cfg: &ExperimentConfig) -> freqcl::Result<()> {
    let net = build_net::<f32>(cfg)?;
    let v = cost_json(&count(cfg, &net));
    let text = serde_json::to_string_pretty(&v).expect("json");
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("count.json"), format!("{text}\n"))?;
    println!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = load_config(&args).and_then(|cfg| match args.mode {
        Mode::Run => run_at(&cfg, &cfg.output_dir).map(|r| print_summary("run", &r)),
        Mode::Ablate => ablate(&cfg),
        Mode::InspectBuffer => inspect_buffer(&cfg),
        Mode::Count => count_only(&cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("freqcl: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
