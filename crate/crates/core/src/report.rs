//! Report files: `metrics.csv`, `summary.json`, `curves.csv`, `config.txt`.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::json;

use crate::error::Result;
use crate::experiment::{CostSummary, Report};

/// One row per populated accuracy entry.
pub fn metrics_csv(report: &Report) -> String {
    let mut s = String::from("after_task,eval_task,class_il_acc,task_il_acc\n");
    for ((t, tau, c), (_, _, k)) in report.class_il.entries().zip(report.task_il.entries()) {
        writeln!(s, "{t},{tau},{c:?},{k:?}").expect("write to string");
    }
    s
}

pub fn curves_csv(report: &Report) -> String {
    let mut s = String::from("task,epoch,mean_loss,steps\n");
    for r in &report.curves {
        writeln!(s, "{},{},{:?},{}", r.task, r.epoch, r.mean_loss, r.steps).expect("write to string");
    }
    s
}

pub fn cost_json(cost: &CostSummary) -> serde_json::Value {
    json!({
        "image_shape": cost.image_shape,
        "params": cost.params,
        "backbone_params": cost.backbone_params,
        "baseline_backbone_params": cost.baseline_backbone_params,
        "backbone_param_ratio": cost.backbone_params as f64 / cost.baseline_backbone_params.max(1) as f64,
        "flops_forward_per_sample": cost.flops_forward,
        "activation_memory": {
            "conv_bytes": cost.activation_memory.conv_bytes,
            "other_bytes": cost.activation_memory.other_bytes,
            "total_bytes": cost.activation_memory.total(),
        },
    })
}

pub fn summary_json(report: &Report) -> serde_json::Value {
    let rows = |m: &crate::trainer::AccuracyMatrix| -> Vec<Vec<f64>> {
        (0..m.tasks()).map(|t| m.row(t).to_vec()).collect()
    };
    let acc: Vec<f64> = (0..report.class_il.tasks())
        .map(|t| report.class_il.average_accuracy(t).unwrap_or(f64::NAN))
        .collect();
    json!({
        "acc_final_class_il": report.final_class_il(),
        "acc_final_task_il": report.final_task_il(),
        "forgetting_final": report.final_forgetting(),
        "acc_per_task_class_il": acc,
        "class_il_matrix": rows(&report.class_il),
        "task_il_matrix": rows(&report.task_il),
        "cost": cost_json(&report.cost),
        "train_samples": report.train_samples,
        "flops_train": report.flops_train,
        "buffer": {
            "entries": report.buffer_len,
            "seen": report.buffer_seen,
            "stored_bytes": report.buffer_bytes,
            "full_resolution_bytes": report.buffer_full_res_bytes,
        },
        "wall_seconds": report.wall_seconds,
    })
}

/// Write every report file into `dir`, creating it if needed.
pub fn emit_report(report: &Report, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(report))?;
    std::fs::write(dir.join("curves.csv"), curves_csv(report))?;
    let summary = serde_json::to_string_pretty(&summary_json(report)).expect("json values serialize");
    std::fs::write(dir.join("summary.json"), summary + "\n")?;
    std::fs::write(dir.join("config.txt"), &report.config_text)?;
    Ok(())
}
