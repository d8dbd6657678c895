//! End-to-end runs: data loading, the task stream, training and accounting.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{DatasetSource, ExperimentConfig};
use crate::data::{self, Dataset, SyntheticSpec, CIFAR_MEAN, CIFAR_STD, SYNTHETIC_MEAN, SYNTHETIC_STD};
use crate::error::Result;
use crate::model::{
    estimate_activation_memory, flops_forward, flops_train, ActivationMemory, AggregatorVariant, BackboneConfig,
    Baseline, DualNet, ScalingMode,
};
use crate::tensor::Float;
use crate::trainer::{run_stream, AccuracyMatrix, EpochRecord, Learner, TaskStream};
use crate::wavelet::Selection;

/// Train and test sets for a config, normalized when requested.
pub fn load_data<T: Float>(cfg: &ExperimentConfig) -> Result<(Dataset<T>, Dataset<T>)> {
    let (mut train, mut test, mean, std) = match &cfg.dataset {
        DatasetSource::Cifar10 { dir } => {
            let (a, b) = data::read_cifar10_dir(dir)?;
            (a, b, CIFAR_MEAN.to_vec(), CIFAR_STD.to_vec())
        }
        DatasetSource::Synthetic { spec, test_per_class } => {
            let train = data::synthesize_dataset(spec)?;
            let test_spec = SyntheticSpec {
                samples_per_class: *test_per_class,
                seed: spec.seed.wrapping_add(0x7e57),
                ..*spec
            };
            (train, data::synthesize_dataset(&test_spec)?, vec![SYNTHETIC_MEAN], vec![SYNTHETIC_STD])
        }
    };
    if cfg.normalize {
        train.normalize(&mean, &std)?;
        test.normalize(&mean, &std)?;
    }
    Ok((train, test))
}

/// The dual network a config describes, initialized from its seed.
pub fn build_net<T: Float>(cfg: &ExperimentConfig) -> Result<DualNet<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    DualNet::new(cfg.backbone, cfg.variant, cfg.selection, cfg.bn, &mut rng)
}

/// Backbone parameters of the full-size single-branch reference.
pub fn baseline_backbone_params(cfg: &BackboneConfig) -> usize {
    let full = BackboneConfig { scaling_mode: ScalingMode::Full, ..*cfg };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Baseline::<f32>::new(full, Default::default(), &mut rng)
        .map(|b| b.backbone_param_count())
        .unwrap_or(0)
}

/// Static cost figures for a network.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSummary {
    pub params: usize,
    pub backbone_params: usize,
    pub baseline_backbone_params: usize,
    pub flops_forward: u64,
    pub activation_memory: ActivationMemory,
    pub image_shape: [usize; 3],
}

pub fn count<T: Float>(cfg: &ExperimentConfig, net: &DualNet<T>) -> CostSummary {
    let image = image_shape(cfg);
    CostSummary {
        params: net.param_count(),
        backbone_params: net.backbone_param_count(),
        baseline_backbone_params: baseline_backbone_params(&cfg.backbone),
        flops_forward: flops_forward(net, image),
        activation_memory: estimate_activation_memory(net, image, cfg.train.batch_size),
        image_shape: image,
    }
}

pub fn image_shape(cfg: &ExperimentConfig) -> [usize; 3] {
    match &cfg.dataset {
        DatasetSource::Cifar10 { .. } => [3, 32, 32],
        DatasetSource::Synthetic { spec, .. } => [spec.channels, spec.image_size, spec.image_size],
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct Report {
    pub config_text: String,
    pub class_il: AccuracyMatrix,
    pub task_il: AccuracyMatrix,
    pub curves: Vec<EpochRecord>,
    pub cost: CostSummary,
    pub train_samples: u64,
    pub flops_train: u64,
    pub buffer_len: usize,
    pub buffer_seen: u64,
    pub buffer_bytes: usize,
    /// Bytes the same entries would need as full-resolution images.
    pub buffer_full_res_bytes: usize,
    pub wall_seconds: f64,
}

impl Report {
    pub fn final_class_il(&self) -> f64 {
        self.class_il.average_accuracy(self.class_il.tasks() - 1).unwrap_or(f64::NAN)
    }

    pub fn final_task_il(&self) -> f64 {
        self.task_il.average_accuracy(self.task_il.tasks() - 1).unwrap_or(f64::NAN)
    }

    pub fn final_forgetting(&self) -> f64 {
        self.class_il.forgetting(self.class_il.tasks() - 1).unwrap_or(f64::NAN)
    }
}

/// A finished run: the report plus the trained learner.
pub struct Run<T> {
    pub report: Report,
    pub learner: Learner<T>,
}

pub fn run_experiment<T: Float>(cfg: &ExperimentConfig) -> Result<Run<T>> {
    cfg.validate()?;
    let start = Instant::now();
    let (train, test) = load_data::<T>(cfg)?;
    let stream = TaskStream::split(&train, &test, cfg.dataset.num_classes(), cfg.tasks, cfg.class_order.as_deref())?;
    let net = build_net::<T>(cfg)?;
    let cost = count(cfg, &net);
    let mut learner = Learner::new(net, cfg.strategy, cfg.train, cfg.buffer_capacity, cfg.seed)?;
    let result = run_stream(&mut learner, &stream)?;
    let samples = learner.samples_processed();
    let image = cost.image_shape;
    let report = Report {
        config_text: cfg.emit(),
        class_il: result.class_il,
        task_il: result.task_il,
        curves: result.curves,
        flops_train: flops_train(&learner.net, image, samples),
        train_samples: samples,
        buffer_len: learner.buffer.len(),
        buffer_seen: learner.buffer.seen(),
        buffer_bytes: learner.buffer.stored_bytes(),
        buffer_full_res_bytes: learner.buffer.len() * image.iter().product::<usize>() * T::BYTES,
        cost,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(Run { report, learner })
}

/// The ablation grid: every aggregator variant at the configured selection,
/// then every other selection at the configured variant.
pub fn ablation_grid(cfg: &ExperimentConfig) -> Vec<(AggregatorVariant, Selection)> {
    let mut grid: Vec<_> = AggregatorVariant::ALL.iter().map(|&v| (v, cfg.selection)).collect();
    grid.extend(Selection::ALL.iter().filter(|&&s| s != cfg.selection).map(|&s| (cfg.variant, s)));
    grid
}
