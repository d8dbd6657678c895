//! Experiment configuration as flat `key = value` text.
//!
//! One pair per line; `#` starts a comment. Unknown keys, malformed values
//! and missing required keys (`dataset`, `tasks`) are errors carrying the
//! offending line number (the line after the last for missing keys).

use std::path::PathBuf;

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::model::{AggregatorVariant, BackboneConfig, ScalingMode};
use crate::rehearsal::{StrategyConfig, StrategyKind};
use crate::tensor::BatchNormConfig;
use crate::trainer::TrainConfig;
use crate::wavelet::Selection;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// Directory holding `data_batch_{1..5}.bin` and `test_batch.bin`.
    Cifar10 { dir: PathBuf },
    Synthetic { spec: SyntheticSpec, test_per_class: usize },
}

impl DatasetSource {
    pub fn num_classes(&self) -> usize {
        match self {
            DatasetSource::Cifar10 { .. } => 10,
            DatasetSource::Synthetic { spec, .. } => spec.classes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub normalize: bool,
    pub tasks: usize,
    pub class_order: Option<Vec<usize>>,
    pub buffer_capacity: usize,
    pub strategy: StrategyConfig,
    pub backbone: BackboneConfig,
    pub variant: AggregatorVariant,
    pub selection: Selection,
    pub bn: BatchNormConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub precision: Precision,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let spec = SyntheticSpec::default();
        Self {
            dataset: DatasetSource::Synthetic { spec, test_per_class: 100 },
            normalize: true,
            tasks: 2,
            class_order: None,
            buffer_capacity: 125,
            strategy: StrategyConfig::default(),
            backbone: BackboneConfig::resnet18(spec.classes).with_scaling(ScalingMode::HalveBoth),
            variant: AggregatorVariant::default(),
            selection: Selection::default(),
            bn: BatchNormConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
            precision: Precision::F32,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn num<V: std::str::FromStr>(v: &str) -> std::result::Result<V, String>
where
    V::Err: std::fmt::Display,
{
    v.parse::<V>().map_err(|e| format!("`{v}`: {e}"))
}

fn list(v: &str) -> std::result::Result<Vec<usize>, String> {
    v.split(',').map(|p| num(p.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn choice<V>(v: &str, parse: impl Fn(&str) -> Option<V>) -> std::result::Result<V, String> {
    parse(v).ok_or_else(|| format!("unknown option `{v}`"))
}

impl ExperimentConfig {
    fn synthetic_mut(&mut self, key: &str) -> std::result::Result<(&mut SyntheticSpec, &mut usize), String> {
        match &mut self.dataset {
            DatasetSource::Synthetic { spec, test_per_class } => Ok((spec, test_per_class)),
            DatasetSource::Cifar10 { .. } => Err(format!("`{key}` needs `dataset = synthetic` first")),
        }
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "dataset" => {
                self.dataset = match v {
                    "synthetic" => match &self.dataset {
                        d @ DatasetSource::Synthetic { .. } => d.clone(),
                        _ => ExperimentConfig::default().dataset,
                    },
                    "cifar10" => DatasetSource::Cifar10 { dir: PathBuf::from("data/cifar-10-batches-bin") },
                    _ => return Err(format!("unknown dataset `{v}` (synthetic or cifar10)")),
                }
            }
            "data_dir" => match &mut self.dataset {
                DatasetSource::Cifar10 { dir } => *dir = PathBuf::from(v),
                _ => return Err("`data_dir` needs `dataset = cifar10` first".into()),
            },
            "synthetic.classes" => self.synthetic_mut(key)?.0.classes = num(v)?,
            "synthetic.samples_per_class" => self.synthetic_mut(key)?.0.samples_per_class = num(v)?,
            "synthetic.test_per_class" => *self.synthetic_mut(key)?.1 = num(v)?,
            "synthetic.image_size" => self.synthetic_mut(key)?.0.image_size = num(v)?,
            "synthetic.noise" => self.synthetic_mut(key)?.0.noise = num(v)?,
            "synthetic.seed" => self.synthetic_mut(key)?.0.seed = num(v)?,
            "normalize" => self.normalize = num(v)?,
            "tasks" => self.tasks = num(v)?,
            "class_order" => self.class_order = if v == "none" { None } else { Some(list(v)?) },
            "buffer_capacity" => self.buffer_capacity = num(v)?,
            "strategy" => self.strategy.kind = choice(v, StrategyKind::parse)?,
            "strategy.alpha" => self.strategy.alpha = num(v)?,
            "strategy.beta" => self.strategy.beta = num(v)?,
            "strategy.plastic_decay" => self.strategy.plastic_decay = num(v)?,
            "strategy.stable_decay" => self.strategy.stable_decay = num(v)?,
            "strategy.plastic_update_prob" => self.strategy.plastic_update_prob = num(v)?,
            "strategy.stable_update_prob" => self.strategy.stable_update_prob = num(v)?,
            "strategy.consistency_weight" => self.strategy.consistency_weight = num(v)?,
            "strategy.ema_warmup" => self.strategy.ema_warmup = num(v)?,
            "backbone.base_width" => self.backbone.base_width = num(v)?,
            "backbone.blocks_per_stage" => {
                self.backbone.blocks_per_stage =
                    list(v)?.try_into().map_err(|_| "expected four comma-separated counts".to_string())?
            }
            "backbone.scaling_mode" => self.backbone.scaling_mode = choice(v, ScalingMode::parse)?,
            "variant" => self.variant = choice(v, AggregatorVariant::parse)?,
            "selection" => self.selection = choice(v, Selection::parse)?,
            "bn.momentum" => self.bn.momentum = num(v)?,
            "bn.eps" => self.bn.eps = num(v)?,
            "epochs" => self.train.epochs = num(v)?,
            "lr" => self.train.lr = num(v)?,
            "momentum" => self.train.momentum = num(v)?,
            "weight_decay" => self.train.weight_decay = num(v)?,
            "batch_size" => self.train.batch_size = num(v)?,
            "replay_batch_size" => self.train.replay_batch_size = num(v)?,
            "seed" => self.seed = num(v)?,
            "precision" => {
                self.precision = match v {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(format!("unknown precision `{v}` (f32 or f64)")),
                }
            }
            "output_dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parse config text. Later lines override earlier ones.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let (mut has_dataset, mut has_tasks) = (false, false);
        let mut last = 0;
        for (i, raw) in text.lines().enumerate() {
            last = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            has_dataset |= key == "dataset";
            has_tasks |= key == "tasks";
            cfg.set(key, value.trim())
                .map_err(|m| Error::Parse { line: i + 1, message: format!("{key}: {m}") })?;
        }
        for (present, key) in [(has_dataset, "dataset"), (has_tasks, "tasks")] {
            if !present {
                return Err(Error::Parse { line: last + 1, message: format!("missing required key `{key}`") });
            }
        }
        cfg.finish()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Apply `key=value` overrides on top of a parsed config.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config("--override", format!("expected key=value, got `{o}`")))?;
            self.set(k.trim(), v.trim()).map_err(|m| Error::config(k.trim(), m))?;
        }
        self.finish()
    }

    /// Derive dependent fields and validate.
    pub fn finish(&mut self) -> Result<()> {
        self.backbone.num_classes = self.dataset.num_classes();
        self.backbone.image_channels = match &self.dataset {
            DatasetSource::Cifar10 { .. } => 3,
            DatasetSource::Synthetic { spec, .. } => spec.channels,
        };
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let classes = self.dataset.num_classes();
        if self.tasks == 0 || !classes.is_multiple_of(self.tasks) {
            return Err(Error::config("tasks", format!("{} does not divide {classes} classes", self.tasks)));
        }
        if let Some(order) = &self.class_order {
            let mut s = order.clone();
            s.sort_unstable();
            if s != (0..classes).collect::<Vec<_>>() {
                return Err(Error::config("class_order", format!("must be a permutation of 0..{classes}")));
            }
        }
        if let DatasetSource::Synthetic { spec, test_per_class } = &self.dataset {
            if spec.image_size % 2 != 0 || spec.image_size < 2 {
                return Err(Error::config("synthetic.image_size", "must be even"));
            }
            if spec.classes < 2 || spec.samples_per_class == 0 || *test_per_class == 0 {
                return Err(Error::config("synthetic", "need 2+ classes and nonzero sample counts"));
            }
        }
        if self.backbone.scaling_mode == ScalingMode::Full {
            return Err(Error::config("backbone.scaling_mode", "the dual network needs a reduced scaling mode"));
        }
        if self.bn.eps <= 0.0 || !(0.0..=1.0).contains(&self.bn.momentum) {
            return Err(Error::config("bn", "eps must be positive and momentum in [0, 1]"));
        }
        self.backbone.validate()?;
        self.strategy.validate()?;
        self.train.validate()
    }

    /// Text that parses back to an identical config.
    pub fn emit(&self) -> String {
        let mut lines: Vec<(String, String)> = Vec::new();
        let mut kv = |k: &str, v: String| lines.push((k.to_string(), v));
        match &self.dataset {
            DatasetSource::Cifar10 { dir } => {
                kv("dataset", "cifar10".into());
                kv("data_dir", dir.display().to_string());
            }
            DatasetSource::Synthetic { spec, test_per_class } => {
                kv("dataset", "synthetic".into());
                kv("synthetic.classes", spec.classes.to_string());
                kv("synthetic.samples_per_class", spec.samples_per_class.to_string());
                kv("synthetic.test_per_class", test_per_class.to_string());
                kv("synthetic.image_size", spec.image_size.to_string());
                kv("synthetic.noise", format!("{:?}", spec.noise));
                kv("synthetic.seed", spec.seed.to_string());
            }
        }
        let s = &self.strategy;
        kv("normalize", self.normalize.to_string());
        kv("tasks", self.tasks.to_string());
        kv("class_order", self.class_order.as_deref().map_or("none".into(), join));
        kv("buffer_capacity", self.buffer_capacity.to_string());
        kv("strategy", s.kind.as_str().into());
        kv("strategy.alpha", format!("{:?}", s.alpha));
        kv("strategy.beta", format!("{:?}", s.beta));
        kv("strategy.plastic_decay", format!("{:?}", s.plastic_decay));
        kv("strategy.stable_decay", format!("{:?}", s.stable_decay));
        kv("strategy.plastic_update_prob", format!("{:?}", s.plastic_update_prob));
        kv("strategy.stable_update_prob", format!("{:?}", s.stable_update_prob));
        kv("strategy.consistency_weight", format!("{:?}", s.consistency_weight));
        kv("strategy.ema_warmup", s.ema_warmup.to_string());
        kv("backbone.base_width", self.backbone.base_width.to_string());
        kv("backbone.blocks_per_stage", join(&self.backbone.blocks_per_stage));
        kv("backbone.scaling_mode", self.backbone.scaling_mode.as_str().into());
        kv("variant", self.variant.as_str().into());
        kv("selection", self.selection.as_str().into());
        kv("bn.momentum", format!("{:?}", self.bn.momentum));
        kv("bn.eps", format!("{:?}", self.bn.eps));
        kv("epochs", self.train.epochs.to_string());
        kv("lr", format!("{:?}", self.train.lr));
        kv("momentum", format!("{:?}", self.train.momentum));
        kv("weight_decay", format!("{:?}", self.train.weight_decay));
        kv("batch_size", self.train.batch_size.to_string());
        kv("replay_batch_size", self.train.replay_batch_size.to_string());
        kv("seed", self.seed.to_string());
        kv("precision", self.precision.as_str().into());
        kv("output_dir", self.output_dir.display().to_string());
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
