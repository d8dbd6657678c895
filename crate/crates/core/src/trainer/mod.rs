//! Task-sequential training, task-boundary hooks and evaluation.

mod metrics;

pub use metrics::AccuracyMatrix;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::DualNet;
use crate::rehearsal::{
    self, BufferEntry, LiveBatch, ReplayBatch, ReplayBuffer, SemanticMemory, StepLoss, StrategyConfig,
    StrategyKind,
};
use crate::tensor::{Float, Graph, Sgd, Tensor};

/// One task: its class partition and the matching train/test samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Task<T> {
    pub classes: Vec<usize>,
    pub train: Dataset<T>,
    pub test: Dataset<T>,
}

/// Tasks with disjoint class partitions, trained in order.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream<T> {
    pub tasks: Vec<Task<T>>,
}

impl<T: Float> TaskStream<T> {
    /// Split into `tasks` equal groups of classes taken from `order`
    /// (ascending labels when `None`).
    pub fn split(
        train: &Dataset<T>,
        test: &Dataset<T>,
        num_classes: usize,
        tasks: usize,
        order: Option<&[usize]>,
    ) -> Result<Self> {
        if tasks == 0 || !num_classes.is_multiple_of(tasks) {
            return Err(Error::config("tasks", format!("{tasks} tasks do not divide {num_classes} classes")));
        }
        let default: Vec<usize> = (0..num_classes).collect();
        let order = order.unwrap_or(&default);
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != default {
            return Err(Error::config("class_order", format!("must be a permutation of 0..{num_classes}")));
        }
        if let Some(&l) = train.labels.iter().chain(&test.labels).find(|&&l| l >= num_classes) {
            return Err(Error::Label { label: l, classes: num_classes });
        }
        let per = num_classes / tasks;
        let tasks = order
            .chunks(per)
            .map(|classes| Task {
                classes: classes.to_vec(),
                train: train.filter_classes(classes),
                test: test.filter_classes(classes),
            })
            .collect();
        Ok(Self { tasks })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Classes of tasks `0..=t`.
    pub fn classes_through(&self, t: usize) -> Vec<usize> {
        self.tasks[..=t].iter().flat_map(|k| k.classes.iter().copied()).collect()
    }
}

/// Optimization settings shared by every task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub replay_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr: 0.03,
            momentum: 0.0,
            weight_decay: 0.0,
            batch_size: 32,
            replay_batch_size: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "batchnorm needs at least 2 samples per batch"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config("lr", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Training record for one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub task: usize,
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
}

/// Per-test-task accuracies after one task, under both protocols.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub class_il: Vec<f64>,
    pub task_il: Vec<f64>,
}

/// Index of the largest allowed logit; ties go to the lowest index.
pub fn masked_argmax<T: Float>(logits: &[T], allowed: &[usize]) -> usize {
    let mut best = allowed[0];
    for &c in allowed {
        if logits[c] > logits[best] || (logits[c] == logits[best] && c < best) {
            best = c;
        }
    }
    best
}

/// Consecutive batches of `order`. A trailing single sample joins the
/// previous batch, since batch statistics need at least two.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out[out.len() - 1].len() == 1 {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// Working network plus everything the chosen strategy carries between steps.
#[derive(Debug, Clone)]
pub struct Learner<T> {
    pub net: DualNet<T>,
    pub strategy: StrategyConfig,
    pub train: TrainConfig,
    pub buffer: ReplayBuffer<T>,
    pub optimizer: Sgd<T>,
    pub memory: Option<SemanticMemory<T>>,
    rng: ChaCha8Rng,
    // Separate stream so EMA coin flips leave batching untouched.
    ema_rng: ChaCha8Rng,
    steps: u64,
    samples_processed: u64,
}

impl<T: Float> Learner<T> {
    pub fn new(
        net: DualNet<T>,
        strategy: StrategyConfig,
        train: TrainConfig,
        buffer_capacity: usize,
        seed: u64,
    ) -> Result<Self> {
        strategy.validate()?;
        train.validate()?;
        let optimizer = Sgd::new(train.lr, train.momentum, train.weight_decay)?;
        let memory = (strategy.kind == StrategyKind::ClsEr).then(|| SemanticMemory::new(&net));
        Ok(Self {
            net,
            strategy,
            train,
            buffer: ReplayBuffer::new(buffer_capacity, seed ^ 0x5eed_b0ff),
            optimizer,
            memory,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ema_rng: ChaCha8Rng::seed_from_u64(seed ^ 0xe3a_c0de),
            steps: 0,
            samples_processed: 0,
        })
    }

    /// Optimizer steps taken so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Forward/backward sample passes so far, live and replayed.
    pub fn samples_processed(&self) -> u64 {
        self.samples_processed
    }

    /// The model used for evaluation: the stable average under CLS-ER.
    pub fn eval_net(&self) -> &DualNet<T> {
        self.memory.as_ref().map_or(&self.net, |m| &m.stable)
    }

    fn replay(&mut self) -> Result<Option<ReplayBatch<T>>> {
        let picked = self.buffer.sample_batch(self.train.replay_batch_size, &mut self.rng);
        let batch = ReplayBatch::collate(&picked)?;
        if let Some(b) = &batch {
            self.samples_processed += b.len() as u64;
        }
        Ok(batch)
    }

    /// One optimizer step on a live batch. Replay is drawn before the live
    /// samples are offered to the buffer. Returns the loss.
    pub fn step(&mut self, task: usize, classes: &[usize], live: &LiveBatch<T>, offer: bool) -> Result<f64> {
        self.samples_processed += live.len() as u64;
        self.steps += 1;
        let step = self.steps;
        let mut g = Graph::new();
        let cfg = self.strategy;
        let out: StepLoss = match cfg.kind {
            StrategyKind::Er => {
                let r = self.replay()?;
                rehearsal::er_loss(&mut g, &mut self.net, live, r.as_ref())?
            }
            StrategyKind::DerPP => {
                let r1 = if cfg.alpha != 0.0 { self.replay()? } else { None };
                let r2 = if cfg.beta != 0.0 { self.replay()? } else { None };
                rehearsal::derpp_loss(&mut g, &mut self.net, live, r1.as_ref(), r2.as_ref(), cfg.alpha, cfg.beta)?
            }
            StrategyKind::ErAce => {
                let r = self.replay()?;
                rehearsal::erace_loss(&mut g, &mut self.net, live, r.as_ref(), classes, task == 0)?
            }
            StrategyKind::ClsEr => {
                let r = self.replay()?;
                let memory = self.memory.as_ref().expect("CLS-ER keeps a semantic memory");
                rehearsal::clser_loss(&mut g, &mut self.net, &memory.stable, live, r.as_ref(), cfg.consistency_weight)?
            }
        };
        let loss = g.value(out.loss).data()[0];
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!("{} loss at step {step} of task {task}", cfg.kind.as_str()),
            });
        }
        g.backward(out.loss)?;
        self.optimizer.step(&mut self.net.state.params, &g.param_grads())?;
        if let Some(memory) = &mut self.memory {
            memory.update(&self.net, &cfg, step, &mut self.ema_rng)?;
        }
        if offer {
            let high = g.value(out.live_high);
            let logits = g.value(out.live_logits);
            for (i, &label) in live.labels.iter().enumerate() {
                let stored_logits = (cfg.kind == StrategyKind::DerPP).then(|| logits.index_first(i).into_data());
                let entry = BufferEntry::new(live.quad.ll.index_first(i), high.index_first(i), label, stored_logits, task)?;
                self.buffer.reservoir_offer(entry);
            }
        }
        Ok(loss.as_f64())
    }

    /// Train on one task. Samples are offered to the buffer during the first
    /// epoch only, so each is offered exactly once.
    pub fn train_task(&mut self, task: usize, classes: &[usize], data: &Dataset<T>) -> Result<Vec<EpochRecord>> {
        let mut records = Vec::with_capacity(self.train.epochs);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for epoch in 0..self.train.epochs {
            order.shuffle(&mut self.rng);
            let mut total = 0.0;
            let mut steps = 0;
            for chunk in batches(&order, self.train.batch_size) {
                let batch = data.gather(chunk);
                let live = LiveBatch::from_images(&batch.images, batch.labels)?;
                total += self.step(task, classes, &live, epoch == 0)?;
                steps += 1;
            }
            records.push(EpochRecord {
                task,
                epoch,
                mean_loss: total / steps.max(1) as f64,
                steps,
            });
        }
        Ok(records)
    }

    /// Task-boundary hook: the fuser is frozen once the first task is done.
    pub fn end_task(&mut self, task: usize) {
        if task == 0 {
            self.net.freeze_fuser();
            if let Some(m) = &mut self.memory {
                m.plastic.freeze_fuser();
                m.stable.freeze_fuser();
            }
        }
    }

    /// Accuracy on every task `0..=t` of `stream` with the evaluation model.
    pub fn evaluate(&self, stream: &TaskStream<T>, t: usize) -> Result<EvalRow> {
        evaluate(self.eval_net(), stream, t)
    }
}

/// Class-IL: argmax over all classes seen through task `t`. Task-IL: argmax
/// within the evaluated task's own classes.
pub fn evaluate<T: Float>(net: &DualNet<T>, stream: &TaskStream<T>, t: usize) -> Result<EvalRow> {
    let seen = stream.classes_through(t);
    let mut row = EvalRow { class_il: Vec::new(), task_il: Vec::new() };
    for task in &stream.tasks[..=t] {
        let (mut cil, mut til) = (0usize, 0usize);
        let n = task.test.len();
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(256) {
            let batch = task.test.gather(chunk);
            let logits = net.logits_for_images(&batch.images)?;
            let k = logits.shape()[1];
            for (i, &label) in batch.labels.iter().enumerate() {
                let z = &logits.data()[i * k..(i + 1) * k];
                cil += (masked_argmax(z, &seen) == label) as usize;
                til += (masked_argmax(z, &task.classes) == label) as usize;
            }
        }
        let denom = n.max(1) as f64;
        row.class_il.push(cil as f64 / denom);
        row.task_il.push(til as f64 / denom);
    }
    Ok(row)
}

/// Outcome of training a learner through a whole stream.
#[derive(Debug, Clone)]
pub struct StreamResult {
    pub class_il: AccuracyMatrix,
    pub task_il: AccuracyMatrix,
    pub curves: Vec<EpochRecord>,
}

impl StreamResult {
    pub fn final_class_il(&self) -> f64 {
        self.class_il
            .average_accuracy(self.class_il.tasks() - 1)
            .expect("populated after a full run")
    }
}

/// Train through every task, applying the boundary hook and evaluating after each.
pub fn run_stream<T: Float>(learner: &mut Learner<T>, stream: &TaskStream<T>) -> Result<StreamResult> {
    let n = stream.len();
    let mut out = StreamResult {
        class_il: AccuracyMatrix::new(n),
        task_il: AccuracyMatrix::new(n),
        curves: Vec::new(),
    };
    for (t, task) in stream.tasks.iter().enumerate() {
        out.curves.extend(learner.train_task(t, &task.classes, &task.train)?);
        learner.end_task(t);
        let row = learner.evaluate(stream, t)?;
        out.class_il.set_row(t, row.class_il)?;
        out.task_il.set_row(t, row.task_il)?;
    }
    Ok(out)
}

/// Logits of a trained model over a dataset, batched.
pub fn predict<T: Float>(net: &DualNet<T>, data: &Dataset<T>) -> Result<Tensor<T>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut rows = Vec::new();
    let mut k = 0;
    for chunk in idx.chunks(256) {
        let logits = net.logits_for_images(&data.gather(chunk).images)?;
        k = logits.shape()[1];
        rows.extend_from_slice(logits.data());
    }
    Tensor::new(&[data.len(), k], rows)
}
