//! Per-step rehearsal losses: ER, DER++, ER-ACE and CLS-ER.
//!
//! Live and replay batches get separate forward passes, so each batch is
//! normalized with its own batch statistics. Every term is a batch-mean
//! cross-entropy or mean squared error.

use rand::Rng;

use super::buffer::ReplayBatch;
use crate::error::{Error, Result};
use crate::model::DualNet;
use crate::tensor::{Float, Graph, ParamSet, Sgd, Tensor, Var};
use crate::wavelet::{self, WaveletQuad};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum StrategyKind {
    #[default]
    Er,
    DerPP,
    ErAce,
    ClsEr,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [StrategyKind::Er, StrategyKind::DerPP, StrategyKind::ErAce, StrategyKind::ClsEr];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Er => "er",
            StrategyKind::DerPP => "derpp",
            StrategyKind::ErAce => "erace",
            StrategyKind::ClsEr => "clser",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// DER++ logit-matching weight.
    pub alpha: f64,
    /// DER++ replay cross-entropy weight.
    pub beta: f64,
    pub plastic_decay: f64,
    pub stable_decay: f64,
    pub plastic_update_prob: f64,
    pub stable_update_prob: f64,
    pub consistency_weight: f64,
    /// Cap each EMA decay at `1 - 1/(step + 1)` so early averages track the
    /// working model instead of its random initialization.
    pub ema_warmup: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::Er,
            alpha: 0.1,
            beta: 0.5,
            plastic_decay: 0.999,
            stable_decay: 0.9999,
            plastic_update_prob: 0.9,
            stable_update_prob: 0.1,
            consistency_weight: 0.1,
            ema_warmup: true,
        }
    }
}

impl StrategyConfig {
    pub fn of(kind: StrategyKind) -> Self {
        Self { kind, ..Self::default() }
    }

    /// Decays and probabilities must lie in `[0, 1]`; the boundary values
    /// give the degenerate configurations used to check reductions.
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("strategy.plastic_decay", self.plastic_decay),
            ("strategy.stable_decay", self.stable_decay),
            ("strategy.plastic_update_prob", self.plastic_update_prob),
            ("strategy.stable_update_prob", self.stable_update_prob),
        ];
        for (field, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(field, format!("{v} is outside [0, 1]")));
            }
        }
        let weights = [
            ("strategy.alpha", self.alpha),
            ("strategy.beta", self.beta),
            ("strategy.consistency_weight", self.consistency_weight),
        ];
        for (field, v) in weights {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, format!("{v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Current-task minibatch, already decomposed.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveBatch<T> {
    pub quad: WaveletQuad<T>,
    pub labels: Vec<usize>,
}

impl<T: Float> LiveBatch<T> {
    pub fn from_images(images: &Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        if images.ndim() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::shape(
                "live batch",
                format!("images {:?} with {} labels", images.shape(), labels.len()),
            ));
        }
        Ok(Self { quad: wavelet::dwt2d(images)?, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Graph handles produced by one strategy step.
#[derive(Debug, Clone, Copy)]
pub struct StepLoss {
    pub loss: Var,
    /// Training-mode logits on the live batch.
    pub live_logits: Var,
    /// Fused high-frequency input of the live batch.
    pub live_high: Var,
}

/// Training-mode forward on live data; gradients reach the fuser.
pub fn forward_live<T: Float>(g: &mut Graph<T>, net: &mut DualNet<T>, live: &LiveBatch<T>) -> Result<(Var, Var)> {
    let low = g.constant(live.quad.ll.clone());
    let high = net.high_input(g, &live.quad)?;
    let out = net.forward(g, low, high, true)?;
    Ok((out.logits, high))
}

/// Training-mode forward on stored pairs.
pub fn forward_replay<T: Float>(g: &mut Graph<T>, net: &mut DualNet<T>, replay: &ReplayBatch<T>) -> Result<Var> {
    let low = g.constant(replay.pair.low.clone());
    let high = g.constant(replay.pair.high.clone());
    Ok(net.forward(g, low, high, true)?.logits)
}

/// `CE(live) + CE(replay)`; the replay term is absent when `replay` is `None`.
pub fn er_loss<T: Float>(
    g: &mut Graph<T>,
    net: &mut DualNet<T>,
    live: &LiveBatch<T>,
    replay: Option<&ReplayBatch<T>>,
) -> Result<StepLoss> {
    let (live_logits, live_high) = forward_live(g, net, live)?;
    let mut loss = g.softmax_cross_entropy(live_logits, &live.labels, None)?;
    if let Some(r) = replay {
        let logits = forward_replay(g, net, r)?;
        let ce = g.softmax_cross_entropy(logits, &r.labels, None)?;
        loss = g.add(loss, ce)?;
    }
    Ok(StepLoss { loss, live_logits, live_high })
}

/// `CE(live) + alpha * MSE(logits(replay1), stored) + beta * CE(replay2)`.
/// Terms with zero weight are skipped entirely.
pub fn derpp_loss<T: Float>(
    g: &mut Graph<T>,
    net: &mut DualNet<T>,
    live: &LiveBatch<T>,
    replay1: Option<&ReplayBatch<T>>,
    replay2: Option<&ReplayBatch<T>>,
    alpha: f64,
    beta: f64,
) -> Result<StepLoss> {
    let (live_logits, live_high) = forward_live(g, net, live)?;
    let mut loss = g.softmax_cross_entropy(live_logits, &live.labels, None)?;
    if let (Some(r), true) = (replay1, alpha != 0.0) {
        let stored = r
            .logits
            .as_ref()
            .ok_or_else(|| Error::Contract("DER++ replay entries must carry stored logits".into()))?;
        let logits = forward_replay(g, net, r)?;
        let target = g.constant(stored.clone());
        let m = g.mse(logits, target)?;
        let m = g.scale(m, alpha);
        loss = g.add(loss, m)?;
    }
    if let (Some(r), true) = (replay2, beta != 0.0) {
        let logits = forward_replay(g, net, r)?;
        let ce = g.softmax_cross_entropy(logits, &r.labels, None)?;
        let ce = g.scale(ce, beta);
        loss = g.add(loss, ce)?;
    }
    Ok(StepLoss { loss, live_logits, live_high })
}

/// Allowed-logit mask for the live term: the current task's classes plus any
/// class present in the batch.
pub fn erace_mask(labels: &[usize], current_classes: &[usize], num_classes: usize) -> Vec<bool> {
    let mut row = vec![false; num_classes];
    for &c in current_classes.iter().chain(labels) {
        if c < num_classes {
            row[c] = true;
        }
    }
    row.repeat(labels.len())
}

/// Asymmetric cross-entropy: the live term only competes among the current
/// task's classes (from the second task on), the replay term is unmasked.
pub fn erace_loss<T: Float>(
    g: &mut Graph<T>,
    net: &mut DualNet<T>,
    live: &LiveBatch<T>,
    replay: Option<&ReplayBatch<T>>,
    current_classes: &[usize],
    first_task: bool,
) -> Result<StepLoss> {
    let (live_logits, live_high) = forward_live(g, net, live)?;
    let mask = (!first_task).then(|| erace_mask(&live.labels, current_classes, net.config.num_classes));
    let mut loss = g.softmax_cross_entropy(live_logits, &live.labels, mask.as_deref())?;
    if let Some(r) = replay {
        let logits = forward_replay(g, net, r)?;
        let ce = g.softmax_cross_entropy(logits, &r.labels, None)?;
        loss = g.add(loss, ce)?;
    }
    Ok(StepLoss { loss, live_logits, live_high })
}

/// `CE(live) + CE(replay) + weight * MSE(working(replay), stable(replay))`.
/// The stable targets are computed in inference mode and carry no gradient.
pub fn clser_loss<T: Float>(
    g: &mut Graph<T>,
    working: &mut DualNet<T>,
    stable: &DualNet<T>,
    live: &LiveBatch<T>,
    replay: Option<&ReplayBatch<T>>,
    consistency_weight: f64,
) -> Result<StepLoss> {
    let (live_logits, live_high) = forward_live(g, working, live)?;
    let mut loss = g.softmax_cross_entropy(live_logits, &live.labels, None)?;
    if let Some(r) = replay {
        let logits = forward_replay(g, working, r)?;
        let ce = g.softmax_cross_entropy(logits, &r.labels, None)?;
        loss = g.add(loss, ce)?;
        if consistency_weight != 0.0 {
            let target = g.constant(stable.logits_for_pair(&r.pair)?);
            let m = g.mse(logits, target)?;
            let m = g.scale(m, consistency_weight);
            loss = g.add(loss, m)?;
        }
    }
    Ok(StepLoss { loss, live_logits, live_high })
}

fn check_structure<T: Float>(a: &DualNet<T>, b: &DualNet<T>) -> Result<()> {
    if !a.state.params.same_structure(&b.state.params) || a.state.stats_len() != b.state.stats_len() {
        return Err(Error::Contract("EMA networks must match the working network's structure".into()));
    }
    Ok(())
}

/// `target <- decay * target + (1 - decay) * source` over parameters and
/// batchnorm running statistics. Parameters frozen in `source` are copied.
pub fn ema_update<T: Float>(target: &mut DualNet<T>, source: &DualNet<T>, decay: f64) -> Result<()> {
    check_structure(target, source)?;
    let d = T::of(decay);
    let e = T::one() - d;
    let blend = |t: &mut [T], s: &[T]| {
        for (x, &y) in t.iter_mut().zip(s) {
            *x = d * *x + e * y;
        }
    };
    let src: &ParamSet<T> = &source.state.params;
    for id in src.ids() {
        let t = target.state.params.get_mut(id).data_mut();
        if src.is_frozen(id) {
            t.copy_from_slice(src.get(id).data());
        } else {
            blend(t, src.get(id).data());
        }
    }
    for (t, s) in target.state.stats.iter_mut().zip(&source.state.stats) {
        blend(&mut t.mean, &s.mean);
        blend(&mut t.var, &s.var);
    }
    Ok(())
}

/// Plastic and stable exponential averages of the working model.
#[derive(Debug, Clone)]
pub struct SemanticMemory<T> {
    pub plastic: DualNet<T>,
    pub stable: DualNet<T>,
}

impl<T: Float> SemanticMemory<T> {
    pub fn new(working: &DualNet<T>) -> Self {
        Self {
            plastic: working.clone(),
            stable: working.clone(),
        }
    }

    /// Stochastic EMA updates after optimizer step number `step` (1-based).
    /// Returns which of (plastic, stable) were updated.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        working: &DualNet<T>,
        cfg: &StrategyConfig,
        step: u64,
        rng: &mut R,
    ) -> Result<(bool, bool)> {
        let cap = |decay: f64| {
            if cfg.ema_warmup {
                decay.min(1.0 - 1.0 / (step as f64 + 1.0))
            } else {
                decay
            }
        };
        let up_p = rng.gen::<f64>() < cfg.plastic_update_prob;
        if up_p {
            ema_update(&mut self.plastic, working, cap(cfg.plastic_decay))?;
        }
        let up_s = rng.gen::<f64>() < cfg.stable_update_prob;
        if up_s {
            ema_update(&mut self.stable, working, cap(cfg.stable_decay))?;
        }
        Ok((up_p, up_s))
    }
}

/// One full CLS-ER update: loss, backward, optimizer step, EMA updates.
/// Returns the loss value.
#[allow(clippy::too_many_arguments)]
pub fn clser_step<T: Float, R: Rng + ?Sized>(
    working: &mut DualNet<T>,
    memory: &mut SemanticMemory<T>,
    optimizer: &mut Sgd<T>,
    live: &LiveBatch<T>,
    replay: Option<&ReplayBatch<T>>,
    cfg: &StrategyConfig,
    step: u64,
    rng: &mut R,
) -> Result<T> {
    check_structure(&memory.plastic, working)?;
    check_structure(&memory.stable, working)?;
    let mut g = Graph::new();
    let out = clser_loss(&mut g, working, &memory.stable, live, replay, cfg.consistency_weight)?;
    let value = g.value(out.loss).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite { context: format!("CLS-ER loss at step {step}") });
    }
    g.backward(out.loss)?;
    optimizer.step(&mut working.state.params, &g.param_grads())?;
    memory.update(working, cfg, step, rng)?;
    Ok(value)
}
