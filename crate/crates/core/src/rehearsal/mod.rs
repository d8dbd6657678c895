//! Replay memory and the rehearsal strategies that consume it.

mod buffer;
mod strategy;

pub use buffer::{BufferEntry, ReplayBatch, ReplayBuffer};
pub use strategy::{
    clser_loss, clser_step, derpp_loss, ema_update, er_loss, erace_loss, erace_mask, forward_live,
    forward_replay, LiveBatch, SemanticMemory, StepLoss, StrategyConfig, StrategyKind,
};
