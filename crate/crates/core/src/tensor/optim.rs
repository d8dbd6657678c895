use super::{Float, ParamId, ParamSet};
use crate::error::{Error, Result};

/// Momentum SGD with coupled weight decay:
/// `v = momentum * v + (g + wd * w)`, `w -= lr * v`.
/// The first step initializes `v` to the decayed gradient.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Vec<T>>>,
}

impl<T: Float> Sgd<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::config("lr", format!("must be a non-negative finite number, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config("momentum", format!("must lie in [0, 1), got {momentum}")));
        }
        Ok(Self {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    /// Apply one update. Frozen parameters are skipped; parameters without a
    /// gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[(ParamId, Vec<T>)]) -> Result<()> {
        if self.velocity.len() < params.len() {
            self.velocity.resize(params.len(), None);
        }
        let mut dense: Vec<Option<&[T]>> = vec![None; params.len()];
        for (id, g) in grads {
            if g.len() != params.get(*id).numel() {
                return Err(Error::shape(
                    "sgd_step",
                    format!("gradient for {} has {} values", params.name(*id), g.len()),
                ));
            }
            dense[id.index()] = Some(g);
        }
        let lr = T::of(self.lr);
        let mu = T::of(self.momentum);
        let wd = T::of(self.weight_decay);
        for id in params.ids().collect::<Vec<_>>() {
            if params.is_frozen(id) {
                continue;
            }
            let grad = dense[id.index()];
            if grad.is_none() && self.weight_decay == 0.0 && self.velocity[id.index()].is_none() {
                continue;
            }
            let w = params.get_mut(id).data_mut();
            let mut step: Vec<T> = match grad {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); w.len()],
            };
            if self.weight_decay != 0.0 {
                for (s, &wi) in step.iter_mut().zip(w.iter()) {
                    *s += wd * wi;
                }
            }
            if self.momentum != 0.0 {
                match &mut self.velocity[id.index()] {
                    slot @ None => *slot = Some(step.clone()),
                    Some(v) => {
                        for (vi, s) in v.iter_mut().zip(step.iter_mut()) {
                            *vi = mu * *vi + *s;
                            *s = *vi;
                        }
                    }
                }
            }
            for (wi, s) in w.iter_mut().zip(&step) {
                *wi -= lr * *s;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param(w: f64) -> (ParamSet<f64>, ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::scalar(w));
        (ps, id)
    }

    #[test]
    fn plain_step() {
        let (mut ps, id) = one_param(1.0);
        let mut opt = Sgd::new(0.1, 0.0, 0.0).unwrap();
        opt.step(&mut ps, &[(id, vec![1.0])]).unwrap();
        assert!((ps.get(id).data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn momentum_two_steps() {
        let (mut ps, id) = one_param(0.0);
        let mut opt = Sgd::new(0.1, 0.9, 0.0).unwrap();
        opt.step(&mut ps, &[(id, vec![1.0])]).unwrap();
        assert!((ps.get(id).data()[0] + 0.1).abs() < 1e-15);
        opt.step(&mut ps, &[(id, vec![1.0])]).unwrap();
        assert!((ps.get(id).data()[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn pure_decay() {
        let (mut ps, id) = one_param(1.0);
        let mut opt = Sgd::new(0.1, 0.0, 0.1).unwrap();
        opt.step(&mut ps, &[(id, vec![0.0])]).unwrap();
        assert!((ps.get(id).data()[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn frozen_untouched() {
        let (mut ps, id) = one_param(1.0);
        ps.freeze(id);
        let mut opt = Sgd::new(0.5, 0.9, 0.1).unwrap();
        opt.step(&mut ps, &[(id, vec![3.0])]).unwrap();
        assert_eq!(ps.get(id).data()[0].to_bits(), 1.0f64.to_bits());
    }

    #[test]
    fn rejects_bad_momentum() {
        assert!(Sgd::<f32>::new(0.1, 1.0, 0.0).is_err());
    }
}
