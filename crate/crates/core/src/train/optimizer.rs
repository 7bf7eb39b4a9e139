//! Adam and plain SGD over a [`ParamSet`]. Frozen parameters are skipped.

use serde::{Deserialize, Serialize};

use crate::autodiff::{GradStore, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerSettings {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerSettings {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerSettings {
            kind: OptimizerKind::Sgd,
            ..Self::adam(learning_rate)
        }
    }
}

/// Optimizer with per-parameter moment buffers (empty for SGD).
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub settings: OptimizerSettings,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(settings: OptimizerSettings, params: &ParamSet) -> Result<Self> {
        if !(settings.learning_rate > 0.0 && settings.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                settings.learning_rate
            )));
        }
        let buffers = || match settings.kind {
            OptimizerKind::Adam => params.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect(),
            OptimizerKind::Sgd => Vec::new(),
        };
        Ok(Optimizer {
            m: buffers(),
            v: buffers(),
            settings,
            step: 0,
        })
    }

    /// Applies one update from `grads`. Any non-finite gradient in a
    /// trainable parameter aborts before anything is modified.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradStore) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::invalid("gradient store does not match the parameter set"));
        }
        for (id, g) in grads.iter() {
            let p = params.get(id);
            if p.trainable && !g.is_finite() {
                return Err(Error::NonFiniteGradient { name: p.name.clone() });
            }
        }
        self.step += 1;
        let s = &self.settings;
        let lr = s.learning_rate;
        let ids: Vec<_> = params.ids().collect();
        match s.kind {
            OptimizerKind::Sgd => {
                for id in ids {
                    let p = params.get_mut(id);
                    if !p.trainable {
                        continue;
                    }
                    for (w, g) in p.value.data_mut().iter_mut().zip(grads.get(id).data()) {
                        *w -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - s.beta1.powi(t);
                let c2 = 1.0 - s.beta2.powi(t);
                for id in ids {
                    let p = params.get_mut(id);
                    if !p.trainable {
                        continue;
                    }
                    let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
                    let g = grads.get(id).data();
                    for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                        m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
                        v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
                        let mhat = m[i] / c1;
                        let vhat = v[i] / c2;
                        *w -= lr * mhat / (vhat.sqrt() + s.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::tensor::Tensor;

    fn bowl(params: &ParamSet, grads: &mut GradStore) -> f64 {
        // f(w) = sum (w - c)^2 with c = [3, -1]
        let mut t = Tape::with_params(params);
        let w = t.param(params.id_of("w").unwrap()).unwrap();
        let c = t.constant(Tensor::vector(vec![3.0, -1.0]).unwrap());
        let d = t.sub(w, c).unwrap();
        let sq = t.mul(d, d).unwrap();
        let loss = t.sum(sq);
        grads.zero_grad();
        t.backward(loss, grads).unwrap();
        t.scalar_value(loss).unwrap()
    }

    #[test]
    fn adam_finds_quadratic_minimum() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::vector(vec![0.0, 0.0]).unwrap(), true);
        let mut grads = GradStore::for_params(&ps);
        let mut opt = Optimizer::new(OptimizerSettings::adam(0.05), &ps).unwrap();
        for _ in 0..500 {
            bowl(&ps, &mut grads);
            opt.step(&mut ps, &grads).unwrap();
        }
        let w = ps.by_name("w").unwrap().value.data().to_vec();
        assert!((w[0] - 3.0).abs() < 1e-3 && (w[1] + 1.0).abs() < 1e-3, "{w:?}");
    }

    #[test]
    fn zero_gradient_and_frozen_parameters_stay_put() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::vector(vec![0.5, 0.25]).unwrap(), true);
        ps.add("frozen", Tensor::vector(vec![1.0, 2.0]).unwrap(), false);
        let before = ps.clone();
        let mut opt = Optimizer::new(OptimizerSettings::adam(0.1), &ps).unwrap();
        let zeros = GradStore::for_params(&ps);
        opt.step(&mut ps, &zeros).unwrap();
        assert_eq!(ps, before);
        let mut grads = GradStore::for_params(&ps);
        for _ in 0..100 {
            grads.zero_grad();
            let mut t = Tape::with_params(&ps);
            let f = t.param(ps.id_of("frozen").unwrap()).unwrap();
            let w = t.param(ps.id_of("w").unwrap()).unwrap();
            let p = t.mul(f, w).unwrap();
            let loss = t.sum(p);
            t.backward(loss, &mut grads).unwrap();
            opt.step(&mut ps, &grads).unwrap();
        }
        assert_eq!(ps.by_name("frozen").unwrap().value.data(), &[1.0, 2.0]);
        assert_ne!(ps.by_name("w").unwrap().value.data(), &[0.5, 0.25]);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut ps = ParamSet::new();
        ps.add("enc.w", Tensor::vector(vec![0.0]).unwrap(), true);
        let mut grads = GradStore::for_params(&ps);
        grads.get_mut(ps.id_of("enc.w").unwrap()).unwrap().data_mut()[0] = f64::NAN;
        let mut opt = Optimizer::new(OptimizerSettings::sgd(0.1), &ps).unwrap();
        let err = opt.step(&mut ps, &grads).unwrap_err();
        assert!(err.to_string().contains("enc.w"), "{err}");
        assert!(Optimizer::new(OptimizerSettings::sgd(0.0), &ps).is_err());
    }
}
