//! AdamW with decoupled weight decay, gradient clipping, and stochastic
//! weight averaging.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::real::Real;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub lr: f64,
    pub weight_decay: f64,
    /// Decay biases and normalization weights too.
    pub decay_bias_norm: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    param_steps: Vec<u64>,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(store: &ParamStore<T>, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            decay_bias_norm: false,
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
            step: 0,
            param_steps: vec![0; store.len()],
            first: store.iter().map(|(_, p)| vec![T::zero(); p.value.len()]).collect(),
            second: store.iter().map(|(_, p)| vec![T::zero(); p.value.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn param_step_count(&self, index: usize) -> u64 {
        self.param_steps[index]
    }

    pub fn moments(&self, index: usize) -> (&[T], &[T]) {
        (&self.first[index], &self.second[index])
    }

    /// Restores optimizer state saved alongside a checkpoint.
    pub fn restore(
        &mut self,
        step: u64,
        param_steps: Vec<u64>,
        first: Vec<Vec<T>>,
        second: Vec<Vec<T>>,
    ) -> Result<()> {
        let shapes_ok = param_steps.len() == self.param_steps.len()
            && first.iter().zip(&self.first).all(|(a, b)| a.len() == b.len())
            && second.iter().zip(&self.second).all(|(a, b)| a.len() == b.len())
            && first.len() == self.first.len()
            && second.len() == self.second.len();
        if !shapes_ok {
            return Err(Error::Contract("optimizer state does not match parameters".into()));
        }
        self.step = step;
        self.param_steps = param_steps;
        self.first = first;
        self.second = second;
        Ok(())
    }

    /// One update of every parameter; all gradients must be present.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Vec<T>>]) -> Result<()> {
        if let Some(i) = grads.iter().position(Option::is_none) {
            let name = &store.iter().nth(i).map(|(_, p)| p.name.clone()).unwrap_or_default();
            return Err(Error::TrainingState(alloc::format!("missing gradient for {name}")));
        }
        self.step_partial(store, grads)
    }

    /// Update only the parameters that have a gradient.
    pub fn step_partial(&mut self, store: &mut ParamStore<T>, grads: &[Option<Vec<T>>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::TrainingState(alloc::format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        self.step += 1;
        let lr = T::lit(self.lr);
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let eps = T::lit(self.eps);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let Some(g) = &grads[i] else { continue };
            let param = store.get_mut(id);
            if g.len() != param.value.len() {
                return Err(crate::error::dim_err("adamw_step", param.value.shape(), &[g.len()]));
            }
            self.param_steps[i] += 1;
            let t = self.param_steps[i] as i32;
            let bc1 = T::lit(1.0 - Float::powi(self.beta1, t));
            let bc2 = T::lit(1.0 - Float::powi(self.beta2, t));
            let decay = if param.decay_exempt && !self.decay_bias_norm {
                T::zero()
            } else {
                T::lit(self.lr * self.weight_decay)
            };
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (((w, &gj), mj), vj) in param
                .value
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *w = *w - decay * *w;
                *mj = b1 * *mj + (T::one() - b1) * gj;
                *vj = b2 * *vj + (T::one() - b2) * gj * gj;
                let mhat = *mj / bc1;
                let vhat = *vj / bc2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales gradients in place so their global L2 norm is at most
/// `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [Option<Vec<T>>], max_norm: f64) -> f64 {
    let sq = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|&v| {
            let x = v.as_f64();
            x * x
        })
        .sum::<f64>();
    let norm = Float::sqrt(sq);
    if norm > max_norm && norm.is_finite() {
        let f = T::lit(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v = *v * f;
            }
        }
    }
    norm
}

/// Running arithmetic mean of parameter snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct SwaState<T> {
    pub average: ParamStore<T>,
    pub count: u64,
    pub start_epoch: usize,
}

impl<T: Real> SwaState<T> {
    pub fn new(current: &ParamStore<T>, start_epoch: usize) -> Self {
        Self {
            average: current.clone(),
            count: 0,
            start_epoch,
        }
    }

    /// `avg ← avg + (current − avg)/(n+1)`
    pub fn update(&mut self, current: &ParamStore<T>) -> Result<()> {
        if current.len() != self.average.len() {
            return Err(Error::Contract("swa_update: parameter sets differ".into()));
        }
        let n1 = T::lit((self.count + 1) as f64);
        let ids: Vec<_> = current.ids().collect();
        for id in ids {
            let cur = current.value(id);
            let avg = self.average.value_mut(id);
            if avg.shape() != cur.shape() {
                return Err(crate::error::dim_err("swa_update", avg.shape(), cur.shape()));
            }
            if self.count == 0 {
                avg.data_mut().copy_from_slice(cur.data());
            } else {
                for (a, &c) in avg.data_mut().iter_mut().zip(cur.data()) {
                    *a = *a + (c - *a) / n1;
                }
            }
        }
        self.count += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(w: f64, exempt: bool) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(&[1], vec![w]).unwrap(), exempt);
        s
    }

    #[test]
    fn decoupled_decay_with_zero_grad() {
        let mut s = scalar_store(1.0, false);
        let mut opt = AdamW::new(&s, 1e-4, 0.01);
        opt.step(&mut s, &[Some(vec![0.0])]).unwrap();
        let w = s.value(crate::params::ParamId(0)).data()[0];
        assert!((w - 0.999999).abs() < 1e-15, "{w}");
    }

    #[test]
    fn exempt_param_without_grad_is_unchanged() {
        let mut s = scalar_store(1.0, true);
        let mut opt = AdamW::new(&s, 1e-4, 0.01);
        opt.step(&mut s, &[Some(vec![0.0])]).unwrap();
        assert_eq!(s.value(crate::params::ParamId(0)).data()[0], 1.0);

        // the literal reading decays it
        let mut opt = AdamW::new(&s, 1e-4, 0.01);
        opt.decay_bias_norm = true;
        opt.step(&mut s, &[Some(vec![0.0])]).unwrap();
        assert!(s.value(crate::params::ParamId(0)).data()[0] < 1.0);
    }

    #[test]
    fn first_step_is_bias_corrected() {
        let mut s = scalar_store(0.0, false);
        let mut opt = AdamW::new(&s, 1e-4, 0.01);
        opt.step(&mut s, &[Some(vec![1.0])]).unwrap();
        let w = s.value(crate::params::ParamId(0)).data()[0];
        let want = -1e-4 / (1.0 + 1e-8);
        assert!((w - want).abs() < 1e-15, "{w}");
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut s = scalar_store(0.0, false);
        let mut opt = AdamW::new(&s, 1e-4, 0.01);
        assert!(matches!(
            opt.step(&mut s, &[None]),
            Err(Error::TrainingState(_))
        ));
    }

    #[test]
    fn swa_means() {
        let mut snap = scalar_store(0.0, false);
        let mut swa = SwaState::new(&snap, 1);
        swa.update(&snap).unwrap();
        assert_eq!(swa.average.value(crate::params::ParamId(0)).data()[0], 0.0);
        snap.value_mut(crate::params::ParamId(0)).data_mut()[0] = 2.0;
        swa.update(&snap).unwrap();
        assert_eq!(swa.average.value(crate::params::ParamId(0)).data()[0], 1.0);

        let mut swa = SwaState::new(&snap, 1);
        for v in [1.0, 2.0, 3.0] {
            snap.value_mut(crate::params::ParamId(0)).data_mut()[0] = v;
            swa.update(&snap).unwrap();
        }
        assert_eq!(swa.average.value(crate::params::ParamId(0)).data()[0], 2.0);
        assert_eq!(swa.count, 3);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![Some(vec![3.0f64, 4.0]), None];
        let n = clip_grad_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        let v = g[0].as_ref().unwrap();
        assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
    }
}
