use std::collections::BTreeMap;

use diffcore::{Real, Tensor};

use crate::encoder::ParamStore;

/// `lr · (1 − step/T)^power`, clamped at zero. `T = 0` yields `lr`.
pub fn lr_schedule(lr: f64, step: u64, total: u64, power: f64) -> f64 {
    if total == 0 {
        return lr;
    }
    let frac = 1.0 - step as f64 / total as f64;
    lr * frac.max(0.0).powf(power)
}

/// Adam with bias-corrected moments. Moments are created lazily per
/// parameter name the first time that parameter receives a gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Real> Default for Adam<T> {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: BTreeMap::new(),
        }
    }
}

impl<T: Real> Adam<T> {
    pub fn moments(&self, name: &str) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.moments.get(name).map(|(m, v)| (m, v))
    }

    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &BTreeMap<String, Tensor<T>>,
        lr: f64,
    ) {
        self.t += 1;
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let c1 = T::lit(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::lit(1.0 - self.beta2.powi(self.t as i32));
        let eps = T::lit(self.eps);
        let lr = T::lit(lr);
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else {
                continue;
            };
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = b1 * md[i] + (T::one() - b1) * gi;
                vd[i] = b2 * vd[i] + (T::one() - b2) * gi * gi;
                let mh = md[i] / c1;
                let vh = vd[i] / c2;
                pd[i] = pd[i] - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_schedule(1e-3, 0, 100, 1.0), 1e-3);
        assert_eq!(lr_schedule(1e-3, 100, 100, 1.0), 0.0);
        assert!((lr_schedule(1e-3, 50, 100, 1.0) - 5e-4).abs() < 1e-18);
        assert_eq!(lr_schedule(1e-3, 150, 100, 2.0), 0.0);
    }
}
