use diffcore::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::corruption::stream;
use crate::encoder::{ParamStore, Session};
use crate::training::{lr_schedule, Adam};

/// Posterior mean of a clean point given `noisy` under an isotropic Gaussian
/// mixture centred on `points` with scale `sigma`: `Σ wᵢ mᵢ`,
/// `wᵢ ∝ exp(−‖m̃ − mᵢ‖² / 2σ²)`. This is the optimum of the denoising
/// objective when the data are exactly `points`.
///
/// Panics if `points` is empty, dimensions differ or `sigma <= 0`.
pub fn bayes_denoiser(noisy: &[f64], points: &[Vec<f64>], sigma: f64) -> Vec<f64> {
    assert!(!points.is_empty(), "need at least one point");
    assert!(sigma > 0.0, "sigma must be positive");
    let logw: Vec<f64> = points
        .iter()
        .map(|p| {
            assert_eq!(p.len(), noisy.len(), "dimension mismatch");
            let d2: f64 = p.iter().zip(noisy).map(|(a, b)| (a - b).powi(2)).sum();
            -d2 / (2.0 * sigma * sigma)
        })
        .collect();
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = w.iter().sum();
    let mut out = vec![0.0; noisy.len()];
    for (p, wi) in points.iter().zip(&w) {
        for (o, v) in out.iter_mut().zip(p) {
            *o += wi / z * v;
        }
    }
    out
}

/// Outcome of [`train_toy_denoiser`].
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiserRun {
    /// Steps at which the deviation was measured.
    pub checkpoints: Vec<usize>,
    /// Mean squared deviation from the Bayes denoiser over the probe grid.
    pub deviations: Vec<f64>,
}

const HIDDEN: usize = 32;

fn toy_params(seed: u64) -> ParamStore<f64> {
    let mut rng = stream(seed, 0, 0);
    let mut normal = |n: usize, scale: f64| -> Vec<f64> {
        (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect()
    };
    let mut p = ParamStore::new();
    let h = HIDDEN;
    let t = |shape: &[usize], data: Vec<f64>| Tensor::new(shape, data).expect("shape");
    p.insert("w1", t(&[1, h], normal(h, 1.0)));
    p.insert("b1", t(&[1, h], normal(h, 0.5)));
    p.insert("w2", t(&[h, h], normal(h * h, (1.0 / h as f64).sqrt())));
    p.insert("b2", t(&[1, h], vec![0.0; h]));
    p.insert("w3", t(&[h, 1], normal(h, (1.0 / h as f64).sqrt())));
    p.insert("b3", t(&[1, 1], vec![0.0]));
    p
}

fn toy_forward(s: &mut Session<'_, f64>, x: &[f64]) -> diffcore::Var {
    let xin = s.constant_f64(&[x.len(), 1], x).expect("shape");
    let mut h = xin;
    for (w, b, act) in [("w1", "b1", true), ("w2", "b2", true), ("w3", "b3", false)] {
        let wv = s.p(w).expect("param");
        let bv = s.p(b).expect("param");
        let y = s.g.matmul(h, wv).expect("shape");
        h = s.g.add(y, bv).expect("shape");
        if act {
            h = s.g.tanh(h);
        }
    }
    h
}

/// Trains a 1-D MLP denoiser on `points` with noise `sigma` by regressing the
/// clean point from its noisy copy, and records the mean squared deviation
/// of the network from [`bayes_denoiser`] on `probe` at each step listed in
/// `checkpoints` (step 0 is the untrained network). The learning rate decays
/// linearly to zero at the last checkpoint.
pub fn train_toy_denoiser(
    points: &[f64],
    sigma: f64,
    probe: &[f64],
    checkpoints: &[usize],
    batch: usize,
    lr: f64,
    seed: u64,
) -> ToyDenoiserRun {
    let mut params = toy_params(seed);
    let mut opt = Adam::<f64>::default();
    let pts: Vec<Vec<f64>> = points.iter().map(|&p| vec![p]).collect();
    let oracle: Vec<f64> = probe
        .iter()
        .map(|&x| bayes_denoiser(&[x], &pts, sigma)[0])
        .collect();
    let deviation = |params: &ParamStore<f64>| {
        let mut s = Session::eval(params);
        let y = toy_forward(&mut s, probe);
        s.value(y)
            .data()
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / probe.len() as f64
    };
    let last = checkpoints.iter().copied().max().unwrap_or(0);
    let mut deviations = Vec::with_capacity(checkpoints.len());
    for step in 0..=last {
        if checkpoints.contains(&step) {
            deviations.push(deviation(&params));
        }
        if step == last {
            break;
        }
        let mut rng = stream(seed, step as u64 + 1, 0);
        let clean: Vec<f64> = (0..batch)
            .map(|_| points[rng.gen_range(0..points.len())])
            .collect();
        let noisy: Vec<f64> = clean
            .iter()
            .map(|&c| c + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let grads = {
            let mut s = Session::train(&params);
            let y = toy_forward(&mut s, &noisy);
            let t = s.constant_f64(&[batch, 1], &clean).expect("shape");
            let d = s.g.sub(y, t).expect("shape");
            let d = s.g.square(d);
            let l = s.g.mean(d);
            let g = s.g.backward(l).expect("scalar loss");
            s.param_grads(&g)
        };
        opt.step(&mut params, &grads, lr_schedule(lr, step as u64, last as u64, 1.0));
    }
    ToyDenoiserRun {
        checkpoints: checkpoints.to_vec(),
        deviations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_is_fixed() {
        let out = bayes_denoiser(&[3.0, -2.0], &[vec![1.0, 1.0]], 0.7);
        assert_eq!(out, vec![1.0, 1.0]);
    }

    #[test]
    fn far_tail_is_stable() {
        let out = bayes_denoiser(&[1e3], &[vec![-1.0], vec![1.0]], 0.1);
        assert_eq!(out, vec![1.0]);
    }
}
