//! Minimal CPU neural-network layers with explicit backpropagation.
//!
//! Each layer caches what its backward pass needs during a training forward
//! pass and exposes its parameters for the optimizer. There is no autograd
//! tape: models wire forward/backward chains by hand, which keeps every
//! gradient path explicit and testable against finite differences.
//!
//! All math is `f32`; matrix products go through ndarray's single-threaded
//! gemm, so training is bitwise reproducible for a fixed seed on one
//! platform.

mod attention;
mod conv;
mod layers;
mod vq;

pub use attention::{Mhsa, TransformerBlock};
pub use conv::Conv2d;
pub use layers::{ClampUnit, Gelu, LayerNorm, Linear, PixelShuffle, Relu, Sigmoid, Upsample2x};
pub use vq::{vq_quantize, vqvae_loss, VectorQuantizer, VqLoss};

use ndarray::{ArrayD, Dimension};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
}

impl Param {
    pub fn new(value: ArrayD<f32>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zeros<D: Dimension>(dim: D) -> Self {
        Param::new(ArrayD::zeros(dim.into_dyn()))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Seeded parameter initializer.
pub struct Init {
    rng: ChaCha12Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    /// He-normal fan-in initialization for conv/linear weights feeding ReLU.
    pub fn he<D: Dimension>(&mut self, dim: D, fan_in: usize) -> Param {
        self.normal(dim, (2.0 / fan_in as f32).sqrt())
    }

    /// Plain normal initialization (transformer-style small std).
    pub fn normal<D: Dimension>(&mut self, dim: D, std: f32) -> Param {
        let dist = Normal::new(0.0f32, std).unwrap();
        let mut value = ArrayD::zeros(dim.into_dyn());
        for v in value.iter_mut() {
            *v = dist.sample(&mut self.rng);
        }
        Param::new(value)
    }

    pub fn rng(&mut self) -> &mut ChaCha12Rng {
        &mut self.rng
    }
}

/// Adam with bias correction.
pub struct Adam {
    pub lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    t: i32,
    m: Vec<ArrayD<f32>>,
    v: Vec<ArrayD<f32>>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update. The parameter list must be the same (same order,
    /// same shapes) on every call.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "parameter list changed");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &ArrayD<f32>, target: &ArrayD<f32>) -> (f32, ArrayD<f32>) {
    assert_eq!(pred.raw_dim(), target.raw_dim());
    let n = pred.len() as f32;
    let mut grad = ArrayD::zeros(pred.raw_dim());
    let mut sum = 0.0f64;
    ndarray::Zip::from(&mut grad)
        .and(pred)
        .and(target)
        .for_each(|g, &p, &t| {
            let d = p - t;
            sum += (d * d) as f64;
            *g = 2.0 * d / n;
        });
    ((sum / n as f64) as f32, grad)
}

/// Mean absolute error and its gradient with respect to `pred`.
pub fn l1_loss(pred: &ArrayD<f32>, target: &ArrayD<f32>) -> (f32, ArrayD<f32>) {
    assert_eq!(pred.raw_dim(), target.raw_dim());
    let n = pred.len() as f32;
    let mut grad = ArrayD::zeros(pred.raw_dim());
    let mut sum = 0.0f64;
    ndarray::Zip::from(&mut grad)
        .and(pred)
        .and(target)
        .for_each(|g, &p, &t| {
            let d = p - t;
            sum += d.abs() as f64;
            *g = d.signum() / n;
        });
    ((sum / n as f64) as f32, grad)
}

/// Softmax cross-entropy over rows of `logits`; returns the mean loss and
/// the gradient with respect to the logits.
pub fn softmax_cross_entropy(
    logits: &ndarray::Array2<f32>,
    labels: &[usize],
) -> (f32, ndarray::Array2<f32>) {
    let (b, k) = logits.dim();
    assert_eq!(b, labels.len());
    let mut grad = ndarray::Array2::zeros((b, k));
    let mut loss = 0.0f64;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f32> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: f32 = exps.iter().sum();
        let label = labels[i];
        assert!(label < k);
        loss -= ((exps[label] / sum).max(1e-30) as f64).ln();
        for j in 0..k {
            let p = exps[j] / sum;
            grad[[i, j]] = (p - if j == label { 1.0 } else { 0.0 }) / b as f32;
        }
    }
    ((loss / b as f64) as f32, grad)
}

/// Softmax probabilities per row (inference helper for classifiers).
pub fn softmax_rows(logits: &ndarray::Array2<f32>) -> ndarray::Array2<f32> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Central-difference gradient checking used by the layer tests.

    use ndarray::ArrayD;

    /// Central finite difference of `f` at `x`, element by element.
    pub fn numerical_grad(
        mut f: impl FnMut(&ArrayD<f32>) -> f32,
        x: &ArrayD<f32>,
        h: f32,
    ) -> ArrayD<f32> {
        let mut grad = ArrayD::zeros(x.raw_dim());
        let mut probe = x.clone();
        for idx in 0..x.len() {
            let orig = probe.as_slice_mut().unwrap()[idx];
            probe.as_slice_mut().unwrap()[idx] = orig + h;
            let fp = f(&probe);
            probe.as_slice_mut().unwrap()[idx] = orig - h;
            let fm = f(&probe);
            probe.as_slice_mut().unwrap()[idx] = orig;
            grad.as_slice_mut().unwrap()[idx] = (fp - fm) / (2.0 * h);
        }
        grad
    }

    /// Asserts per-element closeness with a mixed absolute/relative bound
    /// sized for f32 finite differences.
    pub fn assert_grads_close(analytic: &ArrayD<f32>, numeric: &ArrayD<f32>, label: &str) {
        assert_eq!(analytic.raw_dim(), numeric.raw_dim());
        for (i, (a, n)) in analytic.iter().zip(numeric.iter()).enumerate() {
            let tol = 1e-3 + 2e-2 * n.abs();
            assert!(
                (a - n).abs() <= tol,
                "{label}[{i}]: analytic {a} vs numeric {n}"
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};

    #[test]
    fn adam_descends_a_quadratic() {
        // min (w - 3)^2, elementwise
        let mut p = Param::new(Array1::from_vec(vec![0.0f32, 10.0]).into_dyn());
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            p.zero_grad();
            p.grad = p.value.mapv(|w| 2.0 * (w - 3.0));
            opt.step(&mut [&mut p]);
        }
        for &w in &p.value {
            assert!((w - 3.0).abs() < 1e-2, "w = {w}");
        }
    }

    #[test]
    fn loss_gradients_match_definitions() {
        let pred = Array1::from_vec(vec![0.5f32, 0.2, 0.9]).into_dyn();
        let target = Array1::from_vec(vec![0.0f32, 0.4, 0.9]).into_dyn();
        let (l, g) = mse_loss(&pred, &target);
        assert!((l - (0.25 + 0.04 + 0.0) / 3.0).abs() < 1e-7);
        assert!((g[[0]] - 2.0 * 0.5 / 3.0).abs() < 1e-7);

        let (l1v, g1) = l1_loss(&pred, &target);
        assert!((l1v - (0.5 + 0.2 + 0.0) / 3.0).abs() < 1e-7);
        assert_eq!(g1[[1]], -1.0 / 3.0);
    }

    #[test]
    fn cross_entropy_grad_matches_finite_difference() {
        let logits = Array2::from_shape_vec(
            (2, 3),
            vec![0.3f32, -0.2, 0.9, 1.2, 0.1, -0.5],
        )
        .unwrap();
        let labels = [2usize, 0];
        let (_, analytic) = softmax_cross_entropy(&logits, &labels);
        let numeric = gradcheck::numerical_grad(
            |x| {
                let l = Array2::from_shape_vec((2, 3), x.iter().copied().collect()).unwrap();
                softmax_cross_entropy(&l, &labels).0
            },
            &logits.clone().into_dyn(),
            1e-2,
        );
        gradcheck::assert_grads_close(&analytic.into_dyn(), &numeric, "ce");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = Array2::from_shape_vec((2, 4), vec![1.0f32, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 2.0]).unwrap();
        let p = softmax_rows(&logits);
        for row in p.rows() {
            let s: f32 = row.sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}
