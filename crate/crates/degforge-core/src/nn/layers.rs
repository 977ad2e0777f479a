//! Pointwise activations, shape movers, Linear, and LayerNorm.

use super::{Init, Param};
use ndarray::{Array1, Array2, Array4};

/// ReLU on 4-D activations.
#[derive(Default)]
pub struct Relu {
    y: Option<Array4<f32>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let y = x.mapv(|v| v.max(0.0));
        if train {
            self.y = Some(y.clone());
        }
        y
    }

    pub fn backward(&mut self, gy: &Array4<f32>) -> Array4<f32> {
        let y = self.y.take().expect("backward without forward");
        let mut gx = gy.clone();
        ndarray::Zip::from(&mut gx).and(&y).for_each(|g, &v| {
            if v <= 0.0 {
                *g = 0.0;
            }
        });
        gx
    }
}

/// Logistic sigmoid on 4-D activations; bounds decoder outputs into (0, 1).
#[derive(Default)]
pub struct Sigmoid {
    y: Option<Array4<f32>>,
}

impl Sigmoid {
    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let y = x.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        if train {
            self.y = Some(y.clone());
        }
        y
    }

    pub fn backward(&mut self, gy: &Array4<f32>) -> Array4<f32> {
        let y = self.y.take().expect("backward without forward");
        let mut gx = gy.clone();
        ndarray::Zip::from(&mut gx).and(&y).for_each(|g, &v| {
            *g *= v * (1.0 - v);
        });
        gx
    }
}

/// Hard clamp to `[0, 1]`; gradient passes only strictly inside the range.
#[derive(Default)]
pub struct ClampUnit {
    x: Option<Array4<f32>>,
}

impl ClampUnit {
    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        if train {
            self.x = Some(x.clone());
        }
        x.mapv(|v| v.clamp(0.0, 1.0))
    }

    pub fn backward(&mut self, gy: &Array4<f32>) -> Array4<f32> {
        let x = self.x.take().expect("backward without forward");
        let mut gx = gy.clone();
        ndarray::Zip::from(&mut gx).and(&x).for_each(|g, &v| {
            if !(0.0..1.0).contains(&v) {
                *g = 0.0;
            }
        });
        gx
    }
}

/// Nearest-neighbor 2x upsampling.
#[derive(Default)]
pub struct Upsample2x;

impl Upsample2x {
    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        let (b, c, h, w) = x.dim();
        let mut y = Array4::zeros((b, c, h * 2, w * 2));
        let x_std = x.as_standard_layout();
        let xs = x_std.as_slice().unwrap();
        let ys = y.as_slice_mut().unwrap();
        for plane in 0..b * c {
            let src = &xs[plane * h * w..][..h * w];
            let dst = &mut ys[plane * 4 * h * w..][..4 * h * w];
            for yy in 0..h {
                let srow = &src[yy * w..][..w];
                let (r0, r1) = dst[yy * 2 * 2 * w..][..4 * w].split_at_mut(2 * w);
                for (pair, &s) in r0.chunks_exact_mut(2).zip(srow) {
                    pair[0] = s;
                    pair[1] = s;
                }
                r1.copy_from_slice(r0);
            }
        }
        y
    }

    pub fn backward(&self, gy: &Array4<f32>) -> Array4<f32> {
        let (b, c, h2, w2) = gy.dim();
        let (h, w) = (h2 / 2, w2 / 2);
        let mut gx = Array4::zeros((b, c, h, w));
        let gy_std = gy.as_standard_layout();
        let gs = gy_std.as_slice().unwrap();
        let xs = gx.as_slice_mut().unwrap();
        for plane in 0..b * c {
            let src = &gs[plane * h2 * w2..][..h2 * w2];
            let dst = &mut xs[plane * h * w..][..h * w];
            for yy in 0..h {
                let drow = &mut dst[yy * w..][..w];
                for sub in 0..2 {
                    let srow = &src[(yy * 2 + sub) * w2..][..w2];
                    for (d, pair) in drow.iter_mut().zip(srow.chunks_exact(2)) {
                        *d += pair[0] + pair[1];
                    }
                }
            }
        }
        gx
    }
}

/// Sub-pixel rearrangement: (B, C*r^2, H, W) -> (B, C, H*r, W*r).
pub struct PixelShuffle {
    pub r: usize,
}

impl PixelShuffle {
    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        let (b, cr2, h, w) = x.dim();
        let r = self.r;
        let c = cr2 / (r * r);
        assert_eq!(c * r * r, cr2);
        let mut y = Array4::zeros((b, c, h * r, w * r));
        for bi in 0..b {
            for ci in 0..c {
                for yy in 0..h * r {
                    for xx in 0..w * r {
                        let src = ci * r * r + (yy % r) * r + (xx % r);
                        y[[bi, ci, yy, xx]] = x[[bi, src, yy / r, xx / r]];
                    }
                }
            }
        }
        y
    }

    pub fn backward(&self, gy: &Array4<f32>) -> Array4<f32> {
        let (b, c, hr, wr) = gy.dim();
        let r = self.r;
        let (h, w) = (hr / r, wr / r);
        let mut gx = Array4::zeros((b, c * r * r, h, w));
        for bi in 0..b {
            for ci in 0..c {
                for yy in 0..hr {
                    for xx in 0..wr {
                        let src = ci * r * r + (yy % r) * r + (xx % r);
                        gx[[bi, src, yy / r, xx / r]] = gy[[bi, ci, yy, xx]];
                    }
                }
            }
        }
        gx
    }
}

/// Fully connected layer on (M, In) activations.
pub struct Linear {
    pub weight: Param, // (Out, In)
    pub bias: Param,   // (Out)
    x: Option<Array2<f32>>,
}

impl Linear {
    pub fn new(init: &mut Init, in_dim: usize, out_dim: usize, std: f32) -> Self {
        Linear {
            weight: init.normal(ndarray::Ix2(out_dim, in_dim), std),
            bias: Param::zeros(ndarray::Ix1(out_dim)),
            x: None,
        }
    }

    pub fn he(init: &mut Init, in_dim: usize, out_dim: usize) -> Self {
        let std = (2.0 / in_dim as f32).sqrt();
        Self::new(init, in_dim, out_dim, std)
    }

    fn w2(&self) -> ndarray::ArrayView2<'_, f32> {
        self.weight
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap()
    }

    pub fn forward(&mut self, x: &Array2<f32>, train: bool) -> Array2<f32> {
        let mut y = x.dot(&self.w2().t());
        let b = self
            .bias
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap();
        for mut row in y.rows_mut() {
            row += &b;
        }
        if train {
            self.x = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, gy: &Array2<f32>) -> Array2<f32> {
        let x = self.x.take().expect("backward without forward");
        self.weight.grad += &gy.t().dot(&x).into_dyn();
        self.bias.grad += &gy.sum_axis(ndarray::Axis(0)).into_dyn();
        gy.dot(&self.w2())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn tensor_snapshot(&self, prefix: &str, out: &mut Vec<(String, ndarray::ArrayD<f32>)>) {
        out.push((format!("{prefix}.weight"), self.weight.value.clone()));
        out.push((format!("{prefix}.bias"), self.bias.value.clone()));
    }

    pub fn load_tensors(
        &mut self,
        prefix: &str,
        map: &mut std::collections::HashMap<String, ndarray::ArrayD<f32>>,
    ) -> crate::Result<()> {
        self.weight.value = crate::ckpt::take_tensor(
            map,
            &format!("{prefix}.weight"),
            self.weight.value.shape(),
        )?;
        self.bias.value =
            crate::ckpt::take_tensor(map, &format!("{prefix}.bias"), self.bias.value.shape())?;
        Ok(())
    }
}

/// GELU (tanh approximation) on (M, D) activations.
#[derive(Default)]
pub struct Gelu {
    x: Option<Array2<f32>>,
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)
const GELU_A: f32 = 0.044715;

impl Gelu {
    pub fn forward(&mut self, x: &Array2<f32>, train: bool) -> Array2<f32> {
        if train {
            self.x = Some(x.clone());
        }
        x.mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
    }

    pub fn backward(&mut self, gy: &Array2<f32>) -> Array2<f32> {
        let x = self.x.take().expect("backward without forward");
        let mut gx = gy.clone();
        ndarray::Zip::from(&mut gx).and(&x).for_each(|g, &v| {
            let u = GELU_C * (v + GELU_A * v * v * v);
            let t = u.tanh();
            let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
            *g *= 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
        });
        gx
    }
}

/// Layer normalization over the last axis of (M, D) activations.
pub struct LayerNorm {
    pub gamma: Param, // (D)
    pub beta: Param,  // (D)
    eps: f32,
    cache: Option<(Array2<f32>, Array1<f32>)>, // (xhat, inv_std)
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gamma: Param::new(ndarray::ArrayD::ones(ndarray::IxDyn(&[d]))),
            beta: Param::zeros(ndarray::Ix1(d)),
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f32>, train: bool) -> Array2<f32> {
        let (m, d) = x.dim();
        let mut xhat = Array2::zeros((m, d));
        let mut inv_std = Array1::zeros(m);
        let gamma = self.gamma.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let beta = self.beta.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut y = Array2::zeros((m, d));
        for i in 0..m {
            let row = x.row(i);
            let mu = row.sum() / d as f32;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f32>() / d as f32;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[i] = istd;
            for j in 0..d {
                let xh = (x[[i, j]] - mu) * istd;
                xhat[[i, j]] = xh;
                y[[i, j]] = gamma[j] * xh + beta[j];
            }
        }
        if train {
            self.cache = Some((xhat, inv_std));
        }
        y
    }

    pub fn backward(&mut self, gy: &Array2<f32>) -> Array2<f32> {
        let (xhat, inv_std) = self.cache.take().expect("backward without forward");
        let (m, d) = gy.dim();
        let gamma = self.gamma.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut gx = Array2::zeros((m, d));
        let mut ggamma = Array1::<f32>::zeros(d);
        let mut gbeta = Array1::<f32>::zeros(d);
        for i in 0..m {
            let mut sum_g = 0.0f32;
            let mut sum_gx = 0.0f32;
            for j in 0..d {
                let gh = gy[[i, j]] * gamma[j];
                sum_g += gh;
                sum_gx += gh * xhat[[i, j]];
                ggamma[j] += gy[[i, j]] * xhat[[i, j]];
                gbeta[j] += gy[[i, j]];
            }
            for j in 0..d {
                let gh = gy[[i, j]] * gamma[j];
                gx[[i, j]] =
                    inv_std[i] * (gh - sum_g / d as f32 - xhat[[i, j]] * sum_gx / d as f32);
            }
        }
        self.gamma.grad += &ggamma.into_dyn();
        self.beta.grad += &gbeta.into_dyn();
        gx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn tensor_snapshot(&self, prefix: &str, out: &mut Vec<(String, ndarray::ArrayD<f32>)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.value.clone()));
        out.push((format!("{prefix}.beta"), self.beta.value.clone()));
    }

    pub fn load_tensors(
        &mut self,
        prefix: &str,
        map: &mut std::collections::HashMap<String, ndarray::ArrayD<f32>>,
    ) -> crate::Result<()> {
        self.gamma.value = crate::ckpt::take_tensor(
            map,
            &format!("{prefix}.gamma"),
            self.gamma.value.shape(),
        )?;
        self.beta.value =
            crate::ckpt::take_tensor(map, &format!("{prefix}.beta"), self.beta.value.shape())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{assert_grads_close, numerical_grad};
    use super::*;
    use ndarray::{ArrayD, Ix2, Ix4};
    use rand::Rng;

    fn rand2(init: &mut Init, m: usize, d: usize) -> Array2<f32> {
        let mut x = Array2::zeros((m, d));
        for v in x.iter_mut() {
            *v = init.rng().random_range(-1.5..1.5);
        }
        x
    }

    fn proj(y: &ArrayD<f32>) -> f32 {
        y.iter()
            .enumerate()
            .map(|(i, &v)| v * (((i * 31) % 11) as f32 - 5.0) * 0.07)
            .sum()
    }

    fn proj_grad_like(y: &ArrayD<f32>) -> ArrayD<f32> {
        let mut g = ArrayD::zeros(y.raw_dim());
        for (i, v) in g.iter_mut().enumerate() {
            *v = (((i * 31) % 11) as f32 - 5.0) * 0.07;
        }
        g
    }

    #[test]
    fn pixel_shuffle_round_trip_and_layout() {
        let ps = PixelShuffle { r: 2 };
        let mut x = Array4::zeros((1, 4, 2, 2));
        for (i, v) in x.iter_mut().enumerate() {
            *v = i as f32;
        }
        let y = ps.forward(&x);
        assert_eq!(y.dim(), (1, 1, 4, 4));
        // channel index selects the sub-pixel position
        assert_eq!(y[[0, 0, 0, 0]], x[[0, 0, 0, 0]]);
        assert_eq!(y[[0, 0, 0, 1]], x[[0, 1, 0, 0]]);
        assert_eq!(y[[0, 0, 1, 0]], x[[0, 2, 0, 0]]);
        assert_eq!(y[[0, 0, 1, 1]], x[[0, 3, 0, 0]]);
        let back = ps.backward(&y);
        assert_eq!(back, x);
    }

    #[test]
    fn upsample_backward_sums_blocks() {
        let up = Upsample2x;
        let mut x = Array4::zeros((1, 1, 2, 2));
        x[[0, 0, 0, 0]] = 1.0;
        let y = up.forward(&x);
        assert_eq!(y[[0, 0, 1, 1]], 1.0);
        assert_eq!(y[[0, 0, 1, 2]], 0.0);
        let g = up.backward(&Array4::ones((1, 1, 4, 4)));
        assert_eq!(g[[0, 0, 0, 0]], 4.0);
    }

    #[test]
    fn activation_gradients_match_finite_difference() {
        let mut init = Init::new(3);
        let x4 = {
            let mut x = Array4::zeros((2, 2, 3, 3));
            for v in x.iter_mut() {
                *v = init.rng().random_range(-1.2..1.2);
            }
            x
        };

        let mut relu = Relu::default();
        let y = relu.forward(&x4, true);
        let gx = relu.backward(
            &proj_grad_like(&y.clone().into_dyn())
                .into_dimensionality::<Ix4>()
                .unwrap(),
        );
        let n = numerical_grad(
            |xd| {
                let xa = xd.clone().into_dimensionality::<Ix4>().unwrap();
                proj(&Relu::default().forward(&xa, false).into_dyn())
            },
            &x4.clone().into_dyn(),
            1e-3,
        );
        // ReLU kink: skip elements near zero.
        for (i, (a, b)) in gx.iter().zip(n.iter()).enumerate() {
            if x4.as_slice().unwrap()[i].abs() > 1e-2 {
                assert!((a - b).abs() < 1e-2, "relu[{i}] {a} vs {b}");
            }
        }

        let mut sig = Sigmoid::default();
        let y = sig.forward(&x4, true);
        let gx = sig.backward(
            &proj_grad_like(&y.clone().into_dyn())
                .into_dimensionality::<Ix4>()
                .unwrap(),
        );
        let n = numerical_grad(
            |xd| {
                let xa = xd.clone().into_dimensionality::<Ix4>().unwrap();
                proj(&Sigmoid::default().forward(&xa, false).into_dyn())
            },
            &x4.clone().into_dyn(),
            1e-2,
        );
        assert_grads_close(&gx.into_dyn(), &n, "sigmoid");
    }

    #[test]
    fn linear_gradients_match_finite_difference() {
        let mut init = Init::new(5);
        let mut lin = Linear::he(&mut init, 4, 3);
        let x = rand2(&mut init, 5, 4);

        let y = lin.forward(&x, true);
        let gy = proj_grad_like(&y.clone().into_dyn())
            .into_dimensionality::<Ix2>()
            .unwrap();
        let gx = lin.backward(&gy);

        let nx = numerical_grad(
            |xd| {
                let xa = xd.clone().into_dimensionality::<Ix2>().unwrap();
                proj(&lin.forward(&xa, false).into_dyn())
            },
            &x.clone().into_dyn(),
            1e-2,
        );
        assert_grads_close(&gx.into_dyn(), &nx, "linear gx");

        let w0 = lin.weight.value.clone();
        let nw = numerical_grad(
            |wd| {
                lin.weight.value = wd.clone();
                proj(&lin.forward(&x, false).into_dyn())
            },
            &w0,
            1e-2,
        );
        lin.weight.value = w0;
        assert_grads_close(&lin.weight.grad, &nw, "linear gw");
    }

    #[test]
    fn gelu_and_layernorm_gradients_match_finite_difference() {
        let mut init = Init::new(7);
        let x = rand2(&mut init, 4, 6);

        let mut gelu = Gelu::default();
        let y = gelu.forward(&x, true);
        let gy = proj_grad_like(&y.clone().into_dyn())
            .into_dimensionality::<Ix2>()
            .unwrap();
        let gx = gelu.backward(&gy);
        let n = numerical_grad(
            |xd| {
                let xa = xd.clone().into_dimensionality::<Ix2>().unwrap();
                proj(&Gelu::default().forward(&xa, false).into_dyn())
            },
            &x.clone().into_dyn(),
            1e-2,
        );
        assert_grads_close(&gx.into_dyn(), &n, "gelu");

        let mut ln = LayerNorm::new(6);
        // non-trivial gamma/beta
        for (i, v) in ln.gamma.value.iter_mut().enumerate() {
            *v = 0.5 + 0.2 * i as f32;
        }
        for (i, v) in ln.beta.value.iter_mut().enumerate() {
            *v = 0.1 * i as f32;
        }
        let y = ln.forward(&x, true);
        let gy = proj_grad_like(&y.clone().into_dyn())
            .into_dimensionality::<Ix2>()
            .unwrap();
        let gx = ln.backward(&gy);
        let mut probe = LayerNorm::new(6);
        probe.gamma.value = ln.gamma.value.clone();
        probe.beta.value = ln.beta.value.clone();
        let n = numerical_grad(
            |xd| {
                let xa = xd.clone().into_dimensionality::<Ix2>().unwrap();
                proj(&probe.forward(&xa, false).into_dyn())
            },
            &x.clone().into_dyn(),
            1e-2,
        );
        assert_grads_close(&gx.into_dyn(), &n, "layernorm gx");

        let g0 = ln.gamma.value.clone();
        let ng = numerical_grad(
            |gd| {
                probe.gamma.value = gd.clone();
                proj(&probe.forward(&x, false).into_dyn())
            },
            &g0,
            1e-2,
        );
        assert_grads_close(&ln.gamma.grad, &ng, "layernorm ggamma");
    }

    #[test]
    fn clamp_passes_gradient_only_inside_range() {
        let mut clamp = ClampUnit::default();
        let mut x = Array4::zeros((1, 1, 1, 4));
        x[[0, 0, 0, 0]] = -0.5;
        x[[0, 0, 0, 1]] = 0.3;
        x[[0, 0, 0, 2]] = 0.9;
        x[[0, 0, 0, 3]] = 1.7;
        let y = clamp.forward(&x, true);
        assert_eq!(y[[0, 0, 0, 0]], 0.0);
        assert_eq!(y[[0, 0, 0, 3]], 1.0);
        let g = clamp.backward(&Array4::ones((1, 1, 1, 4)));
        assert_eq!(
            g.as_slice().unwrap(),
            &[0.0, 1.0, 1.0, 0.0],
        );
    }
}
