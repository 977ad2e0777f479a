//! 2-D convolution via batch-wide im2col and a single gemm per layer.
//!
//! The unfold/fold loops run on raw slices with incrementally computed
//! offsets; with stride 1 the inner loop is a straight memcpy. That keeps
//! the layer gemm-bound rather than index-arithmetic-bound.

use super::{Init, Param};
use ndarray::{Array2, Array4, ArrayView2};

pub struct Conv2d {
    pub weight: Param, // (out, in, k, k)
    pub bias: Param,   // (out)
    stride: usize,
    pad: usize,
    cols: Option<Array2<f32>>,
    in_dim: (usize, usize, usize, usize),
}

impl Conv2d {
    pub fn new(
        init: &mut Init,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Conv2d {
            weight: init.he(ndarray::Ix4(out_ch, in_ch, k, k), in_ch * k * k),
            bias: Param::zeros(ndarray::Ix1(out_ch)),
            stride,
            pad,
            cols: None,
            in_dim: (0, 0, 0, 0),
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.weight.value.shape()[2];
        (
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        )
    }

    fn weight_mat(&self) -> ArrayView2<'_, f32> {
        let s = self.weight.value.shape();
        self.weight
            .value
            .view()
            .into_shape_with_order((s[0], s[1] * s[2] * s[3]))
            .unwrap()
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let (b, c, h, w) = x.dim();
        let k = self.weight.value.shape()[2];
        assert_eq!(c, self.weight.value.shape()[1], "channel mismatch");
        let (oh, ow) = self.out_hw(h, w);
        let cols = im2col(x, k, self.stride, self.pad, oh, ow);

        let out_mat = self.weight_mat().dot(&cols); // (O, B*OH*OW)
        let o = out_mat.dim().0;
        let mut out = Array4::zeros((b, o, oh, ow));
        {
            let om = out_mat.as_slice().unwrap();
            let os = out.as_slice_mut().unwrap();
            let bias = self.bias.value.as_slice().unwrap();
            let hw = oh * ow;
            for bi in 0..b {
                for oi in 0..o {
                    let dst = &mut os[(bi * o + oi) * hw..][..hw];
                    let src = &om[(oi * b + bi) * hw..][..hw];
                    let bv = bias[oi];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = s + bv;
                    }
                }
            }
        }
        if train {
            self.cols = Some(cols);
            self.in_dim = (b, c, h, w);
        }
        out
    }

    pub fn backward(&mut self, gy: &Array4<f32>) -> Array4<f32> {
        let cols = self.cols.take().expect("backward without training forward");
        let (b, o, oh, ow) = gy.dim();
        let k = self.weight.value.shape()[2];
        let hw = oh * ow;

        // (O, B*OH*OW) view of gy.
        let mut gy_mat = Array2::zeros((o, b * hw));
        {
            let gm = gy_mat.as_slice_mut().unwrap();
            let gy_std = gy.as_standard_layout();
            let gs = gy_std.as_slice().unwrap();
            for bi in 0..b {
                for oi in 0..o {
                    gm[(oi * b + bi) * hw..][..hw]
                        .copy_from_slice(&gs[(bi * o + oi) * hw..][..hw]);
                }
            }
        }

        let gw = gy_mat.dot(&cols.t()); // (O, C*K*K)
        let wshape = self.weight.value.raw_dim();
        self.weight.grad += &gw.into_shape_with_order(wshape).unwrap();
        let gb = gy_mat.sum_axis(ndarray::Axis(1));
        self.bias.grad += &gb.into_dyn();

        let gcols = self.weight_mat().t().dot(&gy_mat); // (C*K*K, B*OH*OW)
        col2im(&gcols, self.in_dim, k, self.stride, self.pad, oh, ow)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Unfolds `x` into (C*K*K, B*OH*OW) with zero padding.
fn im2col(
    x: &Array4<f32>,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<f32> {
    let (b, c, h, w) = x.dim();
    let mut cols = Array2::zeros((c * k * k, b * oh * ow));
    let x_std = x.as_standard_layout();
    let xs = x_std.as_slice().unwrap();
    let cs = cols.as_slice_mut().unwrap();
    let row_stride = b * oh * ow;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let out_base = ((ci * k + ky) * k + kx) * row_stride;
                let ix0 = kx as isize - pad as isize;
                for bi in 0..b {
                    let x_base = (bi * c + ci) * h * w;
                    for y in 0..oh {
                        let iy = (y * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = x_base + iy as usize * w;
                        let dst_row = out_base + (bi * oh + y) * ow;
                        if stride == 1 {
                            let xx_start = (-ix0).max(0) as usize;
                            let xx_end = ((w as isize - ix0).min(ow as isize)).max(0) as usize;
                            if xx_start < xx_end {
                                let src_start = (ix0 + xx_start as isize) as usize;
                                cs[dst_row + xx_start..dst_row + xx_end].copy_from_slice(
                                    &xs[src_row + src_start
                                        ..src_row + src_start + (xx_end - xx_start)],
                                );
                            }
                        } else {
                            for xx in 0..ow {
                                let ix = (xx * stride) as isize + ix0;
                                if ix >= 0 && (ix as usize) < w {
                                    cs[dst_row + xx] = xs[src_row + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Folds column gradients back onto the input (scatter-add), the exact
/// adjoint of [`im2col`].
fn col2im(
    gcols: &Array2<f32>,
    in_dim: (usize, usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array4<f32> {
    let (b, c, h, w) = in_dim;
    let mut gx = Array4::zeros((b, c, h, w));
    let gs = gx.as_slice_mut().unwrap();
    let cs = gcols.as_slice().expect("standard layout gradient");
    let row_stride = b * oh * ow;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let col_base = ((ci * k + ky) * k + kx) * row_stride;
                let ix0 = kx as isize - pad as isize;
                for bi in 0..b {
                    let x_base = (bi * c + ci) * h * w;
                    for y in 0..oh {
                        let iy = (y * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = x_base + iy as usize * w;
                        let src_row = col_base + (bi * oh + y) * ow;
                        if stride == 1 {
                            let xx_start = (-ix0).max(0) as usize;
                            let xx_end = ((w as isize - ix0).min(ow as isize)).max(0) as usize;
                            for xx in xx_start..xx_end {
                                gs[dst_row + (ix0 + xx as isize) as usize] += cs[src_row + xx];
                            }
                        } else {
                            for xx in 0..ow {
                                let ix = (xx * stride) as isize + ix0;
                                if ix >= 0 && (ix as usize) < w {
                                    gs[dst_row + ix as usize] += cs[src_row + xx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{assert_grads_close, numerical_grad};
    use super::*;
    use ndarray::{ArrayD, Ix4};
    use rand::Rng;

    fn rand_x(init: &mut Init, dim: (usize, usize, usize, usize)) -> Array4<f32> {
        let mut x = Array4::zeros(dim);
        for v in x.iter_mut() {
            *v = init.rng().random_range(-1.0..1.0);
        }
        x
    }

    /// Projects output to a scalar with fixed weights so the gradient check
    /// exercises every output element.
    fn proj_loss(y: &Array4<f32>) -> f32 {
        y.iter()
            .enumerate()
            .map(|(i, &v)| v * ((i % 7) as f32 - 3.0) * 0.1)
            .sum()
    }

    fn proj_grad(dim: (usize, usize, usize, usize)) -> Array4<f32> {
        let mut g = Array4::zeros(dim);
        for (i, v) in g.iter_mut().enumerate() {
            *v = ((i % 7) as f32 - 3.0) * 0.1;
        }
        g
    }

    #[test]
    fn known_3x3_convolution() {
        let mut init = Init::new(0);
        let mut conv = Conv2d::new(&mut init, 1, 1, 3, 1, 1);
        conv.weight.value.fill(0.0);
        conv.weight.value[[0, 0, 1, 1]] = 2.0; // center tap x2
        conv.bias.value[[0]] = 0.5;
        let mut x = Array4::zeros((1, 1, 3, 3));
        x[[0, 0, 1, 1]] = 1.5;
        let y = conv.forward(&x, false);
        assert_eq!(y.dim(), (1, 1, 3, 3));
        assert_eq!(y[[0, 0, 1, 1]], 3.5);
        assert_eq!(y[[0, 0, 0, 0]], 0.5);
    }

    #[test]
    fn matches_a_naive_direct_convolution() {
        let mut init = Init::new(12);
        for (cin, cout, k, stride, pad, h, w) in [
            (2usize, 3usize, 3usize, 1usize, 1usize, 5usize, 6usize),
            (3, 2, 4, 2, 1, 8, 8),
            (1, 4, 1, 1, 0, 4, 5),
            (2, 2, 3, 2, 0, 7, 7),
        ] {
            let mut conv = Conv2d::new(&mut init, cin, cout, k, stride, pad);
            let x = rand_x(&mut init, (2, cin, h, w));
            let y = conv.forward(&x, false);
            let (oh, ow) = conv.out_hw(h, w);
            for bi in 0..2 {
                for oi in 0..cout {
                    for yy in 0..oh {
                        for xx in 0..ow {
                            let mut acc = conv.bias.value[[oi]];
                            for ci in 0..cin {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iy = (yy * stride + ky) as isize - pad as isize;
                                        let ix = (xx * stride + kx) as isize - pad as isize;
                                        if iy >= 0
                                            && iy < h as isize
                                            && ix >= 0
                                            && ix < w as isize
                                        {
                                            acc += conv.weight.value[[oi, ci, ky, kx]]
                                                * x[[bi, ci, iy as usize, ix as usize]];
                                        }
                                    }
                                }
                            }
                            let got = y[[bi, oi, yy, xx]];
                            assert!(
                                (got - acc).abs() < 1e-4,
                                "({bi},{oi},{yy},{xx}): {got} vs {acc}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_difference_stride1() {
        check_conv(1, 2, 3, 3, 1, 1, (2, 2, 5, 5));
    }

    #[test]
    fn gradients_match_finite_difference_stride2() {
        check_conv(2, 3, 2, 4, 2, 1, (2, 3, 6, 6));
    }

    fn check_conv(
        seed: u64,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        xdim: (usize, usize, usize, usize),
    ) {
        let mut init = Init::new(seed);
        let mut conv = Conv2d::new(&mut init, in_ch, out_ch, k, stride, pad);
        let x = rand_x(&mut init, xdim);

        let y = conv.forward(&x, true);
        let gx = conv.backward(&proj_grad(y.dim()));

        // d loss / d x
        let nx = numerical_grad(
            |xd| {
                let xa = xd.clone().into_dimensionality::<Ix4>().unwrap();
                proj_loss(&conv.forward(&xa, false))
            },
            &x.clone().into_dyn(),
            1e-2,
        );
        assert_grads_close(&gx.into_dyn(), &nx, "conv gx");

        // d loss / d w
        let w0 = conv.weight.value.clone();
        let nw = numerical_grad(
            |wd| {
                conv.weight.value = wd.clone();
                proj_loss(&conv.forward(&x, false))
            },
            &w0,
            1e-2,
        );
        conv.weight.value = w0;
        // regenerate analytic grads cleanly
        conv.weight.zero_grad();
        conv.bias.zero_grad();
        let y = conv.forward(&x, true);
        conv.backward(&proj_grad(y.dim()));
        assert_grads_close(&conv.weight.grad, &nw, "conv gw");

        let b0 = conv.bias.value.clone();
        let nb = numerical_grad(
            |bd| {
                conv.bias.value = bd.clone();
                proj_loss(&conv.forward(&x, false))
            },
            &b0,
            1e-2,
        );
        conv.bias.value = b0;
        assert_grads_close(&conv.bias.grad, &nb, "conv gb");
    }

    #[test]
    fn grads_accumulate_across_backward_calls() {
        let mut init = Init::new(9);
        let mut conv = Conv2d::new(&mut init, 1, 1, 3, 1, 1);
        let x = rand_x(&mut init, (1, 1, 4, 4));
        let y = conv.forward(&x, true);
        let g = proj_grad(y.dim());
        conv.backward(&g);
        let once = conv.weight.grad.clone();
        conv.forward(&x, true);
        conv.backward(&g);
        let twice: ArrayD<f32> = conv.weight.grad.clone();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert!((2.0 * a - b).abs() < 1e-5);
        }
    }
}
