//! Two-level hierarchical VQ-VAE.
//!
//! The bottom path quantizes x4-downsampled features, the top path continues
//! to x8. The top code conditions the bottom quantization (decoded top
//! features concatenate with the bottom encoder features before the bottom
//! code head) and both quantized levels feed the decoder, so both codebooks
//! are live parameter sets.

use super::vqvae::{conv_load, conv_tensors, PreActResBlock};
use super::{concat_ch, nchw_to_rows, rows_to_nchw, split_ch, ReconModelSpec, StepLoss};
use crate::ckpt::take_tensor;
use crate::nn::{mse_loss, Conv2d, Init, Param, Relu, Sigmoid, Upsample2x, VectorQuantizer};
use crate::Result;
use ndarray::{Array4, ArrayD};
use std::collections::HashMap;

pub(crate) struct VqVae2Net {
    pub spec: ReconModelSpec,
    // bottom encoder: x -> w @ s/4
    eb_conv1: Conv2d,
    eb_relu1: Relu,
    eb_conv2: Conv2d,
    eb_relu2: Relu,
    eb_res1: PreActResBlock,
    eb_res2: PreActResBlock,
    // top encoder: w @ s/4 -> w @ s/8
    et_conv: Conv2d,
    et_relu: Relu,
    et_res: PreActResBlock,
    // top code path
    to_code_t: Conv2d,
    vq_t: VectorQuantizer,
    // decoded top features feeding the bottom quantizer
    dt_from: Conv2d,
    dt_res: PreActResBlock,
    dt_up: Upsample2x,
    dt_conv: Conv2d,
    // bottom code path (conditioned on decoded top)
    to_code_b: Conv2d,
    vq_b: VectorQuantizer,
    // main decoder from both quantized levels
    up_t: Upsample2x,
    dec_from: Conv2d,
    dec_res1: PreActResBlock,
    dec_res2: PreActResBlock,
    dec_up1: Upsample2x,
    dec_conv1: Conv2d,
    dec_relu: Relu,
    dec_up2: Upsample2x,
    dec_conv2: Conv2d,
    out_act: Sigmoid,
    top_dim: (usize, usize, usize, usize),
    bottom_dim: (usize, usize, usize, usize),
}

impl VqVae2Net {
    pub fn new(spec: &ReconModelSpec, init_seed: u64) -> Self {
        let mut init = Init::new(init_seed);
        let w = spec.width;
        let d = spec.code_dim;
        VqVae2Net {
            spec: spec.clone(),
            eb_conv1: Conv2d::new(&mut init, 3, w, 4, 2, 1),
            eb_relu1: Relu::default(),
            eb_conv2: Conv2d::new(&mut init, w, w, 4, 2, 1),
            eb_relu2: Relu::default(),
            eb_res1: PreActResBlock::new(&mut init, w),
            eb_res2: PreActResBlock::new(&mut init, w),
            et_conv: Conv2d::new(&mut init, w, w, 4, 2, 1),
            et_relu: Relu::default(),
            et_res: PreActResBlock::new(&mut init, w),
            to_code_t: Conv2d::new(&mut init, w, d, 1, 1, 0),
            vq_t: VectorQuantizer::new(&mut init, spec.codebook_size, d),
            dt_from: Conv2d::new(&mut init, d, w, 1, 1, 0),
            dt_res: PreActResBlock::new(&mut init, w),
            dt_up: Upsample2x,
            dt_conv: Conv2d::new(&mut init, w, w, 3, 1, 1),
            to_code_b: Conv2d::new(&mut init, 2 * w, d, 1, 1, 0),
            vq_b: VectorQuantizer::new(&mut init, spec.codebook_size, d),
            up_t: Upsample2x,
            dec_from: Conv2d::new(&mut init, 2 * d, w, 1, 1, 0),
            dec_res1: PreActResBlock::new(&mut init, w),
            dec_res2: PreActResBlock::new(&mut init, w),
            dec_up1: Upsample2x,
            dec_conv1: Conv2d::new(&mut init, w, w, 3, 1, 1),
            dec_relu: Relu::default(),
            dec_up2: Upsample2x,
            dec_conv2: Conv2d::new(&mut init, w, 3, 3, 1, 1),
            out_act: Sigmoid::default(),
            top_dim: (0, 0, 0, 0),
            bottom_dim: (0, 0, 0, 0),
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool, _mask_seeds: &[u64]) -> Array4<f32> {
        self.forward_parts(x, train).0
    }

    /// Returns (reconstruction, bottom-encoder features) so backward can
    /// reuse the structure; the latent gaps live in the quantizer caches.
    fn forward_parts(&mut self, x: &Array4<f32>, train: bool) -> (Array4<f32>, ()) {
        let eb = {
            let h = self.eb_conv1.forward(x, train);
            let h = self.eb_relu1.forward(&h, train);
            let h = self.eb_conv2.forward(&h, train);
            let h = self.eb_relu2.forward(&h, train);
            let h = self.eb_res1.forward(&h, train);
            self.eb_res2.forward(&h, train)
        };
        let et = {
            let h = self.et_conv.forward(&eb, train);
            let h = self.et_relu.forward(&h, train);
            self.et_res.forward(&h, train)
        };

        let zt = self.to_code_t.forward(&et, train);
        self.top_dim = zt.dim();
        let (qt_rows, _) = self
            .vq_t
            .forward(&nchw_to_rows(&zt), train)
            .expect("top latent dims fixed");
        let qt = rows_to_nchw(&qt_rows, self.top_dim);

        let dt = {
            let h = self.dt_from.forward(&qt, train);
            let h = self.dt_res.forward(&h, train);
            let h = self.dt_up.forward(&h);
            self.dt_conv.forward(&h, train)
        };

        let cb_in = concat_ch(&eb, &dt);
        let zb = self.to_code_b.forward(&cb_in, train);
        self.bottom_dim = zb.dim();
        let (qb_rows, _) = self
            .vq_b
            .forward(&nchw_to_rows(&zb), train)
            .expect("bottom latent dims fixed");
        let qb = rows_to_nchw(&qb_rows, self.bottom_dim);

        let dec_in = concat_ch(&qb, &self.up_t.forward(&qt));
        let y = {
            let h = self.dec_from.forward(&dec_in, train);
            let h = self.dec_res1.forward(&h, train);
            let h = self.dec_res2.forward(&h, train);
            let h = self.dec_up1.forward(&h);
            let h = self.dec_conv1.forward(&h, train);
            let h = self.dec_relu.forward(&h, train);
            let h = self.dec_up2.forward(&h);
            let h = self.dec_conv2.forward(&h, train);
            self.out_act.forward(&h, train)
        };
        (y, ())
    }

    pub fn forward_backward(&mut self, x: &Array4<f32>, _mask_seeds: &[u64]) -> StepLoss {
        let (x_hat, ()) = self.forward_parts(x, true);
        let (recon, g) = mse_loss(&x_hat.into_dyn(), &x.clone().into_dyn());
        let beta = self.spec.commitment_beta;
        let gap_t = self.vq_t.latent_gap();
        let gap_b = self.vq_b.latent_gap();
        let total = recon + (gap_t + gap_b) * (1.0 + beta);

        // decoder
        let g = g.into_dimensionality::<ndarray::Ix4>().unwrap();
        let g = self.out_act.backward(&g);
        let g = self.dec_conv2.backward(&g);
        let g = self.dec_up2.backward(&g);
        let g = self.dec_relu.backward(&g);
        let g = self.dec_conv1.backward(&g);
        let g = self.dec_up1.backward(&g);
        let g = self.dec_res2.backward(&g);
        let g = self.dec_res1.backward(&g);
        let g_dec_in = self.dec_from.backward(&g);
        let d = self.spec.code_dim;
        let (g_qb, g_up_qt) = split_ch(&g_dec_in, d);
        let g_qt_direct = self.up_t.backward(&g_up_qt);

        // bottom quantizer and its code head
        let g_zb_rows = self.vq_b.backward(&nchw_to_rows(&g_qb), beta);
        let g_zb = rows_to_nchw(&g_zb_rows, self.bottom_dim);
        let g_cb_in = self.to_code_b.backward(&g_zb);
        let w = self.spec.width;
        let (g_eb_direct, g_dt) = split_ch(&g_cb_in, w);

        // decoded-top path feeding the bottom quantizer
        let g = self.dt_conv.backward(&g_dt);
        let g = self.dt_up.backward(&g);
        let g = self.dt_res.backward(&g);
        let g_qt_via_dt = self.dt_from.backward(&g);

        // top quantizer gets gradient from both of its consumers
        let g_qt = &g_qt_direct + &g_qt_via_dt;
        let g_zt_rows = self.vq_t.backward(&nchw_to_rows(&g_qt), beta);
        let g_zt = rows_to_nchw(&g_zt_rows, self.top_dim);
        let g_et = self.to_code_t.backward(&g_zt);

        // top encoder back into the bottom features
        let g = self.et_res.backward(&g_et);
        let g = self.et_relu.backward(&g);
        let g_eb_via_t = self.et_conv.backward(&g);

        let g_eb = &g_eb_direct + &g_eb_via_t;
        let g = self.eb_res2.backward(&g_eb);
        let g = self.eb_res1.backward(&g);
        let g = self.eb_relu2.backward(&g);
        let g = self.eb_conv2.backward(&g);
        let g = self.eb_relu1.backward(&g);
        self.eb_conv1.backward(&g);

        StepLoss { total, recon }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.eb_conv1.params_mut();
        p.extend(self.eb_conv2.params_mut());
        p.extend(self.eb_res1.params_mut());
        p.extend(self.eb_res2.params_mut());
        p.extend(self.et_conv.params_mut());
        p.extend(self.et_res.params_mut());
        p.extend(self.to_code_t.params_mut());
        p.extend(self.vq_t.params_mut());
        p.extend(self.dt_from.params_mut());
        p.extend(self.dt_res.params_mut());
        p.extend(self.dt_conv.params_mut());
        p.extend(self.to_code_b.params_mut());
        p.extend(self.vq_b.params_mut());
        p.extend(self.dec_from.params_mut());
        p.extend(self.dec_res1.params_mut());
        p.extend(self.dec_res2.params_mut());
        p.extend(self.dec_conv1.params_mut());
        p.extend(self.dec_conv2.params_mut());
        p
    }

    /// Gradient magnitude currently accumulated on each codebook; the
    /// hierarchy test uses this to confirm both levels learn.
    pub fn codebook_grad_norms(&self) -> (f32, f32) {
        let norm = |p: &Param| p.grad.iter().map(|g| g * g).sum::<f32>().sqrt();
        (norm(&self.vq_t.codebook), norm(&self.vq_b.codebook))
    }

    pub fn tensor_snapshot(&self) -> Vec<(String, ArrayD<f32>)> {
        let mut out = Vec::new();
        conv_tensors(&self.eb_conv1, "enc_b.conv1", &mut out);
        conv_tensors(&self.eb_conv2, "enc_b.conv2", &mut out);
        self.eb_res1.tensors("enc_b.res1", &mut out);
        self.eb_res2.tensors("enc_b.res2", &mut out);
        conv_tensors(&self.et_conv, "enc_t.conv", &mut out);
        self.et_res.tensors("enc_t.res", &mut out);
        conv_tensors(&self.to_code_t, "to_code_t", &mut out);
        out.push(("vq_t.codebook".to_string(), self.vq_t.codebook.value.clone()));
        conv_tensors(&self.dt_from, "dec_t.from", &mut out);
        self.dt_res.tensors("dec_t.res", &mut out);
        conv_tensors(&self.dt_conv, "dec_t.conv", &mut out);
        conv_tensors(&self.to_code_b, "to_code_b", &mut out);
        out.push(("vq_b.codebook".to_string(), self.vq_b.codebook.value.clone()));
        conv_tensors(&self.dec_from, "dec.from", &mut out);
        self.dec_res1.tensors("dec.res1", &mut out);
        self.dec_res2.tensors("dec.res2", &mut out);
        conv_tensors(&self.dec_conv1, "dec.conv1", &mut out);
        conv_tensors(&self.dec_conv2, "dec.conv2", &mut out);
        out
    }

    pub fn load_tensors(&mut self, map: &mut HashMap<String, ArrayD<f32>>) -> Result<()> {
        conv_load(&mut self.eb_conv1, "enc_b.conv1", map)?;
        conv_load(&mut self.eb_conv2, "enc_b.conv2", map)?;
        self.eb_res1.load("enc_b.res1", map)?;
        self.eb_res2.load("enc_b.res2", map)?;
        conv_load(&mut self.et_conv, "enc_t.conv", map)?;
        self.et_res.load("enc_t.res", map)?;
        conv_load(&mut self.to_code_t, "to_code_t", map)?;
        self.vq_t.codebook.value =
            take_tensor(map, "vq_t.codebook", self.vq_t.codebook.value.shape())?;
        conv_load(&mut self.dt_from, "dec_t.from", map)?;
        self.dt_res.load("dec_t.res", map)?;
        conv_load(&mut self.dt_conv, "dec_t.conv", map)?;
        conv_load(&mut self.to_code_b, "to_code_b", map)?;
        self.vq_b.codebook.value =
            take_tensor(map, "vq_b.codebook", self.vq_b.codebook.value.shape())?;
        conv_load(&mut self.dec_from, "dec.from", map)?;
        self.dec_res1.load("dec.res1", map)?;
        self.dec_res2.load("dec.res2", map)?;
        conv_load(&mut self.dec_conv1, "dec.conv1", map)?;
        conv_load(&mut self.dec_conv2, "dec.conv2", map)?;
        Ok(())
    }
}
