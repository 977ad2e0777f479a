//! Single-level vector-quantized autoencoder.
//!
//! Encoder downsamples x4 with strided convs, the 1x1 head maps to code
//! space, and the decoder mirrors the path with nearest-upsample + conv.
//! The sigmoid output keeps reconstructions inside the unit interval.

use super::{nchw_to_rows, rows_to_nchw, ReconModelSpec, StepLoss};
use crate::ckpt::take_tensor;
use crate::nn::{mse_loss, Conv2d, Init, Param, Relu, Sigmoid, Upsample2x, VectorQuantizer};
use crate::Result;
use ndarray::{Array4, ArrayD};
use std::collections::HashMap;

/// Pre-activation residual block: x + conv(relu(conv(relu(x)))).
pub(super) struct PreActResBlock {
    relu_a: Relu,
    conv_a: Conv2d,
    relu_b: Relu,
    conv_b: Conv2d,
}

impl PreActResBlock {
    pub fn new(init: &mut Init, width: usize) -> Self {
        PreActResBlock {
            relu_a: Relu::default(),
            conv_a: Conv2d::new(init, width, width, 3, 1, 1),
            relu_b: Relu::default(),
            conv_b: Conv2d::new(init, width, width, 3, 1, 1),
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let h = self.relu_a.forward(x, train);
        let h = self.conv_a.forward(&h, train);
        let h = self.relu_b.forward(&h, train);
        let h = self.conv_b.forward(&h, train);
        x + &h
    }

    pub fn backward(&mut self, gy: &Array4<f32>) -> Array4<f32> {
        let g = self.conv_b.backward(gy);
        let g = self.relu_b.backward(&g);
        let g = self.conv_a.backward(&g);
        let g = self.relu_a.backward(&g);
        gy + &g
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.conv_a.params_mut();
        p.extend(self.conv_b.params_mut());
        p
    }

    pub fn tensors(&self, prefix: &str, out: &mut Vec<(String, ArrayD<f32>)>) {
        out.push((format!("{prefix}.conv_a.weight"), self.conv_a.weight.value.clone()));
        out.push((format!("{prefix}.conv_a.bias"), self.conv_a.bias.value.clone()));
        out.push((format!("{prefix}.conv_b.weight"), self.conv_b.weight.value.clone()));
        out.push((format!("{prefix}.conv_b.bias"), self.conv_b.bias.value.clone()));
    }

    pub fn load(
        &mut self,
        prefix: &str,
        map: &mut HashMap<String, ArrayD<f32>>,
    ) -> Result<()> {
        self.conv_a.weight.value = take_tensor(
            map,
            &format!("{prefix}.conv_a.weight"),
            self.conv_a.weight.value.shape(),
        )?;
        self.conv_a.bias.value = take_tensor(
            map,
            &format!("{prefix}.conv_a.bias"),
            self.conv_a.bias.value.shape(),
        )?;
        self.conv_b.weight.value = take_tensor(
            map,
            &format!("{prefix}.conv_b.weight"),
            self.conv_b.weight.value.shape(),
        )?;
        self.conv_b.bias.value = take_tensor(
            map,
            &format!("{prefix}.conv_b.bias"),
            self.conv_b.bias.value.shape(),
        )?;
        Ok(())
    }
}

/// Helper to push a conv's tensors under a name prefix.
pub(super) fn conv_tensors(conv: &Conv2d, prefix: &str, out: &mut Vec<(String, ArrayD<f32>)>) {
    out.push((format!("{prefix}.weight"), conv.weight.value.clone()));
    out.push((format!("{prefix}.bias"), conv.bias.value.clone()));
}

pub(super) fn conv_load(
    conv: &mut Conv2d,
    prefix: &str,
    map: &mut HashMap<String, ArrayD<f32>>,
) -> Result<()> {
    conv.weight.value = take_tensor(map, &format!("{prefix}.weight"), conv.weight.value.shape())?;
    conv.bias.value = take_tensor(map, &format!("{prefix}.bias"), conv.bias.value.shape())?;
    Ok(())
}

pub(crate) struct VqVaeNet {
    pub spec: ReconModelSpec,
    enc_conv1: Conv2d,
    enc_relu1: Relu,
    enc_conv2: Conv2d,
    enc_relu2: Relu,
    enc_res1: PreActResBlock,
    enc_res2: PreActResBlock,
    to_code: Conv2d,
    vq: VectorQuantizer,
    from_code: Conv2d,
    dec_res1: PreActResBlock,
    dec_res2: PreActResBlock,
    up1: Upsample2x,
    dec_conv1: Conv2d,
    dec_relu: Relu,
    up2: Upsample2x,
    dec_conv2: Conv2d,
    out_act: Sigmoid,
    latent_dim: (usize, usize, usize, usize),
}

impl VqVaeNet {
    pub fn new(spec: &ReconModelSpec, init_seed: u64) -> Self {
        let mut init = Init::new(init_seed);
        let w = spec.width;
        let d = spec.code_dim;
        VqVaeNet {
            spec: spec.clone(),
            enc_conv1: Conv2d::new(&mut init, 3, w, 4, 2, 1),
            enc_relu1: Relu::default(),
            enc_conv2: Conv2d::new(&mut init, w, w, 4, 2, 1),
            enc_relu2: Relu::default(),
            enc_res1: PreActResBlock::new(&mut init, w),
            enc_res2: PreActResBlock::new(&mut init, w),
            to_code: Conv2d::new(&mut init, w, d, 1, 1, 0),
            vq: VectorQuantizer::new(&mut init, spec.codebook_size, d),
            from_code: Conv2d::new(&mut init, d, w, 1, 1, 0),
            dec_res1: PreActResBlock::new(&mut init, w),
            dec_res2: PreActResBlock::new(&mut init, w),
            up1: Upsample2x,
            dec_conv1: Conv2d::new(&mut init, w, w, 3, 1, 1),
            dec_relu: Relu::default(),
            up2: Upsample2x,
            dec_conv2: Conv2d::new(&mut init, w, 3, 3, 1, 1),
            out_act: Sigmoid::default(),
            latent_dim: (0, 0, 0, 0),
        }
    }

    /// Encoder, quantizer and decoder in one pass. Mask seeds are unused by
    /// the VQ families.
    pub fn forward(&mut self, x: &Array4<f32>, train: bool, _mask_seeds: &[u64]) -> Array4<f32> {
        let h = self.enc_conv1.forward(x, train);
        let h = self.enc_relu1.forward(&h, train);
        let h = self.enc_conv2.forward(&h, train);
        let h = self.enc_relu2.forward(&h, train);
        let h = self.enc_res1.forward(&h, train);
        let h = self.enc_res2.forward(&h, train);
        let z = self.to_code.forward(&h, train);
        self.latent_dim = z.dim();

        let z_rows = nchw_to_rows(&z);
        let (zq_rows, _) = self.vq.forward(&z_rows, train).expect("latent dims fixed");
        let zq = rows_to_nchw(&zq_rows, self.latent_dim);

        let h = self.from_code.forward(&zq, train);
        let h = self.dec_res1.forward(&h, train);
        let h = self.dec_res2.forward(&h, train);
        let h = self.up1.forward(&h);
        let h = self.dec_conv1.forward(&h, train);
        let h = self.dec_relu.forward(&h, train);
        let h = self.up2.forward(&h);
        let h = self.dec_conv2.forward(&h, train);
        self.out_act.forward(&h, train)
    }

    pub fn forward_backward(&mut self, x: &Array4<f32>, mask_seeds: &[u64]) -> StepLoss {
        let x_hat = self.forward(x, true, mask_seeds);
        let (recon, g) = mse_loss(&x_hat.clone().into_dyn(), &x.clone().into_dyn());
        let latent_gap = self.vq.latent_gap();
        let beta = self.spec.commitment_beta;
        let total = recon + latent_gap * (1.0 + beta);

        let g = g.into_dimensionality::<ndarray::Ix4>().unwrap();
        let g = self.out_act.backward(&g);
        let g = self.dec_conv2.backward(&g);
        let g = self.up2.backward(&g);
        let g = self.dec_relu.backward(&g);
        let g = self.dec_conv1.backward(&g);
        let g = self.up1.backward(&g);
        let g = self.dec_res2.backward(&g);
        let g = self.dec_res1.backward(&g);
        let g_zq = self.from_code.backward(&g);

        let g_zq_rows = nchw_to_rows(&g_zq);
        let g_z_rows = self.vq.backward(&g_zq_rows, beta);
        let g_z = rows_to_nchw(&g_z_rows, self.latent_dim);

        let g = self.to_code.backward(&g_z);
        let g = self.enc_res2.backward(&g);
        let g = self.enc_res1.backward(&g);
        let g = self.enc_relu2.backward(&g);
        let g = self.enc_conv2.backward(&g);
        let g = self.enc_relu1.backward(&g);
        self.enc_conv1.backward(&g);

        StepLoss { total, recon }
    }

    /// Cached latent gap of the last training forward (for loss recompute).
    pub fn vq_latent_gap(&self) -> f32 {
        self.vq.latent_gap()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.enc_conv1.params_mut();
        p.extend(self.enc_conv2.params_mut());
        p.extend(self.enc_res1.params_mut());
        p.extend(self.enc_res2.params_mut());
        p.extend(self.to_code.params_mut());
        p.extend(self.vq.params_mut());
        p.extend(self.from_code.params_mut());
        p.extend(self.dec_res1.params_mut());
        p.extend(self.dec_res2.params_mut());
        p.extend(self.dec_conv1.params_mut());
        p.extend(self.dec_conv2.params_mut());
        p
    }

    pub fn tensor_snapshot(&self) -> Vec<(String, ArrayD<f32>)> {
        let mut out = Vec::new();
        conv_tensors(&self.enc_conv1, "enc.conv1", &mut out);
        conv_tensors(&self.enc_conv2, "enc.conv2", &mut out);
        self.enc_res1.tensors("enc.res1", &mut out);
        self.enc_res2.tensors("enc.res2", &mut out);
        conv_tensors(&self.to_code, "to_code", &mut out);
        out.push(("vq.codebook".to_string(), self.vq.codebook.value.clone()));
        conv_tensors(&self.from_code, "from_code", &mut out);
        self.dec_res1.tensors("dec.res1", &mut out);
        self.dec_res2.tensors("dec.res2", &mut out);
        conv_tensors(&self.dec_conv1, "dec.conv1", &mut out);
        conv_tensors(&self.dec_conv2, "dec.conv2", &mut out);
        out
    }

    pub fn load_tensors(&mut self, map: &mut HashMap<String, ArrayD<f32>>) -> Result<()> {
        conv_load(&mut self.enc_conv1, "enc.conv1", map)?;
        conv_load(&mut self.enc_conv2, "enc.conv2", map)?;
        self.enc_res1.load("enc.res1", map)?;
        self.enc_res2.load("enc.res2", map)?;
        conv_load(&mut self.to_code, "to_code", map)?;
        self.vq.codebook.value =
            take_tensor(map, "vq.codebook", self.vq.codebook.value.shape())?;
        conv_load(&mut self.from_code, "from_code", map)?;
        self.dec_res1.load("dec.res1", map)?;
        self.dec_res2.load("dec.res2", map)?;
        conv_load(&mut self.dec_conv1, "dec.conv1", map)?;
        conv_load(&mut self.dec_conv2, "dec.conv2", map)?;
        Ok(())
    }
}
