//! Masked autoencoder for images at toy scale.
//!
//! The encoder sees only the visible patches; the decoder receives the full
//! token grid with a learned mask token in the hidden slots and predicts the
//! entire image (the loss covers all patches, not only masked ones). At
//! inference the patch mask comes from a caller-provided seed, so a forged
//! dataset records everything needed to reproduce its outputs.

use super::{ReconModelSpec, StepLoss};
use crate::ckpt::take_tensor;
use crate::img::Image;
use crate::nn::{mse_loss, Init, LayerNorm, Linear, Param, Sigmoid, TransformerBlock};
use crate::{Error, Result};
use ndarray::{Array2, Array3, Array4, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::HashMap;

/// Splits the patch grid into (visible, masked) index sets, both sorted.
///
/// `|masked| = round(ratio * total)`; the partition is exact and
/// deterministic in the seed.
pub fn mae_mask(
    img: &Image,
    patch: usize,
    ratio: f64,
    rng_seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if patch == 0 || img.height() % patch != 0 || img.width() % patch != 0 {
        return Err(Error::invalid(format!(
            "image {}x{} not divisible by patch {patch}",
            img.height(),
            img.width()
        )));
    }
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::invalid(format!("mask ratio {ratio} not in [0, 1)")));
    }
    let n = (img.height() / patch) * (img.width() / patch);
    Ok(mask_indices(n, ratio, rng_seed))
}

pub(crate) fn mask_indices(n: usize, ratio: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_masked = (ratio * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    // Fisher-Yates, spelled out so the permutation is pinned to this crate
    // rather than to a library's shuffle implementation.
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut masked: Vec<usize> = order[..n_masked].to_vec();
    let mut visible: Vec<usize> = order[n_masked..].to_vec();
    masked.sort_unstable();
    visible.sort_unstable();
    (visible, masked)
}

pub(crate) struct MaeNet {
    pub spec: ReconModelSpec,
    embed: Linear,
    pos: Param,      // (np, D)
    enc_blocks: Vec<TransformerBlock>,
    enc_ln: LayerNorm,
    mask_token: Param, // (D)
    dec_pos: Param,    // (np, D)
    dec_blocks: Vec<TransformerBlock>,
    dec_ln: LayerNorm,
    head: Linear,
    out_act: Sigmoid,
    masks: Vec<(Vec<usize>, Vec<usize>)>,
}

impl MaeNet {
    pub fn new(spec: &ReconModelSpec, init_seed: u64) -> Self {
        let mut init = Init::new(init_seed);
        let p = spec.patch_size;
        let d = spec.embed_dim;
        let np = (spec.input_size / p) * (spec.input_size / p);
        let pd = p * p * 3;
        MaeNet {
            spec: spec.clone(),
            embed: Linear::new(&mut init, pd, d, 0.02),
            pos: init.normal(ndarray::Ix2(np, d), 0.02),
            enc_blocks: (0..spec.enc_depth)
                .map(|_| TransformerBlock::new(&mut init, d, spec.heads, 4))
                .collect(),
            enc_ln: LayerNorm::new(d),
            mask_token: init.normal(ndarray::Ix1(d), 0.02),
            dec_pos: init.normal(ndarray::Ix2(np, d), 0.02),
            dec_blocks: (0..spec.dec_depth)
                .map(|_| TransformerBlock::new(&mut init, d, spec.heads, 4))
                .collect(),
            dec_ln: LayerNorm::new(d),
            head: Linear::new(&mut init, d, pd, 0.02),
            out_act: Sigmoid::default(),
            masks: Vec::new(),
        }
    }

    fn n_patches(&self) -> usize {
        let g = self.spec.input_size / self.spec.patch_size;
        g * g
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool, mask_seeds: &[u64]) -> Array4<f32> {
        let (b, _, _, _) = x.dim();
        assert_eq!(b, mask_seeds.len(), "one mask seed per batch item");
        let d = self.spec.embed_dim;
        let np = self.n_patches();

        let patches = patchify(x, self.spec.patch_size); // (B*np, pd)
        let mut tok = self.embed.forward(&patches, train); // (B*np, D)
        let pos = self.pos.value.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        for bi in 0..b {
            for i in 0..np {
                for j in 0..d {
                    tok[[bi * np + i, j]] += pos[[i, j]];
                }
            }
        }

        let masks: Vec<(Vec<usize>, Vec<usize>)> = mask_seeds
            .iter()
            .map(|&s| mask_indices(np, self.spec.mask_ratio, s))
            .collect();
        let nv = masks[0].0.len();

        let mut enc_in = Array3::zeros((b, nv, d));
        for bi in 0..b {
            for (j, &pi) in masks[bi].0.iter().enumerate() {
                for k in 0..d {
                    enc_in[[bi, j, k]] = tok[[bi * np + pi, k]];
                }
            }
        }

        let mut h = enc_in;
        for block in &mut self.enc_blocks {
            h = block.forward(&h, train);
        }
        let h_flat = h.into_shape_with_order((b * nv, d)).unwrap();
        let h_flat = self.enc_ln.forward(&h_flat, train);
        let h = h_flat.into_shape_with_order((b, nv, d)).unwrap();

        let mask_tok = self
            .mask_token
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap();
        let dec_pos = self
            .dec_pos
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        let mut dec_in = Array3::zeros((b, np, d));
        for bi in 0..b {
            for i in 0..np {
                for k in 0..d {
                    dec_in[[bi, i, k]] = mask_tok[k] + dec_pos[[i, k]];
                }
            }
            for (j, &pi) in masks[bi].0.iter().enumerate() {
                for k in 0..d {
                    dec_in[[bi, pi, k]] = h[[bi, j, k]] + dec_pos[[pi, k]];
                }
            }
        }

        let mut hd = dec_in;
        for block in &mut self.dec_blocks {
            hd = block.forward(&hd, train);
        }
        let hd_flat = hd.into_shape_with_order((b * np, d)).unwrap();
        let hd_flat = self.dec_ln.forward(&hd_flat, train);
        let out_rows = self.head.forward(&hd_flat, train); // (B*np, pd)

        let img = unpatchify(&out_rows, b, self.spec.input_size, self.spec.patch_size);
        if train {
            self.masks = masks;
        }
        self.out_act.forward(&img, train)
    }

    pub fn forward_backward(&mut self, x: &Array4<f32>, mask_seeds: &[u64]) -> StepLoss {
        let x_hat = self.forward(x, true, mask_seeds);
        let (recon, g) = mse_loss(&x_hat.into_dyn(), &x.clone().into_dyn());

        let (b, _, _, _) = x.dim();
        let d = self.spec.embed_dim;
        let np = self.n_patches();
        let masks = std::mem::take(&mut self.masks);
        let nv = masks[0].0.len();

        let g = g.into_dimensionality::<ndarray::Ix4>().unwrap();
        let g = self.out_act.backward(&g);
        let g_rows = patchify(&g, self.spec.patch_size); // adjoint of unpatchify
        let g = self.head.backward(&g_rows);
        let g = self.dec_ln.backward(&g);
        let mut gd = g.into_shape_with_order((b, np, d)).unwrap();
        for block in self.dec_blocks.iter_mut().rev() {
            gd = block.backward(&gd);
        }

        // dec_pos receives gradient from every slot.
        {
            let mut gp = self
                .dec_pos
                .grad
                .view_mut()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap();
            for bi in 0..b {
                for i in 0..np {
                    for k in 0..d {
                        gp[[i, k]] += gd[[bi, i, k]];
                    }
                }
            }
        }
        // mask token receives gradient from masked slots only.
        {
            let mut gm = self
                .mask_token
                .grad
                .view_mut()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap();
            for bi in 0..b {
                for &pi in &masks[bi].1 {
                    for k in 0..d {
                        gm[k] += gd[[bi, pi, k]];
                    }
                }
            }
        }

        let mut g_enc_out = Array3::zeros((b, nv, d));
        for bi in 0..b {
            for (j, &pi) in masks[bi].0.iter().enumerate() {
                for k in 0..d {
                    g_enc_out[[bi, j, k]] = gd[[bi, pi, k]];
                }
            }
        }

        let ge_flat = g_enc_out.into_shape_with_order((b * nv, d)).unwrap();
        let ge_flat = self.enc_ln.backward(&ge_flat);
        let mut ge = ge_flat.into_shape_with_order((b, nv, d)).unwrap();
        for block in self.enc_blocks.iter_mut().rev() {
            ge = block.backward(&ge);
        }

        // Scatter visible-token gradients back onto the full token grid;
        // masked tokens were never used, so their gradient stays zero.
        let mut g_tok = Array2::zeros((b * np, d));
        for bi in 0..b {
            for (j, &pi) in masks[bi].0.iter().enumerate() {
                for k in 0..d {
                    g_tok[[bi * np + pi, k]] = ge[[bi, j, k]];
                }
            }
        }
        {
            let mut gp = self
                .pos
                .grad
                .view_mut()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap();
            for bi in 0..b {
                for i in 0..np {
                    for k in 0..d {
                        gp[[i, k]] += g_tok[[bi * np + i, k]];
                    }
                }
            }
        }
        self.embed.backward(&g_tok);

        StepLoss {
            total: recon,
            recon,
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.embed.params_mut();
        p.push(&mut self.pos);
        for b in &mut self.enc_blocks {
            p.extend(b.params_mut());
        }
        p.extend(self.enc_ln.params_mut());
        p.push(&mut self.mask_token);
        p.push(&mut self.dec_pos);
        for b in &mut self.dec_blocks {
            p.extend(b.params_mut());
        }
        p.extend(self.dec_ln.params_mut());
        p.extend(self.head.params_mut());
        p
    }

    pub fn tensor_snapshot(&self) -> Vec<(String, ArrayD<f32>)> {
        let mut out = Vec::new();
        self.embed.tensor_snapshot("embed", &mut out);
        out.push(("pos".to_string(), self.pos.value.clone()));
        for (i, b) in self.enc_blocks.iter().enumerate() {
            b.tensor_snapshot(&format!("enc.block{i}"), &mut out);
        }
        self.enc_ln.tensor_snapshot("enc.ln", &mut out);
        out.push(("mask_token".to_string(), self.mask_token.value.clone()));
        out.push(("dec_pos".to_string(), self.dec_pos.value.clone()));
        for (i, b) in self.dec_blocks.iter().enumerate() {
            b.tensor_snapshot(&format!("dec.block{i}"), &mut out);
        }
        self.dec_ln.tensor_snapshot("dec.ln", &mut out);
        self.head.tensor_snapshot("head", &mut out);
        out
    }

    pub fn load_tensors(&mut self, map: &mut HashMap<String, ArrayD<f32>>) -> Result<()> {
        self.embed.load_tensors("embed", map)?;
        self.pos.value = take_tensor(map, "pos", self.pos.value.shape())?;
        for (i, b) in self.enc_blocks.iter_mut().enumerate() {
            b.load_tensors(&format!("enc.block{i}"), map)?;
        }
        self.enc_ln.load_tensors("enc.ln", map)?;
        self.mask_token.value = take_tensor(map, "mask_token", self.mask_token.value.shape())?;
        self.dec_pos.value = take_tensor(map, "dec_pos", self.dec_pos.value.shape())?;
        for (i, b) in self.dec_blocks.iter_mut().enumerate() {
            b.load_tensors(&format!("dec.block{i}"), map)?;
        }
        self.dec_ln.load_tensors("dec.ln", map)?;
        self.head.load_tensors("head", map)?;
        Ok(())
    }
}

/// (B, 3, S, S) -> (B*np, p*p*3) patch rows, channel-major inside a patch.
pub(crate) fn patchify(x: &Array4<f32>, p: usize) -> Array2<f32> {
    let (b, c, s, _) = x.dim();
    let g = s / p;
    let np = g * g;
    let mut rows = Array2::zeros((b * np, c * p * p));
    for bi in 0..b {
        for gy in 0..g {
            for gx in 0..g {
                let row = bi * np + gy * g + gx;
                for ci in 0..c {
                    for py in 0..p {
                        for px in 0..p {
                            rows[[row, (ci * p + py) * p + px]] =
                                x[[bi, ci, gy * p + py, gx * p + px]];
                        }
                    }
                }
            }
        }
    }
    rows
}

/// Exact inverse of [`patchify`].
pub(crate) fn unpatchify(rows: &Array2<f32>, b: usize, s: usize, p: usize) -> Array4<f32> {
    let g = s / p;
    let np = g * g;
    let c = rows.dim().1 / (p * p);
    let mut x = Array4::zeros((b, c, s, s));
    for bi in 0..b {
        for gy in 0..g {
            for gx in 0..g {
                let row = bi * np + gy * g + gx;
                for ci in 0..c {
                    for py in 0..p {
                        for px in 0..p {
                            x[[bi, ci, gy * p + py, gx * p + px]] =
                                rows[[row, (ci * p + py) * p + px]];
                        }
                    }
                }
            }
        }
    }
    x
}
