//! The three image-reconstruction families used as degradation generators:
//! VQ-VAE, VQ-VAE-2, and MAE, trained at toy scale and checkpointed at fixed
//! epochs. An undertrained checkpoint's imperfect reconstruction is the
//! degradation the forge module applies to clean LR images.

mod mae;
mod vqvae;
mod vqvae2;

pub use mae::mae_mask;

use crate::ckpt;
use crate::img::Image;
use crate::nn::{Adam, Param};
use crate::seed::seed_for;
use crate::{Error, Result};
use ndarray::{Array2, Array4, ArrayD};
use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

/// Reconstruction model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconKind {
    VqVae,
    VqVae2,
    Mae,
}

impl ReconKind {
    pub const ALL: [ReconKind; 3] = [ReconKind::VqVae, ReconKind::VqVae2, ReconKind::Mae];

    pub fn name(&self) -> &'static str {
        match self {
            ReconKind::VqVae => "vqvae",
            ReconKind::VqVae2 => "vqvae2",
            ReconKind::Mae => "mae",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::invalid(format!("unknown reconstruction model kind '{name}'")))
    }
}

/// Architecture scalars for one reconstruction model.
///
/// The conv fields apply to the VQ families, the patch/embed fields to MAE;
/// unused fields ride along so one spec type can describe any kind and
/// round-trip through checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconModelSpec {
    pub kind: ReconKind,
    /// Square input side in pixels; equals the forged LR size.
    pub input_size: usize,
    /// Conv channel width (VQ-VAE, VQ-VAE-2).
    pub width: usize,
    /// Codebook entries per level.
    pub codebook_size: usize,
    /// Code vector dimension.
    pub code_dim: usize,
    /// Commitment weight beta.
    pub commitment_beta: f32,
    /// MAE patch side.
    pub patch_size: usize,
    /// MAE token dimension.
    pub embed_dim: usize,
    /// MAE encoder depth.
    pub enc_depth: usize,
    /// MAE decoder depth.
    pub dec_depth: usize,
    /// MAE attention heads.
    pub heads: usize,
    /// MAE masked fraction, in [0, 1).
    pub mask_ratio: f64,
}

impl ReconModelSpec {
    pub fn new(kind: ReconKind, input_size: usize) -> Self {
        ReconModelSpec {
            kind,
            input_size,
            width: 32,
            codebook_size: 128,
            code_dim: 32,
            commitment_beta: 0.25,
            patch_size: 4,
            embed_dim: 64,
            enc_depth: 4,
            dec_depth: 2,
            heads: 4,
            mask_ratio: 0.75,
        }
    }

    /// Total encoder downsampling (VQ families) or the patch side (MAE).
    pub fn downsample_factor(&self) -> usize {
        match self.kind {
            ReconKind::VqVae => 4,
            ReconKind::VqVae2 => 8,
            ReconKind::Mae => self.patch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.downsample_factor();
        if self.input_size == 0 || self.input_size % f != 0 {
            return Err(Error::invalid(format!(
                "input size {} not divisible by the {} downsampling factor {f}",
                self.input_size,
                self.kind.name()
            )));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::invalid(format!(
                "mask ratio {} not in [0, 1)",
                self.mask_ratio
            )));
        }
        if self.codebook_size < 2 {
            return Err(Error::invalid("codebook size must be >= 2"));
        }
        if self.kind == ReconKind::Mae && self.embed_dim % self.heads != 0 {
            return Err(Error::invalid("embed dim must divide evenly across heads"));
        }
        Ok(())
    }
}

/// Loss parts of one training step.
#[derive(Debug, Clone, Copy)]
pub struct StepLoss {
    pub total: f32,
    pub recon: f32,
}

pub(crate) enum ReconNet {
    VqVae(vqvae::VqVaeNet),
    VqVae2(vqvae2::VqVae2Net),
    Mae(mae::MaeNet),
}

impl Clone for ReconNet {
    fn clone(&self) -> Self {
        // Clone via a parameter snapshot: layer caches are training scratch.
        let (spec, tensors) = match self {
            ReconNet::VqVae(n) => (n.spec.clone(), n.tensor_snapshot()),
            ReconNet::VqVae2(n) => (n.spec.clone(), n.tensor_snapshot()),
            ReconNet::Mae(n) => (n.spec.clone(), n.tensor_snapshot()),
        };
        let mut map: HashMap<String, ArrayD<f32>> = tensors.into_iter().collect();
        let mut net = ReconNet::build(&spec, 0);
        net.load_tensors(&mut map).expect("clone round trip");
        net
    }
}

impl ReconNet {
    pub(crate) fn build(spec: &ReconModelSpec, init_seed: u64) -> ReconNet {
        match spec.kind {
            ReconKind::VqVae => ReconNet::VqVae(vqvae::VqVaeNet::new(spec, init_seed)),
            ReconKind::VqVae2 => ReconNet::VqVae2(vqvae2::VqVae2Net::new(spec, init_seed)),
            ReconKind::Mae => ReconNet::Mae(mae::MaeNet::new(spec, init_seed)),
        }
    }

    pub(crate) fn forward_eval(&mut self, x: &Array4<f32>, mask_seeds: &[u64]) -> Array4<f32> {
        match self {
            ReconNet::VqVae(n) => n.forward(x, false, mask_seeds),
            ReconNet::VqVae2(n) => n.forward(x, false, mask_seeds),
            ReconNet::Mae(n) => n.forward(x, false, mask_seeds),
        }
    }

    /// One training forward + backward; gradients accumulate into params.
    pub(crate) fn forward_backward(&mut self, x: &Array4<f32>, mask_seeds: &[u64]) -> StepLoss {
        match self {
            ReconNet::VqVae(n) => n.forward_backward(x, mask_seeds),
            ReconNet::VqVae2(n) => n.forward_backward(x, mask_seeds),
            ReconNet::Mae(n) => n.forward_backward(x, mask_seeds),
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            ReconNet::VqVae(n) => n.params_mut(),
            ReconNet::VqVae2(n) => n.params_mut(),
            ReconNet::Mae(n) => n.params_mut(),
        }
    }

    pub(crate) fn tensor_snapshot(&self) -> Vec<(String, ArrayD<f32>)> {
        match self {
            ReconNet::VqVae(n) => n.tensor_snapshot(),
            ReconNet::VqVae2(n) => n.tensor_snapshot(),
            ReconNet::Mae(n) => n.tensor_snapshot(),
        }
    }

    pub(crate) fn load_tensors(&mut self, map: &mut HashMap<String, ArrayD<f32>>) -> Result<()> {
        match self {
            ReconNet::VqVae(n) => n.load_tensors(map)?,
            ReconNet::VqVae2(n) => n.load_tensors(map)?,
            ReconNet::Mae(n) => n.load_tensors(map)?,
        }
        if let Some(name) = map.keys().next() {
            return Err(Error::Format(format!(
                "checkpoint contains unexpected tensor '{name}'"
            )));
        }
        Ok(())
    }
}

/// An undertrained reconstruction network frozen at a specific epoch.
///
/// The parameters never change after creation; the `&mut` on inference only
/// touches layer scratch space, so clone the checkpoint to share it across
/// workers.
pub struct ReconCheckpoint {
    pub spec: ReconModelSpec,
    pub epoch: u64,
    pub train_seed: u64,
    net: ReconNet,
}

impl Clone for ReconCheckpoint {
    fn clone(&self) -> Self {
        ReconCheckpoint {
            spec: self.spec.clone(),
            epoch: self.epoch,
            train_seed: self.train_seed,
            net: self.net.clone(),
        }
    }
}

impl ReconCheckpoint {
    /// Reconstructs one image. `mask_seed` drives the MAE patch mask and is
    /// ignored by the VQ families; for a fixed (checkpoint, image, seed) the
    /// output is bitwise deterministic.
    pub fn reconstruct(&mut self, img: &Image, mask_seed: u64) -> Result<Image> {
        let out = self.reconstruct_batch(std::slice::from_ref(img), &[mask_seed])?;
        Ok(out.into_iter().next().unwrap())
    }

    /// Batched reconstruction; one mask seed per image.
    pub fn reconstruct_batch(&mut self, imgs: &[Image], mask_seeds: &[u64]) -> Result<Vec<Image>> {
        if imgs.len() != mask_seeds.len() {
            return Err(Error::invalid("one mask seed per image required"));
        }
        if imgs.is_empty() {
            return Ok(Vec::new());
        }
        for img in imgs {
            if img.height() != self.spec.input_size || img.width() != self.spec.input_size {
                return Err(Error::invalid(format!(
                    "image {}x{} does not match model input size {}",
                    img.height(),
                    img.width(),
                    self.spec.input_size
                )));
            }
        }
        let x = images_to_batch(imgs);
        let y = self.net.forward_eval(&x, mask_seeds);
        Ok(batch_to_images(&y))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors = self.net.tensor_snapshot();
        let refs: Vec<(String, &ArrayD<f32>)> =
            tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
        ckpt::save_checkpoint(
            path,
            self.spec.kind.name(),
            self.epoch,
            self.train_seed,
            &self.spec,
            &refs,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, mut tensors) = ckpt::load_checkpoint(path)?;
        let spec: ReconModelSpec = serde_json::from_value(header.scalars.clone())
            .map_err(|e| Error::Format(format!("{}: spec decode: {e}", path.display())))?;
        if spec.kind.name() != header.kind {
            return Err(Error::Format(format!(
                "{}: header kind '{}' does not match spec kind '{}'",
                path.display(),
                header.kind,
                spec.kind.name()
            )));
        }
        spec.validate()?;
        let mut net = ReconNet::build(&spec, 0);
        net.load_tensors(&mut tensors)?;
        Ok(ReconCheckpoint {
            spec,
            epoch: header.epoch,
            train_seed: header.seed,
            net,
        })
    }
}

/// Training knobs with the defaults used throughout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReconOptions {
    pub batch_size: usize,
    pub learning_rate: f32,
}

impl Default for TrainReconOptions {
    fn default() -> Self {
        TrainReconOptions {
            batch_size: 64,
            learning_rate: 3e-4,
        }
    }
}

/// Training output: the requested checkpoints plus the per-epoch mean loss.
pub struct TrainedRecon {
    pub checkpoints: Vec<ReconCheckpoint>,
    /// Mean total loss of epoch e at index e-1.
    pub epoch_losses: Vec<f64>,
}

/// Trains one reconstruction model, snapshotting at the requested epochs.
///
/// Deterministic for a fixed seed on one platform: the data order, the MAE
/// masks and every weight update derive from `train_seed`.
pub fn train_recon(
    spec: &ReconModelSpec,
    images: &[Image],
    epochs: usize,
    checkpoint_epochs: &[usize],
    train_seed: u64,
) -> Result<TrainedRecon> {
    train_recon_with(
        spec,
        images,
        epochs,
        checkpoint_epochs,
        train_seed,
        &TrainReconOptions::default(),
    )
}

pub fn train_recon_with(
    spec: &ReconModelSpec,
    images: &[Image],
    epochs: usize,
    checkpoint_epochs: &[usize],
    train_seed: u64,
    options: &TrainReconOptions,
) -> Result<TrainedRecon> {
    spec.validate()?;
    if images.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    if checkpoint_epochs.is_empty() {
        return Err(Error::invalid("checkpoint epoch set is empty"));
    }
    if let Some(&max_e) = checkpoint_epochs.iter().max() {
        if epochs < max_e {
            return Err(Error::invalid(format!(
                "epochs {epochs} < max checkpoint epoch {max_e}"
            )));
        }
    }
    for img in images {
        if img.height() != spec.input_size || img.width() != spec.input_size {
            return Err(Error::invalid(format!(
                "corpus image {}x{} does not match input size {}",
                img.height(),
                img.width(),
                spec.input_size
            )));
        }
    }

    let mut net = ReconNet::build(spec, seed_for(train_seed, "recon-init", 0));
    let mut adam = Adam::new(options.learning_rate);
    let mut checkpoints = Vec::new();
    let mut epoch_losses = Vec::with_capacity(epochs);
    let n = images.len();

    for epoch in 1..=epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng =
            ChaCha12Rng::seed_from_u64(seed_for(train_seed, "recon-epoch", epoch as u64));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(options.batch_size) {
            let batch_imgs: Vec<Image> = chunk.iter().map(|&i| images[i].clone()).collect();
            let x = images_to_batch(&batch_imgs);
            let mask_seeds: Vec<u64> = chunk
                .iter()
                .map(|&i| seed_for(train_seed, "recon-train-mask", (epoch * n + i) as u64))
                .collect();

            for p in net.params_mut() {
                p.zero_grad();
            }
            let loss = net.forward_backward(&x, &mask_seeds);
            if !loss.total.is_finite() {
                return Err(Error::TrainingDiverged {
                    unit: "epoch",
                    index: epoch,
                    loss: loss.total,
                });
            }
            adam.step(&mut net.params_mut());
            loss_sum += loss.total as f64;
            batches += 1;
        }
        epoch_losses.push(loss_sum / batches as f64);

        if checkpoint_epochs.contains(&epoch) {
            checkpoints.push(ReconCheckpoint {
                spec: spec.clone(),
                epoch: epoch as u64,
                train_seed,
                net: net.clone(),
            });
        }
    }

    Ok(TrainedRecon {
        checkpoints,
        epoch_losses,
    })
}

/// Side-by-side reconstruction comparison across checkpoints.
pub struct CompareReport {
    /// Tile grid: one row per sample, one column per checkpoint, the input
    /// in the rightmost column.
    pub grid: Image,
    pub column_labels: Vec<String>,
    /// PSNR of each tile against the input, `cells[sample][column]`.
    pub cells: Vec<Vec<f64>>,
    /// Column means over samples.
    pub mean_psnr: Vec<f64>,
    /// Mean LAB b* drift of each column against the inputs (positive means
    /// a yellow shift).
    pub mean_delta_b: Vec<f64>,
}

impl CompareReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row");
        for label in &self.column_labels {
            out.push(',');
            out.push_str(label);
        }
        out.push('\n');
        for (i, row) in self.cells.iter().enumerate() {
            out.push_str(&format!("sample_{i:03}"));
            for v in row {
                out.push_str(&format!(",{v:.4}"));
            }
            out.push('\n');
        }
        out.push_str("mean_psnr");
        for v in &self.mean_psnr {
            out.push_str(&format!(",{v:.4}"));
        }
        out.push('\n');
        out.push_str("mean_delta_b");
        for v in &self.mean_delta_b {
            out.push_str(&format!(",{v:.4}"));
        }
        out.push('\n');
        out
    }
}

/// Reconstructs each sample with each checkpoint and assembles the grid
/// raster plus per-cell PSNR-to-input (the input column scores the cap).
pub fn compare_recons(
    ckpts: &mut [ReconCheckpoint],
    samples: &[Image],
    seed: u64,
) -> Result<CompareReport> {
    if ckpts.is_empty() || samples.is_empty() {
        return Err(Error::invalid("need at least one checkpoint and one sample"));
    }
    let size = ckpts[0].spec.input_size;
    for c in ckpts.iter() {
        if c.spec.input_size != size {
            return Err(Error::invalid("checkpoints disagree on input size"));
        }
    }
    let n_cols = ckpts.len() + 1;
    let mut grid = ndarray::Array3::<f32>::zeros((samples.len() * size, n_cols * size, 3));
    let mut cells = vec![vec![0.0f64; n_cols]; samples.len()];
    let mut delta_b_sums = vec![0.0f64; n_cols];

    let mask_seeds: Vec<u64> = (0..samples.len())
        .map(|i| seed_for(seed, "compare-mask", i as u64))
        .collect();

    for (col, ckpt) in ckpts.iter_mut().enumerate() {
        let recons = ckpt.reconstruct_batch(samples, &mask_seeds)?;
        for (row, (sample, recon)) in samples.iter().zip(&recons).enumerate() {
            cells[row][col] = crate::img::psnr(sample, recon)?;
            delta_b_sums[col] += mean_b_drift(sample, recon);
            blit(&mut grid, recon, row * size, col * size);
        }
    }
    let input_col = n_cols - 1;
    for (row, sample) in samples.iter().enumerate() {
        cells[row][input_col] = crate::img::psnr(sample, sample)?;
        blit(&mut grid, sample, row * size, input_col * size);
    }

    let mut column_labels: Vec<String> = ckpts
        .iter()
        .map(|c| format!("{}_ep{}", c.spec.kind.name(), c.epoch))
        .collect();
    column_labels.push("input".to_string());

    let mean_psnr: Vec<f64> = (0..n_cols)
        .map(|c| cells.iter().map(|r| r[c]).sum::<f64>() / samples.len() as f64)
        .collect();
    let mean_delta_b: Vec<f64> = delta_b_sums
        .iter()
        .map(|s| s / samples.len() as f64)
        .collect();

    Ok(CompareReport {
        grid: Image::new(grid).expect("grid stays in range"),
        column_labels,
        cells,
        mean_psnr,
        mean_delta_b,
    })
}

/// Mean b* difference (recon minus input) in LAB.
fn mean_b_drift(input: &Image, recon: &Image) -> f64 {
    let li = crate::img::srgb_to_lab(input);
    let lr = crate::img::srgb_to_lab(recon);
    let mut sum = 0.0f64;
    for y in 0..input.height() {
        for x in 0..input.width() {
            sum += (lr.pixel(y, x)[2] - li.pixel(y, x)[2]) as f64;
        }
    }
    sum / (input.height() * input.width()) as f64
}

fn blit(grid: &mut ndarray::Array3<f32>, img: &Image, top: usize, left: usize) {
    for y in 0..img.height() {
        for x in 0..img.width() {
            let px = img.pixel(y, x);
            for c in 0..3 {
                grid[[top + y, left + x, c]] = px[c];
            }
        }
    }
}

/// Stacks images into an (N, 3, H, W) activation batch.
pub(crate) fn images_to_batch(imgs: &[Image]) -> Array4<f32> {
    let (h, w) = (imgs[0].height(), imgs[0].width());
    let mut x = Array4::zeros((imgs.len(), 3, h, w));
    for (i, img) in imgs.iter().enumerate() {
        for y in 0..h {
            for xx in 0..w {
                let px = img.pixel(y, xx);
                for c in 0..3 {
                    x[[i, c, y, xx]] = px[c];
                }
            }
        }
    }
    x
}

/// Splits an (N, 3, H, W) batch back into images, clamping to `[0, 1]`.
pub(crate) fn batch_to_images(x: &Array4<f32>) -> Vec<Image> {
    let (n, _, h, w) = x.dim();
    (0..n)
        .map(|i| {
            Image::from_fn(h, w, |y, xx| {
                [x[[i, 0, y, xx]], x[[i, 1, y, xx]], x[[i, 2, y, xx]]]
            })
        })
        .collect()
}

/// Flattens (B, C, H, W) into (B*H*W, C) rows for vector quantization.
pub(crate) fn nchw_to_rows(x: &Array4<f32>) -> Array2<f32> {
    let (b, c, h, w) = x.dim();
    let mut rows = Array2::zeros((b * h * w, c));
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    rows[[(bi * h + y) * w + xx, ci]] = x[[bi, ci, y, xx]];
                }
            }
        }
    }
    rows
}

pub(crate) fn rows_to_nchw(rows: &Array2<f32>, dim: (usize, usize, usize, usize)) -> Array4<f32> {
    let (b, c, h, w) = dim;
    let mut x = Array4::zeros(dim);
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    x[[bi, ci, y, xx]] = rows[[(bi * h + y) * w + xx, ci]];
                }
            }
        }
    }
    x
}

/// Channel concatenation and its split adjoint.
pub(crate) fn concat_ch(a: &Array4<f32>, b: &Array4<f32>) -> Array4<f32> {
    ndarray::concatenate(ndarray::Axis(1), &[a.view(), b.view()]).expect("channel concat")
}

pub(crate) fn split_ch(g: &Array4<f32>, c_first: usize) -> (Array4<f32>, Array4<f32>) {
    let a = g.slice(ndarray::s![.., ..c_first, .., ..]).to_owned();
    let b = g.slice(ndarray::s![.., c_first.., .., ..]).to_owned();
    (a, b)
}

#[cfg(test)]
mod tests;

/// Temporary instrumentation for sizing work; not part of the public surface.
#[doc(hidden)]
pub fn profile_one_batch(spec: &ReconModelSpec, imgs: &[Image]) {
    use std::time::Instant;
    let mut net = ReconNet::build(spec, 1);
    let t0 = Instant::now();
    let x = images_to_batch(imgs);
    let t1 = Instant::now();
    let seeds: Vec<u64> = (0..imgs.len() as u64).collect();
    let _loss = net.forward_backward(&x, &seeds);
    let t2 = Instant::now();
    let mut adam = Adam::new(3e-4);
    adam.step(&mut net.params_mut());
    let t3 = Instant::now();
    eprintln!(
        "batchify {:.0}ms fwd+bwd {:.0}ms adam {:.0}ms",
        (t1 - t0).as_secs_f64() * 1e3,
        (t2 - t1).as_secs_f64() * 1e3,
        (t3 - t2).as_secs_f64() * 1e3
    );
}
