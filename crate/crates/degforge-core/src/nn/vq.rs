//! Vector quantization with a straight-through gradient estimator.

use super::Param;
use crate::{Error, Result};
use ndarray::Array2;

/// Nearest-codebook-entry assignment.
///
/// Each row of `z` maps to the codebook entry nearest in Euclidean distance;
/// exact ties break toward the lowest index. Returns the quantized rows and
/// the chosen indices.
pub fn vq_quantize(z: &Array2<f32>, codebook: &Array2<f32>) -> Result<(Array2<f32>, Vec<usize>)> {
    let (n, d) = z.dim();
    let (k, dc) = codebook.dim();
    if d != dc {
        return Err(Error::invalid(format!(
            "latent dim {d} does not match codebook dim {dc}"
        )));
    }
    if k < 2 {
        return Err(Error::invalid("codebook must have at least 2 entries"));
    }

    // ||z - e||^2 = ||z||^2 + ||e||^2 - 2 z.e ; the z term is constant per row.
    let dots = z.dot(&codebook.t()); // (N, K)
    let e_norms: Vec<f32> = codebook
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| v * v).sum())
        .collect();

    let mut indices = Vec::with_capacity(n);
    let mut zq = Array2::zeros((n, d));
    for i in 0..n {
        let mut best = 0usize;
        let mut best_d = f32::INFINITY;
        for j in 0..k {
            let dist = e_norms[j] - 2.0 * dots[[i, j]];
            if dist < best_d {
                best_d = dist;
                best = j;
            }
        }
        indices.push(best);
        zq.row_mut(i).assign(&codebook.row(best));
    }
    Ok((zq, indices))
}

/// The terms of the VQ-VAE objective for reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VqLoss {
    pub total: f32,
    pub recon: f32,
    pub codebook: f32,
    pub commit: f32,
}

/// Reconstruction + codebook + beta * commitment, each a mean over elements.
///
/// The codebook and commitment terms share the same value (they differ only
/// in which side the gradient reaches); this helper reports them the way the
/// objective is written.
pub fn vqvae_loss(
    x: &ndarray::ArrayD<f32>,
    x_hat: &ndarray::ArrayD<f32>,
    z_e: &Array2<f32>,
    z_q: &Array2<f32>,
    beta: f32,
) -> Result<VqLoss> {
    if x.raw_dim() != x_hat.raw_dim() {
        return Err(Error::invalid("x and x_hat shapes differ"));
    }
    if z_e.dim() != z_q.dim() {
        return Err(Error::invalid("z_e and z_q shapes differ"));
    }
    let recon = mean_sq_diff(x.iter(), x_hat.iter());
    let latent = mean_sq_diff(z_q.iter(), z_e.iter());
    let commit = beta * latent;
    Ok(VqLoss {
        total: recon + latent + commit,
        recon,
        codebook: latent,
        commit,
    })
}

fn mean_sq_diff<'a>(
    a: impl ExactSizeIterator<Item = &'a f32>,
    b: impl Iterator<Item = &'a f32>,
) -> f32 {
    let n = a.len() as f64;
    let mut sum = 0.0f64;
    for (x, y) in a.zip(b) {
        let d = (*x - *y) as f64;
        sum += d * d;
    }
    (sum / n) as f32
}

/// Trainable quantization layer.
///
/// Forward assigns nearest codes; backward routes the reconstruction
/// gradient straight through to the encoder (plus the scaled commitment
/// pull) and pushes assigned codebook entries toward the encoder outputs.
pub struct VectorQuantizer {
    pub codebook: Param, // (K, d)
    cache: Option<(Array2<f32>, Array2<f32>, Vec<usize>)>, // (z, zq, indices)
}

impl VectorQuantizer {
    /// Codebook entries start uniform in [-1/K, 1/K], the reference scheme.
    pub fn new(init: &mut super::Init, k: usize, d: usize) -> Self {
        use rand::Rng;
        let bound = 1.0 / k as f32;
        let mut value = ndarray::ArrayD::zeros(ndarray::IxDyn(&[k, d]));
        for v in value.iter_mut() {
            *v = init.rng().random_range(-bound..bound);
        }
        VectorQuantizer {
            codebook: Param::new(value),
            cache: None,
        }
    }

    fn codebook2(&self) -> ndarray::ArrayView2<'_, f32> {
        self.codebook
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap()
    }

    pub fn forward(&mut self, z: &Array2<f32>, train: bool) -> Result<(Array2<f32>, Vec<usize>)> {
        let (zq, indices) = vq_quantize(z, &self.codebook2().to_owned())?;
        if train {
            self.cache = Some((z.clone(), zq.clone(), indices.clone()));
        }
        Ok((zq, indices))
    }

    /// Mean squared latent gap of the cached assignment; equals both the
    /// codebook term and the unscaled commitment term.
    pub fn latent_gap(&self) -> f32 {
        let (z, zq, _) = self.cache.as_ref().expect("latent_gap without forward");
        mean_sq_diff(zq.iter(), z.iter())
    }

    /// Straight-through backward.
    ///
    /// `g_zq` is the gradient arriving at the quantized output. Returns the
    /// encoder gradient `g_zq + beta * d/dz mean((z - sg zq)^2)` and
    /// accumulates `d/de mean((e - sg z)^2)` into the codebook gradient.
    pub fn backward(&mut self, g_zq: &Array2<f32>, beta: f32) -> Array2<f32> {
        let (z, zq, indices) = self.cache.take().expect("backward without forward");
        let m = (z.len()) as f32;
        let mut gz = g_zq.clone();
        let mut gcb = self
            .codebook
            .grad
            .view_mut()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        for (i, &k) in indices.iter().enumerate() {
            for j in 0..z.dim().1 {
                let gap = z[[i, j]] - zq[[i, j]];
                gz[[i, j]] += beta * 2.0 * gap / m;
                gcb[[k, j]] += -2.0 * gap / m;
            }
        }
        gz
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.codebook]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy_codebook() -> Array2<f32> {
        array![[0.0, 0.0], [1.0, 1.0]]
    }

    #[test]
    fn nearest_neighbor_assignment() {
        let z = array![[0.2, 0.1]];
        let (zq, idx) = vq_quantize(&z, &toy_codebook()).unwrap();
        assert_eq!(idx, vec![0]);
        assert_eq!(zq, array![[0.0, 0.0]]);
    }

    #[test]
    fn exact_entry_is_a_fixed_point() {
        let z = array![[1.0, 1.0]];
        let (zq, idx) = vq_quantize(&z, &toy_codebook()).unwrap();
        assert_eq!(idx, vec![1]);
        assert_eq!(zq, array![[1.0, 1.0]]);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let z = array![[0.5, 0.5]];
        let (_, idx) = vq_quantize(&z, &toy_codebook()).unwrap();
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn quantization_is_idempotent() {
        let z = array![[0.3, -0.2], [0.9, 1.4], [0.5, 0.5]];
        let cb = toy_codebook();
        let (zq, idx) = vq_quantize(&z, &cb).unwrap();
        let (zq2, idx2) = vq_quantize(&zq, &cb).unwrap();
        assert_eq!(zq, zq2);
        assert_eq!(idx, idx2);
    }

    #[test]
    fn dim_mismatch_rejected() {
        let z = array![[0.1, 0.2, 0.3]];
        assert!(vq_quantize(&z, &toy_codebook()).is_err());
    }

    #[test]
    fn loss_zero_when_everything_matches() {
        let x = array![[0.5f32, 0.25]].into_dyn();
        let z = array![[1.0f32, 2.0]];
        let l = vqvae_loss(&x, &x.clone(), &z, &z.clone(), 0.25).unwrap();
        assert_eq!(l.total, 0.0);
        assert_eq!(l.recon, 0.0);
    }

    #[test]
    fn beta_zero_removes_commit_term() {
        let x = array![[0.5f32]].into_dyn();
        let xh = array![[0.75f32]].into_dyn();
        let ze = array![[1.0f32, 0.0]];
        let zq = array![[0.0f32, 0.0]];
        let l = vqvae_loss(&x, &xh, &ze, &zq, 0.0).unwrap();
        assert_eq!(l.commit, 0.0);
        assert!((l.total - (l.recon + l.codebook)).abs() < 1e-9);
    }

    #[test]
    fn toy_loss_matches_hand_computed_values() {
        // Dyadic values keep every term exact in f32.
        // x = [0.25, 0.75], x_hat = [0.5, 0.5]: recon = (0.0625 + 0.0625)/2 = 0.0625
        // z_e = [[1, 2], [3, 4]], z_q = [[1, 1], [2, 4]]:
        //   latent = (0 + 1 + 1 + 0)/4 = 0.5, commit = 0.25 * 0.5 = 0.125
        let x = array![0.25f32, 0.75].into_dyn();
        let xh = array![0.5f32, 0.5].into_dyn();
        let ze = array![[1.0f32, 2.0], [3.0, 4.0]];
        let zq = array![[1.0f32, 1.0], [2.0, 4.0]];
        let l = vqvae_loss(&x, &xh, &ze, &zq, 0.25).unwrap();
        assert!((l.recon - 0.0625).abs() < 1e-9);
        assert!((l.codebook - 0.5).abs() < 1e-9);
        assert!((l.commit - 0.125).abs() < 1e-9);
        assert!((l.total - 0.6875).abs() < 1e-9);
    }

    #[test]
    fn straight_through_passes_reconstruction_gradient_unchanged() {
        let mut init = super::super::Init::new(0);
        let mut vq = VectorQuantizer::new(&mut init, 4, 2);
        let z = array![[0.3f32, -0.1], [0.6, 0.9]];
        let (_, _) = vq.forward(&z, true).unwrap();
        let g_zq = array![[1.0f32, -2.0], [0.5, 0.25]];
        let gz = vq.backward(&g_zq, 0.0);
        assert_eq!(gz, g_zq);
    }

    #[test]
    fn commitment_gradient_points_toward_assigned_code() {
        let mut init = super::super::Init::new(0);
        let mut vq = VectorQuantizer::new(&mut init, 2, 2);
        vq.codebook.value = toy_codebook().into_dyn();
        let z = array![[0.2f32, 0.1]]; // assigned to (0, 0)
        vq.forward(&z, true).unwrap();
        let gz = vq.backward(&Array2::zeros((1, 2)), 0.25);
        // d/dz beta*mean((z - e)^2) = beta * 2(z - e)/M, M = 2
        assert!((gz[[0, 0]] - 0.25 * 2.0 * 0.2 / 2.0).abs() < 1e-7);
        assert!((gz[[0, 1]] - 0.25 * 2.0 * 0.1 / 2.0).abs() < 1e-7);
        // codebook grad pulls entry 0 toward z
        let gcb = vq.codebook.grad.clone();
        assert!((gcb[[0, 0]] - (-2.0 * 0.2 / 2.0)).abs() < 1e-7);
        assert!(gcb[[1, 0]].abs() < 1e-12, "unassigned entry must not move");
    }
}
