//! Procedural test imagery.
//!
//! The pipeline's experiments need structured color images (smooth shading,
//! edges, texture) without shipping a photo corpus. These generators are
//! deterministic in the seed and are used by the test suites and the
//! acceptance experiments as the HR source.

use super::{bicubic_resample, Image};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Pure uniform noise; useful as a worst-case metric input.
pub fn noise_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut data = Array3::zeros((h, w, 3));
    for v in data.iter_mut() {
        *v = rng.random_range(0.0..=1.0);
    }
    Image::from_clamped(data)
}

/// Structured synthetic image: a smooth color field plus gratings and a few
/// anti-aliased shapes. Deterministic in the seed.
pub fn synth_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    // Smooth base: low-resolution noise blown up with the cubic resampler.
    let k = rng.random_range(3..=7);
    let base = noise_image(k, k, rng.random::<u64>());
    let base = bicubic_resample(&base, h, w).expect("upscale of synth base");
    let mut data = base.data().clone();

    // Sinusoidal gratings add texture with a controlled spectrum.
    let n_gratings = rng.random_range(1..=2);
    for _ in 0..n_gratings {
        let angle: f32 = rng.random_range(0.0..std::f32::consts::PI);
        let freq: f32 = rng.random_range(2.0..10.0);
        let phase: f32 = rng.random_range(0.0..std::f32::consts::TAU);
        let amp: f32 = rng.random_range(0.05..0.2);
        let wts: [f32; 3] = [
            rng.random_range(0.3..1.0),
            rng.random_range(0.3..1.0),
            rng.random_range(0.3..1.0),
        ];
        let (s, c) = angle.sin_cos();
        let norm = h.max(w) as f32;
        for y in 0..h {
            for x in 0..w {
                let t = (x as f32 * c + y as f32 * s) / norm;
                let v = amp * (std::f32::consts::TAU * freq * t + phase).sin();
                for ch in 0..3 {
                    data[[y, x, ch]] += v * wts[ch];
                }
            }
        }
    }

    // A few solid shapes give hard edges with known geometry.
    let n_shapes = rng.random_range(2..=5);
    for _ in 0..n_shapes {
        let color: [f32; 3] = [rng.random(), rng.random(), rng.random()];
        let alpha: f32 = rng.random_range(0.5..1.0);
        if rng.random::<bool>() {
            // Anti-aliased disk.
            let cy = rng.random_range(0.0..h as f32);
            let cx = rng.random_range(0.0..w as f32);
            let r = rng.random_range(0.08..0.3) * h.min(w) as f32;
            for y in 0..h {
                for x in 0..w {
                    let d = ((y as f32 - cy).powi(2) + (x as f32 - cx).powi(2)).sqrt();
                    let cov = (r + 0.5 - d).clamp(0.0, 1.0) * alpha;
                    if cov > 0.0 {
                        for ch in 0..3 {
                            data[[y, x, ch]] = data[[y, x, ch]] * (1.0 - cov) + color[ch] * cov;
                        }
                    }
                }
            }
        } else {
            // Axis-aligned rectangle.
            let y0 = rng.random_range(0..h);
            let x0 = rng.random_range(0..w);
            let hh = rng.random_range(1..=(h / 2).max(1));
            let ww = rng.random_range(1..=(w / 2).max(1));
            for y in y0..(y0 + hh).min(h) {
                for x in x0..(x0 + ww).min(w) {
                    for ch in 0..3 {
                        data[[y, x, ch]] = data[[y, x, ch]] * (1.0 - alpha) + color[ch] * alpha;
                    }
                }
            }
        }
    }

    for v in data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Image::from_clamped(data)
}

/// A deterministic corpus of structured images.
pub fn synth_corpus(count: usize, h: usize, w: usize, seed: u64) -> Vec<Image> {
    crate::par::map_indices(count, |i| {
        synth_image(h, w, crate::seed::seed_for(seed, "synth", i as u64))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let a = synth_image(32, 32, 9);
        let b = synth_image(32, 32, 9);
        assert_eq!(a, b);
        let c = synth_image(32, 32, 10);
        assert!(a.max_abs_diff(&c) > 0.0);
    }

    #[test]
    fn corpus_items_differ() {
        let corpus = synth_corpus(4, 16, 16, 123);
        assert_eq!(corpus.len(), 4);
        assert!(corpus[0].max_abs_diff(&corpus[1]) > 0.01);
    }
}
