//! Synthetic corruptions with 5 severity levels, in the style of the common
//! corruption benchmarks. Every corruption is a pure function of
//! (image, kind, severity, seed).

use super::{bicubic_resample, jpeg_roundtrip, Image};
use crate::{Error, Result};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

/// The fixed class set of synthetic degradations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegradationKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    GaussianBlur,
    DefocusBlur,
    MotionBlur,
    JpegCompression,
    Pixelate,
    Contrast,
    Brightness,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 10] = [
        DegradationKind::GaussianNoise,
        DegradationKind::ShotNoise,
        DegradationKind::ImpulseNoise,
        DegradationKind::GaussianBlur,
        DegradationKind::DefocusBlur,
        DegradationKind::MotionBlur,
        DegradationKind::JpegCompression,
        DegradationKind::Pixelate,
        DegradationKind::Contrast,
        DegradationKind::Brightness,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DegradationKind::GaussianNoise => "gaussian-noise",
            DegradationKind::ShotNoise => "shot-noise",
            DegradationKind::ImpulseNoise => "impulse-noise",
            DegradationKind::GaussianBlur => "gaussian-blur",
            DegradationKind::DefocusBlur => "defocus-blur",
            DegradationKind::MotionBlur => "motion-blur",
            DegradationKind::JpegCompression => "jpeg-compression",
            DegradationKind::Pixelate => "pixelate",
            DegradationKind::Contrast => "contrast",
            DegradationKind::Brightness => "brightness",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::invalid(format!("unknown degradation kind '{name}'")))
    }
}

/// A degradation class instance: kind plus severity in 1..=5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degradation {
    pub kind: DegradationKind,
    pub severity: u8,
}

impl Degradation {
    pub fn new(kind: DegradationKind, severity: u8) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::invalid(format!("severity {severity} not in 1..=5")));
        }
        Ok(Degradation { kind, severity })
    }
}

// Per-severity parameter tables (index = severity - 1).
const GAUSS_NOISE_SIGMA: [f32; 5] = [0.08, 0.12, 0.18, 0.26, 0.38];
const SHOT_NOISE_SCALE: [f64; 5] = [60.0, 25.0, 12.0, 5.0, 3.0];
const IMPULSE_AMOUNT: [f64; 5] = [0.03, 0.06, 0.09, 0.17, 0.27];
const GAUSS_BLUR_SIGMA: [f64; 5] = [0.8, 1.2, 1.8, 2.6, 3.4];
const DEFOCUS_RADIUS: [f64; 5] = [1.0, 1.5, 2.0, 2.5, 3.5];
const MOTION_LENGTH: [f64; 5] = [3.0, 5.0, 7.0, 9.0, 12.0];
/// JPEG quality per severity, per the storage interface contract.
pub const JPEG_QUALITY: [u8; 5] = [25, 18, 15, 10, 7];
const PIXELATE_FACTOR: [f64; 5] = [0.6, 0.5, 0.4, 0.3, 0.25];
const CONTRAST_FACTOR: [f32; 5] = [0.5, 0.4, 0.3, 0.2, 0.1];
const BRIGHTNESS_DELTA: [f32; 5] = [0.1, 0.18, 0.26, 0.34, 0.42];

/// Applies one corruption. Deterministic given the seed; output stays in
/// `[0, 1]`; mean distortion grows with severity over a corpus.
pub fn apply_degradation(img: &Image, deg: Degradation, seed: u64) -> Result<Image> {
    Degradation::new(deg.kind, deg.severity)?;
    let s = (deg.severity - 1) as usize;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let out = match deg.kind {
        DegradationKind::GaussianNoise => gaussian_noise(img, GAUSS_NOISE_SIGMA[s], &mut rng),
        DegradationKind::ShotNoise => shot_noise(img, SHOT_NOISE_SCALE[s], &mut rng),
        DegradationKind::ImpulseNoise => impulse_noise(img, IMPULSE_AMOUNT[s], &mut rng),
        DegradationKind::GaussianBlur => gaussian_blur(img, GAUSS_BLUR_SIGMA[s]),
        DegradationKind::DefocusBlur => convolve2d(img, &disk_kernel(DEFOCUS_RADIUS[s])),
        DegradationKind::MotionBlur => {
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            convolve2d(img, &motion_kernel(MOTION_LENGTH[s], angle))
        }
        DegradationKind::JpegCompression => jpeg_roundtrip(img, JPEG_QUALITY[s])?,
        DegradationKind::Pixelate => pixelate(img, PIXELATE_FACTOR[s]),
        DegradationKind::Contrast => contrast(img, CONTRAST_FACTOR[s]),
        DegradationKind::Brightness => brightness(img, BRIGHTNESS_DELTA[s]),
    };
    Ok(out)
}

fn gaussian_noise(img: &Image, sigma: f32, rng: &mut ChaCha12Rng) -> Image {
    let dist = Normal::new(0.0f32, sigma).unwrap();
    let mut data = img.data().clone();
    for v in data.iter_mut() {
        *v += dist.sample(rng);
    }
    Image::from_clamped(data)
}

fn shot_noise(img: &Image, scale: f64, rng: &mut ChaCha12Rng) -> Image {
    let mut data = img.data().clone();
    for v in data.iter_mut() {
        let lambda = *v as f64 * scale;
        *v = if lambda > 0.0 {
            (Poisson::new(lambda).unwrap().sample(rng) / scale) as f32
        } else {
            0.0
        };
    }
    Image::from_clamped(data)
}

fn impulse_noise(img: &Image, amount: f64, rng: &mut ChaCha12Rng) -> Image {
    let mut data = img.data().clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if rng.random_range(0.0..1.0) < amount {
                let v = if rng.random::<bool>() { 1.0 } else { 0.0 };
                for c in 0..3 {
                    data[[y, x, c]] = v;
                }
            }
        }
    }
    Image::from_clamped(data)
}

fn gaussian_kernel_1d(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k = vec![0.0; 2 * radius + 1];
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - radius as f64;
        *v = (-d * d / (2.0 * sigma * sigma)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with replicated edges.
fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let k = gaussian_kernel_1d(sigma);
    let radius = k.len() / 2;
    let (h, w) = (img.height(), img.width());
    let src = img.data();
    let mut mid = Array3::<f64>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            for (i, &wk) in k.iter().enumerate() {
                let sx = (x as i64 + i as i64 - radius as i64).clamp(0, w as i64 - 1) as usize;
                for c in 0..3 {
                    mid[[y, x, c]] += wk * src[[y, sx, c]] as f64;
                }
            }
        }
    }
    let mut out = Array3::<f32>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (i, &wk) in k.iter().enumerate() {
                let sy = (y as i64 + i as i64 - radius as i64).clamp(0, h as i64 - 1) as usize;
                for c in 0..3 {
                    acc[c] += wk * mid[[sy, x, c]];
                }
            }
            for c in 0..3 {
                out[[y, x, c]] = acc[c] as f32;
            }
        }
    }
    Image::from_clamped(out)
}

/// Anti-aliased disk kernel (normalized coverage weights).
fn disk_kernel(radius: f64) -> Array3<f64> {
    let r = radius.ceil() as i64;
    let size = (2 * r + 1) as usize;
    let mut k = Array3::zeros((size, size, 1));
    let mut sum = 0.0;
    for y in 0..size {
        for x in 0..size {
            let dy = y as f64 - r as f64;
            let dx = x as f64 - r as f64;
            let d = (dy * dy + dx * dx).sqrt();
            let v = (radius + 0.5 - d).clamp(0.0, 1.0);
            k[[y, x, 0]] = v;
            sum += v;
        }
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Line kernel of the given length at the given angle, splatted bilinearly.
fn motion_kernel(length: f64, angle: f64) -> Array3<f64> {
    let r = (length / 2.0).ceil() as i64;
    let size = (2 * r + 1) as usize;
    let mut k = Array3::zeros((size, size, 1));
    let (s, c) = angle.sin_cos();
    let steps = (length * 4.0).ceil() as usize;
    for i in 0..=steps {
        let t = (i as f64 / steps as f64 - 0.5) * (length - 1.0);
        let y = r as f64 + t * s;
        let x = r as f64 + t * c;
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        for (dy, dx, w) in [
            (0.0, 0.0, (1.0 - fy) * (1.0 - fx)),
            (0.0, 1.0, (1.0 - fy) * fx),
            (1.0, 0.0, fy * (1.0 - fx)),
            (1.0, 1.0, fy * fx),
        ] {
            let yy = (y0 + dy) as i64;
            let xx = (x0 + dx) as i64;
            if yy >= 0 && yy < size as i64 && xx >= 0 && xx < size as i64 {
                k[[yy as usize, xx as usize, 0]] += w;
            }
        }
    }
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Direct 2-D convolution with replicated edges.
fn convolve2d(img: &Image, kernel: &Array3<f64>) -> Image {
    let (kh, kw, _) = kernel.dim();
    let (ry, rx) = (kh as i64 / 2, kw as i64 / 2);
    let (h, w) = (img.height(), img.width());
    let src = img.data();
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for ky in 0..kh {
                let sy = (y as i64 + ky as i64 - ry).clamp(0, h as i64 - 1) as usize;
                for kx in 0..kw {
                    let sx = (x as i64 + kx as i64 - rx).clamp(0, w as i64 - 1) as usize;
                    let wk = kernel[[ky, kx, 0]];
                    for c in 0..3 {
                        acc[c] += wk * src[[sy, sx, c]] as f64;
                    }
                }
            }
            for c in 0..3 {
                out[[y, x, c]] = acc[c] as f32;
            }
        }
    }
    Image::from_clamped(out)
}

/// Area-average downscale to `factor` of the size, then nearest upscale.
fn pixelate(img: &Image, factor: f64) -> Image {
    let (h, w) = (img.height(), img.width());
    let sh = ((h as f64 * factor).round() as usize).max(1);
    let sw = ((w as f64 * factor).round() as usize).max(1);
    let small = bicubic_resample(img, sh, sw).expect("pixelate downscale");
    Image::from_fn(h, w, |y, x| {
        small.pixel(y * sh / h, x * sw / w)
    })
}

fn contrast(img: &Image, factor: f32) -> Image {
    let mut means = [0.0f32; 3];
    for y in 0..img.height() {
        for x in 0..img.width() {
            let px = img.pixel(y, x);
            for c in 0..3 {
                means[c] += px[c];
            }
        }
    }
    let n = (img.height() * img.width()) as f32;
    for m in &mut means {
        *m /= n;
    }
    let mut data = img.data().clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            for c in 0..3 {
                data[[y, x, c]] = (data[[y, x, c]] - means[c]) * factor + means[c];
            }
        }
    }
    Image::from_clamped(data)
}

fn brightness(img: &Image, delta: f32) -> Image {
    let mut data = img.data().clone();
    for v in data.iter_mut() {
        *v += delta;
    }
    Image::from_clamped(data)
}
