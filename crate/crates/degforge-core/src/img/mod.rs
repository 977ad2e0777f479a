//! Deterministic image primitives: the universal currency of the pipeline.
//!
//! An [`Image`] is an H×W×3 array of finite `f32` values in `[0, 1]`,
//! interpreted as sRGB. Construction validates the invariant; every operation
//! in this module preserves it.

mod color;
mod degrade;
mod io;
mod metrics;
mod resample;
pub mod synth;

pub use color::{ciede2000, color_shift_lab, lab_to_srgb, mean_ciede2000, srgb_to_lab};
pub use degrade::{apply_degradation, Degradation, DegradationKind};
pub use io::{jpeg_roundtrip, load_png, save_png};
pub use metrics::{mse, psnr, ssim, PSNR_CAP_DB};
pub use resample::bicubic_resample;

use crate::{Error, Result};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

/// 3-channel raster in unit-interval sRGB.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f32>,
}

impl Image {
    /// Wraps an (H, W, 3) array, validating dimensions and value range.
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::invalid(format!("image dims {h}x{w} must be >= 1")));
        }
        if c != 3 {
            return Err(Error::invalid(format!("expected 3 channels, got {c}")));
        }
        for &v in &data {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "channel value {v} outside the unit interval"
                )));
            }
        }
        Ok(Image { data })
    }

    /// Wraps an (H, W, 3) array of arithmetic results, clamping into `[0, 1]`.
    ///
    /// Panics on non-finite values: those indicate a bug in the producing
    /// operation, not bad caller input.
    pub(crate) fn from_clamped(mut data: Array3<f32>) -> Self {
        assert_eq!(data.dim().2, 3);
        assert!(data.dim().0 >= 1 && data.dim().1 >= 1);
        for v in data.iter_mut() {
            assert!(v.is_finite(), "non-finite pixel value");
            *v = v.clamp(0.0, 1.0);
        }
        Image { data }
    }

    /// Uniform image filled with one color.
    pub fn constant(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let mut data = Array3::zeros((height.max(1), width.max(1), 3));
        for mut px in data.rows_mut() {
            px[0] = rgb[0];
            px[1] = rgb[1];
            px[2] = rgb[2];
        }
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dims must be >= 1"));
        }
        Image::new(data)
    }

    /// Builds an image pixel-by-pixel, clamping `f`'s output into `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Array3::zeros((height, width, 3));
        for y in 0..height {
            for x in 0..width {
                let px = f(y, x);
                for c in 0..3 {
                    data[[y, x, c]] = px[c];
                }
            }
        }
        Image::from_clamped(data)
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [
            self.data[[y, x, 0]],
            self.data[[y, x, 1]],
            self.data[[y, x, 2]],
        ]
    }

    /// Extracts a `size`×`size` window with its top-left corner at (top, left).
    pub fn crop(&self, top: usize, left: usize, size: usize) -> Result<Image> {
        if top + size > self.height() || left + size > self.width() {
            return Err(Error::invalid(format!(
                "crop {size} at ({top}, {left}) exceeds {}x{}",
                self.height(),
                self.width()
            )));
        }
        let view = self
            .data
            .slice(ndarray::s![top..top + size, left..left + size, ..]);
        Ok(Image {
            data: view.to_owned(),
        })
    }

    /// Per-pixel mean absolute difference; handy in tests.
    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        assert_eq!(self.data.dim(), other.data.dim());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// CIE L*a*b* raster produced by [`srgb_to_lab`].
///
/// Channel 0 is L* in `[0, 100]` for any valid sRGB source; a* and b* are
/// unbounded chroma axes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    pub(crate) data: Array3<f32>,
}

impl LabImage {
    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [
            self.data[[y, x, 0]],
            self.data[[y, x, 1]],
            self.data[[y, x, 2]],
        ]
    }
}

/// Additive offset in LAB units; the all-zero shift is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub dl: f32,
    pub da: f32,
    pub db: f32,
}

impl ShiftSpec {
    pub fn new(dl: f32, da: f32, db: f32) -> Self {
        ShiftSpec { dl, da, db }
    }

    pub fn is_zero(&self) -> bool {
        self.dl == 0.0 && self.da == 0.0 && self.db == 0.0
    }

    pub fn magnitude(&self) -> f32 {
        (self.dl * self.dl + self.da * self.da + self.db * self.db).sqrt()
    }
}

/// All full `size`×`size` crops on a regular stride grid, row-major.
///
/// Count is `(floor((H-size)/stride)+1) * (floor((W-size)/stride)+1)`.
pub fn crop_grid(img: &Image, size: usize, stride: usize) -> Result<Vec<Image>> {
    if size == 0 || stride == 0 {
        return Err(Error::invalid("crop size and stride must be >= 1"));
    }
    if size > img.height() || size > img.width() {
        return Err(Error::invalid(format!(
            "crop size {size} exceeds image dims {}x{}",
            img.height(),
            img.width()
        )));
    }
    let ny = (img.height() - size) / stride + 1;
    let nx = (img.width() - size) / stride + 1;
    let mut crops = Vec::with_capacity(ny * nx);
    for iy in 0..ny {
        for ix in 0..nx {
            crops.push(img.crop(iy * stride, ix * stride, size)?);
        }
    }
    Ok(crops)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_validates_range() {
        let mut data = Array3::zeros((2, 2, 3));
        data[[0, 0, 0]] = 1.5;
        assert!(Image::new(data).is_err());
        let mut data = Array3::zeros((2, 2, 3));
        data[[1, 1, 2]] = f32::NAN;
        assert!(Image::new(data).is_err());
        assert!(Image::new(Array3::zeros((0, 4, 3))).is_err());
        assert!(Image::new(Array3::zeros((4, 4, 4))).is_err());
        assert!(Image::new(Array3::zeros((4, 4, 3))).is_ok());
    }

    #[test]
    fn crop_grid_counts() {
        let img = Image::constant(128, 128, [0.5; 3]).unwrap();
        assert_eq!(crop_grid(&img, 64, 64).unwrap().len(), 4);

        let img = Image::constant(64, 64, [0.5; 3]).unwrap();
        let crops = crop_grid(&img, 64, 1).unwrap();
        assert_eq!(crops.len(), 1);
        assert_eq!(crops[0], img);

        let img = Image::constant(100, 70, [0.5; 3]).unwrap();
        let crops = crop_grid(&img, 32, 16).unwrap();
        assert_eq!(crops.len(), 15); // 5 x 3
    }

    #[test]
    fn crop_grid_rejects_oversized() {
        let img = Image::constant(16, 16, [0.5; 3]).unwrap();
        assert!(crop_grid(&img, 17, 1).is_err());
    }

    #[test]
    fn crop_grid_is_row_major() {
        let img = Image::from_fn(4, 4, |y, x| [(y * 4 + x) as f32 / 16.0, 0.0, 0.0]);
        let crops = crop_grid(&img, 2, 2).unwrap();
        assert_eq!(crops.len(), 4);
        assert_eq!(crops[0].pixel(0, 0)[0], 0.0);
        assert_eq!(crops[1].pixel(0, 0)[0], 2.0 / 16.0);
        assert_eq!(crops[2].pixel(0, 0)[0], 8.0 / 16.0);
        assert_eq!(crops[3].pixel(0, 0)[0], 10.0 / 16.0);
    }
}
