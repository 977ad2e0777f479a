//! Lossless 8-bit RGB storage (PNG) and the in-memory JPEG round trip used
//! by the jpeg-compression corruption.

use super::Image;
use crate::{Error, Result};
use image::codecs::jpeg::JpegEncoder;
use image::{ExtendedColorType, ImageEncoder, ImageReader, RgbImage};
use ndarray::Array3;
use std::io::Cursor;
use std::path::Path;

pub(crate) fn to_u8(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub(crate) fn image_to_rgb8(img: &Image) -> RgbImage {
    let (h, w) = (img.height(), img.width());
    let mut out = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = img.pixel(y, x);
            out.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([to_u8(px[0]), to_u8(px[1]), to_u8(px[2])]),
            );
        }
    }
    out
}

pub(crate) fn rgb8_to_image(rgb: &RgbImage) -> Image {
    let (w, h) = rgb.dimensions();
    let mut data = Array3::zeros((h as usize, w as usize, 3));
    for y in 0..h {
        for x in 0..w {
            let px = rgb.get_pixel(x, y);
            for c in 0..3 {
                data[[y as usize, x as usize, c]] = px.0[c] as f32 / 255.0;
            }
        }
    }
    Image::from_clamped(data)
}

/// Writes `img` as an 8-bit RGB PNG.
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    image_to_rgb8(img)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Codec {
            path: path.to_owned(),
            source,
        })
}

/// Loads any raster the `image` crate can decode, converted to 8-bit RGB.
pub fn load_png(path: &Path) -> Result<Image> {
    let reader = ImageReader::open(path).map_err(|source| Error::io(path, source))?;
    let decoded = reader.decode().map_err(|source| Error::Codec {
        path: path.to_owned(),
        source,
    })?;
    Ok(rgb8_to_image(&decoded.to_rgb8()))
}

/// Encodes to JPEG at the given quality and decodes back. Quality must be
/// in 1..=100.
pub fn jpeg_roundtrip(img: &Image, quality: u8) -> Result<Image> {
    if !(1..=100).contains(&quality) {
        return Err(Error::invalid(format!("jpeg quality {quality} not in 1..=100")));
    }
    let rgb = image_to_rgb8(img);
    let mut buf = Vec::new();
    let encoder = JpegEncoder::new_with_quality(Cursor::new(&mut buf), quality);
    encoder
        .write_image(
            rgb.as_raw(),
            rgb.width(),
            rgb.height(),
            ExtendedColorType::Rgb8,
        )
        .map_err(|source| Error::Codec {
            path: "<memory>".into(),
            source,
        })?;
    let decoded = image::load_from_memory(&buf).map_err(|source| Error::Codec {
        path: "<memory>".into(),
        source,
    })?;
    Ok(rgb8_to_image(&decoded.to_rgb8()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_lossless_on_the_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        // Quantize first so the grid aligns byte-exactly.
        let img = rgb8_to_image(&image_to_rgb8(&super::super::synth::synth_image(20, 14, 3)));
        save_png(&img, &path).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn jpeg_degrades_but_stays_in_range() {
        let img = super::super::synth::synth_image(32, 32, 8);
        let out = jpeg_roundtrip(&img, 10).unwrap();
        assert_eq!(out.height(), 32);
        assert!(out.max_abs_diff(&img) > 0.0);
        assert!(jpeg_roundtrip(&img, 0).is_err());
    }

    #[test]
    fn u8_quantization_is_stable() {
        for k in 0..=255u32 {
            let v = k as f32 / 255.0;
            assert_eq!(to_u8(v) as u32, k);
        }
    }
}
