//! sRGB <-> CIELAB conversion and the CIEDE2000 color difference.
//!
//! Conversion uses the IEC 61966-2-1 sRGB transfer function and the D65
//! white point (Xn 0.95047, Yn 1.0, Zn 1.08883). CIEDE2000 is implemented
//! with parametric factors kL = kC = kH = 1.

use super::{Image, LabImage, ShiftSpec};
use ndarray::Array3;

const XN: f64 = 0.95047;
const YN: f64 = 1.0;
const ZN: f64 = 1.08883;

// 6/29 cubed and friends for the L* companding split.
const EPS: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > EPS {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    let t3 = t * t * t;
    if t3 > EPS {
        t3
    } else {
        (116.0 * t - 16.0) / KAPPA
    }
}

pub(crate) fn rgb_px_to_lab(rgb: [f32; 3]) -> [f64; 3] {
    let r = srgb_to_linear(rgb[0] as f64);
    let g = srgb_to_linear(rgb[1] as f64);
    let b = srgb_to_linear(rgb[2] as f64);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let fx = lab_f(x / XN);
    let fy = lab_f(y / YN);
    let fz = lab_f(z / ZN);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub(crate) fn lab_px_to_rgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let x = XN * lab_f_inv(fx);
    let y = YN * lab_f_inv(fy);
    let z = ZN * lab_f_inv(fz);
    let r = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    let g = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    let b = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
    [
        linear_to_srgb(r.clamp(0.0, 1.0)),
        linear_to_srgb(g.clamp(0.0, 1.0)),
        linear_to_srgb(b.clamp(0.0, 1.0)),
    ]
}

/// Converts unit-interval sRGB to CIELAB (D65). Total function.
pub fn srgb_to_lab(img: &Image) -> LabImage {
    let (h, w) = (img.height(), img.width());
    let mut data = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let lab = rgb_px_to_lab(img.pixel(y, x));
            for c in 0..3 {
                data[[y, x, c]] = lab[c] as f32;
            }
        }
    }
    LabImage { data }
}

/// Converts CIELAB back to sRGB, clamping out-of-gamut results into `[0, 1]`.
pub fn lab_to_srgb(img: &LabImage) -> Image {
    let (h, w) = (img.height(), img.width());
    let mut data = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let px = img.pixel(y, x);
            let rgb = lab_px_to_rgb([px[0] as f64, px[1] as f64, px[2] as f64]);
            for c in 0..3 {
                data[[y, x, c]] = rgb[c].clamp(0.0, 1.0) as f32;
            }
        }
    }
    Image::from_clamped(data)
}

/// Shifts every pixel by (dL, da, db) in LAB and converts back, clamping
/// to the sRGB gamut.
pub fn color_shift_lab(img: &Image, shift: ShiftSpec) -> Image {
    let mut lab = srgb_to_lab(img);
    for y in 0..lab.height() {
        for x in 0..lab.width() {
            lab.data[[y, x, 0]] += shift.dl;
            lab.data[[y, x, 1]] += shift.da;
            lab.data[[y, x, 2]] += shift.db;
        }
    }
    lab_to_srgb(&lab)
}

/// CIEDE2000 color difference between two Lab triples (kL = kC = kH = 1).
///
/// Symmetric, nonnegative, and zero exactly on identical inputs.
pub fn ciede2000(lab1: [f64; 3], lab2: [f64; 3]) -> f64 {
    if lab1 == lab2 {
        return 0.0;
    }
    let (l1, a1, b1) = (lab1[0], lab1[1], lab1[2]);
    let (l2, a2, b2) = (lab2[0], lab2[1], lab2[2]);

    let c1 = a1.hypot(b1);
    let c2 = a2.hypot(b2);
    let c_mean = (c1 + c2) / 2.0;
    let c7 = c_mean.powi(7);
    let g = 0.5 * (1.0 - (c7 / (c7 + 25.0f64.powi(7))).sqrt());

    let a1p = (1.0 + g) * a1;
    let a2p = (1.0 + g) * a2;
    let c1p = a1p.hypot(b1);
    let c2p = a2p.hypot(b2);

    let h1p = hue_deg(a1p, b1);
    let h2p = hue_deg(a2p, b2);

    let dl = l2 - l1;
    let dc = c2p - c1p;
    let dhp = if c1p * c2p == 0.0 {
        0.0
    } else {
        let d = h2p - h1p;
        if d.abs() <= 180.0 {
            d
        } else if d > 180.0 {
            d - 360.0
        } else {
            d + 360.0
        }
    };
    let dh_big = 2.0 * (c1p * c2p).sqrt() * (dhp / 2.0).to_radians().sin();

    let l_mean = (l1 + l2) / 2.0;
    let cp_mean = (c1p + c2p) / 2.0;
    let h_mean = if c1p * c2p == 0.0 {
        h1p + h2p
    } else {
        let sum = h1p + h2p;
        if (h1p - h2p).abs() <= 180.0 {
            sum / 2.0
        } else if sum < 360.0 {
            (sum + 360.0) / 2.0
        } else {
            (sum - 360.0) / 2.0
        }
    };

    let t = 1.0 - 0.17 * (h_mean - 30.0).to_radians().cos()
        + 0.24 * (2.0 * h_mean).to_radians().cos()
        + 0.32 * (3.0 * h_mean + 6.0).to_radians().cos()
        - 0.20 * (4.0 * h_mean - 63.0).to_radians().cos();

    let dtheta = 30.0 * (-((h_mean - 275.0) / 25.0).powi(2)).exp();
    let cp7 = cp_mean.powi(7);
    let rc = 2.0 * (cp7 / (cp7 + 25.0f64.powi(7))).sqrt();
    let rt = -(2.0 * dtheta).to_radians().sin() * rc;

    let lm50 = (l_mean - 50.0).powi(2);
    let sl = 1.0 + 0.015 * lm50 / (20.0 + lm50).sqrt();
    let sc = 1.0 + 0.045 * cp_mean;
    let sh = 1.0 + 0.015 * cp_mean * t;

    let tl = dl / sl;
    let tc = dc / sc;
    let th = dh_big / sh;
    (tl * tl + tc * tc + th * th + rt * tc * th).sqrt()
}

fn hue_deg(ap: f64, b: f64) -> f64 {
    if ap == 0.0 && b == 0.0 {
        return 0.0;
    }
    let h = b.atan2(ap).to_degrees();
    if h < 0.0 {
        h + 360.0
    } else {
        h
    }
}

/// Mean per-pixel CIEDE2000 between two equally sized images.
pub fn mean_ciede2000(a: &Image, b: &Image) -> f64 {
    assert_eq!(a.height(), b.height());
    assert_eq!(a.width(), b.width());
    let la = srgb_to_lab(a);
    let lb = srgb_to_lab(b);
    let mut sum = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let pa = la.pixel(y, x);
            let pb = lb.pixel(y, x);
            sum += ciede2000(
                [pa[0] as f64, pa[1] as f64, pa[2] as f64],
                [pb[0] as f64, pb[1] as f64, pb[2] as f64],
            );
        }
    }
    sum / (a.height() * a.width()) as f64
}
