use serde::{Deserialize, Serialize};

use crate::patch::Patch;

/// Colour spaces available to stain augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Lab,
    Hsv,
    Hed,
}

impl ColorSpace {
    pub const ALL: [ColorSpace; 3] = [ColorSpace::Lab, ColorSpace::Hsv, ColorSpace::Hed];

    pub fn index(self) -> usize {
        match self {
            ColorSpace::Lab => 0,
            ColorSpace::Hsv => 1,
            ColorSpace::Hed => 2,
        }
    }
}

/// Unit-normalised later; rows are haematoxylin, eosin and DAB.
pub const STAIN_VECTORS: [[f64; 3]; 3] = [[0.65, 0.70, 0.29], [0.07, 0.99, 0.11], [0.27, 0.57, 0.78]];

/// Optical-density floor applied to RGB before taking logarithms.
pub const HED_OD_FLOOR: f64 = 1e-6;

// sRGB (D65) to XYZ.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

const LAB_DELTA: f64 = 6.0 / 29.0;

fn white_point() -> [f64; 3] {
    // Row sums, so that RGB (1,1,1) maps exactly onto the white point.
    RGB_TO_XYZ.map(|row| row.iter().sum())
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

// Row vector times matrix.
fn vec_mat(v: [f64; 3], m: &[[f64; 3]; 3]) -> [f64; 3] {
    [
        v[0] * m[0][0] + v[1] * m[1][0] + v[2] * m[2][0],
        v[0] * m[0][1] + v[1] * m[1][1] + v[2] * m[2][1],
        v[0] * m[0][2] + v[1] * m[1][2] + v[2] * m[2][2],
    ]
}

/// Inverse of a 3x3 matrix by cofactor expansion. Returns `None` when singular.
pub fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 2, 1, 2), -c(1, 2, 0, 2), c(1, 2, 0, 1)],
        [-c(0, 2, 1, 2), c(0, 2, 0, 2), -c(0, 2, 0, 1)],
        [c(0, 1, 1, 2), -c(0, 1, 0, 2), c(0, 1, 0, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    if det.abs() < 1e-300 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = cof[j][i] / det;
        }
    }
    Some(inv)
}

fn srgb_decode(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn srgb_encode(l: f64) -> f64 {
    if l <= 0.003_130_8 {
        12.92 * l
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > LAB_DELTA.powi(3) {
        t.cbrt()
    } else {
        t / (3.0 * LAB_DELTA * LAB_DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(u: f64) -> f64 {
    if u > LAB_DELTA {
        u.powi(3)
    } else {
        3.0 * LAB_DELTA * LAB_DELTA * (u - 4.0 / 29.0)
    }
}

pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_decode);
    let xyz = mat_vec(&RGB_TO_XYZ, lin);
    let w = white_point();
    let fx = lab_f(xyz[0] / w[0]);
    let fy = lab_f(xyz[1] / w[1]);
    let fz = lab_f(xyz[2] / w[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn lab_to_rgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let w = white_point();
    let xyz = [w[0] * lab_f_inv(fx), w[1] * lab_f_inv(fy), w[2] * lab_f_inv(fz)];
    let inv = invert3(&RGB_TO_XYZ).expect("sRGB matrix is invertible");
    mat_vec(&inv, xyz).map(srgb_encode)
}

/// Hexcone HSV with hue scaled to `[0, 1)`.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max <= 0.0 { 0.0 } else { delta / max };
    [h.rem_euclid(1.0), s, max]
}

/// Inverse of [`rgb_to_hsv`]. Hue wraps modulo 1; saturation and value are
/// clamped to `[0, 1]`.
pub fn hsv_to_rgb(hsv: [f64; 3]) -> [f64; 3] {
    let h = hsv[0].rem_euclid(1.0) * 6.0;
    let s = hsv[1].clamp(0.0, 1.0);
    let v = hsv[2].clamp(0.0, 1.0);
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Stain matrix with unit-norm rows (H, E, DAB), mapping stain
/// concentrations to optical density.
pub fn rgb_from_hed() -> [[f64; 3]; 3] {
    STAIN_VECTORS.map(|row| {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.map(|v| v / n)
    })
}

pub fn hed_from_rgb() -> [[f64; 3]; 3] {
    invert3(&rgb_from_hed()).expect("stain matrix is invertible")
}

pub fn rgb_to_hed(rgb: [f64; 3]) -> [f64; 3] {
    let od = rgb.map(|c| -c.max(HED_OD_FLOOR).log10());
    vec_mat(od, &hed_from_rgb())
}

pub fn hed_to_rgb(hed: [f64; 3]) -> [f64; 3] {
    let od = vec_mat(hed, &rgb_from_hed());
    od.map(|v| 10f64.powf(-v))
}

/// Converts every pixel of `patch` into `space`.
pub fn convert(patch: &Patch, space: ColorSpace) -> Vec<[f64; 3]> {
    let f = forward(space);
    patch
        .data()
        .chunks_exact(3)
        .map(|c| f([c[0], c[1], c[2]]))
        .collect()
}

/// Maps values in `space` back to (unclamped) sRGB.
pub fn convert_back(values: &[[f64; 3]], space: ColorSpace) -> Vec<[f64; 3]> {
    let f = backward(space);
    values.iter().map(|&v| f(v)).collect()
}

/// Converts back and wraps the result into a patch shaped like `like`.
pub fn to_patch(values: &[[f64; 3]], space: ColorSpace, like: &Patch) -> Patch {
    like.with_triples(&convert_back(values, space))
}

fn forward(space: ColorSpace) -> fn([f64; 3]) -> [f64; 3] {
    match space {
        ColorSpace::Lab => rgb_to_lab,
        ColorSpace::Hsv => rgb_to_hsv,
        ColorSpace::Hed => rgb_to_hed,
    }
}

fn backward(space: ColorSpace) -> fn([f64; 3]) -> [f64; 3] {
    match space {
        ColorSpace::Lab => lab_to_rgb,
        ColorSpace::Hsv => hsv_to_rgb,
        ColorSpace::Hed => hed_to_rgb,
    }
}
