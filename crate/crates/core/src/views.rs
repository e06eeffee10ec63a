//! Multi-crop view generation: Inception-style random resized crops,
//! overlap-constrained global/local pairs, the 1 teacher + 1 student + N local
//! layout, and random token masks.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patch::Patch;

const CROP_ATTEMPTS: usize = 10;
const OVERLAP_ATTEMPTS: usize = 100;

/// Axis-aligned crop rectangle in source pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl CropRect {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn intersection_area(&self, other: &CropRect) -> usize {
        let ix = overlap_1d(self.x, self.w, other.x, other.w);
        let iy = overlap_1d(self.y, self.h, other.y, other.h);
        ix * iy
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w >= 1 && self.h >= 1 && self.x + self.w <= width && self.y + self.h <= height
    }
}

fn overlap_1d(a: usize, la: usize, b: usize, lb: usize) -> usize {
    let lo = a.max(b);
    let hi = (a + la).min(b + lb);
    hi.saturating_sub(lo)
}

/// Crop sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropConfig {
    pub out_size: usize,
    /// Fraction of the source area.
    pub area_range: (f64, f64),
    /// Width / height.
    pub aspect_range: (f64, f64),
}

impl CropConfig {
    pub fn global() -> Self {
        Self {
            out_size: 224,
            area_range: (0.3, 1.0),
            aspect_range: (3.0 / 4.0, 4.0 / 3.0),
        }
    }

    pub fn local() -> Self {
        Self {
            out_size: 96,
            area_range: (0.05, 0.3),
            aspect_range: (3.0 / 4.0, 4.0 / 3.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.area_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!("area_range {:?} must satisfy 0 < lo <= hi <= 1", self.area_range)));
        }
        let (alo, ahi) = self.aspect_range;
        if !(alo > 0.0 && alo <= ahi && ahi.is_finite()) {
            return Err(Error::invalid(format!("bad aspect_range {:?}", self.aspect_range)));
        }
        if self.out_size == 0 {
            return Err(Error::invalid("out_size must be positive"));
        }
        Ok(())
    }
}

fn check_source(patch: &Patch) -> Result<()> {
    if patch.width() <= 8 || patch.height() <= 8 {
        return Err(Error::invalid(format!(
            "crop source must be larger than 8x8, got {}x{}",
            patch.width(),
            patch.height()
        )));
    }
    Ok(())
}

/// Samples a crop rectangle: up to 10 attempts with a uniform area fraction
/// and log-uniform aspect ratio; falls back to the largest centred crop whose
/// aspect ratio lies in range.
pub fn sample_crop_rect(width: usize, height: usize, cfg: &CropConfig, rng: &mut impl Rng) -> CropRect {
    let total = (width * height) as f64;
    let (lo, hi) = cfg.area_range;
    let (log_lo, log_hi) = (cfg.aspect_range.0.ln(), cfg.aspect_range.1.ln());
    for _ in 0..CROP_ATTEMPTS {
        let target = total * (lo + (hi - lo) * rng.random::<f64>());
        let ratio = (log_lo + (log_hi - log_lo) * rng.random::<f64>()).exp();
        let w = (target * ratio).sqrt().round() as usize;
        let h = (target / ratio).sqrt().round() as usize;
        let frac = (w * h) as f64 / total;
        if w >= 1 && h >= 1 && w <= width && h <= height && frac >= lo && frac <= hi {
            let x = rng.random_range(0..=width - w);
            let y = rng.random_range(0..=height - h);
            return CropRect { x, y, w, h };
        }
    }
    let in_ratio = width as f64 / height as f64;
    let (w, h) = if in_ratio < cfg.aspect_range.0 {
        (width, ((width as f64 / cfg.aspect_range.0).round() as usize).clamp(1, height))
    } else if in_ratio > cfg.aspect_range.1 {
        (((height as f64 * cfg.aspect_range.1).round() as usize).clamp(1, width), height)
    } else {
        (width, height)
    };
    CropRect {
        x: (width - w) / 2,
        y: (height - h) / 2,
        w,
        h,
    }
}

/// Bilinear resize of `rect` to `out_w x out_h` using half-pixel centres.
pub fn resize_bilinear(patch: &Patch, rect: &CropRect, out_w: usize, out_h: usize) -> Patch {
    let src = patch.data();
    let sw = patch.width();
    let sample_axis = |o: usize, start: usize, len: usize, out_len: usize| {
        let s = (o as f64 + 0.5) * len as f64 / out_len as f64 - 0.5;
        let s = s.clamp(0.0, (len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (start + i0, start + i1, s - i0 as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|ox| sample_axis(ox, rect.x, rect.w, out_w)).collect();
    let mut out = Vec::with_capacity(out_w * out_h * 3);
    for oy in 0..out_h {
        let (y0, y1, fy) = sample_axis(oy, rect.y, rect.h, out_h);
        for &(x0, x1, fx) in &cols {
            for c in 0..3 {
                let p00 = src[(y0 * sw + x0) * 3 + c];
                let p01 = src[(y0 * sw + x1) * 3 + c];
                let p10 = src[(y1 * sw + x0) * 3 + c];
                let p11 = src[(y1 * sw + x1) * 3 + c];
                let top = p00 + (p01 - p00) * fx;
                let bot = p10 + (p11 - p10) * fx;
                out.push(top + (bot - top) * fy);
            }
        }
    }
    let mut view = patch.resized_like(out_w, out_h, out);
    view.origin = (patch.origin.0 + rect.x as i64, patch.origin.1 + rect.y as i64);
    view
}

/// Inception-style random resized crop to a square `out_size` view.
pub fn random_resized_crop(patch: &Patch, cfg: &CropConfig, rng: &mut impl Rng) -> Result<(CropRect, Patch)> {
    check_source(patch)?;
    cfg.validate()?;
    let rect = sample_crop_rect(patch.width(), patch.height(), cfg, rng);
    Ok((rect, resize_bilinear(patch, &rect, cfg.out_size, cfg.out_size)))
}

/// A global crop and a local crop satisfying the overlap constraint.
#[derive(Debug, Clone)]
pub struct OverlapPair {
    pub global_rect: CropRect,
    pub local_rect: CropRect,
    pub global: Patch,
    pub local: Patch,
}

fn check_overlap_feasible(width: usize, height: usize, global: &CropConfig, local: &CropConfig, min_overlap: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&min_overlap) {
        return Err(Error::invalid(format!("min_overlap {min_overlap} outside [0, 1]")));
    }
    let total = (width * height) as f64;
    let local_max_area = local.area_range.1 * total;
    let required_area = min_overlap * global.area_range.1 * total;
    if local_max_area < required_area {
        return Err(Error::InfeasibleOverlap {
            local_max_area,
            required_area,
        });
    }
    Ok(())
}

fn satisfies(global: &CropRect, local: &CropRect, min_overlap: f64) -> bool {
    local.intersection_area(global) as f64 >= min_overlap * global.area() as f64
}

// Position along one axis that centres `len` on the global span, clamped to bounds.
fn centred_start(g_start: usize, g_len: usize, len: usize, bound: usize) -> usize {
    let centre2 = 2 * g_start + g_len; // twice the centre, kept integral
    let start = (centre2 as isize - len as isize).div_euclid(2);
    start.clamp(0, (bound - len) as isize) as usize
}

/// Deterministic fallback: grow the local rectangle if even perfect alignment
/// cannot meet the constraint, then translate it the minimal distance towards
/// the global centre that does.
fn repair_local(width: usize, height: usize, global: &CropRect, mut local: CropRect, min_overlap: f64) -> CropRect {
    let required = min_overlap * global.area() as f64;
    let best = |l: &CropRect| (l.w.min(global.w) * l.h.min(global.h)) as f64;
    if best(&local) < required {
        let (w0, h0) = (local.w as f64, local.h as f64);
        let mut s = 1.0f64;
        while best(&local) < required {
            s *= 1.01;
            local.w = ((w0 * s).ceil() as usize).min(width);
            local.h = ((h0 * s).ceil() as usize).min(height);
        }
        local.x = local.x.min(width - local.w);
        local.y = local.y.min(height - local.h);
    }
    let tx = centred_start(global.x, global.w, local.w, width) as f64;
    let ty = centred_start(global.y, global.h, local.h, height) as f64;
    let (x0, y0) = (local.x as f64, local.y as f64);
    let steps = (tx - x0).abs().max((ty - y0).abs()).ceil() as usize;
    for step in 0..=steps {
        let t = if steps == 0 { 1.0 } else { step as f64 / steps as f64 };
        let cand = CropRect {
            x: (x0 + t * (tx - x0)).round() as usize,
            y: (y0 + t * (ty - y0)).round() as usize,
            ..local
        };
        if satisfies(global, &cand, min_overlap) {
            return cand;
        }
    }
    CropRect {
        x: tx as usize,
        y: ty as usize,
        ..local
    }
}

/// Samples a local rectangle covering at least `min_overlap` of `global`'s area.
pub fn sample_overlapping_rect(
    width: usize,
    height: usize,
    global: &CropRect,
    local_cfg: &CropConfig,
    min_overlap: f64,
    rng: &mut impl Rng,
) -> CropRect {
    let mut last = sample_crop_rect(width, height, local_cfg, rng);
    if satisfies(global, &last, min_overlap) {
        return last;
    }
    for _ in 1..OVERLAP_ATTEMPTS {
        last = sample_crop_rect(width, height, local_cfg, rng);
        if satisfies(global, &last, min_overlap) {
            return last;
        }
    }
    repair_local(width, height, global, last, min_overlap)
}

/// Samples a global crop and then a local crop such that the intersection
/// covers at least `min_overlap` of the global crop's area.
pub fn overlap_crop_pair(
    patch: &Patch,
    global_cfg: &CropConfig,
    local_cfg: &CropConfig,
    min_overlap: f64,
    rng: &mut impl Rng,
) -> Result<OverlapPair> {
    check_source(patch)?;
    global_cfg.validate()?;
    local_cfg.validate()?;
    let (w, h) = (patch.width(), patch.height());
    check_overlap_feasible(w, h, global_cfg, local_cfg, min_overlap)?;
    let global_rect = sample_crop_rect(w, h, global_cfg, rng);
    let local_rect = sample_overlapping_rect(w, h, &global_rect, local_cfg, min_overlap, rng);
    Ok(OverlapPair {
        global: resize_bilinear(patch, &global_rect, global_cfg.out_size, global_cfg.out_size),
        local: resize_bilinear(patch, &local_rect, local_cfg.out_size, local_cfg.out_size),
        global_rect,
        local_rect,
    })
}

/// Multi-crop layout parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiCropConfig {
    pub global: CropConfig,
    pub local: CropConfig,
    pub n_locals: usize,
    /// Minimum fraction of the teacher crop's area each local crop must
    /// cover; 0 disables the constraint.
    pub min_overlap: f64,
}

impl Default for MultiCropConfig {
    fn default() -> Self {
        Self {
            global: CropConfig::global(),
            local: CropConfig::local(),
            n_locals: 10,
            min_overlap: 0.2,
        }
    }
}

/// One teacher global view, one student global view and the local views.
#[derive(Debug, Clone)]
pub struct MultiCropBatch {
    pub source_id: String,
    pub teacher_global: Patch,
    pub student_global: Patch,
    pub locals: Vec<Patch>,
    pub teacher_rect: CropRect,
    pub student_rect: CropRect,
    pub local_rects: Vec<CropRect>,
}

pub fn make_multicrop(patch: &Patch, cfg: &MultiCropConfig, source_id: &str, rng: &mut impl Rng) -> Result<MultiCropBatch> {
    check_source(patch)?;
    cfg.global.validate()?;
    cfg.local.validate()?;
    let (w, h) = (patch.width(), patch.height());
    check_overlap_feasible(w, h, &cfg.global, &cfg.local, cfg.min_overlap)?;
    let g = cfg.global.out_size;
    let teacher_rect = sample_crop_rect(w, h, &cfg.global, rng);
    let student_rect = sample_crop_rect(w, h, &cfg.global, rng);
    let local_rects: Vec<CropRect> = (0..cfg.n_locals)
        .map(|_| sample_overlapping_rect(w, h, &teacher_rect, &cfg.local, cfg.min_overlap, rng))
        .collect();
    let l = cfg.local.out_size;
    Ok(MultiCropBatch {
        source_id: source_id.to_string(),
        teacher_global: resize_bilinear(patch, &teacher_rect, g, g),
        student_global: resize_bilinear(patch, &student_rect, g, g),
        locals: local_rects.iter().map(|r| resize_bilinear(patch, r, l, l)).collect(),
        teacher_rect,
        student_rect,
        local_rects,
    })
}

/// Uniformly samples `round(fraction * side^2)` distinct token indices,
/// returned in ascending order.
pub fn token_mask(grid_side: usize, fraction: f64, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("mask fraction {fraction} outside [0, 1]")));
    }
    let n = grid_side * grid_side;
    let k = (fraction * n as f64).round() as usize;
    let mut idx = index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn textured(w: usize, h: usize, s: u64) -> Patch {
        let mut rng = seed::rng(s);
        Patch::from_rgb(w, h, (0..w * h * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn full_area_square_crop_is_whole_image() {
        let p = textured(64, 64, 1);
        let cfg = CropConfig { out_size: 64, area_range: (1.0, 1.0), aspect_range: (1.0, 1.0) };
        let (rect, view) = random_resized_crop(&p, &cfg, &mut seed::rng(2)).unwrap();
        assert_eq!(rect, CropRect { x: 0, y: 0, w: 64, h: 64 });
        assert!(view.max_abs_diff(&p) < 1e-15);
    }

    #[test]
    fn output_size_is_exact() {
        let p = textured(100, 77, 1);
        let mut rng = seed::rng(3);
        for cfg in [CropConfig::global(), CropConfig::local()] {
            for _ in 0..20 {
                let (rect, v) = random_resized_crop(&p, &cfg, &mut rng).unwrap();
                assert!(rect.fits(100, 77));
                assert_eq!((v.width(), v.height()), (cfg.out_size, cfg.out_size));
            }
        }
    }

    #[test]
    fn tiny_sources_rejected() {
        let p = textured(8, 8, 1);
        assert!(random_resized_crop(&p, &CropConfig::global(), &mut seed::rng(0)).is_err());
    }

    #[test]
    fn bilinear_resize_preserves_constants() {
        let p = Patch::filled(37, 29, [0.25, 0.5, 0.75]).unwrap();
        let rect = CropRect { x: 3, y: 4, w: 20, h: 11 };
        for (ow, oh) in [(7, 9), (64, 64), (1, 1)] {
            let v = resize_bilinear(&p, &rect, ow, oh);
            for px in v.data().chunks_exact(3) {
                assert!((px[0] - 0.25).abs() < 1e-15 && (px[1] - 0.5).abs() < 1e-15 && (px[2] - 0.75).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_overlap_equals_independent_crops() {
        let p = textured(64, 64, 5);
        let (g, l) = (CropConfig::global(), CropConfig::local());
        let pair = overlap_crop_pair(&p, &g, &l, 0.0, &mut seed::rng(9)).unwrap();
        let mut rng = seed::rng(9);
        let (ga, _) = random_resized_crop(&p, &g, &mut rng).unwrap();
        let (la, _) = random_resized_crop(&p, &l, &mut rng).unwrap();
        assert_eq!((pair.global_rect, pair.local_rect), (ga, la));
    }

    #[test]
    fn full_image_configs_overlap_exactly() {
        let p = textured(48, 48, 5);
        let full = CropConfig { out_size: 32, area_range: (1.0, 1.0), aspect_range: (1.0, 1.0) };
        let pair = overlap_crop_pair(&p, &full, &full, 1.0, &mut seed::rng(1)).unwrap();
        assert_eq!(pair.local_rect.intersection_area(&pair.global_rect), pair.global_rect.area());
    }

    #[test]
    fn infeasible_overlap_reports_areas() {
        let p = textured(100, 100, 5);
        let g = CropConfig::global();
        let l = CropConfig { area_range: (0.01, 0.05), ..CropConfig::local() };
        match overlap_crop_pair(&p, &g, &l, 0.2, &mut seed::rng(1)) {
            Err(Error::InfeasibleOverlap { local_max_area, required_area }) => {
                assert!((local_max_area - 500.0).abs() < 1e-9);
                assert!((required_area - 2000.0).abs() < 1e-9);
            }
            other => panic!("expected infeasible error, got {other:?}"),
        }
    }

    #[test]
    fn overlap_holds_even_under_strict_constraints() {
        // 0.6 of the global area forces the repair path often.
        let p = textured(80, 60, 5);
        let g = CropConfig { area_range: (0.2, 0.5), ..CropConfig::global() };
        let l = CropConfig { area_range: (0.05, 0.3), ..CropConfig::local() };
        let mut rng = seed::rng(4);
        for _ in 0..500 {
            let pair = overlap_crop_pair(&p, &g, &l, 0.6, &mut rng).unwrap();
            assert!(pair.local_rect.fits(80, 60));
            assert!(pair.local_rect.intersection_area(&pair.global_rect) as f64 >= 0.6 * pair.global_rect.area() as f64);
        }
    }

    #[test]
    fn multicrop_layout() {
        let p = textured(128, 128, 6);
        let cfg = MultiCropConfig::default();
        let batch = make_multicrop(&p, &cfg, "src", &mut seed::rng(1)).unwrap();
        assert_eq!(batch.locals.len(), 10);
        assert_eq!(batch.teacher_global.width(), 224);
        assert_eq!(batch.locals[0].width(), 96);
        let again = make_multicrop(&p, &cfg, "src", &mut seed::rng(1)).unwrap();
        assert_eq!(batch.local_rects, again.local_rects);
        assert_eq!(batch.student_global, again.student_global);
    }

    #[test]
    fn token_mask_counts() {
        let mut rng = seed::rng(1);
        let m = token_mask(14, 0.25, &mut rng).unwrap();
        assert_eq!(m.len(), 49);
        assert!(m.windows(2).all(|w| w[0] < w[1]) && *m.last().unwrap() < 196);
        assert!(token_mask(14, 0.0, &mut rng).unwrap().is_empty());
        assert_eq!(token_mask(14, 1.0, &mut rng).unwrap(), (0..196).collect::<Vec<_>>());
        assert!(token_mask(14, 1.5, &mut rng).is_err());
    }
}
