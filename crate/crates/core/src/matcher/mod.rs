//! Classical coarse-to-fine stereo matcher.
//!
//! Zero-mean normalized cross-correlation over square windows, searched
//! exhaustively at the coarsest pyramid level and within a small radius of the
//! upsampled estimate at every finer level. Left and right disparity maps are
//! both computed at full resolution and cross-checked.

pub mod colormap;
pub mod io;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraRig;
use crate::grid::DisparityMap;

pub use colormap::{compose_grid, render_colormap};
pub use io::{read_disparity_file, write_disparity_file, DisparityFormat};

/// Windows whose intensity standard deviation falls below this carry no texture.
const MIN_WINDOW_STD: f32 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub pyramid_levels: usize,
    pub window_radius: usize,
    pub search_radius_per_level: usize,
    pub max_disparity: f64,
    pub lr_consistency_tol: f64,
    pub subpixel: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            pyramid_levels: 3,
            window_radius: 4,
            search_radius_per_level: 4,
            max_disparity: 256.0,
            lr_consistency_tol: 1.0,
            subpixel: true,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self, rig: Option<&CameraRig>) -> Result<()> {
        if self.pyramid_levels < 1 {
            return Err(Error::Config("pyramid_levels must be at least 1".into()));
        }
        if self.window_radius < 1 {
            return Err(Error::Config("window_radius must be at least 1".into()));
        }
        if !(self.max_disparity.is_finite() && self.max_disparity >= 1.0) {
            return Err(Error::Config(format!("max_disparity must be >= 1, got {}", self.max_disparity)));
        }
        if let Some(rig) = rig {
            if self.max_disparity > rig.max_disparity {
                return Err(Error::Config(format!(
                    "matcher max_disparity {} exceeds the rig cap {}",
                    self.max_disparity, rig.max_disparity
                )));
            }
        }
        if self.lr_consistency_tol.is_nan() || self.lr_consistency_tol < 0.0 {
            return Err(Error::Config("lr_consistency_tol must be non-negative".into()));
        }
        Ok(())
    }
}

/// Everything the matcher knows about a pair, before geometric masking.
#[derive(Debug, Clone)]
pub struct MatchOutput {
    /// Left-view disparity; valid where consistent and inside `(0, max_disparity]`.
    pub disparity: DisparityMap,
    /// Raw left-view disparity, including zero shifts.
    pub raw: Vec<f32>,
    /// Textured and left-right consistent.
    pub consistent: Vec<bool>,
}

/// Matches a rectified pair and returns the left-view disparity map.
pub fn match_pair(left: &RgbImage, right: &RgbImage, cfg: &MatchConfig) -> Result<DisparityMap> {
    Ok(match_pair_detailed(left, right, cfg)?.disparity)
}

pub fn match_pair_detailed(left: &RgbImage, right: &RgbImage, cfg: &MatchConfig) -> Result<MatchOutput> {
    cfg.validate(None)?;
    if left.dimensions() != right.dimensions() {
        let d = |i: &RgbImage| (i.width() as usize, i.height() as usize);
        return Err(Error::DimensionMismatch {
            expected: d(left),
            actual: d(right),
        });
    }
    let left = Gray::from_rgb(left);
    let right = Gray::from_rgb(right);
    let (w, h) = (left.width, left.height);

    let left_pyr = pyramid(left, cfg.pyramid_levels, cfg.window_radius);
    let right_pyr = pyramid(right, cfg.pyramid_levels, cfg.window_radius);

    let left_view = coarse_to_fine(&left_pyr, &right_pyr, Direction::LeftRef, cfg);
    let right_view = coarse_to_fine(&right_pyr, &left_pyr, Direction::RightRef, cfg);

    let tol = cfg.lr_consistency_tol as f32;
    let mut consistent = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let Some(dl) = left_view[i] else { continue };
            let xr = (x as f32 - dl).round();
            if xr < 0.0 || xr as usize >= w {
                continue;
            }
            if let Some(dr) = right_view[y * w + xr as usize] {
                consistent[i] = (dl - dr).abs() <= tol;
            }
        }
    }

    let raw: Vec<f32> = left_view.iter().map(|d| d.unwrap_or(0.0)).collect();
    let max = cfg.max_disparity as f32;
    let valid: Vec<bool> = raw
        .iter()
        .zip(&consistent)
        .map(|(&d, &ok)| ok && d > 0.0 && d <= max)
        .collect();
    let disparity = DisparityMap::new(w, h, raw.clone(), valid)?;
    Ok(MatchOutput {
        disparity,
        raw,
        consistent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    /// Reference pixel `x` matches target pixel `x - d`.
    LeftRef,
    /// Reference pixel `x` matches target pixel `x + d`.
    RightRef,
}

impl Direction {
    #[inline]
    fn target_x(self, x: usize, d: usize) -> Option<usize> {
        match self {
            Direction::LeftRef => x.checked_sub(d),
            Direction::RightRef => Some(x + d),
        }
    }
}

/// Grayscale image in [0, 1] plus edge-replicated padding and window statistics.
struct Gray {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Gray {
    fn from_rgb(img: &RgbImage) -> Self {
        let data = img
            .pixels()
            .map(|p| (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0)
            .collect();
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data,
        }
    }

    /// 2x box-filter downsample.
    fn downsample(&self) -> Self {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let at = |xx: usize, yy: usize| self.data[yy * self.width + xx];
                let s = at(2 * x, 2 * y) + at(2 * x + 1, 2 * y) + at(2 * x, 2 * y + 1) + at(2 * x + 1, 2 * y + 1);
                data.push(0.25 * s);
            }
        }
        Self { width: w, height: h, data }
    }
}

struct Level {
    width: usize,
    height: usize,
    radius: usize,
    /// Edge-padded copy, `(width + 2r) x (height + 2r)`.
    padded: Vec<f32>,
    mean: Vec<f32>,
    std: Vec<f32>,
}

impl Level {
    fn new(img: Gray, radius: usize) -> Self {
        let (w, h, r) = (img.width, img.height, radius);
        let pw = w + 2 * r;
        let ph = h + 2 * r;
        let mut padded = vec![0.0f32; pw * ph];
        for py in 0..ph {
            let y = py.saturating_sub(r).min(h - 1);
            for px in 0..pw {
                let x = px.saturating_sub(r).min(w - 1);
                padded[py * pw + px] = img.data[y * w + x];
            }
        }
        let n = ((2 * r + 1) * (2 * r + 1)) as f32;
        let mut mean = vec![0.0; w * h];
        let mut std = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (mut s, mut s2) = (0.0f32, 0.0f32);
                for wy in 0..=2 * r {
                    let row = &padded[(y + wy) * pw + x..(y + wy) * pw + x + 2 * r + 1];
                    for &v in row {
                        s += v;
                        s2 += v * v;
                    }
                }
                let m = s / n;
                mean[y * w + x] = m;
                std[y * w + x] = (s2 / n - m * m).max(0.0).sqrt();
            }
        }
        Self {
            width: w,
            height: h,
            radius: r,
            padded,
            mean,
            std,
        }
    }

    #[inline]
    fn textured(&self, x: usize, y: usize) -> bool {
        self.std[y * self.width + x] >= MIN_WINDOW_STD
    }

    /// ZNCC between the window at `(xa, y)` here and `(xb, y)` in `other`.
    fn zncc(&self, other: &Level, xa: usize, xb: usize, y: usize) -> f32 {
        let r = self.radius;
        let pw = self.width + 2 * r;
        let k = 2 * r + 1;
        let mut s = 0.0f32;
        for wy in 0..k {
            let base = (y + wy) * pw;
            let a = &self.padded[base + xa..base + xa + k];
            let b = &other.padded[base + xb..base + xb + k];
            s += a.iter().zip(b).map(|(p, q)| p * q).sum::<f32>();
        }
        let n = (k * k) as f32;
        let ia = y * self.width + xa;
        let ib = y * other.width + xb;
        let denom = self.std[ia] * other.std[ib];
        if denom < MIN_WINDOW_STD * MIN_WINDOW_STD {
            return -1.0;
        }
        (s / n - self.mean[ia] * other.mean[ib]) / denom
    }
}

fn pyramid(base: Gray, levels: usize, radius: usize) -> Vec<Level> {
    let mut grays = vec![base];
    while grays.len() < levels {
        let last = grays.last().expect("non-empty");
        if last.width / 2 < 2 * radius + 1 || last.height / 2 < 1 {
            break;
        }
        let next = last.downsample();
        grays.push(next);
    }
    grays.into_iter().map(|g| Level::new(g, radius)).collect()
}

/// Disparity per reference pixel at full resolution, `None` where nothing matched.
fn coarse_to_fine(reference: &[Level], target: &[Level], dir: Direction, cfg: &MatchConfig) -> Vec<Option<f32>> {
    let top = reference.len() - 1;
    let mut prev: Option<(usize, Vec<Option<f32>>)> = None;
    for lvl in (0..=top).rev() {
        let (a, b) = (&reference[lvl], &target[lvl]);
        let scale = (1usize << lvl) as f64;
        let max_d = ((cfg.max_disparity / scale).floor() as usize).min(a.width - 1);
        let rows: Vec<Vec<Option<f32>>> = (0..a.height)
            .into_par_iter()
            .map(|y| {
                (0..a.width)
                    .map(|x| {
                        if !a.textured(x, y) {
                            return None;
                        }
                        let guess = prev.as_ref().and_then(|(pw, pd)| {
                            let ph = pd.len() / pw;
                            let (px, py) = ((x / 2).min(pw - 1), (y / 2).min(ph - 1));
                            pd[py * pw + px]
                        });
                        let (lo, hi) = match guess {
                            Some(d) => {
                                let c = (2.0 * d).round() as isize;
                                let r = cfg.search_radius_per_level as isize;
                                ((c - r).max(0) as usize, ((c + r).max(0) as usize).min(max_d))
                            }
                            None => (0, max_d),
                        };
                        best_disparity(a, b, x, y, lo, hi, dir, cfg.subpixel)
                    })
                    .collect()
            })
            .collect();
        prev = Some((a.width, rows.into_iter().flatten().collect()));
    }
    prev.expect("at least one level").1
}

/// Highest-ZNCC disparity in `[lo, hi]`; ties go to the smaller disparity.
#[allow(clippy::too_many_arguments)]
fn best_disparity(a: &Level, b: &Level, x: usize, y: usize, lo: usize, hi: usize, dir: Direction, subpixel: bool) -> Option<f32> {
    let mut best: Option<(usize, f32)> = None;
    let score = |d: usize| -> Option<f32> {
        let xb = dir.target_x(x, d)?;
        (xb < b.width).then(|| a.zncc(b, x, xb, y))
    };
    for d in lo..=hi {
        if let Some(s) = score(d) {
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((d, s));
            }
        }
    }
    let (d, s0) = best?;
    if !s0.is_finite() || s0 <= -1.0 {
        return None;
    }
    let mut disp = d as f32;
    if subpixel && d > lo && d < hi {
        if let (Some(sm), Some(sp)) = (score(d - 1), score(d + 1)) {
            let denom = sm - 2.0 * s0 + sp;
            if denom < 0.0 {
                let offset = 0.5 * (sm - sp) / denom;
                disp += offset.clamp(-0.5, 0.5);
            }
        }
    }
    Some(disp)
}
