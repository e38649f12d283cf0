//! False-color rendering of disparity maps and side-by-side comparison grids.

use image::{Rgb, RgbImage};

use crate::grid::DisparityMap;

const LAMBDA_LO: f64 = 0.15;
const LAMBDA_HI: f64 = 0.95;

/// Cubehelix color for `t` in [0, 1]; luminance increases monotonically with `t`.
///
/// Uses start 0.5, -1.5 rotations and hue 1.0 over a sub-range of the helix
/// that never reaches black, so black stays reserved for invalid pixels.
pub fn cubehelix(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let l = LAMBDA_LO + (LAMBDA_HI - LAMBDA_LO) * t;
    let phi = 2.0 * std::f64::consts::PI * (0.5 / 3.0 - 1.5 * l);
    let amp = l * (1.0 - l) / 2.0;
    let (c, s) = (phi.cos(), phi.sin());
    let r = l + amp * (-0.14861 * c + 1.78277 * s);
    let g = l + amp * (-0.29227 * c - 0.90649 * s);
    let b = l + amp * (1.97294 * c);
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    Rgb([q(r), q(g), q(b)])
}

/// Renders valid pixels over `range` (default: the map's valid min/max); invalid pixels are black.
pub fn render_colormap(map: &DisparityMap, range: Option<(f32, f32)>) -> RgbImage {
    let (lo, hi) = range.or_else(|| map.valid_range()).unwrap_or((0.0, 1.0));
    let span = hi - lo;
    let mut img = RgbImage::new(map.width() as u32, map.height() as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        if !map.mask()[i] {
            continue;
        }
        let t = if span > 0.0 {
            f64::from((map.values()[i] - lo) / span)
        } else {
            0.5
        };
        *px = cubehelix(t);
    }
    img
}

/// Tiles images row by row with a `gap`-pixel black border; cells are sized to the largest tile.
pub fn compose_grid(rows: &[Vec<RgbImage>], gap: u32) -> RgbImage {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0) as u32;
    let cell_w = rows.iter().flatten().map(|i| i.width()).max().unwrap_or(0);
    let cell_h = rows.iter().flatten().map(|i| i.height()).max().unwrap_or(0);
    let width = cols * cell_w + (cols + 1) * gap;
    let height = rows.len() as u32 * cell_h + (rows.len() as u32 + 1) * gap;
    let mut out = RgbImage::new(width.max(1), height.max(1));
    for (r, row) in rows.iter().enumerate() {
        for (c, tile) in row.iter().enumerate() {
            let x0 = gap + c as u32 * (cell_w + gap);
            let y0 = gap + r as u32 * (cell_h + gap);
            image::imageops::replace(&mut out, tile, x0 as i64, y0 as i64);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_is_one_color() {
        let img = render_colormap(&DisparityMap::filled(5, 4, 12.0), None);
        let first = *img.get_pixel(0, 0);
        assert!(img.pixels().all(|p| *p == first));
        assert_ne!(first, Rgb([0, 0, 0]));
    }

    #[test]
    fn invalid_only_is_black() {
        let img = render_colormap(&DisparityMap::invalid(3, 3), Some((0.0, 10.0)));
        assert!(img.pixels().all(|p| *p == Rgb([0, 0, 0])));
    }

    #[test]
    fn range_endpoints_hit_colormap_ends() {
        let m = DisparityMap::new(3, 1, vec![10.0, 20.0, 15.0], vec![true; 3]).unwrap();
        let img = render_colormap(&m, Some((10.0, 20.0)));
        assert_eq!(*img.get_pixel(0, 0), cubehelix(0.0));
        assert_eq!(*img.get_pixel(1, 0), cubehelix(1.0));
        // values outside the range saturate
        let img = render_colormap(&m, Some((12.0, 14.0)));
        assert_eq!(*img.get_pixel(0, 0), cubehelix(0.0));
        assert_eq!(*img.get_pixel(1, 0), cubehelix(1.0));
    }

    #[test]
    fn luminance_is_monotone() {
        let lum = |p: Rgb<u8>| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
        let samples: Vec<f64> = (0..=20).map(|i| lum(cubehelix(i as f64 / 20.0))).collect();
        assert!(samples.windows(2).all(|w| w[1] > w[0] - 1.0), "{samples:?}");
        assert!(samples[20] > samples[0] + 100.0);
    }

    #[test]
    fn grid_layout() {
        let a = RgbImage::from_pixel(4, 3, Rgb([255, 0, 0]));
        let b = RgbImage::from_pixel(4, 3, Rgb([0, 255, 0]));
        let g = compose_grid(&[vec![a.clone(), b], vec![a]], 2);
        assert_eq!(g.dimensions(), (2 * 4 + 3 * 2, 2 * 3 + 3 * 2));
        assert_eq!(*g.get_pixel(2, 2), Rgb([255, 0, 0]));
        assert_eq!(*g.get_pixel(8, 2), Rgb([0, 255, 0]));
        assert_eq!(*g.get_pixel(0, 0), Rgb([0, 0, 0]));
    }
}
