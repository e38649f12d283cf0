//! Synthetic stereo pairs and mock corpora with known ground truth.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_exr_depth, FilenameGrammar, View};
use crate::error::{Error, Result};
use crate::geometry::CameraRig;
use crate::grid::DepthMap;

/// Smoothed random texture, sampled with linear interpolation along x.
struct Texture {
    width: usize,
    rows: Vec<Vec<f32>>,
}

impl Texture {
    fn new(width: usize, height: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<Vec<f32>> = (0..height)
            .map(|_| (0..width).map(|_| rng.gen_range(0.0f32..255.0)).collect())
            .collect();
        // [1 2 1] / 4 in both directions keeps the correlation peak smooth enough for sub-pixel fits.
        let blur_row = |r: &[f32]| -> Vec<f32> {
            (0..r.len())
                .map(|i| {
                    let a = r[i.saturating_sub(1)];
                    let c = r[(i + 1).min(r.len() - 1)];
                    0.25 * a + 0.5 * r[i] + 0.25 * c
                })
                .collect()
        };
        let horiz: Vec<Vec<f32>> = raw.iter().map(|r| blur_row(r)).collect();
        let rows = (0..height)
            .map(|y| {
                let up = &horiz[y.saturating_sub(1)];
                let down = &horiz[(y + 1).min(height - 1)];
                (0..width)
                    .map(|x| 0.25 * up[x] + 0.5 * horiz[y][x] + 0.25 * down[x])
                    .collect()
            })
            .collect();
        Self { width, rows }
    }

    fn sample(&self, u: f32, y: usize) -> f32 {
        let u = u.clamp(0.0, (self.width - 1) as f32);
        let i = u.floor() as usize;
        let f = u - i as f32;
        let row = &self.rows[y];
        let next = row[(i + 1).min(self.width - 1)];
        row[i] * (1.0 - f) + next * f
    }
}

fn pixel(v: f32) -> Rgb<u8> {
    let q = |s: f32| s.round().clamp(0.0, 255.0) as u8;
    Rgb([q(v), q(0.9 * v + 10.0), q(0.7 * v + 20.0)])
}

/// Renders a rectified pair where left pixel `x` in row `y` corresponds to right pixel `x - d(y)`.
pub fn textured_pair_rows(width: usize, height: usize, row_disparity: &[f32], seed: u64) -> (RgbImage, RgbImage) {
    assert_eq!(row_disparity.len(), height, "one disparity per row");
    let max_d = row_disparity.iter().fold(0.0f32, |a, &d| a.max(d)).ceil() as usize;
    let tex = Texture::new(width + max_d + 2, height, seed);
    let mut left = RgbImage::new(width as u32, height as u32);
    let mut right = RgbImage::new(width as u32, height as u32);
    for (y, &d) in row_disparity.iter().enumerate() {
        for x in 0..width {
            left.put_pixel(x as u32, y as u32, pixel(tex.sample(x as f32, y)));
            right.put_pixel(x as u32, y as u32, pixel(tex.sample(x as f32 + d, y)));
        }
    }
    (left, right)
}

/// Pair with one uniform disparity `d` everywhere.
pub fn textured_pair(width: usize, height: usize, d: f32, seed: u64) -> (RgbImage, RgbImage) {
    textured_pair_rows(width, height, &vec![d; height], seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockCorpusSpec {
    pub trees: u32,
    pub frames: u32,
    pub views: Vec<View>,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl Default for MockCorpusSpec {
    fn default() -> Self {
        Self {
            trees: crate::dataset::TREES,
            frames: crate::dataset::FRAMES_PER_VIEW,
            views: View::ALL.to_vec(),
            width: 16,
            height: 12,
            seed: 0,
        }
    }
}

/// Per-row scene depth: sky (no depth) on top, a near branch band, background at about 2 m.
pub fn mock_scene_rows(height: usize, view: View, frame_idx: u32) -> Vec<Option<f32>> {
    let view_offset = match view {
        View::Upward => 0.0,
        View::Downward => 0.1,
        View::Parallel => 0.2,
    };
    let background = 2.0 + view_offset;
    let branch = 1.2 + 0.05 * (frame_idx % 8) as f32;
    (0..height)
        .map(|y| {
            if y < height / 6 {
                None
            } else if y >= height / 3 && y < height / 2 {
                Some(branch)
            } else {
                Some(background)
            }
        })
        .collect()
}

/// Writes `left/`, `right/` and `depth/` trees of synthetic samples under `root`.
pub fn write_mock_corpus(root: &Path, spec: &MockCorpusSpec, grammar: &FilenameGrammar, rig: &CameraRig) -> Result<usize> {
    let dirs = ["left", "right", "depth"].map(|d| root.join(d));
    for d in &dirs {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut written = 0;
    for tree in 1..=spec.trees {
        for &view in &spec.views {
            for frame in 1..=spec.frames {
                let rows = mock_scene_rows(spec.height, view, frame);
                let disp: Vec<f32> = rows
                    .iter()
                    .map(|z| z.and_then(|z| rig.disparity_at(z)).unwrap_or(0.0) as f32)
                    .collect();
                let seed = spec.seed ^ (u64::from(tree) << 32) ^ (u64::from(frame) << 8) ^ view as u64;
                let (l, r) = textured_pair_rows(spec.width, spec.height, &disp, seed);
                l.save(dirs[0].join(grammar.left_name(tree, view, frame)))?;
                r.save(dirs[1].join(grammar.right_name(tree, view, frame)))?;

                let mut values = Vec::with_capacity(spec.width * spec.height);
                let mut valid = Vec::with_capacity(spec.width * spec.height);
                for z in &rows {
                    for _ in 0..spec.width {
                        values.push(z.unwrap_or(f32::NAN));
                        valid.push(z.is_some());
                    }
                }
                let depth = DepthMap::new(spec.width, spec.height, values, valid)?;
                write_exr_depth(&depth, &dirs[2].join(grammar.depth_name(tree, view, frame)), "R")?;
                written += 1;
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_shift_is_exact() {
        let (l, r) = textured_pair(30, 5, 4.0, 1);
        for y in 0..5 {
            for x in 4..30 {
                assert_eq!(l.get_pixel(x, y), r.get_pixel(x - 4, y));
            }
        }
    }

    #[test]
    fn mock_corpus_scans_and_loads() {
        let dir = tempfile::tempdir().unwrap();
        let spec = MockCorpusSpec {
            trees: 2,
            frames: 2,
            ..Default::default()
        };
        let g = FilenameGrammar::default();
        let n = write_mock_corpus(dir.path(), &spec, &g, &CameraRig::default()).unwrap();
        assert_eq!(n, 12);
        let idx = crate::dataset::scan_corpus(dir.path(), &g).unwrap();
        assert_eq!(idx.len(), 12);
        let gt = crate::dataset::gt_disparity(&idx.records[0], &CameraRig::default()).unwrap();
        assert_eq!(gt.dims(), (16, 12));
        assert!(gt.get(0, 0).is_none(), "sky row is invalid");
        assert!((gt.get(0, 11).unwrap() - 29.399895).abs() < 1e-3);
    }
}
