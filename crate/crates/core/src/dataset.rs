//! Corpus scanning, deterministic splits and EXR depth loading.
//!
//! A corpus is any directory tree holding files named by a [`FilenameGrammar`]:
//! `left_{tree:03}_{view}_{frame:02}.png`, the matching `right_…png`, and a
//! `depth_…exr`. The three files of one sample may live in different
//! subdirectories (`left/`, `right/`, `depth/`) or side by side.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use exr::prelude::{AnyChannel, AnyChannels, Encoding, FlatSamples, Image, Layer, LayerAttributes, ReadChannels, ReadLayers, WritableImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{depth_to_disparity, CameraRig};
use crate::grid::{DepthMap, DisparityMap};

pub const TREES: u32 = 115;
pub const FRAMES_PER_VIEW: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Upward,
    Downward,
    Parallel,
}

impl View {
    pub const ALL: [View; 3] = [View::Upward, View::Downward, View::Parallel];
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::Upward => "upward",
            View::Downward => "downward",
            View::Parallel => "parallel",
        })
    }
}

/// File naming convention of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilenameGrammar {
    pub left_prefix: String,
    pub right_prefix: String,
    pub depth_prefix: String,
    pub image_ext: String,
    pub depth_ext: String,
    /// Tokens for upward, downward and parallel views, in that order.
    pub view_tokens: [String; 3],
}

impl Default for FilenameGrammar {
    fn default() -> Self {
        Self {
            left_prefix: "left".into(),
            right_prefix: "right".into(),
            depth_prefix: "depth".into(),
            image_ext: "png".into(),
            depth_ext: "exr".into(),
            view_tokens: ["up45".into(), "down45".into(), "horizontal".into()],
        }
    }
}

impl FilenameGrammar {
    pub fn view_token(&self, view: View) -> &str {
        match view {
            View::Upward => &self.view_tokens[0],
            View::Downward => &self.view_tokens[1],
            View::Parallel => &self.view_tokens[2],
        }
    }

    fn view_from_token(&self, token: &str) -> Option<View> {
        View::ALL.into_iter().find(|&v| self.view_token(v) == token)
    }

    fn stem(&self, prefix: &str, tree_id: u32, view: View, frame_idx: u32) -> String {
        format!("{prefix}_{tree_id:03}_{}_{frame_idx:02}", self.view_token(view))
    }

    pub fn left_name(&self, tree_id: u32, view: View, frame_idx: u32) -> String {
        format!("{}.{}", self.stem(&self.left_prefix, tree_id, view, frame_idx), self.image_ext)
    }

    pub fn right_name(&self, tree_id: u32, view: View, frame_idx: u32) -> String {
        format!("{}.{}", self.stem(&self.right_prefix, tree_id, view, frame_idx), self.image_ext)
    }

    pub fn depth_name(&self, tree_id: u32, view: View, frame_idx: u32) -> String {
        format!("{}.{}", self.stem(&self.depth_prefix, tree_id, view, frame_idx), self.depth_ext)
    }

    /// Parses a left-image filename into `(tree_id, view, frame_idx)`.
    ///
    /// Returns `None` for files that are not left images at all, and
    /// `Some(Err(reason))` for left-image names that do not follow the grammar.
    pub fn parse_left(&self, file_name: &str) -> Option<std::result::Result<(u32, View, u32), String>> {
        let head = format!("{}_", self.left_prefix);
        let tail = format!(".{}", self.image_ext);
        let body = file_name.strip_prefix(&head)?.strip_suffix(&tail)?;
        Some(self.parse_body(body))
    }

    fn parse_body(&self, body: &str) -> std::result::Result<(u32, View, u32), String> {
        // The view token may itself contain underscores, so peel tree and frame off the ends.
        let (tree, rest) = body.split_once('_').ok_or("missing tree id")?;
        let (view, frame) = rest.rsplit_once('_').ok_or("missing frame index")?;
        let tree_id: u32 = tree.parse().map_err(|_| format!("bad tree id {tree:?}"))?;
        let frame_idx: u32 = frame.parse().map_err(|_| format!("bad frame index {frame:?}"))?;
        let view = self
            .view_from_token(view)
            .ok_or_else(|| format!("unknown view token {view:?}"))?;
        if tree_id == 0 || frame_idx == 0 {
            return Err("tree id and frame index are 1-based".into());
        }
        Ok((tree_id, view, frame_idx))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub tree_id: u32,
    pub view: View,
    pub frame_idx: u32,
    pub left_path: PathBuf,
    pub right_path: PathBuf,
    pub depth_path: PathBuf,
}

impl SampleRecord {
    /// Stable identifier, also the stem used for prediction files.
    pub fn id(&self) -> String {
        self.left_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("{:03}_{}_{:02}", self.tree_id, self.view, self.frame_idx))
    }

    fn sort_key(&self) -> (u32, View, u32) {
        (self.tree_id, self.view, self.frame_idx)
    }
}

/// A file that looked like part of the corpus but could not be used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanIssue {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub root: PathBuf,
    pub records: Vec<SampleRecord>,
    pub issues: Vec<ScanIssue>,
}

impl CorpusIndex {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn counts_per_tree(&self) -> BTreeMap<u32, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.tree_id).or_default() += 1;
        }
        out
    }

    pub fn counts_per_view(&self) -> BTreeMap<View, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.view).or_default() += 1;
        }
        out
    }
}

/// Walks `root` and pairs every left image with its right image and depth file.
pub fn scan_corpus(root: &Path, grammar: &FilenameGrammar) -> Result<CorpusIndex> {
    let mut files: HashMap<String, Vec<PathBuf>> = HashMap::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            let source = e
                .into_io_error()
                .unwrap_or_else(|| std::io::Error::other("directory walk failed"));
            Error::io(path, source)
        })?;
        if entry.file_type().is_file() {
            let name = entry.file_name().to_string_lossy().into_owned();
            files.entry(name).or_default().push(entry.into_path());
        }
    }

    let mut records = Vec::new();
    let mut issues = Vec::new();
    let mut names: Vec<&String> = files.keys().collect();
    names.sort();
    for name in names {
        let Some(parsed) = grammar.parse_left(name) else {
            continue;
        };
        let left_candidates = &files[name];
        let left_path = left_candidates[0].clone();
        let (tree_id, view, frame_idx) = match parsed {
            Ok(key) => key,
            Err(reason) => {
                issues.push(ScanIssue { path: left_path, reason });
                continue;
            }
        };
        if left_candidates.len() > 1 {
            issues.push(ScanIssue {
                path: left_path,
                reason: format!("{} files share this name", left_candidates.len()),
            });
            continue;
        }
        let find = |file: String| -> std::result::Result<PathBuf, String> {
            match files.get(&file).map(Vec::as_slice) {
                Some([one]) => Ok(one.clone()),
                Some(many) => Err(format!("{} files named {file}", many.len())),
                None => Err(format!("missing {file}")),
            }
        };
        let right = find(grammar.right_name(tree_id, view, frame_idx));
        let depth = find(grammar.depth_name(tree_id, view, frame_idx));
        match (right, depth) {
            (Ok(right_path), Ok(depth_path)) => records.push(SampleRecord {
                tree_id,
                view,
                frame_idx,
                left_path,
                right_path,
                depth_path,
            }),
            (r, d) => {
                let reason = [r.err(), d.err()].into_iter().flatten().collect::<Vec<_>>().join("; ");
                issues.push(ScanIssue { path: left_path, reason });
            }
        }
    }

    if records.is_empty() {
        if !root.is_dir() {
            return Err(Error::io(
                root,
                std::io::Error::new(std::io::ErrorKind::NotFound, "corpus root is not a directory"),
            ));
        }
        return Err(Error::EmptyCorpus(root.to_path_buf()));
    }
    records.sort_by_key(SampleRecord::sort_key);
    Ok(CorpusIndex {
        root: root.to_path_buf(),
        records,
        issues,
    })
}

/// Unit that is kept together when assigning samples to splits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitUnit {
    #[default]
    Pair,
    Tree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub unit: SplitUnit,
    pub train: Vec<SampleRecord>,
    pub val: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
}

impl SplitSet {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }

    pub fn subset(&self, name: &str) -> Option<&[SampleRecord]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    let ok = ratios.iter().all(|r| r.is_finite() && *r > 0.0)
        && (ratios.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
    if ok {
        Ok(())
    } else {
        Err(Error::DegenerateRatios(ratios))
    }
}

/// Floor-based split sizes; the remainder goes to train.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    // 5520 * 0.1 must floor to 552 even if the product lands a hair below.
    let part = |r: f64| (n as f64 * r + 1e-9).floor() as usize;
    let val = part(ratios[1]);
    let test = part(ratios[2]);
    [n - val - test, val, test]
}

/// Shuffles with a seeded ChaCha stream and cuts train/val/test.
pub fn make_splits(index: &CorpusIndex, ratios: [f64; 3], seed: u64, unit: SplitUnit) -> Result<SplitSet> {
    validate_ratios(ratios)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    match unit {
        SplitUnit::Pair => {
            let mut order: Vec<&SampleRecord> = index.records.iter().collect();
            order.shuffle(&mut rng);
            let [n_train, n_val, _] = split_sizes(order.len(), ratios);
            for (i, r) in order.into_iter().enumerate() {
                let bucket = if i < n_train {
                    &mut train
                } else if i < n_train + n_val {
                    &mut val
                } else {
                    &mut test
                };
                bucket.push(r.clone());
            }
        }
        SplitUnit::Tree => {
            let mut trees: Vec<u32> = index.counts_per_tree().into_keys().collect();
            trees.shuffle(&mut rng);
            let [n_train, n_val, _] = split_sizes(trees.len(), ratios);
            let assign: HashMap<u32, usize> = trees
                .iter()
                .enumerate()
                .map(|(i, &t)| (t, if i < n_train { 0 } else if i < n_train + n_val { 1 } else { 2 }))
                .collect();
            for r in &index.records {
                match assign[&r.tree_id] {
                    0 => train.push(r.clone()),
                    1 => val.push(r.clone()),
                    _ => test.push(r.clone()),
                }
            }
        }
    }
    for part in [&mut train, &mut val, &mut test] {
        part.sort_by_key(SampleRecord::sort_key);
    }
    Ok(SplitSet {
        seed,
        ratios,
        unit,
        train,
        val,
        test,
    })
}

/// Channel names tried, in order, when looking for depth in an EXR file.
pub const DEFAULT_DEPTH_CHANNELS: [&str; 3] = ["R", "Y", "Z"];

/// Reads depth in meters from the first layer of an EXR file.
///
/// The channel is the first of `preferred` present in the file, otherwise the
/// first floating-point channel. Non-finite and non-positive samples are masked.
pub fn read_exr_depth(path: &Path, preferred: &[&str]) -> Result<DepthMap> {
    if !path.is_file() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "depth file not found"),
        ));
    }
    let image = exr::prelude::read()
        .no_deep_data()
        .largest_resolution_level()
        .all_channels()
        .first_valid_layer()
        .all_attributes()
        .from_file(path)
        .map_err(|e| match e {
            exr::error::Error::NotSupported(reason) => Error::UnsupportedExr {
                path: path.to_path_buf(),
                reason: reason.into_owned(),
            },
            other => Error::Exr(other),
        })?;

    let layer = &image.layer_data;
    let channels = &layer.channel_data.list;
    let is_float = |s: &FlatSamples| matches!(s, FlatSamples::F16(_) | FlatSamples::F32(_));
    let by_name = preferred.iter().find_map(|want| {
        channels
            .iter()
            .find(|c| c.name.to_string() == *want && is_float(&c.sample_data))
    });
    let channel = by_name
        .or_else(|| channels.iter().find(|c| is_float(&c.sample_data)))
        .ok_or_else(|| Error::ChannelNotFound {
            path: path.to_path_buf(),
            available: channels.iter().map(|c| c.name.to_string()).collect(),
        })?;

    let values: Vec<f32> = channel.sample_data.values_as_f32().collect();
    let (width, height) = (layer.size.width(), layer.size.height());
    DepthMap::from_values(width, height, values, |z| z.is_finite() && z > 0.0)
}

/// Writes a depth map as a single uncompressed 32-bit float channel.
///
/// Masked pixels are written as NaN so they read back as invalid.
pub fn write_exr_depth(depth: &DepthMap, path: &Path, channel: &str) -> Result<()> {
    let samples: Vec<f32> = depth
        .values()
        .iter()
        .zip(depth.mask())
        .map(|(&z, &ok)| if ok { z } else { f32::NAN })
        .collect();
    let channels = AnyChannels::sort(vec![AnyChannel::new(channel, FlatSamples::F32(samples))].into());
    let layer = Layer::new(
        (depth.width(), depth.height()),
        LayerAttributes::default(),
        Encoding::UNCOMPRESSED,
        channels,
    );
    Image::from_layer(layer).write().to_file(path)?;
    Ok(())
}

/// Ground-truth disparity of a sample: its EXR depth mapped through the rig.
pub fn gt_disparity(record: &SampleRecord, rig: &CameraRig) -> Result<DisparityMap> {
    let depth = read_exr_depth(&record.depth_path, &DEFAULT_DEPTH_CHANNELS)?;
    Ok(depth_to_disparity(&depth, rig))
}

pub fn load_rgb(path: &Path) -> Result<image::RgbImage> {
    Ok(image::open(path)?.into_rgb8())
}
