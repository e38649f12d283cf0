//! Disparity and depth error metrics, per image and aggregated over a split.
//!
//! Every metric is computed over the joint mask (pixels valid in both maps).
//! Split summaries are the arithmetic mean of per-image values.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{gt_disparity, SampleRecord};
use crate::error::{Error, Result};
use crate::geometry::{disparity_to_depth, CameraRig};
use crate::grid::{DepthMap, DisparityMap, MaskedGrid};

/// KITTI D1 rule: an outlier exceeds both 3 px and 5 % of the true disparity.
pub const D1_ABS_PX: f64 = 3.0;
pub const D1_REL: f64 = 0.05;
pub const BAD_THRESHOLD_PX: f64 = 1.0;
/// `1.25^k` for k = 1, 2, 3; all exactly representable in `f32`.
pub const DELTA_THRESHOLDS: [f32; 3] = [1.25, 1.5625, 1.953125];

/// Column headers of the per-image table, in order.
pub const TABLE_HEADERS: [&str; 10] = [
    "EPE (px)",
    "Disp. RMSE (px)",
    "D1-all (%)",
    "Bad 1.0 (%)",
    "δ1 (%)",
    "δ2 (%)",
    "δ3 (%)",
    "Depth MAE (cm)",
    "Depth RMSE (cm)",
    "Depth AbsRel",
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DisparityMetrics {
    pub epe: f64,
    pub rmse: f64,
    pub d1_all: f64,
    pub bad_1_0: f64,
    pub valid_pixels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub mae_cm: f64,
    pub rmse_cm: f64,
    pub abs_rel: f64,
}

fn joint_mask<'a, U>(pred: &'a MaskedGrid<U>, gt: &'a MaskedGrid<U>) -> Result<impl Iterator<Item = (f32, f32)> + 'a + Clone> {
    gt.check_same_dims(pred)?;
    let it = pred
        .values()
        .iter()
        .zip(pred.mask())
        .zip(gt.values().iter().zip(gt.mask()))
        .filter_map(|((&p, &pv), (&g, &gv))| (pv && gv).then_some((p, g)));
    if it.clone().next().is_none() {
        return Err(Error::EmptyMask);
    }
    Ok(it)
}

fn percent(count: usize, n: usize) -> f64 {
    100.0 * count as f64 / n as f64
}

pub fn disparity_metrics(pred: &DisparityMap, gt: &DisparityMap) -> Result<DisparityMetrics> {
    let pairs = joint_mask(pred, gt)?;
    let (mut n, mut abs_sum, mut sq_sum, mut d1, mut bad) = (0usize, 0.0f64, 0.0f64, 0usize, 0usize);
    for (p, g) in pairs {
        let err = (f64::from(p) - f64::from(g)).abs();
        n += 1;
        abs_sum += err;
        sq_sum += err * err;
        if err > D1_ABS_PX && err > D1_REL * f64::from(g) {
            d1 += 1;
        }
        if err > BAD_THRESHOLD_PX {
            bad += 1;
        }
    }
    Ok(DisparityMetrics {
        epe: abs_sum / n as f64,
        rmse: (sq_sum / n as f64).sqrt(),
        d1_all: percent(d1, n),
        bad_1_0: percent(bad, n),
        valid_pixels: n,
    })
}

pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMetrics> {
    let pairs = joint_mask(pred, gt)?;
    let (mut n, mut abs_sum, mut sq_sum, mut rel_sum) = (0usize, 0.0f64, 0.0f64, 0.0f64);
    let mut within = [0usize; 3];
    for (p, g) in pairs {
        if !(p > 0.0 && g > 0.0) {
            continue;
        }
        // Ratio taken at map precision so that e.g. 2.0 / 1.6 lands exactly on 1.25.
        let ratio = (g / p).max(p / g);
        for (k, t) in DELTA_THRESHOLDS.iter().enumerate() {
            if ratio < *t {
                within[k] += 1;
            }
        }
        let err = (f64::from(p) - f64::from(g)).abs();
        n += 1;
        abs_sum += err;
        sq_sum += err * err;
        rel_sum += err / f64::from(g);
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(DepthMetrics {
        delta1: percent(within[0], n),
        delta2: percent(within[1], n),
        delta3: percent(within[2], n),
        mae_cm: 100.0 * abs_sum / n as f64,
        rmse_cm: 100.0 * (sq_sum / n as f64).sqrt(),
        abs_rel: rel_sum / n as f64,
    })
}

/// Disparity metrics plus depth metrics after converting both maps with `rig`.
pub fn image_metrics(pred: &DisparityMap, gt: &DisparityMap, rig: &CameraRig) -> Result<(DisparityMetrics, DepthMetrics)> {
    let disp = disparity_metrics(pred, gt)?;
    let depth = depth_metrics(&disparity_to_depth(pred, rig), &disparity_to_depth(gt, rig))?;
    Ok((disp, depth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub disparity: DisparityMetrics,
    pub depth: DepthMetrics,
}

/// Mean over images of every metric field.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SummaryMetrics {
    pub images: usize,
    pub epe: f64,
    pub rmse: f64,
    pub d1_all: f64,
    pub bad_1_0: f64,
    pub valid_pixels: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub mae_cm: f64,
    pub rmse_cm: f64,
    pub abs_rel: f64,
}

impl SummaryMetrics {
    pub fn mean_of(images: &[ImageMetrics]) -> Self {
        let n = images.len();
        if n == 0 {
            return Self::default();
        }
        let mean = |f: &dyn Fn(&ImageMetrics) -> f64| images.iter().map(f).sum::<f64>() / n as f64;
        Self {
            images: n,
            epe: mean(&|m| m.disparity.epe),
            rmse: mean(&|m| m.disparity.rmse),
            d1_all: mean(&|m| m.disparity.d1_all),
            bad_1_0: mean(&|m| m.disparity.bad_1_0),
            valid_pixels: mean(&|m| m.disparity.valid_pixels as f64),
            delta1: mean(&|m| m.depth.delta1),
            delta2: mean(&|m| m.depth.delta2),
            delta3: mean(&|m| m.depth.delta3),
            mae_cm: mean(&|m| m.depth.mae_cm),
            rmse_cm: mean(&|m| m.depth.rmse_cm),
            abs_rel: mean(&|m| m.depth.abs_rel),
        }
    }

    pub fn table_row(&self) -> [f64; 10] {
        [
            self.epe,
            self.rmse,
            self.d1_all,
            self.bad_1_0,
            self.delta1,
            self.delta2,
            self.delta3,
            self.mae_cm,
            self.rmse_cm,
            self.abs_rel,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_name: String,
    /// How `summary` was pooled; always `"mean-over-images"`.
    pub aggregation: String,
    pub per_image: Vec<ImageMetrics>,
    pub failures: Vec<RecordFailure>,
    pub summary: SummaryMetrics,
}

impl MetricReport {
    pub const AGGREGATION: &'static str = "mean-over-images";

    /// Builds a report; rows are sorted by id so the summary does not depend on input order.
    pub fn new(model_name: impl Into<String>, mut per_image: Vec<ImageMetrics>, mut failures: Vec<RecordFailure>) -> Self {
        per_image.sort_by(|a, b| a.id.cmp(&b.id));
        failures.sort_by(|a, b| a.id.cmp(&b.id));
        let summary = SummaryMetrics::mean_of(&per_image);
        Self {
            model_name: model_name.into(),
            aggregation: Self::AGGREGATION.into(),
            per_image,
            failures,
            summary,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["Image"];
        header.extend(TABLE_HEADERS);
        header.push("Valid px");
        w.write_record(&header)?;
        for m in &self.per_image {
            let row = SummaryMetrics::mean_of(std::slice::from_ref(m));
            let mut rec = vec![m.id.clone()];
            rec.extend(row.table_row().iter().map(|v| format!("{v:.6}")));
            rec.push(m.disparity.valid_pixels.to_string());
            w.write_record(&rec)?;
        }
        let mut rec = vec!["mean".to_string()];
        rec.extend(self.summary.table_row().iter().map(|v| format!("{v:.6}")));
        rec.push(format!("{:.1}", self.summary.valid_pixels));
        w.write_record(&rec)?;
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("metrics.csv");
        let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        self.write_csv(file)?;
        let json_path = dir.join("metrics.json");
        std::fs::write(&json_path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json_path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Anything that can produce a disparity prediction for a corpus sample.
pub trait PredictionSource: Sync {
    fn predict(&self, record: &SampleRecord) -> Result<DisparityMap>;
}

/// Scores every record, continuing past per-record failures.
pub fn evaluate_split(
    model_name: &str,
    source: &dyn PredictionSource,
    records: &[SampleRecord],
    rig: &CameraRig,
) -> MetricReport {
    let results: Vec<std::result::Result<ImageMetrics, RecordFailure>> = records
        .par_iter()
        .map(|rec| {
            let id = rec.id();
            let scored = (|| {
                let gt = gt_disparity(rec, rig)?;
                let raw = source.predict(rec)?;
                // Predictions beyond the rig's disparity cap are as unusable as missing ones.
                let (w, h, values, mut valid) = raw.into_parts();
                for (v, ok) in values.iter().zip(valid.iter_mut()) {
                    *ok = *ok && rig.is_valid_disparity(*v);
                }
                let pred = DisparityMap::new(w, h, values, valid)?;
                image_metrics(&pred, &gt, rig)
            })();
            match scored {
                Ok((disparity, depth)) => Ok(ImageMetrics { id, disparity, depth }),
                Err(e) => Err(RecordFailure { id, reason: e.to_string() }),
            }
        })
        .collect();
    let (mut ok, mut failed) = (Vec::new(), Vec::new());
    for r in results {
        match r {
            Ok(m) => ok.push(m),
            Err(f) => failed.push(f),
        }
    }
    MetricReport::new(model_name, ok, failed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disp(values: Vec<f32>) -> DisparityMap {
        let n = values.len();
        DisparityMap::new(n, 1, values, vec![true; n]).unwrap()
    }

    fn depth(values: Vec<f32>) -> DepthMap {
        let n = values.len();
        DepthMap::new(n, 1, values, vec![true; n]).unwrap()
    }

    #[test]
    fn identity_disparity() {
        let gt = disp(vec![10.0, 20.0, 30.0]);
        let m = disparity_metrics(&gt, &gt).unwrap();
        assert_eq!((m.epe, m.rmse, m.d1_all, m.bad_1_0), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(m.valid_pixels, 3);
    }

    #[test]
    fn constant_offset_of_two() {
        let m = disparity_metrics(&disp(vec![12.0; 4]), &disp(vec![10.0; 4])).unwrap();
        assert_eq!((m.epe, m.rmse, m.bad_1_0, m.d1_all), (2.0, 2.0, 100.0, 0.0));
    }

    #[test]
    fn d1_needs_both_conditions() {
        let far = disparity_metrics(&disp(vec![104.0; 4]), &disp(vec![100.0; 4])).unwrap();
        assert_eq!(far.d1_all, 0.0);
        let near = disparity_metrics(&disp(vec![14.0; 4]), &disp(vec![10.0; 4])).unwrap();
        assert_eq!(near.d1_all, 100.0);
    }

    #[test]
    fn depth_identity_and_ratio_cases() {
        let gt = depth(vec![2.0; 4]);
        let id = depth_metrics(&gt, &gt).unwrap();
        assert_eq!((id.delta1, id.delta2, id.delta3, id.mae_cm, id.abs_rel), (100.0, 100.0, 100.0, 0.0, 0.0));

        let m = depth_metrics(&depth(vec![2.6; 4]), &gt).unwrap();
        assert_eq!((m.delta1, m.delta2, m.delta3), (0.0, 100.0, 100.0));
        assert!((m.mae_cm - 60.0).abs() < 1e-4);
        assert!((m.abs_rel - 0.30).abs() < 1e-6);

        let edge = depth_metrics(&depth(vec![1.6; 4]), &gt).unwrap();
        assert_eq!(edge.delta1, 0.0);
        assert_eq!(edge.delta2, 100.0);
    }

    #[test]
    fn errors() {
        let a = disp(vec![1.0; 3]);
        let b = DisparityMap::filled(3, 2, 1.0);
        assert!(matches!(disparity_metrics(&a, &b), Err(Error::DimensionMismatch { .. })));
        let none = DisparityMap::invalid(3, 1);
        assert!(matches!(disparity_metrics(&a, &none), Err(Error::EmptyMask)));
    }

    #[test]
    fn masked_pixels_do_not_matter() {
        let gt = DisparityMap::new(3, 1, vec![10.0, 10.0, 10.0], vec![true, true, false]).unwrap();
        let p1 = DisparityMap::new(3, 1, vec![11.0, 10.0, 500.0], vec![true, true, true]).unwrap();
        let p2 = DisparityMap::new(3, 1, vec![11.0, 10.0, -3.0], vec![true, true, true]).unwrap();
        assert_eq!(disparity_metrics(&p1, &gt).unwrap(), disparity_metrics(&p2, &gt).unwrap());
    }

    #[test]
    fn summary_is_mean_of_images() {
        let mk = |id: &str, epe: f64| ImageMetrics {
            id: id.into(),
            disparity: DisparityMetrics { epe, ..Default::default() },
            depth: DepthMetrics::default(),
        };
        let a = MetricReport::new("m", vec![mk("a", 1.0), mk("b", 3.0)], vec![]);
        assert_eq!(a.summary.epe, 2.0);
        let b = MetricReport::new("m", vec![mk("b", 3.0), mk("a", 1.0)], vec![]);
        assert_eq!(a, b);
    }

    #[test]
    fn csv_has_table_headers() {
        let r = MetricReport::new("m", vec![], vec![]);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("Image,EPE (px),Disp. RMSE (px),D1-all (%),Bad 1.0 (%),δ1 (%)"));
        assert!(text.lines().last().unwrap().starts_with("mean,"));
    }
}
