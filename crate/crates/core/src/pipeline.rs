//! Deployment-side logic: latency profiling, branch distance, filtering and actuation.

use std::collections::VecDeque;
use std::fmt;
use std::process::Command;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraRig;
use crate::grid::DisparityMap;

/// Smallest per-frame time a measurement is allowed to report.
pub const TIMER_FLOOR_MS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileOptions {
    pub frames: usize,
    pub warmup: usize,
    /// Input resolution as (width, height); recorded only.
    pub resolution: Option<(u32, u32)>,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            frames: 50,
            warmup: 10,
            resolution: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub label: String,
    pub resolution: Option<(u32, u32)>,
    pub warmup_frames: usize,
    pub measured_frames: usize,
    pub per_frame_ms: Vec<f64>,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub fps: f64,
    /// Set when the runner failed before all frames were measured.
    pub partial: bool,
    pub failure: Option<String>,
}

impl LatencyReport {
    /// Statistics over already-measured frame times. Times below the timer floor are clamped up.
    pub fn from_samples(label: impl Into<String>, warmup_frames: usize, samples: &[f64]) -> Self {
        let per_frame_ms: Vec<f64> = samples.iter().map(|&t| t.max(TIMER_FLOOR_MS)).collect();
        let n = per_frame_ms.len();
        let (mean_ms, median_ms, p95_ms) = if n == 0 {
            (0.0, 0.0, 0.0)
        } else {
            let mut sorted = per_frame_ms.clone();
            sorted.sort_by(f64::total_cmp);
            let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
            (
                (per_frame_ms.iter().sum::<f64>() / n as f64).max(TIMER_FLOOR_MS),
                median_sorted(&sorted),
                sorted[rank - 1],
            )
        };
        Self {
            label: label.into(),
            resolution: None,
            warmup_frames,
            measured_frames: n,
            per_frame_ms,
            mean_ms,
            median_ms,
            p95_ms,
            fps: if n == 0 { 0.0 } else { fps_from_latency(mean_ms) },
            partial: false,
            failure: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn fps_from_latency(latency_ms: f64) -> f64 {
    1000.0 / latency_ms.max(TIMER_FLOOR_MS)
}

/// Times `runner` on the calling thread. Warm-up calls are run but not recorded.
///
/// A failing runner stops the run; the report then holds whatever was measured
/// and is flagged `partial`.
pub fn profile<E, F>(label: &str, mut runner: F, opts: &ProfileOptions) -> LatencyReport
where
    E: fmt::Display,
    F: FnMut(usize) -> std::result::Result<(), E>,
{
    let mut samples = Vec::with_capacity(opts.frames);
    let mut failure = None;
    for i in 0..opts.warmup + opts.frames {
        let start = Instant::now();
        if let Err(e) = runner(i) {
            failure = Some(format!("frame {i}: {e}"));
            break;
        }
        let ms = start.elapsed().as_secs_f64() * 1000.0;
        if i >= opts.warmup {
            samples.push(ms);
        }
    }
    let mut report = LatencyReport::from_samples(label, opts.warmup, &samples);
    report.resolution = opts.resolution;
    report.partial = failure.is_some();
    report.failure = failure;
    report
}

/// Runner that executes an external program once per frame; a nonzero exit is a failure.
pub fn command_runner(program: String, args: Vec<String>) -> impl FnMut(usize) -> std::result::Result<(), String> {
    move |_| {
        let status = Command::new(&program)
            .args(&args)
            .status()
            .map_err(|e| format!("failed to start {program}: {e}"))?;
        if status.success() {
            Ok(())
        } else {
            Err(format!("{program} exited with {status}"))
        }
    }
}

/// Distance travelled between two depth updates, in centimetres.
pub fn travel_per_update(speed_mps: f64, latency_ms: f64) -> f64 {
    speed_mps * latency_ms / 10.0
}

/// Pixel region to aggregate over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Roi {
    Rect {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    Mask {
        width: usize,
        height: usize,
        mask: Vec<bool>,
    },
}

impl Roi {
    /// Number of pixels in the region.
    pub fn size(&self) -> usize {
        match self {
            Roi::Rect { width, height, .. } => width * height,
            Roi::Mask { mask, .. } => mask.iter().filter(|&&m| m).count(),
        }
    }

    fn pixels(&self, map_w: usize, map_h: usize) -> Result<Vec<usize>> {
        match self {
            &Roi::Rect { x, y, width, height } => {
                if width == 0 || height == 0 {
                    return Err(Error::InvalidRoi("rectangle has zero area".into()));
                }
                if x + width > map_w || y + height > map_h {
                    return Err(Error::InvalidRoi(format!(
                        "rectangle {width}x{height}+{x}+{y} exceeds {map_w}x{map_h}"
                    )));
                }
                Ok((y..y + height)
                    .flat_map(|r| (x..x + width).map(move |c| r * map_w + c))
                    .collect())
            }
            Roi::Mask { width, height, mask } => {
                if (*width, *height) != (map_w, map_h) || mask.len() != map_w * map_h {
                    return Err(Error::InvalidRoi(format!(
                        "mask is {width}x{height}, map is {map_w}x{map_h}"
                    )));
                }
                let px: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
                if px.is_empty() {
                    return Err(Error::InvalidRoi("mask selects no pixels".into()));
                }
                Ok(px)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub distance_m: f64,
    pub n_valid: usize,
    /// Median absolute deviation of the ROI depths.
    pub spread_m: f64,
    pub timestamp: f64,
}

pub const DEFAULT_MIN_VALID: usize = 5;

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    median_sorted(&v)
}

/// Median depth over the valid ROI pixels, or `None` when fewer than `min_valid` are usable.
pub fn estimate_branch_distance(
    disp: &DisparityMap,
    rig: &CameraRig,
    roi: &Roi,
    min_valid: usize,
    timestamp: f64,
) -> Result<Option<DistanceEstimate>> {
    rig.validate()?;
    let depths: Vec<f64> = roi
        .pixels(disp.width(), disp.height())?
        .into_iter()
        .filter(|&i| disp.mask()[i])
        .filter_map(|i| rig.depth_at(disp.values()[i]))
        .collect();
    if depths.is_empty() || depths.len() < min_valid {
        return Ok(None);
    }
    let distance_m = median(&depths);
    let deviations: Vec<f64> = depths.iter().map(|z| (z - distance_m).abs()).collect();
    Ok(Some(DistanceEstimate {
        distance_m,
        n_valid: depths.len(),
        spread_m: median(&deviations),
        timestamp,
    }))
}

/// Rolling median over the last `k` estimates of one tracked branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub k: usize,
    pub window: VecDeque<DistanceEstimate>,
}

impl Default for FilterState {
    fn default() -> Self {
        Self::new(5)
    }
}

impl FilterState {
    pub fn new(k: usize) -> Self {
        Self {
            k: k.max(1),
            window: VecDeque::with_capacity(k.max(1)),
        }
    }

    pub fn push(&mut self, est: DistanceEstimate) -> f64 {
        if self.window.len() == self.k {
            self.window.pop_front();
        }
        self.window.push_back(est);
        self.current().expect("window is non-empty")
    }

    pub fn current(&self) -> Option<f64> {
        if self.window.is_empty() {
            return None;
        }
        let d: Vec<f64> = self.window.iter().map(|e| e.distance_m).collect();
        Some(median(&d))
    }
}

pub fn temporal_filter(mut state: FilterState, est: DistanceEstimate) -> (FilterState, f64) {
    let out = state.push(est);
    (state, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Approach,
    Hold,
    Actuate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuationConfig {
    pub zone_m: f64,
    pub max_spread_m: f64,
}

impl Default for ActuationConfig {
    fn default() -> Self {
        Self {
            zone_m: 0.5,
            max_spread_m: 0.05,
        }
    }
}

pub fn approach_decision(distance_m: f64, spread_m: f64, cfg: &ActuationConfig) -> Decision {
    if !distance_m.is_finite() || spread_m.is_nan() {
        return Decision::Hold;
    }
    if distance_m < cfg.zone_m {
        if spread_m < cfg.max_spread_m {
            Decision::Actuate
        } else {
            Decision::Hold
        }
    } else {
        Decision::Approach
    }
}

/// Decision for an optional measurement; a missing one always holds.
pub fn decide(est: Option<&DistanceEstimate>, cfg: &ActuationConfig) -> Decision {
    est.map_or(Decision::Hold, |e| approach_decision(e.distance_m, e.spread_m, cfg))
}

/// One row of a per-frame decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub frame: usize,
    pub estimate: Option<DistanceEstimate>,
    pub filtered_m: Option<f64>,
    pub decision: Decision,
}

/// Runs estimates through a filter and the actuation rule. The filtered distance is
/// judged with the spread of the newest raw estimate.
pub fn trace_decisions(
    estimates: &[Option<DistanceEstimate>],
    k: usize,
    cfg: &ActuationConfig,
) -> Vec<DecisionTrace> {
    let mut state = FilterState::new(k);
    estimates
        .iter()
        .enumerate()
        .map(|(frame, est)| {
            let (filtered_m, decision) = match est {
                Some(e) => {
                    let f = state.push(*e);
                    (Some(f), approach_decision(f, e.spread_m, cfg))
                }
                None => (state.current(), Decision::Hold),
            };
            DecisionTrace {
                frame,
                estimate: *est,
                filtered_m,
                decision,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Deployability {
    Usable,
    AccurateButSlow,
    Unsafe,
}

impl Deployability {
    pub fn symbol(self) -> &'static str {
        match self {
            Deployability::Usable => "✓",
            Deployability::AccurateButSlow => "△",
            Deployability::Unsafe => "×",
        }
    }

    /// Higher is closer to usable.
    pub fn rank(self) -> u8 {
        match self {
            Deployability::Unsafe => 0,
            Deployability::AccurateButSlow => 1,
            Deployability::Usable => 2,
        }
    }
}

impl fmt::Display for Deployability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsabilityThresholds {
    pub usable_min_fps: f64,
    pub usable_max_mae_cm: f64,
    pub slow_min_fps: f64,
    pub slow_max_mae_cm: f64,
    /// Pixel-reliability gate in percent; applied only when a δ1 value is supplied.
    pub min_delta1_pct: Option<f64>,
}

impl Default for UsabilityThresholds {
    fn default() -> Self {
        Self {
            usable_min_fps: 3.0,
            usable_max_mae_cm: 70.0,
            slow_min_fps: 1.5,
            slow_max_mae_cm: 30.0,
            min_delta1_pct: Some(85.0),
        }
    }
}

/// Deployability of a model from its frame rate, depth MAE and optionally its δ1.
pub fn classify_deployability(
    fps: f64,
    depth_mae_cm: f64,
    delta1_pct: Option<f64>,
    t: &UsabilityThresholds,
) -> Deployability {
    if let (Some(min), Some(d1)) = (t.min_delta1_pct, delta1_pct) {
        if d1.is_nan() || d1 < min {
            return Deployability::Unsafe;
        }
    }
    if fps >= t.usable_min_fps && depth_mae_cm <= t.usable_max_mae_cm {
        Deployability::Usable
    } else if depth_mae_cm <= t.slow_max_mae_cm && fps >= t.slow_min_fps && fps < t.usable_min_fps {
        Deployability::AccurateButSlow
    } else {
        Deployability::Unsafe
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn est(d: f64) -> DistanceEstimate {
        DistanceEstimate {
            distance_m: d,
            n_valid: 10,
            spread_m: 0.0,
            timestamp: 0.0,
        }
    }

    #[test]
    fn report_statistics() {
        let samples: Vec<f64> = (1..=20).map(f64::from).collect();
        let r = LatencyReport::from_samples("x", 3, &samples);
        assert_eq!(r.measured_frames, 20);
        assert_eq!(r.mean_ms, 10.5);
        assert_eq!(r.median_ms, 10.5);
        assert_eq!(r.p95_ms, 19.0);
        assert!((r.fps - 1000.0 / 10.5).abs() < 1e-12);
    }

    #[test]
    fn zero_cost_runner_has_finite_fps() {
        let r = profile("noop", |_| Ok::<(), String>(()), &ProfileOptions::default());
        assert_eq!(r.measured_frames, 50);
        assert_eq!(r.warmup_frames, 10);
        assert!(r.mean_ms >= TIMER_FLOOR_MS);
        assert!(r.fps.is_finite() && r.fps <= 1000.0 / TIMER_FLOOR_MS);
        assert!(!r.partial);
    }

    #[test]
    fn warmup_is_excluded() {
        let r = profile(
            "w",
            |i| {
                if i < 2 {
                    std::thread::sleep(std::time::Duration::from_millis(30));
                }
                Ok::<(), String>(())
            },
            &ProfileOptions {
                frames: 5,
                warmup: 2,
                resolution: Some((64, 48)),
            },
        );
        assert!(r.per_frame_ms.iter().all(|&t| t < 20.0), "{:?}", r.per_frame_ms);
        assert_eq!(r.resolution, Some((64, 48)));
    }

    #[test]
    fn sleeping_runner_matches_latency() {
        let opts = ProfileOptions {
            frames: 3,
            warmup: 1,
            resolution: None,
        };
        let r = profile(
            "sleep",
            |_| {
                std::thread::sleep(std::time::Duration::from_millis(300));
                Ok::<(), String>(())
            },
            &opts,
        );
        assert!((r.fps - 3.33).abs() < 0.1, "{}", r.fps);
    }

    #[test]
    fn runner_failure_is_partial() {
        let r = profile(
            "fail",
            |i| if i == 13 { Err("boom") } else { Ok(()) },
            &ProfileOptions::default(),
        );
        assert!(r.partial);
        assert_eq!(r.measured_frames, 3);
        assert!(r.failure.unwrap().contains("boom"));
    }

    #[test]
    fn external_command() {
        let mut ok = command_runner("true".into(), vec![]);
        assert!(ok(0).is_ok());
        let mut bad = command_runner("false".into(), vec![]);
        assert!(bad(0).is_err());
    }

    #[test]
    fn travel_examples() {
        assert_eq!(travel_per_update(0.3, 450.0), 13.5);
        assert_eq!(travel_per_update(0.3, 300.0), 9.0);
        assert_eq!(travel_per_update(0.0, 1234.0), 0.0);
    }

    #[test]
    fn distance_constant_roi() {
        let rig = CameraRig::default();
        let d = DisparityMap::filled(8, 8, 29.39994);
        let roi = Roi::Rect {
            x: 2,
            y: 2,
            width: 4,
            height: 4,
        };
        let e = estimate_branch_distance(&d, &rig, &roi, 5, 1.5).unwrap().unwrap();
        assert!((e.distance_m - 2.0).abs() < 1e-3);
        assert_eq!(e.spread_m, 0.0);
        assert_eq!(e.n_valid, 16);
        assert_eq!(e.timestamp, 1.5);
    }

    #[test]
    fn distance_too_few_valid() {
        let rig = CameraRig::default();
        let mut valid = vec![false; 16];
        valid[..3].fill(true);
        let d = DisparityMap::new(4, 4, vec![30.0; 16], valid).unwrap();
        let roi = Roi::Rect {
            x: 0,
            y: 0,
            width: 4,
            height: 4,
        };
        assert!(estimate_branch_distance(&d, &rig, &roi, 5, 0.0).unwrap().is_none());
    }

    #[test]
    fn distance_median_is_robust() {
        let rig = CameraRig::default();
        let fb = rig.focal_baseline() as f32;
        // 3 pixels at 1 m, 3 at 3 m, one extra at 1 m
        let values = vec![fb, fb, fb, fb / 3.0, fb / 3.0, fb / 3.0, fb];
        let d = DisparityMap::new(7, 1, values, vec![true; 7]).unwrap();
        let roi = Roi::Mask {
            width: 7,
            height: 1,
            mask: vec![true; 7],
        };
        let e = estimate_branch_distance(&d, &rig, &roi, 5, 0.0).unwrap().unwrap();
        assert!((e.distance_m - 1.0).abs() < 1e-6);
    }

    #[test]
    fn roi_errors() {
        let rig = CameraRig::default();
        let d = DisparityMap::filled(4, 4, 30.0);
        let out = Roi::Rect {
            x: 3,
            y: 0,
            width: 2,
            height: 1,
        };
        assert!(matches!(estimate_branch_distance(&d, &rig, &out, 1, 0.0), Err(Error::InvalidRoi(_))));
        let empty = Roi::Mask {
            width: 4,
            height: 4,
            mask: vec![false; 16],
        };
        assert!(estimate_branch_distance(&d, &rig, &empty, 1, 0.0).is_err());
        let wrong = Roi::Mask {
            width: 2,
            height: 2,
            mask: vec![true; 4],
        };
        assert!(estimate_branch_distance(&d, &rig, &wrong, 1, 0.0).is_err());
    }

    #[test]
    fn filter_examples() {
        let mut s = FilterState::default();
        assert_eq!(s.current(), None);
        assert_eq!(s.push(est(2.0)), 2.0);
        let mut s = FilterState::new(5);
        for d in [2.0, 2.0, 5.0, 2.0, 2.0] {
            assert!(s.push(est(d)) <= 2.0);
        }
        let (s, out) = temporal_filter(FilterState::new(3), est(7.0));
        assert_eq!(out, 7.0);
        assert_eq!(s.window.len(), 1);
    }

    #[test]
    fn decisions() {
        let c = ActuationConfig::default();
        assert_eq!(approach_decision(0.4, 0.01, &c), Decision::Actuate);
        assert_eq!(approach_decision(2.0, 0.01, &c), Decision::Approach);
        assert_eq!(approach_decision(0.4, 0.5, &c), Decision::Hold);
        assert_eq!(decide(None, &c), Decision::Hold);
        assert_eq!(approach_decision(f64::NAN, 0.0, &c), Decision::Hold);
    }

    #[test]
    fn trace_serializes() {
        let c = ActuationConfig::default();
        let t = trace_decisions(&[Some(est(2.0)), None, Some(est(0.3)), Some(est(0.3))], 3, &c);
        assert_eq!(
            t.iter().map(|r| r.decision).collect::<Vec<_>>(),
            [Decision::Approach, Decision::Hold, Decision::Approach, Decision::Actuate]
        );
        let json = serde_json::to_string(&t).unwrap();
        let back: Vec<DecisionTrace> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn table_rows() {
        let t = UsabilityThresholds::default();
        let rows = [
            (2.2, 23.40, 95.90, Deployability::AccurateButSlow),
            (0.8, 26.94, 95.75, Deployability::Unsafe),
            (3.3, 64.26, 87.59, Deployability::Usable),
            (6.9, 57.63, 82.71, Deployability::Unsafe),
            (8.5, 112.16, 68.96, Deployability::Unsafe),
        ];
        for (fps, mae, d1, want) in rows {
            assert_eq!(classify_deployability(fps, mae, Some(d1), &t), want, "{fps} {mae}");
        }
        // without the reliability input only fps and MAE count
        assert_eq!(classify_deployability(6.9, 57.63, None, &t), Deployability::Usable);
    }

    proptest! {
        #[test]
        fn classifier_monotone(fps in 0.0f64..20.0, mae in 0.0f64..200.0, dfps in 0.0f64..5.0, dmae in 0.0f64..50.0,
                               d1 in proptest::option::of(50.0f64..100.0)) {
            let t = UsabilityThresholds::default();
            let base = classify_deployability(fps, mae, d1, &t).rank();
            prop_assert!(classify_deployability(fps, mae + dmae, d1, &t).rank() <= base);
            prop_assert!(classify_deployability((fps - dfps).max(0.0), mae, d1, &t).rank() <= base);
        }

        #[test]
        fn rolling_median_bounded(xs in proptest::collection::vec(0.1f64..10.0, 1..40), k in 1usize..8) {
            let mut s = FilterState::new(k);
            for &x in &xs {
                let out = s.push(est(x));
                let lo = s.window.iter().map(|e| e.distance_m).fold(f64::INFINITY, f64::min);
                let hi = s.window.iter().map(|e| e.distance_m).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out >= lo && out <= hi);
                prop_assert!(s.window.len() <= k);
            }
        }

        #[test]
        fn travel_is_bilinear(s in 0.0f64..2.0, l in 0.0f64..2000.0, a in 0.0f64..4.0) {
            let base = travel_per_update(s, l);
            prop_assert!((travel_per_update(a * s, l) - a * base).abs() <= 1e-9 * (1.0 + base * a));
            prop_assert!((travel_per_update(s, a * l) - a * base).abs() <= 1e-9 * (1.0 + base * a));
        }
    }
}
