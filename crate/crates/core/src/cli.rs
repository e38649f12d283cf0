//! Command-line front end. Each subcommand drives one module and writes its outputs under `--out`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use image::RgbImage;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costmodel::{variant_cost_summary, write_cost_csv, Preset, TRAIN_CROP};
use crate::dataset::{
    gt_disparity, load_rgb, make_splits, scan_corpus, validate_ratios, FilenameGrammar, SampleRecord, SplitSet,
    SplitUnit,
};
use crate::error::Error;
use crate::geometry::CameraRig;
use crate::grid::DisparityMap;
use crate::matcher::{
    compose_grid, match_pair, read_disparity_file, render_colormap, write_disparity_file, DisparityFormat, MatchConfig,
};
use crate::metrics::{evaluate_split, MetricReport, PredictionSource};
use crate::pipeline::{
    command_runner, estimate_branch_distance, profile, trace_decisions, travel_per_update, ActuationConfig,
    LatencyReport, ProfileOptions, Roi, UsabilityThresholds, DEFAULT_MIN_VALID,
};
use crate::report::{accuracy_table, deployment_table, ReferenceResults};
use crate::synth::{textured_pair, write_mock_corpus, MockCorpusSpec};

/// Exit status when evaluation finished but some records could not be scored.
pub const EXIT_PARTIAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "branchrange", version, about = "Stereo evaluation, cost modeling and branch-distance toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand; each one overrides the matching `--config` field.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Run configuration to start from (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Corpus root directory.
    #[arg(long, global = true)]
    pub root: Option<PathBuf>,
    #[arg(long = "rig-focal-px", global = true)]
    pub focal_px: Option<f64>,
    #[arg(long = "rig-baseline-m", global = true)]
    pub baseline_m: Option<f64>,
    #[arg(long, global = true)]
    pub max_disparity: Option<f64>,
    /// Train/val/test ratios, e.g. 0.8,0.1,0.1.
    #[arg(long, global = true, value_parser = parse_ratios)]
    pub split: Option<[f64; 3]>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub preset: Option<Preset>,
    /// Disparity file format: pfm or png16.
    #[arg(long, global = true)]
    pub format: Option<DisparityFormat>,
    #[arg(long, global = true)]
    pub frames: Option<usize>,
    #[arg(long, global = true)]
    pub warmup: Option<usize>,
    #[arg(long, global = true)]
    pub speed_mps: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Also write markdown tables.
    #[arg(long, global = true)]
    pub markdown: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Index a corpus and report per-tree and per-view counts.
    Scan,
    /// Assign corpus samples to train/val/test.
    Split {
        /// Keep samples of one tree together (`tree`) or split pairs independently (`pair`).
        #[arg(long, value_parser = parse_unit)]
        unit: Option<SplitUnit>,
    },
    /// Run the built-in matcher over corpus samples.
    Match {
        #[command(flatten)]
        sel: Selection,
        /// Also write false-color renderings.
        #[arg(long)]
        colormap: bool,
    },
    /// Score a directory of predictions against ground truth.
    Eval {
        /// Directory holding `<left stem>.pfm` or `<left stem>.png` files.
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long, default_value = "prediction")]
        model: String,
        #[command(flatten)]
        sel: Selection,
    },
    /// Measure per-frame latency of the matcher or an external command.
    Profile {
        /// Input size WIDTHxHEIGHT for the built-in matcher; recorded in the report.
        #[arg(long, value_parser = parse_dims, default_value = "320x240")]
        resolution: (u32, u32),
        /// External command to run once per frame instead of the matcher.
        #[arg(long)]
        cmd: Option<String>,
        #[arg(long)]
        label: Option<String>,
    },
    /// Analytic cost summary of the architecture presets.
    Cost {
        #[arg(long)]
        all_presets: bool,
        /// Crop HEIGHTxWIDTH used for token counts.
        #[arg(long, value_parser = parse_dims)]
        crop: Option<(u32, u32)>,
    },
    /// Branch distance and actuation decisions for a sequence of disparity maps.
    Distance {
        /// Disparity files in time order.
        #[arg(long, required = true)]
        disp: Vec<PathBuf>,
        /// Rectangle x,y,width,height.
        #[arg(long, value_parser = parse_roi, conflicts_with = "mask")]
        roi: Option<(usize, usize, usize, usize)>,
        /// PNG mask; nonzero pixels belong to the ROI.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MIN_VALID)]
        min_valid: usize,
        /// Rolling median window.
        #[arg(long, default_value_t = 5)]
        window: usize,
    },
    /// Merge metric and latency reports into comparison tables and figures.
    Report {
        #[arg(long)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        latency: Vec<PathBuf>,
        /// Leave out the bundled reference rows.
        #[arg(long)]
        no_reference: bool,
        /// Prediction directory for the comparison figure, as NAME=DIR.
        #[arg(long, value_parser = parse_named_dir)]
        figure_pred: Vec<(String, PathBuf)>,
        /// Number of corpus samples (rows) in the figure.
        #[arg(long, default_value_t = 4)]
        figure_samples: usize,
    },
    /// Write a synthetic corpus with EXR depth under `--root`.
    Mock {
        #[arg(long, default_value_t = crate::dataset::TREES)]
        trees: u32,
        #[arg(long, default_value_t = crate::dataset::FRAMES_PER_VIEW)]
        frames_per_view: u32,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 48)]
        height: usize,
    },
}

/// Which corpus samples a command works on.
#[derive(Debug, Clone, Args)]
pub struct Selection {
    /// Split file written by `split`; without it every scanned sample is used.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub subset: String,
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub rig: CameraRig,
    pub root: Option<PathBuf>,
    pub split_ratios: [f64; 3],
    pub seed: u64,
    pub split_unit: SplitUnit,
    pub matcher: MatchConfig,
    pub preset: Preset,
    pub out: PathBuf,
    pub disparity_format: DisparityFormat,
    pub profile: ProfileOptions,
    pub speed_mps: f64,
    pub markdown: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rig: CameraRig::default(),
            root: None,
            split_ratios: [0.8, 0.1, 0.1],
            seed: 0,
            split_unit: SplitUnit::Pair,
            matcher: MatchConfig::default(),
            preset: Preset::Vits,
            out: PathBuf::from("out"),
            disparity_format: DisparityFormat::Pfm,
            profile: ProfileOptions::default(),
            speed_mps: 0.3,
            markdown: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> crate::Result<()> {
        self.rig.validate()?;
        validate_ratios(self.split_ratios)?;
        self.matcher.validate(Some(&self.rig))?;
        if !(self.speed_mps.is_finite() && self.speed_mps >= 0.0) {
            return Err(Error::Config(format!("speed must be non-negative, got {}", self.speed_mps)));
        }
        if self.profile.frames == 0 {
            return Err(Error::Config("profiling needs at least one measured frame".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", path.display()))
    }

    /// Starts from `--config` (or defaults), applies flag overrides and validates.
    pub fn resolve(args: &CommonArgs) -> anyhow::Result<Self> {
        let mut cfg = match &args.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(r) = &args.root {
            cfg.root = Some(r.clone());
        }
        if let Some(f) = args.focal_px {
            cfg.rig.focal_px = f;
        }
        if let Some(b) = args.baseline_m {
            cfg.rig.baseline_m = b;
        }
        if let Some(m) = args.max_disparity {
            cfg.rig.max_disparity = m;
            cfg.matcher.max_disparity = cfg.matcher.max_disparity.min(m);
        }
        if let Some(s) = args.split {
            cfg.split_ratios = s;
        }
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if let Some(p) = args.preset {
            cfg.preset = p;
        }
        if let Some(f) = args.format {
            cfg.disparity_format = f;
        }
        if let Some(f) = args.frames {
            cfg.profile.frames = f;
        }
        if let Some(w) = args.warmup {
            cfg.profile.warmup = w;
        }
        if let Some(s) = args.speed_mps {
            cfg.speed_mps = s;
        }
        if let Some(o) = &args.out {
            cfg.out = o.clone();
        }
        cfg.markdown |= args.markdown;
        cfg.validate()?;
        Ok(cfg)
    }

    fn root(&self) -> anyhow::Result<&Path> {
        self.root.as_deref().ok_or_else(|| anyhow!("--root is required"))
    }
}

fn parse_ratios(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|v| format!("expected three ratios, got {}", v.len()))
}

fn parse_dims(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected AxB, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

fn parse_roi(s: &str) -> Result<(usize, usize, usize, usize), String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, w, h] => Ok((x, y, w, h)),
        _ => Err(format!("expected x,y,width,height, got {s:?}")),
    }
}

fn parse_unit(s: &str) -> Result<SplitUnit, String> {
    match s {
        "pair" => Ok(SplitUnit::Pair),
        "tree" => Ok(SplitUnit::Tree),
        _ => Err(format!("unknown split unit {s:?} (expected pair or tree)")),
    }
}

fn parse_named_dir(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, dir)) if !name.is_empty() => Ok((name.to_string(), PathBuf::from(dir))),
        _ => {
            let p = PathBuf::from(s);
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| s.to_string());
            Ok((name, p))
        }
    }
}

/// Predictions stored as `<left stem>.pfm` or `<left stem>.png` in one directory.
pub struct PredictionDir {
    pub dir: PathBuf,
}

impl PredictionDir {
    fn path_for(&self, id: &str) -> Option<PathBuf> {
        ["pfm", "png"]
            .iter()
            .map(|ext| self.dir.join(format!("{id}.{ext}")))
            .find(|p| p.is_file())
    }
}

impl PredictionSource for PredictionDir {
    fn predict(&self, record: &SampleRecord) -> crate::Result<DisparityMap> {
        let id = record.id();
        match self.path_for(&id) {
            Some(p) => read_disparity_file(&p),
            None => Err(Error::io(
                self.dir.join(format!("{id}.pfm")),
                std::io::Error::new(std::io::ErrorKind::NotFound, "no prediction for this sample"),
            )),
        }
    }
}

fn ensure_out(cfg: &RunConfig) -> anyhow::Result<&Path> {
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    cfg.save(&cfg.out.join("run_config.json"))?;
    Ok(&cfg.out)
}

fn select_records(cfg: &RunConfig, sel: &Selection) -> anyhow::Result<Vec<SampleRecord>> {
    let mut records = match &sel.splits {
        Some(p) => {
            let splits = SplitSet::load(p)?;
            splits
                .subset(&sel.subset)
                .ok_or_else(|| anyhow!("unknown subset {:?} (expected train, val or test)", sel.subset))?
                .to_vec()
        }
        None => scan_corpus(cfg.root()?, &FilenameGrammar::default())?.records,
    };
    if let Some(n) = sel.limit {
        records.truncate(n);
    }
    if records.is_empty() {
        bail!("no samples selected");
    }
    Ok(records)
}

fn cmd_scan(cfg: &RunConfig) -> anyhow::Result<u8> {
    let index = scan_corpus(cfg.root()?, &FilenameGrammar::default())?;
    let out = ensure_out(cfg)?;
    std::fs::write(out.join("index.json"), serde_json::to_string_pretty(&index)?)?;
    println!("{} samples from {} trees", index.len(), index.counts_per_tree().len());
    for (view, n) in index.counts_per_view() {
        println!("  {view}: {n}");
    }
    for issue in &index.issues {
        warn!("{}: {}", issue.path.display(), issue.reason);
    }
    Ok(0)
}

fn cmd_split(cfg: &RunConfig, unit: Option<SplitUnit>) -> anyhow::Result<u8> {
    let index = scan_corpus(cfg.root()?, &FilenameGrammar::default())?;
    let splits = make_splits(&index, cfg.split_ratios, cfg.seed, unit.unwrap_or(cfg.split_unit))?;
    let out = ensure_out(cfg)?;
    splits.save(&out.join("splits.json"))?;
    let [a, b, c] = splits.sizes();
    println!("train {a}  val {b}  test {c}");
    Ok(0)
}

fn cmd_match(cfg: &RunConfig, sel: &Selection, colormap: bool) -> anyhow::Result<u8> {
    let records = select_records(cfg, sel)?;
    let out = ensure_out(cfg)?;
    let pred_dir = out.join("pred");
    std::fs::create_dir_all(&pred_dir)?;
    let vis_dir = out.join("vis");
    if colormap {
        std::fs::create_dir_all(&vis_dir)?;
    }
    let failures: Vec<String> = records
        .par_iter()
        .filter_map(|rec| {
            let run = || -> crate::Result<()> {
                let left = load_rgb(&rec.left_path)?;
                let right = load_rgb(&rec.right_path)?;
                let disp = match_pair(&left, &right, &cfg.matcher)?;
                let id = rec.id();
                let path = pred_dir.join(format!("{id}.{}", cfg.disparity_format.extension()));
                write_disparity_file(&disp, &path, cfg.disparity_format)?;
                if colormap {
                    render_colormap(&disp, None).save(vis_dir.join(format!("{id}.png")))?;
                }
                Ok(())
            };
            run().err().map(|e| format!("{}: {e}", rec.id()))
        })
        .collect();
    for f in &failures {
        warn!("{f}");
    }
    println!("matched {} of {} samples into {}", records.len() - failures.len(), records.len(), pred_dir.display());
    if failures.is_empty() {
        Ok(0)
    } else {
        Ok(EXIT_PARTIAL)
    }
}

fn cmd_eval(cfg: &RunConfig, pred_dir: &Path, model: &str, sel: &Selection) -> anyhow::Result<u8> {
    if !pred_dir.is_dir() {
        bail!("prediction directory {} does not exist", pred_dir.display());
    }
    let records = select_records(cfg, sel)?;
    let source = PredictionDir {
        dir: pred_dir.to_path_buf(),
    };
    let report = evaluate_split(model, &source, &records, &cfg.rig);
    let out = ensure_out(cfg)?;
    report.save(out)?;
    let s = &report.summary;
    println!(
        "{model}: {} images, EPE {:.3} px, D1 {:.2} %, δ1 {:.2} %, MAE {:.2} cm",
        s.images, s.epe, s.d1_all, s.delta1, s.mae_cm
    );
    if report.is_complete() {
        Ok(0)
    } else {
        for f in &report.failures {
            warn!("{}: {}", f.id, f.reason);
        }
        eprintln!("{} of {} samples could not be scored", report.failures.len(), records.len());
        Ok(EXIT_PARTIAL)
    }
}

fn cmd_profile(cfg: &RunConfig, resolution: (u32, u32), cmd: Option<&str>, label: Option<&str>) -> anyhow::Result<u8> {
    let mut opts = cfg.profile;
    let report = match cmd {
        Some(c) => {
            let mut parts = c.split_whitespace().map(str::to_string);
            let program = parts.next().ok_or_else(|| anyhow!("--cmd is empty"))?;
            opts.resolution = None;
            profile(label.unwrap_or(&program), command_runner(program.clone(), parts.collect()), &opts)
        }
        None => {
            let (w, h) = resolution;
            opts.resolution = Some(resolution);
            let (left, right) = textured_pair(w as usize, h as usize, 8.0, cfg.seed);
            let matcher = cfg.matcher.clone();
            profile(label.unwrap_or("matcher"), |_| match_pair(&left, &right, &matcher).map(|_| ()), &opts)
        }
    };
    let out = ensure_out(cfg)?;
    std::fs::write(out.join("latency.json"), report.to_json()?)?;
    println!(
        "{}: mean {:.2} ms, median {:.2} ms, p95 {:.2} ms, {:.2} FPS over {} frames",
        report.label, report.mean_ms, report.median_ms, report.p95_ms, report.fps, report.measured_frames
    );
    println!(
        "travel per update at {} m/s: {:.1} cm",
        cfg.speed_mps,
        travel_per_update(cfg.speed_mps, report.mean_ms)
    );
    if let Some(f) = &report.failure {
        bail!("profiling stopped early: {f}");
    }
    Ok(0)
}

fn cmd_cost(cfg: &RunConfig, all: bool, crop: Option<(u32, u32)>) -> anyhow::Result<u8> {
    let crop = crop.unwrap_or(TRAIN_CROP);
    let presets: Vec<Preset> = if all { Preset::ALL.to_vec() } else { vec![cfg.preset] };
    let rows = presets
        .into_iter()
        .map(|p| Ok((p, variant_cost_summary(&p.spec(), crop)?)))
        .collect::<crate::Result<Vec<_>>>()?;
    let out = ensure_out(cfg)?;
    let f = std::fs::File::create(out.join("cost.csv"))?;
    write_cost_csv(&rows, f)?;
    let json: Vec<_> = rows.iter().map(|(_, c)| c).collect();
    std::fs::write(out.join("cost.json"), serde_json::to_string_pretty(&json)?)?;
    write_cost_csv(&rows, std::io::stdout())?;
    Ok(0)
}

fn cmd_distance(
    cfg: &RunConfig,
    files: &[PathBuf],
    roi: Option<(usize, usize, usize, usize)>,
    mask: Option<&Path>,
    min_valid: usize,
    window: usize,
) -> anyhow::Result<u8> {
    let roi = match (roi, mask) {
        (Some((x, y, width, height)), None) => Roi::Rect { x, y, width, height },
        (None, Some(p)) => {
            let img = image::open(p).with_context(|| format!("reading mask {}", p.display()))?.to_luma8();
            Roi::Mask {
                width: img.width() as usize,
                height: img.height() as usize,
                mask: img.pixels().map(|px| px[0] > 0).collect(),
            }
        }
        _ => bail!("exactly one of --roi or --mask is required"),
    };
    let estimates = files
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let disp = read_disparity_file(f)?;
            estimate_branch_distance(&disp, &cfg.rig, &roi, min_valid, i as f64)
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let trace = trace_decisions(&estimates, window, &ActuationConfig::default());
    let out = ensure_out(cfg)?;
    std::fs::write(out.join("decisions.json"), serde_json::to_string_pretty(&trace)?)?;
    for t in &trace {
        match (&t.estimate, t.filtered_m) {
            (Some(e), Some(f)) => println!(
                "frame {}: {:.3} m (filtered {:.3} m, spread {:.3} m, {} px) -> {:?}",
                t.frame, e.distance_m, f, e.spread_m, e.n_valid, t.decision
            ),
            _ => println!("frame {}: no measurement -> {:?}", t.frame, t.decision),
        }
    }
    Ok(0)
}

fn figure(cfg: &RunConfig, preds: &[(String, PathBuf)], samples: usize) -> anyhow::Result<RgbImage> {
    let index = scan_corpus(cfg.root()?, &FilenameGrammar::default())?;
    let mut rows = Vec::new();
    for rec in index.records.iter().take(samples) {
        let gt = gt_disparity(rec, &cfg.rig)?;
        let range = gt.valid_range();
        let mut row = vec![load_rgb(&rec.left_path)?, load_rgb(&rec.right_path)?, render_colormap(&gt, range)];
        for (_, dir) in preds {
            let src = PredictionDir { dir: dir.clone() };
            let pred = src
                .predict(rec)
                .unwrap_or_else(|_| DisparityMap::invalid(gt.width(), gt.height()));
            row.push(render_colormap(&pred, range));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("corpus has no samples for the figure");
    }
    Ok(compose_grid(&rows, 2))
}

fn cmd_report(
    cfg: &RunConfig,
    metrics: &[PathBuf],
    latency: &[PathBuf],
    no_reference: bool,
    figure_pred: &[(String, PathBuf)],
    figure_samples: usize,
) -> anyhow::Result<u8> {
    let measured = metrics
        .iter()
        .map(|p| MetricReport::load_json(p).with_context(|| format!("loading {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let lats = latency
        .iter()
        .map(|p| -> anyhow::Result<LatencyReport> {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(serde_json::from_str(&text)?)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let reference = (!no_reference).then(ReferenceResults::bundled);
    let out = ensure_out(cfg)?;
    let acc = accuracy_table(&measured, reference.as_ref());
    acc.save(out, "accuracy", cfg.markdown)?;
    let dep = deployment_table(&measured, &lats, reference.as_ref(), &UsabilityThresholds::default());
    dep.save(out, "deployment", cfg.markdown)?;
    print!("{}\n{}", acc.to_markdown(), dep.to_markdown());
    if !figure_pred.is_empty() {
        let names: Vec<&str> = figure_pred.iter().map(|(n, _)| n.as_str()).collect();
        let grid = figure(cfg, figure_pred, figure_samples)?;
        let path = out.join("figure.png");
        grid.save(&path)?;
        info!("figure columns: left, right, gt, {}", names.join(", "));
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn cmd_mock(cfg: &RunConfig, trees: u32, frames: u32, width: usize, height: usize) -> anyhow::Result<u8> {
    let spec = MockCorpusSpec {
        trees,
        frames,
        width,
        height,
        seed: cfg.seed,
        ..Default::default()
    };
    let n = write_mock_corpus(cfg.root()?, &spec, &FilenameGrammar::default(), &cfg.rig)?;
    println!("wrote {n} samples under {}", cfg.root()?.display());
    Ok(0)
}

pub fn execute(cli: &Cli) -> anyhow::Result<u8> {
    let cfg = RunConfig::resolve(&cli.common)?;
    match &cli.command {
        Command::Scan => cmd_scan(&cfg),
        Command::Split { unit } => cmd_split(&cfg, *unit),
        Command::Match { sel, colormap } => cmd_match(&cfg, sel, *colormap),
        Command::Eval { pred_dir, model, sel } => cmd_eval(&cfg, pred_dir, model, sel),
        Command::Profile { resolution, cmd, label } => cmd_profile(&cfg, *resolution, cmd.as_deref(), label.as_deref()),
        Command::Cost { all_presets, crop } => cmd_cost(&cfg, *all_presets, *crop),
        Command::Distance {
            disp,
            roi,
            mask,
            min_valid,
            window,
        } => cmd_distance(&cfg, disp, *roi, mask.as_deref(), *min_valid, *window),
        Command::Report {
            metrics,
            latency,
            no_reference,
            figure_pred,
            figure_samples,
        } => cmd_report(&cfg, metrics, latency, *no_reference, figure_pred, *figure_samples),
        Command::Mock {
            trees,
            frames_per_view,
            width,
            height,
        } => cmd_mock(&cfg, *trees, *frames_per_view, *width, *height),
    }
}

/// Parses arguments, runs the command and maps failures to exit status 1.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.root = Some("/data/corpus".into());
        cfg.seed = 7;
        cfg.preset = Preset::Prunenano;
        cfg.split_unit = SplitUnit::Tree;
        cfg.profile.resolution = Some((1280, 720));
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let mut base = RunConfig::default();
        base.seed = 3;
        base.save(&path).unwrap();
        let cli = Cli::try_parse_from([
            "branchrange",
            "--config",
            path.to_str().unwrap(),
            "--max-disparity",
            "128",
            "--split",
            "0.7,0.2,0.1",
            "cost",
        ])
        .unwrap();
        let cfg = RunConfig::resolve(&cli.common).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.rig.max_disparity, 128.0);
        assert_eq!(cfg.matcher.max_disparity, 128.0);
        assert_eq!(cfg.split_ratios, [0.7, 0.2, 0.1]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let parse = |args: &[&str]| Cli::try_parse_from(args.iter().copied());
        assert!(parse(&["branchrange", "--bogus", "scan"]).is_err());
        assert!(parse(&["branchrange", "--split", "0.5,0.5", "scan"]).is_err());
        assert!(parse(&["branchrange", "--preset", "vitx", "cost"]).is_err());
        let cli = parse(&["branchrange", "--split", "0.5,0.5,0.5", "scan"]).unwrap();
        assert!(RunConfig::resolve(&cli.common).is_err());
        let cli = parse(&["branchrange", "--rig-focal-px=-1", "scan"]).unwrap();
        assert!(RunConfig::resolve(&cli.common).is_err());
    }

    #[test]
    fn value_parsers() {
        assert_eq!(parse_dims("1280x720").unwrap(), (1280, 720));
        assert!(parse_dims("1280").is_err());
        assert_eq!(parse_roi("1,2,3,4").unwrap(), (1, 2, 3, 4));
        assert!(parse_roi("1,2,3").is_err());
        assert_eq!(parse_named_dir("a=/x").unwrap(), ("a".to_string(), PathBuf::from("/x")));
        assert_eq!(parse_unit("tree").unwrap(), SplitUnit::Tree);
    }
}
