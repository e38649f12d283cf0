//! Analytic compute model of the five DEFOM-Stereo variants.
//!
//! The closed-form counts here (correlation planes, ViT patch grid, attention
//! scaling, DS-GRU and Ghost savings) are cross-checked against the MAC
//! counters of the forward kernels in [`kernels`].

pub mod kernels;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Conv-layer depth of the dual DPT decoder that the other decoders are compared with.
pub const REFERENCE_DECODER_LAYERS: u32 = 66;
/// Training crop (height, width).
pub const TRAIN_CROP: (u32, u32) = (384, 512);
pub const DINOV2_PATCH: u32 = 14;

/// Correlation planes sampled per update: `levels * (2 * radius + 1)`.
pub fn corr_planes(levels: u32, radius: u32) -> u32 {
    levels * (2 * radius + 1)
}

/// ViT token count for a crop resized by `scale` and cut into `patch`-pixel squares.
pub fn patch_grid(crop_h: u32, crop_w: u32, scale: f64, patch: u32) -> Result<u64> {
    if crop_h == 0 || crop_w == 0 || patch == 0 {
        return Err(Error::Config("crop and patch sizes must be positive".into()));
    }
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::Config(format!("scale must be in (0, 1], got {scale}")));
    }
    let rows = (f64::from(crop_h) * scale / f64::from(patch)).floor() as u64;
    let cols = (f64::from(crop_w) * scale / f64::from(patch)).floor() as u64;
    if rows == 0 || cols == 0 {
        return Err(Error::Config(format!(
            "{crop_h}x{crop_w} at scale {scale} is smaller than one {patch}-px patch"
        )));
    }
    Ok(rows * cols)
}

/// Self-attention cost ratio between two token counts (attention is quadratic in tokens).
pub fn attention_speedup(tokens_a: u64, tokens_b: u64) -> f64 {
    let r = tokens_a as f64 / tokens_b as f64;
    r * r
}

/// Per-gate MAC ratio of a dense 3x3 conv to depthwise 3x3 + pointwise, at `c` channels.
pub fn ds_gru_ratio(channels: u32) -> f64 {
    let c = f64::from(channels);
    9.0 * c / (9.0 + c)
}

/// Output channels produced by the dense half of a Ghost module.
pub fn ghost_primary_channels(out_c: u32) -> u32 {
    out_c.div_ceil(2)
}

/// Per-pixel MACs of a 3x3 Ghost module: dense conv to the primary half, depthwise 3x3 for the rest.
pub fn ghost_macs_per_pixel(in_c: u32, out_c: u32) -> u64 {
    let primary = u64::from(ghost_primary_channels(out_c));
    let cheap = u64::from(out_c) - primary;
    9 * u64::from(in_c) * primary + 9 * cheap
}

pub fn dense_conv3_macs_per_pixel(in_c: u32, out_c: u32) -> u64 {
    9 * u64::from(in_c) * u64::from(out_c)
}

/// Fraction of dense 3x3 MACs saved by a Ghost module.
pub fn ghost_reduction(in_c: u32, out_c: u32) -> f64 {
    1.0 - ghost_macs_per_pixel(in_c, out_c) as f64 / dense_conv3_macs_per_pixel(in_c, out_c) as f64
}

/// MACs per pixel of one GRU cell with `hidden` channels and `input` extra channels.
///
/// Each of the three gates maps `hidden + input` channels to `hidden`; element-wise
/// gating and activations are not counted.
pub fn gru_cell_macs_per_pixel(hidden: u32, input: u32, depthwise_separable: bool) -> u64 {
    let cin = u64::from(hidden + input);
    let h = u64::from(hidden);
    let per_gate = if depthwise_separable { 9 * cin + cin * h } else { 9 * cin * h };
    3 * per_gate
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Vits,
    Vitl,
    Pruneplus,
    Prunestereo,
    Prunenano,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Vits,
        Preset::Vitl,
        Preset::Pruneplus,
        Preset::Prunestereo,
        Preset::Prunenano,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Preset::Vits => "vits",
            Preset::Vitl => "vitl",
            Preset::Pruneplus => "pruneplus",
            Preset::Prunestereo => "prunestereo",
            Preset::Prunenano => "prunenano",
        }
    }

    pub fn spec(self) -> VariantSpec {
        VariantSpec::preset(self)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.key().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown preset {s:?}; expected one of vits, vitl, pruneplus, prunestereo, prunenano"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub name: String,
    pub backbone: String,
    pub decoder: String,
    pub dinov2_scale: f64,
    pub patch_size: u32,
    pub extracted_layers: u32,
    pub decoder_conv_layers: u32,
    pub gru_levels: u32,
    pub gru_hidden: u32,
    pub fnet_dim: u32,
    pub corr_levels: u32,
    pub corr_radius: u32,
    /// Planes per scale iteration; tabulated because no formula covers every variant.
    /// `None` where the count is not published.
    pub scale_corr_planes: Option<u32>,
    pub iters_train: u32,
    pub iters_scale: u32,
    pub iters_valid: u32,
    pub uses_ghost: bool,
    pub uses_ds_gru: bool,
}

impl VariantSpec {
    pub fn preset(p: Preset) -> Self {
        let base = VariantSpec {
            name: "DEFOM-Stereo ViT-S".into(),
            backbone: "DINOv2 ViT-S".into(),
            decoder: "Dual DPT (RefineNet)".into(),
            dinov2_scale: 1.0,
            patch_size: DINOV2_PATCH,
            extracted_layers: 4,
            decoder_conv_layers: 66,
            gru_levels: 3,
            gru_hidden: 128,
            fnet_dim: 256,
            corr_levels: 2,
            corr_radius: 4,
            scale_corr_planes: Some(40),
            iters_train: 18,
            iters_scale: 8,
            iters_valid: 32,
            uses_ghost: false,
            uses_ds_gru: false,
        };
        match p {
            Preset::Vits => base,
            Preset::Vitl => VariantSpec {
                name: "DEFOM-Stereo ViT-L".into(),
                backbone: "DINOv2 ViT-L".into(),
                ..base
            },
            Preset::Pruneplus => VariantSpec {
                name: "DEFOM-PrunePlus".into(),
                decoder: "EnhancedDPT (2 RCU)".into(),
                extracted_layers: 3,
                decoder_conv_layers: 14,
                gru_levels: 2,
                fnet_dim: 192,
                scale_corr_planes: Some(25),
                iters_train: 14,
                iters_scale: 4,
                iters_valid: 20,
                ..base
            },
            Preset::Prunestereo => VariantSpec {
                name: "DEFOM-PruneStereo".into(),
                decoder: "FastDPT".into(),
                dinov2_scale: 0.75,
                extracted_layers: 2,
                decoder_conv_layers: 6,
                gru_levels: 2,
                gru_hidden: 96,
                fnet_dim: 128,
                corr_levels: 1,
                corr_radius: 3,
                scale_corr_planes: Some(9),
                iters_train: 10,
                iters_scale: 3,
                iters_valid: 12,
                ..base
            },
            Preset::Prunenano => VariantSpec {
                name: "DEFOM-PruneNano".into(),
                decoder: "TurboDecoder + Ghost".into(),
                dinov2_scale: 0.5,
                extracted_layers: 1,
                decoder_conv_layers: 3,
                gru_levels: 2,
                gru_hidden: 64,
                fnet_dim: 96,
                corr_levels: 1,
                corr_radius: 2,
                scale_corr_planes: None,
                iters_train: 7,
                iters_scale: 2,
                iters_valid: 9,
                uses_ghost: true,
                uses_ds_gru: true,
                ..base
            },
        }
    }

    pub fn gru_label(&self) -> String {
        if self.uses_ds_gru {
            format!("DS-GRU [{}]", self.gru_hidden)
        } else {
            format!("{}-level [{}]", self.gru_levels, self.gru_hidden)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub variant: String,
    pub crop: (u32, u32),
    pub attention_tokens: u64,
    pub corr_planes_standard: u32,
    pub corr_planes_scale: Option<u32>,
    /// GRU MACs per pixel per update, summed over levels (unweighted by level resolution).
    pub gru_macs_per_pixel_per_iter: u64,
    pub decoder_relative_depth: f64,
    /// Attention cost of the ViT-S preset divided by this variant's.
    pub attention_speedup_vs_vits: f64,
    /// GRU MACs of the ViT-S preset divided by this variant's.
    pub gru_speedup_vs_vits: f64,
    pub notes: Vec<String>,
}

fn tokens_and_gru(spec: &VariantSpec, crop: (u32, u32)) -> Result<(u64, u64)> {
    let tokens = patch_grid(crop.0, crop.1, spec.dinov2_scale, spec.patch_size)?;
    let gru = u64::from(spec.gru_levels) * gru_cell_macs_per_pixel(spec.gru_hidden, 0, spec.uses_ds_gru);
    Ok((tokens, gru))
}

pub fn variant_cost_summary(spec: &VariantSpec, crop: (u32, u32)) -> Result<CostBreakdown> {
    let (tokens, gru) = tokens_and_gru(spec, crop)?;
    let (ref_tokens, ref_gru) = tokens_and_gru(&Preset::Vits.spec(), crop)?;
    let mut notes = vec![format!(
        "decoder {} (~{} conv layers)",
        spec.decoder, spec.decoder_conv_layers
    )];
    if spec.uses_ds_gru {
        notes.push(format!(
            "DS-GRU per-gate saving {:.3}x at {} channels",
            ds_gru_ratio(spec.gru_hidden),
            spec.gru_hidden
        ));
    }
    if spec.uses_ghost {
        notes.push(format!(
            "Ghost modules save {:.1}% of dense 3x3 MACs at {} channels",
            100.0 * ghost_reduction(spec.fnet_dim, spec.fnet_dim),
            spec.fnet_dim
        ));
    }
    if spec.scale_corr_planes.is_none() {
        notes.push("scale-iteration plane count not published".into());
    }
    Ok(CostBreakdown {
        variant: spec.name.clone(),
        crop,
        attention_tokens: tokens,
        corr_planes_standard: corr_planes(spec.corr_levels, spec.corr_radius),
        corr_planes_scale: spec.scale_corr_planes,
        gru_macs_per_pixel_per_iter: gru,
        decoder_relative_depth: f64::from(spec.decoder_conv_layers) / f64::from(REFERENCE_DECODER_LAYERS),
        attention_speedup_vs_vits: attention_speedup(ref_tokens, tokens),
        gru_speedup_vs_vits: ref_gru as f64 / gru as f64,
        notes,
    })
}

pub const COST_CSV_HEADERS: [&str; 11] = [
    "preset",
    "model",
    "tokens",
    "corr_planes_standard",
    "corr_planes_scale",
    "gru_macs_per_pixel_per_iter",
    "decoder_relative_depth",
    "attention_speedup_vs_vits",
    "gru_speedup_vs_vits",
    "gru",
    "iters_train/scale/valid",
];

pub fn write_cost_csv<W: std::io::Write>(rows: &[(Preset, CostBreakdown)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COST_CSV_HEADERS)?;
    for (p, c) in rows {
        let spec = p.spec();
        w.write_record([
            p.key().to_string(),
            c.variant.clone(),
            c.attention_tokens.to_string(),
            c.corr_planes_standard.to_string(),
            c.corr_planes_scale.map(|v| v.to_string()).unwrap_or_default(),
            c.gru_macs_per_pixel_per_iter.to_string(),
            format!("{:.4}", c.decoder_relative_depth),
            format!("{:.4}", c.attention_speedup_vs_vits),
            format!("{:.4}", c.gru_speedup_vs_vits),
            spec.gru_label(),
            format!("{}/{}/{}", spec.iters_train, spec.iters_scale, spec.iters_valid),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
