//! Forward-only reference kernels with multiply-accumulate counters.
//!
//! Convolutions visit every tap, including zero-padded border taps, so the
//! counted MACs equal `k*k * in * out * H * W` exactly. Bias additions,
//! activations and element-wise gating are not counted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{corr_planes, ghost_primary_channels};

/// Running count of multiply-accumulates.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MacCounter(pub u64);

impl MacCounter {
    #[inline]
    fn add(&mut self, n: usize) {
        self.0 += n as u64;
    }
}

/// Dense `channels x height x width` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut t = Self::zeros(channels, height, width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    let i = t.index(c, y, x);
                    t.data[i] = f(c, y, x);
                }
            }
        }
        t
    }

    pub fn random(channels: usize, height: usize, width: usize, amplitude: f32, rng: &mut impl Rng) -> Self {
        Self::from_fn(channels, height, width, |_, _, _| rng.gen_range(-amplitude..=amplitude))
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    /// Value at a possibly out-of-bounds position; zero padding outside.
    #[inline]
    fn padded(&self, c: usize, y: isize, x: isize) -> f32 {
        if y < 0 || x < 0 || y >= self.height as isize || x >= self.width as isize {
            0.0
        } else {
            self.at(c, y as usize, x as usize)
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn concat(&self, other: &Tensor) -> Result<Tensor> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Shape(format!(
                "cannot concatenate {:?} with {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Tensor {
            channels: self.channels + other.channels,
            height: self.height,
            width: self.width,
            data,
        })
    }

    /// Channels `[from, to)`.
    pub fn slice_channels(&self, from: usize, to: usize) -> Tensor {
        let plane = self.height * self.width;
        Tensor {
            channels: to - from,
            height: self.height,
            width: self.width,
            data: self.data[from * plane..to * plane].to_vec(),
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
        debug_assert_eq!(self.shape(), other.shape());
        Tensor {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            ..self.clone()
        }
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

fn seeded_weights(n: usize, fan_in: usize, rng: &mut impl Rng) -> Vec<f32> {
    let bound = 1.0 / (fan_in as f32).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// Dense 3x3 convolution, stride 1, zero padding 1.
#[derive(Debug, Clone)]
pub struct Conv3x3 {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out][in][ky][kx]`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv3x3 {
    pub fn seeded(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            in_channels,
            out_channels,
            weights: seeded_weights(out_channels * in_channels * 9, in_channels * 9, rng),
            bias: seeded_weights(out_channels, in_channels * 9, rng),
        }
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.weights[((o * self.in_channels + i) * 3 + ky) * 3 + kx]
    }

    pub fn analytic_macs(&self, height: usize, width: usize) -> u64 {
        (9 * self.in_channels * self.out_channels * height * width) as u64
    }

    pub fn forward(&self, input: &Tensor, macs: &mut MacCounter) -> Result<Tensor> {
        check_channels("conv3x3", input, self.in_channels)?;
        let (h, w) = (input.height, input.width);
        let mut out = Tensor::zeros(self.out_channels, h, w);
        for o in 0..self.out_channels {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = self.bias[o];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (sy, sx) = (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                            for i in 0..self.in_channels {
                                acc += self.w(o, i, ky, kx) * input.padded(i, sy, sx);
                            }
                            macs.add(self.in_channels);
                        }
                    }
                    let idx = out.index(o, y, x);
                    out.data[idx] = acc;
                }
            }
        }
        Ok(out)
    }
}

/// Per-channel 3x3 convolution, zero padding 1.
#[derive(Debug, Clone)]
pub struct Depthwise3x3 {
    pub channels: usize,
    /// `[channel][ky][kx]`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Depthwise3x3 {
    pub fn seeded(channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            channels,
            weights: seeded_weights(channels * 9, 9, rng),
            bias: seeded_weights(channels, 9, rng),
        }
    }

    /// Kernel that copies its input: centre tap 1, everything else 0.
    pub fn identity(channels: usize) -> Self {
        let mut weights = vec![0.0; channels * 9];
        for c in 0..channels {
            weights[c * 9 + 4] = 1.0;
        }
        Self {
            channels,
            weights,
            bias: vec![0.0; channels],
        }
    }

    pub fn analytic_macs(&self, height: usize, width: usize) -> u64 {
        (9 * self.channels * height * width) as u64
    }

    pub fn forward(&self, input: &Tensor, macs: &mut MacCounter) -> Result<Tensor> {
        check_channels("depthwise3x3", input, self.channels)?;
        let (h, w) = (input.height, input.width);
        let mut out = Tensor::zeros(self.channels, h, w);
        for c in 0..self.channels {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = self.bias[c];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let v = input.padded(c, y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                            acc += self.weights[c * 9 + ky * 3 + kx] * v;
                        }
                    }
                    macs.add(9);
                    let idx = out.index(c, y, x);
                    out.data[idx] = acc;
                }
            }
        }
        Ok(out)
    }
}

/// 1x1 channel mixer.
#[derive(Debug, Clone)]
pub struct Pointwise {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out][in]`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Pointwise {
    pub fn seeded(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            in_channels,
            out_channels,
            weights: seeded_weights(in_channels * out_channels, in_channels, rng),
            bias: seeded_weights(out_channels, in_channels, rng),
        }
    }

    pub fn analytic_macs(&self, height: usize, width: usize) -> u64 {
        (self.in_channels * self.out_channels * height * width) as u64
    }

    pub fn forward(&self, input: &Tensor, macs: &mut MacCounter) -> Result<Tensor> {
        check_channels("pointwise", input, self.in_channels)?;
        let (h, w) = (input.height, input.width);
        let mut out = Tensor::zeros(self.out_channels, h, w);
        for o in 0..self.out_channels {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = self.bias[o];
                    for i in 0..self.in_channels {
                        acc += self.weights[o * self.in_channels + i] * input.at(i, y, x);
                    }
                    macs.add(self.in_channels);
                    let idx = out.index(o, y, x);
                    out.data[idx] = acc;
                }
            }
        }
        Ok(out)
    }
}

fn check_channels(op: &str, t: &Tensor, expected: usize) -> Result<()> {
    if t.channels != expected {
        return Err(Error::Shape(format!(
            "{op} expects {expected} input channels, got {}",
            t.channels
        )));
    }
    Ok(())
}

/// Ghost module: a dense 3x3 conv makes the primary half of the outputs and a
/// depthwise 3x3 over the first primary channels makes the rest.
#[derive(Debug, Clone)]
pub struct GhostConv {
    pub primary: Conv3x3,
    pub cheap: Depthwise3x3,
}

impl GhostConv {
    pub fn seeded(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        let primary = ghost_primary_channels(out_channels as u32) as usize;
        Self {
            primary: Conv3x3::seeded(in_channels, primary, rng),
            cheap: Depthwise3x3::seeded(out_channels - primary, rng),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.primary.out_channels + self.cheap.channels
    }

    pub fn analytic_macs(&self, height: usize, width: usize) -> u64 {
        self.primary.analytic_macs(height, width) + self.cheap.analytic_macs(height, width)
    }

    pub fn forward(&self, input: &Tensor, macs: &mut MacCounter) -> Result<Tensor> {
        let primary = self.primary.forward(input, macs)?;
        let cheap = self
            .cheap
            .forward(&primary.slice_channels(0, self.cheap.channels), macs)?;
        primary.concat(&cheap)
    }
}

/// One gate convolution: either dense 3x3 or depthwise 3x3 followed by a pointwise mixer.
#[derive(Debug, Clone)]
enum GateConv {
    Dense(Conv3x3),
    Separable(Depthwise3x3, Pointwise),
}

impl GateConv {
    fn forward(&self, input: &Tensor, macs: &mut MacCounter) -> Result<Tensor> {
        match self {
            GateConv::Dense(c) => c.forward(input, macs),
            GateConv::Separable(dw, pw) => pw.forward(&dw.forward(input, macs)?, macs),
        }
    }

    fn analytic_macs(&self, height: usize, width: usize) -> u64 {
        match self {
            GateConv::Dense(c) => c.analytic_macs(height, width),
            GateConv::Separable(dw, pw) => dw.analytic_macs(height, width) + pw.analytic_macs(height, width),
        }
    }
}

/// Convolutional GRU cell: `z`, `r` and candidate `q` gates over `[h, x]`.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub hidden: usize,
    pub input: usize,
    convz: GateConv,
    convr: GateConv,
    convq: GateConv,
}

impl GruCell {
    /// Standard ConvGRU with dense 3x3 gates.
    pub fn conv(hidden: usize, input: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gate = || GateConv::Dense(Conv3x3::seeded(hidden + input, hidden, &mut rng));
        Self {
            hidden,
            input,
            convz: gate(),
            convr: gate(),
            convq: gate(),
        }
    }

    /// Depthwise-separable GRU.
    pub fn depthwise_separable(hidden: usize, input: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cin = hidden + input;
        let mut gate = || {
            let dw = Depthwise3x3::seeded(cin, &mut rng);
            let pw = Pointwise::seeded(cin, hidden, &mut rng);
            GateConv::Separable(dw, pw)
        };
        Self {
            hidden,
            input,
            convz: gate(),
            convr: gate(),
            convq: gate(),
        }
    }

    pub fn analytic_macs(&self, height: usize, width: usize) -> u64 {
        self.convz.analytic_macs(height, width)
            + self.convr.analytic_macs(height, width)
            + self.convq.analytic_macs(height, width)
    }

    /// `h' = (1 - z) * h + z * tanh(conv_q([r * h, x]))`.
    pub fn step(&self, h: &Tensor, x: &Tensor, macs: &mut MacCounter) -> Result<Tensor> {
        check_channels("gru hidden", h, self.hidden)?;
        check_channels("gru input", x, self.input)?;
        let hx = h.concat(x)?;
        let z = self.convz.forward(&hx, macs)?.map(sigmoid);
        let r = self.convr.forward(&hx, macs)?.map(sigmoid);
        let rh = r.zip_map(h, |a, b| a * b).concat(x)?;
        let q = self.convq.forward(&rh, macs)?.map(f32::tanh);
        // Blended in f64: the convex combination then rounds back inside [-1, 1].
        let mut out = h.clone();
        for ((o, &zv), &qv) in out.data.iter_mut().zip(&z.data).zip(&q.data) {
            let (zv, qv, hv) = (f64::from(zv), f64::from(qv), f64::from(*o));
            *o = ((1.0 - zv) * hv + zv * qv) as f32;
        }
        Ok(out)
    }
}

pub fn conv_gru_step(cell: &GruCell, h: &Tensor, x: &Tensor, macs: &mut MacCounter) -> Result<Tensor> {
    cell.step(h, x, macs)
}

pub fn ds_gru_step(cell: &GruCell, h: &Tensor, x: &Tensor, macs: &mut MacCounter) -> Result<Tensor> {
    cell.step(h, x, macs)
}

pub fn ghost_conv_forward(module: &GhostConv, input: &Tensor, macs: &mut MacCounter) -> Result<Tensor> {
    module.forward(input, macs)
}

/// All-pairs 1-D correlation along rows, with a pooled pyramid over the target axis.
#[derive(Debug, Clone)]
pub struct CorrPyramid {
    pub height: usize,
    pub width: usize,
    /// Level `l` holds `height * width * (width >> l)` values, indexed `[y][x1][x2]`.
    levels: Vec<Vec<f32>>,
    widths: Vec<usize>,
}

impl CorrPyramid {
    pub fn build(left: &Tensor, right: &Tensor, levels: usize, macs: &mut MacCounter) -> Result<Self> {
        if left.shape() != right.shape() {
            return Err(Error::Shape(format!(
                "feature maps differ: {:?} vs {:?}",
                left.shape(),
                right.shape()
            )));
        }
        if levels == 0 {
            return Err(Error::Shape("need at least one correlation level".into()));
        }
        let (c, h, w) = left.shape();
        let norm = 1.0 / (c as f32).sqrt();
        let mut base = vec![0.0f32; h * w * w];
        for y in 0..h {
            for x1 in 0..w {
                for x2 in 0..w {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        acc += left.at(ch, y, x1) * right.at(ch, y, x2);
                    }
                    macs.add(c);
                    base[(y * w + x1) * w + x2] = acc * norm;
                }
            }
        }
        let mut pyramid = vec![base];
        let mut widths = vec![w];
        for _ in 1..levels {
            let prev = pyramid.last().expect("non-empty");
            let pw = *widths.last().expect("non-empty");
            let nw = (pw / 2).max(1);
            let mut next = vec![0.0f32; h * w * nw];
            for row in 0..h * w {
                for j in 0..nw {
                    let a = prev[row * pw + (2 * j).min(pw - 1)];
                    let b = prev[row * pw + (2 * j + 1).min(pw - 1)];
                    next[row * nw + j] = 0.5 * (a + b);
                }
            }
            pyramid.push(next);
            widths.push(nw);
        }
        Ok(Self {
            height: h,
            width: w,
            levels: pyramid,
            widths,
        })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Samples `2 * radius + 1` planes per level around `x - d`, linear interpolation, zero outside.
    pub fn sample(&self, disparity: &[f32], radius: usize) -> Result<Tensor> {
        if disparity.len() != self.height * self.width {
            return Err(Error::Shape(format!(
                "disparity has {} values, expected {}",
                disparity.len(),
                self.height * self.width
            )));
        }
        let per_level = 2 * radius + 1;
        let planes = corr_planes(self.levels.len() as u32, radius as u32) as usize;
        let mut out = Tensor::zeros(planes, self.height, self.width);
        for (l, (vol, &lw)) in self.levels.iter().zip(&self.widths).enumerate() {
            let scale = (1usize << l) as f32;
            for y in 0..self.height {
                for x in 0..self.width {
                    let row = &vol[(y * self.width + x) * lw..(y * self.width + x + 1) * lw];
                    let centre = (x as f32 - disparity[y * self.width + x]) / scale;
                    for k in 0..per_level {
                        let pos = centre + k as f32 - radius as f32;
                        let i0 = pos.floor();
                        let f = pos - i0;
                        let tap = |i: f32| -> f32 {
                            if i < 0.0 || i >= lw as f32 {
                                0.0
                            } else {
                                row[i as usize]
                            }
                        };
                        let v = tap(i0) * (1.0 - f) + tap(i0 + 1.0) * f;
                        let idx = out.index(l * per_level + k, y, x);
                        out.data[idx] = v;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Builds the correlation pyramid and samples it around `disparity`.
pub fn sample_correlation(
    left: &Tensor,
    right: &Tensor,
    disparity: &[f32],
    levels: usize,
    radius: usize,
    macs: &mut MacCounter,
) -> Result<Tensor> {
    CorrPyramid::build(left, right, levels, macs)?.sample(disparity, radius)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn conv_mac_counts_match_formulas() {
        let mut r = rng(1);
        let x = Tensor::random(5, 7, 6, 1.0, &mut r);
        let conv = Conv3x3::seeded(5, 4, &mut r);
        let mut m = MacCounter::default();
        conv.forward(&x, &mut m).unwrap();
        assert_eq!(m.0, conv.analytic_macs(7, 6));
        assert_eq!(m.0, 9 * 5 * 4 * 7 * 6);

        let dw = Depthwise3x3::seeded(5, &mut r);
        let mut m = MacCounter::default();
        dw.forward(&x, &mut m).unwrap();
        assert_eq!(m.0, 9 * 5 * 7 * 6);

        let pw = Pointwise::seeded(5, 3, &mut r);
        let mut m = MacCounter::default();
        pw.forward(&x, &mut m).unwrap();
        assert_eq!(m.0, 5 * 3 * 7 * 6);
    }

    #[test]
    fn ghost_shape_and_macs() {
        let mut r = rng(2);
        let x = Tensor::random(8, 5, 5, 1.0, &mut r);
        let g = GhostConv::seeded(8, 8, &mut r);
        let mut m = MacCounter::default();
        let y = ghost_conv_forward(&g, &x, &mut m).unwrap();
        assert_eq!(y.shape(), (8, 5, 5));
        assert_eq!(m.0, g.analytic_macs(5, 5));
        assert_eq!(m.0, super::super::ghost_macs_per_pixel(8, 8) * 25);
    }

    #[test]
    fn ghost_equals_dense_with_duplicating_weights() {
        let mut r = rng(3);
        let (cin, cout) = (6, 6);
        let ghost = {
            let mut g = GhostConv::seeded(cin, cout, &mut r);
            g.cheap = Depthwise3x3::identity(g.cheap.channels);
            g
        };
        let half = ghost.primary.out_channels;
        let mut weights = ghost.primary.weights.clone();
        weights.extend_from_slice(&ghost.primary.weights[..(cout - half) * cin * 9]);
        let mut bias = ghost.primary.bias.clone();
        bias.extend_from_slice(&ghost.primary.bias[..cout - half]);
        let dense = Conv3x3 {
            in_channels: cin,
            out_channels: cout,
            weights,
            bias,
        };
        let x = Tensor::random(cin, 6, 7, 1.0, &mut r);
        let mut m = MacCounter::default();
        assert_eq!(ghost.forward(&x, &mut m).unwrap(), dense.forward(&x, &mut m).unwrap());
    }

    #[test]
    fn gru_shapes_and_errors() {
        let cell = GruCell::conv(4, 2, 0);
        let h = Tensor::zeros(4, 3, 3);
        let x = Tensor::zeros(2, 3, 3);
        let mut m = MacCounter::default();
        assert_eq!(cell.step(&h, &x, &mut m).unwrap().shape(), (4, 3, 3));
        assert_eq!(m.0, cell.analytic_macs(3, 3));
        let bad = Tensor::zeros(3, 3, 3);
        assert!(cell.step(&h, &bad, &mut m).is_err());
    }

    #[test]
    fn ds_gru_counted_ratio() {
        let (c, s) = (16, 4);
        let dense = GruCell::conv(c, 0, 1);
        let ds = GruCell::depthwise_separable(c, 0, 1);
        let h = Tensor::random(c, s, s, 1.0, &mut rng(5));
        let x = Tensor::zeros(0, s, s);
        let (mut md, mut ms) = (MacCounter::default(), MacCounter::default());
        conv_gru_step(&dense, &h, &x, &mut md).unwrap();
        ds_gru_step(&ds, &h, &x, &mut ms).unwrap();
        assert_eq!(md.0, super::super::gru_cell_macs_per_pixel(c as u32, 0, false) * (s * s) as u64);
        assert_eq!(ms.0, super::super::gru_cell_macs_per_pixel(c as u32, 0, true) * (s * s) as u64);
        assert!((md.0 as f64 / ms.0 as f64 - super::super::ds_gru_ratio(c as u32)).abs() < 1e-12);
    }

    #[test]
    fn correlation_plane_count_and_peak() {
        let mut r = rng(9);
        let (c, h, w, d) = (8, 4, 24, 3usize);
        let left = Tensor::random(c, h, w, 1.0, &mut r);
        // right pixel x - d carries left pixel x
        let right = Tensor::from_fn(c, h, w, |ch, y, x| if x + d < w { left.at(ch, y, x + d) } else { 0.0 });
        let disp = vec![d as f32; h * w];
        let mut m = MacCounter::default();
        let planes = sample_correlation(&left, &right, &disp, 2, 4, &mut m).unwrap();
        assert_eq!(planes.channels, 18);
        assert_eq!(m.0, (c * h * w * w) as u64);
        let norm = 1.0 / (c as f32).sqrt();
        for y in 0..h {
            for x in d..w {
                let self_corr: f32 = (0..c).map(|ch| left.at(ch, y, x).powi(2)).sum::<f32>() * norm;
                assert!((planes.at(4, y, x) - self_corr).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn correlation_shape_errors() {
        let a = Tensor::zeros(2, 3, 4);
        let b = Tensor::zeros(2, 3, 5);
        let mut m = MacCounter::default();
        assert!(CorrPyramid::build(&a, &b, 1, &mut m).is_err());
        let p = CorrPyramid::build(&a, &a, 1, &mut m).unwrap();
        assert!(p.sample(&[0.0; 5], 1).is_err());
    }
}
