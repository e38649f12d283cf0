//! Dense 2-D float grids with a per-pixel validity mask.

use std::fmt;
use std::marker::PhantomData;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit marker for disparity grids (pixels).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pixels;

/// Unit marker for depth grids (meters).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meters;

/// Row-major grid of `f32` samples plus a validity mask.
///
/// The unit parameter keeps disparity and depth maps from being mixed up at
/// compile time; both share the same storage and accessors.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MaskedGrid<U> {
    width: usize,
    height: usize,
    values: Vec<f32>,
    valid: Vec<bool>,
    #[serde(skip)]
    unit: PhantomData<U>,
}

pub type DisparityMap = MaskedGrid<Pixels>;
pub type DepthMap = MaskedGrid<Meters>;

impl<U> fmt::Debug for MaskedGrid<U> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MaskedGrid")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("valid_pixels", &self.valid_count())
            .finish()
    }
}

impl<U> MaskedGrid<U> {
    pub fn new(width: usize, height: usize, values: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        let n = width * height;
        if values.len() != n || valid.len() != n {
            return Err(Error::Shape(format!(
                "{width}x{height} grid needs {n} samples, got {} values and {} mask entries",
                values.len(),
                valid.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
            unit: PhantomData,
        })
    }

    /// Builds a grid whose mask is derived from the values with `is_valid`.
    pub fn from_values(
        width: usize,
        height: usize,
        values: Vec<f32>,
        is_valid: impl Fn(f32) -> bool,
    ) -> Result<Self> {
        let valid = values.iter().map(|&v| is_valid(v)).collect();
        Self::new(width, height, values, valid)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            values: vec![value; n],
            valid: vec![true; n],
            unit: PhantomData,
        }
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            values: vec![0.0; n],
            valid: vec![false; n],
            unit: PhantomData,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    /// Value at `(x, y)` if the pixel is in bounds and valid.
    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let i = self.index(x, y);
        self.valid[i].then_some(self.values[i])
    }

    pub fn set(&mut self, x: usize, y: usize, value: f32, valid: bool) {
        let i = self.index(x, y);
        self.values[i] = value;
        self.valid[i] = valid;
    }

    pub fn invalidate(&mut self, x: usize, y: usize) {
        let i = self.index(x, y);
        self.valid[i] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Iterator over `(index, value)` of valid pixels.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, f32)> + '_ {
        self.values
            .iter()
            .zip(&self.valid)
            .enumerate()
            .filter_map(|(i, (&v, &ok))| ok.then_some((i, v)))
    }

    /// Smallest and largest valid value.
    pub fn valid_range(&self) -> Option<(f32, f32)> {
        self.iter_valid().fold(None, |acc, (_, v)| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    pub fn into_parts(self) -> (usize, usize, Vec<f32>, Vec<bool>) {
        (self.width, self.height, self.values, self.valid)
    }

    pub(crate) fn check_same_dims<V>(&self, other: &MaskedGrid<V>) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }
}
