//! Disparity/depth conversion for a rectified stereo rig.
//!
//! Depth and disparity are related by `Z = f_px * B / D`. A disparity is usable
//! only when `0 < D <= max_disparity`, so the shallowest depth a rig can report is
//! `f_px * B / max_disparity`. Pixels outside that range are masked, never
//! clamped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DepthMap, DisparityMap};

/// Focal length and baseline of a rectified stereo pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub focal_px: f64,
    pub baseline_m: f64,
    pub max_disparity: f64,
}

impl Default for CameraRig {
    /// Simulated ZED Mini: 933.33 px focal length, 6.3 cm baseline, 512 px cap.
    fn default() -> Self {
        Self {
            focal_px: 933.33,
            baseline_m: 0.063,
            max_disparity: 512.0,
        }
    }
}

impl CameraRig {
    pub fn new(focal_px: f64, baseline_m: f64, max_disparity: f64) -> Result<Self> {
        let rig = Self {
            focal_px,
            baseline_m,
            max_disparity,
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("focal_px", self.focal_px),
            ("baseline_m", self.baseline_m),
            ("max_disparity", self.max_disparity),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidRig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// `f_px * B`, in pixel-meters.
    #[inline]
    pub fn focal_baseline(&self) -> f64 {
        self.focal_px * self.baseline_m
    }

    /// Shallowest representable depth, reached at the disparity cap.
    #[inline]
    pub fn min_depth(&self) -> f64 {
        self.focal_baseline() / self.max_disparity
    }

    #[inline]
    pub fn is_valid_disparity(&self, d: f32) -> bool {
        d.is_finite() && d > 0.0 && f64::from(d) <= self.max_disparity
    }

    /// Depth for a single disparity, `None` outside `(0, max_disparity]`.
    #[inline]
    pub fn depth_at(&self, disparity: f32) -> Option<f64> {
        self.is_valid_disparity(disparity)
            .then(|| self.focal_baseline() / f64::from(disparity))
    }

    /// Disparity for a single depth, `None` when it would exceed the cap.
    #[inline]
    pub fn disparity_at(&self, depth: f32) -> Option<f64> {
        if !(depth.is_finite() && depth > 0.0) {
            return None;
        }
        let d = self.focal_baseline() / f64::from(depth);
        (d <= self.max_disparity).then_some(d)
    }

    /// Disparity map from raw values, masking anything outside `(0, max_disparity]`.
    pub fn disparity_map(&self, width: usize, height: usize, values: Vec<f32>) -> Result<DisparityMap> {
        DisparityMap::from_values(width, height, values, |d| self.is_valid_disparity(d))
    }
}

/// Converts every valid disparity to metric depth.
pub fn disparity_to_depth(disp: &DisparityMap, rig: &CameraRig) -> DepthMap {
    let mut values = Vec::with_capacity(disp.len());
    let mut valid = Vec::with_capacity(disp.len());
    for (&d, &ok) in disp.values().iter().zip(disp.mask()) {
        match rig.depth_at(d).filter(|_| ok) {
            Some(z) => {
                values.push(z as f32);
                valid.push(true);
            }
            None => {
                values.push(0.0);
                valid.push(false);
            }
        }
    }
    DepthMap::new(disp.width(), disp.height(), values, valid).expect("same shape as input")
}

/// Converts every valid depth to disparity; depths closer than the rig's minimum are masked.
pub fn depth_to_disparity(depth: &DepthMap, rig: &CameraRig) -> DisparityMap {
    let mut values = Vec::with_capacity(depth.len());
    let mut valid = Vec::with_capacity(depth.len());
    for (&z, &ok) in depth.values().iter().zip(depth.mask()) {
        match rig.disparity_at(z).filter(|_| ok) {
            Some(d) => {
                values.push(d as f32);
                valid.push(true);
            }
            None => {
                values.push(0.0);
                valid.push(false);
            }
        }
    }
    DisparityMap::new(depth.width(), depth.height(), values, valid).expect("same shape as input")
}

/// Tool distance at a single pixel. `Ok(None)` means the pixel carries no measurement.
pub fn point_distance(disp: &DisparityMap, rig: &CameraRig, x: usize, y: usize) -> Result<Option<f64>> {
    if x >= disp.width() || y >= disp.height() {
        return Err(Error::OutOfBounds {
            x,
            y,
            width: disp.width(),
            height: disp.height(),
        });
    }
    Ok(disp.get(x, y).and_then(|d| rig.depth_at(d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rig() -> CameraRig {
        CameraRig::default()
    }

    #[test]
    fn focal_baseline_product() {
        assert!((rig().focal_baseline() - 58.79979).abs() < 1e-9);
    }

    #[test]
    fn disparity_to_depth_examples() {
        let m = DisparityMap::new(3, 1, vec![29.39994, 512.0, 7.0], vec![true, true, false]).unwrap();
        let z = disparity_to_depth(&m, &rig());
        assert!((z.values()[0] - 2.000).abs() < 1e-5);
        assert!((z.values()[1] - 0.11484).abs() < 1e-5);
        assert!(!z.mask()[2]);
        assert!((rig().min_depth() - 58.79979 / 512.0).abs() < 1e-12);
    }

    #[test]
    fn depth_to_disparity_examples() {
        let z = DepthMap::filled(2, 1, 2.0);
        let d = depth_to_disparity(&z, &rig());
        assert!((d.values()[0] - 29.399895).abs() < 1e-4);

        let near = DepthMap::filled(1, 1, 0.10);
        let d = depth_to_disparity(&near, &rig());
        assert!(!d.mask()[0]);
    }

    #[test]
    fn point_distance_cases() {
        let m = DisparityMap::new(
            3,
            1,
            vec![58.79979, 117.59958, 1.0],
            vec![true, true, false],
        )
        .unwrap();
        let one = point_distance(&m, &rig(), 0, 0).unwrap().unwrap();
        assert!((one - 1.0).abs() < 1e-6);
        let half = point_distance(&m, &rig(), 1, 0).unwrap().unwrap();
        assert!((half - 0.5).abs() < 1e-6);
        assert_eq!(point_distance(&m, &rig(), 2, 0).unwrap(), None);
        assert!(matches!(point_distance(&m, &rig(), 3, 0), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn non_positive_and_capped_disparities_are_invalid() {
        let m = rig().disparity_map(4, 1, vec![0.0, -1.0, 513.0, f32::NAN]).unwrap();
        assert_eq!(m.valid_count(), 0);
        assert_eq!(disparity_to_depth(&m, &rig()).valid_count(), 0);
    }

    #[test]
    fn rejects_degenerate_rig() {
        assert!(CameraRig::new(0.0, 0.063, 512.0).is_err());
        assert!(CameraRig::new(933.33, -1.0, 512.0).is_err());
        assert!(CameraRig::new(933.33, 0.063, f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            values in proptest::collection::vec(0.01f32..512.0, 1..64),
            mask in proptest::collection::vec(any::<bool>(), 64),
        ) {
            let n = values.len();
            let m = DisparityMap::new(n, 1, values.clone(), mask[..n].to_vec()).unwrap();
            let back = depth_to_disparity(&disparity_to_depth(&m, &rig()), &rig());
            for i in 0..n {
                prop_assert!(!back.mask()[i] || m.mask()[i]);
                if m.mask()[i] && back.mask()[i] {
                    let rel = ((back.values()[i] - values[i]) / values[i]).abs();
                    prop_assert!(rel <= 1e-6, "rel {rel}");
                }
            }
        }

        #[test]
        fn depth_is_strictly_decreasing_in_disparity(a in 0.01f32..512.0, b in 0.01f32..512.0) {
            prop_assume!(a != b);
            let (za, zb) = (rig().depth_at(a).unwrap(), rig().depth_at(b).unwrap());
            prop_assert_eq!(a > b, za < zb);
        }
    }
}
