//! Depth map container, depth kinds, camera intrinsics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// What the per-pixel scalar means.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthKind {
    /// Stereo disparity in pixels: `focal_x * baseline / perspective_depth`.
    Disparity,
    /// Distance along the optical axis, meters.
    OrthogonalDepth,
    /// Euclidean distance from the camera center, meters.
    PerspectiveDepth,
}

impl DepthKind {
    pub fn name(self) -> &'static str {
        match self {
            DepthKind::Disparity => "disparity",
            DepthKind::OrthogonalDepth => "orthogonal_depth",
            DepthKind::PerspectiveDepth => "perspective_depth",
        }
    }
}

/// Pinhole camera parameters. Focal lengths and principal point are in
/// pixels, the stereo baseline in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal_x: f64,
    pub focal_y: f64,
    pub principal_x: f64,
    pub principal_y: f64,
    pub baseline: f64,
}

impl CameraIntrinsics {
    pub fn new(
        focal_x: f64,
        focal_y: f64,
        principal_x: f64,
        principal_y: f64,
        baseline: f64,
    ) -> Result<Self> {
        if !(focal_x > 0.0 && focal_y > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive, got ({focal_x}, {focal_y})"
            )));
        }
        if !(baseline > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "baseline must be positive, got {baseline}"
            )));
        }
        Ok(CameraIntrinsics {
            focal_x,
            focal_y,
            principal_x,
            principal_y,
            baseline,
        })
    }

    /// Intrinsics for the same camera after resampling by `factor`.
    /// Uses half-pixel-center alignment so principal points stay consistent.
    pub fn scaled_down(&self, factor: usize) -> CameraIntrinsics {
        let f = factor as f64;
        CameraIntrinsics {
            focal_x: self.focal_x / f,
            focal_y: self.focal_y / f,
            principal_x: (self.principal_x + 0.5) / f - 0.5,
            principal_y: (self.principal_y + 0.5) / f - 0.5,
            baseline: self.baseline,
        }
    }

    pub fn scaled_up(&self, factor: usize) -> CameraIntrinsics {
        let f = factor as f64;
        CameraIntrinsics {
            focal_x: self.focal_x * f,
            focal_y: self.focal_y * f,
            principal_x: (self.principal_x + 0.5) * f - 0.5,
            principal_y: (self.principal_y + 0.5) * f - 0.5,
            baseline: self.baseline,
        }
    }
}

/// A single-channel depth image with an optional validity mask and optional
/// camera intrinsics. Values at invalid pixels carry no meaning.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    values: Grid<f64>,
    mask: Option<Grid<bool>>,
    kind: DepthKind,
    intrinsics: Option<CameraIntrinsics>,
}

impl DepthMap {
    /// Builds a fully valid map. Every value must satisfy the kind's range
    /// invariant (finite; strictly positive for the two depth kinds).
    pub fn new(width: usize, height: usize, values: Vec<f64>, kind: DepthKind) -> Result<Self> {
        let values = Grid::from_vec(width, height, values)?;
        let map = DepthMap {
            values,
            mask: None,
            kind,
            intrinsics: None,
        };
        map.validate()?;
        Ok(map)
    }

    /// Builds a map with an explicit validity mask (`true` = valid).
    pub fn with_mask(
        width: usize,
        height: usize,
        values: Vec<f64>,
        mask: Vec<bool>,
        kind: DepthKind,
    ) -> Result<Self> {
        let values = Grid::from_vec(width, height, values)?;
        let mask = Grid::from_vec(width, height, mask)?;
        let map = DepthMap {
            values,
            mask: Some(mask),
            kind,
            intrinsics: None,
        };
        map.validate()?;
        Ok(map)
    }

    pub(crate) fn from_parts(
        values: Grid<f64>,
        mask: Option<Grid<bool>>,
        kind: DepthKind,
        intrinsics: Option<CameraIntrinsics>,
    ) -> Result<Self> {
        if let Some(m) = &mask {
            if !m.same_dims(&values) {
                return Err(Error::DimensionMismatch(
                    "mask dimensions differ from value dimensions".into(),
                ));
            }
        }
        let map = DepthMap {
            values,
            mask,
            kind,
            intrinsics,
        };
        map.validate()?;
        Ok(map)
    }

    fn validate(&self) -> Result<()> {
        for (x, y, &v) in self.values.iter() {
            if !self.valid(x, y) {
                continue;
            }
            if !v.is_finite() {
                return Err(Error::InvalidMap(format!(
                    "non-finite value {v} at valid pixel ({x}, {y})"
                )));
            }
            if matches!(
                self.kind,
                DepthKind::OrthogonalDepth | DepthKind::PerspectiveDepth
            ) && v <= 0.0
            {
                return Err(Error::InvalidMap(format!(
                    "{} must be positive, got {v} at ({x}, {y})",
                    self.kind.name()
                )));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn kind(&self) -> DepthKind {
        self.kind
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn intrinsics(&self) -> Option<&CameraIntrinsics> {
        self.intrinsics.as_ref()
    }

    pub fn set_intrinsics(&mut self, intrinsics: Option<CameraIntrinsics>) {
        self.intrinsics = intrinsics;
    }

    pub fn with_intrinsics(mut self, intrinsics: CameraIntrinsics) -> Self {
        self.intrinsics = Some(intrinsics);
        self
    }

    /// Validity of a single pixel. Maps without a mask are fully valid.
    #[inline]
    pub fn valid(&self, x: usize, y: usize) -> bool {
        match &self.mask {
            Some(m) => *m.get(x, y),
            None => true,
        }
    }

    pub fn mask(&self) -> Option<&Grid<bool>> {
        self.mask.as_ref()
    }

    pub fn fully_valid(&self) -> bool {
        self.mask.as_ref().map_or(true, |m| m.all())
    }

    pub fn valid_count(&self) -> usize {
        match &self.mask {
            Some(m) => m.count_set(),
            None => self.values.len(),
        }
    }

    /// Mask of pixels valid in both maps. Errors on dimension mismatch.
    pub fn joint_mask(&self, other: &DepthMap) -> Result<Grid<bool>> {
        if !self.values.same_dims(&other.values) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width(),
                self.height(),
                other.width(),
                other.height()
            )));
        }
        let mut joint = Grid::filled(self.width(), self.height(), true);
        for y in 0..self.height() {
            for x in 0..self.width() {
                *joint.get_mut(x, y) = self.valid(x, y) && other.valid(x, y);
            }
        }
        Ok(joint)
    }

    /// Replaces the values grid, keeping mask, kind and intrinsics.
    /// Re-validates the range invariant.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<DepthMap> {
        let values = self.values.map(|&v| f(v));
        DepthMap::from_parts(values, self.mask.clone(), self.kind, self.intrinsics)
    }
}
