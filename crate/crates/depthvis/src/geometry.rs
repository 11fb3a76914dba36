//! Normals from depth, directional-light rendering, depth-kind conversion.
//!
//! The rendering model is deliberately plain: a unit light direction `e`
//! shades a unit normal `n` as `e . n`, with no visibility test and no
//! clamping, so rendered values live in [-1, 1]. Comparing two depth maps
//! through such renderings is what the rest of the crate builds on.

use serde::{Deserialize, Serialize};

use crate::depth::{DepthKind, DepthMap};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Tolerance for unit-length checks on light directions.
const UNIT_TOL: f64 = 1e-9;
/// Tolerance for orthonormality of the three-light basis.
const ORTHO_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Vectors

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3 {
            x: self.y * o.z - self.z * o.y,
            y: self.z * o.x - self.x * o.z,
            z: self.x * o.y - self.y * o.x,
        }
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    /// None when the vector is too short to normalize meaningfully.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n < 1e-12 {
            None
        } else {
            Some(self.scale(1.0 / n))
        }
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

// ---------------------------------------------------------------------------
// Light rig

/// Three orthonormal light directions plus one extra direction. The basis
/// makes the averaged rendering metrics basis-independent; the extra light
/// adds an oblique view for the per-light reductions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRig", into = "RawRig")]
pub struct LightRig {
    basis: [Vec3; 3],
    extra: Vec3,
}

#[derive(Serialize, Deserialize)]
struct RawRig {
    basis: [Vec3; 3],
    extra: Vec3,
}

impl TryFrom<RawRig> for LightRig {
    type Error = Error;
    fn try_from(raw: RawRig) -> Result<Self> {
        LightRig::new(raw.basis, raw.extra)
    }
}

impl From<LightRig> for RawRig {
    fn from(rig: LightRig) -> Self {
        RawRig {
            basis: rig.basis,
            extra: rig.extra,
        }
    }
}

impl LightRig {
    pub fn new(basis: [Vec3; 3], extra: Vec3) -> Result<Self> {
        for (i, e) in basis.iter().enumerate() {
            if (e.norm() - 1.0).abs() > ORTHO_TOL {
                return Err(Error::NonOrthonormalRig(format!(
                    "basis light {} has length {}",
                    i + 1,
                    e.norm()
                )));
            }
        }
        for i in 0..3 {
            for j in (i + 1)..3 {
                let d = basis[i].dot(basis[j]);
                if d.abs() > ORTHO_TOL {
                    return Err(Error::NonOrthonormalRig(format!(
                        "lights {} and {} have dot product {d}",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        if (extra.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::NonUnitLight(extra.norm()));
        }
        Ok(LightRig { basis, extra })
    }

    /// Axis-aligned basis plus the diagonal (1,1,1)/sqrt(3).
    pub fn canonical() -> Self {
        let s = 1.0 / 3f64.sqrt();
        LightRig {
            basis: [
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
            ],
            extra: Vec3::new(s, s, s),
        }
    }

    pub fn basis(&self) -> [Vec3; 3] {
        self.basis
    }

    pub fn extra(&self) -> Vec3 {
        self.extra
    }

    /// e1, e2, e3, e4 in reduction order.
    pub fn lights(&self) -> [Vec3; 4] {
        [self.basis[0], self.basis[1], self.basis[2], self.extra]
    }
}

impl Default for LightRig {
    fn default() -> Self {
        LightRig::canonical()
    }
}

// ---------------------------------------------------------------------------
// Normal maps

/// How depth values are turned into surface tangents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalModel {
    /// Treats the map as a height field z = d(x, y) on a regular grid.
    /// `pixel_pitch` is the grid spacing in value units per pixel.
    HeightField { pixel_pitch: f64 },
    /// Back-projects pixels to 3D with the camera intrinsics and crosses the
    /// two tangents. Requires intrinsics on the map.
    Perspective,
}

impl NormalModel {
    pub fn height_field() -> Self {
        NormalModel::HeightField { pixel_pitch: 1.0 }
    }
}

impl Default for NormalModel {
    fn default() -> Self {
        NormalModel::height_field()
    }
}

/// Per-pixel unit normals with a validity mask.
#[derive(Clone, Debug)]
pub struct NormalMap {
    vectors: Grid<Vec3>,
    mask: Grid<bool>,
}

impl NormalMap {
    pub fn width(&self) -> usize {
        self.vectors.width()
    }

    pub fn height(&self) -> usize {
        self.vectors.height()
    }

    #[inline]
    pub fn vector(&self, x: usize, y: usize) -> Vec3 {
        *self.vectors.get(x, y)
    }

    #[inline]
    pub fn valid(&self, x: usize, y: usize) -> bool {
        *self.mask.get(x, y)
    }

    pub fn mask(&self) -> &Grid<bool> {
        &self.mask
    }

    pub fn joint_mask(&self, other: &NormalMap) -> Result<Grid<bool>> {
        if !self.vectors.same_dims(&other.vectors) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width(),
                self.height(),
                other.width(),
                other.height()
            )));
        }
        Ok(self.mask.and(&other.mask))
    }
}

/// Forward difference with a backward fallback on the last row/column.
/// Returns the two stencil neighbors (for validity checks) and the delta.
#[inline]
fn forward_diff(values: &Grid<f64>, x: usize, y: usize, axis_x: bool) -> f64 {
    if axis_x {
        if x + 1 < values.width() {
            values.at(x + 1, y) - values.at(x, y)
        } else {
            values.at(x, y) - values.at(x - 1, y)
        }
    } else if y + 1 < values.height() {
        values.at(x, y + 1) - values.at(x, y)
    } else {
        values.at(x, y) - values.at(x, y - 1)
    }
}

/// Normal of the surface patch spanned by two tangents, oriented toward the
/// camera (non-negative z). None when the tangents are parallel.
fn normal_from_tangents(tx: Vec3, ty: Vec3) -> Option<Vec3> {
    let n = tx.cross(ty).normalized()?;
    Some(if n.z < 0.0 { n.scale(-1.0) } else { n })
}

/// Estimates per-pixel unit normals. Pixels whose difference stencil touches
/// an invalid pixel are masked out (one-pixel dilation of the invalid set).
pub fn normals_from_depth(map: &DepthMap, model: NormalModel) -> Result<NormalMap> {
    let w = map.width();
    let h = map.height();
    if w < 2 || h < 2 {
        return Err(Error::MapTooSmall(format!(
            "normals need at least 2x2 pixels, got {w}x{h}"
        )));
    }

    // Dilate the invalid set by one pixel (4-neighborhood): every stencil
    // reads at most the direct neighbors.
    let mut mask = Grid::filled(w, h, true);
    for y in 0..h {
        for x in 0..w {
            let ok = map.valid(x, y)
                && (x == 0 || map.valid(x - 1, y))
                && (x + 1 == w || map.valid(x + 1, y))
                && (y == 0 || map.valid(x, y - 1))
                && (y + 1 == h || map.valid(x, y + 1));
            *mask.get_mut(x, y) = ok;
        }
    }

    let up = Vec3::new(0.0, 0.0, 1.0);
    let mut vectors = Grid::filled(w, h, up);

    match model {
        NormalModel::HeightField { pixel_pitch } => {
            if !(pixel_pitch > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "pixel_pitch must be positive, got {pixel_pitch}"
                )));
            }
            let values = map.values();
            for y in 0..h {
                for x in 0..w {
                    if !*mask.get(x, y) {
                        continue;
                    }
                    let gx = forward_diff(values, x, y, true) / pixel_pitch;
                    let gy = forward_diff(values, x, y, false) / pixel_pitch;
                    // Unnormalized normal (-gx, -gy, 1); |.| >= 1, never degenerate.
                    let n = Vec3::new(-gx, -gy, 1.0).normalized().unwrap();
                    *vectors.get_mut(x, y) = n;
                }
            }
        }
        NormalModel::Perspective => {
            let k = map
                .intrinsics()
                .copied()
                .ok_or(Error::MissingIntrinsics("perspective normals"))?;
            // Back-project every pixel to a 3D point.
            let map = match map.kind() {
                DepthKind::Disparity => convert_kind(map, DepthKind::PerspectiveDepth)?,
                _ => map.clone(),
            };
            let mut points = Grid::filled(w, h, Vec3::new(0.0, 0.0, 0.0));
            for y in 0..h {
                for x in 0..w {
                    let u = (x as f64 - k.principal_x) / k.focal_x;
                    let v = (y as f64 - k.principal_y) / k.focal_y;
                    let d = map.values().at(x, y);
                    let p = match map.kind() {
                        DepthKind::OrthogonalDepth => Vec3::new(u * d, v * d, d),
                        DepthKind::PerspectiveDepth => {
                            let ray = Vec3::new(u, v, 1.0);
                            ray.scale(d / ray.norm())
                        }
                        DepthKind::Disparity => unreachable!("converted above"),
                    };
                    *points.get_mut(x, y) = p;
                }
            }
            for y in 0..h {
                for x in 0..w {
                    if !*mask.get(x, y) {
                        continue;
                    }
                    let tx = if x + 1 < w {
                        points.get(x + 1, y).sub(*points.get(x, y))
                    } else {
                        points.get(x, y).sub(*points.get(x - 1, y))
                    };
                    let ty = if y + 1 < h {
                        points.get(x, y + 1).sub(*points.get(x, y))
                    } else {
                        points.get(x, y).sub(*points.get(x, y - 1))
                    };
                    match normal_from_tangents(tx, ty) {
                        Some(n) => *vectors.get_mut(x, y) = n,
                        None => *mask.get_mut(x, y) = false,
                    }
                }
            }
        }
    }

    Ok(NormalMap { vectors, mask })
}

// ---------------------------------------------------------------------------
// Rendering

/// A shaded image: `e . n` per pixel, in [-1, 1] where valid.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendering {
    pub values: Grid<f64>,
    pub mask: Grid<bool>,
}

impl Rendering {
    #[inline]
    pub fn valid(&self, x: usize, y: usize) -> bool {
        *self.mask.get(x, y)
    }

    pub fn joint_mask(&self, other: &Rendering) -> Result<Grid<bool>> {
        if !self.values.same_dims(&other.values) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.values.width(),
                self.values.height(),
                other.values.width(),
                other.values.height()
            )));
        }
        Ok(self.mask.and(&other.mask))
    }
}

/// Shades a normal map with one unit light. No visibility, no clamping.
pub fn render(normals: &NormalMap, light: Vec3) -> Result<Rendering> {
    if (light.norm() - 1.0).abs() > UNIT_TOL {
        return Err(Error::NonUnitLight(light.norm()));
    }
    let w = normals.width();
    let h = normals.height();
    let mut values = Grid::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = if normals.valid(x, y) {
                light.dot(normals.vector(x, y))
            } else {
                f64::NAN
            };
            values.set(x, y, v);
        }
    }
    Ok(Rendering {
        values,
        mask: normals.mask().clone(),
    })
}

/// Renders the same map under the three basis lights.
pub fn basis_renderings(
    map: &DepthMap,
    rig: &LightRig,
    model: NormalModel,
) -> Result<[Rendering; 3]> {
    let normals = normals_from_depth(map, model)?;
    let [e1, e2, e3] = rig.basis();
    Ok([
        render(&normals, e1)?,
        render(&normals, e2)?,
        render(&normals, e3)?,
    ])
}

// ---------------------------------------------------------------------------
// Depth kind conversion

/// Length of the unit-z ray through pixel (x, y): converts orthogonal depth
/// to perspective depth when multiplied in.
fn ray_norm(k: &crate::depth::CameraIntrinsics, x: usize, y: usize) -> f64 {
    let u = (x as f64 - k.principal_x) / k.focal_x;
    let v = (y as f64 - k.principal_y) / k.focal_y;
    (1.0 + u * u + v * v).sqrt()
}

/// Converts between disparity, orthogonal depth and perspective depth.
///
/// Disparity and perspective depth are related by
/// `disparity = focal_x * baseline / depth`; orthogonal and perspective
/// depth by the per-pixel ray length. All conversions need intrinsics and
/// strictly positive source values. Invalid pixels keep their mask and get
/// a NaN value.
pub fn convert_kind(map: &DepthMap, target: DepthKind) -> Result<DepthMap> {
    if map.kind() == target {
        return Ok(map.clone());
    }
    let k = map
        .intrinsics()
        .copied()
        .ok_or(Error::MissingIntrinsics("depth kind conversion"))?;
    let w = map.width();
    let h = map.height();
    let mut values = Grid::zeros(w, h);
    let mut mask = Grid::filled(w, h, true);
    for y in 0..h {
        for x in 0..w {
            if !map.valid(x, y) {
                values.set(x, y, f64::NAN);
                *mask.get_mut(x, y) = false;
                continue;
            }
            let v = map.values().at(x, y);
            if v <= 0.0 {
                return Err(Error::NonPositiveDepth { value: v, x, y });
            }
            // Convert through perspective depth as the middle ground.
            let persp = match map.kind() {
                DepthKind::PerspectiveDepth => v,
                DepthKind::Disparity => k.focal_x * k.baseline / v,
                DepthKind::OrthogonalDepth => v * ray_norm(&k, x, y),
            };
            let out = match target {
                DepthKind::PerspectiveDepth => persp,
                DepthKind::Disparity => k.focal_x * k.baseline / persp,
                DepthKind::OrthogonalDepth => persp / ray_norm(&k, x, y),
            };
            values.set(x, y, out);
        }
    }
    DepthMap::from_parts(values, Some(mask), target, Some(k))
}
