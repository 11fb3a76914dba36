//! Depth-space and rendering-space quality metrics.
//!
//! Depth-space metrics (`rmse_d`, `badpix_d`, `bumpiness_d`) compare raw
//! values. Rendering-space metrics (`mse_v`, `rmse_v`, `rmse_v1`, `dssim_v`,
//! `badpix_v`) compare shaded renderings of the two maps and therefore
//! respond to surface orientation rather than absolute offset: a constant
//! depth bias is invisible to them, while fine surface noise is glaring.
//!
//! All metrics run over the jointly valid pixel set; values at invalid
//! pixels never contribute.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::depth::{CameraIntrinsics, DepthKind, DepthMap};
use crate::error::{Error, Result};
use crate::geometry::{
    convert_kind, normals_from_depth, render, LightRig, NormalModel, Rendering, Vec3,
};
use crate::grid::Grid;

fn check_same_kind(d1: &DepthMap, d2: &DepthMap) -> Result<()> {
    if d1.kind() != d2.kind() {
        return Err(Error::InvalidParameter(format!(
            "depth kind mismatch: {} vs {}",
            d1.kind().name(),
            d2.kind().name()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Depth-space metrics

/// Root mean squared depth difference over jointly valid pixels, optionally
/// clipped from above: `min(rmse, cap)`. The cap bounds the influence of
/// far-range outliers when aggregating across scenes.
pub fn rmse_d(d1: &DepthMap, d2: &DepthMap, cap: Option<f64>) -> Result<f64> {
    check_same_kind(d1, d2)?;
    if let Some(c) = cap {
        if !(c > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rmse_d cap must be positive, got {c}"
            )));
        }
    }
    let joint = d1.joint_mask(d2)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y, &ok) in joint.iter() {
        if ok {
            let diff = d1.values().at(x, y) - d2.values().at(x, y);
            sum += diff * diff;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyIntersection);
    }
    let rmse = (sum / n as f64).sqrt();
    Ok(match cap {
        Some(c) => rmse.min(c),
        None => rmse,
    })
}

/// Threshold for [`badpix_d`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BadPixThreshold {
    /// Bad when `|d1 - d2|` exceeds this (value units).
    Absolute(f64),
    /// Bad when `|d1 - d2| / |d2|` exceeds this many percent. Pixels whose
    /// reference value is exactly zero are excluded and tallied.
    RelativePercent(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BadPixOutcome {
    /// Fraction of considered pixels flagged bad, in [0, 1].
    pub fraction: f64,
    /// Pixels dropped because the relative denominator was zero.
    pub excluded: usize,
}

/// Fraction of pixels whose depth error exceeds a threshold. `d2` is the
/// reference for the relative mode.
pub fn badpix_d(d1: &DepthMap, d2: &DepthMap, threshold: BadPixThreshold) -> Result<BadPixOutcome> {
    check_same_kind(d1, d2)?;
    let tau = match threshold {
        BadPixThreshold::Absolute(t) | BadPixThreshold::RelativePercent(t) => t,
    };
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "badpix threshold must be positive, got {tau}"
        )));
    }
    let joint = d1.joint_mask(d2)?;
    let mut bad = 0usize;
    let mut n = 0usize;
    let mut excluded = 0usize;
    for (x, y, &ok) in joint.iter() {
        if !ok {
            continue;
        }
        let a = d1.values().at(x, y);
        let b = d2.values().at(x, y);
        match threshold {
            BadPixThreshold::Absolute(t) => {
                n += 1;
                if (a - b).abs() > t {
                    bad += 1;
                }
            }
            BadPixThreshold::RelativePercent(t) => {
                if b == 0.0 {
                    excluded += 1;
                    continue;
                }
                n += 1;
                if (a - b).abs() / b.abs() > t / 100.0 {
                    bad += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyIntersection);
    }
    Ok(BadPixOutcome {
        fraction: bad as f64 / n as f64,
        excluded,
    })
}

/// Mean clipped Frobenius norm of the Hessian of the depth *difference*,
/// computed in disparity units: `mean(min(0.05, ||H||_F)) * 100`, range
/// [0, 5]. High values mean the error surface itself is bumpy; a smooth
/// offset between the maps scores zero.
///
/// Both maps are converted to disparity with the given intrinsics. Second
/// derivatives use central differences, so the one-pixel border and any
/// pixel whose 3x3 neighborhood touches an invalid pixel are skipped.
pub fn bumpiness_d(d1: &DepthMap, d2: &DepthMap, intrinsics: &CameraIntrinsics) -> Result<f64> {
    let w = d1.width();
    let h = d1.height();
    if w < 3 || h < 3 {
        return Err(Error::MapTooSmall(format!(
            "bumpiness needs at least 3x3 pixels, got {w}x{h}"
        )));
    }
    let to_disp = |d: &DepthMap| -> Result<DepthMap> {
        let mut d = d.clone();
        d.set_intrinsics(Some(*intrinsics));
        convert_kind(&d, DepthKind::Disparity)
    };
    let a = to_disp(d1)?;
    let b = to_disp(d2)?;
    let joint = a.joint_mask(&b)?;
    let diff_at = |x: usize, y: usize| a.values().at(x, y) - b.values().at(x, y);

    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let neighborhood_valid = (0..3).all(|dy| {
                (0..3).all(|dx| *joint.get(x + dx - 1, y + dy - 1))
            });
            if !neighborhood_valid {
                continue;
            }
            let hxx = diff_at(x + 1, y) - 2.0 * diff_at(x, y) + diff_at(x - 1, y);
            let hyy = diff_at(x, y + 1) - 2.0 * diff_at(x, y) + diff_at(x, y - 1);
            let hxy = (diff_at(x + 1, y + 1) - diff_at(x + 1, y - 1) - diff_at(x - 1, y + 1)
                + diff_at(x - 1, y - 1))
                / 4.0;
            let frob = (hxx * hxx + hyy * hyy + 2.0 * hxy * hxy).sqrt();
            sum += frob.min(0.05);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyIntersection);
    }
    Ok(sum / n as f64 * 100.0)
}

// ---------------------------------------------------------------------------
// Rendering-space metrics

/// Mean squared rendering difference under the three orthonormal basis
/// lights: `1/(3N) * sum over lights and pixels of (e.n1 - e.n2)^2`.
/// Because the basis is orthonormal, the value does not depend on which
/// orthonormal basis is used.
pub fn mse_v(d1: &DepthMap, d2: &DepthMap, rig: &LightRig, model: NormalModel) -> Result<f64> {
    check_same_kind(d1, d2)?;
    let n1 = normals_from_depth(d1, model)?;
    let n2 = normals_from_depth(d2, model)?;
    let joint = n1.joint_mask(&n2)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y, &ok) in joint.iter() {
        if !ok {
            continue;
        }
        let a = n1.vector(x, y);
        let b = n2.vector(x, y);
        for e in rig.basis() {
            let diff = e.dot(a) - e.dot(b);
            sum += diff * diff;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyIntersection);
    }
    Ok(sum / (3.0 * n as f64))
}

pub fn rmse_v(d1: &DepthMap, d2: &DepthMap, rig: &LightRig, model: NormalModel) -> Result<f64> {
    Ok(mse_v(d1, d2, rig, model)?.sqrt())
}

/// Single-light rendering RMSE: `sqrt(1/N * sum (e.n1 - e.n2)^2)`.
/// Unlike [`rmse_v`] this depends on the light direction; the canonical
/// bound `rmse_v1 <= sqrt(3) * rmse_v` relates the two.
pub fn rmse_v1(d1: &DepthMap, d2: &DepthMap, light: Vec3, model: NormalModel) -> Result<f64> {
    check_same_kind(d1, d2)?;
    let n1 = normals_from_depth(d1, model)?;
    let n2 = normals_from_depth(d2, model)?;
    let r1 = render(&n1, light)?;
    let r2 = render(&n2, light)?;
    rendering_rmse(&r1, &r2)
}

fn rendering_rmse(r1: &Rendering, r2: &Rendering) -> Result<f64> {
    let joint = r1.joint_mask(r2)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y, &ok) in joint.iter() {
        if ok {
            let diff = r1.values.at(x, y) - r2.values.at(x, y);
            sum += diff * diff;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyIntersection);
    }
    Ok((sum / n as f64).sqrt())
}

/// Fraction of pixels whose rendering difference exceeds `shades` gray
/// levels after the renderings are mapped to [0, 1] (the 8-bit image view:
/// `(v + 1) / 2`).
pub fn badpix_v(r1: &Rendering, r2: &Rendering, shades: u32) -> Result<f64> {
    if shades == 0 {
        return Err(Error::InvalidParameter(
            "badpix_v needs at least one shade".into(),
        ));
    }
    let tau = shades as f64 / 255.0;
    let joint = r1.joint_mask(r2)?;
    let mut bad = 0usize;
    let mut n = 0usize;
    for (x, y, &ok) in joint.iter() {
        if !ok {
            continue;
        }
        let m1 = (r1.values.at(x, y) + 1.0) / 2.0;
        let m2 = (r2.values.at(x, y) + 1.0) / 2.0;
        n += 1;
        if (m1 - m2).abs() > tau {
            bad += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyIntersection);
    }
    Ok(bad as f64 / n as f64)
}

// ---------------------------------------------------------------------------
// SSIM / DSSIM

/// Stabilization constants and window size for [`dssim_v`].
///
/// The constants follow the common convention `c1 = (0.01 L)^2`,
/// `c2 = (0.03 L)^2` with dynamic range `L = 2` (renderings live in
/// [-1, 1]). Window statistics use sample (n-1) normalization, matching
/// scikit-image's `structural_similarity`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 7,
            c1: 0.0004, // (0.01 * 2)^2
            c2: 0.0036, // (0.03 * 2)^2
        }
    }
}

/// Moments of one comparison window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimWindowStats {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma12: f64,
}

impl SsimWindowStats {
    pub fn luminance(&self, c1: f64) -> f64 {
        (2.0 * self.mu1 * self.mu2 + c1) / (self.mu1 * self.mu1 + self.mu2 * self.mu2 + c1)
    }

    pub fn contrast(&self, c2: f64) -> f64 {
        (2.0 * self.sigma1 * self.sigma2 + c2)
            / (self.sigma1 * self.sigma1 + self.sigma2 * self.sigma2 + c2)
    }

    pub fn structure(&self, c2: f64) -> f64 {
        (self.sigma12 + c2 / 2.0) / (self.sigma1 * self.sigma2 + c2 / 2.0)
    }

    pub fn ssim(&self, c1: f64, c2: f64) -> f64 {
        debug_assert!(self.sigma12.abs() <= self.sigma1 * self.sigma2 + 1e-9);
        self.luminance(c1) * self.contrast(c2) * self.structure(c2)
    }
}

/// Structural dissimilarity of two renderings: `1 - mean SSIM`, in [0, 2].
///
/// SSIM is evaluated per pixel over a square window as the product of the
/// luminance, contrast and structure terms. A window is used only when it
/// lies fully inside the image and every pixel in it is valid in both
/// renderings.
pub fn dssim_v(r1: &Rendering, r2: &Rendering, params: SsimParams) -> Result<f64> {
    let win = params.window;
    let w = r1.values.width();
    let h = r1.values.height();
    if win < 3 || win % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "ssim window must be odd and >= 3, got {win}"
        )));
    }
    if win > w || win > h {
        return Err(Error::WindowTooLarge {
            window: win,
            width: w,
            height: h,
        });
    }
    let joint = r1.joint_mask(r2)?;

    // Prefix sums of the two images, their squares, their product, and the
    // joint-valid indicator. Invalid pixels contribute zeros, and any window
    // containing one is rejected via the count plane.
    let mut sums = [
        Grid::zeros(w + 1, h + 1), // x
        Grid::zeros(w + 1, h + 1), // y
        Grid::zeros(w + 1, h + 1), // x^2
        Grid::zeros(w + 1, h + 1), // y^2
        Grid::zeros(w + 1, h + 1), // xy
        Grid::zeros(w + 1, h + 1), // valid count
    ];
    for y in 0..h {
        for x in 0..w {
            let (a, b, ok) = if *joint.get(x, y) {
                (r1.values.at(x, y), r2.values.at(x, y), 1.0)
            } else {
                (0.0, 0.0, 0.0)
            };
            let cell = [a, b, a * a, b * b, a * b, ok];
            for (plane, v) in sums.iter_mut().zip(cell) {
                let acc = v + plane.at(x, y + 1) + plane.at(x + 1, y) - plane.at(x, y);
                plane.set(x + 1, y + 1, acc);
            }
        }
    }
    let window_sum = |plane: &Grid<f64>, x0: usize, y0: usize| {
        plane.at(x0 + win, y0 + win) + plane.at(x0, y0) - plane.at(x0, y0 + win)
            - plane.at(x0 + win, y0)
    };

    let r = win / 2;
    let np = (win * win) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for cy in r..h - r {
        for cx in r..w - r {
            let (x0, y0) = (cx - r, cy - r);
            if window_sum(&sums[5], x0, y0) < np - 0.5 {
                continue; // window touches an invalid pixel
            }
            let s1 = window_sum(&sums[0], x0, y0);
            let s2 = window_sum(&sums[1], x0, y0);
            let s11 = window_sum(&sums[2], x0, y0);
            let s22 = window_sum(&sums[3], x0, y0);
            let s12 = window_sum(&sums[4], x0, y0);
            let mu1 = s1 / np;
            let mu2 = s2 / np;
            // Sample normalization (n-1), clamping tiny negative rounding.
            let var1 = ((s11 - s1 * s1 / np) / (np - 1.0)).max(0.0);
            let var2 = ((s22 - s2 * s2 / np) / (np - 1.0)).max(0.0);
            let cov = (s12 - s1 * s2 / np) / (np - 1.0);
            let stats = SsimWindowStats {
                mu1,
                mu2,
                sigma1: var1.sqrt(),
                sigma2: var2.sqrt(),
                sigma12: cov,
            };
            total += stats.ssim(params.c1, params.c2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyIntersection);
    }
    Ok(1.0 - total / count as f64)
}

// ---------------------------------------------------------------------------
// Reduction over the light rig

/// Which rendering-space metric to evaluate per light.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RenderingMetric {
    RmseV1,
    DssimV(SsimParams),
    BadPixV { shades: u32 },
}

/// Values under the four rig lights plus the worst and average reductions.
/// "Worst" is the maximum: every metric here increases with error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LightReduction {
    pub per_light: [f64; 4],
    pub worst: f64,
    pub average: f64,
}

impl LightReduction {
    pub fn labeled(&self) -> [(LightLabel, f64); 6] {
        [
            (LightLabel::E1, self.per_light[0]),
            (LightLabel::E2, self.per_light[1]),
            (LightLabel::E3, self.per_light[2]),
            (LightLabel::E4, self.per_light[3]),
            (LightLabel::Max, self.worst),
            (LightLabel::Avg, self.average),
        ]
    }
}

/// Evaluates a rendering metric under all four rig lights and reduces.
/// Normals are computed once per map.
pub fn reduce_over_lights(
    metric: RenderingMetric,
    d1: &DepthMap,
    d2: &DepthMap,
    rig: &LightRig,
    model: NormalModel,
) -> Result<LightReduction> {
    check_same_kind(d1, d2)?;
    let n1 = normals_from_depth(d1, model)?;
    let n2 = normals_from_depth(d2, model)?;
    let mut per_light = [0.0; 4];
    for (slot, light) in per_light.iter_mut().zip(rig.lights()) {
        let r1 = render(&n1, light)?;
        let r2 = render(&n2, light)?;
        *slot = match metric {
            RenderingMetric::RmseV1 => rendering_rmse(&r1, &r2)?,
            RenderingMetric::DssimV(params) => dssim_v(&r1, &r2, params)?,
            RenderingMetric::BadPixV { shades } => badpix_v(&r1, &r2, shades)?,
        };
    }
    let worst = per_light.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let average = per_light.iter().sum::<f64>() / 4.0;
    Ok(LightReduction {
        per_light,
        worst,
        average,
    })
}

// ---------------------------------------------------------------------------
// Report container

/// Light label attached to one reported value. Depth-space metrics carry
/// [`LightLabel::NA`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightLabel {
    E1,
    E2,
    E3,
    E4,
    Max,
    Avg,
    NA,
}

impl fmt::Display for LightLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LightLabel::E1 => "e1",
            LightLabel::E2 => "e2",
            LightLabel::E3 => "e3",
            LightLabel::E4 => "e4",
            LightLabel::Max => "max",
            LightLabel::Avg => "avg",
            LightLabel::NA => "n/a",
        };
        f.write_str(s)
    }
}

/// All metric values for one (scene, method) pair, keyed by metric name and
/// light label. Iteration order is deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub scene_id: String,
    pub method_id: String,
    entries: BTreeMap<(String, LightLabel), f64>,
}

impl MetricReport {
    pub fn new(scene_id: impl Into<String>, method_id: impl Into<String>) -> Self {
        MetricReport {
            scene_id: scene_id.into(),
            method_id: method_id.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, metric: impl Into<String>, label: LightLabel, value: f64) {
        self.entries.insert((metric.into(), label), value);
    }

    pub fn insert_reduction(&mut self, metric: &str, reduction: &LightReduction) {
        for (label, value) in reduction.labeled() {
            self.insert(metric, label, value);
        }
    }

    pub fn get(&self, metric: &str, label: LightLabel) -> Option<f64> {
        self.entries.get(&(metric.to_string(), label)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, LightLabel, f64)> {
        self.entries
            .iter()
            .map(|((m, l), v)| (m.as_str(), *l, *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Correlation statistics

fn check_points(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} xs vs {} ys",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::TooFewPoints {
            need: 3,
            got: xs.len(),
        });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "correlation inputs must be finite".into(),
        ));
    }
    Ok(())
}

/// Pearson product-moment correlation. Errors on fewer than 3 points or
/// zero variance in either argument.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_points(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut ssx = 0.0;
    let mut ssy = 0.0;
    let mut cov = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        ssx += dx * dx;
        ssy += dy * dy;
        cov += dx * dy;
    }
    if ssx == 0.0 || ssy == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok((cov / (ssx * ssy).sqrt()).clamp(-1.0, 1.0))
}

/// Fractional ranks (1-based); ties get the average of their positions.
fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the averaged 1-based rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson on fractional ranks with ties
/// averaged.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_points(xs, ys)?;
    pearson(&fractional_ranks(xs), &fractional_ranks(ys))
}
