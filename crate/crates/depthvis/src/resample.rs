//! Downsampling operators, their exact adjoints, and bicubic upsampling.
//!
//! The two downsampling models mirror how low-resolution depth data is
//! commonly produced: `Box` averages each factor x factor block (sensor-style
//! area integration), `Nearest` keeps the top-left sample of each block
//! (decimation). Both are linear, and [`downsample_adjoint`] implements their
//! exact transposes so gradient-based solvers can backpropagate through them.

use serde::{Deserialize, Serialize};

use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleModel {
    /// Block mean over the valid pixels of each block.
    Box,
    /// The sample at block offset (0, 0).
    Nearest,
}

impl ResampleModel {
    pub fn name(self) -> &'static str {
        match self {
            ResampleModel::Box => "box",
            ResampleModel::Nearest => "nearest",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resampler {
    pub model: ResampleModel,
    pub factor: usize,
}

impl Resampler {
    pub fn new(model: ResampleModel, factor: usize) -> Result<Self> {
        if factor < 2 {
            return Err(Error::InvalidParameter(format!(
                "resample factor must be >= 2, got {factor}"
            )));
        }
        Ok(Resampler { model, factor })
    }

    fn check_divisible(&self, width: usize, height: usize) -> Result<()> {
        if width % self.factor != 0 || height % self.factor != 0 {
            return Err(Error::NotDivisible {
                width,
                height,
                divisor: self.factor,
            });
        }
        Ok(())
    }
}

/// Downsamples a depth map. Box blocks with at least one valid pixel give a
/// valid output (mean over the valid subset); all-invalid blocks stay
/// invalid. Nearest outputs inherit validity from their source sample.
/// Intrinsics are rescaled accordingly.
pub fn downsample(map: &DepthMap, r: Resampler) -> Result<DepthMap> {
    r.check_divisible(map.width(), map.height())?;
    let f = r.factor;
    let lw = map.width() / f;
    let lh = map.height() / f;
    let mut values = Grid::zeros(lw, lh);
    let mut mask = Grid::filled(lw, lh, true);
    for by in 0..lh {
        for bx in 0..lw {
            match r.model {
                ResampleModel::Box => {
                    let mut sum = 0.0;
                    let mut count = 0usize;
                    for dy in 0..f {
                        for dx in 0..f {
                            let (x, y) = (bx * f + dx, by * f + dy);
                            if map.valid(x, y) {
                                sum += map.values().at(x, y);
                                count += 1;
                            }
                        }
                    }
                    if count == 0 {
                        values.set(bx, by, f64::NAN);
                        *mask.get_mut(bx, by) = false;
                    } else {
                        values.set(bx, by, sum / count as f64);
                    }
                }
                ResampleModel::Nearest => {
                    let (x, y) = (bx * f, by * f);
                    if map.valid(x, y) {
                        values.set(bx, by, map.values().at(x, y));
                    } else {
                        values.set(bx, by, f64::NAN);
                        *mask.get_mut(bx, by) = false;
                    }
                }
            }
        }
    }
    let intrinsics = map.intrinsics().map(|k| k.scaled_down(f));
    DepthMap::from_parts(values, Some(mask), map.kind(), intrinsics)
}

/// Mask-free downsampling of a raw grid (every pixel counts). This is the
/// operator `D` the solver differentiates through.
pub fn downsample_grid(grid: &Grid<f64>, r: Resampler) -> Result<Grid<f64>> {
    r.check_divisible(grid.width(), grid.height())?;
    let f = r.factor;
    let lw = grid.width() / f;
    let lh = grid.height() / f;
    let mut out = Grid::zeros(lw, lh);
    let inv_area = 1.0 / (f * f) as f64;
    for by in 0..lh {
        for bx in 0..lw {
            let v = match r.model {
                ResampleModel::Box => {
                    let mut sum = 0.0;
                    for dy in 0..f {
                        for dx in 0..f {
                            sum += grid.at(bx * f + dx, by * f + dy);
                        }
                    }
                    sum * inv_area
                }
                ResampleModel::Nearest => grid.at(bx * f, by * f),
            };
            out.set(bx, by, v);
        }
    }
    Ok(out)
}

/// Exact transpose of [`downsample_grid`]: satisfies
/// `<D x, y> == <x, D^T y>` up to float rounding.
pub fn downsample_adjoint(low: &Grid<f64>, r: Resampler) -> Grid<f64> {
    let f = r.factor;
    let hw = low.width() * f;
    let hh = low.height() * f;
    let mut out = Grid::zeros(hw, hh);
    let inv_area = 1.0 / (f * f) as f64;
    for by in 0..low.height() {
        for bx in 0..low.width() {
            let v = low.at(bx, by);
            match r.model {
                ResampleModel::Box => {
                    for dy in 0..f {
                        for dx in 0..f {
                            out.set(bx * f + dx, by * f + dy, v * inv_area);
                        }
                    }
                }
                ResampleModel::Nearest => {
                    out.set(bx * f, by * f, v);
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Bicubic upsampling

/// Catmull-Rom kernel (bicubic with a = -0.5).
fn catmull_rom(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// Per-axis taps for one output coordinate: base index and four weights.
/// Output pixel centers sit at `(i + 0.5) / factor - 0.5` in input space.
fn axis_taps(out_idx: usize, factor: usize) -> (isize, [f64; 4]) {
    let s = (out_idx as f64 + 0.5) / factor as f64 - 0.5;
    let i0 = s.floor();
    let frac = s - i0;
    let mut w = [0.0; 4];
    for (j, wj) in w.iter_mut().enumerate() {
        *wj = catmull_rom(frac + 1.0 - j as f64);
    }
    (i0 as isize - 1, w)
}

#[inline]
fn clamp_idx(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Bicubic (Catmull-Rom) upsampling of a raw grid with edge clamping.
/// Reproduces constants exactly and linear ramps away from the border.
pub fn upsample_bicubic_grid(grid: &Grid<f64>, factor: usize) -> Result<Grid<f64>> {
    if factor < 2 {
        return Err(Error::InvalidParameter(format!(
            "upsample factor must be >= 2, got {factor}"
        )));
    }
    let hw = grid.width() * factor;
    let hh = grid.height() * factor;
    let mut out = Grid::zeros(hw, hh);
    // Tap positions repeat with period `factor`; precompute per output column.
    let cols: Vec<(isize, [f64; 4])> = (0..hw).map(|x| axis_taps(x, factor)).collect();
    for oy in 0..hh {
        let (y0, wy) = axis_taps(oy, factor);
        for ox in 0..hw {
            let (x0, wx) = cols[ox];
            let mut acc = 0.0;
            for (j, &wyj) in wy.iter().enumerate() {
                let sy = clamp_idx(y0 + j as isize, grid.height());
                let mut row = 0.0;
                for (i, &wxi) in wx.iter().enumerate() {
                    let sx = clamp_idx(x0 + i as isize, grid.width());
                    row += wxi * grid.at(sx, sy);
                }
                acc += wyj * row;
            }
            out.set(ox, oy, acc);
        }
    }
    Ok(out)
}

/// Bicubic upsampling of a depth map. An output pixel is invalid when any of
/// its sixteen source taps is invalid; values there are NaN. Holes should be
/// filled beforehand when a dense result is needed.
pub fn upsample_bicubic(map: &DepthMap, factor: usize) -> Result<DepthMap> {
    let filled = upsample_bicubic_grid(map.values(), factor)?;
    let (w, h) = (map.width(), map.height());
    let hw = w * factor;
    let hh = h * factor;
    let mut values = Grid::zeros(hw, hh);
    let mut mask = Grid::filled(hw, hh, true);
    for oy in 0..hh {
        let (y0, _) = axis_taps(oy, factor);
        for ox in 0..hw {
            let (x0, _) = axis_taps(ox, factor);
            let mut ok = true;
            'taps: for j in 0..4 {
                let sy = clamp_idx(y0 + j as isize, h);
                for i in 0..4 {
                    let sx = clamp_idx(x0 + i as isize, w);
                    if !map.valid(sx, sy) {
                        ok = false;
                        break 'taps;
                    }
                }
            }
            if ok {
                values.set(ox, oy, filled.at(ox, oy));
            } else {
                values.set(ox, oy, f64::NAN);
                *mask.get_mut(ox, oy) = false;
            }
        }
    }
    // NaN from invalid taps must not leak into valid outputs: recompute on
    // the masked grid would be wrong; instead the caller fills holes first.
    let intrinsics = map.intrinsics().map(|k| k.scaled_up(factor));
    DepthMap::from_parts(values, Some(mask), map.kind(), intrinsics)
}
