//! Differentiable losses for the variational solver.
//!
//! Two ingredients: a Laplacian L1 pyramid loss that spreads the data term
//! across frequency bands, and a differentiable version of the visual MSE
//! from [`crate::metrics::mse_v`]. Both return the loss value together with
//! its exact gradient with respect to the first argument, so a first-order
//! solver can combine them freely.
//!
//! Gradients assume dense grids: the solver never feeds masked maps here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LightRig, NormalModel, Vec3};
use crate::grid::Grid;

/// 5-tap binomial kernel, normalized.
const KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// A loss value and its gradient with respect to the first input grid.
#[derive(Clone, Debug)]
pub struct LossValueGrad {
    pub value: f64,
    pub gradient: Grid<f64>,
}

/// Weights of the combined loss: `lap1 + w * mse_v`. `w_i` is reserved for
/// a photometric guidance term and is carried but not folded into the sum;
/// guidance acts through the solver's smoothness weights instead.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w: f64,
    #[serde(default)]
    pub w_i: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w: 1.0, w_i: 0.0 }
    }
}

// ---------------------------------------------------------------------------
// Pyramid plumbing (all linear, with exact transposes)

/// Separable clamped-border blur with the binomial kernel.
fn blur(g: &Grid<f64>) -> Grid<f64> {
    let (w, h) = (g.width(), g.height());
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = Grid::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in KERNEL.iter().enumerate() {
                acc += k * g.at(clamp(x as isize + t as isize - 2, w), y);
            }
            tmp.set(x, y, acc);
        }
    }
    let mut out = Grid::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in KERNEL.iter().enumerate() {
                acc += k * tmp.at(x, clamp(y as isize + t as isize - 2, h));
            }
            out.set(x, y, acc);
        }
    }
    out
}

/// Exact transpose of [`blur`]: scatter with the same clamped indexing.
fn blur_transpose(g: &Grid<f64>) -> Grid<f64> {
    let (w, h) = (g.width(), g.height());
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = Grid::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = g.at(x, y);
            for (t, &k) in KERNEL.iter().enumerate() {
                let sy = clamp(y as isize + t as isize - 2, h);
                *tmp.get_mut(x, sy) += k * v;
            }
        }
    }
    let mut out = Grid::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = tmp.at(x, y);
            for (t, &k) in KERNEL.iter().enumerate() {
                let sx = clamp(x as isize + t as isize - 2, w);
                *out.get_mut(sx, y) += k * v;
            }
        }
    }
    out
}

fn decimate(g: &Grid<f64>) -> Grid<f64> {
    let mut out = Grid::zeros(g.width() / 2, g.height() / 2);
    for y in 0..out.height() {
        for x in 0..out.width() {
            out.set(x, y, g.at(2 * x, 2 * y));
        }
    }
    out
}

fn zero_stuff(g: &Grid<f64>) -> Grid<f64> {
    let mut out = Grid::zeros(g.width() * 2, g.height() * 2);
    for y in 0..g.height() {
        for x in 0..g.width() {
            out.set(2 * x, 2 * y, g.at(x, y));
        }
    }
    out
}

/// Blur-then-decimate: one pyramid reduction step.
fn pyr_down(g: &Grid<f64>) -> Grid<f64> {
    decimate(&blur(g))
}

/// Transpose of [`pyr_down`]: zero-stuff, then transposed blur.
fn pyr_down_transpose(g: &Grid<f64>) -> Grid<f64> {
    blur_transpose(&zero_stuff(g))
}

/// Zero-stuff and blur with the doubled kernel: the expansion used to form
/// Laplacian bands. Reproduces constants away from the clamped border.
fn pyr_up(g: &Grid<f64>) -> Grid<f64> {
    blur(&zero_stuff(g)).map(|&v| 4.0 * v)
}

/// Transpose of [`pyr_up`].
fn pyr_up_transpose(g: &Grid<f64>) -> Grid<f64> {
    decimate(&blur_transpose(g)).map(|&v| 4.0 * v)
}

fn sub(a: &Grid<f64>, b: &Grid<f64>) -> Grid<f64> {
    let mut out = a.clone();
    for (o, &bv) in out.data_mut().iter_mut().zip(b.data()) {
        *o -= bv;
    }
    out
}

fn axpy(acc: &mut Grid<f64>, scale: f64, g: &Grid<f64>) {
    for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += scale * v;
    }
}

/// Laplacian decomposition: `levels - 1` difference bands plus the coarsest
/// level kept as-is.
fn laplacian_pyramid(g: &Grid<f64>, levels: usize) -> Vec<Grid<f64>> {
    let mut bands = Vec::with_capacity(levels);
    let mut current = g.clone();
    for _ in 0..levels - 1 {
        let next = pyr_down(&current);
        bands.push(sub(&current, &pyr_up(&next)));
        current = next;
    }
    bands.push(current);
    bands
}

fn check_pyramid_inputs(a: &Grid<f64>, b: &Grid<f64>, levels: usize) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if levels == 0 {
        return Err(Error::InvalidParameter("need at least one level".into()));
    }
    let div = 1usize << (levels - 1);
    if a.width() % div != 0 || a.height() % div != 0 {
        return Err(Error::NotDivisible {
            width: a.width(),
            height: a.height(),
            divisor: div,
        });
    }
    Ok(())
}

/// Per-level band differences `band_j(a) - band_j(b)`, finest first. Handy
/// for seeing which frequency band an error lives in.
pub fn band_differences(a: &Grid<f64>, b: &Grid<f64>, levels: usize) -> Result<Vec<Grid<f64>>> {
    check_pyramid_inputs(a, b, levels)?;
    let pa = laplacian_pyramid(a, levels);
    let pb = laplacian_pyramid(b, levels);
    Ok(pa.iter().zip(&pb).map(|(x, y)| sub(x, y)).collect())
}

/// Laplacian L1 loss: `sum over levels j of 4^j * mean |band_j(a) - band_j(b)|`,
/// finest level weighted 1. The gradient (with respect to `a`) is the exact
/// transpose of the linear pyramid applied to the band signs; the kink of
/// |.| at zero contributes a zero subgradient.
pub fn lap1(a: &Grid<f64>, b: &Grid<f64>, levels: usize) -> Result<LossValueGrad> {
    check_pyramid_inputs(a, b, levels)?;
    let diffs = band_differences(a, b, levels)?;

    let mut value = 0.0;
    // s_j = d(value)/d(band_j), ready for backpropagation.
    let mut signs: Vec<Grid<f64>> = Vec::with_capacity(levels);
    for (j, diff) in diffs.iter().enumerate() {
        let weight = (1u64 << (2 * j)) as f64; // 4^j
        let n = diff.len() as f64;
        let mut abs_sum = 0.0;
        let sign = diff.map(|&v| {
            abs_sum += v.abs();
            if v > 0.0 {
                weight / n
            } else if v < 0.0 {
                -weight / n
            } else {
                0.0
            }
        });
        value += weight * abs_sum / n;
        signs.push(sign);
    }

    Ok(LossValueGrad {
        value,
        gradient: backward_gradient(&signs),
    })
}

/// Transposes the band decomposition: given dL/d(band_j) for every level,
/// returns dL/d(input).
fn backward_gradient(signs: &[Grid<f64>]) -> Grid<f64> {
    let levels = signs.len();
    // g = dL/d(level_k), starting at the coarsest.
    let mut g = signs[levels - 1].clone();
    if levels >= 2 {
        // band_{L-2} = level_{L-2} - pyr_up(level_{L-1})
        axpy(&mut g, -1.0, &pyr_up_transpose(&signs[levels - 2]));
    }
    for k in (0..levels - 1).rev() {
        // level_{k+1} feeds level_k through pyr_down.
        let mut gk = pyr_down_transpose(&g);
        axpy(&mut gk, 1.0, &signs[k]);
        if k >= 1 {
            axpy(&mut gk, -1.0, &pyr_up_transpose(&signs[k - 1]));
        }
        g = gk;
    }
    g
}

// ---------------------------------------------------------------------------
// Differentiable visual MSE

fn height_field_pitch(model: NormalModel) -> Result<f64> {
    match model {
        NormalModel::HeightField { pixel_pitch } if pixel_pitch > 0.0 => Ok(pixel_pitch),
        NormalModel::HeightField { pixel_pitch } => Err(Error::InvalidParameter(format!(
            "pixel_pitch must be positive, got {pixel_pitch}"
        ))),
        NormalModel::Perspective => Err(Error::InvalidParameter(
            "loss gradients support the height-field normal model only".into(),
        )),
    }
}

/// Forward difference with backward fallback at the trailing border, on raw
/// grids. Mirrors the stencil used for height-field normals.
#[inline]
fn diff_x(g: &Grid<f64>, x: usize, y: usize) -> f64 {
    if x + 1 < g.width() {
        g.at(x + 1, y) - g.at(x, y)
    } else {
        g.at(x, y) - g.at(x - 1, y)
    }
}

#[inline]
fn diff_y(g: &Grid<f64>, x: usize, y: usize) -> f64 {
    if y + 1 < g.height() {
        g.at(x, y + 1) - g.at(x, y)
    } else {
        g.at(x, y) - g.at(x, y - 1)
    }
}

fn height_field_normal(g: &Grid<f64>, x: usize, y: usize, pitch: f64) -> Vec3 {
    let gx = diff_x(g, x, y) / pitch;
    let gy = diff_y(g, x, y) / pitch;
    Vec3::new(-gx, -gy, 1.0).normalized().unwrap()
}

/// Scatters a derivative with respect to the forward difference at (x, y)
/// back onto the pixels the stencil reads.
fn scatter_diff(
    grad: &mut Grid<f64>,
    x: usize,
    y: usize,
    axis_x: bool,
    coeff: f64,
    w: usize,
    h: usize,
) {
    if axis_x {
        if x + 1 < w {
            *grad.get_mut(x + 1, y) += coeff;
            *grad.get_mut(x, y) -= coeff;
        } else {
            *grad.get_mut(x, y) += coeff;
            *grad.get_mut(x - 1, y) -= coeff;
        }
    } else if y + 1 < h {
        *grad.get_mut(x, y + 1) += coeff;
        *grad.get_mut(x, y) -= coeff;
    } else {
        *grad.get_mut(x, y) += coeff;
        *grad.get_mut(x, y - 1) -= coeff;
    }
}

/// Visual MSE with its gradient with respect to `a`, differentiating through
/// normalization and the difference stencil. Matches
/// [`crate::metrics::mse_v`] on fully valid maps.
pub fn mse_v_grad(
    a: &Grid<f64>,
    b: &Grid<f64>,
    rig: &LightRig,
    model: NormalModel,
) -> Result<LossValueGrad> {
    let pitch = height_field_pitch(model)?;
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let (w, h) = (a.width(), a.height());
    if w < 2 || h < 2 {
        return Err(Error::MapTooSmall(format!(
            "visual loss needs at least 2x2 pixels, got {w}x{h}"
        )));
    }
    let n = (w * h) as f64;
    let basis = rig.basis();
    let mut value = 0.0;
    let mut gradient = Grid::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let gx = diff_x(a, x, y) / pitch;
            let gy = diff_y(a, x, y) / pitch;
            let v = Vec3::new(-gx, -gy, 1.0);
            let len = v.norm();
            let na = v.scale(1.0 / len);
            let nb = height_field_normal(b, x, y, pitch);

            // q = dL/d(n_a) for this pixel.
            let mut q = Vec3::new(0.0, 0.0, 0.0);
            for e in basis {
                let diff = e.dot(na) - e.dot(nb);
                value += diff * diff;
                q = Vec3::new(q.x + diff * e.x, q.y + diff * e.y, q.z + diff * e.z);
            }
            q = q.scale(2.0 / (3.0 * n));

            // Through normalization: dn/dv = (I - n n^T) / |v|.
            let qv = q.sub(na.scale(na.dot(q))).scale(1.0 / len);
            // v = (-gx, -gy, 1): dL/dgx = -qv.x, dL/dgy = -qv.y.
            scatter_diff(&mut gradient, x, y, true, -qv.x / pitch, w, h);
            scatter_diff(&mut gradient, x, y, false, -qv.y / pitch, w, h);
        }
    }
    value /= 3.0 * n;
    Ok(LossValueGrad { value, gradient })
}

// ---------------------------------------------------------------------------
// Combined loss

/// `lap1(a, b) + w * mse_v(a, b)`, values and gradients added termwise.
pub fn combined_loss(
    a: &Grid<f64>,
    b: &Grid<f64>,
    levels: usize,
    weights: LossWeights,
    rig: &LightRig,
    model: NormalModel,
) -> Result<LossValueGrad> {
    if !(weights.w >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "combined loss weight must be nonnegative, got {}",
            weights.w
        )));
    }
    let lap = lap1(a, b, levels)?;
    let vis = mse_v_grad(a, b, rig, model)?;
    let mut gradient = lap.gradient;
    axpy(&mut gradient, weights.w, &vis.gradient);
    Ok(LossValueGrad {
        value: lap.value + weights.w * vis.value,
        gradient,
    })
}

/// Balances the two terms at the start of an optimization:
/// `w = lap1 / mse_v` of the initial pair, so both contribute equally at
/// iteration zero. Errors when either term vanishes; set `w` manually then.
pub fn auto_weight(
    a_init: &Grid<f64>,
    b: &Grid<f64>,
    levels: usize,
    rig: &LightRig,
    model: NormalModel,
) -> Result<LossWeights> {
    let lap = lap1(a_init, b, levels)?.value;
    let vis = mse_v_grad(a_init, b, rig, model)?.value;
    if vis <= 0.0 {
        return Err(Error::AutoWeightDegenerate("mse_v"));
    }
    if lap <= 0.0 {
        return Err(Error::AutoWeightDegenerate("lap1"));
    }
    Ok(LossWeights {
        w: lap / vis,
        w_i: 0.0,
    })
}
