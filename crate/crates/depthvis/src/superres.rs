//! Zero-shot variational depth super-resolution.
//!
//! Upsamples a single low-resolution depth map with no training data: the
//! output is optimized directly so that downsampling it reproduces the
//! observation (fidelity), regularized by a quadratic smoothness term whose
//! per-edge weights can follow an optional high-resolution guide image.
//! The fidelity term is either a plain depth MSE or the band-weighted
//! visual loss from [`crate::loss`], which compares renderings instead of
//! raw depths.
//!
//! Optimization runs coarse to fine over intermediate grids: each scale is
//! solved by gradient descent with Armijo backtracking, then upsampled to
//! seed the next scale. The trace records every accepted step; the line
//! search makes the recorded objective nonincreasing. A solve is
//! single-threaded and fully deterministic: the same problem yields a
//! bit-identical trace and output.

use std::collections::VecDeque;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::geometry::{LightRig, NormalModel};
use crate::grid::Grid;
use crate::loss::{combined_loss, LossWeights};
use crate::resample::{
    downsample_adjoint, downsample_grid, upsample_bicubic_grid, ResampleModel, Resampler,
};

/// Armijo sufficient-decrease constant.
const ARMIJO_C: f64 = 1e-4;
/// Give up halving once the step is this small: no decrease is possible at
/// f64 resolution.
const MIN_STEP: f64 = 1e-18;
/// The relative-decrease stop looks back this many accepted iterations.
const TOL_WINDOW: usize = 10;

/// Data-fidelity term measured between the downsampled candidate and the
/// low-resolution observation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Fidelity {
    /// Mean squared depth deviation.
    DepthMse,
    /// Combined rendering-space loss: Laplacian L1 plus weighted visual MSE.
    /// `levels` must fit the low-resolution dims; normals use the
    /// height-field model in low-res pixel units.
    VisualCombined { levels: usize, rig: LightRig },
}

/// One super-resolution instance.
#[derive(Clone, Debug)]
pub struct SuperResProblem {
    pub low_res: DepthMap,
    pub resampler: Resampler,
    pub factor: usize,
    /// Optional grayscale guide at output resolution; steers smoothness
    /// weights so depth edges may follow image edges.
    pub guide: Option<Grid<f64>>,
    pub weights: LossWeights,
    pub fidelity: Fidelity,
    pub smoothness_lambda: f64,
}

impl SuperResProblem {
    pub fn validate(&self) -> Result<()> {
        if self.factor < 2 {
            return Err(Error::InvalidParameter(format!(
                "super-resolution factor must be >= 2, got {}",
                self.factor
            )));
        }
        if self.resampler.factor != self.factor {
            return Err(Error::InvalidParameter(format!(
                "resampler factor {} does not match problem factor {}",
                self.resampler.factor, self.factor
            )));
        }
        if !(self.smoothness_lambda >= 0.0 && self.smoothness_lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "smoothness_lambda must be a nonnegative finite value, got {}",
                self.smoothness_lambda
            )));
        }
        if !(self.weights.w >= 0.0 && self.weights.w.is_finite())
            || !(self.weights.w_i >= 0.0 && self.weights.w_i.is_finite())
        {
            return Err(Error::InvalidParameter(
                "loss weights must be nonnegative finite values".into(),
            ));
        }
        let (lw, lh) = (self.low_res.width(), self.low_res.height());
        if let Some(guide) = &self.guide {
            let (gw, gh) = (lw * self.factor, lh * self.factor);
            if guide.width() != gw || guide.height() != gh {
                return Err(Error::DimensionMismatch(format!(
                    "guide is {}x{}, output will be {gw}x{gh}",
                    guide.width(),
                    guide.height()
                )));
            }
            if guide.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidMap("guide contains non-finite values".into()));
            }
        }
        if let Fidelity::VisualCombined { levels, .. } = &self.fidelity {
            if *levels == 0 {
                return Err(Error::InvalidParameter("need at least one level".into()));
            }
            let div = 1usize << (levels - 1);
            if lw % div != 0 || lh % div != 0 {
                return Err(Error::NotDivisible {
                    width: lw,
                    height: lh,
                    divisor: div,
                });
            }
            if lw < 2 || lh < 2 {
                return Err(Error::MapTooSmall(format!(
                    "visual fidelity needs a low-res map of at least 2x2, got {lw}x{lh}"
                )));
            }
        }
        Ok(())
    }
}

/// How the first (coarsest) scale is initialized from the observation.
/// Later scales always start from whichever of bicubic or pixel-replication
/// upsampling of the previous solution scores the lower objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    Bicubic,
    NearestUp,
}

/// One accepted optimizer state. `objective = fidelity + lambda * smoothness`
/// as evaluated in that iteration; `step` is 0 for the per-scale
/// initialization records.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub scale: usize,
    pub objective: f64,
    pub fidelity: f64,
    pub smoothness: f64,
    pub step: f64,
}

/// Full optimizer history plus preprocessing flags.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveTrace {
    /// Invalid low-res pixels filled from their nearest valid neighbor
    /// before optimization. Zero for hole-free inputs.
    pub holes_filled: usize,
    pub records: Vec<TraceRecord>,
}

impl SolveTrace {
    pub fn final_record(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// True when the recorded objectives never increase.
    pub fn is_monotone(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| w[1].objective <= w[0].objective)
    }

    /// CSV with one row per record: iteration, scale, objective, fidelity,
    /// smoothness, step.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["iteration", "scale", "objective", "fidelity", "smoothness", "step"])?;
        for r in &self.records {
            out.write_record([
                r.iteration.to_string(),
                r.scale.to_string(),
                r.objective.to_string(),
                r.fidelity.to_string(),
                r.smoothness.to_string(),
                r.step.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::Unwritable {
            path: "<trace csv>".into(),
            source: e,
        })?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Fills invalid pixels from their nearest valid neighbor (multi-source BFS,
/// 4-connected, ties broken by row-major seeding order). Errors when the map
/// has no valid pixel at all.
pub(crate) fn fill_holes(map: &DepthMap) -> Result<(Grid<f64>, usize)> {
    let mask = match map.mask() {
        None => return Ok((map.values().clone(), 0)),
        Some(m) => m,
    };
    let valid = mask.count_set();
    if valid == mask.len() {
        return Ok((map.values().clone(), 0));
    }
    if valid == 0 {
        return Err(Error::InvalidMap(
            "cannot fill holes: no valid pixels".into(),
        ));
    }
    let (w, h) = (map.width(), map.height());
    let mut filled = map.values().clone();
    let mut known = mask.clone();
    let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if *known.get(x, y) {
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        let v = filled.at(x, y);
        let mut neighbors = [(0usize, 0usize); 4];
        let mut n = 0;
        if x > 0 {
            neighbors[n] = (x - 1, y);
            n += 1;
        }
        if x + 1 < w {
            neighbors[n] = (x + 1, y);
            n += 1;
        }
        if y > 0 {
            neighbors[n] = (x, y - 1);
            n += 1;
        }
        if y + 1 < h {
            neighbors[n] = (x, y + 1);
            n += 1;
        }
        for &(nx, ny) in &neighbors[..n] {
            if !*known.get(nx, ny) {
                *known.get_mut(nx, ny) = true;
                filled.set(nx, ny, v);
                queue.push_back((nx, ny));
            }
        }
    }
    Ok((filled, mask.len() - valid))
}

/// Intermediate scales: repeated doubling snapped up to the next value that
/// divides the factor and is a multiple of the previous scale, so every
/// transition is an integer upsampling and the last scale is the factor.
fn scale_ladder(factor: usize) -> Vec<usize> {
    let mut scales = Vec::new();
    let mut s = 1usize;
    while s < factor {
        let mut next = (2 * s).min(factor);
        while factor % next != 0 || next % s != 0 {
            next += 1;
        }
        scales.push(next);
        s = next;
    }
    scales
}

fn replicate(g: &Grid<f64>, r: usize) -> Grid<f64> {
    let mut out = Grid::zeros(g.width() * r, g.height() * r);
    for y in 0..out.height() {
        for x in 0..out.width() {
            out.set(x, y, g.at(x / r, y / r));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Per-scale objective

/// Per-edge smoothness weights; `wx` holds horizontal-neighbor edges
/// ((w-1) x h), `wy` vertical ones (w x (h-1)).
struct EdgeWeights {
    wx: Grid<f64>,
    wy: Grid<f64>,
}

/// Edge weights from a guide image: w = exp(-|gradient| / h) with h the mean
/// gradient magnitude, so guide edges relax the smoothness penalty. A
/// constant guide degenerates to uniform weights.
fn edge_weights(guide: &Grid<f64>) -> EdgeWeights {
    let (w, h) = (guide.width(), guide.height());
    let mut wx = Grid::zeros(w.saturating_sub(1), h);
    let mut wy = Grid::zeros(w, h.saturating_sub(1));
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w.saturating_sub(1) {
            let d = (guide.at(x + 1, y) - guide.at(x, y)).abs();
            wx.set(x, y, d);
            sum += d;
            count += 1;
        }
    }
    for y in 0..h.saturating_sub(1) {
        for x in 0..w {
            let d = (guide.at(x, y + 1) - guide.at(x, y)).abs();
            wy.set(x, y, d);
            sum += d;
            count += 1;
        }
    }
    let mean = if count == 0 { 0.0 } else { sum / count as f64 };
    if mean <= 0.0 {
        return EdgeWeights {
            wx: wx.map(|_| 1.0),
            wy: wy.map(|_| 1.0),
        };
    }
    EdgeWeights {
        wx: wx.map(|&d| (-d / mean).exp()),
        wy: wy.map(|&d| (-d / mean).exp()),
    }
}

#[derive(Clone, Copy, Debug)]
struct Terms {
    objective: f64,
    fidelity: f64,
    smoothness: f64,
}

/// Everything fixed while optimizing one scale.
struct ScaleObjective<'a> {
    problem: &'a SuperResProblem,
    low_res: &'a Grid<f64>,
    scale: usize,
    down: Resampler,
    /// None means uniform weights (unguided).
    weights: Option<EdgeWeights>,
}

impl<'a> ScaleObjective<'a> {
    fn new(problem: &'a SuperResProblem, low_res: &'a Grid<f64>, scale: usize) -> Result<Self> {
        let weights = match &problem.guide {
            None => None,
            Some(guide) => {
                let ratio = problem.factor / scale;
                let guide_s = if ratio == 1 {
                    guide.clone()
                } else {
                    // Guide pyramids always use block means, regardless of
                    // the fidelity operator.
                    downsample_grid(guide, Resampler::new(ResampleModel::Box, ratio)?)?
                };
                Some(edge_weights(&guide_s))
            }
        };
        Ok(ScaleObjective {
            problem,
            low_res,
            scale,
            down: Resampler {
                model: problem.resampler.model,
                factor: scale,
            },
            weights,
        })
    }

    fn fidelity(&self, d: &Grid<f64>) -> Result<(f64, Grid<f64>)> {
        let low = downsample_grid(d, self.down)?;
        match &self.problem.fidelity {
            Fidelity::DepthMse => {
                let n = self.low_res.len() as f64;
                let mut value = 0.0;
                let mut residual = low;
                for (r, &obs) in residual.data_mut().iter_mut().zip(self.low_res.data()) {
                    *r -= obs;
                    value += *r * *r;
                    *r *= 2.0 / n;
                }
                Ok((value / n, downsample_adjoint(&residual, self.down)))
            }
            Fidelity::VisualCombined { levels, rig } => {
                let out = combined_loss(
                    &low,
                    self.low_res,
                    *levels,
                    self.problem.weights,
                    rig,
                    NormalModel::height_field(),
                )?;
                Ok((out.value, downsample_adjoint(&out.gradient, self.down)))
            }
        }
    }

    /// Guide-weighted quadratic smoothness, normalized by pixel count at the
    /// current scale. The normalization makes the term shrink under pixel
    /// replication, which keeps scale transitions from increasing the
    /// objective.
    fn smoothness(&self, d: &Grid<f64>) -> (f64, Grid<f64>) {
        let (w, h) = (d.width(), d.height());
        let n = d.len() as f64;
        let mut value = 0.0;
        let mut grad = Grid::zeros(w, h);
        for y in 0..h {
            for x in 0..w.saturating_sub(1) {
                let we = self.weights.as_ref().map_or(1.0, |ew| ew.wx.at(x, y));
                let diff = d.at(x + 1, y) - d.at(x, y);
                value += we * diff * diff;
                let c = 2.0 * we * diff / n;
                *grad.get_mut(x + 1, y) += c;
                *grad.get_mut(x, y) -= c;
            }
        }
        for y in 0..h.saturating_sub(1) {
            for x in 0..w {
                let we = self.weights.as_ref().map_or(1.0, |ew| ew.wy.at(x, y));
                let diff = d.at(x, y + 1) - d.at(x, y);
                value += we * diff * diff;
                let c = 2.0 * we * diff / n;
                *grad.get_mut(x, y + 1) += c;
                *grad.get_mut(x, y) -= c;
            }
        }
        (value / n, grad)
    }

    fn eval(&self, d: &Grid<f64>) -> Result<(Terms, Grid<f64>)> {
        let (fid, fid_grad) = self.fidelity(d)?;
        let (smo, smo_grad) = self.smoothness(d);
        let lambda = self.problem.smoothness_lambda;
        let mut grad = fid_grad;
        for (g, &s) in grad.data_mut().iter_mut().zip(smo_grad.data()) {
            *g += lambda * s;
        }
        Ok((
            Terms {
                objective: fid + lambda * smo,
                fidelity: fid,
                smoothness: smo,
            },
            grad,
        ))
    }

    fn eval_terms(&self, d: &Grid<f64>) -> Result<Terms> {
        // Value-only evaluation for line-search trials.
        let low = downsample_grid(d, self.down)?;
        let fid = match &self.problem.fidelity {
            Fidelity::DepthMse => {
                let n = self.low_res.len() as f64;
                let mut value = 0.0;
                for (&a, &b) in low.data().iter().zip(self.low_res.data()) {
                    let r = a - b;
                    value += r * r;
                }
                value / n
            }
            Fidelity::VisualCombined { levels, rig } => {
                combined_loss(
                    &low,
                    self.low_res,
                    *levels,
                    self.problem.weights,
                    rig,
                    NormalModel::height_field(),
                )?
                .value
            }
        };
        let (smo, _) = self.smoothness(d);
        Ok(Terms {
            objective: fid + self.problem.smoothness_lambda * smo,
            fidelity: fid,
            smoothness: smo,
        })
    }
}

// ---------------------------------------------------------------------------
// Solver

fn optimize_scale(
    d: &mut Grid<f64>,
    obj: &ScaleObjective,
    budget: usize,
    tol: f64,
    iteration: &mut usize,
    trace: &mut SolveTrace,
) -> Result<()> {
    let mut terms = obj.eval_terms(d)?;
    if !terms.objective.is_finite() {
        return Err(Error::Diverged(*iteration));
    }
    trace.records.push(TraceRecord {
        iteration: *iteration,
        scale: obj.scale,
        objective: terms.objective,
        fidelity: terms.fidelity,
        smoothness: terms.smoothness,
        step: 0.0,
    });
    *iteration += 1;

    let mut window: VecDeque<f64> = VecDeque::with_capacity(TOL_WINDOW + 1);
    window.push_back(terms.objective);
    let mut step = 1.0f64;
    for _ in 0..budget {
        let (_, grad) = obj.eval(d)?;
        let gg: f64 = grad.data().iter().map(|g| g * g).sum();
        if !gg.is_finite() {
            return Err(Error::Diverged(*iteration));
        }
        if gg == 0.0 {
            break;
        }
        // Grow the step after successes, but never start the search below
        // 1.0: the L1 band term can force one microscopic step at a kink,
        // and restarting from twice that value would trap every following
        // iteration at the same size.
        step = (step * 2.0).clamp(1.0, 1e12);
        let mut accepted = None;
        while step >= MIN_STEP {
            let mut candidate = d.clone();
            for (c, &g) in candidate.data_mut().iter_mut().zip(grad.data()) {
                *c -= step * g;
            }
            let trial = obj.eval_terms(&candidate)?;
            if trial.objective.is_finite()
                && trial.objective <= terms.objective - ARMIJO_C * step * gg
            {
                accepted = Some((candidate, trial));
                break;
            }
            step *= 0.5;
        }
        let (candidate, trial) = match accepted {
            Some(a) => a,
            // No achievable decrease: the iterate is as converged as f64
            // arithmetic allows.
            None => break,
        };
        *d = candidate;
        terms = trial;
        trace.records.push(TraceRecord {
            iteration: *iteration,
            scale: obj.scale,
            objective: terms.objective,
            fidelity: terms.fidelity,
            smoothness: terms.smoothness,
            step,
        });
        *iteration += 1;

        window.push_back(terms.objective);
        if window.len() > TOL_WINDOW {
            let past = window.pop_front().unwrap();
            let decrease = (past - terms.objective) / past.abs().max(f64::MIN_POSITIVE);
            if decrease < tol {
                break;
            }
        }
    }
    Ok(())
}

/// Runs the coarse-to-fine solve. Returns the super-resolved map (factor
/// times the observation in each dimension, fully valid, intrinsics scaled
/// when present) and the optimization trace.
pub fn solve(
    problem: &SuperResProblem,
    init: InitMethod,
    budget: usize,
    tol: f64,
) -> Result<(DepthMap, SolveTrace)> {
    problem.validate()?;
    if budget == 0 {
        return Err(Error::InvalidParameter("budget must be >= 1".into()));
    }
    if !(tol >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tol must be nonnegative, got {tol}"
        )));
    }

    let (low_res, holes_filled) = fill_holes(&problem.low_res)?;
    let mut trace = SolveTrace {
        holes_filled,
        records: Vec::new(),
    };
    let mut iteration = 0usize;

    let scales = scale_ladder(problem.factor);
    let mut d: Option<(Grid<f64>, usize)> = None;
    for &scale in &scales {
        let obj = ScaleObjective::new(problem, &low_res, scale)?;
        let current = match d.take() {
            None => match init {
                InitMethod::Bicubic => upsample_bicubic_grid(&low_res, scale)?,
                InitMethod::NearestUp => replicate(&low_res, scale),
            },
            Some((prev, prev_scale)) => {
                // Replication preserves the fidelity term exactly and can
                // only shrink the normalized smoothness, so the cheapest of
                // these candidates cannot increase the objective. The third
                // candidate adds a per-block constant to the bicubic surface
                // so that its downsample matches the previous solution's
                // exactly: same fidelity as replication, but without the
                // block staircase, which gradient descent struggles to
                // remove once the L1 fidelity term has flattened out.
                let ratio = scale / prev_scale;
                let model = problem.resampler.model;
                let rep = replicate(&prev, ratio);
                let bic = upsample_bicubic_grid(&prev, ratio)?;
                let prev_down = downsample_grid(&prev, Resampler::new(model, prev_scale)?)?;
                let bic_down = downsample_grid(&bic, Resampler::new(model, scale)?)?;
                let mut shift = prev_down;
                for (s, b) in shift.data_mut().iter_mut().zip(bic_down.data()) {
                    *s -= *b;
                }
                let mut cor = replicate(&shift, scale);
                for (c, b) in cor.data_mut().iter_mut().zip(bic.data()) {
                    *c += *b;
                }
                let mut best = rep;
                let mut best_obj = obj.eval_terms(&best)?.objective;
                for cand in [bic, cor] {
                    let cand_obj = obj.eval_terms(&cand)?.objective;
                    if cand_obj < best_obj {
                        best = cand;
                        best_obj = cand_obj;
                    }
                }
                best
            }
        };
        let mut current = current;
        optimize_scale(&mut current, &obj, budget, tol, &mut iteration, &mut trace)?;
        d = Some((current, scale));
    }

    let (result, _) = d.expect("ladder is never empty for factor >= 2");
    let (w, h) = (result.width(), result.height());
    let mut map = DepthMap::new(w, h, result.into_data(), problem.low_res.kind())?;
    if let Some(k) = problem.low_res.intrinsics() {
        map.set_intrinsics(Some(k.scaled_up(problem.factor)));
    }
    Ok((map, trace))
}

// ---------------------------------------------------------------------------
// Degradation helper

/// Multiplies every valid value by (1 + g), g ~ Normal(0, sigma^2), with a
/// deterministic ChaCha8 stream. One draw per pixel in row-major order, also
/// for invalid pixels, so masking does not shift the noise pattern.
pub fn add_multiplicative_noise(map: &DepthMap, sigma: f64, seed: u64) -> Result<DepthMap> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be a nonnegative finite value, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(map.clone());
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidParameter(format!("bad noise sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = map.values().clone();
    for y in 0..map.height() {
        for x in 0..map.width() {
            let g: f64 = normal.sample(&mut rng);
            if map.valid(x, y) {
                let v = values.get_mut(x, y);
                *v *= 1.0 + g;
            }
        }
    }
    DepthMap::from_parts(
        values,
        map.mask().cloned(),
        map.kind(),
        map.intrinsics().copied(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth::DepthKind;
    use crate::metrics;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_map(w: usize, h: usize, seed: u64) -> DepthMap {
        let mut rng = StdRng::seed_from_u64(seed);
        let values = (0..w * h).map(|_| rng.gen_range(1.0..2.0)).collect();
        DepthMap::new(w, h, values, DepthKind::OrthogonalDepth).unwrap()
    }

    fn box_resampler(factor: usize) -> Resampler {
        Resampler::new(ResampleModel::Box, factor).unwrap()
    }

    fn depth_mse_problem(low_res: DepthMap, factor: usize, lambda: f64) -> SuperResProblem {
        SuperResProblem {
            low_res,
            resampler: box_resampler(factor),
            factor,
            guide: None,
            weights: LossWeights::default(),
            fidelity: Fidelity::DepthMse,
            smoothness_lambda: lambda,
        }
    }

    #[test]
    fn scale_ladder_hits_divisor_multiples() {
        assert_eq!(scale_ladder(2), vec![2]);
        assert_eq!(scale_ladder(4), vec![2, 4]);
        assert_eq!(scale_ladder(8), vec![2, 4, 8]);
        assert_eq!(scale_ladder(3), vec![3]);
        assert_eq!(scale_ladder(6), vec![2, 6]);
        assert_eq!(scale_ladder(12), vec![2, 4, 12]);
        for f in 2..=16 {
            let ladder = scale_ladder(f);
            assert_eq!(*ladder.last().unwrap(), f);
            let mut prev = 1;
            for &s in &ladder {
                assert_eq!(f % s, 0);
                assert_eq!(s % prev, 0);
                prev = s;
            }
        }
    }

    #[test]
    fn constant_map_is_a_fixed_point() {
        let gt = DepthMap::new(16, 16, vec![2.0; 256], DepthKind::OrthogonalDepth).unwrap();
        let low = crate::resample::downsample(&gt, box_resampler(2)).unwrap();
        let problem = depth_mse_problem(low, 2, 0.05);
        let (out, trace) = solve(&problem, InitMethod::Bicubic, 100, 1e-6).unwrap();
        for &v in out.values().data() {
            assert_relative_eq!(v, 2.0, max_relative = 1e-9);
        }
        assert!(trace.final_record().unwrap().objective < 1e-12);
    }

    #[test]
    fn unregularized_solve_reaches_feasibility() {
        let low = random_map(2, 2, 1);
        let problem = depth_mse_problem(low.clone(), 2, 0.0);
        let (out, _) = solve(&problem, InitMethod::Bicubic, 3000, 0.0).unwrap();
        let down = crate::resample::downsample(&out, box_resampler(2)).unwrap();
        let sq: f64 = down
            .values()
            .data()
            .iter()
            .zip(low.values().data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        assert!(sq < 1e-10, "residual {sq}");
    }

    #[test]
    fn trace_is_monotone_with_increasing_iterations() {
        let low = random_map(8, 8, 2);
        let mut problem = depth_mse_problem(low, 4, 0.01);
        problem.fidelity = Fidelity::VisualCombined {
            levels: 2,
            rig: LightRig::canonical(),
        };
        let (_, trace) = solve(&problem, InitMethod::Bicubic, 60, 1e-9).unwrap();
        assert!(trace.records.len() > 2);
        assert!(trace.is_monotone());
        for w in trace.records.windows(2) {
            assert!(w[1].iteration > w[0].iteration);
        }
        for r in &trace.records {
            assert!(r.objective.is_finite());
            assert_relative_eq!(
                r.objective,
                r.fidelity + problem.smoothness_lambda * r.smoothness,
                max_relative = 1e-12
            );
        }
        // The ladder for factor 4 visits both scales.
        assert!(trace.records.iter().any(|r| r.scale == 2));
        assert!(trace.records.iter().any(|r| r.scale == 4));
    }

    #[test]
    fn solve_is_deterministic() {
        let low = random_map(6, 6, 3);
        let problem = depth_mse_problem(low, 2, 0.02);
        let (a, ta) = solve(&problem, InitMethod::Bicubic, 40, 1e-8).unwrap();
        let (b, tb) = solve(&problem, InitMethod::Bicubic, 40, 1e-8).unwrap();
        assert_eq!(ta, tb);
        let bits = |m: &DepthMap| -> Vec<u64> {
            m.values().data().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn final_fidelity_is_consistent_with_output() {
        for visual in [false, true] {
            let low = random_map(4, 4, 4);
            let mut problem = depth_mse_problem(low.clone(), 2, 0.01);
            if visual {
                problem.fidelity = Fidelity::VisualCombined {
                    levels: 2,
                    rig: LightRig::canonical(),
                };
            }
            let (out, trace) = solve(&problem, InitMethod::Bicubic, 30, 1e-9).unwrap();
            let down = downsample_grid(out.values(), box_resampler(2)).unwrap();
            let recomputed = match &problem.fidelity {
                Fidelity::DepthMse => {
                    let n = low.values().len() as f64;
                    down.data()
                        .iter()
                        .zip(low.values().data())
                        .map(|(&a, &b)| (a - b) * (a - b))
                        .sum::<f64>()
                        / n
                }
                Fidelity::VisualCombined { levels, rig } => {
                    combined_loss(
                        &down,
                        low.values(),
                        *levels,
                        problem.weights,
                        rig,
                        NormalModel::height_field(),
                    )
                    .unwrap()
                    .value
                }
            };
            let final_fid = trace.final_record().unwrap().fidelity;
            assert!(
                (recomputed - final_fid).abs() <= 1e-12 * final_fid.abs().max(1.0),
                "recomputed {recomputed} vs trace {final_fid}"
            );
        }
    }

    #[test]
    fn depth_mse_path_is_scale_equivariant() {
        let low = random_map(4, 4, 5);
        let scaled = low.map_values(|v| 3.0 * v).unwrap();
        let p1 = depth_mse_problem(low, 2, 0.05);
        let p2 = depth_mse_problem(scaled, 2, 0.05);
        let (a, _) = solve(&p1, InitMethod::Bicubic, 200, 1e-10).unwrap();
        let (b, _) = solve(&p2, InitMethod::Bicubic, 200, 1e-10).unwrap();
        for (&va, &vb) in a.values().data().iter().zip(b.values().data()) {
            assert_relative_eq!(3.0 * va, vb, max_relative = 1e-6);
        }
    }

    #[test]
    fn holes_are_filled_and_flagged() {
        let mut mask = Grid::filled(4, 4, true);
        *mask.get_mut(1, 1) = false;
        *mask.get_mut(2, 1) = false;
        let mut values = vec![1.5; 16];
        values[5] = f64::NAN;
        values[6] = f64::NAN;
        let low = DepthMap::with_mask(4, 4, values, mask.data().to_vec(), DepthKind::OrthogonalDepth)
            .unwrap();
        let problem = depth_mse_problem(low, 2, 0.01);
        let (out, trace) = solve(&problem, InitMethod::Bicubic, 50, 1e-8).unwrap();
        assert_eq!(trace.holes_filled, 2);
        assert!(out.fully_valid());
        assert!(out.values().data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn all_invalid_input_errors() {
        let low = DepthMap::with_mask(
            2,
            2,
            vec![f64::NAN; 4],
            vec![false; 4],
            DepthKind::OrthogonalDepth,
        )
        .unwrap();
        let problem = depth_mse_problem(low, 2, 0.01);
        assert!(matches!(
            solve(&problem, InitMethod::Bicubic, 10, 1e-8),
            Err(Error::InvalidMap(_))
        ));
    }

    #[test]
    fn nearest_fill_uses_nearest_valid_value() {
        // Left half 1.0, right half 2.0, hole column in the middle-left.
        let values = vec![
            1.0,
            f64::NAN,
            2.0,
            2.0, //
            1.0,
            f64::NAN,
            2.0,
            2.0,
        ];
        let mask = vec![true, false, true, true, true, false, true, true];
        let map = DepthMap::with_mask(4, 2, values, mask, DepthKind::OrthogonalDepth).unwrap();
        let (filled, holes) = fill_holes(&map).unwrap();
        assert_eq!(holes, 2);
        // Both valid neighbors are at distance 1; row-major BFS seeds the
        // left pixel first, so that value wins deterministically.
        assert_eq!(filled.at(1, 0), 1.0);
        assert_eq!(filled.at(1, 1), 1.0);
    }

    #[test]
    fn replication_preserves_fidelity_and_shrinks_smoothness() {
        let low = random_map(4, 4, 6);
        for model in [ResampleModel::Box, ResampleModel::Nearest] {
            let problem = SuperResProblem {
                low_res: low.clone(),
                resampler: Resampler::new(model, 4).unwrap(),
                factor: 4,
                guide: None,
                weights: LossWeights::default(),
                fidelity: Fidelity::DepthMse,
                smoothness_lambda: 1.0,
            };
            let low_grid = low.values();
            let coarse = ScaleObjective::new(&problem, low_grid, 2).unwrap();
            let fine = ScaleObjective::new(&problem, low_grid, 4).unwrap();
            let mut rng = StdRng::seed_from_u64(7);
            let d2 = Grid::from_vec(8, 8, (0..64).map(|_| rng.gen_range(1.0..2.0)).collect())
                .unwrap();
            let d4 = replicate(&d2, 2);
            let t2 = coarse.eval_terms(&d2).unwrap();
            let t4 = fine.eval_terms(&d4).unwrap();
            assert_relative_eq!(t2.fidelity, t4.fidelity, max_relative = 1e-14);
            assert_relative_eq!(t4.smoothness, t2.smoothness / 2.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn guided_solve_runs_and_respects_guide_dims() {
        let low = random_map(4, 4, 8);
        let mut problem = depth_mse_problem(low, 2, 0.1);
        problem.guide = Some(Grid::filled(8, 8, 0.5));
        let (out, trace) = solve(&problem, InitMethod::NearestUp, 30, 1e-8).unwrap();
        assert_eq!(out.width(), 8);
        assert!(trace.is_monotone());

        problem.guide = Some(Grid::filled(4, 4, 0.5));
        assert!(matches!(
            solve(&problem, InitMethod::Bicubic, 10, 1e-8),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn guide_edge_weights_follow_image_edges() {
        // Step edge: the crossing edge gets a weight below the flat ones.
        let mut guide = Grid::zeros(4, 1);
        guide.set(2, 0, 1.0);
        guide.set(3, 0, 1.0);
        let ew = edge_weights(&guide);
        assert!(ew.wx.at(1, 0) < ew.wx.at(0, 0));
        assert_relative_eq!(ew.wx.at(0, 0), 1.0, max_relative = 1e-12);
        // Constant guide degenerates to uniform weights.
        let flat = edge_weights(&Grid::filled(4, 4, 0.7));
        assert!(flat.wx.data().iter().all(|&v| v == 1.0));
        assert!(flat.wy.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn trace_csv_round_trips_shape() {
        let low = random_map(4, 4, 9);
        let problem = depth_mse_problem(low, 2, 0.01);
        let (_, trace) = solve(&problem, InitMethod::Bicubic, 10, 1e-8).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iteration,scale,objective,fidelity,smoothness,step"
        );
        assert_eq!(text.lines().count(), trace.records.len() + 1);
    }

    #[test]
    fn guided_visual_solve_beats_bicubic_on_ramp() {
        // Bicubic reproduces the linear interior exactly but bends at the
        // clamped borders; the solver recovers those rows from the fidelity
        // term. Uses the same configuration as the benchmark harness:
        // balanced weights with the rendering term emphasized, a bicubic
        // self-guide, and strong guided smoothing.
        let spec = crate::scenegen::SceneSpec {
            kind: crate::scenegen::SceneKind::Ramp { slope: 0.05 },
            width: 32,
            height: 32,
            depth_range: 2.0,
        };
        let gt = crate::scenegen::generate(&spec).unwrap();
        let factor = 4;
        let low = crate::resample::downsample(&gt, box_resampler(factor)).unwrap();
        let rig = LightRig::canonical();
        let model = NormalModel::height_field();
        let init = crate::resample::upsample_bicubic_grid(low.values(), factor).unwrap();
        let down = downsample_grid(&init, box_resampler(factor)).unwrap();
        let mut weights =
            crate::loss::auto_weight(&down, low.values(), 4, &rig, model).unwrap();
        weights.w *= 4.0;
        let problem = SuperResProblem {
            low_res: low.clone(),
            resampler: box_resampler(factor),
            factor,
            guide: Some(init),
            weights,
            fidelity: Fidelity::VisualCombined {
                levels: 4,
                rig: rig.clone(),
            },
            smoothness_lambda: 600.0,
        };
        let (out, _) = solve(&problem, InitMethod::Bicubic, 2000, 1e-6).unwrap();
        let bicubic = crate::resample::upsample_bicubic(&low, factor).unwrap();
        let solver_err = metrics::rmse_v(&out, &gt, &rig, model).unwrap();
        let bicubic_err = metrics::rmse_v(&bicubic, &gt, &rig, model).unwrap();
        assert!(
            solver_err < bicubic_err,
            "solver {solver_err} vs bicubic {bicubic_err}"
        );
    }

    #[test]
    fn noise_sigma_zero_is_identity() {
        let map = random_map(4, 4, 10);
        let out = add_multiplicative_noise(&map, 0.0, 1).unwrap();
        let bits = |m: &DepthMap| -> Vec<u64> {
            m.values().data().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&map), bits(&out));
    }

    #[test]
    fn noise_is_deterministic_and_mask_preserving() {
        let mut mask = vec![true; 16];
        mask[3] = false;
        let mut values = vec![2.0; 16];
        values[3] = f64::NAN;
        let map = DepthMap::with_mask(4, 4, values, mask, DepthKind::OrthogonalDepth).unwrap();
        let a = add_multiplicative_noise(&map, 0.05, 42).unwrap();
        let b = add_multiplicative_noise(&map, 0.05, 42).unwrap();
        let c = add_multiplicative_noise(&map, 0.05, 43).unwrap();
        assert_eq!(
            a.values().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!(a
            .values()
            .data()
            .iter()
            .zip(c.values().data())
            .any(|(x, y)| x.to_bits() != y.to_bits()));
        assert!(!a.valid(3, 0));
        assert!(a.values().at(3, 0).is_nan());
        // Valid pixels actually changed.
        assert_ne!(a.values().at(0, 0), 2.0);
    }

    #[test]
    fn noise_statistics_match_sigma() {
        let map = DepthMap::new(64, 64, vec![2.0; 64 * 64], DepthKind::OrthogonalDepth).unwrap();
        let noisy = add_multiplicative_noise(&map, 0.05, 7).unwrap();
        let rel: Vec<f64> = noisy.values().data().iter().map(|v| v / 2.0 - 1.0).collect();
        let mean = rel.iter().sum::<f64>() / rel.len() as f64;
        let var = rel.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
            / (rel.len() - 1) as f64;
        let std = var.sqrt();
        assert!((std - 0.05).abs() < 0.01, "sample std {std}");
    }

    #[test]
    fn negative_sigma_errors() {
        let map = random_map(2, 2, 11);
        assert!(add_multiplicative_noise(&map, -0.1, 0).is_err());
    }

    #[test]
    fn validation_catches_factor_mismatch_and_bad_levels() {
        let low = random_map(6, 6, 12);
        let mut problem = depth_mse_problem(low, 4, 0.01);
        problem.resampler = box_resampler(2);
        assert!(problem.validate().is_err());

        problem.resampler = box_resampler(4);
        problem.fidelity = Fidelity::VisualCombined {
            levels: 3,
            rig: LightRig::canonical(),
        };
        // 6x6 low-res is not divisible by 4.
        assert!(matches!(
            problem.validate(),
            Err(Error::NotDivisible { .. })
        ));
    }
}
