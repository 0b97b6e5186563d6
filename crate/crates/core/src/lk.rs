//! Pyramidal Lucas-Kanade point tracking with a forward-backward validity check.
//!
//! The template patch (and therefore its Jacobian and the Hessian inverse) is
//! fixed per point per level; only the target patch is resampled during the
//! Gauss-Newton iterations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::{Displacement, Point};
use crate::pyramid::{build_pyramid, gaussian_weights, window_offsets, Frame, ImagePyramid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LkConfig {
    /// Patch half size `w`; the window is `(2w+1)²`.
    pub half_size: usize,
    /// Gaussian bandwidth of the patch weights, in pixels.
    pub sigma: f64,
    /// Coarsest pyramid level `L_m`.
    pub levels: usize,
    pub max_iters: usize,
    pub convergence_eps: f64,
    /// Maximum round-trip error in pixels for a track to count as valid (inclusive).
    pub fb_threshold: f64,
    pub min_hessian_det: f64,
}

impl Default for LkConfig {
    fn default() -> Self {
        LkConfig {
            half_size: 10,
            sigma: 5.0,
            levels: 3,
            max_iters: 30,
            convergence_eps: 0.01,
            fb_threshold: 1.0,
            min_hessian_det: 1e-6,
        }
    }
}

impl LkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("lk: {what}")));
        if self.half_size == 0 {
            return bad("half_size must be >= 1");
        }
        if !(self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1");
        }
        if !(self.convergence_eps > 0.0) {
            return bad("convergence_eps must be positive");
        }
        if !(self.fb_threshold > 0.0) {
            return bad("fb_threshold must be positive");
        }
        if !(self.min_hessian_det > 0.0) {
            return bad("min_hessian_det must be positive");
        }
        Ok(())
    }

    pub fn patch_side(&self) -> usize {
        2 * self.half_size + 1
    }

    pub fn build_pyramid(&self, frame: &Frame) -> Result<ImagePyramid> {
        build_pyramid(frame, self.levels, self.patch_side())
    }
}

/// Symmetric 2×2 matrix `[[a, b], [b, c]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sym2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Sym2 {
    pub fn det(&self) -> f64 {
        self.a * self.c - self.b * self.b
    }

    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.a + self.c);
        let r = (0.25 * (self.a - self.c).powi(2) + self.b * self.b).sqrt();
        (mean - r, mean + r)
    }

    pub fn apply(&self, v: Displacement) -> Displacement {
        Displacement::new(self.a * v.x + self.b * v.y, self.b * v.x + self.c * v.y)
    }

    /// Moore-Penrose pseudo-inverse. Equal to the inverse for well-conditioned
    /// matrices; for rank-one matrices it solves in the range only.
    pub fn pseudo_inverse(&self) -> Sym2 {
        let (lo, hi) = self.eigenvalues();
        if hi <= 0.0 {
            return Sym2 { a: 0.0, b: 0.0, c: 0.0 };
        }
        if lo > 1e-10 * hi {
            let det = self.det();
            return Sym2 {
                a: self.c / det,
                b: -self.b / det,
                c: self.a / det,
            };
        }
        // unit eigenvector of `hi`
        let (vx, vy) = if self.b.abs() > 0.0 {
            (self.b, hi - self.a)
        } else if self.a >= self.c {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        let n = vx.hypot(vy);
        let (vx, vy) = (vx / n, vy / n);
        Sym2 {
            a: vx * vx / hi,
            b: vx * vy / hi,
            c: vy * vy / hi,
        }
    }
}

/// Per-point, per-level solver state: template samples, stacked Jacobian
/// `J` (`C·|Ω|` rows of `[∂x, ∂y]`), Gaussian weights (the diagonal of `A`)
/// and `H = JᵀAJ` with its inverse.
#[derive(Debug, Clone)]
pub struct LkSolverContext {
    center: Point,
    half_size: usize,
    channels: usize,
    weights: Vec<f64>,
    template: Vec<f64>,
    jacobian: Vec<[f64; 2]>,
    hessian: Sym2,
    hessian_inv: Sym2,
}

impl LkSolverContext {
    /// Builds the context without checking conditioning.
    pub fn build(source: &Frame, center: Point, half_size: usize, sigma: f64) -> Self {
        let channels = source.channels();
        let weights = gaussian_weights(half_size, sigma);
        let rows = weights.len() * channels;
        let mut template = Vec::with_capacity(rows);
        let mut jacobian = Vec::with_capacity(rows);
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for (o, &alpha) in window_offsets(half_size).zip(&weights) {
            let p = center + o;
            for ch in 0..channels {
                template.push(source.sample_channel(p.x, p.y, ch));
                let gx = 0.5
                    * (source.sample_channel(p.x + 1.0, p.y, ch)
                        - source.sample_channel(p.x - 1.0, p.y, ch));
                let gy = 0.5
                    * (source.sample_channel(p.x, p.y + 1.0, ch)
                        - source.sample_channel(p.x, p.y - 1.0, ch));
                jacobian.push([gx, gy]);
                a += alpha * gx * gx;
                b += alpha * gx * gy;
                c += alpha * gy * gy;
            }
        }
        let hessian = Sym2 { a, b, c };
        LkSolverContext {
            center,
            half_size,
            channels,
            weights,
            template,
            jacobian,
            hessian_inv: hessian.pseudo_inverse(),
            hessian,
        }
    }

    pub fn center(&self) -> Point {
        self.center
    }

    pub fn hessian(&self) -> Sym2 {
        self.hessian
    }

    pub fn jacobian(&self) -> &[[f64; 2]] {
        &self.jacobian
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rows(&self) -> usize {
        self.jacobian.len()
    }

    fn require_invertible(self, min_det: f64) -> Result<Self> {
        let det = self.hessian.det();
        if det < min_det {
            Err(Error::DegenerateHessian { det })
        } else {
            Ok(self)
        }
    }

    /// Weighted SSD between the template and the target patch at `center + d`.
    pub fn weighted_ssd(&self, target: &Frame, d: Displacement) -> f64 {
        let mut sum = 0.0;
        let base = self.center + d;
        let mut row = 0;
        for (o, &alpha) in window_offsets(self.half_size).zip(&self.weights) {
            let p = base + o;
            for ch in 0..self.channels {
                let e = target.sample_channel(p.x, p.y, ch) - self.template[row];
                sum += alpha * e * e;
                row += 1;
            }
        }
        sum
    }
}

/// Builds the solver context and rejects patches whose Hessian determinant is
/// below `min_hessian_det` (textureless or edge-only patches).
pub fn compute_jacobian(source: &Frame, center: Point, config: &LkConfig) -> Result<LkSolverContext> {
    LkSolverContext::build(source, center, config.half_size, config.sigma)
        .require_invertible(config.min_hessian_det)
}

/// One Gauss-Newton increment: `Δd = H⁻¹ Σ α_x J(x) (P_i(x) − P_{i+1}(x + d))`.
///
/// The residual is template minus target so that `d ← d + Δd` moves toward
/// the motion of the content.
pub fn lk_solve_step(ctx: &LkSolverContext, target: &Frame, d: Displacement) -> Displacement {
    let base = ctx.center + d;
    let (mut sx, mut sy) = (0.0, 0.0);
    let mut row = 0;
    for (o, &alpha) in window_offsets(ctx.half_size).zip(&ctx.weights) {
        let p = base + o;
        for ch in 0..ctx.channels {
            let e = ctx.template[row] - target.sample_channel(p.x, p.y, ch);
            let [gx, gy] = ctx.jacobian[row];
            sx += alpha * gx * e;
            sy += alpha * gy * e;
            row += 1;
        }
    }
    ctx.hessian_inv.apply(Displacement::new(sx, sy))
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub displacement: Displacement,
    pub converged: bool,
    pub iterations: usize,
    /// Weighted SSD at `d0` and after every applied step.
    pub residuals: Vec<f64>,
}

/// Iterates [`lk_solve_step`] from `d0` until `|Δd| < convergence_eps` or
/// `max_iters`. Hitting the iteration limit is reported, not an error.
///
/// Near the optimum the fixed source-side Jacobian can make the last, tiny
/// step overshoot by a hair; a converging step that raises the weighted SSD
/// is therefore dropped.
pub fn refine_with(ctx: &LkSolverContext, target: &Frame, d0: Displacement, config: &LkConfig) -> Refinement {
    let mut d = d0;
    let mut r = ctx.weighted_ssd(target, d);
    let mut residuals = Vec::with_capacity(config.max_iters + 1);
    residuals.push(r);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        let step = lk_solve_step(ctx, target, d);
        iterations += 1;
        if !step.is_finite() {
            break;
        }
        let r_new = ctx.weighted_ssd(target, d + step);
        let small = step.norm() < config.convergence_eps;
        if !(small && r_new > r) {
            d += step;
            r = r_new;
            residuals.push(r);
        }
        if small {
            converged = true;
            break;
        }
    }
    Refinement {
        displacement: d,
        converged,
        iterations,
        residuals,
    }
}

pub fn lk_refine(
    source: &Frame,
    target: &Frame,
    center: Point,
    d0: Displacement,
    config: &LkConfig,
) -> Result<Refinement> {
    let ctx = compute_jacobian(source, center, config)?;
    Ok(refine_with(&ctx, target, d0, config))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidalFlow {
    /// Total displacement in level-0 pixels.
    pub displacement: Displacement,
    /// True when every level converged before `max_iters`.
    pub converged: bool,
}

/// Coarse-to-fine LK: the guess `g` starts at zero on the coarsest level,
/// each level refines `d^L` around `x/2^L + g^L`, and `g^{L-1} = 2(g^L + d^L)`.
pub fn pyramidal_lk(
    source: &ImagePyramid,
    target: &ImagePyramid,
    point: Point,
    config: &LkConfig,
) -> Result<PyramidalFlow> {
    let top = source.top_level().min(target.top_level()).min(config.levels);
    let mut guess = Displacement::ZERO;
    let mut converged = true;
    for level in (0..=top).rev() {
        let scale = (1u64 << level) as f64;
        let center = point * (1.0 / scale);
        let ctx = compute_jacobian(source.level(level), center, config)?;
        let refined = refine_with(&ctx, target.level(level), guess, config);
        converged &= refined.converged;
        let level_d = refined.displacement - guess;
        if !level_d.is_finite() {
            return Err(Error::DegenerateHessian { det: f64::NAN });
        }
        if level == 0 {
            return Ok(PyramidalFlow {
                displacement: guess + level_d,
                converged,
            });
        }
        guess = (guess + level_d) * 2.0;
    }
    unreachable!("level 0 always returns")
}

/// `fb_error = |x − x̃|`; valid when `fb_error <= threshold`.
pub fn forward_backward_check(x: Point, x_back: Point, threshold: f64) -> (bool, f64) {
    let err = (x - x_back).norm();
    (err <= threshold, err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackFailure {
    DegenerateHessian,
    OutOfBounds,
    ForwardBackward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackResult {
    pub predicted: Point,
    pub valid: bool,
    pub fb_error: f64,
    pub converged: bool,
    pub failure: Option<TrackFailure>,
}

impl TrackResult {
    fn failed(point: Point, failure: TrackFailure) -> Self {
        TrackResult {
            predicted: point,
            valid: false,
            fb_error: f64::INFINITY,
            converged: false,
            failure: Some(failure),
        }
    }
}

/// Tracks `point` forward, then the prediction backward, and applies the
/// forward-backward check.
pub fn track_point(source: &ImagePyramid, target: &ImagePyramid, point: Point, config: &LkConfig) -> TrackResult {
    if !point.is_finite() || !source.base().contains(point) {
        return TrackResult::failed(point, TrackFailure::OutOfBounds);
    }
    let forward = match pyramidal_lk(source, target, point, config) {
        Ok(f) => f,
        Err(_) => return TrackResult::failed(point, TrackFailure::DegenerateHessian),
    };
    let predicted = point + forward.displacement;
    if !target.base().contains(predicted) {
        return TrackResult::failed(predicted, TrackFailure::OutOfBounds);
    }
    let backward = match pyramidal_lk(target, source, predicted, config) {
        Ok(b) => b,
        Err(_) => return TrackResult::failed(predicted, TrackFailure::DegenerateHessian),
    };
    let (valid, fb_error) =
        forward_backward_check(point, predicted + backward.displacement, config.fb_threshold);
    TrackResult {
        predicted,
        valid,
        fb_error,
        converged: forward.converged && backward.converged,
        failure: (!valid).then_some(TrackFailure::ForwardBackward),
    }
}

/// Tracks every point independently; output order matches input order.
pub fn track_points(
    source: &ImagePyramid,
    target: &ImagePyramid,
    points: &[Point],
    config: &LkConfig,
) -> Vec<TrackResult> {
    points
        .par_iter()
        .map(|&p| track_point(source, target, p, config))
        .collect()
}
