//! Sparse-to-dense metric depth.
//!
//! Triangulated landmark depths `z` are regressed against the scale-ambiguous
//! monocular prediction `d` at the same pixels with the exponential model
//!
//! ```text
//! z = a * exp(b * (d - c)) - offset
//! ```
//!
//! and the fitted curve is applied to the whole monocular image. Linear and
//! quadratic regressions are provided as baselines, together with the
//! unidirectional Chamfer distance and convex-hull coverage metrics.
//!
//! `a` and `c` only enter through `a * exp(-b c)`, so the fit pins `c` to the
//! mean of the sample `d` values and solves for `(a, b, offset)`.

use kiddo::{immutable::float::kdtree::ImmutableKdTree, SquaredEuclidean};
use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lsq::{levenberg_marquardt, LeastSquaresProblem, LmConfig};

/// Minimum sample count for a valid exponential fit.
pub const MIN_EXP_SAMPLES: usize = 6;
/// Largest exponent magnitude evaluated before a parameter set is considered overflowing.
pub const MAX_EXPONENT: f64 = 50.0;
/// Metric depths at or below this are masked as invalid.
pub const MIN_VALID_DEPTH: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("degenerate design: {0}")]
    Degenerate(String),
    #[error("exponential fit is ill-conditioned (exponent overflow)")]
    IllConditioned,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("point cloud is empty")]
    EmptyCloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFitParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub offset: f64,
    #[serde(default)]
    pub rms: f64,
    #[serde(default)]
    pub samples: usize,
}

impl ExpFitParams {
    pub fn new(a: f64, b: f64, c: f64, offset: f64) -> Self {
        Self { a, b, c, offset, rms: 0.0, samples: 0 }
    }

    /// Metric depth predicted for monocular value `d`.
    pub fn eval(&self, d: f64) -> f64 {
        self.a * (self.b * (d - self.c)).exp() - self.offset
    }

    /// Monocular value that maps to metric depth `z`, if inside the model's range.
    pub fn inverse(&self, z: f64) -> Option<f64> {
        let arg = (z + self.offset) / self.a;
        (arg > 0.0).then(|| self.c + arg.ln() / self.b)
    }

    /// Same curve expressed with pivot `c`.
    pub fn with_pivot(&self, c: f64) -> Self {
        Self { a: self.a * (self.b * (c - self.c)).exp(), c, ..*self }
    }

    /// Gauge-free scale `a * exp(-b c)`.
    pub fn scale(&self) -> f64 {
        self.a * (-self.b * self.c).exp()
    }

    pub fn is_valid(&self) -> bool {
        self.samples >= MIN_EXP_SAMPLES && self.a != 0.0 && self.a.is_finite() && self.b.is_finite()
    }

    /// Requirements for using the curve as a synthetic monocular warp.
    pub fn validate_warp(&self) -> Result<(), String> {
        if !(self.a > 0.0) || self.b == 0.0 || !self.b.is_finite() || !self.c.is_finite() || !self.offset.is_finite() {
            return Err(format!("need a > 0 and finite b != 0 (a={}, b={})", self.a, self.b));
        }
        Ok(())
    }
}

/// Residual `z - a exp(b (d - c)) + offset` of one sample.
pub fn exp_residual(params: &[f64; 4], z: f64, d: f64) -> f64 {
    let [a, b, c, offset] = *params;
    z - a * (b * (d - c)).exp() + offset
}

/// Gradient of [`exp_residual`] with respect to `(a, b, c, offset)`.
pub fn exp_residual_gradient(params: &[f64; 4], d: f64) -> [f64; 4] {
    let [a, b, c, _] = *params;
    let e = (b * (d - c)).exp();
    [-e, -a * e * (d - c), a * e * b, 1.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthSample {
    /// Metric depth, meters.
    pub z: f64,
    /// Monocular prediction at the landmark's pixel.
    pub d: f64,
    pub pixel: Vector2<f64>,
}

impl DepthSample {
    pub fn new(z: f64, d: f64) -> Self {
        Self { z, d, pixel: Vector2::zeros() }
    }
}

struct ExpProblem<'a> {
    samples: &'a [DepthSample],
    pivot: f64,
}

impl ExpProblem<'_> {
    fn full(&self, x: &DVector<f64>) -> [f64; 4] {
        [x[0], x[1], self.pivot, x[2]]
    }
}

impl LeastSquaresProblem for ExpProblem<'_> {
    fn num_params(&self) -> usize {
        3
    }

    fn residuals(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let p = self.full(x);
        if self.samples.iter().any(|s| (p[1] * (s.d - p[2])).abs() > MAX_EXPONENT) {
            return None;
        }
        Some(DVector::from_iterator(self.samples.len(), self.samples.iter().map(|s| exp_residual(&p, s.z, s.d))))
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let p = self.full(x);
        let mut j = DMatrix::zeros(self.samples.len(), 3);
        for (i, s) in self.samples.iter().enumerate() {
            let g = exp_residual_gradient(&p, s.d);
            j[(i, 0)] = g[0];
            j[(i, 1)] = g[1];
            j[(i, 2)] = g[3];
        }
        j
    }
}

/// For fixed `b`, `(a, offset)` enter linearly; solve them by least squares.
fn linear_start(samples: &[DepthSample], pivot: f64, b: f64) -> Option<DVector<f64>> {
    if samples.iter().any(|s| (b * (s.d - pivot)).abs() > MAX_EXPONENT) {
        return None;
    }
    let design = DMatrix::from_fn(samples.len(), 2, |i, k| if k == 0 { (b * (samples[i].d - pivot)).exp() } else { -1.0 });
    let rhs = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.z));
    let sol = lstsq(&design, &rhs)?;
    Some(DVector::from_vec(vec![sol[0], b, sol[1]]))
}

/// Least-squares solve through SVD; `None` when the design is rank deficient.
fn lstsq(design: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-12) {
        return None;
    }
    svd.solve(rhs, 0.0).ok()
}

fn distinct_values(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup();
    v.len()
}

/// Exponential fit of metric depth against monocular prediction.
///
/// Starts from a log-space linear fit with `offset = 1 - min(z)` and from a fixed set of
/// curvature guesses (first raw, then scaled by the spread of `d`), keeping the lowest-cost
/// solution. The pivot `c` is the mean of the sample `d` values.
pub fn fit_exponential(samples: &[DepthSample]) -> Result<ExpFitParams, FitError> {
    if samples.len() < MIN_EXP_SAMPLES {
        return Err(FitError::InsufficientSamples { needed: MIN_EXP_SAMPLES, got: samples.len() });
    }
    if distinct_values(samples.iter().map(|s| s.d)) < 2 {
        return Err(FitError::Degenerate("monocular values must span at least two distinct values".into()));
    }
    let n = samples.len() as f64;
    let pivot = samples.iter().map(|s| s.d).sum::<f64>() / n;
    let spread = (samples.iter().map(|s| (s.d - pivot).powi(2)).sum::<f64>() / n).sqrt();

    let mut starts = Vec::new();
    let offset0 = 1.0 - samples.iter().map(|s| s.z).fold(f64::INFINITY, f64::min);
    let log_samples: Vec<DepthSample> =
        samples.iter().map(|s| DepthSample { z: (s.z + offset0).ln(), ..*s }).collect();
    if let Some(line) = fit_linear(&log_samples).ok() {
        let b = line.scale;
        let a = (line.bias + b * pivot).exp();
        if a.is_finite() && b.is_finite() {
            starts.push(DVector::from_vec(vec![a, b, offset0]));
        }
    }
    let guesses = [0.01, -0.01, 0.1, -0.1, 1.0, -1.0];
    starts.extend(guesses.iter().filter_map(|&b| linear_start(samples, pivot, b)));

    let problem = ExpProblem { samples, pivot };
    let cfg = LmConfig { max_iterations: 200, ..LmConfig::default() };
    let mut best = solve_starts(&problem, &starts, &cfg);
    if best.is_none() && spread > 0.0 {
        let rescaled: Vec<_> = guesses.iter().filter_map(|&b| linear_start(samples, pivot, b / spread)).collect();
        best = solve_starts(&problem, &rescaled, &cfg);
    }
    let (x, cost) = best.ok_or(FitError::IllConditioned)?;
    Ok(ExpFitParams {
        a: x[0],
        b: x[1],
        c: pivot,
        offset: x[2],
        rms: (2.0 * cost / n).sqrt(),
        samples: samples.len(),
    })
}

fn solve_starts(problem: &ExpProblem, starts: &[DVector<f64>], cfg: &LmConfig) -> Option<(DVector<f64>, f64)> {
    let mut best: Option<(DVector<f64>, f64)> = None;
    for x0 in starts {
        if let Some(rep) = levenberg_marquardt(problem, x0.clone(), cfg) {
            if rep.final_cost.is_finite() && best.as_ref().map_or(true, |(_, c)| rep.final_cost < *c) {
                best = Some((rep.params, rep.final_cost));
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub scale: f64,
    pub bias: f64,
    pub rms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    /// `[q2, q1, q0]` for `z = q2 d^2 + q1 d + q0`.
    pub coeffs: [f64; 3],
    pub rms: f64,
}

fn polyfit(samples: &[DepthSample], degree: usize) -> Result<(Vec<f64>, f64), FitError> {
    let needed = degree + 1;
    if samples.len() < needed {
        return Err(FitError::InsufficientSamples { needed, got: samples.len() });
    }
    let design = DMatrix::from_fn(samples.len(), needed, |i, k| samples[i].d.powi((degree - k) as i32));
    let rhs = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.z));
    let sol = lstsq(&design, &rhs).ok_or_else(|| FitError::Degenerate("rank-deficient design matrix".into()))?;
    let rms = ((&design * &sol - rhs).norm_squared() / samples.len() as f64).sqrt();
    Ok((sol.iter().copied().collect(), rms))
}

/// Ordinary least squares `z = scale * d + bias`.
pub fn fit_linear(samples: &[DepthSample]) -> Result<LinearFit, FitError> {
    let (c, rms) = polyfit(samples, 1)?;
    Ok(LinearFit { scale: c[0], bias: c[1], rms })
}

/// Ordinary least squares `z = q2 d^2 + q1 d + q0`.
pub fn fit_quadratic(samples: &[DepthSample]) -> Result<QuadraticFit, FitError> {
    let (c, rms) = polyfit(samples, 2)?;
    Ok(QuadraticFit { coeffs: [c[0], c[1], c[2]], rms })
}

/// A monocular-to-metric mapping.
pub trait DepthModel {
    fn predict(&self, d: f64) -> f64;
}

impl DepthModel for ExpFitParams {
    fn predict(&self, d: f64) -> f64 {
        self.eval(d)
    }
}

impl DepthModel for LinearFit {
    fn predict(&self, d: f64) -> f64 {
        self.scale * d + self.bias
    }
}

impl DepthModel for QuadraticFit {
    fn predict(&self, d: f64) -> f64 {
        let [q2, q1, q0] = self.coeffs;
        (q2 * d + q1) * d + q0
    }
}

/// Row-major depth (or monocular value) image; NaN marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        Self { width, height, data: vec![value; (width * height) as usize] }
    }

    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.data[(v * self.width + u) as usize]
    }

    /// Nearest-pixel lookup for continuous coordinates (pixel centres at `i + 0.5`).
    pub fn sample(&self, u: f64, v: f64) -> Option<f64> {
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let (ui, vi) = (u.floor() as u32, v.floor() as u32);
        (ui < self.width && vi < self.height).then(|| self.get(ui, vi)).filter(|x| !x.is_nan())
    }
}

/// Applies any depth model per pixel; results at or below [`MIN_VALID_DEPTH`] become NaN.
pub fn apply_model<M: DepthModel + ?Sized>(image: &DepthImage, model: &M) -> DepthImage {
    let data = image
        .data
        .iter()
        .map(|&d| {
            let z = model.predict(d);
            if z > MIN_VALID_DEPTH && z.is_finite() {
                z
            } else {
                f64::NAN
            }
        })
        .collect();
    DepthImage { width: image.width, height: image.height, data }
}

pub fn apply_fit(image: &DepthImage, params: &ExpFitParams) -> DepthImage {
    apply_model(image, params)
}

/// Mean distance from each predicted point to its nearest ground-truth point.
pub fn ucd(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64, MetricError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(MetricError::EmptyCloud);
    }
    let index = NearestIndex::new(gt);
    Ok(pred.iter().map(|p| index.distance(p)).sum::<f64>() / pred.len() as f64)
}

/// Exact Euclidean nearest-neighbour index over a fixed cloud.
pub struct NearestIndex {
    tree: ImmutableKdTree<f64, u64, 3, 32>,
}

impl NearestIndex {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let pts: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Self { tree: ImmutableKdTree::new_from_slice(&pts) }
    }

    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.tree.nearest_one::<SquaredEuclidean>(&[p.x, p.y, p.z]).distance.sqrt()
    }
}

fn cross2(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull (counter-clockwise, no collinear vertices) by the monotone-chain method.
pub fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vector2<f64>>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for p in iter {
            while hull.len() >= start + 2 && cross2(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

pub fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let twice: f64 = (0..poly.len())
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
            p.x * q.y - q.x * p.y
        })
        .sum();
    twice.abs() / 2.0
}

/// Area of the convex hull of the cloud's XY projection; zero when degenerate.
pub fn coverage_area(cloud: &[Vector3<f64>]) -> f64 {
    let xy: Vec<Vector2<f64>> = cloud.iter().map(|p| p.xy()).collect();
    polygon_area(&convex_hull(&xy))
}
