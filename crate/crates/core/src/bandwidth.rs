//! Unsupervised Gaussian bandwidth selection.
//!
//! Four criteria are available:
//!
//! * **VAR**: `s = sqrt(sum_j var_j)`.
//! * **mean**: `s = sqrt(2 N sum_j var_j / ((N - 1) ln((N - 1) / delta^2)))`
//!   for a caller-supplied tolerance `delta`.
//! * **modified mean**: the mean criterion with `delta` fixed by
//!   `delta = [ln(N - 1) - 2 ln(delta)]^(-3/2)`, solved either by fixed-point
//!   iteration or by a quartic fit in `1/ln(N - 1)`.
//! * **peak**: train over a grid of bandwidths and take the first bandwidth
//!   where the second derivative of the optimal dual objective reaches zero.
//!
//! Variances use the population convention (divisor `N`).

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvddError};
use crate::kernel::{KernelParams, Observation};
use crate::solver::{solve, SolverSettings};

/// Coefficients of the quartic `delta(phi)`, highest power first.
pub const DELTA_POLYNOMIAL: [f64; 5] = [
    -0.14818008,
    0.284623624,
    -0.252853808,
    0.159059498,
    -0.001381145,
];

pub const DEFAULT_MEAN_DELTA: f64 = 1e-6;
pub const FIXED_POINT_TOLERANCE: f64 = 1e-12;
pub const FIXED_POINT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMethod {
    Var,
    Mean,
    Peak,
    ModifiedMean,
}

impl BandwidthMethod {
    pub const ALL: [BandwidthMethod; 4] = [
        BandwidthMethod::Var,
        BandwidthMethod::Mean,
        BandwidthMethod::Peak,
        BandwidthMethod::ModifiedMean,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BandwidthMethod::Var => "var",
            BandwidthMethod::Mean => "mean",
            BandwidthMethod::Peak => "peak",
            BandwidthMethod::ModifiedMean => "modified_mean",
        }
    }

    /// Column heading used in text reports.
    pub fn title(&self) -> &'static str {
        match self {
            BandwidthMethod::Var => "VAR",
            BandwidthMethod::Mean => "Mean",
            BandwidthMethod::Peak => "Peak",
            BandwidthMethod::ModifiedMean => "Modified Mean",
        }
    }
}

impl fmt::Display for BandwidthMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BandwidthMethod {
    type Err = SvddError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "var" => Ok(BandwidthMethod::Var),
            "mean" => Ok(BandwidthMethod::Mean),
            "peak" => Ok(BandwidthMethod::Peak),
            "modified_mean" => Ok(BandwidthMethod::ModifiedMean),
            other => Err(SvddError::Config(format!(
                "unknown bandwidth method {other:?} (expected var, mean, peak or modified_mean)"
            ))),
        }
    }
}

/// How the modified mean criterion obtains `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    #[default]
    FixedPoint,
    Polynomial,
}

impl FromStr for DeltaMode {
    type Err = SvddError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fixed_point" => Ok(DeltaMode::FixedPoint),
            "polynomial" => Ok(DeltaMode::Polynomial),
            other => Err(SvddError::Config(format!(
                "unknown delta mode {other:?} (expected fixed_point or polynomial)"
            ))),
        }
    }
}

impl fmt::Display for DeltaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeltaMode::FixedPoint => "fixed_point",
            DeltaMode::Polynomial => "polynomial",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSummary {
    pub n: usize,
    pub p: usize,
    pub per_dim_variance: Vec<f64>,
    pub variance_sum: f64,
}

/// One grid point of a peak-criterion sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub s: f64,
    pub dual_objective: f64,
    pub smoothed_objective: f64,
    /// Missing at the two ends of the grid.
    pub second_derivative: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSelection {
    pub method: BandwidthMethod,
    pub s: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sweep: Option<Vec<SweepPoint>>,
}

impl BandwidthSelection {
    fn closed_form(method: BandwidthMethod, s: f64) -> Self {
        BandwidthSelection {
            method,
            s,
            delta: None,
            iterations: None,
            sweep: None,
        }
    }
}

pub fn summarize_variance(data: &[Observation]) -> Result<VarianceSummary> {
    let Some(first) = data.first() else {
        return Err(SvddError::Input("cannot summarize an empty data set".into()));
    };
    let p = first.len();
    let n = data.len();
    let mut mean = vec![0.0; p];
    for x in data {
        if x.len() != p {
            return Err(SvddError::DimensionMismatch {
                expected: p,
                got: x.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; p];
    for x in data {
        for ((acc, v), m) in var.iter_mut().zip(x).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n as f64);
    let variance_sum = var.iter().sum();
    Ok(VarianceSummary {
        n,
        p,
        per_dim_variance: var,
        variance_sum,
    })
}

fn require_spread(summary: &VarianceSummary) -> Result<()> {
    if summary.variance_sum > 0.0 && summary.variance_sum.is_finite() {
        Ok(())
    } else {
        Err(SvddError::Degenerate(format!(
            "data have zero total variance over {} observations",
            summary.n
        )))
    }
}

pub fn var_criterion(summary: &VarianceSummary) -> Result<BandwidthSelection> {
    require_spread(summary)?;
    Ok(BandwidthSelection::closed_form(
        BandwidthMethod::Var,
        summary.variance_sum.sqrt(),
    ))
}

fn mean_bandwidth(summary: &VarianceSummary, delta: f64) -> Result<f64> {
    let n = summary.n as f64;
    if summary.n < 2 {
        return Err(SvddError::Input(format!(
            "the mean criterion needs at least 2 observations, got {}",
            summary.n
        )));
    }
    if !(delta.is_finite() && delta > 0.0 && delta * delta < n - 1.0) {
        return Err(SvddError::InvalidTolerance(format!(
            "delta must satisfy 0 < delta^2 < N - 1 = {}, got delta = {delta}",
            n - 1.0
        )));
    }
    require_spread(summary)?;
    let log_term = ((n - 1.0) / (delta * delta)).ln();
    Ok((2.0 * n * summary.variance_sum / ((n - 1.0) * log_term)).sqrt())
}

pub fn mean_criterion(summary: &VarianceSummary, delta: f64) -> Result<BandwidthSelection> {
    let s = mean_bandwidth(summary, delta)?;
    Ok(BandwidthSelection {
        delta: Some(delta),
        ..BandwidthSelection::closed_form(BandwidthMethod::Mean, s)
    })
}

fn delta_map(log_n1: f64, delta: f64) -> f64 {
    (log_n1 - 2.0 * delta.ln()).powf(-1.5)
}

fn require_n3(n: usize) -> Result<f64> {
    if n < 3 {
        return Err(SvddError::Input(format!(
            "delta for the modified mean criterion needs N >= 3, got {n}"
        )));
    }
    Ok(((n - 1) as f64).ln())
}

/// Fixed point of `delta = [ln(N - 1) - 2 ln(delta)]^(-3/2)` starting from
/// `delta = 1`. Returns the root and the number of iterations taken.
pub fn solve_delta_fixed_point(n: usize, tolerance: f64, max_iter: usize) -> Result<(f64, usize)> {
    solve_delta_fixed_point_from(n, 1.0, tolerance, max_iter)
}

pub fn solve_delta_fixed_point_from(
    n: usize,
    start: f64,
    tolerance: f64,
    max_iter: usize,
) -> Result<(f64, usize)> {
    let log_n1 = require_n3(n)?;
    if !(start > 0.0 && start.is_finite()) {
        return Err(SvddError::Input(format!("starting delta must be positive, got {start}")));
    }
    let mut delta = start;
    let mut taken = 0;
    for iteration in 1..=max_iter {
        taken = iteration;
        let next = delta_map(log_n1, delta);
        // For N = 3 the first iterate from 1 already leaves the domain of
        // the logarithm.
        if !next.is_finite() {
            break;
        }
        if (next - delta).abs() <= tolerance {
            return Ok((next, iteration));
        }
        delta = next;
    }
    Err(SvddError::Convergence {
        iterations: taken,
        gap: (delta_map(log_n1, delta) - delta).abs(),
        objective: delta,
    })
}

/// Quartic approximation of the fixed point in `phi = 1/ln(N - 1)`.
pub fn delta_polynomial(n: usize) -> Result<f64> {
    let phi = 1.0 / require_n3(n)?;
    Ok(DELTA_POLYNOMIAL.iter().fold(0.0, |acc, c| acc * phi + c))
}

pub fn modified_mean_criterion(
    summary: &VarianceSummary,
    mode: DeltaMode,
) -> Result<BandwidthSelection> {
    let (delta, iterations) = match mode {
        DeltaMode::FixedPoint => {
            let (d, it) =
                solve_delta_fixed_point(summary.n, FIXED_POINT_TOLERANCE, FIXED_POINT_MAX_ITER)?;
            (d, Some(it))
        }
        DeltaMode::Polynomial => (delta_polynomial(summary.n)?, None),
    };
    let s = mean_bandwidth(summary, delta)?;
    Ok(BandwidthSelection {
        method: BandwidthMethod::ModifiedMean,
        s,
        delta: Some(delta),
        iterations,
        sweep: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakSweepConfig {
    pub s_grid: Vec<f64>,
    pub smoothing_window: usize,
    pub solver_settings: SolverSettings,
}

impl PeakSweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s_grid.len() < 5 {
            return Err(SvddError::Input(format!(
                "peak sweep needs at least 5 grid points, got {}",
                self.s_grid.len()
            )));
        }
        if self.s_grid.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(SvddError::Input("peak sweep grid must be positive".into()));
        }
        if self.s_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SvddError::Input("peak sweep grid must be strictly increasing".into()));
        }
        if self.smoothing_window == 0 || self.smoothing_window.is_multiple_of(2) {
            return Err(SvddError::Input(format!(
                "smoothing window must be odd and positive, got {}",
                self.smoothing_window
            )));
        }
        Ok(())
    }
}

/// `count` geometrically spaced values from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let ratio = (hi / lo).ln() / (count - 1) as f64;
    (0..count)
        .map(|i| if i + 1 == count { hi } else { lo * (ratio * i as f64).exp() })
        .collect()
}

/// Default sweep: `points` geometric values over `[0.1 s, 10 s]` around the
/// modified mean bandwidth `s` of the data.
pub fn default_peak_grid(summary: &VarianceSummary, points: usize) -> Result<Vec<f64>> {
    let centre = modified_mean_criterion(summary, DeltaMode::FixedPoint)?.s;
    Ok(geometric_grid(0.1 * centre, 10.0 * centre, points))
}

pub fn peak_criterion(data: &[Observation], config: &PeakSweepConfig) -> Result<BandwidthSelection> {
    config.validate()?;
    let objectives = config
        .s_grid
        .par_iter()
        .map(|&s| {
            let params = KernelParams::new(s)?;
            solve(data, &params, &config.solver_settings)
                .map(|o| o.objective)
                .map_err(|e| SvddError::SweepPoint {
                    s,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<f64>>>()?;
    let (index, sweep) = locate_peak(&config.s_grid, &objectives, config.smoothing_window)?;
    Ok(BandwidthSelection {
        method: BandwidthMethod::Peak,
        s: config.s_grid[index],
        delta: None,
        iterations: None,
        sweep: Some(sweep),
    })
}

/// Centered moving average; the window shrinks symmetrically at the ends.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let m = values.len();
    (0..m)
        .map(|i| {
            let h = half.min(i).min(m - 1 - i);
            let slice = &values[i - h..=i + h];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

/// Three-point second derivative on a possibly non-uniform grid; `None` at
/// the ends.
pub fn second_derivative(grid: &[f64], values: &[f64]) -> Vec<Option<f64>> {
    let m = grid.len();
    (0..m)
        .map(|i| {
            if i == 0 || i + 1 == m {
                return None;
            }
            let h_lo = grid[i] - grid[i - 1];
            let h_hi = grid[i + 1] - grid[i];
            let slope_hi = (values[i + 1] - values[i]) / h_hi;
            let slope_lo = (values[i] - values[i - 1]) / h_lo;
            Some(2.0 * (slope_hi - slope_lo) / (h_lo + h_hi))
        })
        .collect()
}

/// Find the first grid index where the second derivative of the smoothed
/// curve reaches zero after having left the near-zero band.
///
/// "Reaches zero" means either `|f''| <= 1e-3 max|f''|` or a sign change
/// between neighbours, in which case the neighbour closer to zero is picked.
/// A curve whose second derivative is negligible everywhere is an error.
pub fn locate_peak(grid: &[f64], objective: &[f64], window: usize) -> Result<(usize, Vec<SweepPoint>)> {
    if grid.len() != objective.len() {
        return Err(SvddError::Input(format!(
            "{} grid points but {} objective values",
            grid.len(),
            objective.len()
        )));
    }
    let smoothed = smooth(objective, window);
    let d2 = second_derivative(grid, &smoothed);
    let sweep: Vec<SweepPoint> = grid
        .iter()
        .zip(objective)
        .zip(&smoothed)
        .zip(&d2)
        .map(|(((&s, &f), &sm), &d)| SweepPoint {
            s,
            dual_objective: f,
            smoothed_objective: sm,
            second_derivative: d,
        })
        .collect();
    let not_found = |sweep: Vec<SweepPoint>| Err(SvddError::PeakNotFound { sweep });

    let interior: Vec<(usize, f64)> = d2
        .iter()
        .enumerate()
        .filter_map(|(i, d)| d.map(|d| (i, d)))
        .collect();
    let max_abs = interior.iter().map(|(_, d)| d.abs()).fold(0.0, f64::max);
    let (lo, hi) = smoothed
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = grid[grid.len() - 1] - grid[0];
    let curvature_scale = max_abs * span * span;
    let flat = curvature_scale.is_nan() || curvature_scale <= 1e-9 * (hi - lo).max(f64::MIN_POSITIVE);
    if flat || !max_abs.is_finite() {
        return not_found(sweep);
    }

    let threshold = 1e-3 * max_abs;
    let mut armed = false;
    for (pos, &(i, d)) in interior.iter().enumerate() {
        if !armed {
            armed = d.abs() > threshold;
            continue;
        }
        if d.abs() <= threshold {
            return Ok((i, sweep));
        }
        if let Some(&(j, next)) = interior.get(pos + 1) {
            if d.signum() != next.signum() && next.abs() > threshold {
                let pick = if next.abs() < d.abs() { j } else { i };
                return Ok((pick, sweep));
            }
        }
    }
    not_found(sweep)
}

pub fn write_sweep_csv<W: Write>(out: W, sweep: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| SvddError::Format(e.to_string());
    w.write_record(["s", "dual_objective", "smoothed_objective", "second_derivative"])
        .map_err(csv_err)?;
    for p in sweep {
        w.write_record([
            p.s.to_string(),
            p.dual_objective.to_string(),
            p.smoothed_objective.to_string(),
            p.second_derivative.map(|d| d.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| SvddError::Format(e.to_string()))?;
    Ok(())
}

/// Knobs shared by all criteria when selecting through [`select_bandwidth`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthOptions {
    pub mean_delta: f64,
    pub delta_mode: DeltaMode,
    pub peak_grid_points: usize,
    pub peak_smoothing_window: usize,
    /// Explicit sweep grid; overrides the default grid when set.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub peak_grid: Option<Vec<f64>>,
    /// Bandwidth for classes too small or too uniform for the criterion.
    pub degenerate_class_bandwidth: f64,
}

impl Default for BandwidthOptions {
    fn default() -> Self {
        BandwidthOptions {
            mean_delta: DEFAULT_MEAN_DELTA,
            delta_mode: DeltaMode::FixedPoint,
            peak_grid_points: 50,
            peak_smoothing_window: 5,
            peak_grid: None,
            degenerate_class_bandwidth: 1.0,
        }
    }
}

pub fn select_bandwidth(
    data: &[Observation],
    method: BandwidthMethod,
    options: &BandwidthOptions,
    solver: &SolverSettings,
) -> Result<BandwidthSelection> {
    let summary = summarize_variance(data)?;
    match method {
        BandwidthMethod::Var => var_criterion(&summary),
        BandwidthMethod::Mean => mean_criterion(&summary, options.mean_delta),
        BandwidthMethod::ModifiedMean => modified_mean_criterion(&summary, options.delta_mode),
        BandwidthMethod::Peak => {
            let s_grid = match &options.peak_grid {
                Some(grid) => grid.clone(),
                None => default_peak_grid(&summary, options.peak_grid_points)?,
            };
            let config = PeakSweepConfig {
                s_grid,
                smoothing_window: options.peak_smoothing_window,
                solver_settings: *solver,
            };
            peak_criterion(data, &config)
        }
    }
}
