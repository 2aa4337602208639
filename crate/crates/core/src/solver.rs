//! Dual SVDD training.
//!
//! Maximizes `sum_i alpha_i K(x_i, x_i) - sum_ij alpha_i alpha_j K(x_i, x_j)`
//! subject to `sum_i alpha_i = 1` and `0 <= alpha_i <= C`, with `C = 1/(n f)`.
//!
//! Internally the solver minimizes the negated objective with two-coordinate
//! steps: each iteration moves mass from the multiplier with the largest
//! gradient that can still decrease to the one with the smallest gradient
//! that can still increase. That keeps `sum(alpha) = 1` exact and stops when
//! the gap between the two gradients drops below the KKT tolerance.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SvddError};
use crate::kernel::{KernelCache, KernelParams, Observation};
use crate::model::SvddModel;

const MAX_ITERATION_CAP: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Expected outlier fraction `f`. `None` means `1/n`, i.e. `C = 1`.
    pub outlier_fraction: Option<f64>,
    pub kkt_tolerance: f64,
    /// Pair updates allowed. `None` means `1000 n`, capped at 10^7. Dense
    /// low-dimensional data with `s` near the point spacing can need a few
    /// hundred updates per point.
    pub max_iterations: Option<usize>,
    /// Multipliers at or below this are treated as zero and not stored.
    pub alpha_zero_tolerance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            outlier_fraction: None,
            kkt_tolerance: 1e-6,
            max_iterations: None,
            alpha_zero_tolerance: 1e-8,
        }
    }
}

impl SolverSettings {
    /// Penalty `C = 1/(n f)` for a training set of size `n`.
    pub fn penalty(&self, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(SvddError::Input("training set is empty".into()));
        }
        match self.outlier_fraction {
            None => Ok(1.0),
            Some(f) if f > 0.0 && f <= 1.0 => Ok(1.0 / (n as f64 * f)),
            Some(f) => Err(SvddError::Input(format!(
                "outlier fraction must lie in (0, 1], got {f}"
            ))),
        }
    }

    pub fn iteration_limit(&self, n: usize) -> usize {
        self.max_iterations
            .unwrap_or(1000 * n)
            .clamp(1, MAX_ITERATION_CAP)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(f) = self.outlier_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(SvddError::Input(format!(
                    "outlier fraction must lie in (0, 1], got {f}"
                )));
            }
        }
        if !(self.kkt_tolerance.is_finite() && self.kkt_tolerance > 0.0) {
            return Err(SvddError::Input("kkt_tolerance must be positive".into()));
        }
        if !(self.alpha_zero_tolerance.is_finite() && self.alpha_zero_tolerance > 0.0) {
            return Err(SvddError::Input("alpha_zero_tolerance must be positive".into()));
        }
        if self.max_iterations == Some(0) {
            return Err(SvddError::Input("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Full result of a training run, including the multipliers of every
/// training point (not only the stored support vectors).
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub model: SvddModel,
    /// One multiplier per training point, in input order.
    pub alphas: Vec<f64>,
    /// Optimal dual objective value.
    pub objective: f64,
    pub iterations: usize,
    pub kkt_gap: f64,
}

pub fn train_svdd(
    data: &[Observation],
    params: &KernelParams,
    settings: &SolverSettings,
) -> Result<SvddModel> {
    solve(data, params, settings).map(|o| o.model)
}

pub fn solve(
    data: &[Observation],
    params: &KernelParams,
    settings: &SolverSettings,
) -> Result<TrainingOutcome> {
    settings.validate()?;
    let n = data.len();
    let c = settings.penalty(n)?;
    let p = data[0].len();
    for x in data {
        if x.len() != p {
            return Err(SvddError::DimensionMismatch {
                expected: p,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SvddError::Input("training data contains a non-finite value".into()));
        }
    }
    let mut cache = KernelCache::new(data, *params);
    let state = optimize(&mut cache, c, settings)?;
    Ok(finish(data, params, c, settings, state))
}

struct SolverState {
    alpha: Vec<f64>,
    iterations: usize,
    gap: f64,
}

fn select_pair(alpha: &[f64], grad: &[f64], c: f64) -> Option<(usize, usize, f64)> {
    let mut up: Option<usize> = None;
    let mut low: Option<usize> = None;
    for k in 0..alpha.len() {
        if alpha[k] < c && up.is_none_or(|u| grad[k] < grad[u]) {
            up = Some(k);
        }
        if alpha[k] > 0.0 && low.is_none_or(|l| grad[k] > grad[l]) {
            low = Some(k);
        }
    }
    match (up, low) {
        (Some(i), Some(j)) => Some((i, j, grad[j] - grad[i])),
        _ => None,
    }
}

/// Partner for `i` with the largest guaranteed gain `b^2 / a`, where `b` is
/// the gradient difference and `a` the curvature along `e_i - e_j`. Picking
/// by gain rather than by violation alone keeps the iteration count low when
/// the kernel matrix is close to singular (large `s`).
fn second_order_partner(alpha: &[f64], grad: &[f64], ki: &[f64], i: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for k in 0..alpha.len() {
        let b = grad[k] - grad[i];
        if alpha[k] > 0.0 && b > 0.0 {
            let a = (4.0 - 4.0 * ki[k]).max(1e-12);
            let gain = b * b / a;
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((k, gain));
            }
        }
    }
    best.map(|(k, _)| k)
}

fn optimize(cache: &mut KernelCache<'_>, c: f64, settings: &SolverSettings) -> Result<SolverState> {
    let n = cache.len();
    let limit = settings.iteration_limit(n);
    let mut alpha = vec![1.0 / n as f64; n];
    // Gradient of `alpha' K alpha - sum_i alpha_i`, i.e. `2 K alpha - 1`.
    let mut grad = vec![0.0; n];
    for (k, g) in grad.iter_mut().enumerate() {
        *g = cache.with_row(k, |row| 2.0 * row.iter().sum::<f64>() / n as f64 - 1.0);
    }

    let mut iterations = 0;
    loop {
        let Some((i, j_max, gap)) = select_pair(&alpha, &grad, c) else {
            return Ok(SolverState { alpha, iterations, gap: 0.0 });
        };
        if gap <= settings.kkt_tolerance || i == j_max {
            return Ok(SolverState { alpha, iterations, gap: gap.max(0.0) });
        }
        if iterations >= limit {
            let objective = dual_objective_from_grad(&alpha, &grad);
            return Err(SvddError::Convergence { iterations, gap, objective });
        }
        let j = cache
            .with_row(i, |ki| second_order_partner(&alpha, &grad, ki, i))
            .unwrap_or(j_max);
        let gap = grad[j] - grad[i];

        cache.with_rows(i, j, |ki, kj| {
            // Curvature of the objective along e_i - e_j; Gaussian K_ii = 1.
            let curvature = 2.0 * (2.0 - 2.0 * ki[j]);
            let room_i = c - alpha[i];
            let room_j = alpha[j];
            let unclipped = if curvature > 1e-15 { gap / curvature } else { f64::INFINITY };
            let step = unclipped.min(room_i).min(room_j);
            // Land exactly on the bound when clipped.
            alpha[i] = if step >= room_i { c } else { alpha[i] + step };
            alpha[j] = if step >= room_j { 0.0 } else { alpha[j] - step };
            for k in 0..n {
                grad[k] += 2.0 * step * (ki[k] - kj[k]);
            }
        });
        iterations += 1;
    }
}

/// `1 - alpha' K alpha` recovered from the gradient `2 K alpha - 1`.
fn dual_objective_from_grad(alpha: &[f64], grad: &[f64]) -> f64 {
    let quad: f64 = alpha.iter().zip(grad).map(|(a, g)| a * (g + 1.0) / 2.0).sum();
    1.0 - quad
}

fn finish(
    data: &[Observation],
    params: &KernelParams,
    c: f64,
    settings: &SolverSettings,
    state: SolverState,
) -> TrainingOutcome {
    let tol = settings.alpha_zero_tolerance;
    let (support_vectors, alphas): (Vec<_>, Vec<_>) = data
        .iter()
        .zip(&state.alpha)
        .filter(|(_, &a)| a > tol)
        .map(|(x, &a)| (x.clone(), a))
        .unzip();

    let provisional = SvddModel::from_parts(support_vectors, alphas, *params, c, 0.0);
    let sv_dist2: Vec<f64> = provisional
        .support_vectors()
        .iter()
        .map(|sv| provisional.distance2_unchecked(sv))
        .collect();
    let boundary: Vec<f64> = provisional
        .alphas()
        .iter()
        .zip(&sv_dist2)
        .filter(|(&a, _)| a > tol && a < c - tol)
        .map(|(_, &d)| d)
        .collect();
    // Every boundary SV gives the same R^2 at the optimum; averaging them
    // keeps each within the KKT gap. With no free SV, take the sphere that
    // contains all SVs.
    let r_squared = if boundary.is_empty() {
        sv_dist2.iter().copied().fold(0.0, f64::max)
    } else {
        boundary.iter().sum::<f64>() / boundary.len() as f64
    };

    let objective = 1.0 - provisional.alpha_k_alpha();
    let model = SvddModel::from_parts(
        provisional.support_vectors().to_vec(),
        provisional.alphas().to_vec(),
        *params,
        c,
        r_squared,
    );
    TrainingOutcome {
        model,
        alphas: state.alpha,
        objective,
        iterations: state.iterations,
        kkt_gap: state.gap,
    }
}
