//! Trained SVDD model: scoring and JSON persistence.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SvddError};
use crate::kernel::{squared_distance, KernelParams, Observation};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Allowed drift of `sum(alpha)` from 1 when validating a loaded model. Tiny
/// multipliers are dropped at train time, so the stored sum is not exact.
const ALPHA_SUM_TOLERANCE: f64 = 1e-6;

/// Where an observation falls relative to the data boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Position {
    Inside,
    Outside,
}

/// A trained data description. Immutable once built; safe to share across
/// threads for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct SvddModel {
    support_vectors: Vec<Observation>,
    alphas: Vec<f64>,
    kernel: KernelParams,
    penalty: f64,
    r_squared: f64,
    /// `sum_ij alpha_i alpha_j K(x_i, x_j)` over the stored support vectors.
    alpha_k_alpha: f64,
    class_label: Option<String>,
}

impl SvddModel {
    /// Build a model from its parts, computing the cached quadratic term.
    /// `r_squared` is taken as given.
    pub(crate) fn from_parts(
        support_vectors: Vec<Observation>,
        alphas: Vec<f64>,
        kernel: KernelParams,
        penalty: f64,
        r_squared: f64,
    ) -> Self {
        let alpha_k_alpha = quadratic_term(&support_vectors, &alphas, &kernel);
        SvddModel {
            support_vectors,
            alphas,
            kernel,
            penalty,
            r_squared,
            alpha_k_alpha,
            class_label: None,
        }
    }

    pub fn with_class_label(mut self, label: impl Into<String>) -> Self {
        self.class_label = Some(label.into());
        self
    }

    pub fn support_vectors(&self) -> &[Observation] {
        &self.support_vectors
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn bandwidth(&self) -> f64 {
        self.kernel.bandwidth()
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn r_squared(&self) -> f64 {
        self.r_squared
    }

    pub fn radius(&self) -> f64 {
        self.r_squared.sqrt()
    }

    pub fn alpha_k_alpha(&self) -> f64 {
        self.alpha_k_alpha
    }

    pub fn class_label(&self) -> Option<&str> {
        self.class_label.as_deref()
    }

    pub fn dimension(&self) -> usize {
        self.support_vectors.first().map_or(0, Vec::len)
    }

    /// Squared kernel-space distance from `z` to the sphere center,
    /// clamped at zero.
    pub fn score_distance2(&self, z: &[f64]) -> Result<f64> {
        let p = self.dimension();
        if z.len() != p {
            return Err(SvddError::DimensionMismatch {
                expected: p,
                got: z.len(),
            });
        }
        Ok(self.distance2_unchecked(z))
    }

    pub(crate) fn distance2_unchecked(&self, z: &[f64]) -> f64 {
        let cross: f64 = self
            .support_vectors
            .iter()
            .zip(&self.alphas)
            .map(|(sv, a)| a * self.kernel.eval_sq_dist(squared_distance(sv, z)))
            .sum();
        (1.0 - 2.0 * cross + self.alpha_k_alpha).max(0.0)
    }

    pub fn score_distance(&self, z: &[f64]) -> Result<f64> {
        self.score_distance2(z).map(f64::sqrt)
    }

    /// Outside iff `dist^2(z) > R^2`; ties count as inside.
    pub fn classify(&self, z: &[f64]) -> Result<Position> {
        let d2 = self.score_distance2(z)?;
        Ok(if d2 > self.r_squared {
            Position::Outside
        } else {
            Position::Inside
        })
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            bandwidth_s: self.kernel.bandwidth(),
            penalty_c: self.penalty,
            r_squared: self.r_squared,
            alphas: self.alphas.clone(),
            support_vectors: self.support_vectors.clone(),
            class_label: self.class_label.clone(),
        }
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        doc.validate()?;
        let kernel = KernelParams::new(doc.bandwidth_s)?;
        let mut model = SvddModel::from_parts(
            doc.support_vectors,
            doc.alphas,
            kernel,
            doc.penalty_c,
            doc.r_squared,
        );
        model.class_label = doc.class_label;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        Self::from_document(doc)
    }
}

pub(crate) fn quadratic_term(points: &[Observation], alphas: &[f64], kernel: &KernelParams) -> f64 {
    let mut total = 0.0;
    for (i, (xi, ai)) in points.iter().zip(alphas).enumerate() {
        total += ai * ai;
        for (xj, aj) in points[i + 1..].iter().zip(&alphas[i + 1..]) {
            total += 2.0 * ai * aj * kernel.eval_sq_dist(squared_distance(xi, xj));
        }
    }
    total
}

/// On-disk form of a single-class model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub bandwidth_s: f64,
    #[serde(rename = "penalty_C")]
    pub penalty_c: f64,
    pub r_squared: f64,
    pub alphas: Vec<f64>,
    pub support_vectors: Vec<Vec<f64>>,
    #[serde(default)]
    pub class_label: Option<String>,
}

impl ModelDocument {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(SvddError::Validation(msg));
        if self.format_version != MODEL_FORMAT_VERSION {
            return fail(format!(
                "unsupported model format_version {} (this build reads version {})",
                self.format_version, MODEL_FORMAT_VERSION
            ));
        }
        if !(self.bandwidth_s.is_finite() && self.bandwidth_s > 0.0) {
            return fail(format!("bandwidth_s must be positive, got {}", self.bandwidth_s));
        }
        if !(self.penalty_c.is_finite() && self.penalty_c > 0.0) {
            return fail(format!("penalty_C must be positive, got {}", self.penalty_c));
        }
        if !(self.r_squared.is_finite() && self.r_squared >= 0.0) {
            return fail(format!("r_squared must be nonnegative, got {}", self.r_squared));
        }
        if self.alphas.is_empty() {
            return fail("model has no support vectors".into());
        }
        if self.alphas.len() != self.support_vectors.len() {
            return fail(format!(
                "{} alphas but {} support vectors",
                self.alphas.len(),
                self.support_vectors.len()
            ));
        }
        let p = self.support_vectors[0].len();
        for (i, sv) in self.support_vectors.iter().enumerate() {
            if sv.len() != p {
                return fail(format!("support vector {i} has length {}, expected {p}", sv.len()));
            }
            if sv.iter().any(|v| !v.is_finite()) {
                return fail(format!("support vector {i} has a non-finite entry"));
            }
        }
        for (i, &a) in self.alphas.iter().enumerate() {
            if !(a.is_finite() && a >= -1e-12 && a <= self.penalty_c + 1e-12) {
                return fail(format!("alpha {i} = {a} outside [0, C = {}]", self.penalty_c));
            }
        }
        let sum: f64 = self.alphas.iter().sum();
        if (sum - 1.0).abs() > ALPHA_SUM_TOLERANCE {
            return fail(format!("alphas sum to {sum}, expected 1"));
        }
        Ok(())
    }
}
