//! One SVDD per class, combined by relative distance.
//!
//! A test point is given the label of the only class whose sphere contains
//! it. When it falls inside several spheres or none, it goes to the class
//! with the smallest `dist_i / R_i`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{select_bandwidth, summarize_variance, BandwidthMethod, BandwidthOptions, BandwidthSelection};
use crate::dataprep::{ClassLabel, SampleTable};
use crate::error::{Result, SvddError};
use crate::kernel::{KernelParams, Observation};
use crate::model::{ModelDocument, SvddModel};
use crate::solver::{train_svdd, SolverSettings};

pub const MULTICLASS_FORMAT_VERSION: u32 = 1;

/// Floor applied to `R^2` so that ratios stay finite for classes whose
/// sphere has collapsed to a point.
pub const R_SQUARED_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassModel {
    pub label: ClassLabel,
    pub bandwidth: BandwidthSelection,
    pub model: SvddModel,
    /// Set when the class was too small or too uniform for the criterion and
    /// the fallback bandwidth was used.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassModel {
    classes: Vec<ClassModel>,
    method: BandwidthMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionDecision {
    pub assigned: ClassLabel,
    pub inside_classes: Vec<ClassLabel>,
    /// `dist_i / R_i` for every class, in class order (with the `R^2` floor).
    pub ratios: Vec<f64>,
}

/// Whether fusion compares squared or plain distances. Both give the same
/// labels; squared space avoids the square roots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionSpace {
    #[default]
    Squared,
    Unsquared,
}

/// Index of the assigned class, the classes whose sphere contains the
/// point, and `dist/R` per class.
pub fn fuse(dist2: &[f64], r2: &[f64], space: FusionSpace) -> (usize, Vec<usize>, Vec<f64>) {
    assert_eq!(dist2.len(), r2.len());
    assert!(!dist2.is_empty(), "fusion needs at least one class");
    let (inside, scores): (Vec<bool>, Vec<f64>) = match space {
        FusionSpace::Squared => dist2
            .iter()
            .zip(r2)
            .map(|(&d2, &r2)| (d2 <= r2, d2 / r2.max(R_SQUARED_FLOOR)))
            .unzip(),
        FusionSpace::Unsquared => dist2
            .iter()
            .zip(r2)
            .map(|(&d2, &r2)| {
                let (d, r) = (d2.sqrt(), r2.sqrt());
                (d <= r, d / r.max(R_SQUARED_FLOOR.sqrt()))
            })
            .unzip(),
    };
    let inside: Vec<usize> = (0..inside.len()).filter(|&i| inside[i]).collect();
    let assigned = if inside.len() == 1 {
        inside[0]
    } else {
        // strict `<` keeps the lowest index on ties
        (1..scores.len()).fold(0, |best, i| if scores[i] < scores[best] { i } else { best })
    };
    let ratios = match space {
        FusionSpace::Squared => scores.iter().map(|s| s.sqrt()).collect(),
        FusionSpace::Unsquared => scores,
    };
    (assigned, inside, ratios)
}

/// Smallest class size each criterion can handle.
fn minimum_class_size(method: BandwidthMethod) -> usize {
    match method {
        BandwidthMethod::Var => 2,
        BandwidthMethod::Mean => 2,
        // The delta iteration diverges for N = 3.
        BandwidthMethod::ModifiedMean | BandwidthMethod::Peak => 4,
    }
}

fn class_bandwidth(
    rows: &[Observation],
    method: BandwidthMethod,
    options: &BandwidthOptions,
    settings: &SolverSettings,
) -> Result<(BandwidthSelection, Option<String>)> {
    let summary = summarize_variance(rows)?;
    let too_small = rows.len() < minimum_class_size(method);
    if too_small || summary.variance_sum == 0.0 {
        let reason = if too_small {
            format!("{} training samples", rows.len())
        } else {
            "zero variance".to_string()
        };
        let selection = BandwidthSelection {
            method,
            s: options.degenerate_class_bandwidth,
            delta: None,
            iterations: None,
            sweep: None,
        };
        return Ok((selection, Some(format!("{reason}; fallback bandwidth used"))));
    }
    Ok((select_bandwidth(rows, method, options, settings)?, None))
}

pub fn train_multiclass(
    table: &SampleTable,
    method: BandwidthMethod,
    options: &BandwidthOptions,
    settings: &SolverSettings,
) -> Result<MulticlassModel> {
    let classes = table
        .classes()
        .par_iter()
        .map(|label| {
            let rows = table.rows_of_class(label.id);
            let in_class = |e: SvddError| e.in_class(label.name.clone());
            if rows.is_empty() {
                return Err(in_class(SvddError::Input("class has no training samples".into())));
            }
            let (bandwidth, note) = class_bandwidth(&rows, method, options, settings).map_err(in_class)?;
            let params = KernelParams::new(bandwidth.s).map_err(in_class)?;
            let model = train_svdd(&rows, &params, settings)
                .map_err(in_class)?
                .with_class_label(label.name.clone());
            Ok(ClassModel {
                label: label.clone(),
                bandwidth,
                model,
                note,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MulticlassModel::new(classes, method)
}

impl MulticlassModel {
    /// Classes may come in any order; they are stored by id, and the ids
    /// must be exactly `0..k`.
    pub fn new(mut classes: Vec<ClassModel>, method: BandwidthMethod) -> Result<Self> {
        if classes.is_empty() {
            return Err(SvddError::Input("multiclass model needs at least one class".into()));
        }
        classes.sort_by_key(|c| c.label.id);
        let p = classes[0].model.dimension();
        for (i, c) in classes.iter().enumerate() {
            if c.label.id != i {
                return Err(SvddError::Validation(format!(
                    "class ids must be 0..{} without gaps or repeats; found id {} at rank {i}",
                    classes.len(),
                    c.label.id
                )));
            }
            if c.model.dimension() != p {
                return Err(SvddError::Validation(format!(
                    "class {:?} has dimension {}, expected {p}",
                    c.label.name,
                    c.model.dimension()
                )));
            }
        }
        Ok(MulticlassModel { classes, method })
    }

    pub fn classes(&self) -> &[ClassModel] {
        &self.classes
    }

    pub fn labels(&self) -> Vec<ClassLabel> {
        self.classes.iter().map(|c| c.label.clone()).collect()
    }

    pub fn method(&self) -> BandwidthMethod {
        self.method
    }

    pub fn dimension(&self) -> usize {
        self.classes[0].model.dimension()
    }

    pub fn fuse_label(&self, z: &[f64]) -> Result<FusionDecision> {
        self.fuse_label_in(z, FusionSpace::Squared)
    }

    pub fn fuse_label_in(&self, z: &[f64], space: FusionSpace) -> Result<FusionDecision> {
        let dist2 = self
            .classes
            .iter()
            .map(|c| c.model.score_distance2(z))
            .collect::<Result<Vec<_>>>()?;
        let r2: Vec<f64> = self.classes.iter().map(|c| c.model.r_squared()).collect();
        let (assigned, inside, ratios) = fuse(&dist2, &r2, space);
        Ok(FusionDecision {
            assigned: self.classes[assigned].label.clone(),
            inside_classes: inside.into_iter().map(|i| self.classes[i].label.clone()).collect(),
            ratios,
        })
    }

    /// Fuse every row; order of the output matches the input.
    pub fn predict(&self, rows: &[Observation]) -> Result<Vec<FusionDecision>> {
        rows.par_iter().map(|z| self.fuse_label(z)).collect()
    }

    pub fn to_document(&self) -> MulticlassDocument {
        MulticlassDocument {
            format_version: MULTICLASS_FORMAT_VERSION,
            method: self.method,
            labels: self.labels(),
            bandwidths: self
                .classes
                .iter()
                .map(|c| BandwidthSelection {
                    sweep: None,
                    ..c.bandwidth.clone()
                })
                .collect(),
            notes: self.classes.iter().map(|c| c.note.clone()).collect(),
            models: self.classes.iter().map(|c| c.model.to_document()).collect(),
        }
    }

    pub fn from_document(doc: MulticlassDocument) -> Result<Self> {
        if doc.format_version != MULTICLASS_FORMAT_VERSION {
            return Err(SvddError::Validation(format!(
                "unsupported multiclass format_version {} (this build reads version {})",
                doc.format_version, MULTICLASS_FORMAT_VERSION
            )));
        }
        let k = doc.labels.len();
        if doc.models.len() != k || doc.bandwidths.len() != k {
            return Err(SvddError::Validation(format!(
                "{k} labels, {} models and {} bandwidths",
                doc.models.len(),
                doc.bandwidths.len()
            )));
        }
        let notes = if doc.notes.is_empty() { vec![None; k] } else { doc.notes };
        if notes.len() != k {
            return Err(SvddError::Validation(format!("{k} labels but {} notes", notes.len())));
        }
        let classes = doc
            .labels
            .into_iter()
            .zip(doc.bandwidths)
            .zip(doc.models)
            .zip(notes)
            .map(|(((label, bandwidth), model), note)| {
                let model = SvddModel::from_document(model)
                    .map_err(|e| e.in_class(label.name.clone()))?;
                Ok(ClassModel { label, bandwidth, model, note })
            })
            .collect::<Result<Vec<_>>>()?;
        MulticlassModel::new(classes, doc.method)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassDocument {
    pub format_version: u32,
    pub method: BandwidthMethod,
    pub labels: Vec<ClassLabel>,
    pub bandwidths: Vec<BandwidthSelection>,
    #[serde(default)]
    pub notes: Vec<Option<String>>,
    pub models: Vec<ModelDocument>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_distances_go_to_the_larger_sphere() {
        // Same distance to both centers, R_A < R_B, outside both.
        let dist2 = [4.0, 4.0];
        let r2 = [1.0, 2.25];
        for space in [FusionSpace::Squared, FusionSpace::Unsquared] {
            let (assigned, inside, _) = fuse(&dist2, &r2, space);
            assert_eq!(assigned, 1);
            assert!(inside.is_empty());
        }
    }

    #[test]
    fn single_containing_class_wins_regardless_of_ratio() {
        let dist2 = [0.9, 1.1];
        let r2 = [1.0, 100.0];
        let (assigned, inside, ratios) = fuse(&dist2, &[1.0, 1.0], FusionSpace::Squared);
        assert_eq!((assigned, inside), (0, vec![0]));
        assert!(ratios[0] < 1.0 && ratios[1] > 1.0);

        // Inside both: ratio decides.
        let (assigned, inside, _) = fuse(&dist2, &r2, FusionSpace::Squared);
        assert_eq!(inside, vec![0, 1]);
        assert_eq!(assigned, 1);
    }

    #[test]
    fn outside_all_takes_smallest_ratio() {
        // ratios 2 and 3
        let (assigned, inside, ratios) = fuse(&[4.0, 9.0], &[1.0, 1.0], FusionSpace::Squared);
        assert_eq!(assigned, 0);
        assert!(inside.is_empty());
        assert_eq!(ratios, vec![2.0, 3.0]);
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let (assigned, _, _) = fuse(&[4.0, 4.0, 4.0], &[1.0, 1.0, 1.0], FusionSpace::Squared);
        assert_eq!(assigned, 0);
    }

    #[test]
    fn collapsed_sphere_is_finite() {
        let (assigned, inside, ratios) = fuse(&[0.5, 0.3], &[0.0, 0.1], FusionSpace::Squared);
        assert!(ratios.iter().all(|r| r.is_finite()));
        assert_eq!(assigned, 1);
        assert!(inside.is_empty());
        let (assigned, inside, _) = fuse(&[0.0, 0.3], &[0.0, 0.1], FusionSpace::Squared);
        assert_eq!((assigned, inside), (0, vec![0]));
    }

    fn two_class_table() -> SampleTable {
        let rows = vec![
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![0.0, 0.1],
            vec![0.1, 0.1],
            vec![1.0, 1.0],
        ];
        SampleTable::from_rows(rows, &["a", "a", "a", "a", "b"]).unwrap()
    }

    #[test]
    fn single_sample_class_uses_fallback() {
        let m = train_multiclass(
            &two_class_table(),
            BandwidthMethod::ModifiedMean,
            &BandwidthOptions::default(),
            &SolverSettings::default(),
        )
        .unwrap();
        let b = &m.classes()[1];
        assert_eq!(b.model.r_squared(), 0.0);
        assert!(b.note.is_some());
        assert_eq!(m.fuse_label(&[1.0, 1.0]).unwrap().assigned.name, "b");
        assert_eq!(m.fuse_label(&[0.05, 0.05]).unwrap().assigned.name, "a");
    }

    #[test]
    fn one_class_model_labels_everything() {
        let t = SampleTable::from_rows(
            vec![vec![0.0], vec![0.4], vec![0.9], vec![0.2]],
            &["only"; 4],
        )
        .unwrap();
        let m = train_multiclass(&t, BandwidthMethod::Var, &BandwidthOptions::default(), &SolverSettings::default()).unwrap();
        for z in [-10.0, 0.3, 5.0] {
            assert_eq!(m.fuse_label(&[z]).unwrap().assigned.name, "only");
        }
    }

    #[test]
    fn empty_class_is_named_in_error() {
        let t = two_class_table();
        let only_a = t.subset(&[0, 1, 2, 3]);
        let err = train_multiclass(&only_a, BandwidthMethod::Var, &BandwidthOptions::default(), &SolverSettings::default())
            .unwrap_err();
        assert!(err.to_string().contains("\"b\""), "{err}");
    }

    #[test]
    fn json_round_trip_preserves_decisions() {
        let m = train_multiclass(
            &two_class_table(),
            BandwidthMethod::Mean,
            &BandwidthOptions::default(),
            &SolverSettings::default(),
        )
        .unwrap();
        let back = MulticlassModel::from_json(&m.to_json().unwrap()).unwrap();
        for z in [[0.0, 0.0], [0.5, 0.5], [0.9, 1.2]] {
            assert_eq!(m.fuse_label(&z).unwrap(), back.fuse_label(&z).unwrap());
        }
    }
}
