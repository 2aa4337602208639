//! Repeated train/test evaluation of the bandwidth criteria.
//!
//! For every repetition the table is split once (the split is shared by all
//! methods), a multiclass model is trained per method on the training side,
//! and every test row is labeled by fusion. Overall accuracy, per-class
//! accuracy and a confusion matrix are recorded per (method, repetition)
//! cell. A failing cell is recorded with its cause and does not stop the run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{write_sweep_csv, BandwidthMethod, BandwidthOptions, SweepPoint};
use crate::dataprep::{self, split_seed, stratified_split, ClassLabel, Provenance, SampleTable, SplitPlan, SPLIT_RNG};
use crate::error::{Result, SvddError};
use crate::multiclass::train_multiclass;
use crate::solver::SolverSettings;

/// Percentage of positions where `predicted` equals `truth`.
pub fn overall_accuracy<T: PartialEq>(predicted: &[T], truth: &[T]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(SvddError::Input(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(SvddError::Input("cannot score an empty label vector".into()));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(100.0 * hits as f64 / truth.len() as f64)
}

/// Accuracy per class id `0..n_classes`; `None` for classes absent from
/// `truth`.
pub fn per_class_accuracy(predicted: &[usize], truth: &[usize], n_classes: usize) -> Result<Vec<Option<f64>>> {
    if predicted.len() != truth.len() {
        return Err(SvddError::Input(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let mut total = vec![0usize; n_classes];
    let mut hits = vec![0usize; n_classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if t >= n_classes {
            return Err(SvddError::Input(format!("unknown class id {t}")));
        }
        total[t] += 1;
        hits[t] += usize::from(p == t);
    }
    Ok(total
        .iter()
        .zip(&hits)
        .map(|(&n, &h)| (n > 0).then(|| 100.0 * h as f64 / n as f64))
        .collect())
}

/// Rows are true classes, columns predicted classes.
pub fn confusion_matrix(predicted: &[usize], truth: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p < n_classes && t < n_classes {
            m[t][p] += 1;
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub path: PathBuf,
    /// Values above this are replaced with 0 before normalization.
    pub saturation_threshold: Option<f64>,
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub methods: Vec<BandwidthMethod>,
    pub split: SplitPlan,
    pub solver: SolverSettings,
    pub bandwidth: BandwidthOptions,
    /// Not echoed into the report, so that runs written to different
    /// directories produce identical reports.
    #[serde(skip)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            dataset: DatasetSpec {
                path: path.into(),
                saturation_threshold: None,
                normalize: true,
            },
            methods: vec![
                BandwidthMethod::Var,
                BandwidthMethod::Mean,
                BandwidthMethod::ModifiedMean,
            ],
            split: SplitPlan::default(),
            solver: SolverSettings::default(),
            bandwidth: BandwidthOptions::default(),
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(SvddError::Config("at least one bandwidth method is required".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(SvddError::Config(format!("method {m} listed twice")));
            }
        }
        self.split.validate()?;
        self.solver.validate().map_err(|e| SvddError::Config(e.to_string()))?;
        if let Some(t) = self.dataset.saturation_threshold {
            if t.is_nan() || t <= 0.0 {
                return Err(SvddError::Config(format!("saturation threshold must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub band_count: usize,
    pub classes: Vec<ClassLabel>,
    pub class_counts: Vec<usize>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEcho {
    pub repetition: usize,
    pub split_seed: u64,
    pub train_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Ok {
        overall_accuracy: f64,
        per_class_accuracy: Vec<Option<f64>>,
        /// Selected bandwidth per class.
        bandwidths: Vec<f64>,
        confusion: Vec<Vec<usize>>,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub repetition: usize,
    #[serde(flatten)]
    pub outcome: CellOutcome,
    /// Peak-criterion sweeps per class name; written as CSV, not to JSON.
    #[serde(skip)]
    pub sweeps: Vec<(String, Vec<SweepPoint>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: BandwidthMethod,
    pub per_rep_oa: Vec<Option<f64>>,
    /// Mean over the successful repetitions.
    pub average_oa: Option<f64>,
    /// `classes x repetitions`.
    pub per_class_accuracy: Vec<Vec<Option<f64>>>,
    pub per_class_average: Vec<Option<f64>>,
    pub cells: Vec<CellReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub dataset: DatasetSummary,
    pub split_rng: String,
    pub splits: Vec<SplitEcho>,
    pub methods: Vec<MethodReport>,
    /// Total wall time per method. Kept out of `report.json`.
    #[serde(skip)]
    pub wall_times: Vec<(BandwidthMethod, Duration)>,
}

impl ExperimentReport {
    pub fn all_failed(&self) -> bool {
        self.methods
            .iter()
            .flat_map(|m| &m.cells)
            .all(|c| matches!(c.outcome, CellOutcome::Failed { .. }))
    }

    pub fn method(&self, method: BandwidthMethod) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == method)
    }
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<SampleTable> {
    let table = dataprep::load_samples(&spec.path)?;
    dataprep::preprocess(&table, spec.saturation_threshold, spec.normalize)
}

/// Load and preprocess the configured data set, then run every cell.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let table = load_dataset(&config.dataset)?;
    run_on_table(&table, config)
}

/// Run the protocol on an already preprocessed table.
pub fn run_on_table(table: &SampleTable, config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let reps: Vec<usize> = (1..=config.split.repetitions).collect();
    let splits: Vec<Result<(SampleTable, SampleTable)>> = reps
        .iter()
        .map(|&r| stratified_split(table, &config.split, r))
        .collect();

    let cells: Vec<(BandwidthMethod, usize)> = config
        .methods
        .iter()
        .flat_map(|&m| reps.iter().map(move |&r| (m, r)))
        .collect();
    let results: Vec<(CellReport, Duration)> = cells
        .par_iter()
        .map(|&(method, rep)| {
            let start = Instant::now();
            let cell = match &splits[rep - 1] {
                Ok((train, test)) => run_cell(train, test, method, rep, config),
                Err(e) => failed(rep, e),
            };
            (cell, start.elapsed())
        })
        .collect();

    let k = table.classes().len();
    let mut methods = Vec::new();
    let mut wall_times = Vec::new();
    for (mi, &method) in config.methods.iter().enumerate() {
        let chunk = &results[mi * reps.len()..(mi + 1) * reps.len()];
        wall_times.push((method, chunk.iter().map(|(_, d)| *d).sum()));
        let cells: Vec<CellReport> = chunk.iter().map(|(c, _)| c.clone()).collect();
        methods.push(summarize_method(method, cells, k));
    }

    let split_echo = reps
        .iter()
        .zip(&splits)
        .map(|(&r, s)| {
            let (train_counts, test_counts) = match s {
                Ok((train, test)) => (train.class_counts(), test.class_counts()),
                Err(_) => (Vec::new(), Vec::new()),
            };
            SplitEcho {
                repetition: r,
                split_seed: split_seed(config.split.seed, r),
                train_counts,
                test_counts,
            }
        })
        .collect();

    Ok(ExperimentReport {
        config: config.clone(),
        dataset: DatasetSummary {
            n: table.n(),
            band_count: table.band_count(),
            classes: table.classes().to_vec(),
            class_counts: table.class_counts(),
            provenance: table.provenance().clone(),
        },
        split_rng: SPLIT_RNG.to_string(),
        splits: split_echo,
        methods,
        wall_times,
    })
}

fn failed(repetition: usize, e: &SvddError) -> CellReport {
    CellReport {
        repetition,
        outcome: CellOutcome::Failed { error: e.to_string() },
        sweeps: Vec::new(),
    }
}

fn run_cell(
    train: &SampleTable,
    test: &SampleTable,
    method: BandwidthMethod,
    repetition: usize,
    config: &ExperimentConfig,
) -> CellReport {
    let attempt = || -> Result<CellReport> {
        let model = train_multiclass(train, method, &config.bandwidth, &config.solver)?;
        let decisions = model.predict(test.features())?;
        let predicted: Vec<usize> = decisions.iter().map(|d| d.assigned.id).collect();
        let k = train.classes().len();
        let truth = test.labels();
        Ok(CellReport {
            repetition,
            outcome: CellOutcome::Ok {
                overall_accuracy: overall_accuracy(&predicted, truth)?,
                per_class_accuracy: per_class_accuracy(&predicted, truth, k)?,
                bandwidths: model.classes().iter().map(|c| c.bandwidth.s).collect(),
                confusion: confusion_matrix(&predicted, truth, k),
            },
            sweeps: model
                .classes()
                .iter()
                .filter_map(|c| c.bandwidth.sweep.clone().map(|s| (c.label.name.clone(), s)))
                .collect(),
        })
    };
    attempt().unwrap_or_else(|e| failed(repetition, &e))
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

fn summarize_method(method: BandwidthMethod, cells: Vec<CellReport>, k: usize) -> MethodReport {
    let per_rep_oa: Vec<Option<f64>> = cells
        .iter()
        .map(|c| match &c.outcome {
            CellOutcome::Ok { overall_accuracy, .. } => Some(*overall_accuracy),
            CellOutcome::Failed { .. } => None,
        })
        .collect();
    let per_class_accuracy: Vec<Vec<Option<f64>>> = (0..k)
        .map(|class| {
            cells
                .iter()
                .map(|c| match &c.outcome {
                    CellOutcome::Ok { per_class_accuracy, .. } => per_class_accuracy[class],
                    CellOutcome::Failed { .. } => None,
                })
                .collect()
        })
        .collect();
    MethodReport {
        method,
        average_oa: mean_of(per_rep_oa.iter().copied()),
        per_class_average: per_class_accuracy
            .iter()
            .map(|row| mean_of(row.iter().copied()))
            .collect(),
        per_rep_oa,
        per_class_accuracy,
        cells,
    }
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

/// Plain-text tables: overall accuracy per repetition and method, then
/// per-class accuracy for each method.
pub fn render_text(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let reps = report.config.split.repetitions;
    let source = report.dataset.provenance.source.as_deref().unwrap_or("<in-memory table>");
    let _ = writeln!(out, "Overall Performance (OA%) of {source}");
    let _ = writeln!(
        out,
        "samples: {}  bands: {}  classes: {}  train fraction: {}  seed: {}",
        report.dataset.n,
        report.dataset.band_count,
        report.dataset.classes.len(),
        report.config.split.train_fraction,
        report.config.split.seed
    );
    let _ = writeln!(out);

    let mut header = format!("{:<10}", "Method");
    for m in &report.methods {
        let _ = write!(header, " {:>14}", m.method.title());
    }
    let _ = writeln!(out, "{header}");
    for r in 0..reps {
        let mut line = format!("{:<10}", format!("Exp_{}", r + 1));
        for m in &report.methods {
            let cell = m.per_rep_oa[r].map_or_else(|| "failed".to_string(), |v| format!("{v:.2}"));
            let _ = write!(line, " {cell:>14}");
        }
        let _ = writeln!(out, "{line}");
    }
    let mut line = format!("{:<10}", "Average");
    for m in &report.methods {
        let _ = write!(line, " {:>14}", fmt_pct(m.average_oa));
    }
    let _ = writeln!(out, "{line}");

    for m in &report.methods {
        let _ = writeln!(out);
        let _ = writeln!(out, "Accuracy (%) per Class, {}", m.method.title());
        let mut header = format!("{:>7}  {:<30} {:>12}", "Class #", "Class Name", "# of Samples");
        for r in 0..reps {
            let _ = write!(header, " {:>8}", format!("Exp_{}", r + 1));
        }
        let _ = write!(header, " {:>8}", "Average");
        let _ = writeln!(out, "{header}");
        for (c, label) in report.dataset.classes.iter().enumerate() {
            let mut line = format!(
                "{:>7}  {:<30} {:>12}",
                c + 1,
                label.name,
                report.dataset.class_counts[c]
            );
            for r in 0..reps {
                let _ = write!(line, " {:>8}", fmt_pct(m.per_class_accuracy[c][r]));
            }
            let _ = write!(line, " {:>8}", fmt_pct(m.per_class_average[c]));
            let _ = writeln!(out, "{line}");
        }
    }

    let failures: Vec<String> = report
        .methods
        .iter()
        .flat_map(|m| {
            m.cells.iter().filter_map(move |c| match &c.outcome {
                CellOutcome::Failed { error } => {
                    Some(format!("{} Exp_{}: {error}", m.method, c.repetition))
                }
                CellOutcome::Ok { .. } => None,
            })
        })
        .collect();
    if !failures.is_empty() {
        let _ = writeln!(out, "\nFailed cells:");
        for f in failures {
            let _ = writeln!(out, "  {f}");
        }
    }

    let _ = writeln!(out, "\nWall time per method:");
    for (m, d) in &report.wall_times {
        let _ = writeln!(out, "  {:<14} {:.3} s", m.as_str(), d.as_secs_f64());
    }
    out
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| SvddError::io(path, e))
}

fn confusion_csv(labels: &[ClassLabel], confusion: &[Vec<usize>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| SvddError::Format(e.to_string());
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(labels.iter().map(|l| l.name.clone()));
    w.write_record(&header).map_err(err)?;
    for (label, row) in labels.iter().zip(confusion) {
        let mut rec = vec![label.name.clone()];
        rec.extend(row.iter().map(usize::to_string));
        w.write_record(&rec).map_err(err)?;
    }
    w.into_inner().map_err(|e| SvddError::Format(e.to_string()))
}

/// Serialize the machine-readable report.
pub fn report_json(report: &ExperimentReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

/// Write `report.json`, `report.txt`, `timings.json`, one
/// `confusion_<method>_<rep>.csv` per successful cell, and
/// `sweep_<rep>_<class>.csv` for peak-criterion sweeps.
pub fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| SvddError::io(dir, e))?;
    let mut written = Vec::new();
    let mut emit = |name: String, bytes: Vec<u8>| -> Result<()> {
        let path = dir.join(name);
        write_file(&path, bytes)?;
        written.push(path);
        Ok(())
    };
    emit("report.json".into(), report_json(report)?.into_bytes())?;
    emit("report.txt".into(), render_text(report).into_bytes())?;
    let timings: Vec<serde_json::Value> = report
        .wall_times
        .iter()
        .map(|(m, d)| serde_json::json!({ "method": m, "seconds": d.as_secs_f64() }))
        .collect();
    emit("timings.json".into(), serde_json::to_vec_pretty(&timings)?)?;
    for m in &report.methods {
        for cell in &m.cells {
            if let CellOutcome::Ok { confusion, .. } = &cell.outcome {
                emit(
                    format!("confusion_{}_{}.csv", m.method, cell.repetition),
                    confusion_csv(&report.dataset.classes, confusion)?,
                )?;
            }
            for (class, sweep) in &cell.sweeps {
                let mut buf = Vec::new();
                write_sweep_csv(&mut buf, sweep)?;
                emit(format!("sweep_{}_{}.csv", cell.repetition, file_safe(class)), buf)?;
            }
        }
    }
    Ok(written)
}
