//! Labeled sample tables: CSV ingestion, saturation correction, global max
//! normalization and seeded per-class train/test splits.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvddError};
use crate::kernel::Observation;

pub const DEFAULT_SATURATION_THRESHOLD: f64 = 65_500.0;

/// Description of the generator behind [`stratified_split`], echoed into
/// reports.
pub const SPLIT_RNG: &str = "ChaCha8Rng seeded with splitmix64(seed ^ splitmix64(repetition)); \
    classes visited in id order, each class's row indices shuffled with SliceRandom::shuffle";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassLabel {
    pub id: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum PrepStep {
    SaturationCorrected { threshold: f64, replaced: usize },
    MaxNormalized { global_max: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: Option<String>,
    /// Preprocessing steps in the order they were applied.
    pub steps: Vec<PrepStep>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    band_names: Vec<String>,
    features: Vec<Observation>,
    labels: Vec<usize>,
    classes: Vec<ClassLabel>,
    provenance: Provenance,
}

impl SampleTable {
    /// Build a table from rows and label strings. Class ids are assigned
    /// contiguously: by numeric value when every label is an integer,
    /// otherwise by first appearance.
    pub fn from_rows<S: AsRef<str>>(features: Vec<Observation>, labels: &[S]) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(SvddError::Input(format!(
                "{} rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if features.is_empty() {
            return Err(SvddError::Input("sample table has no rows".into()));
        }
        let p = features[0].len();
        if p == 0 {
            return Err(SvddError::Input("sample table has no feature columns".into()));
        }
        for (i, row) in features.iter().enumerate() {
            if row.len() != p {
                return Err(SvddError::Format(format!(
                    "row {i} has {} features, expected {p}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(SvddError::Input(format!("row {i} has a non-finite value")));
            }
        }
        let classes = assign_classes(labels);
        let ids = labels
            .iter()
            .map(|l| classes.iter().position(|c| c.name == l.as_ref().trim()).unwrap())
            .collect();
        Ok(SampleTable {
            band_names: (1..=p).map(|j| format!("band_{j}")).collect(),
            features,
            labels: ids,
            classes,
            provenance: Provenance::default(),
        })
    }

    pub fn n(&self) -> usize {
        self.features.len()
    }

    pub fn band_count(&self) -> usize {
        self.band_names.len()
    }

    pub fn band_names(&self) -> &[String] {
        &self.band_names
    }

    pub fn features(&self) -> &[Observation] {
        &self.features
    }

    /// Class id of every row.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> &[ClassLabel] {
        &self.classes
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn set_source(&mut self, source: impl Into<String>) {
        self.provenance.source = Some(source.into());
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn rows_of_class(&self, id: usize) -> Vec<Observation> {
        self.features
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == id)
            .map(|(x, _)| x.clone())
            .collect()
    }

    /// Rows at `indices` (in the given order); keeps the class list and
    /// provenance.
    pub fn subset(&self, indices: &[usize]) -> SampleTable {
        SampleTable {
            band_names: self.band_names.clone(),
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Write as CSV with the provenance as leading `#` comment lines.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        for line in provenance_lines(&self.provenance) {
            writeln!(out, "# {line}").map_err(|e| SvddError::Format(e.to_string()))?;
        }
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| SvddError::Format(e.to_string());
        let mut header = self.band_names.clone();
        header.push("label".into());
        w.write_record(&header).map_err(csv_err)?;
        for (row, &l) in self.features.iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
            rec.push(self.classes[l].name.clone());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| SvddError::Format(e.to_string()))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| SvddError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

pub fn provenance_lines(p: &Provenance) -> Vec<String> {
    let mut lines = Vec::new();
    if let Some(src) = &p.source {
        lines.push(format!("source: {src}"));
    }
    for step in &p.steps {
        lines.push(match step {
            PrepStep::SaturationCorrected { threshold, replaced } => {
                format!("saturation_corrected: threshold={threshold} replaced={replaced}")
            }
            PrepStep::MaxNormalized { global_max } => {
                format!("max_normalized: global_max={global_max}")
            }
        });
    }
    for w in &p.warnings {
        lines.push(format!("warning: {w}"));
    }
    lines
}

fn assign_classes<S: AsRef<str>>(labels: &[S]) -> Vec<ClassLabel> {
    let mut names: Vec<&str> = Vec::new();
    for l in labels {
        let l = l.as_ref().trim();
        if !names.contains(&l) {
            names.push(l);
        }
    }
    let numeric: Option<Vec<i64>> = names.iter().map(|n| n.parse().ok()).collect();
    if let Some(values) = numeric {
        let mut paired: Vec<(i64, &str)> = values.into_iter().zip(names.iter().copied()).collect();
        paired.sort();
        names = paired.into_iter().map(|(_, n)| n).collect();
    }
    names
        .into_iter()
        .enumerate()
        .map(|(id, name)| ClassLabel {
            id,
            name: name.to_string(),
        })
        .collect()
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn parse_row(record: &csv::StringRecord, columns: usize, names: &[String]) -> Result<Observation> {
    let line = record.position().map_or(0, |p| p.line());
    if record.len() != names.len() {
        return Err(SvddError::Format(format!(
            "line {line}: expected {} columns, found {}",
            names.len(),
            record.len()
        )));
    }
    (0..columns)
        .map(|j| {
            let cell = &record[j];
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(SvddError::Parse {
                    line,
                    message: format!("column {:?} holds non-numeric value {cell:?}", names[j]),
                }),
            }
        })
        .collect()
}

/// Read a labeled table: feature columns followed by a final `label` column.
pub fn read_samples<R: Read>(input: R) -> Result<SampleTable> {
    let mut reader = csv_reader(input);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| SvddError::Format(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.last().map(String::as_str) != Some("label") {
        return Err(SvddError::Format(
            "header must end with a `label` column".into(),
        ));
    }
    let p = header.len() - 1;
    if p == 0 {
        return Err(SvddError::Format("no feature columns before `label`".into()));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| SvddError::Format(e.to_string()))?;
        features.push(parse_row(&record, p, &header)?);
        let label = record[p].to_string();
        if label.is_empty() {
            let line = record.position().map_or(0, |p| p.line());
            return Err(SvddError::Parse {
                line,
                message: "empty label".into(),
            });
        }
        labels.push(label);
    }
    let mut table = SampleTable::from_rows(features, &labels)?;
    table.band_names = header[..p].to_vec();
    Ok(table)
}

/// Read feature rows for scoring. A trailing `label` column, if present, is
/// ignored.
pub fn read_features<R: Read>(input: R) -> Result<Vec<Observation>> {
    let mut reader = csv_reader(input);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| SvddError::Format(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let p = if header.last().map(String::as_str) == Some("label") {
        header.len() - 1
    } else {
        header.len()
    };
    if p == 0 {
        return Err(SvddError::Format("no feature columns".into()));
    }
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| SvddError::Format(e.to_string()))?;
            parse_row(&r, p, &header)
        })
        .collect()
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| SvddError::io(path, e))
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<SampleTable> {
    let path = path.as_ref();
    let mut table = read_samples(std::io::BufReader::new(open(path)?))?;
    table.set_source(path.display().to_string());
    Ok(table)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Vec<Observation>> {
    let path = path.as_ref();
    read_features(std::io::BufReader::new(open(path)?))
}

/// Replace every value strictly above `threshold` with 0.
pub fn correct_saturation(table: &SampleTable, threshold: f64) -> Result<SampleTable> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(SvddError::Input(format!(
            "saturation threshold must be positive, got {threshold}"
        )));
    }
    let mut out = table.clone();
    let mut replaced = 0;
    for v in out.features.iter_mut().flatten() {
        if *v > threshold {
            *v = 0.0;
            replaced += 1;
        }
    }
    if out
        .provenance
        .steps
        .iter()
        .any(|s| matches!(s, PrepStep::MaxNormalized { .. }))
    {
        out.provenance
            .warnings
            .push("saturation correction applied after normalization".into());
    }
    out.provenance
        .steps
        .push(PrepStep::SaturationCorrected { threshold, replaced });
    Ok(out)
}

/// Divide every cell by the single largest cell of the table.
pub fn max_normalize(table: &SampleTable) -> Result<SampleTable> {
    let global_max = table
        .features
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if global_max.is_nan() || global_max <= 0.0 {
        return Err(SvddError::Degenerate(format!(
            "global maximum is {global_max}; cannot normalize"
        )));
    }
    let mut out = table.clone();
    let mut negative = false;
    for v in out.features.iter_mut().flatten() {
        negative |= *v < 0.0;
        *v /= global_max;
    }
    if negative {
        out.provenance
            .warnings
            .push("negative values present; normalized range is not within [0, 1]".into());
    }
    out.provenance.steps.push(PrepStep::MaxNormalized { global_max });
    Ok(out)
}

/// Saturation correction (when a threshold is given) followed by
/// normalization (when requested).
pub fn preprocess(table: &SampleTable, saturation: Option<f64>, normalize: bool) -> Result<SampleTable> {
    let mut out = match saturation {
        Some(t) => correct_saturation(table, t)?,
        None => table.clone(),
    };
    if normalize {
        out = max_normalize(&out)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_fraction: f64,
    pub seed: u64,
    pub repetitions: usize,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            train_fraction: 0.30,
            seed: 0,
            repetitions: 5,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(SvddError::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.repetitions == 0 {
            return Err(SvddError::Config("repetitions must be at least 1".into()));
        }
        Ok(())
    }

    /// Training rows drawn from a class of `class_size` rows: round half up,
    /// at least one, and at least one left for testing when possible.
    pub fn train_count(&self, class_size: usize) -> usize {
        let raw = (self.train_fraction * class_size as f64 + 0.5 + 1e-9).floor() as usize;
        let upper = if class_size >= 2 { class_size - 1 } else { class_size };
        raw.max(1).min(upper)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn split_seed(seed: u64, repetition: usize) -> u64 {
    splitmix64(seed ^ splitmix64(repetition as u64))
}

/// Per-class seeded split. Rows keep their original order on both sides.
/// Classes with a single row go entirely to training, with a warning on the
/// training table.
pub fn stratified_split(
    table: &SampleTable,
    plan: &SplitPlan,
    repetition: usize,
) -> Result<(SampleTable, SampleTable)> {
    plan.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(plan.seed, repetition));
    let mut in_train = vec![false; table.n()];
    let mut warnings = Vec::new();
    for class in &table.classes {
        let mut rows: Vec<usize> = (0..table.n()).filter(|&i| table.labels[i] == class.id).collect();
        if rows.is_empty() {
            continue;
        }
        if rows.len() == 1 {
            warnings.push(format!(
                "class {:?} has a single sample; it is used for training only",
                class.name
            ));
        }
        rows.shuffle(&mut rng);
        for &i in &rows[..plan.train_count(rows.len())] {
            in_train[i] = true;
        }
    }
    let train_idx: Vec<usize> = (0..table.n()).filter(|&i| in_train[i]).collect();
    let test_idx: Vec<usize> = (0..table.n()).filter(|&i| !in_train[i]).collect();
    let mut train = table.subset(&train_idx);
    train.provenance.warnings.extend(warnings);
    Ok((train, table.subset(&test_idx)))
}
