//! Evaluation inputs: a probability matrix with ground-truth labels, and its
//! CSV / JSON representations.
//!
//! CSV layout is one header row followed by one row per observation: `k`
//! probability columns, then an integer label column. Labels are 0-based.
//! JSON layout is `{ "probs": [[...], ...], "labels": [...] }`.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum allowed deviation of a row sum from 1.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Json,
}

impl DataFormat {
    /// Guess from a file extension; anything that is not `.json` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => DataFormat::Json,
            _ => DataFormat::Csv,
        }
    }
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DataFormat::Csv),
            "json" => Ok(DataFormat::Json),
            other => Err(Error::InvalidArgument(format!("unknown format '{other}'"))),
        }
    }
}

/// An n x k matrix of class probabilities together with the true labels.
///
/// Immutable once validated: every row lies on the probability simplex,
/// every label indexes a column, and every class has at least one
/// observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDataset {
    probs: Array2<f64>,
    labels: Vec<usize>,
}

/// Per-class observation counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts(pub Vec<usize>);

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn get(&self, class: usize) -> usize {
        self.0[class]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetJson {
    probs: Vec<Vec<f64>>,
    labels: Vec<i64>,
}

impl ScoredDataset {
    /// Validates and, when a row sum is off by less than the simplex
    /// tolerance, renormalizes the rows.
    pub fn new(probs: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        let labels = labels.into_iter().map(|l| l as i64).collect::<Vec<_>>();
        Self::from_raw(probs, &labels, SIMPLEX_TOLERANCE)
    }

    pub fn with_tolerance(probs: Array2<f64>, labels: Vec<usize>, tolerance: f64) -> Result<Self> {
        let labels = labels.into_iter().map(|l| l as i64).collect::<Vec<_>>();
        Self::from_raw(probs, &labels, tolerance)
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: &[i64]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        let mut probs = Array2::zeros((rows.len(), k));
        for (r, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Parse {
                    line: r + 1,
                    message: format!("expected {k} probabilities, found {}", row.len()),
                });
            }
            for (c, &p) in row.iter().enumerate() {
                probs[[r, c]] = p;
            }
        }
        Self::from_raw(probs, labels, SIMPLEX_TOLERANCE)
    }

    fn from_raw(mut probs: Array2<f64>, labels: &[i64], tolerance: f64) -> Result<Self> {
        let (n, k) = probs.dim();
        if k < 2 {
            return Err(Error::InvalidK { k });
        }
        if n == 0 {
            return Err(Error::DimensionMismatch("dataset has no observations".into()));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} probability rows but {} labels",
                labels.len()
            )));
        }
        // Rows already within rounding noise of 1 are left alone so that
        // write -> read is the identity.
        let noise = 4.0 * k as f64 * f64::EPSILON;
        for (r, mut row) in probs.rows_mut().into_iter().enumerate() {
            for (c, &p) in row.iter().enumerate() {
                if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                    return Err(Error::ProbabilityOutOfRange { row: r, col: c, value: p });
                }
            }
            let sum: f64 = row.sum();
            let dev = (sum - 1.0).abs();
            if dev > tolerance {
                return Err(Error::SimplexViolation { row: r, sum });
            }
            if dev > noise {
                row.mapv_inplace(|p| p / sum);
            }
        }
        let mut checked = Vec::with_capacity(n);
        let mut seen = vec![false; k];
        for (r, &label) in labels.iter().enumerate() {
            if label < 0 || label as usize >= k {
                return Err(Error::LabelOutOfRange { row: r, label, k });
            }
            seen[label as usize] = true;
            checked.push(label as usize);
        }
        if let Some(class) = seen.iter().position(|s| !s) {
            return Err(Error::EmptyClass { class });
        }
        Ok(Self { probs, labels: checked })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k(&self) -> usize {
        self.probs.ncols()
    }

    pub fn probs(&self) -> ArrayView2<'_, f64> {
        self.probs.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Column `class` of the probability matrix.
    pub fn scores(&self, class: usize) -> ArrayView1<'_, f64> {
        self.probs.column(class)
    }

    pub fn class_counts(&self) -> ClassCounts {
        class_counts(self)
    }

    /// A new dataset made of the given observations (in the given order).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let probs = self.probs.select(ndarray::Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(probs, labels)
    }

    /// Same labels with a different probability matrix.
    pub fn with_probs(&self, probs: Array2<f64>) -> Result<Self> {
        Self::new(probs, self.labels.clone())
    }

    pub fn from_reader<R: Read>(reader: R, format: DataFormat) -> Result<Self> {
        match format {
            DataFormat::Csv => read_csv(reader),
            DataFormat::Json => {
                let parsed: DatasetJson = serde_json::from_reader(reader)?;
                Self::from_rows(&parsed.probs, &parsed.labels)
            }
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        Self::from_reader(BufReader::new(file), DataFormat::from_path(path))
    }

    pub fn write<W: Write>(&self, mut writer: W, format: DataFormat) -> Result<()> {
        match format {
            DataFormat::Csv => {
                let k = self.k();
                let header: Vec<String> = (0..k).map(|c| format!("p{c}")).chain(["label".into()]).collect();
                writeln!(writer, "{}", header.join(","))?;
                for (row, label) in self.probs.rows().into_iter().zip(&self.labels) {
                    let cells: Vec<String> = row.iter().map(|p| fmt_real(*p)).collect();
                    writeln!(writer, "{},{}", cells.join(","), label)?;
                }
            }
            DataFormat::Json => {
                let doc = DatasetJson {
                    probs: self.probs.rows().into_iter().map(|r| r.to_vec()).collect(),
                    labels: self.labels.iter().map(|&l| l as i64).collect(),
                };
                serde_json::to_writer(&mut writer, &doc)?;
                writeln!(writer)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, format: DataFormat) -> Result<()> {
        let file = File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w, format)?;
        w.flush()?;
        Ok(())
    }
}

/// Number of observations carrying each label.
pub fn class_counts(dataset: &ScoredDataset) -> ClassCounts {
    let mut counts = vec![0usize; dataset.k()];
    for &l in dataset.labels() {
        counts[l] += 1;
    }
    ClassCounts(counts)
}

/// Shortest representation that parses back to the same `f64`; this never
/// loses precision (up to 17 significant digits are emitted when needed).
pub fn fmt_real(x: f64) -> String {
    format!("{x:?}")
}

fn parse_real(field: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|e| Error::Parse {
        line,
        message: format!("'{field}' is not a number ({e})"),
    })
}

fn parse_label(field: &str, line: usize) -> Result<i64> {
    field.trim().parse::<i64>().map_err(|_| Error::Parse {
        line,
        message: format!("label '{field}' is not an integer"),
    })
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader)
}

fn read_csv<R: Read>(reader: R) -> Result<ScoredDataset> {
    let mut rdr = csv_reader(reader);
    let width = rdr.headers()?.len();
    if width < 3 {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected at least 2 probability columns and a label column, found {width} columns"),
        });
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 2;
        if record.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        let probs = (0..width - 1)
            .map(|c| parse_real(&record[c], line))
            .collect::<Result<Vec<_>>>()?;
        rows.push(probs);
        labels.push(parse_label(&record[width - 1], line)?);
    }
    ScoredDataset::from_rows(&rows, &labels)
}

/// Reads a probability-only CSV (header row, then k columns per row).
pub fn read_prob_matrix<R: Read>(reader: R) -> Result<Array2<f64>> {
    let mut rdr = csv_reader(reader);
    let width = rdr.headers()?.len();
    let mut values = Vec::new();
    let mut n = 0;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != width {
            return Err(Error::Parse {
                line: i + 2,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for field in record.iter() {
            values.push(parse_real(field, i + 2)?);
        }
        n += 1;
    }
    Array2::from_shape_vec((n, width), values).map_err(|e| Error::DimensionMismatch(e.to_string()))
}

/// Reads labels, one integer per line. A non-numeric first line is taken
/// as a header. Comma-separated labels on a single line are also accepted.
pub fn read_labels<R: Read>(reader: R) -> Result<Vec<i64>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if i == 0 && trimmed.split(',').all(|f| f.trim().parse::<i64>().is_err()) {
            continue;
        }
        for field in trimmed.split(',').filter(|f| !f.trim().is_empty()) {
            out.push(parse_label(field, i + 1)?);
        }
    }
    Ok(out)
}

/// Combines a probability matrix with labels from a separate source.
pub fn dataset_from_parts(probs: Array2<f64>, labels: &[i64]) -> Result<ScoredDataset> {
    let rows: Vec<Vec<f64>> = probs.rows().into_iter().map(|r| r.to_vec()).collect();
    if rows.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probability rows but {} labels",
            rows.len(),
            labels.len()
        )));
    }
    ScoredDataset::from_rows(&rows, labels)
}
