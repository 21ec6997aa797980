//! Actuation-command / position datasets.
//!
//! A [`Dataset`] is an ordered list of [`Sample`]s with named columns. On disk
//! it is a CSV file whose first `n_inputs` columns are commands and whose
//! remaining columns are end-effector coordinates.

mod ecdf;
mod standardize;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ecdf::{ecdf, ecdf_curve, ks_statistic};
pub use standardize::{Standardizer, STD_FLOOR};
pub use synth::{constant_curvature_tip, generate_synthetic, CommandRange, SplitRanges, SplitSizes, SynthConfig};

/// One actuation-command vector paired with the resulting position vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub u: Vec<f64>,
    pub x: Vec<f64>,
}

impl Sample {
    pub fn new(u: Vec<f64>, x: Vec<f64>) -> Self {
        Self { u, x }
    }

    fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.x).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    input_names: Vec<String>,
    output_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, checking dimensions and finiteness of every sample.
    /// An empty sample list is allowed here so that split parts may be empty;
    /// operations that need data check for it themselves.
    pub fn new(
        samples: Vec<Sample>,
        input_names: Vec<String>,
        output_names: Vec<String>,
    ) -> Result<Self> {
        if input_names.is_empty() || output_names.is_empty() {
            return Err(Error::Data(
                "datasets need at least one input and one output column".into(),
            ));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.u.len() != input_names.len() || s.x.len() != output_names.len() {
                return Err(Error::Data(format!(
                    "sample {i} has dimensions ({}, {}), expected ({}, {})",
                    s.u.len(),
                    s.x.len(),
                    input_names.len(),
                    output_names.len()
                )));
            }
            if !s.is_finite() {
                return Err(Error::Data(format!("sample {i} contains a non-finite value")));
            }
        }
        Ok(Self {
            samples,
            input_names,
            output_names,
        })
    }

    /// Dataset with generated column names `u1..un` and `x1..xk`.
    pub fn from_samples(samples: Vec<Sample>, n_inputs: usize, n_outputs: usize) -> Result<Self> {
        Self::new(samples, default_names("u", n_inputs), default_names("x", n_outputs))
    }

    /// Empty dataset sharing this one's column names.
    pub fn empty_like(&self) -> Self {
        Self {
            samples: Vec::new(),
            input_names: self.input_names.clone(),
            output_names: self.output_names.clone(),
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_inputs(&self) -> usize {
        self.input_names.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.output_names.len()
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }

    pub fn output_names(&self) -> &[String] {
        &self.output_names
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.u.clone()).collect()
    }

    pub fn outputs(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.x.clone()).collect()
    }

    /// Values of input column `j`.
    pub fn input_column(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.u[j]).collect()
    }

    /// Values of output column `k`.
    pub fn output_column(&self, k: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.x[k]).collect()
    }

    fn same_schema(&self, other: &Dataset) -> bool {
        self.input_names == other.input_names && self.output_names == other.output_names
    }

    fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            samples: rows.iter().map(|&i| self.samples[i].clone()).collect(),
            input_names: self.input_names.clone(),
            output_names: self.output_names.clone(),
        }
    }

    /// Writes the dataset as CSV with a header row, inputs first.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.input_names.iter().chain(&self.output_names))?;
        for s in &self.samples {
            w.write_record(s.u.iter().chain(&s.x).map(|v| format!("{v:?}")))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn default_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Loads a header-prefixed CSV whose first `n_inputs` columns are commands.
pub fn load_csv(path: impl AsRef<Path>, n_inputs: usize) -> Result<Dataset> {
    let path = path.as_ref();
    if n_inputs == 0 {
        return Err(Error::InvalidParameter("n_inputs must be at least 1".into()));
    }
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let width = header.len();
    if width <= n_inputs {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            column: width,
            message: format!("header has {width} columns; need more than n_inputs = {n_inputs}"),
        });
    }
    let parse_err = |row: usize, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };

    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        if record.len() != width {
            return Err(parse_err(
                row,
                record.len().min(width) + 1,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        let mut values = Vec::with_capacity(width);
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(row, j + 1, format!("non-numeric value {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(row, j + 1, format!("non-finite value {cell:?}")));
            }
            values.push(v);
        }
        let x = values.split_off(n_inputs);
        samples.push(Sample::new(values, x));
    }
    if samples.is_empty() {
        return Err(Error::Data(format!("{} contains no data rows", path.display())));
    }
    let outputs = header[n_inputs..].to_vec();
    let mut inputs = header;
    inputs.truncate(n_inputs);
    Dataset::new(samples, inputs, outputs)
}

/// Partition fractions for [`split`], in (train, calibration, test, extrapolation) order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub calibration: f64,
    pub test: f64,
    pub extrapolation: f64,
}

impl SplitFractions {
    pub fn new(train: f64, calibration: f64, test: f64, extrapolation: f64) -> Self {
        Self {
            train,
            calibration,
            test,
            extrapolation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.calibration, self.test, self.extrapolation];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "split fractions must be nonnegative, got {parts:?}"
            )));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "split fractions must sum to 1, got {total}"
            )));
        }
        Ok(())
    }
}

/// The four disjoint parts of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub train: Dataset,
    pub calibration: Dataset,
    pub test: Dataset,
    pub extrapolation: Dataset,
}

/// Split role names, in bundle order. Also the CSV file stems on disk.
pub const SPLIT_NAMES: [&str; 4] = ["train", "calibration", "test", "extrapolation"];

impl SplitBundle {
    pub fn new(train: Dataset, calibration: Dataset, test: Dataset, extrapolation: Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        for part in [&calibration, &test, &extrapolation] {
            if !train.same_schema(part) {
                return Err(Error::Data("split parts disagree on column names".into()));
            }
        }
        Ok(Self {
            train,
            calibration,
            test,
            extrapolation,
        })
    }

    pub fn parts(&self) -> [(&'static str, &Dataset); 4] {
        [
            (SPLIT_NAMES[0], &self.train),
            (SPLIT_NAMES[1], &self.calibration),
            (SPLIT_NAMES[2], &self.test),
            (SPLIT_NAMES[3], &self.extrapolation),
        ]
    }

    pub fn get(&self, name: &str) -> Option<&Dataset> {
        self.parts().into_iter().find(|(n, _)| *n == name).map(|(_, d)| d)
    }

    /// Writes `<dir>/<split>.csv` for each part plus `<dir>/manifest.json`.
    pub fn write_dir(&self, dir: impl AsRef<Path>, manifest: &BundleManifest) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, part) in self.parts() {
            part.write_csv(dir.join(format!("{name}.csv")))?;
        }
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(manifest)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Reads a bundle previously written by [`SplitBundle::write_dir`].
    pub fn read_dir(dir: impl AsRef<Path>) -> Result<(Self, BundleManifest)> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: BundleManifest = serde_json::from_str(&text)?;
        let n_inputs = manifest.input_names.len();
        let load = |name: &str| -> Result<Dataset> {
            let p = dir.join(format!("{name}.csv"));
            if manifest.sizes.get(name).copied().unwrap_or(0) == 0 {
                return Dataset::new(Vec::new(), manifest.input_names.clone(), manifest.output_names.clone());
            }
            load_csv(p, n_inputs)
        };
        let bundle = SplitBundle::new(
            load("train")?,
            load("calibration")?,
            load("test")?,
            load("extrapolation")?,
        )?;
        Ok((bundle, manifest))
    }
}

/// Provenance record written next to a persisted bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub source: String,
    pub seed: u64,
    pub fractions: Option<SplitFractions>,
    pub shuffled: bool,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    pub sizes: std::collections::BTreeMap<String, usize>,
    pub files: Vec<PathBuf>,
}

impl BundleManifest {
    pub fn describe(bundle: &SplitBundle, source: &str, seed: u64, fractions: Option<SplitFractions>, shuffled: bool) -> Self {
        Self {
            source: source.to_string(),
            seed,
            fractions,
            shuffled,
            input_names: bundle.train.input_names.clone(),
            output_names: bundle.train.output_names.clone(),
            sizes: bundle.parts().iter().map(|(n, d)| (n.to_string(), d.len())).collect(),
            files: SPLIT_NAMES.iter().map(|n| PathBuf::from(format!("{n}.csv"))).collect(),
        }
    }
}

/// Part sizes for `n` samples: `floor(n * f)` for the non-training parts, the rest to train.
pub fn split_sizes(n: usize, fractions: &SplitFractions) -> Result<[usize; 4]> {
    fractions.validate()?;
    let floor = |f: f64| (n as f64 * f + 1e-9).floor() as usize;
    let cal = floor(fractions.calibration);
    let test = floor(fractions.test);
    let extrap = floor(fractions.extrapolation);
    let used = cal + test + extrap;
    if used >= n {
        return Err(Error::Data(format!(
            "dataset of {n} samples is too small for fractions {fractions:?}"
        )));
    }
    for (f, size, name) in [
        (fractions.calibration, cal, "calibration"),
        (fractions.test, test, "test"),
        (fractions.extrapolation, extrap, "extrapolation"),
    ] {
        if f > 0.0 && size == 0 {
            return Err(Error::Data(format!(
                "dataset of {n} samples is too small for a nonzero {name} part"
            )));
        }
    }
    Ok([n - used, cal, test, extrap])
}

/// Partitions `d` into train / calibration / test / extrapolation parts.
///
/// With `shuffled` the row order is permuted by a ChaCha8 generator seeded with
/// `seed` before cutting; otherwise parts are contiguous blocks in file order.
pub fn split(d: &Dataset, fractions: SplitFractions, seed: u64, shuffled: bool) -> Result<SplitBundle> {
    let sizes = split_sizes(d.len(), &fractions)?;
    let mut order: Vec<usize> = (0..d.len()).collect();
    if shuffled {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    let mut start = 0;
    let mut parts = sizes.iter().map(|&size| {
        let rows = &order[start..start + size];
        start += size;
        d.subset(rows)
    });
    let train = parts.next().unwrap();
    let calibration = parts.next().unwrap();
    let test = parts.next().unwrap();
    let extrapolation = parts.next().unwrap();
    SplitBundle::new(train, calibration, test, extrapolation)
}

/// Default location of a persisted bundle inside a run directory.
pub fn bundle_dir(out: &Path) -> PathBuf {
    out.join("data")
}
