//! Sparse binary-classification datasets.
//!
//! Input is the LIBSVM text format, one sample per line:
//!
//! ```text
//! +1 1:0.5 3:2.0
//! -1 2:1.0
//! ```
//!
//! Feature ids are 1-based in text and stored 0-based in memory. Labels are
//! normalized to {-1, +1}: {-1, +1} is kept as is, {0, 1} maps 0 to -1 and
//! {1, 2} maps 1 to -1.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// One sample's features: strictly increasing 0-based indices with values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRow {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseRow {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(indices.len(), values.len());
        Self { indices, values }
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .unzip();
        Self { indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&j, &v)| v * dense[j])
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// dense += alpha * row
    pub fn add_scaled_to(&self, alpha: f64, dense: &mut [f64]) {
        for (&j, &v) in self.indices.iter().zip(&self.values) {
            dense[j] += alpha * v;
        }
    }

    pub fn to_dense(&self, n_features: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_features];
        self.add_scaled_to(1.0, &mut out);
        out
    }
}

/// Immutable row-sparse feature matrix with labels in {-1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDataset {
    rows: Vec<SparseRow>,
    labels: Vec<f64>,
    n_features: usize,
}

impl SparseDataset {
    /// Builds a dataset, checking every invariant.
    pub fn new(rows: Vec<SparseRow>, labels: Vec<f64>, n_features: usize) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if rows.len() != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        if n_features == 0 {
            return Err(Error::InvalidDataset("n_features must be positive".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.indices.len() != row.values.len() {
                return Err(Error::InvalidDataset(format!("row {i}: ragged row")));
            }
            if row.indices.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidDataset(format!(
                    "row {i}: indices not strictly increasing"
                )));
            }
            if let Some(&last) = row.indices.last() {
                if last >= n_features {
                    return Err(Error::InvalidDataset(format!(
                        "row {i}: feature {} exceeds n_features {n_features}",
                        last + 1
                    )));
                }
            }
            if row.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!("row {i}: non-finite value")));
            }
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidDataset(format!("label {bad} not in {{-1, +1}}")));
        }
        Ok(Self {
            rows,
            labels,
            n_features,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &SparseRow {
        &self.rows[i]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(SparseRow::nnz).sum()
    }

    /// Widens the feature space, e.g. to align a test split with its
    /// training split. Shrinking is rejected.
    pub fn with_n_features(mut self, n_features: usize) -> Result<Self> {
        if n_features < self.n_features {
            return Err(Error::InvalidArgument(format!(
                "cannot shrink n_features from {} to {n_features}",
                self.n_features
            )));
        }
        self.n_features = n_features;
        Ok(self)
    }

    /// Fraction of samples whose predicted sign matches the label.
    pub fn accuracy(&self, x: &[f64]) -> f64 {
        let correct = self
            .rows
            .iter()
            .zip(&self.labels)
            .filter(|(row, &y)| row.dot(x) * y > 0.0)
            .count();
        correct as f64 / self.n_samples() as f64
    }
}

/// Parses LIBSVM text. `n_features` may widen the feature count beyond the
/// largest index present.
pub fn parse_libsvm<R: BufRead>(reader: R, n_features: Option<usize>) -> Result<SparseDataset> {
    let mut raw_labels = Vec::new();
    let mut rows = Vec::new();
    let mut max_index = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let content = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let mut tokens = content.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue;
        };
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad label {label_tok:?}"),
        })?;
        if !label.is_finite() {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("non-finite label {label_tok:?}"),
            });
        }

        let mut indices = Vec::new();
        let mut values = Vec::new();
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("expected <index>:<value>, got {tok:?}"),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad feature index in {tok:?}"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "feature indices are 1-based".into(),
                });
            }
            let val: f64 = val.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad feature value in {tok:?}"),
            })?;
            if !val.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("non-finite feature value in {tok:?}"),
                });
            }
            let zero_based = idx - 1;
            if let Some(&prev) = indices.last() {
                if zero_based <= prev {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("feature index {idx} not strictly increasing"),
                    });
                }
            }
            max_index = max_index.max(idx);
            indices.push(zero_based);
            values.push(val);
        }
        raw_labels.push((lineno, label));
        rows.push(SparseRow::new(indices, values));
    }

    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let labels = normalize_labels(&raw_labels)?;
    let n_features = match n_features {
        Some(n) if n < max_index => {
            return Err(Error::InvalidArgument(format!(
                "n_features override {n} is below the largest index {max_index}"
            )))
        }
        Some(n) => n,
        None => max_index.max(1),
    };
    SparseDataset::new(rows, labels, n_features)
}

fn normalize_labels(raw: &[(usize, f64)]) -> Result<Vec<f64>> {
    let within = |allowed: &[f64]| raw.iter().all(|(_, y)| allowed.contains(y));
    let (neg, pos) = if within(&[-1.0, 1.0]) {
        (-1.0, 1.0)
    } else if within(&[0.0, 1.0]) {
        (0.0, 1.0)
    } else if within(&[1.0, 2.0]) {
        (1.0, 2.0)
    } else {
        let (line, y) = raw
            .iter()
            .find(|(_, y)| ![-1.0, 0.0, 1.0, 2.0].contains(y))
            .copied()
            .unwrap_or(raw[0]);
        return Err(Error::Parse {
            line,
            msg: format!("unsupported label {y}; expected a binary {{-1,1}}, {{0,1}} or {{1,2}} labelling"),
        });
    };
    Ok(raw
        .iter()
        .map(|&(_, y)| if y == neg { -1.0 } else { debug_assert_eq!(y, pos); 1.0 })
        .collect())
}

/// Writes `data` as LIBSVM text. Values use Rust's shortest round-trip
/// formatting so that re-parsing reproduces the dataset exactly.
pub fn write_libsvm<W: Write>(data: &SparseDataset, mut out: W) -> Result<()> {
    for (row, &y) in data.rows.iter().zip(&data.labels) {
        out.write_all(if y > 0.0 { b"+1" } else { b"-1" })?;
        for (&j, &v) in row.indices.iter().zip(&row.values) {
            write!(out, " {}:{}", j + 1, v)?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Dense synthetic problem with a planted linear model.
///
/// Features are i.i.d. standard normal; with `w` a random unit vector, each
/// label is +1 with probability `sigmoid(separation * w.z)`. Larger
/// `separation` gives cleaner classes. If a draw happens to contain a single
/// class, the sample with the weakest margin is flipped.
pub fn synthetic_logistic(
    n_samples: usize,
    n_features: usize,
    separation: f64,
    seed: u64,
) -> Result<SparseDataset> {
    if n_samples < 2 || n_features < 1 {
        return Err(Error::InvalidArgument(format!(
            "synthetic problem needs n_samples >= 2 and n_features >= 1, got {n_samples}x{n_features}"
        )));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "separation must be finite and non-negative, got {separation}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut w: Vec<f64> = (0..n_features).map(|_| rng.sample(StandardNormal)).collect();
    let w_norm = crate::vecops::norm(&w);
    if w_norm > 0.0 {
        w.iter_mut().for_each(|v| *v /= w_norm);
    }

    let mut rows = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    let mut margins = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let z: Vec<f64> = (0..n_features).map(|_| rng.sample(StandardNormal)).collect();
        let margin = separation * crate::vecops::dot(&w, &z);
        let u: f64 = rng.random();
        let y = if u < crate::model::sigmoid(margin) { 1.0 } else { -1.0 };
        rows.push(SparseRow::from_dense(&z));
        labels.push(y);
        margins.push(margin);
    }

    let n_pos = labels.iter().filter(|&&y| y > 0.0).count();
    if n_pos == 0 || n_pos == n_samples {
        // flip the sample most inclined towards the missing class
        let target = if n_pos == 0 { 1.0 } else { -1.0 };
        let pick = (0..n_samples)
            .max_by(|&a, &b| (target * margins[a]).total_cmp(&(target * margins[b])))
            .expect("n_samples >= 2");
        labels[pick] = target;
    }

    SparseDataset::new(rows, labels, n_features)
}
