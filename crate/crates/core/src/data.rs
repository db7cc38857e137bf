//! Datasets, annotator label matrices, CSV ingestion, standardization,
//! stratified splitting and point-level label masking.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Feature matrix (rows are points) with optional binary ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    ground_truth: Option<Vec<u8>>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, ground_truth: Option<Vec<u8>>) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::Empty(format!("dataset must be non-empty, got {n}x{d}")));
        }
        if let Some((idx, _)) = features.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature at row {}, column {}",
                idx / d + 1,
                idx % d + 1
            )));
        }
        if let Some(z) = &ground_truth {
            if z.len() != n {
                return Err(Error::dim(format!("{} labels for {n} points", z.len())));
            }
            if let Some(bad) = z.iter().find(|&&v| v > 1) {
                return Err(Error::invalid(format!("ground-truth label {bad} is not 0 or 1")));
            }
        }
        Ok(Self {
            features,
            ground_truth,
            feature_names: None,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_features() {
            return Err(Error::dim(format!(
                "{} feature names for {} features",
                names.len(),
                self.num_features()
            )));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn ground_truth(&self) -> Option<&[u8]> {
        self.ground_truth.as_deref()
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn num_points(&self) -> usize {
        self.features.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let features = self.features.select(Axis(0), indices);
        let ground_truth = self
            .ground_truth
            .as_ref()
            .map(|z| indices.iter().map(|&i| z[i]).collect());
        let mut out = Self::new(features, ground_truth)?;
        out.feature_names = self.feature_names.clone();
        Ok(out)
    }

    /// Writes the dataset as CSV with 17 significant digits; ground truth,
    /// if present, becomes the last column.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        if let Some(names) = &self.feature_names {
            let mut header = names.join(",");
            if self.ground_truth.is_some() {
                header.push_str(",label");
            }
            writeln!(out, "{header}").map_err(io)?;
        }
        for (i, row) in self.features.rows().into_iter().enumerate() {
            let mut line = row
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect::<Vec<_>>()
                .join(",");
            if let Some(z) = &self.ground_truth {
                line.push(',');
                line.push_str(&z[i].to_string());
            }
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Sparse annotator labels: for each point, the (annotator, label) pairs
/// that were observed, sorted by annotator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    num_annotators: usize,
    rows: Vec<Vec<(usize, u8)>>,
}

impl LabelMatrix {
    pub fn new(num_points: usize, num_annotators: usize) -> Self {
        Self {
            num_annotators,
            rows: vec![Vec::new(); num_points],
        }
    }

    /// Dense construction: `labels[i][t]` is annotator `t`'s label for point `i`.
    pub fn from_dense(labels: &[Vec<u8>]) -> Result<Self> {
        let t = labels.first().map_or(0, Vec::len);
        let mut m = Self::new(labels.len(), t);
        for (i, row) in labels.iter().enumerate() {
            if row.len() != t {
                return Err(Error::dim(format!("row {i} has {} labels, expected {t}", row.len())));
            }
            for (a, &y) in row.iter().enumerate() {
                m.insert(i, a, y)?;
            }
        }
        Ok(m)
    }

    pub fn insert(&mut self, point: usize, annotator: usize, label: u8) -> Result<()> {
        if label > 1 {
            return Err(Error::invalid(format!("label {label} is not 0 or 1")));
        }
        if point >= self.rows.len() {
            return Err(Error::dim(format!(
                "point {point} out of range for {} points",
                self.rows.len()
            )));
        }
        if annotator >= self.num_annotators {
            return Err(Error::dim(format!(
                "annotator {annotator} out of range for {} annotators",
                self.num_annotators
            )));
        }
        let row = &mut self.rows[point];
        match row.binary_search_by_key(&annotator, |&(a, _)| a) {
            Ok(pos) => row[pos].1 = label,
            Err(pos) => row.insert(pos, (annotator, label)),
        }
        Ok(())
    }

    pub fn get(&self, point: usize, annotator: usize) -> Option<u8> {
        let row = self.rows.get(point)?;
        row.binary_search_by_key(&annotator, |&(a, _)| a)
            .ok()
            .map(|pos| row[pos].1)
    }

    /// Observed `(annotator, label)` pairs for `point`; empty when unlabeled.
    pub fn labels_of(&self, point: usize) -> &[(usize, u8)] {
        &self.rows[point]
    }

    pub fn is_labeled(&self, point: usize) -> bool {
        !self.rows[point].is_empty()
    }

    pub fn num_points(&self) -> usize {
        self.rows.len()
    }

    pub fn num_annotators(&self) -> usize {
        self.num_annotators
    }

    pub fn num_labels(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn labeled_points(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.is_empty())
            .map(|(i, _)| i)
    }

    /// Rows `indices`, renumbered `0..indices.len()`.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            num_annotators: self.num_annotators,
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Appends `extra` points with no labels.
    pub fn with_unlabeled(&self, extra: usize) -> Self {
        let mut out = self.clone();
        out.rows.extend(std::iter::repeat_with(Vec::new).take(extra));
        out
    }

    /// Drops every label of `point`.
    pub fn clear_point(&mut self, point: usize) {
        self.rows[point].clear();
    }

    /// Reads `point,annotator,label` CSV. The annotator count is the
    /// largest index seen plus one unless given.
    pub fn read_csv(
        path: impl AsRef<Path>,
        num_points: usize,
        num_annotators: Option<usize>,
    ) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, num_points, num_annotators)
    }

    pub fn from_reader<R: Read>(
        reader: R,
        num_points: usize,
        num_annotators: Option<usize>,
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        let expected = ["point", "annotator", "label"];
        if header.len() != 3 || header.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::invalid(format!(
                "label file header must be `point,annotator,label`, got `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut triples = Vec::new();
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            let line = r + 2;
            if record.len() != 3 {
                return Err(Error::RaggedRow {
                    row: line,
                    found: record.len(),
                    expected: 3,
                });
            }
            let field = |c: usize| -> Result<usize> {
                record[c].parse::<usize>().map_err(|e| Error::Parse {
                    row: line,
                    column: c + 1,
                    value: record[c].to_string(),
                    reason: e.to_string(),
                })
            };
            let (i, t, y) = (field(0)?, field(1)?, field(2)?);
            if y > 1 {
                return Err(Error::Parse {
                    row: line,
                    column: 3,
                    value: record[2].to_string(),
                    reason: "label must be 0 or 1".into(),
                });
            }
            triples.push((i, t, y as u8));
        }
        let t = num_annotators
            .unwrap_or_else(|| triples.iter().map(|&(_, t, _)| t + 1).max().unwrap_or(0));
        let mut m = Self::new(num_points, t);
        for (i, a, y) in triples {
            m.insert(i, a, y)?;
        }
        Ok(m)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_writer(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn to_writer<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "point,annotator,label")?;
        for (i, row) in self.rows.iter().enumerate() {
            for &(t, y) in row {
                writeln!(out, "{i},{t},{y}")?;
            }
        }
        out.flush()
    }
}

/// Per-feature affine map fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingParams {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl ScalingParams {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            std: Array1::ones(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.dim() {
            return Err(Error::dim(format!(
                "data has {} features, scaling expects {}",
                features.ncols(),
                self.dim()
            )));
        }
        let mut out = features.clone();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn transform_dataset(&self, ds: &Dataset) -> Result<Dataset> {
        let mut out = Dataset::new(self.transform(ds.features())?, ds.ground_truth.clone())?;
        out.feature_names = ds.feature_names.clone();
        Ok(out)
    }
}

/// Loads a comma-separated dataset. `label_column` (0-based) is split off
/// into the ground truth and must hold 0/1 values.
pub fn load_csv(
    path: impl AsRef<Path>,
    has_header: bool,
    label_column: Option<usize>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, has_header, label_column)
}

pub fn read_csv<R: Read>(reader: R, has_header: bool, label_column: Option<usize>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Option<Vec<String>> = if has_header {
        Some(rdr.headers()?.iter().map(str::to_string).collect())
    } else {
        None
    };
    let first_line = if has_header { 2 } else { 1 };

    let mut width = header.as_ref().map(Vec::len);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let line = first_line + r;
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRow {
                row: line,
                found: record.len(),
                expected,
            });
        }
        if let Some(lc) = label_column {
            if lc >= expected {
                return Err(Error::invalid(format!(
                    "label column {lc} out of range for {expected} columns"
                )));
            }
        }
        for (c, cell) in record.iter().enumerate() {
            let parsed = cell.parse::<f64>().map_err(|e| Error::Parse {
                row: line,
                column: c + 1,
                value: cell.to_string(),
                reason: e.to_string(),
            })?;
            if !parsed.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    column: c + 1,
                    value: cell.to_string(),
                    reason: "value is not finite".into(),
                });
            }
            if Some(c) == label_column {
                let y = match parsed {
                    0.0 => 0,
                    1.0 => 1,
                    _ => {
                        return Err(Error::Parse {
                            row: line,
                            column: c + 1,
                            value: cell.to_string(),
                            reason: "label must be 0 or 1".into(),
                        })
                    }
                };
                labels.push(y);
            } else {
                values.push(parsed);
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("no data rows".into()));
    }
    let width = width.unwrap_or(0);
    let d = width - usize::from(label_column.is_some());
    let features = Array2::from_shape_vec((n, d), values)
        .map_err(|e| Error::dim(e.to_string()))?;
    let ds = Dataset::new(features, label_column.map(|_| labels))?;
    match header {
        Some(mut names) => {
            if let Some(lc) = label_column {
                names.remove(lc);
            }
            ds.with_feature_names(names)
        }
        None => Ok(ds),
    }
}

/// Centers each column and divides by its population standard deviation.
/// Zero-variance columns map to zero and store a deviation of 1.
pub fn standardize(train: &Dataset) -> (Dataset, ScalingParams) {
    let x = train.features();
    let n = x.nrows() as f64;
    let mut mean = x.sum_axis(Axis(0)) / n;
    let mut std = Array1::ones(x.ncols());
    for (j, col) in x.columns().into_iter().enumerate() {
        if col.iter().all(|&v| v == col[0]) {
            // Exact value so this column maps to exactly zero, here and later.
            mean[j] = col[0];
            continue;
        }
        let var = col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n;
        std[j] = var.sqrt();
    }
    let params = ScalingParams { mean, std };
    let scaled = params.transform(x).expect("dimensions agree");
    let mut out = Dataset::new(scaled, train.ground_truth.clone()).expect("finite input");
    out.feature_names = train.feature_names.clone();
    (out, params)
}

/// `k` stratified folds over the dataset's ground truth.
pub fn stratified_kfold(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let truth = ds
        .ground_truth()
        .ok_or_else(|| Error::invalid("stratified folds need ground-truth labels"))?;
    stratified_kfold_by(truth, k, seed)
}

/// `k` folds of `0..strata.len()` with per-fold class counts within one of
/// the global share. Returns `(train, test)` index lists, each sorted.
pub fn stratified_kfold_by(strata: &[u8], k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; strata.len()];
    let mut next = 0usize;
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..strata.len()).filter(|&i| strata[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::invalid(format!(
                "class {class} has {} members, fewer than {k} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for i in members {
            fold_of[i] = next % k;
            next += 1;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..strata.len()).partition(|&i| fold_of[i] == f);
            (train, test)
        })
        .collect())
}

/// Keeps all labels on exactly `round(proportion * N)` points chosen
/// stratified by `strata`, and strips every label from the rest.
pub fn mask_labels(labels: &LabelMatrix, proportion: f64, seed: u64, strata: &[u8]) -> Result<LabelMatrix> {
    if !(proportion > 0.0 && proportion <= 1.0) {
        return Err(Error::invalid(format!("proportion {proportion} outside (0, 1]")));
    }
    let n = labels.num_points();
    if strata.len() != n {
        return Err(Error::dim(format!("{} strata for {n} points", strata.len())));
    }
    if proportion == 1.0 {
        return Ok(labels.clone());
    }
    let keep = (proportion * n as f64).round() as usize;
    let classes: [Vec<usize>; 2] = [0u8, 1].map(|c| (0..n).filter(|&i| strata[i] == c).collect());

    // Largest-remainder apportionment of `keep` across classes.
    let quota: Vec<f64> = classes
        .iter()
        .map(|m| keep as f64 * m.len() as f64 / n as f64)
        .collect();
    let mut take: Vec<usize> = quota.iter().map(|q| q.floor() as usize).collect();
    let mut rest = keep - take.iter().sum::<usize>();
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| {
        let fa = quota[a] - quota[a].floor();
        let fb = quota[b] - quota[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for c in order {
        if rest > 0 && take[c] < classes[c].len() {
            take[c] += 1;
            rest -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut retained = vec![false; n];
    for (c, members) in classes.into_iter().enumerate() {
        let mut members = members;
        members.shuffle(&mut rng);
        for &i in members.iter().take(take[c]) {
            retained[i] = true;
        }
    }
    let mut out = labels.clone();
    for (i, keep_it) in retained.into_iter().enumerate() {
        if !keep_it {
            out.clear_point(i);
        }
    }
    Ok(out)
}
