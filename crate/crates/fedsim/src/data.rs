//! Dataset ingestion, preprocessing, and client partitioning.
//!
//! Handles whitespace-separated sensor logs (one file per subject, last
//! column an integer activity label), synthetic Gaussian-blob datasets,
//! z-scoring, stratified train/test splitting, and IID partitioning of
//! training rows across simulated clients.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// A labelled feature matrix. Rows are samples, labels are class indices
/// in `[0, class_count)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub class_count: usize,
    pub feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Vec<usize>, class_count: usize) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if x.nrows() != y.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows vs {} labels",
                x.nrows(),
                y.len()
            )));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidLabel {
                label: bad,
                classes: class_count,
            });
        }
        Ok(Dataset {
            x,
            y,
            class_count,
            feature_names: None,
        })
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn features(&self) -> usize {
        self.x.ncols()
    }

    /// Copy out the rows at `indices`, keeping class metadata.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let x = self.x.select(Axis(0), indices);
        let y = indices.iter().map(|&i| self.y[i]).collect();
        let mut d = Dataset::new(x, y, self.class_count)?;
        d.feature_names = self.feature_names.clone();
        Ok(d)
    }
}

/// One simulated client's private shard of the training data.
#[derive(Debug, Clone)]
pub struct ClientDataset {
    pub client_id: usize,
    pub data: Dataset,
}

/// Per-column mean and standard deviation fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationParams {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

/// Standard deviations are floored here so constant columns stay finite.
pub const STD_FLOOR: f64 = 1e-8;

/// Fit per-column mean and population standard deviation.
pub fn standardize_fit(train: &Dataset) -> StandardizationParams {
    let m = train.rows() as f64;
    let mean = train.x.sum_axis(Axis(0)) / m;
    let mut var = Array1::<f64>::zeros(train.features());
    for row in train.x.rows() {
        for (v, (&x, &mu)) in var.iter_mut().zip(row.iter().zip(mean.iter())) {
            let d = x - mu;
            *v += d * d;
        }
    }
    let std = var.mapv(|v| (v / m).sqrt().max(STD_FLOOR));
    StandardizationParams { mean, std }
}

/// Apply `x <- (x - mean) / std` column-wise.
pub fn standardize_apply(params: &StandardizationParams, data: &Dataset) -> Result<Dataset> {
    if params.mean.len() != data.features() {
        return Err(Error::ShapeMismatch(format!(
            "params for {} features applied to {}",
            params.mean.len(),
            data.features()
        )));
    }
    let mut x = data.x.clone();
    for mut row in x.rows_mut() {
        for (v, (&mu, &sd)) in row.iter_mut().zip(params.mean.iter().zip(params.std.iter())) {
            *v = (*v - mu) / sd;
        }
    }
    let mut out = Dataset::new(x, data.y.clone(), data.class_count)?;
    out.feature_names = data.feature_names.clone();
    Ok(out)
}

/// Stratified train/test split.
///
/// Each class's rows are shuffled by `seed` and split so the per-class test
/// share is within one row of `test_fraction`; together the two parts are
/// exactly the original rows.
pub fn split_train_test(
    d: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.class_count];
    for (i, &label) in d.y.iter().enumerate() {
        by_class[label].push(i);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (class, indices) in by_class.iter_mut().enumerate() {
        if indices.len() < 2 && !indices.is_empty() {
            return Err(Error::Stratification(format!(
                "class {class} has only {} row(s)",
                indices.len()
            )));
        }
        indices.shuffle(&mut rng);
        let n_test = (indices.len() as f64 * test_fraction).round() as usize;
        test_idx.extend_from_slice(&indices[..n_test]);
        train_idx.extend_from_slice(&indices[n_test..]);
    }
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Stratification(
            "split produced an empty train or test part".into(),
        ));
    }
    Ok((d.subset(&train_idx)?, d.subset(&test_idx)?))
}

/// Deal training rows into `t` IID shards of near-equal size.
///
/// Rows are shuffled by `seed`, then client `i` receives the `i`-th chunk;
/// the first `m mod t` clients get one extra row.
pub fn partition_clients(train: &Dataset, t: usize, seed: u64) -> Result<Vec<ClientDataset>> {
    if t == 0 {
        return Err(Error::InvalidInput("client count must be at least 1".into()));
    }
    let m = train.rows();
    if t > m {
        return Err(Error::TooManyClients { clients: t, rows: m });
    }
    let mut indices: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);

    let base = m / t;
    let extra = m % t;
    let mut clients = Vec::with_capacity(t);
    let mut offset = 0;
    for client_id in 0..t {
        let size = base + usize::from(client_id < extra);
        let shard = &indices[offset..offset + size];
        offset += size;
        clients.push(ClientDataset {
            client_id,
            data: train.subset(shard)?,
        });
    }
    Ok(clients)
}

/// Centers for `classes` Gaussian blobs with pairwise distance >= `separation`.
///
/// When the classes fit (classes - 1 <= dims) the centers are the vertices
/// of a regular simplex with edge length exactly `separation`, built from
/// the Helmert basis. Otherwise centers sit on a base-B integer lattice
/// scaled by `separation`, which keeps every pair at least `separation`
/// apart.
fn blob_centers(classes: usize, dims: usize, separation: f64) -> Vec<Vec<f64>> {
    let mut centers = vec![vec![0.0; dims]; classes];
    if classes <= 1 {
        return centers;
    }
    if classes - 1 <= dims {
        // Vertex i of the unit simplex is e_i expressed in the Helmert basis
        // h_k = (1,...,1,-k,0,...)/sqrt(k(k+1)); edges come out at sqrt(2).
        let scale = separation / std::f64::consts::SQRT_2;
        for (i, center) in centers.iter_mut().enumerate() {
            for k in 1..classes {
                let norm = (k as f64 * (k + 1) as f64).sqrt();
                let h = if i < k {
                    1.0 / norm
                } else if i == k {
                    -(k as f64) / norm
                } else {
                    0.0
                };
                center[k - 1] = h * scale;
            }
        }
    } else {
        let mut base = 2usize;
        while base.pow(dims as u32) < classes {
            base += 1;
        }
        for (i, center) in centers.iter_mut().enumerate() {
            let mut rem = i;
            for coord in center.iter_mut().take(dims) {
                *coord = (rem % base) as f64 * separation;
                rem /= base;
            }
        }
    }
    centers
}

/// Generate balanced Gaussian blobs with unit covariance.
pub fn make_synthetic(
    m: usize,
    n: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidInput("m and n must be positive".into()));
    }
    if classes < 2 {
        return Err(Error::InvalidInput("need at least 2 classes".into()));
    }
    let centers = blob_centers(classes, n, separation);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut x = Array2::<f64>::zeros((m, n));
    let mut y = Vec::with_capacity(m);
    for (k, mut row) in x.rows_mut().into_iter().enumerate() {
        let class = k % classes;
        for (j, v) in row.iter_mut().enumerate() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *v = centers[class][j] + noise;
        }
        y.push(class);
    }
    Dataset::new(x, y, classes)
}

fn parse_label(token: &str) -> Option<usize> {
    if let Ok(v) = token.parse::<i64>() {
        return usize::try_from(v).ok();
    }
    // Accept floats that are exact non-negative integers, e.g. "3.0".
    let f = token.parse::<f64>().ok()?;
    if f.is_finite() && f >= 0.0 && f.fract() == 0.0 && f <= u32::MAX as f64 {
        Some(f as usize)
    } else {
        None
    }
}

/// Load whitespace-separated sensor logs.
///
/// Every row is real-valued feature columns followed by one integer
/// activity label. Rows from all files are concatenated. Label 0 marks
/// gaps between activities; those rows are dropped unless `keep_null` is
/// set, in which case they become the last class. Remaining labels are
/// remapped to `[0, C)` preserving ascending order.
pub fn load_mhealth(paths: &[impl AsRef<Path>], keep_null: bool) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::InvalidInput("no input files".into()));
    }
    let mut features: Vec<f64> = Vec::new();
    let mut raw_labels: Vec<usize> = Vec::new();
    let mut n_cols: Option<usize> = None;

    for path in paths {
        let path = path.as_ref();
        let display = path.display().to_string();
        let content =
            std::fs::read_to_string(path).map_err(|e| Error::io(display.clone(), e))?;
        for (line_no, line) in content.lines().enumerate() {
            let line_no = line_no + 1;
            if line.trim().is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match n_cols {
                None => {
                    if tokens.len() < 2 {
                        return Err(Error::Format {
                            file: display.clone(),
                            line: line_no,
                            msg: format!(
                                "need at least one feature and a label, got {} column(s)",
                                tokens.len()
                            ),
                        });
                    }
                    n_cols = Some(tokens.len());
                }
                Some(expect) if tokens.len() != expect => {
                    return Err(Error::Format {
                        file: display.clone(),
                        line: line_no,
                        msg: format!("expected {expect} columns, got {}", tokens.len()),
                    });
                }
                _ => {}
            }
            let label_token = tokens.last().expect("checked non-empty");
            let label = parse_label(label_token).ok_or_else(|| Error::Parse {
                file: display.clone(),
                line: line_no,
                msg: format!("bad label {label_token:?}"),
            })?;
            if label == 0 && !keep_null {
                continue;
            }
            for token in &tokens[..tokens.len() - 1] {
                let v: f64 = token.parse().map_err(|_| Error::Parse {
                    file: display.clone(),
                    line: line_no,
                    msg: format!("bad feature value {token:?}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        file: display.clone(),
                        line: line_no,
                        msg: format!("non-finite feature value {token:?}"),
                    });
                }
                features.push(v);
            }
            raw_labels.push(label);
        }
    }

    if raw_labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = n_cols.expect("rows parsed") - 1;

    let mut distinct: Vec<usize> = raw_labels
        .iter()
        .copied()
        .filter(|&l| l != 0)
        .collect();
    distinct.sort_unstable();
    distinct.dedup();
    let has_null = raw_labels.iter().any(|&l| l == 0);
    let class_count = distinct.len() + usize::from(keep_null && has_null);
    let remap = |label: usize| -> usize {
        if label == 0 {
            // keep_null: nulls become the last class.
            class_count - 1
        } else {
            distinct.binary_search(&label).expect("label seen in scan")
        }
    };
    let y: Vec<usize> = raw_labels.iter().map(|&l| remap(l)).collect();
    let x = Array2::from_shape_vec((y.len(), n), features)
        .expect("column count validated per line");
    Dataset::new(x, y, class_count)
}

/// Write a dataset in the same whitespace-separated format `load_mhealth`
/// reads. Labels are shifted up by one so class 0 is not mistaken for the
/// null label on reload.
pub fn dump_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (row, &label) in data.x.rows().into_iter().zip(&data.y) {
        for v in row.iter() {
            write!(out, "{v}\t").expect("string write");
        }
        writeln!(out, "{}", label + 1).expect("string write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}
