//! Datasets and candidate-pool sampling.
//!
//! IDX files are big-endian: a magic word (`0x00000803` for `u8` image
//! tensors with three dimension words, `0x00000801` for `u8` label vectors
//! with one), the dimension words, then the raw bytes. CSV files are UTF-8,
//! comma separated, no header, one sample per line with the integer label
//! first.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Stream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, n_classes: usize, split: Split) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::Empty("dataset has no samples"));
        }
        if labels.len() != features.rows() {
            return Err(Error::shape(
                "Dataset::new",
                format!("{} labels for {} rows", labels.len(), features.rows()),
            ));
        }
        if n_classes < 2 {
            return Err(Error::config("classes", "need at least 2 classes"));
        }
        crate::model::check_labels(&labels, n_classes)?;
        if !features.is_finite() {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Dataset {
            features,
            labels,
            n_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        (
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Unit vector for each class mean. Class `c` uses the basis vector `e_c`
/// when there are at least as many dimensions as classes; otherwise the
/// directions are normalized Gaussian draws from a fixed stream (seed
/// `0x6d6d73`), independent of the run seed.
pub fn class_directions(n_classes: usize, dim: usize) -> Matrix {
    if n_classes <= dim {
        return Matrix::from_fn(n_classes, dim, |c, j| if c == j { 1.0 } else { 0.0 });
    }
    let mut s = Stream::new(0x6d6d73);
    let mut m = Matrix::from_fn(n_classes, dim, |_, _| s.gaussian());
    for c in 0..n_classes {
        let norm = crate::numerics::l2_norm(m.row(c));
        m.row_mut(c).iter_mut().for_each(|v| *v /= norm);
    }
    m
}

/// Balanced isotropic Gaussian mixture: row `r` belongs to class
/// `r % n_classes` and equals `separation * direction[class] + N(0, I)`.
pub fn gen_gaussian_mixture(
    n_classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    split: Split,
    stream: &mut Stream,
) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(Error::config("classes", "need at least 2 classes"));
    }
    if dim == 0 {
        return Err(Error::config("dim", "dimension must be positive"));
    }
    if per_class == 0 {
        return Err(Error::config("per_class", "need at least one sample per class"));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::config("separation", "must be finite and non-negative"));
    }
    let means = class_directions(n_classes, dim);
    let rows = n_classes * per_class;
    let labels: Vec<usize> = (0..rows).map(|r| r % n_classes).collect();
    let features = Matrix::from_fn(rows, dim, |r, j| {
        separation * means[(labels[r], j)] + stream.gaussian()
    });
    Dataset::new(features, labels, n_classes, split)
}

/// Per-feature affine map to zero mean and unit variance, fitted on one
/// split and applied to others. Constant features are only centered.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &Matrix) -> Self {
        let n = features.rows() as f64;
        let d = features.cols();
        let mut mean = vec![0.0; d];
        for row in features.row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in features.row_iter() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, ds: &mut Dataset) -> Result<()> {
        if ds.input_dim() != self.mean.len() {
            return Err(Error::shape(
                "Standardizer::apply",
                format!(
                    "fitted on {} features, dataset has {}",
                    self.mean.len(),
                    ds.input_dim()
                ),
            ));
        }
        for i in 0..ds.features.rows() {
            for ((v, m), s) in ds.features.row_mut(i).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::IdxTruncated {
            path: path.to_path_buf(),
            detail: format!("header ends before byte {}", offset + 4),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = read_be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::IdxMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    bytes
        .get(header..header + len)
        .ok_or_else(|| Error::IdxTruncated {
            path: path.to_path_buf(),
            detail: format!(
                "expected {len} payload bytes, found {}",
                bytes.len().saturating_sub(header)
            ),
        })
}

/// Parses an IDX image file into `count × (rows·cols)` pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Matrix> {
    check_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let count = read_be_u32(bytes, 4, path)? as usize;
    let rows = read_be_u32(bytes, 8, path)? as usize;
    let cols = read_be_u32(bytes, 12, path)? as usize;
    let width = rows * cols;
    let pixels = payload(bytes, 16, count * width, path)?;
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Matrix::from_vec(count, width, data)
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let count = read_be_u32(bytes, 4, path)? as usize;
    Ok(payload(bytes, 8, count, path)?
        .iter()
        .map(|&l| l as usize)
        .collect())
}

/// Loads an image/label IDX pair. The class count is the largest label + 1
/// (at least 2).
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let features = parse_idx_images(&images, images_path)?;
    let labels = parse_idx_labels(&labels, labels_path)?;
    if features.rows() != labels.len() {
        return Err(Error::IdxCountMismatch {
            images: features.rows(),
            labels: labels.len(),
        });
    }
    let n_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(features, labels, n_classes, split)
}

/// Encodes `count` images of `rows × cols` bytes as an IDX image file.
pub fn encode_idx_images(pixels: &[u8], count: usize, rows: usize, cols: usize) -> Vec<u8> {
    assert_eq!(pixels.len(), count * rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for word in [IDX_IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn parse_csv(text: &str, n_classes: usize, split: Split, path: &Path) -> Result<Dataset> {
    let bad = |line: usize, reason: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut width: Option<usize> = None;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let label_field = fields.next().unwrap_or_default();
        let label: usize = label_field.parse().map_err(|_| {
            bad(
                line_no,
                format!("label {label_field:?} is not a non-negative integer"),
            )
        })?;
        if label >= n_classes {
            return Err(bad(
                line_no,
                format!("label {label} out of range for {n_classes} classes"),
            ));
        }
        let start = data.len();
        for field in fields {
            let v: f64 = field
                .parse()
                .map_err(|_| bad(line_no, format!("field {field:?} is not numeric")))?;
            if !v.is_finite() {
                return Err(bad(line_no, format!("field {field:?} is not finite")));
            }
            data.push(v);
        }
        let row_width = data.len() - start;
        match width {
            None if row_width == 0 => return Err(bad(line_no, "row has no features".into())),
            None => width = Some(row_width),
            Some(w) if w != row_width => {
                return Err(bad(line_no, format!("{row_width} features, expected {w}")))
            }
            Some(_) => {}
        }
        labels.push(label);
    }
    let width = width.ok_or_else(|| bad(0, "file contains no rows".into()))?;
    let features = Matrix::from_vec(labels.len(), width, data)?;
    Dataset::new(features, labels, n_classes, split)
}

pub fn load_csv(path: &Path, n_classes: usize, split: Split) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, n_classes, split, path)
}

/// Writes `ds` in the CSV layout; values use Rust's shortest round-trip form.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (row, label) in ds.features.row_iter().zip(&ds.labels) {
        out.push_str(&label.to_string());
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Splits off the last `fraction` of a shuffled copy as a test split.
pub fn holdout_split(ds: &Dataset, fraction: f64, stream: &mut Stream) -> Result<(Dataset, Dataset)> {
    let n = ds.len();
    let n_test = ((n as f64) * fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::config(
            "holdout",
            format!("cannot hold out {fraction} of {n} samples"),
        ));
    }
    let order = stream.permutation(n);
    let (train_idx, test_idx) = order.split_at(n - n_test);
    let (xtr, ytr) = ds.subset(train_idx);
    let (xte, yte) = ds.subset(test_idx);
    Ok((
        Dataset::new(xtr, ytr, ds.n_classes, Split::Train)?,
        Dataset::new(xte, yte, ds.n_classes, Split::Test)?,
    ))
}

/// How the per-step candidate pool is drawn from the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolPolicy {
    /// A fresh uniform draw without replacement at every step.
    #[default]
    Fresh,
    /// Walk a shuffled permutation in consecutive chunks of `pool_size`,
    /// reshuffling when fewer than `pool_size` samples remain.
    EpochSequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub pool_size: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub policy: PoolPolicy,
}

impl PoolSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("b", "batch size must be at least 1"));
        }
        if self.pool_size < self.batch_size {
            return Err(Error::config("pool", "pool must be >= batch"));
        }
        Ok(())
    }
}

/// One fresh pool: `pool_size` distinct training indices in draw order.
pub fn draw_pool(num_samples: usize, spec: &PoolSpec, stream: &mut Stream) -> Result<Vec<usize>> {
    spec.validate()?;
    if spec.pool_size > num_samples {
        return Err(Error::config(
            "pool",
            format!(
                "pool of {} exceeds the {num_samples} training samples",
                spec.pool_size
            ),
        ));
    }
    Ok(stream.sample_indices(num_samples, spec.pool_size))
}

/// Stateful pool source implementing either [`PoolPolicy`].
#[derive(Debug, Clone)]
pub struct PoolSampler {
    spec: PoolSpec,
    num_samples: usize,
    stream: Stream,
    order: Vec<usize>,
    cursor: usize,
}

impl PoolSampler {
    pub fn new(num_samples: usize, spec: PoolSpec, stream: Stream) -> Result<Self> {
        spec.validate()?;
        if spec.pool_size > num_samples {
            return Err(Error::config(
                "pool",
                format!(
                    "pool of {} exceeds the {num_samples} training samples",
                    spec.pool_size
                ),
            ));
        }
        Ok(PoolSampler {
            spec,
            num_samples,
            stream,
            order: Vec::new(),
            cursor: 0,
        })
    }

    pub fn next_pool(&mut self) -> Result<Vec<usize>> {
        match self.spec.policy {
            PoolPolicy::Fresh => draw_pool(self.num_samples, &self.spec, &mut self.stream),
            PoolPolicy::EpochSequential => {
                if self.order.is_empty() || self.cursor + self.spec.pool_size > self.order.len() {
                    self.order = self.stream.permutation(self.num_samples);
                    self.cursor = 0;
                }
                let pool = self.order[self.cursor..self.cursor + self.spec.pool_size].to_vec();
                self.cursor += self.spec.pool_size;
                Ok(pool)
            }
        }
    }
}
