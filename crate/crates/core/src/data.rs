//! Datasets: IDX ingestion, subsampling, batching and synthetic generators.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{ParamVector, SymMatrix};
use crate::random::{gaussian, random_orthonormal, seeded, unit_vector, SeededRng};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Environment variable naming the dataset root.
pub const DATA_DIR_ENV: &str = "SPECTRAL_DAMP_DATA_DIR";

/// Row-major `N x d_x` inputs with integer labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    inputs: Vec<f64>,
    labels: Vec<usize>,
    input_dim: usize,
    classes: usize,
    image_shape: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<f64>,
        labels: Vec<usize>,
        input_dim: usize,
        classes: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("dataset has no samples"));
        }
        if input_dim == 0 || inputs.len() != labels.len() * input_dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * input_dim,
                got: inputs.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!(
                "label {bad} outside [0, {classes})"
            )));
        }
        if inputs.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("dataset inputs".into()));
        }
        Ok(Dataset {
            name: name.into(),
            inputs,
            labels,
            input_dim,
            classes,
            image_shape: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
        }
        Dataset {
            name: self.name.clone(),
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            input_dim: self.input_dim,
            classes: self.classes,
            image_shape: self.image_shape,
        }
    }

    /// Serializes back to the IDX image and label payloads. Pixels are
    /// rescaled by 255 and rounded, so a dataset read by [`load_idx`]
    /// reproduces its source bytes exactly.
    pub fn to_idx_bytes(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let (rows, cols) = self
            .image_shape
            .ok_or_else(|| Error::invalid("dataset has no image shape"))?;
        let pixels: Vec<u8> = self
            .inputs
            .iter()
            .map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let labels: Vec<u8> = self.labels.iter().map(|&l| l as u8).collect();
        Ok((
            encode_idx_images(rows, cols, &pixels),
            encode_idx_labels(&labels),
        ))
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx("header truncated".into()))
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Idx(format!("bad image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let payload = &bytes[16..];
    let want = n * rows * cols;
    if payload.len() != want {
        return Err(Error::Idx(format!(
            "image payload has {} bytes, header promises {want}",
            payload.len()
        )));
    }
    Ok((n, rows, cols, payload))
}

/// Parses an IDX label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Idx(format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(Error::Idx(format!(
            "label payload has {} bytes, header promises {n}",
            payload.len()
        )));
    }
    Ok(payload)
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols).max(1);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
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

/// Builds a dataset from in-memory IDX payloads.
pub fn dataset_from_idx(name: &str, images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != n {
        return Err(Error::Idx(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    let classes = labels
        .iter()
        .map(|&l| l as usize + 1)
        .max()
        .unwrap_or(0)
        .max(10);
    let inputs = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels = labels.iter().map(|&l| l as usize).collect();
    let mut ds = Dataset::new(name, inputs, labels, rows * cols, classes)?;
    ds.image_shape = Some((rows, cols));
    Ok(ds)
}

/// Reads an IDX image/label file pair.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let name = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    dataset_from_idx(&name, &images, &labels)
}

/// Uniform subset of `n` rows without replacement, returned in ascending
/// index order. Logs the class counts and warns about absent classes.
pub fn subsample(d: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > d.len() {
        return Err(Error::invalid(format!(
            "cannot subsample {n} rows from {}",
            d.len()
        )));
    }
    if n == d.len() {
        return Ok(d.clone());
    }
    let mut rng = seeded(seed);
    let mut picked = index::sample(&mut rng, d.len(), n).into_vec();
    picked.sort_unstable();
    let sub = d.select(&picked);
    let counts = sub.class_counts();
    log::info!(
        "subsample of {} ({n} rows): class counts {counts:?}",
        d.name
    );
    for (c, &k) in counts.iter().enumerate() {
        if k == 0 {
            log::warn!("subsample of {} has no examples of class {c}", d.name);
        }
    }
    Ok(sub)
}

/// Deterministic stream of mini-batch index sets.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    n: usize,
    batch_size: usize,
    replacement: bool,
    rng: SeededRng,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, seed: u64, replacement: bool) -> Result<Self> {
        if batch_size == 0 || batch_size > n {
            return Err(Error::invalid(format!(
                "batch size {batch_size} must lie in 1..={n}"
            )));
        }
        Ok(BatchSampler {
            n,
            batch_size,
            replacement,
            rng: seeded(seed),
            order: (0..n).collect(),
            cursor: n,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Batches per pass over the data (the last partial batch is dropped).
    pub fn batches_per_epoch(&self) -> usize {
        self.n / self.batch_size
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.replacement {
            return (0..self.batch_size)
                .map(|_| self.rng.random_range(0..self.n))
                .collect();
        }
        if self.cursor + self.batch_size > self.n {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let b = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        b
    }

    /// One pass over a fresh permutation. Without replacement every index
    /// appears exactly once when the batch size divides `n`.
    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        if !self.replacement {
            self.cursor = self.n;
        }
        (0..self.batches_per_epoch())
            .map(|_| self.next_batch())
            .collect()
    }
}

/// Random quadratic `H = Q^T diag(spectrum) Q` with Haar `Q`, plus a unit
/// starting point.
pub fn synthetic_quadratic(spectrum: &[f64], seed: u64) -> Result<(SymMatrix, ParamVector)> {
    if spectrum.is_empty() {
        return Err(Error::invalid("empty spectrum"));
    }
    if let Some(bad) = spectrum.iter().find(|&&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::invalid(format!(
            "spectrum entry {bad} is not a finite nonnegative value"
        )));
    }
    let p = spectrum.len();
    let mut rng = seeded(seed);
    let q = random_orthonormal(&mut rng, p, p);
    let h = SymMatrix::from_outer_products(p, spectrum, &q)?;
    let w0 = unit_vector(&mut rng, p);
    Ok((h, w0))
}

/// Gaussian class clusters squashed into `[0, 1]`. Used when no image data is
/// available and in tests.
pub fn synthetic_classification(
    n: usize,
    input_dim: usize,
    classes: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || input_dim == 0 || classes < 2 {
        return Err(Error::invalid(
            "synthetic dataset needs n > 0, d > 0, classes >= 2",
        ));
    }
    let mut rng = seeded(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..input_dim).map(|_| gaussian(&mut rng)).collect())
        .collect();
    let mut inputs = Vec::with_capacity(n * input_dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..classes);
        for &m in &centers[c] {
            let z = m + 1.5 * gaussian(&mut rng);
            inputs.push(1.0 / (1.0 + (-z).exp()));
        }
        labels.push(c);
    }
    Dataset::new("synthetic", inputs, labels, input_dim, classes)
}

/// Which dataset an experiment draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Fashion,
    Synthetic,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Fashion => "fashion",
            DatasetKind::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetKind::Mnist),
            "fashion" | "fashion-mnist" | "fashionmnist" => Ok(DatasetKind::Fashion),
            "synthetic" => Ok(DatasetKind::Synthetic),
            other => Err(Error::Config(format!("unknown dataset {other:?}"))),
        }
    }
}

/// Dataset root: `$SPECTRAL_DAMP_DATA_DIR`, falling back to `./data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Loads the official train or test split of an image dataset from
/// `<root>/<mnist|fashion>/`.
pub fn load_split(kind: DatasetKind, root: &Path, train: bool) -> Result<Dataset> {
    let sub = match kind {
        DatasetKind::Mnist => "mnist",
        DatasetKind::Fashion => "fashion",
        DatasetKind::Synthetic => {
            return Err(Error::invalid("synthetic data is generated, not loaded"))
        }
    };
    let prefix = if train { "train" } else { "t10k" };
    let dir = root.join(sub);
    let mut ds = load_idx(
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )?;
    ds.name = format!("{sub}-{prefix}");
    Ok(ds)
}
