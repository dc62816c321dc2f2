//! Dataset containers and loaders.
//!
//! IDX (MNIST layout, also used for pre-converted SVHN) and the CIFAR-10
//! binary batch format. Pixels are kept as bytes and exposed as `b / 256` so
//! every value lies in `[0, 1)`.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::netgraph::{DatasetKind, Shape};
use crate::rng::SeededRng;

pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Four-dimensional unsigned-byte IDX (`count, depth, rows, cols`).
pub const IDX_VOLUMES_MAGIC: u32 = 0x0000_0804;
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
pub const CLASS_COUNT: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: String,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated, need {expected} bytes but found {actual}")]
    Truncated {
        path: String,
        expected: usize,
        actual: usize,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: size {len} is not a multiple of the {record}-byte record")]
    RecordSize {
        path: String,
        len: usize,
        record: usize,
    },
    #[error("sample {index}: label {label} outside 0..{classes}")]
    InvalidLabel {
        index: usize,
        label: u8,
        classes: usize,
    },
    #[error("batch of {batch} requested from {size} samples")]
    BatchTooLarge { batch: usize, size: usize },
    #[error("no data files found in {0}")]
    NoFiles(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images with labels, channel-planar `d x h x w` bytes per image.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    shape: Shape,
    pixels: Vec<u8>,
    labels: Vec<u8>,
    split: Split,
    class_count: usize,
}

impl Dataset {
    pub fn new(
        shape: Shape,
        pixels: Vec<u8>,
        labels: Vec<u8>,
        split: Split,
        class_count: usize,
    ) -> Result<Self, DataError> {
        let per = shape.len();
        if per == 0 || pixels.len() % per != 0 || pixels.len() / per != labels.len() {
            return Err(DataError::CountMismatch {
                images: if per == 0 { 0 } else { pixels.len() / per },
                labels: labels.len(),
            });
        }
        if let Some((index, &label)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= class_count)
        {
            return Err(DataError::InvalidLabel {
                index,
                label,
                classes: class_count,
            });
        }
        Ok(Self {
            shape,
            pixels,
            labels,
            split,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn raw_image(&self, i: usize) -> &[u8] {
        let per = self.shape.len();
        &self.pixels[i * per..(i + 1) * per]
    }

    /// Normalized pixels `b / 256`.
    pub fn image(&self, i: usize) -> Vec<f64> {
        self.raw_image(i)
            .iter()
            .map(|&b| b as f64 / 256.0)
            .collect()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// The first `n` samples (or all, if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            shape: self.shape,
            pixels: self.pixels[..n * self.shape.len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            split: self.split,
            class_count: self.class_count,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize, path: &str) -> Result<u32, DataError> {
    let b = bytes.get(at..at + 4).ok_or_else(|| DataError::Truncated {
        path: path.to_string(),
        expected: at + 4,
        actual: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses an IDX image file into `(shape, count, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &str) -> Result<(Shape, usize, Vec<u8>), DataError> {
    let magic = be_u32(bytes, 0, path)?;
    let (shape, count, header) = match magic {
        IDX_IMAGES_MAGIC => {
            let n = be_u32(bytes, 4, path)? as usize;
            let h = be_u32(bytes, 8, path)? as usize;
            let w = be_u32(bytes, 12, path)? as usize;
            (Shape::new(1, h, w), n, 16)
        }
        IDX_VOLUMES_MAGIC => {
            let n = be_u32(bytes, 4, path)? as usize;
            let d = be_u32(bytes, 8, path)? as usize;
            let h = be_u32(bytes, 12, path)? as usize;
            let w = be_u32(bytes, 16, path)? as usize;
            (Shape::new(d, h, w), n, 20)
        }
        found => {
            return Err(DataError::BadMagic {
                path: path.to_string(),
                expected: IDX_IMAGES_MAGIC,
                found,
            })
        }
    };
    let need = header + count * shape.len();
    if bytes.len() < need {
        return Err(DataError::Truncated {
            path: path.to_string(),
            expected: need,
            actual: bytes.len(),
        });
    }
    Ok((shape, count, bytes[header..need].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &str) -> Result<Vec<u8>, DataError> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_string(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(bytes, 4, path)? as usize;
    if bytes.len() < 8 + n {
        return Err(DataError::Truncated {
            path: path.to_string(),
            expected: 8 + n,
            actual: bytes.len(),
        });
    }
    Ok(bytes[8..8 + n].to_vec())
}

pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset, DataError> {
    let ib = read(images_path)?;
    let lb = read(labels_path)?;
    let (shape, count, pixels) = parse_idx_images(&ib, &images_path.display().to_string())?;
    let labels = parse_idx_labels(&lb, &labels_path.display().to_string())?;
    if count != labels.len() {
        return Err(DataError::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    Dataset::new(shape, pixels, labels, split, CLASS_COUNT)
}

pub fn encode_idx_images(ds: &Dataset) -> Vec<u8> {
    let s = ds.shape;
    let mut out = Vec::with_capacity(20 + ds.pixels.len());
    if s.d == 1 {
        out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        for v in [ds.len(), s.h, s.w] {
            out.extend_from_slice(&(v as u32).to_be_bytes());
        }
    } else {
        out.extend_from_slice(&IDX_VOLUMES_MAGIC.to_be_bytes());
        for v in [ds.len(), s.d, s.h, s.w] {
            out.extend_from_slice(&(v as u32).to_be_bytes());
        }
    }
    out.extend_from_slice(&ds.pixels);
    out
}

pub fn encode_idx_labels(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + ds.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    out.extend_from_slice(&ds.labels);
    out
}

/// Parses CIFAR-10 binary records: one label byte, then 1024 red, 1024
/// green and 1024 blue bytes.
pub fn parse_cifar10(bytes: &[u8], path: &str) -> Result<(Vec<u8>, Vec<u8>), DataError> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(DataError::RecordSize {
            path: path.to_string(),
            len: bytes.len(),
            record: CIFAR_RECORD,
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((pixels, labels))
}

pub fn load_cifar10(batch_paths: &[PathBuf], split: Split) -> Result<Dataset, DataError> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for p in batch_paths {
        let (px, lb) = parse_cifar10(&read(p)?, &p.display().to_string())?;
        pixels.extend(px);
        labels.extend(lb);
    }
    Dataset::new(Shape::new(3, 32, 32), pixels, labels, split, CLASS_COUNT)
}

pub fn encode_cifar10(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(ds.len() * CIFAR_RECORD);
    for i in 0..ds.len() {
        out.push(ds.labels[i]);
        out.extend_from_slice(ds.raw_image(i));
    }
    out
}

/// Conventional file names inside a data directory.
pub fn split_paths(kind: DatasetKind, dir: &Path, split: Split) -> Vec<PathBuf> {
    match (kind, split) {
        (DatasetKind::Mnist | DatasetKind::SvhnIdx, Split::Train) => vec![
            dir.join("train-images-idx3-ubyte"),
            dir.join("train-labels-idx1-ubyte"),
        ],
        (DatasetKind::Mnist | DatasetKind::SvhnIdx, Split::Test) => vec![
            dir.join("t10k-images-idx3-ubyte"),
            dir.join("t10k-labels-idx1-ubyte"),
        ],
        (DatasetKind::Cifar10, Split::Train) => (1..=5)
            .map(|i| dir.join(format!("data_batch_{i}.bin")))
            .filter(|p| p.exists())
            .collect(),
        (DatasetKind::Cifar10, Split::Test) => vec![dir.join("test_batch.bin")],
    }
}

/// Loads one split of `kind` from `dir`.
pub fn load_split(kind: DatasetKind, dir: &Path, split: Split) -> Result<Dataset, DataError> {
    let paths = split_paths(kind, dir, split);
    match kind {
        DatasetKind::Mnist | DatasetKind::SvhnIdx => load_idx(&paths[0], &paths[1], split),
        DatasetKind::Cifar10 => {
            if paths.is_empty() {
                return Err(DataError::NoFiles(dir.display().to_string()));
            }
            load_cifar10(&paths, split)
        }
    }
}

/// Uniform sample of `batch_size` distinct indices from `0..n` (partial
/// Fisher-Yates). Returns the indices and the advanced generator.
pub fn sample_indices(
    n: usize,
    batch_size: usize,
    rng: &SeededRng,
) -> Result<(Vec<usize>, SeededRng), DataError> {
    if batch_size > n {
        return Err(DataError::BatchTooLarge {
            batch: batch_size,
            size: n,
        });
    }
    let mut rng = rng.clone();
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..batch_size {
        let j = i + rng.below((n - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(batch_size);
    Ok((pool, rng))
}

pub fn sample_batch(
    dataset: &Dataset,
    batch_size: usize,
    rng: &SeededRng,
) -> Result<(Vec<usize>, SeededRng), DataError> {
    sample_indices(dataset.len(), batch_size, rng)
}
