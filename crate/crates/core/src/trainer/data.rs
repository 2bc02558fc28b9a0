//! Datasets: CSV files, MNIST IDX files, and the synthetic 2D blobs.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::nn::{Sample, Target};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error on line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("bad magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file {0}")]
    TruncatedFile(PathBuf),
    #[error("dataset has no training samples")]
    EmptyTrain,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, split: Split) -> Self {
        let splits = vec![split; samples.len()];
        Self { samples, splits }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: Sample, split: Split) {
        self.samples.push(sample);
        self.splits.push(split);
    }

    pub fn extend(&mut self, other: Dataset) {
        self.samples.extend(other.samples);
        self.splits.extend(other.splits);
    }

    fn part(&self, which: Split) -> Vec<Sample> {
        self.samples
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == which)
            .map(|(x, _)| x.clone())
            .collect()
    }

    pub fn train(&self) -> Vec<Sample> {
        self.part(Split::Train)
    }

    pub fn test(&self) -> Vec<Sample> {
        self.part(Split::Test)
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.x.len())
    }

    /// Number of classes (`max label + 1`) if every target is a label.
    pub fn num_classes(&self) -> Option<usize> {
        let mut max = None;
        for s in &self.samples {
            match s.target {
                Target::Label(l) => max = Some(max.map_or(l, |m: usize| m.max(l))),
                Target::Values(_) => return None,
            }
        }
        max.map(|m| m + 1)
    }

    /// Checks consistent dimensions and a nonempty training split.
    pub fn validate(&self) -> Result<(), DataError> {
        let d = self.input_dim().ok_or(DataError::EmptyTrain)?;
        let mut out_dim = None;
        for (i, s) in self.samples.iter().enumerate() {
            if s.x.len() != d {
                return Err(DataError::Dimension(format!(
                    "sample {i} has {} inputs, expected {d}",
                    s.x.len()
                )));
            }
            if let Target::Values(y) = &s.target {
                if *out_dim.get_or_insert(y.len()) != y.len() {
                    return Err(DataError::Dimension(format!("sample {i} has a ragged target")));
                }
            }
        }
        if !self.splits.contains(&Split::Train) {
            return Err(DataError::EmptyTrain);
        }
        Ok(())
    }
}

/// Reads a CSV with header `x1,...,xd,label` or `x1,...,xd,y1,...,yk`, plus an optional
/// `split` column holding `train` or `test` (rows without it are training rows).
pub fn load_csv(path: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| DataError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();

    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut label_col = None;
    let mut split_col = None;
    for (i, name) in header.iter().enumerate() {
        match name {
            "label" => label_col = Some(i),
            "split" => split_col = Some(i),
            n if n.starts_with('x') => inputs.push(i),
            n if n.starts_with('y') => outputs.push(i),
            other => {
                return Err(DataError::Parse {
                    line: 1,
                    message: format!("unexpected column `{other}`"),
                })
            }
        }
    }
    if inputs.is_empty() {
        return Err(DataError::Dimension("no input columns".into()));
    }
    if label_col.is_some() == !outputs.is_empty() {
        return Err(DataError::Dimension(
            "need either a `label` column or y columns".into(),
        ));
    }

    let mut data = Dataset::default();
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let float = |i: usize| -> Result<f64, DataError> {
            record[i].parse::<f64>().map_err(|e| DataError::Parse {
                line,
                message: format!("column `{}`: {e}", &header[i]),
            })
        };
        let x = inputs.iter().map(|&i| float(i)).collect::<Result<Vec<_>, _>>()?;
        let target = match label_col {
            Some(c) => Target::Label(record[c].parse::<usize>().map_err(|e| DataError::Parse {
                line,
                message: format!("label: {e}"),
            })?),
            None => Target::Values(outputs.iter().map(|&i| float(i)).collect::<Result<_, _>>()?),
        };
        let split = match split_col.map(|c| &record[c]) {
            None | Some("train") => Split::Train,
            Some("test") => Split::Test,
            Some(other) => {
                return Err(DataError::Parse {
                    line,
                    message: format!("unknown split `{other}`"),
                })
            }
        };
        data.push(Sample { x, target }, split);
    }
    data.validate()?;
    Ok(data)
}

/// Writes the dataset in the format read by [`load_csv`], always with a `split` column.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<(), DataError> {
    fs::write(path, to_csv_string(data)?).map_err(io_err(path))
}

pub fn to_csv_string(data: &Dataset) -> Result<String, DataError> {
    data.validate()?;
    let d = data.input_dim().unwrap();
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    match &data.samples[0].target {
        Target::Label(_) => header.push("label".into()),
        Target::Values(y) => header.extend((1..=y.len()).map(|i| format!("y{i}"))),
    }
    header.push("split".into());
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let to_io = |e: csv::Error| DataError::Dimension(e.to_string());
    wtr.write_record(&header).map_err(to_io)?;
    for (s, split) in data.samples.iter().zip(&data.splits) {
        let mut row: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
        match &s.target {
            Target::Label(l) => row.push(l.to_string()),
            Target::Values(y) => row.extend(y.iter().map(|v| v.to_string())),
        }
        row.push(split.as_str().into());
        wtr.write_record(&row).map_err(to_io)?;
    }
    let bytes = wtr.into_inner().map_err(|e| DataError::Dimension(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Three Gaussian blobs (sigma 0.2) centred on a circle of radius 0.5, clamped to
/// `[-1, 1]^2`, with `n_train` training and `n_test` test points.
pub fn gen_blobs_2d(n_train: usize, n_test: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.2).unwrap();
    let centres: Vec<(f64, f64)> = (0..3)
        .map(|k| {
            let a = std::f64::consts::FRAC_PI_2 + 2.0 * std::f64::consts::PI * k as f64 / 3.0;
            (0.5 * a.cos(), 0.5 * a.sin())
        })
        .collect();
    let mut data = Dataset::default();
    for (count, split) in [(n_train, Split::Train), (n_test, Split::Test)] {
        for i in 0..count {
            let label = i % 3;
            let (cx, cy) = centres[label];
            let x = (cx + noise.sample(&mut rng)).clamp(-1.0, 1.0);
            let y = (cy + noise.sample(&mut rng)).clamp(-1.0, 1.0);
            data.push(Sample::labeled(vec![x, y], label), split);
        }
    }
    data
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, DataError> {
    let raw = fs::read(path).map_err(io_err(path))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|_| DataError::TruncatedFile(path.to_path_buf()))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::TruncatedFile(path.to_path_buf()))
}

/// Reads an IDX image/label pair (optionally gzip-compressed), scales pixels to
/// `[0, 1]` and average-pools them to `downsample_to`. All samples are tagged `split`.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    downsample_to: (usize, usize),
    split: Split,
) -> Result<Dataset, DataError> {
    load_idx_limited(images_path, labels_path, downsample_to, split, usize::MAX)
}

/// As [`load_idx`], keeping at most the first `limit` samples.
pub fn load_idx_limited(
    images_path: &Path,
    labels_path: &Path,
    downsample_to: (usize, usize),
    split: Split,
    limit: usize,
) -> Result<Dataset, DataError> {
    let img = read_maybe_gz(images_path)?;
    let lab = read_maybe_gz(labels_path)?;
    let magic = be_u32(&img, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let magic = be_u32(&lab, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    let n_labels = be_u32(&lab, 4, labels_path)? as usize;
    if n_labels != count {
        return Err(DataError::Dimension(format!(
            "{count} images but {n_labels} labels"
        )));
    }
    let (h, w) = downsample_to;
    if h == 0 || w == 0 || rows % h != 0 || cols % w != 0 {
        return Err(DataError::Dimension(format!(
            "cannot pool {rows}x{cols} images to {h}x{w}"
        )));
    }
    let (ph, pw) = (rows / h, cols / w);
    let px = rows * cols;
    if img.len() < 16 + count * px {
        return Err(DataError::TruncatedFile(images_path.to_path_buf()));
    }
    if lab.len() < 8 + count {
        return Err(DataError::TruncatedFile(labels_path.to_path_buf()));
    }

    let scale = 1.0 / (255.0 * (ph * pw) as f64);
    let n = count.min(limit);
    let mut samples = Vec::with_capacity(n);
    for s in 0..n {
        let image = &img[16 + s * px..16 + (s + 1) * px];
        let mut x = vec![0.0; h * w];
        for r in 0..rows {
            for c in 0..cols {
                x[(r / ph) * w + c / pw] += image[r * cols + c] as f64;
            }
        }
        x.iter_mut().for_each(|v| *v *= scale);
        samples.push(Sample::labeled(x, lab[8 + s] as usize));
    }
    Ok(Dataset::new(samples, split))
}

/// File name in `dir`, preferring the gzip-compressed copy.
fn idx_file(dir: &Path, stem: &str) -> PathBuf {
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        gz
    } else {
        dir.join(stem)
    }
}

/// The standard MNIST training and test files in `dir`, pooled to `size x size`.
pub fn load_mnist_dir(
    dir: &Path,
    size: usize,
    train_limit: usize,
    test_limit: usize,
) -> Result<Dataset, DataError> {
    let mut data = load_idx_limited(
        &idx_file(dir, "train-images-idx3-ubyte"),
        &idx_file(dir, "train-labels-idx1-ubyte"),
        (size, size),
        Split::Train,
        train_limit,
    )?;
    data.extend(load_idx_limited(
        &idx_file(dir, "t10k-images-idx3-ubyte"),
        &idx_file(dir, "t10k-labels-idx1-ubyte"),
        (size, size),
        Split::Test,
        test_limit,
    )?);
    Ok(data)
}
