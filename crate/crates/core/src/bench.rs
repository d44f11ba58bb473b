//! Datasets and scoring: the 4x4 letter task and MNIST in IDX format.
//!
//! Pixels are stored in `[0, 1]` (letters are exactly 0 or 1); the network
//! encodes them as `v = input_voltage * (2p - 1)`.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Dimension {
                what: "labels",
                expected: inputs.len(),
                got: labels.len(),
            });
        }
        if let Some(first) = inputs.first() {
            if let Some(bad) = inputs.iter().find(|x| x.len() != first.len()) {
                return Err(Error::Dimension {
                    what: "pattern length",
                    expected: first.len(),
                    got: bad.len(),
                });
            }
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::config(format!("label {l} >= n_classes {n_classes}")));
        }
        Ok(Dataset {
            inputs,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    /// First `n` patterns (or all if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            inputs: self.inputs[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            n_classes: self.n_classes,
        }
    }

    /// Keeps only patterns with label < `n_classes`.
    pub fn restrict_classes(&self, n_classes: usize) -> Dataset {
        let (inputs, labels) = self
            .inputs
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l < n_classes)
            .map(|(x, &l)| (x.clone(), l))
            .unzip();
        Dataset {
            inputs,
            labels,
            n_classes,
        }
    }

    /// One row per pattern: `label,p0,p1,...`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "label")?;
        for k in 0..self.n_inputs() {
            write!(out, ",p{k}")?;
        }
        writeln!(out)?;
        for (x, l) in self.inputs.iter().zip(&self.labels) {
            write!(out, "{l}")?;
            for v in x {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Class glyphs of the builtin letter set, in order.
pub const LETTER_CLASSES: [char; 4] = ['X', 'T', 'L', 'O'];

/// Ten 4x4 variants per class (row-major, 1 = dark), pairwise Hamming distance >= 3.
const BUILTIN: [[&str; 10]; 4] = [
    [
        "1001011001101001", "0000001001101001", "0001010000101001", "0001011001000001",
        "0001011001101010", "0001011001111101", "0001011111101001", "0011111001101001",
        "1000010001001001", "1000011000100001",
    ],
    [
        "1111011001100110", "0010011001100110", "0101001001100110", "0111010000100110",
        "0111011001000010", "0111011001100101", "0111011001111110", "0111011111100110",
        "1001010001100110", "1011001000100110",
    ],
    [
        "1000100010001111", "0000000000001111", "0000100010000011", "0000100010001100",
        "0000100010111111", "0000100111001111", "0000111010001111", "0011100010001111",
        "1000000010000101", "1000000010001010",
    ],
    [
        "1111100110011111", "0001100110011111", "0110000110011111", "0111100000011111",
        "0111100110000111", "0111100110011001", "0111100110111110", "0111101111011111",
        "1010100100011111", "1011000010011111",
    ],
];

fn bits(s: &str) -> Vec<f64> {
    s.bytes().map(|b| if b == b'1' { 1.0 } else { 0.0 }).collect()
}

/// Builtin letter training set with the first `n_classes` (1..=4) classes.
pub fn builtin_letters(n_classes: usize) -> Result<Dataset> {
    if !(1..=4).contains(&n_classes) {
        return Err(Error::config(format!(
            "builtin letter set has 4 classes, requested {n_classes}"
        )));
    }
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (label, variants) in BUILTIN.iter().enumerate().take(n_classes) {
        for v in variants {
            inputs.push(bits(v));
            labels.push(label);
        }
    }
    Dataset::new(inputs, labels, n_classes)
}

/// Parses the letter text format: one pattern per line, 16 characters of
/// `0`/`1` followed by whitespace and an integer label. `#` starts a comment.
pub fn parse_letters(text: &str) -> Result<Dataset> {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        let mut parts = line.split_whitespace();
        let pix = parts.next().unwrap_or("");
        if pix.len() != 16 || !pix.bytes().all(|b| b == b'0' || b == b'1') {
            return Err(err(format!("expected 16 characters of 0/1, got {pix:?}")));
        }
        let label: usize = parts
            .next()
            .ok_or_else(|| err("missing label".into()))?
            .parse()
            .map_err(|e| err(format!("bad label: {e}")))?;
        if parts.next().is_some() {
            return Err(err("trailing fields".into()));
        }
        inputs.push(bits(pix));
        labels.push(label);
    }
    if inputs.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no patterns".into(),
        });
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(inputs, labels, n_classes)
}

/// All single-pixel flips of every training pattern, pattern-major then
/// pixel-major; labels are inherited.
pub fn flip_test_set(train: &Dataset) -> Dataset {
    let mut inputs = Vec::with_capacity(train.len() * train.n_inputs());
    let mut labels = Vec::with_capacity(inputs.capacity());
    for (x, &l) in train.inputs.iter().zip(&train.labels) {
        for k in 0..x.len() {
            let mut y = x.clone();
            y[k] = 1.0 - y[k];
            inputs.push(y);
            labels.push(l);
        }
    }
    Dataset {
        inputs,
        labels,
        n_classes: train.n_classes,
    }
}

/// Letter train/test sets: builtin (`path = None`) or from a pattern file.
pub fn letter_dataset(path: Option<&Path>, n_classes: usize) -> Result<(Dataset, Dataset)> {
    let train = match path {
        None => builtin_letters(n_classes)?,
        Some(p) => parse_letters(&fs::read_to_string(p)?)?.restrict_classes(n_classes),
    };
    let test = flip_test_set(&train);
    Ok((train, test))
}

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Format {
            offset,
            msg: "truncated header".into(),
        })
}

/// Parses an IDX3 image file into flattened images scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("image magic {magic}, expected {IMAGE_MAGIC}"),
        });
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let need = 16 + n * size;
    if bytes.len() < need {
        return Err(Error::Format {
            offset: bytes.len(),
            msg: format!("image data truncated, need {need} bytes"),
        });
    }
    let images = bytes[16..need]
        .chunks_exact(size.max(1))
        .take(n)
        .map(|c| c.iter().map(|&b| b as f64 / 255.0).collect())
        .collect();
    Ok((images, rows, cols))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("label magic {magic}, expected {LABEL_MAGIC}"),
        });
    }
    let n = be_u32(bytes, 4)? as usize;
    if bytes.len() < 8 + n {
        return Err(Error::Format {
            offset: bytes.len(),
            msg: format!("label data truncated, need {} bytes", 8 + n),
        });
    }
    Ok(bytes[8..8 + n].iter().map(|&b| b as usize).collect())
}

pub fn load_mnist(images: &Path, labels: &Path) -> Result<Dataset> {
    let (inputs, _, _) = parse_idx_images(&fs::read(images)?)?;
    let labels = parse_idx_labels(&fs::read(labels)?)?;
    let n_classes = labels.iter().max().map_or(10, |&m| (m + 1).max(10));
    Dataset::new(inputs, labels, n_classes)
}

/// Standard file names inside an MNIST directory.
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Loads `(train, test)` from a directory with the standard file names.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_mnist(&dir.join(MNIST_FILES[0]), &dir.join(MNIST_FILES[1]))?;
    let test = load_mnist(&dir.join(MNIST_FILES[2]), &dir.join(MNIST_FILES[3]))?;
    Ok((train, test))
}

/// Serializes images (values rounded back to bytes) as IDX3.
pub fn idx_images_bytes(images: &[Vec<f64>], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGE_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        out.extend(img.iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    out
}

pub fn idx_labels_bytes(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    /// Percent correct.
    pub fidelity: f64,
    pub correct: usize,
    pub total: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Per-class recall in percent (`NaN` for absent classes).
    pub recall: Vec<f64>,
}

impl Score {
    pub fn error_percent(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * (self.total - self.correct) as f64 / self.total as f64
        }
    }
}

pub fn score(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<Score> {
    if predictions.len() != labels.len() {
        return Err(Error::Dimension {
            what: "predictions",
            expected: labels.len(),
            got: predictions.len(),
        });
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    let mut correct = 0;
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= n_classes || l >= n_classes {
            return Err(Error::config(format!(
                "class index {} >= n_classes {n_classes}",
                p.max(l)
            )));
        }
        confusion[l][p] += 1;
        correct += usize::from(p == l);
    }
    let total = labels.len();
    let recall = confusion
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let n: usize = row.iter().sum();
            if n == 0 {
                f64::NAN
            } else {
                100.0 * row[k] as f64 / n as f64
            }
        })
        .collect();
    Ok(Score {
        fidelity: if total == 0 {
            0.0
        } else {
            100.0 * correct as f64 / total as f64
        },
        correct,
        total,
        confusion,
        recall,
    })
}
