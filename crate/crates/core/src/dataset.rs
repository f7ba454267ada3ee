//! Datasets: inline CSV, seeded synthetic families, and IDX image files.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labels {
    /// `y_n ∈ {−1, +1}`.
    Binary(Vec<f64>),
    /// Class indices in `0..num_classes`.
    Classes { labels: Vec<usize>, num_classes: usize },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Binary(y) => y.len(),
            Labels::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of model heads these labels need.
    pub fn num_outputs(&self) -> usize {
        match self {
            Labels::Binary(_) => 1,
            Labels::Classes { num_classes, .. } => *num_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Labels,
    pub provenance: String,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Labels, provenance: impl Into<String>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Dataset("dataset must have at least one sample".into()));
        }
        if inputs.len() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let d = inputs[0].len();
        if d == 0 || inputs.iter().any(|x| x.len() != d) {
            return Err(Error::Dataset("inputs must share one nonzero dimension".into()));
        }
        if inputs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Dataset("non-finite input value".into()));
        }
        match &labels {
            Labels::Binary(y) => {
                if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
                    return Err(Error::Dataset(format!("binary label {bad} is not ±1")));
                }
            }
            Labels::Classes { labels, num_classes } => {
                if *num_classes < 2 {
                    return Err(Error::Dataset("multi-class data needs ≥ 2 classes".into()));
                }
                if let Some(bad) = labels.iter().find(|&&c| c >= *num_classes) {
                    return Err(Error::Dataset(format!("class index {bad} outside 0..{num_classes}")));
                }
            }
        }
        Ok(Self {
            inputs,
            labels,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn num_outputs(&self) -> usize {
        self.labels.num_outputs()
    }

    /// Sub-dataset restricted to `idx` (used for mini-batches).
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let inputs = idx.iter().map(|&i| self.inputs[i].clone()).collect();
        let labels = match &self.labels {
            Labels::Binary(y) => Labels::Binary(idx.iter().map(|&i| y[i]).collect()),
            Labels::Classes { labels, num_classes } => Labels::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                num_classes: *num_classes,
            },
        };
        Dataset {
            inputs,
            labels,
            provenance: format!("{} [subset of {}]", self.provenance, idx.len()),
        }
    }
}

/// Parse rows `x_1,…,x_d,y`. Labels that are all `±1` give a binary dataset;
/// otherwise they must be nonnegative integers and are read as class indices.
/// Blank lines and lines starting with `#` are skipped, as is a header row whose
/// first field is not numeric.
pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) => {
                if v.len() < 2 {
                    return Err(Error::Dataset(format!(
                        "line {}: need at least one feature and a label",
                        lineno + 1
                    )));
                }
                rows.push(v);
            }
            Err(_) if rows.is_empty() && fields[0].parse::<f64>().is_err() => continue,
            Err(e) => return Err(Error::Dataset(format!("line {}: {e}", lineno + 1))),
        }
    }
    if rows.is_empty() {
        return Err(Error::Dataset("CSV contains no rows".into()));
    }
    let ys: Vec<f64> = rows.iter().map(|r| *r.last().unwrap()).collect();
    let inputs: Vec<Vec<f64>> = rows.iter().map(|r| r[..r.len() - 1].to_vec()).collect();
    let labels = if ys.iter().all(|&y| y == 1.0 || y == -1.0) {
        Labels::Binary(ys)
    } else {
        if ys.iter().any(|&y| y < 0.0 || y.fract() != 0.0) {
            return Err(Error::Dataset("labels must be ±1 or nonnegative integers".into()));
        }
        let labels: Vec<usize> = ys.iter().map(|&y| y as usize).collect();
        let num_classes = labels.iter().max().unwrap() + 1;
        Labels::Classes { labels, num_classes }
    };
    Dataset::new(inputs, labels, "csv")
}

/// Seeded synthetic families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Synthetic {
    /// Two Gaussian clouds at `±separation/2 · e_1`, points with `y·x_1 < margin`
    /// rejected so the set is linearly separable through the origin.
    TwoGaussians {
        n: usize,
        dim: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_std")]
        std: f64,
    },
    /// Noisy copies of the four corners `(±1, ±1)` labelled by `sign(x_1 x_2)`.
    Xor {
        n: usize,
        #[serde(default = "default_xor_noise")]
        noise: f64,
    },
    /// Concentric rings (inner −1, outer +1) with a constant third coordinate 1,
    /// so a bias-free network can still separate them.
    Ring {
        n: usize,
        #[serde(default = "default_inner")]
        inner: f64,
        #[serde(default = "default_outer")]
        outer: f64,
    },
    /// `classes` Gaussian clouds with centres evenly spaced on a circle of radius 3.
    Blobs {
        n: usize,
        classes: usize,
        #[serde(default = "default_std")]
        std: f64,
    },
}

fn default_separation() -> f64 {
    4.0
}
fn default_std() -> f64 {
    0.5
}
fn default_xor_noise() -> f64 {
    0.1
}
fn default_inner() -> f64 {
    1.0
}
fn default_outer() -> f64 {
    2.0
}

pub fn synthetic(family: &Synthetic, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut inputs = Vec::new();
    let provenance = format!("synthetic {family:?} seed {seed}");
    let labels = match *family {
        Synthetic::TwoGaussians {
            n,
            dim,
            separation,
            std,
        } => {
            if dim == 0 {
                return Err(Error::Dataset("two_gaussians needs dim ≥ 1".into()));
            }
            let mut ys = Vec::with_capacity(n);
            for i in 0..n {
                let y = if i % 2 == 0 { 1.0 } else { -1.0 };
                loop {
                    let mut x: Vec<f64> = (0..dim).map(|_| std * unit.sample(&mut rng)).collect();
                    x[0] += y * separation / 2.0;
                    if y * x[0] >= 0.25 * separation {
                        inputs.push(x);
                        break;
                    }
                }
                ys.push(y);
            }
            Labels::Binary(ys)
        }
        Synthetic::Xor { n, noise } => {
            let corners = [(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)];
            let mut ys = Vec::with_capacity(n);
            for i in 0..n {
                let (a, b) = corners[i % 4];
                let x = vec![a + noise * unit.sample(&mut rng), b + noise * unit.sample(&mut rng)];
                ys.push(if a * b > 0.0 { 1.0 } else { -1.0 });
                inputs.push(x);
            }
            Labels::Binary(ys)
        }
        Synthetic::Ring { n, inner, outer } => {
            let mut ys = Vec::with_capacity(n);
            for i in 0..n {
                let (r, y) = if i % 2 == 0 { (outer, 1.0) } else { (inner, -1.0) };
                let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                inputs.push(vec![r * a.cos(), r * a.sin(), 1.0]);
                ys.push(y);
            }
            Labels::Binary(ys)
        }
        Synthetic::Blobs { n, classes, std } => {
            if classes < 2 {
                return Err(Error::Dataset("blobs needs ≥ 2 classes".into()));
            }
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let c = i % classes;
                let a = std::f64::consts::TAU * c as f64 / classes as f64;
                inputs.push(vec![
                    3.0 * a.cos() + std * unit.sample(&mut rng),
                    3.0 * a.sin() + std * unit.sample(&mut rng),
                ]);
                labels.push(c);
            }
            Labels::Classes {
                labels,
                num_classes: classes,
            }
        }
    };
    Dataset::new(inputs, labels, provenance)
}

/// A parsed IDX array of unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    let b = bytes.get(offset..offset + 4).ok_or_else(|| Error::Idx {
        offset,
        msg: format!("file ends after {} bytes while reading a 32-bit field", bytes.len()),
    })?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parse an IDX file with unsigned-byte payload (`00 00 08 nd`, then `nd`
/// big-endian `u32` dimensions, then the raw bytes in row-major order).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let magic = read_u32_be(bytes, 0)?;
    if magic >> 16 != 0 {
        return Err(Error::Idx {
            offset: 0,
            msg: format!("magic {magic:#010x} must start with two zero bytes"),
        });
    }
    let dtype = (magic >> 8) & 0xff;
    if dtype != 0x08 {
        return Err(Error::Idx {
            offset: 2,
            msg: format!("unsupported element type {dtype:#04x}; only unsigned bytes (0x08) are read"),
        });
    }
    let nd = (magic & 0xff) as usize;
    if nd == 0 {
        return Err(Error::Idx {
            offset: 3,
            msg: "zero dimensions".into(),
        });
    }
    let mut dims = Vec::with_capacity(nd);
    for i in 0..nd {
        dims.push(read_u32_be(bytes, 4 + 4 * i)? as usize);
    }
    let header = 4 + 4 * nd;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Idx {
            offset: 4,
            msg: "dimension product overflows".into(),
        })?;
    let have = bytes.len() - header;
    if have != count {
        return Err(Error::Idx {
            offset: header + have.min(count),
            msg: format!("expected {count} payload bytes for dims {dims:?}, found {have}"),
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

/// Images as rows of floats scaled into `[0, 1]` by dividing by 255.
pub fn idx_images(arr: &IdxArray) -> Result<Vec<Vec<f64>>> {
    if arr.dims.len() != 3 {
        return Err(Error::Idx {
            offset: 3,
            msg: format!("image file must have 3 dimensions, found {}", arr.dims.len()),
        });
    }
    let per = arr.dims[1] * arr.dims[2];
    Ok(arr
        .data
        .chunks(per.max(1))
        .take(arr.dims[0])
        .map(|c| c.iter().map(|&b| f64::from(b) / 255.0).collect())
        .collect())
}

/// How IDX class labels become training labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum IdxLabelMode {
    /// Keep all ten (or however many) classes.
    #[default]
    Classes,
    /// Keep only digits `pos` and `neg` and label them `+1` / `−1`.
    Pair { pos: u8, neg: u8 },
}

/// Load `subsample` images (the first ones, after label filtering) from IDX files.
pub fn load_idx(images: &Path, labels: &Path, subsample: usize, mode: &IdxLabelMode) -> Result<Dataset> {
    let img = parse_idx(&std::fs::read(images)?)?;
    let lab = parse_idx(&std::fs::read(labels)?)?;
    if lab.dims.len() != 1 {
        return Err(Error::Idx {
            offset: 3,
            msg: "label file must have 1 dimension".into(),
        });
    }
    let xs = idx_images(&img)?;
    if xs.len() != lab.data.len() {
        return Err(Error::Dataset(format!(
            "{} images but {} labels",
            xs.len(),
            lab.data.len()
        )));
    }
    let provenance = format!("idx {} / {}", images.display(), labels.display());
    match *mode {
        IdxLabelMode::Classes => {
            let n = subsample.min(xs.len());
            let num_classes = lab.data.iter().map(|&c| c as usize).max().unwrap_or(0) + 1;
            Dataset::new(
                xs[..n].to_vec(),
                Labels::Classes {
                    labels: lab.data[..n].iter().map(|&c| c as usize).collect(),
                    num_classes: num_classes.max(2),
                },
                provenance,
            )
        }
        IdxLabelMode::Pair { pos, neg } => {
            let (mut inputs, mut ys) = (Vec::new(), Vec::new());
            for (x, &c) in xs.iter().zip(&lab.data) {
                if inputs.len() == subsample {
                    break;
                }
                if c == pos || c == neg {
                    inputs.push(x.clone());
                    ys.push(if c == pos { 1.0 } else { -1.0 });
                }
            }
            Dataset::new(inputs, Labels::Binary(ys), provenance)
        }
    }
}

/// Seeded permutation of `0..n` used for mini-batch order.
pub fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}
