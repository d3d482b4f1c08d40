use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EnvError, Sample, Target};
use crate::numkernel::Rng;

const BUNDLED_DIGITS: &str = include_str!("../../data/digits8x8.csv");

/// Labelled image set with pixel intensities in [0, 1].
#[derive(Clone, Debug)]
pub struct DigitSet {
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_pixels: usize,
    pub n_classes: usize,
}

impl DigitSet {
    /// The bundled 8x8 ten-class digit set (1797 images).
    pub fn bundled() -> DigitSet {
        DigitSet::from_csv(BUNDLED_DIGITS.as_bytes()).expect("bundled digit CSV is well formed")
    }

    /// Parses rows of pixel values followed by a class index.
    pub fn from_csv(bytes: &[u8]) -> Result<DigitSet, EnvError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| EnvError::Data(format!("row {row}: {e}")))?;
            if record.len() < 2 {
                return Err(EnvError::Data(format!("row {row}: too few fields")));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| EnvError::Data(format!("row {row}: {e}")))
            };
            let pixels = record
                .iter()
                .take(record.len() - 1)
                .map(parse)
                .collect::<Result<Vec<f64>, _>>()?;
            if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(EnvError::Data(format!("row {row}: pixel outside [0, 1]")));
            }
            let label = record[record.len() - 1]
                .trim()
                .parse::<usize>()
                .map_err(|e| EnvError::Data(format!("row {row}: label: {e}")))?;
            images.push(pixels);
            labels.push(label);
        }
        DigitSet::new(images, labels)
    }

    /// Reads MNIST-style IDX files (`train-images-idx3-ubyte`, `train-labels-idx1-ubyte`)
    /// from `dir`, keeping the first `limit` images.
    pub fn from_idx_dir(dir: &Path, limit: usize) -> Result<DigitSet, EnvError> {
        let images_path = dir.join("train-images-idx3-ubyte");
        let labels_path = dir.join("train-labels-idx1-ubyte");
        for p in [&images_path, &labels_path] {
            if !p.is_file() {
                return Err(EnvError::MissingBaseSet(p.display().to_string()));
            }
        }
        let read = |p: &PathBuf| fs::read(p).map_err(|e| EnvError::Data(format!("{}: {e}", p.display())));
        let image_bytes = read(&images_path)?;
        let label_bytes = read(&labels_path)?;
        let (dims, pixels) = parse_idx(&image_bytes, 3)?;
        let (ldims, labels) = parse_idx(&label_bytes, 1)?;
        if dims[0] != ldims[0] {
            return Err(EnvError::Data("image and label counts differ".into()));
        }
        let n = dims[0].min(limit);
        let size = dims[1] * dims[2];
        let images = (0..n)
            .map(|i| pixels[i * size..(i + 1) * size].iter().map(|&b| b as f64 / 255.0).collect())
            .collect();
        DigitSet::new(images, labels[..n].iter().map(|&l| l as usize).collect())
    }

    fn new(images: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<DigitSet, EnvError> {
        let n_pixels = images.first().map_or(0, |img| img.len());
        if images.is_empty() || images.iter().any(|img| img.len() != n_pixels) {
            return Err(EnvError::Data("empty or ragged image set".into()));
        }
        let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
        Ok(DigitSet { images, labels, n_pixels, n_classes })
    }
}

/// Parses an unsigned-byte IDX payload with `rank` dimensions.
fn parse_idx(bytes: &[u8], rank: usize) -> Result<(Vec<usize>, &[u8]), EnvError> {
    let header = 4 + 4 * rank;
    if bytes.len() < header || bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 || bytes[3] as usize != rank {
        return Err(EnvError::Data("bad IDX magic".into()));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let len: usize = dims.iter().product();
    if bytes.len() != header + len {
        return Err(EnvError::Data("IDX payload length mismatch".into()));
    }
    Ok((dims, &bytes[header..]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BaseSet {
    Bundled,
    MnistIdx { dir: PathBuf, limit: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PermutedConfig {
    pub n_tasks: usize,
    pub base_set: BaseSet,
    pub seed: u64,
    /// Fraction of the base set held out for testing.
    pub test_fraction: f64,
}

impl Default for PermutedConfig {
    fn default() -> Self {
        PermutedConfig { n_tasks: 5, base_set: BaseSet::Bundled, seed: 0, test_fraction: 0.2 }
    }
}

#[derive(Clone, Debug)]
pub struct PermutedTask {
    pub index: usize,
    /// Output pixel `i` reads input pixel `permutation[i]`.
    pub permutation: Vec<usize>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn apply_permutation(image: &[f64], permutation: &[usize]) -> Vec<f64> {
    permutation.iter().map(|&j| image[j]).collect()
}

pub fn invert_permutation(permutation: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; permutation.len()];
    for (i, &j) in permutation.iter().enumerate() {
        inv[j] = i;
    }
    inv
}

/// Builds the permuted task sequence. Task 0 keeps the identity permutation.
pub fn permuted_stream(cfg: &PermutedConfig) -> Result<Vec<PermutedTask>, EnvError> {
    let base = match &cfg.base_set {
        BaseSet::Bundled => DigitSet::bundled(),
        BaseSet::MnistIdx { dir, limit } => DigitSet::from_idx_dir(dir, *limit)?,
    };
    permuted_tasks(&base, cfg)
}

pub fn permuted_tasks(base: &DigitSet, cfg: &PermutedConfig) -> Result<Vec<PermutedTask>, EnvError> {
    if cfg.n_tasks == 0 {
        return Err(EnvError::InvalidConfig("n_tasks must be at least 1".into()));
    }
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(EnvError::InvalidConfig("test_fraction must lie in (0, 1)".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..base.images.len()).collect();
    rng.shuffle(&mut order);
    let n_test = ((base.images.len() as f64) * cfg.test_fraction).round() as usize;
    let (test_idx, train_idx) = order.split_at(n_test);

    let identity: Vec<usize> = (0..base.n_pixels).collect();
    let mut perms = vec![identity];
    while perms.len() < cfg.n_tasks {
        let p = rng.permutation(base.n_pixels);
        if !perms.contains(&p) {
            perms.push(p);
        }
    }

    let make = |idx: &[usize], perm: &[usize], task: usize| -> Vec<Sample> {
        idx.iter()
            .enumerate()
            .map(|(t, &i)| Sample {
                x: apply_permutation(&base.images[i], perm),
                y: Target::Class(base.labels[i]),
                phase: task as i64,
                t,
            })
            .collect()
    };
    Ok(perms
        .into_iter()
        .enumerate()
        .map(|(k, perm)| PermutedTask {
            index: k,
            train: make(train_idx, &perm, k),
            test: make(test_idx, &perm, k),
            permutation: perm,
        })
        .collect())
}
