//! Datasets: MNIST from IDX files, seeded Gaussian blobs, and reproducible
//! mini-batch orders.

mod idx;

pub use idx::{encode_idx, parse_idx, read_idx_images, read_idx_labels, IdxHeader, IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const MNIST_TRAIN_SIZE: usize = 50_000;
pub const MNIST_VAL_SIZE: usize = 10_000;
pub const MNIST_CLASSES: usize = 10;
pub const BLOB_RADIUS: f64 = 4.0;

/// Scalar standardization `x ↦ (x − mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    pub const IDENTITY: Standardization = Standardization { mean: 0.0, std: 1.0 };

    pub fn fit(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Standardization {
            mean,
            std: if var > 0.0 { var.sqrt() } else { 1.0 },
        }
    }

    pub fn apply(&self, values: &mut [f64]) {
        let inv = 1.0 / self.std;
        for v in values {
            *v = (*v - self.mean) * inv;
        }
    }
}

/// Labelled examples, one per row of `images`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: String,
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub standardization: Standardization,
}

impl DatasetSplit {
    pub fn new(
        name: impl Into<String>,
        images: Tensor,
        labels: Vec<usize>,
        class_count: usize,
        standardization: Standardization,
    ) -> Result<Self> {
        if images.shape().len() != 2 || images.rows() != labels.len() || labels.is_empty() {
            return Err(Error::Shape(format!(
                "{} labels for images of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Index(format!("label {bad} with {class_count} classes")));
        }
        Ok(DatasetSplit {
            name: name.into(),
            images,
            labels,
            class_count,
            standardization,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.cols()
    }

    /// Copies the selected rows into a batch.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let dim = self.dim();
        let mut data = Vec::with_capacity(indices.len() * dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.images.row(i));
            labels.push(self.labels[i]);
        }
        let batch = Tensor::matrix(indices.len(), dim, data).expect("rows have the split's width");
        (batch, labels)
    }

    /// The first `n` examples.
    pub fn head(&self, n: usize) -> DatasetSplit {
        let n = n.min(self.len());
        let dim = self.dim();
        DatasetSplit {
            name: self.name.clone(),
            images: Tensor::matrix(n, dim, self.images.data()[..n * dim].to_vec()).expect("prefix of a valid split"),
            labels: self.labels[..n].to_vec(),
            class_count: self.class_count,
            standardization: self.standardization,
        }
    }
}

/// Train, validation and test splits sharing one standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: DatasetSplit,
    pub val: DatasetSplit,
    pub test: DatasetSplit,
}

fn scaled_pixels(raw: &[u8]) -> Vec<f64> {
    raw.iter().map(|&p| f64::from(p) / 255.0).collect()
}

fn labels_from(raw: &[u8], file: &Path) -> Result<Vec<usize>> {
    raw.iter()
        .enumerate()
        .map(|(i, &l)| {
            if (l as usize) < MNIST_CLASSES {
                Ok(l as usize)
            } else {
                Err(Error::format(
                    file.display().to_string(),
                    format!("label {l} at offset {} is not a digit", 8 + i),
                ))
            }
        })
        .collect()
}

fn read_pair(images_path: &Path, labels_path: &Path) -> Result<(usize, usize, Vec<f64>, Vec<usize>)> {
    let (n, rows, cols, pixels) = read_idx_images(images_path)?;
    let labels = labels_from(&read_idx_labels(labels_path)?, labels_path)?;
    if labels.len() != n {
        return Err(Error::format(
            labels_path.display().to_string(),
            format!("{} labels at offset 4 but {} holds {n} images", labels.len(), images_path.display()),
        ));
    }
    Ok((n, rows * cols, scaled_pixels(&pixels), labels))
}

/// One IDX image/label pair, scaled to `[0, 1]` and standardized with its
/// own global pixel statistics.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<DatasetSplit> {
    let (n, dim, mut pixels, labels) = read_pair(images_path, labels_path)?;
    let stats = Standardization::fit(&pixels);
    stats.apply(&mut pixels);
    let name = images_path
        .file_name()
        .map_or_else(|| "mnist".to_string(), |s| s.to_string_lossy().into_owned());
    DatasetSplit::new(name, Tensor::matrix(n, dim, pixels)?, labels, MNIST_CLASSES, stats)
}

/// MNIST from the four official IDX files in `dir`: the first 50k training
/// images train, the last 10k validate, the official test set tests. Pixels
/// are scaled to `[0, 1]` then standardized with the train split's global
/// mean and standard deviation.
pub fn load_mnist(dir: &Path) -> Result<Splits> {
    let (n, dim, pixels, labels) = read_pair(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    if n != MNIST_TRAIN_SIZE + MNIST_VAL_SIZE {
        return Err(Error::format(
            dir.join("train-images-idx3-ubyte").display().to_string(),
            format!("expected {} training images at offset 4, found {n}", MNIST_TRAIN_SIZE + MNIST_VAL_SIZE),
        ));
    }
    let (tn, tdim, mut test_pixels, test_labels) = read_pair(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?;
    if tdim != dim {
        return Err(Error::format(
            dir.join("t10k-images-idx3-ubyte").display().to_string(),
            format!("images have {tdim} pixels, training images have {dim}"),
        ));
    }
    let cut = MNIST_TRAIN_SIZE * dim;
    let stats = Standardization::fit(&pixels[..cut]);
    let mut train_pixels = pixels;
    let mut val_pixels = train_pixels.split_off(cut);
    stats.apply(&mut train_pixels);
    stats.apply(&mut val_pixels);
    stats.apply(&mut test_pixels);
    let mut train_labels = labels;
    let val_labels = train_labels.split_off(MNIST_TRAIN_SIZE);
    Ok(Splits {
        train: DatasetSplit::new(
            "train",
            Tensor::matrix(MNIST_TRAIN_SIZE, dim, train_pixels)?,
            train_labels,
            MNIST_CLASSES,
            stats,
        )?,
        val: DatasetSplit::new(
            "val",
            Tensor::matrix(MNIST_VAL_SIZE, dim, val_pixels)?,
            val_labels,
            MNIST_CLASSES,
            stats,
        )?,
        test: DatasetSplit::new("test", Tensor::matrix(tn, dim, test_pixels)?, test_labels, MNIST_CLASSES, stats)?,
    })
}

fn blob_means(classes: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|_| {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.iter_mut().for_each(|x| *x *= BLOB_RADIUS / norm);
            v
        })
        .collect()
}

fn blob_samples(name: &str, means: &[Vec<f64>], per_class: usize, rng: &mut ChaCha8Rng) -> Result<DatasetSplit> {
    let classes = means.len();
    let dim = means[0].len();
    let mut data = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for (c, mean) in means.iter().enumerate() {
            data.extend(mean.iter().map(|&mu| {
                let z: f64 = StandardNormal.sample(rng);
                mu + z
            }));
            labels.push(c);
        }
    }
    DatasetSplit::new(
        name,
        Tensor::matrix(labels.len(), dim, data)?,
        labels,
        classes,
        Standardization::IDENTITY,
    )
}

fn check_blob_args(classes: usize, per_class: usize, dim: usize) -> Result<()> {
    if classes < 2 || per_class == 0 || dim == 0 {
        return Err(Error::InvalidInput(format!(
            "blobs need ≥ 2 classes, ≥ 1 sample per class and dim ≥ 1 (got {classes}, {per_class}, {dim})"
        )));
    }
    Ok(())
}

/// Unit-variance Gaussian clusters around class means drawn uniformly on the
/// sphere of radius 4. Classes alternate, so every prefix is balanced.
pub fn synthetic_blobs(classes: usize, per_class: usize, dim: usize, seed: u64) -> Result<DatasetSplit> {
    check_blob_args(classes, per_class, dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = blob_means(classes, dim, &mut rng);
    blob_samples("blobs", &means, per_class, &mut rng)
}

/// Train/validation/test blobs around the same class means. The train split
/// equals `synthetic_blobs(classes, per_class, dim, seed)`.
pub fn synthetic_blob_splits(
    classes: usize,
    per_class: usize,
    eval_per_class: usize,
    dim: usize,
    seed: u64,
) -> Result<Splits> {
    check_blob_args(classes, per_class, dim)?;
    check_blob_args(classes, eval_per_class, dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = blob_means(classes, dim, &mut rng);
    let mut train = blob_samples("blobs", &means, per_class, &mut rng)?;
    train.name = "train".into();
    let val = blob_samples("val", &means, eval_per_class, &mut rng)?;
    let test = blob_samples("test", &means, eval_per_class, &mut rng)?;
    Ok(Splits { train, val, test })
}

/// One epoch's mini-batch order: a seeded permutation of `0..n` cut into
/// batches, the last one possibly short.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchOrder {
    order: Vec<usize>,
    batch_size: usize,
}

impl BatchOrder {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn iter(&self) -> std::slice::Chunks<'_, usize> {
        self.order.chunks(self.batch_size)
    }
}

/// Batches for `epoch`, shuffled with the seed `seed ^ epoch`.
pub fn batch_iterator(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<BatchOrder> {
    if batch_size == 0 || batch_size > n {
        return Err(Error::InvalidInput(format!(
            "batch size {batch_size} must lie in 1..={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ epoch));
    Ok(BatchOrder { order, batch_size })
}
