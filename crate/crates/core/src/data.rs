//! Datasets: MNIST IDX files, the PCA toy dataset and a synthetic fallback.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Labelled examples, one feature vector per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// One feature vector per example.
    pub inputs: Vec<Vec<f64>>,
    /// Class of each example.
    pub labels: Vec<usize>,
    /// Number of classes.
    pub classes: usize,
    /// Split tag, e.g. `train` or `pca-test`.
    pub split: String,
}

impl Dataset {
    /// Checks that every example has the same width and every label is below `classes`.
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize, split: &str) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Invalid(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(first) = inputs.first() {
            if inputs.iter().any(|x| x.len() != first.len()) {
                return Err(Error::Invalid("inputs have different lengths".into()));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Invalid(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
            split: split.to_string(),
        })
    }

    /// Number of examples.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Whether there are no examples.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of features per example (0 when empty).
    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    /// The first `k` examples (all if fewer).
    pub fn head(&self, k: usize) -> Dataset {
        let k = k.min(self.len());
        Dataset {
            inputs: self.inputs[..k].to_vec(),
            labels: self.labels[..k].to_vec(),
            classes: self.classes,
            split: self.split.clone(),
        }
    }

    /// Examples at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split: self.split.clone(),
        }
    }
}

fn parse_err<T>(offset: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        offset,
        msg: msg.into(),
    })
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => parse_err(offset, "truncated header"),
    }
}

/// Parses an IDX image file; pixels are scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return parse_err(0, format!("bad image magic {magic:#010x}"));
    }
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let body = &bytes[16..];
    if body.len() < n * size {
        return parse_err(bytes.len(), format!("truncated: expected {} pixel bytes", n * size));
    }
    Ok(body[..n * size]
        .chunks(size.max(1))
        .take(n)
        .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect())
}

/// Parses an IDX label file (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return parse_err(0, format!("bad label magic {magic:#010x}"));
    }
    let n = read_u32(bytes, 4)? as usize;
    match bytes.get(8..8 + n) {
        Some(b) => Ok(b.iter().map(|&y| y as usize).collect()),
        None => parse_err(bytes.len(), format!("truncated: expected {n} labels")),
    }
}

/// Serializes images (row-major bytes) into IDX format.
pub fn encode_idx_images(images: &[Vec<u8>], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

/// Encodes labels as an IDX label file.
pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Loads an IDX image/label file pair as a 10-class dataset.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let x = parse_idx_images(&std::fs::read(images.as_ref())?)?;
    let y = parse_idx_labels(&std::fs::read(labels.as_ref())?)?;
    let split = images
        .as_ref()
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(x, y, 10, &split)
}

/// Loads `train` or `t10k` MNIST from a directory of IDX files.
pub fn load_mnist(dir: impl AsRef<Path>, train: bool) -> Result<Dataset> {
    let prefix = if train { "train" } else { "t10k" };
    let dir = dir.as_ref();
    let mut d = load_idx(
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )?;
    d.split = prefix.to_string();
    Ok(d)
}

/// Principal directions of a sample, found by block power iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    /// Sample mean.
    pub mean: Vec<f64>,
    /// Unit-norm components, by decreasing variance.
    pub components: Vec<Vec<f64>>,
    /// Variance along each component.
    pub variances: Vec<f64>,
}

/// Convergence tolerance of the power iteration.
pub const PCA_TOLERANCE: f64 = 1e-9;
/// Iteration cap of the power iteration.
pub const PCA_MAX_ITERATIONS: usize = 10_000;

impl Pca {
    /// Top `dims` principal directions of `rows`.
    ///
    /// Orthogonal iteration on the covariance with a few extra vectors and a
    /// Rayleigh–Ritz step per sweep; stops when every wanted Ritz pair has a
    /// residual `‖Cv − λv‖` below the tolerance relative to the top
    /// eigenvalue, or after the iteration cap.
    pub fn fit(rows: &[Vec<f64>], dims: usize, seed: u64) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if n == 0 || dims == 0 || dims > d {
            return Err(Error::Invalid(format!("cannot fit {dims} components to {n}×{d} data")));
        }
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n as f64;
            }
        }
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
        let cov = x.tr_mul(&x) / n as f64;
        let block = (dims + 8).min(d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut q = DMatrix::from_fn(d, block, |_, _| normal.sample(&mut rng)).qr().q();
        let mut ritz = vec![0.0; block];
        let mut vecs = q.clone();
        for _ in 0..PCA_MAX_ITERATIONS {
            let z = &cov * &q;
            q = z.qr().q();
            let small = q.tr_mul(&cov) * &q;
            let eig = nalgebra::SymmetricEigen::new(small);
            let mut order: Vec<usize> = (0..block).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let vals: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
            let rot = DMatrix::from_fn(block, block, |i, j| eig.eigenvectors[(i, order[j])]);
            vecs = &q * rot;
            let scale = vals[0].abs().max(f64::MIN_POSITIVE);
            let top = vecs.columns(0, dims);
            let resid = &cov * top - top * DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&vals[..dims]));
            let change = resid.column_iter().map(|c| c.norm()).fold(0.0, f64::max) / scale;
            ritz = vals;
            q = vecs.clone();
            if change < PCA_TOLERANCE {
                break;
            }
        }
        let rank = ritz.iter().filter(|&&v| v > 1e-10 * ritz[0].max(0.0)).count();
        if rank < dims {
            return Err(Error::Invalid(format!(
                "data has rank {rank}, fewer than the {dims} requested components"
            )));
        }
        let components = (0..dims)
            .map(|k| {
                let mut c: Vec<f64> = vecs.column(k).iter().copied().collect();
                // Sign convention: largest-magnitude coordinate is positive.
                let big = c.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
                if big < 0.0 {
                    c.iter_mut().for_each(|v| *v = -*v);
                }
                c
            })
            .collect();
        Ok(Self {
            mean,
            components,
            variances: ritz[..dims].to_vec(),
        })
    }

    /// Coordinates of `x` in the principal basis, after centering.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect()
    }

    /// Point of input space with principal coordinates `z`.
    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (c, &w) in self.components.iter().zip(z) {
            for (xi, ci) in x.iter_mut().zip(c) {
                *xi += w * ci;
            }
        }
        x
    }

    /// Projects every example of `data`, keeping labels, under the split tag `split`.
    pub fn project_dataset(&self, data: &Dataset, split: &str) -> Dataset {
        Dataset {
            inputs: data.inputs.iter().map(|x| self.project(x)).collect(),
            labels: data.labels.clone(),
            classes: data.classes,
            split: split.to_string(),
        }
    }
}

/// Seeded sample of `n` distinct indices below `total`.
pub fn sample_indices(total: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(&mut rng);
    idx.truncate(n);
    idx
}

/// Samples `n` examples, fits `dims` principal components to them and
/// returns the projected sample with the fitted PCA. Features are not
/// rescaled.
pub fn build_toy_pca(source: &Dataset, n: usize, dims: usize, seed: u64) -> Result<(Dataset, Pca)> {
    if source.len() < n {
        return Err(Error::Invalid(format!(
            "need {n} examples for PCA, source has {}",
            source.len()
        )));
    }
    let sample = source.subset(&sample_indices(source.len(), n, seed));
    let pca = Pca::fit(&sample.inputs, dims, seed)?;
    Ok((pca.project_dataset(&sample, "pca-train"), pca))
}

/// Two Gaussian classes in `[0, 1]^dim` centred at 0.35 and 0.65.
pub fn synth(n: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.15).expect("valid deviation");
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let centre: f64 = if y == 0 { 0.35 } else { 0.65 };
        inputs.push(
            (0..dim)
                .map(|_| (centre + noise.sample(&mut rng)).clamp(0.0, 1.0))
                .collect(),
        );
        labels.push(y);
    }
    Dataset {
        inputs,
        labels,
        classes: 2,
        split: "synth".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_round_trip() {
        let imgs: Vec<Vec<u8>> = (0..4).map(|k| vec![k as u8 * 60; 784]).collect();
        let bytes = encode_idx_images(&imgs, 28, 28);
        let x = parse_idx_images(&bytes).unwrap();
        assert_eq!(x.len(), 4);
        assert!(x.iter().all(|r| r.len() == 784));
        let y = parse_idx_labels(&encode_idx_labels(&[1, 2, 3, 4])).unwrap();
        assert_eq!(y, vec![1, 2, 3, 4]);
    }

    #[test]
    fn full_byte_scales_to_one() {
        let x = parse_idx_images(&encode_idx_images(&[vec![255, 0]], 1, 2)).unwrap();
        assert_eq!(x[0], vec![1.0, 0.0]);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut bytes = encode_idx_images(&[vec![0; 4]], 2, 2);
        bytes[3] = 0x02;
        match parse_idx_images(&bytes) {
            Err(Error::Parse { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_body_reports_offset() {
        let bytes = encode_idx_images(&[vec![0; 4], vec![0; 4]], 2, 2);
        match parse_idx_images(&bytes[..bytes.len() - 1]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, bytes.len() - 1),
            other => panic!("{other:?}"),
        }
        assert!(parse_idx_labels(&[0, 0, 8]).is_err());
    }

    #[test]
    fn pca_recovers_line_direction() {
        let dir = [0.6, 0.8];
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|k| {
                let t = k as f64 / 7.0 - 3.0;
                vec![1.0 + t * dir[0], -2.0 + t * dir[1]]
            })
            .collect();
        let pca = Pca::fit(&rows, 1, 0).unwrap();
        let cos = pca.components[0][0] * dir[0] + pca.components[0][1] * dir[1];
        assert!(cos.abs() >= 1.0 - 1e-6, "{cos}");
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let rows: Vec<Vec<f64>> = (0..10).map(|k| vec![k as f64, 2.0 * k as f64]).collect();
        let err = Pca::fit(&rows, 2, 0).unwrap_err();
        assert!(err.to_string().contains("rank 1"), "{err}");
    }

    #[test]
    fn full_rank_projection_preserves_distances() {
        let d = synth(40, 5, 8);
        let pca = Pca::fit(&d.inputs, 5, 1).unwrap();
        let z: Vec<Vec<f64>> = d.inputs.iter().map(|x| pca.project(x)).collect();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        for i in 0..d.len() {
            for j in 0..i {
                assert!((dist(&d.inputs[i], &d.inputs[j]) - dist(&z[i], &z[j])).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn more_components_reconstruct_better() {
        let d = synth(200, 24, 9);
        let err = |k: usize| {
            let pca = Pca::fit(&d.inputs, k, 2).unwrap();
            d.inputs
                .iter()
                .map(|x| {
                    let r = pca.reconstruct(&pca.project(x));
                    r.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                })
                .sum::<f64>()
        };
        assert!(err(16) <= err(8));
    }

    #[test]
    fn synth_is_balanced_and_in_range() {
        let d = synth(100, 5, 3);
        assert_eq!(d.labels.iter().filter(|&&y| y == 1).count(), 50);
        assert!(d.inputs.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(d, synth(100, 5, 3));
    }
}
