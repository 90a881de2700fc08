//! Datasets and deterministic batch iteration: synthetic Gaussian blobs,
//! IDX (MNIST-style) and CIFAR-10 binary readers.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape (input shape without the leading N axis).
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// Copies the given rows into a batch tensor plus labels.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let sample: usize = self.sample_shape().iter().product();
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        let mut data = Vec::with_capacity(indices.len() * sample);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.inputs.data()[i * sample..(i + 1) * sample]);
            labels.push(self.labels[i]);
        }
        (
            Tensor::from_vec(&shape, data).expect("gather length"),
            labels,
        )
    }

    /// Splits off the first `n` samples; `self` keeps the remainder.
    pub fn split_front(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::config(format!(
                "split point {n} outside dataset of {}",
                self.len()
            )));
        }
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        let (hi, hl) = self.gather(&head);
        let (ti, tl) = self.gather(&tail);
        Ok((
            Dataset {
                inputs: hi,
                labels: hl,
                class_count: self.class_count,
            },
            Dataset {
                inputs: ti,
                labels: tl,
                class_count: self.class_count,
            },
        ))
    }

    /// Per-channel standardization: x <- (x - mean[c]) / std[c] along axis 1.
    pub fn normalize(&mut self, mean: &[f32], std: &[f32]) -> Result<()> {
        let shape = self.inputs.shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::config("normalize needs channeled inputs"));
        }
        let channels = shape[1];
        if mean.len() != channels || std.len() != channels {
            return Err(Error::config(format!(
                "normalize constants for {} channels, data has {channels}",
                mean.len()
            )));
        }
        if std.iter().any(|&s| s <= 0.0) {
            return Err(Error::config("normalize std must be > 0"));
        }
        let inner: usize = shape[2..].iter().product();
        let data = self.inputs.data_mut();
        for n in 0..shape[0] {
            for c in 0..channels {
                let base = (n * channels + c) * inner;
                for i in 0..inner {
                    data[base + i] = (data[base + i] - mean[c]) / std[c];
                }
            }
        }
        Ok(())
    }
}

/// Gaussian blobs, one per class; labels assigned round-robin so every
/// class is populated. Centers sit on scaled axis directions when the
/// dimension allows, otherwise they are drawn from N(0, separation^2).
pub fn make_synthetic(
    seed: u64,
    n: usize,
    dims: usize,
    classes: usize,
    separation: f64,
) -> Result<Dataset> {
    if classes < 2 || n < classes || dims == 0 {
        return Err(Error::usage(format!(
            "invalid synthetic sizes: n={n}, dims={dims}, classes={classes}"
        )));
    }
    let mut rng = stream(seed, Purpose::Dataset, 0);
    let mut centers = vec![vec![0.0f32; dims]; classes];
    if classes <= dims {
        for (k, c) in centers.iter_mut().enumerate() {
            c[k] = separation as f32;
        }
    } else {
        for c in centers.iter_mut() {
            for v in c.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = (z * separation) as f32;
            }
        }
    }
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % classes;
        for d in 0..dims {
            let z: f64 = rng.sample(StandardNormal);
            data.push(centers[k][d] + z as f32);
        }
        labels.push(k);
    }
    Ok(Dataset {
        inputs: Tensor::from_vec(&[n, dims], data)?,
        labels,
        class_count: classes,
    })
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if end > bytes.len() {
        return Err(Error::format(format!(
            "file truncated at byte offset {offset}"
        )));
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Reads an IDX image/label file pair (big-endian headers, pixel bytes
/// scaled to [0,1]). Images come out shaped [N, 1, rows, cols].
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = fs::read(images_path)?;
    let lbl = fs::read(labels_path)?;

    let magic = read_u32_be(&img, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(format!(
            "bad IDX image magic {magic:#010x} at byte offset 0"
        )));
    }
    let n = read_u32_be(&img, 4)? as usize;
    let rows = read_u32_be(&img, 8)? as usize;
    let cols = read_u32_be(&img, 12)? as usize;
    let pixels = n * rows * cols;
    if img.len() != 16 + pixels {
        return Err(Error::format(format!(
            "IDX image payload is {} bytes, expected {} (short at byte offset {})",
            img.len() - 16,
            pixels,
            img.len()
        )));
    }

    let magic = read_u32_be(&lbl, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(format!(
            "bad IDX label magic {magic:#010x} at byte offset 0"
        )));
    }
    let n_labels = read_u32_be(&lbl, 4)? as usize;
    if lbl.len() != 8 + n_labels {
        return Err(Error::format(format!(
            "IDX label payload is {} bytes, expected {n_labels} (short at byte offset {})",
            lbl.len() - 8,
            lbl.len()
        )));
    }
    if n_labels != n {
        return Err(Error::format(format!(
            "IDX count mismatch: {n} images vs {n_labels} labels"
        )));
    }
    if n == 0 {
        return Err(Error::format("IDX files contain no samples"));
    }

    let data: Vec<f32> = img[16..].iter().map(|&b| b as f32 / 255.0).collect();
    let labels: Vec<usize> = lbl[8..].iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().max().unwrap() + 1;
    Ok(Dataset {
        inputs: Tensor::from_vec(&[n, 1, rows, cols], data)?,
        labels,
        class_count: class_count.max(2),
    })
}

const CIFAR_RECORD: usize = 3073; // 1 label byte + 3*32*32 channel-major pixels

/// Reads CIFAR-10 binary-version files; records are concatenated in the
/// order the paths are given.
pub fn load_cifar10_bin(paths: &[impl AsRef<Path>]) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let bytes = fs::read(p.as_ref())?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::format(format!(
                "{}: trailing partial record ({} bytes past offset {})",
                p.as_ref().display(),
                bytes.len() % CIFAR_RECORD,
                bytes.len() - bytes.len() % CIFAR_RECORD
            )));
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD) {
            let label = rec[0] as usize;
            if label > 9 {
                return Err(Error::format(format!(
                    "{}: label byte {label} out of range",
                    p.as_ref().display()
                )));
            }
            labels.push(label);
            data.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
        }
    }
    if labels.is_empty() {
        return Err(Error::format("no CIFAR-10 records found"));
    }
    let n = labels.len();
    Ok(Dataset {
        inputs: Tensor::from_vec(&[n, 3, 32, 32], data)?,
        labels,
        class_count: 10,
    })
}

/// How an epoch is chunked into batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    pub drop_last: bool,
}

/// Seeded Fisher-Yates permutation of [0,N) chunked by batch size.
/// The permutation is a pure function of (seed, epoch).
pub fn batches(dataset_len: usize, plan: &BatchPlan, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if plan.batch_size == 0 || plan.batch_size > dataset_len {
        return Err(Error::config(format!(
            "batch size {} invalid for dataset of {dataset_len}",
            plan.batch_size
        )));
    }
    let mut order: Vec<usize> = (0..dataset_len).collect();
    let mut rng = stream(plan.seed, Purpose::Shuffle, epoch as u64);
    order.shuffle(&mut rng);
    let mut out: Vec<Vec<usize>> = order
        .chunks(plan.batch_size)
        .map(|c| c.to_vec())
        .collect();
    if plan.drop_last && dataset_len % plan.batch_size != 0 {
        out.pop();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn synthetic_is_reproducible_and_covers_classes() {
        let a = make_synthetic(9, 10, 3, 2, 4.0).unwrap();
        let b = make_synthetic(9, 10, 3, 2, 4.0).unwrap();
        assert!(a.inputs.bit_eq(&b.inputs));
        assert_eq!(a.labels, b.labels);

        let tiny = make_synthetic(1, 2, 4, 2, 4.0).unwrap();
        assert_eq!(tiny.labels, vec![0, 1]);
    }

    #[test]
    fn synthetic_rejects_bad_sizes() {
        assert!(make_synthetic(0, 1, 3, 2, 1.0).is_err());
        assert!(make_synthetic(0, 4, 3, 1, 1.0).is_err());
    }

    fn write_idx(images: &[u8], labels: &[u8], n: u32, rows: u32, cols: u32) -> (tempfile::NamedTempFile, tempfile::NamedTempFile) {
        let mut img = tempfile::NamedTempFile::new().unwrap();
        img.write_all(&IDX_IMAGES_MAGIC.to_be_bytes()).unwrap();
        img.write_all(&n.to_be_bytes()).unwrap();
        img.write_all(&rows.to_be_bytes()).unwrap();
        img.write_all(&cols.to_be_bytes()).unwrap();
        img.write_all(images).unwrap();
        let mut lbl = tempfile::NamedTempFile::new().unwrap();
        lbl.write_all(&IDX_LABELS_MAGIC.to_be_bytes()).unwrap();
        lbl.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        lbl.write_all(labels).unwrap();
        (img, lbl)
    }

    #[test]
    fn idx_roundtrip_scales_bytes() {
        let (img, lbl) = write_idx(&[0, 85, 170, 255], &[1], 1, 2, 2);
        let ds = load_idx(img.path(), lbl.path()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.inputs.shape(), &[1, 1, 2, 2]);
        let expect = [0.0, 85.0 / 255.0, 170.0 / 255.0, 1.0];
        for (a, e) in ds.inputs.data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-6);
        }
        assert_eq!(ds.labels, vec![1]);
    }

    #[test]
    fn idx_single_zero_image() {
        let (img, lbl) = write_idx(&[0, 0, 0, 0], &[0], 1, 2, 2);
        let ds = load_idx(img.path(), lbl.path()).unwrap();
        assert_eq!(ds.len(), 1);
        assert!(ds.inputs.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn idx_count_mismatch_is_format_error() {
        let (img, lbl) = write_idx(&[0, 0, 0, 0], &[0, 1], 1, 2, 2);
        assert!(matches!(
            load_idx(img.path(), lbl.path()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn idx_bad_magic_reports_offset() {
        let mut img = tempfile::NamedTempFile::new().unwrap();
        img.write_all(&[9, 9, 9, 9]).unwrap();
        let (_, lbl) = write_idx(&[], &[], 0, 0, 0);
        let err = load_idx(img.path(), lbl.path()).unwrap_err();
        assert!(err.to_string().contains("byte offset 0"), "{err}");
    }

    #[test]
    fn cifar_single_record() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        let mut rec = vec![7u8];
        rec.extend(std::iter::repeat(255u8).take(3072));
        f.write_all(&rec).unwrap();
        let ds = load_cifar10_bin(&[f.path()]).unwrap();
        assert_eq!(ds.labels, vec![7]);
        assert_eq!(ds.inputs.shape(), &[1, 3, 32, 32]);
        assert!(ds.inputs.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cifar_concatenates_files_in_order() {
        let rec = |label: u8| {
            let mut r = vec![label];
            r.extend(std::iter::repeat(0u8).take(3072));
            r
        };
        let mut f1 = tempfile::NamedTempFile::new().unwrap();
        f1.write_all(&rec(0)).unwrap();
        f1.write_all(&rec(1)).unwrap();
        let mut f2 = tempfile::NamedTempFile::new().unwrap();
        f2.write_all(&rec(2)).unwrap();
        f2.write_all(&rec(3)).unwrap();
        let ds = load_cifar10_bin(&[f1.path(), f2.path()]).unwrap();
        assert_eq!(ds.labels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn cifar_partial_record_is_format_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&[1u8; 3073 + 5]).unwrap();
        assert!(matches!(load_cifar10_bin(&[f.path()]), Err(Error::Format(_))));
    }

    #[test]
    fn batches_cover_every_index_once() {
        let plan = BatchPlan {
            batch_size: 3,
            seed: 5,
            drop_last: false,
        };
        let bs = batches(10, &plan, 0).unwrap();
        assert_eq!(bs.len(), 4);
        let mut seen: Vec<usize> = bs.into_iter().flatten().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn drop_last_truncates() {
        let plan = BatchPlan {
            batch_size: 3,
            seed: 5,
            drop_last: true,
        };
        let bs = batches(10, &plan, 0).unwrap();
        assert_eq!(bs.len(), 3);
        assert_eq!(bs.iter().map(Vec::len).sum::<usize>(), 9);
    }

    #[test]
    fn same_seed_epoch_same_order_and_epochs_differ() {
        let plan = BatchPlan {
            batch_size: 4,
            seed: 11,
            drop_last: false,
        };
        let a = batches(16, &plan, 2).unwrap();
        let b = batches(16, &plan, 2).unwrap();
        assert_eq!(a, b);
        let c = batches(16, &plan, 3).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn normalize_applies_per_channel() {
        let mut ds = Dataset {
            inputs: Tensor::from_vec(&[1, 2, 2], vec![1.0, 3.0, 10.0, 20.0]).unwrap(),
            labels: vec![0],
            class_count: 2,
        };
        ds.normalize(&[2.0, 15.0], &[1.0, 5.0]).unwrap();
        assert_eq!(ds.inputs.data(), &[-1.0, 1.0, -1.0, 1.0]);
    }
}
