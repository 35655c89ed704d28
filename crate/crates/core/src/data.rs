//! Dataset loading and synthesis: the MNIST IDX binary format plus
//! deterministic Gaussian-blob generation for desk-scale experiments.
//!
//! IDX layout (big-endian): images carry magic `0x00000803` and dims
//! `[n, rows, cols]` of `u8` pixels; labels carry magic `0x00000801` and
//! `[n]` of `u8` labels. Pixels are scaled by `1/255` into `[0,1]` on load.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{Rng, RunRng, Stream};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// An immutable labeled dataset with inputs in `[0,1]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    inputs: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    classes: usize,
    split: String,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, dim: usize, labels: Vec<usize>, classes: usize, split: &str) -> Result<Self> {
        if dim == 0 || inputs.len() != labels.len() * dim {
            return Err(Error::Shape(format!(
                "dataset: {} values inconsistent with {} labels × dim {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if inputs.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(Error::Numeric("dataset inputs must be finite and in [0,1]".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Param(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Self { inputs, dim, labels, classes, split: split.to_string() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self) -> &str {
        &self.split
    }

    pub fn input_row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    /// Gathers the given rows into a `[n×dim]` tensor plus their labels.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.input_row(i));
            labels.push(self.labels[i]);
        }
        let t = Tensor::new(&[indices.len(), self.dim], values).expect("gather shape");
        (t, labels)
    }

    /// The first `n` examples as one batch tensor.
    pub fn head_batch(&self, n: usize) -> (Tensor, Vec<usize>) {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.gather(&idx)
    }

    /// A copy of the first `n` examples.
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            inputs: self.inputs[..n * self.dim].to_vec(),
            dim: self.dim,
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
            split: self.split.clone(),
        }
    }

    /// Snaps every input to the nearest 1/255 step, the representable grid
    /// of the u8 IDX encoding.
    pub fn quantized_u8(mut self) -> Self {
        for v in &mut self.inputs {
            *v = (*v * 255.0).round() / 255.0;
        }
        self
    }
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if end > bytes.len() {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            msg: format!("truncated: need {end} bytes for header field at {offset}"),
        });
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

/// Loads an MNIST-layout IDX image/label file pair. `limit` truncates to the
/// first examples; `limit = 0` yields a valid empty dataset.
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<Dataset> {
    let img_bytes = fs::read(images_path)?;
    let lbl_bytes = fs::read(labels_path)?;

    let img_magic = read_u32_be(&img_bytes, 0)?;
    if img_magic != IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad image magic {img_magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let n_images = read_u32_be(&img_bytes, 4)? as usize;
    let rows = read_u32_be(&img_bytes, 8)? as usize;
    let cols = read_u32_be(&img_bytes, 12)? as usize;
    let dim = rows * cols;
    let expected = 16 + n_images * dim;
    if img_bytes.len() < expected {
        return Err(Error::Format {
            offset: img_bytes.len() as u64,
            msg: format!("image payload truncated: expected {expected} bytes"),
        });
    }

    let lbl_magic = read_u32_be(&lbl_bytes, 0)?;
    if lbl_magic != LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad label magic {lbl_magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }
    let n_labels = read_u32_be(&lbl_bytes, 4)? as usize;
    if n_labels != n_images {
        return Err(Error::Format {
            offset: 4,
            msg: format!("count mismatch: {n_images} images but {n_labels} labels"),
        });
    }
    if lbl_bytes.len() < 8 + n_labels {
        return Err(Error::Format {
            offset: lbl_bytes.len() as u64,
            msg: format!("label payload truncated: expected {} bytes", 8 + n_labels),
        });
    }

    let n = limit.map_or(n_images, |l| l.min(n_images));
    let mut inputs = Vec::with_capacity(n * dim);
    for &byte in &img_bytes[16..16 + n * dim] {
        inputs.push(byte as f64 / 255.0);
    }
    let labels: Vec<usize> = lbl_bytes[8..8 + n].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(10, |&m| (m + 1).max(10)).max(2);
    Dataset::new(inputs, dim.max(1), labels, classes, "idx")
}

/// Writes a dataset as an IDX pair, quantizing inputs to u8. A dataset whose
/// values already sit on the 1/255 grid round-trips exactly through
/// [`load_idx`]. The dimension must factor as rows×cols; square dims are
/// written as such, anything else as a single row.
pub fn write_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let side = (ds.dim() as f64).sqrt() as usize;
    let (rows, cols) = if side * side == ds.dim() { (side, side) } else { (1, ds.dim()) };

    let mut img = Vec::with_capacity(16 + ds.len() * ds.dim());
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for i in 0..ds.len() {
        for &v in ds.input_row(i) {
            img.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    fs::write(images_path, img)?;

    let mut lbl = Vec::with_capacity(8 + ds.len());
    lbl.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    for &y in ds.labels() {
        if y > 255 {
            return Err(Error::Param(format!("label {y} does not fit in a byte")));
        }
        lbl.push(y as u8);
    }
    fs::write(labels_path, lbl)?;
    Ok(())
}

/// `C` Gaussian clusters with fixed uniform centers in `[0,1]^dim`, clipped
/// to `[0,1]`. Deterministic per seed; examples are laid out class-major
/// with exactly `n_per_class` each.
pub fn synth_blobs(seed: u64, n_per_class: usize, classes: usize, dim: usize, spread: f64) -> Result<Dataset> {
    let (train, _) = synth_blobs_split(seed, n_per_class, 0, classes, dim, spread)?;
    Ok(train)
}

/// Train/test blob pair drawn around the *same* centers (one classification
/// problem, two independent samples).
pub fn synth_blobs_split(
    seed: u64,
    n_train_per_class: usize,
    n_test_per_class: usize,
    classes: usize,
    dim: usize,
    spread: f64,
) -> Result<(Dataset, Dataset)> {
    if classes < 3 {
        return Err(Error::Param(format!("synth_blobs needs C >= 3 classes, got {classes}")));
    }
    if dim < 2 {
        return Err(Error::Param(format!("synth_blobs needs dim >= 2, got {dim}")));
    }
    if spread < 0.0 || !spread.is_finite() {
        return Err(Error::Param(format!("spread must be finite and >= 0, got {spread}")));
    }
    let mut rng = RunRng::new(seed).stream(Stream::Data);
    let centers: Vec<f64> = (0..classes * dim).map(|_| rng.random_range(0.0..1.0)).collect();
    let sample = |n_per_class: usize, split: &str, rng: &mut Rng| -> Result<Dataset> {
        let mut inputs = Vec::with_capacity(classes * n_per_class * dim);
        let mut labels = Vec::with_capacity(classes * n_per_class);
        for class in 0..classes {
            let center = &centers[class * dim..(class + 1) * dim];
            for _ in 0..n_per_class {
                for &c in center {
                    let noise: f64 = StandardNormal.sample(rng);
                    inputs.push((c + spread * noise).clamp(0.0, 1.0));
                }
                labels.push(class);
            }
        }
        Dataset::new(inputs, dim, labels, classes, split)
    };
    let train = sample(n_train_per_class, "synth_blobs", &mut rng)?;
    let test = sample(n_test_per_class, "synth_blobs_test", &mut rng)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_per_seed() {
        let a = synth_blobs(5, 10, 3, 4, 0.2).unwrap();
        let b = synth_blobs(5, 10, 3, 4, 0.2).unwrap();
        assert_eq!(a.input_row(7), b.input_row(7));
        assert_eq!(a.labels(), b.labels());
        let c = synth_blobs(6, 10, 3, 4, 0.2).unwrap();
        assert_ne!(a.input_row(0), c.input_row(0));
    }

    #[test]
    fn blobs_zero_spread_sit_on_centers() {
        let ds = synth_blobs(1, 5, 3, 4, 0.0).unwrap();
        for class in 0..3 {
            let first = ds.input_row(class * 5).to_vec();
            for i in 0..5 {
                assert_eq!(ds.input_row(class * 5 + i), &first[..]);
            }
        }
    }

    #[test]
    fn blobs_class_counts_exact() {
        let ds = synth_blobs(2, 7, 4, 3, 0.1).unwrap();
        for class in 0..4 {
            assert_eq!(ds.labels().iter().filter(|&&l| l == class).count(), 7);
        }
    }

    #[test]
    fn blobs_reject_two_classes() {
        assert!(matches!(synth_blobs(1, 5, 2, 4, 0.1), Err(Error::Param(_))));
    }

    #[test]
    fn idx_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("im.idx");
        let lbl = dir.path().join("lb.idx");
        let ds = synth_blobs(3, 4, 3, 9, 0.3).unwrap().quantized_u8();
        write_idx(&ds, &img, &lbl).unwrap();
        let back = load_idx(&img, &lbl, None).unwrap();
        assert_eq!(back.len(), ds.len());
        assert_eq!(back.dim(), ds.dim());
        assert_eq!(back.labels(), ds.labels());
        for i in 0..ds.len() {
            assert_eq!(back.input_row(i), ds.input_row(i), "row {i}");
        }
    }

    #[test]
    fn idx_pixel_scaling_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("im.idx");
        let lbl = dir.path().join("lb.idx");
        let ds = Dataset::new(vec![1.0, 0.0, 0.5, 0.25], 4, vec![0], 10, "t").unwrap();
        write_idx(&ds, &img, &lbl).unwrap();
        let back = load_idx(&img, &lbl, None).unwrap();
        assert_eq!(back.input_row(0)[0], 1.0);
        assert_eq!(back.input_row(0)[1], 0.0);
    }

    #[test]
    fn idx_limit_zero_is_valid_empty() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("im.idx");
        let lbl = dir.path().join("lb.idx");
        let ds = synth_blobs(4, 3, 3, 4, 0.1).unwrap().quantized_u8();
        write_idx(&ds, &img, &lbl).unwrap();
        let empty = load_idx(&img, &lbl, Some(0)).unwrap();
        assert!(empty.is_empty());
        let limited = load_idx(&img, &lbl, Some(2)).unwrap();
        assert_eq!(limited.len(), 2);
    }

    #[test]
    fn idx_bad_magic_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("im.idx");
        let lbl = dir.path().join("lb.idx");
        fs::write(&img, [0u8; 20]).unwrap();
        fs::write(&lbl, [0u8; 12]).unwrap();
        match load_idx(&img, &lbl, None) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn idx_count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("im.idx");
        let lbl = dir.path().join("lb.idx");
        let ds = synth_blobs(4, 3, 3, 4, 0.1).unwrap().quantized_u8();
        write_idx(&ds, &img, &lbl).unwrap();
        // rewrite the label header with a wrong count
        let mut bytes = fs::read(&lbl).unwrap();
        bytes[4..8].copy_from_slice(&7u32.to_be_bytes());
        fs::write(&lbl, bytes).unwrap();
        assert!(matches!(load_idx(&img, &lbl, None), Err(Error::Format { .. })));
    }

    #[test]
    fn idx_truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("im.idx");
        let lbl = dir.path().join("lb.idx");
        let ds = synth_blobs(4, 3, 3, 4, 0.1).unwrap().quantized_u8();
        write_idx(&ds, &img, &lbl).unwrap();
        let bytes = fs::read(&img).unwrap();
        fs::write(&img, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_idx(&img, &lbl, None), Err(Error::Format { .. })));
    }
}
