//! IDX dataset ingestion, deterministic batching, and a synthetic
//! image-classification dataset for environments without the canonical
//! files.
//!
//! Readers accept raw or gzip-compressed IDX input, detected by magic
//! bytes. Pixels are scaled to [0, 1] by 1/255; labels stay as raw class
//! ids.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Matrix;
use crate::rng::{domains, fisher_yates, stream_rng};
use crate::{CmrError, Result, Scalar};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Which split a dataset carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Loaded dataset: one image per row, pixels in [0, 1].
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub images: Matrix<T>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.images.cols()
    }

    /// First `n` items in stored order (desk-scale subsets).
    pub fn truncated(&self, n: usize) -> Dataset<T> {
        let n = n.min(self.len());
        let mut images = Matrix::zeros(n, self.features());
        for i in 0..n {
            images.row_mut(i).copy_from_slice(self.images.row(i));
        }
        Dataset { images, labels: self.labels[..n].to_vec(), split: self.split }
    }
}

/// Reads a whole file, transparently decompressing gzip input (detected by
/// its 0x1f 0x8b magic).
fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(|e| {
            CmrError::FormatError { offset: 0, message: format!("gzip decode failed: {e}") }
        })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(CmrError::FormatError {
            offset: bytes.len() as u64,
            message: format!("truncated while reading {what}"),
        });
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

/// Loads a matching pair of IDX image/label files.
pub fn load_idx<T: Scalar>(
    images_path: &Path,
    labels_path: &Path,
    split: Split,
) -> Result<Dataset<T>> {
    let img_bytes = read_maybe_gzip(images_path)?;
    let magic = read_u32_be(&img_bytes, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(CmrError::FormatError {
            offset: 0,
            message: format!("image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = read_u32_be(&img_bytes, 4, "image count")? as usize;
    let rows = read_u32_be(&img_bytes, 8, "image rows")? as usize;
    let cols = read_u32_be(&img_bytes, 12, "image cols")? as usize;
    let expected = 16 + count * rows * cols;
    if img_bytes.len() != expected {
        return Err(CmrError::FormatError {
            offset: img_bytes.len().min(expected) as u64,
            message: format!(
                "image payload is {} bytes, header implies {expected}",
                img_bytes.len()
            ),
        });
    }

    let lbl_bytes = read_maybe_gzip(labels_path)?;
    let magic = read_u32_be(&lbl_bytes, 0, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(CmrError::FormatError {
            offset: 0,
            message: format!("label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let lcount = read_u32_be(&lbl_bytes, 4, "label count")? as usize;
    if lbl_bytes.len() != 8 + lcount {
        return Err(CmrError::FormatError {
            offset: lbl_bytes.len().min(8 + lcount) as u64,
            message: format!("label payload is {} bytes, header implies {}", lbl_bytes.len(), 8 + lcount),
        });
    }
    if lcount != count {
        return Err(CmrError::FormatError {
            offset: 4,
            message: format!("{count} images but {lcount} labels"),
        });
    }
    if count == 0 {
        return Err(CmrError::FormatError { offset: 4, message: "empty dataset".into() });
    }

    let features = rows * cols;
    let scale = T::one() / T::from_f64_lossy(255.0);
    let mut images = Matrix::zeros(count, features);
    for (dst, &px) in images.data_mut().iter_mut().zip(&img_bytes[16..]) {
        *dst = T::from_f64_lossy(px as f64) * scale;
    }
    let labels = lbl_bytes[8..].to_vec();
    Ok(Dataset { images, labels, split })
}

/// Writes an IDX3 image file (raw, uncompressed). `pixels` holds
/// `count * rows * cols` bytes.
pub fn write_idx_images(path: &Path, pixels: &[u8], count: usize, rows: usize, cols: usize) -> Result<()> {
    if pixels.len() != count * rows * cols {
        return Err(CmrError::InvalidState(format!(
            "pixel buffer {} does not match {count}x{rows}x{cols}",
            pixels.len()
        )));
    }
    let mut bytes = Vec::with_capacity(16 + pixels.len());
    bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(count as u32).to_be_bytes());
    bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    bytes.extend_from_slice(pixels);
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Writes an IDX1 label file (raw, uncompressed).
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Deterministic minibatch sequence: one Fisher-Yates permutation per
/// (seed, epoch), final short batch included.
pub struct BatchIter<'a, T> {
    dataset: &'a Dataset<T>,
    order: Vec<u32>,
    batch_size: usize,
    pos: usize,
}

impl<'a, T: Scalar> Iterator for BatchIter<'a, T> {
    type Item = (Matrix<T>, Vec<u8>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        let mut images = Matrix::zeros(idx.len(), self.dataset.features());
        let mut labels = Vec::with_capacity(idx.len());
        for (row, &i) in idx.iter().enumerate() {
            images.row_mut(row).copy_from_slice(self.dataset.images.row(i as usize));
            labels.push(self.dataset.labels[i as usize]);
        }
        self.pos = end;
        Some((images, labels))
    }
}

/// Shuffled minibatches for one epoch.
pub fn batches<T: Scalar>(
    dataset: &Dataset<T>,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> BatchIter<'_, T> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<u32> = (0..dataset.len() as u32).collect();
    let mut rng = stream_rng(seed, domains::SHUFFLE, epoch);
    fisher_yates(&mut rng, &mut order);
    BatchIter { dataset, order, batch_size, pos: 0 }
}

/// Number of optimizer steps in one epoch.
pub fn steps_per_epoch(count: usize, batch_size: usize) -> u64 {
    (count as u64).div_ceil(batch_size as u64)
}

/// Synthetic 10-class 28x28 dataset with MNIST-like framing: smooth class
/// prototypes with per-sample translation, contrast jitter, and pixel
/// noise. Deterministic per seed; written through the IDX writers so the
/// real loader path is exercised.
pub mod synthetic {
    use super::*;

    pub const IMAGE_SIDE: usize = 28;
    const COARSE: usize = 7;

    /// Canonical file names inside a data directory.
    pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
    pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
    pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
    pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

    fn prototypes(rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..10)
            .map(|_| {
                // Coarse random field, bilinearly upsampled into a smooth blob.
                let coarse: Vec<f64> = (0..COARSE * COARSE).map(|_| rng.random::<f64>()).collect();
                let mut img = vec![0.0f64; IMAGE_SIDE * IMAGE_SIDE];
                let scale = (COARSE - 1) as f64 / (IMAGE_SIDE - 1) as f64;
                for y in 0..IMAGE_SIDE {
                    for x in 0..IMAGE_SIDE {
                        let fy = y as f64 * scale;
                        let fx = x as f64 * scale;
                        let y0 = fy.floor() as usize;
                        let x0 = fx.floor() as usize;
                        let y1 = (y0 + 1).min(COARSE - 1);
                        let x1 = (x0 + 1).min(COARSE - 1);
                        let dy = fy - y0 as f64;
                        let dx = fx - x0 as f64;
                        let v = coarse[y0 * COARSE + x0] * (1.0 - dy) * (1.0 - dx)
                            + coarse[y0 * COARSE + x1] * (1.0 - dy) * dx
                            + coarse[y1 * COARSE + x0] * dy * (1.0 - dx)
                            + coarse[y1 * COARSE + x1] * dy * dx;
                        // Sharpen so classes have distinct bright structure.
                        img[y * IMAGE_SIDE + x] = (v * v * 0.9).clamp(0.0, 1.0);
                    }
                }
                img
            })
            .collect()
    }

    fn render_sample(proto: &[f64], rng: &mut impl Rng) -> Vec<u8> {
        let shift_y = rng.random_range(-2i32..=2);
        let shift_x = rng.random_range(-2i32..=2);
        let contrast = 0.75 + 0.5 * rng.random::<f64>();
        let brightness = -0.08 + 0.16 * rng.random::<f64>();
        let side = IMAGE_SIDE as i32;
        let mut out = Vec::with_capacity(IMAGE_SIDE * IMAGE_SIDE);
        for y in 0..side {
            for x in 0..side {
                let sy = y - shift_y;
                let sx = x - shift_x;
                let base = if (0..side).contains(&sy) && (0..side).contains(&sx) {
                    proto[(sy * side + sx) as usize]
                } else {
                    0.0
                };
                let noise: f64 = StandardNormal.sample(rng);
                let v = (base * contrast + brightness + 0.10 * noise).clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
        out
    }

    /// Generates one split: balanced labels in shuffled order.
    fn generate_split(
        seed: u64,
        stream: u64,
        count: usize,
        protos: &[Vec<f64>],
    ) -> (Vec<u8>, Vec<u8>) {
        let mut rng = stream_rng(seed, domains::SYNTH, stream);
        let mut labels: Vec<u8> = (0..count).map(|i| (i % 10) as u8).collect();
        fisher_yates(&mut rng, &mut labels);
        let mut pixels = Vec::with_capacity(count * IMAGE_SIDE * IMAGE_SIDE);
        for &label in &labels {
            pixels.extend(render_sample(&protos[label as usize], &mut rng));
        }
        (pixels, labels)
    }

    /// Marker file written next to generated data so tooling can tell the
    /// stand-in apart from canonical files.
    pub const MARKER: &str = "synthetic.marker";

    /// Writes the four canonical IDX files into `dir`.
    pub fn generate_files(dir: &Path, train_count: usize, test_count: usize, seed: u64) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut proto_rng = stream_rng(seed, domains::SYNTH, 0);
        let protos = prototypes(&mut proto_rng);

        let (train_px, train_lbl) = generate_split(seed, 1, train_count, &protos);
        write_idx_images(&dir.join(TRAIN_IMAGES), &train_px, train_count, IMAGE_SIDE, IMAGE_SIDE)?;
        write_idx_labels(&dir.join(TRAIN_LABELS), &train_lbl)?;

        let (test_px, test_lbl) = generate_split(seed, 2, test_count, &protos);
        write_idx_images(&dir.join(TEST_IMAGES), &test_px, test_count, IMAGE_SIDE, IMAGE_SIDE)?;
        write_idx_labels(&dir.join(TEST_LABELS), &test_lbl)?;
        std::fs::write(
            dir.join(MARKER),
            format!("generated stand-in dataset: seed {seed}, train {train_count}, test {test_count}\n"),
        )?;
        Ok(())
    }

    /// True when `dir` holds generated (non-canonical) data.
    pub fn is_synthetic_dir(dir: &Path) -> bool {
        dir.join(MARKER).exists()
    }
}

/// Loads the train/test pair from a directory laid out with the canonical
/// file names (gzip variants accepted).
pub fn load_dir<T: Scalar>(dir: &Path) -> Result<(Dataset<T>, Dataset<T>)> {
    let find = |base: &str| -> Result<std::path::PathBuf> {
        let raw = dir.join(base);
        if raw.exists() {
            return Ok(raw);
        }
        let gz = dir.join(format!("{base}.gz"));
        if gz.exists() {
            return Ok(gz);
        }
        Err(CmrError::InvalidState(format!(
            "missing {base}(.gz) under {}",
            dir.display()
        )))
    };
    let train = load_idx(
        &find(synthetic::TRAIN_IMAGES)?,
        &find(synthetic::TRAIN_LABELS)?,
        Split::Train,
    )?;
    let test =
        load_idx(&find(synthetic::TEST_IMAGES)?, &find(synthetic::TEST_LABELS)?, Split::Test)?;
    Ok((train, test))
}

/// True when all four canonical files (raw or .gz) are present.
pub fn dir_has_dataset(dir: &Path) -> bool {
    [
        synthetic::TRAIN_IMAGES,
        synthetic::TRAIN_LABELS,
        synthetic::TEST_IMAGES,
        synthetic::TEST_LABELS,
    ]
    .iter()
    .all(|base| dir.join(base).exists() || dir.join(format!("{base}.gz")).exists())
}
