//! IDX-format dataset loading (the standard MNIST container).

use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::tensor::{Shape, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: bad magic {got:#010x}, expected {want:#010x}")]
    BadMagic { path: String, got: u32, want: u32 },
    #[error("{path}: truncated ({have} bytes, needed {need})")]
    Truncated {
        path: String,
        have: usize,
        need: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: label {label} out of range")]
    BadLabel { path: String, label: u8 },
}

/// Images scaled into [0,1] with their 0-9 labels, index-aligned.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `n` samples (everything when `n` exceeds the set).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32, DataError> {
    if bytes.len() < at + 4 {
        return Err(DataError::Truncated {
            path: path.display().to_string(),
            have: bytes.len(),
            need: at + 4,
        });
    }
    Ok(u32::from_be_bytes([
        bytes[at],
        bytes[at + 1],
        bytes[at + 2],
        bytes[at + 3],
    ]))
}

/// Parse an IDX image/label file pair into a dataset. Pixels scale by
/// 1/255, so byte 255 reads back as exactly 1.0.
pub fn load_mnist(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset, DataError> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();

    let img_bytes = read_file(images_path)?;
    let magic = be_u32(&img_bytes, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: images_path.display().to_string(),
            got: magic,
            want: IDX_IMAGES_MAGIC,
        });
    }
    let count = be_u32(&img_bytes, 4, images_path)? as usize;
    let rows = be_u32(&img_bytes, 8, images_path)? as usize;
    let cols = be_u32(&img_bytes, 12, images_path)? as usize;
    let need = 16 + count * rows * cols;
    if img_bytes.len() < need {
        return Err(DataError::Truncated {
            path: images_path.display().to_string(),
            have: img_bytes.len(),
            need,
        });
    }

    let lbl_bytes = read_file(labels_path)?;
    let magic = be_u32(&lbl_bytes, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: labels_path.display().to_string(),
            got: magic,
            want: IDX_LABELS_MAGIC,
        });
    }
    let lbl_count = be_u32(&lbl_bytes, 4, labels_path)? as usize;
    if lbl_bytes.len() < 8 + lbl_count {
        return Err(DataError::Truncated {
            path: labels_path.display().to_string(),
            have: lbl_bytes.len(),
            need: 8 + lbl_count,
        });
    }
    if count != lbl_count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: lbl_count,
        });
    }

    let shape = Shape::new(vec![1, rows, cols]).expect("positive image dims");
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let start = 16 + i * rows * cols;
        let data: Vec<f32> = img_bytes[start..start + rows * cols]
            .iter()
            .map(|&b| b as f32 / 255.0)
            .collect();
        images.push(Tensor::new(shape.clone(), data).expect("length matches"));
    }
    let mut labels = Vec::with_capacity(count);
    for &label in &lbl_bytes[8..8 + count] {
        if label > 9 {
            return Err(DataError::BadLabel {
                path: labels_path.display().to_string(),
                label,
            });
        }
        labels.push(label);
    }
    Ok(Dataset { images, labels })
}

/// Encode raw images as an IDX image file body.
pub fn idx_image_bytes(images: &[[u8; 28 * 28]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * 28 * 28);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&28u32.to_be_bytes());
    out.extend_from_slice(&28u32.to_be_bytes());
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

/// Encode labels as an IDX label file body.
pub fn idx_label_bytes(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
