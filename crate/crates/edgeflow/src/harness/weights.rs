//! Trained-parameter persistence.
//!
//! Container layout, multi-byte fields little-endian:
//!
//! ```text
//! magic       4  "LWT1"
//! layer_count 2
//! per layer:
//!   name_len  1
//!   name      name_len bytes, utf-8
//!   w_rank    1
//!   w_dims    4 * w_rank
//!   w_data    4 * product(w_dims), f32
//!   b_rank    1
//!   b_dims    4 * b_rank
//!   b_data    4 * product(b_dims), f32
//! ```
//!
//! Trailing bytes are forbidden; loading validates every shape against the
//! target model.

use std::path::Path;

use thiserror::Error;

use crate::model::{ModelSpec, Parameters};
use crate::tensor::{Shape, Tensor};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"LWT1";

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad magic; not a weights container")]
    BadMagic,
    #[error("container truncated at byte {0}")]
    Corrupt(usize),
    #[error("{0} trailing bytes after the last layer")]
    TrailingBytes(usize),
    #[error("layer {layer}: stored shape {got} does not match the model's {want}")]
    ShapeMismatch {
        layer: String,
        got: String,
        want: String,
    },
    #[error("container names layer {0} which the model lacks")]
    UnknownLayer(String),
    #[error("container is missing layer {0}")]
    MissingLayer(String),
    #[error("layer name is not valid utf-8")]
    BadName,
}

fn push_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.push(t.rank() as u8);
    for &d in t.shape().dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize parameters to the container bytes.
pub fn weights_to_bytes(params: &Parameters) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&WEIGHTS_MAGIC);
    out.extend_from_slice(&(params.len() as u16).to_le_bytes());
    for (name, lp) in params.iter() {
        out.push(name.len() as u8);
        out.extend_from_slice(name.as_bytes());
        push_tensor(&mut out, &lp.weights);
        push_tensor(&mut out, &lp.bias);
    }
    out
}

pub fn save_weights(params: &Parameters, path: impl AsRef<Path>) -> Result<(), WeightsError> {
    std::fs::write(path.as_ref(), weights_to_bytes(params)).map_err(|source| WeightsError::Io {
        path: path.as_ref().display().to_string(),
        source,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightsError> {
        if self.bytes.len() < self.at + n {
            return Err(WeightsError::Corrupt(self.at));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WeightsError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WeightsError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<Tensor, WeightsError> {
        let rank = self.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32()? as usize);
        }
        let shape = Shape::new(dims).map_err(|_| WeightsError::Corrupt(self.at))?;
        let n = shape.elem_count();
        let raw = self.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor::new(shape, data).expect("length matches"))
    }
}

/// Parse container bytes and validate against the model: every
/// parameterized layer present with exactly the shapes the model implies.
pub fn weights_from_bytes(bytes: &[u8], m: &ModelSpec) -> Result<Parameters, WeightsError> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let count = r.u16()? as usize;
    let mut params = Parameters::new();
    for _ in 0..count {
        let name_len = r.u8()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| WeightsError::BadName)?
            .to_string();
        let weights = r.tensor()?;
        let bias = r.tensor()?;
        let Some((want_w, want_b)) = m.param_shapes(&name) else {
            return Err(WeightsError::UnknownLayer(name));
        };
        if weights.shape().dims() != want_w.as_slice() {
            return Err(WeightsError::ShapeMismatch {
                layer: name,
                got: weights.shape().to_string(),
                want: Shape::new(want_w).unwrap().to_string(),
            });
        }
        if bias.rank() != 1 || bias.elem_count() != want_b {
            return Err(WeightsError::ShapeMismatch {
                layer: name,
                got: bias.shape().to_string(),
                want: format!("[{want_b}]"),
            });
        }
        params.insert(name, weights, bias);
    }
    if r.at != bytes.len() {
        return Err(WeightsError::TrailingBytes(bytes.len() - r.at));
    }
    for layer in m.parameterized_layers() {
        if params.get(&layer.name).is_none() {
            return Err(WeightsError::MissingLayer(layer.name.clone()));
        }
    }
    Ok(params)
}

pub fn load_weights(path: impl AsRef<Path>, m: &ModelSpec) -> Result<Parameters, WeightsError> {
    let bytes = std::fs::read(path.as_ref()).map_err(|source| WeightsError::Io {
        path: path.as_ref().display().to_string(),
        source,
    })?;
    weights_from_bytes(&bytes, m)
}
