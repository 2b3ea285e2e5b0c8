//! Bit-exact wire framing for quantized tensors.
//!
//! Layout, in order, all multi-byte fields little-endian:
//!
//! ```text
//! magic     4  "DCNI"
//! version   1  = 1
//! kind      1  0=weights 1=bias 2=feature_map 3=end_of_stream
//! layer_id  2
//! chunk_idx 1
//! chunk_cnt 1
//! bits      1
//! frac_bits 1
//! rank      1
//! dims      4 * rank
//! payload   chunk element count * bits/8, signed little-endian
//! crc32     4  over everything above (IEEE polynomial)
//! ```
//!
//! Large tensors are split into frames of at most 64 KiB payload; every
//! frame repeats the full tensor dims, and `chunk_idx`/`chunk_cnt` place its
//! element range. An end-of-stream frame has rank 0 and no payload. The
//! byte-level contract is documented in `docs/wire-format.md`.

use thiserror::Error;

use super::quant::{QuantError, QuantScheme, QuantTensor};
use crate::tensor::Shape;

pub const FRAME_MAGIC: [u8; 4] = *b"DCNI";
pub const FRAME_VERSION: u8 = 1;
/// Hard payload ceiling per frame; LeNet-5's fc1 weights overflow it on
/// purpose so reassembly is always exercised.
pub const MAX_PAYLOAD_BYTES: usize = 64 * 1024;
const MAX_RANK: u8 = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame truncated: needed {needed} bytes, had {have}")]
    Truncated { needed: usize, have: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown frame kind {0}")]
    BadKind(u8),
    #[error("crc mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    BadCrc { stored: u32, computed: u32 },
    #[error("invalid chunk layout: index {index} of {count}")]
    BadChunk { index: u8, count: u8 },
    #[error("rank {0} exceeds the maximum of {MAX_RANK}")]
    BadRank(u8),
    #[error("declared dims are invalid or overflow")]
    BadDims,
    #[error("payload length {got} bytes does not fit the declared layout ({want} expected)")]
    PayloadLength { got: usize, want: usize },
    #[error("{0} trailing bytes after frame end")]
    TrailingBytes(usize),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error("tensor needs {0} chunks; a frame sequence carries at most 255")]
    TooManyChunks(usize),
}

/// What a frame carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Weights,
    Bias,
    FeatureMap,
    EndOfStream,
}

impl FrameKind {
    pub fn code(self) -> u8 {
        match self {
            FrameKind::Weights => 0,
            FrameKind::Bias => 1,
            FrameKind::FeatureMap => 2,
            FrameKind::EndOfStream => 3,
        }
    }

    fn from_code(code: u8) -> Result<Self, FrameError> {
        Ok(match code {
            0 => FrameKind::Weights,
            1 => FrameKind::Bias,
            2 => FrameKind::FeatureMap,
            3 => FrameKind::EndOfStream,
            other => return Err(FrameError::BadKind(other)),
        })
    }
}

/// One decoded frame: metadata plus this frame's slice of the tensor's
/// elements (already widened to i32).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    pub layer_id: u16,
    pub chunk_index: u8,
    pub chunk_count: u8,
    pub scheme: QuantScheme,
    /// Dims of the complete tensor, repeated on every chunk.
    pub dims: Vec<u32>,
    pub payload: Vec<i32>,
}

impl Frame {
    pub fn end_of_stream() -> Frame {
        Frame {
            kind: FrameKind::EndOfStream,
            layer_id: 0,
            chunk_index: 0,
            chunk_count: 1,
            scheme: QuantScheme::new(32, 0).unwrap(),
            dims: Vec::new(),
            payload: Vec::new(),
        }
    }

    pub fn elem_count(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    /// Shape of the complete tensor this frame belongs to.
    pub fn tensor_shape(&self) -> Result<Shape, FrameError> {
        Shape::new(self.dims.iter().map(|&d| d as usize).collect()).map_err(|_| FrameError::BadDims)
    }
}

/// Split a quantized tensor into wire frames, at most 64 KiB payload each.
pub fn frames_for_tensor(
    qt: &QuantTensor,
    kind: FrameKind,
    layer_id: u16,
) -> Result<Vec<Frame>, FrameError> {
    let scheme = qt.scheme();
    let dims: Vec<u32> = qt
        .shape()
        .dims()
        .iter()
        .map(|&d| u32::try_from(d).map_err(|_| FrameError::BadDims))
        .collect::<Result<_, _>>()?;
    if dims.len() > MAX_RANK as usize {
        return Err(FrameError::BadRank(dims.len() as u8));
    }
    let per_chunk = MAX_PAYLOAD_BYTES / scheme.bytes_per_elem();
    let chunk_count = qt.elem_count().div_ceil(per_chunk).max(1);
    if chunk_count > u8::MAX as usize {
        return Err(FrameError::TooManyChunks(chunk_count));
    }
    let mut frames = Vec::with_capacity(chunk_count);
    for (chunk_index, window) in qt.values().chunks(per_chunk).enumerate() {
        frames.push(Frame {
            kind,
            layer_id,
            chunk_index: chunk_index as u8,
            chunk_count: chunk_count as u8,
            scheme,
            dims: dims.clone(),
            payload: window.to_vec(),
        });
    }
    Ok(frames)
}

/// Serialize one frame to wire bytes.
pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let elem_bytes = frame.scheme.bytes_per_elem();
    let mut out =
        Vec::with_capacity(13 + 4 * frame.dims.len() + frame.payload.len() * elem_bytes + 4);
    out.extend_from_slice(&FRAME_MAGIC);
    out.push(FRAME_VERSION);
    out.push(frame.kind.code());
    out.extend_from_slice(&frame.layer_id.to_le_bytes());
    out.push(frame.chunk_index);
    out.push(frame.chunk_count);
    out.push(frame.scheme.bits());
    out.push(frame.scheme.frac_bits());
    out.push(frame.dims.len() as u8);
    for &d in &frame.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &q in &frame.payload {
        out.extend_from_slice(&q.to_le_bytes()[..elem_bytes]);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8], FrameError> {
    if bytes.len() < *at + n {
        return Err(FrameError::Truncated {
            needed: *at + n,
            have: bytes.len(),
        });
    }
    let slice = &bytes[*at..*at + n];
    *at += n;
    Ok(slice)
}

fn sign_extend_le(raw: &[u8]) -> i32 {
    match raw.len() {
        1 => raw[0] as i8 as i32,
        2 => i16::from_le_bytes([raw[0], raw[1]]) as i32,
        _ => i32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]),
    }
}

/// Parse and verify one frame. The buffer must contain exactly one frame;
/// every failure mode is reported distinctly.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    let mut at = 0usize;
    let magic = take(bytes, &mut at, 4)?;
    if magic != FRAME_MAGIC {
        return Err(FrameError::BadMagic([magic[0], magic[1], magic[2], magic[3]]));
    }
    let version = take(bytes, &mut at, 1)?[0];
    if version != FRAME_VERSION {
        return Err(FrameError::BadVersion(version));
    }
    let kind = FrameKind::from_code(take(bytes, &mut at, 1)?[0])?;
    let layer_id = u16::from_le_bytes(take(bytes, &mut at, 2)?.try_into().unwrap());
    let chunk_index = take(bytes, &mut at, 1)?[0];
    let chunk_count = take(bytes, &mut at, 1)?[0];
    let bits = take(bytes, &mut at, 1)?[0];
    let frac_bits = take(bytes, &mut at, 1)?[0];
    let rank = take(bytes, &mut at, 1)?[0];
    if rank > MAX_RANK {
        return Err(FrameError::BadRank(rank));
    }
    let scheme = QuantScheme::new(bits, frac_bits)?;
    if chunk_count == 0 || chunk_index >= chunk_count {
        return Err(FrameError::BadChunk {
            index: chunk_index,
            count: chunk_count,
        });
    }

    let mut dims = Vec::with_capacity(rank as usize);
    let mut elem_count: usize = 1;
    for _ in 0..rank {
        let d = u32::from_le_bytes(take(bytes, &mut at, 4)?.try_into().unwrap());
        if d == 0 {
            return Err(FrameError::BadDims);
        }
        elem_count = elem_count
            .checked_mul(d as usize)
            .ok_or(FrameError::BadDims)?;
        dims.push(d);
    }
    if rank == 0 {
        elem_count = 0;
    }

    // Work out how many elements this particular chunk should carry.
    let elem_bytes = scheme.bytes_per_elem();
    let per_chunk = MAX_PAYLOAD_BYTES / elem_bytes;
    let want_elems = if rank == 0 {
        0
    } else if chunk_count == 1 {
        elem_count
    } else {
        let start = chunk_index as usize * per_chunk;
        if start >= elem_count {
            return Err(FrameError::BadChunk {
                index: chunk_index,
                count: chunk_count,
            });
        }
        per_chunk.min(elem_count - start)
    };
    let body_len = bytes.len().saturating_sub(at + 4);
    if body_len != want_elems * elem_bytes {
        return Err(FrameError::PayloadLength {
            got: body_len,
            want: want_elems * elem_bytes,
        });
    }
    let payload_raw = take(bytes, &mut at, want_elems * elem_bytes)?;
    let stored_crc = u32::from_le_bytes(take(bytes, &mut at, 4)?.try_into().unwrap());
    if at != bytes.len() {
        return Err(FrameError::TrailingBytes(bytes.len() - at));
    }
    let computed = crc32fast::hash(&bytes[..bytes.len() - 4]);
    if computed != stored_crc {
        return Err(FrameError::BadCrc {
            stored: stored_crc,
            computed,
        });
    }

    let payload = payload_raw
        .chunks_exact(elem_bytes)
        .map(sign_extend_le)
        .collect();
    Ok(Frame {
        kind,
        layer_id,
        chunk_index,
        chunk_count,
        scheme,
        dims,
        payload,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantstream::quant::quantize;
    use crate::tensor::Tensor;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sample_frame() -> Frame {
        Frame {
            kind: FrameKind::Weights,
            layer_id: 3,
            chunk_index: 0,
            chunk_count: 1,
            scheme: QuantScheme::new(16, 8).unwrap(),
            dims: vec![2, 3],
            payload: vec![1, -2, 300, -300, 0, 127],
        }
    }

    #[test]
    fn roundtrip_preserves_every_field() {
        let f = sample_frame();
        let bytes = encode_frame(&f);
        assert_eq!(decode_frame(&bytes).unwrap(), f);
    }

    #[test]
    fn single_byte_payload_golden_layout() {
        let s = QuantScheme::new(8, 0).unwrap();
        let qt = QuantTensor::new(Shape::new(vec![1]).unwrap(), s, vec![5]).unwrap();
        let frames = frames_for_tensor(&qt, FrameKind::Weights, 9).unwrap();
        assert_eq!(frames.len(), 1);
        let bytes = encode_frame(&frames[0]);
        let mut want = Vec::new();
        want.extend_from_slice(b"DCNI");
        want.push(1); // version
        want.push(0); // kind = weights
        want.extend_from_slice(&9u16.to_le_bytes());
        want.push(0); // chunk_index
        want.push(1); // chunk_count
        want.push(8); // bits
        want.push(0); // frac_bits
        want.push(1); // rank
        want.extend_from_slice(&1u32.to_le_bytes());
        want.push(0x05); // the payload byte
        let crc = crc32fast::hash(&want);
        want.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn every_single_bit_flip_is_detected() {
        let f = sample_frame();
        let bytes = encode_frame(&f);
        for byte in 0..bytes.len() {
            for bit in 0..8 {
                let mut corrupt = bytes.clone();
                corrupt[byte] ^= 1 << bit;
                assert!(
                    decode_frame(&corrupt).is_err(),
                    "flip at byte {byte} bit {bit} went undetected"
                );
            }
        }
    }

    #[test]
    fn failure_modes_are_distinct() {
        let bytes = encode_frame(&sample_frame());

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            decode_frame(&bad_magic),
            Err(FrameError::BadMagic(_))
        ));

        let mut bad_version = bytes.clone();
        bad_version[4] = 7;
        assert!(matches!(
            decode_frame(&bad_version),
            Err(FrameError::BadVersion(7))
        ));

        assert!(matches!(
            decode_frame(&bytes[..10]),
            Err(FrameError::Truncated { .. })
        ));

        let mut bad_crc = bytes.clone();
        let last = bad_crc.len() - 1;
        bad_crc[last] ^= 0xff;
        assert!(matches!(decode_frame(&bad_crc), Err(FrameError::BadCrc { .. })));

        let mut trailing = bytes.clone();
        trailing.push(0);
        // Extra bytes land between payload and the expected crc position,
        // so the length check fires first.
        assert!(decode_frame(&trailing).is_err());
    }

    #[test]
    fn end_of_stream_has_rank_zero_and_no_payload() {
        let eos = Frame::end_of_stream();
        let bytes = encode_frame(&eos);
        let back = decode_frame(&bytes).unwrap();
        assert_eq!(back.kind, FrameKind::EndOfStream);
        assert!(back.dims.is_empty());
        assert!(back.payload.is_empty());
    }

    #[test]
    fn large_tensor_chunks_and_reassembles() {
        // 120x256 at 32 bits = 122,880 bytes -> two chunks.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f32> = (0..120 * 256).map(|_| rng.random_range(-0.5f32..0.5)).collect();
        let t = Tensor::from_dims(&[120, 256], data).unwrap();
        let qt = quantize(&t, QuantScheme::lossless()).tensor;
        let frames = frames_for_tensor(&qt, FrameKind::Weights, 7).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].payload.len(), MAX_PAYLOAD_BYTES / 4);
        assert_eq!(
            frames[1].payload.len(),
            120 * 256 - MAX_PAYLOAD_BYTES / 4
        );
        let mut all = Vec::new();
        for f in &frames {
            let back = decode_frame(&encode_frame(f)).unwrap();
            all.extend_from_slice(&back.payload);
        }
        assert_eq!(all, qt.values());
    }

    #[test]
    fn random_frames_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let bits = *[8u8, 16, 32].choose(&mut rng).unwrap();
            let s = QuantScheme::new(bits, rng.random_range(0..bits)).unwrap();
            let rank = rng.random_range(1..=4usize);
            let dims: Vec<usize> = (0..rank).map(|_| rng.random_range(1..=6usize)).collect();
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let t = Tensor::from_dims(&dims, data).unwrap();
            let qt = quantize(&t, s).tensor;
            let kind = *[FrameKind::Weights, FrameKind::Bias, FrameKind::FeatureMap]
                .choose(&mut rng)
                .unwrap();
            for f in frames_for_tensor(&qt, kind, rng.random()).unwrap() {
                assert_eq!(decode_frame(&encode_frame(&f)).unwrap(), f);
            }
        }
    }
}
