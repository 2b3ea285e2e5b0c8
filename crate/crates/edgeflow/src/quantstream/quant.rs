//! Symmetric power-of-two fixed-point quantization.
//!
//! `q = clamp(round(x * 2^F), -2^(bits-1), 2^(bits-1)-1)` with half-away-
//! from-zero rounding, and `x' = q / 2^F` on the way back. The power-of-two
//! scale makes dequantization exact in binary floating point, so the only
//! loss is the rounding step. Rounding happens in f64: an f32 value times an
//! exact power of two is exactly representable there, which keeps the
//! round-trip error within half a quantization step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Shape, Tensor};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QuantError {
    #[error("unsupported bit width {0}; expected 8, 16 or 32")]
    BadBits(u8),
    #[error("frac_bits {frac} out of range for {bits}-bit values (max {})", bits - 1)]
    BadFracBits { bits: u8, frac: u8 },
    #[error("quantized value {value} outside the {bits}-bit range")]
    OutOfRange { value: i32, bits: u8 },
    #[error("value count {values} does not match shape element count {expected}")]
    CountMismatch { values: usize, expected: usize },
}

/// Fixed-point layout: `bits`-wide signed integers scaled by `2^frac_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantScheme {
    bits: u8,
    frac_bits: u8,
}

impl QuantScheme {
    pub fn new(bits: u8, frac_bits: u8) -> Result<Self, QuantError> {
        if !matches!(bits, 8 | 16 | 32) {
            return Err(QuantError::BadBits(bits));
        }
        if frac_bits > bits - 1 {
            return Err(QuantError::BadFracBits {
                bits,
                frac: frac_bits,
            });
        }
        Ok(QuantScheme { bits, frac_bits })
    }

    /// Near-lossless default for parameter and feature-map streaming.
    pub fn lossless() -> Self {
        QuantScheme {
            bits: 32,
            frac_bits: 16,
        }
    }

    /// Narrow configuration that makes quantization loss visible.
    pub fn lossy8() -> Self {
        QuantScheme {
            bits: 8,
            frac_bits: 7,
        }
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn frac_bits(&self) -> u8 {
        self.frac_bits
    }

    pub fn bytes_per_elem(&self) -> usize {
        self.bits as usize / 8
    }

    pub fn scale(&self) -> f64 {
        (1u64 << self.frac_bits) as f64
    }

    pub fn min_q(&self) -> i32 {
        match self.bits {
            8 => i8::MIN as i32,
            16 => i16::MIN as i32,
            _ => i32::MIN,
        }
    }

    pub fn max_q(&self) -> i32 {
        match self.bits {
            8 => i8::MAX as i32,
            16 => i16::MAX as i32,
            _ => i32::MAX,
        }
    }

    /// Largest representable magnitude, `(2^(bits-1)-1) / 2^F`.
    pub fn max_value(&self) -> f64 {
        self.max_q() as f64 / self.scale()
    }
}

/// Fixed-point tensor. Values are stored widened to i32 but always lie
/// within the scheme's range; the wire codec writes exactly
/// `bits/8` bytes per element.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    shape: Shape,
    scheme: QuantScheme,
    q: Vec<i32>,
}

impl QuantTensor {
    pub fn new(shape: Shape, scheme: QuantScheme, q: Vec<i32>) -> Result<Self, QuantError> {
        if q.len() != shape.elem_count() {
            return Err(QuantError::CountMismatch {
                values: q.len(),
                expected: shape.elem_count(),
            });
        }
        for &v in &q {
            if v < scheme.min_q() || v > scheme.max_q() {
                return Err(QuantError::OutOfRange {
                    value: v,
                    bits: scheme.bits(),
                });
            }
        }
        Ok(QuantTensor { shape, scheme, q })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn scheme(&self) -> QuantScheme {
        self.scheme
    }

    pub fn values(&self) -> &[i32] {
        &self.q
    }

    pub fn elem_count(&self) -> usize {
        self.q.len()
    }

    pub fn payload_bytes(&self) -> usize {
        self.q.len() * self.scheme.bytes_per_elem()
    }
}

/// Quantization result: the integer tensor plus how many elements hit the
/// clamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub tensor: QuantTensor,
    pub saturated: usize,
}

/// Round-and-clamp every element into the scheme's integer lattice.
/// Saturation is defined behavior, counted rather than rejected.
pub fn quantize(t: &Tensor, scheme: QuantScheme) -> Quantized {
    let scale = scheme.scale();
    let (lo, hi) = (scheme.min_q(), scheme.max_q());
    let mut saturated = 0usize;
    let q = t
        .data()
        .iter()
        .map(|&x| {
            let ideal = (x as f64 * scale).round();
            if ideal < lo as f64 {
                saturated += 1;
                lo
            } else if ideal > hi as f64 {
                saturated += 1;
                hi
            } else {
                ideal as i32
            }
        })
        .collect();
    let tensor = QuantTensor::new(t.shape().clone(), scheme, q).expect("clamped values in range");
    Quantized { tensor, saturated }
}

/// Exact inverse scaling, `x' = q / 2^F`.
pub fn dequantize(qt: &QuantTensor) -> Tensor {
    let scale = qt.scheme().scale();
    let data = qt.values().iter().map(|&q| (q as f64 / scale) as f32).collect();
    Tensor::new(qt.shape().clone(), data).expect("same element count")
}

/// Quantize-then-dequantize, the exact values a receiver reconstructs.
pub fn quantize_roundtrip(t: &Tensor, scheme: QuantScheme) -> (Tensor, usize) {
    let q = quantize(t, scheme);
    (dequantize(&q.tensor), q.saturated)
}
