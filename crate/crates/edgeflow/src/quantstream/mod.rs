//! Fixed-point quantization and the bit-exact wire protocol that streams
//! parameters and feature maps at runtime.

mod frame;
mod quant;
mod session;

pub use frame::{
    decode_frame, encode_frame, frames_for_tensor, Frame, FrameError, FrameKind, FRAME_MAGIC,
    FRAME_VERSION, MAX_PAYLOAD_BYTES,
};
pub use quant::{
    dequantize, quantize, quantize_roundtrip, QuantError, QuantScheme, QuantTensor, Quantized,
};
pub use session::{
    receive_parameters, stream_layer, stream_parameters, stream_tensor, LayerFault,
    ParameterAssembler, ReceivedParameters, StreamError, StreamSession, StreamStats,
};
