//! Ordered, reliable frame transport between a sender and a receiver, plus
//! the layer-level stream/reassemble protocol on top of it.
//!
//! A session is a single-producer single-consumer queue of encoded frames
//! with exact byte accounting. Parameter streaming emits, per layer in model
//! order, the weight frames (chunked at 64 KiB) followed by one bias frame,
//! and closes with an end-of-stream frame. The receiving side reassembles
//! chunks in order, verifies them, dequantizes, and arms a layer only once
//! its weights and bias are both complete; a damaged or incomplete layer is
//! reported without disturbing the others.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};

use thiserror::Error;

use super::frame::{decode_frame, encode_frame, frames_for_tensor, Frame, FrameError, FrameKind};
use super::quant::{dequantize, quantize, QuantScheme, QuantTensor};
use crate::model::{ModelSpec, Parameters};
use crate::partition::{PartitionPlan, Placement};
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum StreamError {
    #[error("plan references layer {0} with no parameters")]
    MissingLayer(String),
    #[error("session closed before end-of-stream")]
    ClosedEarly,
    #[error("layer id {0} does not map to a model layer")]
    UnknownLayerId(u16),
}

/// Why a layer failed to arm during reception.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerFault {
    Damaged(String),
    OutOfOrderChunk { got: u8, want: u8 },
    MissingChunks { got: usize, want: usize },
    MissingBias,
    MissingWeights,
    ShapeMismatch(String),
}

impl std::fmt::Display for LayerFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayerFault::Damaged(e) => write!(f, "damaged frame: {e}"),
            LayerFault::OutOfOrderChunk { got, want } => {
                write!(f, "chunk {got} arrived, expected {want}")
            }
            LayerFault::MissingChunks { got, want } => {
                write!(f, "only {got} of {want} chunks arrived")
            }
            LayerFault::MissingBias => write!(f, "bias frame never arrived"),
            LayerFault::MissingWeights => write!(f, "weight frames never arrived"),
            LayerFault::ShapeMismatch(e) => write!(f, "shape mismatch: {e}"),
        }
    }
}

/// SPSC queue of encoded frames with cumulative byte accounting. Senders and
/// receivers may live on different threads; frames are immutable once
/// enqueued.
#[derive(Debug, Default)]
pub struct StreamSession {
    queue: Mutex<SessionState>,
    ready: Condvar,
    bytes_sent: AtomicU64,
    frames_sent: AtomicU64,
}

#[derive(Debug, Default)]
struct SessionState {
    frames: std::collections::VecDeque<Vec<u8>>,
    closed: bool,
}

impl StreamSession {
    pub fn new() -> Self {
        Self::default()
    }

    /// Enqueue an already-encoded frame.
    pub fn push(&self, bytes: Vec<u8>) {
        self.bytes_sent
            .fetch_add(bytes.len() as u64, Ordering::Relaxed);
        self.frames_sent.fetch_add(1, Ordering::Relaxed);
        let mut state = self.queue.lock().unwrap();
        state.frames.push_back(bytes);
        self.ready.notify_one();
    }

    pub fn send_frame(&self, frame: &Frame) -> usize {
        let bytes = encode_frame(frame);
        let len = bytes.len();
        self.push(bytes);
        len
    }

    /// Blocking dequeue. Returns `None` once the queue is closed and drained.
    pub fn pull(&self) -> Option<Vec<u8>> {
        let mut state = self.queue.lock().unwrap();
        loop {
            if let Some(frame) = state.frames.pop_front() {
                return Some(frame);
            }
            if state.closed {
                return None;
            }
            state = self.ready.wait(state).unwrap();
        }
    }

    /// Mark the sending side done; pending frames stay readable.
    pub fn close(&self) {
        self.queue.lock().unwrap().closed = true;
        self.ready.notify_all();
    }

    /// Total encoded bytes pushed so far, headers included.
    pub fn bytes_sent(&self) -> u64 {
        self.bytes_sent.load(Ordering::Relaxed)
    }

    pub fn frames_sent(&self) -> u64 {
        self.frames_sent.load(Ordering::Relaxed)
    }
}

/// Outcome of a parameter streaming pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StreamStats {
    /// Encoded bytes pushed, headers included.
    pub bytes_sent: u64,
    /// Payload bytes only, the bandwidth-accounting number.
    pub payload_bytes: u64,
    /// Elements clamped while quantizing.
    pub saturated: u64,
}

/// Stream one quantized tensor as chunked frames; returns (total, payload)
/// bytes.
pub fn stream_tensor(
    session: &StreamSession,
    qt: &QuantTensor,
    kind: FrameKind,
    layer_id: u16,
) -> Result<(u64, u64), FrameError> {
    let mut total = 0u64;
    for frame in frames_for_tensor(qt, kind, layer_id)? {
        total += session.send_frame(&frame) as u64;
    }
    Ok((total, qt.payload_bytes() as u64))
}

/// Quantize and stream one parameterized layer: weight frames then the bias
/// frame.
pub fn stream_layer(
    session: &StreamSession,
    layer_id: u16,
    weights: &Tensor,
    bias: &Tensor,
    scheme: QuantScheme,
) -> Result<StreamStats, FrameError> {
    let mut stats = StreamStats::default();
    let qw = quantize(weights, scheme);
    stats.saturated += qw.saturated as u64;
    let (sent, payload) = stream_tensor(session, &qw.tensor, FrameKind::Weights, layer_id)?;
    stats.bytes_sent += sent;
    stats.payload_bytes += payload;
    let qb = quantize(bias, scheme);
    stats.saturated += qb.saturated as u64;
    let (sent, payload) = stream_tensor(session, &qb.tensor, FrameKind::Bias, layer_id)?;
    stats.bytes_sent += sent;
    stats.payload_bytes += payload;
    Ok(stats)
}

/// Stream every non-static layer of the plan in model order, then
/// end-of-stream. Split layers stream their full filter bank here; the
/// reconfiguration executor streams chunk by chunk instead.
pub fn stream_parameters(
    session: &StreamSession,
    plan: &PartitionPlan,
    params: &Parameters,
    scheme: QuantScheme,
) -> Result<StreamStats, StreamError> {
    let mut stats = StreamStats::default();
    for entry in plan.entries() {
        if entry.placement == Placement::StaticOnChip {
            continue;
        }
        let lp = params
            .get(&entry.layer)
            .ok_or_else(|| StreamError::MissingLayer(entry.layer.clone()))?;
        let layer_stats = stream_layer(
            session,
            entry.layer_index as u16,
            &lp.weights,
            &lp.bias,
            scheme,
        )
        .expect("parameter tensors fit the frame layout");
        stats.bytes_sent += layer_stats.bytes_sent;
        stats.payload_bytes += layer_stats.payload_bytes;
        stats.saturated += layer_stats.saturated;
    }
    stats.bytes_sent += session.send_frame(&Frame::end_of_stream()) as u64;
    session.close();
    Ok(stats)
}

#[derive(Debug, Default)]
struct TensorAssembly {
    dims: Vec<u32>,
    scheme: Option<QuantScheme>,
    chunk_count: u8,
    next_chunk: u8,
    values: Vec<i32>,
    complete: bool,
}

impl TensorAssembly {
    fn accept(&mut self, frame: Frame) -> Result<(), LayerFault> {
        if self.complete {
            return Ok(()); // duplicate delivery after completion
        }
        if self.next_chunk == 0 {
            self.dims = frame.dims.clone();
            self.scheme = Some(frame.scheme);
            self.chunk_count = frame.chunk_count;
        }
        if frame.chunk_index < self.next_chunk {
            return Ok(()); // duplicate of an already-applied chunk
        }
        if frame.chunk_index > self.next_chunk {
            return Err(LayerFault::OutOfOrderChunk {
                got: frame.chunk_index,
                want: self.next_chunk,
            });
        }
        self.values.extend_from_slice(&frame.payload);
        self.next_chunk += 1;
        if self.next_chunk == self.chunk_count {
            self.complete = true;
        }
        Ok(())
    }

    fn into_tensor(self) -> Result<Tensor, LayerFault> {
        if !self.complete {
            return Err(LayerFault::MissingChunks {
                got: self.next_chunk as usize,
                want: self.chunk_count as usize,
            });
        }
        let dims: Vec<usize> = self.dims.iter().map(|&d| d as usize).collect();
        let shape = crate::tensor::Shape::new(dims)
            .map_err(|e| LayerFault::ShapeMismatch(e.to_string()))?;
        let qt = QuantTensor::new(shape, self.scheme.unwrap(), self.values)
            .map_err(|e| LayerFault::ShapeMismatch(e.to_string()))?;
        Ok(dequantize(&qt))
    }
}

/// Per-layer reassembly state machine. Feed it decoded frames; read back
/// armed layers and faults.
#[derive(Debug, Default)]
pub struct ParameterAssembler {
    weights: BTreeMap<u16, TensorAssembly>,
    biases: BTreeMap<u16, TensorAssembly>,
    faults: BTreeMap<u16, LayerFault>,
    unattributed: Vec<LayerFault>,
}

impl ParameterAssembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accept_bytes(&mut self, bytes: &[u8]) -> bool {
        match decode_frame(bytes) {
            Ok(frame) => self.accept(frame),
            Err(e) => {
                // An undecodable frame has no trustworthy header, so the
                // fault cannot be pinned on a layer.
                self.unattributed.push(LayerFault::Damaged(e.to_string()));
                false
            }
        }
    }

    /// Returns true once end-of-stream is seen.
    pub fn accept(&mut self, frame: Frame) -> bool {
        let id = frame.layer_id;
        if self.faults.contains_key(&id) {
            return false; // layer already aborted
        }
        let slot = match frame.kind {
            FrameKind::Weights => self.weights.entry(id).or_default(),
            FrameKind::Bias => self.biases.entry(id).or_default(),
            FrameKind::EndOfStream => return true,
            FrameKind::FeatureMap => {
                self.unattributed
                    .push(LayerFault::Damaged("feature map in parameter stream".into()));
                return false;
            }
        };
        if let Err(fault) = slot.accept(frame) {
            self.faults.insert(id, fault);
        }
        false
    }

    /// Pull one fully-armed layer out by wire id: both tensors complete and
    /// fault-free. The reconfiguration executor consumes chunk streams this
    /// way.
    pub fn take_layer(&mut self, layer_id: u16) -> Result<(Tensor, Tensor), LayerFault> {
        if let Some(fault) = self.faults.remove(&layer_id) {
            return Err(fault);
        }
        if let Some(fault) = self.unattributed.pop() {
            return Err(fault);
        }
        let weights = self
            .weights
            .remove(&layer_id)
            .ok_or(LayerFault::MissingWeights)?
            .into_tensor()?;
        let bias = self
            .biases
            .remove(&layer_id)
            .ok_or(LayerFault::MissingBias)?
            .into_tensor()?;
        Ok((weights, bias))
    }

    /// Resolve assemblies into named parameters. Layers with any fault are
    /// reported and skipped; complete layers are unaffected by them.
    pub fn finish(mut self, model: &ModelSpec) -> Result<ReceivedParameters, StreamError> {
        let mut params = Parameters::new();
        let mut faults = Vec::new();
        let ids: std::collections::BTreeSet<u16> = self
            .weights
            .keys()
            .chain(self.biases.keys())
            .chain(self.faults.keys())
            .copied()
            .collect();
        for id in ids {
            let name = model
                .layers
                .get(id as usize)
                .map(|l| l.name.clone())
                .ok_or(StreamError::UnknownLayerId(id))?;
            if let Some(fault) = self.faults.remove(&id) {
                faults.push((name, fault));
                continue;
            }
            let weights = match self.weights.remove(&id) {
                Some(asm) => match asm.into_tensor() {
                    Ok(t) => t,
                    Err(fault) => {
                        faults.push((name, fault));
                        continue;
                    }
                },
                None => {
                    faults.push((name, LayerFault::MissingWeights));
                    continue;
                }
            };
            let bias = match self.biases.remove(&id) {
                Some(asm) => match asm.into_tensor() {
                    Ok(t) => t,
                    Err(fault) => {
                        faults.push((name, fault));
                        continue;
                    }
                },
                None => {
                    faults.push((name, LayerFault::MissingBias));
                    continue;
                }
            };
            params.insert(name, weights, bias);
        }
        Ok(ReceivedParameters {
            params,
            faults,
            unattributed: self.unattributed,
        })
    }
}

/// What came out of a parameter stream: armed layers plus per-layer
/// diagnoses for anything that failed.
#[derive(Debug, PartialEq)]
pub struct ReceivedParameters {
    pub params: Parameters,
    pub faults: Vec<(String, LayerFault)>,
    pub unattributed: Vec<LayerFault>,
}

impl ReceivedParameters {
    pub fn is_clean(&self) -> bool {
        self.faults.is_empty() && self.unattributed.is_empty()
    }
}

/// Drain a session until end-of-stream, reassembling and dequantizing
/// per-layer parameters. Idempotent per layer: duplicate chunks are ignored.
pub fn receive_parameters(
    session: &StreamSession,
    model: &ModelSpec,
) -> Result<ReceivedParameters, StreamError> {
    let mut assembler = ParameterAssembler::new();
    loop {
        let Some(bytes) = session.pull() else {
            return Err(StreamError::ClosedEarly);
        };
        if assembler.accept_bytes(&bytes) {
            break;
        }
    }
    assembler.finish(model)
}
