//! Simulated FPGA device: a static region plus one reconfigurable slot, a
//! library of pre-synthesized compute units with resource footprints, budget
//! enforcement, swap mechanics, and a relative cost model.
//!
//! The simulator owns no real hardware; its job is to make resource and
//! timing claims auditable. Every load, swap and execute lands in an event
//! log carrying the resident footprint at that instant, so mutual exclusion
//! and budget safety are checked by scanning the log rather than trusted.
//! Times are relative: the cost model's rates are scenario data chosen for
//! ordering, not calibrated seconds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{forward_layer, ModelError, ModelSpec, Parameters};
use crate::partition::{split_filters, PartitionPlan, Placement, PlanError, PlanMode};
use crate::quantstream::{
    quantize_roundtrip, stream_layer, ParameterAssembler, QuantScheme, StreamSession, StreamStats,
};
use crate::tensor::{concat_channels, Tensor, TensorError};

#[derive(Debug, Error, PartialEq)]
pub enum PrError {
    #[error("duplicate ip id {0}")]
    DuplicateId(String),
    #[error("ip {id} alone exceeds the device budget ({axis}: {need} > {cap}); split the operation further")]
    IpOverBudget {
        id: String,
        axis: &'static str,
        need: u32,
        cap: u32,
    },
    #[error("resident set would exceed the device budget ({axis}: {need} > {cap})")]
    BudgetExceeded {
        axis: &'static str,
        need: u32,
        cap: u32,
    },
    #[error("ip {0} is static; only reconfigurable ips go in the slot")]
    StaticIpInSlot(String),
    #[error("library has no ip for chunk {chunk} of layer {layer}")]
    MissingChunkIp { layer: String, chunk: usize },
    #[error("library has no static-tail ip")]
    MissingTail,
    #[error("plan is not a split plan")]
    NotSdci,
    #[error("streamed chunk failed to arm: {0}")]
    ChunkStream(String),
    #[error("malformed library text at line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// FPGA resource vector. BRAM comes in half-block granularity, stored
/// doubled so budget math stays integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResourceFootprint {
    pub ffs: u32,
    pub luts: u32,
    pub dsps: u32,
    pub bram_half_units: u32,
}

impl ResourceFootprint {
    pub fn add(&self, other: &ResourceFootprint) -> ResourceFootprint {
        ResourceFootprint {
            ffs: self.ffs + other.ffs,
            luts: self.luts + other.luts,
            dsps: self.dsps + other.dsps,
            bram_half_units: self.bram_half_units + other.bram_half_units,
        }
    }

    pub fn max(&self, other: &ResourceFootprint) -> ResourceFootprint {
        ResourceFootprint {
            ffs: self.ffs.max(other.ffs),
            luts: self.luts.max(other.luts),
            dsps: self.dsps.max(other.dsps),
            bram_half_units: self.bram_half_units.max(other.bram_half_units),
        }
    }

    pub fn bram_blocks(&self) -> f64 {
        self.bram_half_units as f64 / 2.0
    }

    fn first_axis_over(&self, cap: &DeviceBudget) -> Option<(&'static str, u32, u32)> {
        if self.ffs > cap.ffs {
            return Some(("ff", self.ffs, cap.ffs));
        }
        if self.luts > cap.luts {
            return Some(("lut", self.luts, cap.luts));
        }
        if self.dsps > cap.dsps {
            return Some(("dsp", self.dsps, cap.dsps));
        }
        if self.bram_half_units > cap.bram_half_units {
            return Some(("bram", self.bram_half_units, cap.bram_half_units));
        }
        None
    }
}

/// Device capacities, same axes as a footprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceBudget {
    pub ffs: u32,
    pub luts: u32,
    pub dsps: u32,
    pub bram_half_units: u32,
}

impl DeviceBudget {
    /// Zynq-7020 class fabric (the PYNQ-Z2 part).
    pub fn zynq7020() -> DeviceBudget {
        DeviceBudget {
            ffs: 106_400,
            luts: 53_200,
            dsps: 220,
            bram_half_units: 280,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Static,
    Reconfigurable,
}

/// What a compute unit implements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum IpOp {
    ConvChunk {
        layer: String,
        chunk_index: usize,
        out_ch: usize,
        kh: usize,
        kw: usize,
    },
    StaticTail {
        layers: Vec<String>,
    },
}

/// A pre-synthesized compute unit: an operation, a resource footprint, and
/// the partial bitstream that loads it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IpCore {
    pub id: String,
    pub op: IpOp,
    pub footprint: ResourceFootprint,
    pub bitstream_bytes: u64,
    pub region: Region,
}

/// Validated catalog of IPs for one device budget.
#[derive(Debug, Clone, PartialEq)]
pub struct IpLibrary {
    ips: Vec<IpCore>,
    budget: DeviceBudget,
}

/// Build a library, rejecting duplicates and any IP that cannot fit the
/// device even alone (the signal that the operation must be split further).
pub fn register_library(ips: Vec<IpCore>, budget: DeviceBudget) -> Result<IpLibrary, PrError> {
    let mut seen = std::collections::BTreeSet::new();
    for ip in &ips {
        if !seen.insert(ip.id.clone()) {
            return Err(PrError::DuplicateId(ip.id.clone()));
        }
        if let Some((axis, need, cap)) = ip.footprint.first_axis_over(&budget) {
            return Err(PrError::IpOverBudget {
                id: ip.id.clone(),
                axis,
                need,
                cap,
            });
        }
    }
    Ok(IpLibrary { ips, budget })
}

impl IpLibrary {
    pub fn ips(&self) -> &[IpCore] {
        &self.ips
    }

    pub fn budget(&self) -> DeviceBudget {
        self.budget
    }

    pub fn by_id(&self, id: &str) -> Option<&IpCore> {
        self.ips.iter().find(|ip| ip.id == id)
    }

    pub fn chunk_ip(&self, layer: &str, chunk_index: usize) -> Option<&IpCore> {
        self.ips.iter().find(|ip| match &ip.op {
            IpOp::ConvChunk {
                layer: l,
                chunk_index: c,
                ..
            } => l == layer && *c == chunk_index,
            _ => false,
        })
    }

    pub fn tail_ip(&self) -> Option<&IpCore> {
        self.ips
            .iter()
            .find(|ip| matches!(ip.op, IpOp::StaticTail { .. }))
    }

    /// One IP per line:
    /// `id region op layer chunk out_ch kh kw ff lut dsp bram_x2 bitstream_bytes`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ip in &self.ips {
            let region = match ip.region {
                Region::Static => "static",
                Region::Reconfigurable => "pr",
            };
            let (op, layer, chunk, out_ch, kh, kw) = match &ip.op {
                IpOp::ConvChunk {
                    layer,
                    chunk_index,
                    out_ch,
                    kh,
                    kw,
                } => ("conv_chunk", layer.clone(), *chunk_index, *out_ch, *kh, *kw),
                IpOp::StaticTail { layers } => ("tail", layers.join(","), 0, 0, 0, 0),
            };
            let f = ip.footprint;
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {} {} {} {} {} {}\n",
                ip.id,
                region,
                op,
                layer,
                chunk,
                out_ch,
                kh,
                kw,
                f.ffs,
                f.luts,
                f.dsps,
                f.bram_half_units,
                ip.bitstream_bytes
            ));
        }
        out
    }

    pub fn parse_text(text: &str, budget: DeviceBudget) -> Result<IpLibrary, PrError> {
        let mut ips = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: &str| PrError::ParseError {
                line: lineno + 1,
                reason: reason.to_string(),
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 13 {
                return Err(err("expected 13 fields"));
            }
            let region = match f[1] {
                "static" => Region::Static,
                "pr" => Region::Reconfigurable,
                other => return Err(err(&format!("unknown region {other}"))),
            };
            let num = |s: &str| -> Result<u64, PrError> {
                s.parse().map_err(|_| err(&format!("bad number {s}")))
            };
            let op = match f[2] {
                "conv_chunk" => IpOp::ConvChunk {
                    layer: f[3].to_string(),
                    chunk_index: num(f[4])? as usize,
                    out_ch: num(f[5])? as usize,
                    kh: num(f[6])? as usize,
                    kw: num(f[7])? as usize,
                },
                "tail" => IpOp::StaticTail {
                    layers: f[3].split(',').map(|s| s.to_string()).collect(),
                },
                other => return Err(err(&format!("unknown op {other}"))),
            };
            ips.push(IpCore {
                id: f[0].to_string(),
                op,
                footprint: ResourceFootprint {
                    ffs: num(f[8])? as u32,
                    luts: num(f[9])? as u32,
                    dsps: num(f[10])? as u32,
                    bram_half_units: num(f[11])? as u32,
                },
                bitstream_bytes: num(f[12])?,
                region,
            });
        }
        register_library(ips, budget)
    }
}

/// Chunk footprints default to the measured 4-filter and 2-filter units;
/// other sizes fall back to a linear scenario model.
pub fn default_chunk_footprint(out_ch: usize) -> ResourceFootprint {
    match out_ch {
        4 => ResourceFootprint {
            ffs: 7_883,
            luts: 10_155,
            dsps: 29,
            bram_half_units: 70,
        },
        2 => ResourceFootprint {
            ffs: 7_885,
            luts: 10_034,
            dsps: 29,
            bram_half_units: 62,
        },
        n => ResourceFootprint {
            ffs: 7_000 + 220 * n as u32,
            luts: 9_900 + 60 * n as u32,
            dsps: 25 + n as u32,
            bram_half_units: 54 + 4 * n as u32,
        },
    }
}

const BITSTREAM_BYTES_PER_LUT: u64 = 32;

/// Build the default IP library for a split plan: one reconfigurable unit
/// per filter chunk plus the static tail.
pub fn default_library_for(
    m: &ModelSpec,
    plan: &PartitionPlan,
    budget: DeviceBudget,
) -> Result<IpLibrary, PrError> {
    let (layer, chunks) = split_entry(plan)?;
    let spec = m.layer(&layer).ok_or(PrError::NotSdci)?;
    let crate::model::LayerKind::Conv2d { kh, kw, .. } = spec.kind else {
        return Err(PrError::NotSdci);
    };
    let mut ips = Vec::new();
    for (i, &out_ch) in chunks.iter().enumerate() {
        let footprint = default_chunk_footprint(out_ch);
        ips.push(IpCore {
            id: format!("ip{}", i + 1),
            op: IpOp::ConvChunk {
                layer: layer.clone(),
                chunk_index: i,
                out_ch,
                kh,
                kw,
            },
            footprint,
            bitstream_bytes: footprint.luts as u64 * BITSTREAM_BYTES_PER_LUT,
            region: Region::Reconfigurable,
        });
    }
    let tail_layers: Vec<String> = m
        .layers
        .iter()
        .map(|l| l.name.clone())
        .filter(|n| *n != layer)
        .collect();
    ips.push(IpCore {
        id: format!("ip{}", chunks.len() + 1),
        op: IpOp::StaticTail {
            layers: tail_layers,
        },
        footprint: ResourceFootprint {
            ffs: 2_600,
            luts: 3_900,
            dsps: 12,
            bram_half_units: 48,
        },
        bitstream_bytes: 0,
        region: Region::Static,
    });
    register_library(ips, budget)
}

fn split_entry(plan: &PartitionPlan) -> Result<(String, Vec<usize>), PrError> {
    if plan.mode() != PlanMode::Sdci {
        return Err(PrError::NotSdci);
    }
    plan.entries()
        .iter()
        .find_map(|e| match &e.placement {
            Placement::Split(chunks) => Some((e.layer.clone(), chunks.clone())),
            _ => None,
        })
        .ok_or(PrError::NotSdci)
}

/// Relative rates driving the simulated clock. Defaults are scenario data
/// picked so partial streaming beats full streaming and reconfiguration
/// dominates both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub stream_bytes_per_sec: f64,
    pub reconfig_bytes_per_sec: f64,
    pub macs_per_sec: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            stream_bytes_per_sec: 10_000_000.0,
            reconfig_bytes_per_sec: 1_000_000.0,
            macs_per_sec: 100_000_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    Load { ip: String },
    Swap { out: String, ip: String },
    Execute { ip: String, macs: u64 },
}

/// One audited step of the device timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub t_start: f64,
    pub t_end: f64,
    pub kind: EventKind,
    /// Reconfigurable-slot occupant after the event.
    pub slot: Option<String>,
    /// Total resident footprint (static region + slot) after the event.
    pub resident: ResourceFootprint,
}

/// The simulated device: resident static units, at most one reconfigurable
/// occupant, counters, and the event log.
#[derive(Debug)]
pub struct FpgaState {
    budget: DeviceBudget,
    static_ips: Vec<IpCore>,
    slot: Option<IpCore>,
    swap_count: u64,
    load_count: u64,
    clock: f64,
    timeline: Vec<TimelineEvent>,
}

impl FpgaState {
    pub fn new(budget: DeviceBudget) -> FpgaState {
        FpgaState {
            budget,
            static_ips: Vec::new(),
            slot: None,
            swap_count: 0,
            load_count: 0,
            clock: 0.0,
            timeline: Vec::new(),
        }
    }

    pub fn swap_count(&self) -> u64 {
        self.swap_count
    }

    pub fn load_count(&self) -> u64 {
        self.load_count
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn timeline(&self) -> &[TimelineEvent] {
        &self.timeline
    }

    pub fn slot_occupant(&self) -> Option<&str> {
        self.slot.as_ref().map(|ip| ip.id.as_str())
    }

    fn resident_footprint(&self) -> ResourceFootprint {
        let mut total = ResourceFootprint::default();
        for ip in &self.static_ips {
            total = total.add(&ip.footprint);
        }
        if let Some(ip) = &self.slot {
            total = total.add(&ip.footprint);
        }
        total
    }

    /// Componentwise maximum resident footprint over the whole timeline.
    pub fn high_water(&self) -> ResourceFootprint {
        self.timeline
            .iter()
            .fold(ResourceFootprint::default(), |acc, e| acc.max(&e.resident))
    }

    fn record(&mut self, kind: EventKind, duration: f64) {
        let t_start = self.clock;
        self.clock += duration;
        self.timeline.push(TimelineEvent {
            t_start,
            t_end: self.clock,
            kind,
            slot: self.slot.as_ref().map(|ip| ip.id.clone()),
            resident: self.resident_footprint(),
        });
    }

    fn check_budget(&self, extra: &ResourceFootprint) -> Result<(), PrError> {
        let total = self.resident_footprint().add(extra);
        if let Some((axis, need, cap)) = total.first_axis_over(&self.budget) {
            return Err(PrError::BudgetExceeded { axis, need, cap });
        }
        Ok(())
    }

    /// Install a static-region unit; it stays resident for the device's
    /// lifetime.
    pub fn install_static(&mut self, ip: &IpCore) -> Result<(), PrError> {
        self.check_budget(&ip.footprint)?;
        self.static_ips.push(ip.clone());
        self.record(EventKind::Load { ip: ip.id.clone() }, 0.0);
        Ok(())
    }

    /// Bring a reconfigurable unit into the slot, evicting any current
    /// occupant. Loading an already-resident unit is a timeless no-op; the
    /// swap counter moves only when a different occupant is replaced.
    /// Returns the reconfiguration time spent.
    pub fn swap_in(&mut self, ip: &IpCore, cost: &CostModel) -> Result<f64, PrError> {
        if ip.region != Region::Reconfigurable {
            return Err(PrError::StaticIpInSlot(ip.id.clone()));
        }
        if let Some(current) = &self.slot {
            if current.id == ip.id {
                return Ok(0.0);
            }
        }
        // The outgoing occupant leaves before the incoming one arrives, so
        // the budget check covers static units plus the new occupant only.
        let evicted = self.slot.take();
        if let Err(e) = self.check_budget(&ip.footprint) {
            self.slot = evicted;
            return Err(e);
        }
        let duration = ip.bitstream_bytes as f64 / cost.reconfig_bytes_per_sec;
        self.slot = Some(ip.clone());
        match evicted {
            Some(old) => {
                self.swap_count += 1;
                self.record(
                    EventKind::Swap {
                        out: old.id,
                        ip: ip.id.clone(),
                    },
                    duration,
                );
            }
            None => {
                self.load_count += 1;
                self.record(EventKind::Load { ip: ip.id.clone() }, duration);
            }
        }
        Ok(duration)
    }

    fn execute(&mut self, ip_id: &str, macs: u64, cost: &CostModel) {
        let duration = macs as f64 / cost.macs_per_sec;
        self.record(
            EventKind::Execute {
                ip: ip_id.to_string(),
                macs,
            },
            duration,
        );
    }
}

/// Per-phase simulated time and the counters behind it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SdciReport {
    pub stream_secs: f64,
    pub reconfig_secs: f64,
    pub compute_secs: f64,
    pub swap_count: u64,
    pub load_count: u64,
    pub bytes_streamed: u64,
    pub payload_bytes: u64,
    pub saturated: u64,
    pub high_water: ResourceFootprint,
}

impl SdciReport {
    pub fn total_secs(&self) -> f64 {
        self.stream_secs + self.reconfig_secs + self.compute_secs
    }
}

/// Stream one filter chunk's parameters through the session and arm them.
fn stream_and_receive_chunk(
    session: &StreamSession,
    layer_id: u16,
    weights: &Tensor,
    bias: &Tensor,
    scheme: QuantScheme,
) -> Result<(Tensor, Tensor, StreamStats), PrError> {
    let before = session.frames_sent();
    let stats = stream_layer(session, layer_id, weights, bias, scheme)
        .map_err(|e| PrError::ChunkStream(e.to_string()))?;
    let frames = session.frames_sent() - before;
    let mut assembler = ParameterAssembler::new();
    for _ in 0..frames {
        let bytes = session
            .pull()
            .ok_or_else(|| PrError::ChunkStream("session closed mid-chunk".to_string()))?;
        assembler.accept_bytes(&bytes);
    }
    let (w, b) = assembler
        .take_layer(layer_id)
        .map_err(|e| PrError::ChunkStream(e.to_string()))?;
    Ok((w, b, stats))
}

/// Run a split plan over a batch of images on the simulated device.
///
/// Chunk-major order (the default) loads each chunk's unit once, streams its
/// parameters once, and runs the whole batch per residency. Image-major
/// order (`swap_per_image`) reloads every chunk for every image. Static
/// layers execute with the same quantize-dequantize treatment as the
/// streamed chunks, so the logits are bit-identical to an unsplit run over
/// identically quantized parameters.
#[allow(clippy::too_many_arguments)]
pub fn execute_sdci_batch(
    state: &mut FpgaState,
    lib: &IpLibrary,
    model: &ModelSpec,
    plan: &PartitionPlan,
    params: &Parameters,
    images: &[Tensor],
    session: &StreamSession,
    scheme: QuantScheme,
    cost: &CostModel,
    swap_per_image: bool,
) -> Result<(Vec<Tensor>, SdciReport), PrError> {
    let (split_layer, chunk_sizes) = split_entry(plan)?;
    let split_idx = model.layer_index(&split_layer).ok_or(PrError::NotSdci)?;
    let layer_id = split_idx as u16;
    let spec = &model.layers[split_idx];
    let crate::model::LayerKind::Conv2d {
        stride, padding, ..
    } = spec.kind
    else {
        return Err(PrError::NotSdci);
    };

    let tail = lib.tail_ip().ok_or(PrError::MissingTail)?;
    let chunk_ips: Vec<&IpCore> = (0..chunk_sizes.len())
        .map(|i| {
            lib.chunk_ip(&split_layer, i).ok_or(PrError::MissingChunkIp {
                layer: split_layer.clone(),
                chunk: i,
            })
        })
        .collect::<Result<_, _>>()?;
    state.install_static(tail)?;

    let lp = params
        .get(&split_layer)
        .ok_or_else(|| ModelError::MissingParams(split_layer.clone()))?;
    let chunks = split_filters(&lp.weights, &lp.bias, &chunk_sizes)?;

    // Static-region layers carry the same fixed-point treatment as the
    // streamed chunks.
    let mut static_params = Parameters::new();
    let mut report = SdciReport::default();
    for layer in model.parameterized_layers() {
        if layer.name == split_layer {
            continue;
        }
        let p = params
            .get(&layer.name)
            .ok_or_else(|| ModelError::MissingParams(layer.name.clone()))?;
        let (w, sat_w) = quantize_roundtrip(&p.weights, scheme);
        let (b, sat_b) = quantize_roundtrip(&p.bias, scheme);
        report.saturated += (sat_w + sat_b) as u64;
        static_params.insert(&layer.name, w, b);
    }

    let per_layer_macs = crate::model::per_layer_macs(model)?;
    let chunk_macs: Vec<u64> = {
        let total = per_layer_macs[split_idx];
        let out_ch = chunk_sizes.iter().sum::<usize>() as u64;
        chunk_sizes
            .iter()
            .map(|&c| total * c as u64 / out_ch)
            .collect()
    };
    let tail_macs: u64 = per_layer_macs
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != split_idx)
        .map(|(_, m)| m)
        .sum();

    // Layers before the split convolution run on the static region first.
    let prefix = &model.layers[..split_idx];
    let suffix = &model.layers[split_idx + 1..];
    let mut staged: Vec<Tensor> = Vec::with_capacity(images.len());
    for image in images {
        let mut t = image.clone();
        for layer in prefix {
            t = forward_layer(layer, &static_params, &t)?;
        }
        staged.push(t);
    }

    let run_chunk = |state: &mut FpgaState,
                         chunk_idx: usize,
                         inputs: &[Tensor],
                         report: &mut SdciReport|
     -> Result<Vec<Tensor>, PrError> {
        let ip = chunk_ips[chunk_idx];
        report.reconfig_secs += state.swap_in(ip, cost)?;
        let (w, b, stats) = stream_and_receive_chunk(
            session,
            layer_id,
            &chunks[chunk_idx].0,
            &chunks[chunk_idx].1,
            scheme,
        )?;
        report.bytes_streamed += stats.bytes_sent;
        report.payload_bytes += stats.payload_bytes;
        report.saturated += stats.saturated;
        report.stream_secs += stats.bytes_sent as f64 / cost.stream_bytes_per_sec;
        let mut outs = Vec::with_capacity(inputs.len());
        for input in inputs {
            outs.push(crate::model::conv2d(input, &w, &b, stride, padding)?);
        }
        state.execute(&ip.id, chunk_macs[chunk_idx] * inputs.len() as u64, cost);
        report.compute_secs +=
            chunk_macs[chunk_idx] as f64 * inputs.len() as f64 / cost.macs_per_sec;
        Ok(outs)
    };

    let mut cascaded: Vec<Tensor> = Vec::with_capacity(images.len());
    if swap_per_image {
        for staged_img in &staged {
            let mut partials = Vec::with_capacity(chunk_sizes.len());
            for chunk_idx in 0..chunk_sizes.len() {
                let outs =
                    run_chunk(state, chunk_idx, std::slice::from_ref(staged_img), &mut report)?;
                partials.extend(outs);
            }
            cascaded.push(concat_channels(&partials)?);
        }
    } else {
        // Chunk-major: the whole batch runs through one residency before
        // the next swap.
        let mut buffers: Vec<Vec<Tensor>> = vec![Vec::new(); images.len()];
        for chunk_idx in 0..chunk_sizes.len() {
            let outs = run_chunk(state, chunk_idx, &staged, &mut report)?;
            for (buf, out) in buffers.iter_mut().zip(outs) {
                buf.push(out);
            }
        }
        for buf in buffers {
            cascaded.push(concat_channels(&buf)?);
        }
    }

    let mut logits = Vec::with_capacity(images.len());
    for t in cascaded {
        let mut t = t;
        for layer in suffix {
            t = forward_layer(layer, &static_params, &t)?;
        }
        logits.push(t);
    }
    state.execute(&tail.id, tail_macs * images.len() as u64, cost);
    report.compute_secs += tail_macs as f64 * images.len() as f64 / cost.macs_per_sec;

    report.swap_count = state.swap_count();
    report.load_count = state.load_count();
    report.high_water = state.high_water();
    Ok((logits, report))
}

/// Single-image split execution: swap in each chunk's unit, stream its
/// parameters, convolve, cascade, then run the static remainder.
#[allow(clippy::too_many_arguments)]
pub fn execute_sdci(
    state: &mut FpgaState,
    lib: &IpLibrary,
    model: &ModelSpec,
    plan: &PartitionPlan,
    params: &Parameters,
    image: &Tensor,
    session: &StreamSession,
    scheme: QuantScheme,
    cost: &CostModel,
) -> Result<(Tensor, SdciReport), PrError> {
    let (mut logits, report) = execute_sdci_batch(
        state,
        lib,
        model,
        plan,
        params,
        std::slice::from_ref(image),
        session,
        scheme,
        cost,
        false,
    )?;
    Ok((logits.pop().expect("one image in, one logits out"), report))
}

/// Residency intervals of reconfigurable units, reconstructed from the log.
fn residency_intervals(timeline: &[TimelineEvent]) -> Vec<(String, f64, f64)> {
    let mut intervals: Vec<(String, f64, f64)> = Vec::new();
    let mut current: Option<(String, f64)> = None;
    for event in timeline {
        match &event.kind {
            EventKind::Load { ip } if event.slot.as_deref() == Some(ip.as_str()) => {
                if let Some((id, since)) = current.take() {
                    intervals.push((id, since, event.t_start));
                }
                current = Some((ip.clone(), event.t_start));
            }
            EventKind::Swap { out, ip } => {
                if let Some((id, since)) = current.take() {
                    debug_assert_eq!(&id, out);
                    intervals.push((id, since, event.t_start));
                }
                current = Some((ip.clone(), event.t_start));
            }
            _ => {}
        }
    }
    if let Some((id, since)) = current {
        let end = timeline.last().map(|e| e.t_end).unwrap_or(since);
        intervals.push((id, since, end));
    }
    intervals
}

/// True when no two distinct units were ever resident at overlapping times.
pub fn mutual_exclusion_holds(timeline: &[TimelineEvent]) -> bool {
    let intervals = residency_intervals(timeline);
    for (i, a) in intervals.iter().enumerate() {
        for b in intervals.iter().skip(i + 1) {
            if a.0 != b.0 && a.1 < b.2 && b.1 < a.2 {
                return false;
            }
        }
    }
    true
}

/// True when every event left the resident footprint within the budget.
pub fn budget_safe(timeline: &[TimelineEvent], budget: &DeviceBudget) -> bool {
    timeline
        .iter()
        .all(|e| e.resident.first_axis_over(budget).is_none())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::lenet5;
    use crate::partition::plan_sdci;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
        let n: usize = dims.iter().product();
        Tensor::from_dims(dims, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
    }

    fn random_params(seed: u64) -> Parameters {
        let m = lenet5();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Parameters::new();
        for layer in m.parameterized_layers() {
            let (wdims, blen) = m.param_shapes(&layer.name).unwrap();
            p.insert(
                &layer.name,
                rand_tensor(&mut rng, &wdims),
                rand_tensor(&mut rng, &[blen]),
            );
        }
        p
    }

    fn ip1() -> IpCore {
        IpCore {
            id: "ip1".into(),
            op: IpOp::ConvChunk {
                layer: "conv1".into(),
                chunk_index: 0,
                out_ch: 4,
                kh: 5,
                kw: 5,
            },
            footprint: default_chunk_footprint(4),
            bitstream_bytes: 10_155 * 32,
            region: Region::Reconfigurable,
        }
    }

    fn ip2() -> IpCore {
        IpCore {
            id: "ip2".into(),
            op: IpOp::ConvChunk {
                layer: "conv1".into(),
                chunk_index: 1,
                out_ch: 2,
                kh: 5,
                kw: 5,
            },
            footprint: default_chunk_footprint(2),
            bitstream_bytes: 10_034 * 32,
            region: Region::Reconfigurable,
        }
    }

    #[test]
    fn four_filter_unit_fits_a_zynq_budget() {
        let lib = register_library(vec![ip1()], DeviceBudget::zynq7020()).unwrap();
        let ip = lib.by_id("ip1").unwrap();
        assert_eq!(ip.footprint.ffs, 7_883);
        assert_eq!(ip.footprint.luts, 10_155);
        assert_eq!(ip.footprint.dsps, 29);
        assert_eq!(ip.footprint.bram_blocks(), 35.0);
    }

    #[test]
    fn oversized_ip_is_rejected_with_the_axis_named() {
        let mut ip = ip1();
        ip.footprint.luts = 60_000;
        let err = register_library(vec![ip], DeviceBudget::zynq7020()).unwrap_err();
        assert!(matches!(
            err,
            PrError::IpOverBudget {
                axis: "lut",
                need: 60_000,
                cap: 53_200,
                ..
            }
        ));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        assert!(matches!(
            register_library(vec![ip1(), ip1()], DeviceBudget::zynq7020()),
            Err(PrError::DuplicateId(_))
        ));
    }

    #[test]
    fn empty_library_is_valid_but_cannot_execute() {
        let lib = register_library(Vec::new(), DeviceBudget::zynq7020()).unwrap();
        let m = lenet5();
        let plan = plan_sdci(&m, "conv1", &[4, 2]).unwrap();
        let mut state = FpgaState::new(lib.budget());
        let session = StreamSession::new();
        let image = Tensor::zeros(crate::tensor::Shape::new(vec![1, 28, 28]).unwrap());
        let err = execute_sdci(
            &mut state,
            &lib,
            &m,
            &plan,
            &random_params(1),
            &image,
            &session,
            QuantScheme::lossless(),
            &CostModel::default(),
        )
        .unwrap_err();
        assert_eq!(err, PrError::MissingTail);
    }

    #[test]
    fn initial_load_does_not_count_as_swap() {
        let cost = CostModel::default();
        let mut state = FpgaState::new(DeviceBudget::zynq7020());
        let t = state.swap_in(&ip1(), &cost).unwrap();
        assert_eq!(state.swap_count(), 0);
        assert_eq!(state.load_count(), 1);
        assert!((t - (10_155.0 * 32.0) / cost.reconfig_bytes_per_sec).abs() < 1e-12);
    }

    #[test]
    fn swapping_evicts_and_counts() {
        let cost = CostModel::default();
        let mut state = FpgaState::new(DeviceBudget::zynq7020());
        state.swap_in(&ip1(), &cost).unwrap();
        state.swap_in(&ip2(), &cost).unwrap();
        assert_eq!(state.swap_count(), 1);
        assert_eq!(state.slot_occupant(), Some("ip2"));
        assert!(mutual_exclusion_holds(state.timeline()));
        // The resident footprint never contains both chunk units at once.
        for event in state.timeline() {
            assert!(event.resident.luts <= 10_155);
        }
    }

    #[test]
    fn reloading_the_resident_ip_is_free_and_silent() {
        let cost = CostModel::default();
        let mut state = FpgaState::new(DeviceBudget::zynq7020());
        state.swap_in(&ip1(), &cost).unwrap();
        let events = state.timeline().len();
        let t = state.swap_in(&ip1(), &cost).unwrap();
        assert_eq!(t, 0.0);
        assert_eq!(state.swap_count(), 0);
        assert_eq!(state.timeline().len(), events);
    }

    #[test]
    fn static_ip_cannot_enter_the_slot() {
        let cost = CostModel::default();
        let mut state = FpgaState::new(DeviceBudget::zynq7020());
        let mut ip = ip1();
        ip.region = Region::Static;
        assert!(matches!(
            state.swap_in(&ip, &cost),
            Err(PrError::StaticIpInSlot(_))
        ));
    }

    #[test]
    fn swap_respects_budget_with_static_residents() {
        let cost = CostModel::default();
        let tight = DeviceBudget {
            ffs: 20_000,
            luts: 12_000,
            dsps: 60,
            bram_half_units: 140,
        };
        let mut state = FpgaState::new(tight);
        let tail = IpCore {
            id: "tail".into(),
            op: IpOp::StaticTail { layers: vec![] },
            footprint: ResourceFootprint {
                ffs: 2_600,
                luts: 3_900,
                dsps: 12,
                bram_half_units: 48,
            },
            bitstream_bytes: 0,
            region: Region::Static,
        };
        state.install_static(&tail).unwrap();
        // 3,900 + 10,155 LUTs > 12,000.
        let err = state.swap_in(&ip1(), &cost).unwrap_err();
        assert!(matches!(err, PrError::BudgetExceeded { axis: "lut", .. }));
        assert_eq!(state.slot_occupant(), None);
        assert!(budget_safe(state.timeline(), &tight));
    }

    #[test]
    fn library_text_roundtrip() {
        let m = lenet5();
        let plan = plan_sdci(&m, "conv1", &[4, 2]).unwrap();
        let lib = default_library_for(&m, &plan, DeviceBudget::zynq7020()).unwrap();
        let text = lib.to_text();
        let back = IpLibrary::parse_text(&text, DeviceBudget::zynq7020()).unwrap();
        assert_eq!(back, lib);
        assert!(
            IpLibrary::parse_text("ip1 pr conv_chunk conv1 0\n", DeviceBudget::zynq7020()).is_err()
        );
    }

    #[test]
    fn missing_chunk_ip_is_reported() {
        let m = lenet5();
        let plan = plan_sdci(&m, "conv1", &[4, 2]).unwrap();
        let full = default_library_for(&m, &plan, DeviceBudget::zynq7020()).unwrap();
        // Rebuild the catalog without the second chunk's unit.
        let partial: Vec<IpCore> = full
            .ips()
            .iter()
            .filter(|ip| ip.id != "ip2")
            .cloned()
            .collect();
        let lib = register_library(partial, DeviceBudget::zynq7020()).unwrap();
        let mut state = FpgaState::new(lib.budget());
        let session = StreamSession::new();
        let image = Tensor::zeros(crate::tensor::Shape::new(vec![1, 28, 28]).unwrap());
        let err = execute_sdci(
            &mut state,
            &lib,
            &m,
            &plan,
            &random_params(6),
            &image,
            &session,
            QuantScheme::lossless(),
            &CostModel::default(),
        )
        .unwrap_err();
        assert_eq!(
            err,
            PrError::MissingChunkIp {
                layer: "conv1".into(),
                chunk: 1
            }
        );
    }

    #[test]
    fn single_chunk_split_loads_once_and_never_swaps() {
        let m = lenet5();
        let plan = plan_sdci(&m, "conv1", &[6]).unwrap();
        let lib = default_library_for(&m, &plan, DeviceBudget::zynq7020()).unwrap();
        let mut state = FpgaState::new(lib.budget());
        let session = StreamSession::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let image = rand_tensor(&mut rng, &[1, 28, 28]);
        let (_, report) = execute_sdci(
            &mut state,
            &lib,
            &m,
            &plan,
            &random_params(2),
            &image,
            &session,
            QuantScheme::lossless(),
            &CostModel::default(),
        )
        .unwrap();
        // One load for the chunk unit (plus the static tail's install);
        // never a replacement.
        assert_eq!(report.swap_count, 0);
        assert_eq!(
            state
                .timeline()
                .iter()
                .filter(|e| matches!(e.kind, EventKind::Swap { .. }))
                .count(),
            0
        );
    }

    #[test]
    fn split_logits_match_unsplit_quantized_pipeline() {
        let m = lenet5();
        let params = random_params(3);
        let scheme = QuantScheme::lossless();
        let plan = plan_sdci(&m, "conv1", &[4, 2]).unwrap();
        let lib = default_library_for(&m, &plan, DeviceBudget::zynq7020()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);

        // Oracle: plain forward over identically quantized parameters.
        let mut qparams = Parameters::new();
        for (name, lp) in params.iter() {
            let (w, _) = quantize_roundtrip(&lp.weights, scheme);
            let (b, _) = quantize_roundtrip(&lp.bias, scheme);
            qparams.insert(name, w, b);
        }

        for _ in 0..3 {
            let image = rand_tensor(&mut rng, &[1, 28, 28]);
            let mut state = FpgaState::new(lib.budget());
            let session = StreamSession::new();
            let (logits, _) = execute_sdci(
                &mut state,
                &lib,
                &m,
                &plan,
                &params,
                &image,
                &session,
                scheme,
                &CostModel::default(),
            )
            .unwrap();
            let want = crate::model::forward(&m, &qparams, &image).unwrap();
            assert_eq!(logits, want);
            assert!(mutual_exclusion_holds(state.timeline()));
            assert!(budget_safe(state.timeline(), &lib.budget()));
        }
    }

    #[test]
    fn more_chunks_never_run_faster() {
        let m = lenet5();
        let params = random_params(4);
        let scheme = QuantScheme::lossless();
        let cost = CostModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let images: Vec<Tensor> =
            (0..4).map(|_| rand_tensor(&mut rng, &[1, 28, 28])).collect();
        let mut last_total = 0.0f64;
        for chunking in [vec![6], vec![4, 2], vec![2, 2, 2], vec![1; 6]] {
            let plan = plan_sdci(&m, "conv1", &chunking).unwrap();
            let lib = default_library_for(&m, &plan, DeviceBudget::zynq7020()).unwrap();
            let mut state = FpgaState::new(lib.budget());
            let session = StreamSession::new();
            let (_, report) = execute_sdci_batch(
                &mut state,
                &lib,
                &m,
                &plan,
                &params,
                &images,
                &session,
                scheme,
                &cost,
                false,
            )
            .unwrap();
            assert!(
                report.total_secs() >= last_total,
                "chunking {chunking:?} ran faster than a coarser one"
            );
            last_total = report.total_secs();
        }
    }

    #[test]
    fn swap_per_image_multiplies_reconfigurations() {
        let m = lenet5();
        let params = random_params(5);
        let scheme = QuantScheme::lossless();
        let cost = CostModel::default();
        let plan = plan_sdci(&m, "conv1", &[4, 2]).unwrap();
        let lib = default_library_for(&m, &plan, DeviceBudget::zynq7020()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let images: Vec<Tensor> =
            (0..5).map(|_| rand_tensor(&mut rng, &[1, 28, 28])).collect();

        let mut batched = FpgaState::new(lib.budget());
        let session = StreamSession::new();
        let (logits_batched, report_batched) = execute_sdci_batch(
            &mut batched, &lib, &m, &plan, &params, &images, &session, scheme, &cost, false,
        )
        .unwrap();
        // ip1 load, then one swap to ip2.
        assert_eq!(report_batched.load_count, 1);
        assert_eq!(report_batched.swap_count, 1);

        let mut naive = FpgaState::new(lib.budget());
        let session = StreamSession::new();
        let (logits_naive, report_naive) = execute_sdci_batch(
            &mut naive, &lib, &m, &plan, &params, &images, &session, scheme, &cost, true,
        )
        .unwrap();
        // Each image swaps ip1 in again and then ip2: 2 per image after the
        // first load.
        assert_eq!(report_naive.load_count, 1);
        assert_eq!(report_naive.swap_count, 2 * images.len() as u64 - 1);
        assert_eq!(logits_batched, logits_naive);
        assert!(report_naive.total_secs() > report_batched.total_secs());
        assert!(mutual_exclusion_holds(naive.timeline()));
    }

    #[test]
    fn random_swap_schedules_preserve_invariants() {
        let cost = CostModel::default();
        let budget = DeviceBudget::zynq7020();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pool = [ip1(), ip2()];
        for _ in 0..100 {
            let mut state = FpgaState::new(budget);
            for _ in 0..rng.random_range(1..20) {
                let ip = pool.choose(&mut rng).unwrap();
                state.swap_in(ip, &cost).unwrap();
            }
            assert!(mutual_exclusion_holds(state.timeline()));
            assert!(budget_safe(state.timeline(), &budget));
        }
    }
}
