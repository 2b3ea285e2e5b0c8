//! Horizontal collaboration: one inference spread over a chain of
//! resource-constrained nodes, feature maps forwarded hop by hop.
//!
//! Every node owns a contiguous slice of the layer chain. Parameters for a
//! node's streamed layers arrive over its own session from the parameter
//! source; feature maps cross inter-node links in the same frame format,
//! quantized for transport and dequantized on arrival (or carried as raw
//! IEEE-754 bit patterns when exact transport is requested). Nodes are
//! sequential executors connected by ordered channels, so predictions and
//! byte counts do not depend on how node work is scheduled onto threads —
//! a property the tests exercise rather than assume.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{classify, forward_layer, ModelError, ModelSpec, Parameters};
use crate::partition::{PartitionPlan, Placement, PlanError};
use crate::prsim::{CostModel, DeviceBudget};
use crate::quantstream::{
    frames_for_tensor, quantize, receive_parameters, stream_parameters, FrameKind, QuantScheme,
    QuantTensor, StreamSession,
};
use crate::tensor::{Shape, Tensor, TensorError};

#[derive(Debug, Error, PartialEq)]
pub enum EdgeError {
    #[error("no nodes given")]
    NoNodes,
    #[error("layer {layer} does not fit any remaining node (needs {need} bram half-units, node {node} has {cap})")]
    Unsatisfiable {
        layer: String,
        need: u32,
        cap: u32,
        node: String,
    },
    #[error("links do not form the chain {expected:?}")]
    BrokenChain { expected: Vec<String> },
    #[error("split placements need the reconfiguration executor, not the node pipeline")]
    SplitNotSupported,
    #[error("feature-map channel closed mid-stream")]
    ChannelClosed,
    #[error("damaged feature map: {0}")]
    DamagedFeatureMap(String),
    #[error("parameter stream for node {node} failed: {reason}")]
    ParamStream { node: String, reason: String },
    #[error("malformed topology at line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeRole {
    /// Single node acting as both ends of the chain.
    Solo,
    Head,
    Interior,
    Tail,
}

/// One edge device: its budget and the contiguous layer slice it executes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub budget: DeviceBudget,
    pub assigned_layers: Vec<String>,
    pub role: NodeRole,
}

/// Directed link in the Head -> Tail chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub from: String,
    pub to: String,
    pub bytes_per_sec: f64,
    pub latency_sec: f64,
}

/// Node budgets plus the link chain, as described by a topology document.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub nodes: Vec<(String, DeviceBudget)>,
    pub links: Vec<LinkSpec>,
}

/// An 18 Kbit BRAM half-block holds this many bytes.
const BRAM_HALF_BYTES: u64 = 2_304;

/// On-chip BRAM half-units a layer's resident parameters occupy (f32).
pub fn bram_half_units_for(m: &ModelSpec, layer: &str) -> u32 {
    let bytes = m.param_count(layer) as u64 * 4;
    bytes.div_ceil(BRAM_HALF_BYTES) as u32
}

/// Contiguous greedy assignment: walk the layer chain, keeping each layer on
/// the current node while the node's accumulated parameter footprint fits
/// its BRAM budget, else move to the next node. A layer that fits nowhere
/// means the model needs splitting, which is the reconfiguration executor's
/// territory.
pub fn assign_layers(
    m: &ModelSpec,
    nodes: &[(String, DeviceBudget)],
) -> Result<Vec<NodeSpec>, EdgeError> {
    if nodes.is_empty() {
        return Err(EdgeError::NoNodes);
    }
    let mut assignments: Vec<Vec<String>> = vec![Vec::new(); nodes.len()];
    let mut node_idx = 0usize;
    let mut used: u32 = 0;
    for layer in &m.layers {
        let need = bram_half_units_for(m, &layer.name);
        loop {
            let cap = nodes[node_idx].1.bram_half_units;
            if used + need <= cap {
                assignments[node_idx].push(layer.name.clone());
                used += need;
                break;
            }
            if node_idx + 1 == nodes.len() {
                return Err(EdgeError::Unsatisfiable {
                    layer: layer.name.clone(),
                    need,
                    cap,
                    node: nodes[node_idx].0.clone(),
                });
            }
            node_idx += 1;
            used = 0;
        }
    }
    let last = nodes.len() - 1;
    Ok(nodes
        .iter()
        .enumerate()
        .map(|(i, (id, budget))| NodeSpec {
            id: id.clone(),
            budget: *budget,
            assigned_layers: std::mem::take(&mut assignments[i]),
            role: match (i, last) {
                (0, 0) => NodeRole::Solo,
                (0, _) => NodeRole::Head,
                (i, l) if i == l => NodeRole::Tail,
                _ => NodeRole::Interior,
            },
        })
        .collect())
}

/// Per-run accounting. Totals are sums of the listed parts, checked by
/// tests, not recomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub predictions: Vec<usize>,
    pub per_node_compute_secs: Vec<(String, f64)>,
    pub per_link_transfer_secs: Vec<(String, String, f64)>,
    /// Encoded parameter bytes (headers included) over all node sessions.
    pub param_bytes: u64,
    pub param_payload_bytes: u64,
    /// Encoded feature-map bytes (headers included) over all links.
    pub fm_bytes: u64,
    pub fm_payload_bytes: u64,
    pub saturated: u64,
    pub param_stream_secs: f64,
}

impl PipelineReport {
    pub fn compute_secs_total(&self) -> f64 {
        self.per_node_compute_secs.iter().map(|(_, s)| s).sum()
    }

    pub fn transfer_secs_total(&self) -> f64 {
        self.per_link_transfer_secs.iter().map(|(_, _, s)| s).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PipelineOptions {
    pub scheme: QuantScheme,
    /// Carry feature maps as raw f32 bit patterns instead of fixed-point.
    pub exact_fm: bool,
    /// One worker thread per node instead of a single-threaded walk.
    pub threaded: bool,
    pub cost: CostModel,
}

impl PipelineOptions {
    pub fn new(scheme: QuantScheme) -> Self {
        PipelineOptions {
            scheme,
            exact_fm: false,
            threaded: false,
            cost: CostModel::default(),
        }
    }
}

fn encode_fm(t: &Tensor, scheme: QuantScheme, exact: bool, layer_id: u16) -> (Vec<Vec<u8>>, u64, u64) {
    let qt = if exact {
        let bits: Vec<i32> = t.data().iter().map(|&x| x.to_bits() as i32).collect();
        QuantTensor::new(t.shape().clone(), QuantScheme::new(32, 0).unwrap(), bits)
            .expect("bit patterns span the full i32 range")
    } else {
        quantize(t, scheme).tensor
    };
    let frames = frames_for_tensor(&qt, FrameKind::FeatureMap, layer_id)
        .expect("feature maps fit the frame layout");
    let mut wire = 0u64;
    let encoded: Vec<Vec<u8>> = frames
        .iter()
        .map(|f| {
            let bytes = crate::quantstream::encode_frame(f);
            wire += bytes.len() as u64;
            bytes
        })
        .collect();
    (encoded, wire, qt.payload_bytes() as u64)
}

fn recv_fm(session: &StreamSession, exact: bool) -> Result<Tensor, EdgeError> {
    let first = session.pull().ok_or(EdgeError::ChannelClosed)?;
    let first = crate::quantstream::decode_frame(&first)
        .map_err(|e| EdgeError::DamagedFeatureMap(e.to_string()))?;
    let chunk_count = first.chunk_count;
    let dims: Vec<usize> = first.dims.iter().map(|&d| d as usize).collect();
    let scheme = first.scheme;
    let mut values = first.payload;
    for _ in 1..chunk_count {
        let bytes = session.pull().ok_or(EdgeError::ChannelClosed)?;
        let frame = crate::quantstream::decode_frame(&bytes)
            .map_err(|e| EdgeError::DamagedFeatureMap(e.to_string()))?;
        values.extend_from_slice(&frame.payload);
    }
    let shape = Shape::new(dims).map_err(EdgeError::Tensor)?;
    if exact {
        let data: Vec<f32> = values.iter().map(|&q| f32::from_bits(q as u32)).collect();
        Ok(Tensor::new(shape, data)?)
    } else {
        let qt = QuantTensor::new(shape, scheme, values)
            .map_err(|e| EdgeError::DamagedFeatureMap(e.to_string()))?;
        Ok(crate::quantstream::dequantize(&qt))
    }
}

struct NodeRuntime {
    id: String,
    layers: Vec<usize>,
    params: Parameters,
    /// Wire id for feature maps leaving this node: its last layer's index.
    boundary_id: u16,
    macs_per_image: u64,
}

impl NodeRuntime {
    fn compute(&self, m: &ModelSpec, mut t: Tensor) -> Result<Tensor, ModelError> {
        for &idx in &self.layers {
            t = forward_layer(&m.layers[idx], &self.params, &t)?;
        }
        Ok(t)
    }
}

fn build_runtimes(
    m: &ModelSpec,
    nodes: &[NodeSpec],
    plan: &PartitionPlan,
    params: &Parameters,
    scheme: QuantScheme,
) -> Result<(Vec<NodeRuntime>, u64, u64, u64), EdgeError> {
    if nodes.is_empty() {
        return Err(EdgeError::NoNodes);
    }
    if plan
        .entries()
        .iter()
        .any(|e| matches!(e.placement, Placement::Split(_)))
    {
        return Err(EdgeError::SplitNotSupported);
    }
    let mut runtimes = Vec::with_capacity(nodes.len());
    let mut param_bytes = 0u64;
    let mut param_payload = 0u64;
    let mut saturated = 0u64;
    let per_macs = crate::model::per_layer_macs(m)?;
    for node in nodes {
        let layer_indices: Vec<usize> = node
            .assigned_layers
            .iter()
            .map(|n| m.layer_index(n).ok_or_else(|| PlanError::NoSuchLayer(n.clone())))
            .collect::<Result<_, _>>()?;
        let node_plan = plan.restrict(&node.assigned_layers);
        let mut node_params = Parameters::new();
        // Static layers read their parameters straight from on-chip storage.
        for entry in node_plan.entries() {
            if entry.placement == Placement::StaticOnChip {
                if let Some(lp) = params.get(&entry.layer) {
                    node_params.insert(&entry.layer, lp.weights.clone(), lp.bias.clone());
                }
            }
        }
        // Streamed layers arrive over this node's own session.
        if node_plan
            .entries()
            .iter()
            .any(|e| e.placement == Placement::Streamed)
        {
            let session = StreamSession::new();
            let stats = stream_parameters(&session, &node_plan, params, scheme)
                .map_err(|e| EdgeError::ParamStream {
                    node: node.id.clone(),
                    reason: e.to_string(),
                })?;
            param_bytes += stats.bytes_sent;
            param_payload += stats.payload_bytes;
            saturated += stats.saturated;
            let received =
                receive_parameters(&session, m).map_err(|e| EdgeError::ParamStream {
                    node: node.id.clone(),
                    reason: e.to_string(),
                })?;
            if !received.is_clean() {
                let reason = received
                    .faults
                    .first()
                    .map(|(l, f)| format!("{l}: {f}"))
                    .unwrap_or_else(|| "unattributed damage".to_string());
                return Err(EdgeError::ParamStream {
                    node: node.id.clone(),
                    reason,
                });
            }
            for (name, lp) in received.params.iter() {
                node_params.insert(name, lp.weights.clone(), lp.bias.clone());
            }
        }
        let macs_per_image: u64 = layer_indices.iter().map(|&i| per_macs[i]).sum();
        let boundary_id = layer_indices.last().copied().unwrap_or(0) as u16;
        runtimes.push(NodeRuntime {
            id: node.id.clone(),
            layers: layer_indices,
            params: node_params,
            boundary_id,
            macs_per_image,
        });
    }
    Ok((runtimes, param_bytes, param_payload, saturated))
}

fn check_chain(nodes: &[NodeSpec], links: &[LinkSpec]) -> Result<(), EdgeError> {
    let expected: Vec<String> = nodes.iter().map(|n| n.id.clone()).collect();
    let ok = links.len() + 1 == nodes.len()
        && links
            .iter()
            .zip(nodes.windows(2))
            .all(|(l, pair)| l.from == pair[0].id && l.to == pair[1].id);
    if ok {
        Ok(())
    } else {
        Err(EdgeError::BrokenChain { expected })
    }
}

/// Execute a batch over the node chain. The threaded and single-threaded
/// drivers push the same frames through the same sessions, so reports are
/// identical either way.
pub fn run_pipeline(
    m: &ModelSpec,
    nodes: &[NodeSpec],
    links: &[LinkSpec],
    plan: &PartitionPlan,
    params: &Parameters,
    images: &[Tensor],
    opts: &PipelineOptions,
) -> Result<PipelineReport, EdgeError> {
    check_chain(nodes, links)?;
    let (runtimes, param_bytes, param_payload, saturated) =
        build_runtimes(m, nodes, plan, params, opts.scheme)?;

    let n_nodes = runtimes.len();
    let mut fm_bytes_per_link = vec![0u64; links.len()];
    let mut fm_payload = 0u64;
    let mut messages_per_link = vec![0u64; links.len()];
    let mut logits_out: Vec<Tensor> = Vec::with_capacity(images.len());

    if !opts.threaded || n_nodes == 1 {
        for image in images {
            let mut t = image.clone();
            for (i, rt) in runtimes.iter().enumerate() {
                t = rt.compute(m, t)?;
                if i + 1 < n_nodes {
                    // Cross the link: encode, count, decode.
                    let (frames, wire, payload) =
                        encode_fm(&t, opts.scheme, opts.exact_fm, rt.boundary_id);
                    fm_bytes_per_link[i] += wire;
                    fm_payload += payload;
                    messages_per_link[i] += 1;
                    let hop = StreamSession::new();
                    for f in frames {
                        hop.push(f);
                    }
                    hop.close();
                    t = recv_fm(&hop, opts.exact_fm)?;
                }
            }
            logits_out.push(t);
        }
    } else {
        let hops: Vec<StreamSession> = (0..links.len()).map(|_| StreamSession::new()).collect();
        let results: Vec<std::sync::Mutex<Vec<Tensor>>> =
            (0..1).map(|_| std::sync::Mutex::new(Vec::new())).collect();
        let per_link_counts: Vec<std::sync::Mutex<(u64, u64, u64)>> =
            (0..links.len()).map(|_| std::sync::Mutex::new((0, 0, 0))).collect();
        let n_images = images.len();
        std::thread::scope(|scope| -> Result<(), EdgeError> {
            let mut handles = Vec::new();
            for (i, rt) in runtimes.iter().enumerate() {
                let hops = &hops;
                let per_link_counts = &per_link_counts;
                let results = &results;
                let opts_ref = &*opts;
                handles.push(scope.spawn(move || -> Result<(), EdgeError> {
                    for image in images.iter().take(n_images) {
                        let input = if i == 0 {
                            image.clone()
                        } else {
                            recv_fm(&hops[i - 1], opts_ref.exact_fm)?
                        };
                        let out = rt.compute(m, input)?;
                        if i + 1 < n_nodes {
                            let (frames, wire, payload) =
                                encode_fm(&out, opts_ref.scheme, opts_ref.exact_fm, rt.boundary_id);
                            {
                                let mut counts = per_link_counts[i].lock().unwrap();
                                counts.0 += wire;
                                counts.1 += payload;
                                counts.2 += 1;
                            }
                            for f in frames {
                                hops[i].push(f);
                            }
                        } else {
                            results[0].lock().unwrap().push(out);
                        }
                    }
                    if i + 1 < n_nodes {
                        hops[i].close();
                    }
                    Ok(())
                }));
            }
            for h in handles {
                h.join().expect("node thread panicked")?;
            }
            Ok(())
        })?;
        for (i, counts) in per_link_counts.iter().enumerate() {
            let (wire, payload, msgs) = *counts.lock().unwrap();
            fm_bytes_per_link[i] = wire;
            fm_payload += payload;
            messages_per_link[i] = msgs;
        }
        logits_out = results[0].lock().unwrap().drain(..).collect();
    }

    let mut predictions = Vec::with_capacity(logits_out.len());
    for logits in &logits_out {
        predictions.push(classify(logits)?);
    }

    let per_node_compute_secs: Vec<(String, f64)> = runtimes
        .iter()
        .map(|rt| {
            (
                rt.id.clone(),
                rt.macs_per_image as f64 * images.len() as f64 / opts.cost.macs_per_sec,
            )
        })
        .collect();
    let per_link_transfer_secs: Vec<(String, String, f64)> = links
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let secs = fm_bytes_per_link[i] as f64 / l.bytes_per_sec
                + messages_per_link[i] as f64 * l.latency_sec;
            (l.from.clone(), l.to.clone(), secs)
        })
        .collect();

    Ok(PipelineReport {
        predictions,
        per_node_compute_secs,
        per_link_transfer_secs,
        param_bytes,
        param_payload_bytes: param_payload,
        fm_bytes: fm_bytes_per_link.iter().sum(),
        fm_payload_bytes: fm_payload,
        saturated,
        param_stream_secs: param_bytes as f64 / opts.cost.stream_bytes_per_sec,
    })
}

/// Parse the topology document: `node <id> ff <n> lut <n> dsp <n> bram_x2 <n>`
/// and `link <from> <to> <bytes_per_sec> <latency_sec>` lines.
pub fn parse_topology(text: &str) -> Result<Topology, EdgeError> {
    let mut nodes = Vec::new();
    let mut links = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: &str| EdgeError::ParseError {
            line: lineno + 1,
            reason: reason.to_string(),
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["node", id, "ff", ff, "lut", lut, "dsp", dsp, "bram_x2", bram] => {
                let parse =
                    |s: &str| -> Result<u32, EdgeError> { s.parse().map_err(|_| err("bad count")) };
                nodes.push((
                    id.to_string(),
                    DeviceBudget {
                        ffs: parse(ff)?,
                        luts: parse(lut)?,
                        dsps: parse(dsp)?,
                        bram_half_units: parse(bram)?,
                    },
                ));
            }
            ["link", from, to, rate, latency] => {
                let bytes_per_sec: f64 = rate.parse().map_err(|_| err("bad rate"))?;
                let latency_sec: f64 = latency.parse().map_err(|_| err("bad latency"))?;
                if bytes_per_sec <= 0.0 {
                    return Err(err("rate must be positive"));
                }
                links.push(LinkSpec {
                    from: from.to_string(),
                    to: to.to_string(),
                    bytes_per_sec,
                    latency_sec,
                });
            }
            _ => return Err(err("expected a `node` or `link` line")),
        }
    }
    Ok(Topology { nodes, links })
}

pub fn topology_to_text(nodes: &[(String, DeviceBudget)], links: &[LinkSpec]) -> String {
    let mut out = String::new();
    for (id, b) in nodes {
        out.push_str(&format!(
            "node {} ff {} lut {} dsp {} bram_x2 {}\n",
            id, b.ffs, b.luts, b.dsps, b.bram_half_units
        ));
    }
    for l in links {
        out.push_str(&format!(
            "link {} {} {} {}\n",
            l.from, l.to, l.bytes_per_sec, l.latency_sec
        ));
    }
    out
}

/// Evenly-specified chain: one link between each adjacent node pair.
pub fn chain_links(nodes: &[NodeSpec], bytes_per_sec: f64, latency_sec: f64) -> Vec<LinkSpec> {
    nodes
        .windows(2)
        .map(|pair| LinkSpec {
            from: pair[0].id.clone(),
            to: pair[1].id.clone(),
            bytes_per_sec,
            latency_sec,
        })
        .collect()
}
