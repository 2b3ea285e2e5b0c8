//! Experiment runner: executes one mode over a test batch and produces the
//! comparison-table report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mnist::Dataset;
use crate::edgesim::{self, EdgeError, PipelineOptions};
pub use crate::edgesim::Topology;
use crate::model::{classify, forward, mac_count, ModelError, ModelSpec, Parameters};
use crate::partition::{
    bandwidth_of, plan_dapp, plan_dasp, plan_sdci, DappSelection, PartitionPlan, PlanError,
    PlanMode,
};
use crate::prsim::{
    default_library_for, execute_sdci_batch, CostModel, DeviceBudget, FpgaState, IpOp, PrError,
    Region, ResourceFootprint,
};
use crate::quantstream::{
    receive_parameters, stream_parameters, QuantScheme, StreamError, StreamSession,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("no images selected")]
    NoImages,
    #[error("sdci does not run over a multi-node topology; drop --topology or change --mode")]
    SdciOverTopology,
    #[error("parameter stream failed: {0}")]
    Stream(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pr(#[from] PrError),
    #[error(transparent)]
    Edge(#[from] EdgeError),
}

impl From<StreamError> for ExperimentError {
    fn from(e: StreamError) -> Self {
        ExperimentError::Stream(e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub mode: PlanMode,
    pub scheme: QuantScheme,
    /// Evaluate at most this many test images.
    pub images: usize,
    /// Explicit streamed layers for partial streaming.
    pub stream_layers: Option<Vec<String>>,
    /// Budget-driven partial streaming when no explicit list is given.
    pub onchip_budget: Option<u64>,
    /// Filter chunking for split execution.
    pub split: Vec<usize>,
    pub swap_per_image: bool,
    pub exact_fm: bool,
    pub topology: Option<Topology>,
    /// Pre-registered IP catalog; split runs build the default one when
    /// this is absent.
    pub library: Option<crate::prsim::IpLibrary>,
    pub cost: CostModel,
    pub device_budget: DeviceBudget,
}

impl ExperimentConfig {
    pub fn new(mode: PlanMode) -> Self {
        ExperimentConfig {
            mode,
            scheme: QuantScheme::lossless(),
            images: 1_000,
            stream_layers: None,
            onchip_budget: None,
            split: vec![4, 2],
            swap_per_image: false,
            exact_fm: false,
            topology: None,
            library: None,
            cost: CostModel::default(),
            device_budget: DeviceBudget::zynq7020(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeBreakdown {
    pub stream_secs: f64,
    pub reconfig_secs: f64,
    pub compute_secs: f64,
    pub transfer_secs: f64,
}

impl TimeBreakdown {
    pub fn total_secs(&self) -> f64 {
        self.stream_secs + self.reconfig_secs + self.compute_secs + self.transfer_secs
    }
}

/// One resource-table row of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceRow {
    pub id: String,
    pub region: String,
    pub ffs: u32,
    pub luts: u32,
    pub dsps: u32,
    pub bram_blocks: f64,
}

/// Everything a run measured. Accuracy is exactly correct/total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub images: usize,
    pub correct: usize,
    pub accuracy_pct: f64,
    pub predictions: Vec<u8>,
    pub quant_bits: u8,
    pub quant_frac_bits: u8,
    pub saturated: u64,
    /// Payload-only parameter bytes, the bandwidth-accounting number.
    pub streamed_payload_bytes: u64,
    /// Parameter bytes on the wire, headers included.
    pub streamed_wire_bytes: u64,
    pub fm_wire_bytes: u64,
    pub time: TimeBreakdown,
    pub swap_count: u64,
    pub load_count: u64,
    pub plan_text: String,
    pub resources: Vec<ResourceRow>,
    pub high_water: Option<ResourceRow>,
}

impl RunReport {
    fn score(predictions: &[u8], labels: &[u8]) -> (usize, f64) {
        let correct = predictions
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
        (correct, 100.0 * correct as f64 / labels.len() as f64)
    }

    /// The comparison-table text form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("mode: {}\n", self.mode));
        out.push_str(&format!(
            "accuracy: {:.2}% ({}/{})\n",
            self.accuracy_pct, self.correct, self.images
        ));
        out.push_str(&format!(
            "quant: {}-bit, {} fractional bits, {} saturated\n",
            self.quant_bits, self.quant_frac_bits, self.saturated
        ));
        out.push_str(&format!(
            "streamed parameters: {} payload bytes, {} on the wire\n",
            self.streamed_payload_bytes, self.streamed_wire_bytes
        ));
        out.push_str(&format!("feature maps: {} wire bytes\n", self.fm_wire_bytes));
        out.push_str(&format!(
            "simulated time: stream {:.6} s + reconfig {:.6} s + compute {:.6} s + transfer {:.6} s = {:.6} s\n",
            self.time.stream_secs,
            self.time.reconfig_secs,
            self.time.compute_secs,
            self.time.transfer_secs,
            self.time.total_secs()
        ));
        out.push_str(&format!(
            "slot activity: {} loads, {} swaps\n",
            self.load_count, self.swap_count
        ));
        out.push_str("plan:\n");
        for line in self.plan_text.lines() {
            out.push_str(&format!("  {line}\n"));
        }
        if !self.resources.is_empty() {
            out.push_str("resources (one unit resident in the slot at a time):\n");
            out.push_str("  id      region  ff      lut     dsp  bram\n");
            for r in &self.resources {
                out.push_str(&format!(
                    "  {:<7} {:<7} {:<7} {:<7} {:<4} {:.1}\n",
                    r.id, r.region, r.ffs, r.luts, r.dsps, r.bram_blocks
                ));
            }
            if let Some(hw) = &self.high_water {
                out.push_str(&format!(
                    "  high water: ff {} lut {} dsp {} bram {:.1}\n",
                    hw.ffs, hw.luts, hw.dsps, hw.bram_blocks
                ));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn footprint_row(id: &str, region: &str, f: &ResourceFootprint) -> ResourceRow {
    ResourceRow {
        id: id.to_string(),
        region: region.to_string(),
        ffs: f.ffs,
        luts: f.luts,
        dsps: f.dsps,
        bram_blocks: f.bram_blocks(),
    }
}

fn plan_for(m: &ModelSpec, cfg: &ExperimentConfig) -> Result<PartitionPlan, ExperimentError> {
    Ok(match cfg.mode {
        PlanMode::Static => PartitionPlan::static_baseline(m),
        PlanMode::Dasp => plan_dasp(m),
        PlanMode::Dapp => match (&cfg.stream_layers, cfg.onchip_budget) {
            (Some(layers), _) => {
                let refs: Vec<&str> = layers.iter().map(|s| s.as_str()).collect();
                plan_dapp(m, DappSelection::Layers(&refs))?
            }
            (None, Some(budget)) => plan_dapp(m, DappSelection::OnChipBudgetBytes(budget))?,
            (None, None) => plan_dapp(m, DappSelection::Layers(&["conv1", "conv2"]))?,
        },
        PlanMode::Sdci => plan_sdci(m, "conv1", &cfg.split)?,
    })
}

/// Run one mode over the first `cfg.images` test images.
pub fn run_experiment(
    m: &ModelSpec,
    params: &Parameters,
    test: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<RunReport, ExperimentError> {
    let subset = test.take(cfg.images);
    if subset.is_empty() {
        return Err(ExperimentError::NoImages);
    }
    params.validate_against(m)?;
    let plan = plan_for(m, cfg)?;
    let macs_per_image = mac_count(m)?;
    let compute_secs = macs_per_image as f64 * subset.len() as f64 / cfg.cost.macs_per_sec;

    let mut report = RunReport {
        mode: plan.mode().to_string(),
        images: subset.len(),
        correct: 0,
        accuracy_pct: 0.0,
        predictions: Vec::with_capacity(subset.len()),
        quant_bits: cfg.scheme.bits(),
        quant_frac_bits: cfg.scheme.frac_bits(),
        saturated: 0,
        streamed_payload_bytes: 0,
        streamed_wire_bytes: 0,
        fm_wire_bytes: 0,
        time: TimeBreakdown {
            compute_secs,
            ..TimeBreakdown::default()
        },
        swap_count: 0,
        load_count: 0,
        plan_text: plan.to_text(),
        resources: Vec::new(),
        high_water: None,
    };

    match (cfg.mode, &cfg.topology) {
        (PlanMode::Sdci, Some(_)) => return Err(ExperimentError::SdciOverTopology),
        (PlanMode::Sdci, None) => {
            let lib = match &cfg.library {
                Some(lib) => lib.clone(),
                None => default_library_for(m, &plan, cfg.device_budget)?,
            };
            let mut state = FpgaState::new(cfg.device_budget);
            let session = StreamSession::new();
            let (logits, sdci) = execute_sdci_batch(
                &mut state,
                &lib,
                m,
                &plan,
                params,
                &subset.images,
                &session,
                cfg.scheme,
                &cfg.cost,
                cfg.swap_per_image,
            )?;
            for l in &logits {
                report.predictions.push(classify(l)? as u8);
            }
            report.saturated = sdci.saturated;
            report.streamed_payload_bytes = sdci.payload_bytes;
            report.streamed_wire_bytes = sdci.bytes_streamed;
            report.time.stream_secs = sdci.stream_secs;
            report.time.reconfig_secs = sdci.reconfig_secs;
            report.swap_count = sdci.swap_count;
            report.load_count = sdci.load_count;
            for ip in lib.ips() {
                let region = match ip.region {
                    Region::Static => "static",
                    Region::Reconfigurable => "pr",
                };
                // The comparison table keeps each slot occupant in its own
                // row; residencies are exclusive, never summed.
                if matches!(ip.op, IpOp::ConvChunk { .. } | IpOp::StaticTail { .. }) {
                    report.resources.push(footprint_row(&ip.id, region, &ip.footprint));
                }
            }
            report.high_water = Some(footprint_row("high-water", "-", &sdci.high_water));
        }
        (_, Some(topology)) => {
            let nodes = edgesim::assign_layers(m, &topology.nodes)?;
            let opts = PipelineOptions {
                scheme: cfg.scheme,
                exact_fm: cfg.exact_fm,
                threaded: nodes.len() > 1,
                cost: cfg.cost,
            };
            let pipeline = edgesim::run_pipeline(
                m,
                &nodes,
                &topology.links,
                &plan,
                params,
                &subset.images,
                &opts,
            )?;
            report.predictions = pipeline.predictions.iter().map(|&p| p as u8).collect();
            report.saturated = pipeline.saturated;
            report.streamed_payload_bytes = pipeline.param_payload_bytes;
            report.streamed_wire_bytes = pipeline.param_bytes;
            report.fm_wire_bytes = pipeline.fm_bytes;
            report.time.stream_secs = pipeline.param_stream_secs;
            report.time.transfer_secs = pipeline.transfer_secs_total();
        }
        (PlanMode::Static, None) => {
            for image in &subset.images {
                report.predictions.push(classify(&forward(m, params, image)?)? as u8);
            }
        }
        (_, None) => {
            // Full or partial streaming on a single device: stream once,
            // arm, then run the batch. Static layers keep float parameters.
            let session = StreamSession::new();
            let stats = stream_parameters(&session, &plan, params, cfg.scheme)?;
            let received = receive_parameters(&session, m)?;
            if !received.is_clean() {
                let reason = received
                    .faults
                    .first()
                    .map(|(l, f)| format!("{l}: {f}"))
                    .unwrap_or_else(|| "unattributed damage".into());
                return Err(ExperimentError::Stream(reason));
            }
            let mut effective = Parameters::new();
            for entry in plan.entries() {
                let source = if entry.placement == crate::partition::Placement::Streamed {
                    received.params.get(&entry.layer)
                } else {
                    params.get(&entry.layer)
                };
                let lp = source.expect("plan is total over parameterized layers");
                effective.insert(&entry.layer, lp.weights.clone(), lp.bias.clone());
            }
            for image in &subset.images {
                report
                    .predictions
                    .push(classify(&forward(m, &effective, image)?)? as u8);
            }
            report.saturated = stats.saturated;
            report.streamed_payload_bytes = stats.payload_bytes;
            report.streamed_wire_bytes = stats.bytes_sent;
            report.time.stream_secs = stats.bytes_sent as f64 / cfg.cost.stream_bytes_per_sec;
            debug_assert_eq!(stats.payload_bytes, bandwidth_of(&plan, m, cfg.scheme));
        }
    }

    let (correct, pct) = RunReport::score(&report.predictions, &subset.labels);
    report.correct = correct;
    report.accuracy_pct = pct;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth;
    use crate::harness::train::{init_params, train_baseline, TrainConfig};
    use crate::model::lenet5;
    use crate::tensor::Tensor;

    fn small_setup() -> (ModelSpec, Parameters, Dataset) {
        let m = lenet5();
        let (imgs, labels) = synth::generate(160, 11);
        let train = Dataset {
            images: imgs
                .iter()
                .map(|img| {
                    Tensor::from_dims(
                        &[1, 28, 28],
                        img.iter().map(|&b| b as f32 / 255.0).collect(),
                    )
                    .unwrap()
                })
                .collect(),
            labels,
        };
        let cfg = TrainConfig {
            epochs: 2,
            lr: 0.02,
            batch_size: 16,
            seed: 42,
        };
        let params = train_baseline(&m, &train, &cfg).unwrap().params;
        let (imgs, labels) = synth::generate(40, 99);
        let test = Dataset {
            images: imgs
                .iter()
                .map(|img| {
                    Tensor::from_dims(
                        &[1, 28, 28],
                        img.iter().map(|&b| b as f32 / 255.0).collect(),
                    )
                    .unwrap()
                })
                .collect(),
            labels,
        };
        (m, params, test)
    }

    #[test]
    fn static_baseline_is_reproducible() {
        let (m, params, test) = small_setup();
        let cfg = ExperimentConfig {
            images: 20,
            ..ExperimentConfig::new(PlanMode::Static)
        };
        let a = run_experiment(&m, &params, &test, &cfg).unwrap();
        let b = run_experiment(&m, &params, &test, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.streamed_payload_bytes, 0);
        assert_eq!(a.correct as f64 * 100.0 / a.images as f64, a.accuracy_pct);
    }

    #[test]
    fn dasp_lossless_matches_static_argmax() {
        let (m, params, test) = small_setup();
        let stat = run_experiment(
            &m,
            &params,
            &test,
            &ExperimentConfig {
                images: 30,
                ..ExperimentConfig::new(PlanMode::Static)
            },
        )
        .unwrap();
        let dasp = run_experiment(
            &m,
            &params,
            &test,
            &ExperimentConfig {
                images: 30,
                ..ExperimentConfig::new(PlanMode::Dasp)
            },
        )
        .unwrap();
        assert_eq!(stat.predictions, dasp.predictions);
        assert_eq!(dasp.streamed_payload_bytes, 177_704);
    }

    #[test]
    fn sdci_matches_dasp_and_counts_slot_activity() {
        let (m, params, test) = small_setup();
        let dasp = run_experiment(
            &m,
            &params,
            &test,
            &ExperimentConfig {
                images: 25,
                ..ExperimentConfig::new(PlanMode::Dasp)
            },
        )
        .unwrap();
        let sdci = run_experiment(
            &m,
            &params,
            &test,
            &ExperimentConfig {
                images: 25,
                ..ExperimentConfig::new(PlanMode::Sdci)
            },
        )
        .unwrap();
        assert_eq!(dasp.predictions, sdci.predictions);
        // Chunk-major schedule: one load then one swap for the [4,2] split.
        assert_eq!(sdci.load_count, 1);
        assert_eq!(sdci.swap_count, 1);
        assert_eq!(sdci.streamed_payload_bytes, 624);
        assert!(sdci.resources.len() >= 3);

        let naive = run_experiment(
            &m,
            &params,
            &test,
            &ExperimentConfig {
                images: 25,
                swap_per_image: true,
                ..ExperimentConfig::new(PlanMode::Sdci)
            },
        )
        .unwrap();
        assert_eq!(naive.predictions, sdci.predictions);
        assert_eq!(naive.swap_count, 2 * 25 - 1);
    }

    #[test]
    fn lossy_dapp_never_beats_lossless_dasp() {
        let (m, params, test) = small_setup();
        let dasp = run_experiment(
            &m,
            &params,
            &test,
            &ExperimentConfig {
                images: 40,
                ..ExperimentConfig::new(PlanMode::Dasp)
            },
        )
        .unwrap();
        let dapp = run_experiment(
            &m,
            &params,
            &test,
            &ExperimentConfig {
                images: 40,
                scheme: QuantScheme::lossy8(),
                ..ExperimentConfig::new(PlanMode::Dapp)
            },
        )
        .unwrap();
        assert!(dapp.accuracy_pct <= dasp.accuracy_pct);
        assert_eq!(dapp.streamed_payload_bytes, 2_572);
    }

    #[test]
    fn simulated_time_orders_dapp_dasp_sdci() {
        let (m, params, test) = small_setup();
        let run = |mode| {
            run_experiment(
                &m,
                &params,
                &test,
                &ExperimentConfig {
                    images: 15,
                    ..ExperimentConfig::new(mode)
                },
            )
            .unwrap()
            .time
            .total_secs()
        };
        let dapp = run(PlanMode::Dapp);
        let dasp = run(PlanMode::Dasp);
        let sdci = run(PlanMode::Sdci);
        assert!(dapp < dasp, "dapp {dapp} vs dasp {dasp}");
        assert!(dasp < sdci, "dasp {dasp} vs sdci {sdci}");
    }

    #[test]
    fn report_text_and_json_render() {
        let (m, params, test) = small_setup();
        let report = run_experiment(
            &m,
            &params,
            &test,
            &ExperimentConfig {
                images: 10,
                ..ExperimentConfig::new(PlanMode::Sdci)
            },
        )
        .unwrap();
        let text = report.to_text();
        assert!(text.contains("mode: sdci"));
        assert!(text.contains("ip1"));
        assert!(text.contains("ip2"));
        let back: RunReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn untrained_params_flow_through_too() {
        let m = lenet5();
        let params = init_params(&m, 1);
        let (imgs, labels) = synth::generate(5, 1);
        let test = Dataset {
            images: imgs
                .iter()
                .map(|img| {
                    Tensor::from_dims(
                        &[1, 28, 28],
                        img.iter().map(|&b| b as f32 / 255.0).collect(),
                    )
                    .unwrap()
                })
                .collect(),
            labels,
        };
        let report = run_experiment(
            &m,
            &params,
            &test,
            &ExperimentConfig {
                images: 5,
                ..ExperimentConfig::new(PlanMode::Dasp)
            },
        )
        .unwrap();
        assert_eq!(report.predictions.len(), 5);
    }
}
