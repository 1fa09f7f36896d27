//! Encoder-processor-decoder network over the multi-level mesh: per-group
//! weight-shared message passing inside each level, up-sampling passes across
//! levels, manual reverse-mode gradients, and an adaptive-moment optimizer.
//!
//! All parameters live in one flat f64 vector with a named slot index; this
//! keeps the optimizer, the checkpoint blob, parameter counting and the
//! finite-difference gradient checks trivial.

mod backward;
mod checkpoint;
pub mod matrix;
pub mod mlp;
mod forward;
mod optim;

pub use backward::backward;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use forward::{build_inputs, forward, ForwardState, ModelInputs, Normalization};
pub use optim::{mse_loss, AdamParams, AdamState};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptive::{MPSchedule, SubgraphPartition};
use crate::hierarchy::MultiLevelMesh;
use mlp::{MlpGrads, MlpParams, MlpSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Mesh levels R.
    pub levels: usize,
    /// Direction groups K.
    pub groups: usize,
    /// Embedding width (also the MLP hidden width).
    pub latent: usize,
    pub node_features: usize,
    pub edge_features: usize,
    pub output_dim: usize,
    /// Adds the mirrored down-sampling passes with their own parameters.
    pub down_sampling: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(levels: usize, groups: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            levels,
            groups,
            latent: 128,
            node_features: 4,
            edge_features: 3,
            output_dim: 1,
            down_sampling: false,
            seed,
        }
    }
}

/// Identity of one MLP inside the model. Levels are 1-based to match the
/// mesh-level naming.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    NodeEncoder,
    EdgeEncoderIntra,
    EdgeEncoderCross,
    ProcessorEdge { level: usize, group: usize },
    ProcessorNode { level: usize, group: usize },
    Aggregator { level: usize },
    UpsampleEdge { level: usize },
    UpsampleNode { level: usize },
    DownsampleEdge { level: usize },
    DownsampleNode { level: usize },
    Decoder,
}

impl Slot {
    pub fn name(&self) -> String {
        match self {
            Slot::NodeEncoder => "node_encoder".into(),
            Slot::EdgeEncoderIntra => "edge_encoder_intra".into(),
            Slot::EdgeEncoderCross => "edge_encoder_cross".into(),
            Slot::ProcessorEdge { level, group } => format!("processor_edge_r{level}_k{group}"),
            Slot::ProcessorNode { level, group } => format!("processor_node_r{level}_k{group}"),
            Slot::Aggregator { level } => format!("aggregator_r{level}"),
            Slot::UpsampleEdge { level } => format!("upsample_edge_r{level}"),
            Slot::UpsampleNode { level } => format!("upsample_node_r{level}"),
            Slot::DownsampleEdge { level } => format!("downsample_edge_r{level}"),
            Slot::DownsampleNode { level } => format!("downsample_node_r{level}"),
            Slot::Decoder => "decoder".into(),
        }
    }
}

/// One MLP slot resolved to its position in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotView {
    pub slot: Slot,
    pub spec: MlpSpec,
    pub offset: usize,
}

impl SlotView {
    pub fn len(&self) -> usize {
        self.spec.parameter_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (offset, len) of the eight tensors in layout order:
    /// w1, b1, w2, b2, w3, b3, gamma, beta.
    fn tensor_ranges(&self) -> [(usize, usize); 8] {
        let MlpSpec {
            in_dim,
            hidden,
            out_dim,
            layer_norm,
        } = self.spec;
        let sizes = [
            hidden * in_dim,
            hidden,
            hidden * hidden,
            hidden,
            out_dim * hidden,
            out_dim,
            if layer_norm { out_dim } else { 0 },
            if layer_norm { out_dim } else { 0 },
        ];
        let mut at = self.offset;
        sizes.map(|s| {
            let r = (at, s);
            at += s;
            r
        })
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("fine node {node} has cross-edge in-degree {got}, expected 3")]
    BadCrossInDegree { node: usize, got: usize },
    #[error("schedule does not cover level {level} group {group}")]
    MissingScheduleEntry { level: usize, group: usize },
    #[error("non-finite loss at training step {step}")]
    NonFiniteLoss { step: usize },
    #[error(transparent)]
    Mesh(#[from] crate::mesh::MeshError),
    #[error("checkpoint io: {0}")]
    CheckpointIo(String),
    #[error("checkpoint malformed: {0}")]
    CheckpointFormat(String),
}

/// All learnable parameters, flat, with the slot index.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub config: ModelConfig,
    pub slots: Vec<SlotView>,
    pub data: Vec<f64>,
}

pub(crate) fn layout_of(config: &ModelConfig) -> Vec<SlotView> {
    let l = config.latent;
    let mut slots = Vec::new();
    let mut at = 0usize;
    let mut push = |slot: Slot, in_dim: usize, out_dim: usize, layer_norm: bool| {
        let spec = MlpSpec {
            in_dim,
            hidden: l,
            out_dim,
            layer_norm,
        };
        let view = SlotView {
            slot,
            spec,
            offset: at,
        };
        at += view.len();
        slots.push(view);
    };

    push(Slot::NodeEncoder, config.node_features, l, true);
    push(Slot::EdgeEncoderIntra, config.edge_features, l, true);
    if config.levels > 1 {
        push(Slot::EdgeEncoderCross, config.edge_features, l, true);
    }
    for level in 1..=config.levels {
        for group in 1..=config.groups {
            push(Slot::ProcessorEdge { level, group }, 3 * l, l, true);
            push(Slot::ProcessorNode { level, group }, 2 * l, l, true);
        }
    }
    for level in 1..=config.levels {
        push(Slot::Aggregator { level }, config.groups * l, l, true);
    }
    for level in 1..config.levels {
        push(Slot::UpsampleEdge { level }, 3 * l, l, true);
        push(Slot::UpsampleNode { level }, 2 * l, l, true);
    }
    if config.down_sampling {
        for level in 1..config.levels {
            push(Slot::DownsampleEdge { level }, 3 * l, l, true);
            push(Slot::DownsampleNode { level }, 2 * l, l, true);
        }
    }
    push(Slot::Decoder, l, config.output_dim, false);
    slots
}

impl ModelParameters {
    /// Fan-in-scaled symmetric uniform initialization, deterministic per seed.
    pub fn init(config: &ModelConfig) -> ModelParameters {
        let slots = layout_of(config);
        let total = slots.last().map_or(0, |s| s.offset + s.len());
        let mut data = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for view in &slots {
            let ranges = view.tensor_ranges();
            let fan_ins = [view.spec.in_dim, view.spec.hidden, view.spec.hidden];
            // Weights LeCun-uniform, biases fan-in-uniform. Nonzero biases
            // keep constant-feature rows away from the layer-norm epsilon
            // regime, where gradients turn violently curved.
            for ((w, b), fan_in) in [ranges[0], ranges[2], ranges[4]]
                .iter()
                .zip([ranges[1], ranges[3], ranges[5]])
                .zip(fan_ins)
            {
                let bound = (3.0 / fan_in as f64).sqrt();
                for i in w.0..w.0 + w.1 {
                    data[i] = rng.gen_range(-bound..bound);
                }
                let bias_bound = 1.0 / (fan_in as f64).sqrt();
                for i in b.0..b.0 + b.1 {
                    data[i] = rng.gen_range(-bias_bound..bias_bound);
                }
            }
            // layer-norm scale starts at one, shift at zero
            let (g0, glen) = ranges[6];
            for i in g0..g0 + glen {
                data[i] = 1.0;
            }
        }
        ModelParameters {
            config: config.clone(),
            slots,
            data,
        }
    }

    pub fn view(&self, slot: Slot) -> &SlotView {
        self.slots
            .iter()
            .find(|v| v.slot == slot)
            .unwrap_or_else(|| panic!("no slot {slot:?} in this model"))
    }

    /// Borrow one MLP's tensors.
    pub fn mlp(&self, slot: Slot) -> MlpParams<'_> {
        let view = self.view(slot);
        let r = view.tensor_ranges();
        let s = |i: usize| &self.data[r[i].0..r[i].0 + r[i].1];
        MlpParams {
            spec: view.spec,
            w1: s(0),
            b1: s(1),
            w2: s(2),
            b2: s(3),
            w3: s(4),
            b3: s(5),
            gamma: s(6),
            beta: s(7),
        }
    }

    /// Borrow one MLP's gradient tensors from a flat gradient vector.
    pub fn mlp_grads<'a>(&self, grads: &'a mut [f64], slot: Slot) -> MlpGrads<'a> {
        let view = self.view(slot);
        let base = view.offset;
        let r = view.tensor_ranges();
        let region = &mut grads[base..base + view.len()];
        let (w1, rest) = region.split_at_mut(r[1].0 - base);
        let (b1, rest) = rest.split_at_mut(r[1].1);
        let (w2, rest) = rest.split_at_mut(r[2].1);
        let (b2, rest) = rest.split_at_mut(r[3].1);
        let (w3, rest) = rest.split_at_mut(r[4].1);
        let (b3, rest) = rest.split_at_mut(r[5].1);
        let (gamma, beta) = rest.split_at_mut(r[6].1);
        MlpGrads {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            gamma,
            beta,
        }
    }
}

/// Exact count of scalar parameters.
pub fn count_parameters(params: &ModelParameters) -> usize {
    params.data.len()
}

/// Parameter count of a flat per-step parameterization at the same widths:
/// encoders and decoder plus one fresh processor pair per message-passing
/// step. Grows linearly in the step count, unlike the weight-shared model.
pub fn per_step_parameter_count(config: &ModelConfig, total_steps: u32) -> usize {
    let l = config.latent;
    let enc_node = MlpSpec {
        in_dim: config.node_features,
        hidden: l,
        out_dim: l,
        layer_norm: true,
    };
    let enc_edge = MlpSpec {
        in_dim: config.edge_features,
        hidden: l,
        out_dim: l,
        layer_norm: true,
    };
    let proc_edge = MlpSpec {
        in_dim: 3 * l,
        hidden: l,
        out_dim: l,
        layer_norm: true,
    };
    let proc_node = MlpSpec {
        in_dim: 2 * l,
        hidden: l,
        out_dim: l,
        layer_norm: true,
    };
    let decoder = MlpSpec {
        in_dim: l,
        hidden: l,
        out_dim: config.output_dim,
        layer_norm: false,
    };
    enc_node.parameter_count()
        + enc_edge.parameter_count()
        + total_steps as usize * (proc_edge.parameter_count() + proc_node.parameter_count())
        + decoder.parameter_count()
}

/// FLOP estimate for one forward pass: every MLP application counted as
/// 2 * (in*h + h*h + h*out) per row, plus the aggregation additions.
pub fn estimate_flops(
    multilevel: &MultiLevelMesh,
    partitions: &[SubgraphPartition],
    schedule: &MPSchedule,
    params: &ModelParameters,
) -> u64 {
    let config = &params.config;
    let l = config.latent as u64;
    let r_count = multilevel.level_count();
    let mut flops = 0u64;

    let spec_of = |slot: Slot| params.view(slot).spec;
    let node_rows: Vec<u64> = multilevel
        .levels
        .iter()
        .map(|g| g.node_count() as u64)
        .collect();

    for r in 0..r_count {
        // node encoder
        flops += node_rows[r] * spec_of(Slot::NodeEncoder).flops_per_row();
        let level = r + 1;
        for k in 0..config.groups {
            let group_edges = partitions[r]
                .assignment
                .iter()
                .filter(|&&g| g == k)
                .count() as u64;
            flops += group_edges * spec_of(Slot::EdgeEncoderIntra).flops_per_row();
            let steps = schedule.steps[r][k] as u64;
            let edge_spec = spec_of(Slot::ProcessorEdge { level, group: k + 1 });
            let node_spec = spec_of(Slot::ProcessorNode { level, group: k + 1 });
            flops += steps
                * (group_edges * edge_spec.flops_per_row()
                    + node_rows[r] * node_spec.flops_per_row()
                    + group_edges * l); // sum of edge embeddings into nodes
        }
        flops += node_rows[r] * spec_of(Slot::Aggregator { level }).flops_per_row();
        if r + 1 < r_count {
            let cross = multilevel.cross_edges[r].len() as u64;
            flops += cross * spec_of(Slot::EdgeEncoderCross).flops_per_row();
            flops += cross * spec_of(Slot::UpsampleEdge { level }).flops_per_row();
            flops += node_rows[r + 1] * spec_of(Slot::UpsampleNode { level }).flops_per_row();
            flops += cross * l;
        }
    }
    if config.down_sampling {
        for r in 0..r_count - 1 {
            let level = r + 1;
            let cross = multilevel.cross_edges[r].len() as u64;
            flops += cross * spec_of(Slot::EdgeEncoderCross).flops_per_row();
            flops += cross * spec_of(Slot::DownsampleEdge { level }).flops_per_row();
            flops += node_rows[r] * spec_of(Slot::DownsampleNode { level }).flops_per_row();
            flops += cross * l;
        }
    }
    flops += node_rows[r_count - 1] * spec_of(Slot::Decoder).flops_per_row();
    flops
}

#[cfg(test)]
mod tests;
