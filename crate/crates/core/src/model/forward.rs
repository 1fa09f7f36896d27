//! Forward pass over the multi-level mesh, recording every intermediate the
//! reverse pass replays.

use serde::{Deserialize, Serialize};

use super::matrix::Mat;
use super::mlp::{mlp_forward, MlpCache};
use super::{ModelError, ModelParameters, Slot};
use crate::adaptive::{MPSchedule, SubgraphPartition};
use crate::hierarchy::MultiLevelMesh;
use crate::mesh::directed_edges;
use crate::vec2::Vec2;

/// Dataset statistics applied to inputs and targets. Inputs stay raw except
/// the force components; targets are z-scored per output dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub force_mean: Vec2,
    pub force_std: Vec2,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

impl Normalization {
    pub fn identity(output_dim: usize) -> Normalization {
        Normalization {
            force_mean: Vec2::ZERO,
            force_std: Vec2::new(1.0, 1.0),
            target_mean: vec![0.0; output_dim],
            target_std: vec![1.0; output_dim],
        }
    }

    pub fn normalize_target(&self, raw: &[f64]) -> Vec<f64> {
        let d = self.target_mean.len();
        raw.iter()
            .enumerate()
            .map(|(i, v)| (v - self.target_mean[i % d]) / self.target_std[i % d])
            .collect()
    }

    pub fn denormalize_output(&self, normalized: &Mat) -> Mat {
        let mut out = normalized.clone();
        for i in 0..out.rows {
            for (c, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * self.target_std[c] + self.target_mean[c];
            }
        }
        out
    }
}

/// Per-group directed edges with raw features and endpoint indices.
pub struct GroupInputs {
    pub edge_features: Mat,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
}

pub struct LevelInputs {
    pub node_features: Mat,
    pub groups: Vec<GroupInputs>,
}

/// Cross-level edges (coarse src, fine dst) and the same edges reversed for
/// the optional down-sampling passes.
pub struct CrossInputs {
    pub edge_features: Mat,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub rev_edge_features: Mat,
}

pub struct ModelInputs {
    pub levels: Vec<LevelInputs>,
    pub cross: Vec<CrossInputs>,
}

/// Build network inputs from a multi-level mesh, its per-level partitions and
/// the dataset normalization.
pub fn build_inputs(
    multilevel: &MultiLevelMesh,
    partitions: &[SubgraphPartition],
    normalization: &Normalization,
) -> Result<ModelInputs, ModelError> {
    let r_count = multilevel.level_count();
    if partitions.len() != r_count {
        return Err(ModelError::Shape(format!(
            "{} partitions for {} levels",
            partitions.len(),
            r_count
        )));
    }
    let mut levels = Vec::with_capacity(r_count);
    for (r, graph) in multilevel.levels.iter().enumerate() {
        let conditions = &multilevel.conditions[r];
        let mut node_features = Mat::zeros(graph.node_count(), 4);
        for i in 0..graph.node_count() {
            let row = node_features.row_mut(i);
            row[0] = conditions.boundary[i] as f64;
            row[1] = conditions.fixed[i] as f64;
            row[2] = (conditions.force[i].x - normalization.force_mean.x)
                / normalization.force_std.x;
            row[3] = (conditions.force[i].y - normalization.force_mean.y)
                / normalization.force_std.y;
        }
        let edges = directed_edges(graph)?;
        let partition = &partitions[r];
        if partition.assignment.len() != edges.len() {
            return Err(ModelError::Shape(format!(
                "partition covers {} directed edges, level {} has {}",
                partition.assignment.len(),
                r + 1,
                edges.len()
            )));
        }
        let mut groups = Vec::with_capacity(partition.groups);
        for k in 0..partition.groups {
            let members: Vec<usize> = (0..edges.len())
                .filter(|&i| partition.assignment[i] == k)
                .collect();
            let mut feats = Mat::zeros(members.len(), 3);
            let mut src = Vec::with_capacity(members.len());
            let mut dst = Vec::with_capacity(members.len());
            for (row, &i) in members.iter().enumerate() {
                let e = &edges[i];
                let f = feats.row_mut(row);
                f[0] = e.displacement.x;
                f[1] = e.displacement.y;
                f[2] = e.length;
                src.push(e.src);
                dst.push(e.dst);
            }
            groups.push(GroupInputs {
                edge_features: feats,
                src,
                dst,
            });
        }
        levels.push(LevelInputs {
            node_features,
            groups,
        });
    }

    let mut cross = Vec::with_capacity(multilevel.cross_edges.len());
    for (i, edges) in multilevel.cross_edges.iter().enumerate() {
        let fine_nodes = multilevel.levels[i + 1].node_count();
        let mut in_degree = vec![0usize; fine_nodes];
        let mut feats = Mat::zeros(edges.len(), 3);
        let mut rev = Mat::zeros(edges.len(), 3);
        let mut src = Vec::with_capacity(edges.len());
        let mut dst = Vec::with_capacity(edges.len());
        for (row, e) in edges.iter().enumerate() {
            in_degree[e.dst] += 1;
            let f = feats.row_mut(row);
            f[0] = e.displacement.x;
            f[1] = e.displacement.y;
            f[2] = e.length;
            let rf = rev.row_mut(row);
            rf[0] = -e.displacement.x;
            rf[1] = -e.displacement.y;
            rf[2] = e.length;
            src.push(e.src);
            dst.push(e.dst);
        }
        if let Some(node) = (0..fine_nodes).find(|&n| in_degree[n] != 3) {
            return Err(ModelError::BadCrossInDegree {
                node,
                got: in_degree[node],
            });
        }
        cross.push(CrossInputs {
            edge_features: feats,
            src,
            dst,
            rev_edge_features: rev,
        });
    }
    Ok(ModelInputs { levels, cross })
}

pub(super) fn gather(v: &Mat, idx: &[usize]) -> Mat {
    let mut out = Mat::zeros(idx.len(), v.cols);
    for (row, &i) in idx.iter().enumerate() {
        out.row_mut(row).copy_from_slice(v.row(i));
    }
    out
}

pub(super) fn scatter_add(target: &mut Mat, rows: &Mat, idx: &[usize]) {
    debug_assert_eq!(rows.rows, idx.len());
    for (row, &i) in idx.iter().enumerate() {
        let t = target.row_mut(i);
        for (tv, rv) in t.iter_mut().zip(rows.row(row)) {
            *tv += rv;
        }
    }
}

pub(super) struct StepState {
    pub edge_cache: MlpCache,
    pub node_cache: MlpCache,
}

pub(super) struct GroupState {
    pub enc_cache: MlpCache,
    pub steps: Vec<StepState>,
}

pub(super) struct CrossPassState {
    pub enc_cache: MlpCache,
    pub edge_cache: MlpCache,
    pub node_cache: MlpCache,
}

pub(super) struct LevelState {
    pub groups: Vec<GroupState>,
    pub agg_cache: MlpCache,
    pub up: Option<CrossPassState>,
}

/// Everything the backward pass needs, plus the decoded output field.
pub struct ForwardState {
    pub output: Mat,
    pub steps_executed: u32,
    pub(super) encode_caches: Vec<MlpCache>,
    pub(super) down_passes: Vec<CrossPassState>,
    pub(super) levels: Vec<LevelState>,
    pub(super) decoder_cache: MlpCache,
}

/// One weight-shared message-passing step: update the group's edge
/// embeddings from their endpoints, sum them at source nodes, update every
/// node embedding. No residual connections.
pub(crate) fn mp_step(
    params: &ModelParameters,
    edge_slot: Slot,
    node_slot: Slot,
    group: &GroupInputs,
    edge_emb: Mat,
    node_emb: &Mat,
) -> (Mat, Mat, StepState) {
    let x_e = Mat::concat_cols(&[
        &edge_emb,
        &gather(node_emb, &group.src),
        &gather(node_emb, &group.dst),
    ]);
    let (new_edges, edge_cache) = mlp_forward(&params.mlp(edge_slot), x_e);

    let mut agg = Mat::zeros(node_emb.rows, node_emb.cols);
    scatter_add(&mut agg, &new_edges, &group.src);

    let x_v = Mat::concat_cols(&[node_emb, &agg]);
    let (new_nodes, node_cache) = mlp_forward(&params.mlp(node_slot), x_v);
    (
        new_edges,
        new_nodes,
        StepState {
            edge_cache,
            node_cache,
        },
    )
}

/// One cross-level pass (up or down): encode the cross edges, update them
/// from (edge, source embedding, destination embedding), then update every
/// destination node from the sum of its incoming cross edges.
pub(crate) fn cross_pass(
    params: &ModelParameters,
    edge_slot: Slot,
    node_slot: Slot,
    features: &Mat,
    src: &[usize],
    dst: &[usize],
    src_emb: &Mat,
    dst_emb: &Mat,
) -> (Mat, CrossPassState) {
    let (cross_emb, enc_cache) = mlp_forward(&params.mlp(Slot::EdgeEncoderCross), features.clone());
    let x_e = Mat::concat_cols(&[&cross_emb, &gather(src_emb, src), &gather(dst_emb, dst)]);
    let (new_cross, edge_cache) = mlp_forward(&params.mlp(edge_slot), x_e);

    let mut agg = Mat::zeros(dst_emb.rows, dst_emb.cols);
    scatter_add(&mut agg, &new_cross, dst);
    let x_v = Mat::concat_cols(&[dst_emb, &agg]);
    let (new_dst, node_cache) = mlp_forward(&params.mlp(node_slot), x_v);
    (
        new_dst,
        CrossPassState {
            enc_cache,
            edge_cache,
            node_cache,
        },
    )
}

/// Run the full network: encode every level, optional down passes, then per
/// level the K adaptive group chains, aggregation, and the up-sampling pass
/// to the next finer level; decode the finest level.
pub fn forward(
    inputs: &ModelInputs,
    schedule: &MPSchedule,
    params: &ModelParameters,
) -> Result<ForwardState, ModelError> {
    let r_count = inputs.levels.len();
    let config = &params.config;
    if schedule.steps.len() != r_count {
        return Err(ModelError::Shape(format!(
            "schedule has {} levels, inputs {}",
            schedule.steps.len(),
            r_count
        )));
    }
    let mut steps_executed = 0u32;

    // Encode all levels.
    let mut v: Vec<Mat> = Vec::with_capacity(r_count);
    let mut encode_caches = Vec::with_capacity(r_count);
    for level in &inputs.levels {
        let (emb, cache) = mlp_forward(
            &params.mlp(Slot::NodeEncoder),
            level.node_features.clone(),
        );
        v.push(emb);
        encode_caches.push(cache);
    }

    // Optional down passes, finest pair first.
    let mut down_passes = Vec::new();
    if config.down_sampling {
        for r in (0..r_count.saturating_sub(1)).rev() {
            let level = r + 1;
            let cross = &inputs.cross[r];
            let (new_coarse, state) = cross_pass(
                params,
                Slot::DownsampleEdge { level },
                Slot::DownsampleNode { level },
                &cross.rev_edge_features,
                &cross.dst, // fine side feeds the pass
                &cross.src, // coarse side receives
                &v[r + 1],
                &v[r],
            );
            v[r] = new_coarse;
            down_passes.push(state);
            steps_executed += 1;
        }
    }

    let mut levels = Vec::with_capacity(r_count);
    for r in 0..r_count {
        let level = r + 1;
        let level_inputs = &inputs.levels[r];
        if level_inputs.groups.len() != config.groups
            || schedule.steps[r].len() != config.groups
        {
            return Err(ModelError::MissingScheduleEntry { level, group: 0 });
        }
        let mut groups = Vec::with_capacity(config.groups);
        let mut finals = Vec::with_capacity(config.groups);
        for k in 0..config.groups {
            let group_inputs = &level_inputs.groups[k];
            let (mut edge_emb, enc_cache) = mlp_forward(
                &params.mlp(Slot::EdgeEncoderIntra),
                group_inputs.edge_features.clone(),
            );
            let mut node_emb = v[r].clone();
            let mut steps = Vec::with_capacity(schedule.steps[r][k] as usize);
            for _ in 0..schedule.steps[r][k] {
                let (e, n, state) = mp_step(
                    params,
                    Slot::ProcessorEdge { level, group: k + 1 },
                    Slot::ProcessorNode { level, group: k + 1 },
                    group_inputs,
                    edge_emb,
                    &node_emb,
                );
                edge_emb = e;
                node_emb = n;
                steps.push(state);
                steps_executed += 1;
            }
            finals.push(node_emb);
            groups.push(GroupState { enc_cache, steps });
        }

        let concat = Mat::concat_cols(&finals.iter().collect::<Vec<_>>());
        let (aggregated, agg_cache) =
            mlp_forward(&params.mlp(Slot::Aggregator { level }), concat);
        v[r] = aggregated;

        let up = if r + 1 < r_count {
            let cross = &inputs.cross[r];
            let (new_fine, state) = cross_pass(
                params,
                Slot::UpsampleEdge { level },
                Slot::UpsampleNode { level },
                &cross.edge_features,
                &cross.src,
                &cross.dst,
                &v[r],
                &v[r + 1],
            );
            v[r + 1] = new_fine;
            steps_executed += 1;
            Some(state)
        } else {
            None
        };
        levels.push(LevelState {
            groups,
            agg_cache,
            up,
        });
    }

    let (output, decoder_cache) =
        mlp_forward(&params.mlp(Slot::Decoder), v[r_count - 1].clone());
    Ok(ForwardState {
        output,
        steps_executed,
        encode_caches,
        down_passes,
        levels,
        decoder_cache,
    })
}
