//! Reverse-mode pass: replays the forward caches backwards and accumulates
//! exact gradients for every parameter into one flat vector.

use super::forward::{gather, scatter_add, ForwardState, ModelInputs};
use super::matrix::Mat;
use super::mlp::mlp_backward;
use super::{ModelError, ModelParameters, Slot};

fn add_assign(target: &mut Mat, other: &Mat) {
    debug_assert_eq!(target.rows, other.rows);
    debug_assert_eq!(target.cols, other.cols);
    for (t, o) in target.data.iter_mut().zip(&other.data) {
        *t += o;
    }
}

/// target.row(i) += source.row(idx[i])
fn add_gather(target: &mut Mat, source: &Mat, idx: &[usize]) {
    debug_assert_eq!(target.rows, idx.len());
    for (row, &i) in idx.iter().enumerate() {
        let t = target.row_mut(row);
        for (tv, sv) in t.iter_mut().zip(source.row(i)) {
            *tv += sv;
        }
    }
}

/// Gradient of the scalar loss with respect to every parameter, given the
/// adjoint of the network output.
pub fn backward(
    inputs: &ModelInputs,
    params: &ModelParameters,
    state: &ForwardState,
    d_output: &Mat,
) -> Result<Vec<f64>, ModelError> {
    let r_count = inputs.levels.len();
    let latent = params.config.latent;
    let groups = params.config.groups;
    let mut grads = vec![0.0; params.data.len()];

    // Decoder.
    let d_finest = mlp_backward(
        &params.mlp(Slot::Decoder),
        &mut params.mlp_grads(&mut grads, Slot::Decoder),
        &state.decoder_cache,
        d_output,
    );
    let mut dv: Vec<Mat> = inputs
        .levels
        .iter()
        .map(|l| Mat::zeros(l.node_features.rows, latent))
        .collect();
    dv[r_count - 1] = d_finest;

    for r in (0..r_count).rev() {
        let level = r + 1;
        let lstate = &state.levels[r];

        // Reverse the up-sampling pass r -> r+1 (it ran after this level's
        // aggregation, so it is reversed before the level itself).
        if let Some(up) = &lstate.up {
            let cross = &inputs.cross[r];
            let d_fine_new = std::mem::replace(&mut dv[r + 1], Mat::zeros(0, 0));
            let d_xv = mlp_backward(
                &params.mlp(Slot::UpsampleNode { level }),
                &mut params.mlp_grads(&mut grads, Slot::UpsampleNode { level }),
                &up.node_cache,
                &d_fine_new,
            );
            let mut parts = d_xv.split_cols(&[latent, latent]);
            let d_sum = parts.pop().expect("two blocks");
            let mut d_fine_old = parts.pop().expect("two blocks");
            let d_new_cross = gather(&d_sum, &cross.dst);
            let d_xe = mlp_backward(
                &params.mlp(Slot::UpsampleEdge { level }),
                &mut params.mlp_grads(&mut grads, Slot::UpsampleEdge { level }),
                &up.edge_cache,
                &d_new_cross,
            );
            let mut p = d_xe.split_cols(&[latent, latent, latent]);
            let d_dst = p.pop().expect("three blocks");
            let d_src = p.pop().expect("three blocks");
            let d_cross_emb = p.pop().expect("three blocks");
            mlp_backward(
                &params.mlp(Slot::EdgeEncoderCross),
                &mut params.mlp_grads(&mut grads, Slot::EdgeEncoderCross),
                &up.enc_cache,
                &d_cross_emb,
            );
            scatter_add(&mut dv[r], &d_src, &cross.src);
            scatter_add(&mut d_fine_old, &d_dst, &cross.dst);
            dv[r + 1] = d_fine_old;
        }

        // Reverse aggregation into the K group chains.
        let d_level = std::mem::replace(&mut dv[r], Mat::zeros(0, 0));
        let d_concat = mlp_backward(
            &params.mlp(Slot::Aggregator { level }),
            &mut params.mlp_grads(&mut grads, Slot::Aggregator { level }),
            &lstate.agg_cache,
            &d_level,
        );
        let blocks = d_concat.split_cols(&vec![latent; groups]);
        let n_nodes = inputs.levels[r].node_features.rows;
        let mut d_start = Mat::zeros(n_nodes, latent);

        for k in 0..groups {
            let gstate = &lstate.groups[k];
            let ginputs = &inputs.levels[r].groups[k];
            let edge_slot = Slot::ProcessorEdge { level, group: k + 1 };
            let node_slot = Slot::ProcessorNode { level, group: k + 1 };
            let mut d_v = blocks[k].clone();
            let mut d_e = Mat::zeros(ginputs.src.len(), latent);
            for l in (0..gstate.steps.len()).rev() {
                let sstate = &gstate.steps[l];
                let d_xv = mlp_backward(
                    &params.mlp(node_slot),
                    &mut params.mlp_grads(&mut grads, node_slot),
                    &sstate.node_cache,
                    &d_v,
                );
                let mut parts = d_xv.split_cols(&[latent, latent]);
                let d_agg = parts.pop().expect("two blocks");
                let d_v_direct = parts.pop().expect("two blocks");

                let mut d_new_edges = d_e;
                add_gather(&mut d_new_edges, &d_agg, &ginputs.src);
                let d_xe = mlp_backward(
                    &params.mlp(edge_slot),
                    &mut params.mlp_grads(&mut grads, edge_slot),
                    &sstate.edge_cache,
                    &d_new_edges,
                );
                let mut p = d_xe.split_cols(&[latent, latent, latent]);
                let d_dst = p.pop().expect("three blocks");
                let d_src = p.pop().expect("three blocks");
                d_e = p.pop().expect("three blocks");

                d_v = d_v_direct;
                scatter_add(&mut d_v, &d_src, &ginputs.src);
                scatter_add(&mut d_v, &d_dst, &ginputs.dst);
            }
            mlp_backward(
                &params.mlp(Slot::EdgeEncoderIntra),
                &mut params.mlp_grads(&mut grads, Slot::EdgeEncoderIntra),
                &gstate.enc_cache,
                &d_e,
            );
            add_assign(&mut d_start, &d_v);
        }
        dv[r] = d_start;
    }

    // Reverse the down passes (they ran right after encoding, finest pair
    // first; reversed in the opposite order).
    if params.config.down_sampling {
        for r in 0..r_count.saturating_sub(1) {
            let level = r + 1;
            let dstate = &state.down_passes[r_count - 2 - r];
            let cross = &inputs.cross[r];
            let d_coarse_new = std::mem::replace(&mut dv[r], Mat::zeros(0, 0));
            let d_xv = mlp_backward(
                &params.mlp(Slot::DownsampleNode { level }),
                &mut params.mlp_grads(&mut grads, Slot::DownsampleNode { level }),
                &dstate.node_cache,
                &d_coarse_new,
            );
            let mut parts = d_xv.split_cols(&[latent, latent]);
            let d_sum = parts.pop().expect("two blocks");
            let mut d_coarse_old = parts.pop().expect("two blocks");
            // Down passes aggregate at the coarse ends of the cross edges.
            let d_new_cross = gather(&d_sum, &cross.src);
            let d_xe = mlp_backward(
                &params.mlp(Slot::DownsampleEdge { level }),
                &mut params.mlp_grads(&mut grads, Slot::DownsampleEdge { level }),
                &dstate.edge_cache,
                &d_new_cross,
            );
            let mut p = d_xe.split_cols(&[latent, latent, latent]);
            let d_coarse_read = p.pop().expect("three blocks");
            let d_fine_read = p.pop().expect("three blocks");
            let d_cross_emb = p.pop().expect("three blocks");
            mlp_backward(
                &params.mlp(Slot::EdgeEncoderCross),
                &mut params.mlp_grads(&mut grads, Slot::EdgeEncoderCross),
                &dstate.enc_cache,
                &d_cross_emb,
            );
            scatter_add(&mut dv[r + 1], &d_fine_read, &cross.dst);
            scatter_add(&mut d_coarse_old, &d_coarse_read, &cross.src);
            dv[r] = d_coarse_old;
        }
    }

    // Node encoder, shared across levels.
    for r in 0..r_count {
        mlp_backward(
            &params.mlp(Slot::NodeEncoder),
            &mut params.mlp_grads(&mut grads, Slot::NodeEncoder),
            &state.encode_caches[r],
            &dv[r],
        );
    }
    Ok(grads)
}
