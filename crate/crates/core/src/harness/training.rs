//! Training, evaluation and ablation orchestration. Every run config is
//! pinned to a total message-passing budget so that variants stay comparable
//! sample by sample.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Sample};
use super::HarnessError;
use crate::adaptive::{divide_mesh_graph, tune_mp_steps, MPSchedule, SubgraphPartition};
use crate::hierarchy::MultiLevelMesh;
use crate::model::{
    backward, build_inputs, count_parameters, estimate_flops, forward, matrix::Mat, mse_loss,
    save_checkpoint, AdamParams, AdamState, ModelConfig, ModelInputs, ModelParameters,
    Normalization,
};
use crate::seed::mix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    UpOnly,
    UpDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationMode {
    Adaptive,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub sampling_mode: SamplingMode,
    pub propagation_mode: PropagationMode,
    /// Levels to use; must be 1..= the dataset's level count.
    pub levels: usize,
    pub groups: usize,
    pub latent: usize,
    /// Total message-passing budget per sample (intra-level steps plus one
    /// per sampling pass). None runs the tuned schedule as-is.
    #[serde(default)]
    pub total_budget: Option<u32>,
    pub epochs: usize,
    pub seed: u64,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub patience: usize,
}

impl RunConfig {
    pub fn desk_default(name: &str, seed: u64) -> RunConfig {
        RunConfig {
            name: name.into(),
            sampling_mode: SamplingMode::UpOnly,
            propagation_mode: PropagationMode::Adaptive,
            levels: 3,
            groups: 4,
            latent: 128,
            total_budget: Some(20),
            epochs: 6,
            seed,
            lr_initial: 1e-3,
            lr_final: 1e-4,
            patience: 20,
        }
    }

    fn passes(&self) -> u32 {
        let levels = self.levels as u32;
        match self.sampling_mode {
            SamplingMode::UpOnly => levels - 1,
            SamplingMode::UpDown => 2 * (levels - 1),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            levels: self.levels,
            groups: self.groups,
            latent: self.latent,
            node_features: 4,
            edge_features: 3,
            output_dim: 1,
            down_sampling: self.sampling_mode == SamplingMode::UpDown,
            seed: self.seed,
        }
    }
}

/// A sample restricted to the run's level count (the last `levels` meshes),
/// with partitions and the tuned schedule recomputed when the run differs
/// from the dataset configuration.
pub struct PreparedSample {
    pub multilevel: MultiLevelMesh,
    pub partitions: Vec<SubgraphPartition>,
    pub schedule: MPSchedule,
    pub inputs: ModelInputs,
    pub target_raw: Vec<f64>,
    pub target_normalized: Mat,
}

fn slice_multilevel(sample: &Sample, levels: usize) -> Result<MultiLevelMesh, HarnessError> {
    let full = &sample.multilevel;
    let d = full.level_count();
    if levels == 0 || levels > d {
        return Err(HarnessError::Spec(format!(
            "run wants {levels} levels, dataset has {d}"
        )));
    }
    if levels == d {
        return Ok(full.clone());
    }
    let at = d - levels;
    Ok(MultiLevelMesh {
        levels: full.levels[at..].to_vec(),
        // The next-coarser mesh stands in as the tuning auxiliary.
        auxiliary: full.levels[at - 1].clone(),
        cross_edges: full.cross_edges[at..].to_vec(),
        conditions: full.conditions[at..].to_vec(),
        finest_target: full.finest_target,
        coarsening_factor: full.coarsening_factor,
        seed: full.seed,
    })
}

/// Build the per-sample structures one run needs.
pub fn prepare_sample(
    dataset: &Dataset,
    sample: &Sample,
    config: &RunConfig,
) -> Result<PreparedSample, HarnessError> {
    let multilevel = slice_multilevel(sample, config.levels)?;
    let same_shape =
        config.levels == dataset.spec.levels && config.groups == dataset.spec.groups;
    let partitions: Vec<SubgraphPartition> = if same_shape {
        sample.partitions.clone()
    } else {
        multilevel
            .levels
            .iter()
            .enumerate()
            .map(|(r, g)| {
                divide_mesh_graph(
                    g,
                    config.groups,
                    mix(mix(dataset.spec.seed, sample.descriptor.index as u64), 100 + r as u64),
                )
            })
            .collect::<Result<_, _>>()
            .map_err(|e| HarnessError::Sample(format!("sample {}", sample.descriptor.index), e.to_string()))?
    };
    let tuned = if same_shape {
        sample.schedule.clone()
    } else {
        tune_mp_steps(&multilevel, &partitions, dataset.spec.step_cap).map_err(|e| {
            HarnessError::Sample(format!("sample {}", sample.descriptor.index), e.to_string())
        })?
    };

    let intra_budget = match config.total_budget {
        Some(budget) => {
            let passes = config.passes();
            let cells = (config.levels * config.groups) as u32;
            if budget < passes + cells {
                return Err(HarnessError::Spec(format!(
                    "budget {budget} cannot cover {passes} passes plus one step per cell ({cells})"
                )));
            }
            budget - passes
        }
        None => tuned.total_intra_steps(),
    };
    let schedule = match config.propagation_mode {
        PropagationMode::Adaptive => tuned.rescaled_to(intra_budget),
        PropagationMode::Uniform => {
            MPSchedule::uniform(config.levels, config.groups, intra_budget)
        }
    };

    let inputs = build_inputs(&multilevel, &partitions, &dataset.normalization)
        .map_err(|e| HarnessError::Model(e.to_string()))?;
    let target_raw = sample.target.clone();
    let normalized = dataset.normalization.normalize_target(&target_raw);
    let target_normalized = Mat {
        rows: normalized.len(),
        cols: 1,
        data: normalized,
    };
    Ok(PreparedSample {
        multilevel,
        partitions,
        schedule,
        inputs,
        target_raw,
        target_normalized,
    })
}

/// Root mean square error over samples: mean over samples of the per-sample
/// mean squared node error, then the square root, in physical units.
pub fn rmse(per_sample: &[(Vec<f64>, Vec<f64>)]) -> Result<f64, HarnessError> {
    if per_sample.is_empty() {
        return Err(HarnessError::Spec("rmse of zero samples".into()));
    }
    let mut total = 0.0;
    for (prediction, truth) in per_sample {
        if prediction.len() != truth.len() {
            return Err(HarnessError::Spec(format!(
                "prediction has {} nodes, truth {}",
                prediction.len(),
                truth.len()
            )));
        }
        let mse: f64 = prediction
            .iter()
            .zip(truth)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / prediction.len() as f64;
        total += mse;
    }
    Ok((total / per_sample.len() as f64).sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_rmse: f64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run_id: String,
    pub config: RunConfig,
    pub parameter_count: usize,
    /// Mean forward-FLOP estimate over the test split.
    pub flops_per_sample: u64,
    /// Executed message-passing steps per test sample (budget accounting).
    pub steps_per_test_sample: Vec<u32>,
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub test_rmse: f64,
}

pub struct TrainOutcome {
    pub params: ModelParameters,
    pub normalization: Normalization,
    pub metrics: RunMetrics,
}

fn split_rmse(
    prepared: &[PreparedSample],
    indices: &[usize],
    params: &ModelParameters,
    normalization: &Normalization,
) -> Result<f64, HarnessError> {
    let mut pairs = Vec::with_capacity(indices.len());
    for &i in indices {
        let p = &prepared[i];
        let state =
            forward(&p.inputs, &p.schedule, params).map_err(|e| HarnessError::Model(e.to_string()))?;
        let denorm = normalization.denormalize_output(&state.output);
        pairs.push((denorm.data, p.target_raw.clone()));
    }
    rmse(&pairs)
}

/// Train one run on the dataset's training split, tracking the best
/// validation checkpoint. When `out_dir` is given, the best checkpoint is
/// persisted eagerly so a later abort still leaves the last good state.
pub fn train(
    dataset: &Dataset,
    config: &RunConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, HarnessError> {
    let model_config = config.model_config();
    let mut params = ModelParameters::init(&model_config);
    let mut adam = AdamState::new(params.data.len());
    let hp = AdamParams::default();

    let prepared: Vec<PreparedSample> = dataset
        .samples
        .iter()
        .map(|s| prepare_sample(dataset, s, config))
        .collect::<Result<_, _>>()?;

    let n_train = dataset.splits.train.len();
    let total_steps = (config.epochs * n_train).max(1);
    let mut step = 0usize;
    let mut best: Option<(usize, f64, ModelParameters)> = None;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 0xC0FFEE));

    for epoch in 0..config.epochs {
        let mut order = dataset.splits.train.to_vec();
        order.shuffle(&mut rng);
        for &i in &order {
            let p = &prepared[i];
            let state = forward(&p.inputs, &p.schedule, &params)
                .map_err(|e| HarnessError::Model(e.to_string()))?;
            let (loss, d_out) = mse_loss(&state.output, &p.target_normalized)
                .map_err(|e| HarnessError::Model(e.to_string()))?;
            if !loss.is_finite() {
                return Err(HarnessError::NonFiniteLoss { step });
            }
            let grads = backward(&p.inputs, &params, &state, &d_out)
                .map_err(|e| HarnessError::Model(e.to_string()))?;
            let lr = config.lr_initial
                * (config.lr_final / config.lr_initial).powf(step as f64 / total_steps as f64);
            adam.step(&mut params.data, &grads, lr, &hp);
            step += 1;
        }

        let train_rmse = split_rmse(&prepared, &dataset.splits.train, &params, &dataset.normalization)?;
        let val_rmse = split_rmse(&prepared, &dataset.splits.val, &params, &dataset.normalization)?;
        epochs.push(EpochMetrics {
            epoch,
            train_rmse,
            val_rmse,
        });
        let improved = best.as_ref().map_or(true, |(_, b, _)| val_rmse < *b);
        if improved {
            best = Some((epoch, val_rmse, params.clone()));
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(dir)
                    .map_err(|e| HarnessError::Io(dir.display().to_string(), e))?;
                save_checkpoint(&dir.join("checkpoint.ckpt"), &params, &dataset.normalization)
                    .map_err(|e| HarnessError::Model(e.to_string()))?;
            }
        }
        let best_epoch = best.as_ref().map(|(e, _, _)| *e).unwrap_or(0);
        if epoch.saturating_sub(best_epoch) >= config.patience {
            break;
        }
    }

    let (best_epoch, _, best_params) =
        best.unwrap_or((0, f64::INFINITY, params.clone()));

    // Test metrics with the best checkpoint, plus budget accounting.
    let mut test_pairs = Vec::new();
    let mut steps_per_test_sample = Vec::new();
    let mut flops_sum = 0u64;
    for &i in &dataset.splits.test {
        let p = &prepared[i];
        let state = forward(&p.inputs, &p.schedule, &best_params)
            .map_err(|e| HarnessError::Model(e.to_string()))?;
        steps_per_test_sample.push(state.steps_executed);
        let denorm = dataset.normalization.denormalize_output(&state.output);
        test_pairs.push((denorm.data, p.target_raw.clone()));
        flops_sum += estimate_flops(&p.multilevel, &p.partitions, &p.schedule, &best_params);
    }
    let test_rmse = rmse(&test_pairs)?;
    let flops_per_sample = if dataset.splits.test.is_empty() {
        0
    } else {
        flops_sum / dataset.splits.test.len() as u64
    };

    let metrics = RunMetrics {
        run_id: format!("{}_seed{}", config.name, config.seed),
        config: config.clone(),
        parameter_count: count_parameters(&best_params),
        flops_per_sample,
        steps_per_test_sample,
        epochs,
        best_epoch,
        test_rmse,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(dir.display().to_string(), e))?;
        save_checkpoint(&dir.join("checkpoint.ckpt"), &best_params, &dataset.normalization)
            .map_err(|e| HarnessError::Model(e.to_string()))?;
        let text = serde_json::to_string_pretty(&metrics)
            .map_err(|e| HarnessError::Format(e.to_string()))?;
        std::fs::write(dir.join("run.json"), text)
            .map_err(|e| HarnessError::Io(dir.display().to_string(), e))?;
    }
    Ok(TrainOutcome {
        params: best_params,
        normalization: dataset.normalization.clone(),
        metrics,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub rmse: f64,
    pub per_sample_rmse: Vec<f64>,
    pub steps_per_sample: Vec<u32>,
}

/// Evaluate a checkpoint on one split of the dataset.
pub fn evaluate(
    dataset: &Dataset,
    params: &ModelParameters,
    normalization: &Normalization,
    config: &RunConfig,
    split: &str,
) -> Result<EvalReport, HarnessError> {
    let indices = match split {
        "train" => &dataset.splits.train,
        "val" => &dataset.splits.val,
        "test" => &dataset.splits.test,
        other => return Err(HarnessError::Spec(format!("unknown split {other:?}"))),
    };
    let mut pairs = Vec::new();
    let mut per_sample_rmse = Vec::new();
    let mut steps = Vec::new();
    for &i in indices {
        let p = prepare_sample(dataset, &dataset.samples[i], config)?;
        let state = forward(&p.inputs, &p.schedule, params)
            .map_err(|e| HarnessError::Model(e.to_string()))?;
        steps.push(state.steps_executed);
        let denorm = normalization.denormalize_output(&state.output);
        per_sample_rmse.push(rmse(&[(denorm.data.clone(), p.target_raw.clone())])?);
        pairs.push((denorm.data, p.target_raw));
    }
    Ok(EvalReport {
        split: split.into(),
        rmse: rmse(&pairs)?,
        per_sample_rmse,
        steps_per_sample: steps,
    })
}

/// Run every config (sequentially) and return their metrics.
pub fn ablate(
    dataset: &Dataset,
    configs: &[RunConfig],
    out_dir: Option<&Path>,
) -> Result<Vec<RunMetrics>, HarnessError> {
    let mut out = Vec::with_capacity(configs.len());
    for config in configs {
        let run_dir = out_dir.map(|d| d.join(format!("{}_seed{}", config.name, config.seed)));
        let outcome = train(dataset, config, run_dir.as_deref())?;
        out.push(outcome.metrics);
    }
    Ok(out)
}
