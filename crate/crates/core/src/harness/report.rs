//! Flatten run metrics into the CSV that downstream plotting consumes.

use std::fs;
use std::path::Path;

use super::training::RunMetrics;
use super::HarnessError;

pub const CSV_HEADER: &str = "run_id,sampling_mode,propagation_mode,levels,groups,latent,budget,seed,epoch,split,rmse,params,flops";

fn mode_strings(metrics: &RunMetrics) -> (&'static str, &'static str) {
    let sampling = match metrics.config.sampling_mode {
        super::training::SamplingMode::UpOnly => "up_only",
        super::training::SamplingMode::UpDown => "up_down",
    };
    let propagation = match metrics.config.propagation_mode {
        super::training::PropagationMode::Adaptive => "adaptive",
        super::training::PropagationMode::Uniform => "uniform",
    };
    (sampling, propagation)
}

/// One row per epoch and split, plus a test row at the best epoch.
pub fn metrics_to_csv(runs: &[RunMetrics]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for m in runs {
        let (sampling, propagation) = mode_strings(m);
        let budget = m
            .config
            .total_budget
            .map(|b| b.to_string())
            .unwrap_or_else(|| "tuned".into());
        let prefix = |epoch: usize, split: &str, rmse: f64| {
            format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                m.run_id,
                sampling,
                propagation,
                m.config.levels,
                m.config.groups,
                m.config.latent,
                budget,
                m.config.seed,
                epoch,
                split,
                rmse,
                m.parameter_count,
                m.flops_per_sample
            )
        };
        for e in &m.epochs {
            out.push_str(&prefix(e.epoch, "train", e.train_rmse));
            out.push_str(&prefix(e.epoch, "val", e.val_rmse));
        }
        out.push_str(&prefix(m.best_epoch, "test", m.test_rmse));
    }
    out
}

/// Collect `run.json` files below `runs_dir` (sorted by path for stable
/// output) and write the flat CSV.
pub fn report(runs_dir: &Path, csv_path: &Path) -> Result<usize, HarnessError> {
    let mut run_files = Vec::new();
    if runs_dir.is_dir() {
        collect_run_files(runs_dir, &mut run_files)?;
    }
    run_files.sort();
    let mut runs = Vec::with_capacity(run_files.len());
    for f in &run_files {
        let text =
            fs::read_to_string(f).map_err(|e| HarnessError::Io(f.display().to_string(), e))?;
        let metrics: RunMetrics =
            serde_json::from_str(&text).map_err(|e| HarnessError::Format(e.to_string()))?;
        runs.push(metrics);
    }
    let csv = metrics_to_csv(&runs);
    fs::write(csv_path, csv).map_err(|e| HarnessError::Io(csv_path.display().to_string(), e))?;
    Ok(runs.len())
}

fn collect_run_files(
    dir: &Path,
    out: &mut Vec<std::path::PathBuf>,
) -> Result<(), HarnessError> {
    for entry in
        fs::read_dir(dir).map_err(|e| HarnessError::Io(dir.display().to_string(), e))?
    {
        let entry = entry.map_err(|e| HarnessError::Io(dir.display().to_string(), e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_run_files(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "run.json") {
            out.push(path);
        }
    }
    Ok(())
}
