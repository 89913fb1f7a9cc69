//! Output directory layout, metrics streaming, checkpoints and resume.
//!
//! ```text
//! <out>/config.json            resolved configuration
//! <out>/manifest.json          code version and seed
//! <out>/metrics.csv            one row per ecological step
//! <out>/checkpoints/step_NNNNNN/{species_L.params, ecology.bin, manifest.json}
//! <out>/logs/step_NNNNNN/<island>.log   when episode logs are enabled
//! ```

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::{EcologyState, Experiment};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::learner::{load_params, save_params, spec_hash};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Continue from the newest checkpoint in the output directory, if any.
    pub resume: bool,
    /// Stop once this many ecological steps are done (before the configured
    /// total), writing a checkpoint.
    pub stop_after: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub start_step: u64,
    pub final_step: u64,
    pub final_mu: Vec<Vec<f64>>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn step_dir_name(step: u64) -> String {
    format!("step_{step:06}")
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Newest complete checkpoint directory under `out`.
pub fn latest_checkpoint(out: &Path) -> Result<Option<PathBuf>> {
    let dir = out.join("checkpoints");
    if !dir.exists() {
        return Ok(None);
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(step) = name.strip_prefix("step_").and_then(|s| s.parse::<u64>().ok()) else {
            continue;
        };
        if !entry.path().join("manifest.json").exists() {
            continue;
        }
        if best.as_ref().map_or(true, |(b, _)| step > *b) {
            best = Some((step, entry.path()));
        }
    }
    Ok(best.map(|(_, p)| p))
}

fn save_checkpoint(exp: &Experiment, out: &Path) -> Result<()> {
    let root = out.join("checkpoints");
    let name = step_dir_name(exp.ecological_step);
    let tmp = root.join(format!(".{name}.partial"));
    let done = root.join(&name);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    mkdir(&tmp)?;
    let mut files = Vec::new();
    for learner in &exp.learners {
        let file = format!("species_{}.params", learner.species);
        save_params(&tmp.join(&file), &exp.net.spec, learner)?;
        files.push(file);
    }
    let ecology = bincode::serialize(&exp.ecology_state()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    write(&tmp.join("ecology.bin"), &ecology)?;
    files.push("ecology.bin".into());
    let manifest = json!({
        "ecological_step": exp.ecological_step,
        "num_species": exp.config.num_species,
        "policy_spec_sha256": hex(&spec_hash(&exp.net.spec)),
        "files": files,
    });
    write(&tmp.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("json").as_bytes())?;
    if done.exists() {
        fs::remove_dir_all(&done).map_err(|e| Error::io(&done, e))?;
    }
    fs::rename(&tmp, &done).map_err(|e| Error::io(&done, e))
}

fn load_checkpoint(config: &ExperimentConfig, dir: &Path) -> Result<Experiment> {
    let spec = config.policy_spec();
    let learners = (0..config.num_species)
        .map(|s| load_params(&dir.join(format!("species_{s}.params")), &spec))
        .collect::<Result<Vec<_>>>()?;
    let path = dir.join("ecology.bin");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let ecology: EcologyState =
        bincode::deserialize(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Experiment::restore(config.clone(), learners, ecology)
}

/// Everything except the run length has to match for a resume.
fn check_resumable(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let path = out.join("config.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut stored = crate::config::parse_config(&text)?;
    stored.ecological_steps = config.ecological_steps;
    stored.output_dir.clone_from(&config.output_dir);
    if &stored != config {
        return Err(Error::Checkpoint(format!(
            "{} was written by a different configuration",
            out.display()
        )));
    }
    Ok(())
}

/// Keeps the header and the rows for steps before `step`.
fn truncate_metrics(path: &Path, step: u64) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::new();
    for (k, line) in text.lines().enumerate() {
        let keep = k == 0
            || line
                .split(',')
                .next()
                .and_then(|f| f.parse::<u64>().ok())
                .is_some_and(|e| e < step);
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    write(path, kept.as_bytes())
}

pub fn run_experiment(config: &ExperimentConfig, out: &Path, options: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    mkdir(out)?;
    let metrics_path = out.join("metrics.csv");
    let checkpoint = if options.resume { latest_checkpoint(out)? } else { None };

    let mut exp = match &checkpoint {
        Some(dir) => {
            check_resumable(config, out)?;
            let exp = load_checkpoint(config, dir)?;
            truncate_metrics(&metrics_path, exp.ecological_step)?;
            exp
        }
        None => {
            let exp = Experiment::new(config.clone())?;
            let mut w = csv::Writer::from_path(&metrics_path).map_err(|e| Error::io(&metrics_path, e.into()))?;
            w.write_record(exp.csv_shape().header()).map_err(|e| Error::io(&metrics_path, e.into()))?;
            w.flush().map_err(|e| Error::io(&metrics_path, e))?;
            exp
        }
    };
    write(&out.join("config.json"), config.to_json().as_bytes())?;
    let manifest = json!({
        "name": config.name,
        "code_version": env!("CARGO_PKG_VERSION"),
        "seed": config.seed,
        "game": config.game.key(),
        "ecological_steps": config.ecological_steps,
    });
    write(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("json").as_bytes())?;

    let start_step = exp.ecological_step;
    let shape = exp.csv_shape();
    let file = OpenOptions::new()
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    let end = options
        .stop_after
        .map_or(config.ecological_steps, |s| s.min(config.ecological_steps));
    let mut saved_at = checkpoint.as_ref().map(|_| exp.ecological_step);

    while exp.ecological_step < end {
        let report = exp.step()?;
        metrics
            .write_record(shape.record(&report.row)?)
            .map_err(|e| Error::io(&metrics_path, e.into()))?;
        metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
        if !report.logs.is_empty() {
            let dir = out.join("logs").join(step_dir_name(report.row.ecological_step));
            mkdir(&dir)?;
            for log in &report.logs {
                let name = format!("{}.log", log.island.to_string().replace(':', "_"));
                write(&dir.join(name), log.to_text().as_bytes())?;
            }
        }
        if config.checkpoint_interval > 0 && exp.ecological_step % config.checkpoint_interval == 0 {
            save_checkpoint(&exp, out)?;
            saved_at = Some(exp.ecological_step);
        }
    }
    if saved_at != Some(exp.ecological_step) {
        save_checkpoint(&exp, out)?;
    }
    let mut handle = metrics.into_inner().map_err(|e| Error::io(&metrics_path, e.into_error()))?;
    handle.flush().map_err(|e| Error::io(&metrics_path, e))?;
    Ok(RunSummary {
        output_dir: out.to_path_buf(),
        start_step,
        final_step: exp.ecological_step,
        final_mu: exp.mu(),
    })
}
