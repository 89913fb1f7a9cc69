//! `malthus` command line: run experiments, evaluate policies, replay logs,
//! plot metrics and run the oracle suite.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use malthus::config::{load_config, preset, ExperimentConfig, Scheduler, PRESETS};
use malthus::learner::scripted::ScriptKind;
use malthus::learner::{load_params, Network};
use malthus::metrics::{smooth, MetricsTable};
use malthus::orchestrator::{run_episode, run_experiment, EpisodeJob, RunOptions};
use malthus::pomg::{render_full, EpisodeLog, IslandId};
use malthus::population::IndividualId;
use malthus::rng::{derive_seed, Stream};

/// Environment variable that relocates default output directories.
const OUTPUT_ROOT_VAR: &str = "MALTHUS_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "malthus", version, about = "Population-dynamics multi-agent reinforcement learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write config, metrics, checkpoints and manifest.
    Run(RunArgs),
    /// Play a scripted or learned policy alone on solitary islands.
    Eval(EvalArgs),
    /// Re-simulate an episode log and write one PPM frame per step.
    Replay(ReplayArgs),
    /// Plot metrics CSV columns as SVG line charts.
    Plot(PlotArgs),
    /// Run the numerical oracle suite.
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List built-in presets, or print one as JSON.
    Presets {
        /// Print this preset's resolved configuration.
        #[arg(long)]
        show: Option<String>,
    },
}

#[derive(Args)]
struct ConfigSource {
    /// JSON configuration file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name (see `malthus presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigSource {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = match (&self.config, &self.preset) {
            (Some(path), _) => load_config(path)?,
            (None, Some(name)) => preset(name).with_context(|| format!("unknown preset `{name}`"))?,
            (None, None) => bail!("give --config or --preset"),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Override the number of ecological steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Output directory (default: config `output_dir`, else `<root>/<name>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from the newest checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    #[arg(long, value_parser = ["sequential", "parallel"])]
    scheduler: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Scripted policy, e.g. `settle-at:10`, `seek-nutrient`, `pure-a`.
    #[arg(long, conflicts_with = "params")]
    script: Option<String>,
    /// Learned parameters (`species_L.params` from a checkpoint).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Species whose colour and policy slot the agent uses.
    #[arg(long, default_value_t = 0)]
    species: usize,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    /// Also write one episode log per episode here.
    #[arg(long)]
    logs: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Episode log written by `run` or `eval`.
    log: PathBuf,
    /// Directory for `frame_NNNN.ppm`.
    #[arg(long)]
    out: PathBuf,
    /// Keep every k-th frame.
    #[arg(long, default_value_t = 1)]
    every: usize,
}

#[derive(Args)]
struct PlotArgs {
    /// metrics.csv of a run.
    csv: PathBuf,
    /// Column to plot; repeat for several (one SVG each).
    #[arg(long = "column", required = true)]
    columns: Vec<String>,
    /// Trailing moving-average window.
    #[arg(long, default_value_t = 1)]
    window: usize,
    /// Directory for the SVGs (default: next to the CSV).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn output_dir(config: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match &config.output_dir {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => output_root().join(p),
        None => output_root().join(&config.name),
    }
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let mut config = args.source.load()?;
    if let Some(steps) = args.steps {
        config.ecological_steps = steps;
    }
    match args.scheduler.as_deref() {
        Some("parallel") => config.scheduler = Scheduler::Parallel,
        Some(_) => config.scheduler = Scheduler::Sequential,
        None => {}
    }
    let out = output_dir(&config, args.out.as_deref());
    let options = RunOptions {
        resume: args.resume,
        stop_after: None,
    };
    let summary = run_experiment(&config, &out, &options)?;
    println!(
        "{}: steps {}..{} written to {}",
        config.name,
        summary.start_step,
        summary.final_step,
        out.display()
    );
    for (s, mu) in summary.final_mu.iter().enumerate() {
        let top = mu
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, p)| format!("island {i} ({p:.3})"))
            .unwrap_or_default();
        println!("species {s}: most mass on {top}");
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let config = args.source.load()?;
    config.validate()?;
    if args.species >= config.num_species {
        bail!("species {} out of range (config has {})", args.species, config.num_species);
    }
    let net = Network::new(config.policy_spec())?;
    let (scripted, params) = match (&args.script, &args.params) {
        (Some(s), _) => (Some(s.parse::<ScriptKind>()?), Vec::new()),
        (None, Some(path)) => {
            let learner = load_params(path, &net.spec)?;
            (None, vec![Arc::new(learner.params); config.num_species])
        }
        (None, None) => bail!("give --script or --params"),
    };
    if let Some(dir) = &args.logs {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut total = 0.0;
    for k in 0..args.episodes {
        let island = IslandId::Solitary {
            species: args.species,
            replica: k,
        };
        let job = EpisodeJob {
            game: &config.game,
            island,
            roster: vec![IndividualId::new(args.species, 0)],
            env_seed: derive_seed(config.seed, Stream::Solitary, &[k as u64, 0]),
            act_seed: derive_seed(config.seed, Stream::Solitary, &[k as u64, 1]),
            net: &net,
            scripted,
            unroll_length: config.learner.optimizer.unroll_length,
            record_log: args.logs.is_some(),
        };
        let r = run_episode(&job, &params)?;
        println!("episode {k}: return {:.6}", r.returns[0]);
        total += r.returns[0];
        if let (Some(dir), Some(log)) = (&args.logs, &r.log) {
            let path = dir.join(format!("episode_{k:04}.log"));
            fs::write(&path, log.to_text()).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    if args.episodes > 0 {
        println!("mean return: {:.6} over {} episodes", total / args.episodes as f64, args.episodes);
    }
    Ok(())
}

fn cmd_replay(args: &ReplayArgs) -> Result<()> {
    if args.every == 0 {
        bail!("--every must be at least 1");
    }
    let text = fs::read_to_string(&args.log).with_context(|| format!("reading {}", args.log.display()))?;
    let log = EpisodeLog::parse(&text)?;
    let frames = malthus::pomg::replay(&log)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut written = 0;
    for (k, state) in frames.iter().enumerate().step_by(args.every) {
        let path = args.out.join(format!("frame_{k:04}.ppm"));
        fs::write(&path, render_full(&log.game, state).to_ppm()).with_context(|| format!("writing {}", path.display()))?;
        written += 1;
    }
    println!("{written} frames written to {}", args.out.display());
    Ok(())
}

fn cmd_plot(args: &PlotArgs) -> Result<()> {
    let table = MetricsTable::read(&args.csv)?;
    let xs: Vec<f64> = table
        .column("ecological_step")
        .context("CSV has no ecological_step column")?
        .into_iter()
        .map(|x| x.unwrap_or(f64::NAN))
        .collect();
    let out = match &args.out {
        Some(p) => p.clone(),
        None => args.csv.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    for name in &args.columns {
        let raw = table.column(name).with_context(|| format!("CSV has no column `{name}`"))?;
        let series = smooth(&raw, args.window)?;
        let title = if args.window > 1 {
            format!("{name} (window {})", args.window)
        } else {
            name.clone()
        };
        let svg = malthus::metrics::line_plot_svg(&title, &xs, &[(name.as_str(), series)]);
        let path = out.join(format!("{name}.svg"));
        fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_oracle(seed: u64) -> Result<bool> {
    let mut ok = true;
    for report in malthus::oracle::run_all(seed) {
        println!("{report}");
        ok &= report.passed;
    }
    Ok(ok)
}

fn cmd_presets(show: Option<&str>) -> Result<()> {
    match show {
        Some(name) => {
            let config = preset(name).with_context(|| format!("unknown preset `{name}`"))?;
            println!("{}", config.to_json());
        }
        None => {
            for (name, long, about) in PRESETS {
                let tag = if *long { " [long-running]" } else { "" };
                println!("{name:<42}{about}{tag}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Replay(a) => cmd_replay(a).map(|_| true),
        Command::Plot(a) => cmd_plot(a).map(|_| true),
        Command::Oracle { seed } => cmd_oracle(*seed),
        Command::Presets { show } => cmd_presets(show.as_deref()).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: oracle suite failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            // Library errors already spell out their sources.
            let mut reason = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !reason.contains(&cause) {
                    if !reason.is_empty() {
                        reason.push_str(": ");
                    }
                    reason.push_str(&cause);
                }
            }
            eprintln!("error: {}", reason.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
