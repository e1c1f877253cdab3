use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use omnisweep::experiment::{cmd_ablate, cmd_generate, cmd_report, cmd_run, ExperimentConfig, FusionKind, SuiteSpec};
use omnisweep::metrics::compare_report;
use omnisweep::pipeline::Descriptor;
use omnisweep::vct::Mode;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "omnisweep", version, about = "Omnidirectional depth from a fisheye rig")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the scene suite and write images, ground truth and a manifest.
    Generate(Opts),
    /// Predict depth for every generated sample and write metrics.csv.
    Run(Opts),
    /// Evaluate the fixed ablation variants and write ablation.csv.
    Ablate(Opts),
    /// Collate run and ablation summaries into report.csv.
    Report(Opts),
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    Vct,
    PlainMean,
}

#[derive(Clone, Copy, ValueEnum)]
enum DescriptorArg {
    Sphere,
    Image,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Infer,
    Train,
}

/// Flags override the matching config fields.
#[derive(Args)]
struct Opts {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Calibration JSON describing the rig.
    #[arg(long)]
    rig: Option<PathBuf>,
    /// JSON array of scenes instead of the canned suite.
    #[arg(long)]
    scenes: Option<PathBuf>,
    #[arg(long, value_enum)]
    descriptor: Option<DescriptorArg>,
    #[arg(long, value_enum)]
    fusion: Option<FusionArg>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    radius: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    no_smoothing: bool,
    /// Corrupt the rendered views.
    #[arg(long)]
    corrupt: bool,
    #[arg(long)]
    noise_amplitude: Option<f64>,
}

impl Opts {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        // flag paths are relative to the working directory
        let cwd = std::env::current_dir().context("reading working directory")?;
        let abs = |p: &PathBuf| cwd.join(p);
        if let Some(p) = &self.output_dir {
            cfg.output_dir = abs(p);
        }
        if let Some(p) = &self.rig {
            cfg.rig = Some(abs(p));
        }
        if let Some(p) = &self.scenes {
            cfg.suite = SuiteSpec::File(abs(p));
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = self.descriptor {
            cfg.descriptor = match d {
                DescriptorArg::Sphere => Descriptor::Sphere,
                DescriptorArg::Image => Descriptor::Image,
            };
        }
        if let Some(f) = self.fusion {
            cfg.fusion = match f {
                FusionArg::Vct => FusionKind::Vct,
                FusionArg::PlainMean => FusionKind::PlainMean,
            };
        }
        if let Some(k) = self.k {
            cfg.vct.k = k;
        }
        if let Some(t) = self.temperature {
            cfg.vct.temperature = t;
        }
        if let Some(m) = self.mode {
            cfg.vct.mode = match m {
                ModeArg::Infer => Mode::Infer,
                ModeArg::Train => Mode::Train,
            };
        }
        if let Some(n) = self.iterations {
            cfg.refine.iterations = n;
        }
        if let Some(r) = self.radius {
            cfg.refine.radius = r;
        }
        if let Some(l) = self.levels {
            cfg.refine.levels = l;
        }
        if self.no_smoothing {
            cfg.refine.smoothing = false;
        }
        if self.corrupt {
            cfg.corruption.enabled = true;
        }
        if let Some(a) = self.noise_amplitude {
            cfg.corruption.noise_amplitude = a;
        }
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(o) => {
            let cfg = o.config()?;
            let m = cmd_generate(&cfg)?;
            println!("wrote {} samples to {}", m.samples.len(), cfg.dataset_dir().display());
        }
        Command::Run(o) => {
            let cfg = o.config()?;
            let r = cmd_run(&cfg)?;
            print!("{}", compare_report(&[("summary".to_string(), r.summary)]));
        }
        Command::Ablate(o) => {
            let rows = cmd_ablate(&o.config()?)?;
            print!("{}", compare_report(&rows));
        }
        Command::Report(o) => print!("{}", cmd_report(&o.config()?)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
