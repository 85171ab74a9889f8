use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdsm::eval::SceneSpec;
use sdsm::pipeline::{cmd_eval, cmd_fuse, cmd_regularize, cmd_synth, run_pipeline, ExportMode, PipelineConfig, PipelineError};

/// Semi-dense semantic mapping: fuse keyframe score maps into a labelled
/// point cloud, regularize it with a dense CRF and evaluate it.
#[derive(Parser, Debug)]
#[command(name = "sdsm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fuse all keyframes into <output>/map.sdsm.
    Fuse(Common),
    /// Regularize a fused map and write <output>/map.ply.
    Regularize {
        #[command(flatten)]
        common: Common,
        /// Fused map to read; defaults to <output>/map.sdsm.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Score <output>/map.ply against the ground truth into metrics.csv.
    Eval(Common),
    /// Write the two-plane synthetic scene and a config.json for it.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fraction of semi-dense pixels with wrong-class scores.
        #[arg(long)]
        corruption: Option<f64>,
        /// Depth noise standard deviation, metres.
        #[arg(long)]
        depth_noise: Option<f64>,
    },
    /// Fuse, regularize, export and (optionally) evaluate in one go.
    Run(Common),
}

/// Config file plus flag overrides; flags win over file values.
#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    gradient_threshold: Option<f64>,
    #[arg(long)]
    pixel_radius: Option<f64>,
    #[arg(long)]
    depth_sigma_mult: Option<f64>,
    #[arg(long)]
    normal_k: Option<usize>,
    #[arg(long)]
    crf_iterations: Option<usize>,
    #[arg(long)]
    convergence_tol: Option<f64>,
    #[arg(long)]
    w1: Option<f64>,
    #[arg(long)]
    w2: Option<f64>,
    #[arg(long)]
    w_app: Option<f64>,
    #[arg(long)]
    theta_pn: Option<f64>,
    #[arg(long)]
    theta_n: Option<f64>,
    #[arg(long)]
    theta_pc: Option<f64>,
    #[arg(long)]
    theta_c: Option<f64>,
    #[arg(long)]
    theta_ps: Option<f64>,
    #[arg(long)]
    theta_s: Option<f64>,
    #[arg(long)]
    mu2_csv: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    export_mode: Option<ExportMode>,
    /// Score against the ground truth listed in the config.
    #[arg(long)]
    evaluate: bool,
    #[arg(long)]
    fast_filter: bool,
    #[arg(long)]
    threads: Option<usize>,
}

fn parse_mode(s: &str) -> Result<ExportMode, String> {
    match s {
        "argmax" => Ok(ExportMode::Argmax),
        "confidence" => Ok(ExportMode::Confidence),
        _ => Err(format!("unknown export mode {s:?} (argmax | confidence)")),
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl Common {
    fn resolve(self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        set(&mut cfg.output, self.output);
        set(&mut cfg.manifest, self.manifest);
        set(&mut cfg.gradient_threshold, self.gradient_threshold);
        set(&mut cfg.gate.pixel_radius, self.pixel_radius);
        set(&mut cfg.gate.depth_sigma_mult, self.depth_sigma_mult);
        set(&mut cfg.normal_k, self.normal_k);
        let crf = &mut cfg.crf;
        set(&mut crf.iterations, self.crf_iterations);
        set(&mut crf.convergence_tol, self.convergence_tol);
        set(&mut crf.w1, self.w1);
        set(&mut crf.w2, self.w2);
        set(&mut crf.w_app, self.w_app);
        set(&mut crf.theta_pn, self.theta_pn);
        set(&mut crf.theta_n, self.theta_n);
        set(&mut crf.theta_pc, self.theta_pc);
        set(&mut crf.theta_c, self.theta_c);
        set(&mut crf.theta_ps, self.theta_ps);
        set(&mut crf.theta_s, self.theta_s);
        if self.mu2_csv.is_some() {
            cfg.mu2_csv = self.mu2_csv;
        }
        set(&mut cfg.export_mode, self.export_mode);
        cfg.evaluate |= self.evaluate;
        cfg.fast_filter |= self.fast_filter;
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        Ok(cfg)
    }
}

fn execute(command: Command) -> Result<String, PipelineError> {
    let summary = |r: &sdsm::pipeline::RunReport| serde_json::to_string_pretty(r).expect("report serializes");
    match command {
        Command::Fuse(c) => cmd_fuse(&c.resolve()?).map(|r| summary(&r)),
        Command::Regularize { common, input } => cmd_regularize(&common.resolve()?, input.as_deref()).map(|r| summary(&r)),
        Command::Eval(c) => cmd_eval(&c.resolve()?).map(|r| summary(&r)),
        Command::Run(c) => run_pipeline(&c.resolve()?).map(|r| summary(&r)),
        Command::Synth {
            output,
            seed,
            corruption,
            depth_noise,
        } => {
            let mut spec = SceneSpec::two_planes(seed);
            set(&mut spec.corruption, corruption);
            set(&mut spec.depth_noise, depth_noise);
            cmd_synth(&spec, &output).map(|(_, cfg)| format!("wrote {}", cfg.display()))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let informational = !e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if informational { 0 } else { 1 });
        }
    };
    match execute(cli.command) {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
