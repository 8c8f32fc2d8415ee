use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use turbseg::pipeline::{PipelineConfig, PipelineError, RunOptions, Runner, Stage};
use turbseg::synth::{self, SynthConfig};

#[derive(Parser)]
#[command(name = "turbseg", version, about = "Training-free multi-cue dynamic-object segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline, or a single stage with --stage.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        stage: Option<StageArg>,
    },
    /// Compute and dump cue maps only.
    Cues(Common),
    /// Dumped cues → scores, boxes and prompts.
    Propose(Common),
    /// Dumped scores and boxes → masks.
    Refine(Common),
    /// Score written masks against ground truth.
    Eval(Common),
    /// Start the calibration service.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        /// Intermediates directory holding `cues/` (default from config).
        #[arg(long = "dump-intermediates")]
        dump_intermediates: Option<PathBuf>,
    },
    /// Write a synthetic sequence with ground truth.
    Synth {
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 60)]
        frames: usize,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "dump-intermediates")]
    dump_intermediates: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Cues,
    Propose,
    Refine,
    Eval,
}

fn runner(common: &Common) -> Result<Runner, PipelineError> {
    let cfg = PipelineConfig::load(&common.config).map_err(|source| PipelineError {
        stage: Stage::Config,
        frame: None,
        source,
    })?;
    let opts = RunOptions {
        seed: common.seed,
        dump_intermediates: common.dump_intermediates.clone(),
    };
    Runner::new(&cfg, &opts)
}

fn print_report(r: &Runner, report: Option<turbseg::metrics::EvalReport>) {
    match report {
        Some(rep) => print!("{}", rep.to_table()),
        None => println!("masks written to {}", r.config().output.dir.display()),
    }
}

fn run_stage(common: &Common, stage: Option<StageArg>) -> Result<(), PipelineError> {
    let r = runner(common)?;
    match stage {
        None => {
            let out = r.run()?;
            print_report(&r, out.report);
        }
        Some(StageArg::Cues) => {
            let n = r.run_cues()?.len();
            println!("{n} cue bundles dumped to {}", r.dump_layout().cues_dir().display());
        }
        Some(StageArg::Propose) => {
            let p = r.run_propose()?;
            let boxes: usize = p.boxes.iter().map(Vec::len).sum();
            println!("{boxes} boxes over {} frames; dump in {}", p.boxes.len(), r.dump_layout().root.display());
        }
        Some(StageArg::Refine) => {
            let n = r.run_refine()?.len();
            println!("{n} masks written to {}", r.config().output.dir.display());
        }
        Some(StageArg::Eval) => {
            let report = r.run_eval()?;
            print_report(&r, report);
        }
    }
    Ok(())
}

fn serve(config: &Path, port: u16, dump: Option<&Path>) -> Result<(), String> {
    let session = calibsvc::Session::open(config, dump).map_err(|e| e.to_string())?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(calibsvc::serve(session, port)).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { common, stage } => run_stage(&common, stage).map_err(|e| e.to_string()),
        Command::Cues(c) => run_stage(&c, Some(StageArg::Cues)).map_err(|e| e.to_string()),
        Command::Propose(c) => run_stage(&c, Some(StageArg::Propose)).map_err(|e| e.to_string()),
        Command::Refine(c) => run_stage(&c, Some(StageArg::Refine)).map_err(|e| e.to_string()),
        Command::Eval(c) => run_stage(&c, Some(StageArg::Eval)).map_err(|e| e.to_string()),
        Command::Serve { config, port, dump_intermediates } => {
            serve(&config, port, dump_intermediates.as_deref()).map_err(|e| format!("serve: {e}"))
        }
        Command::Synth { out, seed, frames } => synth::generate(&SynthConfig { seed, frames, ..Default::default() })
            .write(&out)
            .map(|_| println!("{frames} frames written to {}", out.display()))
            .map_err(|e| format!("synth: {e}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
