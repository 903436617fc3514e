use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avwws::{Error, Result};
use avwws_cli::commands::{self, exit_code, EvalOptions, ReportLine};
use avwws_cli::config::KvConfig;
use avwws_cli::manifest::Manifest;
use avwws_cli::settings::{chain_settings, fbank_config, synthetic_spec};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "avwws", version, about = "Audio-visual wake word spotting pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Input manifest (TSV).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; every artifact is written below it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads for per-utterance work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic two-tone wake word corpus.
    GenData,
    /// Log-mel features with CMVN from the train split.
    Featurize,
    /// Append augmented copies (config key `chain`).
    Augment,
    /// Two-stage training (cross-entropy, then focal loss).
    Train {
        /// Earlier run directory or checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a split with one or more trained models.
    Eval {
        /// Run directory or checkpoint file; repeat for several models.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Majority vote over three score files.
    Vote {
        #[arg(long, num_args = 3, required = true)]
        scores: Vec<PathBuf>,
        #[arg(long, required = true)]
        labels: PathBuf,
    },
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn print_report(lines: &[ReportLine]) {
    print!("{}", commands::format_report("results", lines));
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot set up {n} threads: {e}")))?;
    }
    let cfg = match &c.config {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::default(),
    };
    let out = required(&c.out, "out")?;
    let manifest = || Manifest::load(required(&c.manifest, "manifest")?);
    match &cli.command {
        Command::GenData => {
            let spec = synthetic_spec(&cfg, c.seed)?;
            cfg.finish()?;
            let m = commands::gen_data(&spec, out)?;
            log::info!("wrote {} utterances to {}", m.records.len(), out.display());
        }
        Command::Featurize => {
            let fb = fbank_config(&cfg)?;
            cfg.finish()?;
            commands::featurize(&manifest()?, &fb, out)?;
        }
        Command::Augment => {
            let chain = cfg.raw("chain").unwrap_or("").to_string();
            let settings = chain_settings(&cfg)?;
            cfg.finish()?;
            let m = commands::augment(&manifest()?, &chain, &settings, c.seed, out)?;
            log::info!("manifest now lists {} utterances", m.records.len());
        }
        Command::Train { resume } => {
            let report = commands::train(&manifest()?, &cfg, c.seed, out, resume.as_deref())?;
            if let Some(h) = report.history.last() {
                println!("stage {} step {} loss {:?}", h.stage, h.step, h.loss);
            }
            if !report.finished {
                println!("stopped early; continue with --resume {}", out.display());
            }
        }
        Command::Eval { checkpoints } => {
            let opts = EvalOptions::from_config(&cfg)?;
            cfg.finish()?;
            print_report(&commands::eval(&manifest()?, checkpoints, &opts, out)?);
        }
        Command::Vote { scores, labels } => {
            let t = cfg.list::<f64>("thresholds")?.unwrap_or_else(|| vec![0.5]);
            cfg.finish()?;
            let thresholds = match t.as_slice() {
                [x] => [*x; 3],
                [a, b, c] => [*a, *b, *c],
                _ => return Err(Error::Config(format!("vote needs 1 or 3 thresholds, got {}", t.len()))),
            };
            let s = [scores[0].as_path(), scores[1].as_path(), scores[2].as_path()];
            print_report(&commands::vote(s, labels, thresholds, out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
