use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use pivotmt::pipeline::{self, NmtMode, RunDirs, RunOptions, TrainConfig, Translator};
use pivotmt::textproc::normalize_str;
use pivotmt::Lang;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "pivotmt", version, about = "Image-pivoted zero-resource translation on synthetic scenes")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Re-run this stage even if it is current.
    #[arg(long, global = true)]
    force_stage: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate scenes, captions, features and vocabularies.
    GenData,
    /// Train the pivot captioner (runs earlier stages if needed).
    TrainCaptioner,
    /// Caption pivots into pseudo sentence pairs.
    GenPseudo,
    /// Attach transport distances and weights to the pseudo pairs.
    Weigh,
    /// Train the translation model.
    TrainNmt,
    /// Score the translation model on the test pairs.
    Eval,
    /// All stages in order.
    Run,
    /// Translate sentences, one per line, from a file or stdin.
    Translate {
        /// Source language.
        #[arg(long, default_value = "a")]
        from: String,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Supervised reference on a fraction of held-out parallel data.
    Baseline {
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
    },
    /// Every ablation cell and supervised fraction over several seeds.
    Ablate {
        /// Comma-separated seeds; defaults to three consecutive seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Rebuild report.md and report.csv from the score files under --out.
    Report,
}

fn load_config(g: &Global) -> pivotmt::Result<TrainConfig> {
    let mut cfg = match &g.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn translate(cfg: &TrainConfig, out: &Path, from: &str, input: Option<&Path>) -> Result<()> {
    let src = Lang::parse(from)?;
    let tr = Translator::load(cfg, &RunDirs::single(out, "translate"), NmtMode::ZeroResource)?;
    let reader: Box<dyn BufRead> = match input {
        Some(p) => Box::new(std::io::BufReader::new(
            std::fs::File::open(p).with_context(|| format!("open {}", p.display()))?,
        )),
        None => Box::new(std::io::stdin().lock()),
    };
    let mut stdout = std::io::stdout().lock();
    for line in reader.lines() {
        let words = normalize_str(&line?);
        writeln!(stdout, "{}", tr.translate(&words, src)?.join(" "))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let out = &cli.global.out;
    let opts = RunOptions {
        force_stage: cli.global.force_stage.clone(),
    };
    let dirs = RunDirs::single(out, "progressive");
    let stage = |name: &str| -> Result<()> {
        let m = pipeline::run_until(&cfg, &dirs, name, &opts)?;
        eprintln!("executed: {:?}; skipped: {:?}", m.executed, m.skipped);
        Ok(())
    };
    match cli.cmd {
        Cmd::GenData => stage("gen-data")?,
        Cmd::TrainCaptioner => stage("train-captioner")?,
        Cmd::GenPseudo => stage("gen-pseudo")?,
        Cmd::Weigh => stage("weigh")?,
        Cmd::TrainNmt => stage("train-nmt")?,
        Cmd::Eval | Cmd::Run => {
            stage("eval")?;
            println!("{}", std::fs::read_to_string(dirs.eval().join("bleu.json"))?.trim_end());
        }
        Cmd::Translate { from, input } => translate(&cfg, out, &from, input.as_deref())?,
        Cmd::Baseline { fraction } => {
            let d = RunDirs {
                shared: out.clone(),
                own: out.join(format!("supervised_{}", (fraction * 100.0).round())),
                label: "supervised".into(),
            };
            let r = pipeline::run_supervised_baseline(&cfg, &d, fraction, &opts)?;
            println!("a2b BLEU-4 {:.4}  b2a BLEU-4 {:.4}", r.a2b.bleu4, r.b2a.bleu4);
        }
        Cmd::Ablate { seeds } => {
            let seeds = if seeds.is_empty() {
                vec![cfg.seed, cfg.seed + 1, cfg.seed + 2]
            } else {
                seeds
            };
            let rep = pipeline::ablate(&cfg, &seeds, out, &opts)?;
            print!("{}", rep.markdown);
        }
        Cmd::Report => print!("{}", pipeline::report(out)?.markdown),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<pivotmt::Error>().map_or(1, pivotmt::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
