use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

use drbt::harness::{
    generate_data, load_nmt, load_report, pretrain_cached, run_experiment, score, write_data, ExperimentConfig,
    Method,
};
use drbt::model::Direction;
use drbt::{Error, Result};

#[derive(Parser)]
#[command(name = "drbt", version, about = "Iterative domain-repaired back-translation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file of `key = value` lines; defaults apply otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Decoding threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Restrict to one seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Stage {
    GenData,
    Pretrain,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and write both domains' corpora.
    GenData(Common),
    /// Pretrain both translation models on out-of-domain data.
    Pretrain(Common),
    /// Run the experiment up to the given stage and write the report.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        stage: Stage,
    },
    /// Score a method's saved models on the in-domain test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: String,
    },
    /// Print the summary table of a finished run.
    Report {
        /// Run directory or report.json path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for kv in &c.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    if let Some(t) = c.threads {
        cfg.joint.threads = t;
    }
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stage(cfg: &ExperimentConfig, upto: Stage) -> Result<bool> {
    if upto == Stage::All {
        let report = run_experiment(cfg)?;
        print!("{}", report.summary_tsv());
        return Ok(report.all_ok());
    }
    for &seed in &cfg.seeds {
        let data = generate_data(cfg, seed)?;
        let dir = cfg.out_dir.join(format!("seed{seed}"));
        write_data(&data, &dir.join("data"))?;
        println!("seed {seed}: data written to {}", dir.join("data").display());
        if upto == Stage::Pretrain {
            pretrain_cached(cfg, &data, seed)?;
            println!("seed {seed}: models saved in {}", dir.join("pretrain").display());
        }
    }
    Ok(true)
}

fn eval(cfg: &ExperimentConfig, method: &str) -> Result<bool> {
    let m = Method::parse(method)?;
    for &seed in &cfg.seeds {
        let data = generate_data(cfg, seed)?;
        let dir = cfg.out_dir.join(format!("seed{seed}")).join(m.to_string().replace(':', "-"));
        for d in [Direction::SrcToTgt, Direction::TgtToSrc] {
            let model = load_nmt(&dir.join(format!("nmt.{}.ckpt", d.name())))?;
            let split = drbt::pipeline::direction_columns(&data.inside.test, d);
            let b = score(&model, split[0], split[1], &cfg.eval_decode, cfg.joint.threads)?;
            println!("{m}\tseed{seed}\t{}\t{b:.2}", d.name());
        }
    }
    Ok(true)
}

fn report(path: &Path) -> Result<bool> {
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    let r = load_report(&file)?;
    print!("{}", r.summary_tsv());
    Ok(r.all_ok())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::GenData(c) => load_config(c).and_then(|cfg| stage(&cfg, Stage::GenData)),
        Command::Pretrain(c) => load_config(c).and_then(|cfg| stage(&cfg, Stage::Pretrain)),
        Command::Run { common, stage: s } => load_config(common).and_then(|cfg| stage(&cfg, *s)),
        Command::Eval { common, method } => load_config(common).and_then(|cfg| eval(&cfg, method)),
        Command::Report { out } => report(out),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            error!("some cells failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
