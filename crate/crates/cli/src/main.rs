use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use ccvfm_cli::commands;
use ccvfm_cli::config::{parse_override, RunConfig, KEYS};

#[derive(Parser)]
#[command(name = "ccvfm", version, about = "Coreset surrogates, correction flows and their checks")]
struct Cli {
    /// -v for info, -vv for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the coreset GMM surrogate.
    Fit(Common),
    /// Draw from the one-step generator (the surrogate itself).
    SampleStage2(Common),
    /// Train a correction net against a fitted surrogate.
    Train(Common),
    /// Generate samples with the nested sampler.
    Generate(Common),
    /// Score a sample file against a reference.
    Eval(Common),
    /// Run a verification check: thm1, marginal, moments, rate, decomposition, euler.
    Verify {
        check: String,
        #[command(flatten)]
        common: Common,
    },
    /// Regenerate a benchmark table (table5).
    Repro {
        what: String,
        #[command(flatten)]
        common: Common,
    },
    /// List every config key with its default.
    Keys,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable, applied after the named flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    net: Option<String>,
    #[arg(long)]
    gen: Option<String>,
    #[arg(long = "ref")]
    reference: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    rank: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    coupling: Option<String>,
    #[arg(long)]
    iters: Option<String>,
    #[arg(short = 'J', long = "j")]
    j: Option<String>,
    #[arg(short = 'L', long = "l")]
    l: Option<String>,
    #[arg(short = 'n', long = "n")]
    n: Option<String>,
    #[arg(long)]
    metrics: Option<String>,
    #[arg(long)]
    seed: Option<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let named = [
            ("dataset", &self.dataset),
            ("data", &self.data),
            ("model", &self.model),
            ("net", &self.net),
            ("gen", &self.gen),
            ("ref", &self.reference),
            ("k", &self.k),
            ("rank", &self.rank),
            ("lambda", &self.lambda),
            ("coupling", &self.coupling),
            ("iters", &self.iters),
            ("j", &self.j),
            ("l", &self.l),
            ("n", &self.n),
            ("metrics", &self.metrics),
            ("seed", &self.seed),
        ];
        let mut overrides: Vec<(String, String)> = named
            .iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        for s in &self.set {
            overrides.push(parse_override(s)?);
        }
        RunConfig::resolve(self.config.as_deref(), &overrides)
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Fit(c) => commands::cmd_fit(&c.resolve()?, &c.out),
        Command::SampleStage2(c) => commands::cmd_sample_stage2(&c.resolve()?, &c.out),
        Command::Train(c) => commands::cmd_train(&c.resolve()?, &c.out),
        Command::Generate(c) => commands::cmd_generate(&c.resolve()?, &c.out),
        Command::Eval(c) => commands::cmd_eval(&c.resolve()?, &c.out),
        Command::Verify { check, common } => commands::cmd_verify(&check, &common.resolve()?, &common.out),
        Command::Repro { what, common } => commands::cmd_repro(&what, &common.resolve()?, &common.out),
        Command::Keys => {
            for (k, v, d) in KEYS {
                println!("{k:<18} {v:<28} {d}");
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
