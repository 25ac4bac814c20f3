use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use multiassign::commands::{cmd_ablate, cmd_eval, cmd_selftest, cmd_train};
use multiassign::{AppError, AppResult, RunConfig};
use multiassign_core::harness::{BranchSel, EvalConfig};

#[derive(Parser)]
#[command(
    name = "multiassign",
    version,
    about = "Train, evaluate and ablate a DETR-style detector with low-rank auxiliary branches"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics, plot and checkpoints
    Train(Shared),
    /// Evaluate a checkpoint on the validation set
    Eval {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        checkpoint: PathBuf,
        /// `primary` or `aux:<i>`
        #[arg(long, default_value = "primary", value_parser = parse_branch)]
        branch: BranchSel,
        /// Class-wise NMS before scoring
        #[arg(long, default_value = "off", value_parser = parse_on_off, action = clap::ArgAction::Set)]
        nms: bool,
        #[arg(long)]
        score_threshold: Option<f64>,
    },
    /// Run the ablation grid and write the comparison table
    Ablate(Shared),
    /// Run the oracle suites
    Selftest {
        /// Training steps before the second stripping check
        #[arg(long, default_value_t = 500)]
        train_steps: usize,
    },
}

#[derive(Args)]
struct Shared {
    /// key = value file applied over the defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    n_aux: Option<usize>,
    #[arg(long)]
    diverse: Option<String>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    aux_mode: Option<String>,
    /// Any key, e.g. `--set model.rank=8`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn parse_branch(s: &str) -> Result<BranchSel, String> {
    if s == "primary" {
        return Ok(BranchSel::Primary);
    }
    s.strip_prefix("aux:")
        .and_then(|i| i.parse().ok())
        .map(BranchSel::Aux)
        .ok_or_else(|| format!("expected primary or aux:<i>, got {s:?}"))
}

fn parse_on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        _ => Err(format!("expected on or off, got {s:?}")),
    }
}

impl Shared {
    fn resolve(&self) -> AppResult<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        let flags = [
            ("train.seed", self.seed.map(|v| v.to_string())),
            ("train.steps", self.steps.map(|v| v.to_string())),
            ("model.n_aux", self.n_aux.map(|v| v.to_string())),
            ("train.diverse", self.diverse.clone()),
            ("model.rank", self.rank.map(|v| v.to_string())),
            ("model.aux_mode", self.aux_mode.clone()),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                c.set(key, &v)?;
            }
        }
        for kv in &self.overrides {
            c.apply_override(kv)?;
        }
        if let Some(out) = &self.out {
            c.out = out.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> AppResult<()> {
    let stdout = &mut std::io::stdout();
    match cli.command {
        Command::Train(shared) => cmd_train(&shared.resolve()?, stdout).map(drop),
        Command::Eval {
            shared,
            checkpoint,
            branch,
            nms,
            score_threshold,
        } => {
            let cfg = shared.resolve()?;
            let eval = EvalConfig {
                branch,
                use_nms: nms,
                score_threshold: score_threshold.unwrap_or(cfg.exp.eval.score_threshold),
                ..cfg.exp.eval
            };
            if !(0.0..1.0).contains(&eval.score_threshold) {
                return Err(AppError::Invalid("--score-threshold must be in [0,1)".into()));
            }
            cmd_eval(&cfg, &checkpoint, &eval, stdout).map(drop)
        }
        Command::Ablate(shared) => cmd_ablate(&shared.resolve()?, stdout).map(drop),
        Command::Selftest { train_steps } => cmd_selftest(train_steps, stdout).map(drop),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
