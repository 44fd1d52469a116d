//! Experiment runner for hierarchical-label quadruplet embedding
//! learning. One config file drives dataset generation, training,
//! evaluation, mining audits, and gradient checks; every command is
//! deterministic given its seeds.
//!
//! Exit codes: 0 success, 1 threshold or training failure, 2 input or
//! validation error.

use quadnet::error::Error;
use quadnet_cli::commands::{self, EvalInputs, GradCheckInputs, MineAuditInputs};
use quadnet_cli::{config, CliError};
use std::path::PathBuf;
use std::process::ExitCode;

const USAGE: &str = "\
quadnet - quadruplet embedding learning experiments

USAGE:
    quadnet <COMMAND> [OPTIONS]

COMMANDS:
    gen          generate a synthetic dataset file (out/dataset.txt)
    train        train an encoder; writes out/checkpoint.txt, out/metrics.csv
    eval         evaluate embeddings or a checkpoint; appends out/eval.csv
    mine-audit   dump mined quadruplets with distances (out/quadruplets.txt)
    gradcheck    compare analytic gradients against finite differences

OPTIONS:
    --config <FILE>       experiment config (TOML); defaults apply when omitted
    --out <DIR>           output directory (overrides out_dir in the config)
    --seed <N>            master seed override
    --embeddings <FILE>   eval: embedding file to score
    --checkpoint <FILE>   eval / mine-audit: encoder checkpoint to embed with
    --label <NAME>        eval: method label for the CSV row
    --strategy <NAME>     mine-audit: random | method1 | method2
    --count <N>           mine-audit: quadruplets to dump (default 32)
    --threshold <X>       gradcheck: pass threshold (default 1e-4)
    --step <X>            gradcheck: finite-difference step (default 1e-5)
    --inject-fault        gradcheck: corrupt one gradient coordinate (test hook)
    -h, --help            print this help
";

#[derive(Debug, Default)]
struct Cli {
    command: String,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    embeddings: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    label: Option<String>,
    strategy: Option<String>,
    count: Option<usize>,
    threshold: Option<f64>,
    step: Option<f64>,
    inject_fault: bool,
    help: bool,
}

fn parse_args(args: &[String]) -> Result<Cli, CliError> {
    let mut cli = Cli::default();
    let mut iter = args.iter().peekable();
    let value = |iter: &mut std::iter::Peekable<std::slice::Iter<String>>,
                     flag: &str|
     -> Result<String, CliError> {
        iter.next()
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("{flag} needs a value")))
    };
    while let Some(arg) = iter.next() {
        match arg.as_str() {
            "-h" | "--help" => cli.help = true,
            "--config" => cli.config = Some(PathBuf::from(value(&mut iter, "--config")?)),
            "--out" => cli.out = Some(PathBuf::from(value(&mut iter, "--out")?)),
            "--seed" => {
                let v = value(&mut iter, "--seed")?;
                cli.seed = Some(v.parse().map_err(|_| {
                    CliError::Usage(format!("--seed needs an unsigned integer, got {v:?}"))
                })?);
            }
            "--embeddings" => {
                cli.embeddings = Some(PathBuf::from(value(&mut iter, "--embeddings")?))
            }
            "--checkpoint" => {
                cli.checkpoint = Some(PathBuf::from(value(&mut iter, "--checkpoint")?))
            }
            "--label" => cli.label = Some(value(&mut iter, "--label")?),
            "--strategy" => cli.strategy = Some(value(&mut iter, "--strategy")?),
            "--count" => {
                let v = value(&mut iter, "--count")?;
                cli.count = Some(v.parse().map_err(|_| {
                    CliError::Usage(format!("--count needs an unsigned integer, got {v:?}"))
                })?);
            }
            "--threshold" => {
                let v = value(&mut iter, "--threshold")?;
                cli.threshold = Some(v.parse().map_err(|_| {
                    CliError::Usage(format!("--threshold needs a number, got {v:?}"))
                })?);
            }
            "--step" => {
                let v = value(&mut iter, "--step")?;
                cli.step = Some(v.parse().map_err(|_| {
                    CliError::Usage(format!("--step needs a number, got {v:?}"))
                })?);
            }
            "--inject-fault" => cli.inject_fault = true,
            other if cli.command.is_empty() && !other.starts_with('-') => {
                cli.command = other.to_string();
            }
            other => return Err(CliError::Usage(format!("unknown argument {other:?}"))),
        }
    }
    Ok(cli)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config_text = match &cli.config {
        Some(path) => Some(std::fs::read_to_string(path).map_err(|e| {
            CliError::Lib(Error::Io {
                path: path.display().to_string(),
                source: e,
            })
        })?),
        None => None,
    };
    let file = match &config_text {
        Some(text) => config::parse_file_config(text).map_err(CliError::Lib)?,
        None => config::FileConfig::default(),
    };
    let exp = config::resolve(file, cli.out.clone(), cli.seed).map_err(CliError::Lib)?;

    match cli.command.as_str() {
        "gen" => commands::cmd_gen(&exp, config_text.as_deref()),
        "train" => commands::cmd_train(&exp, config_text.as_deref()),
        "eval" => commands::cmd_eval(
            &exp,
            &EvalInputs {
                embeddings_path: cli.embeddings.clone(),
                checkpoint_path: cli.checkpoint.clone(),
                label: cli.label.clone(),
            },
            config_text.as_deref(),
        ),
        "mine-audit" => commands::cmd_mine_audit(
            &exp,
            &MineAuditInputs {
                strategy: cli.strategy.clone(),
                count: cli.count.unwrap_or(32),
                checkpoint_path: cli.checkpoint.clone(),
            },
            config_text.as_deref(),
        ),
        "gradcheck" => commands::cmd_gradcheck(
            &exp,
            &GradCheckInputs {
                threshold: cli.threshold.unwrap_or(1e-4),
                step: cli.step.unwrap_or(1e-5),
                inject_fault: cli.inject_fault,
            },
        ),
        "" => Err(CliError::Usage("no command given; see --help".into())),
        other => Err(CliError::Usage(format!(
            "unknown command {other:?}; see --help"
        ))),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = match parse_args(&args) {
        Ok(cli) => cli,
        Err(e) => {
            eprintln!("{}", e.message());
            return ExitCode::from(e.exit_code());
        }
    };
    if cli.help {
        print!("{USAGE}");
        return ExitCode::SUCCESS;
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
