use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sizedl1::app::{self, ExperimentConfig, EXIT_OK, EXIT_PROPERTY};
use sizedl1::gradcheck::GradcheckOptions;
use sizedl1::{Exec, Result};

#[derive(Parser)]
#[command(version, about = "Sized L1 box regression: gradient checks, training experiments and size-bucketed AP")]
struct Cli {
    /// Output directory (overrides `out_dir` in the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Base seed (overrides `seed` in the config)
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check analytic loss gradients against central finite differences
    Gradcheck {
        /// Flip the sign of one analytic gradient (harness self-test)
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Supervised training; writes trace.csv and model.txt
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Teacher-student training; writes trace.csv, teacher_trace.csv and model dumps
    Semi {
        #[arg(long)]
        config: PathBuf,
    },
    /// Size-bucketed COCO box mAP of a results file
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        det: PathBuf,
    },
    /// Paired-seed comparison of loss variants; writes compare.csv
    Compare {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(cli: &Cli, path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<i32> {
    let exec = Exec::default();
    match &cli.command {
        Command::Gradcheck { inject_fault } => {
            let opts = GradcheckOptions {
                seed: cli.seed.unwrap_or(GradcheckOptions::default().seed),
                inject_sign_flip: *inject_fault,
                ..GradcheckOptions::default()
            };
            let report = app::cmd_gradcheck(&opts, cli.out.as_deref(), exec)?;
            print!("{}", report.to_text());
            Ok(if report.passed() { EXIT_OK } else { EXIT_PROPERTY })
        }
        Command::Train { config } => {
            let cfg = load(cli, config)?;
            let out = app::cmd_train(&cfg, exec)?;
            print!("{}", final_rows(&out.trace));
            println!("wrote {}", cfg.out_dir.display());
            Ok(EXIT_OK)
        }
        Command::Semi { config } => {
            let cfg = load(cli, config)?;
            let out = app::cmd_semi(&cfg, exec)?;
            print!("{}", final_rows(&out.trace));
            println!("wrote {}", cfg.out_dir.display());
            Ok(EXIT_OK)
        }
        Command::Eval { gt, det } => {
            let table = app::cmd_eval(gt, det, cli.out.as_deref(), exec)?;
            print!("{}", table.to_text());
            Ok(EXIT_OK)
        }
        Command::Compare { config } => {
            let cfg = load(cli, config)?;
            let report = app::run_compare(&cfg, exec)?;
            print!("{}", report.summary());
            println!("wrote {}", cfg.out_dir.display());
            Ok(EXIT_OK)
        }
    }
}

/// Last epoch of a trace as `bucket mean_rel_err mean_iou` lines.
fn final_rows(trace: &sizedl1::trainer::ErrorTrace) -> String {
    let Some(last) = trace.last() else {
        return String::new();
    };
    sizedl1::trainer::TRACE_BUCKETS
        .iter()
        .zip(&last.buckets)
        .filter(|(_, s)| s.count > 0)
        .map(|(b, s)| format!("{:<7} rel_err={:.6} iou={:.6}\n", b.name(), s.mean_rel_err, s.mean_iou))
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(app::exit_code(&e) as u8)
        }
    }
}
