//! `rslf`: simulate rolling-shutter light-field observations, reconstruct
//! shape and motion, score reconstructions and run ablation grids.
//!
//! Exit codes: 0 success, 2 invalid input, 3 not observable, 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rslf_core::pipeline::{self, Experiment, ReconstructOptions};
use rslf_core::Mode;

#[derive(Parser)]
#[command(name = "rslf", version, about = "Rolling-shutter light-field shape and motion estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write observations and ground truth for every (scene, scenario) cell.
    Simulate {
        #[arg(long)]
        manifest: PathBuf,
        /// Overrides the manifest seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the manifest output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Triangulate and refine one observation file.
    Reconstruct {
        /// Observation CSV; its sidecar is the `.json` file with the same stem.
        #[arg(long)]
        obs: PathBuf,
        /// Solver settings (JSON); defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        /// Run even if the observability check fails.
        #[arg(long)]
        force: bool,
    },
    /// Score a reconstruction against ground truth and update a batch table.
    Evaluate {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Directory for `metrics.json`.
        #[arg(long)]
        out: PathBuf,
        /// Batch CSV, keyed by (scene, scenario, mode). Defaults to `<out>/metrics.csv`.
        #[arg(long)]
        batch: Option<PathBuf>,
    },
    /// Run every manifest mode over the manifest grid and tabulate RMS and δ<1.25.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> rslf_core::Result<()> {
    match cli.command {
        Command::Simulate { manifest, seed, out } => {
            let exp = Experiment::load(&manifest, seed, out.as_deref())?;
            let files = pipeline::cmd_simulate(&exp)?;
            println!("wrote {} observation files under {}", files.len(), exp.output_dir.display());
        }
        Command::Reconstruct {
            obs,
            config,
            out,
            mode,
            force,
        } => {
            let res = pipeline::cmd_reconstruct(&obs, config.as_deref(), &out, ReconstructOptions { mode, force })?;
            let r = &res.file.report;
            println!(
                "{}: {} points, ε {:e} after {} iterations, Ω {} rad/frame",
                r.mode,
                r.points.len(),
                r.final_epsilon,
                r.iterations,
                r.motion.angular_speed
            );
            println!("{}\n{}", res.report_path.display(), res.ply_path.display());
        }
        Command::Evaluate { report, gt, out, batch } => {
            let batch = batch.unwrap_or_else(|| out.join("metrics.csv"));
            let res = pipeline::cmd_evaluate(&report, &gt, &out, &batch)?;
            let m = &res.metrics;
            println!(
                "abs_rel {} abs_diff {} rms {} δ1 {} δ2 {} δ3 {} ({} points)",
                m.abs_rel, m.abs_diff, m.rms, m.delta1, m.delta2, m.delta3, m.n_points
            );
        }
        Command::Ablate { manifest, seed, out } => {
            let exp = Experiment::load(&manifest, seed, out.as_deref())?;
            let outcome = pipeline::cmd_ablate(&exp)?;
            let failed = outcome.cells.iter().filter(|c| c.error.is_some()).count();
            println!("{} cells, {failed} failed", outcome.cells.len());
            for c in &outcome.checks {
                println!(
                    "{}: {}/{} {}",
                    c.description,
                    c.satisfied,
                    c.compared,
                    if c.passed() { "PASS" } else { "FAIL" }
                );
            }
            println!("{}", exp.output_dir.join("ablation.md").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
