use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fvcal_cli::output::num;
use fvcal_cli::studies;
use fvcal_cli::{CliError, Result, RunConfig};

#[derive(Parser)]
#[command(name = "fvcal", version, about = "Finite-strain elastoplastic calibration with FEMU and VFM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the forward problem at the truth parameters.
    Forward(Args),
    /// Generate clean and noisy measurement data.
    Synth(Args),
    /// Calibrate every [[inverse]] block against every data case.
    Calibrate(Args),
    /// Finite-difference checks of the analytic gradients.
    Gradcheck(Args),
    /// Time each method from the same start, one run at a time.
    Timing(Args),
    /// Fit other hardening laws to the data and compare errors.
    E4(Args),
    /// Calibrate on coarser meshes using data remapped from a fine mesh.
    E5(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for concurrent runs (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Args {
    fn load(&self) -> Result<(RunConfig, PathBuf)> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        let out = self.out.clone().unwrap_or_else(|| cfg.output.clone());
        std::fs::create_dir_all(&out)?;
        std::fs::write(out.join("config.toml"), cfg.to_toml())?;
        Ok((cfg, out))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Forward(a) => {
            let (cfg, out) = a.load()?;
            let s = studies::forward(&cfg, &out)?;
            println!("{} nodes, {} elements, final load {} N", s.nodes, s.elements, num(s.final_load));
        }
        Command::Synth(a) => {
            let (cfg, out) = a.load()?;
            for (stem, _) in studies::synth(&cfg, &out)? {
                println!("wrote {stem}");
            }
        }
        Command::Calibrate(a) => {
            let (cfg, out) = a.load()?;
            let r = studies::calibrate(&cfg, &out)?;
            for g in &r.groups {
                let err = g.mean_error_percent.as_ref().map(|e| format!(" err% {e:.3?}")).unwrap_or_default();
                let bound = g.at_bound();
                let bound = if bound.is_empty() { String::new() } else { format!(" at bound: {}", bound.join(" ")) };
                println!("{}/{}/{}: mean {:.4?}{err}{bound} ({} failed)", g.inverse, g.case, g.method, g.mean, g.failed);
            }
        }
        Command::Gradcheck(a) => {
            let (cfg, out) = a.load()?;
            let g = studies::gradcheck(&cfg, &out)?;
            for s in &g.summaries {
                println!("{}: min error {:.2e} at h={:.0e}", s.method, s.min_error, s.min_step);
            }
            println!("VFM forward vs adjoint: {:.2e}", g.vfm_fs_adjoint_rel);
        }
        Command::Timing(a) => {
            let (cfg, out) = a.load()?;
            let t = studies::timing(&cfg, &out)?;
            for c in &t.runs {
                println!("{}: {:.2} s, {} iterations", c.method, c.wall_time, c.iterations);
            }
        }
        Command::E4(a) => {
            let (cfg, out) = a.load()?;
            for r in studies::e4(&cfg, &out)?.rows {
                println!("{}/{}: disp {:.4e} mm^2, load {:.4e} N^2", r.inverse, r.method, r.disp_error, r.load_error);
            }
        }
        Command::E5(a) => {
            let (cfg, out) = a.load()?;
            for r in studies::e5(&cfg, &out)?.rows {
                println!("{}/{}/{}: {:.4?}", r.label, r.inverse, r.method, r.mean);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
