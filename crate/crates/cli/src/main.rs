//! `jcdd`: link-level simulation, parameter tuning and table tooling.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jcdd_core::exec::Execution;
use jcdd_core::gf2code::{generate_regular_code, to_alist};
use jcdd_core::harness::{export_frames, results_csv, results_json, run_sweep, tune_grid, tune_layers, Format, HarnessError, Link, SimConfig, SweepOptions};
use jcdd_core::params::{Network, ParamTable};
use jcdd_core::tuner::TrainerConfig;

#[derive(Parser)]
#[command(name = "jcdd", version, about = "Joint channel estimation, detection and decoding link simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo BLER sweep.
    Simulate(SimulateArgs),
    /// Pick defaults by grid search (`--grid`) or tune per-layer parameters.
    Tune(TuneArgs),
    /// Generate a regular LDPC code and print it in alist format.
    Codegen(CodegenArgs),
    /// Check a parameter table file.
    ValidateTable(ValidateArgs),
    /// Write frames as JSON lines (Y, S_P, coded bits, σ²) for offline training.
    ExportFrames(ExportArgs),
}

#[derive(Args)]
struct Common {
    /// Simulation config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run frames on one thread.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn load(&self) -> Result<SimConfig, HarnessError> {
        let mut sim = SimConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            sim.seed = s;
        }
        Ok(sim)
    }

    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Receiver ids, comma separated.
    #[arg(long, value_delimiter = ',')]
    receiver: Option<Vec<String>>,
    /// SNR points in dB, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    snr: Option<Vec<f64>>,
    #[arg(long)]
    target_errors: Option<usize>,
    #[arg(long)]
    max_frames: Option<usize>,
    /// Parameter table for the matching network receiver.
    #[arg(long)]
    params: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    common: Common,
    /// Training SNR in dB; defaults to the first config SNR.
    #[arg(long, allow_negative_numbers = true)]
    snr: Option<f64>,
    /// Grid search over constant schedules instead of per-layer search.
    #[arg(long)]
    grid: bool,
    /// Frames for the grid, or per training/holdout set.
    #[arg(long)]
    max_frames: Option<usize>,
    /// Layers of the tuned table.
    #[arg(long, default_value_t = 20)]
    layers: usize,
    /// Layers per stage.
    #[arg(long, default_value_t = 20)]
    stage: usize,
    /// Perturbation pairs per stage.
    #[arg(long, default_value_t = 20)]
    budget: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CodegenArgs {
    /// Take the code parameters from this config instead of the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 96)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    d_v: usize,
    #[arg(long, default_value_t = 6)]
    d_c: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    params: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, allow_negative_numbers = true)]
    snr: Option<f64>,
    /// Number of frames.
    #[arg(long, default_value_t = 1000)]
    max_frames: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_config() {
            Self::Config(e.to_string())
        } else {
            Self::Runtime(e.to_string())
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| Failure::Runtime(e.to_string())),
    }
}

fn first_snr(sim: &SimConfig, snr: Option<f64>) -> f64 {
    snr.unwrap_or(sim.snr_db[0])
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let format: Format = a.format.parse()?;
    let mut sim = a.common.load()?;
    if let Some(r) = a.receiver {
        sim.receivers = r;
    }
    if let Some(s) = a.snr {
        sim.snr_db = s;
    }
    if let Some(t) = a.target_errors {
        sim.stop.target_errors = t;
    }
    if let Some(m) = a.max_frames {
        sim.stop.max_frames = m;
    }
    for p in a.params {
        let table = ParamTable::load(&p).map_err(HarnessError::from)?;
        match table.network {
            Network::JcddnetG => sim.solver.params_g = Some(p),
            Network::JcddnetS => sim.solver.params_s = Some(p),
        }
    }
    sim.validate()?;
    let opts = SweepOptions { execution: a.common.execution(), ..Default::default() };
    let result = run_sweep(&sim, &opts)?;
    let text = match format {
        Format::Csv => results_csv(&result)?,
        Format::Json => results_json(&result)?,
    };
    emit(a.out.as_deref(), &text)
}

fn tune(a: TuneArgs) -> Result<(), Failure> {
    let sim = a.common.load()?;
    let snr = first_snr(&sim, a.snr);
    let exec = a.common.execution();
    let table = if a.grid {
        let report = tune_grid(&sim, snr, a.max_frames.unwrap_or(1000), exec)?;
        for line in &report.ranking {
            eprintln!("{line}");
        }
        report.table
    } else {
        let mut trainer = TrainerConfig::new(a.layers, a.budget, sim.seed);
        trainer.l_part = a.stage;
        trainer.execution = exec;
        let out = tune_layers(&sim, snr, a.max_frames.unwrap_or(200), &trainer)?;
        eprintln!(
            "holdout loss {:.6e} -> {:.6e}{}",
            out.default_loss,
            out.tuned_loss,
            if out.improved { "" } else { " (no improvement; default table kept)" }
        );
        out.table
    };
    emit(a.out.as_deref(), &table.to_json())
}

fn codegen(a: CodegenArgs) -> Result<(), Failure> {
    let h = match &a.config {
        Some(p) => SimConfig::load(p)?.parity_check()?,
        None => generate_regular_code(a.n, a.d_v, a.d_c, a.seed).map_err(|e| Failure::Config(e.to_string()))?,
    };
    emit(a.out.as_deref(), &to_alist(&h))
}

fn validate_table(a: ValidateArgs) -> Result<(), Failure> {
    let t = ParamTable::load(&a.params).map_err(HarnessError::from)?;
    println!("{}: {} {} layers, provenance {}", a.params.display(), t.network.id(), t.l_max, t.provenance);
    Ok(())
}

fn export(a: ExportArgs) -> Result<(), Failure> {
    let sim = a.common.load()?;
    let link = Link::new(&sim)?;
    let snr = first_snr(&sim, a.snr);
    let mut buf = Vec::new();
    export_frames(&link, sim.seed, snr, a.max_frames, &mut buf)?;
    emit(a.out.as_deref(), &String::from_utf8(buf).expect("JSON is UTF-8"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Tune(a) => tune(a),
        Command::Codegen(a) => codegen(a),
        Command::ValidateTable(a) => validate_table(a),
        Command::ExportFrames(a) => export(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
