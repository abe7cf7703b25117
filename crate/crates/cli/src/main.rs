//! `areaprof`: profile grid cells by POI activity, cluster them and study
//! per-cluster call volumes.

mod config;
mod output;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use areaprof::synth::{gen_cdr, gen_city, write_cdr_csv, write_pois_csv, write_towers_csv, SynthSpec};
use areaprof::{Error, Result};
use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};
use stages::Run;

#[derive(Parser)]
#[command(name = "areaprof", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic city (POIs, towers, call records) from a spec.
    Synth(SynthArgs),
    /// Profile grid cells and cluster them.
    Cluster(RunArgs),
    /// Allocate call volumes and derive profiles, statistics and anomalies.
    Patterns(RunArgs),
    /// Silhouette coefficients of the clusters' temporal patterns.
    Evaluate(RunArgs),
    /// cluster, patterns and evaluate in sequence.
    RunAll(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic city spec (TOML).
    #[arg(long, alias = "config")]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Replaces the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

fn configure(args: &RunArgs) -> Result<Run> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    cfg.apply(&args.overrides)?;
    if let Some(out) = &args.out {
        cfg.set_out(out)?;
    }
    Run::new(cfg)
}

fn synth(args: &SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::from_path(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let city = gen_city(&spec)?;
    let cdr = gen_cdr(&spec, &city, &city.coverage()?)?;
    std::fs::create_dir_all(&args.out)?;
    let file = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
        Ok(std::io::BufWriter::new(std::fs::File::create(args.out.join(name))?))
    };
    write_pois_csv(&city.pois, file("pois.csv")?)?;
    write_towers_csv(&city.towers, file("towers.csv")?)?;
    write_cdr_csv(&cdr.records, file("cdr.csv")?)?;

    let b = city.bounds;
    println!("pois={}", city.pois.len());
    println!("towers={}", city.towers.len());
    println!("call_records={}", cdr.records.len());
    println!("bbox = [{}, {}, {}, {}]", b.lon_min, b.lat_min, b.lon_max, b.lat_max);
    for a in &cdr.injected {
        println!(
            "anomaly date={} hour={} region={} tower={} sigma={} extra_calls={}",
            a.date, a.hour, city.archetypes[a.archetype].name, a.tower_id, a.sigma, a.extra_calls
        );
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Cluster(a) => stages::cluster(&mut configure(a)?),
        Command::Patterns(a) => stages::patterns(&mut configure(a)?),
        Command::Evaluate(a) => stages::evaluate(&mut configure(a)?),
        Command::RunAll(a) => {
            let mut run = configure(a)?;
            stages::cluster(&mut run)?;
            stages::patterns(&mut run)?;
            stages::evaluate(&mut run)?;
            stages::write_run_report(&run)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Degenerate(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
