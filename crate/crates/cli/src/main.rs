use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rnhedge::dlv::{
    calls_from_dlv, dlv_from_calls, read_surface_csv, static_arbitrage_report, write_surface_csv, CallGrid,
    DlvSurface,
};
use rnhedge::pipeline::{ExperimentConfig, Outcome, Pipeline};
use rnhedge::Error;

#[derive(Parser)]
#[command(name = "rnhedge", version, about = "Risk-neutral reweighting of simulated markets")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate training and validation paths.
    Simulate(Common),
    /// Train the statistical-arbitrage policy on simulated paths.
    TrainArb(Common),
    /// Turn the trained policy into validation-path weights.
    Reweight(Common),
    /// Band test and retrain check of the reweighted paths.
    Verify(Common),
    /// Deep hedge the `[hedge]` payoff.
    Hedge(Common),
    /// Indifference price of `[hedge].price` given `[hedge].payoff`.
    Price(Common),
    /// Every stage end to end.
    Run(Common),
    /// Discrete local volatility tools.
    Dlv {
        #[command(subcommand)]
        op: DlvOp,
    },
}

#[derive(Subcommand)]
enum DlvOp {
    /// Call prices to DLV.
    Encode { input: PathBuf, #[arg(long)] out: Option<PathBuf> },
    /// DLV to call prices.
    Decode { input: PathBuf, #[arg(long)] out: Option<PathBuf> },
    /// List static-arbitrage violations in a call grid.
    Lint { input: PathBuf },
}

enum Failure {
    Tolerance,
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn pipeline(c: &Common) -> Result<Pipeline, Error> {
    let mut cfg = ExperimentConfig::from_file(&c.config)?;
    if let Some(s) = c.seed {
        cfg = cfg.with_seed(s);
    }
    Pipeline::new(cfg, c.out.as_deref())
}

fn report(o: &Outcome) -> Result<(), Failure> {
    for c in &o.checks {
        println!("{} {} = {} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.target);
    }
    println!("digest {} -> {}", o.digest, o.dir.display());
    if o.pass {
        Ok(())
    } else {
        Err(Failure::Tolerance)
    }
}

/// Maturities, strikes and row-major values.
type Grid = (Vec<f64>, Vec<f64>, Vec<f64>);

fn read_grid(path: &Path) -> Result<Grid, Error> {
    read_surface_csv(BufReader::new(File::open(path)?))
}

fn write_grid(out: Option<&Path>, m: &[f64], k: &[f64], v: &[f64]) -> Result<(), Error> {
    match out {
        Some(p) => write_surface_csv(BufWriter::new(File::create(p)?), m, k, v),
        None => write_surface_csv(std::io::stdout().lock(), m, k, v),
    }
}

fn dlv(op: DlvOp) -> Result<(), Failure> {
    match op {
        DlvOp::Encode { input, out } => {
            let (m, k, v) = read_grid(&input)?;
            let s = dlv_from_calls(&CallGrid::new(m, k, v)?);
            write_grid(out.as_deref(), &s.maturities, &s.strikes, &s.values)?;
        }
        DlvOp::Decode { input, out } => {
            let (m, k, v) = read_grid(&input)?;
            let g = calls_from_dlv(&DlvSurface::new(m, k, v)?)?;
            write_grid(out.as_deref(), &g.maturities, &g.strikes, &g.prices)?;
        }
        DlvOp::Lint { input } => {
            let (m, k, v) = read_grid(&input)?;
            let grid = CallGrid::new(m, k, v)?;
            let bad = static_arbitrage_report(&grid);
            for b in &bad {
                println!(
                    "{:?} at maturity {} strike {} (tau {}, k {}): {:.3e}",
                    b.kind,
                    b.maturity_index,
                    b.strike_index,
                    grid.maturities[b.maturity_index],
                    grid.strikes[b.strike_index],
                    b.magnitude
                );
            }
            if !bad.is_empty() {
                return Err(Failure::Tolerance);
            }
            println!("no static arbitrage");
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rnhedge::set_threads(n)?;
    }
    let is_price = matches!(cli.cmd, Cmd::Price(_));
    match cli.cmd {
        Cmd::Simulate(c) => {
            let p = pipeline(&c)?;
            let (tr, va) = p.simulate()?;
            println!("{} train / {} validation paths -> {}", tr.n_paths, va.n_paths, p.dir.display());
        }
        Cmd::TrainArb(c) => {
            let p = pipeline(&c)?;
            let (tr, va) = p.load_paths()?;
            let (_, rows) = p.train_arb(&tr, &va)?;
            if let Some(r) = rows.last() {
                println!("step {}: relative entropy {}", r.step, r.rel_entropy);
            }
            rnhedge::pipeline::metrics_export(&p.dir)?;
        }
        Cmd::Reweight(c) => {
            let p = pipeline(&c)?;
            let (_, va) = p.load_paths()?;
            let w = p.reweight(&p.load_policy()?, &va)?;
            println!("ESS {:.1} of {}", w.ess, va.n_paths);
            rnhedge::pipeline::metrics_export(&p.dir)?;
        }
        Cmd::Verify(c) => {
            let p = pipeline(&c)?;
            if p.cfg.verify.is_none() {
                return Err(Error::Config("the config has no [verify] section".into()).into());
            }
            report(&p.verify_from_disk()?)?;
        }
        Cmd::Hedge(c) | Cmd::Price(c) => {
            let p = pipeline(&c)?;
            if is_price && p.cfg.hedge.as_ref().and_then(|h| h.price.as_ref()).is_none() {
                return Err(Error::Config("pricing needs [hedge].price".into()).into());
            }
            let (tr, va) = p.load_paths()?;
            let star = p.load_policy().ok();
            let checks = p.hedge(&tr, &va, star.as_ref())?;
            println!("{}", std::fs::read_to_string(p.dir.join("hedge.json")).map_err(Error::from)?);
            report(&p.finish(checks)?)?;
        }
        Cmd::Run(c) => {
            let p = pipeline(&c)?;
            report(&p.run()?)?;
        }
        Cmd::Dlv { op } => dlv(op)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Tolerance) => ExitCode::from(1),
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Diverged(_) | Error::NonFiniteLoss { .. } | Error::DegenerateGains => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
