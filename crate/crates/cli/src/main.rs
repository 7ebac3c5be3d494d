//! `fracavg`: command-line driver for the experiment harness.
//!
//! Exit codes: 0 when every statistic passes, 1 on a statistical failure,
//! 2 on a configuration error and 3 on a numerical or I/O failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fracavg_core::harness::{self, emit_outputs, write_text, ExperimentConfig, RowKind, StatReport};
use fracavg_core::Error;

#[derive(Parser)]
#[command(name = "fracavg", version, about = "Monte Carlo validation of fBM-driven slow/fast averaging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `mc.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one fBM path and write it as CSV.
    SampleFbm(Common),
    /// Integrate one slow/fast trajectory and write it as CSV.
    Simulate(Common),
    /// Effective diffusion, spectral and Green–Kubo.
    Sigma(Common),
    /// Functional CLT for the first order process.
    Clt(Common),
    /// Mean shift and covariances of the second order process.
    SecondOrder(Common),
    /// Slow/fast endpoints against the limiting SDE.
    Homogenize(Common),
    /// Rate of the law of large numbers for the fast chain.
    Lln(Common),
    /// Chen and geometric identities on a mollified lift.
    RoughCheck(Common),
    /// Regularity and integrability of a labelled graph.
    ///
    /// The file holds the vertex count, then `u v alpha_minus alpha_plus` per edge.
    GraphCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SampleFbm(_) => "sample-fbm",
            Command::Simulate(_) => "simulate",
            Command::Sigma(_) => "sigma",
            Command::Clt(_) => "clt",
            Command::SecondOrder(_) => "second-order",
            Command::Homogenize(_) => "homogenize",
            Command::Lln(_) => "lln",
            Command::RoughCheck(_) => "rough-check",
            Command::GraphCheck { .. } => "graph-check",
        }
    }
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut cfg = ExperimentConfig::from_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.mc.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
    cfg.output.directory = out.display().to_string();
    Ok((cfg, out))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "-".into())
}

fn print_report(rep: &StatReport) {
    println!("{}: {} statistics", rep.experiment, rep.rows.len());
    for r in &rep.rows {
        let verdict = match (r.kind, r.pass) {
            (RowKind::Info, _) => "info",
            (_, true) => "pass",
            (_, false) => "FAIL",
        };
        let extra = match r.kind {
            RowKind::Distribution => format!("p={}", fmt_opt(r.p_value)),
            _ => format!("z={}", r.z.map(|z| format!("{z:.2}")).unwrap_or_else(|| "-".into())),
        };
        println!(
            "  {verdict:4} {:<40} est={:.6e} se={:.2e} target={} {extra}",
            r.name,
            r.estimate,
            r.stderr,
            fmt_opt(r.target)
        );
    }
    for w in &rep.warnings {
        eprintln!("warning: {w}");
    }
}

fn finish(rep: StatReport, cfg: Option<&ExperimentConfig>, out: &Path) -> Result<bool, Error> {
    print_report(&rep);
    let files = match cfg {
        Some(cfg) => emit_outputs(&rep, cfg, out)?,
        None => vec![
            write_text(out, &format!("{}.csv", rep.experiment), &rep.to_csv())?,
            write_text(out, &format!("{}.json", rep.experiment), &rep.to_json()?)?,
        ],
    };
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(rep.all_pass())
}

fn run(cmd: Command) -> Result<bool, Error> {
    let name = cmd.name();
    match cmd {
        Command::GraphCheck { config, out } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", config.display())))?;
            let rep = harness::graph_check(&text)?;
            for w in &rep.warnings {
                println!("{w}");
            }
            let out = out.unwrap_or_else(|| PathBuf::from("out"));
            finish(rep, None, &out)?;
            // Verdicts are results, not failures.
            Ok(true)
        }
        Command::SampleFbm(c) => {
            let (cfg, out) = load(&c)?;
            let f = write_text(&out, "fbm.csv", &harness::sample_fbm_csv(&cfg)?)?;
            write_text(&out, "sample-fbm.config.toml", &cfg.resolved().to_toml()?)?;
            println!("wrote {}", f.display());
            Ok(true)
        }
        Command::Simulate(c) => {
            let (cfg, out) = load(&c)?;
            let f = write_text(&out, "trajectory.csv", &harness::simulate_csv(&cfg)?)?;
            write_text(&out, "simulate.config.toml", &cfg.resolved().to_toml()?)?;
            println!("wrote {}", f.display());
            Ok(true)
        }
        Command::Sigma(c)
        | Command::Clt(c)
        | Command::SecondOrder(c)
        | Command::Homogenize(c)
        | Command::Lln(c)
        | Command::RoughCheck(c) => {
            let (cfg, out) = load(&c)?;
            let rep = harness::run_named(name, &cfg)?;
            finish(rep, Some(&cfg), &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
