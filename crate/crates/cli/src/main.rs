use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vpon_core::config::{Overrides, SweepParam};
use vpon_core::runner::{run_scenario, sweep, sweep_csv, write_bundle, RunResult};

#[derive(Parser)]
#[command(
    name = "vponsim",
    version,
    about = "TWDM-PON mobile fronthaul simulator with vPON slicing"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and print its latency summary.
    Run {
        /// Preset name (fig2, fig2-edge, fig2-co, fig2-ew, fig3, fig4) or a scenario file.
        source: String,
        #[command(flatten)]
        ov: OverrideArgs,
        /// Directory for the result bundle.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario once per (value, seed) pair.
    Sweep {
        source: String,
        /// One of slice-size, erlang, east-west-mode, split, policy, duration, seed.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values; integer ranges like 1..12 are expanded.
        #[arg(long)]
        values: String,
        /// Comma-separated seeds.
        #[arg(long, default_value = "1")]
        seeds: String,
        #[command(flatten)]
        ov: OverrideArgs,
        /// Directory for per-run bundles and the combined CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
struct OverrideArgs {
    #[arg(long)]
    seed: Option<String>,
    /// Simulated seconds.
    #[arg(long)]
    duration: Option<String>,
    /// unbalanced or balanced.
    #[arg(long)]
    policy: Option<String>,
    /// ONUs in the fig2 slice.
    #[arg(long)]
    slice_size: Option<String>,
    /// Constant load per RU in Erlang; replaces any ramp.
    #[arg(long)]
    erlang: Option<String>,
    /// direct or overlay.
    #[arg(long)]
    east_west_mode: Option<String>,
    /// split8 or split71.
    #[arg(long)]
    split: Option<String>,
}

impl OverrideArgs {
    fn resolve(&self) -> Result<Overrides> {
        let mut ov = Overrides::default();
        let pairs = [
            (SweepParam::Seed, &self.seed),
            (SweepParam::Duration, &self.duration),
            (SweepParam::Policy, &self.policy),
            (SweepParam::SliceSize, &self.slice_size),
            (SweepParam::Erlang, &self.erlang),
            (SweepParam::EastWestMode, &self.east_west_mode),
            (SweepParam::Split, &self.split),
        ];
        for (p, v) in pairs {
            if let Some(v) = v {
                p.apply(&mut ov, v).map_err(anyhow::Error::msg)?;
            }
        }
        Ok(ov)
    }
}

fn parse_list(text: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: i64 = a.parse().with_context(|| format!("bad range `{part}`"))?;
            let b: i64 = b.parse().with_context(|| format!("bad range `{part}`"))?;
            if a > b {
                bail!("empty range `{part}`");
            }
            out.extend((a..=b).map(|v| v.to_string()));
        } else {
            out.push(part.to_owned());
        }
    }
    if out.is_empty() {
        bail!("empty value list");
    }
    Ok(out)
}

fn print_summary(r: &RunResult) {
    print!("{}", r.summary_csv());
    for o in &r.offloads {
        eprintln!(
            "offload t={:.3}s {} -> {} [{}] at {:.1} us",
            o.issue_time as f64 / 1e9,
            o.from,
            o.to,
            o.onus.join(","),
            o.trigger_mean_us
        );
    }
    let d = &r.diagnostics;
    if d.audit_violations > 0 {
        eprintln!("warning: {} audit violations", d.audit_violations);
    }
    if d.undelivered > 0 {
        eprintln!("note: {} messages undelivered at end of run", d.undelivered);
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { source, ov, out } => {
            let ov = ov.resolve()?;
            let r = run_scenario(&source, &ov).with_context(|| format!("running `{source}`"))?;
            if let Some(dir) = out {
                write_bundle(&r, &dir, &source, &ov)?;
                eprintln!("bundle written to {}", dir.display());
            }
            print_summary(&r);
        }
        Cmd::Sweep {
            source,
            param,
            values,
            seeds,
            ov,
            out,
        } => {
            let base = ov.resolve()?;
            let values = parse_list(&values)?;
            let seeds = parse_list(&seeds)?
                .iter()
                .map(|s| s.parse::<u64>().with_context(|| format!("bad seed `{s}`")))
                .collect::<Result<Vec<_>>>()?;
            let rows = sweep(&source, &base, param, &values, &seeds, out.as_deref())
                .with_context(|| format!("sweeping {param} over `{source}`"))?;
            let csv = sweep_csv(&rows);
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                let path = dir.join("sweep.csv");
                fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
            }
            print!("{csv}");
        }
        Cmd::Presets => {
            for (name, _) in vpon_core::config::Preset::ALL {
                println!("{name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
