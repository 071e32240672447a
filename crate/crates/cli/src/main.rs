#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ristrack::campaign::{self, SweepParam};
use ristrack::config::{load_config, load_file, Experiment, Overrides, PRESETS};
use ristrack::metrics::write_power_map;

#[derive(Parser)]
#[command(
    name = "ristrack",
    version,
    about = "RIS-assisted near-field UE tracking campaigns"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo campaign over every configured policy.
    Run {
        #[command(flatten)]
        common: Common,
        /// Run only this run index, with the seed it has in the full campaign.
        #[arg(long)]
        only: Option<usize>,
    },
    /// Repeat the campaign for each value of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// dt_s, t_o_s, kappa_b or orientation_std_deg.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Received power maps of the profiles each policy picks at t = 0.
    Map {
        #[command(flatten)]
        common: Common,
        /// Grid step in meters (defaults to the configured step, else 0.25).
        #[arg(long)]
        step: Option<f64>,
    },
    /// Tracking RMSE against the genie bound over time.
    Peb {
        #[command(flatten)]
        common: Common,
    },
    /// Print the resolved configuration as TOML.
    Config {
        #[command(flatten)]
        common: Common,
    },
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
struct Common {
    /// Preset name or TOML file.
    #[arg(long, short, default_value = "default")]
    config: String,
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Comma-separated policy names, e.g. bOPT-AO,bFOCUS.
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<String>>,
    /// Run episodes on all cores.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    parallel: bool,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    n_r: Option<usize>,
    #[arg(long)]
    kappa_b: Option<f64>,
    #[arg(long)]
    orientation_std: Option<f64>,
    #[arg(long)]
    ris_rows: Option<usize>,
    #[arg(long)]
    ris_cols: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            dt_s: self.dt,
            n_r: self.n_r,
            kappa_b: self.kappa_b,
            orientation_std_deg: self.orientation_std,
            ris_rows: self.ris_rows,
            ris_cols: self.ris_cols,
            runs: self.runs,
            seed: self.seed,
            policies: self.policies.clone(),
        }
    }

    fn experiment(&self) -> Result<Experiment> {
        load_config(&self.config, &self.overrides())
            .with_context(|| format!("loading configuration `{}`", self.config))
    }
}

fn report(result: &campaign::CampaignResult) {
    for p in &result.policies {
        let s = p.stats();
        eprintln!(
            "{:>9}: {} ok, {} failed, mean {:.3} m, rmse {:.3} m, q90 {:.3} m, rate {:.3} bit/s/Hz",
            p.policy.name(),
            p.runs.len(),
            p.failures.len(),
            s.mean,
            s.rmse,
            s.q90,
            p.mean_rate()
        );
        for (run, e) in &p.failures {
            eprintln!("{:>9}  run {run} failed: {e}", "");
        }
    }
}

fn run(common: &Common, only: Option<usize>) -> Result<usize> {
    let exp = common.experiment()?;
    let start = Instant::now();
    eprintln!(
        "{} runs x {} policies, {} steps",
        if only.is_some() { 1 } else { exp.campaign.runs },
        exp.campaign.policies.len(),
        exp.episode.timescale.steps
    );
    let result = match only {
        Some(i) => campaign::run_single(&exp, i, common.parallel)?,
        None => campaign::run_campaign(&exp, common.parallel)?,
    };
    campaign::write_outputs(&exp, &result, &common.out)?;
    report(&result);
    eprintln!(
        "wrote {} in {:.1} s",
        common.out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(result.successes())
}

fn map(common: &Common, step: Option<f64>) -> Result<()> {
    let exp = common.experiment()?;
    let step = step.or(exp.campaign.power_map_step).unwrap_or(0.25);
    if !(step > 0.0) {
        bail!("map step must be positive (got {step})");
    }
    let dep = exp.scenario.deploy()?;
    for (policy, update) in campaign::initial_updates(&exp, &dep)? {
        let dir = common.out.join(campaign::slug(policy));
        fs::create_dir_all(&dir)?;
        let (xs, ys, m) = campaign::power_map(&exp, &dep, &update, step);
        write_power_map(&dir.join("powermap.csv"), &xs, &ys, &m)?;
        eprintln!("{:>9}: peak {:.3e} W", policy.name(), m.max());
    }
    Ok(())
}

fn peb(common: &Common) -> Result<usize> {
    let exp = common.experiment()?;
    if !exp.episode.settings.compute_peb {
        bail!("the bound is disabled in this configuration");
    }
    let result = campaign::run_campaign(&exp, common.parallel)?;
    campaign::write_outputs(&exp, &result, &common.out)?;
    for p in &result.policies {
        let (rmse, bound) = p.rmse_and_peb();
        let ratios: Vec<f64> = rmse
            .iter()
            .zip(&bound)
            .skip(1)
            .map(|(r, b)| r / b)
            .filter(|x| x.is_finite())
            .collect();
        let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), x| {
            (lo.min(*x), hi.max(*x))
        });
        eprintln!("{:>9}: RMSE/PEB in [{lo:.3}, {hi:.3}]", p.policy.name());
    }
    Ok(result.successes())
}

fn sweep(common: &Common, param: &str, values: &[f64]) -> Result<usize> {
    let param: SweepParam = param.parse()?;
    let (file, dir) = load_file(&common.config, &common.overrides())?;
    Ok(campaign::sweep(
        &file,
        dir.as_deref(),
        param,
        values,
        &common.out,
        common.parallel,
    )?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome =
        match &cli.command {
            Command::Run { common, only } => run(common, *only).map(Some),
            Command::Sweep {
                common,
                param,
                values,
            } => sweep(common, param, values).map(Some),
            Command::Map { common, step } => map(common, *step).map(|_| None),
            Command::Peb { common } => peb(common).map(Some),
            Command::Config { common } => common
                .experiment()
                .and_then(|e| Ok(e.file.to_toml()?))
                .map(|t| {
                    print!("{t}");
                    None
                }),
            Command::Presets => {
                for (name, _) in PRESETS {
                    println!("{name}");
                }
                Ok(None)
            }
        };
    match outcome {
        Ok(Some(0)) => {
            eprintln!("error: no run succeeded");
            ExitCode::FAILURE
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
