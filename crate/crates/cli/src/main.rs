use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use thzlab::absorption::{fit_exponential, AbsorptionModel, AbsorptionTable, RegionTag};
use thzlab::baseline::{solve_esb, solve_special_case, SolveOptions, TransformParams};
use thzlab::experiments::{run, Experiment, ExperimentConfig, Scale};
use thzlab::quadrature::QuadratureSpec;
use thzlab::rate::evaluate;
use thzlab::scenario::ScenarioFixture;
use thzlab::selfcheck;
use thzlab::trainer::{infer, TrainerCheckpoint};
use thzlab::Error;

#[derive(Parser)]
#[command(name = "thzlab", version, about = "Terahertz sub-band and power allocation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSVs, summary.json and manifest.json.
    Run {
        #[arg(long, value_parser = ["fig4", "fig5", "fig6"])]
        experiment: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = ["desk", "paper"], default_value = "desk")]
        scale: String,
        #[arg(long)]
        out: PathBuf,
        /// Override a setting, e.g. `--set n_iterations=200`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Fit k(f) = exp(eta1 + eta2 f) + eta3 to a tabulated absorption CSV.
    FitAbsorption {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, num_args = 2, value_names = ["F_LO", "F_HI"], allow_negative_numbers = true)]
        range: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Region::Untagged)]
        region: Region,
    },
    /// Solve one scenario file and print the allocation as JSON.
    Solve {
        #[arg(long, value_enum)]
        solver: Solver,
        #[arg(long)]
        scenario: PathBuf,
        /// Trained network, required by the learned solver.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Run the numerical self-checks.
    Check,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Learned,
    Convex,
    Esb,
}

#[derive(Clone, Copy, ValueEnum)]
enum Region {
    Nacsr,
    Pacsr,
    Untagged,
}

impl From<Region> for RegionTag {
    fn from(r: Region) -> Self {
        match r {
            Region::Nacsr => RegionTag::Nacsr,
            Region::Pacsr => RegionTag::Pacsr,
            Region::Untagged => RegionTag::Untagged,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 3 for numerical failures, 2 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(err) if err.is_numerical() => 3,
        _ => 2,
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<ExitCode> {
    match cmd {
        Command::Run { experiment, seed, scale, out, set } => {
            let mut cfg = ExperimentConfig::new(experiment.parse::<Experiment>()?, seed, scale.parse::<Scale>()?, out);
            for s in &set {
                cfg.overrides.push(ExperimentConfig::parse_override(s)?);
            }
            let manifest = run(&cfg)?;
            for f in &manifest.files {
                println!("{}  {}", f.sha256, cfg.output_dir.join(&f.path).display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::FitAbsorption { csv, range, region } => {
            let table = AbsorptionTable::load_csv(&csv, region.into())
                .with_context(|| format!("reading {}", csv.display()))?;
            let fit = fit_exponential(&table, range[0], range[1])?;
            let out = json!({
                "eta": fit.model.eta(),
                "max_rel_error": fit.max_rel_error,
                "f_lo_hz": range[0],
                "f_hi_hz": range[1],
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Solve { solver, scenario, checkpoint, tol } => {
            solve(solver, &scenario, checkpoint.as_deref(), tol)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Check => {
            let results = selfcheck::run_all()?;
            let mut failed = 0;
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                eprintln!("{failed} of {} checks failed", results.len());
                return Ok(ExitCode::from(3));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn solve(solver: Solver, path: &Path, checkpoint: Option<&Path>, tol: f64) -> anyhow::Result<()> {
    let fixture = ScenarioFixture::load(path).with_context(|| format!("reading {}", path.display()))?;
    let scenario = fixture.to_scenario(path.parent())?;
    let quad = QuadratureSpec::default().build()?;
    let opts = SolveOptions { tol, ..SolveOptions::default() };
    let text = match solver {
        Solver::Esb => solve_esb(&scenario, &quad, opts)?.to_json()?,
        Solver::Convex => {
            let mut approx = scenario.clone();
            if scenario.absorption.as_exponential().is_none() {
                let lo = scenario.spectrum.epsilon_f;
                let hi = lo + scenario.spectrum.b_tot;
                let table = scenario.absorption.tabulate(lo, hi, 512, RegionTag::Untagged)?;
                let fit = fit_exponential(&table, lo, hi)?;
                log::warn!(
                    "absorption is not exponential; using a fit with max relative error {:.3}",
                    fit.max_rel_error
                );
                approx.absorption = AbsorptionModel::Exponential(fit.model);
            }
            let mut sol = solve_special_case(&approx, &quad, &TransformParams::default(), opts)?;
            sol.rate = evaluate(&scenario, &quad, &sol.p, &sol.b)?;
            sol.to_json()?
        }
        Solver::Learned => {
            let Some(ck) = checkpoint else {
                bail!(Error::InvalidConfig("the learned solver needs --checkpoint".into()));
            };
            let ck = TrainerCheckpoint::load(ck).with_context(|| format!("reading {}", ck.display()))?;
            let inf = infer(&ck.network, &scenario, &quad, &scenario.d)?;
            serde_json::to_string_pretty(&json!({
                "solver": "learned",
                "p_w": inf.p,
                "b_hz": inf.b,
                "r_bps": inf.rate.r,
                "r_ag_bps": inf.rate.r_ag,
                "objective_e": inf.rate.objective_e,
                "power_residual_w": inf.power_residual,
                "bandwidth_residual_hz": inf.bandwidth_residual,
            }))?
        }
    };
    println!("{text}");
    Ok(())
}
