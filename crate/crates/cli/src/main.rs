use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pbound::feedback::{FeedbackDescriptor, Saturation};
use pbound::repro::{reproduce_all, run_criterion, CRITERIA};
use pbound::scenario::{
    closed_loop_with, read_json, run_scenario, simulate_scenario, synthesize_scenario, verify_scenario, write_json,
    write_trajectories, CanonicalBundle, Overrides, Scenario, TuningSummary,
};
use pbound::verify::{counterexample_growth, linearization_abscissa};

#[derive(Parser)]
#[command(name = "pbound", version, about = "Bounded-derivative feedback synthesis and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: synthesis, certification, trajectories, small-input test and summary.
    Run(Common),
    /// Tune a feedback for the scenario plant and write it out.
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// Write the normal-form bundle (J, b̂, T, θ) to this file.
        #[arg(long)]
        dump_canonical: Option<PathBuf>,
    },
    /// Check a feedback against the bounds on the unseen battery.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Feedback descriptor to verify instead of tuning one.
        #[arg(long)]
        feedback: Option<PathBuf>,
    },
    /// Export closed-loop trajectories with control derivatives as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        feedback: Option<PathBuf>,
    },
    /// Growth of u̇(0) under a saturated linear feedback on the oscillator.
    Counterexample {
        #[arg(long, default_value_t = 2.0)]
        omega: f64,
        #[arg(long, default_value_t = 1.0)]
        k1: f64,
        #[arg(long, default_value_t = 2.0)]
        k2: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 4.0, 8.0, 16.0])]
        l: Vec<f64>,
        #[arg(long, value_enum, default_value_t = SaturationArg::Tanh)]
        saturation: SaturationArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every acceptance experiment and print the pass/fail matrix.
    ReproduceAll {
        /// List the experiments without running them.
        #[arg(long)]
        list: bool,
        /// Run only these experiments.
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
        /// Write the outcomes as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the scenario's.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jet_order: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
}

impl Common {
    fn scenario(&self) -> Result<Scenario> {
        let mut sc = Scenario::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        sc.apply(&Overrides {
            seed: self.seed,
            jet_order: self.jet_order,
            horizon: self.horizon,
            rtol: self.rtol,
            atol: self.atol,
            output: self.out.clone(),
        })?;
        Ok(sc)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SaturationArg {
    Tanh,
    ArctanNormalized,
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn status(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn closed_loop(sc: &Scenario, feedback: Option<&Path>) -> Result<pbound::closed_loop::ClosedLoop> {
    Ok(match feedback {
        Some(path) => {
            let fd: FeedbackDescriptor = read_json(path)?;
            closed_loop_with(sc, fd)?
        }
        None => synthesize_scenario(sc)?.closed_loop,
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(common) => {
            let sc = common.scenario()?;
            let outcome = run_scenario(&sc)?;
            print!("{}", outcome.summary);
            println!("artifacts in {}", sc.output_dir().display());
            Ok(status(outcome.success()))
        }
        Command::Synthesize { common, dump_canonical } => {
            let sc = common.scenario()?;
            let syn = synthesize_scenario(&sc)?;
            let out = sc.output_dir();
            write_json(&out.join("feedback.json"), &syn.closed_loop.feedback)?;
            write_json(&out.join("tuning.json"), &syn.tuning)?;
            write_json(&out.join("profile.json"), &syn.profile)?;
            if let Some(path) = dump_canonical {
                let Some(c) = &syn.canonical else { bail!("multi-input plants have no single normal form") };
                write_json(&path, &CanonicalBundle::from(c))?;
            }
            let certified = match &syn.tuning {
                TuningSummary::Single(r) => {
                    println!("gains {:?}", r.gains.a);
                    r.certified.is_some()
                }
                TuningSummary::Multi(r) => {
                    println!("block gains {:?}", r.block_gains.iter().map(|g| g.a.clone()).collect::<Vec<_>>());
                    r.verification.pass()
                }
                TuningSummary::Given => true,
            };
            println!("feedback written to {}", out.join("feedback.json").display());
            Ok(status(certified))
        }
        Command::Verify { common, feedback } => {
            let sc = common.scenario()?;
            let cl = closed_loop(&sc, feedback.as_deref())?;
            let report = verify_scenario(&sc, &cl)?;
            let abscissa = linearization_abscissa(&cl)?;
            write_json(&sc.output_dir().join("certificate.json"), &report)?;
            for (j, (r, w)) in sc.bounds.r.iter().zip(&report.certificate.worst).enumerate() {
                println!("U^({j})  bound {r:.6e}  worst {w:.6e}");
            }
            println!(
                "certificate {} ({} runs, {} violations, {} unsettled); linearization max Re {abscissa:.3e}",
                verdict(report.pass()),
                report.runs.len(),
                report.certificate.violations.len(),
                report.unsettled
            );
            Ok(status(report.pass()))
        }
        Command::Simulate { common, feedback } => {
            let sc = common.scenario()?;
            let cl = closed_loop(&sc, feedback.as_deref())?;
            let trajectories = simulate_scenario(&sc, &cl)?;
            let paths = write_trajectories(&sc.output_dir().join("trajectories"), &trajectories)?;
            for p in paths {
                println!("{}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Counterexample { omega, k1, k2, l, saturation, out } => {
            let sigma = match saturation {
                SaturationArg::Tanh => Saturation::Tanh,
                SaturationArg::ArctanNormalized => Saturation::ArctanNormalized,
            };
            let rep = counterexample_growth(&l, [k1, k2], omega, sigma, None)?;
            println!("{:>8} {:>16} {:>16} {:>16}", "l", "u'(0) jet", "u'(0) diff.", "closed form");
            for r in &rep.rows {
                println!("{:>8} {:>16.10} {:>16.10} {:>16.10}", r.l, r.simulated, r.finite_difference, r.formula);
            }
            println!("slope {:.10} (expected magnitude {:.10})", rep.slope, rep.expected_slope);
            println!("matches closed form: {}; matches with reversed sign: {}", rep.matches_formula, rep.matches_magnitude);
            if let Some(out) = out {
                write_json(&out.join("counterexample.json"), &rep)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ReproduceAll { list, only, out } => {
            if list {
                for c in CRITERIA {
                    println!("{:>2}  {:<36} budget {:>4.0} s", c.id, c.name, c.budget);
                }
                return Ok(ExitCode::SUCCESS);
            }
            let outcomes = if only.is_empty() {
                reproduce_all()
            } else {
                only.iter()
                    .map(|&id| run_criterion(id).with_context(|| format!("no experiment {id}")))
                    .collect::<Result<Vec<_>>>()?
            };
            for o in &outcomes {
                println!("{}", o.line());
            }
            if let Some(out) = out {
                fs::create_dir_all(&out)?;
                write_json(&out.join("reproduction.json"), &outcomes)?;
            }
            Ok(status(outcomes.iter().all(|o| o.acceptable())))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
