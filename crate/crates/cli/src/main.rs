use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use homomargin::losses::{validate_b3, LossSpec, SampleGrid};
use homomargin::models::HomogeneousModel;
use homomargin::rates::{bounded_ratio_verdict, rate_ratios, t_min_index, RatePoint};
use homomargin::runner::{preset, read_trajectory, run_scenario, LoadedConfig, RunOutcome};

#[derive(Parser)]
#[command(
    name = "homomargin",
    version,
    about = "Margin dynamics of gradient flow and descent on homogeneous models"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run config, or the name of a built-in preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this seed instead of the seeds listed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's out_dir, then $HOMOMARGIN_OUT, then ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its trajectory, plot data and summary.
    Run(Common),
    /// Check the loss assumptions on a sample grid.
    ValidateLoss {
        #[command(flatten)]
        common: Common,
        /// Loss name; overrides the one in --config.
        #[arg(long)]
        loss: Option<String>,
    },
    /// Tabulate the KKT certificates of a trajectory (or of a fresh run).
    KktReport {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Bounded-ratio check of the loss and norm rates.
    Rates {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long, default_value_t = 2.0)]
        window_decades: f64,
        #[arg(long, default_value_t = 10.0)]
        bound_factor: f64,
    },
    /// Integrate the Mexican-hat example.
    Hat(Common),
}

fn out_dir(common: &Common, cfg: Option<&LoadedConfig>) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.config.out_dir.clone()))
        .or_else(|| std::env::var_os("HOMOMARGIN_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn load(common: &Common) -> Result<LoadedConfig> {
    let path = common.config.as_deref().context("--config is required")?;
    LoadedConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn execute(common: &Common, cfg: &LoadedConfig) -> Result<RunOutcome> {
    let seeds = match common.seed {
        Some(s) => vec![s],
        None => cfg.config.seeds.clone(),
    };
    let out = out_dir(common, Some(cfg));
    let start = Instant::now();
    let outcome = run_scenario(cfg, &seeds, Some(&out))?;
    for run in &outcome.runs {
        let s = &run.summary;
        let status = if s.passed() { "ok" } else { "FAILED" };
        match &s.final_state {
            Some(f) => println!(
                "seed {}: {status}  steps {}  log10 L {:.3}  rho {:.4}  bar_gamma {:.6e}",
                run.seed, f.steps, f.log10_loss, f.rho, f.bar_gamma
            ),
            None => println!("seed {}: {status}", run.seed),
        }
        for m in s.monitors.iter().filter(|m| m.enabled && !m.passed) {
            println!("  monitor {} failed: {}", m.name, m.detail);
        }
    }
    if let Some(dir) = &outcome.dir {
        println!("wrote {} in {:.2?}", dir.display(), start.elapsed());
    }
    Ok(outcome)
}

fn exit_for(outcome: &RunOutcome) -> ExitCode {
    if outcome.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn trajectory_path(common: &Common, explicit: Option<&Path>) -> Result<Option<PathBuf>> {
    if let Some(p) = explicit {
        return Ok(Some(p.to_path_buf()));
    }
    if common.config.is_none() {
        bail!("give --trajectory or --config");
    }
    Ok(None)
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run(common) => {
            let cfg = load(&common)?;
            Ok(exit_for(&execute(&common, &cfg)?))
        }
        Cmd::Hat(common) => {
            let cfg = match &common.config {
                Some(_) => load(&common)?,
                None => LoadedConfig::from_text(preset("mexican_hat").expect("built-in preset"), ".")?,
            };
            if !cfg.config.is_hat() {
                bail!("config {:?} is not a Mexican-hat scenario", cfg.config.scenario);
            }
            let outcome = execute(&common, &cfg)?;
            for run in &outcome.runs {
                if let Some(h) = &run.summary.hat {
                    println!(
                        "r_end {:.6}  max|psi| {:.3e}  phi gain {:.4} ({:.2} turns)  log rho {:.4e}",
                        h.r_end,
                        h.max_abs_psi,
                        h.phi_gain,
                        h.phi_gain / std::f64::consts::TAU,
                        h.log_rho_end
                    );
                }
            }
            Ok(exit_for(&outcome))
        }
        Cmd::ValidateLoss { common, loss } => {
            let name = match (loss, &common.config) {
                (Some(l), _) => l,
                (None, Some(_)) => load(&common)?.config.loss,
                (None, None) => bail!("give --loss or --config"),
            };
            let spec = LossSpec::by_name(&name)?;
            let report = validate_b3(&spec, &SampleGrid::default());
            for c in &report.clauses {
                println!(
                    "{:<8} {}  {}",
                    if c.passed { "pass" } else { "FAIL" },
                    c.clause,
                    c.detail
                );
            }
            if let Some(out) = &common.out {
                std::fs::create_dir_all(out)?;
                std::fs::write(
                    out.join(format!("validate_{name}.json")),
                    serde_json::to_string_pretty(&report)?,
                )?;
            }
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Cmd::KktReport { common, trajectory } => {
            let records = match trajectory_path(&common, trajectory.as_deref())? {
                Some(p) => read_trajectory(&p)?.1,
                None => {
                    let cfg = load(&common)?;
                    let outcome = execute(&common, &cfg)?;
                    outcome.runs.into_iter().next().map(|r| r.records).unwrap_or_default()
                }
            };
            println!("step,log_inv_loss,beta,epsilon,epsilon_bound,delta,delta_bound");
            let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6e}"));
            let mut n = 0;
            for r in &records {
                if let Some(c) = &r.kkt {
                    n += 1;
                    println!(
                        "{},{:.6},{:.9},{:.6e},{},{:.6e},{}",
                        r.step,
                        c.log_inv_loss,
                        c.beta,
                        c.epsilon,
                        fmt(c.epsilon_bound),
                        c.delta,
                        fmt(c.delta_bound)
                    );
                }
            }
            if n == 0 {
                eprintln!("no certificates in the trajectory (is the data separated?)");
            }
            let violated = records
                .iter()
                .filter_map(|r| r.kkt.as_ref())
                .any(|c| c.delta_bound_holds() == Some(false));
            Ok(if violated { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
        Cmd::Rates {
            common,
            trajectory,
            window_decades,
            bound_factor,
        } => {
            let (cfg, records) = match trajectory_path(&common, trajectory.as_deref())? {
                Some(p) => {
                    let (h, recs) = read_trajectory(&p)?;
                    (LoadedConfig::from_text(&h.config, ".")?, recs)
                }
                None => {
                    let cfg = load(&common)?;
                    let outcome = execute(&common, &cfg)?;
                    let recs = outcome.runs.into_iter().next().map(|r| r.records).unwrap_or_default();
                    (cfg, recs)
                }
            };
            let spec = LossSpec::by_name(&cfg.config.loss)?;
            let data = cfg.load_dataset(common.seed.unwrap_or(cfg.config.seeds[0]))?;
            let mspec = cfg.config.model.as_ref().context("rates need a model")?;
            let order = HomogeneousModel::build(mspec, data.input_dim())?.order();
            let n = data.len();
            let points: Vec<RatePoint> = records
                .iter()
                .filter_map(|r| {
                    r.log_t.map(|lt| RatePoint {
                        log_t: lt,
                        log_inv_loss: r.log_inv_loss,
                        rho: r.rho,
                    })
                })
                .collect();
            let Some(start) = t_min_index(&points, n) else {
                bail!("the trajectory never reaches log(1/L) >= 2 log N");
            };
            let diag = rate_ratios(&points, start, &spec, order, cfg.config.rates.min_decades)?;
            let v = bounded_ratio_verdict(&diag, window_decades, bound_factor);
            println!("log10_t,log_ratio_loss,log_ratio_rho");
            for s in &diag.samples {
                println!(
                    "{:.6},{:.6},{:.6}",
                    s.log_t / std::f64::consts::LN_10,
                    s.log_ratio_loss,
                    s.log_ratio_rho
                );
            }
            eprintln!(
                "span {:.2} decades; over the last {} decades: loss ratio factor {:.3}, rho ratio factor {:.3} -> {}",
                diag.span_decades,
                window_decades,
                v.factor_loss,
                v.factor_rho,
                if v.inconclusive {
                    "inconclusive"
                } else if v.pass {
                    "bounded"
                } else {
                    "NOT bounded"
                }
            );
            Ok(if v.pass || v.inconclusive {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
    }
}
