//! Output files: trajectory JSONL, plot CSVs, and summary JSON.
//!
//! Every file starts with the verbatim config: the JSONL header line carries it
//! as a string, CSVs carry it as `# ` comment lines.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::LoadedConfig;
use super::scenario::{run_seed, HatRow, RunSummary, SeedRun, TrajectoryRecord};
use crate::error::{Error, Result};

/// First line of every trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub scenario: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: String,
    pub version: String,
    /// Seconds since the Unix epoch; the only field that differs between reruns.
    pub timestamp: u64,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: TrajectoryHeader,
}

/// CSV bodies keyed by file name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlotData {
    pub files: Vec<(String, String)>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-figure CSVs: `loss.csv` (step, log10(1/𝓛)), `margins.csv` (step, γ̄, γ̃, γ̂)
/// and `alpha.csv` (step, α).
pub fn emit_plot_data(records: &[TrajectoryRecord]) -> PlotData {
    let mut loss = String::from("step,log10_inv_loss\n");
    let mut margins = String::from("step,bar_gamma,tilde_gamma,gamma_hat\n");
    let mut alpha = String::from("step,alpha\n");
    for r in records {
        let _ = writeln!(loss, "{},{}", r.step, r.log_inv_loss / std::f64::consts::LN_10);
        let _ = writeln!(
            margins,
            "{},{},{},{}",
            r.step,
            r.bar_gamma,
            opt(r.tilde_gamma),
            opt(r.gamma_hat)
        );
        if let Some(a) = r.alpha {
            let _ = writeln!(alpha, "{},{}", r.step, a);
        }
    }
    PlotData {
        files: vec![
            ("loss.csv".into(), loss),
            ("margins.csv".into(), margins),
            ("alpha.csv".into(), alpha),
        ],
    }
}

fn hat_csv(rows: &[HatRow]) -> String {
    let mut s = String::from("sigma,r,phi,psi,log_rho\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.sigma, r.r, r.phi, r.psi, r.log_rho);
    }
    s
}

fn ratios_csv(summary: &RunSummary) -> Option<String> {
    let rates = summary.rates.as_ref()?;
    let mut s = String::from("log10_t,log_ratio_loss,log_ratio_rho\n");
    for p in &rates.diagnostic.samples {
        let _ = writeln!(
            s,
            "{},{},{}",
            p.log_t / std::f64::consts::LN_10,
            p.log_ratio_loss,
            p.log_ratio_rho
        );
    }
    Some(s)
}

fn kkt_csv(records: &[TrajectoryRecord]) -> Option<String> {
    let mut s = String::from("step,log_inv_loss,beta,epsilon,epsilon_bound,delta,delta_bound\n");
    let mut any = false;
    for r in records {
        if let Some(c) = &r.kkt {
            any = true;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.step,
                c.log_inv_loss,
                c.beta,
                c.epsilon,
                opt(c.epsilon_bound),
                c.delta,
                opt(c.delta_bound)
            );
        }
    }
    any.then_some(s)
}

fn commented(config: &str, body: &str) -> String {
    let mut s = String::new();
    for line in config.lines() {
        let _ = writeln!(s, "# {line}");
    }
    s.push_str(body);
    s
}

/// Writes the artifacts of one seed into `dir`.
pub fn write_artifacts(dir: &Path, cfg: &LoadedConfig, run: &SeedRun) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let header = TrajectoryHeader {
        scenario: cfg.config.scenario.clone(),
        seed: run.seed,
        config_hash: cfg.hash.clone(),
        config: cfg.text.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    let mut w = BufWriter::new(std::fs::File::create(dir.join("trajectory.jsonl"))?);
    serde_json::to_writer(&mut w, &HeaderLine { header })?;
    w.write_all(b"\n")?;
    for r in &run.records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;

    let mut files = if cfg.config.is_hat() {
        vec![("hat.csv".to_string(), hat_csv(&run.hat_rows))]
    } else {
        emit_plot_data(&run.records).files
    };
    files.extend(ratios_csv(&run.summary).map(|s| ("ratios.csv".to_string(), s)));
    files.extend(kkt_csv(&run.records).map(|s| ("kkt.csv".to_string(), s)));
    for (name, body) in files {
        std::fs::write(dir.join(name), commented(&cfg.text, &body))?;
    }
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&run.summary)?)?;
    Ok(())
}

/// Reads a trajectory file back.
pub fn read_trajectory(path: &Path) -> Result<(TrajectoryHeader, Vec<TrajectoryRecord>)> {
    let mut lines = BufReader::new(std::fs::File::open(path)?).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{} is empty", path.display())))??;
    let header: HeaderLine = serde_json::from_str(&first)?;
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str(&line)?);
        }
    }
    Ok((header.header, records))
}

/// Results of all seeds of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub dir: Option<PathBuf>,
    pub runs: Vec<SeedRun>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.runs.iter().all(|r| r.summary.passed())
    }

    pub fn failures(&self) -> Vec<(u64, String)> {
        self.runs
            .iter()
            .flat_map(|r| r.summary.failures.iter().map(move |f| (r.seed, f.clone())))
            .collect()
    }
}

/// Runs every seed (in parallel) and, if `out` is given, writes
/// `out/<scenario>/seed_<s>/…` plus an aggregate `out/<scenario>/summary.json`.
pub fn run_scenario(cfg: &LoadedConfig, seeds: &[u64], out: Option<&Path>) -> Result<RunOutcome> {
    let results: Vec<Result<SeedRun>> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds.iter().map(|&seed| s.spawn(move || run_seed(cfg, seed))).collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Config("worker thread panicked".into())))
            })
            .collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let dir = match out {
        Some(base) => {
            let dir = base.join(&cfg.config.scenario);
            for run in &runs {
                write_artifacts(&dir.join(format!("seed_{}", run.seed)), cfg, run)?;
            }
            let agg: Vec<_> = runs
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "seed": r.seed,
                        "passed": r.summary.passed(),
                        "failures": r.summary.failures,
                    })
                })
                .collect();
            let all = serde_json::json!({
                "scenario": cfg.config.scenario,
                "config_hash": cfg.hash,
                "passed": runs.iter().all(|r| r.summary.passed()),
                "seeds": agg,
            });
            std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&all)?)?;
            Some(dir)
        }
        None => None,
    };
    Ok(RunOutcome { dir, runs })
}
