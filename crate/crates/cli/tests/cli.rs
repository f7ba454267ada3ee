use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"scenario = "small"
loss = "exp"
seeds = [1]
eval_every = 10

[model]
family = "linear"

[data]
source = "synthetic"

[data.generator]
family = "two_gaussians"
n = 8
dim = 2

[optimizer]
kind = "flow"
step_tol = 1e-3
target_log_inv_loss = 20.0

[constants]
samples = 200
hessian_samples = 10

[kkt]
every = 1
"#;

fn homomargin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_homomargin"))
        .args(args)
        .current_dir(cwd)
        .env_remove("HOMOMARGIN_OUT")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_loss_passes_for_builtin_losses() {
    let dir = tempfile::tempdir().unwrap();
    for loss in ["exp", "logistic"] {
        let o = homomargin(&["validate-loss", "--loss", loss, "--out", "."], dir.path());
        assert!(o.status.success(), "{loss}: {}", stdout(&o));
        assert!(!stdout(&o).contains("FAIL"));
        assert!(dir.path().join(format!("validate_{loss}.json")).exists());
    }
}

#[test]
fn unknown_loss_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = homomargin(&["validate-loss", "--loss", "hinge"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn hat_writes_only_the_hat_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = homomargin(&["hat", "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
    let seed = dir.path().join("out/mexican_hat/seed_0");
    let csv = std::fs::read_to_string(seed.join("hat.csv")).unwrap();
    assert!(csv.starts_with("# "));
    assert!(csv.contains("\nsigma,r,phi,psi,log_rho\n"));
    assert!(!seed.join("loss.csv").exists());
}

#[test]
fn run_then_rates_and_kkt_report_from_the_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let o = homomargin(&["run", "--config", "small.toml", "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
    let traj = dir.path().join("out/small/seed_1/trajectory.jsonl");
    let first = std::fs::read_to_string(&traj)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert!(first.starts_with("{\"header\":"));
    assert!(first.contains(r#"scenario = \"small\""#));

    let t = traj.to_str().unwrap();
    let k = homomargin(&["kkt-report", "--trajectory", t], dir.path());
    assert!(k.status.success());
    let out = stdout(&k);
    assert!(out.starts_with("step,log_inv_loss,beta,epsilon,epsilon_bound,delta,delta_bound\n"));
    assert!(out.lines().count() > 1);

    let r = homomargin(&["rates", "--trajectory", t], dir.path());
    assert!(r.status.success());
    assert!(stdout(&r).starts_with("log10_t,log_ratio_loss,log_ratio_rho\n"));
}

#[test]
fn seed_flag_overrides_config_seeds() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let o = homomargin(
        &["run", "--config", "small.toml", "--seed", "5", "--out", "out"],
        dir.path(),
    );
    assert!(o.status.success());
    assert!(dir.path().join("out/small/seed_5/summary.json").exists());
    assert!(!dir.path().join("out/small/seed_1").exists());
}

#[test]
fn env_var_sets_the_default_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_homomargin"))
        .args(["run", "--config", "small.toml"])
        .current_dir(dir.path())
        .env("HOMOMARGIN_OUT", "envout")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("envout/small/summary.json").exists());
}

#[test]
fn failed_monitor_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n[tolerances]\nweight_growth_fraction = 1.5\n");
    std::fs::write(dir.path().join("bad.toml"), text).unwrap();
    let o = homomargin(&["run", "--config", "bad.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("monitor weight_growth failed"));
}

#[test]
fn missing_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = homomargin(&["run"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--config"));
}
