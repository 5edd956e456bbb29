use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use metagrad::harness::{self, MetaTrainingConfig, MetaValidationConfig, MseSweepConfig, ToyOptimizeConfig};
use metagrad::mdp::TabularMdp;

#[derive(Parser)]
#[command(
    name = "metagrad",
    version,
    about = "Gradient-estimator experiments for N-sample MC objectives and tabular meta-RL"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Bias / variance / MSE of SF, LSF and PW on a 1-D Gaussian toy.
    ToyMse(Common),
    /// Adam ascent on the quadratic toy with each estimator.
    ToyOptimize(Common),
    /// Meta-gradient estimators against the enumeration oracle.
    MetarlValidate(Common),
    /// Meta-RL training curves with oracle gradient norms.
    MetarlTrain(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path. A manifest is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated sample sizes, e.g. 1,2,4,8.
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated estimator names.
    #[arg(long, value_delimiter = ',')]
    estimator: Option<Vec<String>>,
    /// MDP fixture: a JSON file or one of chain2, constant, wide4.
    #[arg(long)]
    mdp: Option<String>,
    /// Toy objective kind: identity, quadratic or constant-f.
    #[arg(long)]
    toy: Option<String>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

/// Errors that map to exit code 2.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(msg.into()))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    if let Some(e) = err.downcast_ref::<metagrad::Error>() {
        use metagrad::Error as E;
        return match e {
            _ if e.is_enumeration_cap() => 3,
            E::InvalidArgument(_)
            | E::UnknownEstimator(_)
            | E::DimensionMismatch { .. }
            | E::IndexOutOfRange { .. }
            | E::InvalidMdp(_)
            | E::Unsupported { .. }
            | E::Json(_) => 2,
            _ => 1,
        };
    }
    1
}

fn load_config(path: Option<&Path>) -> anyhow::Result<Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(config_err(format!("{}: top level must be a JSON object", path.display()))),
        Err(e) => Err(config_err(format!("{}: {e}", path.display()))),
    }
}

fn toy_value(kind: &str) -> anyhow::Result<Value> {
    match kind {
        "identity" | "quadratic" | "constant-f" => Ok(json!({ "kind": kind })),
        other => Err(config_err(format!(
            "unknown toy `{other}` (expected identity, quadratic or constant-f)"
        ))),
    }
}

/// Applies flag overrides to the raw config map.
fn merge_flags(cmd: &Cmd, c: &Common, map: &mut Map<String, Value>) -> anyhow::Result<()> {
    if let Some(s) = c.seed {
        map.insert("seed".into(), json!(s));
    }
    if let Some(g) = &c.n_grid {
        map.insert("n_grid".into(), json!(g));
    }
    if let Some(t) = c.trials {
        map.insert("trials".into(), json!(t));
    }
    if let Some(r) = c.repeats {
        map.insert("repeats".into(), json!(r));
    }
    if let Some(t) = c.iterations {
        map.insert("iterations".into(), json!(t));
    }
    if let Some(mdp) = &c.mdp {
        map.insert("mdp".into(), json!(mdp));
    }
    if let Some(t) = &c.toy {
        let sigma = map.get("toy").and_then(|v| v.get("sigma")).cloned();
        let mut v = toy_value(t)?;
        if let Some(s) = sigma {
            v["sigma"] = s;
        }
        map.insert("toy".into(), v);
    }
    if let Some(e) = &c.estimator {
        map.insert("estimators".into(), json!(e));
        if matches!(cmd, Cmd::MetarlTrain(_)) {
            if let Some(first) = e.first() {
                map.insert("estimator".into(), json!(first));
            }
        }
    }
    Ok(())
}

fn parse<T: serde::de::DeserializeOwned>(map: &Map<String, Value>) -> anyhow::Result<T> {
    serde_json::from_value(Value::Object(map.clone())).map_err(|e| config_err(e.to_string()))
}

fn load_mdp(map: &mut Map<String, Value>) -> anyhow::Result<(TabularMdp, String)> {
    let source = match map.remove("mdp") {
        None => "chain2".to_string(),
        Some(Value::String(s)) => s,
        Some(other) => return Err(config_err(format!("`mdp` must be a string, got {other}"))),
    };
    let mdp = match source.as_str() {
        "chain2" => TabularMdp::chain2(),
        "constant" => TabularMdp::constant_value(),
        "wide4" => TabularMdp::wide4(),
        path => TabularMdp::from_json_file(path).map_err(|e| match e {
            metagrad::Error::Io(io) => config_err(format!("cannot read MDP {path}: {io}")),
            other => anyhow::Error::new(other).context(format!("loading MDP {path}")),
        })?,
    };
    Ok((mdp, source))
}

/// Writes to a sibling temporary file and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().ok_or_else(|| anyhow!("output path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn git_describe() -> Option<String> {
    let out = Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    seed: u64,
    config: Value,
    config_sha256: String,
    git_describe: Option<String>,
    version: &'static str,
    timestamp: String,
    wall_time_s: f64,
    outputs: Vec<String>,
    cell_wall_time_s: Option<Vec<f64>>,
}

struct RunOutput {
    seed: u64,
    config: Value,
    files: Vec<(PathBuf, String)>,
    cell_times: Option<Vec<f64>>,
}

fn run(cmd: &Cmd) -> anyhow::Result<()> {
    let (name, c) = match cmd {
        Cmd::ToyMse(c) => ("toy-mse", c),
        Cmd::ToyOptimize(c) => ("toy-optimize", c),
        Cmd::MetarlValidate(c) => ("metarl-validate", c),
        Cmd::MetarlTrain(c) => ("metarl-train", c),
    };
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(config_err("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut map = load_config(c.config.as_deref())?;
    merge_flags(cmd, c, &mut map)?;
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from(format!("{name}.csv")));
    let start = Instant::now();

    let result = match cmd {
        Cmd::ToyMse(_) => {
            let cfg: MseSweepConfig = parse(&map)?;
            cfg.validate()?;
            let rows = harness::run_mse_sweep(&cfg)?;
            RunOutput {
                seed: cfg.seed,
                config: serde_json::to_value(&cfg)?,
                cell_times: Some(rows.iter().map(|r| r.wall_time.as_secs_f64()).collect()),
                files: vec![(out.clone(), harness::to_csv_string(&rows)?)],
            }
        }
        Cmd::ToyOptimize(_) => {
            let cfg: ToyOptimizeConfig = parse(&map)?;
            cfg.validate()?;
            let summary = harness::run_toy_optimization_grid(&cfg)?;
            RunOutput {
                seed: cfg.seed,
                config: serde_json::to_value(&cfg)?,
                cell_times: None,
                files: vec![
                    (out.clone(), harness::to_csv_string(&summary.rows)?),
                    (sibling(&out, ".curve.csv"), harness::to_csv_string(&summary.curves)?),
                ],
            }
        }
        Cmd::MetarlValidate(_) => {
            let (mdp, mdp_name) = load_mdp(&mut map)?;
            let cfg: MetaValidationConfig = parse(&map)?;
            cfg.validate()?;
            let rows = harness::run_metarl_validation(&mdp, &cfg)?;
            let mut config = serde_json::to_value(&cfg)?;
            config["mdp"] = json!(mdp_name);
            RunOutput {
                seed: cfg.seed,
                config,
                cell_times: None,
                files: vec![(out.clone(), harness::to_csv_string(&rows)?)],
            }
        }
        Cmd::MetarlTrain(_) => {
            let (mdp, mdp_name) = load_mdp(&mut map)?;
            let cfg: MetaTrainingConfig = parse(&map)?;
            cfg.validate()?;
            let report = harness::run_metarl_training(&mdp, &cfg)?;
            let mut config = serde_json::to_value(&cfg)?;
            config["mdp"] = json!(mdp_name);
            RunOutput {
                seed: cfg.seed,
                config,
                cell_times: None,
                files: vec![(out.clone(), harness::to_csv_string(&report.rows)?)],
            }
        }
    };

    for (path, body) in &result.files {
        write_atomic(path, body.as_bytes())?;
    }
    let canonical = serde_json::to_string(&result.config)?;
    let manifest = Manifest {
        experiment: name,
        seed: result.seed,
        config_sha256: hex::encode(Sha256::digest(canonical.as_bytes())),
        config: result.config,
        git_describe: git_describe(),
        version: env!("CARGO_PKG_VERSION"),
        timestamp: chrono::Utc::now().to_rfc3339(),
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs: result.files.iter().map(|(p, _)| p.display().to_string()).collect(),
        cell_wall_time_s: result.cell_times,
    };
    write_atomic(
        &sibling(&out, ".manifest.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    eprintln!("{name}: wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
