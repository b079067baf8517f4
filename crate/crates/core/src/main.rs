use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mmlab::scenario::{run_check, run_scenario_file, RunOptions, SpaceSpec};

#[derive(Parser)]
#[command(name = "mmlab", version, about = "Transport distances and entropy inequalities on finite energy-measure spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment in a scenario file.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run one check and print its JSON report.
    Check {
        name: String,
        #[arg(long)]
        space: String,
        /// Space builder parameter, `key=value`.
        #[arg(long = "space-param", value_name = "KEY=VALUE")]
        space_params: Vec<String>,
        /// Check parameter, `key=value` with a TOML value.
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn split(kv: &str) -> Result<(&str, &str), String> {
    kv.split_once('=').map(|(k, v)| (k.trim(), v.trim())).ok_or_else(|| format!("expected KEY=VALUE, got '{kv}'"))
}

fn toml_value(v: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()))
}

fn check(name: &str, space: String, space_params: &[String], params: &[String], seed: u64) -> Result<bool, String> {
    let mut sp = BTreeMap::new();
    for kv in space_params {
        let (k, v) = split(kv)?;
        sp.insert(k.to_string(), v.parse::<f64>().map_err(|e| format!("space parameter '{k}': {e}"))?);
    }
    let mut p = BTreeMap::new();
    for kv in params {
        let (k, v) = split(kv)?;
        p.insert(k.to_string(), toml_value(v));
    }
    let report = run_check(name, &SpaceSpec { builder: space, params: sp }, &p, seed).map_err(|e| e.to_string())?;
    println!("{}", serde_json::to_string_pretty(&report.to_json()).map_err(|e| e.to_string())?);
    Ok(report.pass)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MMLAB_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, out, seed, jobs } => run_scenario_file(&scenario, &RunOptions { out_dir: out, seed, jobs })
            .map(|o| {
                for (id, r) in &o.reports {
                    eprintln!("{} {id} ({})", if r.pass { "PASS" } else { "FAIL" }, r.check);
                }
                if o.written.is_empty() {
                    print!("{}", String::from_utf8_lossy(&o.json_bytes));
                }
                o.pass
            })
            .map_err(|e| e.to_string()),
        Command::Check { name, space, space_params, params, seed } => check(&name, space, &space_params, &params, seed),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
