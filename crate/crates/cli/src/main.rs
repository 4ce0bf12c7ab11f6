use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use cflhkd_core::sim::{self, Method, RunSummary, SimConfig};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "cflhkd", version, about = "Hierarchical clustered federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a configuration once per value of one setting.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dotted setting name, e.g. `refine.lambda0` or `fdc.gamma`.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Seeds to repeat each value with; the config seed when omitted.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, default_value = "sweep-out")]
        out: PathBuf,
    },
    /// Run several configurations and print their headline numbers side by side.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default configuration.
    DefaultConfig,
}

fn load(path: &Path) -> Result<SimConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(SimConfig::from_toml_str(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

/// One summary row per (label, seed) pair.
struct Row {
    label: String,
    summary: RunSummary,
}

const TABLE_HEADER: &str = "label,method,seed,final_global_acc,final_mean_cluster_acc,final_clusters,comm_client_edge_bytes,comm_edge_cloud_bytes,drift_drop_pp,drift_recovery_rounds";

fn table_line(r: &Row) -> String {
    let s = &r.summary;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.label,
        s.method,
        s.seed,
        opt(s.final_global_acc),
        opt(s.final_mean_cluster_acc),
        s.final_clusters.map(|k| k.to_string()).unwrap_or_default(),
        s.comm_client_edge_bytes,
        s.comm_edge_cloud_bytes,
        opt(s.drift.map(|d| d.drop_pp)),
        s.drift.and_then(|d| d.recovery_rounds).map(|r| r.to_string()).unwrap_or_default(),
    )
}

fn print_rows(rows: &[Row]) {
    println!("{:<28} {:<11} {:>5} {:>10} {:>12} {:>9}", "label", "method", "seed", "global", "mean_cluster", "clusters");
    for r in rows {
        let s = &r.summary;
        println!(
            "{:<28} {:<11} {:>5} {:>10} {:>12} {:>9}",
            r.label,
            s.method,
            s.seed,
            fmt_opt(s.final_global_acc),
            fmt_opt(s.final_mean_cluster_acc),
            s.final_clusters.map(|k| k.to_string()).unwrap_or_else(|| "-".into())
        );
    }
}

fn write_table(rows: &[Row], path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "{TABLE_HEADER}")?;
    for r in rows {
        writeln!(f, "{}", table_line(r))?;
    }
    Ok(())
}

fn seeds_or(seeds: &[u64], cfg: &SimConfig) -> Vec<u64> {
    if seeds.is_empty() {
        vec![cfg.seed]
    } else {
        seeds.to_vec()
    }
}

fn run_jobs(jobs: Vec<(String, SimConfig, Option<PathBuf>)>) -> Result<Vec<Row>> {
    jobs.into_par_iter()
        .map(|(label, cfg, dir)| {
            let artifacts = sim::run(&cfg).with_context(|| format!("running {label} seed {}", cfg.seed))?;
            if let Some(dir) = dir {
                sim::write_outputs(&artifacts, &dir)?;
            }
            Ok(Row { label, summary: RunSummary::from_artifacts(&artifacts) })
        })
        .collect()
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, method, out } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = method {
                cfg.method = m;
            }
            cfg.validate()?;
            let start = Instant::now();
            let artifacts = sim::run(&cfg)?;
            sim::write_outputs(&artifacts, &out)?;
            let summary = RunSummary::from_artifacts(&artifacts);
            eprintln!("finished {} rounds in {:.2?}", cfg.rounds, start.elapsed());
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Sweep { config, param, values, seeds, out } => {
            let base = load(&config)?;
            let mut jobs = Vec::new();
            for v in &values {
                let cfg = base.with_param(&param, v)?;
                for s in seeds_or(&seeds, &base) {
                    let run_cfg = SimConfig { seed: s, ..cfg.clone() };
                    let dir = out.join(format!("{param}={v}")).join(format!("seed{s}"));
                    jobs.push((format!("{param}={v}"), run_cfg, Some(dir)));
                }
            }
            let rows = run_jobs(jobs)?;
            fs::create_dir_all(&out)?;
            write_table(&rows, &out.join("sweep.csv"))?;
            print_rows(&rows);
        }
        Command::Compare { configs, seeds, out } => {
            let mut jobs = Vec::new();
            for path in &configs {
                let cfg = load(path)?;
                let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                for s in seeds_or(&seeds, &cfg) {
                    let dir = out.as_ref().map(|o| o.join(&label).join(format!("seed{s}")));
                    jobs.push((label.clone(), SimConfig { seed: s, ..cfg.clone() }, dir));
                }
            }
            if jobs.is_empty() {
                bail!("nothing to compare");
            }
            let rows = run_jobs(jobs)?;
            if let Some(o) = &out {
                fs::create_dir_all(o)?;
                write_table(&rows, &o.join("compare.csv"))?;
            }
            print_rows(&rows);
        }
        Command::DefaultConfig => {
            print!("{}", SimConfig::default().to_toml_string()?);
        }
    }
    Ok(())
}
