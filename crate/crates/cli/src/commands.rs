//! Subcommand implementations behind the `cssbo` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cssbo_core::code::Candidate;

use crate::codefile;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::exec::Threaded;
use crate::fitbench::{build_dataset, evaluate_variant, summarize};
use crate::report::{self, write_csv, write_jsonl, LoadedRun};
use crate::run::{self, Manifest};

#[derive(Debug, Parser)]
#[command(name = "cssbo", version, about = "Search for CSS quantum codes by Bayesian optimization")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Continue the run already present in the output directory.
    #[arg(long, global = true)]
    pub resume: bool,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Threads for Monte Carlo shots (results do not depend on it).
    #[arg(long, global = true, env = "CSSBO_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a code, check it and write its record.
    Construct,
    /// Logical error rate of one code over a grid of physical error rates.
    Sweep,
    /// Surrogate train/test evaluation on random codes.
    Fit,
    /// Run BO, EA or random search.
    Optimize,
    /// Tables and curves from one or more run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Construct => "construct",
            Command::Sweep => "sweep",
            Command::Fit => "fit",
            Command::Optimize => "optimize",
            Command::Report { .. } => "report",
        }
    }
}

/// Output directory: flag, then config, then `$CSSBO_OUT_ROOT/<name>`, then `runs/<name>`.
pub fn resolve_out(common: &Common, cfg: Option<&RunConfig>, name: &str) -> PathBuf {
    if let Some(o) = &common.out {
        return o.clone();
    }
    if let Some(o) = cfg.and_then(|c| c.out.clone()) {
        return o;
    }
    match std::env::var_os("CSSBO_OUT_ROOT") {
        Some(root) => PathBuf::from(root).join(name),
        None => PathBuf::from("runs").join(name),
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let path = common.config.as_ref().ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = common.seed {
        cfg.seed = Some(s);
    }
    Ok(cfg)
}

fn workers(common: &Common, cfg: &RunConfig) -> Threaded {
    Threaded::new(common.workers.or(cfg.workers).unwrap_or(1))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(CliError::io(path))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))
}

pub fn run(cli: &Cli) -> Result<()> {
    let common = &cli.common;
    match &cli.command {
        Command::Construct => construct(common),
        Command::Sweep => sweep(common),
        Command::Fit => fit(common),
        Command::Optimize => optimize(common),
        Command::Report { runs } => report(common, runs),
    }
}

fn construct(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let code = match cfg.code()?.build()? {
        Candidate::Valid(c) => c,
        Candidate::Invalid(r) => return Err(CliError::InvalidCode(format!("{r:?}"))),
    };
    code.check_invariants()?;
    println!("[[{}, {}]] rate {}", code.n(), code.k(), code.rate());
    println!("checks: hx {}x{}, hz {}x{}", code.hx().rows(), code.hx().cols(), code.hz().rows(), code.hz().cols());
    println!("invariants: hx hz^T = 0, k = n - rank hx - rank hz, lx lz^T = I: ok");
    let dir = resolve_out(common, Some(&cfg), Command::Construct.name());
    create_dir(&dir)?;
    let path = dir.join("code.txt");
    write(&path, &codefile::to_text(&code))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn sweep(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let seed = cfg.seed()?;
    let code = match cfg.code()?.build()? {
        Candidate::Valid(c) => c,
        Candidate::Invalid(r) => return Err(CliError::InvalidCode(format!("{r:?}"))),
    };
    let section = cfg.sweep.as_ref().ok_or_else(|| CliError::Config("missing [sweep] section".into()))?;
    if section.p.is_empty() {
        return Err(CliError::Config("sweep grid is empty".into()));
    }
    let shots = section.shots.unwrap_or(cfg.evaluation.shots);
    let label = format!("[[{},{}]]", code.n(), code.k());
    let rows = report::sweep(&code, &label, &section.p, shots, &cfg.decoder, cfg.evaluation.lambda, seed, &workers(common, &cfg))?;
    let dir = resolve_out(common, Some(&cfg), Command::Sweep.name());
    create_dir(&dir)?;
    write_csv(&dir.join("sweep.csv"), &rows)?;
    write_jsonl(&dir.join("sweep.jsonl"), &rows)?;
    println!("p,p_l,std_error,p_pq,t_hat");
    for r in &rows {
        println!("{},{},{},{},{}", r.p, r.p_l, r.std_error, r.p_pq, r.t_hat.map_or(String::new(), |t| t.to_string()));
    }
    println!("wrote {}", dir.join("sweep.csv").display());
    Ok(())
}

fn fit(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let seed = cfg.seed()?;
    let space = cfg.space()?;
    let obj = cfg.objective()?;
    let f = &cfg.fit;
    if f.codes < 4 || f.splits == 0 || !(f.train_fraction > 0.0 && f.train_fraction < 1.0) {
        return Err(CliError::Config("[fit] needs codes >= 4, splits >= 1 and 0 < train_fraction < 1".into()));
    }
    let ds = build_dataset(&space, f.codes, &obj, &cfg.decoder, seed, &workers(common, &cfg))?;
    let dir = resolve_out(common, Some(&cfg), Command::Fit.name());
    create_dir(&dir)?;
    write_jsonl(&dir.join("dataset.jsonl"), &ds.points)?;
    let mut results = Vec::new();
    for &v in &f.variants {
        let mut sc = cfg.surrogate;
        sc.embedding.variant = v;
        results.extend(evaluate_variant(&ds, &sc, f.splits, f.train_fraction, seed)?);
    }
    write_csv(&dir.join("fit_splits.csv"), &results)?;
    let summary = summarize(&results);
    write_csv(&dir.join("fit_summary.csv"), &summary)?;
    println!("variant,splits,mean_mse,mean_r2,mean_avg_nll");
    for s in &summary {
        println!("{:?},{},{},{},{}", s.variant, s.splits, s.mean_mse, s.mean_r2, s.mean_avg_nll);
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn optimize(common: &Common) -> Result<()> {
    let mut cfg = match (&common.config, common.resume) {
        (None, true) => {
            let dir = common.out.clone().ok_or_else(|| CliError::Config("--resume without --config needs --out".into()))?;
            Manifest::load(&dir)?.config()?
        }
        _ => load_config(common)?,
    };
    if let Some(s) = common.seed {
        cfg.seed = Some(s);
    }
    let seed = cfg.seed()?;
    let dir = resolve_out(common, Some(&cfg), &format!("optimize-{}-seed{seed}", cfg.optimizer.method.name()));
    let s = run::optimize(&cfg, seed, &dir, common.resume, &workers(common, &cfg))?;
    let best = s.trace.best().expect("runs evaluate at least one point");
    if s.resumed_from > 0 {
        println!("resumed after {} recorded evaluations", s.resumed_from);
    }
    println!("{} evaluations, best objective {} at record {} (n {}, k {})", s.trace.len(), best.eval.objective, best.index, best.eval.n, best.eval.k);
    println!("wrote {}", dir.display());
    Ok(())
}

fn report(common: &Common, dirs: &[PathBuf]) -> Result<()> {
    let mut runs = Vec::new();
    for d in dirs {
        let (m, trace) = run::load_run(d)?;
        let label = d.file_name().map_or_else(|| d.display().to_string(), |n| n.to_string_lossy().into_owned());
        runs.push(LoadedRun { label, method: m.method, seed: m.seed, trace });
    }
    let out = resolve_out(common, None, Command::Report { runs: Vec::new() }.name());
    for f in report::write_report(&runs, &out)? {
        println!("wrote {}", out.join(f).display());
    }
    Ok(())
}
