//! Run directories: manifest, line-delimited trace, best code and checkpoint.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use cssbo_core::evaluate::ShotExecutor;
use cssbo_core::gf2::BitVector;
use cssbo_core::optimizer::{bo_run, ea_run, rs_run, CodeEvaluator, EvalRecord, Evaluation, Evaluator, Observer, RunTrace, SearchSpace, TargetMap};
use cssbo_core::surrogate::{FitReport, Surrogate};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::codefile;
use crate::config::{Method, RunConfig};
use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const TRACE: &str = "trace.jsonl";
pub const BEST_CODE: &str = "best_code.txt";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const RUN_FORMAT: &str = "cssbo-run v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: String,
    pub command: String,
    pub method: Method,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn new(cfg: &RunConfig, seed: u64) -> Self {
        Self {
            format: RUN_FORMAT.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: "optimize".into(),
            method: cfg.optimizer.method,
            seed,
            config: cfg.fingerprint(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn config(&self) -> Result<RunConfig> {
        serde_json::from_value(self.config.clone()).map_err(|e| CliError::Config(format!("manifest config: {e}")))
    }
}

/// One trace line: the record plus wall-clock time, which is excluded from
/// determinism comparisons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    #[serde(flatten)]
    pub record: EvalRecord,
    pub elapsed_ms: u64,
}

/// Reads complete trace lines. A torn final line (no trailing newline or
/// unparsable) is dropped and the file truncated to the last good line.
pub fn read_trace(path: &Path, repair: bool) -> Result<Vec<TraceLine>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(CliError::Io { path: path.into(), source: e }),
    };
    let mut reader = BufReader::new(file);
    let mut lines = Vec::new();
    let mut good_bytes = 0u64;
    let mut buf = String::new();
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(CliError::io(path))?;
        if n == 0 {
            break;
        }
        let complete = buf.ends_with('\n');
        match serde_json::from_str::<TraceLine>(buf.trim_end()) {
            Ok(line) if complete => {
                if line.record.index != lines.len() as u64 {
                    return Err(CliError::Config(format!("{}: record {} out of order", path.display(), line.record.index)));
                }
                lines.push(line);
                good_bytes += n as u64;
            }
            _ => {
                let rest = reader.read_line(&mut String::new()).map_err(CliError::io(path))?;
                if complete && rest > 0 {
                    return Err(CliError::Config(format!("{}: corrupt record at line {}", path.display(), lines.len() + 1)));
                }
                break;
            }
        }
    }
    if repair {
        let f = OpenOptions::new().write(true).open(path).map_err(CliError::io(path))?;
        f.set_len(good_bytes).map_err(CliError::io(path))?;
    }
    Ok(lines)
}

/// Serves recorded evaluations during a resumed run and defers to the live
/// evaluator beyond them.
pub struct Replay<'a> {
    inner: &'a mut dyn Evaluator,
    cached: Vec<EvalRecord>,
    diverged: Option<u64>,
}

impl<'a> Replay<'a> {
    pub fn new(inner: &'a mut dyn Evaluator, cached: Vec<EvalRecord>) -> Self {
        Self { inner, cached, diverged: None }
    }
}

impl Evaluator for Replay<'_> {
    fn space(&self) -> SearchSpace {
        self.inner.space()
    }

    fn evaluate(&mut self, x: &BitVector, index: u64) -> Evaluation {
        match self.cached.get(index as usize) {
            Some(r) if &r.bits == x => r.eval.clone(),
            Some(_) => {
                self.diverged.get_or_insert(index);
                self.inner.evaluate(x, index)
            }
            None => self.inner.evaluate(x, index),
        }
    }

    fn target_map(&self) -> TargetMap {
        self.inner.target_map()
    }
}

/// Appends new records and refreshes the checkpoint after every model fit.
pub struct TraceWriter {
    file: File,
    path: PathBuf,
    checkpoint: PathBuf,
    skip: u64,
    start: Instant,
    offset_ms: u64,
}

impl Observer for TraceWriter {
    fn record(&mut self, r: &EvalRecord) -> cssbo_core::Result<()> {
        if r.index < self.skip {
            return Ok(());
        }
        let line = TraceLine { record: r.clone(), elapsed_ms: self.offset_ms + self.start.elapsed().as_millis() as u64 };
        let mut text = serde_json::to_string(&line).expect("records serialize");
        text.push('\n');
        self.file
            .write_all(text.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| cssbo_core::Error::Config(format!("{}: {e}", self.path.display())))
    }

    fn fitted(&mut self, _iteration: usize, s: &Surrogate, _rep: &FitReport) -> cssbo_core::Result<()> {
        checkpoint::save(&self.checkpoint, s).map_err(|e| cssbo_core::Error::Config(e.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub trace: RunTrace,
    pub resumed_from: usize,
}

/// Runs (or resumes) an optimization into `dir`.
pub fn optimize(cfg: &RunConfig, seed: u64, dir: &Path, resume: bool, exec: &dyn ShotExecutor) -> Result<RunSummary> {
    let space = cfg.space()?;
    let objective = cfg.objective()?;
    let manifest = Manifest::new(cfg, seed);
    let trace_path = dir.join(TRACE);
    let cached: Vec<TraceLine> = if resume {
        let old = Manifest::load(dir)?;
        if old.config != manifest.config || old.seed != seed || old.format != manifest.format {
            return Err(CliError::Config(format!("{} was produced by a different configuration or seed; refusing to resume", dir.display())));
        }
        read_trace(&trace_path, true)?
    } else {
        if dir.join(MANIFEST).exists() || trace_path.exists() {
            return Err(CliError::Config(format!("{} already holds a run; pass --resume to continue it", dir.display())));
        }
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(dir.join(MANIFEST), text + "\n").map_err(CliError::io(dir.join(MANIFEST)))?;
        Vec::new()
    };
    let resumed_from = cached.len();
    let offset_ms = cached.last().map_or(0, |l| l.elapsed_ms);
    let file = OpenOptions::new().create(true).append(true).open(&trace_path).map_err(CliError::io(&trace_path))?;
    let mut writer = TraceWriter { file, path: trace_path, checkpoint: dir.join(CHECKPOINT), skip: resumed_from as u64, start: Instant::now(), offset_ms };

    let mut live = CodeEvaluator::new(space, objective, cfg.decoder, seed, exec)?;
    let mut replay = Replay::new(&mut live, cached.into_iter().map(|l| l.record).collect());
    let trace = match cfg.optimizer.method {
        Method::Bo => {
            let out = bo_run(&mut replay, &cfg.bo(), seed, &mut writer)?;
            if let Some(s) = &out.surrogate {
                checkpoint::save(&dir.join(CHECKPOINT), s)?;
            }
            out.trace
        }
        Method::Ea => ea_run(&mut replay, &cfg.optimizer.ea, cfg.budget(), seed, &mut writer)?,
        Method::Rs => rs_run(&mut replay, cfg.budget(), seed, &mut writer)?,
    };
    if let Some(i) = replay.diverged {
        return Err(CliError::Core(cssbo_core::Error::Numerical(format!("resumed run diverged from the recorded trace at record {i}"))));
    }
    if let Some(best) = trace.best() {
        if let Some(code) = space.candidate(&best.bits).valid() {
            fs::write(dir.join(BEST_CODE), codefile::to_text(&code)).map_err(CliError::io(dir.join(BEST_CODE)))?;
        }
    }
    Ok(RunSummary { dir: dir.to_path_buf(), trace, resumed_from })
}

/// Loads a finished or partial run for reporting.
pub fn load_run(dir: &Path) -> Result<(Manifest, RunTrace)> {
    let manifest = Manifest::load(dir)?;
    let mut trace = RunTrace::default();
    for line in read_trace(&dir.join(TRACE), false)? {
        trace.push(line.record);
    }
    if trace.is_empty() {
        return Err(CliError::Config(format!("{}: trace is empty", dir.display())));
    }
    Ok((manifest, trace))
}
