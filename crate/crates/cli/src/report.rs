//! Comma-separated report tables.

use std::collections::BTreeMap;
use std::path::Path;

use cssbo_core::code::CssCode;
use cssbo_core::decode::DecoderConfig;
use cssbo_core::evaluate::{estimate_ler, f2, fit_pseudo_model, lerpq, objective, pseudo_t, ShotExecutor};
use cssbo_core::noise::{derive_seed, DepolarizingChannel};
use cssbo_core::optimizer::{EvalRecord, RunTrace};
use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::error::{CliError, Result};

/// One operating point: a code at one physical error rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub n: usize,
    pub k: usize,
    pub rate: f64,
    pub p: f64,
    pub p_l: f64,
    pub std_error: f64,
    pub p_pq: f64,
    pub t_hat: Option<f64>,
    pub t_hat_over_n: Option<f64>,
    pub objective: Option<f64>,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("rows serialize"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(CliError::io(path))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

/// Logical error rate of one code over a grid of physical error rates.
/// Pseudo-distance and objective columns are left empty outside `0 < p < 1/2`.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    code: &CssCode,
    label: &str,
    grid: &[f64],
    shots: u64,
    decoder: &DecoderConfig,
    lambda: f64,
    seed: u64,
    exec: &dyn ShotExecutor,
) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::with_capacity(grid.len());
    for (i, &p) in grid.iter().enumerate() {
        let ch = DepolarizingChannel::new(p)?;
        let ler = estimate_ler(code, &ch, shots, derive_seed(seed, i as u64), decoder, exec)?;
        let (t_hat, obj) = if p > 0.0 && p < 0.5 {
            let model = fit_pseudo_model(code.n(), p)?;
            let t = pseudo_t(&model, ler.floored().0)?.t_hat;
            (Some(t), Some(objective(code.n(), code.k(), t, lambda)))
        } else {
            (None, None)
        };
        rows.push(ReportRow {
            label: label.into(),
            n: code.n(),
            k: code.k(),
            rate: code.rate(),
            p,
            p_l: ler.p_l,
            std_error: ler.std_error,
            p_pq: lerpq(ler.p_l, code.k())?,
            t_hat,
            t_hat_over_n: t_hat.map(|t| t / code.n() as f64),
            objective: obj,
        });
    }
    Ok(rows)
}

/// Row for a scored trace record; `None` for invalid or failed evaluations.
pub fn operating_point(label: &str, r: &EvalRecord) -> Option<ReportRow> {
    let ler = r.eval.ler?;
    let t = r.eval.t_hat?;
    let n = r.eval.n;
    let k = r.eval.k;
    Some(ReportRow {
        label: label.into(),
        n,
        k,
        rate: k as f64 / n as f64,
        p: ler.physical_p,
        p_l: ler.p_l,
        std_error: ler.std_error,
        p_pq: lerpq(ler.p_l, k).ok()?,
        t_hat: Some(t),
        t_hat_over_n: Some(t / n as f64),
        objective: Some(r.eval.objective),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub run: String,
    pub method: Method,
    pub seed: u64,
    pub index: u64,
    pub objective: f64,
    pub best_so_far: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSummaryRow {
    pub method: Method,
    pub index: usize,
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation across runs (0 for a single run).
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub n: usize,
    pub t: usize,
    pub t_over_n: f64,
    pub rate: f64,
}

/// Hamming-bound frontier `R = 1 − f2(n, t)` at integer `t` while `R ≥ 0`.
pub fn frontier(n: usize) -> Vec<FrontierRow> {
    (0..=n)
        .map(|t| FrontierRow { n, t, t_over_n: t as f64 / n as f64, rate: 1.0 - f2(n, t) })
        .take_while(|r| r.rate >= 0.0)
        .collect()
}

pub struct LoadedRun {
    pub label: String,
    pub method: Method,
    pub seed: u64,
    pub trace: RunTrace,
}

pub fn curves(runs: &[LoadedRun]) -> (Vec<CurveRow>, Vec<CurveSummaryRow>) {
    let mut rows = Vec::new();
    let mut grouped: BTreeMap<(u8, usize), (Method, Vec<f64>)> = BTreeMap::new();
    for run in runs {
        for (r, &b) in run.trace.records.iter().zip(&run.trace.best_so_far) {
            rows.push(CurveRow { run: run.label.clone(), method: run.method, seed: run.seed, index: r.index, objective: r.eval.objective, best_so_far: b });
            grouped.entry((run.method as u8, r.index as usize)).or_insert_with(|| (run.method, Vec::new())).1.push(b);
        }
    }
    let summary = grouped
        .into_iter()
        .map(|((_, index), (method, v))| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = if v.len() > 1 { (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
            CurveSummaryRow { method, index, runs: v.len(), mean, std }
        })
        .collect();
    (rows, summary)
}

/// Writes every report table for `runs` into `out`; returns the file names.
pub fn write_report(runs: &[LoadedRun], out: &Path) -> Result<Vec<&'static str>> {
    std::fs::create_dir_all(out).map_err(CliError::io(out))?;
    let (rows, summary) = curves(runs);
    write_csv(&out.join("best_so_far.csv"), &rows)?;
    write_csv(&out.join("best_so_far_summary.csv"), &summary)?;
    let points: Vec<ReportRow> =
        runs.iter().flat_map(|run| run.trace.records.iter().filter_map(|r| operating_point(&format!("{}:{}", run.label, r.index), r))).collect();
    write_csv(&out.join("operating_points.csv"), &points)?;
    let mut ns: Vec<usize> = runs.iter().flat_map(|r| r.trace.records.iter().map(|x| x.eval.n)).collect();
    ns.sort_unstable();
    ns.dedup();
    let front: Vec<FrontierRow> = ns.into_iter().flat_map(frontier).collect();
    write_csv(&out.join("hamming_frontier.csv"), &front)?;
    Ok(vec!["best_so_far.csv", "best_so_far_summary.csv", "operating_points.csv", "hamming_frontier.csv"])
}

#[cfg(test)]
mod tests {
    use super::*;
    use cssbo_core::code::{cyclic_repetition, hgp, HgpParams};
    use cssbo_core::evaluate::{f2_interp, Sequential};

    #[test]
    fn frontier_is_on_the_bound() {
        for n in [36, 144] {
            let rows = frontier(n);
            assert_eq!(rows[0].rate, 1.0);
            for r in &rows {
                assert!((r.rate + f2_interp(n, r.t as f64) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sweep_rows() {
        let h = cyclic_repetition(3);
        let code = hgp(&HgpParams::new(h.clone(), h).unwrap()).valid().unwrap();
        let rows = sweep(&code, "toric", &[0.0, 0.01, 0.1], 400, &DecoderConfig::default(), 1.0, 1, &Sequential).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!((rows[0].p_l, rows[0].p_pq), (0.0, 0.0));
        assert!(rows[0].t_hat.is_none());
        assert!(rows[1].t_hat.is_some() && rows[1].p_l < rows[2].p_l);
    }
}
