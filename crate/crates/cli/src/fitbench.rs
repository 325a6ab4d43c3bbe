//! Surrogate quality on held-out codes: random train/test splits of a
//! dataset of BB codes with Monte Carlo log error rates.

use std::collections::BTreeSet;
use std::time::Instant;

use cssbo_core::code::CssCode;
use cssbo_core::decode::DecoderConfig;
use cssbo_core::embedding::Variant;
use cssbo_core::evaluate::{estimate_ler, LerEstimate, ObjectiveConfig, ShotExecutor};
use cssbo_core::gf2::BitVector;
use cssbo_core::noise::{derive_seed, DepolarizingChannel};
use cssbo_core::optimizer::{bitstring, SearchSpace};
use cssbo_core::surrogate::{metrics, Inputs, Metrics, Surrogate, SurrogateConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

const DATA_STREAM: u64 = 0x4441_5441;
const SPLIT_STREAM: u64 = 0x5350_4c54;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    #[serde(with = "bitstring")]
    pub bits: BitVector,
    pub n: usize,
    pub k: usize,
    pub ler: LerEstimate,
    /// `ln p_L` with zero failures floored at `1/(2N)`.
    pub log_p_l: f64,
}

pub struct Dataset {
    pub codes: Vec<CssCode>,
    pub points: Vec<DataPoint>,
}

/// Draws `count` distinct valid codes uniformly and estimates their error rates.
pub fn build_dataset(space: &SearchSpace, count: usize, obj: &ObjectiveConfig, decoder: &DecoderConfig, seed: u64, exec: &dyn ShotExecutor) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, DATA_STREAM));
    let ch = DepolarizingChannel::new(obj.physical_p)?;
    let mut seen = BTreeSet::new();
    let mut codes = Vec::with_capacity(count);
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let bits = space.random_valid(&mut rng, &seen).ok_or_else(|| CliError::Config("search space has too few valid codes".into()))?;
        seen.insert(bits.clone());
        let code = space.candidate(&bits).valid().expect("sampled point is valid");
        let ler = estimate_ler(&code, &ch, obj.shots, derive_seed(derive_seed(seed, DATA_STREAM), i as u64), decoder, exec)?;
        points.push(DataPoint { bits, n: code.n(), k: code.k(), ler, log_p_l: ler.floored().0.ln() });
        codes.push(code);
    }
    Ok(Dataset { codes, points })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub variant: Variant,
    pub split: usize,
    pub train: usize,
    pub test: usize,
    pub mse: f64,
    pub r2: f64,
    pub avg_nll: f64,
    pub log_marginal_likelihood: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub splits: usize,
    pub mean_mse: f64,
    pub mean_r2: f64,
    pub mean_avg_nll: f64,
}

/// Train/test index split `s`; identical for every variant.
pub fn split_indices(len: usize, train_fraction: f64, seed: u64, s: usize) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, SPLIT_STREAM), s as u64)));
    let cut = ((len as f64 * train_fraction).round() as usize).clamp(2, len.saturating_sub(2));
    let test = idx.split_off(cut);
    (idx, test)
}

/// Fits one surrogate per split on the training codes and scores the test
/// codes in `ln p_L` units (predictive variance includes the noise term).
pub fn evaluate_variant(ds: &Dataset, cfg: &SurrogateConfig, splits: usize, train_fraction: f64, seed: u64) -> Result<Vec<SplitResult>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(splits);
    for s in 0..splits {
        let start = Instant::now();
        let (train, test) = split_indices(ds.codes.len(), train_fraction, seed, s);
        let codes: Vec<&CssCode> = train.iter().map(|&i| &ds.codes[i]).collect();
        let y: Vec<f64> = train.iter().map(|&i| ds.points[i].log_p_l).collect();
        let mut model = Surrogate::new(*cfg, derive_seed(seed, s as u64))?;
        let rep = model.fit(Inputs::Codes(&codes), &y, cfg.gp.init_steps)?;
        let st = model.standardization();
        let (mut mu, mut var, mut truth) = (Vec::new(), Vec::new(), Vec::new());
        for &i in &test {
            let p = model.predict_code(&ds.codes[i])?;
            mu.push(st.inverse(p.mean));
            var.push(st.scale * st.scale * p.predictive_variance());
            truth.push(ds.points[i].log_p_l);
        }
        let Metrics { mse, r2, avg_nll } = metrics(&mu, &var, &truth)?;
        out.push(SplitResult {
            variant: cfg.embedding.variant,
            split: s,
            train: train.len(),
            test: test.len(),
            mse,
            r2,
            avg_nll,
            log_marginal_likelihood: *rep.history.last().expect("history starts with the initial value"),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}

pub fn summarize(results: &[SplitResult]) -> Vec<VariantSummary> {
    let mut variants: Vec<Variant> = Vec::new();
    for r in results {
        if !variants.contains(&r.variant) {
            variants.push(r.variant);
        }
    }
    variants
        .into_iter()
        .map(|v| {
            let rs: Vec<&SplitResult> = results.iter().filter(|r| r.variant == v).collect();
            let n = rs.len() as f64;
            VariantSummary {
                variant: v,
                splits: rs.len(),
                mean_mse: rs.iter().map(|r| r.mse).sum::<f64>() / n,
                mean_r2: rs.iter().map(|r| r.r2).sum::<f64>() / n,
                mean_avg_nll: rs.iter().map(|r| r.avg_nll).sum::<f64>() / n,
            }
        })
        .collect()
}
