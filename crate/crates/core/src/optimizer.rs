//! Bayesian optimization over BB search vectors, with evolutionary and
//! random-search baselines sharing one evaluator interface.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::code::{bb_from_bits, BbParams, Candidate, CssCode, InvalidReason};
use crate::decode::DecoderConfig;
use crate::dense::Tensor;
use crate::error::{Error, Result};
use crate::evaluate::{estimate_ler, fit_pseudo_model, objective_moments, score, LerEstimate, ObjectiveConfig, PseudoDistanceModel, ShotExecutor};
use crate::gf2::BitVector;
use crate::noise::{derive_seed, DepolarizingChannel};
use crate::surrogate::{FitReport, Inputs, Surrogate, SurrogateConfig};

/// Objective assigned to invalid codes and failed evaluations.
pub const FLOOR: f64 = -1.0;

const PROPOSAL_STREAM: u64 = 0x5052_4f50;
const MODEL_STREAM: u64 = 0x4d4f_4445;
const MAX_DRAWS: usize = 100_000;

/// The binary vectors `F₂^{2(ℓ+m−1)}` describing BB codes over `Z_ℓ × Z_m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub ell: usize,
    pub m: usize,
}

impl SearchSpace {
    pub fn new(ell: usize, m: usize) -> Result<Self> {
        if ell == 0 || m == 0 {
            return Err(Error::Config("cyclic orders must be positive".into()));
        }
        Ok(Self { ell, m })
    }

    pub fn dimension(&self) -> usize {
        BbParams::dimension(self.ell, self.m)
    }

    /// Number of physical qubits of every code in the space.
    pub fn n(&self) -> usize {
        2 * self.ell * self.m
    }

    pub fn candidate(&self, x: &BitVector) -> Candidate {
        match BbParams::new(self.ell, self.m, x.clone()) {
            Ok(p) => bb_from_bits(&p),
            Err(_) => Candidate::Invalid(InvalidReason::ZeroPolynomials),
        }
    }

    pub fn is_valid(&self, x: &BitVector) -> bool {
        self.candidate(x).is_valid()
    }

    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> BitVector {
        let bits: Vec<bool> = (0..self.dimension()).map(|_| rng.random()).collect();
        BitVector::from_bools(&bits)
    }

    /// Rejection-samples a uniform valid point outside `exclude`.
    pub fn random_valid<R: Rng + ?Sized>(&self, rng: &mut R, exclude: &BTreeSet<BitVector>) -> Option<BitVector> {
        (0..MAX_DRAWS).map(|_| self.random_point(rng)).find(|x| !exclude.contains(x) && self.is_valid(x))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Status {
    Valid,
    Invalid { reason: InvalidReason },
    Failed { message: String },
}

/// Result of scoring one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub objective: f64,
    pub status: Status,
    pub n: usize,
    pub k: usize,
    pub ler: Option<LerEstimate>,
    /// No failure was observed and `p_L` was replaced by `1/(2N)`.
    pub floored: bool,
    pub t_hat: Option<f64>,
    /// Value the surrogate is trained on; `None` keeps the point out of the model.
    pub target: Option<f64>,
}

impl Evaluation {
    pub fn invalid(reason: InvalidReason, n: usize) -> Self {
        Self { objective: FLOOR, status: Status::Invalid { reason }, n, k: 0, ler: None, floored: false, t_hat: None, target: None }
    }

    pub fn failed(message: String, n: usize, k: usize) -> Self {
        Self { objective: FLOOR, status: Status::Failed { message }, n, k, ler: None, floored: false, t_hat: None, target: None }
    }
}

/// How surrogate predictions of `target` map to objective space.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetMap {
    /// The target is `ln p_L`; moments go through the pseudo-distance model.
    LogLer { lambda: f64, model: PseudoDistanceModel },
    /// The target is the objective itself.
    Direct,
}

pub trait Evaluator {
    fn space(&self) -> SearchSpace;
    /// Scores `x`; `index` is the position in the run and fixes any randomness.
    fn evaluate(&mut self, x: &BitVector, index: u64) -> Evaluation;
    fn target_map(&self) -> TargetMap;
}

/// Monte Carlo objective: decode at a fixed physical error rate, then score.
pub struct CodeEvaluator<'a> {
    space: SearchSpace,
    cfg: ObjectiveConfig,
    decoder: DecoderConfig,
    channel: DepolarizingChannel,
    model: PseudoDistanceModel,
    seed: u64,
    exec: &'a dyn ShotExecutor,
}

impl<'a> CodeEvaluator<'a> {
    pub fn new(space: SearchSpace, cfg: ObjectiveConfig, decoder: DecoderConfig, seed: u64, exec: &'a dyn ShotExecutor) -> Result<Self> {
        cfg.validate()?;
        decoder.validate()?;
        let channel = DepolarizingChannel::new(cfg.physical_p)?;
        let model = fit_pseudo_model(space.n(), cfg.physical_p)?;
        Ok(Self { space, cfg, decoder, channel, model, seed, exec })
    }

    pub fn model(&self) -> &PseudoDistanceModel {
        &self.model
    }

    fn score_code(&self, code: &CssCode, index: u64) -> Result<Evaluation> {
        let ler = estimate_ler(code, &self.channel, self.cfg.shots, derive_seed(self.seed, index), &self.decoder, self.exec)?;
        let s = score(code, ler, self.cfg.lambda, &self.model)?;
        let (p, _) = ler.floored();
        Ok(Evaluation {
            objective: s.objective,
            status: Status::Valid,
            n: code.n(),
            k: code.k(),
            ler: Some(ler),
            floored: s.floored,
            t_hat: Some(s.pseudo.t_hat),
            target: Some(libm::log(p)),
        })
    }
}

impl Evaluator for CodeEvaluator<'_> {
    fn space(&self) -> SearchSpace {
        self.space
    }

    fn evaluate(&mut self, x: &BitVector, index: u64) -> Evaluation {
        match self.space.candidate(x) {
            Candidate::Invalid(reason) => Evaluation::invalid(reason, self.space.n()),
            Candidate::Valid(code) => {
                self.score_code(&code, index).unwrap_or_else(|e| Evaluation::failed(format!("{e}"), code.n(), code.k()))
            }
        }
    }

    fn target_map(&self) -> TargetMap {
        TargetMap::LogLer { lambda: self.cfg.lambda, model: self.model.clone() }
    }
}

/// Deterministic test objective with a planted optimum: a nonnegative
/// quadratic penalty in the bits that differ from a fixed valid point.
#[derive(Clone, Debug)]
pub struct PlantedQuadratic {
    space: SearchSpace,
    optimum: BitVector,
    linear: Vec<f64>,
    pairs: Vec<(usize, usize, f64)>,
    norm: f64,
}

impl PlantedQuadratic {
    pub fn new(space: SearchSpace, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let optimum = space
            .random_valid(&mut rng, &BTreeSet::new())
            .ok_or_else(|| Error::Config("search space has no valid point".into()))?;
        let d = space.dimension();
        let linear: Vec<f64> = (0..d).map(|_| rng.random_range(0.02..0.1)).collect();
        let mut pairs = Vec::new();
        for i in 0..d {
            for j in i + 1..d {
                if rng.random_bool(0.3) {
                    pairs.push((i, j, rng.random_range(0.0..0.02)));
                }
            }
        }
        let norm = linear.iter().sum::<f64>() + pairs.iter().map(|p| p.2).sum::<f64>();
        Ok(Self { space, optimum, linear, pairs, norm })
    }

    pub fn optimum(&self) -> &BitVector {
        &self.optimum
    }

    /// Objective ignoring validity; lies in `[-0.9, 0.5]` with the maximum at the optimum.
    pub fn raw(&self, x: &BitVector) -> f64 {
        let diff = x.xor(&self.optimum);
        let lin: f64 = diff.ones().map(|i| self.linear[i]).sum();
        let quad: f64 = self.pairs.iter().filter(|(i, j, _)| diff.get(*i) && diff.get(*j)).map(|p| p.2).sum();
        0.5 - 1.4 * (lin + quad) / self.norm
    }
}

impl Evaluator for PlantedQuadratic {
    fn space(&self) -> SearchSpace {
        self.space
    }

    fn evaluate(&mut self, x: &BitVector, _index: u64) -> Evaluation {
        match self.space.candidate(x) {
            Candidate::Invalid(reason) => Evaluation::invalid(reason, self.space.n()),
            Candidate::Valid(code) => {
                let f = self.raw(x);
                Evaluation { objective: f, status: Status::Valid, n: code.n(), k: code.k(), ler: None, floored: false, t_hat: None, target: Some(f) }
            }
        }
    }

    fn target_map(&self) -> TargetMap {
        TargetMap::Direct
    }
}

/// Why a proposal did not come straight from the acquisition maximizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// The maximizer was already evaluated; best unseen climb point used.
    BestUnseen,
    /// No usable unseen climb point; a random valid point was drawn.
    Random,
    /// Too little data or a failed model fit; a random valid point was drawn.
    NoModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    Initial,
    Proposal { acquisition: Option<f64>, fallback: Option<Fallback>, cap_hit: bool },
    Random,
    Generation { generation: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub index: u64,
    #[serde(with = "bitstring")]
    pub bits: BitVector,
    pub source: Source,
    #[serde(flatten)]
    pub eval: Evaluation,
}

/// Bit vectors as `"0110…"` strings.
pub mod bitstring {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn to_string(x: &BitVector) -> String {
        (0..x.len()).map(|i| if x.get(i) { '1' } else { '0' }).collect()
    }

    pub fn parse(s: &str) -> Result<BitVector> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Parse(format!("bad bit character {other:?}"))),
            })
            .collect::<Result<Vec<bool>>>()?;
        Ok(BitVector::from_bools(&bits))
    }

    pub fn serialize<S: Serializer>(x: &BitVector, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.serialize_str(&to_string(x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> core::result::Result<BitVector, D::Error> {
        let s = String::deserialize(d)?;
        parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<EvalRecord>,
    pub best_so_far: Vec<f64>,
}

impl RunTrace {
    pub fn push(&mut self, r: EvalRecord) {
        let prev = self.best_so_far.last().copied().unwrap_or(f64::NEG_INFINITY);
        self.best_so_far.push(prev.max(r.eval.objective));
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Highest-objective record; the earliest wins ties.
    pub fn best(&self) -> Option<&EvalRecord> {
        self.records.iter().fold(None, |acc: Option<&EvalRecord>, r| match acc {
            Some(b) if b.eval.objective >= r.eval.objective => Some(b),
            _ => Some(r),
        })
    }

    pub fn seen(&self) -> BTreeSet<BitVector> {
        self.records.iter().map(|r| r.bits.clone()).collect()
    }
}

/// Callbacks for incremental persistence.
pub trait Observer {
    fn record(&mut self, _r: &EvalRecord) -> Result<()> {
        Ok(())
    }

    fn fitted(&mut self, _iteration: usize, _s: &Surrogate, _rep: &FitReport) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

/// Surrogate inputs: learned code embeddings, or the raw bits as ±1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    #[default]
    Embedding,
    Bits,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    pub nu0: usize,
    pub iterations: usize,
    pub restarts: usize,
    pub inputs: InputMode,
    pub surrogate: SurrogateConfig,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self { nu0: 10, iterations: 20, restarts: 3, inputs: InputMode::Embedding, surrogate: SurrogateConfig::default() }
    }
}

impl BoConfig {
    pub fn validate(&self, space: &SearchSpace) -> Result<()> {
        if self.nu0 < 2 {
            return Err(Error::Config("nu0 must be at least 2".into()));
        }
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        self.surrogate.validate()?;
        if self.inputs == InputMode::Bits && self.surrogate.embedding.d_f != space.dimension() {
            return Err(Error::Config(format!("bit inputs need d_f = {}", space.dimension())));
        }
        Ok(())
    }

    pub fn budget(&self) -> usize {
        self.nu0 + self.iterations
    }
}

pub fn bit_features(x: &BitVector) -> Vec<f64> {
    (0..x.len()).map(|i| if x.get(i) { 1.0 } else { -1.0 }).collect()
}

/// `E[max(0, f − f*)]` for `f ~ N(mu, sigma²)`.
pub fn expected_improvement(mu: f64, sigma: f64, f_star: f64) -> f64 {
    if sigma <= 0.0 {
        return (mu - f_star).max(0.0);
    }
    let z = (mu - f_star) / sigma;
    let cdf = 0.5 * libm::erfc(-z / core::f64::consts::SQRT_2);
    let pdf = libm::exp(-0.5 * z * z) / libm::sqrt(2.0 * core::f64::consts::PI);
    (sigma * (z * cdf + pdf)).max(0.0)
}

/// EI of a point under a fitted surrogate; `-∞` for invalid codes.
pub fn acquisition(x: &BitVector, s: &Surrogate, space: &SearchSpace, inputs: InputMode, map: &TargetMap, f_star: f64) -> f64 {
    let Candidate::Valid(code) = space.candidate(x) else {
        return f64::NEG_INFINITY;
    };
    let pred = match inputs {
        InputMode::Bits => s.predict_embedding(&bit_features(x)),
        InputMode::Embedding => match s.predict_code(&code) {
            Ok(p) => p,
            Err(_) => return f64::NEG_INFINITY,
        },
    };
    let st = s.standardization();
    let mu = st.inverse(pred.mean);
    let sd = st.scale * libm::sqrt(pred.variance);
    let (mu_f, sd_f) = match map {
        TargetMap::Direct => (mu, sd),
        TargetMap::LogLer { lambda, model } => objective_moments(mu, sd, code.n(), code.k(), *lambda, model),
    };
    let ei = expected_improvement(mu_f, sd_f, f_star);
    if ei.is_finite() {
        ei
    } else {
        f64::NEG_INFINITY
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Climb {
    pub point: BitVector,
    pub value: f64,
    /// Accepted moves, each strictly improving.
    pub path: Vec<f64>,
    pub cap_hit: bool,
}

/// Steepest-ascent single-bit-flip search. `acq` should memoize if it is expensive.
pub fn hill_climb(acq: &mut dyn FnMut(&BitVector) -> f64, start: &BitVector) -> Climb {
    let dim = start.len();
    let cap = 10 * dim;
    let mut x = start.clone();
    let mut fx = acq(&x);
    let mut path = alloc::vec![fx];
    for _ in 0..cap {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..dim {
            let mut y = x.clone();
            y.flip(i);
            let fy = acq(&y);
            if fy > fx && best.is_none_or(|(_, b)| fy > b) {
                best = Some((i, fy));
            }
        }
        match best {
            Some((i, fy)) => {
                x.flip(i);
                fx = fy;
                path.push(fy);
            }
            None => return Climb { point: x, value: fx, path, cap_hit: false },
        }
    }
    // The cap counts moves; report whether a further move was still available.
    let improvable = (0..dim).any(|i| {
        let mut y = x.clone();
        y.flip(i);
        acq(&y) > fx
    });
    Climb { point: x, value: fx, path, cap_hit: improvable }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub point: BitVector,
    pub acquisition: Option<f64>,
    pub fallback: Option<Fallback>,
    pub cap_hit: bool,
}

/// Maximizes the acquisition by hill climbing from `restarts` random valid
/// starts plus the incumbent, never returning a point in `seen` unless flagged.
pub fn propose<R: Rng + ?Sized>(
    acq: &mut dyn FnMut(&BitVector) -> f64,
    space: &SearchSpace,
    seen: &BTreeSet<BitVector>,
    incumbent: Option<&BitVector>,
    restarts: usize,
    rng: &mut R,
) -> Proposal {
    let mut memo: BTreeMap<BitVector, f64> = BTreeMap::new();
    let mut cached = |x: &BitVector| *memo.entry(x.clone()).or_insert_with(|| acq(x));
    let mut starts: Vec<BitVector> = (0..restarts).filter_map(|_| space.random_valid(rng, &BTreeSet::new())).collect();
    starts.extend(incumbent.cloned());
    let mut winner: Option<Climb> = None;
    let mut cap_hit = false;
    for s in &starts {
        let c = hill_climb(&mut cached, s);
        cap_hit |= c.cap_hit;
        if winner.as_ref().is_none_or(|w| c.value > w.value) {
            winner = Some(c);
        }
    }
    drop(cached);
    if let Some(w) = &winner {
        if w.value > f64::NEG_INFINITY && !seen.contains(&w.point) {
            return Proposal { point: w.point.clone(), acquisition: Some(w.value), fallback: None, cap_hit };
        }
    }
    let unseen = memo
        .iter()
        .filter(|(x, v)| v.is_finite() && !seen.contains(*x))
        .fold(None, |acc: Option<(&BitVector, f64)>, (x, &v)| match acc {
            Some((_, b)) if b >= v => acc,
            _ => Some((x, v)),
        });
    if let Some((x, v)) = unseen {
        return Proposal { point: x.clone(), acquisition: Some(v), fallback: Some(Fallback::BestUnseen), cap_hit };
    }
    Proposal { point: random_unseen(space, seen, rng), acquisition: None, fallback: Some(Fallback::Random), cap_hit }
}

fn random_unseen<R: Rng + ?Sized>(space: &SearchSpace, seen: &BTreeSet<BitVector>, rng: &mut R) -> BitVector {
    space.random_valid(rng, seen).unwrap_or_else(|| space.random_point(rng))
}

fn evaluate_into(
    eval: &mut dyn Evaluator,
    trace: &mut RunTrace,
    obs: &mut dyn Observer,
    bits: BitVector,
    source: Source,
) -> Result<()> {
    let index = trace.len() as u64;
    let e = eval.evaluate(&bits, index);
    let r = EvalRecord { index, bits, source, eval: e };
    obs.record(&r)?;
    trace.push(r);
    Ok(())
}

pub struct BoOutcome {
    pub trace: RunTrace,
    pub surrogate: Option<Surrogate>,
}

fn training_set(space: &SearchSpace, trace: &RunTrace) -> (Vec<CssCode>, Vec<BitVector>, Vec<f64>) {
    let mut codes = Vec::new();
    let mut bits = Vec::new();
    let mut y = Vec::new();
    for r in &trace.records {
        if let (Some(t), Candidate::Valid(code)) = (r.eval.target, space.candidate(&r.bits)) {
            codes.push(code);
            bits.push(r.bits.clone());
            y.push(t);
        }
    }
    (codes, bits, y)
}

fn fit_surrogate(s: &mut Surrogate, cfg: &BoConfig, codes: &[CssCode], bits: &[BitVector], y: &[f64]) -> Result<FitReport> {
    let steps = if s.fits() == 0 { cfg.surrogate.gp.init_steps } else { cfg.surrogate.gp.refit_steps };
    match cfg.inputs {
        InputMode::Embedding => {
            let refs: Vec<&CssCode> = codes.iter().collect();
            s.fit(Inputs::Codes(&refs), y, steps)
        }
        InputMode::Bits => {
            let d = bits.first().map_or(0, |b| b.len());
            let data: Vec<f64> = bits.iter().flat_map(bit_features).collect();
            let z = Tensor::from_vec(bits.len(), d, data);
            s.fit(Inputs::Fixed(&z), y, steps)
        }
    }
}

/// Bayesian optimization: `nu0` random valid points, then `iterations`
/// rounds of refit, EI maximization and evaluation.
pub fn bo_run(eval: &mut dyn Evaluator, cfg: &BoConfig, seed: u64, obs: &mut dyn Observer) -> Result<BoOutcome> {
    let space = eval.space();
    cfg.validate(&space)?;
    let map = eval.target_map();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, PROPOSAL_STREAM));
    let mut trace = RunTrace::default();
    for _ in 0..cfg.nu0 {
        let x = random_unseen(&space, &trace.seen(), &mut rng);
        evaluate_into(eval, &mut trace, obs, x, Source::Initial)?;
    }
    let mut surrogate = Surrogate::new(cfg.surrogate, derive_seed(seed, MODEL_STREAM))?;
    for it in 0..cfg.iterations {
        let (codes, bits, y) = training_set(&space, &trace);
        let seen = trace.seen();
        let fitted = if y.len() >= 2 {
            let backup = surrogate.clone();
            match fit_surrogate(&mut surrogate, cfg, &codes, &bits, &y) {
                Ok(rep) => {
                    obs.fitted(it, &surrogate, &rep)?;
                    true
                }
                Err(_) => {
                    surrogate = backup;
                    false
                }
            }
        } else {
            false
        };
        let proposal = if fitted {
            let f_star = trace.best().map_or(FLOOR, |r| r.eval.objective);
            let incumbent = trace.best().map(|r| r.bits.clone());
            let mut acq = |x: &BitVector| acquisition(x, &surrogate, &space, cfg.inputs, &map, f_star);
            propose(&mut acq, &space, &seen, incumbent.as_ref(), cfg.restarts, &mut rng)
        } else {
            Proposal { point: random_unseen(&space, &seen, &mut rng), acquisition: None, fallback: Some(Fallback::NoModel), cap_hit: false }
        };
        let source = Source::Proposal { acquisition: proposal.acquisition, fallback: proposal.fallback, cap_hit: proposal.cap_hit };
        evaluate_into(eval, &mut trace, obs, proposal.point, source)?;
    }
    Ok(BoOutcome { trace, surrogate: (surrogate.fits() > 0).then_some(surrogate) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EaConfig {
    pub population: usize,
    /// Fraction of the population eligible as parents.
    pub truncation: f64,
    /// Per-bit flip probability; `None` means `1 / dim`.
    pub mutation_rate: Option<f64>,
    pub crossover: f64,
    pub elites: usize,
}

impl Default for EaConfig {
    fn default() -> Self {
        Self { population: 20, truncation: 0.25, mutation_rate: None, crossover: 0.5, elites: 2 }
    }
}

impl EaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 || self.elites >= self.population {
            return Err(Error::Config("population must exceed elites and be at least 2".into()));
        }
        if !(self.truncation > 0.0 && self.truncation <= 1.0) {
            return Err(Error::Config("truncation must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.crossover) || self.mutation_rate.is_some_and(|p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Config("rates must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Generational EA with truncation selection, uniform crossover, per-bit
/// mutation and elitism. Every individual evaluated costs one unit of budget.
pub fn ea_run(eval: &mut dyn Evaluator, cfg: &EaConfig, budget: usize, seed: u64, obs: &mut dyn Observer) -> Result<RunTrace> {
    cfg.validate()?;
    let space = eval.space();
    let dim = space.dimension();
    let rate = cfg.mutation_rate.unwrap_or(1.0 / dim as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, PROPOSAL_STREAM));
    let mut trace = RunTrace::default();
    let mut pop: Vec<(BitVector, f64)> = Vec::new();
    for _ in 0..cfg.population.min(budget) {
        let x = space.random_point(&mut rng);
        evaluate_into(eval, &mut trace, obs, x.clone(), Source::Generation { generation: 0 })?;
        pop.push((x, trace.records.last().unwrap().eval.objective));
    }
    let mut generation = 0u32;
    while trace.len() < budget {
        generation += 1;
        // Stable sort keeps earlier individuals first among equals.
        pop.sort_by(|a, b| b.1.total_cmp(&a.1));
        let parents = ((cfg.population as f64 * cfg.truncation).ceil() as usize).clamp(1, pop.len());
        let mut next: Vec<(BitVector, f64)> = pop.iter().take(cfg.elites).cloned().collect();
        while next.len() < cfg.population && trace.len() < budget {
            let a = &pop[rng.random_range(0..parents)].0;
            let b = &pop[rng.random_range(0..parents)].0;
            let mut child = a.clone();
            if rng.random_bool(cfg.crossover) {
                for i in 0..dim {
                    if rng.random_bool(0.5) {
                        child.set(i, b.get(i));
                    }
                }
            }
            for i in 0..dim {
                if rate > 0.0 && rng.random_bool(rate) {
                    child.flip(i);
                }
            }
            evaluate_into(eval, &mut trace, obs, child.clone(), Source::Generation { generation })?;
            next.push((child, trace.records.last().unwrap().eval.objective));
        }
        pop = next;
    }
    Ok(trace)
}

/// `budget` i.i.d. uniform points; invalid ones are scored at the floor.
pub fn rs_run(eval: &mut dyn Evaluator, budget: usize, seed: u64, obs: &mut dyn Observer) -> Result<RunTrace> {
    let space = eval.space();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, PROPOSAL_STREAM));
    let mut trace = RunTrace::default();
    for _ in 0..budget {
        let x = space.random_point(&mut rng);
        evaluate_into(eval, &mut trace, obs, x, Source::Random)?;
    }
    Ok(trace)
}
