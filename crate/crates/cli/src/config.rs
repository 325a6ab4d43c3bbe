//! Run configuration: one TOML file with a section per concern.

use std::path::{Path, PathBuf};

use cssbo_core::code::{bb_from_bits, cyclic_repetition, hgp, BbParams, Candidate, HgpParams};
use cssbo_core::decode::DecoderConfig;
use cssbo_core::evaluate::ObjectiveConfig;
use cssbo_core::gf2::BitMatrix;
use cssbo_core::optimizer::{bitstring, BoConfig, EaConfig, InputMode, SearchSpace};
use cssbo_core::surrogate::SurrogateConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Output directory; the command line and `CSSBO_OUT_ROOT` take precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub code: Option<CodeSection>,
    pub channel: Option<ChannelSection>,
    #[serde(default)]
    pub decoder: DecoderConfig,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    pub sweep: Option<SweepSection>,
    pub search: Option<SearchSection>,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub fit: FitSection,
}

/// A single code: bivariate bicycle by polynomials or bits, or a hypergraph product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CodeSection {
    Bb {
        ell: usize,
        m: usize,
        a: Option<String>,
        b: Option<String>,
        bits: Option<String>,
    },
    Hgp {
        /// Lengths of two cyclic repetition checks.
        repetition: Option<[usize; 2]>,
        h1: Option<Vec<String>>,
        h2: Option<Vec<String>>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub p: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub shots: u64,
    pub lambda: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        let d = ObjectiveConfig::default();
        Self { shots: d.shots, lambda: d.lambda }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub p: Vec<f64>,
    pub shots: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub ell: usize,
    pub m: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Bo,
    Ea,
    Rs,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Bo => "bo",
            Method::Ea => "ea",
            Method::Rs => "rs",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub method: Method,
    pub nu0: usize,
    pub iterations: usize,
    pub restarts: usize,
    pub inputs: InputMode,
    /// Evaluation budget for EA and RS; defaults to `nu0 + iterations`.
    pub budget: Option<usize>,
    pub ea: EaConfig,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let bo = BoConfig::default();
        Self { method: Method::Bo, nu0: bo.nu0, iterations: bo.iterations, restarts: bo.restarts, inputs: bo.inputs, budget: None, ea: EaConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub codes: usize,
    pub splits: usize,
    pub train_fraction: f64,
    pub variants: Vec<cssbo_core::embedding::Variant>,
}

impl Default for FitSection {
    fn default() -> Self {
        use cssbo_core::embedding::Variant;
        Self { codes: 100, splits: 5, train_fraction: 0.8, variants: vec![Variant::ThreeView, Variant::OneView, Variant::None] }
    }
}

fn parse_rows(rows: &[String]) -> Result<BitMatrix> {
    let vecs = rows.iter().map(|r| bitstring::parse(r.trim())).collect::<cssbo_core::Result<Vec<_>>>()?;
    let cols = vecs.first().map_or(0, |v| v.len());
    if vecs.iter().any(|v| v.len() != cols) {
        return Err(CliError::Config("matrix rows have different lengths".into()));
    }
    Ok(BitMatrix::from_rows_with_cols(&vecs, cols)?)
}

impl CodeSection {
    pub fn build(&self) -> Result<Candidate> {
        match self {
            CodeSection::Bb { ell, m, a, b, bits } => {
                let params = match (a, b, bits) {
                    (Some(a), Some(b), None) => BbParams::from_polynomials(*ell, *m, a, b)?,
                    (None, None, Some(bits)) => BbParams::new(*ell, *m, bitstring::parse(bits)?)?,
                    _ => return Err(CliError::Config("a BB code needs either `a` and `b` or `bits`".into())),
                };
                Ok(bb_from_bits(&params))
            }
            CodeSection::Hgp { repetition, h1, h2 } => {
                let (h1, h2) = match (repetition, h1, h2) {
                    (Some([l1, l2]), None, None) => (cyclic_repetition(*l1), cyclic_repetition(*l2)),
                    (None, Some(h1), Some(h2)) => (parse_rows(h1)?, parse_rows(h2)?),
                    _ => return Err(CliError::Config("an HGP code needs either `repetition` or `h1` and `h2`".into())),
                };
                Ok(hgp(&HgpParams::new(h1, h2)?))
            }
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| CliError::Config("a seed is required (config `seed` or --seed)".into()))
    }

    pub fn code(&self) -> Result<&CodeSection> {
        self.code.as_ref().ok_or_else(|| CliError::Config("missing [code] section".into()))
    }

    pub fn physical_p(&self) -> Result<f64> {
        self.channel.map(|c| c.p).ok_or_else(|| CliError::Config("missing [channel] section".into()))
    }

    pub fn space(&self) -> Result<SearchSpace> {
        let s = self.search.ok_or_else(|| CliError::Config("missing [search] section".into()))?;
        Ok(SearchSpace::new(s.ell, s.m)?)
    }

    pub fn objective(&self) -> Result<ObjectiveConfig> {
        let cfg = ObjectiveConfig { lambda: self.evaluation.lambda, physical_p: self.physical_p()?, shots: self.evaluation.shots };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn bo(&self) -> BoConfig {
        let o = &self.optimizer;
        BoConfig { nu0: o.nu0, iterations: o.iterations, restarts: o.restarts, inputs: o.inputs, surrogate: self.surrogate }
    }

    pub fn budget(&self) -> usize {
        self.optimizer.budget.unwrap_or(self.optimizer.nu0 + self.optimizer.iterations)
    }

    /// The parts of the configuration that determine results; worker count
    /// and output location are excluded.
    pub fn fingerprint(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.out = None;
        c.workers = None;
        serde_json::to_value(&c).expect("configuration serializes")
    }
}
