//! Monte Carlo logical error rates, Hamming-bound terms, the pseudo-distance
//! and the scalar objective.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::code::CssCode;
use crate::decode::{is_logical_failure, CssDecoder, DecoderConfig};
use crate::error::{Error, Result};
use crate::noise::{sample_error, shot_rng, syndrome, DepolarizingChannel};

const LN_2: f64 = core::f64::consts::LN_2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LerEstimate {
    pub p_l: f64,
    pub shots: u64,
    pub failures: u64,
    pub std_error: f64,
    pub physical_p: f64,
}

impl LerEstimate {
    pub fn from_counts(failures: u64, shots: u64, physical_p: f64) -> Self {
        let p_l = failures as f64 / shots as f64;
        Self { p_l, shots, failures, std_error: libm::sqrt(p_l * (1.0 - p_l) / shots as f64), physical_p }
    }

    /// `p_l`, or `1 / (2N)` when no failure was observed; the flag reports the floor.
    pub fn floored(&self) -> (f64, bool) {
        if self.failures == 0 {
            (0.5 / self.shots as f64, true)
        } else {
            (self.p_l, false)
        }
    }
}

/// Everything needed to run a block of shots against one code.
pub struct ShotTask<'a> {
    pub code: &'a CssCode,
    pub decoder: &'a CssDecoder,
    pub channel: DepolarizingChannel,
    pub seed: u64,
}

impl ShotTask<'_> {
    /// Logical failures among the shots with indices in `shots`.
    pub fn count_failures(&self, shots: Range<u64>) -> Result<u64> {
        let n = self.code.n();
        let mut failures = 0;
        for shot in shots {
            let mut rng = shot_rng(self.seed, shot);
            let e = sample_error(&self.channel, n, &mut rng);
            let s = syndrome(self.code, &e)?;
            let ehat = self.decoder.decode(&s).map_err(|err| match err {
                Error::DecoderContract(msg) => Error::DecoderContract(format!("shot {shot}: {msg}")),
                other => other,
            })?;
            failures += is_logical_failure(self.code, &e, &ehat)? as u64;
        }
        Ok(failures)
    }
}

/// Strategy for spreading shots over workers. Implementations must return
/// the same count as a single sequential pass.
pub trait ShotExecutor {
    fn count_failures(&self, task: &ShotTask<'_>, shots: u64) -> Result<u64>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl ShotExecutor for Sequential {
    fn count_failures(&self, task: &ShotTask<'_>, shots: u64) -> Result<u64> {
        task.count_failures(0..shots)
    }
}

pub fn estimate_ler(
    code: &CssCode,
    ch: &DepolarizingChannel,
    shots: u64,
    seed: u64,
    decoder: &DecoderConfig,
    exec: &dyn ShotExecutor,
) -> Result<LerEstimate> {
    if shots == 0 {
        return Err(Error::Config("shot count must be at least 1".into()));
    }
    if code.k() == 0 {
        return Err(Error::InconsistentCode("code encodes no logical qubits".into()));
    }
    let dec = CssDecoder::new(code, decoder.for_channel(ch))?;
    let task = ShotTask { code, decoder: &dec, channel: *ch, seed };
    let failures = exec.count_failures(&task, shots)?;
    Ok(LerEstimate::from_counts(failures, shots, ch.p()))
}

/// Logical error rate per logical qubit, `1 - (1 - p_L)^(1/k)`.
pub fn lerpq(p_l: f64, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("lerpq needs k >= 1".into()));
    }
    if !(0.0..=1.0).contains(&p_l) {
        return Err(Error::Domain(format!("p_L = {p_l} is not a probability")));
    }
    Ok(-libm::expm1(libm::log1p(-p_l) / k as f64))
}

fn log2_biguint(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 64 {
        return libm::log2(x.to_u64().unwrap() as f64);
    }
    let shift = bits - 64;
    let top = (x >> shift).to_u64().unwrap();
    libm::log2(top as f64) + shift as f64
}

/// `(1/n) log2 Σ_{j≤t} C(n,j) 3^j`, the Hamming-bound volume term.
pub fn f2(n: usize, t: usize) -> f64 {
    assert!(t <= n, "f2 radius {t} exceeds length {n}");
    let mut binom = BigUint::one();
    let mut pow3 = BigUint::one();
    let mut sum = BigUint::one();
    for j in 1..=t {
        binom = binom * (n - j + 1) / j;
        pow3 *= 3u32;
        sum += &binom * &pow3;
    }
    log2_biguint(&sum) / n as f64
}

/// `f2` extended to real `t` by linear interpolation.
pub fn f2_interp(n: usize, t: f64) -> f64 {
    let t = t.clamp(0.0, n as f64);
    let lo = libm::floor(t) as usize;
    let frac = t - lo as f64;
    if frac == 0.0 || lo == n {
        return f2(n, lo);
    }
    (1.0 - frac) * f2(n, lo) + frac * f2(n, lo + 1)
}

fn ln_choose(n: usize, j: usize) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(j as f64 + 1.0) - libm::lgamma((n - j) as f64 + 1.0)
}

/// Natural log of `P[X > t]` for `X ~ Binomial(n, p)` and integer `t`.
pub fn ln_binomial_tail_int(n: usize, t: usize, p: f64) -> f64 {
    if t >= n {
        return f64::NEG_INFINITY;
    }
    let (lp, lq) = (libm::log(p), libm::log1p(-p));
    let terms: Vec<f64> = (t + 1..=n).map(|j| ln_choose(n, j) + j as f64 * lp + (n - j) as f64 * lq).collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(terms.iter().map(|&x| libm::exp(x - max)).sum::<f64>())
}

/// `P[X > t]` for `X ~ Binomial(n, p)`, linear in `t` between integers.
pub fn binomial_tail(n: usize, t: f64, p: f64) -> f64 {
    let t = t.clamp(0.0, n as f64);
    let lo = libm::floor(t) as usize;
    let frac = t - lo as f64;
    let at = |t: usize| libm::exp(ln_binomial_tail_int(n, t, p));
    if frac == 0.0 || lo == n {
        return at(lo);
    }
    (1.0 - frac) * at(lo) + frac * at(lo + 1)
}

/// Cubic fit of `log2 P[X > t]` against `t`, used to turn an observed
/// logical error rate into a pseudo-distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoDistanceModel {
    pub n: usize,
    pub physical_p: f64,
    /// `(t, log2 tail)` at consecutive integers.
    pub grid: Vec<(f64, f64)>,
    /// Coefficients in `u = (t - center) / scale`, constant term first.
    pub poly_coeffs: [f64; 4],
    center: f64,
    scale: f64,
}

const TAIL_CUTOFF_LOG2: f64 = -60.0;
const MIN_GRID_POINTS: usize = 5;

impl PseudoDistanceModel {
    pub fn t_range(&self) -> (f64, f64) {
        (self.grid[0].0, self.grid[self.grid.len() - 1].0)
    }

    /// Fitted `log2 p_L` at `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let u = (t - self.center) / self.scale;
        let c = &self.poly_coeffs;
        c[0] + u * (c[1] + u * (c[2] + u * c[3]))
    }

    fn slope_u(&self, u: f64) -> f64 {
        let c = &self.poly_coeffs;
        c[1] + u * (2.0 * c[2] + u * 3.0 * c[3])
    }

    fn strictly_decreasing(&self) -> bool {
        // The derivative is quadratic in u; its maximum on [-1, 1] sits at an
        // endpoint or at the vertex.
        let c = &self.poly_coeffs;
        let mut candidates = alloc::vec![-1.0, 1.0];
        if c[3] != 0.0 {
            let vertex = -c[2] / (3.0 * c[3]);
            if vertex.abs() <= 1.0 {
                candidates.push(vertex);
            }
        }
        candidates.into_iter().all(|u| self.slope_u(u) < 0.0)
    }
}

/// Fits the pseudo-distance model for length `n` at physical rate `p`.
///
/// The grid runs over integer `t` up to the first radius whose tail drops
/// below `2^-60`. If the cubic is not strictly decreasing on the grid, the
/// lower end of the range is raised one step at a time.
pub fn fit_pseudo_model(n: usize, p: f64) -> Result<PseudoDistanceModel> {
    if !(p > 0.0 && p < 0.5) {
        return Err(Error::Domain(format!("physical rate {p} outside (0, 0.5)")));
    }
    if n < MIN_GRID_POINTS + 1 {
        return Err(Error::Domain(format!("length {n} too short for a pseudo-distance fit")));
    }
    let mut full = Vec::new();
    for t in 0..n {
        let y = ln_binomial_tail_int(n, t, p) / LN_2;
        full.push((t as f64, y));
        if y < TAIL_CUTOFF_LOG2 {
            break;
        }
    }
    for start in 0..full.len() {
        let grid = &full[start..];
        if grid.len() < MIN_GRID_POINTS {
            break;
        }
        if grid.windows(2).any(|w| w[1].1 >= w[0].1) {
            continue;
        }
        let model = fit_cubic(n, p, grid)?;
        if model.strictly_decreasing() {
            return Ok(model);
        }
    }
    Err(Error::Numerical(format!("no monotone cubic fit of the binomial tail for n = {n}, p = {p}")))
}

fn fit_cubic(n: usize, p: f64, grid: &[(f64, f64)]) -> Result<PseudoDistanceModel> {
    let (t0, t1) = (grid[0].0, grid[grid.len() - 1].0);
    let center = 0.5 * (t0 + t1);
    let scale = 0.5 * (t1 - t0);
    // Normal equations in the scaled variable are well conditioned for degree 3.
    let mut a = [[0.0f64; 5]; 4];
    for &(t, y) in grid {
        let u = (t - center) / scale;
        let powers = [1.0, u, u * u, u * u * u];
        for i in 0..4 {
            for j in 0..4 {
                a[i][j] += powers[i] * powers[j];
            }
            a[i][4] += powers[i] * y;
        }
    }
    for col in 0..4 {
        let piv = (col..4).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        if a[piv][col].abs() < 1e-12 {
            return Err(Error::Numerical("singular least-squares system".into()));
        }
        a.swap(col, piv);
        for r in 0..4 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..5 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let coeffs = [a[0][4] / a[0][0], a[1][4] / a[1][1], a[2][4] / a[2][2], a[3][4] / a[3][3]];
    Ok(PseudoDistanceModel { n, physical_p: p, grid: grid.to_vec(), poly_coeffs: coeffs, center, scale })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoT {
    pub t_hat: f64,
    /// The input fell outside the fitted range and `t_hat` sits at an endpoint.
    pub clamped: bool,
}

/// Inverts the fitted curve at `log2 p_L = y`.
pub fn pseudo_t_log2(model: &PseudoDistanceModel, y: f64) -> PseudoT {
    let (lo, hi) = model.t_range();
    let (y_hi, y_lo) = (model.eval(lo), model.eval(hi));
    if y >= y_hi {
        return PseudoT { t_hat: lo, clamped: y > y_hi };
    }
    if y <= y_lo {
        return PseudoT { t_hat: hi, clamped: y < y_lo };
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if model.eval(mid) > y {
            a = mid;
        } else {
            b = mid;
        }
    }
    PseudoT { t_hat: 0.5 * (a + b), clamped: false }
}

pub fn pseudo_t(model: &PseudoDistanceModel, p_l: f64) -> Result<PseudoT> {
    if !(p_l > 0.0 && p_l <= 1.0) {
        return Err(Error::Domain(format!("pseudo-distance needs p_L in (0, 1], got {p_l}")));
    }
    Ok(pseudo_t_log2(model, libm::log2(p_l)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub physical_p: f64,
    pub shots: u64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { lambda: 1.0, physical_p: 0.05, shots: 10_000 }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Config(format!("lambda {} outside (0, 1]", self.lambda)));
        }
        if !(self.physical_p > 0.0 && self.physical_p < 0.5) {
            return Err(Error::Config(format!("physical_p {} outside (0, 0.5)", self.physical_p)));
        }
        if self.shots == 0 {
            return Err(Error::Config("shots must be at least 1".into()));
        }
        Ok(())
    }
}

/// `λ k/n + f2(t̂) - 1`.
pub fn objective(n: usize, k: usize, t_hat: f64, lambda: f64) -> f64 {
    lambda * k as f64 / n as f64 + f2_interp(n, t_hat) - 1.0
}

const MOMENT_STEP: f64 = 1e-4;

/// Mean and standard deviation of the objective given a Gaussian belief
/// over `ln p_L`, by first-order error propagation.
pub fn objective_moments(
    mu_logp: f64,
    sigma_logp: f64,
    n: usize,
    k: usize,
    lambda: f64,
    model: &PseudoDistanceModel,
) -> (f64, f64) {
    objective_moments_with_step(mu_logp, sigma_logp, n, k, lambda, model, MOMENT_STEP)
}

pub fn objective_moments_with_step(
    mu_logp: f64,
    sigma_logp: f64,
    n: usize,
    k: usize,
    lambda: f64,
    model: &PseudoDistanceModel,
    h: f64,
) -> (f64, f64) {
    let g = |x: f64| objective(n, k, pseudo_t_log2(model, x / LN_2).t_hat, lambda);
    let mu = g(mu_logp);
    if sigma_logp == 0.0 {
        return (mu, 0.0);
    }
    let slope = (g(mu_logp + h) - g(mu_logp - h)) / (2.0 * h);
    (mu, slope.abs() * sigma_logp)
}

/// One scored evaluation of a valid code.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub ler: LerEstimate,
    pub floored: bool,
    pub pseudo: PseudoT,
    pub objective: f64,
}

pub fn score(code: &CssCode, ler: LerEstimate, lambda: f64, model: &PseudoDistanceModel) -> Result<Scored> {
    let (p, floored) = ler.floored();
    let pseudo = pseudo_t(model, p)?;
    Ok(Scored { ler, floored, pseudo, objective: objective(code.n(), code.k(), pseudo.t_hat, lambda) })
}
