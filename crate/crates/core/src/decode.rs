//! Belief propagation with ordered-statistics postprocessing.
//!
//! X and Z components are decoded independently: `ex` from `(hz, sx)` and
//! `ez` from `(hx, sz)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::code::CssCode;
use crate::error::{Error, Result};
use crate::gf2::{BitMatrix, BitVector};
use crate::noise::{syndrome, DepolarizingChannel, PauliError, Syndrome};

const LLR_CLAMP: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub max_iterations: usize,
    /// Per-bit prior flip probability seen by BP.
    pub prior_flip_probability: f64,
    /// Number of non-pivot columns tried by the postprocessor (0 = order-0 only).
    pub postprocess_order: usize,
    /// Fraction of the previous check-to-variable message retained.
    pub damping: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { max_iterations: 50, prior_flip_probability: 0.01, postprocess_order: 0, damping: 0.0 }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        let p = self.prior_flip_probability;
        if !(p > 0.0 && p < 1.0) || p == 0.5 {
            return Err(Error::Config(format!("prior flip probability {p} is degenerate")));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Config(format!("damping {} outside [0, 1)", self.damping)));
        }
        Ok(())
    }

    /// Same settings with the prior set to the X (or Z) marginal `2p/3` of
    /// the channel, nudged off the degenerate values 0, 1/2 and 1.
    pub fn for_channel(&self, ch: &DepolarizingChannel) -> Self {
        let mut prior = ch.marginal_flip_probability().clamp(1e-9, 1.0 - 1e-9);
        if (prior - 0.5).abs() < 1e-9 {
            prior = 0.5 - 1e-6;
        }
        Self { prior_flip_probability: prior, ..*self }
    }
}

/// Tanner graph of a check matrix in compressed form.
#[derive(Clone, Debug)]
pub struct TannerGraph {
    checks: usize,
    vars: usize,
    /// Edge `e` connects check `edge_check[e]` and variable `edge_var[e]`;
    /// edges of one check are contiguous.
    check_ptr: Vec<u32>,
    edge_var: Vec<u32>,
    var_ptr: Vec<u32>,
    var_edges: Vec<u32>,
}

impl TannerGraph {
    pub fn new(h: &BitMatrix) -> Self {
        let mut check_ptr = Vec::with_capacity(h.rows() + 1);
        let mut edge_var = Vec::new();
        check_ptr.push(0);
        for r in 0..h.rows() {
            edge_var.extend(h.row_ones(r).map(|c| c as u32));
            check_ptr.push(edge_var.len() as u32);
        }
        let mut degree = vec![0u32; h.cols()];
        for &v in &edge_var {
            degree[v as usize] += 1;
        }
        let mut var_ptr = Vec::with_capacity(h.cols() + 1);
        var_ptr.push(0u32);
        for d in &degree {
            var_ptr.push(var_ptr.last().unwrap() + d);
        }
        let mut fill = var_ptr[..h.cols()].to_vec();
        let mut var_edges = vec![0u32; edge_var.len()];
        for (e, &v) in edge_var.iter().enumerate() {
            var_edges[fill[v as usize] as usize] = e as u32;
            fill[v as usize] += 1;
        }
        Self { checks: h.rows(), vars: h.cols(), check_ptr, edge_var, var_ptr, var_edges }
    }

    fn check_edges(&self, c: usize) -> core::ops::Range<usize> {
        self.check_ptr[c] as usize..self.check_ptr[c + 1] as usize
    }

    fn syndrome_matches(&self, hard: &[bool], s: &BitVector) -> bool {
        (0..self.checks).all(|c| {
            let parity = self.check_edges(c).fold(false, |acc, e| acc ^ hard[self.edge_var[e] as usize]);
            parity == s.get(c)
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BpResult {
    /// Posterior probability that each bit is flipped.
    pub posteriors: Vec<f64>,
    pub hard: BitVector,
    pub converged: bool,
    pub iterations: usize,
}

/// Flooding sum-product decoding of `h · e = s` with a uniform prior.
pub fn bp_decode(h: &BitMatrix, s: &BitVector, cfg: &DecoderConfig) -> Result<BpResult> {
    cfg.validate()?;
    if s.len() != h.rows() {
        return Err(Error::DimensionMismatch { op: "bp_decode", left: (h.rows(), h.cols()), right: (s.len(), 1) });
    }
    Ok(bp_on_graph(&TannerGraph::new(h), s, cfg))
}

fn bp_on_graph(g: &TannerGraph, s: &BitVector, cfg: &DecoderConfig) -> BpResult {
    let p = cfg.prior_flip_probability;
    let prior = libm::log((1.0 - p) / p);
    let edges = g.edge_var.len();
    let mut v2c = vec![prior; edges];
    let mut c2v = vec![0.0f64; edges];
    let mut tanhs = vec![0.0f64; edges];
    let mut prefixes = vec![0.0f64; edges];
    let mut total = vec![prior; g.vars];
    let mut hard = vec![false; g.vars];
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=cfg.max_iterations {
        iterations = it;
        for c in 0..g.checks {
            let range = g.check_edges(c);
            let sign = if s.get(c) { -1.0 } else { 1.0 };
            for e in range.clone() {
                tanhs[e] = libm::tanh(0.5 * v2c[e]);
            }
            // Product over all other edges via a forward and a backward pass.
            let mut prefix = 1.0;
            for e in range.clone() {
                prefixes[e] = prefix;
                prefix *= tanhs[e];
            }
            let mut suffix = 1.0;
            for e in range.rev() {
                let excl = (prefixes[e] * suffix * sign).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
                let msg = (2.0 * libm::atanh(excl)).clamp(-LLR_CLAMP, LLR_CLAMP);
                c2v[e] = cfg.damping * c2v[e] + (1.0 - cfg.damping) * msg;
                suffix *= tanhs[e];
            }
        }
        for v in 0..g.vars {
            let range = g.var_ptr[v] as usize..g.var_ptr[v + 1] as usize;
            let sum: f64 = g.var_edges[range.clone()].iter().map(|&e| c2v[e as usize]).sum();
            total[v] = prior + sum;
            hard[v] = total[v] < 0.0;
            for &e in &g.var_edges[range] {
                let e = e as usize;
                v2c[e] = (total[v] - c2v[e]).clamp(-LLR_CLAMP, LLR_CLAMP);
            }
        }
        if g.syndrome_matches(&hard, s) {
            converged = true;
            break;
        }
    }

    BpResult {
        posteriors: total.iter().map(|&l| 1.0 / (1.0 + libm::exp(l))).collect(),
        hard: BitVector::from_bools(&hard),
        converged,
        iterations,
    }
}

/// Order-`order` ordered-statistics solution of `h · e = s`.
///
/// Columns are ranked by descending flip probability (ties by index); the
/// first independent columns in that order form the information set and the
/// solution is supported on them. With `order > 0` each of the first `order`
/// remaining columns is also tried as an extra flipped bit and the solution
/// of least log-likelihood cost wins.
pub fn osd_postprocess(h: &BitMatrix, s: &BitVector, posteriors: &[f64], order: usize) -> Result<BitVector> {
    let (m, n) = (h.rows(), h.cols());
    if s.len() != m || posteriors.len() != n {
        return Err(Error::DimensionMismatch { op: "osd_postprocess", left: (m, n), right: (s.len(), posteriors.len()) });
    }
    let mut ranking: Vec<usize> = (0..n).collect();
    ranking.sort_by(|&a, &b| posteriors[b].total_cmp(&posteriors[a]).then(a.cmp(&b)));

    let mut aug = h.with_column(s);
    let mut pivots = Vec::with_capacity(m);
    let mut is_pivot = vec![false; n];
    for &c in &ranking {
        let rank = pivots.len();
        if rank == m {
            break;
        }
        let Some(p) = (rank..m).find(|&r| aug.get(r, c)) else { continue };
        aug.swap_rows(rank, p);
        for r in 0..m {
            if r != rank && aug.get(r, c) {
                aug.xor_row(r, rank);
            }
        }
        pivots.push(c);
        is_pivot[c] = true;
    }
    if (pivots.len()..m).any(|r| aug.get(r, n)) {
        return Err(Error::InconsistentSyndrome);
    }

    let mut best = BitVector::zeros(n);
    for (r, &c) in pivots.iter().enumerate() {
        if aug.get(r, n) {
            best.set(c, true);
        }
    }
    if order == 0 {
        return Ok(best);
    }

    let cost = |v: &BitVector| -> f64 {
        v.ones()
            .map(|i| {
                let p = posteriors[i].clamp(1e-12, 1.0 - 1e-12);
                libm::log((1.0 - p) / p)
            })
            .sum()
    };
    let mut best_cost = cost(&best);
    for &j in ranking.iter().filter(|&&c| !is_pivot[c]).take(order) {
        let mut trial = best.clone();
        // Re-derive from the order-0 solution: flip j and the pivots it touches.
        trial.flip(j);
        for (r, &c) in pivots.iter().enumerate() {
            if aug.get(r, j) {
                trial.flip(c);
            }
        }
        let c = cost(&trial);
        if c < best_cost {
            best_cost = c;
            best = trial;
        }
    }
    Ok(best)
}

/// Decodes one side of a CSS code from its syndrome.
pub trait SyndromeDecoder {
    fn decode(&self, s: &BitVector) -> Result<BitVector>;
}

/// BP followed by ordered-statistics postprocessing when BP does not converge.
#[derive(Clone, Debug)]
pub struct BpOsdDecoder {
    h: BitMatrix,
    graph: TannerGraph,
    cfg: DecoderConfig,
}

impl BpOsdDecoder {
    pub fn new(h: &BitMatrix, cfg: DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { h: h.clone(), graph: TannerGraph::new(h), cfg })
    }
}

impl SyndromeDecoder for BpOsdDecoder {
    fn decode(&self, s: &BitVector) -> Result<BitVector> {
        if s.len() != self.h.rows() {
            return Err(Error::DimensionMismatch { op: "decode", left: (self.h.rows(), self.h.cols()), right: (s.len(), 1) });
        }
        if s.is_zero() {
            return Ok(BitVector::zeros(self.h.cols()));
        }
        let bp = bp_on_graph(&self.graph, s, &self.cfg);
        if bp.converged {
            Ok(bp.hard)
        } else {
            osd_postprocess(&self.h, s, &bp.posteriors, self.cfg.postprocess_order)
        }
    }
}

/// Decoder pair for the X and Z components of a CSS code.
#[derive(Clone, Debug)]
pub struct CssDecoder<D = BpOsdDecoder> {
    hx: BitMatrix,
    hz: BitMatrix,
    x_side: D,
    z_side: D,
}

impl CssDecoder<BpOsdDecoder> {
    pub fn new(code: &CssCode, cfg: DecoderConfig) -> Result<Self> {
        Ok(Self::with_decoders(code, BpOsdDecoder::new(code.hz(), cfg)?, BpOsdDecoder::new(code.hx(), cfg)?))
    }
}

impl<D: SyndromeDecoder> CssDecoder<D> {
    /// `x_side` decodes against `hz`, `z_side` against `hx`.
    pub fn with_decoders(code: &CssCode, x_side: D, z_side: D) -> Self {
        Self { hx: code.hx().clone(), hz: code.hz().clone(), x_side, z_side }
    }

    /// Estimate whose syndrome equals `s` exactly.
    pub fn decode(&self, s: &Syndrome) -> Result<PauliError> {
        let ex = self.x_side.decode(&s.sx)?;
        let ez = self.z_side.decode(&s.sz)?;
        if self.hz.mat_vec(&ex)? != s.sx || self.hx.mat_vec(&ez)? != s.sz {
            return Err(Error::DecoderContract("estimate does not reproduce the syndrome".into()));
        }
        Ok(PauliError { ex, ez })
    }
}

pub fn decode_css(code: &CssCode, s: &Syndrome, cfg: &DecoderConfig) -> Result<PauliError> {
    CssDecoder::new(code, *cfg)?.decode(s)
}

/// Whether `e ⊕ ehat` acts as a nontrivial logical operator.
pub fn is_logical_failure(code: &CssCode, e: &PauliError, ehat: &PauliError) -> Result<bool> {
    let residual = e.xor(ehat);
    let s = syndrome(code, &residual)?;
    if !s.is_zero() {
        return Err(Error::DecoderContract("residual error has a nonzero syndrome".into()));
    }
    Ok(!code.lz().mat_vec(&residual.ex)?.is_zero() || !code.lx().mat_vec(&residual.ez)?.is_zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::{cyclic_repetition, hgp, HgpParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toric3() -> CssCode {
        let h = cyclic_repetition(3);
        hgp(&HgpParams::new(h.clone(), h).unwrap()).valid().unwrap()
    }

    fn cfg() -> DecoderConfig {
        DecoderConfig { prior_flip_probability: 0.05, ..DecoderConfig::default() }
    }

    #[test]
    fn zero_syndrome_converges_immediately() {
        let code = toric3();
        let s = BitVector::zeros(code.hz().rows());
        let r = bp_decode(code.hz(), &s, &cfg()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert!(r.hard.is_zero());
        assert!(r.posteriors.iter().all(|p| p.is_finite() && *p < 0.5));
    }

    #[test]
    fn degenerate_priors_rejected() {
        let h = BitMatrix::identity(2);
        let s = BitVector::zeros(2);
        for p in [0.0, 0.5, 1.0] {
            let c = DecoderConfig { prior_flip_probability: p, ..cfg() };
            assert!(matches!(bp_decode(&h, &s, &c), Err(Error::Config(_))));
        }
        let c = DecoderConfig { max_iterations: 0, ..cfg() };
        assert!(bp_decode(&h, &s, &c).is_err());
    }

    #[test]
    fn single_bit_errors_on_toric_code() {
        let code = toric3();
        let h = code.hz();
        for j in 0..code.n() {
            let e = BitVector::unit(code.n(), j);
            let s = h.mat_vec(&e).unwrap();
            let r = bp_decode(h, &s, &cfg()).unwrap();
            let est = if r.converged { r.hard } else { osd_postprocess(h, &s, &r.posteriors, 0).unwrap() };
            assert_eq!(h.mat_vec(&est).unwrap(), s);
            // Minimum-weight solutions of a weight-1 syndrome on this code have weight 1.
            assert_eq!(est.weight(), 1, "qubit {j}");
        }
    }

    #[test]
    fn osd_trivial_and_forced_cases() {
        let code = toric3();
        let h = code.hz();
        let zeros = BitVector::zeros(h.rows());
        let post = vec![0.1; h.cols()];
        assert!(osd_postprocess(h, &zeros, &post, 0).unwrap().is_zero());

        let square = BitMatrix::from_dense(&[&[1, 1, 0], &[0, 1, 1], &[0, 0, 1]]);
        let s: BitVector = "101".parse().unwrap();
        let expected = square.inverse().unwrap().mat_vec(&s).unwrap();
        for post in [vec![0.9, 0.1, 0.5], vec![0.01, 0.02, 0.03]] {
            assert_eq!(osd_postprocess(&square, &s, &post, 0).unwrap(), expected);
        }

        let rank_deficient = BitMatrix::from_dense(&[&[1, 1], &[1, 1]]);
        assert_eq!(
            osd_postprocess(&rank_deficient, &"10".parse().unwrap(), &[0.1, 0.1], 0),
            Err(Error::InconsistentSyndrome)
        );
    }

    #[test]
    fn osd_solves_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mut h = BitMatrix::zeros(10, 20);
            for r in 0..10 {
                for c in 0..20 {
                    h.set(r, c, rng.random_bool(0.3));
                }
            }
            let e = BitVector::from_bools(&(0..20).map(|_| rng.random_bool(0.2)).collect::<Vec<_>>());
            let s = h.mat_vec(&e).unwrap();
            let post: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
            for order in [0, 3] {
                let est = osd_postprocess(&h, &s, &post, order).unwrap();
                assert_eq!(h.mat_vec(&est).unwrap(), s);
            }
        }
    }

    #[test]
    fn higher_order_never_costs_more() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let weight = |v: &BitVector, post: &[f64]| -> f64 { v.ones().map(|i| libm::log((1.0 - post[i]) / post[i])).sum() };
        for _ in 0..100 {
            let mut h = BitMatrix::zeros(6, 14);
            for r in 0..6 {
                for c in 0..14 {
                    h.set(r, c, rng.random_bool(0.4));
                }
            }
            let e = BitVector::from_bools(&(0..14).map(|_| rng.random_bool(0.2)).collect::<Vec<_>>());
            let s = h.mat_vec(&e).unwrap();
            let post: Vec<f64> = (0..14).map(|_| 0.01 + 0.4 * rng.random::<f64>()).collect();
            let o0 = osd_postprocess(&h, &s, &post, 0).unwrap();
            let o4 = osd_postprocess(&h, &s, &post, 4).unwrap();
            assert!(weight(&o4, &post) <= weight(&o0, &post) + 1e-12);
        }
    }

    #[test]
    fn damping_still_decodes() {
        let code = toric3();
        let h = code.hz();
        let c = DecoderConfig { damping: 0.3, ..cfg() };
        for j in 0..code.n() {
            let s = h.mat_vec(&BitVector::unit(code.n(), j)).unwrap();
            let dec = BpOsdDecoder::new(h, c).unwrap();
            let est = dec.decode(&s).unwrap();
            assert_eq!(h.mat_vec(&est).unwrap(), s);
        }
    }

    #[test]
    fn css_decoding_examples() {
        let code = toric3();
        let n = code.n();
        let zero = Syndrome { sx: BitVector::zeros(code.hz().rows()), sz: BitVector::zeros(code.hx().rows()) };
        assert_eq!(decode_css(&code, &zero, &cfg()).unwrap(), PauliError::identity(n));

        for j in 0..n {
            let e = PauliError { ex: BitVector::unit(n, j), ez: BitVector::zeros(n) };
            let s = syndrome(&code, &e).unwrap();
            let ehat = decode_css(&code, &s, &cfg()).unwrap();
            assert!(!is_logical_failure(&code, &e, &ehat).unwrap(), "qubit {j}");
        }

        // The X estimate ignores sz and vice versa.
        let e1 = PauliError { ex: BitVector::unit(n, 2), ez: BitVector::unit(n, 7) };
        let e2 = PauliError { ex: BitVector::unit(n, 2), ez: BitVector::unit(n, 11) };
        let d1 = decode_css(&code, &syndrome(&code, &e1).unwrap(), &cfg()).unwrap();
        let d2 = decode_css(&code, &syndrome(&code, &e2).unwrap(), &cfg()).unwrap();
        assert_eq!(d1.ex, d2.ex);
    }

    #[test]
    fn failure_classification() {
        let code = toric3();
        let n = code.n();
        let e = PauliError { ex: BitVector::unit(n, 0), ez: BitVector::unit(n, 5) };
        assert!(!is_logical_failure(&code, &e, &e).unwrap());

        let mut stab = e.clone();
        stab.ex.xor_assign(&code.hx().row(0));
        assert!(!is_logical_failure(&code, &e, &stab).unwrap());

        let mut logical = e.clone();
        logical.ex.xor_assign(&code.lx().row(0));
        assert!(is_logical_failure(&code, &e, &logical).unwrap());

        let mut wrong = e.clone();
        wrong.ex.flip(3);
        assert!(matches!(is_logical_failure(&code, &e, &wrong), Err(Error::DecoderContract(_))));
    }

    #[test]
    fn failure_invariant_under_stabilizers() {
        let code = toric3();
        let n = code.n();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let e = PauliError::identity(n);
            let mut residual = PauliError::identity(n);
            for r in 0..code.k() {
                if rng.random() {
                    residual.ex.xor_assign(&code.lx().row(r));
                }
            }
            let base = is_logical_failure(&code, &e, &residual).unwrap();
            for r in 0..code.hx().rows() {
                if rng.random() {
                    residual.ex.xor_assign(&code.hx().row(r));
                }
            }
            for r in 0..code.hz().rows() {
                if rng.random() {
                    residual.ez.xor_assign(&code.hz().row(r));
                }
            }
            assert_eq!(is_logical_failure(&code, &e, &residual).unwrap(), base);
        }
    }
}
