//! Gaussian-process surrogate over code embeddings.
//!
//! The GP has a linear mean `wᵀz + b`, an isotropic Matérn kernel and
//! Gaussian noise. Embedding weights and GP hyperparameters live in one
//! [`ParamVector`] and are fitted together by maximizing the log marginal
//! likelihood of standardized targets.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::code::CssCode;
use crate::dense::{Cholesky, Tensor};
use crate::diff::{Graph, NodeId, ParamVector, Segment};
use crate::embedding::{embed, embed_batch_node, push_params, EmbeddingConfig};
use crate::error::{Error, Result};
use crate::kernel::{matern, Smoothness};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    pub nu: Smoothness,
    pub init_steps: usize,
    pub refit_steps: usize,
    /// Initial step size of the optimizer.
    pub learning_rate: f64,
    pub jitter_start: f64,
    pub jitter_max: f64,
    pub init_noise_variance: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            nu: Smoothness::FiveHalves,
            init_steps: 200,
            refit_steps: 50,
            learning_rate: 0.01,
            jitter_start: 1e-10,
            jitter_max: 1e-6,
            init_noise_variance: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub embedding: EmbeddingConfig,
    pub gp: GpConfig,
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        self.embedding.validate()?;
        let gp = &self.gp;
        if !(gp.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(gp.jitter_start > 0.0 && gp.jitter_start <= gp.jitter_max) {
            return Err(Error::Config("jitter range must satisfy 0 < start <= max".into()));
        }
        if !(gp.init_noise_variance > 0.0) {
            return Err(Error::Config("init_noise_variance must be positive".into()));
        }
        Ok(())
    }
}

/// Affine map between raw and standardized targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub scale: f64,
}

impl Default for Standardization {
    fn default() -> Self {
        Self { mean: 0.0, scale: 1.0 }
    }
}

impl Standardization {
    /// Sample mean and (population) standard deviation; a constant sample gets scale 1.
    pub fn fit(raw: &[f64]) -> Self {
        let n = raw.len().max(1) as f64;
        let mean = raw.iter().sum::<f64>() / n;
        let var = raw.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
        let sd = libm::sqrt(var);
        Self { mean, scale: if sd > 1e-12 { sd } else { 1.0 } }
    }

    pub fn forward(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.scale
    }

    pub fn inverse(&self, y: f64) -> f64 {
        self.mean + self.scale * y
    }
}

/// Inputs to the GP: codes that are embedded inside the graph, or fixed vectors.
#[derive(Clone, Copy)]
pub enum Inputs<'a> {
    Codes(&'a [&'a CssCode]),
    Fixed(&'a Tensor),
}

impl Inputs<'_> {
    pub fn len(&self) -> usize {
        match self {
            Inputs::Codes(c) => c.len(),
            Inputs::Fixed(t) => t.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub nu: Smoothness,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Log marginal likelihood after each accepted step (first entry: start).
    pub history: Vec<f64>,
    pub jitter: f64,
    pub accepted_steps: usize,
}

#[derive(Clone, Debug)]
struct Posterior {
    z: Tensor,
    chol: Cholesky,
    alpha: Vec<f64>,
}

/// Standardized-scale prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    /// Latent variance, clamped at zero.
    pub variance: f64,
    pub noise_variance: f64,
}

impl Prediction {
    /// Variance of a new noisy observation.
    pub fn predictive_variance(&self) -> f64 {
        self.variance + self.noise_variance
    }
}

/// Names of the GP segments inside the shared parameter vector.
pub const GP_SEGMENTS: [&str; 5] = ["gp.mean.w", "gp.mean.b", "gp.log_length", "gp.log_signal", "gp.log_noise"];

#[derive(Clone, Debug)]
pub struct Surrogate {
    cfg: SurrogateConfig,
    theta: ParamVector,
    standardization: Standardization,
    jitter: f64,
    fits: usize,
    posterior: Option<Posterior>,
}

struct NllGraph {
    graph: Graph,
    z: NodeId,
}

fn push_gp_params(p: &mut ParamVector, cfg: &SurrogateConfig) {
    p.push("gp.mean.w", cfg.embedding.d_f, 1, || 0.0);
    p.push("gp.mean.b", 1, 1, || 0.0);
    p.push("gp.log_length", 1, 1, || 0.0);
    p.push("gp.log_signal", 1, 1, || 0.0);
    let log_noise = libm::log(cfg.gp.init_noise_variance);
    p.push("gp.log_noise", 1, 1, || log_noise);
}

impl Surrogate {
    pub fn new(cfg: SurrogateConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = ParamVector::new();
        push_params(&mut theta, &cfg.embedding, &mut rng);
        push_gp_params(&mut theta, &cfg);
        Ok(Self { cfg, theta, standardization: Standardization::default(), jitter: cfg.gp.jitter_start, fits: 0, posterior: None })
    }

    /// Restores a surrogate from saved parameters; the layout must match `cfg`.
    pub fn from_parts(cfg: SurrogateConfig, theta: ParamVector, standardization: Standardization, fits: usize) -> Result<Self> {
        let fresh = Self::new(cfg, 0)?;
        if !fresh.theta.same_layout(&theta) {
            return Err(Error::Config("parameter layout does not match the surrogate configuration".into()));
        }
        Ok(Self { theta, standardization, fits, ..fresh })
    }

    pub fn config(&self) -> &SurrogateConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamVector {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        self.posterior = None;
        &mut self.theta
    }

    pub fn standardization(&self) -> Standardization {
        self.standardization
    }

    pub fn fits(&self) -> usize {
        self.fits
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Restores a saved diagonal jitter; fits only ever raise it.
    pub fn set_jitter(&mut self, jitter: f64) {
        self.jitter = jitter;
        self.posterior = None;
    }

    fn scalar(&self, name: &str) -> f64 {
        self.theta.get(self.seg(name))[0]
    }

    fn seg(&self, name: &str) -> &Segment {
        self.theta.segment(name).expect("gp segment present")
    }

    pub fn hyper(&self) -> GpHyper {
        GpHyper {
            length_scale: libm::exp(self.scalar("gp.log_length")),
            signal_variance: libm::exp(self.scalar("gp.log_signal")),
            noise_variance: libm::exp(self.scalar("gp.log_noise")),
            nu: self.cfg.gp.nu,
        }
    }

    pub fn mean_weights(&self) -> (&[f64], f64) {
        (self.theta.get(self.seg("gp.mean.w")), self.scalar("gp.mean.b"))
    }

    /// Overwrites the GP hyperparameters (positive scales, not logs).
    pub fn set_hyper(&mut self, length_scale: f64, signal_variance: f64, noise_variance: f64) {
        for (name, v) in [("gp.log_length", length_scale), ("gp.log_signal", signal_variance), ("gp.log_noise", noise_variance)] {
            let s = self.seg(name).clone();
            self.theta.get_mut(&s)[0] = libm::log(v);
        }
        self.posterior = None;
    }

    pub fn set_mean(&mut self, w: &[f64], b: f64) {
        let sw = self.seg("gp.mean.w").clone();
        self.theta.get_mut(&sw).copy_from_slice(w);
        let sb = self.seg("gp.mean.b").clone();
        self.theta.get_mut(&sb)[0] = b;
        self.posterior = None;
    }

    fn prior_mean(&self, z: &[f64]) -> f64 {
        let (w, b) = self.mean_weights();
        w.iter().zip(z).map(|(a, x)| a * x).sum::<f64>() + b
    }

    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let h = self.hyper();
        let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        matern(libm::sqrt(r2), h.length_scale, h.signal_variance, h.nu)
    }

    fn build_nll(&self, inputs: Inputs<'_>, y: &[f64]) -> NllGraph {
        let mut g = Graph::new();
        g.set_jitter(self.jitter);
        let theta = &self.theta;
        let z = match inputs {
            Inputs::Codes(codes) => embed_batch_node(&mut g, theta, codes, &self.cfg.embedding),
            Inputs::Fixed(t) => g.constant(t.clone()),
        };
        let p = |g: &mut Graph, name: &str| g.param(theta.segment(name).expect("gp segment"));
        let w = p(&mut g, "gp.mean.w");
        let b = p(&mut g, "gp.mean.b");
        let ll = p(&mut g, "gp.log_length");
        let ls = p(&mut g, "gp.log_signal");
        let ln = p(&mut g, "gp.log_noise");
        let m = g.matmul(z, w);
        let m = g.add_row(m, b);
        let yv = g.constant(Tensor::column(y.to_vec()));
        let r = g.sub(yv, m);
        let r2 = g.sq_dist(z, z);
        let k = g.matern(r2, ll, ls, self.cfg.gp.nu);
        let k = g.add_diag(k, ln);
        let alpha = g.spd_solve(k, r);
        let quad = g.mul(r, alpha);
        let quad = g.sum(quad);
        let ld = g.log_det_spd(k);
        let t = g.add(quad, ld);
        let half = g.scale(t, 0.5);
        let c = g.constant(Tensor::scalar(0.5 * y.len() as f64 * LN_2PI));
        let nll = g.add(half, c);
        g.set_output(nll);
        NllGraph { graph: g, z }
    }

    /// Log marginal likelihood of already standardized targets.
    pub fn log_marginal_likelihood(&self, inputs: Inputs<'_>, y: &[f64]) -> Result<f64> {
        if inputs.len() != y.len() || y.is_empty() {
            return Err(Error::DimensionMismatch { op: "log_marginal_likelihood", left: (inputs.len(), 1), right: (y.len(), 1) });
        }
        Ok(-self.build_nll(inputs, y).graph.evaluate(&self.theta)?)
    }

    /// Gradient of the log marginal likelihood with respect to every parameter.
    pub fn log_marginal_likelihood_gradient(&self, inputs: Inputs<'_>, y: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, g) = self.build_nll(inputs, y).graph.gradient(&self.theta)?;
        Ok((-v, g.into_iter().map(|x| -x).collect()))
    }

    /// Builds the negative log marginal likelihood graph for external checks.
    pub fn nll_graph(&self, inputs: Inputs<'_>, y: &[f64]) -> Graph {
        self.build_nll(inputs, y).graph
    }

    /// Fits to raw targets, training embedding and GP jointly for `steps`
    /// accepted-or-rejected iterations, then caches the posterior.
    pub fn fit(&mut self, inputs: Inputs<'_>, raw: &[f64], steps: usize) -> Result<FitReport> {
        if inputs.len() != raw.len() {
            return Err(Error::DimensionMismatch { op: "fit", left: (inputs.len(), 1), right: (raw.len(), 1) });
        }
        if raw.len() < 2 {
            return Err(Error::Domain("fitting needs at least two observations".into()));
        }
        if raw.iter().any(|y| !y.is_finite()) {
            return Err(Error::Domain("targets must be finite".into()));
        }
        self.standardization = Standardization::fit(raw);
        let y: Vec<f64> = raw.iter().map(|&v| self.standardization.forward(v)).collect();
        if self.fits == 0 {
            self.init_length_scale(inputs)?;
        }
        let mut nll = self.build_nll(inputs, &y);
        let mut current = self.settle_jitter(&mut nll.graph)?;
        let mut report = FitReport { history: vec![-current], jitter: self.jitter, accepted_steps: 0 };

        // Adam-preconditioned steps with backtracking: a step is kept only if
        // it lowers the loss, so the likelihood history never decreases.
        let n = self.theta.len();
        let (mut m1, mut m2) = (vec![0.0; n], vec![0.0; n]);
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut lr = self.cfg.gp.learning_rate;
        let mut t = 0i32;
        for _ in 0..steps {
            let (value, grad) = nll.graph.gradient(&self.theta)?;
            debug_assert!((value - current).abs() <= 1e-9 * (1.0 + current.abs()));
            t += 1;
            for i in 0..n {
                m1[i] = b1 * m1[i] + (1.0 - b1) * grad[i];
                m2[i] = b2 * m2[i] + (1.0 - b2) * grad[i] * grad[i];
            }
            let c1 = 1.0 - libm::pow(b1, t as f64);
            let c2 = 1.0 - libm::pow(b2, t as f64);
            let dir: Vec<f64> = (0..n).map(|i| (m1[i] / c1) / (libm::sqrt(m2[i] / c2) + eps)).collect();
            let mut accepted = false;
            for _ in 0..12 {
                let mut cand = self.theta.clone();
                for (v, d) in cand.values_mut().iter_mut().zip(&dir) {
                    *v -= lr * d;
                }
                match nll.graph.evaluate(&cand) {
                    Ok(v) if v < current => {
                        self.theta = cand;
                        current = v;
                        lr *= 1.1;
                        accepted = true;
                        break;
                    }
                    _ => lr *= 0.5,
                }
            }
            if !accepted {
                // Momentum can point uphill after a sharp turn: restart once
                // from a clean state before declaring convergence.
                if t == 1 {
                    break;
                }
                m1.iter_mut().chain(m2.iter_mut()).for_each(|v| *v = 0.0);
                t = 0;
                lr = self.cfg.gp.learning_rate;
                continue;
            }
            report.accepted_steps += 1;
            report.history.push(-current);
        }
        self.fits += 1;
        self.condition_standardized(inputs, &y, &nll)?;
        Ok(report)
    }

    /// Caches the posterior for raw targets without changing parameters.
    pub fn condition(&mut self, inputs: Inputs<'_>, raw: &[f64]) -> Result<()> {
        if inputs.len() != raw.len() {
            return Err(Error::DimensionMismatch { op: "condition", left: (inputs.len(), 1), right: (raw.len(), 1) });
        }
        if raw.is_empty() {
            self.posterior = None;
            return Ok(());
        }
        self.standardization = Standardization::fit(raw);
        let y: Vec<f64> = raw.iter().map(|&v| self.standardization.forward(v)).collect();
        let mut nll = self.build_nll(inputs, &y);
        self.settle_jitter(&mut nll.graph)?;
        self.condition_standardized(inputs, &y, &nll)
    }

    /// Conditions on targets that are already on the standardized scale.
    pub fn condition_with(&mut self, inputs: Inputs<'_>, y: &[f64], standardization: Standardization) -> Result<()> {
        self.standardization = standardization;
        let mut nll = self.build_nll(inputs, y);
        self.settle_jitter(&mut nll.graph)?;
        self.condition_standardized(inputs, y, &nll)
    }

    fn condition_standardized(&mut self, _inputs: Inputs<'_>, y: &[f64], nll: &NllGraph) -> Result<()> {
        let z = nll.graph.evaluate_node(&self.theta, nll.z)?;
        let n = z.rows();
        let h = self.hyper();
        let mut k = Tensor::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = self.kernel(z.row(i), z.row(j));
            }
            k[(i, i)] += h.noise_variance + self.jitter;
        }
        let chol = Cholesky::new(&k).ok_or(Error::NotPositiveDefinite { node: usize::MAX })?;
        let resid: Vec<f64> = (0..n).map(|i| y[i] - self.prior_mean(z.row(i))).collect();
        let alpha = chol.solve(&Tensor::column(resid)).into_vec();
        self.posterior = Some(Posterior { z, chol, alpha });
        Ok(())
    }

    /// Raises the jitter until the kernel matrix factorizes; returns the loss.
    fn settle_jitter(&mut self, g: &mut Graph) -> Result<f64> {
        loop {
            g.set_jitter(self.jitter);
            match g.evaluate(&self.theta) {
                Ok(v) => return Ok(v),
                Err(Error::NotPositiveDefinite { .. }) if self.jitter * 10.0 <= self.cfg.gp.jitter_max * (1.0 + 1e-9) => {
                    self.jitter *= 10.0;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn init_length_scale(&mut self, inputs: Inputs<'_>) -> Result<()> {
        let z = match inputs {
            Inputs::Codes(codes) => {
                let mut g = Graph::new();
                let node = embed_batch_node(&mut g, &self.theta, codes, &self.cfg.embedding);
                g.evaluate_node(&self.theta, node)?
            }
            Inputs::Fixed(t) => t.clone(),
        };
        let mut dists = Vec::new();
        for i in 0..z.rows() {
            for j in i + 1..z.rows() {
                let r2: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                dists.push(libm::sqrt(r2));
            }
        }
        dists.sort_by(f64::total_cmp);
        let median = dists.get(dists.len() / 2).copied().unwrap_or(1.0);
        if median > 1e-12 {
            let s = self.seg("gp.log_length").clone();
            self.theta.get_mut(&s)[0] = libm::log(median);
        }
        Ok(())
    }

    pub fn embed(&self, code: &CssCode) -> Result<Vec<f64>> {
        embed(code, &self.theta, &self.cfg.embedding)
    }

    /// Posterior at an embedding (the prior when nothing is conditioned).
    pub fn predict_embedding(&self, z: &[f64]) -> Prediction {
        let h = self.hyper();
        let mean0 = self.prior_mean(z);
        let Some(post) = &self.posterior else {
            return Prediction { mean: mean0, variance: h.signal_variance, noise_variance: h.noise_variance };
        };
        let n = post.z.rows();
        let kstar: Vec<f64> = (0..n).map(|i| self.kernel(post.z.row(i), z)).collect();
        let mean = mean0 + kstar.iter().zip(&post.alpha).map(|(a, b)| a * b).sum::<f64>();
        let v = post.chol.solve_lower(&kstar);
        let var = h.signal_variance - v.iter().map(|x| x * x).sum::<f64>();
        Prediction { mean, variance: var.max(0.0), noise_variance: h.noise_variance }
    }

    pub fn predict_code(&self, code: &CssCode) -> Result<Prediction> {
        Ok(self.predict_embedding(&self.embed(code)?))
    }

    pub fn is_conditioned(&self) -> bool {
        self.posterior.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub r2: f64,
    pub avg_nll: f64,
}

/// Regression metrics for predictive means and variances.
pub fn metrics(mean: &[f64], variance: &[f64], targets: &[f64]) -> Result<Metrics> {
    let n = targets.len();
    if mean.len() != n || variance.len() != n || n < 2 {
        return Err(Error::DimensionMismatch { op: "metrics", left: (mean.len(), variance.len()), right: (n, 1) });
    }
    let nf = n as f64;
    let mse = mean.iter().zip(targets).map(|(m, y)| (m - y) * (m - y)).sum::<f64>() / nf;
    let ybar = targets.iter().sum::<f64>() / nf;
    let var = targets.iter().map(|y| (y - ybar) * (y - ybar)).sum::<f64>() / nf;
    if var == 0.0 {
        return Err(Error::Domain("R² is undefined for constant targets".into()));
    }
    let avg_nll = mean
        .iter()
        .zip(variance)
        .zip(targets)
        .map(|((m, s2), y)| 0.5 * (LN_2PI + libm::log(*s2)) + (y - m) * (y - m) / (2.0 * s2))
        .sum::<f64>()
        / nf;
    Ok(Metrics { mse, r2: 1.0 - mse / var, avg_nll })
}
