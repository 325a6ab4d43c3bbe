//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset:
//! `cargo test --release -p cssbo --test acceptance -- 4 9`.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use cssbo::config::RunConfig;
use cssbo::exec::Threaded;
use cssbo::fitbench::{build_dataset, evaluate_variant, summarize};
use cssbo::run::{self, TraceLine, CHECKPOINT, MANIFEST, TRACE};
use cssbo_core::code::{bb_checks, bb_from_bits, cyclic_repetition, hgp, BbParams, Candidate, HgpParams, InvalidReason};
use cssbo_core::decode::{CssDecoder, DecoderConfig};
use cssbo_core::dense::{Cholesky, Tensor};
use cssbo_core::diff::check_gradient;
use cssbo_core::embedding::{embed_batch, Variant};
use cssbo_core::evaluate::{estimate_ler, f2, fit_pseudo_model, ln_binomial_tail_int, pseudo_t_log2, ObjectiveConfig, Sequential};
use cssbo_core::gf2::BitMatrix;
use cssbo_core::kernel::{matern, matern_parts, Smoothness};
use cssbo_core::noise::{sample_error, shot_rng, syndrome, DepolarizingChannel};
use cssbo_core::optimizer::{bo_run, ea_run, expected_improvement, rs_run, BoConfig, CodeEvaluator, EaConfig, InputMode, PlantedQuadratic, RunTrace, SearchSpace};
use cssbo_core::surrogate::{Inputs, Standardization, Surrogate, SurrogateConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn rank(m: &BitMatrix) -> usize {
    m.rank()
}

fn c1_css_validity() -> Outcome {
    let start = Instant::now();
    let space = SearchSpace::new(6, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut ok, mut with_logicals) = (0, 0);
    for _ in 0..1000 {
        let x = space.random_point(&mut rng);
        let p = BbParams::new(6, 3, x.clone()).unwrap();
        let (hx, hz) = bb_checks(&p);
        let commute = hx.mat_mul(&hz.transpose()).unwrap().is_zero();
        let n_ok = hx.cols() == 36 && hz.cols() == 36;
        let k = 36 - rank(&hx) - rank(&hz);
        let consistent = match bb_from_bits(&p) {
            Candidate::Valid(c) => {
                with_logicals += 1;
                c.n() == 36
                    && c.k() == k
                    && c.lx().mat_mul(&c.lz().transpose()).unwrap() == BitMatrix::identity(k)
                    && c.check_invariants().is_ok()
            }
            Candidate::Invalid(InvalidReason::NoLogicalQubits) => k == 0,
            Candidate::Invalid(InvalidReason::ZeroPolynomials) => x.is_zero(),
        };
        ok += (commute && n_ok && consistent) as usize;
    }
    let t = start.elapsed();
    outcome(ok == 1000 && within(t, 10.0), format!("{ok}/1000 consistent ({with_logicals} with k >= 1)"))
}

fn c2_known_codes() -> Outcome {
    let start = Instant::now();
    let nk = |c: Candidate| c.valid().map(|c| (c.n(), c.k()));
    let r3 = cyclic_repetition(3);
    let r4 = cyclic_repetition(4);
    let a = nk(hgp(&HgpParams::new(r3.clone(), r3).unwrap()));
    let b = nk(hgp(&HgpParams::new(r4.clone(), r4).unwrap()));
    let gross = nk(bb_from_bits(&BbParams::from_polynomials(12, 6, "x^3 + y + y^2", "y^3 + x + x^2").unwrap()));
    let t = start.elapsed();
    let pass = a == Some((18, 2)) && b == Some((32, 2)) && gross == Some((144, 12)) && within(t, 1.0);
    outcome(pass, format!("hgp(3) {a:?}, hgp(4) {b:?}, gross {gross:?}"))
}

fn c3_decoder_contract() -> Outcome {
    let start = Instant::now();
    let r3 = cyclic_repetition(3);
    let code = hgp(&HgpParams::new(r3.clone(), r3).unwrap()).valid().unwrap();
    let dec_cfg = DecoderConfig::default();
    let ch = DepolarizingChannel::new(0.05).unwrap();
    let dec = CssDecoder::new(&code, dec_cfg.for_channel(&ch)).unwrap();
    let mut violations = 0;
    for shot in 0..10_000 {
        let e = sample_error(&ch, code.n(), &mut shot_rng(7, shot));
        let s = syndrome(&code, &e).unwrap();
        match dec.decode(&s) {
            Ok(ehat) => {
                let sx = code.hz().mat_vec(&ehat.ex).unwrap();
                let sz = code.hx().mat_vec(&ehat.ez).unwrap();
                violations += (sx != s.sx || sz != s.sz) as usize;
            }
            Err(_) => violations += 1,
        }
    }
    let ler = |p: f64| estimate_ler(&code, &DepolarizingChannel::new(p).unwrap(), 10_000, 3, &dec_cfg, &Sequential).unwrap();
    let zero = ler(0.0);
    let (lo, hi) = (ler(0.01), ler(0.10));
    let separated = lo.p_l + 3.0 * lo.std_error < hi.p_l - 3.0 * hi.std_error;
    let t = start.elapsed();
    outcome(
        violations == 0 && zero.p_l == 0.0 && separated && within(t, 60.0),
        format!("{violations} violations; p_L(0) = {}; p_L(0.01) = {:.4} ± {:.4}, p_L(0.10) = {:.4} ± {:.4}", zero.p_l, lo.p_l, lo.std_error, hi.p_l, hi.std_error),
    )
}

fn c4_numerical_kernels() -> Outcome {
    let f2_one = f2(1, 1) == 2.0;
    let f2_gross = (f2(144, 1) - 433f64.log2() / 144.0).abs() <= 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_matern: f64 = 0.0;
    for _ in 0..100 {
        let (r, l, s) = (rng.random_range(0.0..5.0), rng.random_range(0.1..3.0), rng.random_range(0.1..3.0));
        worst_matern = worst_matern.max((matern(r, l, s, Smoothness::Half) - s * (-r / l).exp()).abs());
    }
    let mut worst_z: f64 = 0.0;
    for _ in 0..20 {
        let mu: f64 = rng.random_range(-1.0..1.0);
        let sigma: f64 = rng.random_range(0.05..2.0);
        let f_star: f64 = rng.random_range(-1.0..1.0);
        let samples = 1_000_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..samples {
            let eps: f64 = rng.sample(StandardNormal);
            let v = (mu + sigma * eps - f_star).max(0.0);
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / samples as f64;
        let se = ((sum_sq / samples as f64 - mean * mean) / samples as f64).sqrt();
        worst_z = worst_z.max((expected_improvement(mu, sigma, f_star) - mean).abs() / se);
    }
    outcome(
        f2_one && f2_gross && worst_matern <= 1e-12 && worst_z <= 3.0,
        format!("f2(1,1) exact: {f2_one}; f2(144,1): {f2_gross}; Matérn 1/2 max err {worst_matern:.1e}; EI max |z| {worst_z:.2}"),
    )
}

fn random_codes(space: &SearchSpace, count: usize, rng: &mut ChaCha8Rng) -> Vec<cssbo_core::code::CssCode> {
    let mut seen = BTreeSet::new();
    (0..count)
        .map(|_| {
            let x = space.random_valid(rng, &seen).unwrap();
            seen.insert(x.clone());
            space.candidate(&x).valid().unwrap()
        })
        .collect()
}

/// Hyperparameter gradient `½ tr((ααᵀ − K⁻¹) ∂K)` for log length, log signal, log noise.
fn trace_gradient(s: &Surrogate, z: &Tensor, y: &[f64]) -> [f64; 3] {
    let n = y.len();
    let h = s.hyper();
    let (w, b) = s.mean_weights();
    let mut k = Tensor::zeros(n, n);
    let mut dl = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let r2: f64 = z.row(i).iter().zip(z.row(j)).map(|(p, q)| (p - q) * (p - q)).sum();
            let p = matern_parts(r2, h.length_scale, h.signal_variance, h.nu);
            k[(i, j)] = p.value;
            dl[(i, j)] = p.d_log_length;
        }
    }
    let ds = k.clone();
    let mut dn = Tensor::zeros(n, n);
    for i in 0..n {
        k[(i, i)] += h.noise_variance + s.jitter();
        dn[(i, i)] = h.noise_variance;
    }
    let ch = Cholesky::new(&k).unwrap();
    let resid: Vec<f64> = (0..n).map(|i| y[i] - w.iter().zip(z.row(i)).map(|(a, x)| a * x).sum::<f64>() - b).collect();
    let alpha = ch.solve(&Tensor::column(resid)).into_vec();
    let kinv = ch.inverse();
    let tr = |d: &Tensor| {
        let mut t = 0.0;
        for i in 0..n {
            for j in 0..n {
                t += (alpha[i] * alpha[j] - kinv[(i, j)]) * d[(j, i)];
            }
        }
        0.5 * t
    };
    [tr(&dl), tr(&ds), tr(&dn)]
}

fn c5_gradients() -> Outcome {
    let space = SearchSpace::new(6, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cfg = SurrogateConfig::default();
    cfg.embedding.d_hidden = 4;
    cfg.embedding.d_f = 3;
    let (mut worst_fd, mut worst_trace): (f64, f64) = (0.0, 0.0);
    let mut params = 0;
    for d in 0..3 {
        let codes = random_codes(&space, 20, &mut rng);
        let refs: Vec<_> = codes.iter().collect();
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut s = Surrogate::new(cfg, d).unwrap();
        let w: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
        s.set_mean(&w, 0.3);
        s.set_hyper(rng.random_range(0.5..2.0), rng.random_range(0.5..2.0), rng.random_range(0.05..0.5));
        let g = s.nll_graph(Inputs::Codes(&refs), &y);
        params = s.params().len();
        worst_fd = worst_fd.max(check_gradient(&g, s.params(), 3e-3).unwrap());

        let z = embed_batch(&refs, s.params(), &cfg.embedding).unwrap();
        let (_, grad) = s.log_marginal_likelihood_gradient(Inputs::Codes(&refs), &y).unwrap();
        let want = trace_gradient(&s, &z, &y);
        for (name, w) in ["gp.log_length", "gp.log_signal", "gp.log_noise"].iter().zip(want) {
            let got = grad[s.params().segment(name).unwrap().offset];
            worst_trace = worst_trace.max(((got - w) / w).abs());
        }
    }
    outcome(
        worst_fd <= 1e-4 && worst_trace <= 1e-8,
        format!("finite-difference max rel err {worst_fd:.2e} over {params} parameters; trace form max rel err {worst_trace:.2e}"),
    )
}

fn c6_gp() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut cfg = SurrogateConfig::default();
    cfg.embedding.variant = Variant::None;
    cfg.embedding.d_f = 2;
    let w = [0.4, -0.7];
    let b = 0.25;
    let mean_of = |z: &[f64]| w[0] * z[0] + w[1] * z[1] + b;
    let (ell, sf2, sn2) = (0.8, 1.3, 0.2);

    let mut s = Surrogate::new(cfg, 1).unwrap();
    s.set_mean(&w, b);
    s.set_hyper(ell, sf2, sn2);
    let q = [0.3, -1.1];
    let prior = s.predict_embedding(&q);
    let prior_err = (prior.mean - mean_of(&q)).abs().max((prior.variance - sf2).abs());

    let z1 = [0.5, 0.2];
    let y1 = 1.7;
    s.condition_with(Inputs::Fixed(&Tensor::from_vec(1, 2, z1.to_vec())), &[y1], Standardization::default()).unwrap();
    let r = ((q[0] - z1[0]).powi(2) + (q[1] - z1[1]).powi(2)).sqrt();
    let kq = matern(r, ell, sf2, Smoothness::FiveHalves);
    let denom = sf2 + sn2 + s.jitter();
    let post = s.predict_embedding(&q);
    let one_point_err = (post.mean - (mean_of(&q) + kq * (y1 - mean_of(&z1)) / denom)).abs().max((post.variance - (sf2 - kq * kq / denom)).abs());

    let n = 10;
    let data: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let z = Tensor::from_vec(n, 2, data);
    let y: Vec<f64> = (0..n).map(|i| (z[(i, 0)] * 1.5).sin() + z[(i, 1)]).collect();
    s.set_hyper(ell, sf2, 1e-10);
    s.condition_with(Inputs::Fixed(&z), &y, Standardization::default()).unwrap();
    let interp_err = (0..n).map(|i| (s.predict_embedding(z.row(i)).mean - y[i]).abs()).fold(0.0, f64::max);
    outcome(
        prior_err <= 1e-12 && interp_err <= 1e-4 && one_point_err <= 1e-12,
        format!("prior err {prior_err:.1e}; 1-point posterior err {one_point_err:.1e}; interpolation err {interp_err:.1e}"),
    )
}

fn workers() -> Threaded {
    Threaded::new(std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn c7_surrogate_value() -> Outcome {
    let start = Instant::now();
    let space = SearchSpace::new(6, 3).unwrap();
    let obj = ObjectiveConfig { lambda: 1.0, physical_p: 0.05, shots: 10_000 };
    let ds = build_dataset(&space, 100, &obj, &DecoderConfig::default(), 7, &workers()).unwrap();
    let mut results = Vec::new();
    for v in [Variant::ThreeView, Variant::None] {
        let mut cfg = SurrogateConfig::default();
        cfg.embedding.variant = v;
        results.extend(evaluate_variant(&ds, &cfg, 5, 0.8, 7).unwrap());
    }
    let summary = summarize(&results);
    let (three, none) = (&summary[0], &summary[1]);
    let t = start.elapsed();
    outcome(
        three.mean_r2 > 0.0 && three.mean_avg_nll < none.mean_avg_nll && none.mean_r2 <= 0.1 && within(t, 1800.0),
        format!(
            "three-view R² {:.3}, NLL {:.3}; none R² {:.3}, NLL {:.3}; {:.0} s",
            three.mean_r2,
            three.mean_avg_nll,
            none.mean_r2,
            none.mean_avg_nll,
            t.as_secs_f64()
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn final_best(t: &RunTrace) -> f64 {
    *t.best_so_far.last().unwrap()
}

fn nondecreasing(t: &RunTrace) -> bool {
    t.best_so_far.windows(2).all(|w| w[1] >= w[0])
}

fn c8_optimizers() -> Outcome {
    let start = Instant::now();
    let space = SearchSpace::new(6, 3).unwrap();
    let obj = ObjectiveConfig { lambda: 1.0, physical_p: 0.05, shots: 1000 };
    let exec = workers();
    let bo_cfg = BoConfig::default();
    let budget = bo_cfg.budget();
    let (mut bo, mut ea, mut rs) = (Vec::new(), Vec::new(), Vec::new());
    let mut monotone = true;
    for seed in 0..5 {
        let dec = DecoderConfig::default();
        let runs = [
            bo_run(&mut CodeEvaluator::new(space, obj, dec, seed, &exec).unwrap(), &bo_cfg, seed, &mut ()).unwrap().trace,
            ea_run(&mut CodeEvaluator::new(space, obj, dec, seed, &exec).unwrap(), &EaConfig::default(), budget, seed, &mut ()).unwrap(),
            rs_run(&mut CodeEvaluator::new(space, obj, dec, seed, &exec).unwrap(), budget, seed, &mut ()).unwrap(),
        ];
        monotone &= runs.iter().all(|t| nondecreasing(t) && t.len() == budget);
        bo.push(final_best(&runs[0]));
        ea.push(final_best(&runs[1]));
        rs.push(final_best(&runs[2]));
    }
    let (bo_med, ea_med, rs_med) = (median(bo), median(ea), median(rs));

    let mut planted_cfg = BoConfig { inputs: InputMode::Bits, ..BoConfig::default() };
    planted_cfg.surrogate.embedding.variant = Variant::None;
    planted_cfg.surrogate.embedding.d_f = space.dimension();
    let mut planted_wins = 0;
    for seed in 0..5 {
        let b = bo_run(&mut PlantedQuadratic::new(space, seed).unwrap(), &planted_cfg, seed, &mut ()).unwrap().trace;
        let r = rs_run(&mut PlantedQuadratic::new(space, seed).unwrap(), budget, seed, &mut ()).unwrap();
        monotone &= nondecreasing(&b) && nondecreasing(&r);
        planted_wins += (final_best(&b) >= final_best(&r)) as usize;
    }
    let t = start.elapsed();
    outcome(
        bo_med >= rs_med && monotone && planted_wins == 5 && within(t, 3600.0),
        format!(
            "median final best BO {bo_med:.4}, EA {ea_med:.4}, RS {rs_med:.4}; curves nondecreasing: {monotone}; planted BO >= RS in {planted_wins}/5; {:.0} s",
            t.as_secs_f64()
        ),
    )
}

fn c9_pseudo_distance() -> Outcome {
    let p = 0.05;
    let (mut worst_fit, mut worst_inv): (f64, f64) = (0.0, 0.0);
    for n in [36, 144] {
        let model = fit_pseudo_model(n, p).unwrap();
        for &(t, _) in &model.grid {
            let exact = ln_binomial_tail_int(n, t as usize, p) / std::f64::consts::LN_2;
            worst_fit = worst_fit.max((model.eval(t) - exact).abs());
        }
        let (lo, hi) = model.t_range();
        for i in 0..=100 {
            let t = lo + (hi - lo) * i as f64 / 100.0;
            let back = pseudo_t_log2(&model, model.eval(t));
            worst_inv = worst_inv.max((back.t_hat - t).abs());
        }
    }
    outcome(worst_fit <= 0.5 && worst_inv <= 1e-6, format!("max fit residual {worst_fit:.3} log2; max roundtrip err {worst_inv:.1e}"))
}

const DETERMINISM_CONFIG: &str = r#"
seed = 11
[channel]
p = 0.05
[evaluation]
shots = 300
[search]
ell = 6
m = 3
[surrogate.embedding]
d_hidden = 8
d_f = 4
[surrogate.gp]
init_steps = 20
refit_steps = 5
[optimizer]
method = "bo"
nu0 = 4
iterations = 4
"#;

fn records(dir: &Path) -> Vec<String> {
    let text = fs::read_to_string(dir.join(TRACE)).unwrap();
    text.lines()
        .map(|l| {
            let line: TraceLine = serde_json::from_str(l).unwrap();
            serde_json::to_string(&line.record).unwrap()
        })
        .collect()
}

fn c10_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut problems = Vec::new();
    for method in ["bo", "ea", "rs"] {
        let mut cfg = RunConfig::from_toml(DETERMINISM_CONFIG).unwrap();
        cfg.optimizer.method = serde_json::from_value(serde_json::Value::String(method.into())).unwrap();
        cfg.optimizer.budget = Some(8);
        let dir = |name: &str| tmp.path().join(format!("{method}-{name}"));
        run::optimize(&cfg, 11, &dir("a"), false, &Threaded::new(1)).unwrap();
        run::optimize(&cfg, 11, &dir("b"), false, &Threaded::new(1)).unwrap();
        run::optimize(&cfg, 11, &dir("c"), false, &Threaded::new(3)).unwrap();
        let reference = records(&dir("a"));
        if records(&dir("b")) != reference {
            problems.push(format!("{method}: rerun differs"));
        }
        if records(&dir("c")) != reference {
            problems.push(format!("{method}: worker count changes the trace"));
        }
        if method == "bo" && fs::read(dir("a").join(CHECKPOINT)).unwrap() != fs::read(dir("c").join(CHECKPOINT)).unwrap() {
            problems.push("bo: checkpoints differ".into());
        }

        // Simulated kill: keep five records and half of the sixth.
        let part = dir("resumed");
        fs::create_dir_all(&part).unwrap();
        fs::copy(dir("a").join(MANIFEST), part.join(MANIFEST)).unwrap();
        let text = fs::read_to_string(dir("a").join(TRACE)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let mut torn: String = lines[..5].iter().map(|l| format!("{l}\n")).collect();
        torn.push_str(&lines[5][..lines[5].len() / 2]);
        fs::write(part.join(TRACE), torn).unwrap();
        let s = run::optimize(&cfg, 11, &part, true, &Threaded::new(2)).unwrap();
        if s.resumed_from != 5 || records(&part) != reference {
            problems.push(format!("{method}: resumed run differs"));
        }
    }
    let detail = if problems.is_empty() { "reruns, worker counts 1/3 and kill-and-resume agree for bo, ea, rs".into() } else { problems.join("; ") };
    outcome(problems.is_empty(), detail)
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "CSS validity sweep", c1_css_validity),
        (2, "known-code oracles", c2_known_codes),
        (3, "decoder contract", c3_decoder_contract),
        (4, "numerical kernels", c4_numerical_kernels),
        (5, "gradient suite", c5_gradients),
        (6, "GP correctness", c6_gp),
        (7, "surrogate value", c7_surrogate_value),
        (8, "optimizer comparison", c8_optimizers),
        (9, "pseudo-distance self-consistency", c9_pseudo_distance),
        (10, "determinism and resume", c10_determinism),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += !o.pass as usize;
        println!("{} [{id}] {name}: {} ({:.1} s)", if o.pass { "PASS" } else { "FAIL" }, o.detail, start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
