//! Message-passing embedding of a CSS code's chain complex.
//!
//! A code is seen through three tripartite graphs: the decode view
//! (Z checks, qubits, X checks), the homology view (logical Z classes,
//! qubits, Z checks) and the dual view (logical X classes, qubits, X checks).
//! Each view runs its own stack of message-passing layers; mean-pooled part
//! features are concatenated across views and mapped to the output width by
//! a small perceptron.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::code::CssCode;
use crate::dense::Tensor;
use crate::diff::{Graph, NodeId, ParamVector, Segment};
use crate::error::{Error, Result};
use crate::gf2::BitMatrix;
use crate::noise::derive_seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    ThreeView,
    OneView,
    /// Fixed random projection of the flattened check matrices.
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Keeps degree information, which mean pooling loses on biregular graphs.
    #[default]
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub d_hidden: usize,
    pub d_f: usize,
    pub layers_per_view: usize,
    pub aggregation: Aggregation,
    pub variant: Variant,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { d_hidden: 32, d_f: 16, layers_per_view: 2, aggregation: Aggregation::Sum, variant: Variant::ThreeView }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_hidden == 0 || self.d_f == 0 {
            return Err(Error::Config("embedding widths must be at least 1".into()));
        }
        Ok(())
    }
}

/// Cell types of the chain complex and its homology.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    /// X checks (`C0`).
    XChecks,
    /// Qubits (`C1`).
    Qubits,
    /// Z checks (`C2`).
    ZChecks,
    /// Logical Z classes (`H1`).
    LogicalZ,
    /// Logical X classes (dual homology).
    LogicalX,
}

impl Part {
    const ALL: [Part; 5] = [Part::XChecks, Part::Qubits, Part::ZChecks, Part::LogicalZ, Part::LogicalX];

    fn key(self) -> &'static str {
        match self {
            Part::XChecks => "c0",
            Part::Qubits => "c1",
            Part::ZChecks => "c2",
            Part::LogicalZ => "h1",
            Part::LogicalX => "h1d",
        }
    }

    pub fn count(self, code: &CssCode) -> usize {
        match self {
            Part::XChecks => code.hx().rows(),
            Part::Qubits => code.n(),
            Part::ZChecks => code.hz().rows(),
            Part::LogicalZ | Part::LogicalX => code.k(),
        }
    }
}

/// Incidence structures of the complex; each is used in both directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Incidence {
    /// `∂2 = Hzᵀ` between Z checks and qubits.
    D2,
    /// `∂1 = Hx` between qubits and X checks.
    D1,
    /// `Lzᵀ` between logical Z classes and qubits.
    IotaZ,
    /// `Lxᵀ` between logical X classes and qubits.
    IotaX,
}

impl Incidence {
    /// (row part, column part, matrix) with rows indexing the first part.
    fn matrix(self, code: &CssCode) -> (Part, Part, &BitMatrix) {
        match self {
            Incidence::D2 => (Part::ZChecks, Part::Qubits, code.hz()),
            Incidence::D1 => (Part::XChecks, Part::Qubits, code.hx()),
            Incidence::IotaZ => (Part::LogicalZ, Part::Qubits, code.lz()),
            Incidence::IotaX => (Part::LogicalX, Part::Qubits, code.lx()),
        }
    }

    fn key(self) -> &'static str {
        match self {
            Incidence::D2 => "d2",
            Incidence::D1 => "d1",
            Incidence::IotaZ => "iz",
            Incidence::IotaX => "ix",
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ViewSpec {
    name: &'static str,
    parts: &'static [Part],
    incidences: &'static [Incidence],
}

const DECODE: ViewSpec =
    ViewSpec { name: "decode", parts: &[Part::ZChecks, Part::Qubits, Part::XChecks], incidences: &[Incidence::D2, Incidence::D1] };
const HOMOLOGY: ViewSpec = ViewSpec {
    name: "homology",
    parts: &[Part::LogicalZ, Part::Qubits, Part::ZChecks],
    incidences: &[Incidence::IotaZ, Incidence::D2],
};
const DUAL: ViewSpec =
    ViewSpec { name: "dual", parts: &[Part::LogicalX, Part::Qubits, Part::XChecks], incidences: &[Incidence::IotaX, Incidence::D1] };
const SINGLE: ViewSpec = ViewSpec {
    name: "single",
    parts: &Part::ALL,
    incidences: &[Incidence::D2, Incidence::D1, Incidence::IotaZ, Incidence::IotaX],
};

fn view_specs(variant: Variant) -> &'static [ViewSpec] {
    match variant {
        Variant::ThreeView => &[DECODE, HOMOLOGY, DUAL],
        Variant::OneView => &[SINGLE],
        Variant::None => &[],
    }
}

/// One directed relation: messages flow from `source` nodes into `target` nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Relation {
    pub name: String,
    pub source: Part,
    pub target: Part,
    /// `(target index, source index)` pairs.
    pub edges: Vec<(u32, u32)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct View {
    pub name: &'static str,
    pub parts: Vec<(Part, usize)>,
    pub relations: Vec<Relation>,
}

impl View {
    pub fn node_counts(&self) -> Vec<usize> {
        self.parts.iter().map(|p| p.1).collect()
    }

    pub fn relation(&self, name: &str) -> Option<&Relation> {
        self.relations.iter().find(|r| r.name == name)
    }
}

fn build_view(spec: &ViewSpec, code: &CssCode) -> View {
    let parts = spec.parts.iter().map(|&p| (p, p.count(code))).collect();
    let mut relations = Vec::new();
    for &inc in spec.incidences {
        let (row_part, col_part, m) = inc.matrix(code);
        let mut forward = Vec::new();
        for r in 0..m.rows() {
            for c in m.row_ones(r) {
                forward.push((c as u32, r as u32));
            }
        }
        let backward = forward.iter().map(|&(t, s)| (s, t)).collect();
        relations.push(Relation { name: inc.key().into(), source: row_part, target: col_part, edges: forward });
        relations.push(Relation { name: format!("{}t", inc.key()), source: col_part, target: row_part, edges: backward });
    }
    View { name: spec.name, parts, relations }
}

/// The decode, homology and dual views of a code.
pub fn build_views(code: &CssCode) -> Vec<View> {
    view_specs(Variant::ThreeView).iter().map(|s| build_view(s, code)).collect()
}

/// All five parts and eight relations in one graph.
pub fn build_single_view(code: &CssCode) -> View {
    build_view(&SINGLE, code)
}

fn relation_names(spec: &ViewSpec) -> Vec<String> {
    spec.incidences.iter().flat_map(|i| [String::from(i.key()), format!("{}t", i.key())]).collect()
}

fn readout_width(cfg: &EmbeddingConfig) -> usize {
    view_specs(cfg.variant).iter().map(|s| s.parts.len()).sum::<usize>() * cfg.d_hidden
}

/// Fresh embedding parameters, uniform in `±1/√fan_in`.
pub fn init_params<R: Rng + ?Sized>(cfg: &EmbeddingConfig, rng: &mut R) -> ParamVector {
    let mut p = ParamVector::new();
    push_params(&mut p, cfg, rng);
    p
}

/// Appends embedding segments (all prefixed `emb.`) to an existing vector.
pub fn push_params<R: Rng + ?Sized>(p: &mut ParamVector, cfg: &EmbeddingConfig, rng: &mut R) {
    if cfg.variant == Variant::None {
        return;
    }
    let d = cfg.d_hidden;
    let mut uniform = |p: &mut ParamVector, name: String, rows: usize, cols: usize, fan_in: usize| {
        let bound = 1.0 / libm::sqrt(fan_in as f64);
        p.push(&name, rows, cols, || rng.random_range(-bound..bound));
    };
    for part in Part::ALL {
        uniform(p, format!("emb.type.{}", part.key()), 1, d, 1);
    }
    for spec in view_specs(cfg.variant) {
        for layer in 0..cfg.layers_per_view {
            for rel in relation_names(spec) {
                let pre = format!("emb.{}.l{layer}.{rel}", spec.name);
                uniform(p, format!("{pre}.msg.w_tgt"), d, d, 2 * d);
                uniform(p, format!("{pre}.msg.w_src"), d, d, 2 * d);
                uniform(p, format!("{pre}.msg.b1"), 1, d, 2 * d);
                uniform(p, format!("{pre}.msg.w2"), d, d, d);
                uniform(p, format!("{pre}.msg.b2"), 1, d, d);
                uniform(p, format!("{pre}.upd.w_self"), d, d, 2 * d);
                uniform(p, format!("{pre}.upd.w_agg"), d, d, 2 * d);
                uniform(p, format!("{pre}.upd.b1"), 1, d, 2 * d);
                uniform(p, format!("{pre}.upd.w2"), d, d, d);
                uniform(p, format!("{pre}.upd.b2"), 1, d, d);
            }
        }
    }
    let r = readout_width(cfg);
    uniform(p, "emb.out.w1".into(), r, d, r);
    uniform(p, "emb.out.b1".into(), 1, d, r);
    uniform(p, "emb.out.w2".into(), d, cfg.d_f, d);
    uniform(p, "emb.out.b2".into(), 1, cfg.d_f, d);
}

fn seg<'a>(theta: &'a ParamVector, name: &str) -> &'a Segment {
    theta.segment(name).unwrap_or_else(|| panic!("missing parameter segment {name}"))
}

/// `silu(x W1 + b1) W2 + b2` for a 1×r row.
fn mlp_row(g: &mut Graph, theta: &ParamVector, x: NodeId, prefix: &str) -> NodeId {
    let w1 = g.param(seg(theta, &format!("{prefix}.w1")));
    let b1 = g.param(seg(theta, &format!("{prefix}.b1")));
    let w2 = g.param(seg(theta, &format!("{prefix}.w2")));
    let b2 = g.param(seg(theta, &format!("{prefix}.b2")));
    let h = g.matmul(x, w1);
    let h = g.add_row(h, b1);
    let h = g.silu(h);
    let o = g.matmul(h, w2);
    g.add_row(o, b2)
}

/// One relation's update of its target part.
///
/// The message perceptron's second layer is linear, so it is applied once
/// after aggregation instead of on every edge; the bias is scaled by the
/// total aggregation weight each node receives.
fn relation_update(
    g: &mut Graph,
    theta: &ParamVector,
    prefix: &str,
    rel: &Relation,
    x_target: NodeId,
    x_source: NodeId,
    n_target: usize,
    aggregation: Aggregation,
) -> NodeId {
    let p = |g: &mut Graph, name: &str| g.param(seg(theta, &format!("{prefix}.{name}")));
    let w_tgt = p(g, "msg.w_tgt");
    let w_src = p(g, "msg.w_src");
    let b1 = p(g, "msg.b1");
    let w2 = p(g, "msg.w2");
    let b2 = p(g, "msg.b2");

    let mut degree = vec![0usize; n_target];
    for &(t, _) in &rel.edges {
        degree[t as usize] += 1;
    }
    let weights: Vec<f64> = rel
        .edges
        .iter()
        .map(|&(t, _)| match aggregation {
            Aggregation::Sum => 1.0,
            Aggregation::Mean => 1.0 / degree[t as usize] as f64,
        })
        .collect();
    let mass: Vec<f64> = degree
        .iter()
        .map(|&d| match aggregation {
            Aggregation::Sum => d as f64,
            Aggregation::Mean => (d > 0) as u8 as f64,
        })
        .collect();
    let targets: Vec<u32> = rel.edges.iter().map(|e| e.0).collect();
    let sources: Vec<u32> = rel.edges.iter().map(|e| e.1).collect();

    let t = g.matmul(x_target, w_tgt);
    let s = g.matmul(x_source, w_src);
    let te = g.gather(t, targets.clone());
    let se = g.gather(s, sources);
    let h = g.add(te, se);
    let h = g.add_row(h, b1);
    let h = g.silu(h);
    let agg = g.scatter(h, targets, weights, n_target);
    let agg = g.matmul(agg, w2);
    let mass = g.constant(Tensor::column(mass));
    let bias = g.matmul(mass, b2);
    let agg = g.add(agg, bias);

    let w_self = p(g, "upd.w_self");
    let w_agg = p(g, "upd.w_agg");
    let u_b1 = p(g, "upd.b1");
    let u_w2 = p(g, "upd.w2");
    let u_b2 = p(g, "upd.b2");
    let a = g.matmul(x_target, w_self);
    let b = g.matmul(agg, w_agg);
    let h = g.add(a, b);
    let h = g.add_row(h, u_b1);
    let h = g.silu(h);
    let o = g.matmul(h, u_w2);
    g.add_row(o, u_b2)
}

fn view_readout(g: &mut Graph, theta: &ParamVector, view: &View, cfg: &EmbeddingConfig) -> NodeId {
    let d = cfg.d_hidden;
    let mut feats: Vec<NodeId> = view
        .parts
        .iter()
        .map(|&(part, count)| {
            let ty = g.param(seg(theta, &format!("emb.type.{}", part.key())));
            let ones = g.constant(Tensor::filled(count, 1, 1.0));
            g.matmul(ones, ty)
        })
        .collect();
    let index_of = |part: Part| view.parts.iter().position(|p| p.0 == part).unwrap();
    for layer in 0..cfg.layers_per_view {
        let mut incoming: Vec<Vec<NodeId>> = vec![Vec::new(); view.parts.len()];
        for rel in &view.relations {
            let (ti, si) = (index_of(rel.target), index_of(rel.source));
            let prefix = format!("emb.{}.l{layer}.{}", view.name, rel.name);
            let n_target = view.parts[ti].1;
            let upd = relation_update(g, theta, &prefix, rel, feats[ti], feats[si], n_target, cfg.aggregation);
            incoming[ti].push(upd);
        }
        for (i, updates) in incoming.into_iter().enumerate() {
            if updates.is_empty() {
                continue;
            }
            let count = updates.len();
            let mut total = updates[0];
            for &u in &updates[1..] {
                total = g.add(total, u);
            }
            feats[i] = if count > 1 { g.scale(total, 1.0 / count as f64) } else { total };
        }
    }
    let pooled: Vec<NodeId> = feats.iter().map(|&f| g.mean_rows(f)).collect();
    debug_assert!(pooled.iter().all(|&p| g.shape(p) == (1, d)));
    g.concat_cols(pooled)
}

/// Fixed standard-normal projection weight for input bit `i` and output `j`.
fn projection_entry(i: usize, j: usize) -> f64 {
    let h = derive_seed(derive_seed(0x5eed_0f_b175, i as u64), j as u64);
    let u1 = ((h >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let u2 = ((derive_seed(h, 1) >> 11) as f64) / (1u64 << 53) as f64;
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

fn flattened_projection(code: &CssCode, d_f: usize) -> Tensor {
    let mut out = vec![0.0; d_f];
    let mut offset = 0;
    let mut len = 0;
    for m in [code.hx(), code.hz()] {
        for r in 0..m.rows() {
            for c in m.row_ones(r) {
                let i = offset + r * m.cols() + c;
                for (j, o) in out.iter_mut().enumerate() {
                    *o += projection_entry(i, j);
                }
            }
        }
        offset += m.rows() * m.cols();
        len += m.rows() * m.cols();
    }
    let scale = 1.0 / libm::sqrt(len.max(1) as f64);
    Tensor::from_vec(1, d_f, out.into_iter().map(|x| x * scale).collect())
}

/// Adds the embedding of `code` to `g`; the result is a 1×d_f row.
pub fn embed_node(g: &mut Graph, theta: &ParamVector, code: &CssCode, cfg: &EmbeddingConfig) -> NodeId {
    let readout = match cfg.variant {
        Variant::None => return g.constant(flattened_projection(code, cfg.d_f)),
        Variant::ThreeView => {
            let views = build_views(code);
            let rows: Vec<NodeId> = views.iter().map(|v| view_readout(g, theta, v, cfg)).collect();
            g.concat_cols(rows)
        }
        Variant::OneView => view_readout(g, theta, &build_single_view(code), cfg),
    };
    mlp_row(g, theta, readout, "emb.out")
}

/// Embeddings of several codes stacked as rows.
pub fn embed_batch_node(g: &mut Graph, theta: &ParamVector, codes: &[&CssCode], cfg: &EmbeddingConfig) -> NodeId {
    let rows: Vec<NodeId> = codes.iter().map(|c| embed_node(g, theta, c, cfg)).collect();
    g.concat_rows(rows)
}

pub fn embed(code: &CssCode, theta: &ParamVector, cfg: &EmbeddingConfig) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let out = embed_node(&mut g, theta, code, cfg);
    Ok(g.evaluate_node(theta, out)?.into_vec())
}

pub fn embed_batch(codes: &[&CssCode], theta: &ParamVector, cfg: &EmbeddingConfig) -> Result<Tensor> {
    let mut g = Graph::new();
    let out = embed_batch_node(&mut g, theta, codes, cfg);
    g.evaluate_node(theta, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::{bb_from_bits, cyclic_repetition, hgp, BbParams, HgpParams};
    use crate::diff::check_gradient;
    use crate::gf2::BitVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toric3() -> CssCode {
        let h = cyclic_repetition(3);
        hgp(&HgpParams::new(h.clone(), h).unwrap()).valid().unwrap()
    }

    fn random_bb(rng: &mut ChaCha8Rng) -> CssCode {
        loop {
            let bits: Vec<bool> = (0..BbParams::dimension(6, 3)).map(|_| rng.random()).collect();
            if let Some(c) = bb_from_bits(&BbParams::new(6, 3, BitVector::from_bools(&bits)).unwrap()).valid() {
                return c;
            }
        }
    }

    fn small() -> EmbeddingConfig {
        EmbeddingConfig { d_hidden: 4, d_f: 3, ..EmbeddingConfig::default() }
    }

    #[test]
    fn view_shapes_on_toric_code() {
        let code = toric3();
        let views = build_views(&code);
        assert_eq!(views[0].node_counts(), vec![9, 18, 9]);
        assert_eq!(views[1].node_counts(), vec![2, 18, 9]);
        assert_eq!(views[2].node_counts(), vec![2, 18, 9]);
        let d1 = views[0].relation("d1").unwrap();
        let mut from_edges = BitMatrix::zeros(code.hx().rows(), code.n());
        for &(q, c) in &d1.edges {
            from_edges.set(c as usize, q as usize, true);
        }
        assert_eq!(&from_edges, code.hx());
        let iz = views[1].relation("izt").unwrap();
        assert_eq!(iz.edges.len(), code.lz().count_ones());
        assert_eq!(build_single_view(&code).relations.len(), 8);
    }

    #[test]
    fn single_logical_cell() {
        // HGP of a 2×3 repetition check has k = 1.
        let h = BitMatrix::from_dense(&[&[1, 1, 0], &[0, 1, 1]]);
        let code = hgp(&HgpParams::new(h.clone(), h).unwrap()).valid().unwrap();
        assert_eq!(code.k(), 1);
        let views = build_views(&code);
        assert_eq!(views[1].parts[0].1, 1);
        assert_eq!(views[2].parts[0].1, 1);
    }

    #[test]
    fn output_shape_and_purity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for variant in [Variant::ThreeView, Variant::OneView, Variant::None] {
            let cfg = EmbeddingConfig { variant, ..small() };
            let theta = init_params(&cfg, &mut rng);
            for code in [toric3(), random_bb(&mut rng)] {
                let a = embed(&code, &theta, &cfg).unwrap();
                assert_eq!(a.len(), 3);
                assert_eq!(a, embed(&code.clone(), &theta, &cfg).unwrap());
            }
        }
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for aggregation in [Aggregation::Mean, Aggregation::Sum] {
            for variant in [Variant::ThreeView, Variant::OneView] {
                let cfg = EmbeddingConfig { variant, aggregation, ..small() };
                let theta = init_params(&cfg, &mut rng);
                let code = random_bb(&mut rng);
                let mut perm: Vec<usize> = (0..code.n()).collect();
                for i in (1..perm.len()).rev() {
                    perm.swap(i, rng.random_range(0..=i));
                }
                let a = embed(&code, &theta, &cfg).unwrap();
                let b = embed(&code.permute_qubits(&perm), &theta, &cfg).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() < 1e-10, "{variant:?} {aggregation:?}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn isolated_node_sees_zero_aggregate() {
        // A relation without edges leaves only the bias path: φ(x, mass·b2)
        // with mass 0, i.e. φ(x, 0).
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = small();
        let theta = init_params(&cfg, &mut rng);
        let rel = Relation { name: "d1".into(), source: Part::Qubits, target: Part::XChecks, edges: Vec::new() };
        let prefix = "emb.decode.l0.d1";
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(2, 4, (0..8).map(|i| i as f64 * 0.1).collect()));
        let src = g.constant(Tensor::filled(3, 4, 0.7));
        let out = relation_update(&mut g, &theta, prefix, &rel, x, src, 2, Aggregation::Mean);
        let got = g.evaluate_node(&theta, out).unwrap();

        let get = |n: &str| theta.tensor(seg(&theta, &format!("{prefix}.{n}")));
        let xt = Tensor::from_vec(2, 4, (0..8).map(|i| i as f64 * 0.1).collect());
        let mut h = xt.matmul(&get("upd.w_self"));
        for r in 0..2 {
            for (v, b) in h.row_mut(r).iter_mut().zip(get("upd.b1").data()) {
                *v += b;
                *v *= 1.0 / (1.0 + libm::exp(-*v));
            }
        }
        let mut want = h.matmul(&get("upd.w2"));
        for r in 0..2 {
            for (v, b) in want.row_mut(r).iter_mut().zip(get("upd.b2").data()) {
                *v += b;
            }
        }
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_of_identical_messages() {
        // Every edge into a node carries the same message when all source
        // features agree, so the mean equals that single message.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = small();
        let theta = init_params(&cfg, &mut rng);
        let prefix = "emb.decode.l0.d1";
        let single = Relation { name: "d1".into(), source: Part::Qubits, target: Part::XChecks, edges: vec![(0, 0)] };
        let many = Relation {
            name: "d1".into(),
            source: Part::Qubits,
            target: Part::XChecks,
            edges: vec![(0, 0), (0, 1), (0, 2)],
        };
        let run = |rel: &Relation| {
            let mut g = Graph::new();
            let x = g.constant(Tensor::filled(1, 4, 0.3));
            let src = g.constant(Tensor::filled(3, 4, -0.2));
            let out = relation_update(&mut g, &theta, prefix, rel, x, src, 1, Aggregation::Mean);
            g.evaluate_node(&theta, out).unwrap()
        };
        let (a, b) = (run(&single), run(&many));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for variant in [Variant::ThreeView, Variant::OneView] {
            let cfg = EmbeddingConfig { variant, d_hidden: 3, d_f: 2, layers_per_view: 2, aggregation: Aggregation::Sum };
            let theta = init_params(&cfg, &mut rng);
            let codes = [toric3(), random_bb(&mut rng)];
            let refs: Vec<&CssCode> = codes.iter().collect();
            let mut g = Graph::new();
            let z = embed_batch_node(&mut g, &theta, &refs, &cfg);
            let sq = g.mul(z, z);
            let s = g.sum(sq);
            g.set_output(s);
            let err = check_gradient(&g, &theta, 1e-5).unwrap();
            assert!(err < 1e-4, "{variant:?}: {err}");
        }
    }

    #[test]
    fn projection_baseline_is_fixed() {
        let code = toric3();
        let a = flattened_projection(&code, 5);
        assert_eq!(a, flattened_projection(&code, 5));
        assert!(a.data().iter().any(|&x| x != 0.0));
        // Roughly standard normal entries.
        let vals: Vec<f64> = (0..4000).map(|i| projection_entry(i, 0)).collect();
        let mean = vals.iter().sum::<f64>() / 4000.0;
        let var = vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4000.0;
        assert!(mean.abs() < 0.1 && (var - 1.0).abs() < 0.1, "{mean} {var}");
    }
}
