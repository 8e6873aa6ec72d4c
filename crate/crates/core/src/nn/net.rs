//! Policy and value networks over the three observation encodings.
//!
//! One `Policy` owns the encoder parameters plus the actor and critic
//! heads (three tanh layers of 128 each). Graph observations run through
//! a single-head attention layer restricted to the graph's edges, with
//! degree features as positional encoding and edge features added to the
//! pre-softmax scores, then a mean readout per graph. Inference reuses
//! the same tape forward as training, so sampled log-probabilities match
//! the update pass exactly.

use crate::action::ActionLayout;
use crate::grid::{Grid, GridState};
use crate::nn::params::Params;
use crate::nn::tape::{Tape, Var};
use crate::obs::{
    self, ElemGraphObs, SubGraphObs, BUS_FEAT, ELEM_EDGE_FEAT, GEN_FEAT, LINE_FEAT, LOAD_FEAT,
    SHUNT_FEAT, STORAGE_FEAT, SUB_EDGE_FEAT, SUB_NODE_FEAT,
};
use crate::powerflow::PowerFlowResult;
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Width of every latent in the network.
pub const HIDDEN: usize = 128;

// ====================================================================
// Encoder selection
// ====================================================================

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    Flat,
    SubGraph,
    ElemGraph,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 3] =
        [EncoderKind::Flat, EncoderKind::SubGraph, EncoderKind::ElemGraph];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Flat => "flat",
            EncoderKind::SubGraph => "sub-graph",
            EncoderKind::ElemGraph => "elem-graph",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

// ====================================================================
// Observations and batches
// ====================================================================

/// One environment observation in whichever encoding the policy uses.
#[derive(Clone, Debug)]
pub enum Observation {
    Flat(Array1<f64>),
    Sub(SubGraphObs),
    Elem(ElemGraphObs),
}

/// Shared connectivity of a collated graph batch: directed edges (both
/// directions of every input edge, plus one self-loop per node), degree
/// features, and the node-to-graph assignment for the mean readout.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub edge_src: Vec<usize>,
    pub edge_dst: Vec<usize>,
    pub edge_feat: Array2<f64>,
    pub deg_feat: Array2<f64>,
    pub node_graph: Vec<usize>,
    pub n_nodes: usize,
    pub n_graphs: usize,
}

#[derive(Clone, Debug)]
pub struct SubBatch {
    pub node_feat: Array2<f64>,
    pub graph: GraphBatch,
}

/// Element graphs batch class-major: all bus rows, then all generator,
/// load, and line rows across the batch, so each class keeps a single
/// typed projection.
#[derive(Clone, Debug)]
pub struct ElemBatch {
    pub bus_feat: Array2<f64>,
    pub gen_feat: Array2<f64>,
    pub load_feat: Array2<f64>,
    pub line_feat: Array2<f64>,
    pub graph: GraphBatch,
}

#[derive(Clone, Debug)]
pub enum ObsBatch {
    Flat(Array2<f64>),
    Sub(SubBatch),
    Elem(ElemBatch),
}

impl ObsBatch {
    pub fn n_graphs(&self) -> usize {
        match self {
            ObsBatch::Flat(x) => x.nrows(),
            ObsBatch::Sub(b) => b.graph.n_graphs,
            ObsBatch::Elem(b) => b.graph.n_graphs,
        }
    }
}

/// Accumulates directed edges and finishes with self-loops and degree
/// counts.
struct EdgeAccum {
    src: Vec<usize>,
    dst: Vec<usize>,
    feat: Vec<f64>,
    feat_width: usize,
}

impl EdgeAccum {
    fn new(feat_width: usize) -> Self {
        EdgeAccum {
            src: Vec::new(),
            dst: Vec::new(),
            feat: Vec::new(),
            feat_width,
        }
    }

    fn push(&mut self, src: usize, dst: usize, feat: &[f64]) {
        debug_assert_eq!(feat.len(), self.feat_width);
        self.src.push(src);
        self.dst.push(dst);
        self.feat.extend_from_slice(feat);
    }

    fn finish(mut self, node_graph: Vec<usize>, n_graphs: usize) -> GraphBatch {
        let n_nodes = node_graph.len();
        let zeros = vec![0.0; self.feat_width];
        for i in 0..n_nodes {
            self.src.push(i);
            self.dst.push(i);
            self.feat.extend_from_slice(&zeros);
        }
        let mut deg_feat = Array2::zeros((n_nodes, 2));
        for (&s, &d) in self.src.iter().zip(&self.dst) {
            deg_feat[(d, 0)] += 1.0;
            deg_feat[(s, 1)] += 1.0;
        }
        let n_edges = self.src.len();
        GraphBatch {
            edge_src: self.src,
            edge_dst: self.dst,
            edge_feat: Array2::from_shape_vec((n_edges, self.feat_width), self.feat).unwrap(),
            deg_feat,
            node_graph,
            n_nodes,
            n_graphs,
        }
    }
}

pub fn collate_flat(rows: &[Array1<f64>]) -> ObsBatch {
    assert!(!rows.is_empty());
    let cols = rows[0].len();
    let mut x = Array2::zeros((rows.len(), cols));
    for (r, row) in rows.iter().enumerate() {
        x.row_mut(r).assign(row);
    }
    ObsBatch::Flat(x)
}

pub fn collate_sub(graphs: &[SubGraphObs]) -> ObsBatch {
    assert!(!graphs.is_empty());
    let total_nodes: usize = graphs.iter().map(|g| g.nodes.len()).sum();
    let mut node_feat = Array2::zeros((total_nodes, SUB_NODE_FEAT));
    let mut node_graph = Vec::with_capacity(total_nodes);
    let mut acc = EdgeAccum::new(SUB_EDGE_FEAT);

    let mut base = 0;
    for (gi, g) in graphs.iter().enumerate() {
        let n = g.nodes.len();
        node_feat
            .slice_mut(ndarray::s![base..base + n, ..])
            .assign(&g.node_feat);
        node_graph.extend(std::iter::repeat(gi).take(n));
        for (e, &(u, v)) in g.edges.iter().enumerate() {
            let feat: Vec<f64> = g.edge_feat.row(e).to_vec();
            acc.push(base + u, base + v, &feat);
            // The reverse direction sees the corridor flow and angle
            // difference from the other end.
            let mut rev = feat;
            rev[0] = -rev[0];
            rev[6] = -rev[6];
            acc.push(base + v, base + u, &rev);
        }
        base += n;
    }
    ObsBatch::Sub(SubBatch {
        node_feat,
        graph: acc.finish(node_graph, graphs.len()),
    })
}

pub fn collate_elem(graphs: &[ElemGraphObs]) -> ObsBatch {
    assert!(!graphs.is_empty());
    let count =
        |f: &dyn Fn(&ElemGraphObs) -> usize| -> usize { graphs.iter().map(|g| f(g)).sum() };
    let total_bus = count(&|g| g.bus_feat.nrows());
    let total_gen = count(&|g| g.gen_feat.nrows());
    let total_load = count(&|g| g.load_feat.nrows());
    let total_line = count(&|g| g.line_feat.nrows());

    let mut bus_feat = Array2::zeros((total_bus, BUS_FEAT));
    let mut gen_feat = Array2::zeros((total_gen, GEN_FEAT));
    let mut load_feat = Array2::zeros((total_load, LOAD_FEAT));
    let mut line_feat = Array2::zeros((total_line, LINE_FEAT));

    let total_nodes = total_bus + total_gen + total_load + total_line;
    let mut node_graph = vec![0usize; total_nodes];
    let mut acc = EdgeAccum::new(ELEM_EDGE_FEAT);

    let (mut bus_base, mut gen_base, mut load_base, mut line_base) = (0, 0, 0, 0);
    for (gi, g) in graphs.iter().enumerate() {
        let (nb, ng, nl, nk) = (
            g.bus_feat.nrows(),
            g.gen_feat.nrows(),
            g.load_feat.nrows(),
            g.line_feat.nrows(),
        );
        bus_feat
            .slice_mut(ndarray::s![bus_base..bus_base + nb, ..])
            .assign(&g.bus_feat);
        gen_feat
            .slice_mut(ndarray::s![gen_base..gen_base + ng, ..])
            .assign(&g.gen_feat);
        load_feat
            .slice_mut(ndarray::s![load_base..load_base + nl, ..])
            .assign(&g.load_feat);
        line_feat
            .slice_mut(ndarray::s![line_base..line_base + nk, ..])
            .assign(&g.line_feat);

        // Map a graph-local node id (bus | gen | load | line blocks) to the
        // class-major global id.
        let global = |local: usize| -> usize {
            if local < nb {
                bus_base + local
            } else if local < nb + ng {
                total_bus + gen_base + (local - nb)
            } else if local < nb + ng + nl {
                total_bus + total_gen + load_base + (local - nb - ng)
            } else {
                total_bus + total_gen + total_load + line_base + (local - nb - ng - nl)
            }
        };
        for local in 0..nb + ng + nl + nk {
            node_graph[global(local)] = gi;
        }
        for (e, &(elem, bus)) in g.edges.iter().enumerate() {
            let feat: Vec<f64> = g.edge_feat.row(e).to_vec();
            acc.push(global(elem), global(bus), &feat);
            acc.push(global(bus), global(elem), &feat);
        }

        bus_base += nb;
        gen_base += ng;
        load_base += nl;
        line_base += nk;
    }
    ObsBatch::Elem(ElemBatch {
        bus_feat,
        gen_feat,
        load_feat,
        line_feat,
        graph: acc.finish(node_graph, graphs.len()),
    })
}

// ====================================================================
// The policy
// ====================================================================

/// A tape forward pass: parameter leaves in registry order plus the two
/// output heads, ready for `backward` on a loss built from them.
pub struct Forward {
    pub tape: Tape,
    pub param_vars: Vec<Var>,
    /// `[batch, ActionLayout::total()]` raw logits.
    pub logits: Var,
    /// `[batch, 1]` state values.
    pub value: Var,
}

impl Forward {
    /// Gradients aligned with the parameter registry order; call after
    /// `tape.backward`.
    pub fn gradients(&self) -> Vec<Array2<f64>> {
        self.param_vars
            .iter()
            .map(|&v| self.tape.grad(v).clone())
            .collect()
    }
}

pub struct Policy {
    encoder: EncoderKind,
    layout: ActionLayout,
    flat_dim: usize,
    pub params: Params,
}

impl Policy {
    pub fn new(encoder: EncoderKind, grid: &Grid, seed: u64) -> Self {
        let layout = ActionLayout::new(grid);
        let flat_dim = obs::flat_obs_len(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        match encoder {
            EncoderKind::Flat => {
                p.dense(&mut rng, "enc.flat.w", flat_dim, HIDDEN);
                p.bias("enc.flat.b", HIDDEN);
            }
            EncoderKind::SubGraph => {
                p.dense(&mut rng, "enc.sub.node_w", SUB_NODE_FEAT, HIDDEN);
                p.dense(&mut rng, "enc.sub.pe_w", 2, HIDDEN);
                p.dense(&mut rng, "enc.sub.wq", HIDDEN, HIDDEN);
                p.dense(&mut rng, "enc.sub.wk", HIDDEN, HIDDEN);
                p.dense(&mut rng, "enc.sub.wv", HIDDEN, HIDDEN);
                p.dense(&mut rng, "enc.sub.we", SUB_EDGE_FEAT, 1);
                p.dense(&mut rng, "enc.sub.wo", HIDDEN, HIDDEN);
                p.bias("enc.sub.bo", HIDDEN);
            }
            EncoderKind::ElemGraph => {
                p.dense(&mut rng, "enc.elem.bus_w", BUS_FEAT, HIDDEN);
                p.dense(&mut rng, "enc.elem.gen_w", GEN_FEAT, HIDDEN);
                p.dense(&mut rng, "enc.elem.load_w", LOAD_FEAT, HIDDEN);
                p.dense(&mut rng, "enc.elem.line_w", LINE_FEAT, HIDDEN);
                // Reserved element classes; projections exist so the
                // checkpoint schema already has room for them.
                p.dense(&mut rng, "enc.elem.storage_w", STORAGE_FEAT, HIDDEN);
                p.dense(&mut rng, "enc.elem.shunt_w", SHUNT_FEAT, HIDDEN);
                p.dense(&mut rng, "enc.elem.pe_w", 2, HIDDEN);
                p.dense(&mut rng, "enc.elem.wq", HIDDEN, HIDDEN);
                p.dense(&mut rng, "enc.elem.wk", HIDDEN, HIDDEN);
                p.dense(&mut rng, "enc.elem.wv", HIDDEN, HIDDEN);
                p.dense(&mut rng, "enc.elem.we", ELEM_EDGE_FEAT, 1);
                p.dense(&mut rng, "enc.elem.wo", HIDDEN, HIDDEN);
                p.bias("enc.elem.bo", HIDDEN);
            }
        }
        for head in ["actor", "critic"] {
            for i in 0..3 {
                p.dense(&mut rng, &format!("{head}.l{i}.w"), HIDDEN, HIDDEN);
                p.bias(&format!("{head}.l{i}.b"), HIDDEN);
            }
        }
        p.dense(&mut rng, "actor.out.w", HIDDEN, layout.total());
        p.bias("actor.out.b", layout.total());
        p.dense(&mut rng, "critic.out.w", HIDDEN, 1);
        p.bias("critic.out.b", 1);

        Policy {
            encoder,
            layout,
            flat_dim,
            params: p,
        }
    }

    pub fn encoder(&self) -> EncoderKind {
        self.encoder
    }

    pub fn layout(&self) -> &ActionLayout {
        &self.layout
    }

    pub fn flat_dim(&self) -> usize {
        self.flat_dim
    }

    /// Build the observation this policy's encoder consumes.
    pub fn observe(
        &self,
        grid: &Grid,
        state: &GridState,
        result: &PowerFlowResult,
    ) -> Observation {
        match self.encoder {
            EncoderKind::Flat => Observation::Flat(obs::flat_obs(grid, state, result)),
            EncoderKind::SubGraph => Observation::Sub(obs::sub_graph_obs(grid, state, result)),
            EncoderKind::ElemGraph => Observation::Elem(obs::elem_graph_obs(grid, state, result)),
        }
    }

    /// Batch observations of this policy's kind; panics on a mixed batch.
    pub fn collate(&self, observations: &[Observation]) -> ObsBatch {
        match self.encoder {
            EncoderKind::Flat => {
                let rows: Vec<Array1<f64>> = observations
                    .iter()
                    .map(|o| match o {
                        Observation::Flat(x) => x.clone(),
                        _ => panic!("mixed observation kinds in one batch"),
                    })
                    .collect();
                collate_flat(&rows)
            }
            EncoderKind::SubGraph => {
                let graphs: Vec<SubGraphObs> = observations
                    .iter()
                    .map(|o| match o {
                        Observation::Sub(g) => g.clone(),
                        _ => panic!("mixed observation kinds in one batch"),
                    })
                    .collect();
                collate_sub(&graphs)
            }
            EncoderKind::ElemGraph => {
                let graphs: Vec<ElemGraphObs> = observations
                    .iter()
                    .map(|o| match o {
                        Observation::Elem(g) => g.clone(),
                        _ => panic!("mixed observation kinds in one batch"),
                    })
                    .collect();
                collate_elem(&graphs)
            }
        }
    }

    /// Full tape forward: encoder, then both heads.
    pub fn forward(&self, batch: &ObsBatch) -> Forward {
        let mut tape = Tape::new();
        let param_vars: Vec<Var> = self
            .params
            .iter()
            .map(|(_, v)| tape.leaf(v.clone()))
            .collect();
        let p = |name: &str| param_vars[self.params.position(name)];

        let latent = match (self.encoder, batch) {
            (EncoderKind::Flat, ObsBatch::Flat(x)) => {
                let x = tape.leaf(x.clone());
                let h = tape.matmul(x, p("enc.flat.w"));
                let h = tape.add_row(h, p("enc.flat.b"));
                tape.tanh(h)
            }
            (EncoderKind::SubGraph, ObsBatch::Sub(b)) => {
                let xf = tape.leaf(b.node_feat.clone());
                let x = tape.matmul(xf, p("enc.sub.node_w"));
                attention_readout(&mut tape, x, &b.graph, "enc.sub", &p)
            }
            (EncoderKind::ElemGraph, ObsBatch::Elem(b)) => {
                let xb = tape.leaf(b.bus_feat.clone());
                let xb = tape.matmul(xb, p("enc.elem.bus_w"));
                let xg = tape.leaf(b.gen_feat.clone());
                let xg = tape.matmul(xg, p("enc.elem.gen_w"));
                let xl = tape.leaf(b.load_feat.clone());
                let xl = tape.matmul(xl, p("enc.elem.load_w"));
                let xk = tape.leaf(b.line_feat.clone());
                let xk = tape.matmul(xk, p("enc.elem.line_w"));
                let x = tape.concat_rows(xb, xg);
                let x = tape.concat_rows(x, xl);
                let x = tape.concat_rows(x, xk);
                attention_readout(&mut tape, x, &b.graph, "enc.elem", &p)
            }
            _ => panic!("observation batch does not match the policy encoder"),
        };

        let logits = head(&mut tape, latent, "actor", &p);
        let value = head(&mut tape, latent, "critic", &p);
        Forward {
            tape,
            param_vars,
            logits,
            value,
        }
    }

    /// Forward for inference: the same tape pass, values extracted.
    pub fn forward_values(&self, batch: &ObsBatch) -> (Array2<f64>, Array2<f64>) {
        let f = self.forward(batch);
        (
            f.tape.value(f.logits).clone(),
            f.tape.value(f.value).clone(),
        )
    }
}

/// Neighbor-restricted single-head attention plus mean readout: degree
/// positional encodings on the projected nodes, scores from scaled
/// query-key products plus a linear edge-feature term, softmax over each
/// destination's in-edges, and a per-graph mean of the updated nodes.
fn attention_readout(
    tape: &mut Tape,
    x: Var,
    graph: &GraphBatch,
    prefix: &str,
    p: &impl Fn(&str) -> Var,
) -> Var {
    let deg = tape.leaf(graph.deg_feat.clone());
    let pe = tape.matmul(deg, p(&format!("{prefix}.pe_w")));
    let x = tape.add(x, pe);

    let q = tape.matmul(x, p(&format!("{prefix}.wq")));
    let k = tape.matmul(x, p(&format!("{prefix}.wk")));
    let v = tape.matmul(x, p(&format!("{prefix}.wv")));

    let qd = tape.gather_rows(q, graph.edge_dst.clone());
    let ks = tape.gather_rows(k, graph.edge_src.clone());
    let prod = tape.mul(qd, ks);
    let dot = tape.sum_cols(prod);
    let dot = tape.scale(dot, 1.0 / (HIDDEN as f64).sqrt());

    let ef = tape.leaf(graph.edge_feat.clone());
    let escore = tape.matmul(ef, p(&format!("{prefix}.we")));
    let score = tape.add(dot, escore);
    let alpha = tape.segment_softmax(score, graph.edge_dst.clone(), graph.n_nodes);

    let vs = tape.gather_rows(v, graph.edge_src.clone());
    let weighted = tape.mul_col(vs, alpha);
    let z = tape.segment_sum(weighted, graph.edge_dst.clone(), graph.n_nodes);

    let h = tape.matmul(z, p(&format!("{prefix}.wo")));
    let h = tape.add_row(h, p(&format!("{prefix}.bo")));
    let h = tape.tanh(h);
    tape.segment_mean(h, graph.node_graph.clone(), graph.n_graphs)
}

fn head(tape: &mut Tape, x: Var, name: &str, p: &impl Fn(&str) -> Var) -> Var {
    let mut h = x;
    for i in 0..3 {
        h = tape.matmul(h, p(&format!("{name}.l{i}.w")));
        h = tape.add_row(h, p(&format!("{name}.l{i}.b")));
        h = tape.tanh(h);
    }
    let o = tape.matmul(h, p(&format!("{name}.out.w")));
    tape.add_row(o, p(&format!("{name}.out.b")))
}
