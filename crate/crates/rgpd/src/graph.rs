//! Graph construction and the graph layers: GCN, multi-head GATConv, and the
//! graph-convolutional GRU (GCRN).

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::{xavier, zeros_param};
use rand_chacha::ChaCha8Rng;

/// Node count plus directed edge list. Undirected graphs store both
/// directions explicitly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub includes_self_loops: bool,
}

impl Graph {
    pub fn new(num_nodes: usize, mut edges: Vec<(usize, usize)>, self_loops: bool) -> Result<Graph> {
        if num_nodes == 0 {
            return Err(Error::invalid("graph needs at least one node"));
        }
        if self_loops {
            for i in 0..num_nodes {
                edges.push((i, i));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        for &(s, d) in &edges {
            if s >= num_nodes || d >= num_nodes {
                return Err(Error::invalid(format!(
                    "edge ({s},{d}) out of range for {num_nodes} nodes"
                )));
            }
        }
        Ok(Graph {
            num_nodes,
            edges,
            includes_self_loops: self_loops,
        })
    }

    /// Chain over time steps 0..T-1 with both directions and self-loops.
    pub fn temporal_chain(window_length: usize) -> Result<Graph> {
        if window_length == 0 {
            return Err(Error::invalid("window length must be >= 1"));
        }
        let mut edges = Vec::new();
        for t in 1..window_length {
            edges.push((t - 1, t));
            edges.push((t, t - 1));
        }
        Graph::new(window_length, edges, true)
    }

    /// Channels as nodes; edge (i,j) iff |Pearson corr| >= tau. Constant
    /// channels get only their self-loop.
    pub fn channel_correlation(channels: &[Vec<f64>], tau: f64) -> Result<Graph> {
        if channels.is_empty() || channels[0].len() < 2 {
            return Err(Error::invalid("need >=2 samples per channel"));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::invalid("tau must lie in [0,1]"));
        }
        let c = channels.len();
        let mut edges = Vec::new();
        for i in 0..c {
            for j in (i + 1)..c {
                if let Some(r) = pearson(&channels[i], &channels[j]) {
                    if r.abs() >= tau {
                        edges.push((i, j));
                        edges.push((j, i));
                    }
                }
            }
        }
        Graph::new(c, edges, true)
    }

    pub fn in_neighbors(&self, node: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(_, d)| d == node)
            .map(|&(s, _)| s)
            .collect()
    }

    /// Edge-list text format: first line `num_nodes`, then one `src dst` per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("{}\n", self.num_nodes);
        for &(a, b) in &self.edges {
            s.push_str(&format!("{a} {b}\n"));
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Graph> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::invalid("empty edge list"))?;
        let num_nodes: usize = first.trim().parse().map_err(|_| Error::Parse {
            line: 1,
            msg: "expected node count".into(),
        })?;
        let mut edges = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.and_then(|t| t.parse().ok()).ok_or(Error::Parse {
                    line: i + 1,
                    msg: "expected `src dst`".into(),
                })
            };
            edges.push((parse(it.next())?, parse(it.next())?));
        }
        let self_loops = (0..num_nodes).all(|i| edges.contains(&(i, i)));
        Graph::new(num_nodes, edges, self_loops)
    }
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va < 1e-12 || vb < 1e-12 {
        None
    } else {
        Some(cov / (va * vb).sqrt())
    }
}

/// Dense D̃^(-1/2) Ã D̃^(-1/2) for a graph with self-loops.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    pub num_nodes: usize,
    pub matrix: Vec<f64>, // row-major N×N
}

impl NormalizedAdjacency {
    pub fn from_graph(graph: &Graph) -> Result<NormalizedAdjacency> {
        if !graph.includes_self_loops {
            return Err(Error::invalid(
                "normalized adjacency requires self-loops (degree could be zero)",
            ));
        }
        let n = graph.num_nodes;
        let mut adj = vec![0.0; n * n];
        for &(s, d) in &graph.edges {
            adj[d * n + s] = 1.0; // row = target, col = source
        }
        let degrees: Vec<f64> = (0..n)
            .map(|i| adj[i * n..(i + 1) * n].iter().sum())
            .collect();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if adj[i * n + j] != 0.0 {
                    m[i * n + j] = 1.0 / (degrees[i] * degrees[j]).sqrt();
                }
            }
        }
        Ok(NormalizedAdjacency {
            num_nodes: n,
            matrix: m,
        })
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::new(vec![self.num_nodes, self.num_nodes], self.matrix.clone())
            .expect("adjacency tensor")
    }
}

/// Â · H · W without activation; the substrate for GCN and GCRN gates.
pub fn gcn_linear(h: &Tensor, adj: &Tensor, w: &Tensor) -> Result<Tensor> {
    adj.matmul(h)?.matmul(w)
}

/// H^{l+1} = ReLU(D̃^{-1/2} Ã D̃^{-1/2} H W).
pub fn gcn_layer(h: &Tensor, graph: &Graph, w: &Tensor) -> Result<Tensor> {
    let adj = NormalizedAdjacency::from_graph(graph)?.as_tensor();
    Ok(gcn_linear(h, &adj, w)?.relu())
}

/// Multi-head GAT parameters; heads are mean-aggregated so every head keeps
/// the layer output dimension.
pub struct GatParams {
    pub heads: Vec<GatHead>,
    pub leaky_slope: f64,
}

pub struct GatHead {
    pub w: Tensor, // in×out
    pub a: Tensor, // 2*out × 1
}

impl GatParams {
    pub fn new(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize, heads: usize, slope: f64) -> Result<GatParams> {
        if heads == 0 {
            return Err(Error::invalid("GAT needs at least one head"));
        }
        let heads = (0..heads)
            .map(|_| GatHead {
                w: xavier(rng, in_dim, out_dim),
                a: xavier(rng, 2 * out_dim, 1),
            })
            .collect();
        Ok(GatParams {
            heads,
            leaky_slope: slope,
        })
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.heads
            .iter()
            .flat_map(|h| [h.w.clone(), h.a.clone()])
            .collect()
    }

    pub fn out_dim(&self) -> usize {
        self.heads[0].w.shape()[1]
    }
}

/// Per-head attention matrices (row i = weights node i assigns to sources)
/// plus the mean-aggregated, ELU-activated output.
pub struct GatOutput {
    pub out: Tensor,
    pub attention: Vec<Tensor>,
}

pub fn gat_forward_full(h: &Tensor, graph: &Graph, params: &GatParams) -> Result<GatOutput> {
    let n = graph.num_nodes;
    if h.shape()[0] != n {
        return Err(Error::ShapeMismatch {
            op: "gat_forward",
            lhs: h.shape(),
            rhs: vec![n],
        });
    }
    // mask[i][j] = 1 iff edge j -> i
    let mut mask = vec![0.0; n * n];
    for &(s, d) in &graph.edges {
        mask[d * n + s] = 1.0;
    }
    for i in 0..n {
        if mask[i * n..(i + 1) * n].iter().all(|&m| m == 0.0) {
            return Err(Error::invalid(format!(
                "node {i} has no in-neighbors; add self-loops"
            )));
        }
    }
    let mask_t = Tensor::new(vec![n, n], mask.clone())?;
    let ones_row = Tensor::ones(vec![1, n]);
    let ones_col = Tensor::ones(vec![n, 1]);

    let mut attention = Vec::new();
    let mut head_sum: Option<Tensor> = None;
    for head in &params.heads {
        let f = head.w.shape()[1];
        let wh = h.matmul(&head.w)?;
        let a_dst = head.a.slice_rows(0, f)?; // weights on the attending node i
        let a_src = head.a.slice_rows(f, 2 * f)?; // weights on the neighbor j
        let s_i = wh.matmul(&a_dst)?; // N×1
        let s_j = wh.matmul(&a_src)?; // N×1
        // logits[i][j] = s_i[i] + s_j[j]
        let logits = s_i
            .matmul(&ones_row)?
            .add(&ones_col.matmul(&s_j.transpose()?)?)?
            .leaky_relu(params.leaky_slope);
        // masked softmax per row, with a detached row-max shift for stability
        let lv = logits.values();
        let rowmax: Vec<f64> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| mask[i * n + j] != 0.0)
                    .map(|j| lv[i * n + j])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let shift = Tensor::new(vec![n, 1], rowmax)?.matmul(&ones_row)?;
        let masked_exp = logits.sub(&shift)?.exp().mul(&mask_t)?;
        let denom = masked_exp.matmul(&ones_col)?;
        let alpha = masked_exp.div_col_broadcast(&denom)?;
        let mixed = alpha.matmul(&wh)?;
        head_sum = Some(match head_sum {
            Some(acc) => acc.add(&mixed)?,
            None => mixed,
        });
        attention.push(alpha);
    }
    let k = params.heads.len() as f64;
    let out = head_sum.unwrap().mul_scalar(1.0 / k).elu();
    Ok(GatOutput { out, attention })
}

pub fn gat_forward(h: &Tensor, graph: &Graph, params: &GatParams) -> Result<Tensor> {
    Ok(gat_forward_full(h, graph, params)?.out)
}

/// GRU gates realized through graph convolutions.
pub struct GcrnParams {
    pub wz: Tensor,
    pub uz: Tensor,
    pub bz: Tensor,
    pub wr: Tensor,
    pub ur: Tensor,
    pub br: Tensor,
    pub wh: Tensor,
    pub uh: Tensor,
    pub bh: Tensor,
}

impl GcrnParams {
    pub fn new(rng: &mut ChaCha8Rng, in_dim: usize, hidden: usize) -> GcrnParams {
        GcrnParams {
            wz: xavier(rng, in_dim, hidden),
            uz: xavier(rng, hidden, hidden),
            bz: zeros_param(vec![1, hidden]),
            wr: xavier(rng, in_dim, hidden),
            ur: xavier(rng, hidden, hidden),
            br: zeros_param(vec![1, hidden]),
            wh: xavier(rng, in_dim, hidden),
            uh: xavier(rng, hidden, hidden),
            bh: zeros_param(vec![1, hidden]),
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![
            self.wz.clone(),
            self.uz.clone(),
            self.bz.clone(),
            self.wr.clone(),
            self.ur.clone(),
            self.br.clone(),
            self.wh.clone(),
            self.uh.clone(),
            self.bh.clone(),
        ]
    }

    pub fn hidden_dim(&self) -> usize {
        self.uz.shape()[0]
    }
}

/// One GCRN step:
///   z = σ(Â x Wz + Â h Uz + bz), r = σ(Â x Wr + Â h Ur + br),
///   h̃ = tanh(Â x Wh + r ⊙ Â h Uh + bh), h' = (1−z)⊙h + z⊙h̃.
pub fn gcrn_step(
    x: &Tensor,
    h_prev: &Tensor,
    adj: &Tensor,
    params: &GcrnParams,
) -> Result<Tensor> {
    let z = gcn_linear(x, adj, &params.wz)?
        .add(&gcn_linear(h_prev, adj, &params.uz)?)?
        .add_row_broadcast(&params.bz)?
        .sigmoid();
    let r = gcn_linear(x, adj, &params.wr)?
        .add(&gcn_linear(h_prev, adj, &params.ur)?)?
        .add_row_broadcast(&params.br)?
        .sigmoid();
    let h_cand = gcn_linear(x, adj, &params.wh)?
        .add(&r.mul(&gcn_linear(h_prev, adj, &params.uh)?)?)?
        .add_row_broadcast(&params.bh)?
        .tanh();
    let one_minus_z = z.neg().add_scalar(1.0);
    one_minus_z.mul(h_prev)?.add(&z.mul(&h_cand)?)
}

/// Unroll over a sequence of node-feature matrices; returns one hidden state
/// per step.
pub fn gcrn_unroll(
    xs: &[Tensor],
    graph: &Graph,
    params: &GcrnParams,
    h0: Option<Tensor>,
) -> Result<Vec<Tensor>> {
    if xs.is_empty() {
        return Err(Error::invalid("gcrn_unroll: empty sequence"));
    }
    let adj = NormalizedAdjacency::from_graph(graph)?.as_tensor();
    let mut h = h0.unwrap_or_else(|| Tensor::zeros(vec![graph.num_nodes, params.hidden_dim()]));
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        h = gcrn_step(x, &h, &adj, params)?;
        out.push(h.clone());
    }
    Ok(out)
}
