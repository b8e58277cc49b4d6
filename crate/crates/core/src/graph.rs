//! Undirected graphs, diffusion-matrix construction, degree statistics,
//! and the synthetic generators used as stand-ins for the collaboration
//! datasets.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
#[cfg_attr(test, allow(unused_imports))]
use crate::math::F64Ext;
use crate::rng::SeedTree;

/// Undirected graph with 0-indexed nodes. Edges are stored canonically
/// with `i <= j`; self-loops `(i, i)` are allowed and count 1 toward the
/// degree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("graph needs at least one node".into()));
        }
        let mut canon: Vec<(usize, usize)> = Vec::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidParameter(format!(
                    "edge ({a}, {b}) out of range for {n} nodes"
                )));
            }
            let e = if a <= b { (a, b) } else { (b, a) };
            canon.push(e);
        }
        canon.sort_unstable();
        let before = canon.len();
        canon.dedup();
        if canon.len() != before {
            return Err(Error::InvalidParameter("duplicate edge".into()));
        }
        Ok(Self { n, edges: canon })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Per-node degrees; a self-loop contributes 1.
    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0usize; self.n];
        for &(a, b) in &self.edges {
            d[a] += 1;
            if a != b {
                d[b] += 1;
            }
        }
        d
    }

    pub fn max_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }

    /// Dense adjacency matrix; a self-loop puts 1 on the diagonal.
    pub fn adjacency(&self) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            a.set(i, j, 1.0);
            a.set(j, i, 1.0);
        }
        a
    }
}

/// Which diffusion matrix multiplies the node embeddings each layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffusionKind {
    /// Raw adjacency `A`.
    Adjacency,
    /// `A + I`.
    AdjacencySelfLoops,
    /// Row-stochastic `D^{-1} A`; requires min degree >= 1.
    RowNormalized,
    /// `D~^{-1/2} (A + I) D~^{-1/2}` with `D~` the row sums of `A + I`.
    SymNormalizedSelfLoops,
    /// `(P + P^2 + ... + P^{l-1}) / (l-1)` with `P = A`; the averaged
    /// diffusion a graph isomorphism network effectively applies.
    GinAverage(usize),
}

impl DiffusionKind {
    pub fn name(&self) -> &'static str {
        match self {
            DiffusionKind::Adjacency => "adj",
            DiffusionKind::AdjacencySelfLoops => "adj_sl",
            DiffusionKind::RowNormalized => "row",
            DiffusionKind::SymNormalizedSelfLoops => "sym",
            DiffusionKind::GinAverage(_) => "gin",
        }
    }
}

/// Builds the `n x n` diffusion matrix for `kind`.
pub fn diffusion_matrix(g: &Graph, kind: DiffusionKind) -> Result<DenseMatrix> {
    let n = g.node_count();
    let a = g.adjacency();
    match kind {
        DiffusionKind::Adjacency => Ok(a),
        DiffusionKind::AdjacencySelfLoops => a.add(&DenseMatrix::identity(n)),
        DiffusionKind::RowNormalized => {
            let deg = g.degrees();
            if let Some(node) = deg.iter().position(|&d| d == 0) {
                return Err(Error::IsolatedNode { node });
            }
            let mut m = a;
            for i in 0..n {
                let inv = 1.0 / deg[i] as f64;
                for j in 0..n {
                    m.set(i, j, m.at(i, j) * inv);
                }
            }
            Ok(m)
        }
        DiffusionKind::SymNormalizedSelfLoops => {
            let tilde = a.add(&DenseMatrix::identity(n))?;
            // Weighted degrees of A + I are always positive.
            let mut dinv = vec![0.0; n];
            for i in 0..n {
                let row_sum: f64 = tilde.row(i).iter().sum();
                dinv[i] = 1.0 / row_sum.sqrt();
            }
            let mut m = tilde;
            for i in 0..n {
                for j in 0..n {
                    m.set(i, j, m.at(i, j) * dinv[i] * dinv[j]);
                }
            }
            Ok(m)
        }
        DiffusionKind::GinAverage(l) => {
            if l < 2 {
                return Err(Error::InvalidParameter(
                    "GinAverage needs at least 2 layers".into(),
                ));
            }
            gin_average_diffusion(&a, l)
        }
    }
}

/// `(P + P^2 + ... + P^{l-1}) / (l-1)` for any square `P`.
pub fn gin_average_diffusion(p: &DenseMatrix, l: usize) -> Result<DenseMatrix> {
    if p.rows() != p.cols() {
        return Err(Error::ShapeMismatch(format!(
            "gin_average_diffusion needs a square matrix, got {}x{}",
            p.rows(),
            p.cols()
        )));
    }
    if l < 2 {
        return Err(Error::InvalidParameter("l must be at least 2".into()));
    }
    let mut power = p.clone();
    let mut sum = p.clone();
    for _ in 2..l {
        power = power.matmul(p)?;
        sum = sum.add(&power)?;
    }
    Ok(sum.scale(1.0 / (l - 1) as f64))
}

/// The two adjacency spectral-norm sanity quantities: callers assert
/// `sqrt(d) <= ||A|| <= d` and `||D~^{-1/2} (A+I) D~^{-1/2}|| <= 1`.
#[derive(Debug, Clone, Copy)]
pub struct FactA1 {
    pub sqrt_d: f64,
    pub norm_a: f64,
    pub d: f64,
    pub norm_sym: f64,
}

pub fn fact_a1_check(g: &Graph) -> Result<FactA1> {
    if g.edge_count() == 0 {
        return Err(Error::InvalidParameter(
            "fact_a1_check needs at least one edge".into(),
        ));
    }
    let d = g.max_degree() as f64;
    let norm_a = g.adjacency().spectral_norm_default();
    let sym = diffusion_matrix(g, DiffusionKind::SymNormalizedSelfLoops)?;
    let norm_sym = sym.spectral_norm_default();
    Ok(FactA1 {
        sqrt_d: d.sqrt(),
        norm_a,
        d,
        norm_sym,
    })
}

/// Synthetic graph families. `EgoCollab` mimics ego-network collaboration
/// graphs: a hub adjacent to everyone plus dense intra-community edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphFamily {
    Star { leaves: usize },
    Complete { n: usize },
    Cycle { n: usize },
    ErdosRenyi { n: usize, p: f64 },
    EgoCollab { n: usize, communities: usize, p_in: f64, p_out: f64 },
}

/// Deterministic generator: the same `(family, seed)` always yields the
/// same edge list.
pub fn generate(family: GraphFamily, seed: u64) -> Result<Graph> {
    match family {
        GraphFamily::Star { leaves } => {
            if leaves == 0 {
                return Err(Error::InvalidParameter("star needs at least one leaf".into()));
            }
            Graph::new(leaves + 1, (1..=leaves).map(|i| (0, i)))
        }
        GraphFamily::Complete { n } => {
            if n < 1 {
                return Err(Error::InvalidParameter("complete graph needs n >= 1".into()));
            }
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    edges.push((i, j));
                }
            }
            Graph::new(n, edges)
        }
        GraphFamily::Cycle { n } => {
            if n < 3 {
                return Err(Error::InvalidParameter("cycle needs n >= 3".into()));
            }
            Graph::new(n, (0..n).map(|i| (i, (i + 1) % n)))
        }
        GraphFamily::ErdosRenyi { n, p } => {
            if n < 1 {
                return Err(Error::InvalidParameter("erdos_renyi needs n >= 1".into()));
            }
            check_probability(p, "p")?;
            let mut rng = SeedTree::new(seed).stream("graph-er", 0);
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.gen::<f64>() < p {
                        edges.push((i, j));
                    }
                }
            }
            Graph::new(n, edges)
        }
        GraphFamily::EgoCollab { n, communities, p_in, p_out } => {
            if n < 2 {
                return Err(Error::InvalidParameter("ego_collab needs n >= 2".into()));
            }
            if communities == 0 {
                return Err(Error::InvalidParameter(
                    "ego_collab needs at least one community".into(),
                ));
            }
            check_probability(p_in, "p_in")?;
            check_probability(p_out, "p_out")?;
            let mut rng = SeedTree::new(seed).stream("graph-ego", 0);
            let mut edges = Vec::new();
            // Node 0 is the ego: adjacent to every collaborator, which
            // keeps the graph connected and gives it a heavy-degree hub.
            for i in 1..n {
                edges.push((0, i));
            }
            let comm = |i: usize| (i - 1) % communities;
            for i in 1..n {
                for j in (i + 1)..n {
                    let p = if comm(i) == comm(j) { p_in } else { p_out };
                    if rng.gen::<f64>() < p {
                        edges.push((i, j));
                    }
                }
            }
            Graph::new(n, edges)
        }
    }
}

fn check_probability(p: f64, name: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "{name} must lie in [0, 1], got {p}"
        )));
    }
    Ok(())
}
