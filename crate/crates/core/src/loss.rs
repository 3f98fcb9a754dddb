//! Supervised, reconstruction and decoder losses.

use ndarray::Array2;
use rand::Rng;

use crate::error::{bail, Result};
use crate::graph::Graph;
use crate::nn::{Activation, Mlp};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Matrix, Var};

fn one_hot(rows: usize, cols: usize, targets: &[usize]) -> Matrix {
    let mut m = Array2::zeros((rows, cols));
    for (i, &t) in targets.iter().enumerate() {
        m[[i, t]] = 1.0;
    }
    m
}

/// Mean over rows of `-log softmax(logits)[target]`.
pub fn cross_entropy<'t>(logits: Var<'t>, targets: &[usize]) -> Result<Var<'t>> {
    let (b, c) = logits.shape();
    if targets.len() != b {
        bail!(Shape, "{} targets for {b} logit rows", targets.len());
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= c) {
        bail!(Usage, "target class {t} out of range for {c} classes");
    }
    let mask = logits.tape().constant(one_hot(b, c, targets));
    Ok(logits.log_softmax_rows().mul(mask)?.sum().scale(-1.0 / b.max(1) as f64))
}

/// Mean over rows of the squared L2 distance.
pub fn mse<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    if pred.shape() != target.shape() {
        bail!(Shape, "prediction {:?} vs target {:?}", pred.shape(), target.shape());
    }
    Ok(pred.sub(target)?.square().sum().scale(1.0 / pred.rows().max(1) as f64))
}

/// `Σ_(u,v) ‖h_v − h_u‖²` over the arc list. A symmetrized graph counts each
/// undirected edge twice.
pub fn link_reconstruction_loss<'t>(graph: &Graph, h: Var<'t>) -> Result<Var<'t>> {
    if h.rows() != graph.num_nodes() {
        bail!(Shape, "{} state rows for {} nodes", h.rows(), graph.num_nodes());
    }
    let (src, dst): (Vec<usize>, Vec<usize>) = graph.arcs().iter().copied().unzip();
    Ok(h.gather_rows(&dst)?.sub(h.gather_rows(&src)?)?.square().sum())
}

/// `σ(h_u · h_v)` for two row vectors.
pub fn edge_decoder_prob<'t>(hu: Var<'t>, hv: Var<'t>) -> Result<Var<'t>> {
    if hu.shape() != hv.shape() || hu.rows() != 1 {
        bail!(Shape, "edge decoder needs equal row vectors, got {:?} and {:?}", hu.shape(), hv.shape());
    }
    Ok(hu.mul(hv)?.sum().sigmoid())
}

/// Inner-product logits `h_u · h_v` for every listed pair, `P × 1`.
pub fn pair_logits<'t>(h: Var<'t>, pairs: &[(usize, usize)]) -> Result<Var<'t>> {
    let (u, v): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
    Ok(h.gather_rows(&u)?.mul(h.gather_rows(&v)?)?.row_sums())
}

/// `Σ softplus(z) − y z`: Bernoulli negative log-likelihood of `y` under
/// probabilities `σ(z)`, summed over entries.
pub fn bce_with_logits<'t>(logits: Var<'t>, targets: &Matrix) -> Result<Var<'t>> {
    if logits.shape() != targets.dim() {
        bail!(Shape, "logits {:?} vs targets {:?}", logits.shape(), targets.dim());
    }
    if targets.iter().any(|&y| !(0.0..=1.0).contains(&y)) {
        bail!(Usage, "Bernoulli targets must lie in [0, 1]");
    }
    let y = logits.tape().constant(targets.clone());
    Ok(logits.softplus().sub(logits.mul(y)?)?.sum())
}

/// 0/1 adjacency indicator, `n × n`.
pub fn adjacency_indicator(graph: &Graph) -> Matrix {
    graph.dense_adjacency().mapv(|c| if c > 0.0 { 1.0 } else { 0.0 })
}

/// `−(1/|V|) Σ_(u,v) log P(A_uv | σ(h_u · h_v))` over all ordered pairs,
/// self-pairs included.
pub fn node_level_decoder_nll<'t>(h: Var<'t>, graph: &Graph) -> Result<Var<'t>> {
    let n = graph.num_nodes();
    if h.rows() != n {
        bail!(Shape, "{} embedding rows for {n} nodes", h.rows());
    }
    let logits = h.matmul(h.transpose())?;
    Ok(bce_with_logits(logits, &adjacency_indicator(graph))?.scale(1.0 / n.max(1) as f64))
}

/// 0/1 adjacency of `graph` zero-padded to `k × k`.
pub fn padded_adjacency(graph: &Graph, k: usize) -> Result<Matrix> {
    let n = graph.num_nodes();
    if n > k {
        bail!(Usage, "graph with {n} nodes exceeds decoder size {k}");
    }
    let mut a = Array2::zeros((k, k));
    a.slice_mut(ndarray::s![..n, ..n]).assign(&adjacency_indicator(graph));
    Ok(a)
}

/// One-shot adjacency decoder: an MLP maps a graph embedding to `k²` logits.
#[derive(Clone, Debug)]
pub struct GraphDecoder {
    pub mlp: Mlp,
    pub size: usize,
}

impl GraphDecoder {
    /// `hidden` lists the MLP's intermediate widths.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        embed_dim: usize,
        hidden: &[usize],
        size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let dims: Vec<usize> = std::iter::once(embed_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(size * size))
            .collect();
        Ok(GraphDecoder {
            mlp: Mlp::new(store, name, &dims, Activation::Relu, Activation::Identity, rng)?,
            size,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.mlp.params()
    }

    /// Adjacency logits `[k × k]` for a `1 × d` embedding.
    pub fn logits<'t>(&self, p: &Bound<'t>, hg: Var<'t>) -> Result<Var<'t>> {
        if hg.rows() != 1 {
            bail!(Shape, "graph decoder takes one embedding row, got {}", hg.rows());
        }
        self.mlp.forward(p, hg)?.reshape(self.size, self.size)
    }

    /// Probabilistic adjacency `σ(logits)`.
    pub fn decode<'t>(&self, p: &Bound<'t>, hg: Var<'t>) -> Result<Var<'t>> {
        Ok(self.logits(p, hg)?.sigmoid())
    }
}

/// Entrywise Bernoulli NLL of the zero-padded true adjacency under decoder
/// logits `[k × k]`, in corpus node order.
pub fn graph_level_nll<'t>(logits: Var<'t>, graph: &Graph) -> Result<Var<'t>> {
    let (k, c) = logits.shape();
    if k != c {
        bail!(Shape, "decoder logits must be square, got {:?}", logits.shape());
    }
    bce_with_logits(logits, &padded_adjacency(graph, k)?)
}

/// Mean and log standard deviation of a diagonal Gaussian.
#[derive(Clone, Copy)]
pub struct GaussianParams<'t> {
    pub mu: Var<'t>,
    pub log_sigma: Var<'t>,
}

impl<'t> GaussianParams<'t> {
    pub fn new(mu: Var<'t>, log_sigma: Var<'t>) -> Result<Self> {
        if mu.shape() != log_sigma.shape() {
            bail!(Shape, "mu {:?} vs log_sigma {:?}", mu.shape(), log_sigma.shape());
        }
        if mu.value().iter().chain(log_sigma.value().iter()).any(|x| !x.is_finite()) {
            bail!(Numeric, "non-finite Gaussian parameters");
        }
        Ok(GaussianParams { mu, log_sigma })
    }

    /// `μ + σ ⊙ ε` for externally drawn standard normal noise.
    pub fn sample(&self, noise: Matrix) -> Result<Var<'t>> {
        let eps = self.mu.tape().constant(noise);
        self.mu.add(self.log_sigma.exp().mul(eps)?)
    }
}

/// `KL[N(μ, σ²) ‖ N(0, I)] = ½ Σ (σ² + μ² − 1 − ln σ²)`.
pub fn kl_gaussian<'t>(params: &GaussianParams<'t>) -> Result<Var<'t>> {
    let ls = params.log_sigma;
    let terms = ls.scale(2.0).exp().add(params.mu.square())?.sub(ls.scale(2.0))?.add_scalar(-1.0);
    Ok(terms.sum().scale(0.5))
}
