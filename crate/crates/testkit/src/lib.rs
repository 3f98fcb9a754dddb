//! Reference computations and random fixtures for tests.
//!
//! Everything here works on plain nested `Vec`s and explicit loops so that it
//! shares no code with the library under test.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;
pub type Arcs = Vec<(usize, usize)>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn zeros(r: usize, c: usize) -> Mat {
    vec![vec![0.0; c]; r]
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), inner, "matmul width");
            (0..cols).map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum()).collect()
        })
        .collect()
}

pub fn transpose(a: &Mat) -> Mat {
    let cols = a.first().map_or(0, Vec::len);
    (0..cols).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

pub fn vecmat(x: &[f64], w: &Mat) -> Vec<f64> {
    let cols = w.first().map_or(0, Vec::len);
    (0..cols).map(|j| x.iter().zip(w).map(|(xi, row)| xi * row[j]).sum()).collect()
}

pub fn add_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale_vec(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| x * c).collect()
}

pub fn map(a: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    a.iter().map(|r| r.iter().map(|&x| f(x)).collect()).collect()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len(), "row count");
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len(), "row width");
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// In-neighbors of every node as `(source, arc id)`, in arc order.
pub fn in_neighbors(n: usize, arcs: &[(usize, usize)]) -> Vec<Vec<(usize, usize)>> {
    let mut lists = vec![Vec::new(); n];
    for (e, &(u, v)) in arcs.iter().enumerate() {
        lists[v].push((u, e));
    }
    lists
}

fn closed_sources(n: usize, arcs: &[(usize, usize)], v: usize) -> Vec<usize> {
    let mut s: Vec<usize> = in_neighbors(n, arcs)[v].iter().map(|&(u, _)| u).collect();
    if !s.contains(&v) {
        s.push(v);
    }
    s
}

fn sources(n: usize, arcs: &[(usize, usize)], v: usize, closed: bool) -> Vec<usize> {
    if closed {
        closed_sources(n, arcs, v)
    } else {
        in_neighbors(n, arcs)[v].iter().map(|&(u, _)| u).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Agg {
    Sum,
    Mean,
    Max,
}

fn reduce(rows: &[Vec<f64>], width: usize, agg: Agg) -> Vec<f64> {
    let mut out = vec![0.0; width];
    if rows.is_empty() {
        return out;
    }
    for j in 0..width {
        out[j] = match agg {
            Agg::Sum => rows.iter().map(|r| r[j]).sum(),
            Agg::Mean => rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64,
            Agg::Max => rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max),
        };
    }
    out
}

/// `act([h_v, agg_u(h_u W_msg)] W_upd + b)`.
#[allow(clippy::too_many_arguments)]
pub fn generic_layer(
    n: usize,
    arcs: &[(usize, usize)],
    h: &Mat,
    w_msg: &Mat,
    w_upd: &Mat,
    b: &[f64],
    agg: Agg,
    closed: bool,
    act: impl Fn(f64) -> f64,
) -> Mat {
    let width = w_msg[0].len();
    (0..n)
        .map(|v| {
            let msgs: Vec<Vec<f64>> = sources(n, arcs, v, closed).iter().map(|&u| vecmat(&h[u], w_msg)).collect();
            let m = reduce(&msgs, width, agg);
            let z: Vec<f64> = h[v].iter().chain(&m).copied().collect();
            add_vec(&vecmat(&z, w_upd), b).into_iter().map(&act).collect()
        })
        .collect()
}

/// Dense `act(D̃^{-1/2} (A + I) D̃^{-1/2} H W)` with `D̃` the row sums of `A + I`.
pub fn gcn_dense(n: usize, arcs: &[(usize, usize)], h: &Mat, w: &Mat, act: impl Fn(f64) -> f64) -> Mat {
    let mut a = zeros(n, n);
    for &(u, v) in arcs {
        a[u][v] += 1.0;
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    let d: Vec<f64> = a.iter().map(|r| 1.0 / r.iter().sum::<f64>().sqrt()).collect();
    let l: Mat = (0..n).map(|i| (0..n).map(|j| d[i] * a[i][j] * d[j]).collect()).collect();
    map(&matmul(&matmul(&l, h), w), act)
}

/// `mlp((1 + eps) h_v + Σ_u h_u)` with ReLU between layers and none after the last.
pub fn gin_layer(
    n: usize,
    arcs: &[(usize, usize)],
    h: &Mat,
    eps: f64,
    mlp: &[(Mat, Vec<f64>)],
    act: impl Fn(f64) -> f64,
) -> Mat {
    let nbrs = in_neighbors(n, arcs);
    (0..n)
        .map(|v| {
            let mut z = scale_vec(&h[v], 1.0 + eps);
            for &(u, _) in &nbrs[v] {
                z = add_vec(&z, &h[u]);
            }
            mlp_forward(mlp, &z).into_iter().map(&act).collect()
        })
        .collect()
}

/// Dense layers with ReLU between them and no activation after the last.
pub fn mlp_forward(mlp: &[(Mat, Vec<f64>)], x: &[f64]) -> Vec<f64> {
    let mut z = x.to_vec();
    for (i, (w, b)) in mlp.iter().enumerate() {
        z = add_vec(&vecmat(&z, w), b);
        if i + 1 < mlp.len() {
            z = z.into_iter().map(relu).collect();
        }
    }
    z
}

/// `act([h_v, Σ_u h_u] W / max(|N_v|, 1))`.
pub fn sage_mean(n: usize, arcs: &[(usize, usize)], h: &Mat, w: &Mat, act: impl Fn(f64) -> f64) -> Mat {
    let nbrs = in_neighbors(n, arcs);
    (0..n)
        .map(|v| {
            let mut s = vec![0.0; h[v].len()];
            for &(u, _) in &nbrs[v] {
                s = add_vec(&s, &h[u]);
            }
            let z: Vec<f64> = h[v].iter().chain(&s).copied().collect();
            let z = scale_vec(&z, 1.0 / nbrs[v].len().max(1) as f64);
            vecmat(&z, w).into_iter().map(&act).collect()
        })
        .collect()
}

/// `act(Σ_k Σ_{u ∈ N_v^k} h_u W_k / |N_v^k| + h_v W_self)`.
pub fn rgcn(
    n: usize,
    arcs: &[(usize, usize)],
    relation: &[usize],
    h: &Mat,
    w_rel: &[Mat],
    w_self: &Mat,
    act: impl Fn(f64) -> f64,
) -> Mat {
    let nbrs = in_neighbors(n, arcs);
    (0..n)
        .map(|v| {
            let mut out = vecmat(&h[v], w_self);
            for (k, w) in w_rel.iter().enumerate() {
                let group: Vec<usize> = nbrs[v].iter().filter(|&&(_, e)| relation[e] == k).map(|&(u, _)| u).collect();
                for &u in &group {
                    out = add_vec(&out, &scale_vec(&vecmat(&h[u], w), 1.0 / group.len() as f64));
                }
            }
            out.into_iter().map(&act).collect()
        })
        .collect()
}

/// Mean over in-arcs of `Θ(e_uv) h_u`, where the edge MLP output is an
/// `out × in` matrix flattened row-major.
pub fn ecc(
    n: usize,
    arcs: &[(usize, usize)],
    arc_features: &Mat,
    h: &Mat,
    edge_mlp: &[(Mat, Vec<f64>)],
    out_dim: usize,
    act: impl Fn(f64) -> f64,
) -> Mat {
    let nbrs = in_neighbors(n, arcs);
    let in_dim = h.first().map_or(0, Vec::len);
    (0..n)
        .map(|v| {
            let mut acc = vec![0.0; out_dim];
            for &(u, e) in &nbrs[v] {
                let theta = mlp_forward(edge_mlp, &arc_features[e]);
                for (i, a) in acc.iter_mut().enumerate() {
                    for j in 0..in_dim {
                        *a += theta[i * in_dim + j] * h[u][j];
                    }
                }
            }
            let count = nbrs[v].len().max(1) as f64;
            acc.into_iter().map(|x| act(x / count)).collect()
        })
        .collect()
}

/// One attention head: `α_uv ∝ exp(LeakyReLU(a_src·z_u + a_dst·z_v))` over
/// the neighborhood of `v`, output `act(Σ α_uv z_u)` with `z = h W`.
#[allow(clippy::too_many_arguments)]
pub fn gat_head(
    n: usize,
    arcs: &[(usize, usize)],
    h: &Mat,
    w: &Mat,
    attention: &[f64],
    slope: f64,
    closed: bool,
    act: impl Fn(f64) -> f64,
) -> Mat {
    let z = matmul(h, w);
    let hd = w[0].len();
    let dot = |x: &[f64], a: &[f64]| x.iter().zip(a).map(|(p, q)| p * q).sum::<f64>();
    (0..n)
        .map(|v| {
            let srcs = sources(n, arcs, v, closed);
            let logits: Vec<f64> = srcs
                .iter()
                .map(|&u| leaky(dot(&z[u], &attention[..hd]) + dot(&z[v], &attention[hd..]), slope))
                .collect();
            let weights: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut out = vec![0.0; hd];
            for (&u, wgt) in srcs.iter().zip(&weights) {
                out = add_vec(&out, &scale_vec(&z[u], wgt / total));
            }
            out.into_iter().map(&act).collect()
        })
        .collect()
}

/// Per-graph reduction of node rows.
pub fn readout(h: &Mat, node_to_graph: &[usize], num_graphs: usize, agg: Agg) -> Mat {
    let width = h.first().map_or(0, Vec::len);
    (0..num_graphs)
        .map(|g| {
            let rows: Vec<Vec<f64>> = h.iter().zip(node_to_graph).filter(|(_, &k)| k == g).map(|(r, _)| r.clone()).collect();
            reduce(&rows, width, agg)
        })
        .collect()
}

/// `−(1/B) Σ_i ln(exp(z_{i,t_i}) / Σ_j exp(z_ij))`, computed without stabilization.
pub fn cross_entropy(logits: &Mat, targets: &[usize]) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(targets)
        .map(|(row, &t)| {
            let norm: f64 = row.iter().map(|x| x.exp()).sum();
            -(row[t].exp() / norm).ln()
        })
        .sum();
    total / logits.len() as f64
}

/// Bernoulli negative log-likelihood of target `y` under probability `p`.
pub fn bernoulli_nll(p: f64, y: f64) -> f64 {
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Node-level decoder loss by enumerating every ordered pair.
pub fn node_decoder_nll(n: usize, arcs: &[(usize, usize)], h: &Mat) -> f64 {
    let mut total = 0.0;
    for u in 0..n {
        for v in 0..n {
            let y = if arcs.contains(&(u, v)) { 1.0 } else { 0.0 };
            let p = sigmoid(h[u].iter().zip(&h[v]).map(|(a, b)| a * b).sum());
            total += bernoulli_nll(p, y);
        }
    }
    total / n as f64
}

/// Hop distance from every node to `target` along arc direction; `None` if unreachable.
pub fn hops_to(n: usize, arcs: &[(usize, usize)], target: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; n];
    dist[target] = Some(0);
    let mut frontier = vec![target];
    let mut d = 0;
    while !frontier.is_empty() {
        d += 1;
        let mut next = Vec::new();
        for &(u, v) in arcs {
            if frontier.contains(&v) && dist[u].is_none() {
                dist[u] = Some(d);
                next.push(u);
            }
        }
        frontier = next;
    }
    dist
}

/// Erdős–Rényi graph without self loops; each unordered pair joined with
/// probability `p` and emitted in both orientations.
pub fn random_undirected<R: Rng>(rng: &mut R, n: usize, p: f64) -> Arcs {
    let mut arcs = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                arcs.push((u, v));
                arcs.push((v, u));
            }
        }
    }
    arcs
}

/// Random directed graph without self loops or repeated arcs.
pub fn random_directed<R: Rng>(rng: &mut R, n: usize, p: f64) -> Arcs {
    let mut arcs = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.random_bool(p) {
                arcs.push((u, v));
            }
        }
    }
    arcs
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Mat {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect()).collect()
}

pub fn random_permutation<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
