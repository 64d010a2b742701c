//! Laplacian and Dirichlet energy, the sink-mixed node representation model
//! and numeric checks of the contraction/expansion results built on it.
//!
//! Representations mix a shared sink value into every node:
//! `H = lambda * 1 v0^T + (1 - lambda) * H_topo`. Because `L 1 = 0` the sink
//! term drops out of every pairwise difference and of the energy.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attnops::{amplification_ratio, AttnMap};
use crate::error::{Error, Result};
use crate::graphtext::{Graph, TokenAdjacency};

/// Unnormalized `D - A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    pub matrix: DMatrix<f64>,
}

impl Laplacian {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }
}

pub fn laplacian(g: &Graph) -> Result<Laplacian> {
    if g.directed {
        return Err(Error::Unsupported("laplacian of a directed graph".into()));
    }
    let n = g.num_nodes;
    // integer path so that every row sums to exactly zero
    let mut adj = vec![0i64; n * n];
    for &(u, v) in &g.edges {
        if u == v {
            return Err(Error::Unsupported(format!("self-loop on node {u}")));
        }
        adj[u * n + v] = 1;
        adj[v * n + u] = 1;
    }
    let mut lap = vec![0i64; n * n];
    for i in 0..n {
        let deg: i64 = adj[i * n..(i + 1) * n].iter().sum();
        for j in 0..n {
            lap[i * n + j] = -adj[i * n + j];
        }
        lap[i * n + i] = deg;
    }
    Ok(Laplacian {
        matrix: DMatrix::from_row_iterator(n, n, lap.into_iter().map(|x| x as f64)),
    })
}

/// `tr(H^T L H)`.
pub fn dirichlet_energy(h: &DMatrix<f64>, lap: &Laplacian) -> Result<f64> {
    if h.nrows() != lap.n() {
        return Err(Error::Dimension(format!(
            "{} node rows against a {}-node laplacian",
            h.nrows(),
            lap.n()
        )));
    }
    let lh = &lap.matrix * h;
    Ok(h.component_mul(&lh).sum().max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRepresentation {
    pub h: DMatrix<f64>,
    pub lambda: f64,
    pub v0: DVector<f64>,
    pub h_topo: DMatrix<f64>,
}

fn mix(h_topo: &DMatrix<f64>, v0: &DVector<f64>, lambda: f64) -> DMatrix<f64> {
    let mut h = h_topo * (1.0 - lambda);
    for mut row in h.row_iter_mut() {
        for (x, s) in row.iter_mut().zip(v0.iter()) {
            *x += lambda * s;
        }
    }
    h
}

/// Convex combination of a shared sink value and per-node topological
/// representations, with the same sink weight on every node.
pub fn mix_with_sink(
    h_topo: &DMatrix<f64>,
    v0: &DVector<f64>,
    lambda: f64,
) -> Result<NodeRepresentation> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::OutOfRange {
            name: "lambda",
            value: lambda,
            range: "[0, 1)",
        });
    }
    if v0.len() != h_topo.ncols() {
        return Err(Error::Dimension(format!(
            "sink value of length {} for {}-dim representations",
            v0.len(),
            h_topo.ncols()
        )));
    }
    Ok(NodeRepresentation {
        h: mix(h_topo, v0, lambda),
        lambda,
        v0: v0.clone(),
        h_topo: h_topo.clone(),
    })
}

fn row_dist(m: &DMatrix<f64>, k: usize, l: usize) -> f64 {
    (m.row(k) - m.row(l)).norm()
}

fn check_pair(rep: &NodeRepresentation, k: usize, l: usize) -> Result<()> {
    let n = rep.h.nrows();
    if k == l || k >= n || l >= n {
        return Err(Error::Dimension(format!("node pair ({k}, {l}) of {n}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contraction {
    pub lhs: f64,
    pub rhs: f64,
    /// Final over sink-free distance; `None` when the topological rows coincide.
    pub ratio: Option<f64>,
}

pub fn verify_contraction(rep: &NodeRepresentation, k: usize, l: usize) -> Result<Contraction> {
    check_pair(rep, k, l)?;
    let lhs = row_dist(&rep.h, k, l);
    let topo = row_dist(&rep.h_topo, k, l);
    Ok(Contraction {
        lhs,
        rhs: (1.0 - rep.lambda) * topo,
        ratio: (topo > 0.0).then(|| lhs / topo),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    pub observed_ratio: f64,
    pub predicted_rho: f64,
}

/// Rebuilds the pair with sink weight `gamma * lambda` and compares the
/// distance growth to the amplification ratio.
pub fn verify_expansion(
    rep: &NodeRepresentation,
    gamma: f64,
    k: usize,
    l: usize,
) -> Result<Expansion> {
    check_pair(rep, k, l)?;
    let predicted_rho = amplification_ratio(rep.lambda, gamma)?;
    let base = row_dist(&rep.h, k, l);
    if base == 0.0 {
        return Err(Error::Degenerate(format!("nodes {k} and {l} coincide")));
    }
    let sharpened = mix(&rep.h_topo, &rep.v0, gamma * rep.lambda);
    Ok(Expansion {
        observed_ratio: row_dist(&sharpened, k, l) / base,
        predicted_rho,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyDecay {
    pub e_mixed: f64,
    pub e_topo: f64,
    /// `e_mixed / e_topo`; `None` when the topological energy is zero.
    pub factor: Option<f64>,
}

pub fn verify_energy_decay(rep: &NodeRepresentation, lap: &Laplacian) -> Result<EnergyDecay> {
    let e_mixed = dirichlet_energy(&rep.h, lap)?;
    let e_topo = dirichlet_energy(&rep.h_topo, lap)?;
    Ok(EnergyDecay {
        e_mixed,
        e_topo,
        factor: (e_topo > 0.0).then(|| e_mixed / e_topo),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralAmplification {
    pub e_mixed: f64,
    pub e_sharpened: f64,
    /// `rho^2 * e_mixed`.
    pub predicted: f64,
}

pub fn verify_spectral_amplification(
    rep: &NodeRepresentation,
    lap: &Laplacian,
    gamma: f64,
) -> Result<SpectralAmplification> {
    let rho = amplification_ratio(rep.lambda, gamma)?;
    let e_mixed = dirichlet_energy(&rep.h, lap)?;
    let sharpened = mix(&rep.h_topo, &rep.v0, gamma * rep.lambda);
    Ok(SpectralAmplification {
        e_mixed,
        e_sharpened: dirichlet_energy(&sharpened, lap)?,
        predicted: rho * rho * e_mixed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatStep {
    pub h_full: DMatrix<f64>,
    /// Sink plus preceding-neighbor terms only.
    pub h_simplified: DMatrix<f64>,
    /// Largest per-row `|h_full - h_simplified| / |h_full|` over span rows.
    pub residual_norm: f64,
    /// Same maximum without the normalization.
    pub max_abs_residual: f64,
}

/// Reads one attention layer as graph aggregation over preceding same-source
/// tokens, and measures what that reading leaves out.
pub fn implicit_gat_step(
    map: &AttnMap,
    adj: &TokenAdjacency,
    values: &DMatrix<f64>,
) -> Result<GatStep> {
    let n = map.n();
    if adj.n() != n || values.nrows() != n {
        return Err(Error::Dimension(format!(
            "map {n}, adjacency {}, values {} rows",
            adj.n(),
            values.nrows()
        )));
    }
    let a = DMatrix::from_row_slice(n, n, map.as_slice());
    let h_full = &a * values;
    let mut h_simplified = DMatrix::zeros(n, values.ncols());
    for i in 0..n {
        let mut row = values.row(0) * map.get(i, 0);
        for j in adj.preceding_neighbors(i) {
            row += values.row(j) * map.get(i, j);
        }
        h_simplified.set_row(i, &row);
    }
    let (start, end) = adj.span();
    let mut residual_norm = 0.0_f64;
    let mut max_abs_residual = 0.0_f64;
    for i in start.max(1)..end {
        let full = h_full.row(i).norm();
        let diff = (h_full.row(i) - h_simplified.row(i)).norm();
        max_abs_residual = max_abs_residual.max(diff);
        if full > 0.0 {
            residual_norm = residual_norm.max(diff / full);
        }
    }
    Ok(GatStep {
        h_full,
        h_simplified,
        residual_norm,
        max_abs_residual,
    })
}

/// Node-level rows taken from token-level representations: each node uses the
/// first NODE token carrying its id. Nodes that never appear get zero rows.
pub fn node_rows(token_h: &DMatrix<f64>, adj: &TokenAdjacency, num_nodes: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(num_nodes, token_h.ncols());
    let mut seen = vec![false; num_nodes];
    let (start, end) = adj.span();
    for i in start..end {
        if let Some(v) = adj.token(i).and_then(|t| t.node_id()) {
            if v < num_nodes && !seen[v] {
                seen[v] = true;
                out.set_row(v, &token_h.row(i));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// verification suite
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, tol: f64) -> Self {
        let abs_err = (lhs - rhs).abs();
        let rel_err = if rhs != 0.0 { abs_err / rhs.abs() } else { abs_err };
        Check {
            name: name.into(),
            lhs,
            rhs,
            abs_err,
            rel_err,
            pass: rel_err <= tol,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub lambdas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub seeds: u64,
    pub max_nodes: usize,
    pub max_dim: usize,
    pub rel_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            lambdas: (1..=9).map(|i| i as f64 / 10.0).collect(),
            gammas: (0..=10).map(|i| i as f64 / 10.0).collect(),
            seeds: 20,
            max_nodes: 30,
            max_dim: 8,
            rel_tol: 1e-10,
        }
    }
}

/// Seeded Erdős–Rényi graph with at least one edge.
pub fn random_graph<R: Rng>(n: usize, p: f64, rng: &mut R) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    if edges.is_empty() && n >= 2 {
        edges.push((0, 1));
    }
    Graph {
        num_nodes: n,
        edges,
        directed: false,
        allow_self_loops: false,
    }
}

pub fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

struct Instance {
    lap: Laplacian,
    h_topo: DMatrix<f64>,
    v0: DVector<f64>,
    k: usize,
    l: usize,
}

fn instance(seed: u64, cfg: &VerifyConfig) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=cfg.max_nodes.max(2));
    let dim = rng.random_range(1..=cfg.max_dim.max(1));
    let g = random_graph(n, rng.random_range(0.1..0.6), &mut rng);
    let h_topo = random_matrix(n, dim, &mut rng);
    let v0 = DVector::from_fn(dim, |_, _| rng.random_range(-3.0..3.0));
    let k = rng.random_range(0..n);
    let l = (k + rng.random_range(1..n)) % n;
    Ok(Instance {
        lap: laplacian(&g)?,
        h_topo,
        v0,
        k,
        l,
    })
}

/// Runs every check over the `(lambda, gamma)` grid and seeds.
pub fn run_verification(cfg: &VerifyConfig) -> Result<VerificationReport> {
    let tol = cfg.rel_tol;
    let mut checks = vec![
        Check::new("rho(0.5,0.5)", amplification_ratio(0.5, 0.5)?, 1.5, tol),
        Check::new("laplacian_null_space", 0.0, 0.0, tol),
    ];
    // exact decay factor at lambda = 0.5 on a fixed path graph
    let path = laplacian(&Graph::new(3, vec![(0, 1), (1, 2)])?)?;
    let topo = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 3.0]);
    let rep = mix_with_sink(&topo, &DVector::from_element(1, 2.0), 0.5)?;
    let decay = verify_energy_decay(&rep, &path)?;
    checks.push(Check::new(
        "decay_factor(0.5)",
        decay.factor.unwrap_or(f64::NAN),
        0.25,
        tol,
    ));

    for seed in 0..cfg.seeds {
        let inst = instance(seed, cfg)?;
        let ones = DMatrix::from_element(inst.lap.n(), 1, 1.0);
        let null = (&inst.lap.matrix * ones).abs().max();
        checks[1].lhs = checks[1].lhs.max(null);
        for &lambda in &cfg.lambdas {
            let rep = mix_with_sink(&inst.h_topo, &inst.v0, lambda)?;
            let c = verify_contraction(&rep, inst.k, inst.l)?;
            checks.push(Check::new(
                format!("contraction[lambda={lambda},seed={seed}]"),
                c.lhs,
                c.rhs,
                tol,
            ));
            let d = verify_energy_decay(&rep, &inst.lap)?;
            if d.e_topo > 0.0 {
                checks.push(Check::new(
                    format!("energy_decay[lambda={lambda},seed={seed}]"),
                    d.e_mixed,
                    (1.0 - lambda).powi(2) * d.e_topo,
                    tol,
                ));
            }
            for &gamma in &cfg.gammas {
                let e = verify_expansion(&rep, gamma, inst.k, inst.l)?;
                checks.push(Check::new(
                    format!("expansion[lambda={lambda},gamma={gamma},seed={seed}]"),
                    e.observed_ratio,
                    e.predicted_rho,
                    tol,
                ));
                let s = verify_spectral_amplification(&rep, &inst.lap, gamma)?;
                if s.e_mixed > 0.0 {
                    checks.push(Check::new(
                        format!("spectral_amplification[lambda={lambda},gamma={gamma},seed={seed}]"),
                        s.e_sharpened,
                        s.predicted,
                        tol,
                    ));
                }
            }
        }
    }
    let null = &mut checks[1];
    null.abs_err = null.lhs;
    null.rel_err = null.lhs;
    null.pass = null.lhs == 0.0;
    Ok(VerificationReport { checks })
}
