//! Seeded synthetic attention tensors with planted topology-aware heads.
//!
//! Sequences are one sink token followed by the serialized edge list, so the
//! span is `[1, 1 + 5 * edges)`. Every row is a softmax: non-sink logits are
//! log target weights plus Gaussian jitter scaled by `temperature`, and the
//! sink logit is found by bisection so the sink takes its drawn share.
//!
//! Planted rows split their non-sink mass three ways:
//!
//! * `noise_fraction` spread over every visible non-sink token,
//! * of the rest, `alignment` on same-source tokens (diagonal included),
//! * the remainder on the nearest preceding tokens of other sources.
//!
//! Other heads draw one of three distractor archetypes with no relation to
//! the token mask.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attnops::{AttentionTensor, AttnMap, TensorMeta};
use crate::error::{Error, Result};
use crate::graphtext::{aggregate_edges, serialize, Graph, TokenAdjacency};
use crate::headscan::{topk_binarize, SelectionResult};

/// Sink shift from the query's structural fan-in, from `-x` (one visible
/// same-source token) to `+x` (the largest fan-in in the sequence).
pub const SINK_FANIN_SPREAD: f64 = 0.03;
/// Random per-token sink propensity shared by every head.
pub const SINK_TOKEN_SPREAD: f64 = 0.01;
/// Per-head, per-row sink jitter.
pub const SINK_HEAD_SPREAD: f64 = 0.005;
/// Off-source tokens that receive a planted head's misaligned mass.
pub const MISALIGNED_WINDOW: usize = 5;
const LOCAL_WINDOW: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub layers: usize,
    pub heads: usize,
    pub graph: Graph,
    pub planted: BTreeSet<(usize, usize)>,
    pub lambda_sink: f64,
    pub alignment: f64,
    pub noise_fraction: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    /// 4 layers x 32 heads with three planted heads.
    pub fn with_defaults(graph: Graph, seed: u64) -> Self {
        GeneratorSpec {
            layers: 4,
            heads: 32,
            graph,
            planted: [(1, 7), (2, 3), (2, 19)].into(),
            lambda_sink: 0.6,
            alignment: 0.85,
            noise_fraction: 0.1,
            temperature: 0.1,
            seed,
        }
    }

    /// Defaults on a random source-aggregated graph drawn from `seed`.
    pub fn default_for_seed(seed: u64) -> Self {
        Self::with_defaults(random_edge_list(12, 30, seed), seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        if self.graph.edges.is_empty() {
            return Err(Error::Empty("generator graph"));
        }
        if self.layers == 0 || self.heads == 0 {
            return Err(Error::Empty("tensor shape"));
        }
        if let Some(&(l, h)) = self
            .planted
            .iter()
            .find(|&&(l, h)| l >= self.layers || h >= self.heads)
        {
            return Err(Error::TargetOutOfBounds(format!("planted head ({l}, {h})")));
        }
        let unit = |name, value: f64| {
            if (0.0..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(Error::OutOfRange {
                    name,
                    value,
                    range: "[0, 1]",
                })
            }
        };
        unit("alignment", self.alignment)?;
        unit("noise_fraction", self.noise_fraction)?;
        if !(0.0..1.0).contains(&self.lambda_sink) {
            return Err(Error::OutOfRange {
                name: "lambda_sink",
                value: self.lambda_sink,
                range: "[0, 1)",
            });
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::OutOfRange {
                name: "temperature",
                value: self.temperature,
                range: "[0, inf)",
            });
        }
        Ok(())
    }

    pub fn n_tokens(&self) -> usize {
        1 + 5 * self.graph.edges.len()
    }

    /// Token mask placed where the generator puts the edge list.
    pub fn adjacency(&self) -> Result<TokenAdjacency> {
        TokenAdjacency::placed(&serialize(&self.graph), self.n_tokens(), 1)
    }
}

/// Random simple graph as a source-aggregated, randomly oriented edge list.
pub fn random_edge_list(num_nodes: usize, num_edges: usize, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut pairs: Vec<(usize, usize)> = (0..num_nodes)
        .flat_map(|u| (u + 1..num_nodes).map(move |v| (u, v)))
        .collect();
    pairs.shuffle(&mut rng);
    pairs.truncate(num_edges);
    let edges = pairs
        .into_iter()
        .map(|(u, v)| if rng.random_bool(0.5) { (u, v) } else { (v, u) })
        .collect();
    let g = Graph {
        num_nodes,
        edges,
        directed: false,
        allow_self_loops: false,
    };
    aggregate_edges(&g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Planted,
    /// Nearly all mass on the sink.
    PureSink,
    /// Sink plus the few immediately preceding tokens.
    LocalWindow,
    /// Heavy sink, remainder spread evenly.
    Diffuse,
}

fn head_seed(seed: u64, layer: usize, head: usize) -> u64 {
    // splitmix64 finalizer over the mixed indices
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((layer as u64) << 32 | head as u64)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn head_rng(spec: &GeneratorSpec, layer: usize, head: usize) -> (Archetype, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(head_seed(spec.seed, layer, head));
    let draw: f64 = rng.random();
    let kind = if spec.planted.contains(&(layer, head)) {
        Archetype::Planted
    } else if draw < 0.4 {
        Archetype::PureSink
    } else if draw < 0.7 {
        Archetype::LocalWindow
    } else {
        Archetype::Diffuse
    };
    (kind, rng)
}

/// Archetype of every head, layer-major.
pub fn archetypes(spec: &GeneratorSpec) -> Vec<Archetype> {
    (0..spec.layers)
        .flat_map(|l| (0..spec.heads).map(move |h| (l, h)))
        .map(|(l, h)| head_rng(spec, l, h).0)
        .collect()
}

pub fn planted_truth(spec: &GeneratorSpec) -> BTreeSet<(usize, usize)> {
    spec.planted.clone()
}

/// Softmax row whose sink (column 0) takes `sink` of the mass.
///
/// `weights[j]` for `j >= 1` are unnormalized non-sink weights; zero weights
/// stay zero.
fn softmax_row(weights: &[f64], jitter: &[f64], sink: f64, out: &mut [f64]) {
    let logits: Vec<f64> = weights
        .iter()
        .zip(jitter)
        .map(|(&w, &z)| if w > 0.0 { w.ln() + z } else { f64::NEG_INFINITY })
        .collect();
    let top = logits[1..]
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let rest: f64 = logits[1..]
        .iter()
        .map(|&l| if l.is_finite() { (l - top).exp() } else { 0.0 })
        .sum();
    if rest == 0.0 {
        out[0] = 1.0;
        return;
    }
    if sink <= 0.0 {
        out[0] = 0.0;
        for (o, &l) in out[1..].iter_mut().zip(&logits[1..]) {
            *o = if l.is_finite() { (l - top).exp() / rest } else { 0.0 };
        }
        return;
    }
    // sink share as a function of the sink logit (relative to `top`)
    let share = |b: f64| {
        let e = b.exp();
        e / (e + rest)
    };
    let (mut lo, mut hi) = (-60.0_f64, 60.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if share(mid) < sink {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = 0.5 * (lo + hi);
    let sink_w = b.exp();
    let z = sink_w + rest;
    out[0] = sink_w / z;
    for (o, &l) in out[1..].iter_mut().zip(&logits[1..]) {
        *o = if l.is_finite() { (l - top).exp() / z } else { 0.0 };
    }
}

fn planted_weights(spec: &GeneratorSpec, adj: &TokenAdjacency, i: usize, w: &mut [f64]) {
    let visible = i as f64;
    let nu = spec.noise_fraction;
    let support: Vec<usize> = (1..=i).filter(|&j| adj.get(i, j)).collect();
    let misaligned: Vec<usize> = (1..i)
        .rev()
        .filter(|&j| !adj.get(i, j))
        .take(MISALIGNED_WINDOW)
        .collect();
    let aligned = (1.0 - nu) * spec.alignment;
    let (on_support, off) = if misaligned.is_empty() {
        (1.0 - nu, 0.0)
    } else {
        (aligned, 1.0 - nu - aligned)
    };
    for j in 1..=i {
        w[j] = nu / visible;
    }
    for &j in &support {
        w[j] += on_support / support.len() as f64;
    }
    for &j in &misaligned {
        w[j] += off / misaligned.len() as f64;
    }
}

/// Sink propensity of each query token, shared across heads. Queries with
/// many same-source predecessors lose more of their row to the sink.
fn token_sink_offsets(spec: &GeneratorSpec, adj: &TokenAdjacency) -> Vec<f64> {
    let n = adj.n();
    let fan_in: Vec<usize> = (0..n)
        .map(|i| (0..=i).filter(|&j| adj.get(i, j)).count())
        .collect();
    let max_fan = fan_in.iter().copied().max().unwrap_or(1).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(head_seed(spec.seed, usize::MAX, usize::MAX));
    fan_in
        .iter()
        .map(|&f| {
            let depth = f.saturating_sub(1) as f64 / (max_fan - 1) as f64;
            SINK_FANIN_SPREAD * (2.0 * depth - 1.0)
                + rng.random_range(-SINK_TOKEN_SPREAD..=SINK_TOKEN_SPREAD)
        })
        .collect()
}

fn generate_head(
    spec: &GeneratorSpec,
    adj: &TokenAdjacency,
    offsets: &[f64],
    layer: usize,
    head: usize,
) -> AttnMap {
    let n = adj.n();
    let (kind, mut rng) = head_rng(spec, layer, head);
    let mut map = AttnMap::zeros(n);
    map.set(0, 0, 1.0);
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    for i in 1..n {
        w[..=i].iter_mut().for_each(|x| *x = 0.0);
        let base_sink = match kind {
            Archetype::Planted | Archetype::LocalWindow => spec.lambda_sink,
            Archetype::PureSink => 0.97,
            Archetype::Diffuse => 0.9,
        };
        let own = rng.random_range(-SINK_HEAD_SPREAD..=SINK_HEAD_SPREAD);
        let sink = (base_sink + offsets[i] + own).clamp(0.0, 0.999);
        match kind {
            Archetype::Planted => planted_weights(spec, adj, i, &mut w),
            Archetype::PureSink | Archetype::Diffuse => {
                w[1..=i].iter_mut().for_each(|x| *x = 1.0);
            }
            Archetype::LocalWindow => {
                for j in 1..=i {
                    w[j] = 0.1 / i as f64;
                }
                let lo = i.saturating_sub(LOCAL_WINDOW - 1).max(1);
                for j in lo..=i {
                    w[j] += 0.9 / (i - lo + 1) as f64;
                }
            }
        }
        for zj in z[1..=i].iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *zj = spec.temperature * g;
        }
        softmax_row(&w[..=i], &z[..=i], sink, &mut map.row_mut(i)[..=i]);
    }
    map
}

pub fn generate(spec: &GeneratorSpec) -> Result<AttentionTensor> {
    spec.validate()?;
    let adj = spec.adjacency()?;
    let offsets = token_sink_offsets(spec, &adj);
    let maps = (0..spec.layers)
        .flat_map(|l| (0..spec.heads).map(move |h| (l, h)))
        .map(|(l, h)| generate_head(spec, &adj, &offsets, l, h))
        .collect();
    let (span_start, span_end) = adj.span();
    AttentionTensor::new(
        spec.layers,
        spec.heads,
        maps,
        TensorMeta {
            span_start,
            span_end,
            label: format!("synth seed={}", spec.seed),
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Edge list recovered from the serialization: `(source, target)` pairs.
pub fn serialized_edges(adj: &TokenAdjacency) -> HashSet<(usize, usize)> {
    let toks = &adj.serialization().tokens;
    toks.chunks_exact(5)
        .filter_map(|t| Some((t[1].node_id()?, t[3].node_id()?)))
        .collect()
}

/// Node-level reconstruction from the selected heads.
///
/// Averages the selected maps, keeps the top-k entries, and reads each kept
/// entry `(i, j)` whose column is a NODE token `w` as a vote for the edge
/// `(source(i), w)`. Scored against the serialized edge list.
pub fn downstream_probe(
    t: &AttentionTensor,
    adj: &TokenAdjacency,
    sel: &SelectionResult,
) -> Result<ProbeResult> {
    if sel.selected_heads.is_empty() {
        return Err(Error::Empty("selected heads"));
    }
    if let Some(&(l, h)) = sel
        .selected_heads
        .iter()
        .find(|&&(l, h)| l >= t.layers || h >= t.heads)
    {
        return Err(Error::TargetOutOfBounds(format!("selected head ({l}, {h})")));
    }
    let mean = AttnMap::mean(sel.selected_heads.iter().map(|&(l, h)| t.map(l, h)))?;
    let b = topk_binarize(&mean, adj)?;
    let (start, end) = adj.span();
    let mut predicted = HashSet::new();
    for i in start..end {
        let Some(u) = adj.source(i) else { continue };
        for j in start..=i {
            if !b.get(i, j) {
                continue;
            }
            if let Some(w) = adj.token(j).and_then(|tok| tok.node_id()) {
                if w != u {
                    predicted.insert((u, w));
                }
            }
        }
    }
    let truth = serialized_edges(adj);
    let tp = predicted.intersection(&truth).count() as f64;
    let precision = if predicted.is_empty() {
        0.0
    } else {
        tp / predicted.len() as f64
    };
    let recall = if truth.is_empty() {
        0.0
    } else {
        tp / truth.len() as f64
    };
    let f1 = if tp == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ProbeResult {
        f1,
        precision,
        recall,
    })
}
