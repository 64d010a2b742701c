//! Attention maps, the sink/structural/noise budget and sink sharpening.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphtext::TokenAdjacency;

/// Row-sum tolerance for a valid attention map.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Rows whose sink mass is within this of 1 carry nothing to redistribute.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// Square row-major attention matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnMap {
    n: usize,
    data: Vec<f64>,
}

impl AttnMap {
    pub fn zeros(n: usize) -> Self {
        AttnMap {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::Dimension(format!(
                "row {bad} has {} entries, expected {n}",
                rows[bad].len()
            )));
        }
        Ok(AttnMap {
            n,
            data: rows.concat(),
        })
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Dimension(format!(
                "{} values for a {n}x{n} map",
                data.len()
            )));
        }
        Ok(AttnMap { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n.max(1))
    }

    /// Element-wise mean of equally sized maps.
    pub fn mean<'a, I: IntoIterator<Item = &'a AttnMap>>(maps: I) -> Result<Self> {
        let mut it = maps.into_iter();
        let first = it.next().ok_or(Error::Empty("map set"))?;
        let mut acc = first.clone();
        let mut count = 1.0;
        for m in it {
            if m.n != acc.n {
                return Err(Error::Dimension("maps of different size".into()));
            }
            acc.data.iter_mut().zip(&m.data).for_each(|(a, b)| *a += b);
            count += 1.0;
        }
        acc.data.iter_mut().for_each(|a| *a /= count);
        Ok(acc)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub span_start: usize,
    pub span_end: usize,
    #[serde(default)]
    pub label: String,
}

/// Per-(layer, head) causal attention maps, layer-major then head-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    pub layers: usize,
    pub heads: usize,
    pub n: usize,
    pub maps: Vec<AttnMap>,
    pub meta: TensorMeta,
}

impl AttentionTensor {
    pub fn new(layers: usize, heads: usize, maps: Vec<AttnMap>, meta: TensorMeta) -> Result<Self> {
        if maps.len() != layers * heads {
            return Err(Error::Dimension(format!(
                "{} maps for {layers} layers x {heads} heads",
                maps.len()
            )));
        }
        let n = maps.first().map_or(0, AttnMap::n);
        if maps.iter().any(|m| m.n() != n) {
            return Err(Error::Dimension("maps of different size".into()));
        }
        if meta.span_start > meta.span_end || meta.span_end > n {
            return Err(Error::Dimension(format!(
                "span [{}, {}) outside {n} tokens",
                meta.span_start, meta.span_end
            )));
        }
        Ok(AttentionTensor {
            layers,
            heads,
            n,
            maps,
            meta,
        })
    }

    pub fn map(&self, layer: usize, head: usize) -> &AttnMap {
        &self.maps[layer * self.heads + head]
    }

    pub fn map_mut(&mut self, layer: usize, head: usize) -> &mut AttnMap {
        &mut self.maps[layer * self.heads + head]
    }

    pub fn head_ids(&self) -> impl Iterator<Item = (usize, usize)> {
        let heads = self.heads;
        (0..self.layers).flat_map(move |l| (0..heads).map(move |h| (l, h)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Nonzero entry above the diagonal.
    Causality,
    RowSum,
    EntryRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub layer: usize,
    pub head: usize,
    pub row: usize,
    pub col: Option<usize>,
    pub kind: ViolationKind,
    pub value: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}) row {}", self.layer, self.head, self.row)?;
        if let Some(c) = self.col {
            write!(f, " col {c}")?;
        }
        write!(f, ": {:?} ({})", self.kind, self.value)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_map(map: &AttnMap, layer: usize, head: usize, out: &mut Vec<Violation>) {
    for (i, row) in map.rows().enumerate() {
        let mut sum = 0.0;
        for (j, &a) in row.iter().enumerate() {
            let at = |kind| Violation {
                layer,
                head,
                row: i,
                col: Some(j),
                kind,
                value: a,
            };
            if j > i && a != 0.0 {
                out.push(at(ViolationKind::Causality));
            }
            if !(0.0..=1.0).contains(&a) {
                out.push(at(ViolationKind::EntryRange));
            }
            if j <= i {
                sum += a;
            }
        }
        if !((sum - 1.0).abs() <= ROW_SUM_TOL) {
            out.push(Violation {
                layer,
                head,
                row: i,
                col: None,
                kind: ViolationKind::RowSum,
                value: sum,
            });
        }
    }
}

pub fn validate_tensor(t: &AttentionTensor) -> ValidationReport {
    let mut violations = Vec::new();
    for (l, h) in t.head_ids() {
        validate_map(t.map(l, h), l, h, &mut violations);
    }
    ValidationReport { violations }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub row: usize,
    pub sink: f64,
    pub structural: f64,
    pub noise: f64,
}

/// Split of attention mass into sink, structural aggregation and residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetBreakdown {
    pub sink_fraction: f64,
    pub structural_fraction: f64,
    pub noise_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_row: Option<Vec<BudgetRow>>,
}

/// Budget over rows `i >= 1` of the edge-description span.
///
/// The structural term sums strictly preceding same-source tokens, so the
/// diagonal entry lands in the residual.
pub fn budget(map: &AttnMap, adj: &TokenAdjacency) -> Result<BudgetBreakdown> {
    if map.n() != adj.n() {
        return Err(Error::Dimension(format!(
            "map has {} tokens, adjacency {}",
            map.n(),
            adj.n()
        )));
    }
    let (start, end) = adj.span();
    let mut rows = Vec::new();
    for i in start.max(1)..end {
        let row = map.row(i);
        let sink = row[0];
        let structural: f64 = adj.preceding_neighbors(i).map(|j| row[j]).sum();
        let noise: f64 = (1..=i)
            .filter(|&j| j == i || !adj.get(i, j))
            .map(|j| row[j])
            .sum();
        rows.push(BudgetRow {
            row: i,
            sink,
            structural,
            noise,
        });
    }
    if rows.is_empty() {
        return Err(Error::Empty("budget rows"));
    }
    let m = rows.len() as f64;
    let mean = |f: fn(&BudgetRow) -> f64| rows.iter().map(f).sum::<f64>() / m;
    Ok(BudgetBreakdown {
        sink_fraction: mean(|r| r.sink),
        structural_fraction: mean(|r| r.structural),
        noise_fraction: mean(|r| r.noise),
        per_row: Some(rows),
    })
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::OutOfRange {
            name: "gamma",
            value: gamma,
            range: "[0, 1]",
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sharpened {
    pub map: AttnMap,
    /// Rows left untouched because the sink held all of their mass.
    pub degenerate_rows: usize,
}

/// Scales the sink column by `gamma` and hands the recovered mass to the
/// non-sink entries in proportion to their current weight.
///
/// Row 0 is never modified.
pub fn sharpen_map(map: &AttnMap, gamma: f64) -> Result<Sharpened> {
    check_gamma(gamma)?;
    let mut out = map.clone();
    let mut degenerate_rows = 0;
    for i in 1..map.n() {
        let row = out.row_mut(i);
        let sink = row[0];
        if sink >= 1.0 - DEGENERATE_EPS {
            degenerate_rows += 1;
            continue;
        }
        let scale = 1.0 + (1.0 - gamma) * sink / (1.0 - sink);
        row[0] = gamma * sink;
        // rounding can push a sole surviving entry a hair past 1
        row[1..].iter_mut().for_each(|a| *a = (*a * scale).min(1.0));
    }
    Ok(Sharpened {
        map: out,
        degenerate_rows,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    Heads(BTreeSet<(usize, usize)>),
    Layers(BTreeSet<usize>),
}

impl Targets {
    pub fn is_empty(&self) -> bool {
        match self {
            Targets::Heads(s) => s.is_empty(),
            Targets::Layers(s) => s.is_empty(),
        }
    }

    pub fn contains(&self, layer: usize, head: usize) -> bool {
        match self {
            Targets::Heads(s) => s.contains(&(layer, head)),
            Targets::Layers(s) => s.contains(&layer),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpenConfig {
    pub gamma: f64,
    pub targets: Targets,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharpenedTensor {
    pub tensor: AttentionTensor,
    pub degenerate_rows: usize,
}

/// Applies [`sharpen_map`] to every targeted head; other heads are copied.
pub fn sharpen_tensor(t: &AttentionTensor, cfg: &SharpenConfig) -> Result<SharpenedTensor> {
    check_gamma(cfg.gamma)?;
    if cfg.targets.is_empty() {
        return Err(Error::Empty("sharpen targets"));
    }
    match &cfg.targets {
        Targets::Heads(s) => {
            if let Some(&(l, h)) = s.iter().find(|&&(l, h)| l >= t.layers || h >= t.heads) {
                return Err(Error::TargetOutOfBounds(format!(
                    "head ({l}, {h}) in {}x{} tensor",
                    t.layers, t.heads
                )));
            }
        }
        Targets::Layers(s) => {
            if let Some(&l) = s.iter().find(|&&l| l >= t.layers) {
                return Err(Error::TargetOutOfBounds(format!(
                    "layer {l} in {}-layer tensor",
                    t.layers
                )));
            }
        }
    }
    let mut out = t.clone();
    let mut degenerate_rows = 0;
    for (l, h) in t.head_ids() {
        if cfg.targets.contains(l, h) {
            let s = sharpen_map(t.map(l, h), cfg.gamma)?;
            degenerate_rows += s.degenerate_rows;
            *out.map_mut(l, h) = s.map;
        }
    }
    Ok(SharpenedTensor {
        tensor: out,
        degenerate_rows,
    })
}

/// Pairwise-distance scaling `(1 - gamma*lambda) / (1 - lambda)` caused by
/// sharpening a sink of weight `lambda`.
pub fn amplification_ratio(lambda: f64, gamma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::OutOfRange {
            name: "lambda",
            value: lambda,
            range: "[0, 1)",
        });
    }
    check_gamma(gamma)?;
    Ok((1.0 - gamma * lambda) / (1.0 - lambda))
}
