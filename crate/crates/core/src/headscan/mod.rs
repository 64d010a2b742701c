//! Offline identification of topology-aware heads.
//!
//! Two sequential filters: matrix entropy separates active heads from
//! inactive ones, then a concentration score measures how well each active
//! head's strongest entries line up with the same-source token mask. Both
//! thresholds come from Otsu's method, the second fitted only on heads that
//! passed the first.

mod entropy;
mod morph;
mod otsu;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use entropy::matrix_entropy;
pub use morph::{dilate, erode, morph_close, BinaryMask};
pub use otsu::{otsu_threshold, BINS as OTSU_BINS};

use crate::attnops::{AttentionTensor, AttnMap};
use crate::error::{Error, Result};
use crate::graphtext::TokenAdjacency;

/// Keeps the `k = nnz(mask)` largest causal entries inside the span.
///
/// Ties at the cut go to the earlier row-major position.
pub fn topk_binarize(map: &AttnMap, adj: &TokenAdjacency) -> Result<BinaryMask> {
    let n = map.n();
    if adj.n() != n {
        return Err(Error::Dimension(format!(
            "map has {n} tokens, adjacency {}",
            adj.n()
        )));
    }
    let k = adj.nnz();
    if k == 0 {
        return Err(Error::Empty("token adjacency"));
    }
    let (start, end) = adj.span();
    let mut cand: Vec<(usize, usize)> = (start..end)
        .flat_map(|i| (start..=i).map(move |j| (i, j)))
        .collect();
    if k > cand.len() {
        return Err(Error::Dimension(format!(
            "k = {k} exceeds {} candidate positions",
            cand.len()
        )));
    }
    // stable: equal values keep row-major order
    cand.sort_by(|&(a, b), &(c, d)| map.get(c, d).total_cmp(&map.get(a, b)));
    let mut out = BinaryMask::zeros(n, n);
    for &(i, j) in &cand[..k] {
        out.set(i, j, true);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Concentration {
    pub c: f64,
    pub e_in: f64,
    pub e_out: f64,
}

/// `(1 - e_in) * (1 - e_out)`, where `e_in` is the fraction of the target
/// region left empty and `e_out` the fraction of the outer region filled.
pub fn concentration_score(b: &BinaryMask, adj: &TokenAdjacency) -> Result<Concentration> {
    if b.rows() != adj.n() || b.cols() != adj.n() {
        return Err(Error::Dimension(format!(
            "{}x{} mask against {} tokens",
            b.rows(),
            b.cols(),
            adj.n()
        )));
    }
    let (mut n_in, mut miss) = (0usize, 0usize);
    for (i, j) in adj.in_region() {
        n_in += 1;
        miss += !b.get(i, j) as usize;
    }
    let (mut n_out, mut leak) = (0usize, 0usize);
    for (i, j) in adj.out_region() {
        n_out += 1;
        leak += b.get(i, j) as usize;
    }
    if n_in == 0 {
        return Err(Error::Empty("target region"));
    }
    if n_out == 0 {
        return Err(Error::Empty("outer region"));
    }
    let e_in = miss as f64 / n_in as f64;
    let e_out = leak as f64 / n_out as f64;
    Ok(Concentration {
        c: (1.0 - e_in) * (1.0 - e_out),
        e_in,
        e_out,
    })
}

/// Binarize, close, score.
pub fn head_concentration(map: &AttnMap, adj: &TokenAdjacency) -> Result<Concentration> {
    concentration_score(&morph_close(&topk_binarize(map, adj)?), adj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadScore {
    pub layer: usize,
    pub head: usize,
    pub entropy: f64,
    pub concentration: f64,
    pub e_in: f64,
    pub e_out: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    #[serde(rename = "T_S")]
    pub entropy_threshold: f64,
    #[serde(rename = "T_C")]
    pub concentration_threshold: f64,
    #[serde(rename = "heads")]
    pub scores: Vec<HeadScore>,
    pub selected_heads: BTreeSet<(usize, usize)>,
    pub selected_layers: BTreeSet<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScanConfig {
    /// Logarithm base for the entropy; `None` is natural log.
    pub log_base: Option<f64>,
}

pub fn select_heads(t: &AttentionTensor, adj: &TokenAdjacency) -> Result<SelectionResult> {
    select_heads_with(t, adj, &ScanConfig::default())
}

pub fn select_heads_with(
    t: &AttentionTensor,
    adj: &TokenAdjacency,
    cfg: &ScanConfig,
) -> Result<SelectionResult> {
    if t.n != adj.n() {
        return Err(Error::Dimension(format!(
            "tensor has {} tokens, adjacency {}",
            t.n,
            adj.n()
        )));
    }
    let scale = cfg.log_base.map_or(1.0, |b| 1.0 / b.ln());
    let mut scores = Vec::with_capacity(t.layers * t.heads);
    for (layer, head) in t.head_ids() {
        scores.push(HeadScore {
            layer,
            head,
            entropy: matrix_entropy(t.map(layer, head))? * scale,
            concentration: 0.0,
            e_in: 1.0,
            e_out: 0.0,
            selected: false,
        });
    }
    let entropies: Vec<f64> = scores.iter().map(|s| s.entropy).collect();
    let t_s = otsu_threshold(&entropies)
        .map_err(|e| Error::Degenerate(format!("entropy stage: {e}")))?;

    let mut active = Vec::new();
    for s in scores.iter_mut().filter(|s| s.entropy >= t_s) {
        let c = head_concentration(t.map(s.layer, s.head), adj)?;
        s.concentration = c.c;
        s.e_in = c.e_in;
        s.e_out = c.e_out;
        active.push(c.c);
    }
    let t_c = otsu_threshold(&active)
        .map_err(|e| Error::Degenerate(format!("concentration stage: {e}")))?;

    let mut selected_heads = BTreeSet::new();
    for s in &mut scores {
        s.selected = s.entropy >= t_s && s.concentration >= t_c;
        if s.selected {
            selected_heads.insert((s.layer, s.head));
        }
    }
    let selected_layers = selected_heads.iter().map(|&(l, _)| l).collect();
    Ok(SelectionResult {
        entropy_threshold: t_s,
        concentration_threshold: t_c,
        scores,
        selected_heads,
        selected_layers,
    })
}
