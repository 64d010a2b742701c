//! Graph model, edge-tuple serialization and the token-level adjacency mask.
//!
//! Every edge `(u,v)` becomes exactly five tokens: `(`, `u`, `,`, `v`, `)`.
//! Node ids are kept whole, so the token stream is independent of any model
//! tokenizer and the token-level mask is exact.

use std::collections::HashMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tokens emitted per serialized edge.
pub const TOKENS_PER_EDGE: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    #[serde(default)]
    pub directed: bool,
    #[serde(default)]
    pub allow_self_loops: bool,
}

impl Graph {
    pub fn new(num_nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let g = Graph {
            num_nodes,
            edges,
            directed: false,
            allow_self_loops: false,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (index, &(u, v)) in self.edges.iter().enumerate() {
            for node in [u, v] {
                if node >= self.num_nodes {
                    return Err(Error::NodeOutOfRange {
                        index,
                        node,
                        num_nodes: self.num_nodes,
                    });
                }
            }
            if u == v && !self.allow_self_loops {
                return Err(Error::SelfLoop { index, node: u });
            }
        }
        Ok(())
    }

    /// True when every source node occupies one contiguous run of edges.
    pub fn is_source_grouped(&self) -> bool {
        let mut seen = vec![false; self.num_nodes];
        let mut prev: Option<usize> = None;
        for &(u, _) in &self.edges {
            if prev != Some(u) {
                if seen[u] {
                    return false;
                }
                seen[u] = true;
                prev = Some(u);
            }
        }
        true
    }

    /// `(u,v)` substrings concatenated with no separators.
    pub fn edge_text(&self) -> String {
        self.edges.iter().map(|(u, v)| format!("({u},{v})")).collect()
    }
}

/// Parses and validates graph JSON.
pub fn load_graph<R: Read>(source: R) -> Result<Graph> {
    let g: Graph = serde_json::from_reader(source)?;
    g.validate()?;
    Ok(g)
}

/// Source-node aggregation: stable regrouping of edges by source node.
///
/// Groups appear in order of each source's first occurrence; within a group
/// the original relative order is kept.
pub fn aggregate_edges(g: &Graph) -> Graph {
    let mut order: Vec<usize> = Vec::new();
    let mut buckets: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
    for &(u, v) in &g.edges {
        buckets
            .entry(u)
            .or_insert_with(|| {
                order.push(u);
                Vec::new()
            })
            .push((u, v));
    }
    let edges = order
        .iter()
        .flat_map(|u| buckets.remove(u).unwrap_or_default())
        .collect();
    Graph {
        edges,
        ..g.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TokenClass {
    Open,
    Node,
    Comma,
    Close,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub class: TokenClass,
    pub edge_index: Option<usize>,
    pub source_node: Option<usize>,
}

impl Token {
    /// Node id carried by a NODE token.
    pub fn node_id(&self) -> Option<usize> {
        match self.class {
            TokenClass::Node => self.text.parse().ok(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSerialization {
    pub tokens: Vec<Token>,
    pub aggregated: bool,
}

impl TokenizedSerialization {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }
}

pub fn serialize(g: &Graph) -> TokenizedSerialization {
    let mut tokens = Vec::with_capacity(g.edges.len() * TOKENS_PER_EDGE);
    for (idx, &(u, v)) in g.edges.iter().enumerate() {
        let tok = |text: String, class| Token {
            text,
            class,
            edge_index: Some(idx),
            source_node: Some(u),
        };
        tokens.push(tok("(".into(), TokenClass::Open));
        tokens.push(tok(u.to_string(), TokenClass::Node));
        tokens.push(tok(",".into(), TokenClass::Comma));
        tokens.push(tok(v.to_string(), TokenClass::Node));
        tokens.push(tok(")".into(), TokenClass::Close));
    }
    TokenizedSerialization {
        tokens,
        aggregated: g.is_source_grouped(),
    }
}

/// Causal same-source mask over token positions, with its scoring regions.
///
/// The serialization occupies `[span_start, span_end)` of an `n`-token
/// sequence. `mask[i, j] = 1` iff `j <= i` and both tokens carry the same
/// source node. Scoring regions live inside the span and never touch
/// column 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenAdjacency {
    n: usize,
    span_start: usize,
    span_end: usize,
    mask: Vec<bool>,
    source: Vec<Option<usize>>,
    serialization: TokenizedSerialization,
}

pub fn build_token_adjacency(s: &TokenizedSerialization) -> TokenAdjacency {
    TokenAdjacency::placed(s, s.len(), 0).expect("span fits by construction")
}

impl TokenAdjacency {
    /// Places the serialization at `span_start` inside an `n`-token sequence.
    pub fn placed(s: &TokenizedSerialization, n: usize, span_start: usize) -> Result<Self> {
        let span_end = span_start + s.len();
        if span_end > n {
            return Err(Error::Dimension(format!(
                "span [{span_start}, {span_end}) exceeds {n} tokens"
            )));
        }
        let mut source = vec![None; n];
        for (k, tok) in s.tokens.iter().enumerate() {
            source[span_start + k] = tok.source_node;
        }
        let mut mask = vec![false; n * n];
        for i in span_start..span_end {
            let Some(si) = source[i] else { continue };
            for j in span_start..=i {
                if source[j] == Some(si) {
                    mask[i * n + j] = true;
                }
            }
        }
        Ok(TokenAdjacency {
            n,
            span_start,
            span_end,
            mask,
            source,
            serialization: s.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn span(&self) -> (usize, usize) {
        (self.span_start, self.span_end)
    }

    pub fn serialization(&self) -> &TokenizedSerialization {
        &self.serialization
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.n + j]
    }

    pub fn source(&self, i: usize) -> Option<usize> {
        self.source[i]
    }

    /// Token at absolute position `i`, if it lies in the span.
    pub fn token(&self, i: usize) -> Option<&Token> {
        if (self.span_start..self.span_end).contains(&i) {
            self.serialization.tokens.get(i - self.span_start)
        } else {
            None
        }
    }

    /// Number of ones in the mask.
    pub fn nnz(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    fn region_rows(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let lo = self.span_start.max(1);
        (lo..self.span_end).flat_map(move |i| (lo..=i).map(move |j| (i, j)))
    }

    /// Positions of the target region: mask support with `j >= 1`.
    pub fn in_region(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.region_rows().filter(|&(i, j)| self.get(i, j))
    }

    /// Remaining causal positions inside the span with `j >= 1`.
    pub fn out_region(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.region_rows().filter(|&(i, j)| !self.get(i, j))
    }

    /// `{j : 1 <= j < i, mask[i, j] = 1}`.
    pub fn preceding_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (1..i).filter(move |&j| self.get(i, j))
    }

    /// Dense 0/1 rows, for export.
    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) as u8).collect())
            .collect()
    }
}
