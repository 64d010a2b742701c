//! In-browser demo: generate a synthetic model, look at one head's map under
//! sink sharpening, and inspect the head selection.
//!
//! [`Session`] holds the logic and is usable natively; [`Demo`] is the thin
//! wasm-bindgen wrapper the page talks to.

use serde::Serialize;
use slash_core::attnops::{budget, sharpen_map, sharpen_tensor, AttentionTensor, AttnMap, SharpenConfig};
use slash_core::calib::Granularity;
use slash_core::graphtext::TokenAdjacency;
use slash_core::headscan::{head_concentration, matrix_entropy, select_heads, SelectionResult};
use slash_core::synthmodel::{downstream_probe, generate, GeneratorSpec};
use wasm_bindgen::prelude::*;

pub struct Session {
    spec: GeneratorSpec,
    tensor: AttentionTensor,
    adj: TokenAdjacency,
    selection: Result<SelectionResult, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadStats {
    pub layer: usize,
    pub head: usize,
    pub gamma: f64,
    pub sink: f64,
    pub structural: f64,
    pub noise: f64,
    pub entropy: f64,
    pub concentration: f64,
    pub planted: bool,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeView {
    pub gamma: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub baseline_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadPoint {
    pub layer: usize,
    pub head: usize,
    pub entropy: f64,
    pub concentration: Option<f64>,
    pub selected: bool,
    pub planted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionView {
    pub entropy_threshold: Option<f64>,
    pub concentration_threshold: Option<f64>,
    pub error: Option<String>,
    pub heads: Vec<HeadPoint>,
}

impl Session {
    pub fn generate(seed: u64, lambda_sink: f64) -> Result<Self, String> {
        let mut spec = GeneratorSpec::default_for_seed(seed);
        spec.lambda_sink = lambda_sink;
        let tensor = generate(&spec).map_err(|e| e.to_string())?;
        let adj = spec.adjacency().map_err(|e| e.to_string())?;
        let selection = select_heads(&tensor, &adj).map_err(|e| e.to_string());
        Ok(Session {
            spec,
            tensor,
            adj,
            selection,
        })
    }

    pub fn n(&self) -> usize {
        self.tensor.n
    }

    pub fn layers(&self) -> usize {
        self.tensor.layers
    }

    pub fn heads(&self) -> usize {
        self.tensor.heads
    }

    pub fn graph_text(&self) -> String {
        self.spec.graph.edge_text()
    }

    fn map(&self, layer: usize, head: usize) -> Result<&AttnMap, String> {
        if layer >= self.tensor.layers || head >= self.tensor.heads {
            return Err(format!(
                "head ({layer}, {head}) outside {}x{}",
                self.tensor.layers, self.tensor.heads
            ));
        }
        Ok(self.tensor.map(layer, head))
    }

    fn sharpened(&self, layer: usize, head: usize, gamma: f64) -> Result<AttnMap, String> {
        Ok(sharpen_map(self.map(layer, head)?, gamma).map_err(|e| e.to_string())?.map)
    }

    fn is_selected(&self, layer: usize, head: usize) -> bool {
        self.selection
            .as_ref()
            .is_ok_and(|s| s.selected_heads.contains(&(layer, head)))
    }

    /// RGBA pixels, `n * n * 4` bytes, row-major.
    pub fn head_image(&self, layer: usize, head: usize, gamma: f64, overlay: bool) -> Result<Vec<u8>, String> {
        let map = self.sharpened(layer, head, gamma)?;
        let n = map.n();
        // normalise by the strongest non-sink entry so structure stays visible
        let top = (1..n)
            .flat_map(|i| map.row(i)[1..=i].iter().copied())
            .fold(0.0_f64, f64::max);
        let mut px = Vec::with_capacity(n * n * 4);
        for i in 0..n {
            for j in 0..n {
                let v = if top > 0.0 { (map.get(i, j) / top).min(1.0).sqrt() } else { 0.0 };
                let [mut r, mut g, mut b] = heat(v);
                if overlay && self.adj.get(i, j) {
                    r /= 2;
                    g = g / 2 + 90;
                    b = b / 2 + 90;
                }
                px.extend_from_slice(&[r, g, b, 255]);
            }
        }
        Ok(px)
    }

    pub fn head_stats(&self, layer: usize, head: usize, gamma: f64) -> Result<HeadStats, String> {
        let map = self.sharpened(layer, head, gamma)?;
        let b = budget(&map, &self.adj).map_err(|e| e.to_string())?;
        let c = head_concentration(&map, &self.adj).map_err(|e| e.to_string())?;
        Ok(HeadStats {
            layer,
            head,
            gamma,
            sink: b.sink_fraction,
            structural: b.structural_fraction,
            noise: b.noise_fraction,
            entropy: matrix_entropy(&map).map_err(|e| e.to_string())?,
            concentration: c.c,
            planted: self.spec.planted.contains(&(layer, head)),
            selected: self.is_selected(layer, head),
        })
    }

    /// Edge recovery from the selected layers, sharpened at `gamma`.
    pub fn probe(&self, gamma: f64) -> Result<ProbeView, String> {
        let sel = self.selection.as_ref().map_err(Clone::clone)?;
        let run = |g: f64| {
            let cfg = SharpenConfig {
                gamma: g,
                targets: Granularity::Layer.targets(sel),
            };
            let t = sharpen_tensor(&self.tensor, &cfg).map_err(|e| e.to_string())?.tensor;
            downstream_probe(&t, &self.adj, sel).map_err(|e| e.to_string())
        };
        let base = run(1.0)?;
        let p = if gamma == 1.0 { base } else { run(gamma)? };
        Ok(ProbeView {
            gamma,
            f1: p.f1,
            precision: p.precision,
            recall: p.recall,
            baseline_f1: base.f1,
        })
    }

    /// The same-source token mask as RGBA.
    pub fn mask_image(&self) -> Vec<u8> {
        let n = self.adj.n();
        let mut px = Vec::with_capacity(n * n * 4);
        for i in 0..n {
            for j in 0..n {
                let v = if self.adj.get(i, j) { 235 } else { 20 };
                px.extend_from_slice(&[v, v, v, 255]);
            }
        }
        px
    }

    pub fn selection(&self) -> SelectionView {
        let planted = |l, h| self.spec.planted.contains(&(l, h));
        match &self.selection {
            Ok(sel) => SelectionView {
                entropy_threshold: Some(sel.entropy_threshold),
                concentration_threshold: Some(sel.concentration_threshold),
                error: None,
                heads: sel
                    .scores
                    .iter()
                    .map(|s| HeadPoint {
                        layer: s.layer,
                        head: s.head,
                        entropy: s.entropy,
                        concentration: (s.entropy >= sel.entropy_threshold).then_some(s.concentration),
                        selected: s.selected,
                        planted: planted(s.layer, s.head),
                    })
                    .collect(),
            },
            Err(e) => SelectionView {
                entropy_threshold: None,
                concentration_threshold: None,
                error: Some(e.clone()),
                heads: self
                    .tensor
                    .head_ids()
                    .map(|(l, h)| HeadPoint {
                        layer: l,
                        head: h,
                        entropy: matrix_entropy(self.tensor.map(l, h)).unwrap_or(f64::NAN),
                        concentration: None,
                        selected: false,
                        planted: planted(l, h),
                    })
                    .collect(),
            },
        }
    }
}

/// Black through red and orange to pale yellow.
fn heat(v: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 4] = [[0.0, 0.0, 0.0], [0.55, 0.05, 0.1], [0.95, 0.5, 0.05], [1.0, 0.98, 0.8]];
    let x = v.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let k = (x.floor() as usize).min(STOPS.len() - 2);
    let t = x - k as f64;
    let c = |ch: usize| ((STOPS[k][ch] * (1.0 - t) + STOPS[k + 1][ch] * t) * 255.0).round() as u8;
    [c(0), c(1), c(2)]
}

fn js_err(e: String) -> JsError {
    JsError::new(&e)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("demo views serialize")
}

#[wasm_bindgen]
pub struct Demo {
    inner: Session,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, lambda_sink: f64) -> Result<Demo, JsError> {
        Session::generate(seed as u64, lambda_sink)
            .map(|inner| Demo { inner })
            .map_err(js_err)
    }

    pub fn n(&self) -> usize {
        self.inner.n()
    }

    pub fn layers(&self) -> usize {
        self.inner.layers()
    }

    pub fn heads(&self) -> usize {
        self.inner.heads()
    }

    #[wasm_bindgen(js_name = graphText)]
    pub fn graph_text(&self) -> String {
        self.inner.graph_text()
    }

    #[wasm_bindgen(js_name = headImage)]
    pub fn head_image(&self, layer: usize, head: usize, gamma: f64, overlay: bool) -> Result<Vec<u8>, JsError> {
        self.inner.head_image(layer, head, gamma, overlay).map_err(js_err)
    }

    /// JSON [`HeadStats`].
    #[wasm_bindgen(js_name = headStats)]
    pub fn head_stats(&self, layer: usize, head: usize, gamma: f64) -> Result<String, JsError> {
        self.inner.head_stats(layer, head, gamma).map(|s| to_json(&s)).map_err(js_err)
    }

    /// JSON [`ProbeView`].
    pub fn probe(&self, gamma: f64) -> Result<String, JsError> {
        self.inner.probe(gamma).map(|p| to_json(&p)).map_err(js_err)
    }

    #[wasm_bindgen(js_name = maskImage)]
    pub fn mask_image(&self) -> Vec<u8> {
        self.inner.mask_image()
    }

    /// JSON [`SelectionView`].
    pub fn selection(&self) -> String {
        to_json(&self.inner.selection())
    }
}
