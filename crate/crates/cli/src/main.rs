//! `slash`: serialize graphs, generate synthetic attention, find
//! topology-aware heads and sharpen their sink.

mod manifest;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use slash_core::attnops::{
    budget, sharpen_tensor, validate_tensor, AttentionTensor, BudgetBreakdown, SharpenConfig,
};
use slash_core::calib::{calibrate, CalibrationItem, CalibrationSpec, Granularity, ObjectiveKind};
use slash_core::format::{read_tensor, write_csv, write_mask_pgm, write_pgm, write_tensor};
use slash_core::graphtext::{
    aggregate_edges, build_token_adjacency, serialize, TokenAdjacency, TokenizedSerialization,
};
use slash_core::headscan::{
    head_concentration, matrix_entropy, morph_close, select_heads, topk_binarize, SelectionResult,
};
use slash_core::spectral::{run_verification, VerifyConfig};
use slash_core::synthmodel::{generate, planted_truth, GeneratorSpec};

use manifest::Run;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or unreadable input: exit 2.
    Usage(String),
    /// Validation or verification failure: exit 1.
    Failure(String),
}

impl From<slash_core::Error> for CliError {
    fn from(e: slash_core::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "slash", version, about = "Topology-aware attention heads and sink sharpening")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum OutFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum GranularityArg {
    Head,
    Layer,
}

impl From<GranularityArg> for Granularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::Head => Granularity::Head,
            GranularityArg::Layer => Granularity::Layer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
struct Span {
    start: usize,
    end: usize,
}

fn parse_span(s: &str) -> Result<Span, String> {
    let (a, b) = s.split_once(':').ok_or("expected start:end")?;
    let start = a.trim().parse().map_err(|e| format!("span start: {e}"))?;
    let end = b.trim().parse().map_err(|e| format!("span end: {e}"))?;
    if end < start {
        return Err("span end before start".into());
    }
    Ok(Span { start, end })
}

#[derive(Subcommand)]
enum Command {
    /// Serialize a graph into edge tokens and write its token mask.
    Serialize {
        graph: PathBuf,
        /// Group edges by source node before serializing.
        #[arg(long)]
        aggregate: bool,
        #[arg(long, default_value = "slash-out")]
        out: PathBuf,
    },
    /// Generate a synthetic attention tensor with planted heads.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generator spec JSON; defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = "slash-out")]
        out: PathBuf,
    },
    /// Per-head entropy, concentration and attention budget.
    Analyze {
        tensor: PathBuf,
        /// Tokens JSON from `serialize`/`synth`, or a graph JSON.
        adjacency: PathBuf,
        #[arg(long)]
        aggregate: bool,
        #[arg(long, value_parser = parse_span)]
        span: Option<Span>,
        #[arg(long, value_enum, default_value = "json")]
        format: OutFormat,
        #[arg(long, default_value = "slash-out")]
        out: PathBuf,
    },
    /// Two-stage head selection.
    Select {
        tensor: PathBuf,
        adjacency: PathBuf,
        #[arg(long)]
        aggregate: bool,
        #[arg(long, value_parser = parse_span)]
        span: Option<Span>,
        #[arg(long, default_value = "slash-out")]
        out: PathBuf,
    },
    /// Scale the sink of selected heads or layers by gamma.
    Sharpen {
        tensor: PathBuf,
        /// Selection JSON from `select`.
        #[arg(long)]
        selection: PathBuf,
        #[arg(long)]
        gamma: f64,
        #[arg(long, value_enum, default_value = "layer")]
        granularity: GranularityArg,
        #[arg(long, default_value = "slash-out")]
        out: PathBuf,
    },
    /// Numeric checks of the sink-mixing identities.
    Verify {
        /// Number of random instances per grid point.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value = "slash-out")]
        out: PathBuf,
    },
    /// Sweep gamma over a calibration set.
    Calibrate {
        /// Calibration config JSON.
        config: PathBuf,
        #[arg(long, value_enum)]
        granularity: Option<GranularityArg>,
        #[arg(long, default_value = "slash-out")]
        out: PathBuf,
    },
    /// PGM images of a head's map, its binarized mask and the token mask.
    Render {
        /// Tokens JSON or graph JSON.
        adjacency: PathBuf,
        #[arg(long)]
        tensor: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value_t = 0)]
        head: usize,
        #[arg(long)]
        aggregate: bool,
        #[arg(long, value_parser = parse_span)]
        span: Option<Span>,
        #[arg(long, value_enum, default_value = "json")]
        format: OutFormat,
        #[arg(long, default_value = "slash-out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Failure(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Serialize {
            graph,
            aggregate,
            out,
        } => cmd_serialize(&graph, aggregate, &out),
        Command::Synth { seed, spec, out } => cmd_synth(seed, spec.as_deref(), &out),
        Command::Analyze {
            tensor,
            adjacency,
            aggregate,
            span,
            format,
            out,
        } => cmd_analyze(&tensor, &adjacency, aggregate, span, format, &out),
        Command::Select {
            tensor,
            adjacency,
            aggregate,
            span,
            out,
        } => cmd_select(&tensor, &adjacency, aggregate, span, &out),
        Command::Sharpen {
            tensor,
            selection,
            gamma,
            granularity,
            out,
        } => cmd_sharpen(&tensor, &selection, gamma, granularity, &out),
        Command::Verify { seeds, out } => cmd_verify(seeds, &out),
        Command::Calibrate {
            config,
            granularity,
            out,
        } => cmd_calibrate(&config, granularity, &out),
        Command::Render {
            adjacency,
            tensor,
            layer,
            head,
            aggregate,
            span,
            format,
            out,
        } => cmd_render(&adjacency, tensor.as_deref(), (layer, head), aggregate, span, format, &out),
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(bytes: &[u8], path: &Path) -> CliResult<T> {
    serde_json::from_slice(bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn load_tensor(run: &mut Run, path: &Path) -> CliResult<AttentionTensor> {
    let bytes = run.read_input(path)?;
    read_tensor(bytes.as_slice()).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn require_valid(t: &AttentionTensor) -> CliResult<()> {
    let report = validate_tensor(t);
    match report.violations.first() {
        None => Ok(()),
        Some(v) => Err(CliError::Failure(format!(
            "{} attention invariant violations, first at layer {} head {} row {}: {:?} ({})",
            report.violations.len(),
            v.layer,
            v.head,
            v.row,
            v.kind,
            v.value
        ))),
    }
}

/// Accepts either a tokens file or a graph file.
fn load_serialization(run: &mut Run, path: &Path, aggregate: bool) -> CliResult<TokenizedSerialization> {
    let bytes = run.read_input(path)?;
    let value: serde_json::Value = parse_json(&bytes, path)?;
    if value.get("num_nodes").is_some() {
        let g = slash_core::graphtext::load_graph(bytes.as_slice())?;
        let g = if aggregate { aggregate_edges(&g) } else { g };
        Ok(serialize(&g))
    } else {
        parse_json(&bytes, path)
    }
}

fn place(s: &TokenizedSerialization, t: &AttentionTensor, span: Option<Span>) -> CliResult<TokenAdjacency> {
    let start = match span {
        Some(sp) => {
            if sp.end - sp.start != s.len() {
                return Err(CliError::Usage(format!(
                    "span {}:{} holds {} tokens, serialization has {}",
                    sp.start,
                    sp.end,
                    sp.end - sp.start,
                    s.len()
                )));
            }
            sp.start
        }
        None => t.meta.span_start,
    };
    Ok(TokenAdjacency::placed(s, t.n, start)?)
}

#[derive(Serialize)]
struct TokensFile<'a> {
    text: String,
    #[serde(flatten)]
    serialization: &'a TokenizedSerialization,
}

#[derive(Serialize)]
struct MaskFile {
    n: usize,
    span: [usize; 2],
    nnz: usize,
    in_region: Vec<[usize; 2]>,
    out_region: Vec<[usize; 2]>,
    mask: Vec<Vec<u8>>,
}

fn mask_file(adj: &TokenAdjacency) -> MaskFile {
    let (s, e) = adj.span();
    MaskFile {
        n: adj.n(),
        span: [s, e],
        nnz: adj.nnz(),
        in_region: adj.in_region().map(|(i, j)| [i, j]).collect(),
        out_region: adj.out_region().map(|(i, j)| [i, j]).collect(),
        mask: adj.to_rows(),
    }
}

fn write_serialization(run: &mut Run, s: &TokenizedSerialization, adj: &TokenAdjacency) -> CliResult<()> {
    run.write_json(
        "tokens.json",
        &TokensFile {
            text: s.text(),
            serialization: s,
        },
    )?;
    let n = adj.n();
    let mask: Vec<bool> = (0..n * n).map(|k| adj.get(k / n, k % n)).collect();
    let mut pgm = Vec::new();
    write_mask_pgm(&mask, n, n, &mut pgm)?;
    run.write("mgt.pgm", &pgm)?;
    run.write_json("mgt.json", &mask_file(adj))?;
    Ok(())
}

fn cmd_serialize(graph: &Path, aggregate: bool, out: &Path) -> CliResult<()> {
    let mut run = Run::new("serialize", out, serde_json::json!({ "aggregate": aggregate }), None)?;
    let bytes = run.read_input(graph)?;
    let g = slash_core::graphtext::load_graph(bytes.as_slice())
        .map_err(|e| CliError::Usage(format!("{}: {e}", graph.display())))?;
    let g = if aggregate { aggregate_edges(&g) } else { g };
    let s = serialize(&g);
    let adj = build_token_adjacency(&s);
    write_serialization(&mut run, &s, &adj)?;
    println!("{}", s.text());
    run.finish()?;
    Ok(())
}

fn cmd_synth(seed: u64, spec_path: Option<&Path>, out: &Path) -> CliResult<()> {
    let mut run = Run::new("synth", out, serde_json::json!({ "seed": seed }), Some(seed))?;
    let spec = match spec_path {
        Some(p) => {
            let bytes = run.read_input(p)?;
            let mut spec: GeneratorSpec = parse_json(&bytes, p)?;
            spec.seed = seed;
            spec
        }
        None => GeneratorSpec::default_for_seed(seed),
    };
    let t = generate(&spec)?;
    let adj = spec.adjacency()?;
    let mut buf = Vec::new();
    write_tensor(&t, &mut buf)?;
    run.write("tensor.slsh", &buf)?;
    run.write_json("spec.json", &spec)?;
    run.write_json("graph.json", &spec.graph)?;
    run.write_json("planted.json", &planted_truth(&spec))?;
    write_serialization(&mut run, adj.serialization(), &adj)?;
    println!(
        "{} layers x {} heads, {} tokens, planted {:?}",
        t.layers, t.heads, t.n, spec.planted
    );
    run.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct HeadReport {
    layer: usize,
    head: usize,
    entropy: f64,
    concentration: f64,
    e_in: f64,
    e_out: f64,
    budget: BudgetBreakdown,
    selected: bool,
}

#[derive(Serialize)]
struct AnalyzeReport {
    n: usize,
    span: [usize; 2],
    violations: usize,
    #[serde(rename = "T_S")]
    entropy_threshold: Option<f64>,
    #[serde(rename = "T_C")]
    concentration_threshold: Option<f64>,
    warning: Option<String>,
    heads: Vec<HeadReport>,
}

fn cmd_analyze(
    tensor: &Path,
    adjacency: &Path,
    aggregate: bool,
    span: Option<Span>,
    format: OutFormat,
    out: &Path,
) -> CliResult<()> {
    let options = serde_json::json!({ "aggregate": aggregate, "span": span, "format": format });
    let mut run = Run::new("analyze", out, options, None)?;
    let t = load_tensor(&mut run, tensor)?;
    let s = load_serialization(&mut run, adjacency, aggregate)?;
    let adj = place(&s, &t, span)?;
    let violations = validate_tensor(&t).violations.len();
    let selection = select_heads(&t, &adj);
    let (sel, warning) = match selection {
        Ok(sel) => (Some(sel), None),
        Err(e @ slash_core::Error::Degenerate(_)) => (None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let mut heads = Vec::with_capacity(t.layers * t.heads);
    for (l, h) in t.head_ids() {
        let map = t.map(l, h);
        let c = head_concentration(map, &adj)?;
        heads.push(HeadReport {
            layer: l,
            head: h,
            entropy: matrix_entropy(map)?,
            concentration: c.c,
            e_in: c.e_in,
            e_out: c.e_out,
            budget: BudgetBreakdown {
                per_row: None,
                ..budget(map, &adj)?
            },
            selected: sel.as_ref().is_some_and(|s| s.selected_heads.contains(&(l, h))),
        });
    }
    if let Some(w) = &warning {
        eprintln!("warning: {w}");
    }
    let (a, b) = adj.span();
    let report = AnalyzeReport {
        n: t.n,
        span: [a, b],
        violations,
        entropy_threshold: sel.as_ref().map(|s| s.entropy_threshold),
        concentration_threshold: sel.as_ref().map(|s| s.concentration_threshold),
        warning,
        heads,
    };
    match format {
        OutFormat::Json => {
            run.write_json("report.json", &report)?;
        }
        OutFormat::Csv => {
            let mut text = String::from("layer,head,entropy,concentration,e_in,e_out,sink,structural,noise,selected\n");
            for r in &report.heads {
                let _ = writeln!(
                    text,
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.layer,
                    r.head,
                    r.entropy,
                    r.concentration,
                    r.e_in,
                    r.e_out,
                    r.budget.sink_fraction,
                    r.budget.structural_fraction,
                    r.budget.noise_fraction,
                    r.selected
                );
            }
            run.write("report.csv", text.as_bytes())?;
        }
    }
    let mut ranked: Vec<&HeadReport> = report.heads.iter().collect();
    ranked.sort_by(|x, y| y.concentration.total_cmp(&x.concentration));
    for r in ranked.iter().take(5) {
        println!(
            "({}, {}) concentration {:.3} entropy {:.3} sink {:.3}",
            r.layer, r.head, r.concentration, r.entropy, r.budget.sink_fraction
        );
    }
    run.finish()?;
    Ok(())
}

fn cmd_select(tensor: &Path, adjacency: &Path, aggregate: bool, span: Option<Span>, out: &Path) -> CliResult<()> {
    let options = serde_json::json!({ "aggregate": aggregate, "span": span });
    let mut run = Run::new("select", out, options, None)?;
    let t = load_tensor(&mut run, tensor)?;
    require_valid(&t)?;
    let s = load_serialization(&mut run, adjacency, aggregate)?;
    let adj = place(&s, &t, span)?;
    let sel = select_heads(&t, &adj)?;
    run.write_json("selection.json", &sel)?;
    println!(
        "T_S {:.4} T_C {:.4} selected {:?}",
        sel.entropy_threshold, sel.concentration_threshold, sel.selected_heads
    );
    run.finish()?;
    Ok(())
}

fn cmd_sharpen(tensor: &Path, selection: &Path, gamma: f64, granularity: GranularityArg, out: &Path) -> CliResult<()> {
    let options = serde_json::json!({ "gamma": gamma, "granularity": granularity });
    let mut run = Run::new("sharpen", out, options, None)?;
    let t = load_tensor(&mut run, tensor)?;
    require_valid(&t)?;
    let bytes = run.read_input(selection)?;
    let sel: SelectionResult = parse_json(&bytes, selection)?;
    let cfg = SharpenConfig {
        gamma,
        targets: Granularity::from(granularity).targets(&sel),
    };
    let s = sharpen_tensor(&t, &cfg)?;
    let mut buf = Vec::new();
    write_tensor(&s.tensor, &mut buf)?;
    run.write("sharpened.slsh", &buf)?;
    println!("gamma {gamma}, {} degenerate rows left unchanged", s.degenerate_rows);
    run.finish()?;
    Ok(())
}

fn cmd_verify(seeds: u64, out: &Path) -> CliResult<()> {
    let cfg = VerifyConfig {
        seeds,
        ..VerifyConfig::default()
    };
    let mut run = Run::new("verify", out, &cfg, None)?;
    let report = run_verification(&cfg)?;
    run.write_json("verify.json", &report)?;
    let failed = report.failures().count();
    println!("{} checks, {failed} failed", report.checks.len());
    for c in report.failures().take(10) {
        println!("FAIL {} lhs {} rhs {} rel {:e}", c.name, c.lhs, c.rhs, c.rel_err);
    }
    run.finish()?;
    if failed > 0 {
        return Err(CliError::Failure(format!("{failed} verification checks failed")));
    }
    Ok(())
}

#[derive(Debug, Deserialize, Serialize)]
struct ItemPaths {
    tensor: PathBuf,
    adjacency: PathBuf,
}

#[derive(Debug, Deserialize, Serialize)]
struct CalibrationConfig {
    #[serde(default = "slash_core::calib::default_grid")]
    gamma_grid: Vec<f64>,
    #[serde(default = "default_objective")]
    objective: ObjectiveKind,
    #[serde(default)]
    granularity: Granularity,
    selection: PathBuf,
    items: Vec<ItemPaths>,
}

fn default_objective() -> ObjectiveKind {
    ObjectiveKind::AdjacencyF1
}

fn cmd_calibrate(config: &Path, granularity: Option<GranularityArg>, out: &Path) -> CliResult<()> {
    let options = serde_json::json!({ "granularity": granularity });
    let mut run = Run::new("calibrate", out, options, None)?;
    let bytes = run.read_input(config)?;
    let cfg: CalibrationConfig = parse_json(&bytes, config)?;
    // relative paths are relative to the config file
    let base = config.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    let sel_path = resolve(&cfg.selection);
    let sel_bytes = run.read_input(&sel_path)?;
    let sel: SelectionResult = parse_json(&sel_bytes, &sel_path)?;
    let mut items = Vec::with_capacity(cfg.items.len());
    for it in &cfg.items {
        let tensor = load_tensor(&mut run, &resolve(&it.tensor))?;
        require_valid(&tensor)?;
        let s = load_serialization(&mut run, &resolve(&it.adjacency), false)?;
        let adjacency = place(&s, &tensor, None)?;
        items.push(CalibrationItem { tensor, adjacency });
    }
    let spec = CalibrationSpec {
        gamma_grid: cfg.gamma_grid,
        objective: cfg.objective,
        granularity: granularity.map_or(cfg.granularity, Granularity::from),
    };
    let result = calibrate(&spec, &items, &sel)?;
    run.write_json("calibration.json", &result)?;
    for g in &result.per_gamma {
        println!("gamma {:.2} mean {:.4}", g.gamma, g.mean_score);
    }
    println!("best gamma {}", result.best_gamma);
    run.finish()?;
    Ok(())
}

fn cmd_render(
    adjacency: &Path,
    tensor: Option<&Path>,
    (layer, head): (usize, usize),
    aggregate: bool,
    span: Option<Span>,
    format: OutFormat,
    out: &Path,
) -> CliResult<()> {
    let options = serde_json::json!({
        "layer": layer, "head": head, "aggregate": aggregate, "span": span, "format": format,
    });
    let mut run = Run::new("render", out, options, None)?;
    let s = load_serialization(&mut run, adjacency, aggregate)?;
    let Some(tensor) = tensor else {
        let adj = build_token_adjacency(&s);
        let n = adj.n();
        let mask: Vec<bool> = (0..n * n).map(|k| adj.get(k / n, k % n)).collect();
        let mut pgm = Vec::new();
        write_mask_pgm(&mask, n, n, &mut pgm)?;
        run.write("mgt.pgm", &pgm)?;
        run.finish()?;
        return Ok(());
    };
    let t = load_tensor(&mut run, tensor)?;
    if layer >= t.layers || head >= t.heads {
        return Err(CliError::Usage(format!(
            "head ({layer}, {head}) outside {}x{} tensor",
            t.layers, t.heads
        )));
    }
    let adj = place(&s, &t, span)?;
    let map = t.map(layer, head);
    let n = t.n;
    let tag = format!("L{layer}H{head}");

    let mut pgm = Vec::new();
    write_pgm(map.as_slice(), n, n, &mut pgm)?;
    run.write(&format!("{tag}_attn.pgm"), &pgm)?;

    let b = topk_binarize(map, &adj)?;
    let mut pgm = Vec::new();
    write_mask_pgm(b.as_slice(), n, n, &mut pgm)?;
    run.write(&format!("{tag}_topk.pgm"), &pgm)?;

    let closed = morph_close(&b);
    let mut pgm = Vec::new();
    write_mask_pgm(closed.as_slice(), n, n, &mut pgm)?;
    run.write(&format!("{tag}_closed.pgm"), &pgm)?;

    let mask: Vec<bool> = (0..n * n).map(|k| adj.get(k / n, k % n)).collect();
    let mut pgm = Vec::new();
    write_mask_pgm(&mask, n, n, &mut pgm)?;
    run.write("mgt.pgm", &pgm)?;

    // mask at half intensity, the head's strongest non-sink entries on top
    let top = (0..n * n)
        .filter(|k| k % n != 0)
        .map(|k| map.as_slice()[k])
        .fold(0.0_f64, f64::max);
    let overlay: Vec<f64> = (0..n * n)
        .map(|k| {
            let a = if top > 0.0 && k % n != 0 { (map.as_slice()[k] / top).min(1.0) } else { 0.0 };
            0.5 * mask[k] as u8 as f64 + 0.5 * a
        })
        .collect();
    let mut pgm = Vec::new();
    write_pgm(&overlay, n, n, &mut pgm)?;
    run.write(&format!("{tag}_overlay.pgm"), &pgm)?;

    if format == OutFormat::Csv {
        let mut csv = Vec::new();
        write_csv(map, &mut csv)?;
        run.write(&format!("{tag}.csv"), &csv)?;
    }
    run.finish()?;
    Ok(())
}
