//! Command-line front end: spec resolution, reports, exporters.
//!
//! Everything here returns strings or writes files so the binary stays a
//! thin wrapper around [`run`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::calibration::{reconcile, reference, Reconciliation, Reference};
use crate::config::{parse_config, preset, BlockMode, NetworkSpec, PRESET_NAMES};
use crate::cost::{cost_with_shapes, CostReport};
use crate::error::{ConfigError, Error};
use crate::graph::{ComputeGraph, Op};
use crate::memplan::{schedule, traffic, MemReport, TrafficOptions};
use crate::refexec::{checksum, exec_naive, exec_scheduled, init_weights, Tensor};
use crate::shapes::{check_input_size, propagate, Shapes, TensorShape};
use crate::topology::{block_output_layers_with, build_graph, layer_widths, resolve_modes, ConnectionMode};

pub const TOOL_VERSION: &str = concat!("threshnet ", env!("CARGO_PKG_VERSION"));
pub const ANALYSIS_SCHEMA: &str = "threshnet-analysis/1";

/// Failure of a command, carrying its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Invalid(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::Invariant(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Graph(_) | Error::Shape(_) => CliError::Invalid(e.to_string()),
            Error::Io { .. } => CliError::Io(e.to_string()),
            Error::Exec(_) | Error::Invariant(_) => CliError::Invariant(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// A preset name, or otherwise a path to a JSON config file.
pub fn resolve_spec(source: &str) -> CliResult<NetworkSpec> {
    if PRESET_NAMES.iter().any(|p| p.eq_ignore_ascii_case(source)) {
        return Ok(preset(source)?);
    }
    let path = Path::new(source);
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Invalid(format!(
            "`{source}` is not a preset ({}) and cannot be read as a config file: {}: {e}",
            PRESET_NAMES.join(", "),
            path.display()
        ))
    })?;
    parse_config(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// Graph and shapes of a spec at a square input.
pub struct Compiled {
    pub spec: NetworkSpec,
    pub graph: ComputeGraph,
    pub shapes: Shapes,
}

pub fn compile(mut spec: NetworkSpec, input_size: u32, classes: Option<u32>) -> CliResult<Compiled> {
    if let Some(c) = classes {
        spec.classifier_classes = c;
    }
    let graph = build_graph(&spec).map_err(Error::from)?;
    check_input_size(&graph, input_size).map_err(Error::from)?;
    let shapes = propagate(&graph, TensorShape::image(1, input_size)).map_err(Error::from)?;
    Ok(Compiled { spec, graph, shapes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRow {
    pub index: u32,
    pub configured: BlockMode,
    pub mode: ConnectionMode,
    pub layers: u32,
    pub growth_rate: u32,
    /// Width of each layer, `widths[l - 1]` for layer `l`.
    pub widths: Vec<u32>,
    pub input_channels: u32,
    pub output_channels: u32,
    pub spatial: u32,
    pub connections: usize,
}

/// Headline numbers in the comparison table's units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub params_m: f64,
    pub macs_g: f64,
    pub flops_g: f64,
    pub memrw_mb: f64,
    pub memrw_zero_copy_mb: f64,
    pub peak_mb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisDocument {
    pub schema: String,
    pub tool_version: String,
    pub spec: NetworkSpec,
    pub input: TensorShape,
    pub output: TensorShape,
    pub modes: Vec<ConnectionMode>,
    pub blocks: Vec<BlockRow>,
    pub depth: u32,
    pub summary: Summary,
    pub cost: CostReport,
    pub memory: MemReport,
    pub memory_zero_copy: MemReport,
    /// Present only at 224x224 with 1000 classes, where published figures
    /// exist.
    pub reference: Option<Reference>,
    pub reconciliation: Option<Reconciliation>,
}

fn block_rows(c: &Compiled) -> Vec<BlockRow> {
    let modes = resolve_modes(&c.spec);
    let inputs = c.shapes.block_inputs(&c.graph);
    c.spec
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let all = layer_widths(b, modes[i]);
            let out = block_output_layers_with(modes[i], b.num_layers as usize, c.spec.harmonic_output)
                .into_iter()
                .map(|j| if j == 0 { inputs[i].c } else { all[j] })
                .sum();
            let widths = all[1..].to_vec();
            BlockRow {
                index: i as u32,
                configured: b.mode,
                mode: modes[i],
                layers: b.num_layers,
                growth_rate: b.growth_rate,
                widths,
                input_channels: inputs[i].c,
                output_channels: out,
                spatial: inputs[i].h,
                connections: c.graph.block_connection_count(i as u32),
            }
        })
        .collect()
}

pub fn analyze(c: &Compiled) -> CliResult<AnalysisDocument> {
    let cost = cost_with_shapes(&c.graph, &c.shapes);
    let mem = |zero_copy_concat| {
        traffic(&c.graph, &c.shapes, &cost, TrafficOptions { zero_copy_concat })
            .map_err(|e| CliError::Invariant(e.to_string()))
    };
    let memory = mem(false)?;
    let memory_zero_copy = mem(true)?;
    let input = c.shapes.output(c.graph.input_node());
    let published = input.h == 224 && input.w == 224 && c.spec.classifier_classes == 1000;
    let reference = reference(&c.spec.name).filter(|_| published);
    let reconciliation = match reference {
        Some(_) => Some(reconcile(&c.spec)?),
        None => None,
    };
    Ok(AnalysisDocument {
        schema: ANALYSIS_SCHEMA.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        spec: c.spec.clone(),
        input,
        output: c.shapes.output(c.graph.output_node()),
        modes: resolve_modes(&c.spec),
        blocks: block_rows(c),
        depth: cost.depth,
        summary: Summary {
            params_m: cost.params_millions(),
            macs_g: cost.macs_giga(),
            flops_g: cost.flops_giga(),
            memrw_mb: memory.memrw_mb,
            memrw_zero_copy_mb: memory_zero_copy.memrw_mb,
            peak_mb: memory.peak_bytes as f64 / 1e6,
        },
        cost,
        memory,
        memory_zero_copy,
        reference,
        reconciliation,
    })
}

fn mode_label(row: &BlockRow) -> String {
    let m = match row.mode {
        ConnectionMode::Dense => "dense",
        ConnectionMode::Harmonic => "harmonic",
    };
    match row.configured {
        BlockMode::Auto => format!("{m} (auto)"),
        _ => m.to_string(),
    }
}

/// One row per dense block plus the stem and classifier, in the layout of an
/// architecture table.
pub fn describe(c: &Compiled) -> String {
    let mut out = String::new();
    let input = c.shapes.output(c.graph.input_node());
    let _ = writeln!(out, "{} @ {}x{}, threshold {}", c.spec.name, input.h, input.w, c.spec.threshold);
    let _ = writeln!(
        out,
        "{:<12} {:<16} {:>6} {:>6} {:>8} {:>8} {:>8}  widths",
        "stage", "mode", "layers", "k", "in_ch", "out_ch", "size"
    );
    for node in c.graph.nodes() {
        if let (Op::Conv(conv), true) = (node.op, node.name.starts_with("stem")) {
            let s = c.shapes.output(node.id);
            let _ = writeln!(
                out,
                "{:<12} {:<16} {:>6} {:>6} {:>8} {:>8} {:>8}",
                node.name.trim_end_matches(".conv"),
                format!("conv {0}x{0}/{1}", conv.kernel, conv.stride),
                "",
                "",
                c.shapes.inputs(&c.graph, node.id)[0].c,
                s.c,
                format!("{}x{}", s.h, s.w)
            );
        }
    }
    for row in block_rows(c) {
        let widths = if row.widths.iter().all(|&w| w == row.growth_rate) {
            String::new()
        } else {
            row.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")
        };
        let _ = writeln!(
            out,
            "{:<12} {:<16} {:>6} {:>6} {:>8} {:>8} {:>8}  {}",
            format!("block{}", row.index + 1),
            mode_label(&row),
            row.layers,
            row.growth_rate,
            row.input_channels,
            row.output_channels,
            format!("{}x{}", row.spatial, row.spatial),
            widths
        );
    }
    let fc = c.shapes.output(c.graph.output_node());
    let _ = writeln!(
        out,
        "{:<12} {:<16} {:>6} {:>6} {:>8} {:>8} {:>8}",
        "classifier", "avgpool + fc", "", "", "", fc.c, "1x1"
    );
    out
}

pub const TABLE_HEADER: &str = "Params (M) | MACs (G) | FLOPs (G) | MemR+W (MB)";

fn table_row(name: &str, s: &Summary) -> String {
    format!(
        "{:<14} | {:>10.2} | {:>8.2} | {:>9.2} | {:>11.2}",
        name, s.params_m, s.macs_g, s.flops_g, s.memrw_mb
    )
}

fn table_head() -> String {
    format!("{:<14} | {}", "Network", TABLE_HEADER)
}

pub fn render_analysis(doc: &AnalysisDocument) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} ({})", doc.spec.name, doc.tool_version);
    let _ = writeln!(out, "input {}  output {}  depth {}", doc.input, doc.output, doc.depth);
    let _ = writeln!(out, "{}", table_head());
    let _ = writeln!(out, "{}", table_row(&doc.spec.name, &doc.summary));
    if let Some(r) = &doc.reference {
        let s = Summary {
            params_m: r.params_m,
            macs_g: r.macs_g,
            flops_g: r.flops_g,
            memrw_mb: r.memrw_mb,
            memrw_zero_copy_mb: 0.0,
            peak_mb: 0.0,
        };
        let _ = writeln!(out, "{}", table_row("(published)", &s));
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "total_params      {}", doc.cost.total_params);
    let _ = writeln!(out, "macc              {}", doc.cost.total_macc);
    let _ = writeln!(out, "read_bytes        {}", doc.memory.total_read_bytes);
    let _ = writeln!(out, "write_bytes       {}", doc.memory.total_write_bytes);
    let _ = writeln!(out, "peak_bytes        {}", doc.memory.peak_bytes);
    let _ = writeln!(
        out,
        "zero_copy_bytes   {}",
        doc.memory_zero_copy.total_read_bytes + doc.memory_zero_copy.total_write_bytes
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<6} {:<16} {:>6} {:>5} {:>6} {:>7} {:>5} {:>6}",
        "block", "mode", "layers", "k", "in_ch", "out_ch", "size", "edges"
    );
    for b in &doc.blocks {
        let _ = writeln!(
            out,
            "{:<6} {:<16} {:>6} {:>5} {:>6} {:>7} {:>5} {:>6}",
            b.index + 1,
            mode_label(b),
            b.layers,
            b.growth_rate,
            b.input_channels,
            b.output_channels,
            b.spatial,
            b.connections
        );
    }
    if let Some(r) = &doc.reconciliation {
        let _ = writeln!(out);
        out.push_str(&r.render());
    }
    out
}

/// Graphviz rendering, nodes and edges in id order.
pub fn to_dot(graph: &ComputeGraph, name: &str) -> String {
    fn escape(s: &str) -> String {
        s.replace('\\', "\\\\").replace('"', "\\\"")
    }
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{}\" {{", escape(name));
    let _ = writeln!(out, "  rankdir=TB;");
    let _ = writeln!(out, "  node [shape=box, fontname=\"monospace\"];");
    for n in graph.nodes() {
        let _ = writeln!(out, "  n{} [label=\"{}\\n{}\"];", n.id, escape(&n.name), escape(&n.op.to_string()));
    }
    for e in graph.edges() {
        if graph.node(e.consumer).op == Op::Concat {
            let _ = writeln!(out, "  n{} -> n{} [label=\"{}\"];", e.producer, e.consumer, e.slot);
        } else {
            let _ = writeln!(out, "  n{} -> n{};", e.producer, e.consumer);
        }
    }
    out.push_str("}\n");
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecReport {
    pub output: TensorShape,
    pub checksum: String,
    pub verified: bool,
}

pub fn exec(c: &Compiled, seed: u64, verify: bool) -> CliResult<ExecReport> {
    let input_shape = c.shapes.output(c.graph.input_node());
    let weights = init_weights(&c.graph, &c.shapes, seed);
    let input = Tensor::random(input_shape, seed);
    let sched = schedule(&c.graph);
    let y = exec_scheduled(&c.graph, &c.shapes, &sched, &weights, &input).map_err(Error::from)?;
    if verify {
        let naive = exec_naive(&c.graph, &c.shapes, &weights, &input).map_err(Error::from)?;
        let same = naive.shape == y.shape
            && naive.data.iter().zip(&y.data).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(CliError::Invariant(format!(
                "scheduled execution diverges from naive execution ({} vs {})",
                checksum(&y),
                checksum(&naive)
            )));
        }
    }
    Ok(ExecReport {
        output: y.shape,
        checksum: checksum(&y),
        verified: verify,
    })
}

pub fn render_exec(r: &ExecReport) -> String {
    let mut out = format!("output {}\nchecksum {}\n", r.output, r.checksum);
    if r.verified {
        out.push_str("verify ok: scheduled and naive outputs are bit-identical\n");
    }
    out
}

pub fn compare(a: &AnalysisDocument, b: &AnalysisDocument) -> String {
    format!(
        "{}\n{}\n{}\n",
        table_head(),
        table_row(&a.spec.name, &a.summary),
        table_row(&b.spec.name, &b.summary)
    )
}

#[derive(Debug, Parser)]
#[command(name = "threshnet", version, about = "Compile and profile threshold-gated dense/harmonic CNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Dot,
    Json,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Square input size in pixels.
    #[arg(long, default_value_t = 224)]
    pub input: u32,
    /// Classifier output classes [default: the spec's own, 1000 for presets].
    #[arg(long)]
    pub classes: Option<u32>,
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-block mode, layers, growth rate, channels and spatial size.
    Describe {
        /// Preset name or config path.
        spec: String,
        #[command(flatten)]
        common: Common,
    },
    /// Parameters, MACs, memory traffic and peak memory.
    Analyze {
        spec: String,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
        #[command(flatten)]
        common: Common,
    },
    /// Write the compiled graph as DOT or JSON.
    Export {
        spec: String,
        #[arg(long, value_enum, default_value_t = ExportFormat::Dot)]
        format: ExportFormat,
        #[command(flatten)]
        common: Common,
    },
    /// Run the reference executor on a seeded random input.
    Exec {
        spec: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also run the naive executor and require bit-identical output.
        #[arg(long)]
        verify: bool,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
        #[command(flatten)]
        common: Common,
    },
    /// Two rows in the comparison table's layout.
    Compare {
        a: String,
        b: String,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
        #[command(flatten)]
        common: Common,
    },
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn emit(text: String, out: Option<&Path>) -> CliResult<String> {
    match out {
        Some(path) => {
            std::fs::write(path, &text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
            Ok(String::new())
        }
        None => Ok(text),
    }
}

fn analyze_source(source: &str, common: &Common) -> CliResult<AnalysisDocument> {
    analyze(&compile(resolve_spec(source)?, common.input, common.classes)?)
}

/// Runs a parsed command and returns what it prints to stdout.
pub fn execute(command: &Command) -> CliResult<String> {
    match command {
        Command::Describe { spec, common } => {
            let c = compile(resolve_spec(spec)?, common.input, common.classes)?;
            emit(describe(&c), common.out.as_deref())
        }
        Command::Analyze { spec, format, common } => {
            let doc = analyze_source(spec, common)?;
            let text = match format {
                ReportFormat::Text => render_analysis(&doc),
                ReportFormat::Json => json(&doc),
            };
            emit(text, common.out.as_deref())
        }
        Command::Export { spec, format, common } => {
            let c = compile(resolve_spec(spec)?, common.input, common.classes)?;
            let text = match format {
                ExportFormat::Dot => to_dot(&c.graph, &c.spec.name),
                ExportFormat::Json => c.graph.to_json(),
            };
            emit(text, common.out.as_deref())
        }
        Command::Exec {
            spec,
            seed,
            verify,
            format,
            common,
        } => {
            let c = compile(resolve_spec(spec)?, common.input, common.classes)?;
            let r = exec(&c, *seed, *verify)?;
            let text = match format {
                ReportFormat::Text => render_exec(&r),
                ReportFormat::Json => json(&r),
            };
            emit(text, common.out.as_deref())
        }
        Command::Compare { a, b, format, common } => {
            let (da, db) = std::thread::scope(|s| {
                let ha = s.spawn(|| analyze_source(a, common));
                let db = analyze_source(b, common);
                (ha.join().expect("analysis thread panicked"), db)
            });
            let (da, db) = (da?, db?);
            let text = match format {
                ReportFormat::Text => compare(&da, &db),
                ReportFormat::Json => json(&[da.summary, db.summary]),
            };
            emit(text, common.out.as_deref())
        }
    }
}

/// Parses `args` (including the program name), runs the command, prints its
/// output and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
