use std::fmt::Write as _;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cmod_core::interpret::{completeness, induce_syntactic};
use cmod_core::mdl::{CodingScheme, CostReport, InterpretationCostOracle, MdlError};
use cmod_core::refine::{check_parsimony_grounded, search_compressive, Grounding, RefineError, SearchConfig};
use cmod_core::semantics::{behavioural_distortion, MetricKind};
use cmod_core::zoo::{self, Bundle, ZooError};

#[derive(Parser)]
#[command(name = "cmod", version, about = "Inspect, cost, refine and render compositional models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Summarize a model file.
    Show {
        path: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Print the description-length breakdown.
    Cost {
        path: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Run the compressive search and write the refined model, trace and report.
    Refine {
        path: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Compare a model with its refinement under a shared grounding.
    Parsimony {
        before: PathBuf,
        after: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Write the diagram as Graphviz DOT.
    Render {
        path: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Write a built-in example: fig1, fig1-reference, rank-deficient, sparse-entangled.
    Build {
        name: String,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        r: usize,
        #[arg(long, default_value = "2,3")]
        blocks: String,
        #[arg(long, default_value_t = 1e-3)]
        noise: f64,
        #[command(flatten)]
        flags: Flags,
    },
}

#[derive(Args, Clone, Default)]
struct Flags {
    /// Quantization width in bits.
    #[arg(long)]
    q: Option<u32>,
    /// Interpretation cost of an unlabeled element.
    #[arg(long)]
    kappa: Option<u64>,
    /// Sparsify threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Block threshold.
    #[arg(long = "tau-b")]
    tau_b: Option<f64>,
    #[arg(long = "eps-global")]
    eps_global: Option<f64>,
    #[arg(long = "eps-local")]
    eps_local: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// l2-expected, kl-rows or sup-finite.
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long = "max-iters")]
    max_iters: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Flags {
    /// `override.KEY=VALUE` for every flag given.
    fn header(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                writeln!(out, "override.{k}={v}").unwrap();
            }
        };
        put("q", self.q.map(|v| v.to_string()));
        put("kappa", self.kappa.map(|v| v.to_string()));
        put("tau", self.tau.map(|v| v.to_string()));
        put("tau-b", self.tau_b.map(|v| v.to_string()));
        put("eps-global", self.eps_global.map(|v| v.to_string()));
        put("eps-local", self.eps_local.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("metric", self.metric.clone());
        put("samples", self.samples.map(|v| v.to_string()));
        put("max-iters", self.max_iters.map(|v| v.to_string()));
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        out
    }
}

enum CliError {
    /// Exit code 1.
    Domain(String),
    /// Exit code 2.
    Input(String),
}

impl From<ZooError> for CliError {
    fn from(e: ZooError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<RefineError> for CliError {
    fn from(e: RefineError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<MdlError> for CliError {
    fn from(e: MdlError) -> Self {
        CliError::Domain(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn scheme(b: &Bundle, flags: &Flags) -> Result<CodingScheme> {
    let mut s = b.scheme()?;
    if let Some(q) = flags.q {
        if !(2..=48).contains(&q) {
            return Err(CliError::Input(format!("--q must lie in 2..=48, got {q}")));
        }
        s = CodingScheme { quantizer: cmod_core::mdl::Quantizer::new(q), ..s };
    }
    Ok(s)
}

fn oracle(b: &Bundle, flags: &Flags) -> Result<InterpretationCostOracle> {
    let mut o = b.oracle()?;
    if let Some(k) = flags.kappa {
        o.kappa = k;
    }
    Ok(o)
}

fn search_config(b: &Bundle, flags: &Flags) -> Result<SearchConfig> {
    let d = SearchConfig::default();
    let metric = match &flags.metric {
        None => d.metric,
        Some(m) => MetricKind::from_name(m).ok_or_else(|| CliError::Input(format!("unknown metric `{m}`")))?,
    };
    let c = SearchConfig {
        eps_global: flags.eps_global.unwrap_or(d.eps_global),
        eps_local: flags.eps_local.unwrap_or(d.eps_local),
        tau: flags.tau.unwrap_or(d.tau),
        tau_b: flags.tau_b.unwrap_or(d.tau_b),
        max_iterations: flags.max_iters.unwrap_or(d.max_iterations),
        metric,
        samples: flags.samples.unwrap_or(d.samples),
        seed: flags.seed.unwrap_or(d.seed),
        scheme: scheme(b, flags)?,
    };
    c.validate().map_err(CliError::Input)?;
    Ok(c)
}

fn settings(scheme: &CodingScheme, oracle: &InterpretationCostOracle) -> String {
    format!("scheme.q={}\nscheme.presence-flags={}\noracle.kappa={}\n", scheme.q(), scheme.presence_flags, oracle.kappa)
}

fn cost_lines(prefix: &str, r: &CostReport) -> String {
    let mut out = String::new();
    writeln!(out, "{prefix}wiring-bits={}", r.wiring_bits).unwrap();
    for (g, bits) in &r.component_bits {
        writeln!(out, "{prefix}component-bits.{g}={bits}").unwrap();
    }
    writeln!(out, "{prefix}component-bits={}", r.component_total()).unwrap();
    writeln!(out, "{prefix}rep-bits={}", r.rep_bits).unwrap();
    writeln!(out, "{prefix}int-bits={}", r.int_bits).unwrap();
    writeln!(out, "{prefix}total-bits={}", r.total_bits).unwrap();
    writeln!(out, "{prefix}elements={}", r.elements).unwrap();
    out
}

fn grounding(b: &Bundle, flags: &Flags) -> Result<Grounding> {
    Ok(Grounding { ic: b.ic.clone(), vocab: b.vocab.clone(), oracle: oracle(b, flags)? })
}

fn show(path: &Path, flags: &Flags) -> Result<String> {
    let b = zoo::load(path)?;
    let d = &b.model.diagram;
    let sig = d.signature();
    let opaque = sig.generators.values().filter(|g| !g.is_structural()).count();
    let names = |ws: &[cmod_core::syntax::WireType]| ws.iter().map(|w| w.name.as_str()).collect::<Vec<_>>().join(",");
    let is_ = induce_syntactic(&b.ic, &b.model.rep, &sig);
    let mut out = flags.header();
    writeln!(out, "file={}", path.display()).unwrap();
    writeln!(out, "version={}", zoo::FILE_VERSION).unwrap();
    writeln!(out, "wires={}", sig.objects.len()).unwrap();
    writeln!(out, "generators.opaque={opaque}").unwrap();
    writeln!(out, "generators.structural={}", sig.generators.len() - opaque).unwrap();
    writeln!(out, "nodes={}", d.node_count()).unwrap();
    writeln!(out, "edges={}", d.edges().len()).unwrap();
    writeln!(out, "inputs={}", names(d.dom())).unwrap();
    writeln!(out, "outputs={}", names(&d.cod())).unwrap();
    writeln!(out, "labels={}", b.vocab.len()).unwrap();
    writeln!(out, "completeness={:.6}", completeness(&is_, &sig)).unwrap();
    for g in sig.generators.values() {
        let kind = if g.is_structural() { "structural" } else { "opaque" };
        let label = is_.label(&g.name).map(|l| format!(" label={l}")).unwrap_or_default();
        writeln!(out, "generator.{}={} -> {} {kind}{label}", g.name, names(&g.dom), names(&g.cod)).unwrap();
    }
    Ok(out)
}

fn cost(path: &Path, flags: &Flags) -> Result<String> {
    let b = zoo::load(path)?;
    let (s, o) = (scheme(&b, flags)?, oracle(&b, flags)?);
    let report = grounding(&b, flags)?.cost(&b.model, &s)?;
    Ok(flags.header() + &settings(&s, &o) + &cost_lines("", &report))
}

/// The sibling of `out` with another extension.
fn sibling(out: &Path, ext: &str) -> PathBuf {
    out.with_extension(ext)
}

fn refine(path: &Path, flags: &Flags) -> Result<String> {
    let b = zoo::load(path)?;
    let config = search_config(&b, flags)?;
    let g = grounding(&b, flags)?;
    let (m, trace) = search_compressive(&b.model, &config, Some(&g))?;
    let distortion = behavioural_distortion(&b.model, &m, &config.metric_spec()).map_err(|e| CliError::Domain(e.to_string()))?;

    let out_path = flags.out.clone().unwrap_or_else(|| path.with_extension("refined.cmod"));
    let mut report = flags.header();
    report += &settings(&config.scheme, &g.oracle);
    writeln!(report, "search.eps-global={}", config.eps_global).unwrap();
    writeln!(report, "search.eps-local={}", config.eps_local).unwrap();
    writeln!(report, "search.tau={}", config.tau).unwrap();
    writeln!(report, "search.tau-b={}", config.tau_b).unwrap();
    writeln!(report, "search.max-iters={}", config.max_iterations).unwrap();
    writeln!(report, "search.metric={}", config.metric.name()).unwrap();
    writeln!(report, "search.samples={}", config.samples).unwrap();
    writeln!(report, "search.seed={}", config.seed).unwrap();
    report += &cost_lines("before.", &trace.initial_report);
    report += &cost_lines("after.", &trace.final_report);
    writeln!(report, "steps={}", trace.steps.len()).unwrap();
    writeln!(report, "global-distortion={distortion:.6e}").unwrap();

    let mut refined = b.with_model(m);
    refined.config.insert("q".into(), config.scheme.q().to_string());
    refined.config.insert("presence-flags".into(), config.scheme.presence_flags.to_string());
    zoo::save(&refined, &out_path)?;
    write_file(&sibling(&out_path, "trace"), &trace.to_lines())?;
    write_file(&sibling(&out_path, "report"), &report)?;
    Ok(report)
}

fn colour_enabled() -> bool {
    std::env::var_os("CMOD_NO_COLOR").is_none() && std::io::stdout().is_terminal()
}

fn parsimony(before: &Path, after: &Path, flags: &Flags) -> Result<String> {
    let b = zoo::load(before)?;
    let a = zoo::load(after)?;
    if a.vocab != b.vocab {
        return Err(RefineError::GroundingMismatch.into());
    }
    let (s, o) = (scheme(&b, flags)?, oracle(&b, flags)?);
    let r = check_parsimony_grounded(&b.model, &b.ic, &a.model, &a.ic, &b.vocab, &s, &o)?;
    let mut out = flags.header() + &settings(&s, &o);
    writeln!(out, "rep-before={}", r.rep_before).unwrap();
    writeln!(out, "rep-after={}", r.rep_after).unwrap();
    writeln!(out, "int-before={}", r.int_before).unwrap();
    writeln!(out, "int-after={}", r.int_after).unwrap();
    writeln!(out, "lhs={}", r.lhs).unwrap();
    writeln!(out, "rhs={}", r.rhs).unwrap();
    writeln!(out, "total-before={}", r.total_before).unwrap();
    writeln!(out, "total-after={}", r.total_after).unwrap();
    writeln!(out, "criterion-holds={}", r.criterion_holds).unwrap();
    let verdict = if r.verdict { "yes" } else { "no" };
    if colour_enabled() {
        let code = if r.verdict { 32 } else { 31 };
        writeln!(out, "PARSIMONIOUS: \x1b[{code}m{verdict}\x1b[0m").unwrap();
    } else {
        writeln!(out, "PARSIMONIOUS: {verdict}").unwrap();
    }
    Ok(out)
}

fn render(path: &Path, flags: &Flags) -> Result<String> {
    let b = zoo::load(path)?;
    let dot = b.model.diagram.to_dot();
    match &flags.out {
        Some(out) => {
            write_file(out, &dot)?;
            Ok(format!("wrote={}\n", out.display()))
        }
        None => Ok(dot),
    }
}

fn build(name: &str, n: usize, r: usize, blocks: &str, noise: f64, flags: &Flags) -> Result<String> {
    let seed = flags.seed.unwrap_or(0);
    let b = match name {
        "fig1" => zoo::build_fig1()?,
        "fig1-reference" => zoo::build_fig1_reference()?,
        "rank-deficient" => zoo::build_rank_deficient(n, r, seed)?,
        "sparse-entangled" => {
            let sizes = blocks
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| CliError::Input(format!("bad --blocks `{blocks}`")))?;
            zoo::build_sparse_entangled(&sizes, noise, seed)?
        }
        other => return Err(CliError::Input(format!("unknown example `{other}`"))),
    };
    match &flags.out {
        Some(out) => {
            zoo::save(&b, out)?;
            Ok(format!("wrote={}\n", out.display()))
        }
        None => Ok(zoo::to_text(&b)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Show { path, flags } => show(path, flags),
        Command::Cost { path, flags } => cost(path, flags),
        Command::Refine { path, flags } => refine(path, flags),
        Command::Parsimony { before, after, flags } => parsimony(before, after, flags),
        Command::Render { path, flags } => render(path, flags),
        Command::Build { name, n, r, blocks, noise, flags } => build(name, *n, *r, blocks, *noise, flags),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(CliError::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
