use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use hetcausal::dataset::{Dataset, DatasetSidecar};
use hetcausal::dot::{graph_to_dot, hcg_to_dot};
use hetcausal::effects::{EffectReport, Provenance};
use hetcausal::functional::{functional_mediator_effects, functional_treatment_effects, FunctionalParams};
use hetcausal::graph::{threshold_graph, GraphJson, Skeleton, WeightedGraph};
use hetcausal::inference::{
    bootstrap_effects, evaluate, run_pipeline, run_replication, write_forest_csv, BootstrapConfig, CiMethod,
    PipelineConfig, ThresholdRule,
};
use hetcausal::scenario::{simulate, ScenarioId, ScenarioSpec};

#[derive(Parser)]
#[command(name = "hetcausal", version, about = "Heterogeneous causal graphs and effects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a ground-truth graph and a dataset from a preset or spec file.
    Simulate(SimulateArgs),
    /// Learn a graph from data, threshold it and refit the weights.
    Discover(DiscoverArgs),
    /// Closed-form effects of a graph at one or more covariate values.
    Effects(EffectsArgs),
    /// Bootstrap confidence intervals for every effect.
    Bootstrap(BootstrapArgs),
    /// Compare an estimated graph with the truth.
    Evaluate(EvaluateArgs),
    /// Run a preset over a range of seeds and tabulate recovery and bias.
    Replicate(ReplicateArgs),
    /// Write a graph, or its projection at fixed covariates, as Graphviz DOT.
    ExportDot(ExportDotArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    preset: Option<ScenarioId>,
    /// Scenario spec JSON.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Override the sample size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    /// Role-tagged CSV.
    #[arg(long)]
    data: PathBuf,
    /// Sidecar JSON; defaults to the CSV path with a `.json` extension when present.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Pipeline configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct DiscoverArgs {
    #[command(flatten)]
    input: DataArgs,
    /// Fixed edge threshold, overriding the configuration.
    #[arg(long)]
    threshold: Option<f64>,
    /// Keep the best iterate when discovery misses its tolerance.
    #[arg(long)]
    allow_unconverged: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EffectsArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Covariate values "v1,v2,..."; repeat for several points.
    #[arg(long = "x", required = true)]
    x: Vec<String>,
    /// Treatment level, required for graphs with links.
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    input: DataArgs,
    /// Covariate values "v1,v2,..."; repeat for several points. Defaults to all ones.
    #[arg(long = "x")]
    x: Vec<String>,
    #[arg(long = "K", default_value_t = 1000)]
    k: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value = "percentile")]
    method: CiMethod,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Adjust alpha for the number of reported effects.
    #[arg(long)]
    by_adjust: bool,
    #[arg(long, env = "HETCAUSAL_THREADS")]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Edges with |weight| at or below this are ignored in both graphs.
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplicateArgs {
    #[arg(long)]
    preset: ScenarioId,
    /// Inclusive range "a..b" or a single seed.
    #[arg(long)]
    seeds: String,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Covariate values for the effect biases; defaults to all ones.
    #[arg(long = "x")]
    x: Option<String>,
    #[arg(long, env = "HETCAUSAL_THREADS")]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportDotArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Project onto the treatment, mediators and outcome at these covariates.
    #[arg(long = "x")]
    x: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct CliError {
    error: String,
    message: String,
}

impl CliError {
    fn new(kind: &str, message: impl Into<String>) -> Self {
        Self { error: kind.into(), message: message.into() }
    }
}

impl From<hetcausal::Error> for CliError {
    fn from(e: hetcausal::Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Serialize)]
struct InputRecord {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    tool_version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config_digest: Option<String>,
    inputs: Vec<InputRecord>,
    outputs: Vec<String>,
    started_unix: f64,
    finished_unix: f64,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects inputs and outputs of one command and writes its manifest.
struct Run {
    manifest: RunManifest,
    out: PathBuf,
}

impl Run {
    fn start(command: &str, out: &Path) -> CliResult<Self> {
        fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
        Ok(Self {
            manifest: RunManifest {
                command: command.into(),
                tool_version: env!("CARGO_PKG_VERSION"),
                seed: None,
                config_digest: None,
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_unix: now(),
                finished_unix: 0.0,
            },
            out: out.to_path_buf(),
        })
    }

    fn read(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
        self.manifest.inputs.push(InputRecord { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(bytes)
    }

    fn read_json<T: serde::de::DeserializeOwned>(&mut self, path: &Path) -> CliResult<T> {
        let bytes = self.read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::new("json", format!("{}: {e}", path.display())))
    }

    fn config<T: Serialize>(&mut self, cfg: &T) -> CliResult<()> {
        let text = serde_json::to_vec(cfg).map_err(|e| CliError::new("json", e.to_string()))?;
        self.manifest.config_digest = Some(sha256_hex(&text));
        Ok(())
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.out.join(name);
        fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
        self.manifest.outputs.push(path.display().to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::new("json", e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn finish(mut self) -> CliResult<()> {
        self.manifest.finished_unix = now();
        let path = self.out.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| CliError::new("json", e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| io_error(&path, e))
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()))
}

fn parse_vector(text: &str) -> CliResult<Vec<f64>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::new("usage", format!("bad number {v:?} in {text:?}"))))
        .collect()
}

fn parse_seeds(text: &str) -> CliResult<Vec<u64>> {
    let bad = || CliError::new("usage", format!("seeds must look like \"a..b\" or \"a\", got {text:?}"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    match text.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
            if a > b {
                return Err(bad());
            }
            Ok((a..=b).collect())
        }
        None => Ok(vec![num(text)?]),
    }
}

fn load_pipeline(run: &mut Run, path: Option<&Path>) -> CliResult<PipelineConfig> {
    match path {
        Some(p) => run.read_json(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn load_data(run: &mut Run, args: &DataArgs) -> CliResult<Dataset<f64>> {
    let bytes = run.read(&args.data)?;
    let data = Dataset::<f64>::read_csv(&bytes[..])
        .map_err(|e| CliError::new(e.kind(), format!("{}: {e}", args.data.display())))?;
    let sidecar = match &args.sidecar {
        Some(p) => Some(p.clone()),
        None => Some(args.data.with_extension("json")).filter(|p| p.is_file()),
    };
    match sidecar {
        Some(p) => {
            let sc: DatasetSidecar = run.read_json(&p)?;
            Ok(data.with_sidecar(&sc)?)
        }
        None => Ok(data),
    }
}

fn check_x(x: &[f64], p: usize) -> CliResult<()> {
    if x.len() != p {
        return Err(CliError::new("usage", format!("--x has {} values, the graph has {p} covariates", x.len())));
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let mut run = Run::start("simulate", &args.out)?;
    let mut spec = match (&args.preset, &args.spec) {
        (Some(id), _) => ScenarioSpec::preset(*id, args.seed)?,
        (None, Some(path)) => ScenarioSpec { seed: args.seed, ..run.read_json(path)? },
        (None, None) => return Err(CliError::new("usage", "one of --preset or --spec is required")),
    };
    if let Some(n) = args.n {
        spec.n = n;
    }
    run.manifest.seed = Some(spec.seed);
    run.config(&spec)?;
    let (truth, data) = simulate::<f64>(&spec)?;
    let mut csv = Vec::new();
    data.write_csv(&mut csv)?;
    run.write("data.csv", &csv)?;
    run.write_json("data.json", &data.sidecar(Some(&spec)))?;
    run.write_json("truth.json", &GraphJson::from_graph(&truth))?;
    run.finish()
}

#[derive(Serialize)]
struct DiscoverSummary {
    threshold: f64,
    h1: f64,
    converged: bool,
    edges: usize,
}

fn cmd_discover(args: DiscoverArgs) -> CliResult<()> {
    let mut run = Run::start("discover", &args.out)?;
    let mut cfg = load_pipeline(&mut run, args.input.config.as_deref())?;
    if let Some(t) = args.threshold {
        cfg.threshold = ThresholdRule::Fixed(t);
    }
    cfg.accept_unconverged = args.allow_unconverged;
    run.config(&cfg)?;
    let data = load_data(&mut run, &args.input)?;
    let out = run_pipeline(&data, &cfg)?;
    let mut thresholded = WeightedGraph::zeros(out.raw.layout());
    for (i, j) in edges(&out.skeleton) {
        thresholded.set_weight(i, j, out.raw.weight(i, j));
    }
    run.write_json("raw.json", &GraphJson::from_graph(&out.raw))?;
    run.write_json("thresholded.json", &GraphJson::from_graph(&thresholded))?;
    run.write_json("graph.json", &GraphJson::from_graph(&out.refit))?;
    run.write_json(
        "discover.json",
        &DiscoverSummary { threshold: out.threshold, h1: out.h1, converged: out.converged, edges: out.skeleton.edge_count() },
    )?;
    run.finish()
}

fn edges(s: &Skeleton) -> Vec<(usize, usize)> {
    s.edges().indexed_iter().filter(|(_, &e)| e).map(|(ij, _)| ij).collect()
}

fn cmd_effects(args: EffectsArgs) -> CliResult<()> {
    let mut run = Run::start("effects", &args.out)?;
    let json: GraphJson = run.read_json(&args.graph)?;
    let provenance = Provenance {
        graph_source: args.graph.display().to_string(),
        config_digest: run.manifest.inputs.last().map(|i| i.sha256.clone()),
    };
    let xs = args.x.iter().map(|x| parse_vector(x)).collect::<CliResult<Vec<_>>>()?;
    let mut reports = Vec::with_capacity(xs.len());
    if json.links.is_some() {
        let a = args.a.ok_or_else(|| CliError::new("usage", "--a is required for a graph with links"))?;
        let fp = FunctionalParams::<f64>::from_graph_json(&json)?;
        for x in &xs {
            check_x(x, json.p)?;
            let te = functional_treatment_effects(&fp, x, a)?;
            let me = functional_mediator_effects(&fp, x, a)?;
            let mut r = EffectReport::new(&te, &me);
            r.a = Some(a);
            reports.push(r.with_provenance(provenance.clone()));
        }
    } else {
        let params = json.to_parameters::<f64>()?;
        for x in &xs {
            check_x(x, json.p)?;
            reports.push(EffectReport::compute(&params, x)?.with_provenance(provenance.clone()));
        }
    }
    run.write_json("effects.json", &reports)?;
    run.finish()
}

fn cmd_bootstrap(args: BootstrapArgs) -> CliResult<()> {
    let mut run = Run::start("bootstrap", &args.out)?;
    let pipeline = load_pipeline(&mut run, args.input.config.as_deref())?;
    let data = load_data(&mut run, &args.input)?;
    let p = data.layout().p();
    let xs = if args.x.is_empty() {
        vec![vec![1.0; p]]
    } else {
        args.x.iter().map(|x| parse_vector(x)).collect::<CliResult<Vec<_>>>()?
    };
    for x in &xs {
        check_x(x, p)?;
    }
    let cfg = BootstrapConfig {
        resamples: args.k,
        alpha: args.alpha,
        method: args.method,
        seed: args.seed,
        parallel_degree: args.threads,
        by_adjust: args.by_adjust,
    };
    run.manifest.seed = Some(args.seed);
    run.config(&(&pipeline, &cfg))?;
    let report = bootstrap_effects(&data, &pipeline, &xs, &cfg)?;
    run.write_json("ci.json", &report)?;
    let mut csv = Vec::new();
    write_forest_csv(&report.records, &mut csv)?;
    run.write("forest.csv", &csv)?;
    run.finish()
}

fn cmd_evaluate(args: EvaluateArgs) -> CliResult<()> {
    let mut run = Run::start("evaluate", &args.out)?;
    let est: GraphJson = run.read_json(&args.est)?;
    let truth: GraphJson = run.read_json(&args.truth)?;
    let est = threshold_graph(&est.to_graph::<f64>()?, args.threshold);
    let truth = threshold_graph(&truth.to_graph::<f64>()?, args.threshold);
    run.write_json("eval.json", &evaluate(&est, &truth)?)?;
    run.finish()
}

fn cmd_replicate(args: ReplicateArgs) -> CliResult<()> {
    let mut run = Run::start("replicate", &args.out)?;
    let cfg = load_pipeline(&mut run, args.config.as_deref())?;
    run.config(&cfg)?;
    let seeds = parse_seeds(&args.seeds)?;
    let x = args.x.as_deref().map(parse_vector).transpose()?;
    let table = run_replication(args.preset, &seeds, &cfg, x.as_deref(), args.threads)?;
    run.write_json("table.json", &table)?;
    let mut csv = String::from("seed,converged,fdr,tpr,shd,hte_bias,hde_bias,hie_bias\n");
    for r in &table.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.seed, r.converged, r.fdr, r.tpr, r.shd, r.hte_bias, r.hde_bias, r.hie_bias
        ));
    }
    run.write("table.csv", csv.as_bytes())?;
    for m in &table.summary {
        println!("{:<9} {:>8.4} ({:.4})", m.name, m.mean, m.sd);
    }
    run.finish()
}

fn cmd_export_dot(args: ExportDotArgs) -> CliResult<()> {
    let mut run = Run::start("export-dot", &args.out)?;
    let json: GraphJson = run.read_json(&args.graph)?;
    match &args.x {
        Some(x) => {
            let x = parse_vector(x)?;
            check_x(&x, json.p)?;
            let dot = hcg_to_dot(&json.to_parameters::<f64>()?, &x)?;
            run.write("hcg.dot", dot.as_bytes())?;
        }
        None => run.write("graph.dot", graph_to_dot(&json.to_graph::<f64>()?).as_bytes())?,
    }
    run.finish()
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Discover(a) => cmd_discover(a),
        Command::Effects(a) => cmd_effects(a),
        Command::Bootstrap(a) => cmd_bootstrap(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Replicate(a) => cmd_replicate(a),
        Command::ExportDot(a) => cmd_export_dot(a),
    }
}

fn report(err: &CliError) {
    let stderr = std::io::stderr();
    let _ = serde_json::to_writer(BufWriter::new(stderr.lock()), err);
    eprintln!();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report(&CliError::new("usage", e.to_string().trim_end()));
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}
