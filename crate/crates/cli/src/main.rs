//! `erank`: effective-rank metrics over dumped model representations.
//!
//! Exit codes: 0 on success, 1 for usage and filesystem errors, 2 for data
//! and metric errors.

mod plotdata;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use erank_core::pipeline::{self, AlgorithmChoice, EvalOptions};
use erank_core::report::{Aggregates, ModelSection, SkippedSentence};
use erank_core::{
    load_manifest, read_tensor, write_report, Aggregation, Error, MetricsReport, ReportFormat, SentenceEntropyRecord,
    SpectrumRoute,
};

#[derive(Parser, Debug)]
#[command(name = "erank", version, about = "Matrix entropy, effective rank and Diff-eRank of model representations")]
struct Cli {
    /// Worker threads for per-sentence evaluation (0 = available parallelism)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Log level (error, warn, info, debug, trace); overrides ERANK_LOG
    #[arg(long, global = true)]
    log_level: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-sentence entropy and effective rank of one tensor or manifest
    Erank(ErankArgs),
    /// Dataset Diff-eRank between an untrained and a trained model
    DiffErank(DiffArgs),
    /// Image reduction ratio and image-text alignment from five eRanks
    MmAlign(MmArgs),
    /// Reduced cross-entropy loss between an untrained and a trained model
    ReducedLoss(LossArgs),
    /// CSV of (label, Diff-eRank, reduced loss) across diff-erank reports
    Plotdata(PlotArgs),
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Write the machine-readable report here
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Fail on the first degenerate sentence instead of skipping it
    #[arg(long)]
    strict: bool,

    #[arg(long, value_enum, default_value_t = RouteArg::Auto)]
    route: RouteArg,
}

impl EvalArgs {
    fn options(&self) -> EvalOptions {
        EvalOptions {
            strict: self.strict,
            route: match self.route {
                RouteArg::Auto => SpectrumRoute::Auto,
                RouteArg::Dense => SpectrumRoute::Dense,
                RouteArg::Gram => SpectrumRoute::Gram,
            },
        }
    }
}

#[derive(Args, Debug)]
#[group(id = "input", required = true, multiple = false, args = ["reps", "manifest"])]
struct ErankArgs {
    /// A single N x d representation tensor (.npy)
    #[arg(long)]
    reps: Option<PathBuf>,

    /// A dump manifest
    #[arg(long)]
    manifest: Option<PathBuf>,

    #[command(flatten)]
    eval: EvalArgs,

    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
struct DiffArgs {
    #[arg(long)]
    untrained: PathBuf,

    #[arg(long)]
    trained: PathBuf,

    #[arg(long, value_enum, default_value_t = AlgorithmArg::A)]
    algorithm: AlgorithmArg,

    /// Label used by `plotdata` (defaults to the trained model id)
    #[arg(long)]
    label: Option<String>,

    #[command(flatten)]
    eval: EvalArgs,

    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
struct MmArgs {
    #[arg(long, requires_all = ["e2", "e3", "e4", "e5"], required_unless_present = "manifests", conflicts_with = "manifests")]
    e1: Option<f64>,
    #[arg(long, requires = "e1")]
    e2: Option<f64>,
    #[arg(long, requires = "e1")]
    e3: Option<f64>,
    #[arg(long, requires = "e1")]
    e4: Option<f64>,
    #[arg(long, requires = "e1")]
    e5: Option<f64>,

    /// Five stage manifests: vision encoder, connector, LLM on image, text and pair
    #[arg(long, num_args = 5, value_names = ["STAGE1", "STAGE2", "STAGE3", "STAGE4", "STAGE5"])]
    manifests: Option<Vec<PathBuf>>,

    /// Aggregation used to reduce each stage manifest to one eRank
    #[arg(long, value_enum, default_value_t = AggregationArg::A)]
    algorithm: AggregationArg,

    #[command(flatten)]
    eval: EvalArgs,

    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
struct LossArgs {
    #[arg(long)]
    untrained: PathBuf,

    #[arg(long)]
    trained: PathBuf,

    #[arg(long)]
    label: Option<String>,

    #[command(flatten)]
    eval: EvalArgs,

    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// JSON reports written by `diff-erank`
    #[arg(long, num_args = 1.., required = true)]
    reports: Vec<PathBuf>,

    /// Write the CSV here instead of stdout
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RouteArg {
    Auto,
    Dense,
    Gram,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AlgorithmArg {
    A,
    B,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AggregationArg {
    A,
    B,
}

/// A failure with its process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_io() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_logging(cli.log_level.as_deref());

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn init_logging(level: Option<&str>) {
    let env = env_logger::Env::new().filter_or("ERANK_LOG", "warn");
    let mut builder = env_logger::Builder::from_env(env);
    if let Some(level) = level {
        builder.parse_filters(level);
    }
    let _ = builder.try_init();
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::Erank(a) => cmd_erank(a),
        Command::DiffErank(a) => cmd_diff_erank(a),
        Command::MmAlign(a) => cmd_mm_align(a),
        Command::ReducedLoss(a) => cmd_reduced_loss(a),
        Command::Plotdata(a) => plotdata::run(&a.reports, a.output.as_deref()),
    }
}

fn emit(report: &MetricsReport, out: &OutputArgs) -> CmdResult {
    if let Some(path) = &out.output {
        let format = match out.format {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        };
        write_report(report, path, format)?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn print_section(m: &ModelSection) {
    let a = &m.aggregates;
    println!(
        "{} [{}]: {} sentences evaluated, {} skipped",
        m.model_id,
        m.role,
        a.sentence_count,
        m.skipped.len()
    );
    if let (Some(h), Some(ea), Some(eb)) = (a.mean_entropy, a.erank_a, a.erank_b) {
        println!("  mean_entropy {h:.6}  erank_a {ea:.6}  erank_b {eb:.6}");
    }
    if let Some(l) = a.mean_loss {
        println!("  mean_loss {l:.6} over {} sentences", a.loss_count);
    }
}

fn single_tensor_report(path: &Path, opts: EvalOptions) -> Result<MetricsReport, Failure> {
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tensor = read_tensor(path)?;
    let result = tensor
        .to_representation_set()
        .and_then(|reps| SentenceEntropyRecord::compute(id.clone(), &reps, opts.route))
        .map_err(|e| Error::AtPath {
            path: path.to_path_buf(),
            source: Box::new(e),
        });
    let (records, skipped) = match result {
        Ok(r) => (vec![r], Vec::new()),
        Err(e) if !opts.strict && e.is_per_sentence() => (
            Vec::new(),
            vec![SkippedSentence {
                sentence_id: id.clone(),
                stage: "erank".into(),
                reason: e.to_string(),
            }],
        ),
        Err(e) => return Err(e.into()),
    };
    let aggregates = Aggregates::compute(&records, &[]);
    Ok(MetricsReport {
        inputs: vec![erank_core::report::InputDigest {
            role: "single".into(),
            path: path.display().to_string(),
            sha256: erank_core::manifest::file_digest(path)?,
        }],
        models: vec![ModelSection {
            role: "single".into(),
            model_id: id,
            dataset_id: String::new(),
            layer: erank_core::manifest::LAST_LAYER,
            records,
            losses: Vec::new(),
            skipped,
            aggregates,
        }],
        ..Default::default()
    })
}

fn cmd_erank(a: ErankArgs) -> CmdResult {
    let opts = a.eval.options();
    let report = match (&a.reps, &a.manifest) {
        (Some(reps), _) => {
            let report = single_tensor_report(reps, opts)?;
            let m = &report.models[0];
            match m.records.first() {
                Some(r) => println!("{}: tokens {}  entropy {:.6}  erank {:.6}", r.sentence_id, r.token_count, r.entropy, r.erank),
                None => println!("{}: skipped ({})", m.model_id, m.skipped[0].reason),
            }
            report
        }
        (None, Some(manifest)) => {
            let loaded = load_manifest(manifest)?;
            let report = pipeline::erank_report(&loaded, opts)?;
            print_section(&report.models[0]);
            report
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    emit(&report, &a.out)
}

fn cmd_diff_erank(a: DiffArgs) -> CmdResult {
    let untrained = load_manifest(&a.untrained)?;
    let trained = load_manifest(&a.trained)?;
    let algorithm = match a.algorithm {
        AlgorithmArg::A => AlgorithmChoice::A,
        AlgorithmArg::B => AlgorithmChoice::B,
        AlgorithmArg::Both => AlgorithmChoice::Both,
    };
    let mut report = pipeline::diff_erank_report(&untrained, &trained, algorithm, a.eval.options())?;
    if a.label.is_some() {
        report.label = a.label;
    }
    for m in &report.models {
        print_section(m);
    }
    let c = report.comparison.as_ref().expect("diff report has a comparison");
    if let Some(v) = c.diff_erank_a {
        println!("diff_erank (a) {v:.6}");
    }
    if let Some(v) = c.diff_erank_b {
        println!("diff_erank (b) {v:.6}");
    }
    if let Some(v) = c.reduced_loss {
        println!("reduced_loss {v:.6}");
    }
    emit(&report, &a.out)
}

fn cmd_mm_align(a: MmArgs) -> CmdResult {
    let report = match &a.manifests {
        Some(paths) => {
            let loaded = paths.iter().map(load_manifest).collect::<Result<Vec<_>, _>>()?;
            let stages: [_; 5] = loaded.try_into().expect("clap enforces five manifests");
            let agg = match a.algorithm {
                AggregationArg::A => Aggregation::A,
                AggregationArg::B => Aggregation::B,
            };
            pipeline::mm_report_from_manifests(&stages, agg, a.eval.options())?
        }
        None => {
            let values = [a.e1, a.e2, a.e3, a.e4, a.e5].map(|v| v.expect("clap requires all five eRanks"));
            pipeline::mm_report_from_values(values)?
        }
    };
    let mm = report.multimodal.as_ref().expect("mm report has a multimodal block");
    println!(
        "eRank1..5 {:.4} {:.4} {:.4} {:.4} {:.4}",
        mm.erank1, mm.erank2, mm.erank3, mm.erank4, mm.erank5
    );
    println!("image_reduction_ratio {:.4}", mm.image_reduction_ratio);
    println!("image_text_alignment {:.4}", mm.image_text_alignment);
    emit(&report, &a.out)
}

fn cmd_reduced_loss(a: LossArgs) -> CmdResult {
    let untrained = load_manifest(&a.untrained)?;
    let trained = load_manifest(&a.trained)?;
    let mut report = pipeline::reduced_loss_report(&untrained, &trained, a.eval.options())?;
    if a.label.is_some() {
        report.label = a.label;
    }
    for m in &report.models {
        print_section(m);
    }
    let c = report.comparison.as_ref().expect("loss report has a comparison");
    println!("reduced_loss {:.6}", c.reduced_loss.expect("reduced loss present"));
    emit(&report, &a.out)
}
