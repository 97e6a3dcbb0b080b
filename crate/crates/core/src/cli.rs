//! Command-line front end. Every subcommand reads its inputs from files and
//! flags only, so reruns reproduce byte-identical outputs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{self, emit_scatter, format_coords, pca_project};
use crate::audit::{self, AuditConfig};
use crate::encoder::Encoder;
use crate::error::Error;
use crate::sampler::Dataset;
use crate::selector;
use crate::synthgen::{self, GenConfig};
use crate::trainer::{self, TrainConfig};
use crate::volume_io::{self, EmbeddingKind};

pub const INTENSITY_FILE: &str = "intensity.vol";
pub const SEGMENTATION_FILE: &str = "segmentation.vol";
pub const SYNAPSES_FILE: &str = "synapses.csv";
pub const CLASSES_FILE: &str = "classes.csv";
pub const MERGES_FILE: &str = "merges.json";

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "synclass", version, about = "Self-supervised synapse classification toolkit")]
pub struct Cli {
    /// Worker threads; outputs do not depend on this value.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom dataset.
    Gen(GenArgs),
    /// Train the encoder with the contrastive objective.
    Train(TrainArgs),
    /// Embed every synapse with a trained checkpoint.
    Embed(EmbedArgs),
    /// Project embeddings onto principal components, optionally plotting them.
    Project(ProjectArgs),
    /// Cluster embeddings and score them against the class labels.
    Eval(EvalArgs),
    /// Flag supervoxels whose synapses split into two embedding groups.
    Audit(AuditArgs),
    /// Propose synapses to label next by farthest-point selection.
    Select(SelectArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Print the effective JSON config and exit
    #[arg(long)]
    pub print_config: bool,
    /// Generator config JSON [default: built-in defaults]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, required_unless_present = "print_config")]
    pub out: Option<PathBuf>,
    /// Cross-class false merges to inject, listed in merges.json
    #[arg(long, default_value_t = 0)]
    pub false_merges: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Print the effective JSON config and exit
    #[arg(long)]
    pub print_config: bool,
    /// Training config JSON [default: built-in defaults]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `gen`
    #[arg(long, required_unless_present = "print_config")]
    pub data: Option<PathBuf>,
    /// Output directory for checkpoints and metrics.csv
    #[arg(long, required_unless_present = "print_config")]
    pub out: Option<PathBuf>,
    /// Continue from this step checkpoint [default: train from scratch]
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Layer {
    /// Penultimate features
    H,
    /// Projection head output
    Z,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Encoder checkpoint
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory written by `gen`
    #[arg(long)]
    pub data: PathBuf,
    /// Output embeddings CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Layer to export
    #[arg(long, value_enum, default_value_t = Layer::H)]
    pub layer: Layer,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Embeddings CSV
    #[arg(long)]
    pub emb: PathBuf,
    /// Output coordinates CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Number of principal components
    #[arg(long, default_value_t = 2)]
    pub components: usize,
    /// Scatter plot of the first two components [default: no plot]
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Synapse table whose class labels color the plot [default: one color]
    #[arg(long)]
    pub labels_from: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Embeddings CSV
    #[arg(long)]
    pub emb: PathBuf,
    /// Synapse table with class labels
    #[arg(long)]
    pub synapses: PathBuf,
    /// Number of clusters
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Seed for k-means and pair sampling
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output report JSON
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Print the effective JSON config and exit
    #[arg(long)]
    pub print_config: bool,
    /// Embeddings CSV
    #[arg(long, required_unless_present = "print_config")]
    pub emb: Option<PathBuf>,
    /// Synapse table with supervoxel ids
    #[arg(long, required_unless_present = "print_config")]
    pub synapses: Option<PathBuf>,
    /// Audit config JSON [default: built-in defaults]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output findings JSON
    #[arg(long, required_unless_present = "print_config")]
    pub out: Option<PathBuf>,
    /// Per-finding CSV summary [default: the --out path with a .csv extension]
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Embeddings CSV
    #[arg(long)]
    pub emb: PathBuf,
    /// One-column CSV of already labeled synapse ids [default: none labeled]
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    /// Number of synapses to select
    #[arg(long)]
    pub k: usize,
    /// Output one-column CSV of selected ids
    #[arg(long)]
    pub out: PathBuf,
    /// Coverage radius [default: median pairwise distance of a seeded sample]
    #[arg(long)]
    pub radius: Option<f64>,
    /// Seed for the radius sample
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Coverage report JSON [default: not written]
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// Errors that already name their file.
    #[error(transparent)]
    File(Error),
    #[error("{context}: {source}")]
    Data {
        context: String,
        #[source]
        source: Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::File(_) | CliError::Data { .. } => EXIT_DATA,
        }
    }
}

/// Attaches the offending file or field unless the error already names it.
fn at(context: impl AsRef<Path>) -> impl FnOnce(Error) -> CliError {
    let context = context.as_ref().display().to_string();
    move |source| match &source {
        Error::Io { .. } | Error::Format { .. } | Error::Table { .. } => CliError::File(source),
        _ => CliError::Data { context, source },
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn load_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| at(p)(Error::Io { path: p.into(), source: e }))?;
            serde_json::from_str(&text).map_err(|e| at(p)(Error::Json(e)))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("config types serialize");
    s.push('\n');
    s
}

fn write(path: &Path, bytes: &[u8]) -> CliResult {
    volume_io::write_atomic(path, bytes).map_err(at(path))
}

fn print_config(cli: &Cli) -> CliResult<bool> {
    let json = match &cli.command {
        Command::Gen(a) if a.print_config => {
            let cfg: GenConfig = load_json(a.config.as_deref())?;
            to_json(&cfg)
        }
        Command::Train(a) if a.print_config => {
            let cfg: TrainConfig = load_json(a.config.as_deref())?;
            to_json(&cfg)
        }
        Command::Audit(a) if a.print_config => {
            let cfg: AuditConfig = load_json(a.config.as_deref())?;
            to_json(&cfg)
        }
        _ => return Ok(false),
    };
    print!("{json}");
    Ok(true)
}

fn required(p: &Option<PathBuf>) -> &Path {
    p.as_deref().expect("clap enforces required flags")
}

fn run_gen(a: &GenArgs) -> CliResult {
    let cfg_ctx = a.config.clone().unwrap_or_else(|| "generator config".into());
    let cfg: GenConfig = load_json(a.config.as_deref())?;
    let out = required(&a.out);
    let mut phantom = synthgen::generate(&cfg).map_err(at(&cfg_ctx))?;
    let mut merges = Vec::new();
    if a.false_merges > 0 {
        let pairs = synthgen::pick_cross_class_pairs(&phantom, a.false_merges, cfg.seed);
        if pairs.len() < a.false_merges {
            return Err(at("--false-merges")(Error::invalid(
                "false merges",
                format!("requested {} but only {} disjoint cross-class neighbor pairs exist", a.false_merges, pairs.len()),
            )));
        }
        for (sv_a, sv_b) in pairs {
            let (merged, info) = synthgen::inject_false_merge(&phantom, sv_a, sv_b).map_err(at("--false-merges"))?;
            phantom = merged;
            merges.push(serde_json::json!({
                "merged_id": info.merged_id,
                "absorbed_id": info.absorbed_id,
                "boundary_midpoint": info.boundary_midpoint,
            }));
        }
    }
    fs::create_dir_all(out).map_err(|e| at(out)(Error::Io { path: out.into(), source: e }))?;
    let intensity = out.join(INTENSITY_FILE);
    volume_io::write_volume(&phantom.intensity, &intensity).map_err(at(&intensity))?;
    let seg = out.join(SEGMENTATION_FILE);
    volume_io::write_volume(&phantom.segmentation, &seg).map_err(at(&seg))?;
    write(&out.join(SYNAPSES_FILE), volume_io::format_synapse_table(&phantom.synapses).as_bytes())?;
    let classes = volume_io::format_class_table(phantom.class_of_supervoxel.iter().map(|(&sv, &c)| (sv, c)));
    write(&out.join(CLASSES_FILE), classes.as_bytes())?;
    if a.false_merges > 0 {
        write(&out.join(MERGES_FILE), to_json(&merges).as_bytes())?;
    }
    eprintln!(
        "wrote {} synapses in {} supervoxels to {}",
        phantom.synapses.len(),
        phantom.class_of_supervoxel.len(),
        out.display()
    );
    Ok(())
}

fn load_dataset(dir: &Path) -> CliResult<Dataset> {
    let ip = dir.join(INTENSITY_FILE);
    let intensity = volume_io::read_intensity(&ip).map_err(at(&ip))?;
    let sp = dir.join(SYNAPSES_FILE);
    let synapses = volume_io::read_synapse_table(&sp).map_err(at(&sp))?;
    Dataset::new(intensity, synapses).map_err(at(&sp))
}

fn run_train(a: &TrainArgs, threads: usize) -> CliResult {
    let cfg_ctx = a.config.clone().unwrap_or_else(|| "training config".into());
    let cfg: TrainConfig = load_json(a.config.as_deref())?;
    cfg.validate().map_err(at(&cfg_ctx))?;
    let dataset = load_dataset(required(&a.data))?;
    let out = required(&a.out);
    let log = |m: &trainer::StepMetrics| {
        eprintln!(
            "step {} loss {:.6} grad_norm {:.6} pos_cos {:.4} neg_cos {:.4}",
            m.step, m.loss, m.grad_norm, m.pos_cos, m.neg_cos
        )
    };
    let outcome = match &a.resume {
        None => trainer::train(&cfg, &dataset, out, threads, log).map_err(at(out))?,
        Some(ckpt) => trainer::resume(&cfg, &dataset, out, ckpt, threads, log).map_err(at(ckpt))?,
    };
    eprintln!("wrote {}", outcome.final_checkpoint.display());
    Ok(())
}

fn run_embed(a: &EmbedArgs) -> CliResult {
    let encoder = Encoder::load(&a.ckpt).map_err(at(&a.ckpt))?;
    let dataset = load_dataset(&a.data)?;
    let kind = match a.layer {
        Layer::H => EmbeddingKind::Penultimate,
        Layer::Z => EmbeddingKind::Projected,
    };
    let emb = analysis::embed_all(
        &encoder,
        &dataset.intensity,
        &dataset.synapses,
        encoder.config.patch_side,
        kind,
    )
    .map_err(at(&a.ckpt))?;
    write(&a.out, volume_io::format_embeddings(&emb).as_bytes())
}

fn run_project(a: &ProjectArgs) -> CliResult {
    let emb = volume_io::read_embeddings(&a.emb).map_err(at(&a.emb))?;
    let pca = pca_project(emb.values(), emb.dim(), a.components).map_err(at(&a.emb))?;
    write(&a.out, format_coords(emb.synapse_ids(), &pca.coords, a.components).as_bytes())?;
    if let Some(svg) = &a.svg {
        if a.components < 2 {
            return Err(at("--components")(Error::invalid(
                "components",
                "a scatter plot needs at least 2 components".to_string(),
            )));
        }
        let labels: Vec<String> = match &a.labels_from {
            None => vec!["synapse".to_string(); emb.len()],
            Some(p) => {
                let table = volume_io::read_synapse_table(p).map_err(at(p))?;
                let records = analysis::align_records(&emb, &table).map_err(at(p))?;
                records
                    .iter()
                    .map(|r| r.class_label.map_or_else(|| "unlabeled".to_string(), |c| format!("class {c}")))
                    .collect()
            }
        };
        let xy: Vec<[f64; 2]> = pca
            .coords
            .chunks(a.components)
            .map(|r| [r[0], r[1]])
            .collect();
        emit_scatter(&xy, &labels, svg).map_err(at(svg))?;
    }
    Ok(())
}

fn run_eval(a: &EvalArgs) -> CliResult {
    let emb = volume_io::read_embeddings(&a.emb).map_err(at(&a.emb))?;
    let table = volume_io::read_synapse_table(&a.synapses).map_err(at(&a.synapses))?;
    let report = analysis::evaluate(&emb, &table, a.k, a.seed).map_err(at(&a.synapses))?;
    write(&a.out, to_json(&report).as_bytes())
}

fn run_audit(a: &AuditArgs) -> CliResult {
    let cfg_ctx = a.config.clone().unwrap_or_else(|| "audit config".into());
    let cfg: AuditConfig = load_json(a.config.as_deref())?;
    cfg.validate().map_err(at(&cfg_ctx))?;
    let emb_path = required(&a.emb);
    let syn_path = required(&a.synapses);
    let out = required(&a.out);
    let emb = volume_io::read_embeddings(emb_path).map_err(at(emb_path))?;
    let table = volume_io::read_synapse_table(syn_path).map_err(at(syn_path))?;
    let report = audit::audit_dataset(&emb, &table, &cfg).map_err(at(syn_path))?;
    let mut json = audit::findings_json(&report.findings).map_err(at(out))?;
    json.push('\n');
    write(out, json.as_bytes())?;
    let summary = a.summary.clone().unwrap_or_else(|| out.with_extension("csv"));
    write(&summary, audit::findings_csv(&report.findings).as_bytes())?;
    eprintln!(
        "{} findings, {} supervoxels audited, {} not auditable",
        report.findings.len(),
        report.scores.len(),
        report.not_auditable.len()
    );
    Ok(())
}

fn run_select(a: &SelectArgs) -> CliResult {
    let emb = volume_io::read_embeddings(&a.emb).map_err(at(&a.emb))?;
    let labeled = match &a.labeled {
        None => Vec::new(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| at(p)(Error::Io { path: p.clone(), source: e }))?;
            volume_io::parse_id_list(&text, &p.display().to_string()).map_err(at(p))?
        }
    };
    let ctx = a.labeled.clone().unwrap_or_else(|| a.emb.clone());
    let (picked, report) =
        selector::select_with_report(&emb, &labeled, a.k, a.radius, a.seed).map_err(at(&ctx))?;
    write(&a.out, volume_io::format_id_list(&picked).as_bytes())?;
    if let Some(p) = &a.report {
        write(p, to_json(&report).as_bytes())?;
    }
    Ok(())
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> CliResult {
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be >= 1".into()));
    }
    if print_config(cli)? {
        return Ok(());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| at("--threads")(Error::invalid("thread pool", e.to_string())))?;
    match &cli.command {
        Command::Train(a) => run_train(a, cli.threads),
        cmd => pool.install(|| match cmd {
            Command::Gen(a) => run_gen(a),
            Command::Embed(a) => run_embed(a),
            Command::Project(a) => run_project(a),
            Command::Eval(a) => run_eval(a),
            Command::Audit(a) => run_audit(a),
            Command::Select(a) => run_select(a),
            Command::Train(_) => unreachable!("handled above"),
        }),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code, printing help or errors as a side effect.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
