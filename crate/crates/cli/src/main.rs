//! `phimask`: generate corpora, run masking strategies, sweep presets and
//! evaluate the hybrid redaction cascade.
//!
//! All results are computed in memory and written only once complete; any
//! error leaves the output directory untouched and exits non-zero.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use phimask_core::backend::{backend_from_spec, BackendBehaviorConfig, OcrBackend, RegenerationMode};
use phimask_core::document::{generate_corpus, read_corpus, write_corpus, Document, Template};
use phimask_core::eval::{emit_report, write_all_atomic, CascadeTable, EvalReport, TableFormat};
use phimask_core::experiment::{self, AblationPoint, HybridConfig, MonteCarlo};
use phimask_core::grid::CompressionModel;
use phimask_core::masking::{build_masks, preset, write_masks, StrategyConfig};
use phimask_core::redact::Redactor;

use config::{CorpusSource, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "phimask", version, about = "Vision-token PHI masking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic annotated corpus.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "billing-v1")]
        template: Template,
        #[arg(long, env = "PHIMASK_OUT_DIR")]
        out: PathBuf,
    },
    /// Run one strategy over a corpus.
    Run(RunArgs),
    /// Run all fourteen presets plus the radius ablation.
    Sweep(RunArgs),
    /// Vision masking followed by pattern redaction.
    Hybrid(RunArgs),
    /// Write the mask interchange file consumed by the hook adapter.
    ExportMasks(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Corpus directory written by `generate`.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Generate this many documents in memory instead of reading a corpus.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    template: Option<Template>,
    /// Preset name, e.g. `v3-r1`.
    #[arg(long, conflicts_with = "strategy_file")]
    strategy: Option<String>,
    #[arg(long)]
    strategy_file: Option<PathBuf>,
    /// `surrogate` or `adapter:<dir>`.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    regeneration: Option<RegenerationMode>,
    /// Stage-2 redaction accuracy in (0, 1].
    #[arg(long)]
    accuracy: Option<f64>,
    #[arg(long)]
    mc_seeds: Option<usize>,
    /// JSON redaction rules; defaults to the built-in four.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, env = "PHIMASK_OUT_DIR")]
    out: Option<PathBuf>,
    /// `markdown` or `csv`.
    #[arg(long)]
    format: Option<TableFormat>,
    /// TOML file; its keys override the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(self) -> Result<RunConfig> {
        let flags = RunConfig {
            seed: self.seed,
            corpus: self.corpus,
            n: self.n,
            template: self.template,
            strategy: self.strategy,
            strategy_file: self.strategy_file,
            backend: self.backend,
            regeneration: self.regeneration,
            accuracy: self.accuracy,
            mc_seeds: self.mc_seeds,
            rules: self.rules,
            out: self.out,
            format: self.format,
        };
        match self.config {
            Some(path) => Ok(flags.overlay(RunConfig::load(&path)?)),
            None => Ok(flags),
        }
    }
}

struct Session {
    cfg: RunConfig,
    seed: u64,
    corpus: Vec<Document>,
    backend: Box<dyn OcrBackend>,
}

impl Session {
    fn new(cfg: RunConfig) -> Result<Self> {
        let seed = cfg.seed()?;
        let corpus = match cfg.corpus_source()? {
            CorpusSource::Dir(dir) => read_corpus(&dir)
                .with_context(|| format!("reading corpus {}", dir.display()))?,
            CorpusSource::Generate { n, template } => generate_corpus(n, seed, template),
        };
        if corpus.is_empty() {
            bail!("corpus is empty");
        }
        let behaviour = BackendBehaviorConfig {
            regeneration: cfg.regeneration.unwrap_or_default(),
            ..Default::default()
        };
        let backend = backend_from_spec(cfg.backend_spec(), behaviour)?;
        Ok(Session {
            cfg,
            seed,
            corpus,
            backend,
        })
    }

    fn strategy(&self) -> Result<(String, StrategyConfig)> {
        match (&self.cfg.strategy, &self.cfg.strategy_file) {
            (Some(name), None) => Ok((name.clone(), preset(name)?)),
            (None, Some(path)) => {
                let cfg = StrategyConfig::load(path)
                    .with_context(|| format!("loading strategy {}", path.display()))?;
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| cfg.id.to_string());
                Ok((name, cfg))
            }
            (Some(_), Some(_)) => bail!("give either --strategy or --strategy-file, not both"),
            (None, None) => bail!("no strategy: pass --strategy <preset> or --strategy-file <json>"),
        }
    }

    fn format(&self) -> TableFormat {
        self.cfg.format.unwrap_or_default()
    }

    fn out(&self) -> Result<&Path> {
        self.cfg.out_dir()
    }
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn write_reports(ctx: &Session, reports: &[EvalReport], extra: &[(&str, Vec<u8>)]) -> Result<()> {
    let format = ctx.format();
    let rendered = emit_report(reports, format)?;
    let mut files: Vec<(&str, &[u8])> = vec![
        ("results.json", rendered.results_json.as_bytes()),
        ("audit.jsonl", rendered.audit_jsonl.as_bytes()),
        (
            phimask_core::eval::RenderedReport::table_file_name(format),
            rendered.table.as_bytes(),
        ),
    ];
    files.extend(extra.iter().map(|(n, b)| (*n, b.as_slice())));
    let out = ctx.out()?;
    write_all_atomic(out, &files)?;
    print!("{}", rendered.table);
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn cmd_generate(n: usize, seed: u64, template: Template, out: &Path) -> Result<()> {
    if out.exists() && out.read_dir()?.next().is_some() {
        bail!("{} already exists and is not empty", out.display());
    }
    let parent = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent)?;
    let staging = tempfile::Builder::new().prefix(".phimask-corpus").tempdir_in(parent)?;
    let manifest = write_corpus(n, seed, template, staging.path())?;
    if out.exists() {
        std::fs::remove_dir(out)?;
    }
    std::fs::rename(staging.path(), out)
        .with_context(|| format!("moving corpus into {}", out.display()))?;
    println!(
        "generated {} documents ({}) in {}",
        manifest.documents.len(),
        template,
        out.display()
    );
    Ok(())
}

fn cmd_run(ctx: &Session) -> Result<()> {
    let (name, strategy) = ctx.strategy()?;
    let report = experiment::run_strategy(&ctx.corpus, &name, &strategy, ctx.backend.as_ref(), ctx.seed)?;
    write_reports(ctx, &[report], &[])
}

fn cmd_sweep(ctx: &Session) -> Result<()> {
    let sweep = experiment::sweep(&ctx.corpus, ctx.backend.as_ref(), ctx.seed)?;
    let ablation: &[AblationPoint] = &sweep.ablation;
    write_reports(ctx, &sweep.reports, &[("ablation.json", json(&ablation)?)])
}

#[derive(Serialize)]
struct HybridSummary<'a> {
    preset: &'a str,
    accuracy: f64,
    stage1_reduction: f64,
    expected_cumulative: f64,
    cascade: &'a CascadeTable,
    monte_carlo: Option<MonteCarlo>,
}

fn cmd_hybrid(ctx: &Session) -> Result<()> {
    let (name, strategy) = ctx.strategy()?;
    let accuracy = ctx.cfg.accuracy()?;
    let redactor = match &ctx.cfg.rules {
        Some(path) => Redactor::load(path)?,
        None => Redactor::with_defaults(),
    };
    let config = HybridConfig {
        accuracy,
        mc_seeds: ctx.cfg.mc_seeds.unwrap_or(10_000),
        seed: ctx.seed,
    };
    let h = experiment::hybrid(&ctx.corpus, &name, &strategy, ctx.backend.as_ref(), &redactor, config)?;
    let summary = HybridSummary {
        preset: &name,
        accuracy,
        stage1_reduction: h.report.row.reduction.percent(),
        expected_cumulative: h.expected_cumulative,
        cascade: h.report.cascade.as_ref().expect("hybrid reports carry a cascade"),
        monte_carlo: h.monte_carlo,
    };
    let summary_json = json(&summary)?;
    write_reports(ctx, std::slice::from_ref(&h.report), &[("hybrid.json", summary_json)])?;
    println!("\nexpected cumulative at accuracy {accuracy}: {:.1}%", h.expected_cumulative);
    if let Some(mc) = h.monte_carlo {
        println!(
            "Monte-Carlo over {} seeds: {:.1}% (s.e. {:.2})",
            mc.seeds, mc.mean_cumulative, mc.std_error
        );
    }
    Ok(())
}

fn cmd_export_masks(ctx: &Session) -> Result<()> {
    let (_, strategy) = ctx.strategy()?;
    strategy.validate()?;
    let model = CompressionModel::default();
    let builds = ctx
        .corpus
        .iter()
        .map(|d| Ok((d.id.as_str(), build_masks(d, &strategy, &model)?.masks)))
        .collect::<Result<Vec<_>>>()?;
    let mut buf = Vec::new();
    write_masks(&mut buf, builds.iter().map(|(id, m)| (*id, m)))?;
    let out = ctx.out()?;
    write_all_atomic(out, &[("masks.jsonl", &buf)])?;
    println!(
        "exported masks for {} documents to {}",
        builds.len(),
        out.join("masks.jsonl").display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            n,
            seed,
            template,
            out,
        } => cmd_generate(n, seed, template, &out),
        Command::Run(args) => cmd_run(&Session::new(args.resolve()?)?),
        Command::Sweep(args) => cmd_sweep(&Session::new(args.resolve()?)?),
        Command::Hybrid(args) => cmd_hybrid(&Session::new(args.resolve()?)?),
        Command::ExportMasks(args) => cmd_export_masks(&Session::new(args.resolve()?)?),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
