use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use stars_core::config::{GatewayKind, RunConfig, RESOLVED_LEXICON};
use stars_core::embedding::EmbeddingVector;
use stars_core::evaluation::{
    run_few_shot_sweep, run_prompting_ablation, run_ranking_comparison, ExperimentKind, ReportFormat,
};
use stars_core::extraction::ExtractionResult;
use stars_core::gateway::{read_transcript, write_transcript, TranscriptEntry};
use stars_core::pipeline::Pipeline;
use stars_core::ranking::{rank_companies, rank_technologies, Direction, RankedList};
use stars_core::{Error, Result};

// stdout may be a closed pipe (`stars ... | head`); that is not an error
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout(), $($arg)*);
    }};
}

macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "stars", version, about = "Map companies to technologies and evaluate the rankings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// single-prompt, cot or stars.
    #[arg(long)]
    strategy: Option<String>,
    /// Few-shot examples for the stars strategy.
    #[arg(long = "few-shot")]
    few_shot: Option<usize>,
    /// Comma-separated cutoffs, e.g. 3,5,7,10.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Use this mock script instead of the configured gateway.
    #[arg(long = "mock-script")]
    mock_script: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the extraction chain for every company.
    Extract {
        #[command(flatten)]
        common: Common,
    },
    /// Embed the lexicon and build company profiles.
    Embed {
        #[command(flatten)]
        common: Common,
    },
    /// Rank technologies for a company, or companies for a technology.
    Rank {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        query: String,
        #[arg(long, default_value = "com-tech")]
        direction: String,
    },
    /// Run an experiment and write its report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// ablation, few-shot-sweep or ranking-comparison.
        #[arg(long)]
        experiment: String,
        /// Few-shot counts for the sweep, e.g. 0,5.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("STARS_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = &common.strategy {
        cfg.pipeline.strategy = s.clone();
        if common.few_shot.is_none() && s != "stars" {
            cfg.pipeline.few_shot_count = 0;
        }
    }
    if let Some(n) = common.few_shot {
        cfg.pipeline.few_shot_count = n;
    }
    if let Some(k) = &common.k {
        cfg.pipeline.k_list = k.clone();
    }
    if let Some(script) = &common.mock_script {
        let abs = std::env::current_dir()
            .map_err(|e| Error::Config(format!("current dir: {e}")))?
            .join(script);
        cfg.gateway.kind = GatewayKind::Mock;
        cfg.gateway.mock_script = Some(abs);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Merge this run's gateway calls into `<run dir>/transcript.jsonl`,
/// sorted so the file does not depend on scheduling.
fn save_transcript(cfg: &RunConfig, p: &Pipeline) -> Result<()> {
    let path = cfg.run_dir().join("transcript.jsonl");
    let mut entries: BTreeMap<(String, String), TranscriptEntry> = BTreeMap::new();
    if path.exists() {
        for e in read_transcript(&path)? {
            entries.insert((e.request.tag.clone(), e.request.user_text.clone()), e);
        }
    }
    let fresh = p.gateway.transcript();
    if fresh.is_empty() && path.exists() {
        return Ok(());
    }
    for e in fresh {
        entries.insert((e.request.tag.clone(), e.request.user_text.clone()), e);
    }
    let all: Vec<_> = entries.into_values().collect();
    write_transcript(&all, path)
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        context: format!("creating {}", path.display()),
        source: e,
    })
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::Io {
        context: format!("writing {}", path.display()),
        source: e,
    })
}

/// Fill in missing definitions once and keep them with the run.
fn resolve_definitions(cfg: &RunConfig, p: &mut Pipeline) -> Result<()> {
    let resolved = p.resolve_definitions()?;
    if !resolved.is_empty() {
        tracing::info!(count = resolved.len(), "generated missing definitions");
        p.lexicon.write_technologies(cfg.run_dir().join(RESOLVED_LEXICON))?;
    }
    Ok(())
}

fn stored_results(cfg: &RunConfig, p: &Pipeline) -> Result<BTreeMap<String, ExtractionResult>> {
    let strategy = cfg.strategy()?;
    let results = p.stored_extractions(&strategy)?;
    if results.is_empty() {
        return Err(Error::Precondition(format!(
            "no extraction results for {} in {}; run `stars extract` first",
            strategy.key(),
            cfg.run_dir().display()
        )));
    }
    Ok(results)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Extract { common } => {
            let cfg = load_config(&common)?;
            let p = cfg.build_pipeline()?;
            let _span = tracing::info_span!("run", digest = %cfg.digest()).entered();
            ensure_dir(&cfg.run_dir())?;
            let strategy = cfg.strategy()?;
            let outcome = p.extract_all(&strategy);
            save_transcript(&cfg, &p)?;
            let run = outcome?;
            outln!(
                "extracted {} companies with {} ({} resumed, {} failed) into {}",
                run.results.len(),
                strategy.key(),
                run.resumed,
                run.failed.len(),
                cfg.run_dir().display()
            );
            for (id, err) in &run.failed {
                outln!("failed\t{id}\t{err}");
            }
            Ok(())
        }
        Command::Embed { common } => {
            let cfg = load_config(&common)?;
            let mut p = cfg.build_pipeline()?;
            let _span = tracing::info_span!("run", digest = %cfg.digest()).entered();
            let results = stored_results(&cfg, &p)?;
            resolve_definitions(&cfg, &mut p)?;
            save_transcript(&cfg, &p)?;
            let techs = p.technology_embeddings()?;
            let profiles = p.company_profiles(&results, &techs)?;
            let dir = cfg.run_dir().join("profiles");
            ensure_dir(&dir)?;
            let mut body = String::new();
            for (id, v) in &profiles {
                body.push_str(&serde_json::to_string(&ProfileRecord { company_id: id, vector: v })?);
                body.push('\n');
            }
            write_file(&dir.join(format!("{}.jsonl", cfg.strategy()?.key())), &body)?;
            outln!(
                "embedded {} technologies and {} company profiles with {} (cache hits {}, misses {})",
                techs.len(),
                profiles.len(),
                p.provider.id(),
                p.cache.hits(),
                p.cache.misses()
            );
            Ok(())
        }
        Command::Rank { mut common, query, direction } => {
            // --k is the list depth here, not the evaluation cutoffs
            let depth = common.k.take();
            let cfg = load_config(&common)?;
            let direction: Direction = direction.parse()?;
            let k = match depth.as_deref() {
                Some([k]) if *k > 0 => *k,
                Some(_) => return Err(Error::Config("rank takes a single --k ≥ 1".into())),
                None => *cfg.pipeline.k_list.iter().max().expect("validated k list"),
            };
            let mut p = cfg.build_pipeline()?;
            let _span = tracing::info_span!("run", digest = %cfg.digest()).entered();
            let known: Vec<String> = match direction {
                Direction::CompanyToTechnology => p.corpus.companies().iter().map(|c| c.id.clone()).collect(),
                Direction::TechnologyToCompany => p.lexicon.technologies().map(|t| t.id.clone()).collect(),
            };
            if !known.contains(&query) {
                return Err(Error::UnknownQuery {
                    suggestions: nearest(&query, &known),
                    id: query,
                });
            }
            let results = stored_results(&cfg, &p)?;
            resolve_definitions(&cfg, &mut p)?;
            save_transcript(&cfg, &p)?;
            let techs = p.technology_embeddings()?;
            let list = match direction {
                Direction::CompanyToTechnology => {
                    let r = results.get(&query).ok_or_else(|| {
                        Error::Precondition(format!("company {query} has no extraction result"))
                    })?;
                    let profile = p.company_profile(r, &techs)?;
                    rank_technologies(&query, &profile, &techs, k)?
                }
                Direction::TechnologyToCompany => {
                    let profiles = p.company_profiles(&results, &techs)?;
                    let v = techs.get(&query).ok_or_else(|| {
                        Error::Precondition(format!("technology {query} has no embedding"))
                    })?;
                    rank_companies(&query, v, &profiles, k)?
                }
            };
            print_ranking(&list);
            let dir = cfg.run_dir().join("rankings");
            ensure_dir(&dir)?;
            let body = format!("{}\n{}", RankedList::TSV_HEADER, list.to_tsv_rows());
            write_file(&dir.join(format!("{}.{}.tsv", query, direction.short())), &body)
        }
        Command::Evaluate { common, experiment, counts } => {
            let mut cfg = load_config(&common)?;
            if let Some(c) = counts {
                cfg.pipeline.sweep_counts = c;
                cfg.validate()?;
            }
            let kind: ExperimentKind = experiment.parse()?;
            let mut p = cfg.build_pipeline()?;
            let _span = tracing::info_span!("run", digest = %cfg.digest()).entered();
            ensure_dir(&cfg.run_dir())?;
            resolve_definitions(&cfg, &mut p)?;
            let k_list = cfg.pipeline.k_list.clone();
            let outcome = match kind {
                ExperimentKind::Ablation => run_prompting_ablation(&p, cfg.pipeline.few_shot_count, &k_list),
                ExperimentKind::FewShotSweep => run_few_shot_sweep(&p, &cfg.pipeline.sweep_counts, &k_list),
                ExperimentKind::RankingComparison => run_ranking_comparison(&p, &cfg.strategy()?, &k_list),
            };
            save_transcript(&cfg, &p)?;
            let report = outcome?;
            let dir = cfg.run_dir();
            for (format, ext) in [(ReportFormat::Csv, "csv"), (ReportFormat::Json, "json"), (ReportFormat::TableText, "txt")] {
                report.emit(format, dir.join(format!("{}.{ext}", kind.as_str())))?;
            }
            if let Some(plot) = report.to_plot_csv() {
                write_file(&dir.join(format!("{}.plot.csv", kind.as_str())), &plot)?;
            }
            out!("{}", report.to_table_text());
            outln!("reports written to {}", dir.display());
            Ok(())
        }
    }
}

#[derive(serde::Serialize)]
struct ProfileRecord<'a> {
    company_id: &'a str,
    vector: &'a EmbeddingVector,
}

fn print_ranking(list: &RankedList) {
    outln!("rank\titem_id\tscore");
    for (i, e) in list.entries.iter().enumerate() {
        outln!("{}\t{}\t{:.6}", i + 1, e.item_id, e.score);
    }
}

/// Up to three known ids closest to `query` by edit distance.
fn nearest(query: &str, known: &[String]) -> Vec<String> {
    let mut scored: Vec<(usize, &String)> = known.iter().map(|k| (strsim::levenshtein(query, k), k)).collect();
    scored.sort();
    scored.into_iter().take(3).map(|(_, k)| k.clone()).collect()
}
