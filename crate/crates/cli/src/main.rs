mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use synapse_core::config::{LlmConfig, PipelineConfig};
use synapse_core::corpus::{
    ingest_postings, ingest_resumes, load_resume, read_resumes_jsonl, write_postings_jsonl, write_resumes_jsonl,
    IngestReport, PostingFormat, Resume, ResumeFormat,
};
use synapse_core::eval::{Gain, Judgments};
use synapse_core::evolve::{run_evolution, TargetSet};
use synapse_core::pipeline::{build_index, load_corpus, MethodSelection, Recommender};
use synapse_core::vector_index::IndexMode;
use synapse_core::{Error, Result};

#[derive(Parser)]
#[command(name = "synapse", version, about = "Two-phase job recommendation, explanation and resume refinement")]
struct Cli {
    /// JSON config file; unspecified fields keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for evolution and the mock LLM.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    llm: Option<LlmChoice>,
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
    /// Keep corpus, resumes and index under this directory.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LlmChoice {
    Mock,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum GainChoice {
    Exponential,
    Linear,
}

#[derive(Subcommand)]
enum Command {
    /// Validate postings (and resumes) and store them normalized.
    Ingest {
        #[arg(long)]
        postings: PathBuf,
        /// Resume file or directory.
        #[arg(long)]
        resumes: Option<PathBuf>,
    },
    /// Embed the corpus and write the retrieval index.
    Index,
    /// Rank postings for a resume.
    Recommend {
        #[arg(long)]
        resume: PathBuf,
        /// Number of postings retrieved in Phase I.
        #[arg(long)]
        k: Option<usize>,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evidence-grounded explanation of one posting for a resume.
    Explain {
        #[arg(long)]
        resume: PathBuf,
        #[arg(long)]
        posting: String,
        /// Passages per source.
        #[arg(long)]
        m: Option<usize>,
    },
    /// Evolve a resume against target postings.
    Evolve {
        #[arg(long)]
        resume: PathBuf,
        /// Comma-separated posting ids, or `auto:N` for the top N recommendations.
        #[arg(long, default_value = "auto:5")]
        targets: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a fitness-vs-generation chart (SVG).
        #[arg(long)]
        plot: Option<PathBuf>,
        #[arg(long)]
        population: Option<usize>,
        #[arg(long)]
        generations: Option<usize>,
    },
    /// nDCG of every method against graded judgments.
    Eval {
        #[arg(long)]
        judgments: Option<PathBuf>,
        /// `all` or a comma list of phase1, embed2, soft_align, llm_pairwise, ensemble, sweep.
        #[arg(long, default_value = "all")]
        methods: String,
        #[arg(long, default_value = "10,20", value_delimiter = ',')]
        p: Vec<usize>,
        #[arg(long, value_enum, default_value = "exponential")]
        gain: GainChoice,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time each pipeline phase.
    Bench {
        #[arg(long, default_value_t = 10)]
        runs: usize,
        /// Resume to benchmark with; defaults to the first ingested resume.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration.
    Config,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_target(false).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind().exit_code() as u8)
        }
    }
}

fn effective_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(dir) = &cli.data_dir {
        config.paths.corpus = dir.join("postings.jsonl");
        config.paths.resumes = dir.join("resumes.jsonl");
        config.paths.index = dir.join("postings.idx");
    }
    match cli.llm {
        Some(LlmChoice::Mock) if !matches!(config.providers.llm, LlmConfig::Mock { .. }) => {
            config.providers.llm = LlmConfig::Mock { seed: 0 };
        }
        Some(LlmChoice::Remote) if !matches!(config.providers.llm, LlmConfig::Remote { .. }) => {
            config.providers.llm = LlmConfig::Remote { model: None };
        }
        _ => {}
    }
    if let Some(seed) = cli.seed {
        config.evolution.seed = seed;
        if let LlmConfig::Mock { seed: s } = &mut config.providers.llm {
            *s = seed;
        }
    }
    config.validate()?;
    Ok(config)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, contents).map_err(io_err(path))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Prints the JSON form or the human form of the same report.
fn emit<T: Serialize>(json: bool, value: &T, human: impl FnOnce() -> String) -> Result<()> {
    if json {
        print!("{}", to_json(value)?);
    } else {
        print!("{}", human());
    }
    Ok(())
}

fn read_resume(path: &Path) -> Result<Resume> {
    if !path.exists() {
        return Err(Error::MissingArtifact { what: "resume", path: path.display().to_string(), hint: "check the --resume path" });
    }
    Ok(load_resume(path)?)
}

#[derive(Serialize)]
struct IngestSummary {
    postings: IngestReport,
    resumes: Option<IngestReport>,
    corpus_path: PathBuf,
    resumes_path: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<()> {
    let config = effective_config(&cli)?;
    let json = cli.json;
    match cli.command {
        Command::Config => emit(json, &config, || to_json(&config).unwrap_or_default()),
        Command::Ingest { postings, resumes } => {
            let format = PostingFormat::from_path(&postings)?;
            let (accepted, report) = ingest_postings(&postings, format)?;
            if let Some(parent) = config.paths.corpus.parent() {
                std::fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            write_postings_jsonl(&config.paths.corpus, &accepted).map_err(io_err(&config.paths.corpus))?;
            let resume_report = match &resumes {
                Some(path) => {
                    let format = if path.is_dir() {
                        let has_json = std::fs::read_dir(path)
                            .map_err(io_err(path))?
                            .any(|e| e.is_ok_and(|e| e.path().extension().is_some_and(|x| x == "json")));
                        if has_json { ResumeFormat::Json } else { ResumeFormat::Txt }
                    } else {
                        ResumeFormat::from_path(path)?
                    };
                    let (list, report) = ingest_resumes(path, format)?;
                    write_resumes_jsonl(&config.paths.resumes, &list).map_err(io_err(&config.paths.resumes))?;
                    Some(report)
                }
                None => None,
            };
            let summary = IngestSummary {
                postings: report,
                resumes: resume_report,
                corpus_path: config.paths.corpus.clone(),
                resumes_path: resumes.as_ref().map(|_| config.paths.resumes.clone()),
            };
            emit(json, &summary, || {
                let mut s = format!("postings -> {}\n{}", summary.corpus_path.display(), summary.postings);
                if let (Some(r), Some(p)) = (&summary.resumes, &summary.resumes_path) {
                    s.push_str(&format!("resumes -> {}\n{}", p.display(), r));
                }
                s
            })
        }
        Command::Index => {
            let postings = load_corpus(&config.paths.corpus)?;
            let providers = config.providers()?;
            let index = build_index(&postings, providers.phase1.as_ref(), IndexMode::Exact)?;
            if let Some(parent) = config.paths.index.parent() {
                std::fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            index.save(&config.paths.index)?;
            let summary = serde_json::json!({
                "path": config.paths.index,
                "postings": index.len(),
                "dims": index.dims(),
            });
            emit(json, &summary, || {
                format!("indexed {} postings ({} dims) -> {}\n", index.len(), index.dims(), config.paths.index.display())
            })
        }
        Command::Recommend { resume, k, out } => {
            let mut config = config;
            if let Some(k) = k {
                config.retrieval_k = k;
            }
            let resume = read_resume(&resume)?;
            let providers = config.providers()?;
            let rec = Recommender::open(config, providers)?;
            let report = rec.recommend(&resume)?;
            if let Some(out) = out {
                write_file(&out, &to_json(&report)?)?;
            }
            emit(json, &report, || report.render())
        }
        Command::Explain { resume, posting, m } => {
            let mut config = config;
            if let Some(m) = m {
                config.explain_passages = m;
            }
            let resume = read_resume(&resume)?;
            let providers = config.providers()?;
            let rec = Recommender::open(config, providers)?;
            let explanation = rec.explain(&resume, &posting)?;
            emit(json, &explanation, || {
                format!("{}\n\n{}\ncitations: {:?}\n", explanation.posting_id, explanation.text, explanation.cited_passage_ids)
            })
        }
        Command::Evolve { resume, targets, out, plot, population, generations } => {
            let mut config = config;
            if let Some(n) = population {
                config.evolution.population = n;
            }
            if let Some(t) = generations {
                config.evolution.generations = t;
            }
            config.validate()?;
            let resume = read_resume(&resume)?;
            let providers = config.providers()?;
            let target_set = match targets.strip_prefix("auto:") {
                Some(n) => {
                    let n: usize = n.parse().map_err(|_| Error::Config(format!("bad target count in {targets:?}")))?;
                    Recommender::open(config.clone(), providers.clone())?.auto_targets(&resume, n)?
                }
                None => {
                    let corpus = load_corpus(&config.paths.corpus)?;
                    let mut chosen = Vec::new();
                    for id in targets.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                        let p = corpus.iter().find(|p| p.id == id).ok_or_else(|| Error::UnknownPosting(id.into()))?;
                        chosen.push(p.clone());
                    }
                    TargetSet::new(chosen)?
                }
            };
            let base = synapse_core::corpus::Fuse::fuse(&resume).text;
            let outcome = run_evolution(&base, &target_set, &config.evolution, config.fitness, &providers)?;
            let trace_json = to_json(&outcome.trace)?;
            if let Some(out) = &out {
                write_file(out, &trace_json)?;
            }
            if let Some(path) = &plot {
                write_file(path, &plot::fitness_svg(&outcome.trace))?;
            }
            emit(json, &outcome.trace, || {
                let mut s = String::from("gen  best      mean\n");
                for g in &outcome.trace.generations {
                    s.push_str(&format!("{:<4} {:.6}  {:.6}\n", g.gen, g.best, g.mean));
                }
                s.push_str(&format!(
                    "relative improvement: {:+.2}%\n\nbest resume:\n{}\n",
                    outcome.trace.relative_improvement * 100.0,
                    outcome.trace.best_resume
                ));
                s
            })
        }
        Command::Eval { judgments, methods, p, gain, out } => {
            let path = judgments.or_else(|| config.paths.judgments.clone()).ok_or_else(|| {
                Error::Config("no judgments file: pass --judgments or set paths.judgments".into())
            })?;
            let judgments = Judgments::load(&path)?;
            let selection = MethodSelection::parse(&methods)?;
            let resumes = load_resumes(&config.paths.resumes)?;
            let gain = match gain {
                GainChoice::Exponential => Gain::Exponential,
                GainChoice::Linear => Gain::Linear,
            };
            let providers = config.providers()?;
            let rec = Recommender::open(config, providers)?;
            let table = rec.evaluate(&resumes, &judgments, &p, gain, &selection)?;
            if let Some(out) = out {
                write_file(&out, &to_json(&table)?)?;
            }
            emit(json, &table, || table.render())
        }
        Command::Bench { runs, resume, out } => {
            let resume = match resume {
                Some(path) => read_resume(&path)?,
                None => load_resumes(&config.paths.resumes)?
                    .into_iter()
                    .next()
                    .ok_or_else(|| Error::Config("no ingested resumes to benchmark with".into()))?,
            };
            let providers = config.providers()?;
            let rec = Recommender::open(config, providers)?;
            let report = rec.bench(&resume, runs)?;
            if let Some(out) = out {
                write_file(&out, &to_json(&report)?)?;
            }
            emit(json, &report, || report.render())
        }
    }
}

fn load_resumes(path: &Path) -> Result<Vec<Resume>> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            what: "resumes",
            path: path.display().to_string(),
            hint: "run `synapse ingest --postings <file> --resumes <dir>` first",
        });
    }
    Ok(read_resumes_jsonl(path)?)
}
