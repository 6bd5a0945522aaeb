//! End-to-end recommender: retrieval, Phase-II reranking, fusion, and the
//! evaluation, explanation and benchmark entry points built on them.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::corpus::{ingest_postings, Fuse, FusedDocument, JobPosting, PostingFormat, Resume};
use crate::embedding::{embed_document, embed_documents, EmbeddingProvider};
use crate::ensemble::{fuse_rankings, EnsembleConfig};
use crate::error::{Error, Result};
use crate::eval::{self, evaluate_methods, BenchReport, EvalTable, Gain, Judgments, MethodRun, PhaseTimer};
use crate::evolve::TargetSet;
use crate::explain::{generate_explanation, retrieve_evidence, Explanation};
use crate::providers::Providers;
use crate::rerank::{llm_rank, score_embed2, score_soft_align, Candidate, Method, RankList};
use crate::vector_index::{IndexMode, RetrievalHit, VectorIndex};

/// Embeds every posting in the Phase-I space and builds an index.
pub fn build_index(postings: &[JobPosting], provider: &dyn EmbeddingProvider, mode: IndexMode) -> Result<VectorIndex> {
    let texts: Vec<String> = postings.iter().map(|p| p.fuse().text).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let vectors = embed_documents(&refs, provider)?;
    let entries = postings.iter().map(|p| p.id.clone()).zip(vectors).collect();
    Ok(VectorIndex::build(entries, mode)?)
}

/// Loads normalized postings, reporting a missing file as a missing artifact.
pub fn load_corpus(path: &Path) -> Result<Vec<JobPosting>> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            what: "posting corpus",
            path: path.display().to_string(),
            hint: "run `synapse ingest --postings <file>` first",
        });
    }
    let (postings, report) = ingest_postings(path, PostingFormat::Jsonl)?;
    if !report.rejected.is_empty() {
        tracing::warn!(rejected = report.rejected.len(), "corpus contains invalid postings");
    }
    Ok(postings)
}

pub fn load_index(path: &Path) -> Result<VectorIndex> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            what: "index",
            path: path.display().to_string(),
            hint: "run `synapse index` to build it",
        });
    }
    Ok(VectorIndex::load(path)?)
}

/// One row of the final ranking with each method's view of the posting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedPosting {
    pub rank: usize,
    pub posting_id: String,
    pub title: String,
    pub company: String,
    pub fused_score: f64,
    pub phase1_rank: usize,
    pub phase1_similarity: f64,
    pub embed2_rank: usize,
    pub soft_align_rank: usize,
    pub llm_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecommendReport {
    pub resume_id: String,
    pub k: usize,
    pub ensemble: EnsembleConfig,
    pub phase1: Vec<RetrievalHit>,
    pub phase2: Vec<RankList>,
    pub ranking: Vec<RankedPosting>,
}

impl RecommendReport {
    pub fn render(&self) -> String {
        let mut lines = vec![["#", "Posting", "Title", "Company", "Fused", "Phase-I", "Embed2", "SoftAlign", "LLM"]
            .map(String::from)
            .to_vec()];
        for r in &self.ranking {
            lines.push(vec![
                r.rank.to_string(),
                r.posting_id.clone(),
                r.title.clone(),
                r.company.clone(),
                format!("{:.4}", r.fused_score),
                format!("{} ({:.3})", r.phase1_rank, r.phase1_similarity),
                r.embed2_rank.to_string(),
                r.soft_align_rank.to_string(),
                r.llm_rank.to_string(),
            ]);
        }
        format!(
            "Recommendations for {} (K={}, {:?})\n{}",
            self.resume_id,
            self.k,
            self.ensemble.scheme,
            eval::render_columns(&lines)
        )
    }
}

/// Phase-II lists in fusion order: embed2, soft alignment, LLM pairwise.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTwo {
    pub phase1: RankList,
    pub lists: Vec<RankList>,
}

pub struct Recommender {
    config: PipelineConfig,
    providers: Providers,
    index: VectorIndex,
    postings: HashMap<String, JobPosting>,
}

impl Recommender {
    pub fn new(config: PipelineConfig, providers: Providers, index: VectorIndex, postings: Vec<JobPosting>) -> Result<Self> {
        config.validate()?;
        let postings: HashMap<String, JobPosting> = postings.into_iter().map(|p| (p.id.clone(), p)).collect();
        if let Some(missing) = index.ids().iter().find(|id| !postings.contains_key(*id)) {
            return Err(Error::Config(format!("index references posting {missing:?} absent from the corpus")));
        }
        Ok(Recommender { config, providers, index, postings })
    }

    /// Reads the index and corpus named by the config.
    pub fn open(config: PipelineConfig, providers: Providers) -> Result<Self> {
        let index = load_index(&config.paths.index)?;
        let postings = load_corpus(&config.paths.corpus)?;
        Recommender::new(config, providers, index, postings)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn providers(&self) -> &Providers {
        &self.providers
    }

    pub fn posting(&self, id: &str) -> Result<&JobPosting> {
        self.postings.get(id).ok_or_else(|| Error::UnknownPosting(id.to_string()))
    }

    pub fn retrieve(&self, resume: &FusedDocument) -> Result<Vec<RetrievalHit>> {
        let query = embed_document(&resume.text, self.providers.phase1.as_ref())?;
        Ok(self.index.search(&query, self.config.retrieval_k)?)
    }

    fn candidates(&self, hits: &[RetrievalHit]) -> Result<Vec<Candidate>> {
        hits.iter()
            .take(self.config.rerank_count())
            .map(|h| {
                Ok(Candidate { doc: self.posting(&h.posting_id)?.fuse(), phase1_similarity: h.similarity })
            })
            .collect()
    }

    pub fn rerank(&self, resume: &FusedDocument, hits: &[RetrievalHit]) -> Result<PhaseTwo> {
        let candidates = self.candidates(hits)?;
        let lists = vec![
            score_embed2(resume, &candidates, self.providers.phase2.as_ref())?,
            score_soft_align(resume, &candidates, self.providers.phase2.as_ref())?,
            llm_rank(resume, &candidates, &self.providers.gateway)?,
        ];
        Ok(PhaseTwo { phase1: RankList::phase1(&candidates), lists })
    }

    pub fn fuse(&self, phase2: &PhaseTwo, config: &EnsembleConfig) -> Result<RankList> {
        Ok(fuse_rankings(&phase2.lists, &phase2.phase1, config)?)
    }

    pub fn recommend(&self, resume: &Resume) -> Result<RecommendReport> {
        let doc = resume.fuse();
        let hits = self.retrieve(&doc)?;
        let phase2 = self.rerank(&doc, &hits)?;
        let fused = self.fuse(&phase2, &self.config.ensemble)?;
        let rank_in = |list: &RankList, id: &str| list.rank_of(id).unwrap_or(0);
        let ranking = fused
            .entries
            .iter()
            .map(|e| {
                let posting = self.posting(&e.posting_id)?;
                let hit = hits.iter().find(|h| h.posting_id == e.posting_id).expect("fused ids come from hits");
                Ok(RankedPosting {
                    rank: e.rank,
                    posting_id: e.posting_id.clone(),
                    title: posting.title.clone(),
                    company: posting.company.clone(),
                    fused_score: e.raw_score,
                    phase1_rank: hit.rank,
                    phase1_similarity: hit.similarity,
                    embed2_rank: rank_in(&phase2.lists[0], &e.posting_id),
                    soft_align_rank: rank_in(&phase2.lists[1], &e.posting_id),
                    llm_rank: rank_in(&phase2.lists[2], &e.posting_id),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RecommendReport {
            resume_id: resume.id.clone(),
            k: self.config.retrieval_k,
            ensemble: self.config.ensemble.clone(),
            phase1: hits,
            phase2: phase2.lists,
            ranking,
        })
    }

    pub fn explain(&self, resume: &Resume, posting_id: &str) -> Result<Explanation> {
        let posting = self.posting(posting_id)?.fuse();
        let evidence = retrieve_evidence(&resume.fuse(), &posting, self.config.explain_passages, self.providers.phase1.as_ref())?;
        Ok(generate_explanation(&evidence, &self.providers.gateway)?)
    }

    /// The top `n` postings of the fused ranking as an evolution target set.
    pub fn auto_targets(&self, resume: &Resume, n: usize) -> Result<TargetSet> {
        let report = self.recommend(resume)?;
        self.targets(report.ranking.iter().take(n).map(|r| r.posting_id.as_str()))
    }

    pub fn targets<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<TargetSet> {
        let postings = ids.into_iter().map(|id| self.posting(id).cloned()).collect::<Result<Vec<_>>>()?;
        Ok(TargetSet::new(postings)?)
    }

    /// Rankings of every evaluated method for one resume, baseline first.
    pub fn method_rankings(&self, resume: &Resume, selection: &MethodSelection) -> Vec<(String, Result<Vec<String>, String>)> {
        let doc = resume.fuse();
        let hits = match self.retrieve(&doc) {
            Ok(h) => h,
            Err(e) => return vec![(PHASE1_LABEL.to_string(), Err(e.to_string()))],
        };
        let mut out = vec![(PHASE1_LABEL.to_string(), Ok(hits.iter().map(|h| h.posting_id.clone()).collect()))];
        let wanted = selection.phase2_methods();
        let configs = selection.ensembles(&self.config.ensemble);
        if wanted.is_empty() && configs.is_empty() {
            return out;
        }
        let ids = |l: &RankList| l.ids().into_iter().map(String::from).collect::<Vec<_>>();
        match self.rerank(&doc, &hits) {
            Ok(p2) => {
                for list in p2.lists.iter().filter(|l| wanted.contains(&l.method)) {
                    out.push((method_label(list.method).to_string(), Ok(ids(list))));
                }
                for (label, config) in configs {
                    out.push((label, self.fuse(&p2, &config).map(|l| ids(&l)).map_err(|e| e.to_string())));
                }
            }
            Err(e) => {
                for m in wanted {
                    out.push((method_label(m).to_string(), Err(e.to_string())));
                }
                for (label, _) in configs {
                    out.push((label, Err(e.to_string())));
                }
            }
        }
        out
    }

    /// nDCG table over the judged resumes. Resumes are scored in parallel.
    pub fn evaluate(
        &self,
        resumes: &[Resume],
        judgments: &Judgments,
        cutoffs: &[usize],
        gain: Gain,
        selection: &MethodSelection,
    ) -> Result<EvalTable> {
        judgments.check_resumes(resumes.iter().map(|r| r.id.as_str()))?;
        let judged: Vec<&Resume> = resumes.iter().filter(|r| judgments.grades(&r.id).is_some()).collect();
        let per_resume: Vec<(String, Vec<(String, Result<Vec<String>, String>)>)> = judged
            .par_iter()
            .map(|r| (r.id.clone(), self.method_rankings(r, selection)))
            .collect();
        let mut order: Vec<String> = Vec::new();
        let mut runs: BTreeMap<String, Result<BTreeMap<String, Vec<String>>, String>> = BTreeMap::new();
        for (resume_id, methods) in per_resume {
            for (label, ranking) in methods {
                if !order.contains(&label) {
                    order.push(label.clone());
                }
                let slot = runs.entry(label).or_insert_with(|| Ok(BTreeMap::new()));
                match (slot.as_mut(), ranking) {
                    (Ok(map), Ok(ids)) => {
                        map.insert(resume_id.clone(), ids);
                    }
                    (Ok(_), Err(e)) => *slot = Err(format!("{resume_id}: {e}")),
                    (Err(_), _) => {}
                }
            }
        }
        let runs: Vec<MethodRun> = order
            .into_iter()
            .map(|m| {
                let rankings = runs.remove(&m).expect("label recorded");
                MethodRun { method: m, rankings }
            })
            .collect();
        Ok(evaluate_methods(&runs, judgments, cutoffs, gain)?)
    }

    /// Times each pipeline phase over `runs` sequential repetitions.
    pub fn bench(&self, resume: &Resume, runs: usize) -> Result<BenchReport> {
        let doc = resume.fuse();
        eval::bench(runs, |timer: &mut PhaseTimer| -> Result<()> {
            let query = timer.time(eval::PHASES[0], || embed_document(&doc.text, self.providers.phase1.as_ref()))?;
            let hits = timer.time(eval::PHASES[1], || self.index.search(&query, self.config.retrieval_k))?;
            let top = timer.time(eval::PHASES[2], || -> Result<String> {
                let p2 = self.rerank(&doc, &hits)?;
                Ok(self.fuse(&p2, &self.config.ensemble)?.entries[0].posting_id.clone())
            })?;
            timer.time(eval::PHASES[3], || self.explain(resume, &top))?;
            let start = Instant::now();
            let report = self.recommend(resume)?;
            self.explain(resume, &report.ranking[0].posting_id)?;
            timer.record(eval::PHASES[4], start.elapsed());
            Ok(())
        })
    }
}

pub const PHASE1_LABEL: &str = "Phase-I";

pub fn method_label(method: Method) -> &'static str {
    match method {
        Method::Phase1 => PHASE1_LABEL,
        Method::Embed2 => "Embed2 (Phase-II space)",
        Method::SoftAlign => "Soft Alignment",
        Method::LlmPairwise => "LLM Pairwise",
        Method::Ensemble => "Ensemble",
    }
}

/// Which methods an evaluation covers. Phase-I is always included as the
/// baseline row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodSelection {
    pub embed2: bool,
    pub soft_align: bool,
    pub llm_pairwise: bool,
    /// The configured ensemble.
    pub ensemble: bool,
    /// Every scheme of the standard sweep.
    pub sweep: bool,
}

impl MethodSelection {
    pub fn all() -> Self {
        MethodSelection { embed2: true, soft_align: true, llm_pairwise: true, ensemble: false, sweep: true }
    }

    /// Parses `all` or a comma list of `phase1`, `embed2`, `soft_align`,
    /// `llm_pairwise`, `ensemble`, `sweep`.
    pub fn parse(list: &str) -> Result<Self> {
        if list.trim() == "all" {
            return Ok(MethodSelection::all());
        }
        let mut s = MethodSelection { embed2: false, soft_align: false, llm_pairwise: false, ensemble: false, sweep: false };
        for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "phase1" => {}
                "embed2" => s.embed2 = true,
                "soft_align" => s.soft_align = true,
                "llm_pairwise" => s.llm_pairwise = true,
                "ensemble" => s.ensemble = true,
                "sweep" => s.sweep = true,
                other => return Err(Error::Config(format!("unknown method {other:?}"))),
            }
        }
        Ok(s)
    }

    fn phase2_methods(&self) -> Vec<Method> {
        [(self.embed2, Method::Embed2), (self.soft_align, Method::SoftAlign), (self.llm_pairwise, Method::LlmPairwise)]
            .into_iter()
            .filter_map(|(on, m)| on.then_some(m))
            .collect()
    }

    fn ensembles(&self, configured: &EnsembleConfig) -> Vec<(String, EnsembleConfig)> {
        let mut out = Vec::new();
        if self.ensemble {
            out.push(("Ensemble (configured)".to_string(), configured.clone()));
        }
        if self.sweep {
            out.extend(EnsembleConfig::sweep());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashingEmbedder;
    use crate::eval::RelevanceJudgment;

    fn posting(id: &str, title: &str, description: &str) -> JobPosting {
        JobPosting {
            id: id.into(),
            title: title.into(),
            company: "Acme".into(),
            location: None,
            industry: None,
            skills: vec![],
            description: description.into(),
        }
    }

    fn corpus() -> Vec<JobPosting> {
        vec![
            posting("p1", "Chef", "Cook seasonal menus in a busy kitchen."),
            posting("p2", "Rust Engineer", "Build distributed storage in Rust with async networking."),
            posting("p3", "Accountant", "Prepare quarterly tax filings and audits."),
        ]
    }

    fn recommender(config: PipelineConfig) -> Recommender {
        let providers = Providers::offline(0);
        let index = build_index(&corpus(), providers.phase1.as_ref(), IndexMode::Exact).unwrap();
        Recommender::new(config, providers, index, corpus()).unwrap()
    }

    #[test]
    fn self_match_ranks_first_and_k_exceeds_corpus() {
        let rec = recommender(PipelineConfig::default());
        let text = corpus()[1].fuse().text;
        let resume = Resume::from_text("r", &text);
        let report = rec.recommend(&resume).unwrap();
        assert_eq!(report.ranking.len(), 3);
        assert_eq!(report.phase1.len(), 3);
        assert_eq!(report.ranking[0].posting_id, "p2");
        assert_eq!(report.phase1[0].posting_id, "p2");
        assert!(report.render().contains("Rust Engineer"));
    }

    #[test]
    fn unknown_posting_and_missing_artifacts() {
        let rec = recommender(PipelineConfig::default());
        let resume = Resume::from_text("r", "Rust developer");
        assert!(matches!(rec.explain(&resume, "nope"), Err(Error::UnknownPosting(_))));
        let mut config = PipelineConfig::default();
        config.paths.index = "/nonexistent/x.idx".into();
        let err = Recommender::open(config, Providers::offline(0)).err().unwrap();
        assert_eq!(err.kind().exit_code(), 2);
    }

    #[test]
    fn evaluation_rows_and_baseline() {
        let rec = recommender(PipelineConfig::default());
        let resume = Resume::from_text("r", "I build Rust storage systems with async networking.");
        let judgments = Judgments::from_records([RelevanceJudgment {
            resume_id: "r".into(),
            posting_id: "p2".into(),
            grade: 2,
        }]);
        let table = rec.evaluate(&[resume], &judgments, &[10, 20], Gain::Exponential, &MethodSelection::all()).unwrap();
        assert_eq!(table.rows.len(), 1 + 3 + 7);
        assert_eq!(table.rows[0].method, PHASE1_LABEL);
        assert_eq!(table.rows[0].ndcg[0], 1.0);
        assert!(table.rows.iter().all(|r| r.error.is_none()));
        let only = MethodSelection::parse("phase1").unwrap();
        let resume = Resume::from_text("r", "Rust");
        assert_eq!(rec.evaluate(&[resume], &judgments, &[10], Gain::Exponential, &only).unwrap().rows.len(), 1);
        assert!(MethodSelection::parse("bogus").is_err());
    }

    #[test]
    fn bench_reports_all_phases() {
        let rec = recommender(PipelineConfig::default());
        let resume = Resume::from_text("r", "Cooking seasonal menus.");
        let report = rec.bench(&resume, 3).unwrap();
        assert_eq!(report.phases.len(), 5);
        assert!(report.phases.iter().all(|p| p.runs == 3 && p.mean.is_finite() && p.std >= 0.0));
    }

    #[test]
    fn index_built_with_other_dims_fails_at_query() {
        let providers = Providers::offline(0);
        let index = build_index(&corpus(), &HashingEmbedder::new(64), IndexMode::Exact).unwrap();
        let rec = Recommender::new(PipelineConfig::default(), providers, index, corpus()).unwrap();
        assert!(rec.recommend(&Resume::from_text("r", "Rust")).is_err());
    }
}
