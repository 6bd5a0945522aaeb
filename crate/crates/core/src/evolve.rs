//! LLM-guided evolutionary resume refinement.
//!
//! A population of resume variants is evolved against a set of target
//! postings. Fitness is a weighted sum of three components, each mapped into
//! [0, 1] and averaged over the targets:
//!
//! * Phase-I embedding similarity, `(cos + 1) / 2`;
//! * token soft alignment in the Phase-II space, `(s + 1) / 2`;
//! * LLM pairwise win rate against the original resume (win 1, tie 0.5, loss 0).
//!
//! The LLM reference is the fixed original resume, so the fitness function is
//! stationary and elitism makes best-of-generation fitness non-decreasing.
//!
//! Offspring are produced by adaptive mutation (light / medium / aggressive
//! tiers, aggressive becoming likelier in later generations) or by LLM
//! crossover, with parents drawn by tournament. Every slot draws from its own
//! RNG stream derived from (seed, generation, slot), so results do not depend
//! on evaluation order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Fuse, JobPosting};
use crate::embedding::{cosine, embed_document, embed_documents, embed_tokens, EmbeddingVector, TokenEmbeddings};
use crate::llm::{render, Gateway, LlmRequest, Purpose};
use crate::providers::Providers;
use crate::rerank::{ask_pairwise, score_soft_alignment, PairwiseChoice, RerankError};
use crate::text;

const LIGHT_TEMPERATURE: f64 = 0.3;
const AGGRESSIVE_TEMPERATURE: f64 = 0.9;
const CROSSOVER_TEMPERATURE: f64 = 0.7;
const REWRITE_MAX_TOKENS: u32 = 1024;
const MAX_INJECTED_KEYWORDS: usize = 5;
const KEYWORD_HINTS: usize = 10;

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("invalid evolution config: {0}")]
    Config(String),
    #[error("empty resume")]
    EmptyResume,
    #[error("target set must be non-empty with unique ids")]
    BadTargets,
    #[error("individual {0} has no fitness")]
    Unevaluated(u64),
    #[error("provider failure during evolution: {source}")]
    Provider {
        #[source]
        source: RerankError,
        /// Generations completed before the failure.
        partial: Option<Box<FitnessTrace>>,
    },
}

impl EvolveError {
    pub fn is_provider_failure(&self) -> bool {
        matches!(self, EvolveError::Provider { .. })
    }
}

impl From<RerankError> for EvolveError {
    fn from(source: RerankError) -> Self {
        EvolveError::Provider { source, partial: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessWeights {
    pub w_embed: f64,
    pub w_softalign: f64,
    pub w_llm: f64,
}

impl Default for FitnessWeights {
    fn default() -> Self {
        FitnessWeights { w_embed: 0.7, w_softalign: 0.15, w_llm: 0.15 }
    }
}

impl FitnessWeights {
    pub fn validate(&self) -> Result<(), EvolveError> {
        let ws = [self.w_embed, self.w_softalign, self.w_llm];
        let sum: f64 = ws.iter().sum();
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(EvolveError::Config(format!("fitness weights must be >= 0 and sum to 1, got {ws:?}")));
        }
        Ok(())
    }

    pub fn combine(&self, c: &FitnessComponents) -> f64 {
        (self.w_embed * c.embed + self.w_softalign * c.soft_align + self.w_llm * c.llm).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionConfig {
    pub population: usize,
    pub generations: usize,
    pub elitism: usize,
    /// Probability that an offspring is a mutant rather than a crossover child.
    pub mutation_rate: f64,
    pub tournament_size: usize,
    pub aggressive_prob_start: f64,
    pub aggressive_prob_end: f64,
    /// Token-masking fraction of the light-tier fallback.
    pub mask_fraction: f64,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            population: 8,
            generations: 5,
            elitism: 2,
            mutation_rate: 0.7,
            tournament_size: 3,
            aggressive_prob_start: 0.2,
            aggressive_prob_end: 0.8,
            mask_fraction: 0.1,
            seed: 0,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EvolveError> {
        let fail = |m: String| Err(EvolveError::Config(m));
        if self.population == 0 {
            return fail("population must be at least 1".into());
        }
        if self.elitism >= self.population {
            return fail(format!("elitism {} must be below population {}", self.elitism, self.population));
        }
        if self.tournament_size == 0 || self.tournament_size > self.population {
            return fail(format!("tournament size {} must be in 1..={}", self.tournament_size, self.population));
        }
        for (name, p) in [
            ("mutation_rate", self.mutation_rate),
            ("aggressive_prob_start", self.aggressive_prob_start),
            ("aggressive_prob_end", self.aggressive_prob_end),
            ("mask_fraction", self.mask_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} {p} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Aggressive-tier probability at generation index `t` in `0..T`, linear
    /// from start to end (T = 1 uses the end value).
    pub fn aggressive_probability(&self, t: usize) -> f64 {
        if self.generations <= 1 {
            return self.aggressive_prob_end;
        }
        let frac = t.min(self.generations - 1) as f64 / (self.generations - 1) as f64;
        self.aggressive_prob_start + (self.aggressive_prob_end - self.aggressive_prob_start) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Lineage {
    Base,
    Mutant { parent: u64 },
    Child { parents: [u64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: u64,
    pub resume_text: String,
    pub fitness: Option<f64>,
    pub lineage: Lineage,
    pub generation_born: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    postings: Vec<JobPosting>,
}

impl TargetSet {
    pub fn new(postings: Vec<JobPosting>) -> Result<Self, EvolveError> {
        let ids: HashSet<&str> = postings.iter().map(|p| p.id.as_str()).collect();
        if postings.is_empty() || ids.len() != postings.len() {
            return Err(EvolveError::BadTargets);
        }
        Ok(TargetSet { postings })
    }

    pub fn postings(&self) -> &[JobPosting] {
        &self.postings
    }

    /// Content tokens of the targets ranked by how many targets contain them,
    /// then alphabetically. Stopwords and pure numbers are skipped.
    pub fn ranked_keywords(&self) -> Vec<String> {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for p in &self.postings {
            for token in text::token_set(&p.fuse().text) {
                if token.len() > 2 && !text::is_stopword(&token) && !token.chars().all(|c| c.is_ascii_digit()) {
                    *df.entry(token).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = df.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.into_iter().map(|(t, _)| t).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitnessComponents {
    pub embed: f64,
    pub soft_align: f64,
    pub llm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub gen: usize,
    pub best: f64,
    pub mean: f64,
    pub fitnesses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessTrace {
    pub generations: Vec<GenerationRecord>,
    pub relative_improvement: f64,
    pub best_resume: String,
}

impl FitnessTrace {
    fn from_records(generations: Vec<GenerationRecord>, best_resume: String) -> Self {
        let first = generations.first().map_or(0.0, |g| g.best);
        let last = generations.last().map_or(0.0, |g| g.best);
        let relative_improvement = if first > 0.0 { (last - first) / first } else { 0.0 };
        FitnessTrace { generations, relative_improvement, best_resume }
    }

    pub fn is_monotone(&self) -> bool {
        self.generations.windows(2).all(|w| w[1].best >= w[0].best)
    }
}

/// Scores resume texts against a fixed target set and base resume, caching by
/// text.
pub struct FitnessEvaluator<'a> {
    providers: &'a Providers,
    weights: FitnessWeights,
    base_text: String,
    target_texts: Vec<String>,
    target_vectors: Vec<EmbeddingVector>,
    target_tokens: Vec<TokenEmbeddings>,
    cache: Mutex<HashMap<String, f64>>,
}

impl<'a> FitnessEvaluator<'a> {
    pub fn new(
        base_text: &str,
        targets: &TargetSet,
        weights: FitnessWeights,
        providers: &'a Providers,
    ) -> Result<Self, EvolveError> {
        weights.validate()?;
        let target_texts: Vec<String> = targets.postings.iter().map(|p| p.fuse().text).collect();
        let refs: Vec<&str> = target_texts.iter().map(String::as_str).collect();
        let target_vectors = embed_documents(&refs, providers.phase1.as_ref()).map_err(RerankError::from)?;
        let target_tokens = target_texts
            .iter()
            .map(|t| embed_tokens(t, providers.phase2.as_ref()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(RerankError::from)?;
        Ok(FitnessEvaluator {
            providers,
            weights,
            base_text: base_text.to_string(),
            target_texts,
            target_vectors,
            target_tokens,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn components(&self, resume_text: &str) -> Result<FitnessComponents, RerankError> {
        let n = self.target_texts.len() as f64;
        let vector = embed_document(resume_text, self.providers.phase1.as_ref())?;
        let tokens = embed_tokens(resume_text, self.providers.phase2.as_ref())?;
        let mut embed = 0.0;
        let mut soft_align = 0.0;
        for (v, t) in self.target_vectors.iter().zip(&self.target_tokens) {
            embed += ((cosine(&vector, v)? + 1.0) / 2.0).clamp(0.0, 1.0);
            soft_align += ((score_soft_alignment(&tokens, t)? + 1.0) / 2.0).clamp(0.0, 1.0);
        }
        let mut llm = 0.0;
        for (j, posting) in self.target_texts.iter().enumerate() {
            llm += self.win_against_base(resume_text, posting, j)?;
        }
        Ok(FitnessComponents { embed: embed / n, soft_align: soft_align / n, llm: llm / n })
    }

    /// 1 for a win over the original resume, 0.5 tie, 0 loss. Comparing the
    /// base with itself is a tie by definition. The candidate alternates
    /// between the A and B slots across targets.
    fn win_against_base(&self, resume_text: &str, posting: &str, j: usize) -> Result<f64, RerankError> {
        if resume_text == self.base_text {
            return Ok(0.5);
        }
        let candidate_first = j % 2 == 0;
        let (a, b) = if candidate_first { (resume_text, self.base_text.as_str()) } else { (self.base_text.as_str(), resume_text) };
        let prompt = render(
            &self.providers.gateway.prompts().compare_resumes,
            &[("posting", posting), ("resume_a", a), ("resume_b", b)],
        );
        let choice = ask_pairwise(&self.providers.gateway, prompt)?;
        let choice = if candidate_first { choice } else { choice.swapped() };
        Ok(match choice {
            PairwiseChoice::A => 1.0,
            PairwiseChoice::Tie => 0.5,
            PairwiseChoice::B => 0.0,
        })
    }

    pub fn fitness(&self, resume_text: &str) -> Result<f64, RerankError> {
        if let Some(&f) = self.cache.lock().unwrap_or_else(|e| e.into_inner()).get(resume_text) {
            return Ok(f);
        }
        let f = self.weights.combine(&self.components(resume_text)?);
        self.cache
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(resume_text.to_string())
            .or_insert(f);
        Ok(f)
    }

    pub fn cached_len(&self) -> usize {
        self.cache.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    /// Fills in missing fitness values; each distinct text is scored once.
    fn evaluate(&self, population: &mut [Individual]) -> Result<(), RerankError> {
        let mut pending: Vec<String> = population
            .iter()
            .filter(|i| i.fitness.is_none())
            .map(|i| i.resume_text.clone())
            .collect();
        pending.sort_unstable();
        pending.dedup();
        let scored: HashMap<String, f64> = pending
            .into_par_iter()
            .map(|t| self.fitness(&t).map(|f| (t, f)))
            .collect::<Result<_, _>>()?;
        for ind in population.iter_mut().filter(|i| i.fitness.is_none()) {
            ind.fitness = Some(scored[ind.resume_text.as_str()]);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Light,
    Medium,
    Aggressive,
}

/// Aggressive with probability `p(t)`; the remainder is split evenly
/// between light and medium.
pub fn choose_tier<R: Rng + ?Sized>(t: usize, config: &EvolutionConfig, rng: &mut R) -> Tier {
    if rng.gen_bool(config.aggressive_probability(t)) {
        Tier::Aggressive
    } else if rng.gen_bool(0.5) {
        Tier::Light
    } else {
        Tier::Medium
    }
}

/// Keywords from the ranked target list absent from `resume_text`.
pub fn missing_keywords(ranked: &[String], resume_text: &str, limit: usize) -> Vec<String> {
    let present = text::token_set(resume_text);
    ranked.iter().filter(|k| !present.contains(*k)).take(limit).cloned().collect()
}

fn usable(candidate: String, original: &str) -> String {
    let canonical = text::canonicalize(&candidate);
    if text::tokenize(&canonical).is_empty() {
        original.to_string()
    } else {
        canonical
    }
}

/// Applies one tier of mutation. LLM failures fall back to the tier's
/// deterministic text operator.
pub fn mutate_with_tier<R: Rng + ?Sized>(
    resume_text: &str,
    tier: Tier,
    config: &EvolutionConfig,
    gateway: &Gateway,
    ranked_keywords: &[String],
    rng: &mut R,
) -> String {
    let out = match tier {
        Tier::Light => {
            let prompt = render(&gateway.prompts().mutate_light, &[("resume", resume_text)]);
            let request = LlmRequest::new(Purpose::Mutate, prompt, LIGHT_TEMPERATURE, REWRITE_MAX_TOKENS)
                .with_seed(rng.gen());
            match gateway.complete(&request) {
                Ok(r) => r.text,
                Err(e) => {
                    tracing::warn!(error = %e, "light mutation failed, masking tokens instead");
                    text::mask_tokens(resume_text, config.mask_fraction, rng)
                }
            }
        }
        Tier::Medium => {
            if rng.gen_bool(0.5) {
                text::shuffle_sentences(resume_text, rng)
            } else {
                text::drop_sentence(resume_text, rng)
            }
        }
        Tier::Aggressive => {
            let keywords = missing_keywords(ranked_keywords, resume_text, KEYWORD_HINTS);
            let prompt = render(
                &gateway.prompts().mutate_aggressive,
                &[("resume", resume_text), ("keywords", &keywords.join(", "))],
            );
            let request = LlmRequest::new(Purpose::Mutate, prompt, AGGRESSIVE_TEMPERATURE, REWRITE_MAX_TOKENS)
                .with_seed(rng.gen());
            match gateway.complete(&request) {
                Ok(r) => r.text,
                Err(e) => {
                    tracing::warn!(error = %e, "aggressive mutation failed, using span deletion");
                    let fraction = rng.gen_range(0.10..=0.20);
                    let cut = text::delete_span(resume_text, fraction, rng);
                    text::inject_keywords(&cut, &keywords, MAX_INJECTED_KEYWORDS)
                }
            }
        }
    };
    usable(out, resume_text)
}

/// Adaptive mutation at generation index `generation` (0-based).
pub fn mutate<R: Rng + ?Sized>(
    resume_text: &str,
    generation: usize,
    config: &EvolutionConfig,
    gateway: &Gateway,
    ranked_keywords: &[String],
    rng: &mut R,
) -> String {
    let tier = choose_tier(generation, config, rng);
    mutate_with_tier(resume_text, tier, config, gateway, ranked_keywords, rng)
}

/// LLM merge of two parents; falls back to sentence interleaving.
pub fn crossover<R: Rng + ?Sized>(parent_a: &str, parent_b: &str, gateway: &Gateway, rng: &mut R) -> String {
    let prompt = render(&gateway.prompts().crossover, &[("parent_a", parent_a), ("parent_b", parent_b)]);
    let request =
        LlmRequest::new(Purpose::Crossover, prompt, CROSSOVER_TEMPERATURE, REWRITE_MAX_TOKENS).with_seed(rng.gen());
    let merged = match gateway.complete(&request) {
        Ok(r) => r.text,
        Err(e) => {
            tracing::warn!(error = %e, "crossover failed, interleaving parents");
            text::interleave_dedup(parent_a, parent_b)
        }
    };
    usable(merged, parent_a)
}

/// RNG stream for one (generation, slot) cell.
pub fn slot_rng(seed: u64, generation: usize, slot: usize) -> ChaCha8Rng {
    let mut z = seed ^ (generation as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (slot as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn fitness_of(ind: &Individual) -> Result<f64, EvolveError> {
    ind.fitness.ok_or(EvolveError::Unevaluated(ind.id))
}

/// Fitness descending, then earlier generation, then lower id.
fn rank_order(population: &[Individual]) -> Result<Vec<usize>, EvolveError> {
    let fit: Vec<f64> = population.iter().map(fitness_of).collect::<Result<_, _>>()?;
    let mut order: Vec<usize> = (0..population.len()).collect();
    order.sort_by(|&a, &b| {
        fit[b]
            .total_cmp(&fit[a])
            .then(population[a].generation_born.cmp(&population[b].generation_born))
            .then(population[a].id.cmp(&population[b].id))
    });
    Ok(order)
}

/// Samples `size` members with replacement and returns the index of the best.
pub fn tournament<R: Rng + ?Sized>(population: &[Individual], size: usize, rng: &mut R) -> usize {
    let better = |a: usize, b: usize| -> usize {
        let (x, y) = (&population[a], &population[b]);
        let key = |i: &Individual| (i.fitness.unwrap_or(f64::NEG_INFINITY), std::cmp::Reverse(i.generation_born), std::cmp::Reverse(i.id));
        match key(x).0.total_cmp(&key(y).0).then(key(x).1.cmp(&key(y).1)).then(key(x).2.cmp(&key(y).2)) {
            std::cmp::Ordering::Less => b,
            _ => a,
        }
    };
    let mut best = rng.gen_range(0..population.len());
    for _ in 1..size {
        best = better(best, rng.gen_range(0..population.len()));
    }
    best
}

/// Everything offspring creation needs besides the population.
pub struct Breeder<'a> {
    pub config: &'a EvolutionConfig,
    pub gateway: &'a Gateway,
    pub ranked_keywords: &'a [String],
}

impl Breeder<'_> {
    /// Elites (top-k) carried over unchanged; the remaining slots are filled
    /// by mutants or crossover children of tournament winners. `round` is the
    /// 1-based selection round and new ids start at `next_id`.
    pub fn select_next_generation(
        &self,
        population: &[Individual],
        round: usize,
        next_id: u64,
    ) -> Result<Vec<Individual>, EvolveError> {
        let config = self.config;
        config.validate()?;
        if population.len() != config.population {
            return Err(EvolveError::Config(format!(
                "population has {} members, config says {}",
                population.len(),
                config.population
            )));
        }
        let order = rank_order(population)?;
        let mut next: Vec<Individual> = order[..config.elitism].iter().map(|&i| population[i].clone()).collect();
        let schedule_t = round.saturating_sub(1);
        let offspring: Vec<Individual> = (config.elitism..config.population)
            .into_par_iter()
            .map(|slot| {
                let mut rng = slot_rng(config.seed, round, slot);
                let first = &population[tournament(population, config.tournament_size, &mut rng)];
                let (text, lineage) = if rng.gen_bool(config.mutation_rate) {
                    let t = mutate(&first.resume_text, schedule_t, config, self.gateway, self.ranked_keywords, &mut rng);
                    (t, Lineage::Mutant { parent: first.id })
                } else {
                    let second = &population[tournament(population, config.tournament_size, &mut rng)];
                    let t = crossover(&first.resume_text, &second.resume_text, self.gateway, &mut rng);
                    (t, Lineage::Child { parents: [first.id, second.id] })
                };
                Individual {
                    id: next_id + (slot - config.elitism) as u64,
                    resume_text: text,
                    fitness: None,
                    lineage,
                    generation_born: round,
                }
            })
            .collect();
        next.extend(offspring);
        Ok(next)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionOutcome {
    pub best: Individual,
    pub trace: FitnessTrace,
    pub final_population: Vec<Individual>,
}

fn record(gen: usize, population: &[Individual]) -> GenerationRecord {
    let fitnesses: Vec<f64> = population.iter().map(|i| i.fitness.unwrap_or(0.0)).collect();
    let best = fitnesses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = fitnesses.iter().sum::<f64>() / fitnesses.len() as f64;
    GenerationRecord { gen, best, mean, fitnesses }
}

fn best_of(population: &[Individual]) -> Result<Individual, EvolveError> {
    Ok(population[rank_order(population)?[0]].clone())
}

/// Runs the full loop: the initial population is the (canonicalized) base
/// resume plus N-1 mutants of it, followed by T selection rounds.
pub fn run_evolution(
    base_resume: &str,
    targets: &TargetSet,
    config: &EvolutionConfig,
    weights: FitnessWeights,
    providers: &Providers,
) -> Result<EvolutionOutcome, EvolveError> {
    config.validate()?;
    let base = text::canonicalize(base_resume);
    if text::tokenize(&base).is_empty() {
        return Err(EvolveError::EmptyResume);
    }
    let evaluator = FitnessEvaluator::new(&base, targets, weights, providers)?;
    let ranked_keywords = targets.ranked_keywords();
    let breeder = Breeder { config, gateway: &providers.gateway, ranked_keywords: &ranked_keywords };

    let mut population = vec![Individual {
        id: 0,
        resume_text: base.clone(),
        fitness: None,
        lineage: Lineage::Base,
        generation_born: 0,
    }];
    let mutants: Vec<Individual> = (1..config.population)
        .into_par_iter()
        .map(|slot| {
            let mut rng = slot_rng(config.seed, 0, slot);
            Individual {
                id: slot as u64,
                resume_text: mutate(&base, 0, config, &providers.gateway, &ranked_keywords, &mut rng),
                fitness: None,
                lineage: Lineage::Mutant { parent: 0 },
                generation_born: 0,
            }
        })
        .collect();
    population.extend(mutants);
    let mut next_id = config.population as u64;

    let mut records = Vec::with_capacity(config.generations + 1);
    let fail = |source: RerankError, records: &[GenerationRecord], population: &[Individual]| {
        let best = population
            .iter()
            .filter(|i| i.fitness.is_some())
            .max_by(|a, b| a.fitness.unwrap_or(0.0).total_cmp(&b.fitness.unwrap_or(0.0)))
            .map(|i| i.resume_text.clone())
            .unwrap_or_default();
        EvolveError::Provider {
            source,
            partial: Some(Box::new(FitnessTrace::from_records(records.to_vec(), best))),
        }
    };

    evaluator.evaluate(&mut population).map_err(|e| fail(e, &records, &population))?;
    records.push(record(0, &population));
    for round in 1..=config.generations {
        population = breeder.select_next_generation(&population, round, next_id)?;
        next_id += (config.population - config.elitism) as u64;
        evaluator.evaluate(&mut population).map_err(|e| fail(e, &records, &population))?;
        records.push(record(round, &population));
    }
    let best = best_of(&population)?;
    let trace = FitnessTrace::from_records(records, best.resume_text.clone());
    Ok(EvolutionOutcome { best, trace, final_population: population })
}
