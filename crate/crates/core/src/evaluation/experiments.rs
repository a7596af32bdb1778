use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use super::metrics::{mean_precision_at_k, precision_at_k, MeanPrecision};
use super::report::{ExperimentKind, ExperimentReport, ReportRow};
use crate::corpus::Validation;
use crate::embedding::{technology_text, EmbeddingVector};
use crate::error::{Error, Result};
use crate::extraction::{ExtractionResult, PromptStrategy};
use crate::lexicon::Technology;
use crate::pipeline::{Pipeline, StoredRanking};
use crate::ranking::{
    llm_score_rank, rank_companies, rank_technologies, tfidf_rank, Direction, RankedList, TfIdfIndex,
};

pub const DEFAULT_K_LIST: [usize; 4] = [3, 5, 7, 10];
pub const DEFAULT_SWEEP_COUNTS: [usize; 6] = [0, 1, 3, 5, 7, 9];

/// Mean P@k over `queries`. Queries with no relevant items or no ranked
/// list are excluded and counted.
pub fn evaluate_rankings(
    rankings: &BTreeMap<String, RankedList>,
    relevant: &BTreeMap<String, BTreeSet<String>>,
    queries: &BTreeSet<String>,
    k: usize,
) -> Result<MeanPrecision> {
    if k == 0 {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    let mut per_query = BTreeMap::new();
    let mut excluded = BTreeSet::new();
    for q in queries {
        let rel = relevant.get(q).filter(|r| !r.is_empty());
        match (rel, rankings.get(q)) {
            (Some(rel), Some(list)) => {
                let p = precision_at_k(rel, list, k);
                if p.degenerate {
                    tracing::warn!(query = %q, "empty ranked list counts as 0");
                }
                per_query.insert(q.clone(), p.value);
            }
            _ => {
                excluded.insert(q.clone());
            }
        }
    }
    mean_precision_at_k(&per_query, &excluded)
}

fn check_k_list(k_list: &[usize]) -> Result<usize> {
    if k_list.is_empty() || k_list.contains(&0) {
        return Err(Error::Config("k list must be non-empty with every k ≥ 1".into()));
    }
    Ok(*k_list.iter().max().unwrap())
}

/// Semantic rankings in both directions at depth `k`.
fn semantic_rankings(
    profiles: &BTreeMap<String, EmbeddingVector>,
    tech_vecs: &BTreeMap<String, EmbeddingVector>,
    k: usize,
) -> Result<(BTreeMap<String, RankedList>, BTreeMap<String, RankedList>)> {
    let mut com_tech = BTreeMap::new();
    if !tech_vecs.is_empty() {
        for (cid, profile) in profiles {
            com_tech.insert(cid.clone(), rank_technologies(cid, profile, tech_vecs, k)?);
        }
    }
    let mut tech_com = BTreeMap::new();
    if !profiles.is_empty() {
        for (tid, v) in tech_vecs {
            tech_com.insert(tid.clone(), rank_companies(tid, v, profiles, k)?);
        }
    }
    Ok((com_tech, tech_com))
}

struct Truth {
    companies: BTreeSet<String>,
    techs: BTreeSet<String>,
    com_tech: BTreeMap<String, BTreeSet<String>>,
    tech_com: BTreeMap<String, BTreeSet<String>>,
}

fn truth(p: &Pipeline) -> Truth {
    Truth {
        companies: p.corpus.companies().iter().map(|c| c.id.clone()).collect(),
        techs: p.lexicon.technologies().map(|t| t.id.clone()).collect(),
        com_tech: p.corpus.ground_truth(),
        tech_com: p.corpus.tech_to_companies(),
    }
}

#[allow(clippy::too_many_arguments)]
fn push_rows(
    rows: &mut Vec<ReportRow>,
    experiment: ExperimentKind,
    direction: Direction,
    method: &str,
    few_shot_count: usize,
    k_list: &[usize],
    rankings: &BTreeMap<String, RankedList>,
    relevant: &BTreeMap<String, BTreeSet<String>>,
    queries: &BTreeSet<String>,
) -> Result<()> {
    for &k in k_list {
        let m = evaluate_rankings(rankings, relevant, queries, k)?;
        rows.push(ReportRow::new(
            experiment,
            direction.short(),
            method,
            few_shot_count,
            k,
            m.mean,
            m.n_evaluated,
            m.n_excluded,
        ));
    }
    Ok(())
}

fn semantic_for(
    p: &Pipeline,
    strategy: &PromptStrategy,
    tech_vecs: &BTreeMap<String, EmbeddingVector>,
    k: usize,
) -> Result<(BTreeMap<String, RankedList>, BTreeMap<String, RankedList>)> {
    let run = p.extract_all(strategy)?;
    let profiles = p.company_profiles(&run.results, tech_vecs)?;
    semantic_rankings(&profiles, tech_vecs, k)
}

/// single-prompt, cot and stars(`few_shot_count`), each evaluated in both
/// directions with semantic ranking.
pub fn run_prompting_ablation(p: &Pipeline, few_shot_count: usize, k_list: &[usize]) -> Result<ExperimentReport> {
    let k_max = check_k_list(k_list)?;
    let set = p.extractor.templates.id.clone();
    let tech_vecs = p.technology_embeddings()?;
    let t = truth(p);
    let mut rows = Vec::new();
    for strategy in [
        PromptStrategy::single_prompt(&set),
        PromptStrategy::cot(&set),
        PromptStrategy::stars(few_shot_count, &set),
    ] {
        let (com_tech, tech_com) = semantic_for(p, &strategy, &tech_vecs, k_max)
            .map_err(|e| e.in_strategy(&strategy.key()))?;
        let method = strategy.kind.as_str();
        let n = strategy.few_shot_count;
        push_rows(&mut rows, ExperimentKind::Ablation, Direction::CompanyToTechnology, method, n, k_list, &com_tech, &t.com_tech, &t.companies)?;
        push_rows(&mut rows, ExperimentKind::Ablation, Direction::TechnologyToCompany, method, n, k_list, &tech_com, &t.tech_com, &t.techs)?;
    }
    Ok(ExperimentReport { input_digest: None, rows })
}

/// The stars strategy at each few-shot count, company-to-technology.
pub fn run_few_shot_sweep(p: &Pipeline, counts: &[usize], k_list: &[usize]) -> Result<ExperimentReport> {
    let k_max = check_k_list(k_list)?;
    if counts.is_empty() {
        return Err(Error::Config("few-shot counts must be non-empty".into()));
    }
    let set = p.extractor.templates.id.clone();
    let tech_vecs = p.technology_embeddings()?;
    let t = truth(p);
    let mut rows = Vec::new();
    for &n in counts {
        let strategy = PromptStrategy::stars(n, &set);
        let (com_tech, _) = semantic_for(p, &strategy, &tech_vecs, k_max)
            .map_err(|e| e.in_strategy(&strategy.key()))?;
        push_rows(&mut rows, ExperimentKind::FewShotSweep, Direction::CompanyToTechnology, "stars", n, k_list, &com_tech, &t.com_tech, &t.companies)?;
    }
    Ok(ExperimentReport { input_digest: None, rows })
}

/// sha256 over the serialized extraction results every ranker consumes.
pub fn extraction_digest(results: &BTreeMap<String, ExtractionResult>) -> Result<String> {
    let bytes = serde_json::to_vec(results)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// What the TF-IDF baseline searches with: the summary plus the forms
/// judged to be technologies.
fn tfidf_query(r: &ExtractionResult) -> String {
    let mut q = r.summary.text.clone();
    for m in r.technologies() {
        q.push(' ');
        q.push_str(&m.surface_form);
    }
    q
}

/// Semantic, TF-IDF and LLM-score ranking over one shared set of
/// extraction results, company-to-technology.
pub fn run_ranking_comparison(p: &Pipeline, strategy: &PromptStrategy, k_list: &[usize]) -> Result<ExperimentReport> {
    let k_max = check_k_list(k_list)?;
    let t = truth(p);
    let run = p.extract_all(strategy)?;
    let digest = extraction_digest(&run.results)?;
    let tech_vecs = p.technology_embeddings()?;

    let profiles = p.company_profiles(&run.results, &tech_vecs)?;
    let (semantic, _) = semantic_rankings(&profiles, &tech_vecs, k_max)?;

    let techs: Vec<Technology> = p.lexicon.technologies().filter(|t| t.has_definition()).cloned().collect();
    let texts: Vec<(String, String)> = techs
        .iter()
        .map(|t| Ok((t.id.clone(), technology_text(t)?)))
        .collect::<Result<_>>()?;
    let index = TfIdfIndex::build(texts.iter().map(|(id, s)| (id.as_str(), s.as_str())))?;
    let mut tfidf = BTreeMap::new();
    for (cid, r) in &run.results {
        tfidf.insert(
            cid.clone(),
            tfidf_rank(&index, cid, Direction::CompanyToTechnology, &tfidf_query(r), k_max)?,
        );
    }

    let llm = llm_rankings(p, strategy, &run.results, &techs, k_max)?;

    let mut rows = Vec::new();
    for (method, rankings) in [("semantic", &semantic), ("tfidf", &tfidf), ("llm-score", &llm)] {
        push_rows(&mut rows, ExperimentKind::RankingComparison, Direction::CompanyToTechnology, method, strategy.few_shot_count, k_list, rankings, &t.com_tech, &t.companies)?;
    }
    rows.sort_by(|a, b| a.k.cmp(&b.k).then_with(|| method_order(&a.method).cmp(&method_order(&b.method))));
    Ok(ExperimentReport {
        input_digest: Some(digest),
        rows,
    })
}

fn method_order(m: &str) -> usize {
    ["semantic", "llm-score", "tfidf"].iter().position(|x| *x == m).unwrap_or(usize::MAX)
}

fn llm_rankings(
    p: &Pipeline,
    strategy: &PromptStrategy,
    results: &BTreeMap<String, ExtractionResult>,
    candidates: &[Technology],
    k: usize,
) -> Result<BTreeMap<String, RankedList>> {
    let key = strategy.key();
    let store = p.ranking_store();
    let mut stored: BTreeMap<(String, String), StoredRanking> = BTreeMap::new();
    if let Some(s) = &store {
        for rec in s.load::<StoredRanking>()? {
            stored.insert((rec.strategy.clone(), rec.company_id.clone()), rec);
        }
    }
    let mut out = BTreeMap::new();
    let mut todo = Vec::new();
    for (cid, r) in results {
        match stored.get(&(key.clone(), cid.clone())) {
            Some(rec) if rec.ranking.len() >= k.min(candidates.len()) => {
                out.insert(cid.clone(), rec.ranking.clone());
            }
            _ => todo.push((cid, r)),
        }
    }
    let outcomes = p.par_map(todo, |(cid, r)| (cid.clone(), llm_score_rank(&p.gateway, &r.summary, candidates, k)))?;
    let mut first_error = None;
    for (cid, outcome) in outcomes {
        match outcome {
            Ok(list) => {
                stored.insert(
                    (key.clone(), cid.clone()),
                    StoredRanking {
                        company_id: cid.clone(),
                        strategy: key.clone(),
                        ranking: list.clone(),
                    },
                );
                out.insert(cid, list);
            }
            Err(e) if p.validation == Validation::Lenient => {
                tracing::error!(company = %cid, error = %e, "llm-score ranking failed; continuing");
            }
            Err(e) => {
                if first_error.is_none() {
                    first_error = Some(e.at_step(&cid, "llm-score"));
                }
            }
        }
    }
    if let Some(s) = &store {
        let records: Vec<_> = stored.into_values().collect();
        s.rewrite(&records)?;
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::RankedEntry;

    fn list(q: &str, ids: &[&str]) -> RankedList {
        RankedList {
            query_id: q.into(),
            direction: Direction::CompanyToTechnology,
            entries: ids
                .iter()
                .map(|id| RankedEntry { item_id: id.to_string(), score: 0.5 })
                .collect(),
        }
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn exclusions_are_counted() {
        let rankings: BTreeMap<_, _> = [("a", list("a", &["x", "y"])), ("b", list("b", &["y", "x"]))]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let relevant: BTreeMap<_, _> = [("a", set(&["x"])), ("b", set(&[])), ("c", set(&["x"]))]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let m = evaluate_rankings(&rankings, &relevant, &set(&["a", "b", "c"]), 1).unwrap();
        assert_eq!(m.mean, 1.0);
        assert_eq!((m.n_evaluated, m.n_excluded), (1, 2));
        assert!(matches!(
            evaluate_rankings(&rankings, &relevant, &set(&["b"]), 1),
            Err(Error::AllExcluded)
        ));
    }

    #[test]
    fn k_list_validation() {
        assert!(check_k_list(&[]).is_err());
        assert!(check_k_list(&[3, 0]).is_err());
        assert_eq!(check_k_list(&[3, 10, 5]).unwrap(), 10);
    }
}
