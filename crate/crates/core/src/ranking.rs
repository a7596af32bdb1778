//! Cosine ranking in both directions, plus the TF-IDF and LLM-score
//! baseline rankers.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::embedding::{l2_norm, EmbeddingVector};
use crate::error::{Error, Result};
use crate::extraction::CompanySummary;
use crate::gateway::{CompletionRequest, Gateway};
use crate::lexicon::Technology;
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    CompanyToTechnology,
    TechnologyToCompany,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::CompanyToTechnology => "company-to-technology",
            Direction::TechnologyToCompany => "technology-to-company",
        }
    }

    /// Short form used in report rows.
    pub fn short(self) -> &'static str {
        match self {
            Direction::CompanyToTechnology => "com-tech",
            Direction::TechnologyToCompany => "tech-com",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "company-to-technology" | "com-tech" => Ok(Direction::CompanyToTechnology),
            "technology-to-company" | "tech-com" => Ok(Direction::TechnologyToCompany),
            other => Err(Error::Config(format!("unknown direction {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub item_id: String,
    pub score: f64,
}

/// Entries sorted by score descending, ties by item id ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub direction: Direction,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.item_id.as_str())
    }

    pub const TSV_HEADER: &'static str = "query_id\tdirection\trank\titem_id\tscore";

    /// Tab-separated rows `query_id, direction, rank, item_id, score` with
    /// 1-based ranks and six-decimal scores. No header.
    pub fn to_tsv_rows(&self) -> String {
        let mut out = String::new();
        for (i, e) in self.entries.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{:.6}\n",
                self.query_id,
                self.direction.as_str(),
                i + 1,
                e.item_id,
                e.score
            ));
        }
        out
    }

    /// Parse rows written by [`RankedList::to_tsv_rows`] (header optional),
    /// grouping consecutive rows by query.
    pub fn parse_tsv(text: &str) -> Result<Vec<RankedList>> {
        let mut lists: Vec<RankedList> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line == Self::TSV_HEADER {
                continue;
            }
            let bad = |msg: &str| Error::Invalid(format!("ranked list line {}: {msg}", i + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(bad("expected 5 tab-separated fields"));
            }
            let direction: Direction = fields[1].parse()?;
            let rank: usize = fields[2].parse().map_err(|_| bad("bad rank"))?;
            let score: f64 = fields[4].parse().map_err(|_| bad("bad score"))?;
            let start_new = match lists.last() {
                Some(l) => l.query_id != fields[0] || l.direction != direction,
                None => true,
            };
            if start_new {
                lists.push(RankedList {
                    query_id: fields[0].to_string(),
                    direction,
                    entries: Vec::new(),
                });
            }
            let list = lists.last_mut().unwrap();
            if rank != list.entries.len() + 1 {
                return Err(bad("ranks out of sequence"));
            }
            list.entries.push(RankedEntry {
                item_id: fields[3].to_string(),
                score,
            });
        }
        Ok(lists)
    }
}

/// Score descending, then id ascending. Scores are finite and never -0.0.
fn rank_order(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.item_id.cmp(&b.item_id))
}

/// Keep the best `k` entries in rank order.
fn top_k(mut entries: Vec<RankedEntry>, k: usize) -> Vec<RankedEntry> {
    if k == 0 {
        return Vec::new();
    }
    if entries.len() > k {
        entries.select_nth_unstable_by(k - 1, rank_order);
        entries.truncate(k);
    }
    entries.sort_unstable_by(rank_order);
    entries
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine_with_norms(a: &[f64], b: &[f64], norm_a: f64, norm_b: f64) -> f64 {
    // + 0.0 folds -0.0 into 0.0 so ties compare equal
    (dot(a, b) / (norm_a * norm_b)).clamp(-1.0, 1.0) + 0.0
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::DimensionMismatch {
            expected: a.dimension(),
            actual: b.dimension(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(cosine_with_norms(&a.values, &b.values, na, nb))
}

fn rank_dense<'a>(
    query_id: &str,
    direction: Direction,
    query: &EmbeddingVector,
    pool: impl IntoIterator<Item = (&'a String, &'a EmbeddingVector)>,
    k: usize,
) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    let qn = query.norm();
    if qn == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let mut entries = Vec::new();
    for (id, v) in pool {
        if v.dimension() != query.dimension() {
            return Err(Error::DimensionMismatch {
                expected: query.dimension(),
                actual: v.dimension(),
            });
        }
        let vn = v.norm();
        if vn == 0.0 {
            tracing::warn!(item = %id, "skipping zero-norm embedding");
            continue;
        }
        entries.push(RankedEntry {
            item_id: id.clone(),
            score: cosine_with_norms(&query.values, &v.values, qn, vn),
        });
    }
    if entries.is_empty() {
        return Err(Error::EmptyPool(format!("no eligible items for {query_id}")));
    }
    Ok(RankedList {
        query_id: query_id.to_string(),
        direction,
        entries: top_k(entries, k),
    })
}

/// Top-`k` technologies for a company profile.
pub fn rank_technologies(
    company_id: &str,
    profile: &EmbeddingVector,
    tech_embeddings: &BTreeMap<String, EmbeddingVector>,
    k: usize,
) -> Result<RankedList> {
    rank_dense(company_id, Direction::CompanyToTechnology, profile, tech_embeddings, k)
}

/// Top-`k` companies for a technology embedding.
pub fn rank_companies(
    tech_id: &str,
    tech_vec: &EmbeddingVector,
    company_profiles: &BTreeMap<String, EmbeddingVector>,
    k: usize,
) -> Result<RankedList> {
    rank_dense(tech_id, Direction::TechnologyToCompany, tech_vec, company_profiles, k)
}

/// Sparse TF-IDF vectors with raw term frequency, smoothed idf
/// `ln((1+N)/(1+df)) + 1`, and L2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfIndex {
    vocabulary: HashMap<String, usize>,
    document_frequencies: Vec<u32>,
    document_count: usize,
    /// (item id, sorted (term index, weight) pairs)
    items: Vec<(String, Vec<(usize, f64)>)>,
}

impl TfIdfIndex {
    pub fn build<'a>(items: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut vocabulary: HashMap<String, usize> = HashMap::new();
        let mut document_frequencies: Vec<u32> = Vec::new();
        let mut counted: Vec<(String, BTreeMap<usize, u32>)> = Vec::new();
        for (id, text) in items {
            let mut tf: BTreeMap<usize, u32> = BTreeMap::new();
            for token in tokenize(text) {
                let next = vocabulary.len();
                let idx = *vocabulary.entry(token).or_insert(next);
                if idx == document_frequencies.len() {
                    document_frequencies.push(0);
                }
                *tf.entry(idx).or_insert(0) += 1;
            }
            for idx in tf.keys() {
                document_frequencies[*idx] += 1;
            }
            counted.push((id.to_string(), tf));
        }
        if vocabulary.is_empty() {
            return Err(Error::EmptyPool("TF-IDF corpus has no tokens".into()));
        }
        let n = counted.len();
        let idf: Vec<f64> = document_frequencies
            .iter()
            .map(|&df| ((1.0 + n as f64) / (1.0 + df as f64)).ln() + 1.0)
            .collect();
        let items = counted
            .into_iter()
            .map(|(id, tf)| {
                let weights: Vec<(usize, f64)> =
                    tf.into_iter().map(|(t, c)| (t, c as f64 * idf[t])).collect();
                (id, normalize_sparse(weights))
            })
            .collect();
        Ok(TfIdfIndex {
            vocabulary,
            document_frequencies,
            document_count: n,
            items,
        })
    }

    pub fn document_count(&self) -> usize {
        self.document_count
    }

    pub fn vocabulary(&self) -> &HashMap<String, usize> {
        &self.vocabulary
    }

    pub fn document_frequency(&self, token: &str) -> Option<u32> {
        self.vocabulary.get(token).map(|&i| self.document_frequencies[i])
    }

    pub fn idf(&self, token: &str) -> Option<f64> {
        self.document_frequency(token)
            .map(|df| ((1.0 + self.document_count as f64) / (1.0 + df as f64)).ln() + 1.0)
    }

    /// Normalized weight of `token` in item `id` (0 when absent).
    pub fn weight(&self, id: &str, token: &str) -> Option<f64> {
        let (_, vec) = self.items.iter().find(|(i, _)| i == id)?;
        let Some(&t) = self.vocabulary.get(token) else {
            return Some(0.0);
        };
        Some(vec.iter().find(|(i, _)| *i == t).map(|(_, w)| *w).unwrap_or(0.0))
    }

    /// Items with their sparse vectors, in insertion order.
    pub fn items(&self) -> impl Iterator<Item = (&str, &[(usize, f64)])> {
        self.items.iter().map(|(id, v)| (id.as_str(), v.as_slice()))
    }

    /// Query vector in the same space; empty when no token is in vocabulary.
    pub fn vectorize(&self, text: &str) -> Vec<(usize, f64)> {
        let mut tf: BTreeMap<usize, u32> = BTreeMap::new();
        for token in tokenize(text) {
            if let Some(&i) = self.vocabulary.get(&token) {
                *tf.entry(i).or_insert(0) += 1;
            }
        }
        let n = self.document_count as f64;
        let weights = tf
            .into_iter()
            .map(|(t, c)| {
                let df = self.document_frequencies[t] as f64;
                (t, c as f64 * (((1.0 + n) / (1.0 + df)).ln() + 1.0))
            })
            .collect();
        normalize_sparse(weights)
    }
}

fn normalize_sparse(mut v: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    let norm = l2_norm(&v.iter().map(|(_, w)| *w).collect::<Vec<_>>());
    if norm > 0.0 {
        v.iter_mut().for_each(|(_, w)| *w /= norm);
    } else {
        v.clear();
    }
    v
}

fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j, mut sum) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                sum += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    sum
}

/// Rank indexed items by TF-IDF cosine to `query_text`. Out-of-vocabulary
/// tokens are ignored; a query with no known token yields an empty list.
pub fn tfidf_rank(
    index: &TfIdfIndex,
    query_id: &str,
    direction: Direction,
    query_text: &str,
    k: usize,
) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    let q = index.vectorize(query_text);
    let entries = if q.is_empty() {
        Vec::new()
    } else {
        let scored = index
            .items
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(id, v)| RankedEntry {
                item_id: id.clone(),
                score: sparse_dot(&q, v).clamp(-1.0, 1.0) + 0.0,
            })
            .collect();
        top_k(scored, k)
    };
    Ok(RankedList {
        query_id: query_id.to_string(),
        direction,
        entries,
    })
}

fn score_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"^\s*(?:[-*•]|\d+[.)])?\s*["'`]?([A-Za-z0-9_.\-+/]+)["'`]?\s*(?::|=|-|–)\s*(\d{1,3})(?:\s*/\s*100)?\s*$"#)
            .unwrap()
    })
}

/// Parse `<id>: <score>` lines (or a JSON object of id → score). The
/// strict pass requires every non-empty line to match; the repair pass
/// keeps the lines that do.
pub fn parse_scores(raw: &str) -> Result<BTreeMap<String, u32>> {
    let lines: Vec<&str> = raw.lines().filter(|l| !l.trim().is_empty()).collect();
    let parsed: Vec<Option<(String, u32)>> = lines
        .iter()
        .map(|l| {
            score_line_re()
                .captures(l)
                .and_then(|c| Some((c[1].to_string(), c[2].parse().ok()?)))
        })
        .collect();
    let strict_ok = !parsed.is_empty() && parsed.iter().all(Option::is_some);
    let mut scores: BTreeMap<String, u32> = BTreeMap::new();
    for (id, s) in parsed.into_iter().flatten() {
        scores.entry(id).or_insert(s.min(100));
    }
    if strict_ok || !scores.is_empty() {
        return Ok(scores);
    }
    if let (Some(open), Some(close)) = (raw.find('{'), raw.rfind('}')) {
        if open < close {
            if let Ok(map) = serde_json::from_str::<BTreeMap<String, f64>>(&raw[open..=close]) {
                return Ok(map
                    .into_iter()
                    .map(|(k, v)| (k, v.clamp(0.0, 100.0).round() as u32))
                    .collect());
            }
        }
    }
    Err(Error::Unparseable {
        what: "relevance scores",
        raw: raw.to_string(),
    })
}

/// Ask the model for a 0–100 relevance score per candidate technology and
/// rank by the rescaled scores. Candidates the model skips score 0.
pub fn llm_score_rank(
    gateway: &Gateway,
    summary: &CompanySummary,
    candidates: &[Technology],
    k: usize,
) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    if candidates.is_empty() {
        return Err(Error::EmptyPool(format!("no candidates for {}", summary.company_id)));
    }
    let listing = candidates
        .iter()
        .map(|t| format!("- {}: {}", t.id, t.name))
        .collect::<Vec<_>>()
        .join("\n");
    let user = format!(
        "Company summary:\n{}\n\nCandidate technologies (id: name):\n{}\n\n\
         Rate how relevant each candidate technology is to this company on an integer scale from 0 to 100. \
         Output one line per candidate in the form \"<id>: <score>\" using the ids above. Output nothing else.",
        summary.text, listing
    );
    let request = CompletionRequest::new(
        format!("{}/llm-score", summary.company_id),
        "You rate how relevant technologies are to companies.",
        user,
    );
    let response = gateway.complete(&request)?;
    let scores = parse_scores(&response.text)?;
    for id in scores.keys() {
        if !candidates.iter().any(|t| &t.id == id) {
            tracing::warn!(company = %summary.company_id, id = %id, "score for unknown candidate ignored");
        }
    }
    let entries = candidates
        .iter()
        .map(|t| {
            let score = scores.get(&t.id).copied().unwrap_or_else(|| {
                tracing::warn!(company = %summary.company_id, tech = %t.id, "candidate missing from scores; using 0");
                0
            });
            RankedEntry {
                item_id: t.id.clone(),
                score: f64::from(score) / 100.0,
            }
        })
        .collect();
    Ok(RankedList {
        query_id: summary.company_id.clone(),
        direction: Direction::CompanyToTechnology,
        entries: top_k(entries, k),
    })
}
