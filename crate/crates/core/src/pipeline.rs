//! Wiring of extraction, embedding and ranking over a whole corpus, with
//! resumable on-disk result stores.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Validation};
use crate::embedding::{
    embed_company_profile, embed_technology, embed_text, write_atomic, EmbeddingCache,
    EmbeddingProvider, EmbeddingVector,
};
use crate::error::{Error, Result};
use crate::extraction::{ExtractionResult, Extractor, PromptStrategy};
use crate::gateway::Gateway;
use crate::lexicon::{resolve_definition, TechnologyLexicon};
use crate::ranking::RankedList;
use crate::text::normalize;

/// Append-only JSONL file. A torn final line (from a killed run) is
/// skipped on load.
#[derive(Debug)]
pub struct RecordStore {
    path: PathBuf,
    lock: Mutex<()>,
}

impl RecordStore {
    pub fn open(path: impl Into<PathBuf>) -> Self {
        RecordStore {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn load<T: DeserializeOwned>(&self) -> Result<Vec<T>> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(format!("reading {}", self.path.display()), e)),
        };
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(r) => out.push(r),
                Err(e) => tracing::warn!(path = %self.path.display(), line = i + 1, error = %e, "skipping unreadable record"),
            }
        }
        Ok(out)
    }

    pub fn append<T: Serialize>(&self, record: &T) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let _guard = self.lock.lock().unwrap();
        if let Some(parent) = self.path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(format!("opening {}", self.path.display()), e))?;
        f.write_all(line.as_bytes())
            .map_err(|e| Error::io(format!("appending to {}", self.path.display()), e))
    }

    /// Replace the file with `records`, one per line.
    pub fn rewrite<T: Serialize>(&self, records: &[T]) -> Result<()> {
        let mut out = String::new();
        for r in records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        let _guard = self.lock.lock().unwrap();
        if let Some(parent) = self.path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        write_atomic(&self.path, out.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredExtraction {
    pub company_id: String,
    pub strategy: String,
    pub template_set_id: String,
    pub result: ExtractionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRanking {
    pub company_id: String,
    pub strategy: String,
    pub ranking: RankedList,
}

#[derive(Debug, Default)]
pub struct ExtractionRun {
    pub results: BTreeMap<String, ExtractionResult>,
    /// Companies whose results came from the store.
    pub resumed: usize,
    /// (company id, error) for failures skipped in lenient mode.
    pub failed: Vec<(String, String)>,
}

pub struct Pipeline {
    pub corpus: Corpus,
    pub lexicon: TechnologyLexicon,
    pub gateway: Gateway,
    pub provider: Box<dyn EmbeddingProvider>,
    pub cache: EmbeddingCache,
    pub extractor: Extractor,
    pub summary_weight: f64,
    pub validation: Validation,
    pub concurrency: usize,
    /// Directory for resumable result stores; `None` keeps everything in memory.
    pub store_dir: Option<PathBuf>,
}

impl Pipeline {
    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.concurrency.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }

    /// Map `f` over `items` on the bounded pool, keeping input order.
    pub(crate) fn par_map<T, R, F>(&self, items: Vec<T>, f: F) -> Result<Vec<R>>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        Ok(self.pool()?.install(|| items.into_par_iter().map(f).collect()))
    }

    fn store(&self, name: &str) -> Option<RecordStore> {
        self.store_dir.as_ref().map(|d| RecordStore::open(d.join(name)))
    }

    /// Generate definitions for technologies that lack one. Returns the
    /// ids that were filled in.
    pub fn resolve_definitions(&mut self) -> Result<Vec<String>> {
        let missing: Vec<_> = self
            .lexicon
            .technologies()
            .filter(|t| !t.has_definition())
            .cloned()
            .collect();
        let mut resolved = Vec::new();
        for tech in missing {
            match resolve_definition(&tech, &self.gateway) {
                Ok(t) => {
                    resolved.push(t.id.clone());
                    self.lexicon.replace(t)?;
                }
                Err(e) if self.validation == Validation::Lenient => {
                    tracing::warn!(tech = %tech.id, error = %e, "definition unresolved; technology will not be ranked");
                }
                Err(e) => return Err(e),
            }
        }
        Ok(resolved)
    }

    /// Run extraction for every eligible company, reusing stored results.
    pub fn extract_all(&self, strategy: &PromptStrategy) -> Result<ExtractionRun> {
        let key = strategy.key();
        let store = self.store("extractions.jsonl");
        let mut stored: BTreeMap<String, StoredExtraction> = BTreeMap::new();
        if let Some(store) = &store {
            for rec in store.load::<StoredExtraction>()? {
                if self.corpus.get(&rec.company_id).is_none() {
                    continue;
                }
                if rec.strategy == key && rec.result.check_invariants(&self.lexicon).is_err() {
                    tracing::warn!(company = %rec.company_id, strategy = %key, "stored result is stale; re-extracting");
                    continue;
                }
                stored.insert(format!("{}\u{0}{}", rec.strategy, rec.company_id), rec);
            }
        }

        let mut run = ExtractionRun::default();
        let mut todo = Vec::new();
        for company in self.corpus.companies() {
            if !company.is_extraction_eligible() {
                tracing::warn!(company = %company.id, "no documents; skipping extraction");
                continue;
            }
            match stored.get(&format!("{key}\u{0}{}", company.id)) {
                Some(rec) => {
                    run.results.insert(company.id.clone(), rec.result.clone());
                    run.resumed += 1;
                }
                None => todo.push(company),
            }
        }
        if run.resumed > 0 {
            tracing::info!(strategy = %key, resumed = run.resumed, remaining = todo.len(), "resuming extraction");
        }

        let outcomes = self.par_map(todo, |company| {
            let outcome = self.extractor.run(company, strategy, &self.lexicon, &self.gateway);
            if let (Ok(result), Some(store)) = (&outcome, &store) {
                let rec = StoredExtraction {
                    company_id: company.id.clone(),
                    strategy: key.clone(),
                    template_set_id: strategy.template_set_id.clone(),
                    result: result.clone(),
                };
                if let Err(e) = store.append(&rec) {
                    tracing::warn!(company = %company.id, error = %e, "could not persist result");
                }
            }
            (company.id.clone(), outcome)
        })?;

        let mut first_error = None;
        for (id, outcome) in outcomes {
            match outcome {
                Ok(result) => {
                    tracing::info!(company = %id, strategy = %key, mentions = result.technology_mentions.len(), "extracted");
                    stored.insert(
                        format!("{key}\u{0}{id}"),
                        StoredExtraction {
                            company_id: id.clone(),
                            strategy: key.clone(),
                            template_set_id: strategy.template_set_id.clone(),
                            result: result.clone(),
                        },
                    );
                    run.results.insert(id, result);
                }
                Err(e) if self.validation == Validation::Lenient => {
                    tracing::error!(company = %id, strategy = %key, error = %e, "extraction failed; continuing");
                    run.failed.push((id, e.to_string()));
                }
                Err(e) => {
                    if first_error.is_none() {
                        first_error = Some(e);
                    }
                }
            }
        }
        if let Some(store) = &store {
            // rewrite in key order so the file does not depend on thread timing
            let records: Vec<_> = stored.into_values().collect();
            store.rewrite(&records)?;
        }
        match first_error {
            Some(e) => Err(e),
            None => Ok(run),
        }
    }

    /// Stored extraction results for `strategy`, without running anything.
    pub fn stored_extractions(&self, strategy: &PromptStrategy) -> Result<BTreeMap<String, ExtractionResult>> {
        let key = strategy.key();
        let Some(store) = self.store("extractions.jsonl") else {
            return Ok(BTreeMap::new());
        };
        Ok(store
            .load::<StoredExtraction>()?
            .into_iter()
            .filter(|r| r.strategy == key && self.corpus.get(&r.company_id).is_some())
            .map(|r| (r.company_id, r.result))
            .collect())
    }

    /// Embeddings for every technology with a definition, keyed by id.
    pub fn technology_embeddings(&self) -> Result<BTreeMap<String, EmbeddingVector>> {
        let mut out = BTreeMap::new();
        for tech in self.lexicon.technologies() {
            if !tech.has_definition() {
                match self.validation {
                    Validation::Lenient => {
                        tracing::warn!(tech = %tech.id, "no definition; left out of the ranking pool");
                        continue;
                    }
                    Validation::Strict => {
                        return Err(Error::Precondition(format!(
                            "technology {:?} has no definition; resolve definitions first",
                            tech.id
                        )))
                    }
                }
            }
            out.insert(tech.id.clone(), embed_technology(self.provider.as_ref(), &self.cache, tech)?);
        }
        Ok(out)
    }

    /// Profile vector for one company. Lexicon-matched technologies use the
    /// lexicon embedding; unmatched ones are embedded from their surface form.
    pub fn company_profile(
        &self,
        result: &ExtractionResult,
        tech_embeddings: &BTreeMap<String, EmbeddingVector>,
    ) -> Result<EmbeddingVector> {
        let provider = self.provider.as_ref();
        let summary = embed_text(provider, &self.cache, &result.summary.text)?;
        let mut seen = BTreeSet::new();
        let mut techs = Vec::new();
        for m in result.technologies() {
            match &m.matched_tech_id {
                Some(id) => {
                    if seen.insert(format!("id:{id}")) {
                        match tech_embeddings.get(id) {
                            Some(v) => techs.push(v.clone()),
                            None => tracing::warn!(company = %result.company_id, tech = %id, "matched technology has no embedding"),
                        }
                    }
                }
                None => {
                    let form = normalize(&m.surface_form);
                    if !form.is_empty() && seen.insert(format!("form:{form}")) {
                        techs.push(embed_text(provider, &self.cache, &m.surface_form)?);
                    }
                }
            }
        }
        embed_company_profile(&summary, &techs, self.summary_weight)
    }

    pub fn company_profiles(
        &self,
        results: &BTreeMap<String, ExtractionResult>,
        tech_embeddings: &BTreeMap<String, EmbeddingVector>,
    ) -> Result<BTreeMap<String, EmbeddingVector>> {
        let items: Vec<_> = results.iter().collect();
        let outcomes = self.par_map(items, |(id, r)| (id.clone(), self.company_profile(r, tech_embeddings)))?;
        let mut out = BTreeMap::new();
        for (id, outcome) in outcomes {
            match outcome {
                Ok(v) => {
                    out.insert(id, v);
                }
                Err(e) if self.validation == Validation::Lenient => {
                    tracing::error!(company = %id, error = %e, "profile failed; continuing");
                }
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    pub(crate) fn ranking_store(&self) -> Option<RecordStore> {
        self.store("llm_scores.jsonl")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct R {
        n: u32,
    }

    #[test]
    fn store_round_trip_and_torn_line() {
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path().join("sub/s.jsonl"));
        assert!(store.load::<R>().unwrap().is_empty());
        store.append(&R { n: 1 }).unwrap();
        store.append(&R { n: 2 }).unwrap();
        let mut f = OpenOptions::new().append(true).open(store.path()).unwrap();
        f.write_all(b"{\"n\": 3").unwrap();
        assert_eq!(store.load::<R>().unwrap(), vec![R { n: 1 }, R { n: 2 }]);
        store.rewrite(&[R { n: 9 }]).unwrap();
        assert_eq!(fs::read_to_string(store.path()).unwrap(), "{\"n\":9}\n");
    }
}
