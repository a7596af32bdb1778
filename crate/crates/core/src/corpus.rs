//! Companies, their documents, and ground-truth technology assignments.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::TechnologyLexicon;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceType {
    Webpage,
    Patent,
    JobPosting,
    Other,
}

impl SourceType {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceType::Webpage => "webpage",
            SourceType::Patent => "patent",
            SourceType::JobPosting => "job-posting",
            SourceType::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source_type: SourceType,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Company {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub documents: Vec<Document>,
    #[serde(default)]
    pub ground_truth_tech_ids: BTreeSet<String>,
}

impl Company {
    pub fn is_extraction_eligible(&self) -> bool {
        !self.documents.is_empty()
    }
}

/// How unresolvable ground-truth ids are treated at load time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Validation {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    companies: Vec<Company>,
    index: HashMap<String, usize>,
    pub provenance: String,
}

impl Corpus {
    pub fn load(path: impl AsRef<Path>, lexicon: &TechnologyLexicon, mode: Validation) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading corpus {}", path.display()), e))?;
        let mut companies = Vec::new();
        let mut lines: HashMap<String, usize> = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let mut company: Company = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: e.to_string(),
            })?;
            if company.id.trim().is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: "empty company id".into(),
                });
            }
            if let Some(doc) = company.documents.iter().find(|d| d.text.trim().is_empty()) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: format!("company {:?}: document {:?} has empty text", company.id, doc.id),
                });
            }
            if let Some(&first_line) = lines.get(&company.id) {
                return Err(Error::DuplicateId {
                    id: company.id,
                    first_line,
                    second_line: lineno,
                });
            }
            let unresolved: Vec<String> = company
                .ground_truth_tech_ids
                .iter()
                .filter(|id| lexicon.get(id).is_none())
                .cloned()
                .collect();
            for tech in unresolved {
                match mode {
                    Validation::Strict => {
                        return Err(Error::UnresolvedGroundTruth {
                            company: company.id,
                            tech,
                        })
                    }
                    Validation::Lenient => {
                        tracing::warn!(company = %company.id, tech = %tech, "dropping unresolvable ground-truth id");
                        company.ground_truth_tech_ids.remove(&tech);
                    }
                }
            }
            lines.insert(company.id.clone(), lineno);
            companies.push(company);
        }
        let mut corpus = Corpus::from_companies(companies)?;
        corpus.provenance = path.display().to_string();
        Ok(corpus)
    }

    pub fn from_companies(companies: Vec<Company>) -> Result<Self> {
        let mut index = HashMap::with_capacity(companies.len());
        for (i, c) in companies.iter().enumerate() {
            if index.insert(c.id.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate company id {:?}", c.id)));
            }
        }
        Ok(Corpus {
            companies,
            index,
            provenance: String::new(),
        })
    }

    /// Companies in file order.
    pub fn companies(&self) -> &[Company] {
        &self.companies
    }

    pub fn get(&self, id: &str) -> Option<&Company> {
        self.index.get(id).map(|&i| &self.companies[i])
    }

    pub fn len(&self) -> usize {
        self.companies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.companies.is_empty()
    }

    pub fn ground_truth(&self) -> BTreeMap<String, BTreeSet<String>> {
        self.companies
            .iter()
            .map(|c| (c.id.clone(), c.ground_truth_tech_ids.clone()))
            .collect()
    }

    pub fn tech_to_companies(&self) -> BTreeMap<String, BTreeSet<String>> {
        invert(&self.ground_truth())
    }
}

/// Swap keys and members of a relation. Keys with empty sets vanish.
pub fn invert(map: &BTreeMap<String, BTreeSet<String>>) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (key, members) in map {
        for m in members {
            out.entry(m.clone()).or_default().insert(key.clone());
        }
    }
    out
}
