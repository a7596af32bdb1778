//! The predefined technology universe and the labeled tech/non-tech pool
//! used for few-shot prompting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{CompletionRequest, Gateway};
use crate::text::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefinitionSource {
    CuratedFile,
    LlmGenerated,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Technology {
    pub id: String,
    pub name: String,
    pub definition: String,
    pub definition_source: DefinitionSource,
    #[serde(default)]
    pub aliases: Vec<String>,
}

impl Technology {
    pub fn has_definition(&self) -> bool {
        self.definition_source != DefinitionSource::Missing
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Technology,
    NotTechnology,
}

impl Label {
    /// Rendering used inside few-shot blocks and expected back from the model.
    pub fn as_prompt_text(self) -> &'static str {
        match self {
            Label::Technology => "Technology",
            Label::NotTechnology => "Not a Technology",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub surface_form: String,
    pub label: Label,
}

/// One line of a lexicon file. Records carrying a `label` belong to the
/// labeled-example pool; the others are technologies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexiconRecord {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub definition: String,
    #[serde(default = "missing_source")]
    pub definition_source: DefinitionSource,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

fn missing_source() -> DefinitionSource {
    DefinitionSource::Missing
}

impl From<&Technology> for LexiconRecord {
    fn from(t: &Technology) -> Self {
        LexiconRecord {
            id: t.id.clone(),
            name: t.name.clone(),
            definition: t.definition.clone(),
            definition_source: t.definition_source,
            aliases: t.aliases.clone(),
            label: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TechnologyLexicon {
    technologies: BTreeMap<String, Technology>,
    labeled_examples: Vec<LabeledExample>,
    normalization_index: HashMap<String, String>,
}

impl TechnologyLexicon {
    /// Load a line-delimited lexicon file. Blank lines are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading lexicon {}", path.display()), e))?;
        let mut records = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: LexiconRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            records.push((idx + 1, record));
        }
        Self::from_records(records).map_err(|e| match e {
            Error::Invalid(message) => Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message,
            },
            other => other,
        })
    }

    /// Build from `(line number, record)` pairs.
    pub fn from_records(records: impl IntoIterator<Item = (usize, LexiconRecord)>) -> Result<Self> {
        let mut lexicon = TechnologyLexicon::default();
        let mut tech_lines: HashMap<String, usize> = HashMap::new();
        let mut seen_examples: HashSet<String> = HashSet::new();

        for (line, record) in records {
            if record.id.trim().is_empty() {
                return Err(invalid_at(line, "empty id"));
            }
            if record.name.trim().is_empty() {
                return Err(invalid_at(line, &format!("record {:?} has an empty name", record.id)));
            }
            if let Some(label) = record.label {
                if !seen_examples.insert(normalize(&record.name)) {
                    return Err(invalid_at(
                        line,
                        &format!("duplicate labeled surface form {:?}", record.name),
                    ));
                }
                lexicon.labeled_examples.push(LabeledExample {
                    surface_form: record.name.trim().to_string(),
                    label,
                });
                continue;
            }

            let missing = record.definition_source == DefinitionSource::Missing;
            if missing != record.definition.trim().is_empty() {
                return Err(invalid_at(
                    line,
                    &format!(
                        "record {:?}: definition_source is {:?} but definition is {}",
                        record.id,
                        record.definition_source,
                        if record.definition.trim().is_empty() { "empty" } else { "present" }
                    ),
                ));
            }
            if let Some(&first_line) = tech_lines.get(&record.id) {
                return Err(Error::DuplicateId {
                    id: record.id,
                    first_line,
                    second_line: line,
                });
            }
            tech_lines.insert(record.id.clone(), line);
            lexicon.insert(Technology {
                id: record.id,
                name: record.name.trim().to_string(),
                definition: record.definition.trim().to_string(),
                definition_source: record.definition_source,
                aliases: record.aliases,
            });
        }
        Ok(lexicon)
    }

    fn insert(&mut self, tech: Technology) {
        for form in std::iter::once(&tech.name).chain(tech.aliases.iter()) {
            let key = normalize(form);
            if !key.is_empty() {
                // first writer wins so lookups stay stable under reordering of aliases
                self.normalization_index.entry(key).or_insert_with(|| tech.id.clone());
            }
        }
        self.technologies.insert(tech.id.clone(), tech);
    }

    /// Add the labeled records of another lexicon file to the example pool.
    pub fn with_labeled_examples(mut self, pool: &TechnologyLexicon) -> Result<Self> {
        let mut seen: HashSet<String> =
            self.labeled_examples.iter().map(|e| normalize(&e.surface_form)).collect();
        for example in &pool.labeled_examples {
            if !seen.insert(normalize(&example.surface_form)) {
                return Err(Error::Invalid(format!(
                    "duplicate labeled surface form {:?}",
                    example.surface_form
                )));
            }
            self.labeled_examples.push(example.clone());
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.technologies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.technologies.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Technology> {
        self.technologies.get(id)
    }

    /// Technologies in ascending id order.
    pub fn technologies(&self) -> impl Iterator<Item = &Technology> {
        self.technologies.values()
    }

    pub fn labeled_examples(&self) -> &[LabeledExample] {
        &self.labeled_examples
    }

    /// Case- and whitespace-insensitive match against names and aliases.
    pub fn lookup(&self, surface_form: &str) -> Option<&Technology> {
        let key = normalize(surface_form);
        self.normalization_index
            .get(&key)
            .and_then(|id| self.technologies.get(id))
    }

    /// Replace a technology (same id) with an updated value, e.g. after its
    /// definition was resolved.
    pub fn replace(&mut self, tech: Technology) -> Result<()> {
        if !self.technologies.contains_key(&tech.id) {
            return Err(Error::Invalid(format!("unknown technology id {:?}", tech.id)));
        }
        self.technologies.insert(tech.id.clone(), tech);
        Ok(())
    }

    /// Pick `n` labeled examples, split between the two labels as evenly as
    /// the pools allow. Pure function of (pool, n, seed).
    pub fn few_shot_examples(&self, n: usize, seed: u64) -> Result<Vec<LabeledExample>> {
        if n > self.labeled_examples.len() {
            return Err(Error::NotEnoughExamples {
                requested: n,
                available: self.labeled_examples.len(),
            });
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tech: Vec<usize> = self.indices_with(Label::Technology);
        let other: Vec<usize> = self.indices_with(Label::NotTechnology);

        // which label gets the odd extra example is decided by the seed
        let (major, minor) = if rng.gen::<bool>() { (&tech, &other) } else { (&other, &tech) };
        let mut want_major = n.div_ceil(2).min(major.len());
        let want_minor = (n - want_major).min(minor.len());
        want_major = n - want_minor;

        let mut pick_major: Vec<usize> =
            major.choose_multiple(&mut rng, want_major).copied().collect();
        let mut pick_minor: Vec<usize> =
            minor.choose_multiple(&mut rng, want_minor).copied().collect();
        pick_major.sort_unstable();
        pick_minor.sort_unstable();

        let mut out = Vec::with_capacity(n);
        let mut a = pick_major.into_iter();
        let mut b = pick_minor.into_iter();
        loop {
            match (a.next(), b.next()) {
                (None, None) => break,
                (x, y) => {
                    out.extend(x.map(|i| self.labeled_examples[i].clone()));
                    out.extend(y.map(|i| self.labeled_examples[i].clone()));
                }
            }
        }
        Ok(out)
    }

    fn indices_with(&self, label: Label) -> Vec<usize> {
        self.labeled_examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// Write the technologies back out in lexicon-file format.
    pub fn write_technologies(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for tech in self.technologies() {
            out.push_str(&serde_json::to_string(&LexiconRecord::from(tech))?);
            out.push('\n');
        }
        fs::write(path.as_ref(), out)
            .map_err(|e| Error::io(format!("writing {}", path.as_ref().display()), e))
    }
}

fn invalid_at(line: usize, msg: &str) -> Error {
    Error::Invalid(format!("line {line}: {msg}"))
}

/// Fill in a missing definition through the gateway. Curated and
/// previously generated definitions are returned untouched.
pub fn resolve_definition(tech: &Technology, gateway: &Gateway) -> Result<Technology> {
    if tech.has_definition() {
        return Ok(tech.clone());
    }
    let request = CompletionRequest::new(
        format!("definition/{}", tech.id),
        "You write concise, factual encyclopedia definitions of technologies.",
        format!(
            "Define the technology \"{}\" in one or two sentences. Reply with the definition only.",
            tech.name
        ),
    )
    .with_max_output_tokens(200);
    let result = gateway.complete(&request)?;
    let definition = result.text.trim().to_string();
    if definition.is_empty() {
        return Err(Error::Unparseable {
            what: "definition",
            raw: result.text,
        });
    }
    Ok(Technology {
        definition,
        definition_source: DefinitionSource::LlmGenerated,
        ..tech.clone()
    })
}
