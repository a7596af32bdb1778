//! The prompt chain that turns a company's documents into candidate
//! entities, a company summary, and technology verdicts.
//!
//! Three strategies share the same templates:
//! - `single-prompt`: one request asking for entities, summary and verdicts.
//! - `cot`: extract → summarize → identify, each step fed the previous output.
//! - `stars`: the same chain with labeled few-shot examples in the identify step.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Company;
use crate::error::{Error, Result};
use crate::gateway::{CompletionRequest, Gateway};
use crate::lexicon::{Label, LabeledExample, TechnologyLexicon};
use crate::text::normalize;

pub const DEFAULT_DOC_CHAR_BUDGET: usize = 12_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    SinglePrompt,
    Cot,
    Stars,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::SinglePrompt => "single-prompt",
            StrategyKind::Cot => "cot",
            StrategyKind::Stars => "stars",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single-prompt" | "single" => Ok(StrategyKind::SinglePrompt),
            "cot" => Ok(StrategyKind::Cot),
            "stars" => Ok(StrategyKind::Stars),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (expected single-prompt, cot or stars)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptStrategy {
    pub kind: StrategyKind,
    pub few_shot_count: usize,
    pub template_set_id: String,
}

impl PromptStrategy {
    pub fn new(kind: StrategyKind, few_shot_count: usize, template_set_id: impl Into<String>) -> Result<Self> {
        if few_shot_count > 0 && kind != StrategyKind::Stars {
            return Err(Error::Config(format!(
                "few-shot examples are only used by the stars strategy, not {}",
                kind.as_str()
            )));
        }
        Ok(PromptStrategy {
            kind,
            few_shot_count,
            template_set_id: template_set_id.into(),
        })
    }

    pub fn single_prompt(set: &str) -> Self {
        Self::new(StrategyKind::SinglePrompt, 0, set).unwrap()
    }

    pub fn cot(set: &str) -> Self {
        Self::new(StrategyKind::Cot, 0, set).unwrap()
    }

    pub fn stars(few_shot_count: usize, set: &str) -> Self {
        Self::new(StrategyKind::Stars, few_shot_count, set).unwrap()
    }

    /// Stable key used for persisted results, e.g. `stars-5@v1`.
    pub fn key(&self) -> String {
        match self.kind {
            StrategyKind::Stars => format!("stars-{}@{}", self.few_shot_count, self.template_set_id),
            k => format!("{}@{}", k.as_str(), self.template_set_id),
        }
    }
}

impl fmt::Display for PromptStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepLabel {
    Extract,
    Summarize,
    Identify,
    Single,
}

impl StepLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            StepLabel::Extract => "extract",
            StepLabel::Summarize => "summarize",
            StepLabel::Identify => "identify",
            StepLabel::Single => "single",
        }
    }

    fn allowed_placeholders(self) -> &'static [&'static str] {
        match self {
            StepLabel::Extract | StepLabel::Single => &["company", "documents"],
            StepLabel::Summarize => &["company", "documents", "entities"],
            StepLabel::Identify => &["company", "entities", "summary", "examples"],
        }
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_][a-z0-9_]*)\}").unwrap())
}

/// Prompt templates keyed by step, plus a shared system text.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    pub id: String,
    pub system: String,
    templates: BTreeMap<StepLabel, String>,
}

const STEP_FILES: [StepLabel; 4] = [
    StepLabel::Extract,
    StepLabel::Summarize,
    StepLabel::Identify,
    StepLabel::Single,
];

impl TemplateSet {
    /// The `v1` templates compiled into the binary.
    pub fn builtin() -> Self {
        let mut templates = BTreeMap::new();
        templates.insert(StepLabel::Extract, include_str!("../templates/v1/extract.txt").to_string());
        templates.insert(StepLabel::Summarize, include_str!("../templates/v1/summarize.txt").to_string());
        templates.insert(StepLabel::Identify, include_str!("../templates/v1/identify.txt").to_string());
        templates.insert(StepLabel::Single, include_str!("../templates/v1/single.txt").to_string());
        TemplateSet {
            id: "v1".into(),
            system: include_str!("../templates/v1/system.txt").trim().to_string(),
            templates,
        }
    }

    /// Load `<dir>/<id>/{system,extract,summarize,identify,single}.txt`.
    pub fn load(dir: impl AsRef<Path>, id: &str) -> Result<Self> {
        let set_dir = dir.as_ref().join(id);
        let read = |name: &str| -> Result<String> {
            fs::read_to_string(set_dir.join(format!("{name}.txt"))).map_err(|_| Error::MissingTemplate {
                set: id.to_string(),
                step: name.to_string(),
            })
        };
        let system = read("system")?.trim().to_string();
        let mut templates = BTreeMap::new();
        for step in STEP_FILES {
            templates.insert(step, read(step.as_str())?);
        }
        let set = TemplateSet {
            id: id.to_string(),
            system,
            templates,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn with_template(mut self, step: StepLabel, text: impl Into<String>) -> Self {
        self.templates.insert(step, text.into());
        self
    }

    pub fn template(&self, step: StepLabel) -> Result<&str> {
        self.templates
            .get(&step)
            .map(String::as_str)
            .ok_or_else(|| Error::MissingTemplate {
                set: self.id.clone(),
                step: step.as_str().to_string(),
            })
    }

    /// Every placeholder must be one the step knows how to fill.
    pub fn validate(&self) -> Result<()> {
        for (step, text) in &self.templates {
            check_placeholders(*step, text)?;
        }
        Ok(())
    }
}

fn check_placeholders(step: StepLabel, template: &str) -> Result<()> {
    for cap in placeholder_re().captures_iter(template) {
        let name = &cap[1];
        if !step.allowed_placeholders().contains(&name) {
            return Err(Error::UnresolvedPlaceholder(name.to_string()));
        }
    }
    Ok(())
}

/// Single-pass substitution: values are never re-scanned for placeholders.
fn render(template: &str, bindings: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut last = 0;
    for cap in placeholder_re().captures_iter(template) {
        let whole = cap.get(0).unwrap();
        let name = &cap[1];
        let value = bindings
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::UnresolvedPlaceholder(name.to_string()))?;
        out.push_str(&template[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&template[last..]);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptStep {
    pub label: StepLabel,
    pub template: String,
}

/// Instantiated chain for one company. Documents and few-shot examples are
/// bound at build time; entities and summary are bound as the steps run.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptChain {
    pub strategy: PromptStrategy,
    pub company_id: String,
    pub company_name: String,
    pub system_text: String,
    pub steps: Vec<PromptStep>,
    pub documents_block: String,
    pub few_shot_block: String,
}

impl PromptChain {
    pub fn step(&self, label: StepLabel) -> Result<&PromptStep> {
        self.steps
            .iter()
            .find(|s| s.label == label)
            .ok_or_else(|| Error::Precondition(format!("chain has no {} step", label.as_str())))
    }

    /// Render a step's prompt text.
    pub fn render(
        &self,
        label: StepLabel,
        entities: Option<&[CandidateEntity]>,
        summary: Option<&str>,
    ) -> Result<String> {
        let step = self.step(label)?;
        let entity_block = entities.map(render_entities);
        let mut bindings: Vec<(&str, &str)> = vec![
            ("company", &self.company_name),
            ("documents", &self.documents_block),
            ("examples", &self.few_shot_block),
        ];
        if let Some(block) = &entity_block {
            bindings.push(("entities", block));
        }
        if let Some(summary) = summary {
            bindings.push(("summary", summary));
        }
        render(&step.template, &bindings)
    }

    fn request(&self, label: StepLabel, user_text: String) -> CompletionRequest {
        CompletionRequest::new(
            format!("{}/{}", self.company_id, label.as_str()),
            self.system_text.clone(),
            user_text,
        )
    }
}

fn render_entities(entities: &[CandidateEntity]) -> String {
    if entities.is_empty() {
        return "(none)".to_string();
    }
    entities
        .iter()
        .map(|e| format!("- {}", e.surface_form))
        .collect::<Vec<_>>()
        .join("\n")
}

/// `Example i: <form> - Technology` lines under an `Examples:` heading, or
/// the empty string when there are no examples.
pub fn render_few_shot_block(examples: &[LabeledExample]) -> String {
    if examples.is_empty() {
        return String::new();
    }
    let mut out = String::from("\nExamples:\n");
    for (i, e) in examples.iter().enumerate() {
        out.push_str(&format!("Example {}: {} - {}\n", i + 1, e.surface_form, e.label.as_prompt_text()));
    }
    out
}

/// Documents in file order, each under a `[id (source type)]` header, cut
/// to `char_budget` characters.
pub fn render_documents(company: &Company, char_budget: usize) -> String {
    let full = company
        .documents
        .iter()
        .map(|d| format!("[{} ({})]\n{}", d.id, d.source_type.as_str(), d.text.trim()))
        .collect::<Vec<_>>()
        .join("\n\n");
    match full.char_indices().nth(char_budget) {
        None => full,
        Some((cut, _)) => {
            tracing::warn!(
                company = %company.id,
                chars = full.chars().count(),
                budget = char_budget,
                "documents truncated to budget"
            );
            full[..cut].to_string()
        }
    }
}

pub fn build_prompt_chain(
    company: &Company,
    strategy: &PromptStrategy,
    examples: &[LabeledExample],
    templates: &TemplateSet,
    doc_char_budget: usize,
) -> Result<PromptChain> {
    if templates.id != strategy.template_set_id {
        return Err(Error::MissingTemplate {
            set: strategy.template_set_id.clone(),
            step: "*".into(),
        });
    }
    if examples.len() != strategy.few_shot_count {
        return Err(Error::Precondition(format!(
            "strategy {} expects {} examples, got {}",
            strategy,
            strategy.few_shot_count,
            examples.len()
        )));
    }
    if !company.is_extraction_eligible() {
        return Err(Error::Precondition(format!("company {:?} has no documents", company.id)));
    }
    let labels: &[StepLabel] = match strategy.kind {
        StrategyKind::SinglePrompt => &[StepLabel::Single],
        StrategyKind::Cot | StrategyKind::Stars => {
            &[StepLabel::Extract, StepLabel::Summarize, StepLabel::Identify]
        }
    };
    let mut steps = Vec::with_capacity(labels.len());
    for &label in labels {
        let template = templates.template(label)?;
        check_placeholders(label, template)?;
        steps.push(PromptStep {
            label,
            template: template.to_string(),
        });
    }
    Ok(PromptChain {
        strategy: strategy.clone(),
        company_id: company.id.clone(),
        company_name: company.name.clone(),
        system_text: templates.system.clone(),
        steps,
        documents_block: render_documents(company, doc_char_budget),
        few_shot_block: render_few_shot_block(examples),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateEntity {
    pub surface_form: String,
    /// First document whose text mentions the form; `None` when the model
    /// inferred it.
    pub source_document_id: Option<String>,
    pub step: StepLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompanySummary {
    pub company_id: String,
    pub text: String,
    pub referenced_entity_forms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TechnologyMention {
    pub surface_form: String,
    pub matched_tech_id: Option<String>,
    pub verdict: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub company_id: String,
    pub strategy: PromptStrategy,
    pub entities: Vec<CandidateEntity>,
    pub summary: CompanySummary,
    pub technology_mentions: Vec<TechnologyMention>,
}

impl ExtractionResult {
    pub fn technologies(&self) -> impl Iterator<Item = &TechnologyMention> {
        self.technology_mentions
            .iter()
            .filter(|m| m.verdict == Label::Technology)
    }

    /// Checks the structural invariants; used by tests and on load.
    pub fn check_invariants(&self, lexicon: &TechnologyLexicon) -> Result<()> {
        let forms: HashSet<&str> = self.entities.iter().map(|e| e.surface_form.as_str()).collect();
        for m in &self.technology_mentions {
            if !forms.contains(m.surface_form.as_str()) {
                return Err(Error::Invalid(format!("mention {:?} is not an entity", m.surface_form)));
            }
            if m.matched_tech_id.is_some() && m.verdict != Label::Technology {
                return Err(Error::Invalid(format!("matched mention {:?} not a technology", m.surface_form)));
            }
            let expected = lexicon.lookup(&m.surface_form).map(|t| t.id.clone());
            if expected.is_some() && m.matched_tech_id != expected {
                return Err(Error::Invalid(format!("lexicon override missed for {:?}", m.surface_form)));
            }
        }
        if self.summary.text.trim().is_empty() {
            return Err(Error::Invalid("empty summary".into()));
        }
        Ok(())
    }
}

fn bullet_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:[-*•]|\d+[.)])\s+(.+?)\s*$").unwrap())
}

fn clean_item(item: &str) -> String {
    item.trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '`')
        .trim_end_matches([',', ';', '.'])
        .trim()
        .to_string()
}

fn parse_bracketed(s: &str) -> Option<Vec<String>> {
    let s = s.trim();
    if !(s.starts_with('[') && s.ends_with(']')) {
        return None;
    }
    if let Ok(items) = serde_json::from_str::<Vec<String>>(s) {
        return Some(items.iter().map(|i| clean_item(i)).filter(|i| !i.is_empty()).collect());
    }
    let inner = &s[1..s.len() - 1];
    if inner.contains(['[', ']', '{', '}']) {
        return None;
    }
    Some(inner.split(',').map(clean_item).filter(|i| !i.is_empty()).collect())
}

fn parse_bullets(lines: &[&str]) -> Option<Vec<String>> {
    let mut out = Vec::new();
    for line in lines {
        let caps = bullet_re().captures(line)?;
        let item = clean_item(&caps[1]);
        if !item.is_empty() {
            out.push(item);
        }
    }
    Some(out)
}

fn is_empty_marker(s: &str) -> bool {
    matches!(normalize(s).as_str(), "" | "none" | "no entities" | "n/a")
}

/// Parse a bulleted/numbered list or a bracketed list. A second pass
/// tolerates prose around the list before giving up.
pub fn parse_entity_list(raw: &str) -> Result<Vec<String>> {
    let trimmed = raw.trim();
    if trimmed.is_empty() || trimmed == "[]" || is_empty_marker(trimmed) {
        return Ok(Vec::new());
    }
    if let Some(items) = parse_bracketed(trimmed) {
        return Ok(items);
    }
    let lines: Vec<&str> = trimmed.lines().filter(|l| !l.trim().is_empty()).collect();
    if let Some(items) = parse_bullets(&lines) {
        return Ok(items);
    }

    // repair: drop the prose and keep whatever list is embedded in it
    if let (Some(open), Some(close)) = (trimmed.find('['), trimmed.rfind(']')) {
        if open < close {
            if let Some(items) = parse_bracketed(&trimmed[open..=close]) {
                return Ok(items);
            }
        }
    }
    let bulleted: Vec<&str> = lines.iter().copied().filter(|l| bullet_re().is_match(l)).collect();
    if !bulleted.is_empty() {
        if let Some(items) = parse_bullets(&bulleted) {
            return Ok(items);
        }
    }
    Err(Error::Unparseable {
        what: "entity list",
        raw: raw.to_string(),
    })
}

fn verdict_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^\s*(?:[-*•]|\d+[.)])?\s*(?:example\s+\d+\s*:\s*)?(.+?)\s*(?:\s-\s|:|\s\x{2013}\s|\s\x{2014}\s|=>|->)\s*(not\s+a\s+technology|not\s+technology|non-technology|technology)\s*\.?\s*$",
        )
        .unwrap()
    })
}

fn parse_verdict_line(line: &str) -> Option<(String, Label)> {
    let caps = verdict_re().captures(line)?;
    let form = clean_item(&caps[1]);
    if form.is_empty() {
        return None;
    }
    let label = if caps[2].eq_ignore_ascii_case("technology") {
        Label::Technology
    } else {
        Label::NotTechnology
    };
    Some((form, label))
}

/// Parse `<entity> - Technology` / `<entity> - Not a Technology` lines.
/// Strict pass requires every non-empty line to parse; the repair pass
/// keeps the lines that do.
pub fn parse_verdicts(raw: &str) -> Result<Vec<(String, Label)>> {
    let lines: Vec<&str> = raw.lines().filter(|l| !l.trim().is_empty()).collect();
    let parsed: Vec<Option<(String, Label)>> = lines.iter().map(|l| parse_verdict_line(l)).collect();
    if !parsed.is_empty() && parsed.iter().all(Option::is_some) {
        return Ok(parsed.into_iter().flatten().collect());
    }
    let kept: Vec<(String, Label)> = parsed.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::Unparseable {
            what: "technology verdicts",
            raw: raw.to_string(),
        });
    }
    Ok(kept)
}

fn dedupe_entities(company: &Company, forms: Vec<String>, step: StepLabel) -> Vec<CandidateEntity> {
    let mut seen = HashSet::new();
    let docs: Vec<(String, &str)> = company
        .documents
        .iter()
        .map(|d| (normalize(&d.text), d.id.as_str()))
        .collect();
    let mut out = Vec::new();
    for form in forms {
        let key = normalize(&form);
        if key.is_empty() || !seen.insert(key.clone()) {
            continue;
        }
        let source = docs
            .iter()
            .find(|(text, _)| text.contains(&key))
            .map(|(_, id)| id.to_string());
        out.push(CandidateEntity {
            surface_form: form,
            source_document_id: source,
            step,
        });
    }
    out
}

pub fn extract_entities(company: &Company, gateway: &Gateway, chain: &PromptChain) -> Result<Vec<CandidateEntity>> {
    let prompt = chain.render(StepLabel::Extract, None, None)?;
    let response = gateway.complete(&chain.request(StepLabel::Extract, prompt))?;
    let forms = parse_entity_list(&response.text)?;
    Ok(dedupe_entities(company, forms, StepLabel::Extract))
}

fn referenced_forms(text: &str, entities: &[CandidateEntity]) -> Vec<String> {
    let norm = normalize(text);
    entities
        .iter()
        .filter(|e| norm.contains(&normalize(&e.surface_form)))
        .map(|e| e.surface_form.clone())
        .collect()
}

pub fn summarize_company(
    company: &Company,
    entities: &[CandidateEntity],
    gateway: &Gateway,
    chain: &PromptChain,
) -> Result<CompanySummary> {
    let prompt = chain.render(StepLabel::Summarize, Some(entities), None)?;
    let response = gateway.complete(&chain.request(StepLabel::Summarize, prompt))?;
    let text = response.text.trim().to_string();
    if text.is_empty() {
        return Err(Error::Unparseable {
            what: "company summary",
            raw: response.text,
        });
    }
    Ok(CompanySummary {
        company_id: company.id.clone(),
        referenced_entity_forms: referenced_forms(&text, entities),
        text,
    })
}

/// Combine model verdicts with the lexicon: forms the lexicon knows are
/// technologies regardless of what the model said.
fn apply_verdicts(
    entities: &[CandidateEntity],
    verdicts: &[(String, Label)],
    lexicon: &TechnologyLexicon,
) -> Vec<TechnologyMention> {
    let mut by_form: BTreeMap<String, Label> = BTreeMap::new();
    for (form, label) in verdicts {
        by_form.entry(normalize(form)).or_insert(*label);
    }
    entities
        .iter()
        .map(|e| {
            if let Some(tech) = lexicon.lookup(&e.surface_form) {
                return TechnologyMention {
                    surface_form: e.surface_form.clone(),
                    matched_tech_id: Some(tech.id.clone()),
                    verdict: Label::Technology,
                };
            }
            let verdict = by_form.get(&normalize(&e.surface_form)).copied().unwrap_or_else(|| {
                tracing::warn!(entity = %e.surface_form, "no verdict from model; treating as not a technology");
                Label::NotTechnology
            });
            TechnologyMention {
                surface_form: e.surface_form.clone(),
                matched_tech_id: None,
                verdict,
            }
        })
        .collect()
}

pub fn identify_technologies(
    entities: &[CandidateEntity],
    summary: &CompanySummary,
    lexicon: &TechnologyLexicon,
    gateway: &Gateway,
    chain: &PromptChain,
) -> Result<Vec<TechnologyMention>> {
    if entities.is_empty() {
        return Ok(Vec::new());
    }
    let prompt = chain.render(StepLabel::Identify, Some(entities), Some(&summary.text))?;
    let response = gateway.complete(&chain.request(StepLabel::Identify, prompt))?;
    let verdicts = parse_verdicts(&response.text)?;
    Ok(apply_verdicts(entities, &verdicts, lexicon))
}

#[derive(Debug, Default)]
struct Sections {
    entities: Vec<String>,
    summary: Vec<String>,
    verdicts: Vec<String>,
    seen: BTreeSet<&'static str>,
}

fn split_single_response(raw: &str) -> Sections {
    let mut sections = Sections::default();
    let mut current: Option<&'static str> = None;
    for line in raw.lines() {
        let head = line
            .trim()
            .trim_start_matches(['#', '*', ' '])
            .to_ascii_lowercase();
        let matched = ["entities", "summary", "verdicts"]
            .into_iter()
            .find(|name| head.starts_with(name) && head[name.len()..].trim_start_matches('*').starts_with(':'));
        if let Some(name) = matched {
            current = Some(name);
            sections.seen.insert(name);
            let rest = line.split_once(':').map(|(_, r)| r.trim()).unwrap_or("");
            let rest = rest.trim_start_matches('*').trim();
            if !rest.is_empty() {
                push_section(&mut sections, name, rest);
            }
            continue;
        }
        if let Some(name) = current {
            push_section(&mut sections, name, line);
        }
    }
    sections
}

fn push_section(s: &mut Sections, name: &str, line: &str) {
    match name {
        "entities" => s.entities.push(line.to_string()),
        "summary" => s.summary.push(line.to_string()),
        _ => s.verdicts.push(line.to_string()),
    }
}

/// Runs the chain for one company. Holds the pieces that are fixed across
/// companies in an experiment.
#[derive(Debug, Clone)]
pub struct Extractor {
    pub templates: TemplateSet,
    pub doc_char_budget: usize,
    pub few_shot_seed: u64,
}

impl Extractor {
    pub fn new(templates: TemplateSet) -> Self {
        Extractor {
            templates,
            doc_char_budget: DEFAULT_DOC_CHAR_BUDGET,
            few_shot_seed: 0,
        }
    }

    pub fn run(
        &self,
        company: &Company,
        strategy: &PromptStrategy,
        lexicon: &TechnologyLexicon,
        gateway: &Gateway,
    ) -> Result<ExtractionResult> {
        let examples = lexicon.few_shot_examples(strategy.few_shot_count, self.few_shot_seed)?;
        let chain = build_prompt_chain(company, strategy, &examples, &self.templates, self.doc_char_budget)?;
        match strategy.kind {
            StrategyKind::SinglePrompt => run_single(company, lexicon, gateway, &chain),
            StrategyKind::Cot | StrategyKind::Stars => {
                let entities = extract_entities(company, gateway, &chain)
                    .map_err(|e| e.at_step(&company.id, "extract"))?;
                let summary = summarize_company(company, &entities, gateway, &chain)
                    .map_err(|e| e.at_step(&company.id, "summarize"))?;
                let technology_mentions = identify_technologies(&entities, &summary, lexicon, gateway, &chain)
                    .map_err(|e| e.at_step(&company.id, "identify"))?;
                Ok(ExtractionResult {
                    company_id: company.id.clone(),
                    strategy: strategy.clone(),
                    entities,
                    summary,
                    technology_mentions,
                })
            }
        }
    }
}

fn run_single(
    company: &Company,
    lexicon: &TechnologyLexicon,
    gateway: &Gateway,
    chain: &PromptChain,
) -> Result<ExtractionResult> {
    let step = |e: Error| e.at_step(&company.id, "single");
    let prompt = chain.render(StepLabel::Single, None, None).map_err(step)?;
    let response = gateway
        .complete(&chain.request(StepLabel::Single, prompt))
        .map_err(step)?;
    let sections = split_single_response(&response.text);
    for required in ["entities", "summary"] {
        if !sections.seen.contains(required) {
            return Err(step(Error::Unparseable {
                what: "single-prompt sections",
                raw: response.text.clone(),
            }));
        }
    }
    let forms = parse_entity_list(&sections.entities.join("\n")).map_err(step)?;
    let entities = dedupe_entities(company, forms, StepLabel::Single);
    let text = sections
        .summary
        .iter()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    if text.is_empty() {
        return Err(step(Error::Unparseable {
            what: "company summary",
            raw: response.text.clone(),
        }));
    }
    let verdicts = if entities.is_empty() {
        Vec::new()
    } else {
        parse_verdicts(&sections.verdicts.join("\n")).map_err(step)?
    };
    let summary = CompanySummary {
        company_id: company.id.clone(),
        referenced_entity_forms: referenced_forms(&text, &entities),
        text,
    };
    Ok(ExtractionResult {
        company_id: company.id.clone(),
        strategy: chain.strategy.clone(),
        technology_mentions: apply_verdicts(&entities, &verdicts, lexicon),
        entities,
        summary,
    })
}
