use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Ablation,
    FewShotSweep,
    RankingComparison,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Ablation => "ablation",
            ExperimentKind::FewShotSweep => "few-shot-sweep",
            ExperimentKind::RankingComparison => "ranking-comparison",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ablation" => Ok(ExperimentKind::Ablation),
            "few-shot-sweep" | "sweep" => Ok(ExperimentKind::FewShotSweep),
            "ranking-comparison" | "ranking" => Ok(ExperimentKind::RankingComparison),
            other => Err(Error::Config(format!("unknown experiment {other:?}"))),
        }
    }
}

/// One cell of an experiment matrix. `mean_p_at_k` is stored rounded to six
/// decimals so that emitted text parses back to the same value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub direction: String,
    pub method: String,
    pub few_shot_count: usize,
    pub k: usize,
    pub mean_p_at_k: f64,
    pub n_evaluated: usize,
    pub n_excluded: usize,
}

impl ReportRow {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        experiment: ExperimentKind,
        direction: &str,
        method: &str,
        few_shot_count: usize,
        k: usize,
        mean: f64,
        n_evaluated: usize,
        n_excluded: usize,
    ) -> Self {
        ReportRow {
            experiment: experiment.as_str().to_string(),
            direction: direction.to_string(),
            method: method.to_string(),
            few_shot_count,
            k,
            mean_p_at_k: round6(mean),
            n_evaluated,
            n_excluded,
        }
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6 + 0.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Digest of the extraction results every row was computed from, when
    /// the experiment shares one extraction across methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_digest: Option<String>,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TableText,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table-text" | "text" | "txt" => Ok(ReportFormat::TableText),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

pub const CSV_COLUMNS: [&str; 8] = [
    "experiment",
    "direction",
    "method",
    "few_shot_count",
    "k",
    "mean_p_at_k",
    "n_evaluated",
    "n_excluded",
];

/// Published reference values for display next to local results. Never
/// used as expected values.
pub fn paper_reported(row: &ReportRow) -> Option<f64> {
    const KS: [usize; 4] = [3, 5, 7, 10];
    let col = KS.iter().position(|&k| k == row.k)?;
    let table1 = |method: &str, direction: &str| -> Option<[f64; 4]> {
        Some(match (method, direction) {
            ("single-prompt", "com-tech") => [0.583, 0.554, 0.507, 0.469],
            ("cot", "com-tech") => [0.667, 0.563, 0.527, 0.493],
            ("stars", "com-tech") => [0.762, 0.654, 0.616, 0.573],
            ("single-prompt", "tech-com") => [0.582, 0.515, 0.486, 0.423],
            ("cot", "tech-com") => [0.628, 0.556, 0.503, 0.457],
            ("stars", "tech-com") => [0.725, 0.634, 0.588, 0.549],
            _ => return None,
        })
    };
    match row.experiment.as_str() {
        "ablation" => {
            if row.method == "stars" && row.few_shot_count != 5 {
                return None;
            }
            table1(&row.method, &row.direction).map(|v| v[col])
        }
        "few-shot-sweep" => match (row.few_shot_count, row.k) {
            (0, 3) => Some(0.667),
            (0, 5) => Some(0.563),
            (0, 7) => Some(0.527),
            (5, 3) => Some(0.762),
            (5, 5) => Some(0.654),
            (5, 7) => Some(0.616),
            (7, 3) => Some(0.765),
            (9, 3) => Some(0.762),
            _ => None,
        },
        "ranking-comparison" => match (row.method.as_str(), row.k) {
            ("semantic", _) => Some([0.762, 0.654, 0.616, 0.573][col]),
            ("llm-score", 3) => Some(0.604),
            ("tfidf", 3) => Some(0.561),
            _ => None,
        },
        _ => None,
    }
}

impl ExperimentReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Invalid(format!("csv: {e}"));
        w.write_record(CSV_COLUMNS).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.experiment.clone(),
                r.direction.clone(),
                r.method.clone(),
                r.few_shot_count.to_string(),
                r.k.to_string(),
                format!("{:.6}", r.mean_p_at_k),
                r.n_evaluated.to_string(),
                r.n_excluded.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Aligned table with a `paper-reported` column of published values.
    pub fn to_table_text(&self) -> String {
        let mut out = String::new();
        if let Some(d) = &self.input_digest {
            out.push_str(&format!("input digest: {d}\n"));
        }
        out.push_str(&format!(
            "{:<20} {:<9} {:<14} {:>8} {:>4} {:>12} {:>11} {:>10} {:>15}\n",
            "experiment", "direction", "method", "few_shot", "k", "mean_p_at_k", "n_evaluated", "n_excluded", "paper-reported"
        ));
        for r in &self.rows {
            let reference = paper_reported(r).map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{:<20} {:<9} {:<14} {:>8} {:>4} {:>12.6} {:>11} {:>10} {:>15}\n",
                r.experiment, r.direction, r.method, r.few_shot_count, r.k, r.mean_p_at_k, r.n_evaluated, r.n_excluded, reference
            ));
        }
        out.push_str("paper-reported values are published figures for comparison only; they are not reproduced by this run.\n");
        out
    }

    /// Wide CSV for plotting: sweeps get one row per few-shot count, ranking
    /// comparisons one row per k. `None` for other experiments.
    pub fn to_plot_csv(&self) -> Option<String> {
        let first = self.rows.first()?;
        let mut ks: Vec<usize> = self.rows.iter().map(|r| r.k).collect();
        ks.sort_unstable();
        ks.dedup();
        match first.experiment.as_str() {
            "few-shot-sweep" => {
                let mut counts: Vec<usize> = self.rows.iter().map(|r| r.few_shot_count).collect();
                counts.sort_unstable();
                counts.dedup();
                let mut out = String::from("few_shot_count");
                for k in &ks {
                    out.push_str(&format!(",p_at_{k}"));
                }
                out.push('\n');
                for c in counts {
                    out.push_str(&c.to_string());
                    for k in &ks {
                        let v = self.rows.iter().find(|r| r.few_shot_count == c && r.k == *k);
                        out.push_str(&v.map(|r| format!(",{:.6}", r.mean_p_at_k)).unwrap_or_else(|| ",".into()));
                    }
                    out.push('\n');
                }
                Some(out)
            }
            "ranking-comparison" => {
                let mut methods: Vec<&str> = Vec::new();
                for r in &self.rows {
                    if !methods.contains(&r.method.as_str()) {
                        methods.push(&r.method);
                    }
                }
                let mut out = String::from("k");
                for m in &methods {
                    out.push_str(&format!(",{m}"));
                }
                out.push('\n');
                for k in ks {
                    out.push_str(&k.to_string());
                    for m in &methods {
                        let v = self.rows.iter().find(|r| r.method == *m && r.k == k);
                        out.push_str(&v.map(|r| format!(",{:.6}", r.mean_p_at_k)).unwrap_or_else(|| ",".into()));
                    }
                    out.push('\n');
                }
                Some(out)
            }
            _ => None,
        }
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::TableText => Ok(self.to_table_text()),
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json(),
        }
    }

    pub fn emit(&self, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Precondition("refusing to emit an empty report".into()));
        }
        let path = path.as_ref();
        fs::write(path, self.render(format)?)
            .map_err(|e| Error::io(format!("writing report {}", path.display()), e))
    }
}

pub fn parse_report_csv(text: &str) -> Result<ExperimentReport> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Invalid(format!("csv: {e}")))?.clone();
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(Error::Invalid(format!("unexpected csv header {headers:?}")));
    }
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record.map_err(|e| Error::Invalid(format!("csv: {e}")))?);
    }
    Ok(ExperimentReport {
        input_digest: None,
        rows,
    })
}

pub fn parse_report_json(text: &str) -> Result<ExperimentReport> {
    Ok(serde_json::from_str(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(n: usize) -> ExperimentReport {
        let rows = (0..n)
            .map(|i| {
                ReportRow::new(
                    ExperimentKind::Ablation,
                    if i % 2 == 0 { "com-tech" } else { "tech-com" },
                    ["single-prompt", "cot", "stars"][i % 3],
                    if i % 3 == 2 { 5 } else { 0 },
                    [3, 5, 7, 10][i % 4],
                    (i as f64 + 1.0) / (n as f64 + 3.0),
                    10,
                    i % 2,
                )
            })
            .collect();
        ExperimentReport { input_digest: None, rows }
    }

    #[test]
    fn csv_shape_and_round_trip() {
        let r = report(24);
        let csv = r.to_csv().unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 25);
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert_eq!(parse_report_csv(&csv).unwrap(), r);
        assert_eq!(r.to_csv().unwrap(), csv);
    }

    #[test]
    fn json_round_trip_keeps_digest() {
        let mut r = report(5);
        r.input_digest = Some("abc".into());
        let json = r.to_json().unwrap();
        assert_eq!(parse_report_json(&json).unwrap(), r);
    }

    #[test]
    fn emit_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let r = report(24);
        for fmt in [ReportFormat::Csv, ReportFormat::Json, ReportFormat::TableText] {
            let (a, b) = (dir.path().join("a"), dir.path().join("b"));
            r.emit(fmt, &a).unwrap();
            r.emit(fmt, &b).unwrap();
            assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        }
        assert!(ExperimentReport::default().emit(ReportFormat::Csv, dir.path().join("c")).is_err());
        assert!(r.emit(ReportFormat::Csv, dir.path().join("missing/dir/x.csv")).is_err());
    }

    #[test]
    fn table_shows_reference_column() {
        let r = ExperimentReport {
            input_digest: None,
            rows: vec![ReportRow::new(ExperimentKind::Ablation, "com-tech", "stars", 5, 3, 1.0, 10, 0)],
        };
        let text = r.to_table_text();
        assert!(text.contains("paper-reported"));
        assert!(text.contains("0.762"));
        assert!(text.contains("1.000000"));
    }

    #[test]
    fn reference_lookup() {
        let row = |exp, dir: &str, m: &str, n, k| ReportRow::new(exp, dir, m, n, k, 0.0, 1, 0);
        assert_eq!(paper_reported(&row(ExperimentKind::Ablation, "tech-com", "cot", 0, 10)), Some(0.457));
        assert_eq!(paper_reported(&row(ExperimentKind::FewShotSweep, "com-tech", "stars", 7, 3)), Some(0.765));
        assert_eq!(paper_reported(&row(ExperimentKind::RankingComparison, "com-tech", "tfidf", 0, 3)), Some(0.561));
        assert_eq!(paper_reported(&row(ExperimentKind::RankingComparison, "com-tech", "tfidf", 0, 5)), None);
        assert_eq!(paper_reported(&row(ExperimentKind::Ablation, "com-tech", "stars", 0, 4)), None);
    }

    #[test]
    fn plot_csv() {
        let rows = vec![
            ReportRow::new(ExperimentKind::FewShotSweep, "com-tech", "stars", 0, 3, 0.5, 1, 0),
            ReportRow::new(ExperimentKind::FewShotSweep, "com-tech", "stars", 0, 5, 0.25, 1, 0),
            ReportRow::new(ExperimentKind::FewShotSweep, "com-tech", "stars", 5, 3, 1.0, 1, 0),
            ReportRow::new(ExperimentKind::FewShotSweep, "com-tech", "stars", 5, 5, 0.75, 1, 0),
        ];
        let r = ExperimentReport { input_digest: None, rows };
        assert_eq!(
            r.to_plot_csv().unwrap(),
            "few_shot_count,p_at_3,p_at_5\n0,0.500000,0.250000\n5,1.000000,0.750000\n"
        );
    }
}
