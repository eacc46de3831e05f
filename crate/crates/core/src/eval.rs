//! Leak scoring, cascade accounting and report rendering.
//!
//! Leakage is exact substring matching of each ground-truth value against
//! the OCR text. Counts stay as integers; percentages are derived only when
//! rendered.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::OcrOutput;
use crate::document::{Document, PhiCategory};
use crate::error::{Error, Result};
use crate::grid::Rect;
use crate::masking::{HookPoint, StrategyId};
use crate::redact::RedactionHit;

/// `removed` of `total` PHI elements kept out of the output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reduction {
    pub removed: usize,
    pub total: usize,
}

impl Reduction {
    pub fn new(removed: usize, total: usize) -> Self {
        debug_assert!(removed <= total);
        Reduction { removed, total }
    }

    pub fn leaked(&self) -> usize {
        self.total - self.removed
    }

    /// Percentage; an empty total counts as fully reduced.
    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            100.0
        } else {
            100.0 * self.removed as f64 / self.total as f64
        }
    }

    /// Exact comparison against `num/den` percent, without rounding.
    pub fn equals_fraction(&self, num: usize, den: usize) -> bool {
        self.removed * den == num * self.total
    }
}

impl std::ops::Add for Reduction {
    type Output = Reduction;

    fn add(self, rhs: Reduction) -> Reduction {
        Reduction::new(self.removed + rhs.removed, self.total + rhs.total)
    }
}

impl std::iter::Sum for Reduction {
    fn sum<I: Iterator<Item = Reduction>>(iter: I) -> Self {
        iter.fold(Reduction::default(), |a, b| a + b)
    }
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}%", self.percent())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocScore {
    pub doc_id: String,
    /// Per category: did the ground-truth value appear in the text.
    pub leaked: BTreeMap<PhiCategory, bool>,
    pub reduction: Reduction,
}

impl DocScore {
    pub fn baseline(&self) -> usize {
        self.reduction.total
    }

    pub fn leak_count(&self) -> usize {
        self.reduction.leaked()
    }
}

pub fn score_text(doc: &Document, text: &str) -> DocScore {
    let leaked: BTreeMap<_, _> = doc
        .annotations
        .iter()
        .map(|a| (a.category, text.contains(&a.value)))
        .collect();
    let total = doc.annotations.len();
    let leaks = leaked.values().filter(|&&l| l).count();
    DocScore {
        doc_id: doc.id.clone(),
        leaked,
        reduction: Reduction::new(total - leaks, total),
    }
}

pub fn score(doc: &Document, out: &OcrOutput) -> Result<DocScore> {
    if out.doc_id != doc.id {
        return Err(Error::InvalidDocument {
            id: out.doc_id.clone(),
            reason: format!("OCR output scored against document {}", doc.id),
        });
    }
    Ok(score_text(doc, &out.text))
}

/// Relative character-count deviation from the baseline exceeds 200%.
pub fn detect_degradation(char_count: usize, baseline_chars: usize) -> Result<bool> {
    if baseline_chars == 0 {
        return Err(Error::InvalidConfig("baseline character count must be positive".into()));
    }
    Ok(char_count.abs_diff(baseline_chars) > 2 * baseline_chars)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Baseline,
    Stage1,
    Stage2,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Baseline => "Baseline",
            Stage::Stage1 => "Stage 1 (vision masking)",
            Stage::Stage2 => "Stage 2 (NLP redaction)",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeRow {
    pub stage: Stage,
    pub remaining: usize,
    pub total: usize,
    /// Elements removed at this stage.
    pub stage_removed: usize,
    pub cumulative: Reduction,
}

impl CascadeRow {
    /// Points of the original total removed by this stage.
    pub fn stage_reduction(&self) -> f64 {
        Reduction::new(self.stage_removed, self.total).percent()
    }

    /// Share of what entered this stage that it removed.
    pub fn of_remaining(&self) -> f64 {
        Reduction::new(self.stage_removed, self.remaining + self.stage_removed).percent()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeTable {
    pub rows: Vec<CascadeRow>,
}

impl CascadeTable {
    pub fn from_counts(total: usize, after_stage1: usize, after_stage2: usize) -> Self {
        debug_assert!(after_stage2 <= after_stage1 && after_stage1 <= total);
        let row = |stage, remaining, before: usize| CascadeRow {
            stage,
            remaining,
            total,
            stage_removed: before - remaining,
            cumulative: Reduction::new(total - remaining, total),
        };
        CascadeTable {
            rows: vec![
                row(Stage::Baseline, total, total),
                row(Stage::Stage1, after_stage1, total),
                row(Stage::Stage2, after_stage2, after_stage1),
            ],
        }
    }

    pub fn final_row(&self) -> &CascadeRow {
        self.rows.last().expect("cascade has rows")
    }

    pub fn merge(&self, other: &CascadeTable) -> CascadeTable {
        let [_, a1, a2] = &self.rows[..] else { unreachable!() };
        let [_, b1, b2] = &other.rows[..] else { unreachable!() };
        CascadeTable::from_counts(
            a1.total + b1.total,
            a1.remaining + b1.remaining,
            a2.remaining + b2.remaining,
        )
    }
}

/// Cascade for one document; `stage2_text` must derive from `stage1.text`.
pub fn cascade_score(doc: &Document, stage1: &OcrOutput, stage2_text: &str) -> Result<CascadeTable> {
    let s1 = score(doc, stage1)?;
    let s2 = score_text(doc, stage2_text);
    // Redaction only removes text, so anything hidden after stage 1 stays
    // hidden; a leak reappearing means the input was not stage 1's output.
    if s1
        .leaked
        .iter()
        .any(|(c, &l)| !l && s2.leaked.get(c).copied().unwrap_or(false))
    {
        return Err(Error::InvalidConfig(
            "stage-2 text reintroduces values absent from stage 1".into(),
        ));
    }
    Ok(CascadeTable::from_counts(
        s1.baseline(),
        s1.leak_count(),
        s2.leak_count(),
    ))
}

/// Expected cumulative reduction (percent) when stage 2 catches each
/// remaining element with probability `accuracy`.
pub fn expected_cumulative(stage1_percent: f64, accuracy: f64) -> f64 {
    stage1_percent + accuracy * (100.0 - stage1_percent)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HookCoverage {
    pub patches: f64,
    pub tile: f64,
    pub page: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRate {
    pub masked: usize,
    pub total: usize,
}

impl CategoryRate {
    pub fn percent(&self) -> f64 {
        Reduction::new(self.masked, self.total).percent()
    }
}

/// One strategy row of the results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub preset: String,
    pub strategy_id: StrategyId,
    pub radius: String,
    pub documents: usize,
    pub coverage_by_hook: BTreeMap<HookPoint, HookCoverage>,
    pub reduction: Reduction,
    pub per_category: BTreeMap<PhiCategory, CategoryRate>,
    /// Set by the backend's degradation rules on any document.
    pub degraded: bool,
    pub degraded_documents: usize,
    /// Documents whose character count deviates more than 200% from their
    /// unmasked length.
    pub char_deviation_documents: usize,
    pub mean_char_count: f64,
}

impl ResultRow {
    pub fn status(&self) -> &'static str {
        if self.degraded || self.char_deviation_documents > 0 {
            "Degraded"
        } else {
            "Stable"
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedBox {
    pub category: PhiCategory,
    pub bbox: Rect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HookAudit {
    pub hook_point: HookPoint,
    pub radius: u32,
    pub patches: usize,
}

/// Links a document to what was masked and what was redacted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub preset: String,
    pub doc_id: String,
    pub masked_bboxes: Vec<MaskedBox>,
    pub hooks: Vec<HookAudit>,
    pub leaked: Vec<PhiCategory>,
    #[serde(default)]
    pub redaction_hits: Vec<RedactionHit>,
    pub char_count: usize,
    pub degraded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub row: ResultRow,
    pub documents: Vec<DocScore>,
    pub audit: Vec<AuditRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cascade: Option<CascadeTable>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    #[default]
    Markdown,
    Csv,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            other => Err(Error::InvalidConfig(format!("unknown report format `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderedReport {
    pub table: String,
    pub results_json: String,
    pub audit_jsonl: String,
}

impl RenderedReport {
    pub fn table_file_name(format: TableFormat) -> &'static str {
        match format {
            TableFormat::Markdown => "table.md",
            TableFormat::Csv => "table.csv",
        }
    }

    /// Writes `results.json`, `audit.jsonl` and the table into `dir`. Every
    /// file is staged and renamed into place only after all were written.
    pub fn write_to(&self, dir: &Path, format: TableFormat) -> Result<()> {
        write_all_atomic(
            dir,
            &[
                ("results.json", self.results_json.as_bytes()),
                ("audit.jsonl", self.audit_jsonl.as_bytes()),
                (Self::table_file_name(format), self.table.as_bytes()),
            ],
        )
    }
}

/// Stages every file in `dir` before renaming any of them, so a failure
/// leaves no partial output behind.
pub fn write_all_atomic(dir: &Path, files: &[(&str, &[u8])]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, path) in staged {
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
    }
    Ok(())
}

fn pct(v: f64) -> String {
    format!("{v:.1}%")
}

fn coverage_cell(row: &ResultRow, pick: impl Fn(&HookCoverage) -> f64) -> String {
    row.coverage_by_hook
        .values()
        .map(|c| pct(100.0 * pick(c)))
        .collect::<Vec<_>>()
        .join(" + ")
}

fn hooks_cell(row: &ResultRow) -> String {
    row.coverage_by_hook
        .keys()
        .map(|h| h.name())
        .collect::<Vec<_>>()
        .join(" + ")
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn render(&self, out: &mut String, format: TableFormat) {
        match format {
            TableFormat::Markdown => {
                let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
                out.push_str(&line(&self.header));
                out.push_str(&line(&vec!["---".to_string(); self.header.len()]));
                for r in &self.rows {
                    out.push_str(&line(r));
                }
            }
            TableFormat::Csv => {
                let quote = |c: &String| {
                    if c.contains([',', '"']) {
                        format!("\"{}\"", c.replace('"', "\"\""))
                    } else {
                        c.clone()
                    }
                };
                for r in std::iter::once(&self.header).chain(&self.rows) {
                    out.push_str(&r.iter().map(quote).collect::<Vec<_>>().join(","));
                    out.push('\n');
                }
            }
        }
    }
}

/// Renders the strategy table, per-category rates, any cascade, plus the
/// machine-readable results and audit log.
pub fn emit_report(reports: &[EvalReport], format: TableFormat) -> Result<RenderedReport> {
    let mut strategies = Table::new(&[
        "Strategy",
        "Preset",
        "Hook points",
        "Radius",
        "Coverage (tile)",
        "Coverage (page)",
        "PHI reduction",
        "Status",
    ]);
    let mut categories = Table::new(
        &std::iter::once("Preset")
            .chain(PhiCategory::ALL.iter().map(|c| c.name()))
            .collect::<Vec<_>>(),
    );
    let mut cascade = Table::new(&[
        "Preset",
        "Stage",
        "Remaining",
        "Reduction at stage",
        "Of remaining",
        "Cumulative",
    ]);
    for r in reports {
        let row = &r.row;
        strategies.rows.push(vec![
            row.strategy_id.to_string(),
            row.preset.clone(),
            hooks_cell(row),
            row.radius.clone(),
            coverage_cell(row, |c| c.tile),
            coverage_cell(row, |c| c.page),
            row.reduction.to_string(),
            row.status().to_string(),
        ]);
        let mut cells = vec![row.preset.clone()];
        cells.extend(PhiCategory::ALL.iter().map(|c| {
            row.per_category
                .get(c)
                .map_or_else(|| "-".to_string(), |rate| pct(rate.percent()))
        }));
        categories.rows.push(cells);
        if let Some(table) = &r.cascade {
            for c in &table.rows {
                cascade.rows.push(vec![
                    row.preset.clone(),
                    c.stage.to_string(),
                    format!(
                        "{}/{} ({})",
                        c.remaining,
                        c.total,
                        pct(Reduction::new(c.remaining, c.total).percent())
                    ),
                    pct(c.stage_reduction()),
                    pct(c.of_remaining()),
                    c.cumulative.to_string(),
                ]);
            }
        }
    }

    let mut table = String::new();
    let section = |out: &mut String, title: &str| match format {
        TableFormat::Markdown => {
            let _ = writeln!(out, "## {title}\n");
        }
        TableFormat::Csv => {
            let _ = writeln!(out, "# {title}");
        }
    };
    section(&mut table, "PHI reduction by strategy");
    strategies.render(&mut table, format);
    table.push('\n');
    section(&mut table, "Masked rate by category");
    categories.render(&mut table, format);
    if reports.iter().any(|r| r.cascade.is_some()) {
        table.push('\n');
        section(&mut table, "Cascade");
        cascade.render(&mut table, format);
    }

    let rows: Vec<&ResultRow> = reports.iter().map(|r| &r.row).collect();
    let mut results_json = serde_json::to_string_pretty(&rows)?;
    results_json.push('\n');
    let mut audit_jsonl = String::new();
    for rec in reports.iter().flat_map(|r| &r.audit) {
        audit_jsonl.push_str(&serde_json::to_string(rec)?);
        audit_jsonl.push('\n');
    }
    Ok(RenderedReport {
        table,
        results_json,
        audit_jsonl,
    })
}

pub fn parse_results(raw: &str) -> Result<Vec<ResultRow>> {
    Ok(serde_json::from_str(raw)?)
}

pub fn parse_audit(raw: &str, path: &Path) -> Result<Vec<AuditRecord>> {
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{OcrBackend, SurrogateBackend};
    use crate::document::{generate_document, Template};
    use crate::masking::MaskMap;

    fn doc() -> Document {
        generate_document(1, Template::BillingV1)
    }

    #[test]
    fn all_values_present_leaks_everything() {
        let d = doc();
        let s = score_text(&d, &d.full_text());
        assert_eq!(s.leak_count(), 7);
        assert_eq!(s.baseline(), 7);
        assert_eq!(s.reduction.percent(), 0.0);
    }

    #[test]
    fn long_form_suppression_scores_three_sevenths() {
        let d = doc();
        let text: String = d
            .annotations
            .iter()
            .filter(|a| a.category.is_structured())
            .map(|a| a.value.clone())
            .collect::<Vec<_>>()
            .join("\n");
        let s = score_text(&d, &text);
        assert_eq!(s.leak_count(), 4);
        assert!(s.reduction.equals_fraction(3, 7));
        assert_eq!(s.reduction.to_string(), "42.9%");
    }

    #[test]
    fn empty_text_is_full_reduction() {
        let s = score_text(&doc(), "");
        assert_eq!(s.leak_count(), 0);
        assert_eq!(s.reduction.to_string(), "100.0%");
    }

    #[test]
    fn scoring_checks_document_identity() {
        let d = doc();
        let mut out = SurrogateBackend::default().run_ocr(&d, &MaskMap::new(), 0).unwrap();
        out.doc_id = "other".into();
        assert!(score(&d, &out).is_err());
    }

    #[test]
    fn redaction_tokens_never_leak() {
        let d = doc();
        for c in PhiCategory::ALL {
            let s = score_text(&d, &crate::redact::replacement_token(c));
            assert_eq!(s.leak_count(), 0);
        }
    }

    #[test]
    fn degradation_examples() {
        assert!(!detect_degradation(2078, 2000).unwrap());
        assert!(detect_degradation(42_046, 2000).unwrap());
        // 171.6% deviation: under the 200% rule this is not flagged.
        assert!(!detect_degradation(5432, 2000).unwrap());
        assert!(!detect_degradation(6000, 2000).unwrap());
        assert!(detect_degradation(6001, 2000).unwrap());
        assert!(detect_degradation(1, 0).is_err());
    }

    #[test]
    fn cascade_examples() {
        let perfect = CascadeTable::from_counts(7, 4, 0);
        assert_eq!(perfect.final_row().remaining, 0);
        assert_eq!(perfect.final_row().cumulative.to_string(), "100.0%");
        assert_eq!(perfect.rows[0].cumulative.percent(), 0.0);

        assert!((perfect.rows[1].stage_reduction() - 300.0 / 7.0).abs() < 1e-9);
        assert_eq!(perfect.rows[2].of_remaining(), 100.0);
        assert!((perfect.rows[2].stage_reduction() - 400.0 / 7.0).abs() < 1e-9);

        let noop = CascadeTable::from_counts(7, 4, 4);
        assert_eq!(noop.final_row().cumulative, noop.rows[1].cumulative);

        let expected = expected_cumulative(Reduction::new(3, 7).percent(), 0.8);
        assert!((expected - 88.6).abs() < 0.05, "{expected}");
        // 3/7 + 0.8 * 4/7 = 6.2/7
        assert!((expected - 620.0 / 7.0).abs() < 1e-9);
    }

    #[test]
    fn cascade_from_outputs() {
        let d = doc();
        let stage1 = SurrogateBackend::default().run_ocr(&d, &MaskMap::new(), 0).unwrap();
        let table = cascade_score(&d, &stage1, "").unwrap();
        assert_eq!(table.rows[1].remaining, 7);
        assert_eq!(table.rows[2].stage_removed, 7);
        for pair in table.rows.windows(2) {
            assert!(pair[1].remaining <= pair[0].remaining);
            assert!(pair[1].cumulative.removed >= pair[0].cumulative.removed);
        }
        let mut partial = stage1.clone();
        partial.text.clear();
        assert!(cascade_score(&d, &partial, &stage1.text).is_err());
    }

    #[test]
    fn reduction_is_order_independent() {
        let parts = [Reduction::new(3, 7), Reduction::new(7, 7), Reduction::new(0, 7)];
        let a: Reduction = parts.iter().copied().sum();
        let b: Reduction = parts.iter().rev().copied().sum();
        assert_eq!(a, b);
        assert_eq!(a, Reduction::new(10, 21));
    }

    #[test]
    fn empty_run_renders_headers_only() {
        let r = emit_report(&[], TableFormat::Markdown).unwrap();
        assert!(r.table.contains("| Strategy | Preset |"));
        assert!(!r.table.contains("Cascade"));
        assert_eq!(r.results_json.trim(), "[]");
        assert!(r.audit_jsonl.is_empty());
        let csv = emit_report(&[], TableFormat::Csv).unwrap();
        assert!(csv.table.contains("Strategy,Preset,Hook points"));
    }

    #[test]
    fn audit_parse_reports_line_numbers() {
        let err = parse_audit("\n{bad", Path::new("a.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 2, .. }));
    }
}
