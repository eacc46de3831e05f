//! Study drivers: single strategy runs, the full preset sweep with its
//! radius ablation, and the two-stage hybrid cascade.
//!
//! Documents are processed on the ambient rayon pool; results are always
//! assembled in corpus order, so output does not depend on thread count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{stream_seed, OcrBackend, OcrOutput};
use crate::document::{Document, PhiCategory};
use crate::error::{Error, Result};
use crate::eval::{
    cascade_score, detect_degradation, expected_cumulative, score, AuditRecord, CascadeTable,
    CategoryRate, DocScore, EvalReport, HookAudit, HookCoverage, MaskedBox, Reduction, ResultRow,
};
use crate::grid::CompressionModel;
use crate::masking::{build_masks, presets, HookPoint, MaskBuild, StrategyConfig, StrategyId, ABLATION_PRESETS};
use crate::redact::{check_accuracy, Redactor};

struct DocRun {
    build: MaskBuild,
    output: OcrOutput,
    score: DocScore,
    char_deviation: bool,
}

fn run_document(
    doc: &Document,
    strategy: &StrategyConfig,
    backend: &dyn OcrBackend,
    compression: &CompressionModel,
    seed: u64,
) -> Result<DocRun> {
    let build = build_masks(doc, strategy, compression)?;
    let output = backend.run_ocr(doc, &build.masks, seed)?;
    let score = score(doc, &output)?;
    let char_deviation = detect_degradation(output.char_count, doc.full_text().chars().count())?;
    Ok(DocRun {
        build,
        output,
        score,
        char_deviation,
    })
}

fn audit_record(preset: &str, doc: &Document, run: &DocRun) -> AuditRecord {
    AuditRecord {
        preset: preset.to_string(),
        doc_id: doc.id.clone(),
        masked_bboxes: doc
            .annotations
            .iter()
            .map(|a| MaskedBox {
                category: a.category,
                bbox: a.bbox,
            })
            .collect(),
        hooks: run
            .build
            .stats
            .iter()
            .map(|(h, s)| HookAudit {
                hook_point: *h,
                radius: s.radius,
                patches: s.patches,
            })
            .collect(),
        leaked: run
            .score
            .leaked
            .iter()
            .filter(|(_, &l)| l)
            .map(|(c, _)| *c)
            .collect(),
        redaction_hits: Vec::new(),
        char_count: run.output.char_count,
        degraded: run.output.degraded,
    }
}

fn aggregate(preset: &str, strategy: &StrategyConfig, runs: &[DocRun]) -> ResultRow {
    let n = runs.len();
    let mean = |v: f64| if n == 0 { 0.0 } else { v / n as f64 };

    let mut coverage: BTreeMap<HookPoint, HookCoverage> = BTreeMap::new();
    for h in &strategy.hooks {
        let sum = runs.iter().fold((0.0, 0.0, 0.0), |acc, r| {
            let s = &r.build.stats[&h.hook_point];
            (acc.0 + s.patches as f64, acc.1 + s.coverage_tile, acc.2 + s.coverage_page)
        });
        coverage.insert(
            h.hook_point,
            HookCoverage {
                patches: mean(sum.0),
                tile: mean(sum.1),
                page: mean(sum.2),
            },
        );
    }

    let mut per_category: BTreeMap<PhiCategory, CategoryRate> = BTreeMap::new();
    for r in runs {
        for (c, leaked) in &r.score.leaked {
            let rate = per_category.entry(*c).or_insert(CategoryRate { masked: 0, total: 0 });
            rate.total += 1;
            rate.masked += usize::from(!leaked);
        }
    }

    let degraded_documents = runs.iter().filter(|r| r.output.degraded).count();
    ResultRow {
        preset: preset.to_string(),
        strategy_id: strategy.id,
        radius: strategy.radius_label(),
        documents: n,
        coverage_by_hook: coverage,
        reduction: runs.iter().map(|r| r.score.reduction).sum(),
        per_category,
        degraded: degraded_documents > 0,
        degraded_documents,
        char_deviation_documents: runs.iter().filter(|r| r.char_deviation).count(),
        mean_char_count: mean(runs.iter().map(|r| r.output.char_count as f64).sum()),
    }
}

fn run_all(
    corpus: &[Document],
    strategy: &StrategyConfig,
    backend: &dyn OcrBackend,
    seed: u64,
) -> Result<Vec<DocRun>> {
    strategy.validate()?;
    let compression = CompressionModel::default();
    corpus
        .par_iter()
        .map(|doc| run_document(doc, strategy, backend, &compression, seed))
        .collect()
}

/// Masks, runs and scores every document under one strategy.
pub fn run_strategy(
    corpus: &[Document],
    preset: &str,
    strategy: &StrategyConfig,
    backend: &dyn OcrBackend,
    seed: u64,
) -> Result<EvalReport> {
    let runs = run_all(corpus, strategy, backend, seed)?;
    Ok(EvalReport {
        row: aggregate(preset, strategy, &runs),
        audit: corpus
            .iter()
            .zip(&runs)
            .map(|(d, r)| audit_record(preset, d, r))
            .collect(),
        documents: runs.into_iter().map(|r| r.score).collect(),
        cascade: None,
    })
}

/// One point of the coverage-versus-reduction ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub preset: String,
    pub strategy_id: StrategyId,
    pub radius: u32,
    pub hook_point: HookPoint,
    pub coverage: f64,
    pub reduction: Reduction,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub reports: Vec<EvalReport>,
    pub ablation: Vec<AblationPoint>,
}

pub fn ablation_view(reports: &[EvalReport]) -> Vec<AblationPoint> {
    let by_name: BTreeMap<&str, &EvalReport> =
        reports.iter().map(|r| (r.row.preset.as_str(), r)).collect();
    let all = presets();
    ABLATION_PRESETS
        .iter()
        .filter_map(|name| {
            let report = by_name.get(name)?;
            let config = &all.iter().find(|p| p.name == *name)?.config;
            let hook = config.hooks[0];
            Some(AblationPoint {
                preset: name.to_string(),
                strategy_id: config.id,
                radius: hook.radius,
                hook_point: hook.hook_point,
                coverage: report.row.coverage_by_hook[&hook.hook_point].tile,
                reduction: report.row.reduction,
            })
        })
        .collect()
}

/// Runs all fourteen presets in table order.
pub fn sweep(corpus: &[Document], backend: &dyn OcrBackend, seed: u64) -> Result<Sweep> {
    let reports = presets()
        .iter()
        .map(|p| run_strategy(corpus, p.name, &p.config, backend, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sweep {
        ablation: ablation_view(&reports),
        reports,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub accuracy: f64,
    /// Monte-Carlo redaction draws; zero skips the estimate.
    pub mc_seeds: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub seeds: usize,
    pub mean_cumulative: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridReport {
    pub report: EvalReport,
    /// Stage-1 reduction plus `accuracy` of the remainder, in percent.
    pub expected_cumulative: f64,
    pub monte_carlo: Option<MonteCarlo>,
}

/// Vision masking followed by pattern redaction of the OCR text.
pub fn hybrid(
    corpus: &[Document],
    preset: &str,
    strategy: &StrategyConfig,
    backend: &dyn OcrBackend,
    redactor: &Redactor,
    config: HybridConfig,
) -> Result<HybridReport> {
    check_accuracy(config.accuracy)?;
    if corpus.is_empty() {
        return Err(Error::InvalidConfig("hybrid run needs at least one document".into()));
    }
    let runs = run_all(corpus, strategy, backend, config.seed)?;

    let stage2: Vec<(CascadeTable, Vec<_>)> = corpus
        .par_iter()
        .zip(&runs)
        .enumerate()
        .map(|(i, (doc, run))| {
            let red = redactor.redact(
                &run.output.text,
                config.accuracy,
                stream_seed(i as u64, config.seed, 0x5EED),
            )?;
            Ok((cascade_score(doc, &run.output, &red.text)?, red.hits))
        })
        .collect::<Result<_>>()?;

    let mut cascade = stage2[0].0.clone();
    for (table, _) in &stage2[1..] {
        cascade = cascade.merge(table);
    }
    let row = aggregate(preset, strategy, &runs);
    let expected = expected_cumulative(row.reduction.percent(), config.accuracy);

    let monte_carlo = (config.mc_seeds > 0)
        .then(|| -> Result<MonteCarlo> {
            let draws: Vec<f64> = (0..config.mc_seeds)
                .into_par_iter()
                .map(|s| {
                    let i = s % corpus.len();
                    let text = &runs[i].output.text;
                    let red = redactor.redact(text, config.accuracy, stream_seed(s as u64, config.seed, 0x3C))?;
                    let table = cascade_score(&corpus[i], &runs[i].output, &red.text)?;
                    Ok(table.final_row().cumulative.percent())
                })
                .collect::<Result<_>>()?;
            let n = draws.len() as f64;
            let mean = draws.iter().sum::<f64>() / n;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            Ok(MonteCarlo {
                seeds: draws.len(),
                mean_cumulative: mean,
                std_error: (var / n).sqrt(),
            })
        })
        .transpose()?;

    let audit = corpus
        .iter()
        .zip(&runs)
        .zip(&stage2)
        .map(|((d, r), (_, hits))| AuditRecord {
            redaction_hits: hits.clone(),
            ..audit_record(preset, d, r)
        })
        .collect();
    Ok(HybridReport {
        report: EvalReport {
            row,
            documents: runs.into_iter().map(|r| r.score).collect(),
            audit,
            cascade: Some(cascade),
        },
        expected_cumulative: expected,
        monte_carlo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::SurrogateBackend;
    use crate::document::{generate_corpus, Template};
    use crate::masking::preset;

    fn corpus() -> Vec<Document> {
        generate_corpus(6, 7, Template::BillingV1)
    }

    #[test]
    fn v3_run_reduces_three_of_seven() {
        let docs = corpus();
        let report = run_strategy(&docs, "v3-r1", &preset("v3-r1").unwrap(), &SurrogateBackend::default(), 1).unwrap();
        assert!(report.row.reduction.equals_fraction(3, 7));
        assert_eq!(report.row.reduction.to_string(), "42.9%");
        assert_eq!(report.documents.len(), 6);
        assert_eq!(report.audit.len(), 6);
        assert_eq!(report.row.status(), "Stable");
        assert_eq!(report.row.per_category[&PhiCategory::Name].masked, 6);
        assert_eq!(report.row.per_category[&PhiCategory::Mrn].masked, 0);
    }

    #[test]
    fn unmasked_baseline_reduces_nothing() {
        let docs = corpus();
        let none = StrategyConfig::new(StrategyId::V3, &[(HookPoint::SamBlock11, 0)]);
        let report = run_all(&docs, &none, &SurrogateBackend::default(), 0);
        // Runs require a radius of at least 1.
        assert!(report.is_err());
        let runs: Vec<_> = docs
            .iter()
            .map(|d| {
                let out = SurrogateBackend::default()
                    .run_ocr(d, &Default::default(), 0)
                    .unwrap();
                score(d, &out).unwrap().reduction
            })
            .collect();
        assert_eq!(runs.into_iter().sum::<Reduction>(), Reduction::new(0, 42));
    }

    #[test]
    fn v4_is_degraded() {
        let docs = corpus();
        let report = run_strategy(&docs, "v4-r1", &preset("v4-r1").unwrap(), &SurrogateBackend::default(), 1).unwrap();
        assert!(report.row.degraded);
        assert_eq!(report.row.status(), "Degraded");
        assert!(report.row.reduction.percent() <= 14.3);
    }

    #[test]
    fn hybrid_perfect_accuracy_removes_everything() {
        let docs = corpus();
        let h = hybrid(
            &docs,
            "v3-r1",
            &preset("v3-r1").unwrap(),
            &SurrogateBackend::default(),
            &Redactor::with_defaults(),
            HybridConfig { accuracy: 1.0, mc_seeds: 0, seed: 3 },
        )
        .unwrap();
        let cascade = h.report.cascade.unwrap();
        assert_eq!(cascade.final_row().remaining, 0);
        assert_eq!(cascade.rows[1].remaining, 24);
        assert!((h.expected_cumulative - 100.0).abs() < 1e-9);
        assert!(h.report.audit.iter().all(|a| a.redaction_hits.len() == 4));
    }

    #[test]
    fn hybrid_rejects_zero_accuracy() {
        let docs = corpus();
        let err = hybrid(
            &docs,
            "v3-r1",
            &preset("v3-r1").unwrap(),
            &SurrogateBackend::default(),
            &Redactor::with_defaults(),
            HybridConfig { accuracy: 0.0, mc_seeds: 0, seed: 3 },
        );
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn sweep_is_union_of_runs() {
        let docs = generate_corpus(2, 1, Template::BillingV1);
        let backend = SurrogateBackend::default();
        let s = sweep(&docs, &backend, 5).unwrap();
        assert_eq!(s.reports.len(), 14);
        assert_eq!(s.ablation.len(), 9);
        let single = run_strategy(&docs, "v6-r2", &preset("v6-r2").unwrap(), &backend, 5).unwrap();
        assert_eq!(s.reports.iter().find(|r| r.row.preset == "v6-r2").unwrap(), &single);
    }
}
