//! OCR backends.
//!
//! [`SurrogateBackend`] is a rule-based stand-in for a vision-language OCR
//! model. It reads the document layout directly and decides, per PHI
//! element, whether the masks leave it readable:
//!
//! * an element's masked fraction at a hook is the share of its patches on
//!   that hook's grid that are replaced; across hooks the *minimum* counts,
//!   because one intact pathway is enough to read the element;
//! * at or above `suppression_threshold`, long-form values disappear, while
//!   structured values whose caption is still readable are regenerated from
//!   context;
//! * masking three or more SAM blocks, or nearly all projector tokens at a
//!   large radius, degrades the output into repetitive filler.
//!
//! [`AdapterBackend`] reads text produced by an external hook adapter
//! running a real model, and turns it into the same [`OcrOutput`].

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::document::{sample_value, Document, PhiCategory, BASELINE_CHAR_BAND};
use crate::error::{Error, Result};
use crate::grid::{bbox_to_patches, GridSpec, Rect};
use crate::masking::{tiles_in_use, HookPoint, MaskMap};

/// How a structured value comes back when it is masked but its caption is
/// readable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegenerationMode {
    /// The decoder reconstructs the true identifier from context; exact
    /// matching scores it as leaked.
    #[default]
    Reconstruct,
    /// The decoder invents a format-valid identifier that differs from the
    /// ground truth.
    Hallucinate,
}

impl std::str::FromStr for RegenerationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reconstruct" => Ok(RegenerationMode::Reconstruct),
            "hallucinate" => Ok(RegenerationMode::Hallucinate),
            other => Err(Error::InvalidConfig(format!("unknown regeneration mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiBlockDegradation {
    /// SAM-block hooks masked at once before output degrades.
    pub min_hooks: usize,
    pub multiplier: f64,
    /// Suppressions that survive degradation, largest footprint first.
    pub retained_suppressions: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectorDegradation {
    pub min_coverage: f64,
    pub min_radius: u32,
    pub multiplier: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendBehaviorConfig {
    pub suppression_threshold: f64,
    pub regeneration: RegenerationMode,
    pub multi_block: MultiBlockDegradation,
    pub projector: ProjectorDegradation,
    /// Expected unmasked output length, in characters.
    pub baseline_band: (usize, usize),
}

impl Default for BackendBehaviorConfig {
    fn default() -> Self {
        BackendBehaviorConfig {
            suppression_threshold: 0.5,
            regeneration: RegenerationMode::Reconstruct,
            multi_block: MultiBlockDegradation {
                min_hooks: 3,
                multiplier: 5.0,
                retained_suppressions: 1,
            },
            projector: ProjectorDegradation {
                min_coverage: 0.99,
                min_radius: 3,
                multiplier: 20.0,
            },
            baseline_band: BASELINE_CHAR_BAND,
        }
    }
}

impl BackendBehaviorConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v <= 1.0;
        if !in_unit(self.suppression_threshold) || !in_unit(self.projector.min_coverage) {
            return Err(Error::InvalidConfig("thresholds must lie in (0, 1]".into()));
        }
        let above_one = |m: f64| m > 1.0;
        if !above_one(self.multi_block.multiplier) || !above_one(self.projector.multiplier) {
            return Err(Error::InvalidConfig("degradation multipliers must exceed 1".into()));
        }
        if self.multi_block.min_hooks == 0 {
            return Err(Error::InvalidConfig("multi-block hook count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionKind {
    Exact,
    Regenerated,
    Suppressed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Emission {
    pub category: PhiCategory,
    pub emitted: EmissionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emitted_string: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationCause {
    MultiBlock,
    Projector,
}

/// Adapter-reported replacement count at one hook.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HookDiagnostic {
    pub hook_point: HookPoint,
    pub replaced_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcrOutput {
    pub doc_id: String,
    pub text: String,
    pub char_count: usize,
    pub emissions: Vec<Emission>,
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degradation: Option<DegradationCause>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<HookDiagnostic>,
}

impl OcrOutput {
    /// Wraps externally produced text, classifying each annotation by an
    /// exact-string scan.
    pub fn from_text(doc: &Document, text: String) -> Self {
        let emissions = doc
            .annotations
            .iter()
            .map(|a| {
                let present = text.contains(&a.value);
                Emission {
                    category: a.category,
                    emitted: if present {
                        EmissionKind::Exact
                    } else {
                        EmissionKind::Suppressed
                    },
                    emitted_string: present.then(|| a.value.clone()),
                }
            })
            .collect();
        OcrOutput {
            doc_id: doc.id.clone(),
            char_count: text.chars().count(),
            text,
            emissions,
            degraded: false,
            degradation: None,
            diagnostics: Vec::new(),
        }
    }

    pub fn emission(&self, category: PhiCategory) -> Option<&Emission> {
        self.emissions.iter().find(|e| e.category == category)
    }
}

/// Single entry point shared by the surrogate and real-model adapters.
pub trait OcrBackend: Send + Sync {
    fn name(&self) -> &str;

    fn run_ocr(&self, doc: &Document, masks: &MaskMap, seed: u64) -> Result<OcrOutput>;
}

#[derive(Clone, Debug, Default)]
pub struct SurrogateBackend {
    pub config: BackendBehaviorConfig,
}

impl SurrogateBackend {
    pub fn new(config: BackendBehaviorConfig) -> Result<Self> {
        config.validate()?;
        Ok(SurrogateBackend { config })
    }
}

/// Minimum masked fraction of `bbox` over the given hooks; `None` when no
/// hook qualifies.
fn masked_fraction(
    doc: &Document,
    masks: &MaskMap,
    bbox: Rect,
    hooks: impl Fn(HookPoint) -> bool,
) -> Result<Option<f64>> {
    let mut min: Option<f64> = None;
    for (_, mask) in masks.iter().filter(|(h, _)| hooks(**h)) {
        let patches = bbox_to_patches(bbox, doc.page, mask.grid)?;
        let f = mask.masked_fraction(&patches);
        min = Some(min.map_or(f, |m: f64| m.min(f)));
    }
    Ok(min)
}

fn check_grids(masks: &MaskMap) -> Result<()> {
    for (hook, mask) in masks {
        if mask.grid != hook.grid() {
            return Err(Error::GridMismatch {
                expected: hook.grid(),
                found: mask.grid,
            });
        }
    }
    Ok(())
}

pub(crate) fn stream_seed(doc_seed: u64, run_seed: u64, salt: u64) -> u64 {
    let mut x = doc_seed ^ run_seed.rotate_left(32) ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finaliser
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// A format-valid value for `category` that differs from, and does not
/// contain, any ground-truth value in `doc`.
pub fn hallucinate(doc: &Document, category: PhiCategory, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(doc.seed, seed, category as u64 + 1));
    loop {
        let v = sample_value(category, &mut rng);
        if doc.annotations.iter().all(|a| !v.contains(&a.value)) {
            return v;
        }
    }
}

impl OcrBackend for SurrogateBackend {
    fn name(&self) -> &str {
        "surrogate"
    }

    fn run_ocr(&self, doc: &Document, masks: &MaskMap, seed: u64) -> Result<OcrOutput> {
        check_grids(masks)?;
        let cfg = &self.config;

        let mut kinds: BTreeMap<PhiCategory, EmissionKind> = BTreeMap::new();
        let mut footprint: BTreeMap<PhiCategory, usize> = BTreeMap::new();
        for a in &doc.annotations {
            let fraction = masked_fraction(doc, masks, a.bbox, |_| true)?.unwrap_or(0.0);
            let kind = if fraction < cfg.suppression_threshold {
                EmissionKind::Exact
            } else if a.category.is_structured() {
                let label = masked_fraction(doc, masks, a.context_bbox, |h| h.is_pre_fusion())?
                    .unwrap_or(0.0);
                if label < cfg.suppression_threshold {
                    EmissionKind::Regenerated
                } else {
                    EmissionKind::Suppressed
                }
            } else {
                EmissionKind::Suppressed
            };
            let replaced = masks
                .values()
                .map(|m| {
                    bbox_to_patches(a.bbox, doc.page, m.grid)
                        .map(|p| p.iter().filter(|q| m.contains(q)).count())
                })
                .collect::<Result<Vec<_>>>()?;
            footprint.insert(a.category, replaced.into_iter().max().unwrap_or(0));
            kinds.insert(a.category, kind);
        }

        let sam_hooks = masks
            .iter()
            .filter(|(h, m)| h.is_sam_block() && !m.is_empty())
            .count();
        let mut degradation = None;
        let mut multiplier = 1.0f64;
        if sam_hooks >= cfg.multi_block.min_hooks {
            degradation = Some(DegradationCause::MultiBlock);
            multiplier = multiplier.max(cfg.multi_block.multiplier);
            // Incoherent decoding reads through all but the largest
            // suppressed regions.
            let mut suppressed: Vec<PhiCategory> = kinds
                .iter()
                .filter(|(_, k)| **k == EmissionKind::Suppressed)
                .map(|(c, _)| *c)
                .collect();
            suppressed.sort_by_key(|c| (std::cmp::Reverse(footprint[c]), *c));
            for c in suppressed.iter().skip(cfg.multi_block.retained_suppressions) {
                kinds.insert(*c, EmissionKind::Exact);
            }
        }
        if let Some(proj) = masks.get(&HookPoint::Projector) {
            let in_use = tiles_in_use(doc, GridSpec::Projector.tile_size())?.len();
            if proj.coverage(in_use) >= cfg.projector.min_coverage
                && proj.radius >= cfg.projector.min_radius
            {
                degradation.get_or_insert(DegradationCause::Projector);
                multiplier = multiplier.max(cfg.projector.multiplier);
            }
        }

        let mut emissions = Vec::with_capacity(doc.annotations.len());
        let mut rendered: BTreeMap<PhiCategory, Option<String>> = BTreeMap::new();
        for a in &doc.annotations {
            let kind = kinds[&a.category];
            let text = match (kind, cfg.regeneration) {
                (EmissionKind::Exact, _) => Some(a.value.clone()),
                (EmissionKind::Suppressed, _) => None,
                (EmissionKind::Regenerated, RegenerationMode::Reconstruct) => Some(a.value.clone()),
                (EmissionKind::Regenerated, RegenerationMode::Hallucinate) => {
                    Some(hallucinate(doc, a.category, seed))
                }
            };
            emissions.push(Emission {
                category: a.category,
                emitted: kind,
                emitted_string: text.clone(),
            });
            rendered.insert(a.category, text);
        }

        let lines: Vec<&str> = doc
            .elements
            .iter()
            .filter_map(|e| match e.phi {
                Some(c) => rendered.get(&c).and_then(|t| t.as_deref()),
                None => Some(e.text.as_str()),
            })
            .collect();
        let mut text = lines.join("\n");

        if degradation.is_some() {
            let baseline = doc.full_text().len();
            let target = (baseline as f64 * multiplier).round() as usize;
            let filler: Vec<&str> = doc
                .elements
                .iter()
                .filter(|e| e.phi.is_none())
                .map(|e| e.text.as_str())
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(doc.seed, seed, 0));
            while text.len() < target {
                text.push('\n');
                text.push_str(filler.choose(&mut rng).expect("documents have non-PHI text"));
            }
            text.truncate(target);
        }

        Ok(OcrOutput {
            doc_id: doc.id.clone(),
            char_count: text.chars().count(),
            text,
            emissions,
            degraded: degradation.is_some(),
            degradation,
            diagnostics: Vec::new(),
        })
    }
}

/// Reads `<dir>/<doc_id>.txt` written by an external hook adapter, plus an
/// optional `<doc_id>.diagnostics.json` sidecar.
#[derive(Clone, Debug)]
pub struct AdapterBackend {
    pub dir: PathBuf,
}

impl OcrBackend for AdapterBackend {
    fn name(&self) -> &str {
        "adapter"
    }

    fn run_ocr(&self, doc: &Document, masks: &MaskMap, _seed: u64) -> Result<OcrOutput> {
        check_grids(masks)?;
        let path = self.dir.join(format!("{}.txt", doc.id));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = OcrOutput::from_text(doc, text);
        let diag_path = self.dir.join(format!("{}.diagnostics.json", doc.id));
        if diag_path.exists() {
            let raw = fs::read(&diag_path).map_err(|e| Error::io(&diag_path, e))?;
            out.diagnostics = serde_json::from_slice(&raw)?;
        }
        Ok(out)
    }
}

/// Resolves `surrogate` or `adapter:<path>`.
pub fn backend_from_spec(spec: &str, config: BackendBehaviorConfig) -> Result<Box<dyn OcrBackend>> {
    match spec.split_once(':') {
        None if spec == "surrogate" => Ok(Box::new(SurrogateBackend::new(config)?)),
        Some(("adapter", path)) if !path.is_empty() => Ok(Box::new(AdapterBackend {
            dir: Path::new(path).to_path_buf(),
        })),
        _ => Err(Error::UnknownBackend(spec.to_string())),
    }
}

/// Hooks whose replacement counts disagree with the mask map.
pub fn diagnostic_mismatches(out: &OcrOutput, masks: &MaskMap) -> BTreeSet<HookPoint> {
    let mut bad = BTreeSet::new();
    for d in &out.diagnostics {
        if masks.get(&d.hook_point).map_or(0, |m| m.len()) != d.replaced_count {
            bad.insert(d.hook_point);
        }
    }
    bad
}
