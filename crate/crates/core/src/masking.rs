//! Masking strategies and per-document mask construction.
//!
//! A strategy names the hook points to intercept and the dilation radius
//! at each. Masks are derived from annotation boxes only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::document::{Document, PhiCategory};
use crate::error::{Error, Result};
use crate::grid::{
    bbox_to_patches, dilate, propagate_compression, tile_rect, CompressionModel, GridSpec,
    MaskSet, PatchIndex, TileIndex,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HookPoint {
    SamBlock6,
    SamBlock9,
    SamBlock11,
    CompressionNet2,
    VisionEncoder,
    Projector,
}

impl HookPoint {
    pub const ALL: [HookPoint; 6] = [
        HookPoint::SamBlock6,
        HookPoint::SamBlock9,
        HookPoint::SamBlock11,
        HookPoint::CompressionNet2,
        HookPoint::VisionEncoder,
        HookPoint::Projector,
    ];

    pub fn grid(&self) -> GridSpec {
        match self {
            HookPoint::SamBlock6 | HookPoint::SamBlock9 | HookPoint::SamBlock11 => GridSpec::Sam40,
            HookPoint::CompressionNet2 => GridSpec::Comp20,
            HookPoint::VisionEncoder => GridSpec::Vit16,
            HookPoint::Projector => GridSpec::Projector,
        }
    }

    pub fn is_sam_block(&self) -> bool {
        self.grid() == GridSpec::Sam40
    }

    /// Hooks that act before vision and layout features are fused.
    pub fn is_pre_fusion(&self) -> bool {
        !matches!(self, HookPoint::Projector)
    }

    pub fn name(&self) -> &'static str {
        match self {
            HookPoint::SamBlock6 => "sam_block6",
            HookPoint::SamBlock9 => "sam_block9",
            HookPoint::SamBlock11 => "sam_block11",
            HookPoint::CompressionNet2 => "compression_net2",
            HookPoint::VisionEncoder => "vision_encoder",
            HookPoint::Projector => "projector",
        }
    }

    /// Mask token shape expected by the adapter at this hook.
    pub fn mask_token(&self) -> MaskTokenSpec {
        let dim = match self {
            HookPoint::SamBlock6 | HookPoint::SamBlock9 | HookPoint::SamBlock11 => 768,
            HookPoint::CompressionNet2 => 512,
            HookPoint::VisionEncoder => 1024,
            HookPoint::Projector => 1280,
        };
        MaskTokenSpec {
            dim,
            sigma: 0.02,
            trainable: true,
        }
    }
}

impl fmt::Display for HookPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HookPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HookPoint::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown hook point `{s}`")))
    }
}

/// Replacement token: zero-mean gaussian init with standard deviation `sigma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskTokenSpec {
    pub dim: usize,
    pub sigma: f64,
    pub trainable: bool,
}

impl MaskTokenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.sigma.is_nan() || self.sigma <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "mask token needs dim > 0 and sigma > 0, got {} / {}",
                self.dim, self.sigma
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyId {
    V3,
    V4,
    V5,
    V6,
    V7,
    V8,
    V9,
}

impl StrategyId {
    pub fn required_hooks(&self) -> &'static [HookPoint] {
        use HookPoint::*;
        match self {
            StrategyId::V3 | StrategyId::V5 => &[SamBlock11],
            StrategyId::V4 => &[SamBlock6, SamBlock9, SamBlock11],
            StrategyId::V6 => &[CompressionNet2],
            StrategyId::V7 => &[SamBlock11, CompressionNet2],
            StrategyId::V8 => &[SamBlock11, VisionEncoder],
            StrategyId::V9 => &[Projector],
        }
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HookRadius {
    pub hook_point: HookPoint,
    pub radius: u32,
}

pub const MAX_CATEGORY_RADIUS: u32 = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub id: StrategyId,
    pub hooks: Vec<HookRadius>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_category_radii: Option<BTreeMap<PhiCategory, u32>>,
}

impl StrategyConfig {
    pub fn new(id: StrategyId, hooks: &[(HookPoint, u32)]) -> Self {
        StrategyConfig {
            id,
            hooks: hooks
                .iter()
                .map(|&(hook_point, radius)| HookRadius { hook_point, radius })
                .collect(),
            per_category_radii: None,
        }
    }

    pub fn with_category_radii(mut self, radii: BTreeMap<PhiCategory, u32>) -> Self {
        self.per_category_radii = Some(radii);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Error::InvalidStrategy(format!("{}: {msg}", self.id));
        let hooks: BTreeSet<HookPoint> = self.hooks.iter().map(|h| h.hook_point).collect();
        let required: BTreeSet<HookPoint> = self.id.required_hooks().iter().copied().collect();
        if hooks.len() != self.hooks.len() {
            return Err(invalid("duplicate hook point".into()));
        }
        if hooks != required {
            return Err(invalid(format!(
                "hooks {:?} do not match required {:?}",
                hooks, required
            )));
        }
        if let Some(h) = self.hooks.iter().find(|h| h.radius == 0) {
            return Err(invalid(format!("radius at {} must be >= 1", h.hook_point)));
        }
        match (&self.per_category_radii, self.id) {
            (Some(radii), StrategyId::V5) => {
                if radii.len() != PhiCategory::ALL.len() {
                    return Err(invalid("per-category radii must cover all 7 categories".into()));
                }
                if let Some((c, r)) = radii
                    .iter()
                    .find(|(_, r)| !(1..=MAX_CATEGORY_RADIUS).contains(*r))
                {
                    return Err(invalid(format!("radius {r} for {c} outside 1..=8")));
                }
            }
            (None, StrategyId::V5) => {
                return Err(invalid("per-category radii are required".into()));
            }
            (Some(_), _) => return Err(invalid("per-category radii are only valid for V5".into())),
            (None, _) => {}
        }
        Ok(())
    }

    pub fn radius_at(&self, hook: HookPoint) -> Option<u32> {
        self.hooks
            .iter()
            .find(|h| h.hook_point == hook)
            .map(|h| h.radius)
    }

    fn radius_for(&self, hook_radius: u32, category: PhiCategory) -> u32 {
        self.per_category_radii
            .as_ref()
            .and_then(|r| r.get(&category).copied())
            .unwrap_or(hook_radius)
    }

    /// Short radius description, e.g. `1`, `1,2` or `1-8`.
    pub fn radius_label(&self) -> String {
        if let Some(radii) = &self.per_category_radii {
            let lo = radii.values().min().copied().unwrap_or(0);
            let hi = radii.values().max().copied().unwrap_or(0);
            return if lo == hi {
                lo.to_string()
            } else {
                format!("{lo}-{hi}")
            };
        }
        let parts: Vec<String> = self.hooks.iter().map(|h| h.radius.to_string()).collect();
        let mut unique = parts.clone();
        unique.dedup();
        if unique.len() == 1 {
            unique.remove(0)
        } else {
            parts.join(",")
        }
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let cfg: StrategyConfig = serde_json::from_str(raw)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw)
    }
}

/// Per-category radii shipped with the type-specific preset.
pub fn v5_default_radii() -> BTreeMap<PhiCategory, u32> {
    BTreeMap::from([
        (PhiCategory::Name, 3),
        (PhiCategory::DateOfBirth, 2),
        (PhiCategory::Address, 8),
        (PhiCategory::Mrn, 1),
        (PhiCategory::Ssn, 1),
        (PhiCategory::Email, 1),
        (PhiCategory::Account, 1),
    ])
}

/// A named strategy configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Preset {
    pub name: &'static str,
    pub config: StrategyConfig,
}

/// The fourteen strategy rows of the study, in table order.
pub fn presets() -> Vec<Preset> {
    use HookPoint::*;
    use StrategyId::*;
    let p = |name, config| Preset { name, config };
    vec![
        p("v3-r1", StrategyConfig::new(V3, &[(SamBlock11, 1)])),
        p("v3-r2", StrategyConfig::new(V3, &[(SamBlock11, 2)])),
        p("v3-r3", StrategyConfig::new(V3, &[(SamBlock11, 3)])),
        p(
            "v4-r1",
            StrategyConfig::new(V4, &[(SamBlock6, 1), (SamBlock9, 1), (SamBlock11, 1)]),
        ),
        p(
            "v5",
            StrategyConfig::new(V5, &[(SamBlock11, 1)]).with_category_radii(v5_default_radii()),
        ),
        p("v6-r1", StrategyConfig::new(V6, &[(CompressionNet2, 1)])),
        p("v6-r2", StrategyConfig::new(V6, &[(CompressionNet2, 2)])),
        p("v6-r3", StrategyConfig::new(V6, &[(CompressionNet2, 3)])),
        p(
            "v7-r1-2",
            StrategyConfig::new(V7, &[(SamBlock11, 1), (CompressionNet2, 2)]),
        ),
        p(
            "v7-r1-3",
            StrategyConfig::new(V7, &[(SamBlock11, 1), (CompressionNet2, 3)]),
        ),
        p(
            "v8-r1-1",
            StrategyConfig::new(V8, &[(SamBlock11, 1), (VisionEncoder, 1)]),
        ),
        p("v9-r1", StrategyConfig::new(V9, &[(Projector, 1)])),
        p("v9-r2", StrategyConfig::new(V9, &[(Projector, 2)])),
        p("v9-r3", StrategyConfig::new(V9, &[(Projector, 3)])),
    ]
}

/// Preset names forming the radius ablation grid.
pub const ABLATION_PRESETS: [&str; 9] = [
    "v3-r1", "v3-r2", "v3-r3", "v6-r1", "v6-r2", "v6-r3", "v9-r1", "v9-r2", "v9-r3",
];

pub fn preset(name: &str) -> Result<StrategyConfig> {
    presets()
        .into_iter()
        .find(|p| p.name == name)
        .map(|p| p.config)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))
}

pub type MaskMap = BTreeMap<HookPoint, MaskSet>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HookStats {
    pub grid: GridSpec,
    pub radius: u32,
    pub patches: usize,
    /// Tiles (at this grid's tile size) touched by any annotation.
    pub tiles_in_use: usize,
    pub coverage_tile: f64,
    pub coverage_page: f64,
    /// Compressed cells carrying masked input without being masked;
    /// SAM hooks only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_leakage: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskBuild {
    pub masks: MaskMap,
    pub stats: BTreeMap<HookPoint, HookStats>,
}

/// Tiles of size `tile_size` touched by any annotation box.
pub fn tiles_in_use(doc: &Document, tile_size: u32) -> Result<BTreeSet<TileIndex>> {
    let mut tiles = BTreeSet::new();
    for a in &doc.annotations {
        tiles.extend(tile_rect(a.bbox, doc.page, tile_size)?.into_iter().map(|(t, _)| t));
    }
    Ok(tiles)
}

fn annotation_mask(
    doc: &Document,
    strategy: &StrategyConfig,
    grid: GridSpec,
    hook_radius: u32,
) -> Result<BTreeSet<PatchIndex>> {
    let mut patches = BTreeSet::new();
    for a in &doc.annotations {
        let footprint = bbox_to_patches(a.bbox, doc.page, grid)?;
        let radius = strategy.radius_for(hook_radius, a.category);
        patches.extend(dilate(&footprint, radius, grid));
    }
    Ok(patches)
}

/// Builds the mask set at every hook point of `strategy` for `doc`.
pub fn build_masks(
    doc: &Document,
    strategy: &StrategyConfig,
    compression: &CompressionModel,
) -> Result<MaskBuild> {
    let mut masks = MaskMap::new();
    let mut stats = BTreeMap::new();
    for h in &strategy.hooks {
        let grid = h.hook_point.grid();
        let mut residual = None;
        let mask = match h.hook_point {
            HookPoint::Projector => {
                let sam = MaskSet {
                    grid: GridSpec::Sam40,
                    patches: annotation_mask(doc, strategy, GridSpec::Sam40, h.radius)?,
                    radius: h.radius,
                };
                propagate_compression(&sam, compression)?.projector_tokens()
            }
            _ => {
                let mask = MaskSet {
                    grid,
                    patches: annotation_mask(doc, strategy, grid, h.radius)?,
                    radius: h.radius,
                };
                if grid == GridSpec::Sam40 {
                    residual = Some(propagate_compression(&mask, compression)?.residual_leakage().len());
                }
                mask
            }
        };
        let in_use = tiles_in_use(doc, grid.tile_size())?.len();
        stats.insert(
            h.hook_point,
            HookStats {
                grid,
                radius: h.radius,
                patches: mask.len(),
                tiles_in_use: in_use,
                coverage_tile: mask.coverage(in_use),
                coverage_page: mask.coverage(doc.page.tile_count(grid.tile_size())),
                residual_leakage: residual,
            },
        );
        masks.insert(h.hook_point, mask);
    }
    Ok(MaskBuild { masks, stats })
}

/// Interchange record consumed by the hook adapter.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub doc_id: String,
    pub hook_point: HookPoint,
    pub grid_name: GridSpec,
    pub tile_row: u32,
    pub tile_col: u32,
    pub row: u32,
    pub col: u32,
    pub radius: u32,
}

pub fn mask_records(doc_id: &str, masks: &MaskMap) -> Vec<MaskRecord> {
    masks
        .iter()
        .flat_map(|(hook, mask)| {
            mask.patches.iter().map(move |p| MaskRecord {
                doc_id: doc_id.to_string(),
                hook_point: *hook,
                grid_name: mask.grid,
                tile_row: p.tile.row,
                tile_col: p.tile.col,
                row: p.cell.row,
                col: p.cell.col,
                radius: mask.radius,
            })
        })
        .collect()
}

/// Serializes mask maps as line-delimited interchange records.
pub fn write_masks<'a, W: Write>(
    out: &mut W,
    docs: impl IntoIterator<Item = (&'a str, &'a MaskMap)>,
) -> Result<()> {
    for (doc_id, masks) in docs {
        for record in mask_records(doc_id, masks) {
            serde_json::to_writer(&mut *out, &record)?;
            out.write_all(b"\n").map_err(|e| Error::io("<mask stream>", e))?;
        }
    }
    Ok(())
}

pub fn export_masks(path: &Path, docs: &[(String, MaskMap)]) -> Result<()> {
    let mut buf = Vec::new();
    write_masks(&mut buf, docs.iter().map(|(id, m)| (id.as_str(), m)))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Parses interchange records back into per-document mask maps.
pub fn import_masks(path: &Path) -> Result<BTreeMap<String, MaskMap>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: BTreeMap<String, MaskMap> = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let r: MaskRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if r.grid_name != r.hook_point.grid() {
            return Err(malformed(format!(
                "{} lives on {}, not {}",
                r.hook_point,
                r.hook_point.grid(),
                r.grid_name
            )));
        }
        if r.row >= r.grid_name.rows() || r.col >= r.grid_name.cols() {
            return Err(malformed(format!("cell ({}, {}) outside {}", r.row, r.col, r.grid_name)));
        }
        let mask = out
            .entry(r.doc_id)
            .or_default()
            .entry(r.hook_point)
            .or_insert_with(|| MaskSet::empty(r.grid_name, r.radius));
        if mask.radius != r.radius {
            return Err(malformed("inconsistent radius within one hook".into()));
        }
        mask.patches
            .insert(PatchIndex::new(TileIndex::new(r.tile_row, r.tile_col), r.row, r.col));
    }
    Ok(out)
}
