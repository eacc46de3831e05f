//! Pixel-space to patch-grid geometry.
//!
//! Pages are cut into non-overlapping square tiles anchored at the page
//! origin. Each encoder grid divides a tile into `rows x cols` patches; a
//! pixel `p` falls in cell `floor(p * cols / tile_size)`, which is the
//! `floor(p / pitch)` mapping computed in exact integer arithmetic (the SAM
//! pitch of 25.6 px is not representable in binary floating point).
//!
//! Compression stages are modelled as strided convolutions over the SAM
//! grid. A compressed cell is *masked* when its whole pooling pre-image is
//! masked and *tainted* when any cell of its receptive field is, so
//! `tainted \ masked` is the residual channel through which masked content
//! still reaches downstream layers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle, `w`/`h` in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Rect { x, y, w, h }
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        !self.is_empty()
            && !other.is_empty()
            && self.x < other.right()
            && other.x < self.right()
            && self.y < other.bottom()
            && other.y < self.bottom()
    }

    pub fn contains_point(&self, px: u32, py: u32) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.bottom()
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        !self.is_empty() && self.right() <= width && self.bottom() <= height
    }

    fn out_of_bounds(&self, width: u32, height: u32) -> Error {
        Error::RectOutOfBounds {
            rect: self.to_string(),
            width,
            height,
        }
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x, self.y, self.w, self.h)
    }
}

/// Page dimensions in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PageSize {
    pub width: u32,
    pub height: u32,
}

impl PageSize {
    /// US letter at 300 DPI.
    pub const LETTER_300DPI: PageSize = PageSize {
        width: 2550,
        height: 3300,
    };

    /// Number of `tile_size` tiles needed to cover the page.
    pub fn tile_count(&self, tile_size: u32) -> usize {
        (self.width.div_ceil(tile_size) * self.height.div_ceil(tile_size)) as usize
    }
}

/// The encoder grids a mask can live on.
///
/// `Projector` is a flat token space: one token per `Comp5` cell of each
/// tile, laid out row-major as a `1 x 25` grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridSpec {
    Sam40,
    Vit16,
    Comp20,
    Comp5,
    Projector,
}

impl GridSpec {
    pub const ALL: [GridSpec; 5] = [
        GridSpec::Sam40,
        GridSpec::Vit16,
        GridSpec::Comp20,
        GridSpec::Comp5,
        GridSpec::Projector,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            GridSpec::Sam40 => "sam40",
            GridSpec::Vit16 => "vit16",
            GridSpec::Comp20 => "comp20",
            GridSpec::Comp5 => "comp5",
            GridSpec::Projector => "projector",
        }
    }

    pub fn tile_size(&self) -> u32 {
        match self {
            GridSpec::Vit16 => 224,
            _ => 1024,
        }
    }

    pub fn rows(&self) -> u32 {
        match self {
            GridSpec::Sam40 => 40,
            GridSpec::Vit16 => 16,
            GridSpec::Comp20 => 20,
            GridSpec::Comp5 => 5,
            GridSpec::Projector => 1,
        }
    }

    pub fn cols(&self) -> u32 {
        match self {
            GridSpec::Sam40 => 40,
            GridSpec::Vit16 => 16,
            GridSpec::Comp20 => 20,
            GridSpec::Comp5 => 5,
            GridSpec::Projector => 25,
        }
    }

    pub fn cells_per_tile(&self) -> u32 {
        self.rows() * self.cols()
    }

    /// Patch pitch in pixels; `None` for the flat projector space.
    pub fn pitch(&self) -> Option<f64> {
        self.is_spatial()
            .then(|| f64::from(self.tile_size()) / f64::from(self.cols()))
    }

    pub fn is_spatial(&self) -> bool {
        !matches!(self, GridSpec::Projector)
    }

    /// Spatial grid whose cells back this grid's indices.
    fn layout(&self) -> GridSpec {
        match self {
            GridSpec::Projector => GridSpec::Comp5,
            other => *other,
        }
    }

    /// Cell along one axis containing tile-local pixel `p`.
    fn cell_of(&self, p: u32) -> u32 {
        let grid = self.layout();
        (u64::from(p) * u64::from(grid.cols()) / u64::from(grid.tile_size())) as u32
    }

    fn flatten(&self, cell: Cell) -> Cell {
        match self {
            GridSpec::Projector => Cell::new(0, cell.row * GridSpec::Comp5.cols() + cell.col),
            _ => cell,
        }
    }

    fn unflatten(&self, cell: Cell) -> Cell {
        match self {
            GridSpec::Projector => {
                let cols = GridSpec::Comp5.cols();
                Cell::new(cell.col / cols, cell.col % cols)
            }
            _ => cell,
        }
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GridSpec::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown grid `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileIndex {
    pub row: u32,
    pub col: u32,
}

impl TileIndex {
    pub const ORIGIN: TileIndex = TileIndex { row: 0, col: 0 };

    pub const fn new(row: u32, col: u32) -> Self {
        TileIndex { row, col }
    }
}

/// Tile-local grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: u32,
    pub col: u32,
}

impl Cell {
    pub const fn new(row: u32, col: u32) -> Self {
        Cell { row, col }
    }
}

/// A patch on some grid: the tile it belongs to and its cell within it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchIndex {
    pub tile: TileIndex,
    pub cell: Cell,
}

impl PatchIndex {
    pub const fn new(tile: TileIndex, row: u32, col: u32) -> Self {
        PatchIndex {
            tile,
            cell: Cell::new(row, col),
        }
    }
}

/// Patches replaced at one hook point.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSet {
    pub grid: GridSpec,
    pub patches: BTreeSet<PatchIndex>,
    pub radius: u32,
}

impl MaskSet {
    pub fn empty(grid: GridSpec, radius: u32) -> Self {
        MaskSet {
            grid,
            patches: BTreeSet::new(),
            radius,
        }
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn contains(&self, patch: &PatchIndex) -> bool {
        self.patches.contains(patch)
    }

    /// Distinct tiles touched by this mask.
    pub fn tiles(&self) -> BTreeSet<TileIndex> {
        self.patches.iter().map(|p| p.tile).collect()
    }

    pub fn coverage(&self, tiles_in_use: usize) -> f64 {
        coverage(self, tiles_in_use)
    }

    /// Fraction of `patches` that this mask replaces; 0 for an empty query.
    pub fn masked_fraction(&self, patches: &BTreeSet<PatchIndex>) -> f64 {
        if patches.is_empty() {
            return 0.0;
        }
        let hit = patches.iter().filter(|p| self.patches.contains(p)).count();
        hit as f64 / patches.len() as f64
    }
}

/// Splits a page-space box into per-tile pieces in tile-local pixels.
pub fn tile_rect(bbox: Rect, page: PageSize, tile_size: u32) -> Result<Vec<(TileIndex, Rect)>> {
    if !bbox.fits_within(page.width, page.height) {
        return Err(bbox.out_of_bounds(page.width, page.height));
    }
    let first_row = bbox.y / tile_size;
    let last_row = (bbox.bottom() - 1) / tile_size;
    let first_col = bbox.x / tile_size;
    let last_col = (bbox.right() - 1) / tile_size;

    let mut pieces = Vec::new();
    for tile_row in first_row..=last_row {
        let ty = tile_row * tile_size;
        let y0 = bbox.y.max(ty);
        let y1 = bbox.bottom().min(ty + tile_size);
        for tile_col in first_col..=last_col {
            let tx = tile_col * tile_size;
            let x0 = bbox.x.max(tx);
            let x1 = bbox.right().min(tx + tile_size);
            pieces.push((
                TileIndex::new(tile_row, tile_col),
                Rect::new(x0 - tx, y0 - ty, x1 - x0, y1 - y0),
            ));
        }
    }
    Ok(pieces)
}

/// Cells of `grid` covered by a tile-local rectangle.
///
/// The range is inclusive of the cell holding the last pixel
/// (`x + w - 1`), so a one-pixel overlap claims the cell. A rectangle
/// spilling past the tile edge is clipped to the grid.
pub fn rect_to_patches(rect: Rect, grid: GridSpec) -> Result<BTreeSet<Cell>> {
    let tile = grid.tile_size();
    if rect.is_empty() || rect.x >= tile || rect.y >= tile {
        return Err(rect.out_of_bounds(tile, tile));
    }
    let layout = grid.layout();
    let row0 = grid.cell_of(rect.y);
    let row1 = grid.cell_of(rect.bottom() - 1).min(layout.rows() - 1);
    let col0 = grid.cell_of(rect.x);
    let col1 = grid.cell_of(rect.right() - 1).min(layout.cols() - 1);

    let mut cells = BTreeSet::new();
    for row in row0..=row1 {
        for col in col0..=col1 {
            cells.insert(grid.flatten(Cell::new(row, col)));
        }
    }
    Ok(cells)
}

/// Every patch of `grid` that a page-space box touches, across tiles.
pub fn bbox_to_patches(bbox: Rect, page: PageSize, grid: GridSpec) -> Result<BTreeSet<PatchIndex>> {
    let mut patches = BTreeSet::new();
    for (tile, local) in tile_rect(bbox, page, grid.tile_size())? {
        patches.extend(
            rect_to_patches(local, grid)?
                .into_iter()
                .map(|cell| PatchIndex { tile, cell }),
        );
    }
    Ok(patches)
}

/// Chebyshev dilation by `radius`, clipped at tile borders.
///
/// Projector tokens are dilated on their underlying 5x5 layout.
pub fn dilate(patches: &BTreeSet<PatchIndex>, radius: u32, grid: GridSpec) -> BTreeSet<PatchIndex> {
    if radius == 0 {
        return patches.clone();
    }
    let layout = grid.layout();
    let r = i64::from(radius);
    let (rows, cols) = (i64::from(layout.rows()), i64::from(layout.cols()));
    let mut out = BTreeSet::new();
    for patch in patches {
        let cell = grid.unflatten(patch.cell);
        let (row, col) = (i64::from(cell.row), i64::from(cell.col));
        for nr in (row - r).max(0)..=(row + r).min(rows - 1) {
            for nc in (col - r).max(0)..=(col + r).min(cols - 1) {
                out.insert(PatchIndex {
                    tile: patch.tile,
                    cell: grid.flatten(Cell::new(nr as u32, nc as u32)),
                });
            }
        }
    }
    out
}

/// Fraction of the grid replaced, relative to `tiles_in_use` full tiles.
pub fn coverage(mask: &MaskSet, tiles_in_use: usize) -> f64 {
    if tiles_in_use == 0 {
        return 0.0;
    }
    let total = tiles_in_use as f64 * f64::from(mask.grid.cells_per_tile());
    (mask.len() as f64 / total).min(1.0)
}

/// One strided convolution stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub kernel: u32,
    pub stride: u32,
    pub padding: u32,
}

impl ConvStage {
    /// Inclusive source range read by output index `i`, clipped to `[0, len)`.
    pub fn receptive_field(&self, i: u32, len: u32) -> (u32, u32) {
        let start = i64::from(i) * i64::from(self.stride) - i64::from(self.padding);
        let end = start + i64::from(self.kernel) - 1;
        (start.max(0) as u32, end.min(i64::from(len) - 1) as u32)
    }

    /// Inclusive range of output indices whose field contains source `x`.
    fn outputs_reading(&self, x: u32, out_len: u32) -> Option<(u32, u32)> {
        let (x, k, s, p) = (
            i64::from(x),
            i64::from(self.kernel),
            i64::from(self.stride),
            i64::from(self.padding),
        );
        let lo = (x + p - k + 1).max(0);
        let lo = (lo + s - 1) / s;
        let hi = ((x + p) / s).min(i64::from(out_len) - 1);
        (lo <= hi).then_some((lo as u32, hi as u32))
    }
}

/// Receptive-field model of the two compression stages (40 -> 20 -> 5).
///
/// Kernel sizes are assumptions; only the grid sizes are fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionModel {
    pub net2: ConvStage,
    pub net3: ConvStage,
}

impl Default for CompressionModel {
    fn default() -> Self {
        CompressionModel {
            net2: ConvStage {
                kernel: 3,
                stride: 2,
                padding: 1,
            },
            net3: ConvStage {
                kernel: 5,
                stride: 4,
                padding: 1,
            },
        }
    }
}

/// Masks after propagating a SAM mask through both compression stages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Propagation {
    pub comp20_masked: MaskSet,
    pub comp20_tainted: MaskSet,
    pub comp5_masked: MaskSet,
    pub comp5_tainted: MaskSet,
}

impl Propagation {
    /// Compressed cells that carry masked input without being masked.
    pub fn residual_leakage(&self) -> BTreeSet<PatchIndex> {
        self.comp20_tainted
            .patches
            .difference(&self.comp20_masked.patches)
            .copied()
            .collect()
    }

    /// Projector tokens whose `Comp5` ancestor is tainted.
    pub fn projector_tokens(&self) -> MaskSet {
        MaskSet {
            grid: GridSpec::Projector,
            patches: self
                .comp5_tainted
                .patches
                .iter()
                .map(|p| PatchIndex {
                    tile: p.tile,
                    cell: GridSpec::Projector.flatten(p.cell),
                })
                .collect(),
            radius: self.comp5_tainted.radius,
        }
    }
}

pub fn propagate_compression(mask: &MaskSet, model: &CompressionModel) -> Result<Propagation> {
    if mask.grid != GridSpec::Sam40 {
        return Err(Error::GridMismatch {
            expected: GridSpec::Sam40,
            found: mask.grid,
        });
    }
    let comp20_masked = pool_all(mask, GridSpec::Comp20);
    let comp20_tainted = pool_any(mask, GridSpec::Comp20, &model.net2);
    let comp5_masked = pool_all(&comp20_masked, GridSpec::Comp5);
    let comp5_tainted = pool_any(&comp20_tainted, GridSpec::Comp5, &model.net3);
    Ok(Propagation {
        comp20_masked,
        comp20_tainted,
        comp5_masked,
        comp5_tainted,
    })
}

fn by_tile(mask: &MaskSet) -> BTreeMap<TileIndex, BTreeSet<Cell>> {
    let mut tiles: BTreeMap<TileIndex, BTreeSet<Cell>> = BTreeMap::new();
    for p in &mask.patches {
        tiles.entry(p.tile).or_default().insert(p.cell);
    }
    tiles
}

/// Output cells whose whole `factor x factor` pre-image is masked.
fn pool_all(src: &MaskSet, dst: GridSpec) -> MaskSet {
    let factor = src.grid.rows() / dst.rows();
    let mut out = MaskSet::empty(dst, src.radius);
    for (tile, cells) in by_tile(src) {
        let candidates: BTreeSet<Cell> = cells
            .iter()
            .map(|c| Cell::new(c.row / factor, c.col / factor))
            .collect();
        for cand in candidates {
            let full = (0..factor).all(|dr| {
                (0..factor).all(|dc| {
                    cells.contains(&Cell::new(cand.row * factor + dr, cand.col * factor + dc))
                })
            });
            if full {
                out.patches.insert(PatchIndex { tile, cell: cand });
            }
        }
    }
    out
}

/// Output cells whose receptive field touches any masked source cell.
fn pool_any(src: &MaskSet, dst: GridSpec, stage: &ConvStage) -> MaskSet {
    let mut out = MaskSet::empty(dst, src.radius);
    for p in &src.patches {
        let (Some(rows), Some(cols)) = (
            stage.outputs_reading(p.cell.row, dst.rows()),
            stage.outputs_reading(p.cell.col, dst.cols()),
        ) else {
            continue;
        };
        for row in rows.0..=rows.1 {
            for col in cols.0..=cols.1 {
                out.patches.insert(PatchIndex::new(p.tile, row, col));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cells(pairs: &[(u32, u32)]) -> BTreeSet<Cell> {
        pairs.iter().map(|&(r, c)| Cell::new(r, c)).collect()
    }

    fn sam_mask(pairs: &[(u32, u32)]) -> MaskSet {
        MaskSet {
            grid: GridSpec::Sam40,
            patches: pairs
                .iter()
                .map(|&(r, c)| PatchIndex::new(TileIndex::ORIGIN, r, c))
                .collect(),
            radius: 0,
        }
    }

    fn local(set: &MaskSet) -> BTreeSet<Cell> {
        set.patches.iter().map(|p| p.cell).collect()
    }

    #[test]
    fn pitch_times_cols_is_tile_size() {
        for grid in GridSpec::ALL.into_iter().filter(GridSpec::is_spatial) {
            let pitch = grid.pitch().unwrap();
            assert!((pitch * f64::from(grid.cols()) - f64::from(grid.tile_size())).abs() < 1e-9);
        }
        assert_eq!(GridSpec::Sam40.pitch(), Some(25.6));
        assert_eq!(GridSpec::Vit16.pitch(), Some(14.0));
        assert_eq!(GridSpec::Comp20.pitch(), Some(51.2));
        assert_eq!(GridSpec::Projector.pitch(), None);
    }

    #[test]
    fn tile_rect_inside_first_tile_is_unchanged() {
        let page = PageSize::LETTER_300DPI;
        let r = Rect::new(100, 200, 300, 40);
        assert_eq!(tile_rect(r, page, 1024).unwrap(), vec![(TileIndex::ORIGIN, r)]);
    }

    #[test]
    fn tile_rect_splits_at_tile_boundary() {
        let page = PageSize {
            width: 2048,
            height: 1024,
        };
        let pieces = tile_rect(Rect::new(1000, 10, 48, 20), page, 1024).unwrap();
        assert_eq!(
            pieces,
            vec![
                (TileIndex::new(0, 0), Rect::new(1000, 10, 24, 20)),
                (TileIndex::new(0, 1), Rect::new(0, 10, 24, 20)),
            ]
        );
    }

    #[test]
    fn tile_rect_rejects_degenerate_and_outside() {
        let page = PageSize::LETTER_300DPI;
        assert!(tile_rect(Rect::new(10, 10, 0, 5), page, 1024).is_err());
        assert!(tile_rect(Rect::new(2500, 10, 51, 5), page, 1024).is_err());
    }

    #[test]
    fn rect_to_patches_examples() {
        assert_eq!(
            rect_to_patches(Rect::new(0, 0, 1, 1), GridSpec::Sam40).unwrap(),
            cells(&[(0, 0)])
        );
        assert_eq!(
            rect_to_patches(Rect::new(256, 512, 100, 20), GridSpec::Sam40).unwrap(),
            cells(&[(20, 10), (20, 11), (20, 12), (20, 13)])
        );
        assert_eq!(
            rect_to_patches(Rect::new(210, 0, 20, 14), GridSpec::Vit16).unwrap(),
            cells(&[(0, 15)])
        );
    }

    #[test]
    fn one_pixel_overlap_claims_the_cell() {
        // x = 25 is the last pixel of column 0; x = 26 lies in column 1.
        let got = rect_to_patches(Rect::new(25, 0, 2, 1), GridSpec::Sam40).unwrap();
        assert_eq!(got, cells(&[(0, 0), (0, 1)]));
    }

    #[test]
    fn projector_tokens_follow_comp5_layout() {
        let got = rect_to_patches(Rect::new(210, 420, 10, 10), GridSpec::Projector).unwrap();
        assert_eq!(got, cells(&[(0, 2 * 5 + 1)]));
    }

    #[test]
    fn dilate_examples() {
        let single = |r, c| BTreeSet::from([PatchIndex::new(TileIndex::ORIGIN, r, c)]);
        assert_eq!(dilate(&single(20, 10), 1, GridSpec::Sam40).len(), 9);
        assert_eq!(dilate(&single(0, 0), 1, GridSpec::Sam40).len(), 4);
        let input = single(7, 3);
        assert_eq!(dilate(&input, 0, GridSpec::Sam40), input);
    }

    #[test]
    fn dilation_does_not_cross_tiles() {
        let p = BTreeSet::from([PatchIndex::new(TileIndex::new(0, 1), 0, 0)]);
        let out = dilate(&p, 2, GridSpec::Sam40);
        assert!(out.iter().all(|q| q.tile == TileIndex::new(0, 1)));
        assert_eq!(out.len(), 9);
    }

    #[test]
    fn coverage_examples() {
        let mut mask = MaskSet::empty(GridSpec::Sam40, 1);
        assert_eq!(coverage(&mask, 1), 0.0);
        for i in 0..400 {
            mask.patches.insert(PatchIndex::new(TileIndex::ORIGIN, i / 40, i % 40));
        }
        assert_eq!(coverage(&mask, 1), 0.25);
        let mut mask = MaskSet::empty(GridSpec::Sam40, 1);
        for i in 0..539 {
            mask.patches.insert(PatchIndex::new(TileIndex::ORIGIN, i / 40, i % 40));
        }
        assert!((coverage(&mask, 1) - 0.336875).abs() < 1e-12);
        assert_eq!(format!("{:.1}", coverage(&mask, 1) * 100.0), "33.7");
    }

    #[test]
    fn full_mask_compresses_to_full_mask() {
        let all: Vec<(u32, u32)> = (0..40).flat_map(|r| (0..40).map(move |c| (r, c))).collect();
        let prop = propagate_compression(&sam_mask(&all), &CompressionModel::default()).unwrap();
        assert_eq!(prop.comp20_masked.len(), 400);
        assert_eq!(prop.comp20_tainted, prop.comp20_masked);
        assert_eq!(prop.comp5_masked.len(), 25);
        assert!(prop.residual_leakage().is_empty());
    }

    #[test]
    fn single_corner_cell_taints_one_compressed_cell() {
        let prop = propagate_compression(&sam_mask(&[(0, 0)]), &CompressionModel::default()).unwrap();
        assert!(prop.comp20_masked.is_empty());
        assert_eq!(local(&prop.comp20_tainted), cells(&[(0, 0)]));
    }

    #[test]
    fn aligned_block_masks_one_and_taints_neighbours() {
        let mask = sam_mask(&[(0, 0), (0, 1), (1, 0), (1, 1)]);
        let prop = propagate_compression(&mask, &CompressionModel::default()).unwrap();
        assert_eq!(local(&prop.comp20_masked), cells(&[(0, 0)]));
        assert_eq!(
            local(&prop.comp20_tainted),
            cells(&[(0, 0), (0, 1), (1, 0), (1, 1)])
        );
    }

    #[test]
    fn propagation_rejects_non_sam_source() {
        let mask = MaskSet::empty(GridSpec::Comp20, 1);
        assert!(matches!(
            propagate_compression(&mask, &CompressionModel::default()),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn receptive_fields_cover_every_source_row() {
        let model = CompressionModel::default();
        let covered: BTreeSet<u32> = (0..20)
            .flat_map(|i| {
                let (a, b) = model.net2.receptive_field(i, 40);
                a..=b
            })
            .collect();
        assert_eq!(covered.len(), 40);
        let covered: BTreeSet<u32> = (0..5)
            .flat_map(|i| {
                let (a, b) = model.net3.receptive_field(i, 20);
                a..=b
            })
            .collect();
        assert_eq!(covered.len(), 20);
    }
}
