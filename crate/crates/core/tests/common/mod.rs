//! Brute-force reference implementations shared by the property and
//! acceptance suites. They are written from the definitions, not from the
//! library code, and favour obviousness over speed.

#![allow(dead_code)]

use std::collections::BTreeSet;

use phimask_core::grid::{Cell, GridSpec, PageSize, PatchIndex, Rect, TileIndex};
use rand::Rng;

/// `(tile, cell)` pairs hit by pixels `start..end` along one axis.
///
/// Each pixel is placed by searching for the cell `c` with
/// `c * tile <= local * cells < (c + 1) * tile`.
fn axis_cells(start: u32, end: u32, tile: u32, cells: u32) -> BTreeSet<(u32, u32)> {
    let mut out = BTreeSet::new();
    for p in start..end {
        let t = p / tile;
        let local = u64::from(p - t * tile);
        let (tile64, cells64) = (u64::from(tile), u64::from(cells));
        let c = (0..cells)
            .find(|&c| {
                let c = u64::from(c);
                c * tile64 <= local * cells64 && local * cells64 < (c + 1) * tile64
            })
            .expect("every pixel lies in some cell");
        out.insert((t, c));
    }
    out
}

/// Patches touched by `bbox`, found pixel by pixel. The grid is separable,
/// so scanning each axis and taking the product visits the same pixels.
pub fn brute_patches(bbox: Rect, grid: GridSpec) -> BTreeSet<PatchIndex> {
    let tile = grid.tile_size();
    let xs = axis_cells(bbox.x, bbox.right(), tile, grid.cols());
    let ys = axis_cells(bbox.y, bbox.bottom(), tile, grid.rows());
    let mut out = BTreeSet::new();
    for &(tr, r) in &ys {
        for &(tc, c) in &xs {
            out.insert(PatchIndex::new(TileIndex::new(tr, tc), r, c));
        }
    }
    out
}

pub fn random_rect<R: Rng>(rng: &mut R, page: PageSize, max_side: u32) -> Rect {
    let x = rng.gen_range(0..page.width);
    let y = rng.gen_range(0..page.height);
    let w = rng.gen_range(1..=max_side.min(page.width - x));
    let h = rng.gen_range(1..=max_side.min(page.height - y));
    Rect::new(x, y, w, h)
}

pub fn chebyshev(a: Cell, b: Cell) -> u32 {
    a.row.abs_diff(b.row).max(a.col.abs_diff(b.col))
}

/// Dilation by definition: every in-grid cell of the same tile within
/// Chebyshev distance `r` of a source cell.
pub fn brute_dilate(src: &BTreeSet<PatchIndex>, r: u32, rows: u32, cols: u32) -> BTreeSet<PatchIndex> {
    let tiles: BTreeSet<TileIndex> = src.iter().map(|p| p.tile).collect();
    let mut out = BTreeSet::new();
    for tile in tiles {
        for row in 0..rows {
            for col in 0..cols {
                let q = Cell::new(row, col);
                if src.iter().any(|p| p.tile == tile && chebyshev(p.cell, q) <= r) {
                    out.insert(PatchIndex { tile, cell: q });
                }
            }
        }
    }
    out
}

/// Compressed 20x20 cells of one tile: `masked` when all four source cells
/// under the 2x2 pool are masked, `tainted` when any source cell read by
/// the 3x3 stride-2 pad-1 kernel is masked.
pub fn brute_taint(mask: &[[bool; 40]; 40]) -> (BTreeSet<Cell>, BTreeSet<Cell>) {
    let mut masked = BTreeSet::new();
    let mut tainted = BTreeSet::new();
    for i in 0..20usize {
        for j in 0..20usize {
            if mask[2 * i][2 * j] && mask[2 * i + 1][2 * j] && mask[2 * i][2 * j + 1] && mask[2 * i + 1][2 * j + 1] {
                masked.insert(Cell::new(i as u32, j as u32));
            }
            let mut any = false;
            for k in 0..3 {
                for l in 0..3 {
                    let r = 2 * i as i64 - 1 + k;
                    let c = 2 * j as i64 - 1 + l;
                    if (0..40).contains(&r) && (0..40).contains(&c) && mask[r as usize][c as usize] {
                        any = true;
                    }
                }
            }
            if any {
                tainted.insert(Cell::new(i as u32, j as u32));
            }
        }
    }
    (masked, tainted)
}

/// True when the mask is exactly a union of aligned 2x2 blocks.
pub fn is_block_union(mask: &[[bool; 40]; 40]) -> bool {
    (0..20).all(|i| {
        (0..20).all(|j| {
            let b = [
                mask[2 * i][2 * j],
                mask[2 * i + 1][2 * j],
                mask[2 * i][2 * j + 1],
                mask[2 * i + 1][2 * j + 1],
            ];
            b.iter().all(|&x| x) || b.iter().all(|&x| !x)
        })
    })
}

/// Random 40x40 mask: scattered cells, a rectangle, or aligned blocks.
pub fn random_sam_mask<R: Rng>(rng: &mut R) -> [[bool; 40]; 40] {
    let mut m = [[false; 40]; 40];
    match rng.gen_range(0..3) {
        0 => {
            for _ in 0..rng.gen_range(1..=60) {
                m[rng.gen_range(0..40)][rng.gen_range(0..40)] = true;
            }
        }
        1 => {
            let (r0, c0) = (rng.gen_range(0..40), rng.gen_range(0..40));
            let (r1, c1) = (rng.gen_range(r0..40), rng.gen_range(c0..40));
            for row in m.iter_mut().take(r1 + 1).skip(r0) {
                for cell in row.iter_mut().take(c1 + 1).skip(c0) {
                    *cell = true;
                }
            }
        }
        _ => {
            for _ in 0..rng.gen_range(1..=12) {
                let (i, j) = (rng.gen_range(0..20), rng.gen_range(0..20));
                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    m[2 * i + dr][2 * j + dc] = true;
                }
            }
        }
    }
    m
}
