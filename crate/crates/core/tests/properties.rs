mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use phimask_core::backend::{EmissionKind, OcrBackend, SurrogateBackend};
use phimask_core::document::{generate_document, PhiCategory, Template, BASELINE_CHAR_BAND};
use phimask_core::eval::score_text;
use phimask_core::grid::{
    bbox_to_patches, dilate, propagate_compression, tile_rect, Cell, CompressionModel, GridSpec,
    MaskSet, PageSize, PatchIndex, Rect, TileIndex,
};
use phimask_core::masking::{build_masks, preset, HookPoint};
use phimask_core::redact::Redactor;

const PAGE: PageSize = PageSize::LETTER_300DPI;

fn rect_strategy() -> impl Strategy<Value = Rect> {
    (0..PAGE.width, 0..PAGE.height).prop_flat_map(|(x, y)| {
        (1..=(PAGE.width - x).min(700), 1..=(PAGE.height - y).min(700))
            .prop_map(move |(w, h)| Rect::new(x, y, w, h))
    })
}

fn spatial_grid() -> impl Strategy<Value = GridSpec> {
    prop_oneof![Just(GridSpec::Sam40), Just(GridSpec::Vit16), Just(GridSpec::Comp20)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn patches_match_pixel_scan(rect in rect_strategy(), grid in spatial_grid()) {
        prop_assert_eq!(bbox_to_patches(rect, PAGE, grid).unwrap(), common::brute_patches(rect, grid));
    }

    #[test]
    fn tile_pieces_partition_the_box(rect in rect_strategy(), ts in prop_oneof![Just(224u32), Just(1024u32)]) {
        let pieces = tile_rect(rect, PAGE, ts).unwrap();
        let area: u64 = pieces.iter().map(|(_, r)| r.area()).sum();
        prop_assert_eq!(area, rect.area());
        let tiles: BTreeSet<TileIndex> = pieces.iter().map(|(t, _)| *t).collect();
        prop_assert_eq!(tiles.len(), pieces.len());
        for (t, local) in &pieces {
            prop_assert!(local.right() <= ts && local.bottom() <= ts && !local.is_empty());
            let global = Rect::new(local.x + t.col * ts, local.y + t.row * ts, local.w, local.h);
            prop_assert!(global.x >= rect.x && global.right() <= rect.right());
            prop_assert!(global.y >= rect.y && global.bottom() <= rect.bottom());
        }
    }

    #[test]
    fn dilation_matches_definition(
        cells in prop::collection::btree_set((0u32..2, 0u32..40, 0u32..40), 1..20),
        r in 0u32..=8,
        grid in spatial_grid(),
    ) {
        let n = grid.rows();
        let src: BTreeSet<PatchIndex> = cells
            .iter()
            .map(|&(t, row, col)| PatchIndex::new(TileIndex::new(0, t), row % n, col % n))
            .collect();
        let out = dilate(&src, r, grid);
        prop_assert_eq!(&out, &common::brute_dilate(&src, r, n, n));
        // Monotone in radius and never leaves the source tiles.
        prop_assert!(out.is_superset(&src));
        prop_assert!(dilate(&src, r + 1, grid).is_superset(&out));
        let tiles = |s: &BTreeSet<PatchIndex>| s.iter().map(|p| p.tile).collect::<BTreeSet<_>>();
        prop_assert_eq!(tiles(&out), tiles(&src));
        prop_assert!(out.iter().all(|p| p.cell.row < n && p.cell.col < n));
    }

    #[test]
    fn projector_dilation_stays_on_its_layout(tok in 0u32..25, r in 0u32..=8) {
        let src = BTreeSet::from([PatchIndex::new(TileIndex::ORIGIN, 0, tok)]);
        let out = dilate(&src, r, GridSpec::Projector);
        prop_assert!(out.iter().all(|p| p.cell.row == 0 && p.cell.col < 25));
        let (row, col) = (tok / 5, tok % 5);
        let expect = (0..25u32)
            .filter(|t| (t / 5).abs_diff(row).max((t % 5).abs_diff(col)) <= r)
            .count();
        prop_assert_eq!(out.len(), expect);
    }

    #[test]
    fn taint_matches_definition(seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let grid = common::random_sam_mask(&mut rng);
        let mask = to_mask(&grid);
        let p = propagate_compression(&mask, &CompressionModel::default()).unwrap();
        let (masked, tainted) = common::brute_taint(&grid);
        let cells = |m: &MaskSet| m.patches.iter().map(|p| p.cell).collect::<BTreeSet<Cell>>();
        prop_assert_eq!(cells(&p.comp20_masked), masked);
        prop_assert_eq!(cells(&p.comp20_tainted), tainted);
        prop_assert!(p.comp5_tainted.patches.is_superset(&p.comp5_masked.patches));
    }

    #[test]
    fn growing_a_mask_never_unsuppresses(seed in 0u64..500, extra in prop::collection::vec((0u32..40, 0u32..40), 0..200)) {
        let doc = generate_document(seed, Template::BillingV1);
        let backend = SurrogateBackend::default();
        let model = CompressionModel::default();
        let base = build_masks(&doc, &preset("v3-r1").unwrap(), &model).unwrap().masks;
        let mut grown = base.clone();
        grown.get_mut(&HookPoint::SamBlock11).unwrap().patches.extend(
            extra.iter().map(|&(r, c)| PatchIndex::new(TileIndex::ORIGIN, r, c)),
        );
        let before = backend.run_ocr(&doc, &base, 0).unwrap();
        let after = backend.run_ocr(&doc, &grown, 0).unwrap();
        for (b, a) in before.emissions.iter().zip(&after.emissions) {
            if b.emitted == EmissionKind::Suppressed {
                prop_assert_eq!(a.emitted, EmissionKind::Suppressed);
            }
        }
        prop_assert!(score_text(&doc, &after.text).leak_count() <= score_text(&doc, &before.text).leak_count());
    }
}

fn to_mask(grid: &[[bool; 40]; 40]) -> MaskSet {
    let mut m = MaskSet::empty(GridSpec::Sam40, 1);
    for (r, row) in grid.iter().enumerate() {
        for (c, &on) in row.iter().enumerate() {
            if on {
                m.patches.insert(PatchIndex::new(TileIndex::ORIGIN, r as u32, c as u32));
            }
        }
    }
    m
}

#[test]
fn documents_hold_their_invariants() {
    let redactor = Redactor::with_defaults();
    for seed in 0..1000 {
        for template in Template::ALL {
            let doc = generate_document(seed, template);
            doc.validate().unwrap();
            assert_eq!(doc, generate_document(seed, template));
            let n = doc.full_text().len();
            assert!((BASELINE_CHAR_BAND.0..=BASELINE_CHAR_BAND.1).contains(&n));
            for a in &doc.annotations {
                for b in &doc.annotations {
                    assert!(!a.bbox.intersects(&b.context_bbox), "{seed}: label over value");
                }
            }
            // Long-form values never match a redaction pattern.
            for a in doc.annotations.iter().filter(|a| !a.category.is_structured()) {
                assert!(redactor.find_matches(&a.value).is_empty(), "{}", a.value);
            }
        }
    }
}

#[test]
fn category_values_follow_formats() {
    let doc = generate_document(42, Template::BillingV2);
    for c in PhiCategory::ALL {
        let a = doc.annotation(c).unwrap();
        assert!(c.matches_format(&a.value));
    }
}
