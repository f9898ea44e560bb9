mod common;

use std::collections::BTreeSet;

use image::imageops::flip_horizontal;
use image::{GrayImage, Luma};
use ndarray::{Array2, Array4};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{is_axis_rectangle, is_simple, page, region};
use panel_layout::annotation::{BookAnnotation, PageAnnotation, RegionKind};
use panel_layout::classifier::{train_fold, vote, TrainConfig};
use panel_layout::corpus::{
    build_leave_one_work_out, build_title_split, default_styles, generate_synthetic_corpus, LabelTask,
};
use panel_layout::eval::{evaluate_ids, render_tables, Cell, ReportContext, TableKind};
use panel_layout::explain::{grad_cam_raw, min_max_normalize};
use panel_layout::geometry::BBox;
use panel_layout::nn::{LayerKind, Network};
use panel_layout::perturb::{
    page_quads, perturb_page, perturb_quadrilateral, perturb_rectangular, NoiseFamily, NoiseSpec,
};
use panel_layout::render::{render_frame_only, render_masked, AblationMode, RenderConfig};
use panel_layout::rendered::RenderingSource;
use panel_layout::AblationSpec;

const W: u32 = 48;
const H: u32 = 32;

fn bbox_in(w: u32, h: u32) -> impl Strategy<Value = (u32, u32, u32, u32)> {
    (0..w, 0..h).prop_flat_map(move |(x0, y0)| (Just(x0), Just(y0), x0 + 1..=w, y0 + 1..=h))
}

fn kind() -> impl Strategy<Value = RegionKind> {
    prop_oneof![Just(RegionKind::Frame), Just(RegionKind::Text), Just(RegionKind::Face), Just(RegionKind::Body)]
}

fn random_page() -> impl Strategy<Value = (PageAnnotation, GrayImage)> {
    let regions = prop::collection::vec((kind(), bbox_in(W, H)), 1..8);
    let pixels = prop::collection::vec(any::<u8>(), (W * H) as usize);
    (regions, pixels).prop_map(|(regions, pixels)| {
        let mut regions: Vec<_> =
            regions.into_iter().enumerate().map(|(i, (k, b))| region(&format!("r{i}"), k, b)).collect();
        regions.push(region("frame", RegionKind::Frame, (2, 2, W - 2, H - 2)));
        (page(0, W, H, regions), GrayImage::from_raw(W, H, pixels).unwrap())
    })
}

fn render_cfg() -> impl Strategy<Value = RenderConfig> {
    (any::<u8>(), any::<u8>(), 0u32..3, any::<u8>()).prop_map(|(mask_fill, stroke_value, half, canvas_value)| {
        RenderConfig { mask_fill, stroke_value, stroke_width: 2 * half + 1, canvas_value }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn masking_is_idempotent((p, img) in random_page(), cfg in render_cfg()) {
        let once = render_masked(&img, "t", &p, &cfg).unwrap();
        let twice = render_masked(&once.pixels, "t", &p, &cfg).unwrap();
        prop_assert_eq!(once.pixels, twice.pixels);
    }

    #[test]
    fn masked_pixels_cover_exactly_the_union((p, _) in random_page(), fill in any::<u8>()) {
        let canvas = GrayImage::from_pixel(W, H, Luma([fill.wrapping_add(1)]));
        let cfg = RenderConfig { mask_fill: fill, ..RenderConfig::default() };
        let out = render_masked(&canvas, "t", &p, &cfg).unwrap();
        let union: BTreeSet<(u32, u32)> = p
            .regions
            .iter()
            .filter(|r| r.kind != RegionKind::Frame)
            .flat_map(|r| { let b = r.bbox; (b.ymin()..b.ymax()).flat_map(move |y| (b.xmin()..b.xmax()).map(move |x| (x, y))) })
            .collect();
        let masked = out.pixels.enumerate_pixels().filter(|(_, _, v)| v.0[0] == fill).count();
        prop_assert_eq!(masked, union.len());
    }

    #[test]
    fn masking_commutes_with_mirroring((p, img) in random_page(), cfg in render_cfg()) {
        let mirrored_then_masked = render_masked(&flip_horizontal(&img), "t", &p.mirrored(), &cfg).unwrap();
        let masked_then_mirrored = flip_horizontal(&render_masked(&img, "t", &p, &cfg).unwrap().pixels);
        prop_assert_eq!(mirrored_then_masked.pixels, masked_then_mirrored);
    }

    #[test]
    fn frame_only_commutes_with_mirroring((p, _) in random_page(), cfg in render_cfg()) {
        let m = p.mirrored();
        let direct = render_frame_only("t", &m, &page_quads(&m), &cfg).unwrap();
        let flipped = flip_horizontal(&render_frame_only("t", &p, &page_quads(&p), &cfg).unwrap().pixels);
        prop_assert_eq!(direct.pixels, flipped);
    }

    #[test]
    fn frame_only_has_at_most_two_values(
        (p, _) in random_page(),
        cfg in render_cfg(),
        family in prop_oneof![Just(NoiseFamily::Rectangular), Just(NoiseFamily::Quadrilateral)],
        range in 0u32..25,
        seed in any::<u64>(),
    ) {
        let quads = perturb_page("t", &p, &NoiseSpec::new(family, range, seed));
        // tiny frames can exhaust the re-draw budget; that error is tested elsewhere
        prop_assume!(quads.is_ok());
        let quads = quads.unwrap();
        let out = render_frame_only("t", &p, &quads, &cfg).unwrap();
        let values: BTreeSet<u8> = out.pixels.pixels().map(|v| v.0[0]).collect();
        prop_assert!(values.iter().all(|v| *v == cfg.canvas_value || *v == cfg.stroke_value));
        prop_assert!(values.contains(&cfg.stroke_value));
    }

    #[test]
    fn rectangular_noise_is_bounded_and_rectangular(b in bbox_in(120, 90), range in 0u32..=30, seed in any::<u64>()) {
        let bbox = BBox::new(b.0, b.1, b.2, b.3).unwrap();
        let spec = NoiseSpec::new(NoiseFamily::Rectangular, range, seed);
        let q = perturb_rectangular(&bbox, &spec, (120, 90)).unwrap();
        prop_assert!(q.max_displacement(&bbox.to_quad()) <= range as i64);
        prop_assert!(q.within(120, 90));
        prop_assert!(is_axis_rectangle(&q));
        if range == 0 {
            prop_assert_eq!(q, bbox.to_quad());
        }
    }

    #[test]
    fn quadrilateral_noise_is_bounded_and_simple(b in bbox_in(120, 90), range in 0u32..=30, seed in any::<u64>()) {
        let bbox = BBox::new(b.0, b.1, b.2, b.3).unwrap();
        prop_assume!(bbox.width() > 1 && bbox.height() > 1);
        let spec = NoiseSpec::new(NoiseFamily::Quadrilateral, range, seed);
        let q = perturb_quadrilateral(&bbox, &spec, (120, 90)).unwrap();
        prop_assert!(q.max_displacement(&bbox.to_quad()) <= range as i64);
        prop_assert!(q.within(120, 90));
        prop_assert!(is_simple(&q));
        if range == 0 {
            prop_assert_eq!(q, bbox.to_quad());
        }
    }

    #[test]
    fn page_noise_is_deterministic((p, _) in random_page(), range in 1u32..20, seed in any::<u64>()) {
        let spec = NoiseSpec::new(NoiseFamily::Quadrilateral, range, seed);
        let a = perturb_page("t", &p, &spec);
        prop_assume!(a.is_ok());
        prop_assert_eq!(a.unwrap(), perturb_page("t", &p, &spec).unwrap());
    }

    #[test]
    fn ensemble_is_scale_invariant(
        probs in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 4), 5),
        scale in 1e-3f64..1e3,
    ) {
        let scaled: Vec<Vec<f64>> = probs.iter().map(|p| p.iter().map(|v| v * scale).collect()).collect();
        let a = vote(probs);
        let b = vote(scaled);
        prop_assert_eq!(a.class, b.class);
        prop_assert_eq!(a.votes, b.votes);
        prop_assert_eq!(a.tie_broken, b.tie_broken);
    }

    #[test]
    fn weighted_recall_equals_accuracy(pairs in prop::collection::vec((0usize..6, 0usize..6), 1..200)) {
        let labels: Vec<String> = (0..6).map(|i| format!("c{i}")).collect();
        let r = evaluate_ids(&pairs, &ReportContext::new(labels)).unwrap();
        let weighted: f64 = r.per_class.iter().map(|c| c.recall * c.support as f64).sum::<f64>() / pairs.len() as f64;
        prop_assert!((weighted - r.accuracy).abs() < 1e-12);
        let matches = pairs.iter().filter(|(t, p)| t == p).count() as f64 / pairs.len() as f64;
        prop_assert_eq!(r.accuracy, matches);
        for (t, c) in r.per_class.iter().enumerate() {
            prop_assert_eq!(r.confusion[t].iter().sum::<usize>(), c.support);
        }
    }

    #[test]
    fn csv_round_trip_is_lossless(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..100)) {
        let labels: Vec<String> = (0..5).map(|i| format!("c{i}")).collect();
        let r = evaluate_ids(&pairs, &ReportContext::new(labels)).unwrap();
        let table = render_tables(std::slice::from_ref(&r), TableKind::PerClass);
        let csv = table.to_csv().unwrap();
        let mut rdr = csv::Reader::from_reader(csv.as_bytes());
        for (row, c) in rdr.records().zip(&r.per_class) {
            let row = row.unwrap();
            prop_assert_eq!(&row[0], c.label.as_str());
            prop_assert_eq!(row[1].parse::<f64>().unwrap(), c.precision);
            prop_assert_eq!(row[2].parse::<f64>().unwrap(), c.recall);
            prop_assert_eq!(row[3].parse::<f64>().unwrap(), c.f1);
            prop_assert_eq!(row[4].parse::<usize>().unwrap(), c.support);
        }
        let summary = render_tables(std::slice::from_ref(&r), TableKind::Summary);
        let Cell::Percent(acc) = summary.rows[0][3] else { panic!("accuracy cell") };
        let parsed: f64 = summary.to_csv().unwrap().lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
        prop_assert_eq!(parsed, acc);
        prop_assert_eq!(acc, r.accuracy);
    }

    #[test]
    fn grad_cam_ignores_positive_logit_scale(seed in any::<u64>(), scale in 0.01f64..100.0, class in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net: Network<f64> = Network::tiny([1, 8, 8], &[3, 4], 3, &mut rng);
        let x = Array4::from_shape_fn((1, 1, 8, 8), |(_, _, y, x)| ((y * 7 + x * 3 + seed as usize) % 11) as f64 / 10.0 - 0.5);
        let layer = net.layer_index(net.last_conv_activation().unwrap()).unwrap();
        let mut scaled = net.clone();
        let LayerKind::Linear(fc) = &mut scaled.layers.last_mut().unwrap().kind else { panic!("head is linear") };
        fc.weight.row_mut(class).mapv_inplace(|v| v * scale);
        fc.bias[class] *= scale;
        let a = grad_cam_raw(&net, &x, class, layer).unwrap();
        let b = grad_cam_raw(&scaled, &x, class, layer).unwrap();
        match (min_max_normalize(&a), min_max_normalize(&b)) {
            (Some(a), Some(b)) => prop_assert!(a.iter().zip(b.iter()).all(|(u, v)| (u - v).abs() <= 1e-6)),
            (None, None) => {}
            _ => prop_assert!(false, "degeneracy differs"),
        }
    }
}

#[test]
fn masking_erases_frame_lines_under_character_boxes() {
    // a body box straddling the right edge of the panel
    let p = page(
        0,
        80,
        60,
        vec![region("f", RegionKind::Frame, (10, 10, 50, 50)), region("b", RegionKind::Body, (40, 20, 70, 40))],
    );
    let cfg = RenderConfig::default();
    let frame_only = render_frame_only("t", &p, &page_quads(&p), &cfg).unwrap();
    // the source page is just its panel lines, so masking can only remove strokes
    let masked = render_masked(&frame_only.pixels, "t", &p, &cfg).unwrap();
    let strokes = |img: &GrayImage| img.pixels().filter(|v| v.0[0] == cfg.stroke_value).count();
    let lost: Vec<(u32, u32)> = frame_only
        .pixels
        .enumerate_pixels()
        .filter(|(x, y, v)| v.0[0] == cfg.stroke_value && masked.pixels.get_pixel(*x, *y).0[0] != cfg.stroke_value)
        .map(|(x, y, _)| (x, y))
        .collect();
    assert!(strokes(&masked.pixels) < strokes(&frame_only.pixels));
    // the right edge at x = 49 loses rows 20..40 across the 3-pixel brush
    assert_eq!(lost.len(), 3 * 20);
    assert!(lost.iter().all(|&(x, y)| (48..=50).contains(&x) && (20..40).contains(&y)));
}

#[test]
fn partitions_are_disjoint_and_complete() {
    let corpus = generate_synthetic_corpus(&default_styles(), 10, 5).unwrap();
    for seed in 0..5 {
        let m = build_title_split(&corpus.books, seed).unwrap();
        let all: Vec<_> = m.all_items().cloned().collect();
        let unique: BTreeSet<_> = all.iter().cloned().collect();
        assert_eq!(all.len(), unique.len());
        assert_eq!(all.len(), 120);
        for k in 0..5 {
            let train: BTreeSet<_> = m.fold_train(k).into_iter().collect();
            assert!(m.fold_validation(k).iter().all(|i| !train.contains(i)));
            assert_eq!(train.len() + m.fold_validation(k).len(), m.train_len());
        }
    }
}

#[test]
fn leave_one_work_out_never_shares_works() {
    let books = common::mock_books();
    for task in [LabelTask::Genre, LabelTask::Publisher] {
        let m = build_leave_one_work_out(&books, task, 3).unwrap();
        let work_of = |t: &str| panel_layout::annotation::work_key(t).to_string();
        let test_works: BTreeSet<String> = m.test.iter().map(|i| work_of(&i.title)).collect();
        assert!(m.folds.iter().flatten().all(|i| !test_works.contains(&work_of(&i.title))));
        assert_eq!(test_works.len(), m.num_classes());
    }
}

#[test]
fn seeded_training_replays_exactly() {
    let corpus = generate_synthetic_corpus(&default_styles()[..3], 10, 1).unwrap();
    let manifest = build_title_split(&corpus.books, 0).unwrap();
    let spec = AblationSpec::clean(AblationMode::FrameOnly);
    let source = RenderingSource::new(&corpus.books, None, spec, RenderConfig::default());
    let cfg = TrainConfig { max_epochs: 1, input_size: 32, ..TrainConfig::tiny() };
    let a = train_fold::<f32>(&manifest, 0, &spec, &source, &cfg).unwrap();
    let b = train_fold::<f32>(&manifest, 0, &spec, &source, &cfg).unwrap();
    assert_eq!(a.curve[0].train_loss, b.curve[0].train_loss);
    assert_eq!(a.network, b.network);
}

#[test]
fn grad_cam_matches_closed_form_on_one_by_one_conv() {
    let net = common_oracle_net();
    let x = oracle_input();
    let raw = grad_cam_raw(&net, &x, 1, 1).unwrap();
    let expected = oracle_map(&x, 1);
    for (a, b) in raw.iter().zip(expected.iter()) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

fn common_oracle_net() -> Network<f64> {
    use panel_layout::nn::{Conv2d, Layer, Linear};
    let conv = Conv2d {
        weight: Array2::from_shape_vec((2, 1), vec![1.0, -2.0]).unwrap(),
        bias: ndarray::arr1(&[0.5, 1.0]),
        in_channels: 1,
        kernel: 1,
    };
    let fc = Linear {
        weight: Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 3.0, -1.0]).unwrap(),
        bias: ndarray::arr1(&[0.0, 0.0]),
    };
    Network::new(
        [1, 2, 3],
        vec![
            Layer::new("conv", LayerKind::Conv(conv)),
            Layer::new("relu", LayerKind::Relu),
            Layer::new("gap", LayerKind::GlobalAvgPool),
            Layer::new("fc", LayerKind::Linear(fc)),
        ],
    )
}

fn oracle_input() -> Array4<f64> {
    Array4::from_shape_vec((1, 1, 2, 3), vec![0.0, 1.0, -1.0, 0.25, 2.0, -0.75]).unwrap()
}

/// ReLU(sum_c w[class][c] / HW * relu(a_c x + b_c)).
fn oracle_map(x: &Array4<f64>, class: usize) -> Array2<f64> {
    let fc = [[1.0, 0.0], [3.0, -1.0]];
    let (a, b) = ([1.0, -2.0], [0.5, 1.0]);
    Array2::from_shape_fn((2, 3), |(i, j)| {
        let v = x[[0, 0, i, j]];
        let s: f64 = (0..2).map(|c| fc[class][c] / 6.0 * (a[c] * v + b[c]).max(0.0)).sum();
        s.max(0.0)
    })
}

#[test]
fn lr_schedule_steps_every_thirty_epochs() {
    let cfg = TrainConfig::default();
    for (e, lr) in [(1, 1e-3), (30, 1e-3), (31, 1e-4), (60, 1e-4), (61, 1e-5), (100, 1e-6)] {
        assert!((cfg.lr_at(e) - lr).abs() <= 1e-15 * lr.max(1.0), "epoch {e}: {}", cfg.lr_at(e));
    }
}

#[test]
fn frames_survive_annotation_round_trip() {
    let corpus = generate_synthetic_corpus(&default_styles()[..1], 10, 9).unwrap();
    let book: &BookAnnotation = &corpus.books[0];
    let xml = panel_layout::annotation::write_book(book);
    let dims = book.pages.iter().map(|p| (p.index, (p.width, p.height))).collect();
    let parsed = panel_layout::annotation::parse_book(&xml, &dims, None).unwrap();
    assert_eq!(&parsed, book);
}
