use fogsight::dataio::synthetic::{shapes_dataset, write_flat_dataset};
use fogsight::dataio::*;
use fogsight::imaging::{illumination_invariant, DepthMap, PlanarImage, DEFAULT_ALPHA};
use fogsight::tensor::seeded_rng;
use fogsight::Error;
use proptest::prelude::*;

fn tiny_sample(id: &str) -> SceneSample {
    let rgb = PlanarImage::from_fn_rgb(2, 2, |x, y| {
        let v = (1 + x + 2 * y) as f64 / 10.0;
        [v, v / 2.0, v / 4.0]
    });
    let depth = DepthMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let label = LabelMap::new(2, 2, vec![1, 2, 3, 4]).unwrap();
    SceneSample::new(id, rgb, Some(depth), Some(label)).unwrap()
}

#[test]
fn flat_scan_pairs_by_stem_in_sorted_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut samples = shapes_dataset(3, 16, 8, 1).unwrap();
    samples.reverse();
    write_flat_dataset(dir.path(), &samples).unwrap();
    let found = scan_dataset(dir.path(), &ScanOptions::new(Layout::Flat, true)).unwrap();
    let ids: Vec<_> = found.iter().map(|d| d.id.as_str()).collect();
    assert_eq!(ids, ["scene_000", "scene_001", "scene_002"]);
    assert!(found.iter().all(|d| d.depth.is_some() && d.label.is_some()));

    let loaded = load_sample(&found[1], fogsight::imaging::DepthDecode::Meters16, &LabelTable::cityscapes()).unwrap();
    let original = samples.iter().find(|s| s.id == "scene_001").unwrap();
    assert_eq!(loaded.label, original.label);
    let d0 = original.depth.as_ref().unwrap();
    let d1 = loaded.depth.as_ref().unwrap();
    assert!(d0.depth.iter().zip(&d1.depth).all(|(a, b)| (a - b).abs() <= 1.0 / 512.0));
}

#[test]
fn empty_directory_scans_to_nothing() {
    let dir = tempfile::tempdir().unwrap();
    for layout in [Layout::Flat, Layout::Cityscapes] {
        assert!(scan_dataset(dir.path(), &ScanOptions::new(layout, true)).unwrap().is_empty());
    }
}

#[test]
fn missing_label_depends_on_mode() {
    let dir = tempfile::tempdir().unwrap();
    write_flat_dataset(dir.path(), &shapes_dataset(2, 8, 8, 2).unwrap()).unwrap();
    std::fs::remove_file(dir.path().join("label/scene_001.png")).unwrap();

    let unlabeled = scan_dataset(dir.path(), &ScanOptions::new(Layout::Flat, false)).unwrap();
    assert!(unlabeled[0].label.is_some());
    assert!(unlabeled[1].label.is_none());

    match scan_dataset(dir.path(), &ScanOptions::new(Layout::Flat, true)) {
        Err(Error::Config(msg)) => assert!(msg.contains("scene_001"), "{msg}"),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn cityscapes_layout_remaps_raw_ids() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let city = |top: &str| root.join(top).join("val/lindau");
    for top in ["leftImg8bit", "gtFine", "disparity"] {
        std::fs::create_dir_all(city(top)).unwrap();
    }
    let stem = "lindau_000000_000019";
    let img = PlanarImage::filled_rgb(2, 1, [0.2, 0.4, 0.6]);
    fogsight::imaging::save_png(&city("leftImg8bit").join(format!("{stem}_leftImg8bit.png")), &img, fogsight::imaging::PngDepth::Eight).unwrap();
    let raw = LabelMap::raw(2, 1, vec![7, 0]).unwrap().to_raw_png();
    let bytes = fogsight::imaging::png_io::encode_raw_png(&raw).unwrap();
    std::fs::write(city("gtFine").join(format!("{stem}_gtFine_labelIds.png")), bytes).unwrap();

    let mut opts = ScanOptions::new(Layout::Cityscapes, true);
    opts.split = Some("val".into());
    let found = scan_dataset(root, &opts).unwrap();
    assert_eq!(found.len(), 1);
    assert_eq!(found[0].id, format!("val/lindau/{stem}_leftImg8bit"));
    assert!(found[0].depth.is_none());
    let s = load_sample(&found[0], Default::default(), &LabelTable::cityscapes()).unwrap();
    assert_eq!(s.label.unwrap().ids, vec![0, IGNORE]);
}

#[test]
fn remap_examples() {
    let t = LabelTable::cityscapes();
    let raw = LabelMap::raw(3, 1, vec![7, 0, 26]).unwrap();
    assert_eq!(remap_labels(&raw, &t).ids, vec![0, IGNORE, 13]);
    let ident = LabelMap::raw(3, 1, vec![4, 0, 18]).unwrap();
    assert_eq!(remap_labels(&ident, &LabelTable::identity(NUM_CLASSES)).ids, ident.ids);
}

#[test]
fn class_stats_examples() {
    let m = LabelMap::new(2, 2, vec![0, 0, 1, IGNORE]).unwrap();
    let s = compute_class_stats([&m], 2).unwrap();
    assert_eq!(s.counts, vec![2, 1]);
    assert_eq!(s.probabilities().unwrap(), vec![2.0 / 3.0, 1.0 / 3.0]);

    let empty = LabelMap::filled(3, 3, IGNORE).unwrap();
    let s = compute_class_stats([&empty], 19).unwrap();
    assert!(s.is_degenerate());
    assert!(s.probabilities().is_none());

    let uniform = LabelMap::new(19, 2, (0..38).map(|i| (i % 19) as u8).collect()).unwrap();
    let p = compute_class_stats([&uniform], 19).unwrap().probabilities().unwrap();
    assert!(p.iter().all(|&v| v == 1.0 / 19.0));

    assert!(compute_class_stats([&m], 0).is_err());
}

#[test]
fn forced_flip_mirrors_every_raster() {
    let s = tiny_sample("a");
    let f = flip_sample(&s);
    assert_eq!(f.label.as_ref().unwrap().ids, vec![2, 1, 4, 3]);
    assert_eq!(f.depth.as_ref().unwrap().depth, vec![2.0, 1.0, 4.0, 3.0]);
    for c in 0..3 {
        let p = s.rgb.plane(c);
        assert_eq!(f.rgb.plane(c), &[p[1], p[0], p[3], p[2]]);
    }
    assert_eq!(flip_sample(&f), s);
}

#[test]
fn seeded_flips_repeat() {
    let decisions = |seed| {
        let mut rng = seeded_rng(seed);
        (0..32)
            .map(|_| augment_hflip(tiny_sample("a"), &mut rng) != tiny_sample("a"))
            .collect::<Vec<_>>()
    };
    let a = decisions(9);
    assert_eq!(a, decisions(9));
    assert!(a.iter().any(|&f| f) && a.iter().any(|&f| !f));
}

#[test]
fn batch_shapes() {
    let samples = shapes_dataset(2, 32, 16, 3).unwrap();
    let b = make_batch(&samples, &BatchOptions::new(InputMode::Rgb, AuxMode::Dl, (64, 128))).unwrap();
    assert_eq!(b.input.shape(), &[2, 3, 64, 128]);
    assert_eq!(b.aux.as_ref().unwrap().shape(), &[2, 2, 64, 128]);
    assert_eq!(b.labels.shape(), [2, 64, 128]);

    let b = make_batch(&samples, &BatchOptions::new(InputMode::Rgb, AuxMode::L, (64, 128))).unwrap();
    assert_eq!(b.aux.unwrap().shape(), &[2, 1, 64, 128]);
    let b = make_batch(&samples, &BatchOptions::new(InputMode::Rgb, AuxMode::None, (8, 16))).unwrap();
    assert!(b.aux.is_none());
}

#[test]
fn iit_batch_replicates_the_invariant_plane() {
    let samples = shapes_dataset(1, 16, 8, 4).unwrap();
    let b = make_batch(&samples, &BatchOptions::new(InputMode::Iit, AuxMode::None, (8, 16))).unwrap();
    let inv = illumination_invariant(&samples[0].rgb, DEFAULT_ALPHA).unwrap();
    let expect: Vec<f32> = inv.plane(0).iter().map(|&v| v as f32).collect();
    let hw = 8 * 16;
    for c in 0..3 {
        assert_eq!(&b.input.data()[c * hw..(c + 1) * hw], expect.as_slice());
    }
}

#[test]
fn dl_without_depth_names_the_sample() {
    let mut s = tiny_sample("no-depth-here");
    s.depth = None;
    match make_batch(&[s], &BatchOptions::new(InputMode::Rgb, AuxMode::Dl, (2, 2))) {
        Err(Error::Config(msg)) => assert!(msg.contains("no-depth-here")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn depth_and_luminance_order_and_scaling() {
    let s = tiny_sample("a");
    let b = make_batch(&[s.clone()], &BatchOptions::new(InputMode::Rgb, AuxMode::Dl, (2, 2))).unwrap();
    let aux = b.aux.unwrap();
    let d: Vec<f32> = [1.0, 2.0, 3.0, 4.0].iter().map(|v| (v / DEFAULT_MAX_DEPTH_M) as f32).collect();
    assert_eq!(&aux.data()[..4], d.as_slice());
    let (r, g, bl) = (s.rgb.plane(0)[0], s.rgb.plane(1)[0], s.rgb.plane(2)[0]);
    assert_eq!(aux.data()[4], (0.299 * r + 0.587 * g + 0.144 * bl) as f32);
}

#[test]
fn normalised_batches_are_standardised_and_repeatable() {
    let samples = shapes_dataset(3, 32, 16, 5).unwrap();
    let mut opts = BatchOptions::new(InputMode::Ihs, AuxMode::Dl, (16, 32));
    let stats = compute_norm_stats(&samples, &opts).unwrap();
    opts.norm = Some(&stats);
    let a = make_batch(&samples, &opts).unwrap();
    let b = make_batch(&samples, &opts).unwrap();
    assert_eq!(a.input.data(), b.input.data());
    let hw = 16 * 32;
    for c in 0..3 {
        let vals: Vec<f64> = (0..3)
            .flat_map(|n| a.input.data()[(n * 3 + c) * hw..(n * 3 + c + 1) * hw].iter().map(|&v| v as f64))
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-4, "plane {c} mean {mean}");
    }
    let other = NormStats::identity(InputMode::Rgb, AuxMode::Dl);
    opts.norm = Some(&other);
    assert!(make_batch(&samples, &opts).is_err());
}

proptest! {
    #[test]
    fn remap_twice_equals_remap_once(ids in prop::collection::vec(any::<u8>(), 1..64)) {
        let t = LabelTable::cityscapes();
        let raw = LabelMap::raw(ids.len(), 1, ids).unwrap();
        let once = remap_labels(&raw, &t);
        prop_assert_eq!(remap_labels(&once, &t), once.clone());
        prop_assert!(once.ids.iter().all(|&v| v == IGNORE || (v as usize) < NUM_CLASSES));
    }

    #[test]
    fn class_probabilities_sum_to_one(ids in prop::collection::vec(prop_oneof![0u8..19, Just(IGNORE)], 1..200)) {
        let m = LabelMap::new(ids.len(), 1, ids).unwrap();
        let s = compute_class_stats([&m], NUM_CLASSES).unwrap();
        if let Some(p) = s.probabilities() {
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        } else {
            prop_assert!(m.ids.iter().all(|&v| v == IGNORE));
        }
    }

    #[test]
    fn flip_moves_every_raster_together(w in 1usize..9, h in 1usize..6, seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let s = fogsight::dataio::synthetic::shapes_scene("p", w.max(4), h.max(4), &mut rng).unwrap();
        let (w, h) = (s.rgb.width(), s.rgb.height());
        let f = flip_sample(&s);
        for y in 0..h {
            for x in 0..w {
                let (i, j) = (y * w + x, y * w + (w - 1 - x));
                prop_assert_eq!(f.label.as_ref().unwrap().ids[j], s.label.as_ref().unwrap().ids[i]);
                prop_assert_eq!(f.depth.as_ref().unwrap().depth[j], s.depth.as_ref().unwrap().depth[i]);
                for c in 0..3 {
                    prop_assert_eq!(f.rgb.plane(c)[j], s.rgb.plane(c)[i]);
                }
            }
        }
    }
}
