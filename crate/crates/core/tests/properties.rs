//! Property tests for the geometric, I/O and metric building blocks.

mod common;

use hcdnn::augment::{augment_pair, contrast_jitter, geometric_transform, sample_params, sample_seed, AugmentConfig, TransformParams};
use hcdnn::autograd::Tensor;
use hcdnn::eval::{dice, overlap_metrics, surface_distances, OverlapCounts};
use hcdnn::morph::{
    bounding_box, connected_components_3d, largest_component, liver_voi, masked_histogram_equalization, Connectivity,
};
use hcdnn::nn::{from_bytes, to_bytes, CdnnModel, ModelConfig};
use hcdnn::volio::{read_labels, read_metaimage, write_labels, write_metaimage, Grid, LabelVolume, Mask, MetaImage, Volume};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mask_strategy(max: usize) -> impl Strategy<Value = Mask> {
    (1..=max, 1..=max, 1..=max, 0.05f64..0.7, any::<u64>()).prop_map(|(x, y, z, d, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        common::random_mask([x, y, z], [1.0, 1.0, 2.0], d, &mut rng)
    })
}

fn mask_pair(max: usize) -> impl Strategy<Value = (Mask, Mask)> {
    (1..=max, 1..=max, 1..=max, 0.05f64..0.7, 0.05f64..0.7, any::<u64>()).prop_map(|(x, y, z, da, db, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = common::random_mask([x, y, z], [1.0, 1.0, 2.0], da, &mut rng);
        let b = common::random_mask([x, y, z], [1.0, 1.0, 2.0], db, &mut rng);
        (a, b)
    })
}

fn neighbours(m: &Mask, p: [usize; 3], faces_only: bool) -> Vec<[usize; 3]> {
    let s = m.size();
    let mut out = Vec::new();
    for dz in -1..=1isize {
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let n = dx.abs() + dy.abs() + dz.abs();
                if n == 0 || (faces_only && n > 1) {
                    continue;
                }
                let q = [p[0] as isize + dx, p[1] as isize + dy, p[2] as isize + dz];
                if (0..3).all(|a| q[a] >= 0 && q[a] < s[a] as isize) {
                    out.push(q.map(|v| v as usize));
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn components_partition_the_foreground(m in mask_strategy(7), six in any::<bool>()) {
        let conn = if six { Connectivity::Six } else { Connectivity::TwentySix };
        let cc = connected_components_3d(&m, conn);
        prop_assert_eq!(cc.sizes.iter().sum::<usize>(), m.count());
        for (i, &inside) in m.data().iter().enumerate() {
            let l = cc.labels.data()[i];
            prop_assert_eq!(inside, l != 0);
            if inside {
                // Adjacent foreground voxels always share a label.
                for q in neighbours(&m, m.coords(i), six) {
                    if m.get(q[0], q[1], q[2]) {
                        prop_assert_eq!(cc.labels.get(q[0], q[1], q[2]), l);
                    }
                }
            }
        }
        for (k, &size) in cc.sizes.iter().enumerate() {
            prop_assert_eq!(cc.mask_of(k as u32 + 1).count(), size);
        }
    }

    #[test]
    fn six_connectivity_never_merges_more(m in mask_strategy(7)) {
        let six = connected_components_3d(&m, Connectivity::Six).count();
        let full = connected_components_3d(&m, Connectivity::TwentySix).count();
        prop_assert!(six >= full);
    }

    #[test]
    fn largest_component_is_a_maximal_subset(m in mask_strategy(7)) {
        let cc = connected_components_3d(&m, Connectivity::TwentySix);
        let big = largest_component(&m, Connectivity::TwentySix);
        prop_assert_eq!(big.and(&m).unwrap(), big.clone());
        prop_assert_eq!(big.count(), cc.sizes.iter().copied().max().unwrap_or(0));
        prop_assert_eq!(largest_component(&big, Connectivity::TwentySix), big);
    }

    #[test]
    fn bounding_box_is_tight(m in mask_strategy(8)) {
        match bounding_box(&m) {
            None => prop_assert!(!m.any()),
            Some(b) => {
                let mut touched = [[false; 2]; 3];
                for (i, _) in m.data().iter().enumerate().filter(|(_, &v)| v) {
                    let p = m.coords(i);
                    prop_assert!(b.contains(p));
                    for a in 0..3 {
                        touched[a][0] |= p[a] == b.lo[a];
                        touched[a][1] |= p[a] == b.hi[a];
                    }
                }
                prop_assert!(touched.iter().flatten().all(|&t| t));
            }
        }
    }

    #[test]
    fn voi_grows_by_margin_and_stays_inside(m in mask_strategy(8), margin in 0usize..4) {
        prop_assume!(m.any());
        let tight = bounding_box(&m).unwrap();
        let voi = liver_voi(&m, margin).unwrap();
        let s = m.size();
        prop_assert!(voi.contains_box(&tight));
        for a in 0..3 {
            prop_assert_eq!(voi.lo[a], tight.lo[a].saturating_sub(margin));
            prop_assert_eq!(voi.hi[a], (tight.hi[a] + margin).min(s[a] - 1));
        }
    }

    #[test]
    fn equalization_is_monotone_and_bounded(seed in any::<u64>(), density in 0.1f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Volume = Grid::from_fn([9, 7, 3], [1.0; 3], |_, _, _| rand::Rng::random_range(&mut rng, 0.0f32..1.0)).unwrap();
        let mut m = common::random_mask([9, 7, 3], [1.0; 3], density, &mut rng);
        m.set(0, 0, 0, true);
        let eq = masked_histogram_equalization(&v, &m, 64).unwrap();
        let mut pairs: Vec<(f32, f32)> = v.data().iter().copied().zip(eq.data().iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            prop_assert!(w[0].1 <= w[1].1);
        }
        prop_assert!(eq.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn window_then_paste_restores_the_grid(
        x in 2usize..9, y in 2usize..9, z in 1usize..5, seed in any::<u64>(),
        ox in 0usize..8, oy in 0usize..8, oz in 0usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: Grid<i16> = Grid::from_fn([x, y, z], [0.7, 0.7, 2.5], |_, _, _| rand::Rng::random(&mut rng)).unwrap();
        let origin = [(ox % x) as isize, (oy % y) as isize, (oz % z) as isize];
        let size = [x - origin[0] as usize, y - origin[1] as usize, z - origin[2] as usize];
        let patch = g.window(origin, size).unwrap();
        for k in 0..patch.len() {
            let [px, py, pz] = patch.coords(k);
            prop_assert_eq!(patch.data()[k], g.get(px + origin[0] as usize, py + origin[1] as usize, pz + origin[2] as usize));
        }
        let mut h = Grid::filled([x, y, z], g.spacing(), 0i16).unwrap();
        h.paste(&g.window([0, 0, 0], [x, y, z]).unwrap(), [0, 0, 0]);
        prop_assert_eq!(h, g.clone());
        let mut h = g.clone();
        h.paste(&patch, origin);
        prop_assert_eq!(h, g);
    }

    #[test]
    fn metaimage_round_trips(x in 1usize..12, y in 1usize..12, z in 1usize..6, seed in any::<u64>(), kind in 0u8..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spacing = [0.5 + (seed % 7) as f64 * 0.25, 0.75, 1.5 + (seed % 3) as f64];
        let image = match kind {
            0 => MetaImage::Short(Grid::from_fn([x, y, z], spacing, |_, _, _| rand::Rng::random(&mut rng)).unwrap()),
            1 => MetaImage::UChar(Grid::from_fn([x, y, z], spacing, |_, _, _| rand::Rng::random(&mut rng)).unwrap()),
            _ => MetaImage::Float(Grid::from_fn([x, y, z], spacing, |_, _, _| rand::Rng::random_range(&mut rng, -1e3f32..1e3)).unwrap()),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.mhd");
        write_metaimage(&image, &path).unwrap();
        prop_assert_eq!(read_metaimage(&path).unwrap(), image);
    }

    #[test]
    fn label_files_round_trip(m in mask_pair(8)) {
        let (liver, tumor) = m;
        let tumor = tumor.and(&liver).unwrap();
        let labels = LabelVolume::from_masks(&liver, &tumor).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.mhd");
        write_labels(&labels, &path).unwrap();
        let back = read_labels(&path).unwrap();
        prop_assert_eq!(back.liver_mask(), liver);
        prop_assert_eq!(back.tumor_mask(), tumor);
    }

    #[test]
    fn identity_transform_is_exact(c in 1usize..4, h in 1usize..10, w in 1usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slab: Tensor = common::random_tensor(&[c, h, w], 0.0, 1.0, &mut rng);
        let target = Tensor::new(&[1, h, w], (0..h * w).map(|i| (i * 7 + seed as usize).is_multiple_of(3) as u8 as f32).collect()).unwrap();
        let params = sample_params(&AugmentConfig::identity(), c, h, w, &mut rng);
        prop_assert!(params.is_geometric_identity());
        let (s, t) = augment_pair(&slab, &target, &params).unwrap();
        prop_assert_eq!(s, slab);
        prop_assert_eq!(t, target);
    }

    #[test]
    fn flip_is_an_involution(c in 1usize..3, h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slab: Tensor = common::random_tensor(&[c, h, w], 0.0, 1.0, &mut rng);
        let target: Tensor = common::random_tensor::<f32, _>(&[1, h, w], 0.0, 1.0, &mut rng).map(|v| (v > 0.5) as u8 as f32);
        let flip = TransformParams { flip: true, ..TransformParams::identity(c) };
        let (s1, t1) = geometric_transform(&slab, &target, &flip).unwrap();
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    prop_assert_eq!(s1.data()[(ch * h + y) * w + x], slab.data()[(ch * h + y) * w + (w - 1 - x)]);
                }
            }
        }
        let (s2, t2) = geometric_transform(&s1, &t1, &flip).unwrap();
        prop_assert_eq!(s2, slab);
        prop_assert_eq!(t2, target);
    }

    #[test]
    fn random_augmentation_keeps_targets_binary_and_values_in_range(seed in any::<u64>(), h in 4usize..16, w in 4usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slab: Tensor = common::random_tensor(&[3, h, w], 0.0, 1.0, &mut rng);
        let target: Tensor = common::random_tensor::<f32, _>(&[1, h, w], 0.0, 1.0, &mut rng).map(|v| (v > 0.6) as u8 as f32);
        let cfg = AugmentConfig::default();
        let params = sample_params(&cfg, 3, h, w, &mut rng);
        prop_assert!(params.contrast.iter().all(|f| (cfg.contrast_range.0..=cfg.contrast_range.1).contains(f)));
        prop_assert!(params.shift.0.abs() <= cfg.max_shift_frac * w as f64 + 1e-9);
        prop_assert!(params.rotate_deg.abs() <= cfg.max_rotate_deg);
        let (s, t) = augment_pair(&slab, &target, &params).unwrap();
        prop_assert_eq!(s.shape(), slab.shape());
        prop_assert!(t.data().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn contrast_jitter_scales_about_the_channel_mean(seed in any::<u64>(), f in prop::collection::vec(0.5f64..1.5, 3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slab: Tensor = common::random_tensor(&[3, 4, 5], 0.0, 1.0, &mut rng);
        let params = TransformParams { contrast: f.clone(), ..TransformParams::identity(3) };
        let out = contrast_jitter(&slab, &params).unwrap();
        for ch in 0..3 {
            let plane = &slab.data()[ch * 20..(ch + 1) * 20];
            let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / 20.0;
            for (k, &a) in plane.iter().enumerate() {
                let want = (mean + (a as f64 - mean) * f[ch]).clamp(0.0, 1.0);
                prop_assert!((out.data()[ch * 20 + k] as f64 - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn checkpoint_round_trips(seed in any::<u64>(), w0 in 1usize..6, w1 in 1usize..6, k in prop::sample::select(vec![1usize, 3, 5]), c in 1usize..5) {
        let cfg = ModelConfig::reduced("prop", c, [w0, w1], k);
        let model = CdnnModel::build(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let bytes = to_bytes(&model);
        prop_assert_eq!(from_bytes(&bytes).unwrap(), model);
        prop_assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn overlap_metrics_match_counting((a, b) in mask_pair(7)) {
        let d = dice(&a, &b).unwrap();
        prop_assert_eq!(d, dice(&b, &a).unwrap());
        prop_assert!((d - common::brute_dice(&a, &b)).abs() < 1e-12);
        let (voe, rvd) = overlap_metrics(&a, &b).unwrap();
        prop_assert!((voe - common::brute_voe(&a, &b)).abs() < 1e-12);
        prop_assert_eq!(rvd.is_some(), b.any());
        if let Some(r) = rvd {
            prop_assert!((r - common::brute_rvd(&a, &b).unwrap()).abs() < 1e-12);
        }
        // Dice and Jaccard are tied by J = D / (2 − D).
        let c = OverlapCounts::of(&a, &b).unwrap();
        prop_assert!((c.jaccard() - d / (2.0 - d)).abs() < 1e-12);
        prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn surface_distances_are_symmetric_and_ordered((a, b) in mask_pair(6)) {
        prop_assume!(a.any() && b.any());
        let ab = surface_distances(&a, &b).unwrap();
        let ba = surface_distances(&b, &a).unwrap();
        prop_assert!((ab.assd_mm - ba.assd_mm).abs() < 1e-12);
        prop_assert_eq!(ab.mssd_mm, ba.mssd_mm);
        prop_assert!(ab.assd_mm <= ab.rmsd_mm + 1e-12 && ab.rmsd_mm <= ab.mssd_mm + 1e-12);
        prop_assert_eq!(surface_distances(&a, &a).unwrap().mssd_mm, 0.0);
    }
}

#[test]
fn sample_seeds_do_not_collide_on_a_neighbourhood() {
    let mut seen = std::collections::HashSet::new();
    for g in 0..8u64 {
        for e in 0..16u64 {
            for i in 0..64u64 {
                assert!(seen.insert(sample_seed(g, e, i)), "collision at ({g}, {e}, {i})");
            }
        }
    }
}
