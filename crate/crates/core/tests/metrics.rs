mod common;

use proptest::prelude::*;
use xai_triage::image::{BoundingBox, Image};
use xai_triage::localization::{heatmap_tki, tki, top_k_mask, BinaryMask};
use xai_triage::lrp::Heatmap;
use xai_triage::sharpness::{gate, sharpness_score, GrayImage};

fn heatmap_and_mask() -> impl Strategy<Value = (Vec<f64>, Vec<bool>, usize)> {
    // small integer values force ties at the cut-off
    (
        prop::collection::vec((-4i32..5).prop_map(|v| v as f64 * 0.5), 64),
        prop::collection::vec(any::<bool>(), 64),
        1usize..=64,
    )
}

proptest! {
    #[test]
    fn tki_equals_full_sort((values, mask, k) in heatmap_and_mask()) {
        let h = Heatmap::new(8, 8, values.clone()).unwrap();
        let m = BinaryMask::new(8, 8, mask.clone()).unwrap();
        prop_assert_eq!(heatmap_tki(&h, &m, k).unwrap(), common::brute_tki(&values, &mask, k));
    }

    #[test]
    fn tki_grows_with_the_mask((values, mask, k) in heatmap_and_mask(), extra in prop::collection::vec(any::<bool>(), 64)) {
        let h = Heatmap::new(8, 8, values).unwrap();
        let bigger: Vec<bool> = mask.iter().zip(&extra).map(|(a, b)| *a || *b).collect();
        let small = heatmap_tki(&h, &BinaryMask::new(8, 8, mask).unwrap(), k).unwrap();
        let large = heatmap_tki(&h, &BinaryMask::new(8, 8, bigger).unwrap(), k).unwrap();
        prop_assert!(small <= large);
        prop_assert!((0.0..=1.0).contains(&small));
    }

    #[test]
    fn containment_and_disjointness((values, _mask, k) in heatmap_and_mask()) {
        let h = Heatmap::new(8, 8, values).unwrap();
        let top = top_k_mask(&h, k).unwrap();
        prop_assert_eq!(tki(&top, &top, k).unwrap(), 1.0);
        let outside = BinaryMask::new(8, 8, top.bits().iter().map(|b| !b).collect()).unwrap();
        prop_assert_eq!(tki(&outside, &top, k).unwrap(), 0.0);
    }

    #[test]
    fn gate_partitions_and_is_monotone(
        scores in prop::collection::vec(0.0f64..10.0, 0..50),
        mut ts in prop::collection::vec(0.0f64..12.0, 1..8),
    ) {
        ts.sort_by(f64::total_cmp);
        let mut last = usize::MAX;
        for t in ts {
            let g = gate(&scores, t).unwrap();
            prop_assert_eq!(g.kept.len() + g.discarded.len(), scores.len());
            prop_assert!(g.kept.iter().all(|&i| scores[i] >= t));
            prop_assert!(g.discarded.iter().all(|&i| scores[i] < t));
            prop_assert!(g.kept.len() <= last);
            last = g.kept.len();
        }
    }

    #[test]
    fn sharpness_is_transpose_invariant(w in 3usize..12, h in 3usize..12, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect();
        let img = GrayImage::new(w, h, v).unwrap();
        let a = sharpness_score(&img).unwrap();
        let b = sharpness_score(&img.transpose()).unwrap();
        prop_assert!(a.raw >= 0.0);
        prop_assert!((a.raw - b.raw).abs() <= 1e-12 * (1.0 + a.raw));
        prop_assert!((a.normalized - b.normalized).abs() <= 1e-12 * (1.0 + a.normalized));
    }

    #[test]
    fn affine_images_score_zero(w in 3usize..20, h in 3usize..20, a in -8i32..8, b in -8i32..8, c in 320i32..704) {
        // dyadic values inside [0, 1] keep every sum exact
        let img = GrayImage::from_fn(w, h, |x, y| (a as f64 * x as f64 + b as f64 * y as f64 + c as f64) / 1024.0).unwrap();
        let s = sharpness_score(&img).unwrap();
        prop_assert_eq!(s.raw, 0.0);
        prop_assert_eq!(s.normalized, 0.0);
    }

    #[test]
    fn crops_compose(
        (w, h) in (4usize..16, 4usize..16),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let img = Image::from_fn(w, h, 3, |x, y, c| (x * 31 + y * 7 + c) as f64 / 1000.0).unwrap();
        let ow = rng.random_range(1..=w);
        let oh = rng.random_range(1..=h);
        let outer = BoundingBox::new(rng.random_range(0..=w - ow), rng.random_range(0..=h - oh), ow, oh);
        let iw = rng.random_range(1..=ow);
        let ih = rng.random_range(1..=oh);
        let inner = BoundingBox::new(rng.random_range(0..=ow - iw), rng.random_range(0..=oh - ih), iw, ih);
        let two = img.crop(&outer).unwrap().crop(&inner).unwrap();
        let one = img.crop(&BoundingBox::new(outer.x + inner.x, outer.y + inner.y, iw, ih)).unwrap();
        prop_assert_eq!(two, one);
    }
}

#[test]
fn one_pixel_crop() {
    let img = Image::from_fn(6, 5, 3, |x, y, c| (x + 10 * y + 100 * c) as f64 / 1000.0).unwrap();
    let px = img.crop(&BoundingBox::new(3, 2, 1, 1)).unwrap();
    assert_eq!((px.width(), px.height()), (1, 1));
    assert_eq!(px.pixel(0, 0), img.pixel(3, 2));
    assert!(img.crop(&BoundingBox::new(5, 4, 2, 1)).is_err());
    assert!(img.crop(&BoundingBox::new(0, 0, 0, 1)).is_err());
}

#[test]
fn blur_lowers_sharpness_of_noise() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let mut img = Image::new(
        32,
        32,
        1,
        (0..32 * 32).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let mut last = f64::INFINITY;
    for _ in 0..4 {
        let g = GrayImage::new(32, 32, img.data().to_vec()).unwrap();
        let v = sharpness_score(&g).unwrap().raw;
        assert!(v < last);
        last = v;
        img = img.box_blur();
    }
}
