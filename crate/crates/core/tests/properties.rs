//! Property tests for the invariants of every module.

use dualex::explain::{
    apply_transform, explain, explain_augmented, invert_transform, sample_transform, AugmentationSpec, DualExplainer, ExplanationMap,
    Explainer, Method, NaiveExplainer,
};
use dualex::losses::{self, LossWeights};
use dualex::metrics::{self, BinaryMask};
use dualex::nn::{ClassifierArch, ClassifierNet, GenMode, GeneratorArch, GeneratorPair};
use dualex::synth::{generate_dataset, load_dataset, save_dataset, split_dataset, DatasetSpec};
use dualex::tensor::{Image, Shape, Tensor};
use dualex::Provenance;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: usize = 8;

fn image(seed: u64, shape: Shape) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _| rng.gen())
}

fn small_arch() -> GeneratorArch {
    GeneratorArch { base_width: 2, ..GeneratorArch::for_input(Shape::new(1, H, H)) }
}

/// A pair whose parameters are scrambled so both branches differ.
fn scrambled_pair(mode: GenMode, seed: u64, scale: f64) -> GeneratorPair {
    let mut pair = GeneratorPair::init(mode, small_arch(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    for t in pair.params_mut().tensors_mut() {
        for v in t.data.iter_mut() {
            *v += rng.gen_range(-scale..scale);
        }
    }
    pair
}

fn mode_strategy() -> impl Strategy<Value = GenMode> {
    prop_oneof![Just(GenMode::DuoAE), Just(GenMode::SingleAE(1)), Just(GenMode::SingleAE(2))]
}

fn map_strategy() -> impl Strategy<Value = ExplanationMap> {
    // values on a 1/1024 grid: distinct values stay distinct under the rescalings below
    prop::collection::vec(0u32..1024, H * H)
        .prop_map(|v| ExplanationMap::new(H, H, v.into_iter().map(|k| k as f64 / 1024.0).collect(), Provenance::Dual).unwrap())
}

fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
    prop::collection::vec(any::<bool>(), H * H).prop_filter_map("non-empty", |mut bits| {
        if !bits.iter().any(|&b| b) {
            bits[0] = true;
        }
        BinaryMask::from_bits(H, H, bits).ok()
    })
}

fn weights_strategy() -> impl Strategy<Value = LossWeights> {
    (prop::array::uniform8(0.0f64..3.0), 0.01f64..1.0).prop_map(|(a, kappa)| LossWeights {
        alpha1: a[0],
        alpha2: a[1],
        alpha3: a[2],
        alpha4: a[3],
        beta1: a[4],
        beta2: a[5],
        gamma: a[6],
        lambda: a[7],
        kappa,
        ..LossWeights::default()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn dataset_generation_is_a_function_of_the_seed(seed in any::<u64>()) {
        let spec = DatasetSpec { count: 12, height: 12, width: 12, blob_radius_range: (1.5, 3.0), seed, ..DatasetSpec::default() };
        let a = generate_dataset(&spec).unwrap();
        prop_assert_eq!(&a, &generate_dataset(&spec).unwrap());
        for s in &a.samples {
            prop_assert_eq!(s.label == 1, !s.boxes.is_empty());
        }
    }

    #[test]
    fn splits_are_stratified(seed in any::<u64>(), count in 40usize..160, frac in 0.1f64..0.9) {
        let spec = DatasetSpec { count, height: 8, width: 8, blob_radius_range: (1.0, 2.0), pathological_fraction: frac, seed, ..DatasetSpec::default() };
        let ds = generate_dataset(&spec).unwrap();
        let (train, _, test) = split_dataset(&ds, [0.8, 0.1, 0.1], seed).unwrap();
        let f = |d: &dualex::Dataset| d.pathological() as f64 / d.len() as f64;
        prop_assert!((f(&train) - f(&test)).abs() <= 2.0 / test.len() as f64);
    }

    #[test]
    fn classifier_outputs_are_probabilities(seed in any::<u64>(), scale in 0.0f64..20.0) {
        let mut net = ClassifierNet::init(ClassifierArch { widths: vec![2, 3, 2], ..ClassifierArch::for_input(Shape::new(1, H, H)) }, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in net.params_mut().tensors_mut() {
            for v in t.data.iter_mut() {
                *v = rng.gen_range(-scale..=scale);
            }
        }
        let p = net.score(&image(seed, Shape::new(1, H, H))).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn generator_outputs_stay_in_unit_range(mode in mode_strategy(), seed in any::<u64>(), scale in 0.0f64..10.0) {
        let pair = scrambled_pair(mode, seed, scale);
        let x = image(seed, Shape::new(1, H, H));
        let (xs, xa) = pair.forward(&x).unwrap();
        for t in [&xs, &xa] {
            prop_assert_eq!(t.shape(), x.shape());
            prop_assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn branches_mirror_each_other(mode in mode_strategy(), seed in any::<u64>()) {
        let pair = GeneratorPair::init(mode, small_arch(), seed).unwrap();
        let (s, a) = pair.branch_shapes();
        prop_assert_eq!(s, a);
    }

    #[test]
    fn adversarial_head_leaves_similar_output_alone(head in 1usize..=2, seed in any::<u64>(), delta in -1.0f64..1.0) {
        let mut pair = scrambled_pair(GenMode::SingleAE(head), seed, 0.3);
        let x = image(seed, Shape::new(1, H, H));
        let (xs0, _) = pair.forward(&x).unwrap();
        let adv: Vec<usize> = pair.non_shared_pairs().iter().map(|&(_, a)| a).collect();
        for (k, t) in pair.params_mut().tensors_mut().iter_mut().enumerate() {
            if adv.contains(&k) {
                for v in t.data.iter_mut() {
                    *v += delta;
                }
            }
        }
        let (xs1, _) = pair.forward(&x).unwrap();
        prop_assert_eq!(xs0, xs1);
    }

    #[test]
    fn losses_are_non_negative(w in weights_strategy(), seed in any::<u64>(), p in prop::array::uniform3(0.0f64..=1.0)) {
        let shape = Shape::new(1, H, H);
        let (x, xs, xa) = (image(seed, shape), image(seed.wrapping_add(1), shape), image(seed.wrapping_add(2), shape));
        prop_assert!(losses::similarity_loss(&x, &xs, &xa, &w).unwrap() >= 0.0);
        prop_assert!(losses::tv_regularization(&xs, &xa, &w).unwrap() >= 0.0);
        prop_assert!(losses::classification_loss_binary(p[0], p[1], p[2], &w).unwrap() >= 0.0);
        let pair = scrambled_pair(GenMode::SingleAE(2), seed, 0.2);
        prop_assert!(losses::generator_weight_loss(&pair, &w).unwrap() >= 0.0);
        let q = [p[0], 1.0 - p[0]];
        let multi = losses::classification_loss_multiclass(&q, &[p[1], 1.0 - p[1]], &[p[2], 1.0 - p[2]], &w).unwrap();
        prop_assert!(multi >= -(w.beta1 + w.beta2) * w.kappa - 1e-12);
    }

    #[test]
    fn similarity_loss_is_homogeneous(w in weights_strategy(), seed in any::<u64>(), k in -4i32..4, c in 0.01f64..10.0) {
        let shape = Shape::new(1, H, H);
        let (x, xs, xa) = (image(seed, shape), image(seed.wrapping_add(1), shape), image(seed.wrapping_add(2), shape));
        let base = losses::similarity_loss(&x, &xs, &xa, &w).unwrap();
        let scale = |s: f64| LossWeights { alpha1: w.alpha1 * s, alpha2: w.alpha2 * s, alpha3: w.alpha3 * s, alpha4: w.alpha4 * s, ..w };
        // powers of two scale every product exactly
        let p2 = 2f64.powi(k);
        prop_assert_eq!(losses::similarity_loss(&x, &xs, &xa, &scale(p2)).unwrap(), p2 * base);
        let scaled = losses::similarity_loss(&x, &xs, &xa, &scale(c)).unwrap();
        prop_assert!((scaled - c * base).abs() <= 1e-12 * (c * base).abs().max(1.0));
    }

    #[test]
    fn collapsed_outputs_zero_the_pair_terms(w in weights_strategy(), seed in any::<u64>()) {
        let shape = Shape::new(1, H, H);
        let (x, xs) = (image(seed, shape), image(seed.wrapping_add(1), shape));
        let only_pair = LossWeights { alpha1: 0.0, alpha2: 0.0, ..w };
        prop_assert_eq!(losses::similarity_loss(&x, &xs, &xs, &only_pair).unwrap(), 0.0);
        prop_assert_eq!(losses::tv_regularization(&xs, &xs, &w).unwrap(), 0.0);
    }

    #[test]
    fn breakdown_sums_to_total(w in weights_strategy(), mode in mode_strategy(), seed in any::<u64>()) {
        let pair = scrambled_pair(mode, seed, 0.2);
        let clf = ClassifierNet::init(ClassifierArch { widths: vec![2, 3, 2], ..ClassifierArch::for_input(Shape::new(1, H, H)) }, seed).unwrap();
        let b = losses::total_loss(&image(seed, Shape::new(1, H, H)), &pair, &clf, &w).unwrap();
        let sum = b.l_d + b.l_fc + b.l_reg + b.l_sa;
        prop_assert!((b.total - sum).abs() <= 1e-6 * sum.abs().max(1e-12));
    }

    #[test]
    fn explanation_maps_are_finite_and_symmetric(mode in mode_strategy(), seed in any::<u64>()) {
        let pair = scrambled_pair(mode, seed, 0.3);
        let x = image(seed, Shape::new(1, H, H));
        let m = explain(&pair, &x).unwrap();
        prop_assert!(m.values().iter().all(|v| v.is_finite() && *v >= 0.0));
        let swapped = explain(&pair.swapped(), &x).unwrap();
        prop_assert_eq!(m.values(), swapped.values());
    }

    #[test]
    fn augmented_map_is_a_convex_combination(seed in any::<u64>(), n in 1usize..6) {
        let pair = scrambled_pair(GenMode::SingleAE(2), seed, 0.3);
        let x = image(seed, Shape::new(1, H, H));
        let spec = AugmentationSpec { n, ..AugmentationSpec::default() };
        let mapper = DualExplainer(&pair);
        let avg = explain_augmented(&mapper, &x, &spec, seed).unwrap();
        prop_assert_eq!(&avg, &explain_augmented(&mapper, &x, &spec, seed).unwrap());

        // replay the same draws to collect every contributing map
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = mapper.explain(&x).unwrap();
        let mut lo = base.values().to_vec();
        let mut hi = base.values().to_vec();
        for _ in 0..n {
            let t = sample_transform(&spec, &mut rng);
            let (back, valid) = invert_transform(&t, &mapper.explain(&apply_transform(&t, &x)).unwrap());
            for i in 0..lo.len() {
                if valid.bits()[i] {
                    lo[i] = lo[i].min(back.values()[i]);
                    hi[i] = hi[i].max(back.values()[i]);
                }
            }
        }
        for (i, &v) in avg.values().iter().enumerate() {
            prop_assert!(lo[i] - 1e-12 <= v && v <= hi[i] + 1e-12, "pixel {}: {} outside [{}, {}]", i, v, lo[i], hi[i]);
        }
    }

    #[test]
    fn inversion_is_consistent_on_affine_maps(seed in any::<u64>(), a in -1.0f64..1.0, b in -1.0f64..1.0) {
        // bilinear sampling reproduces affine functions exactly, so round trips are exact up to rounding
        let (h, w) = (16, 16);
        let spec = AugmentationSpec::default();
        let t = sample_transform(&spec, &mut ChaCha8Rng::seed_from_u64(seed));
        let ramp = Tensor::from_fn(Shape::new(1, h, w), |_, r, c| 2.0 + a * r as f64 / h as f64 + b * c as f64 / w as f64);
        let warped = apply_transform(&t, &ramp);
        let (back, valid) = invert_transform(&t, &ExplanationMap::new(h, w, warped.data().to_vec(), Provenance::Dual).unwrap());
        for r in 0..h {
            for c in 0..w {
                if valid.get(r, c) && fully_inside(&t, r, c, h, w) {
                    prop_assert!((back.get(r, c) - ramp.get(0, r, c)).abs() < 1e-3, "({}, {})", r, c);
                }
            }
        }
    }

    #[test]
    fn thresholds_are_monotone(m in map_strategy(), p in 1u32..=100, q in 1u32..=100) {
        let (p, q) = (p.min(q), p.max(q));
        prop_assert!(metrics::threshold_at_percentile(&m, q).is_subset_of(&metrics::threshold_at_percentile(&m, p)));
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in mask_strategy(), b in mask_strategy()) {
        let ab = metrics::iou(&a, &b).unwrap();
        prop_assert_eq!(ab, metrics::iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn auc_loc_ignores_monotone_rescaling(m in map_strategy(), gt in mask_strategy(), which in 0usize..5) {
        let f: fn(f64) -> f64 = [|v: f64| 2.0 * v, |v: f64| v + 0.25, |v: f64| v * v, f64::sqrt, f64::ln_1p][which];
        let r = ExplanationMap::new(H, H, m.values().iter().map(|&v| f(v)).collect(), Provenance::Dual).unwrap();
        for range in [metrics::TOTAL_RANGE, metrics::PARTIAL_RANGE] {
            prop_assert_eq!(metrics::auc_loc(&m, &gt, range).unwrap(), metrics::auc_loc(&r, &gt, range).unwrap());
        }
    }

    #[test]
    fn self_similarity_is_perfect(seed in any::<u64>()) {
        let a = image(seed, Shape::new(1, 12, 12));
        prop_assert_eq!(metrics::ssim(&a, &a).unwrap(), 1.0);
        prop_assert_eq!(metrics::psnr(&a, &a).unwrap(), f64::INFINITY);
    }
}

/// Whether every warped pixel the pull-back of (r, c) interpolates from had
/// its own source inside the frame.
fn fully_inside(t: &dualex::explain::GeomTransform, r: usize, c: usize, h: usize, w: usize) -> bool {
    let inside = |(a, b): (f64, f64)| a >= 0.0 && b >= 0.0 && a <= (h - 1) as f64 && b <= (w - 1) as f64;
    let (dr, dc) = t.forward_point(r as f64, c as f64, h, w);
    if !inside((dr, dc)) {
        return false;
    }
    let (r0, c0) = (dr.floor() as usize, dc.floor() as usize);
    [(r0, c0), (r0 + 1, c0), (r0, c0 + 1), (r0 + 1, c0 + 1)]
        .iter()
        .all(|&(a, b)| inside(t.inverse_point(a.min(h - 1) as f64, b.min(w - 1) as f64, h, w)))
}

#[test]
fn dataset_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..4 {
        let ds = generate_dataset(&DatasetSpec { count: 10, height: 12, width: 12, channels: 1 + seed as usize % 3, blob_radius_range: (1.5, 3.0), seed, ..DatasetSpec::default() }).unwrap();
        let path = dir.path().join(seed.to_string());
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }
}

#[test]
fn naive_explainer_reports_its_method() {
    let pair = scrambled_pair(GenMode::DuoAE, 3, 0.3);
    assert_eq!(NaiveExplainer(&pair).method(), Method::Naive);
    assert_eq!(DualExplainer(&pair).method(), Method::Dual);
}
