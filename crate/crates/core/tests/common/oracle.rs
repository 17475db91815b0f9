//! Brute-force reimplementations of the localization metrics, written from
//! the definitions with full sorts and explicit index sets.

use std::collections::BTreeSet;

use dualex::explain::{ExplanationMap, Method};
use dualex::metrics::{self, BinaryMask};
use dualex::tensor::{Shape, Tensor};
use dualex::Provenance;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: u64 = 200;

/// Smallest map value `t` with at least `p`% of the values ≤ `t`.
pub fn percentile_value(values: &[f64], p: u32) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    for &t in &sorted {
        let below = values.iter().filter(|&&v| v <= t).count();
        if below * 100 >= p as usize * n {
            return t;
        }
    }
    unreachable!("p ≤ 100 always reaches the maximum")
}

pub fn threshold_set(values: &[f64], p: u32) -> BTreeSet<usize> {
    let t = percentile_value(values, p);
    (0..values.len()).filter(|&i| values[i] >= t).collect()
}

pub fn iou_set(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    a.intersection(b).count() as f64 / a.union(b).count() as f64
}

pub fn auc_set(values: &[f64], gt: &BTreeSet<usize>, lo: u32, hi: u32) -> f64 {
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for p in (lo..=hi).rev() {
        let m = threshold_set(values, p);
        let hit = m.intersection(gt).count() as f64;
        let precision = if m.is_empty() { 0.0 } else { hit / m.len() as f64 };
        let recall = hit / gt.len() as f64;
        area += precision * (recall - prev_recall);
        prev_recall = recall;
    }
    area
}

pub fn mask_set(m: &BinaryMask) -> BTreeSet<usize> {
    m.bits().iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

pub struct Instance {
    pub map: ExplanationMap,
    pub gt: BinaryMask,
}

/// A random 16×16 map (continuous, or with heavy ties) and a non-empty
/// ground truth (a rectangle, or scattered pixels).
pub fn instance(seed: u64) -> Instance {
    let (h, w) = (16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = [0u32, 3, 12, 50][rng.gen_range(0..4)];
    let values: Vec<f64> = (0..h * w)
        .map(|_| if levels == 0 { rng.gen::<f64>() } else { rng.gen_range(0..levels) as f64 / levels as f64 })
        .collect();
    let mut bits = vec![false; h * w];
    if rng.gen_bool(0.5) {
        let (r0, c0) = (rng.gen_range(0..h), rng.gen_range(0..w));
        let (r1, c1) = (rng.gen_range(r0 + 1..=h), rng.gen_range(c0 + 1..=w));
        for r in r0..r1 {
            for c in c0..c1 {
                bits[r * w + c] = true;
            }
        }
    } else {
        let q = rng.gen_range(0.02..0.6);
        for b in bits.iter_mut() {
            *b = rng.gen_bool(q);
        }
        let i = rng.gen_range(0..h * w);
        bits[i] = true;
    }
    Instance {
        map: ExplanationMap::new(h, w, values, Provenance::from(Method::Dual)).unwrap(),
        gt: BinaryMask::from_bits(h, w, bits).unwrap(),
    }
}

/// Panics on the first disagreement between the library and the oracle.
pub fn check_localization_oracles() {
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        let values = inst.map.values();
        let gt = mask_set(&inst.gt);
        for p in 1..=100 {
            let lib = metrics::threshold_at_percentile(&inst.map, p);
            let want = threshold_set(values, p);
            assert_eq!(mask_set(&lib), want, "instance {seed}: threshold mask at p={p}");
            let got = metrics::iou(&lib, &inst.gt).unwrap();
            assert_eq!(got, iou_set(&want, &gt), "instance {seed}: IoU at p={p}");
        }
        for (lo, hi) in [metrics::TOTAL_RANGE, metrics::PARTIAL_RANGE] {
            let got = metrics::auc_loc(&inst.map, &inst.gt, (lo, hi)).unwrap();
            assert_eq!(got, auc_set(values, &gt, lo, hi), "instance {seed}: AUC over {lo}..={hi}");
        }
    }
}

fn constant(v: f64) -> Tensor {
    Tensor::filled(Shape::new(1, 16, 16), v)
}

/// Closed forms on constant images.
pub fn check_quality_closed_forms() {
    let (c1, c2) = (metrics::SSIM_C1, metrics::SSIM_C2);
    for &(a, b) in &[(0.0, 1.0), (0.2, 0.7), (0.5, 0.5), (1.0, 0.25)] {
        let (x, y) = (constant(a), constant(b));
        let ssim = metrics::ssim(&x, &y).unwrap();
        let want = (2.0 * a * b + c1) * c2 / ((a * a + b * b + c1) * c2);
        assert!((ssim - want).abs() <= 1e-9, "ssim({a},{b}) = {ssim}, closed form {want}");
        let psnr = metrics::psnr(&x, &y).unwrap();
        if a == b {
            assert_eq!(psnr, f64::INFINITY, "psnr sentinel for identical images");
        } else {
            let want = 10.0 * (1.0 / ((a - b) * (a - b))).log10();
            assert!((psnr - want).abs() <= 1e-9, "psnr({a},{b}) = {psnr}, closed form {want}");
        }
    }
    let z = metrics::ssim(&constant(0.0), &constant(1.0)).unwrap();
    assert!((z - 1e-4 / 1.0001).abs() <= 1e-9, "ssim(0, 1) = {z}");
    let mse = metrics::psnr(&constant(0.5), &constant(0.6)).unwrap();
    assert!((mse - 20.0).abs() <= 1e-9, "psnr at mse 0.01 = {mse}");
}
