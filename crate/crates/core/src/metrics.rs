//! Generator-quality metrics (PSNR, SSIM, fidelity ROC-AUC) and
//! weak-localization metrics (percentile masks, IoU, precision-recall area).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::ExplanationMap;
use crate::nn::{ClassifierNet, GeneratorPair};
use crate::synth::Dataset;
use crate::tensor::Image;

/// Percentiles at which IoU is tabulated.
pub const IOU_PERCENTILES: [u32; 5] = [80, 85, 90, 95, 98];
pub const TOTAL_RANGE: (u32, u32) = (1, 100);
pub const PARTIAL_RANGE: (u32, u32) = (80, 100);

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, bits: vec![false; height * width] }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape(format!("{} bits", height * width), bits.len()));
        }
        Ok(Self { height, width, bits })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.bits[r * self.width + c] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn intersection(&self, other: &BinaryMask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count()
    }

    pub fn union(&self, other: &BinaryMask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a || **b).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    fn ensure_same(&self, other: &BinaryMask) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::shape(format!("{}x{}", self.height, self.width), format!("{}x{}", other.height, other.width)));
        }
        Ok(())
    }
}

fn ensure_unit_pair(a: &Image, b: &Image) -> Result<()> {
    a.ensure_same_shape(b)
}

/// Peak signal-to-noise ratio in dB with peak 1; `+∞` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    ensure_unit_pair(a, b)?;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn ssim_stats(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cov += (x - ma) * (y - mb);
    }
    let (va, vb, cov) = (va / n, vb / n, cov / n);
    ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
}

/// Mean SSIM over every 7×7 window of every channel (population statistics).
/// Images smaller than the window use whole-channel statistics instead.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ensure_unit_pair(a, b)?;
    let (h, w) = (a.height(), a.width());
    let mut total = 0.0;
    let mut windows = 0usize;
    for c in 0..a.channels() {
        let (pa, pb) = (a.channel(c), b.channel(c));
        if h < SSIM_WINDOW || w < SSIM_WINDOW {
            total += ssim_stats(pa, pb);
            windows += 1;
            continue;
        }
        let mut wa = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
        let mut wb = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
        for r in 0..=h - SSIM_WINDOW {
            for col in 0..=w - SSIM_WINDOW {
                wa.clear();
                wb.clear();
                for dr in 0..SSIM_WINDOW {
                    let off = (r + dr) * w + col;
                    wa.extend_from_slice(&pa[off..off + SSIM_WINDOW]);
                    wb.extend_from_slice(&pb[off..off + SSIM_WINDOW]);
                }
                total += ssim_stats(&wa, &wb);
                windows += 1;
            }
        }
    }
    Ok(total / windows as f64)
}

/// Area under the ROC curve via the Mann-Whitney statistic; ties count ½.
pub fn roc_auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::shape(format!("{} scores", labels.len()), scores.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("ROC-AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg_rank;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Round half up at 0.5.
pub fn round_score(p: f64) -> bool {
    p >= 0.5
}

/// `(AUC_s, AUC_a)` from per-sample scores fc(x), fc(xs), fc(xa).
pub fn fidelity_from_scores(fc_x: &[f64], fc_xs: &[f64], fc_xa: &[f64]) -> Result<(f64, f64)> {
    let labels_s: Vec<bool> = fc_x.iter().map(|&p| round_score(p)).collect();
    let labels_a: Vec<bool> = fc_x.iter().map(|&p| round_score(1.0 - p)).collect();
    Ok((roc_auc(&labels_s, fc_xs)?, roc_auc(&labels_a, fc_xa)?))
}

pub fn fidelity_auc(classifier: &ClassifierNet, pair: &GeneratorPair, dataset: &Dataset) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(Error::UndefinedMetric("empty dataset".into()));
    }
    let (mut fx, mut fs, mut fa) = (Vec::new(), Vec::new(), Vec::new());
    for s in &dataset.samples {
        let (xs, xa) = pair.forward(&s.image)?;
        fx.push(classifier.score(&s.image)?);
        fs.push(classifier.score(&xs)?);
        fa.push(classifier.score(&xa)?);
    }
    fidelity_from_scores(&fx, &fs, &fa)
}

/// Nearest-rank percentile of `values` (p in 1..=100).
pub fn nearest_rank(sorted: &[f64], p: u32) -> f64 {
    let n = sorted.len();
    let rank = ((p as f64 / 100.0) * n as f64).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

fn sorted_values(map: &ExplanationMap) -> Vec<f64> {
    let mut v = map.values().to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn mask_at(map: &ExplanationMap, threshold: f64) -> BinaryMask {
    BinaryMask { height: map.height(), width: map.width(), bits: map.values().iter().map(|&v| v >= threshold).collect() }
}

/// Pixels whose value is ≥ the nearest-rank p-th percentile.
pub fn threshold_at_percentile(map: &ExplanationMap, p: u32) -> BinaryMask {
    assert!((1..=100).contains(&p), "percentile {p} outside 1..=100");
    mask_at(map, nearest_rank(&sorted_values(map), p))
}

pub fn iou(m_e: &BinaryMask, m_gt: &BinaryMask) -> Result<f64> {
    m_e.ensure_same(m_gt)?;
    if m_gt.count() == 0 {
        return Err(Error::UndefinedMetric("empty ground-truth mask".into()));
    }
    Ok(m_e.intersection(m_gt) as f64 / m_e.union(m_gt) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub percentile: u32,
    pub precision: f64,
    pub recall: f64,
}

/// Precision/recall at every integer percentile of `range`, ordered by
/// descending percentile (i.e. non-decreasing recall).
pub fn pr_curve(map: &ExplanationMap, m_gt: &BinaryMask, range: (u32, u32)) -> Result<Vec<CurvePoint>> {
    if (map.height(), map.width()) != (m_gt.height(), m_gt.width()) {
        return Err(Error::shape(format!("{}x{}", m_gt.height(), m_gt.width()), format!("{}x{}", map.height(), map.width())));
    }
    let gt = m_gt.count();
    if gt == 0 {
        return Err(Error::UndefinedMetric("empty ground-truth mask".into()));
    }
    let sorted = sorted_values(map);
    Ok((range.0..=range.1)
        .rev()
        .map(|p| {
            let m = mask_at(map, nearest_rank(&sorted, p));
            let inter = m.intersection(m_gt);
            let size = m.count();
            let precision = if size == 0 { 0.0 } else { inter as f64 / size as f64 };
            CurvePoint { percentile: p, precision, recall: inter as f64 / gt as f64 }
        })
        .collect())
}

/// Σ P_i (R_i − R_{i−1}) over a curve in recall order, with R_0 = 0.
pub fn curve_area(curve: &[CurvePoint]) -> f64 {
    let mut prev = 0.0;
    let mut area = 0.0;
    for pt in curve {
        area += pt.precision * (pt.recall - prev);
        prev = pt.recall;
    }
    area
}

pub fn auc_loc(map: &ExplanationMap, m_gt: &BinaryMask, range: (u32, u32)) -> Result<f64> {
    Ok(curve_area(&pr_curve(map, m_gt, range)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageLocalization {
    pub id: String,
    pub iou: Vec<f64>,
    pub auc_total: f64,
    pub auc_partial: f64,
    pub curve: Vec<CurvePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub percentiles: Vec<u32>,
    pub mean_iou: Vec<f64>,
    pub auc_total: f64,
    pub auc_partial: f64,
    pub evaluated: usize,
    pub skipped: usize,
    pub per_image: Vec<ImageLocalization>,
}

impl LocalizationReport {
    pub fn iou_at(&self, p: u32) -> Option<f64> {
        self.percentiles.iter().position(|&q| q == p).map(|i| self.mean_iou[i])
    }
}

pub struct LocalizationInput<'a> {
    pub id: &'a str,
    pub map: &'a ExplanationMap,
    pub gt: &'a BinaryMask,
}

pub fn localize_one(id: &str, map: &ExplanationMap, gt: &BinaryMask) -> Result<ImageLocalization> {
    let curve = pr_curve(map, gt, TOTAL_RANGE)?;
    let partial: Vec<CurvePoint> = curve.iter().copied().filter(|c| c.percentile >= PARTIAL_RANGE.0).collect();
    let sorted = sorted_values(map);
    let iou = IOU_PERCENTILES
        .iter()
        .map(|&p| iou(&mask_at(map, nearest_rank(&sorted, p)), gt))
        .collect::<Result<Vec<_>>>()?;
    Ok(ImageLocalization { id: id.to_string(), iou, auc_total: curve_area(&curve), auc_partial: curve_area(&partial), curve })
}

/// Dataset means over samples with non-empty ground truth; the others are
/// counted in `skipped`.
pub fn evaluate_localization(items: &[LocalizationInput<'_>]) -> Result<LocalizationReport> {
    let mut per_image = Vec::new();
    let mut skipped = 0;
    for it in items {
        if it.gt.count() == 0 {
            skipped += 1;
            continue;
        }
        per_image.push(localize_one(it.id, it.map, it.gt)?);
    }
    if per_image.is_empty() {
        return Err(Error::UndefinedMetric("no sample with a non-empty ground truth".into()));
    }
    let n = per_image.len() as f64;
    let mean_iou = (0..IOU_PERCENTILES.len()).map(|k| per_image.iter().map(|r| r.iou[k]).sum::<f64>() / n).collect();
    Ok(LocalizationReport {
        percentiles: IOU_PERCENTILES.to_vec(),
        mean_iou,
        auc_total: per_image.iter().map(|r| r.auc_total).sum::<f64>() / n,
        auc_partial: per_image.iter().map(|r| r.auc_partial).sum::<f64>() / n,
        evaluated: per_image.len(),
        skipped,
        per_image,
    })
}

/// Aligned text table: one row per named report.
pub fn localization_table(rows: &[(String, Option<&LocalizationReport>)]) -> String {
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(18);
    let mut out = format!("{:<name_w$}", "Explanation method");
    for p in IOU_PERCENTILES {
        out.push_str(&format!("  IoU@{p:<3}"));
    }
    out.push_str("  Total AUC  Partial AUC\n");
    for (name, rep) in rows {
        out.push_str(&format!("{name:<name_w$}"));
        match rep {
            Some(r) => {
                for v in &r.mean_iou {
                    out.push_str(&format!("  {v:>7.3}"));
                }
                out.push_str(&format!("  {:>9.3}  {:>11.3}\n", r.auc_total, r.auc_partial));
            }
            None => {
                for _ in IOU_PERCENTILES {
                    out.push_str(&format!("  {:>7}", "missing"));
                }
                out.push_str(&format!("  {:>9}  {:>11}\n", "missing", "missing"));
            }
        }
    }
    out
}

/// Mean similarity between original, similar and adversarial images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorQuality {
    pub ssim_x_xs: f64,
    pub psnr_x_xs: f64,
    pub ssim_x_xa: f64,
    pub psnr_x_xa: f64,
    pub ssim_xs_xa: f64,
    pub psnr_xs_xa: f64,
    pub auc_s: f64,
    pub auc_a: f64,
}

pub fn generator_quality(classifier: &ClassifierNet, pair: &GeneratorPair, dataset: &Dataset) -> Result<GeneratorQuality> {
    if dataset.is_empty() {
        return Err(Error::UndefinedMetric("empty dataset".into()));
    }
    let mut acc = [0.0f64; 6];
    let (mut fx, mut fs, mut fa) = (Vec::new(), Vec::new(), Vec::new());
    for s in &dataset.samples {
        let x = &s.image;
        let (xs, xa) = pair.forward(x)?;
        let vals = [ssim(x, &xs)?, psnr(x, &xs)?, ssim(x, &xa)?, psnr(x, &xa)?, ssim(&xs, &xa)?, psnr(&xs, &xa)?];
        for (a, v) in acc.iter_mut().zip(vals) {
            *a += v;
        }
        fx.push(classifier.score(x)?);
        fs.push(classifier.score(&xs)?);
        fa.push(classifier.score(&xa)?);
    }
    let n = dataset.len() as f64;
    let (auc_s, auc_a) = fidelity_from_scores(&fx, &fs, &fa)?;
    Ok(GeneratorQuality {
        ssim_x_xs: acc[0] / n,
        psnr_x_xs: acc[1] / n,
        ssim_x_xa: acc[2] / n,
        psnr_x_xa: acc[3] / n,
        ssim_xs_xa: acc[4] / n,
        psnr_xs_xa: acc[5] / n,
        auc_s,
        auc_a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::Provenance;
    use crate::tensor::{Shape, Tensor};

    fn map_from(values: Vec<f64>, h: usize, w: usize) -> ExplanationMap {
        ExplanationMap::new(h, w, values, Provenance::Dual).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = Tensor::filled(Shape::new(1, 4, 4), 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c = a.map(|v| v + 0.01);
        assert!((psnr(&a, &c).unwrap() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_examples() {
        let a = Tensor::from_fn(Shape::new(1, 9, 9), |_, r, c| ((r * 3 + c) % 5) as f64 / 4.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let zero = Tensor::zeros(Shape::new(1, 9, 9));
        let one = Tensor::filled(Shape::new(1, 9, 9), 1.0);
        let expected = SSIM_C1 * SSIM_C2 / ((1.0 + SSIM_C1) * SSIM_C2);
        assert!((ssim(&zero, &one).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 1e-4 / 1.0001).abs() < 1e-15);
        // smaller than the window: global statistics
        let s0 = Tensor::zeros(Shape::new(1, 3, 3));
        let s1 = Tensor::filled(Shape::new(1, 3, 3), 1.0);
        assert!((ssim(&s0, &s1).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn roc_auc_examples() {
        assert_eq!(roc_auc(&[false, true], &[0.2, 0.8]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[false, true], &[0.8, 0.2]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[false, true, true, false], &[0.4; 4]).unwrap(), 0.5);
        assert!(matches!(roc_auc(&[true, true], &[0.1, 0.2]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn fidelity_from_identity_generators() {
        let fx = [0.1, 0.7, 0.9, 0.3];
        assert_eq!(fidelity_from_scores(&fx, &fx, &fx).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn percentile_mask_examples() {
        let m = map_from((1..=100).map(f64::from).collect(), 10, 10);
        let mask = threshold_at_percentile(&m, 95);
        assert_eq!(mask.count(), 6);
        assert!(mask.bits()[94..].iter().all(|&b| b));
        let c = map_from(vec![0.4; 16], 4, 4);
        for p in [1, 50, 99, 100] {
            assert_eq!(threshold_at_percentile(&c, p).count(), 16);
        }
        assert_eq!(threshold_at_percentile(&m, 1).count(), 100);
    }

    #[test]
    fn iou_examples() {
        let mut left = BinaryMask::new(4, 4);
        let mut top = BinaryMask::new(4, 4);
        for r in 0..4 {
            for c in 0..4 {
                left.set(r, c, c < 2);
                top.set(r, c, r < 2);
            }
        }
        assert_eq!(iou(&left, &left).unwrap(), 1.0);
        assert!((iou(&left, &top).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let mut right = BinaryMask::new(4, 4);
        for r in 0..4 {
            for c in 2..4 {
                right.set(r, c, true);
            }
        }
        assert_eq!(iou(&left, &right).unwrap(), 0.0);
        assert!(iou(&left, &BinaryMask::new(4, 4)).is_err());
    }

    #[test]
    fn indicator_map_has_unit_auc() {
        // 10 of 100 pixels are ground truth and the map is their indicator.
        let mut gt = BinaryMask::new(10, 10);
        for c in 0..10 {
            gt.set(3, c, true);
        }
        let m = map_from(gt.bits().iter().map(|&b| f64::from(u8::from(b))).collect(), 10, 10);
        assert!((auc_loc(&m, &gt, TOTAL_RANGE).unwrap() - 1.0).abs() < 1e-12);
        let rep = localize_one("a", &m, &gt).unwrap();
        // p ≥ 91 selects exactly the ten positives; p ≤ 90 selects every pixel
        assert_eq!(rep.iou[4], 1.0);
        assert_eq!(rep.iou[3], 1.0);
        assert!((rep.iou[2] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn report_of_duplicates_equals_single() {
        let mut gt = BinaryMask::new(6, 6);
        gt.set(2, 2, true);
        gt.set(2, 3, true);
        let m = map_from((0..36).map(|i| ((i * 7) % 11) as f64).collect(), 6, 6);
        let one = evaluate_localization(&[LocalizationInput { id: "a", map: &m, gt: &gt }]).unwrap();
        let two = evaluate_localization(&[
            LocalizationInput { id: "a", map: &m, gt: &gt },
            LocalizationInput { id: "a", map: &m, gt: &gt },
        ])
        .unwrap();
        assert_eq!(one.mean_iou, two.mean_iou);
        assert_eq!(one.auc_total, two.auc_total);
        assert_eq!(one.percentiles, vec![80, 85, 90, 95, 98]);
        let empty = BinaryMask::new(6, 6);
        assert!(evaluate_localization(&[LocalizationInput { id: "h", map: &m, gt: &empty }]).is_err());
    }
}
