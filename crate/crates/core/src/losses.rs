//! Loss terms of the weak dual-generator objective and of the naive
//! adversarial baseline.
//!
//! Norms are plain sums over every pixel and channel (no division by the
//! element count). Each public loss has a crate-private `*_grad` companion
//! returning the value together with its gradient; training uses those and
//! the tests check them against central finite differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdversarialGenerator, ClassifierNet, GeneratorPair, ParamGrads};
use crate::tensor::{Image, Tensor};

/// Probability floor used by the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub kappa: f64,
    /// How the similarity, TV and weight-proximity terms are reduced.
    #[serde(default)]
    pub reduction: Reduction,
}

/// `Sum` keeps plain norms; `Mean` divides every term except the
/// classification one by the number of elements of the image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

impl Default for LossWeights {
    /// The Single AE₂ (W, TV) row.
    fn default() -> Self {
        Self { alpha1: 3.0, alpha2: 1.0, alpha3: 1.0, alpha4: 0.2, beta1: 0.001, beta2: 0.001, gamma: 0.2, lambda: 0.2, kappa: 0.1, reduction: Reduction::Sum }
    }
}

impl LossWeights {
    /// Every coefficient zero (κ keeps a valid positive margin).
    pub fn zero() -> Self {
        Self { alpha1: 0.0, alpha2: 0.0, alpha3: 0.0, alpha4: 0.0, beta1: 0.0, beta2: 0.0, gamma: 0.0, lambda: 0.0, kappa: 0.1, reduction: Reduction::Sum }
    }

    /// Folds a `Mean` reduction over `n` elements into the α, γ and λ
    /// coefficients; the result always uses `Sum`. Only the classification
    /// terms keep their weight, so their balance against the rest moves by `n`.
    pub fn for_elements(&self, n: usize) -> Self {
        match self.reduction {
            Reduction::Sum => *self,
            Reduction::Mean => {
                let s = 1.0 / n as f64;
                Self {
                    alpha1: self.alpha1 * s,
                    alpha2: self.alpha2 * s,
                    alpha3: self.alpha3 * s,
                    alpha4: self.alpha4 * s,
                    gamma: self.gamma * s,
                    lambda: self.lambda * s,
                    reduction: Reduction::Sum,
                    ..*self
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("alpha4", self.alpha4),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
        ];
        for (field, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidSpec { field, reason: format!("must be a finite value ≥ 0, got {v}") });
            }
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::InvalidSpec { field: "kappa", reason: format!("margin must be > 0, got {}", self.kappa) });
        }
        Ok(())
    }
}

/// Per-term values of the objective for one sample (or a batch mean).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_d: f64,
    pub l_fc: f64,
    pub l_reg: f64,
    pub l_sa: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_d: f64, l_fc: f64, l_reg: f64, l_sa: f64) -> Self {
        Self { l_d, l_fc, l_reg, l_sa, total: l_d + l_fc + l_reg + l_sa }
    }

    pub(crate) fn accumulate(&mut self, other: &LossBreakdown) {
        self.l_d += other.l_d;
        self.l_fc += other.l_fc;
        self.l_reg += other.l_reg;
        self.l_sa += other.l_sa;
        self.total += other.total;
    }

    pub(crate) fn scaled(&self, s: f64) -> Self {
        Self { l_d: self.l_d * s, l_fc: self.l_fc * s, l_reg: self.l_reg * s, l_sa: self.l_sa * s, total: self.total * s }
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Adds `coef · ∂‖a − b‖₂/∂a` to `da` and the negation to `db`.
fn add_l2_grad(a: &[f64], b: &[f64], coef: f64, da: Option<&mut [f64]>, db: Option<&mut [f64]>) {
    let n = l2(a, b);
    if n == 0.0 || coef == 0.0 {
        return;
    }
    let s = coef / n;
    if let Some(da) = da {
        for ((g, x), y) in da.iter_mut().zip(a).zip(b) {
            *g += s * (x - y);
        }
    }
    if let Some(db) = db {
        for ((g, x), y) in db.iter_mut().zip(a).zip(b) {
            *g -= s * (x - y);
        }
    }
}

fn check_shapes(x: &Tensor, others: &[&Tensor]) -> Result<()> {
    others.iter().try_for_each(|t| x.ensure_same_shape(t))
}

/// α1‖x−xs‖₂ + α2‖x−xa‖₂ + α3‖xs−xa‖₂ + α4‖xs−xa‖₁.
pub fn similarity_loss(x: &Image, xs: &Image, xa: &Image, w: &LossWeights) -> Result<f64> {
    check_shapes(x, &[xs, xa])?;
    let w = &w.for_elements(x.data().len());
    let (x, xs, xa) = (x.data(), xs.data(), xa.data());
    Ok(w.alpha1 * l2(x, xs) + w.alpha2 * l2(x, xa) + w.alpha3 * l2(xs, xa) + w.alpha4 * l1(xs, xa))
}

pub fn similarity_loss_grad(x: &Image, xs: &Image, xa: &Image, w: &LossWeights) -> (f64, Tensor, Tensor) {
    let w = &w.for_elements(x.data().len());
    let value = similarity_loss(x, xs, xa, w).expect("shapes checked by caller");
    let mut dxs = Tensor::zeros(xs.shape());
    let mut dxa = Tensor::zeros(xa.shape());
    let (xd, sd, ad) = (x.data(), xs.data(), xa.data());
    add_l2_grad(sd, xd, w.alpha1, Some(dxs.data_mut()), None);
    add_l2_grad(ad, xd, w.alpha2, Some(dxa.data_mut()), None);
    add_l2_grad(sd, ad, w.alpha3, Some(dxs.data_mut()), Some(dxa.data_mut()));
    if w.alpha4 != 0.0 {
        for ((gs, ga), (s, a)) in dxs.data_mut().iter_mut().zip(dxa.data_mut().iter_mut()).zip(sd.iter().zip(ad)) {
            let sign = if s > a {
                1.0
            } else if s < a {
                -1.0
            } else {
                0.0
            };
            *gs += w.alpha4 * sign;
            *ga -= w.alpha4 * sign;
        }
    }
    (value, dxs, dxa)
}

/// −[t·ln p + (1−t)·ln(1−p)] with p clamped to [ε, 1−ε].
pub fn bce(target: f64, p: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// ∂bce/∂p; zero where the clamp is active.
pub fn bce_grad(target: f64, p: f64) -> f64 {
    if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
        0.0
    } else {
        -target / p + (1.0 - target) / (1.0 - p)
    }
}

/// ∂bce(t, σ(z))/∂z = σ(z) − t for a sigmoid score `p = σ(z)`.
///
/// Unlike `bce_grad · σ'(z)` this stays non-zero where the ε clamp
/// flattens the loss value; elsewhere the two agree.
pub fn bce_logit_grad(target: f64, p: f64) -> f64 {
    p - target
}

fn check_score(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidSpec { field: "score", reason: format!("{name} = {v} is outside [0, 1]") });
    }
    Ok(())
}

/// β1·BCE(fc(x), fc(xs)) + β2·BCE(1 − fc(x), fc(xa)), soft targets.
pub fn classification_loss_binary(fc_x: f64, fc_xs: f64, fc_xa: f64, w: &LossWeights) -> Result<f64> {
    Ok(classification_binary_grad(fc_x, fc_xs, fc_xa, w)?.0)
}

pub fn classification_binary_grad(fc_x: f64, fc_xs: f64, fc_xa: f64, w: &LossWeights) -> Result<(f64, f64, f64)> {
    check_score("fc(x)", fc_x)?;
    check_score("fc(xs)", fc_xs)?;
    check_score("fc(xa)", fc_xa)?;
    let value = w.beta1 * bce(fc_x, fc_xs) + w.beta2 * bce(1.0 - fc_x, fc_xa);
    Ok((value, w.beta1 * bce_grad(fc_x, fc_xs), w.beta2 * bce_grad(1.0 - fc_x, fc_xa)))
}

/// Index of the largest entry; ties resolve to the lowest index.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn argmax_excluding(v: &[f64], skip: usize) -> usize {
    let mut best = None::<usize>;
    for (i, &x) in v.iter().enumerate() {
        if i != skip && best.map_or(true, |b| x > v[b]) {
            best = Some(i);
        }
    }
    best.expect("at least two classes")
}

/// Margin (CW-style) classification loss for vector-valued classifiers.
pub fn classification_loss_multiclass(fc_x: &[f64], fc_xs: &[f64], fc_xa: &[f64], w: &LossWeights) -> Result<f64> {
    Ok(classification_multiclass_grad(fc_x, fc_xs, fc_xa, w)?.0)
}

pub fn classification_multiclass_grad(
    fc_x: &[f64],
    fc_xs: &[f64],
    fc_xa: &[f64],
    w: &LossWeights,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let n = fc_x.len();
    if n < 2 {
        return Err(Error::InvalidSpec { field: "classes", reason: format!("need at least 2 classes, got {n}") });
    }
    if fc_xs.len() != n || fc_xa.len() != n {
        return Err(Error::shape(format!("{n} classes"), format!("{} and {}", fc_xs.len(), fc_xa.len())));
    }
    if !(w.kappa > 0.0) {
        return Err(Error::InvalidSpec { field: "kappa", reason: "margin must be > 0".into() });
    }
    let l = argmax(fc_x);
    let mut ds = vec![0.0; n];
    let mut da = vec![0.0; n];

    let js = argmax_excluding(fc_xs, l);
    let margin_s = fc_xs[js] - fc_xs[l];
    let term_s = margin_s.max(-w.kappa);
    if margin_s > -w.kappa {
        ds[js] += w.beta1;
        ds[l] -= w.beta1;
    }

    let ja = argmax_excluding(fc_xa, l);
    let margin_a = fc_xa[l] - fc_xa[ja];
    let term_a = margin_a.max(-w.kappa);
    if margin_a > -w.kappa {
        da[l] += w.beta2;
        da[ja] -= w.beta2;
    }
    Ok((w.beta1 * term_s + w.beta2 * term_a, ds, da))
}

/// Classification term for either classifier kind, with gradients w.r.t.
/// the classifier outputs on xs and xa.
pub fn classification_grad(fc_x: &[f64], fc_xs: &[f64], fc_xa: &[f64], w: &LossWeights) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if fc_x.len() == 1 {
        let (v, gs, ga) = classification_binary_grad(fc_x[0], fc_xs[0], fc_xa[0], w)?;
        Ok((v, vec![gs], vec![ga]))
    } else {
        classification_multiclass_grad(fc_x, fc_xs, fc_xa, w)
    }
}

/// γ · Σ_k ‖w_s^k − w_a^k‖₂ over the non-shared tensor pairs. A `Mean`
/// reduction divides γ by the number of output elements.
pub fn generator_weight_loss(pair: &GeneratorPair, w: &LossWeights) -> Result<f64> {
    let w = &w.for_elements(pair.arch().elements());
    let t = pair.params().tensors();
    let mut total = 0.0;
    for (s, a) in pair.non_shared_pairs() {
        if t[s].shape != t[a].shape {
            return Err(Error::shape(format!("{} {:?}", t[s].name, t[s].shape), format!("{} {:?}", t[a].name, t[a].shape)));
        }
        total += l2(&t[s].data, &t[a].data);
    }
    Ok(w.gamma * total)
}

pub fn generator_weight_loss_grad(pair: &GeneratorPair, w: &LossWeights, grads: &mut ParamGrads) -> Result<f64> {
    let value = generator_weight_loss(pair, w)?;
    let w = &w.for_elements(pair.arch().elements());
    let t = pair.params().tensors();
    for (s, a) in pair.non_shared_pairs() {
        let (gs, ga) = crate::nn::classifier::two_mut(grads, s, a);
        add_l2_grad(&t[s].data, &t[a].data, w.gamma, Some(gs), Some(ga));
    }
    Ok(value)
}

/// λ · Σ_channels Σ_pixels ‖∇(xs − xa)‖₂ with forward differences that are
/// zero on the last row/column.
pub fn tv_regularization(xs: &Image, xa: &Image, w: &LossWeights) -> Result<f64> {
    xs.ensure_same_shape(xa)?;
    Ok(tv_grad(xs, xa, w.for_elements(xs.data().len()).lambda, false).0)
}

/// Returns λ·TV(xs − xa) and, when requested, its gradient w.r.t. the
/// difference (so ∂/∂xs = g and ∂/∂xa = −g).
pub fn tv_grad(xs: &Image, xa: &Image, lambda: f64, want_grad: bool) -> (f64, Option<Tensor>) {
    let diff = xs.zip_map(xa, |a, b| a - b);
    let (h, w) = (diff.height(), diff.width());
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Tensor::zeros(diff.shape()));
    for c in 0..diff.channels() {
        let d = diff.channel(c);
        for r in 0..h {
            for col in 0..w {
                let i = r * w + col;
                let gr = if r + 1 < h { d[i + w] - d[i] } else { 0.0 };
                let gc = if col + 1 < w { d[i + 1] - d[i] } else { 0.0 };
                let n = (gr * gr + gc * gc).sqrt();
                total += n;
                if let (Some(g), true) = (grad.as_mut(), n > 0.0) {
                    let g = g.channel_mut(c);
                    let (ur, uc) = (lambda * gr / n, lambda * gc / n);
                    if r + 1 < h {
                        g[i + w] += ur;
                    }
                    if col + 1 < w {
                        g[i + 1] += uc;
                    }
                    g[i] -= ur + uc;
                }
            }
        }
    }
    (lambda * total, grad)
}

/// Per-sample value and parameter gradient of the expectation terms
/// (L_d + L_fc + L_reg); `l_sa` is left at zero.
pub fn sample_loss_and_grads(
    x: &Image,
    pair: &GeneratorPair,
    classifier: &ClassifierNet,
    w: &LossWeights,
) -> Result<(LossBreakdown, ParamGrads)> {
    let w = &w.for_elements(x.data().len());
    let (xs, xa, cache) = pair.forward_train(x)?;
    let fc_x = classifier.forward(x)?;
    let (fc_s, cache_s) = classifier.forward_cached(&xs)?;
    let (fc_a, cache_a) = classifier.forward_cached(&xa)?;

    let (l_d, mut dxs, mut dxa) = similarity_loss_grad(x, &xs, &xa, w);
    let (l_fc, d_fs, d_fa) = classification_grad(&fc_x, &fc_s, &fc_a, w)?;
    if fc_x.len() == 1 {
        let (d_ls, d_la) = (w.beta1 * bce_logit_grad(fc_x[0], fc_s[0]), w.beta2 * bce_logit_grad(1.0 - fc_x[0], fc_a[0]));
        if d_ls != 0.0 {
            dxs.add_assign(&classifier.backward_logits(&cache_s, &[d_ls], false).1);
        }
        if d_la != 0.0 {
            dxa.add_assign(&classifier.backward_logits(&cache_a, &[d_la], false).1);
        }
    } else {
        if d_fs.iter().any(|&g| g != 0.0) {
            dxs.add_assign(&classifier.backward(&cache_s, &d_fs, false).1);
        }
        if d_fa.iter().any(|&g| g != 0.0) {
            dxa.add_assign(&classifier.backward(&cache_a, &d_fa, false).1);
        }
    }
    let (l_reg, d_diff) = tv_grad(&xs, &xa, w.lambda, w.lambda != 0.0);
    if let Some(g) = d_diff {
        dxs.add_assign(&g);
        for (a, b) in dxa.data_mut().iter_mut().zip(g.data()) {
            *a -= b;
        }
    }
    let (grads, _) = pair.backward(&cache, &dxs, &dxa, false);
    Ok((LossBreakdown::new(l_d, l_fc, l_reg, 0.0), grads))
}

/// Full objective on one input: one generator forward, then every term.
pub fn total_loss(x: &Image, pair: &GeneratorPair, classifier: &ClassifierNet, w: &LossWeights) -> Result<LossBreakdown> {
    let (xs, xa, _) = pair.forward_train(x)?;
    let fc_x = classifier.forward(x)?;
    let fc_s = classifier.forward(&xs)?;
    let fc_a = classifier.forward(&xa)?;
    let l_d = similarity_loss(x, &xs, &xa, w)?;
    let l_fc = if fc_x.len() == 1 {
        classification_loss_binary(fc_x[0], fc_s[0], fc_a[0], w)?
    } else {
        classification_loss_multiclass(&fc_x, &fc_s, &fc_a, w)?
    };
    let l_reg = tv_regularization(&xs, &xa, w)?;
    let l_sa = generator_weight_loss(pair, w)?;
    Ok(LossBreakdown::new(l_d, l_fc, l_reg, l_sa))
}

/// α2‖x − xa‖₂ + β2·BCE(1 − fc(x), fc(xa)) + λ·TV(x − xa) from already
/// computed outputs, with gradients w.r.t. xa and fc(xa).
pub fn naive_terms_grad(
    x: &Image,
    xa: &Image,
    fc_x: &[f64],
    fc_xa: &[f64],
    w: &LossWeights,
) -> Result<(LossBreakdown, Tensor, Vec<f64>)> {
    check_shapes(x, &[xa])?;
    let w = &w.for_elements(x.data().len());
    let mut dxa = Tensor::zeros(xa.shape());
    add_l2_grad(xa.data(), x.data(), w.alpha2, Some(dxa.data_mut()), None);
    let adv_only = LossWeights { beta1: 0.0, ..*w };
    let (l_fc, _, d_fa) = classification_grad(fc_x, fc_x, fc_xa, &adv_only)?;
    let (l_reg, d_diff) = tv_grad(x, xa, w.lambda, w.lambda != 0.0);
    if let Some(g) = d_diff {
        for (a, b) in dxa.data_mut().iter_mut().zip(g.data()) {
            *a -= b;
        }
    }
    Ok((LossBreakdown::new(w.alpha2 * l2(x.data(), xa.data()), l_fc, l_reg, 0.0), dxa, d_fa))
}

/// The naive baseline objective on one input.
pub fn naive_adversarial_loss(x: &Image, g_a: &AdversarialGenerator, classifier: &ClassifierNet, w: &LossWeights) -> Result<f64> {
    let (xa, _) = g_a.forward_train(x)?;
    naive_adversarial_loss_of(x, &xa, classifier, w)
}

/// The naive objective for an arbitrary adversarial image `xa`.
pub fn naive_adversarial_loss_of(x: &Image, xa: &Image, classifier: &ClassifierNet, w: &LossWeights) -> Result<f64> {
    let fc_x = classifier.forward(x)?;
    let fc_a = classifier.forward(xa)?;
    Ok(naive_terms_grad(x, xa, &fc_x, &fc_a, w)?.0.total)
}

pub fn naive_sample_loss_and_grads(
    x: &Image,
    g_a: &AdversarialGenerator,
    classifier: &ClassifierNet,
    w: &LossWeights,
) -> Result<(LossBreakdown, ParamGrads)> {
    let (xa, cache) = g_a.forward_train(x)?;
    let fc_x = classifier.forward(x)?;
    let (fc_a, cache_a) = classifier.forward_cached(&xa)?;
    let (value, mut dxa, d_fa) = naive_terms_grad(x, &xa, &fc_x, &fc_a, w)?;
    if fc_x.len() == 1 {
        let d_la = w.beta2 * bce_logit_grad(1.0 - fc_x[0], fc_a[0]);
        if d_la != 0.0 {
            dxa.add_assign(&classifier.backward_logits(&cache_a, &[d_la], false).1);
        }
    } else if d_fa.iter().any(|&g| g != 0.0) {
        dxa.add_assign(&classifier.backward(&cache_a, &d_fa, false).1);
    }
    let (grads, _) = g_a.backward(&cache, &dxa, false);
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn grid(vals: &[f64]) -> Tensor {
        Tensor::from_vec(Shape::new(1, 2, 2), vals.to_vec()).unwrap()
    }

    fn weights(a: [f64; 4]) -> LossWeights {
        LossWeights { alpha1: a[0], alpha2: a[1], alpha3: a[2], alpha4: a[3], ..LossWeights::zero() }
    }

    #[test]
    fn similarity_examples() {
        let zero = grid(&[0.0; 4]);
        let half = grid(&[0.5; 4]);
        assert_eq!(similarity_loss(&half, &half, &half, &LossWeights::default()).unwrap(), 0.0);
        assert!((similarity_loss(&zero, &zero, &half, &weights([1.0, 1.0, 1.0, 0.0])).unwrap() - 2.0).abs() < 1e-12);
        assert!((similarity_loss(&zero, &zero, &half, &weights([3.0, 1.0, 1.0, 0.2])).unwrap() - 2.4).abs() < 1e-12);
    }

    #[test]
    fn similarity_shape_mismatch() {
        let a = grid(&[0.0; 4]);
        let b = Tensor::zeros(Shape::new(1, 3, 3));
        assert!(similarity_loss(&a, &a, &b, &LossWeights::default()).is_err());
    }

    #[test]
    fn binary_classification_examples() {
        let both = LossWeights { beta1: 1.0, beta2: 1.0, ..LossWeights::zero() };
        assert!(classification_loss_binary(1.0, 1.0, 0.0, &both).unwrap().abs() < 1e-6);
        let first = LossWeights { beta1: 1.0, ..LossWeights::zero() };
        assert!((classification_loss_binary(0.5, 0.5, 0.3, &first).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((classification_loss_binary(1.0, 1e-7, 0.3, &first).unwrap() - 16.11809565).abs() < 1e-6);
        assert!(classification_loss_binary(1.2, 0.5, 0.5, &first).is_err());
    }

    #[test]
    fn multiclass_examples() {
        let w = LossWeights { beta1: 1.0, beta2: 1.0, kappa: 0.1, ..LossWeights::zero() };
        let v = classification_loss_multiclass(&[0.8, 0.2], &[0.9, 0.1], &[0.1, 0.9], &w).unwrap();
        assert!((v + 0.2).abs() < 1e-12);
        let v = classification_loss_multiclass(&[0.8, 0.2], &[1.0, 0.0], &[1.0, 0.0], &w).unwrap();
        assert!((v - 0.9).abs() < 1e-12);
        let off = LossWeights { kappa: 0.1, ..LossWeights::zero() };
        assert_eq!(classification_loss_multiclass(&[0.3, 0.7], &[0.2, 0.8], &[0.9, 0.1], &off).unwrap(), 0.0);
        assert!(classification_loss_multiclass(&[1.0], &[1.0], &[1.0], &w).is_err());
    }

    #[test]
    fn tv_examples() {
        let lam = LossWeights { lambda: 1.0, ..LossWeights::zero() };
        let xs = grid(&[0.0, 1.0, 0.0, 1.0]);
        let xa = grid(&[0.0; 4]);
        assert!((tv_regularization(&xs, &xa, &lam).unwrap() - 2.0).abs() < 1e-12);
        let c = grid(&[0.3; 4]);
        assert_eq!(tv_regularization(&c, &xa, &lam).unwrap(), 0.0);
        assert_eq!(tv_regularization(&xs, &xa, &LossWeights::zero()).unwrap(), 0.0);
    }

    #[test]
    fn weight_loss_examples() {
        use crate::nn::{GenMode, GeneratorArch};
        let arch = GeneratorArch { channels: 1, height: 8, width: 8, base_width: 2 };
        let mut pair = GeneratorPair::init(GenMode::SingleAE(2), arch, 1).unwrap();
        let w = LossWeights { gamma: 0.2, ..LossWeights::zero() };
        assert_eq!(generator_weight_loss(&pair, &w).unwrap(), 0.0);
        pair.params_mut().get_mut("adv.head1.bias")[0] += 1.0;
        assert!((generator_weight_loss(&pair, &w).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn weight_loss_sums_per_layer_norms() {
        use crate::nn::{GenMode, GeneratorArch};
        let arch = GeneratorArch { channels: 1, height: 8, width: 8, base_width: 2 };
        let mut pair = GeneratorPair::init(GenMode::SingleAE(2), arch, 1).unwrap();
        // distance 3 in one layer, 4 in another (3-4 split across two scalars = 5 would be the pooled norm)
        pair.params_mut().get_mut("adv.head0.bias")[0] += 3.0;
        pair.params_mut().get_mut("adv.head1.bias")[0] += 4.0;
        let w = LossWeights { gamma: 1.0, ..LossWeights::zero() };
        assert!((generator_weight_loss(&pair, &w).unwrap() - 7.0).abs() < 1e-12);
        let mean = LossWeights { reduction: Reduction::Mean, ..w };
        assert!((generator_weight_loss(&pair, &mean).unwrap() - 7.0 / 64.0).abs() < 1e-12);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { kappa: 0.0, ..LossWeights::default() }.validate().is_err());
        let err = LossWeights { gamma: -1.0, ..LossWeights::default() }.validate().unwrap_err();
        assert!(err.to_string().contains("gamma"));
    }
}
