//! Explanation maps: dual-generator, naive, gradient saliency, and the
//! augmentation-averaged variant built on invertible geometric warps.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::nn::{AdversarialGenerator, ClassifierNet, GeneratorPair};
use crate::tensor::{Image, Shape, Tensor};

/// The three base explainers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dual,
    Naive,
    Gradient,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Dual, Method::Naive, Method::Gradient];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Dual => "dual",
            Method::Naive => "naive",
            Method::Gradient => "gradient",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(Method::Dual),
            "naive" => Ok(Method::Naive),
            "gradient" => Ok(Method::Gradient),
            _ => Err(Error::InvalidSpec { field: "explainer", reason: format!("unknown explainer `{s}`") }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Dual,
    Naive,
    Gradient,
    Augmented { base: Method, n: usize },
}

impl From<Method> for Provenance {
    fn from(m: Method) -> Self {
        match m {
            Method::Dual => Provenance::Dual,
            Method::Naive => Provenance::Naive,
            Method::Gradient => Provenance::Gradient,
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Dual => f.write_str("dual"),
            Provenance::Naive => f.write_str("naive"),
            Provenance::Gradient => f.write_str("gradient"),
            Provenance::Augmented { base, n } => write!(f, "augmented({base}, {n})"),
        }
    }
}

/// Non-negative single-channel H×W map.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplanationMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    provenance: Provenance,
}

impl ExplanationMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(format!("{} values", height * width), values.len()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::NonFinite(format!("explanation value {v}")));
        }
        Ok(Self { height, width, values, provenance })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.width + c]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// The map as a one-channel image.
    pub fn to_image(&self) -> Image {
        Tensor::from_vec(Shape::new(1, self.height, self.width), self.values.clone()).expect("sizes agree")
    }

    fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance = p;
        self
    }
}

/// Channel mean of |a − b|.
fn abs_diff_map(a: &Image, b: &Image, provenance: Provenance) -> Result<ExplanationMap> {
    a.ensure_same_shape(b)?;
    let (c, plane) = (a.channels(), a.shape().plane());
    let mut values = vec![0.0; plane];
    for ch in 0..c {
        for ((v, x), y) in values.iter_mut().zip(a.channel(ch)).zip(b.channel(ch)) {
            *v += (x - y).abs();
        }
    }
    if c > 1 {
        values.iter_mut().for_each(|v| *v /= c as f64);
    }
    ExplanationMap::new(a.height(), a.width(), values, provenance)
}

/// |x_s − x_a| from one pair forward.
pub fn explain(pair: &GeneratorPair, x: &Image) -> Result<ExplanationMap> {
    let (xs, xa) = pair.forward(x)?;
    abs_diff_map(&xs, &xa, Provenance::Dual)
}

/// Anything that maps an image to its adversarial counterpart.
pub trait Adversary: Sync {
    fn adversarial(&self, x: &Image) -> Result<Image>;
}

impl Adversary for AdversarialGenerator {
    fn adversarial(&self, x: &Image) -> Result<Image> {
        self.forward(x)
    }
}

/// The adversarial branch of a pair.
impl Adversary for GeneratorPair {
    fn adversarial(&self, x: &Image) -> Result<Image> {
        Ok(self.forward(x)?.1)
    }
}

impl<F: Fn(&Image) -> Image + Sync> Adversary for F {
    fn adversarial(&self, x: &Image) -> Result<Image> {
        Ok(self(x))
    }
}

/// |x − g_a(x)|.
pub fn explain_naive(g_a: &(impl Adversary + ?Sized), x: &Image) -> Result<ExplanationMap> {
    let xa = g_a.adversarial(x)?;
    x.ensure_same_shape(&xa)?;
    abs_diff_map(x, &xa, Provenance::Naive)
}

/// Channel mean of |∂f_c/∂x| for the predicted output.
pub fn gradient_saliency(classifier: &ClassifierNet, x: &Image) -> Result<ExplanationMap> {
    let out = classifier.forward(x)?;
    let index = argmax(&out);
    let g = classifier.input_gradient(x, index)?;
    if !g.is_finite() {
        return Err(Error::NonFinite("input gradient".into()));
    }
    abs_diff_map(&g, &Tensor::zeros(g.shape()), Provenance::Gradient)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub trait Explainer: Sync {
    fn method(&self) -> Method;
    fn explain(&self, x: &Image) -> Result<ExplanationMap>;
}

pub struct DualExplainer<'a>(pub &'a GeneratorPair);

pub struct NaiveExplainer<'a, A: Adversary + ?Sized>(pub &'a A);

pub struct GradientExplainer<'a>(pub &'a ClassifierNet);

impl Explainer for DualExplainer<'_> {
    fn method(&self) -> Method {
        Method::Dual
    }

    fn explain(&self, x: &Image) -> Result<ExplanationMap> {
        explain(self.0, x)
    }
}

impl<A: Adversary + ?Sized> Explainer for NaiveExplainer<'_, A> {
    fn method(&self) -> Method {
        Method::Naive
    }

    fn explain(&self, x: &Image) -> Result<ExplanationMap> {
        explain_naive(self.0, x)
    }
}

impl Explainer for GradientExplainer<'_> {
    fn method(&self) -> Method {
        Method::Gradient
    }

    fn explain(&self, x: &Image) -> Result<ExplanationMap> {
        gradient_saliency(self.0, x)
    }
}

/// Ranges the random geometric transforms are drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSpec {
    /// Degrees.
    pub rotation_range: (f64, f64),
    /// Pixels, applied to each axis independently.
    pub shift_range: (f64, f64),
    pub zoom_range: (f64, f64),
    pub hflip: bool,
    pub vflip: bool,
    /// Augmented copies averaged at explanation time.
    pub n: usize,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self { rotation_range: (-5.0, 5.0), shift_range: (-10.0, 10.0), zoom_range: (0.9, 1.0), hflip: true, vflip: true, n: 10 }
    }
}

impl AugmentationSpec {
    /// Degenerate ranges: every sampled transform is the identity.
    pub fn identity(n: usize) -> Self {
        Self { rotation_range: (0.0, 0.0), shift_range: (0.0, 0.0), zoom_range: (1.0, 1.0), hflip: false, vflip: false, n }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [("rotation_range", self.rotation_range), ("shift_range", self.shift_range), ("zoom_range", self.zoom_range)];
        for (field, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidSpec { field, reason: format!("empty range [{lo}, {hi}]") });
            }
        }
        if self.zoom_range.0 <= 0.0 {
            return Err(Error::InvalidSpec { field: "zoom_range", reason: "zoom must be > 0".into() });
        }
        Ok(())
    }
}

/// Flips, then rotation, then zoom about the image center, then shift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeomTransform {
    pub rotation: f64,
    pub shift_rows: f64,
    pub shift_cols: f64,
    pub zoom: f64,
    pub hflip: bool,
    pub vflip: bool,
}

impl GeomTransform {
    pub const IDENTITY: GeomTransform =
        GeomTransform { rotation: 0.0, shift_rows: 0.0, shift_cols: 0.0, zoom: 1.0, hflip: false, vflip: false };

    /// Destination coordinate of source point `(r, c)` in an `h × w` frame.
    pub fn forward_point(&self, r: f64, c: f64, h: usize, w: usize) -> (f64, f64) {
        let (cr, cc) = center(h, w);
        let (mut vr, mut vc) = (r - cr, c - cc);
        if self.vflip {
            vr = -vr;
        }
        if self.hflip {
            vc = -vc;
        }
        let (s, co) = self.rotation.to_radians().sin_cos();
        let (rr, rc) = (co * vr - s * vc, s * vr + co * vc);
        (cr + rr * self.zoom + self.shift_rows, cc + rc * self.zoom + self.shift_cols)
    }

    /// Source coordinate that lands on destination point `(r, c)`.
    pub fn inverse_point(&self, r: f64, c: f64, h: usize, w: usize) -> (f64, f64) {
        let (cr, cc) = center(h, w);
        let (vr, vc) = ((r - cr - self.shift_rows) / self.zoom, (c - cc - self.shift_cols) / self.zoom);
        let (s, co) = self.rotation.to_radians().sin_cos();
        let (mut ur, mut uc) = (co * vr + s * vc, -s * vr + co * vc);
        if self.vflip {
            ur = -ur;
        }
        if self.hflip {
            uc = -uc;
        }
        (cr + ur, cc + uc)
    }
}

fn center(h: usize, w: usize) -> (f64, f64) {
    ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0)
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    let u: f64 = rng.gen();
    lo + (hi - lo) * u
}

/// Each field uniform over its range; flips are fair coins when allowed.
pub fn sample_transform(spec: &AugmentationSpec, rng: &mut impl Rng) -> GeomTransform {
    GeomTransform {
        rotation: uniform(rng, spec.rotation_range),
        shift_rows: uniform(rng, spec.shift_range),
        shift_cols: uniform(rng, spec.shift_range),
        zoom: uniform(rng, spec.zoom_range),
        hflip: rng.gen_bool(0.5) && spec.hflip,
        vflip: rng.gen_bool(0.5) && spec.vflip,
    }
}

const FRAME_TOL: f64 = 1e-9;

/// Bilinear sample of an `h × w` plane; `None` outside the frame.
fn bilinear(plane: &[f64], h: usize, w: usize, r: f64, c: f64) -> Option<f64> {
    let (hmax, wmax) = ((h - 1) as f64, (w - 1) as f64);
    if !(r >= -FRAME_TOL && r <= hmax + FRAME_TOL && c >= -FRAME_TOL && c <= wmax + FRAME_TOL) {
        return None;
    }
    let (r, c) = (r.clamp(0.0, hmax), c.clamp(0.0, wmax));
    let (r0, c0) = (r.floor() as usize, c.floor() as usize);
    let (fr, fc) = (r - r0 as f64, c - c0 as f64);
    let (r1, c1) = ((r0 + 1).min(h - 1), (c0 + 1).min(w - 1));
    let top = (1.0 - fc) * plane[r0 * w + c0] + fc * plane[r0 * w + c1];
    let bottom = (1.0 - fc) * plane[r1 * w + c0] + fc * plane[r1 * w + c1];
    Some((1.0 - fr) * top + fr * bottom)
}

/// Warps every channel; destination pixels whose source lies outside the
/// frame are 0.
pub fn apply_transform(t: &GeomTransform, image: &Image) -> Image {
    let (h, w) = (image.height(), image.width());
    let mut out = Tensor::zeros(image.shape());
    for r in 0..h {
        for c in 0..w {
            let (sr, sc) = t.inverse_point(r as f64, c as f64, h, w);
            for ch in 0..image.channels() {
                if let Some(v) = bilinear(image.channel(ch), h, w, sr, sc) {
                    out.set(ch, r, c, v);
                }
            }
        }
    }
    out
}

/// Pulls a map computed on the warped image back to the original frame.
/// Pixels whose image under `t` leaves the frame are 0 and invalid.
pub fn invert_transform(t: &GeomTransform, map: &ExplanationMap) -> (ExplanationMap, BinaryMask) {
    let (h, w) = (map.height, map.width);
    let mut values = vec![0.0; h * w];
    let mut valid = BinaryMask::new(h, w);
    for r in 0..h {
        for c in 0..w {
            let (dr, dc) = t.forward_point(r as f64, c as f64, h, w);
            if let Some(v) = bilinear(&map.values, h, w, dr, dc) {
                values[r * w + c] = v.max(0.0);
                valid.set(r, c, true);
            }
        }
    }
    (ExplanationMap { height: h, width: w, values, provenance: map.provenance }, valid)
}

/// Per-pixel mean of E(x) and every valid pulled-back E(ψ_i x).
///
/// Transforms come from a ChaCha stream seeded with `seed`; the N maps are
/// folded in draw order with an incremental mean, so N = 0 and identity
/// transforms return E(x) unchanged.
pub fn explain_augmented(mapper: &(impl Explainer + ?Sized), x: &Image, spec: &AugmentationSpec, seed: u64) -> Result<ExplanationMap> {
    spec.validate()?;
    let base = mapper.explain(x)?;
    let provenance = Provenance::Augmented { base: mapper.method(), n: spec.n };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transforms: Vec<GeomTransform> = (0..spec.n).map(|_| sample_transform(spec, &mut rng)).collect();
    let mut mean = base.values.clone();
    let mut count = vec![1u32; mean.len()];
    for t in &transforms {
        let warped = mapper.explain(&apply_transform(t, x))?;
        let (back, valid) = invert_transform(t, &warped);
        for (i, (&v, &ok)) in back.values.iter().zip(valid.bits()).enumerate() {
            if ok {
                count[i] += 1;
                mean[i] += (v - mean[i]) / count[i] as f64;
            }
        }
    }
    Ok(ExplanationMap { values: mean, ..base }.with_provenance(provenance))
}

/// Dispatches to the un-augmented explainer when `spec.n == 0`.
pub fn explain_with(mapper: &(impl Explainer + ?Sized), x: &Image, spec: Option<(&AugmentationSpec, u64)>) -> Result<ExplanationMap> {
    match spec {
        Some((s, seed)) => explain_augmented(mapper, x, s, seed),
        None => mapper.explain(x),
    }
}
