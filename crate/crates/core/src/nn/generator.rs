//! Similar/adversarial generator pairs and the stand-alone adversarial
//! generator used by the naive baseline.
//!
//! Parameter names carry the branch: tensors under `sim.` belong only to the
//! similar generator, tensors under `adv.` only to the adversarial one, and
//! `trunk.` tensors are shared (Single AE). Matching `sim.X`/`adv.X` names are
//! the non-shared layer pairs compared by the weight-proximity loss.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamGrads, ParamSet};
use super::unet::{self, HeadCache, TrunkCache};
use super::DifferentiableEval;
use crate::error::{Error, Result};
use crate::tensor::{Image, Shape, Tensor};

pub const MAX_HEAD_LAYERS: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorArch {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub base_width: usize,
}

impl Default for GeneratorArch {
    fn default() -> Self {
        Self { channels: 1, height: 32, width: 32, base_width: 8 }
    }
}

impl GeneratorArch {
    /// Elements of one output image.
    pub fn elements(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn for_input(shape: Shape) -> Self {
        Self { channels: shape.channels, height: shape.height, width: shape.width, ..Self::default() }
    }

    pub fn input_shape(&self) -> Shape {
        Shape::new(self.channels, self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::InvalidSpec { field: "generator.channels", reason: "must be ≥ 1".into() });
        }
        if self.height == 0 || self.width == 0 || self.height % 4 != 0 || self.width % 4 != 0 {
            return Err(Error::InvalidSpec {
                field: "generator.input",
                reason: format!("height and width must be positive multiples of 4, got {}x{}", self.height, self.width),
            });
        }
        if self.base_width == 0 {
            return Err(Error::InvalidSpec { field: "generator.base_width", reason: "must be ≥ 1".into() });
        }
        Ok(())
    }
}

/// Generator pair layout: two full encoder-decoders, or one shared trunk
/// with two heads of `i` conv layers each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GenMode {
    DuoAE,
    SingleAE(usize),
}

impl fmt::Display for GenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GenMode::DuoAE => f.write_str("duo-ae"),
            GenMode::SingleAE(i) => write!(f, "single-ae{i}"),
        }
    }
}

impl FromStr for GenMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mode = match s {
            "duo-ae" => GenMode::DuoAE,
            _ => match s.strip_prefix("single-ae").and_then(|i| i.parse().ok()) {
                Some(i) => GenMode::SingleAE(i),
                None => return Err(Error::InvalidSpec { field: "mode", reason: format!("unknown generator mode `{s}`") }),
            },
        };
        mode.validate()?;
        Ok(mode)
    }
}

impl TryFrom<String> for GenMode {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GenMode> for String {
    fn from(m: GenMode) -> String {
        m.to_string()
    }
}

impl GenMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GenMode::SingleAE(i) if !(1..=MAX_HEAD_LAYERS).contains(&i) => Err(Error::InvalidSpec {
                field: "mode",
                reason: format!("Single AE head depth must be 1..={MAX_HEAD_LAYERS}, got {i}"),
            }),
            _ => Ok(()),
        }
    }

    /// (trunk prefix, head prefix, head layers) for the similar and adversarial branch.
    fn branches(&self) -> [(&'static str, &'static str, usize); 2] {
        match *self {
            GenMode::DuoAE => [("sim.", "sim.", 1), ("adv.", "adv.", 1)],
            GenMode::SingleAE(i) => [("trunk.", "sim.", i), ("trunk.", "adv.", i)],
        }
    }

    fn shared_trunk(&self) -> bool {
        matches!(self, GenMode::SingleAE(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorPair {
    mode: GenMode,
    arch: GeneratorArch,
    params: ParamSet,
}

pub struct PairCache {
    trunks: Vec<TrunkCache>,
    heads: [HeadCache; 2],
}

impl GeneratorPair {
    /// Both branches start from identical weights, so the initial explanation
    /// map and weight-proximity term are exactly zero.
    pub fn init(mode: GenMode, arch: GeneratorArch, seed: u64) -> Result<Self> {
        mode.validate()?;
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        match mode {
            GenMode::SingleAE(i) => {
                unet::init_trunk(&mut params, &mut rng, "trunk.", &arch);
                unet::init_head(&mut params, &mut rng, "sim.", i, &arch);
            }
            GenMode::DuoAE => {
                unet::init_trunk(&mut params, &mut rng, "sim.", &arch);
                unet::init_head(&mut params, &mut rng, "sim.", 1, &arch);
            }
        }
        let sim: Vec<_> = params.tensors().iter().filter(|t| t.name.starts_with("sim.")).cloned().collect();
        for t in sim {
            params.push(format!("adv.{}", &t.name[4..]), t.shape, t.data);
        }
        Ok(Self { mode, arch, params })
    }

    pub fn from_parts(mode: GenMode, arch: GeneratorArch, params: ParamSet) -> Result<Self> {
        let expected = Self::init(mode, arch.clone(), 0)?.params.layout();
        if params.layout() != expected {
            return Err(Error::ArchMismatch {
                expected: format!("{expected:?}"),
                found: format!("{:?}", params.layout()),
            });
        }
        Ok(Self { mode, arch, params })
    }

    pub fn mode(&self) -> GenMode {
        self.mode
    }

    pub fn arch(&self) -> &GeneratorArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Index pairs `(sim, adv)` of every non-shared parameter tensor.
    pub fn non_shared_pairs(&self) -> Vec<(usize, usize)> {
        self.params
            .tensors()
            .iter()
            .enumerate()
            .filter_map(|(i, t)| {
                let suffix = t.name.strip_prefix("sim.")?;
                Some((i, self.params.index_of(&format!("adv.{suffix}"))))
            })
            .collect()
    }

    /// Shape lists of the similar and adversarial non-shared tensors.
    pub fn branch_shapes(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let t = self.params.tensors();
        self.non_shared_pairs().into_iter().map(|(s, a)| (t[s].shape.clone(), t[a].shape.clone())).unzip()
    }

    /// The same pair with the similar and adversarial branches exchanged.
    pub fn swapped(&self) -> Self {
        let mut out = self.clone();
        for (s, a) in self.non_shared_pairs() {
            let (ts, ta) = (&self.params.tensors()[s], &self.params.tensors()[a]);
            out.params.tensors_mut()[s].data.clone_from(&ta.data);
            out.params.tensors_mut()[a].data.clone_from(&ts.data);
        }
        out
    }

    /// Training-time forward: sigmoid outputs, no clamp.
    pub fn forward_train(&self, x: &Tensor) -> Result<(Image, Image, PairCache)> {
        x.ensure_shape(self.arch.input_shape())?;
        let [bs, ba] = self.mode.branches();
        let p = &self.params;
        if self.mode.shared_trunk() {
            let (feat, tc) = unet::trunk_forward(p, bs.0, &self.arch, x);
            let (xs, hs) = unet::head_forward(p, bs.1, bs.2, &self.arch, &feat);
            let (xa, ha) = unet::head_forward(p, ba.1, ba.2, &self.arch, &feat);
            Ok((xs, xa, PairCache { trunks: vec![tc], heads: [hs, ha] }))
        } else {
            let (fs, ts) = unet::trunk_forward(p, bs.0, &self.arch, x);
            let (xs, hs) = unet::head_forward(p, bs.1, bs.2, &self.arch, &fs);
            let (fa, ta) = unet::trunk_forward(p, ba.0, &self.arch, x);
            let (xa, ha) = unet::head_forward(p, ba.1, ba.2, &self.arch, &fa);
            Ok((xs, xa, PairCache { trunks: vec![ts, ta], heads: [hs, ha] }))
        }
    }

    /// Inference forward `(x_s, x_a)`, hard-clamped to [0, 1].
    pub fn forward(&self, x: &Image) -> Result<(Image, Image)> {
        let (xs, xa, _) = self.forward_train(x)?;
        Ok((xs.clamp01(), xa.clamp01()))
    }

    pub fn backward(&self, cache: &PairCache, dxs: &Tensor, dxa: &Tensor, want_dx: bool) -> (ParamGrads, Option<Tensor>) {
        let [bs, ba] = self.mode.branches();
        let p = &self.params;
        let mut grads = p.zero_grads();
        let dfs = unet::head_backward(p, bs.1, bs.2, &cache.heads[0], dxs, &mut grads);
        let dfa = unet::head_backward(p, ba.1, ba.2, &cache.heads[1], dxa, &mut grads);
        let dx = if self.mode.shared_trunk() {
            let mut df = dfs;
            df.add_assign(&dfa);
            unet::trunk_backward(p, bs.0, &self.arch, &cache.trunks[0], &df, &mut grads, want_dx)
        } else {
            let dxs_in = unet::trunk_backward(p, bs.0, &self.arch, &cache.trunks[0], &dfs, &mut grads, want_dx);
            let dxa_in = unet::trunk_backward(p, ba.0, &self.arch, &cache.trunks[1], &dfa, &mut grads, want_dx);
            dxs_in.zip(dxa_in).map(|(mut a, b)| {
                a.add_assign(&b);
                a
            })
        };
        (grads, dx)
    }
}

impl DifferentiableEval for GeneratorPair {
    type Output = (Image, Image);
    type Upstream = (Tensor, Tensor);

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Unclamped outputs, i.e. the function that training differentiates.
    fn eval(&self, x: &Tensor) -> Result<(Image, Image)> {
        let (xs, xa, _) = self.forward_train(x)?;
        Ok((xs, xa))
    }

    fn gradient(&self, x: &Tensor, upstream: &(Tensor, Tensor)) -> Result<(ParamGrads, Tensor)> {
        let (_, _, cache) = self.forward_train(x)?;
        let (g, dx) = self.backward(&cache, &upstream.0, &upstream.1, true);
        Ok((g, dx.expect("requested")))
    }
}

/// A single encoder-decoder trained alone to fool the classifier (the naive
/// baseline's adversarial generator).
#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialGenerator {
    arch: GeneratorArch,
    params: ParamSet,
}

pub struct AdversaryCache {
    trunk: TrunkCache,
    head: HeadCache,
}

impl AdversarialGenerator {
    pub fn init(arch: GeneratorArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        unet::init_trunk(&mut params, &mut rng, "adv.", &arch);
        unet::init_head(&mut params, &mut rng, "adv.", 1, &arch);
        Ok(Self { arch, params })
    }

    pub fn from_parts(arch: GeneratorArch, params: ParamSet) -> Result<Self> {
        let expected = Self::init(arch.clone(), 0)?.params.layout();
        if params.layout() != expected {
            return Err(Error::ArchMismatch {
                expected: format!("{expected:?}"),
                found: format!("{:?}", params.layout()),
            });
        }
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &GeneratorArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<(Image, AdversaryCache)> {
        x.ensure_shape(self.arch.input_shape())?;
        let (feat, trunk) = unet::trunk_forward(&self.params, "adv.", &self.arch, x);
        let (xa, head) = unet::head_forward(&self.params, "adv.", 1, &self.arch, &feat);
        Ok((xa, AdversaryCache { trunk, head }))
    }

    pub fn forward(&self, x: &Image) -> Result<Image> {
        Ok(self.forward_train(x)?.0.clamp01())
    }

    pub fn backward(&self, cache: &AdversaryCache, dxa: &Tensor, want_dx: bool) -> (ParamGrads, Option<Tensor>) {
        let mut grads = self.params.zero_grads();
        let df = unet::head_backward(&self.params, "adv.", 1, &cache.head, dxa, &mut grads);
        let dx = unet::trunk_backward(&self.params, "adv.", &self.arch, &cache.trunk, &df, &mut grads, want_dx);
        (grads, dx)
    }
}

impl DifferentiableEval for AdversarialGenerator {
    type Output = Image;
    type Upstream = Tensor;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn eval(&self, x: &Tensor) -> Result<Image> {
        Ok(self.forward_train(x)?.0)
    }

    fn gradient(&self, x: &Tensor, upstream: &Tensor) -> Result<(ParamGrads, Tensor)> {
        let (_, cache) = self.forward_train(x)?;
        let (g, dx) = self.backward(&cache, upstream, true);
        Ok((g, dx.expect("requested")))
    }
}
