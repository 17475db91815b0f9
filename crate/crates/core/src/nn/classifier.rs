//! Small convolutional classifier standing in for the frozen black box.
//!
//! Stride-2 3×3 conv blocks with ELU, global average pooling, one dense
//! layer, then a sigmoid (one output) or softmax (several outputs).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, ConvCache};
use super::params::{fan_in_uniform, ParamGrads, ParamSet};
use super::DifferentiableEval;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierArch {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub widths: Vec<usize>,
    pub outputs: usize,
}

impl Default for ClassifierArch {
    fn default() -> Self {
        Self { channels: 1, height: 32, width: 32, widths: vec![8, 16, 32], outputs: 1 }
    }
}

impl ClassifierArch {
    pub fn for_input(shape: Shape) -> Self {
        Self { channels: shape.channels, height: shape.height, width: shape.width, ..Self::default() }
    }

    pub fn input_shape(&self) -> Shape {
        Shape::new(self.channels, self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::InvalidSpec { field: "classifier.input", reason: "empty input shape".into() });
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::InvalidSpec { field: "classifier.widths", reason: "need at least one non-zero width".into() });
        }
        if self.outputs == 0 {
            return Err(Error::InvalidSpec { field: "classifier.outputs", reason: "must be ≥ 1".into() });
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let mut cin = self.channels;
        let mut total = 0;
        for &w in &self.widths {
            total += w * cin * 9 + w;
            cin = w;
        }
        total + self.outputs * cin + self.outputs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierNet {
    arch: ClassifierArch,
    params: ParamSet,
}

pub struct ClassifierCache {
    convs: Vec<ConvCache>,
    acts: Vec<Tensor>,
    pooled: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl ClassifierNet {
    pub fn init(arch: ClassifierArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut cin = arch.channels;
        for (i, &w) in arch.widths.iter().enumerate() {
            let fan_in = cin * 9;
            params.push(format!("conv{i}.weight"), vec![w, cin, 3, 3], fan_in_uniform(&mut rng, w * fan_in, fan_in));
            params.push(format!("conv{i}.bias"), vec![w], vec![0.0; w]);
            cin = w;
        }
        params.push("dense.weight", vec![arch.outputs, cin], fan_in_uniform(&mut rng, arch.outputs * cin, cin));
        params.push("dense.bias", vec![arch.outputs], vec![0.0; arch.outputs]);
        Ok(Self { arch, params })
    }

    /// All parameters zero: every output is 0.5 (one output) or uniform.
    pub fn zeroed(arch: ClassifierArch) -> Result<Self> {
        let mut net = Self::init(arch, 0)?;
        for t in net.params.tensors_mut() {
            t.data.fill(0.0);
        }
        Ok(net)
    }

    pub fn from_parts(arch: ClassifierArch, params: ParamSet) -> Result<Self> {
        let expected = Self::init(arch.clone(), 0)?.params.layout();
        if params.layout() != expected {
            return Err(Error::ArchMismatch {
                expected: format!("{expected:?}"),
                found: format!("{:?}", params.layout()),
            });
        }
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &ClassifierArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn forward(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Scalar score of a single-output classifier.
    pub fn score(&self, x: &Tensor) -> Result<f64> {
        if self.arch.outputs != 1 {
            return Err(Error::shape("single-output classifier", format!("{} outputs", self.arch.outputs)));
        }
        Ok(self.forward(x)?[0])
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Vec<f64>, ClassifierCache)> {
        x.ensure_shape(self.arch.input_shape())?;
        let mut convs = Vec::with_capacity(self.arch.widths.len());
        let mut acts: Vec<Tensor> = Vec::with_capacity(self.arch.widths.len());
        for (i, &w) in self.arch.widths.iter().enumerate() {
            let input = acts.last().unwrap_or(x);
            let (z, cache) = ops::conv_forward(
                input,
                self.params.get(&format!("conv{i}.weight")),
                self.params.get(&format!("conv{i}.bias")),
                w,
                2,
            );
            convs.push(cache);
            acts.push(ops::elu(&z));
        }
        let last = acts.last().expect("at least one conv block");
        let plane = last.shape().plane() as f64;
        let pooled: Vec<f64> = (0..last.channels()).map(|c| last.channel(c).iter().sum::<f64>() / plane).collect();
        let dw = self.params.get("dense.weight");
        let db = self.params.get("dense.bias");
        let logits: Vec<f64> = (0..self.arch.outputs)
            .map(|o| db[o] + dw[o * pooled.len()..][..pooled.len()].iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let probs = if self.arch.outputs == 1 { vec![ops::sigmoid(logits[0])] } else { softmax(&logits) };
        Ok((probs.clone(), ClassifierCache { convs, acts, pooled, logits, probs }))
    }

    /// Backpropagates `d_out` (gradient w.r.t. the output probabilities).
    /// Parameter gradients are only materialized when `want_params` is set.
    pub fn backward(&self, cache: &ClassifierCache, d_out: &[f64], want_params: bool) -> (Option<ParamGrads>, Tensor) {
        let d_logits: Vec<f64> = if self.arch.outputs == 1 {
            vec![d_out[0] * ops::sigmoid_grad(cache.logits[0])]
        } else {
            let dot: f64 = cache.probs.iter().zip(d_out).map(|(p, d)| p * d).sum();
            cache.probs.iter().zip(d_out).map(|(p, d)| p * (d - dot)).collect()
        };
        self.backward_logits(cache, &d_logits, want_params)
    }

    /// Like [`ClassifierNet::backward`] but starting from the gradient
    /// w.r.t. the pre-activation logits.
    pub fn backward_logits(&self, cache: &ClassifierCache, d_logits: &[f64], want_params: bool) -> (Option<ParamGrads>, Tensor) {
        let mut grads = self.params.zero_grads();
        let k = cache.pooled.len();
        let dw_idx = self.params.index_of("dense.weight");
        let db_idx = self.params.index_of("dense.bias");
        let dense_w = self.params.get("dense.weight");
        let mut d_pooled = vec![0.0; k];
        for (o, &dl) in d_logits.iter().enumerate() {
            grads[db_idx][o] += dl;
            for j in 0..k {
                grads[dw_idx][o * k + j] += dl * cache.pooled[j];
                d_pooled[j] += dl * dense_w[o * k + j];
            }
        }
        let last = cache.acts.last().expect("conv blocks");
        let plane = last.shape().plane() as f64;
        let mut d_act = Tensor::from_fn(last.shape(), |c, _, _| d_pooled[c] / plane);
        let mut dx = None;
        for i in (0..self.arch.widths.len()).rev() {
            let dz = ops::elu_backward(&cache.acts[i], &d_act);
            let wi = self.params.index_of(&format!("conv{i}.weight"));
            let bi = self.params.index_of(&format!("conv{i}.bias"));
            let (gw, gb) = two_mut(&mut grads, wi, bi);
            let d_in = ops::conv_backward(&cache.convs[i], &self.params.tensors()[wi].data, &dz, gw, gb, true)
                .expect("input gradient requested");
            if i == 0 {
                dx = Some(d_in);
            } else {
                d_act = d_in;
            }
        }
        (want_params.then_some(grads), dx.expect("input gradient"))
    }

    /// Gradient of output `index` w.r.t. the input image.
    pub fn input_gradient(&self, x: &Tensor, index: usize) -> Result<Tensor> {
        let (_, cache) = self.forward_cached(x)?;
        let mut d_out = vec![0.0; self.arch.outputs];
        d_out[index] = 1.0;
        Ok(self.backward(&cache, &d_out, false).1)
    }
}

impl DifferentiableEval for ClassifierNet {
    type Output = Vec<f64>;
    type Upstream = Vec<f64>;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn eval(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.forward(x)
    }

    fn gradient(&self, x: &Tensor, upstream: &Vec<f64>) -> Result<(ParamGrads, Tensor)> {
        let (_, cache) = self.forward_cached(x)?;
        let (g, dx) = self.backward(&cache, upstream, true);
        Ok((g.expect("requested"), dx))
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub(crate) fn two_mut(g: &mut [Vec<f64>], a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a != b);
    if a < b {
        let (lo, hi) = g.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = g.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_param_count_matches_layer_formula() {
        // 1→8: 72+8, 8→16: 1152+16, 16→32: 4608+32, dense 32+1
        let arch = ClassifierArch::default();
        let net = ClassifierNet::init(arch.clone(), 3).unwrap();
        assert_eq!(net.params().num_scalars(), 80 + 1168 + 4640 + 33);
        assert_eq!(arch.param_count(), 5921);
    }

    #[test]
    fn zero_weights_give_one_half() {
        let net = ClassifierNet::zeroed(ClassifierArch::default()).unwrap();
        let x = Tensor::from_fn(Shape::new(1, 32, 32), |_, r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0);
        assert_eq!(net.score(&x).unwrap(), 0.5);
    }

    #[test]
    fn init_is_seed_deterministic_with_zero_bias() {
        let a = ClassifierNet::init(ClassifierArch::default(), 11).unwrap();
        let b = ClassifierNet::init(ClassifierArch::default(), 11).unwrap();
        assert_eq!(a, b);
        assert!(a.params().get("conv0.bias").iter().all(|&v| v == 0.0));
        assert_ne!(a, ClassifierNet::init(ClassifierArch::default(), 12).unwrap());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let net = ClassifierNet::init(ClassifierArch::default(), 1).unwrap();
        assert!(matches!(net.score(&Tensor::zeros(Shape::new(1, 16, 16))), Err(Error::Shape { .. })));
    }

    #[test]
    fn outputs_are_probabilities() {
        let arch = ClassifierArch { outputs: 3, ..ClassifierArch::default() };
        let net = ClassifierNet::init(arch, 5).unwrap();
        let x = Tensor::filled(Shape::new(1, 32, 32), 0.7);
        let p = net.forward(&x).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
