//! Differentiable models: the frozen classifier and the generators.

pub mod classifier;
pub mod generator;
pub mod ops;
pub mod params;
mod unet;
pub mod weights;

pub use classifier::{ClassifierArch, ClassifierNet};
pub use generator::{AdversarialGenerator, GenMode, GeneratorArch, GeneratorPair};
pub use params::{ParamGrads, ParamSet, ParamTensor};

use crate::error::Result;
use crate::tensor::Tensor;

/// Forward evaluation plus reverse-mode gradient of a parameterized model.
///
/// `gradient` returns the parameter gradient and the input gradient of
/// `<upstream, eval(x)>`.
pub trait DifferentiableEval {
    type Output;
    type Upstream;

    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn eval(&self, x: &Tensor) -> Result<Self::Output>;
    fn gradient(&self, x: &Tensor, upstream: &Self::Upstream) -> Result<(ParamGrads, Tensor)>;
}
