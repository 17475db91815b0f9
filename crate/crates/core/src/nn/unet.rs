//! Three-level encoder-decoder trunk with skip connections, and the conv
//! heads that turn trunk features into an image.
//!
//! ```text
//! enc1: C      -> b    (s1)                 e1   H×W
//! enc2: b      -> 2b   (s2)                 e2   H/2
//! enc3: 2b     -> 4b   (s2)                 e3   H/4
//! dec2: up(e3) ++ e2      -> 2b             d2   H/2
//! dec1: up(d2) ++ e1 ++ x -> b              d1   H×W  (trunk output)
//! head: [b -> b, ELU]* then b -> C, sigmoid
//! ```

use rand::Rng;

use super::generator::GeneratorArch;
use super::ops::{self, ConvCache};
use super::params::{fan_in_uniform, ParamGrads, ParamSet};
use crate::tensor::Tensor;

fn conv(p: &ParamSet, name: &str, x: &Tensor, out: usize, stride: usize) -> (Tensor, ConvCache) {
    ops::conv_forward(x, p.get(&format!("{name}.weight")), p.get(&format!("{name}.bias")), out, stride)
}

fn conv_back(
    p: &ParamSet,
    name: &str,
    cache: &ConvCache,
    dz: &Tensor,
    grads: &mut ParamGrads,
    want_dx: bool,
) -> Option<Tensor> {
    let wi = p.index_of(&format!("{name}.weight"));
    let bi = p.index_of(&format!("{name}.bias"));
    let (gw, gb) = super::classifier::two_mut(grads, wi, bi);
    ops::conv_backward(cache, &p.tensors()[wi].data, dz, gw, gb, want_dx)
}

fn push_conv(p: &mut ParamSet, rng: &mut impl Rng, name: &str, cin: usize, cout: usize) {
    let fan_in = cin * 9;
    p.push(format!("{name}.weight"), vec![cout, cin, 3, 3], fan_in_uniform(rng, cout * fan_in, fan_in));
    p.push(format!("{name}.bias"), vec![cout], vec![0.0; cout]);
}

pub(crate) fn init_trunk(p: &mut ParamSet, rng: &mut impl Rng, prefix: &str, arch: &GeneratorArch) {
    let (c, b) = (arch.channels, arch.base_width);
    push_conv(p, rng, &format!("{prefix}enc1"), c, b);
    push_conv(p, rng, &format!("{prefix}enc2"), b, 2 * b);
    push_conv(p, rng, &format!("{prefix}enc3"), 2 * b, 4 * b);
    push_conv(p, rng, &format!("{prefix}dec2"), 6 * b, 2 * b);
    push_conv(p, rng, &format!("{prefix}dec1"), 3 * b + c, b);
}

pub(crate) fn init_head(p: &mut ParamSet, rng: &mut impl Rng, prefix: &str, layers: usize, arch: &GeneratorArch) {
    let b = arch.base_width;
    for j in 0..layers {
        let cout = if j + 1 == layers { arch.channels } else { b };
        push_conv(p, rng, &format!("{prefix}head{j}"), b, cout);
    }
}

pub(crate) struct TrunkCache {
    enc1: ConvCache,
    e1: Tensor,
    enc2: ConvCache,
    e2: Tensor,
    enc3: ConvCache,
    e3: Tensor,
    dec2: ConvCache,
    d2: Tensor,
    dec1: ConvCache,
    d1: Tensor,
}

pub(crate) fn trunk_forward(p: &ParamSet, prefix: &str, arch: &GeneratorArch, x: &Tensor) -> (Tensor, TrunkCache) {
    let b = arch.base_width;
    let (z, enc1) = conv(p, &format!("{prefix}enc1"), x, b, 1);
    let e1 = ops::elu(&z);
    let (z, enc2) = conv(p, &format!("{prefix}enc2"), &e1, 2 * b, 2);
    let e2 = ops::elu(&z);
    let (z, enc3) = conv(p, &format!("{prefix}enc3"), &e2, 4 * b, 2);
    let e3 = ops::elu(&z);
    let cat2 = Tensor::concat_channels(&[&ops::upsample2x(&e3), &e2]);
    let (z, dec2) = conv(p, &format!("{prefix}dec2"), &cat2, 2 * b, 1);
    let d2 = ops::elu(&z);
    let cat1 = Tensor::concat_channels(&[&ops::upsample2x(&d2), &e1, x]);
    let (z, dec1) = conv(p, &format!("{prefix}dec1"), &cat1, b, 1);
    let d1 = ops::elu(&z);
    (d1.clone(), TrunkCache { enc1, e1, enc2, e2, enc3, e3, dec2, d2, dec1, d1 })
}

pub(crate) fn trunk_backward(
    p: &ParamSet,
    prefix: &str,
    arch: &GeneratorArch,
    cache: &TrunkCache,
    dfeat: &Tensor,
    grads: &mut ParamGrads,
    want_dx: bool,
) -> Option<Tensor> {
    let (c, b) = (arch.channels, arch.base_width);
    let dz = ops::elu_backward(&cache.d1, dfeat);
    let dcat1 = conv_back(p, &format!("{prefix}dec1"), &cache.dec1, &dz, grads, true).expect("dx");
    let mut parts = dcat1.split_channels(&[2 * b, b, c]).into_iter();
    let (du2, mut de1, dx_skip) = (parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap());

    let dz = ops::elu_backward(&cache.d2, &ops::upsample2x_backward(&du2));
    let dcat2 = conv_back(p, &format!("{prefix}dec2"), &cache.dec2, &dz, grads, true).expect("dx");
    let mut parts = dcat2.split_channels(&[4 * b, 2 * b]).into_iter();
    let (du3, mut de2) = (parts.next().unwrap(), parts.next().unwrap());

    let dz = ops::elu_backward(&cache.e3, &ops::upsample2x_backward(&du3));
    de2.add_assign(&conv_back(p, &format!("{prefix}enc3"), &cache.enc3, &dz, grads, true).expect("dx"));
    let dz = ops::elu_backward(&cache.e2, &de2);
    de1.add_assign(&conv_back(p, &format!("{prefix}enc2"), &cache.enc2, &dz, grads, true).expect("dx"));
    let dz = ops::elu_backward(&cache.e1, &de1);
    let dx = conv_back(p, &format!("{prefix}enc1"), &cache.enc1, &dz, grads, want_dx);
    dx.map(|mut dx| {
        dx.add_assign(&dx_skip);
        dx
    })
}

pub(crate) struct HeadCache {
    convs: Vec<ConvCache>,
    acts: Vec<Tensor>,
    out: Tensor,
}

/// Returns the sigmoid output (no hard clamp).
pub(crate) fn head_forward(
    p: &ParamSet,
    prefix: &str,
    layers: usize,
    arch: &GeneratorArch,
    feat: &Tensor,
) -> (Tensor, HeadCache) {
    let mut convs = Vec::with_capacity(layers);
    let mut acts = Vec::with_capacity(layers.saturating_sub(1));
    let mut h = feat.clone();
    for j in 0..layers {
        let last = j + 1 == layers;
        let cout = if last { arch.channels } else { arch.base_width };
        let (z, cache) = conv(p, &format!("{prefix}head{j}"), &h, cout, 1);
        convs.push(cache);
        if last {
            h = z.map(ops::sigmoid);
        } else {
            h = ops::elu(&z);
            acts.push(h.clone());
        }
    }
    (h.clone(), HeadCache { convs, acts, out: h })
}

pub(crate) fn head_backward(
    p: &ParamSet,
    prefix: &str,
    layers: usize,
    cache: &HeadCache,
    dout: &Tensor,
    grads: &mut ParamGrads,
) -> Tensor {
    let mut dz = cache.out.zip_map(dout, |y, g| g * y * (1.0 - y));
    for j in (0..layers).rev() {
        let dh = conv_back(p, &format!("{prefix}head{j}"), &cache.convs[j], &dz, grads, true).expect("dx");
        if j == 0 {
            return dh;
        }
        dz = ops::elu_backward(&cache.acts[j - 1], &dh);
    }
    unreachable!("heads have at least one layer")
}
