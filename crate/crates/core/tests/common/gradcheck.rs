//! Central finite-difference checks of every analytic gradient.
//!
//! Each check runs 50 random trials on 4×4 instances. Errors are relative
//! to max(|analytic|, |numeric|, 1e-6).

use dualex::losses::{self, LossWeights, Reduction};
use dualex::nn::{AdversarialGenerator, ClassifierArch, ClassifierNet, DifferentiableEval, GenMode, GeneratorArch, GeneratorPair, ParamSet};
use dualex::tensor::{Image, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: u64 = 50;
const STEP: f64 = 1e-4;
const TOL: f64 = 1e-3;
const FLOOR: f64 = 1e-6;

fn assert_close(analytic: f64, numeric: f64, what: &str) {
    let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
    assert!(rel <= TOL, "{what}: analytic {analytic:e} numeric {numeric:e} (rel {rel:e})");
}

fn central(mut f: impl FnMut(f64) -> f64, at: f64) -> f64 {
    (f(at + STEP) - f(at - STEP)) / (2.0 * STEP)
}

fn image(rng: &mut ChaCha8Rng, shape: Shape) -> Image {
    Tensor::from_fn(shape, |_, _, _| rng.gen_range(0.05..0.95))
}

fn small() -> Shape {
    Shape::new(1, 4, 4)
}

fn weights(rng: &mut ChaCha8Rng) -> LossWeights {
    LossWeights {
        alpha1: rng.gen_range(0.1..3.0),
        alpha2: rng.gen_range(0.1..3.0),
        alpha3: rng.gen_range(0.1..3.0),
        alpha4: rng.gen_range(0.0..0.5),
        beta1: rng.gen_range(0.1..1.0),
        beta2: rng.gen_range(0.1..1.0),
        gamma: rng.gen_range(0.1..1.0),
        lambda: rng.gen_range(0.1..1.0),
        kappa: 0.1,
        reduction: if rng.gen_bool(0.5) { Reduction::Sum } else { Reduction::Mean },
    }
}

/// Random params at the 1e-2..1 scale, with the two branches made distinct.
fn scramble(params: &mut ParamSet, rng: &mut ChaCha8Rng, scale: f64) {
    for t in params.tensors_mut() {
        for v in &mut t.data {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

fn pick(rng: &mut ChaCha8Rng, params: &ParamSet) -> (usize, usize) {
    let k = rng.gen_range(0..params.len());
    (k, rng.gen_range(0..params.tensors()[k].data.len()))
}

fn tiny_classifier(seed: u64) -> ClassifierNet {
    let arch = ClassifierArch { widths: vec![2, 3, 2], ..ClassifierArch::for_input(small()) };
    ClassifierNet::init(arch, seed).unwrap()
}

fn tiny_pair(mode: GenMode, seed: u64, rng: &mut ChaCha8Rng) -> GeneratorPair {
    let arch = GeneratorArch { base_width: 2, ..GeneratorArch::for_input(small()) };
    let mut pair = GeneratorPair::init(mode, arch, seed).unwrap();
    scramble(pair.params_mut(), rng, 0.6);
    pair
}

pub fn similarity_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..TRIALS {
        let w = weights(&mut rng);
        let (x, xs, xa) = (image(&mut rng, small()), image(&mut rng, small()), image(&mut rng, small()));
        let (_, gs, ga) = losses::similarity_loss_grad(&x, &xs, &xa, &w);
        let i = rng.gen_range(0..16);
        let ns = central(
            |v| {
                let mut t = xs.clone();
                t.data_mut()[i] = v;
                losses::similarity_loss(&x, &t, &xa, &w).unwrap()
            },
            xs.data()[i],
        );
        let na = central(
            |v| {
                let mut t = xa.clone();
                t.data_mut()[i] = v;
                losses::similarity_loss(&x, &xs, &t, &w).unwrap()
            },
            xa.data()[i],
        );
        assert_close(gs.data()[i], ns, &format!("trial {trial} d/dxs"));
        assert_close(ga.data()[i], na, &format!("trial {trial} d/dxa"));
    }
}

pub fn classification_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..TRIALS {
        let w = weights(&mut rng);
        let (fx, fs, fa) = (rng.gen_range(0.0..1.0), rng.gen_range(0.01..0.99), rng.gen_range(0.01..0.99));
        let (_, ds, da) = losses::classification_binary_grad(fx, fs, fa, &w).unwrap();
        let ns = central(|v| losses::classification_loss_binary(fx, v, fa, &w).unwrap(), fs);
        let na = central(|v| losses::classification_loss_binary(fx, fs, v, &w).unwrap(), fa);
        assert_close(ds, ns, &format!("trial {trial} binary d/dfs"));
        assert_close(da, na, &format!("trial {trial} binary d/dfa"));

        let n = rng.gen_range(2..5);
        let vec = |rng: &mut ChaCha8Rng| (0..n).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<f64>>();
        let (vx, vs, va) = (vec(&mut rng), vec(&mut rng), vec(&mut rng));
        let (_, gs, ga) = losses::classification_multiclass_grad(&vx, &vs, &va, &w).unwrap();
        let i = rng.gen_range(0..n);
        let ns = central(
            |v| {
                let mut t = vs.clone();
                t[i] = v;
                losses::classification_loss_multiclass(&vx, &t, &va, &w).unwrap()
            },
            vs[i],
        );
        let na = central(
            |v| {
                let mut t = va.clone();
                t[i] = v;
                losses::classification_loss_multiclass(&vx, &vs, &t, &w).unwrap()
            },
            va[i],
        );
        assert_close(gs[i], ns, &format!("trial {trial} multiclass d/dfs"));
        assert_close(ga[i], na, &format!("trial {trial} multiclass d/dfa"));
    }
}

pub fn tv_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..TRIALS {
        let lambda = rng.gen_range(0.1..2.0);
        let shape = Shape::new(rng.gen_range(1..3), 4, 4);
        let (xs, xa) = (image(&mut rng, shape), image(&mut rng, shape));
        let (_, g) = losses::tv_grad(&xs, &xa, lambda, true);
        let g = g.unwrap();
        let i = rng.gen_range(0..shape.len());
        let n = central(
            |v| {
                let mut t = xs.clone();
                t.data_mut()[i] = v;
                losses::tv_grad(&t, &xa, lambda, false).0
            },
            xs.data()[i],
        );
        assert_close(g.data()[i], n, &format!("trial {trial}"));
    }
}

pub fn weight_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..TRIALS {
        let mode = [GenMode::DuoAE, GenMode::SingleAE(1), GenMode::SingleAE(2)][trial as usize % 3];
        let pair = tiny_pair(mode, trial, &mut rng);
        let w = weights(&mut rng);
        let mut grads = pair.params().zero_grads();
        losses::generator_weight_loss_grad(&pair, &w, &mut grads).unwrap();
        let (s, _) = pair.non_shared_pairs()[rng.gen_range(0..pair.non_shared_pairs().len())];
        let i = rng.gen_range(0..pair.params().tensors()[s].data.len());
        let n = central(
            |v| {
                let mut p = pair.clone();
                p.params_mut().tensors_mut()[s].data[i] = v;
                losses::generator_weight_loss(&p, &w).unwrap()
            },
            pair.params().tensors()[s].data[i],
        );
        assert_close(grads[s][i], n, &format!("trial {trial} {mode}"));
    }
}

pub fn classifier_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..TRIALS {
        let mut net = tiny_classifier(trial);
        scramble(net.params_mut(), &mut rng, 0.8);
        let x = image(&mut rng, small());
        let up = vec![rng.gen_range(-1.0..1.0)];
        let (g, dx) = net.gradient(&x, &up).unwrap();
        let f = |n: &ClassifierNet, x: &Tensor| n.eval(x).unwrap()[0] * up[0];
        let (k, i) = pick(&mut rng, net.params());
        let np = central(
            |v| {
                let mut n = net.clone();
                n.params_mut().tensors_mut()[k].data[i] = v;
                f(&n, &x)
            },
            net.params().tensors()[k].data[i],
        );
        assert_close(g[k][i], np, &format!("trial {trial} param {}", net.params().tensors()[k].name));
        let j = rng.gen_range(0..16);
        let nx = central(
            |v| {
                let mut t = x.clone();
                t.data_mut()[j] = v;
                f(&net, &t)
            },
            x.data()[j],
        );
        assert_close(dx.data()[j], nx, &format!("trial {trial} input"));
    }
}

pub fn generator_pair_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..TRIALS {
        let mode = [GenMode::DuoAE, GenMode::SingleAE(1), GenMode::SingleAE(2)][trial as usize % 3];
        let pair = tiny_pair(mode, trial, &mut rng);
        let x = image(&mut rng, small());
        let up = (Tensor::from_fn(small(), |_, _, _| rng.gen_range(-1.0..1.0)), Tensor::from_fn(small(), |_, _, _| rng.gen_range(-1.0..1.0)));
        let (g, dx) = pair.gradient(&x, &up).unwrap();
        let f = |p: &GeneratorPair, x: &Tensor| {
            let (s, a) = p.eval(x).unwrap();
            s.data().iter().zip(up.0.data()).map(|(a, b)| a * b).sum::<f64>() + a.data().iter().zip(up.1.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (k, i) = pick(&mut rng, pair.params());
        let np = central(
            |v| {
                let mut p = pair.clone();
                p.params_mut().tensors_mut()[k].data[i] = v;
                f(&p, &x)
            },
            pair.params().tensors()[k].data[i],
        );
        assert_close(g[k][i], np, &format!("trial {trial} {mode} param {}", pair.params().tensors()[k].name));
        let j = rng.gen_range(0..16);
        let nx = central(
            |v| {
                let mut t = x.clone();
                t.data_mut()[j] = v;
                f(&pair, &t)
            },
            x.data()[j],
        );
        assert_close(dx.data()[j], nx, &format!("trial {trial} {mode} input"));
    }
}

pub fn adversary_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..TRIALS {
        let arch = GeneratorArch { base_width: 2, ..GeneratorArch::for_input(small()) };
        let mut g_a = AdversarialGenerator::init(arch, trial).unwrap();
        scramble(g_a.params_mut(), &mut rng, 0.6);
        let x = image(&mut rng, small());
        let up = Tensor::from_fn(small(), |_, _, _| rng.gen_range(-1.0..1.0));
        let (g, dx) = g_a.gradient(&x, &up).unwrap();
        let f = |m: &AdversarialGenerator, x: &Tensor| m.eval(x).unwrap().data().iter().zip(up.data()).map(|(a, b)| a * b).sum::<f64>();
        let (k, i) = pick(&mut rng, g_a.params());
        let np = central(
            |v| {
                let mut m = g_a.clone();
                m.params_mut().tensors_mut()[k].data[i] = v;
                f(&m, &x)
            },
            g_a.params().tensors()[k].data[i],
        );
        assert_close(g[k][i], np, &format!("trial {trial} param"));
        let j = rng.gen_range(0..16);
        let nx = central(
            |v| {
                let mut t = x.clone();
                t.data_mut()[j] = v;
                f(&g_a, &t)
            },
            x.data()[j],
        );
        assert_close(dx.data()[j], nx, &format!("trial {trial} input"));
    }
}

/// The full objective through generators and the frozen classifier.
pub fn objective_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..TRIALS {
        let mode = [GenMode::DuoAE, GenMode::SingleAE(1), GenMode::SingleAE(2)][trial as usize % 3];
        let pair = tiny_pair(mode, trial, &mut rng);
        let mut clf = tiny_classifier(trial + 100);
        scramble(clf.params_mut(), &mut rng, 0.8);
        let w = LossWeights { alpha4: 0.0, ..weights(&mut rng) };
        let x = image(&mut rng, small());
        let (_, grads) = losses::sample_loss_and_grads(&x, &pair, &clf, &w).unwrap();
        let (k, i) = pick(&mut rng, pair.params());
        let expectation = |p: &GeneratorPair| {
            let b = losses::total_loss(&x, p, &clf, &w).unwrap();
            b.total - b.l_sa
        };
        let n = central(
            |v| {
                let mut p = pair.clone();
                p.params_mut().tensors_mut()[k].data[i] = v;
                expectation(&p)
            },
            pair.params().tensors()[k].data[i],
        );
        assert_close(grads[k][i], n, &format!("trial {trial} {mode} {}", pair.params().tensors()[k].name));

        let arch = GeneratorArch { base_width: 2, ..GeneratorArch::for_input(small()) };
        let mut g_a = AdversarialGenerator::init(arch, trial).unwrap();
        scramble(g_a.params_mut(), &mut rng, 0.6);
        let (_, grads) = losses::naive_sample_loss_and_grads(&x, &g_a, &clf, &w).unwrap();
        let (k, i) = pick(&mut rng, g_a.params());
        let n = central(
            |v| {
                let mut m = g_a.clone();
                m.params_mut().tensors_mut()[k].data[i] = v;
                losses::naive_adversarial_loss(&x, &m, &clf, &w).unwrap()
            },
            g_a.params().tensors()[k].data[i],
        );
        assert_close(grads[k][i], n, &format!("trial {trial} naive"));
    }
}

pub fn bce_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..TRIALS {
        let (t, p) = (rng.gen_range(0.0..1.0), rng.gen_range(0.01..0.99));
        assert_close(losses::bce_grad(t, p), central(|v| losses::bce(t, v), p), &format!("trial {trial}"));
    }
}
