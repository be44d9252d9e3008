//! Gradient-check helpers shared by the gradcheck and acceptance targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vader::model::{build_vader, VaderConfig};
use vader::mrf::HyperParams;
use vader::nn::{GraphBuilder, Network, Padding, Tensor};

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Denominator floor so that gradients which are zero up to rounding do not
/// produce meaningless ratios. Central differences at this eps carry about
/// 1e-10 of absolute noise on these objectives.
pub const FLOOR: f64 = 1e-5;

pub fn random_tensor(shape: [usize; 3], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn objective(net: &Network<f64>, x: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    let y = net.predict(x).unwrap();
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

pub fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Largest relative error over (a sample of) parameters and inputs.
pub fn max_rel_error(mut net: Network<f64>, x: Tensor<f64>, seed: u64, per_param: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (y, cache) = net.forward(&x).unwrap();
    let r = random_tensor(y.shape(), &mut rng);
    let (grads, gx) = net.backward(&cache, &r).unwrap();
    let mut worst: f64 = 0.0;

    for pi in 0..net.params().len() {
        let len = net.params().get(pi).value.len();
        let picks: Vec<usize> = if len <= per_param {
            (0..len).collect()
        } else {
            (0..per_param).map(|_| rng.gen_range(0..len)).collect()
        };
        for j in picks {
            let orig = net.params().get(pi).value[j];
            net.params_mut().iter_mut().nth(pi).unwrap().value[j] = orig + EPS;
            let up = objective(&net, &x, &r);
            net.params_mut().iter_mut().nth(pi).unwrap().value[j] = orig - EPS;
            let down = objective(&net, &x, &r);
            net.params_mut().iter_mut().nth(pi).unwrap().value[j] = orig;
            let numeric = (up - down) / (2.0 * EPS);
            let e = rel(grads.grads[pi][j], numeric);
            assert!(e.is_finite());
            if std::env::var("GC_DEBUG").is_ok() && e > TOL {
                eprintln!(
                    "param {} [{j}]: analytic {} numeric {numeric}",
                    net.params().get(pi).name,
                    grads.grads[pi][j]
                );
            }
            worst = worst.max(e);
        }
    }

    let mut xp = x.clone();
    let n = x.len();
    for _ in 0..per_param.min(n) {
        let j = rng.gen_range(0..n);
        let orig = x.data()[j];
        xp.data_mut()[j] = orig + EPS;
        let up = objective(&net, &xp, &r);
        xp.data_mut()[j] = orig - EPS;
        let down = objective(&net, &xp, &r);
        xp.data_mut()[j] = orig;
        worst = worst.max(rel(gx.data()[j], (up - down) / (2.0 * EPS)));
    }
    worst
}

/// Largest relative error of `net` on a seeded random input of `shape`.
pub fn case_error(net: Network<f64>, shape: [usize; 3], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x = random_tensor(shape, &mut rng);
    max_rel_error(net, x, seed, 64)
}

pub struct Case {
    pub name: &'static str,
    pub net: Network<f64>,
    pub shape: [usize; 3],
    pub seed: u64,
}

/// One small network per layer kind, plus a 2-level raw U-Net.
pub fn cases() -> Vec<Case> {
    let mut out = Vec::new();
    let mut push = |name, net, shape, seed| out.push(Case { name, net, shape, seed });

    let mut b = GraphBuilder::<f64>::new(2, 1);
    b.conv("c", 0, 3, [3, 5], Padding::Same);
    push("conv same", b.finish(1), [2, 4, 11], 1);

    let mut b = GraphBuilder::<f64>::new(2, 2);
    b.conv("c", 0, 3, [3, 3], Padding::Valid);
    push("conv valid", b.finish(1), [2, 4, 9], 2);

    let mut b = GraphBuilder::<f64>::new(2, 3);
    let p = b.max_pool("p", 0, [1, 2]);
    b.transposed_conv("t", p, 3, 5, 2);
    push("pool + transposed conv", b.finish(2), [2, 1, 12], 3);

    let mut b = GraphBuilder::<f64>::new(2, 4);
    let p = b.max_pool("p", 0, [1, 3]);
    b.transposed_conv("t", p, 2, 4, 3);
    push("transposed conv k=4 s=3", b.finish(3), [2, 1, 12], 4);

    let mut b = GraphBuilder::<f64>::new(2, 5);
    let c = b.conv("c", 0, 2, [1, 1], Padding::Same);
    b.max_pool("p", c, [3, 2]);
    push("max pool", b.finish(2), [2, 4, 10], 5);

    let mut b = GraphBuilder::<f64>::new(4, 6);
    let c = b.conv("c", 0, 4, [1, 3], Padding::Same);
    b.group_norm("g", c, 2);
    push("group norm", b.finish(1), [4, 2, 9], 6);

    let mut b = GraphBuilder::<f64>::new(2, 7);
    let c = b.conv("c", 0, 3, [1, 3], Padding::Same);
    b.relu("r", c);
    push("relu", b.finish(1), [2, 1, 15], 7);

    let mut b = GraphBuilder::<f64>::new(2, 8);
    let c = b.conv("c", 0, 3, [1, 3], Padding::Same);
    b.sigmoid("s", c);
    push("sigmoid", b.finish(1), [2, 1, 15], 8);

    let mut b = GraphBuilder::<f64>::new(2, 9);
    let a = b.conv("a", 0, 3, [1, 3], Padding::Same);
    let c = b.conv("b", 0, 2, [1, 5], Padding::Same);
    let cat = b.concat("cat", a, c);
    b.conv("mix", cat, 2, [1, 1], Padding::Same);
    push("concat", b.finish(1), [2, 1, 13], 9);

    let mut b = GraphBuilder::<f64>::new(2, 10);
    let a = b.conv("a", 0, 3, [1, 3], Padding::Same);
    let c = b.conv("b", 0, 3, [1, 5], Padding::Same);
    let s = b.add("add", a, c);
    b.conv("mix", s, 1, [1, 1], Padding::Same);
    push("add", b.finish(1), [2, 1, 13], 10);

    push("2-level U-Net", unet(11), [1, 1, 64], 11);
    out
}

pub fn unet(seed: u64) -> Network<f64> {
    let hyper = HyperParams::raw(5, 2, 2).with_base_width(4);
    build_vader(&VaderConfig::new(hyper, 600.0), seed)
        .unwrap()
        .cast::<f64>()
}
