//! Central finite-difference checks for every layer primitive, in f64.

use edgenet::model::{Activation, Executor, InputKind, InputPair, ModelGraph, Variant, Weights};
use edgenet::tensor::{
    avgpool2d_backward, avgpool2d_forward, concat_channels_backward, concat_channels_forward,
    conv2d_backward, conv2d_forward, cross_entropy, dense_backward, dense_forward, dropout_backward,
    dropout_forward, relu_backward, relu_forward, softmax, softmax_cross_entropy, ConvParams, DenseParams,
    Tensor,
};
use edgenet::vision::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor so entries whose true gradient is ~0 are judged on
/// absolute error instead of dividing noise by noise.
pub const FLOOR: f64 = 1e-4;
pub const INSTANCES: u64 = 20;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Central difference of `loss` with respect to every entry of `values`.
pub fn numeric(values: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut v = values.to_vec();
    (0..v.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + STEP;
            let plus = loss(&v);
            v[i] = orig - STEP;
            let minus = loss(&v);
            v[i] = orig;
            (plus - minus) / (2.0 * STEP)
        })
        .collect()
}

pub fn max_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn conv_instance(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cin = rng.gen_range(1..=3);
    let cout = rng.gen_range(1..=3);
    let k = [1, 3][rng.gen_range(0..2)];
    // every other instance is dilated
    let dil = if seed.is_multiple_of(2) { 2 } else { 1 };
    let stride = rng.gen_range(1..=2);
    let pad = rng.gen_range(0..=dil * (k - 1) / 2);
    let span = dil * (k - 1) + 1;
    let (h, w) = (rng.gen_range(span..span + 4), rng.gen_range(span..span + 4));
    let mut p = ConvParams::<f64>::zeros(cin, cout, k, k)
        .with_dilation(dil)
        .with_stride(stride)
        .with_padding(pad);
    p.weights = tensor(p.weights.shape(), rand_vec(&mut rng, cout * cin * k * k));
    p.bias = tensor(&[cout], rand_vec(&mut rng, cout));
    let x = tensor(&[cin, h, w], rand_vec(&mut rng, cin * h * w));
    let y = conv2d_forward(&x, &p).unwrap();
    let r = tensor(y.shape(), rand_vec(&mut rng, y.len()));
    let g = conv2d_backward(&x, &p, &r).unwrap();

    let nx = numeric(x.data(), |v| {
        dot(
            conv2d_forward(&tensor(x.shape(), v.to_vec()), &p).unwrap().data(),
            r.data(),
        )
    });
    let nw = numeric(p.weights.data(), |v| {
        let mut q = p.clone();
        q.weights = tensor(p.weights.shape(), v.to_vec());
        dot(conv2d_forward(&x, &q).unwrap().data(), r.data())
    });
    let nb = numeric(p.bias.data(), |v| {
        let mut q = p.clone();
        q.bias = tensor(&[cout], v.to_vec());
        dot(conv2d_forward(&x, &q).unwrap().data(), r.data())
    });
    max_err(g.input.data(), &nx)
        .max(max_err(g.weights.data(), &nw))
        .max(max_err(g.bias.data(), &nb))
}

pub fn dense_instance(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nin, nout) = (rng.gen_range(1..=8), rng.gen_range(1..=6));
    let mut p = DenseParams::<f64>::zeros(nin, nout);
    p.weights = tensor(&[nout, nin], rand_vec(&mut rng, nin * nout));
    p.bias = tensor(&[nout], rand_vec(&mut rng, nout));
    let x = tensor(&[nin], rand_vec(&mut rng, nin));
    let r = rand_vec(&mut rng, nout);
    let g = dense_backward(&x, &p, &tensor(&[nout], r.clone())).unwrap();
    let nx = numeric(x.data(), |v| {
        dot(dense_forward(&tensor(&[nin], v.to_vec()), &p).unwrap().data(), &r)
    });
    let nw = numeric(p.weights.data(), |v| {
        let mut q = p.clone();
        q.weights = tensor(&[nout, nin], v.to_vec());
        dot(dense_forward(&x, &q).unwrap().data(), &r)
    });
    let nb = numeric(p.bias.data(), |v| {
        let mut q = p.clone();
        q.bias = tensor(&[nout], v.to_vec());
        dot(dense_forward(&x, &q).unwrap().data(), &r)
    });
    max_err(g.input.data(), &nx)
        .max(max_err(g.weights.data(), &nw))
        .max(max_err(g.bias.data(), &nb))
}

pub fn relu_instance(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=24);
    // keep clear of the kink, where the derivative is undefined
    let xs: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.01..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    let x = tensor(&[n], xs);
    let r = rand_vec(&mut rng, n);
    let g = relu_backward(&x, &tensor(&[n], r.clone())).unwrap();
    let nx = numeric(x.data(), |v| {
        dot(relu_forward(&tensor(&[n], v.to_vec())).data(), &r)
    });
    max_err(g.data(), &nx)
}

pub fn avgpool_instance(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [
        rng.gen_range(1..=3),
        2 * rng.gen_range(1..=4),
        2 * rng.gen_range(1..=4),
    ];
    let n: usize = shape.iter().product();
    let x = tensor(&shape, rand_vec(&mut rng, n));
    let r = rand_vec(&mut rng, n / 4);
    let y_shape = avgpool2d_forward(&x).unwrap().shape().to_vec();
    let g = avgpool2d_backward(&tensor(&y_shape, r.clone()), &shape).unwrap();
    let nx = numeric(x.data(), |v| {
        dot(avgpool2d_forward(&tensor(&shape, v.to_vec())).unwrap().data(), &r)
    });
    max_err(g.data(), &nx)
}

pub fn dropout_instance(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=32);
    let rate = rng.gen_range(0.0..0.9);
    let x = tensor(&[n], rand_vec(&mut rng, n));
    let r = rand_vec(&mut rng, n);
    // the same seed reproduces the same mask, so the op is a fixed linear map
    let (_, mask) = dropout_forward(&x, rate, seed, true).unwrap();
    let g = dropout_backward(&tensor(&[n], r.clone()), &mask).unwrap();
    let nx = numeric(x.data(), |v| {
        dot(
            dropout_forward(&tensor(&[n], v.to_vec()), rate, seed, true)
                .unwrap()
                .0
                .data(),
            &r,
        )
    });
    max_err(g.data(), &nx)
}

pub fn concat_instance(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c1, c2, h, w) = (
        rng.gen_range(1..=3),
        rng.gen_range(1..=3),
        rng.gen_range(1..=4),
        rng.gen_range(1..=4),
    );
    let a = tensor(&[c1, h, w], rand_vec(&mut rng, c1 * h * w));
    let b = tensor(&[c2, h, w], rand_vec(&mut rng, c2 * h * w));
    let r = rand_vec(&mut rng, (c1 + c2) * h * w);
    let (ga, gb) = concat_channels_backward(&tensor(&[c1 + c2, h, w], r.clone()), c1).unwrap();
    let na = numeric(a.data(), |v| {
        dot(
            concat_channels_forward(&tensor(a.shape(), v.to_vec()), &b)
                .unwrap()
                .data(),
            &r,
        )
    });
    let nb = numeric(b.data(), |v| {
        dot(
            concat_channels_forward(&a, &tensor(b.shape(), v.to_vec()))
                .unwrap()
                .data(),
            &r,
        )
    });
    max_err(ga.data(), &na).max(max_err(gb.data(), &nb))
}

pub fn softmax_ce_instance(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(2..=10);
    let label = rng.gen_range(0..k);
    let logits = tensor(&[k], (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect());
    let (_, _, g) = softmax_cross_entropy(&logits, label).unwrap();
    let (_, g2) = cross_entropy(&softmax(&logits), label).unwrap();
    let n = numeric(logits.data(), |v| {
        softmax_cross_entropy(&tensor(&[k], v.to_vec()), label).unwrap().0
    });
    max_err(g.data(), &n).max(max_err(g2.data(), &n))
}

/// Small two-branch graph with both concats, dilation, pooling and dropout.
pub fn toy_graph() -> ModelGraph {
    let r = Activation::Relu;
    let mut b = ModelGraph::builder(Variant::EdgeNet, 6, 6);
    let img = b.input("image", InputKind::Image).unwrap();
    let edge = b.input("edge", InputKind::Edge).unwrap();
    let i = b.conv("iConv", img, 2, 3, 1, r, 0.25).unwrap();
    let e = b.conv("eConv", edge, 2, 3, 1, r, 0.25).unwrap();
    let c1 = b.concat("concat1", i, e).unwrap();
    let c = b.conv("Conv1", c1, 2, 3, 2, r, 0.25).unwrap();
    let c2 = b.concat("concat2", c, e).unwrap();
    let c = b.conv("Conv2", c2, 2, 3, 1, r, 0.0).unwrap();
    let p = b.avgpool("pool", c).unwrap();
    let f = b.flatten("flatten", p).unwrap();
    let f = b.dense("FC1", f, 5, r, 0.25).unwrap();
    b.dense("FC2", f, 4, Activation::Softmax, 0.0).unwrap();
    b.finish().unwrap()
}

/// Whole-graph check: every parameter of [`toy_graph`] under a fixed
/// dropout seed. Returns the worst relative error and the count checked.
pub fn whole_graph(seed: u64) -> (f64, usize) {
    let g = toy_graph();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = Image::from_fn(6, 6, |_, _| rng.gen_range(0.0..1.0)).unwrap();
    let edge = Image::from_fn(6, 6, |_, _| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).unwrap();
    let input = InputPair::new(image, edge).unwrap();
    let label = 2;
    let dropout_seed = seed ^ 0xd00d;
    let w = Weights::<f64>::init_he(&g, seed);
    let mut exec = Executor::<f64>::new(&g);
    exec.forward(&g, &w, &input, true, dropout_seed).unwrap();
    let mut grads = w.zeros_like();
    exec.backward(&g, &w, label, 1.0, &mut grads).unwrap();

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut probe = w.clone();
    let count = w.tensors().count();
    for t in 0..count {
        let len = w.tensors().nth(t).unwrap().len();
        for j in 0..len {
            let orig = probe.tensors().nth(t).unwrap().data()[j];
            let mut eval = |v: f64| {
                probe.tensors_mut().nth(t).unwrap().data_mut()[j] = v;
                exec.forward(&g, &probe, &input, true, dropout_seed).unwrap();
                exec.loss(label).unwrap()
            };
            let n = (eval(orig + STEP) - eval(orig - STEP)) / (2.0 * STEP);
            eval(orig);
            let a = grads.tensors().nth(t).unwrap().data()[j];
            worst = worst.max(rel_err(a, n));
            checked += 1;
        }
    }
    (worst, checked)
}

pub type Check = (&'static str, fn(u64) -> f64);

pub const PRIMITIVES: [Check; 7] = [
    ("conv2d", conv_instance),
    ("dense", dense_instance),
    ("relu", relu_instance),
    ("avgpool2d", avgpool_instance),
    ("dropout", dropout_instance),
    ("concat", concat_instance),
    ("softmax_ce", softmax_ce_instance),
];

/// Worst error of each primitive over [`INSTANCES`] random instances.
pub fn all_primitives() -> Vec<(&'static str, f64)> {
    PRIMITIVES
        .iter()
        .map(|&(name, f)| (name, (0..INSTANCES).map(f).fold(0.0, f64::max)))
        .collect()
}
