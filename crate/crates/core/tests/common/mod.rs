#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use skeleton_attack::motion::Motion;
use skeleton_attack::skeleton::{forward_kinematics, JointAngleTrack, SkeletonTopology, JOINT_COUNT};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A smooth random motion generated through forward kinematics.
pub fn random_motion(rng: &mut ChaCha8Rng, frames: usize) -> Motion {
    let mut track = JointAngleTrack::rest(frames);
    let freq: Vec<[f64; 3]> = (0..JOINT_COUNT)
        .map(|_| [rng.random_range(0.1..0.6), rng.random_range(0.1..0.6), rng.random_range(0.1..0.6)])
        .collect();
    let amp: Vec<[f64; 3]> = (0..JOINT_COUNT)
        .map(|_| [rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)])
        .collect();
    let drift = [rng.random_range(-0.02..0.02), 0.0, rng.random_range(-0.02..0.02)];
    for t in 0..frames {
        let tf = t as f64;
        for j in 0..JOINT_COUNT {
            for i in 0..3 {
                track.angles[t][j][i] = amp[j][i] * (freq[j][i] * tf + j as f64).sin();
            }
        }
        track.root_translation[t] = [drift[0] * tf, 1.0, drift[2] * tf];
    }
    forward_kinematics(&track, &SkeletonTopology::standard(), 30.0).unwrap()
}

/// `m` with i.i.d. Gaussian noise on every coordinate.
pub fn perturb(rng: &mut ChaCha8Rng, m: &Motion, std: f64) -> Motion {
    let normal = Normal::new(0.0, std).unwrap();
    let flat: Vec<f64> = m.flat().iter().map(|v| v + normal.sample(rng)).collect();
    m.with_flat(&flat).unwrap()
}

/// `count` distinct coordinate indices below `len`.
pub fn sample_indices(rng: &mut ChaCha8Rng, len: usize, count: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, len, count.min(len)).into_vec()
}

/// Central finite difference of `f` at `x` along coordinate `i`.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

use std::collections::BTreeMap;

use skeleton_attack::losses::{
    ab_loss, abn_loss, bone_loss, dynamics_loss, perceptual_loss, sa_loss, total_loss, Loss, LossWeights,
    PerceptualConfig,
};
use skeleton_attack::models::{
    Architecture, Classifier, ClassifierParams, ClassifierSpec, DifferentiableClassifier, PredictiveDistribution,
};

pub const INSTANCES: usize = 20;
pub const COORDS: usize = 50;
pub const LOSS_STEP: f64 = 1e-5;
pub const MODEL_STEP: f64 = 1e-4;

/// Largest relative error between analytic and central-difference gradients
/// over `INSTANCES` random motion pairs and `COORDS` coordinates each.
fn worst_error(
    seed: u64,
    h: f64,
    eval: &dyn Fn(&Motion, &Motion, &Motion) -> (f64, Vec<f64>),
    value: &dyn Fn(&Motion, &Motion, &Motion) -> f64,
) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let frames = r.random_range(12..24);
        let q = random_motion(&mut r, frames);
        let adv = perturb(&mut r, &q, 0.03);
        let (_, grad) = eval(&q, &adv, &adv);
        let x = adv.flat().to_vec();
        let f = |x: &[f64]| value(&q, &adv, &adv.with_flat(x).unwrap());
        for i in sample_indices(&mut r, x.len(), COORDS) {
            worst = worst.max(relative_error(grad[i], central_difference(&f, &x, i, h)));
        }
    }
    worst
}

fn all_orders() -> PerceptualConfig {
    PerceptualConfig {
        betas: BTreeMap::from([(0, 0.2), (1, 0.2), (2, 0.2), (3, 0.2), (4, 0.2)]),
        ..Default::default()
    }
}

fn model(arch: Architecture, seed: u64) -> ClassifierParams {
    ClassifierParams::initialize(ClassifierSpec::new(arch, 8, seed)).unwrap()
}

/// Pulls a probability-space loss back to motion coordinates.
fn through<C: DifferentiableClassifier>(c: &C, adv: &Motion, loss: Loss) -> (f64, Vec<f64>) {
    (loss.value, c.input_gradient(adv, &loss.grad).unwrap())
}

/// `(name, worst relative error)` for every loss and both architectures.
pub fn gradient_report() -> Vec<(String, f64)> {
    let cfg = PerceptualConfig::default();
    let dyn_all = all_orders();
    let net = model(Architecture::MlpPooled, 11);
    // A reference close to the adversarial distribution makes the AB gradient
    // vanish and the finite difference meaningless, so mix in the one-hot
    // label the attack itself uses.
    let ab_ref = |q: &Motion| {
        let p = net.forward(q).unwrap();
        let hot = p.argmax();
        let mixed = p.probs().iter().enumerate().map(|(i, v)| 0.3 * v + if i == hot { 0.7 } else { 0.0 });
        PredictiveDistribution::new(mixed.collect()).unwrap()
    };
    let weights = LossWeights::default();
    let sa_target = PredictiveDistribution::one_hot(5, 8).unwrap();
    let mut out = Vec::new();
    let mut push = |name: &str, e: f64| out.push((name.to_string(), e));

    let bone = |q: &Motion, _: &Motion, a: &Motion| {
        let l = bone_loss(q, a).unwrap();
        (l.value, l.grad)
    };
    push("bone", worst_error(1, LOSS_STEP, &bone, &|q, o, a| bone(q, o, a).0));

    let dynamics = |q: &Motion, _: &Motion, a: &Motion| {
        let l = dynamics_loss(q, a, &cfg).unwrap();
        (l.value, l.grad)
    };
    push("dynamics", worst_error(2, LOSS_STEP, &dynamics, &|q, o, a| dynamics(q, o, a).0));

    let dynamics4 = |q: &Motion, _: &Motion, a: &Motion| {
        let l = dynamics_loss(q, a, &dyn_all).unwrap();
        (l.value, l.grad)
    };
    push("dynamics (orders 0-4)", worst_error(3, LOSS_STEP, &dynamics4, &|q, o, a| dynamics4(q, o, a).0));

    let perceptual = |q: &Motion, _: &Motion, a: &Motion| {
        let l = perceptual_loss(q, a, &cfg).unwrap();
        (l.value, l.grad)
    };
    push("perceptual", worst_error(4, LOSS_STEP, &perceptual, &|q, o, a| perceptual(q, o, a).0));

    let ab = |q: &Motion, _: &Motion, a: &Motion| {
        through(&net, a, ab_loss(&ab_ref(q), &net.forward(a).unwrap()).unwrap())
    };
    push("ab", worst_error(5, LOSS_STEP, &ab, &|q, o, a| ab(q, o, a).0));

    let abn = |_: &Motion, _: &Motion, a: &Motion| through(&net, a, abn_loss(&net.forward(a).unwrap()).unwrap());
    push("abn", worst_error(6, LOSS_STEP, &abn, &|q, o, a| abn(q, o, a).0));

    let sa = |_: &Motion, _: &Motion, a: &Motion| {
        through(&net, a, sa_loss(&sa_target, &net.forward(a).unwrap()).unwrap())
    };
    push("sa", worst_error(7, LOSS_STEP, &sa, &|q, o, a| sa(q, o, a).0));

    let total = |q: &Motion, o: &Motion, a: &Motion| {
        let (cv, cg) = ab(q, o, a);
        let l = total_loss(
            &Loss { value: cv, grad: cg },
            &perceptual_loss(q, a, &cfg).unwrap(),
            weights,
        )
        .unwrap();
        (l.value, l.grad)
    };
    push("total", worst_error(8, LOSS_STEP, &total, &|q, o, a| total(q, o, a).0));

    for (i, arch) in [Architecture::LinearSoftmax, Architecture::MlpPooled].into_iter().enumerate() {
        let c = model(arch, 20 + i as u64);
        let upstream: Vec<f64> = {
            let mut r = rng(30 + i as u64);
            (0..8).map(|_| r.random_range(-1.0..1.0)).collect()
        };
        let dot = |a: &Motion| -> f64 {
            c.forward(a).unwrap().probs().iter().zip(&upstream).map(|(p, u)| p * u).sum()
        };
        let eval = |_: &Motion, _: &Motion, a: &Motion| (dot(a), c.input_gradient(a, &upstream).unwrap());
        let name = format!("classifier {arch:?}");
        push(&name, worst_error(40 + i as u64, MODEL_STEP, &eval, &|_, _, a| dot(a)));
    }
    out
}
