#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use fallsel::detector::bce_loss_and_grad;
use fallsel::embedder::contrastive_grad;
use fallsel::nn::{Activation, Gradients, Mlp};
use fallsel::partition::ClusterAssignment;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Minimum cost over every monotone warping path, by explicit enumeration.
pub fn dtw_enumerate(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + (a[i] - b[j]).abs();
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
}

/// DBSCAN from definitions: core points by neighbor count, clusters as connected
/// components of the core graph, border points attached to any adjacent core.
#[derive(Debug)]
pub struct DbscanOracle {
    pub core: Vec<bool>,
    /// Component index per core point.
    pub component: Vec<Option<usize>>,
    pub n_clusters: usize,
    /// Components a non-core point is density-reachable from.
    pub reachable: Vec<BTreeSet<usize>>,
}

pub fn dbscan_oracle(points: &[Vec<f64>], eps: f64, min_pts: usize) -> DbscanOracle {
    let n = points.len();
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| dist(&points[i], &points[j]) <= eps).collect())
        .collect();
    let core: Vec<bool> = (0..n).map(|i| adj[i].iter().filter(|&&b| b).count() >= min_pts).collect();
    let mut component = vec![None; n];
    let mut n_clusters = 0;
    for start in 0..n {
        if !core[start] || component[start].is_some() {
            continue;
        }
        let mut stack = vec![start];
        component[start] = Some(n_clusters);
        while let Some(p) = stack.pop() {
            for q in 0..n {
                if adj[p][q] && core[q] && component[q].is_none() {
                    component[q] = Some(n_clusters);
                    stack.push(q);
                }
            }
        }
        n_clusters += 1;
    }
    let reachable = (0..n)
        .map(|i| {
            if core[i] {
                return BTreeSet::new();
            }
            (0..n).filter(|&j| core[j] && adj[i][j]).filter_map(|j| component[j]).collect()
        })
        .collect();
    DbscanOracle { core, component, n_clusters, reachable }
}

/// Compares an assignment with the oracle up to relabeling; returns a reason on mismatch.
pub fn check_dbscan(got: &ClusterAssignment, want: &DbscanOracle) -> Result<(), String> {
    if got.core != want.core {
        return Err("core sets differ".into());
    }
    if got.n_clusters != want.n_clusters {
        return Err(format!("cluster count {} vs {}", got.n_clusters, want.n_clusters));
    }
    let mut forward: BTreeMap<usize, usize> = BTreeMap::new();
    let mut backward: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..got.len() {
        let Some(c) = want.component[i] else { continue };
        let Some(l) = got.labels[i] else {
            return Err(format!("core point {i} labeled noise"));
        };
        if *forward.entry(c).or_insert(l) != l || *backward.entry(l).or_insert(c) != c {
            return Err(format!("core point {i} breaks the cluster bijection"));
        }
    }
    for i in 0..got.len() {
        if want.core[i] {
            continue;
        }
        match got.labels[i] {
            None if want.reachable[i].is_empty() => {}
            None => return Err(format!("border point {i} labeled noise")),
            Some(l) => {
                let c = backward.get(&l).ok_or(format!("point {i} in unknown cluster {l}"))?;
                if !want.reachable[i].contains(c) {
                    return Err(format!("point {i} placed in a non-adjacent cluster"));
                }
            }
        }
    }
    Ok(())
}

pub fn random_points(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    // A few blobs plus uniform background, on a coarse grid so ties at eps occur.
    let centers: Vec<Vec<f64>> = (0..rng.random_range(1..=4))
        .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    (0..n)
        .map(|_| {
            if rng.random_bool(0.25) {
                (0..dim).map(|_| (rng.random_range(-8.0..8.0_f64) * 4.0).round() / 4.0).collect()
            } else {
                let c = &centers[rng.random_range(0..centers.len())];
                c.iter().map(|v| ((v + rng.random_range(-1.0..1.0)) * 4.0).round() / 4.0).collect()
            }
        })
        .collect()
}

/// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)`; 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub fn central_differences(net: &Mlp, h: f64, loss: impl Fn(&Mlp) -> f64) -> Vec<f64> {
    let mut probe = net.clone();
    (0..net.param_count())
        .map(|i| {
            let orig = *probe.param_mut(i);
            *probe.param_mut(i) = orig + h;
            let up = loss(&probe);
            *probe.param_mut(i) = orig - h;
            let down = loss(&probe);
            *probe.param_mut(i) = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub const FD_STEP: f64 = 1e-5;

pub fn random_net(rng: &mut impl Rng, dims: &[usize], last: Activation) -> Mlp {
    let mut acts = vec![Activation::Relu; dims.len() - 2];
    acts.push(last);
    let seed = rng.random();
    let mut net = Mlp::init(dims, &acts, &mut ChaCha8Rng::seed_from_u64(seed));
    // Zero biases put every unit fed by a dead layer exactly on the ReLU kink.
    for l in &mut net.layers {
        l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    net
}

/// Shifts layer-0 biases so the given unit's pre-activation on `x` sits at `offset`.
pub fn place_on_kink(net: &mut Mlp, x: &[f64], unit: usize, offset: f64) {
    let l = &mut net.layers[0];
    let pre: f64 = (0..l.inputs).map(|i| l.weights[unit * l.inputs + i] * x[i]).sum();
    l.bias[unit] = offset - pre;
}

/// Rescales the linear output layer so the pair's embedding distance becomes `target`.
pub fn scale_distance(net: &mut Mlp, a: &[f64], b: &[f64], target: f64) {
    let ea = net.forward(a).unwrap();
    let eb = net.forward(b).unwrap();
    let d = dist(&ea, &eb);
    let k = target / d;
    let last = net.layers.last_mut().unwrap();
    last.weights.iter_mut().for_each(|w| *w *= k);
    last.bias.iter_mut().for_each(|w| *w *= k);
}

pub fn contrastive_pair_loss(net: &Mlp, a: &[f64], b: &[f64], similar: bool, margin: f64) -> f64 {
    let ea = net.forward(a).unwrap();
    let eb = net.forward(b).unwrap();
    contrastive_grad(&ea, &eb, similar, margin).0
}

pub fn contrastive_analytic(net: &Mlp, a: &[f64], b: &[f64], similar: bool, margin: f64) -> Vec<f64> {
    let params = fallsel::embedder::EmbedderParams { net: net.clone() };
    let mut g = Gradients::zeros_like(net);
    fallsel::embedder::pair_loss_and_grad(&params, a, b, similar, margin, &mut g).unwrap();
    g.flat()
}

pub fn bce_loss(net: &Mlp, x: &[f64], target: f64, weight: f64) -> f64 {
    let mut g = Gradients::zeros_like(net);
    bce_loss_and_grad(net, x, target, weight, &mut g).unwrap()
}

pub fn bce_analytic(net: &Mlp, x: &[f64], target: f64, weight: f64) -> Vec<f64> {
    let mut g = Gradients::zeros_like(net);
    bce_loss_and_grad(net, x, target, weight, &mut g).unwrap();
    g.flat()
}

pub fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

pub fn random_series(rng: &mut impl Rng, max_len: usize) -> Vec<f64> {
    let n = rng.random_range(1..=max_len);
    random_vec(rng, n)
}

/// One gradient-check case for each loss and each side of each kink. Returns the
/// worst relative error seen and a description of the failing case, if any.
pub fn gradient_check_suite(networks: usize, seed: u64) -> (f64, Option<String>) {
    let mut rng = rng(seed);
    let mut worst = 0.0_f64;
    let mut failure = None;
    let mut record = |name: String, err: f64, worst: &mut f64| {
        *worst = worst.max(err);
        if err >= 1e-4 && failure.is_none() {
            failure = Some(format!("{name}: relative error {err:.3e}"));
        }
    };
    let margin = 1.0;
    for case in 0..networks {
        let din = rng.random_range(2..=5);
        let hidden = rng.random_range(3..=6);
        let dout = rng.random_range(2..=4);
        let a = random_vec(&mut rng, din);
        let b = random_vec(&mut rng, din);
        let kink = [1e-3, -1e-3][case % 2];

        // Rescaling to a target distance must stay mild, or the curvature swamps the step.
        let snn = loop {
            let mut net = random_net(&mut rng, &[din, hidden, hidden, dout], Activation::Linear);
            place_on_kink(&mut net, &a, 0, kink);
            let d = dist(&net.forward(&a).unwrap(), &net.forward(&b).unwrap());
            if (0.3..3.0).contains(&d) {
                break net;
            }
        };
        for similar in [true, false] {
            let mut net = snn.clone();
            if !similar {
                scale_distance(&mut net, &a, &b, 0.6 * margin);
            }
            let numeric = central_differences(&net, FD_STEP, |n| contrastive_pair_loss(n, &a, &b, similar, margin));
            let analytic = contrastive_analytic(&net, &a, &b, similar, margin);
            record(format!("contrastive net {case} similar={similar}"), relative_error(&analytic, &numeric), &mut worst);
        }
        for side in [-1e-3, 1e-3] {
            let mut net = snn.clone();
            scale_distance(&mut net, &a, &b, margin + side);
            let numeric = central_differences(&net, FD_STEP, |n| contrastive_pair_loss(n, &a, &b, false, margin));
            let analytic = contrastive_analytic(&net, &a, &b, false, margin);
            record(format!("contrastive net {case} hinge side {side}"), relative_error(&analytic, &numeric), &mut worst);
        }

        let mut det = random_net(&mut rng, &[din, hidden, hidden / 2 + 1, 1], Activation::Linear);
        place_on_kink(&mut det, &a, 0, kink);
        let weight = rng.random_range(0.5..3.0);
        for target in [0.0, 1.0] {
            let numeric = central_differences(&det, FD_STEP, |n| bce_loss(n, &a, target, weight));
            let analytic = bce_analytic(&det, &a, target, weight);
            record(format!("bce net {case} target={target}"), relative_error(&analytic, &numeric), &mut worst);
        }
    }
    (worst, failure)
}
