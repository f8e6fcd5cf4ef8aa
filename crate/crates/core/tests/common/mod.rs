//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::Rng;

use keyphrase::corpus::NUM_LABELS;
use keyphrase::crf::{is_impossible, EmissionMatrix, TagLattice, TransitionMatrix};

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NEG_INFINITY;
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Every label sequence whose transitions are all finite, with its score
/// summed term by term. Restricted to `lattice` when given.
pub fn enumerate_paths(p: &EmissionMatrix, t: &TransitionMatrix, lattice: Option<&TagLattice>) -> Vec<(Vec<usize>, f64)> {
    let (n, m) = (p.n(), p.m());
    let scores = p.scores();
    let mut out = Vec::new();
    let mut path = Vec::with_capacity(n);
    fn rec(
        pos: usize,
        n: usize,
        m: usize,
        prev: usize,
        path: &mut Vec<usize>,
        p: &ndarray::ArrayView2<f64>,
        t: &TransitionMatrix,
        lattice: Option<&TagLattice>,
        out: &mut Vec<(Vec<usize>, f64)>,
    ) {
        if pos == n {
            if is_impossible(t.get(prev, t.stop())) {
                return;
            }
            let mut score = t.get(t.start(), path[0]);
            for k in 1..n {
                score += t.get(path[k - 1], path[k]);
            }
            score += t.get(path[n - 1], t.stop());
            for (k, &y) in path.iter().enumerate() {
                score += p[[k, y]];
            }
            out.push((path.clone(), score));
            return;
        }
        for y in 0..m {
            if lattice.is_some_and(|l| !l.allowed(pos).contains(&y)) || is_impossible(t.get(prev, y)) {
                continue;
            }
            path.push(y);
            rec(pos + 1, n, m, y, path, p, t, lattice, out);
            path.pop();
        }
    }
    if n == 0 {
        return vec![(Vec::new(), t.get(t.start(), t.stop()))];
    }
    rec(0, n, m, t.start(), &mut path, &scores, t, lattice, &mut out);
    out
}

pub fn oracle_log_partition(paths: &[(Vec<usize>, f64)]) -> f64 {
    log_sum_exp(&paths.iter().map(|(_, s)| *s).collect::<Vec<_>>())
}

pub fn oracle_marginals(paths: &[(Vec<usize>, f64)], n: usize, m: usize) -> Array2<f64> {
    let log_z = oracle_log_partition(paths);
    let mut out = Array2::zeros((n, m));
    for (path, s) in paths {
        let w = (s - log_z).exp();
        for (k, &y) in path.iter().enumerate() {
            out[[k, y]] += w;
        }
    }
    out
}

/// Highest-scoring path; the first one found wins ties, which under
/// lexicographic enumeration is the lowest label sequence.
pub fn oracle_viterbi(paths: &[(Vec<usize>, f64)]) -> (Vec<usize>, f64) {
    let mut best = paths[0].clone();
    for (path, s) in paths {
        if *s > best.1 {
            best = (path.clone(), *s);
        }
    }
    best
}

/// Random emissions in `[-3, 3]` and transitions with IOBES structure.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize) -> (EmissionMatrix, TransitionMatrix) {
    let m = NUM_LABELS;
    let p = EmissionMatrix::new(Array2::from_shape_fn((n, m), |_| rng.random_range(-3.0..3.0))).unwrap();
    let raw = Array2::from_shape_fn((m + 2, m + 2), |_| rng.random_range(-2.0..2.0));
    let mut t = TransitionMatrix::from_scores(raw).unwrap();
    t.forbid_illegal_iobes();
    (p, t)
}

/// Per position: everything, a random subset, or a single label.
pub fn random_lattice<R: Rng>(rng: &mut R, n: usize) -> TagLattice {
    let m = NUM_LABELS;
    let allowed = (0..n)
        .map(|_| match rng.random_range(0..3) {
            0 => (0..m).collect(),
            1 => {
                let mut set: Vec<usize> = (0..m).filter(|_| rng.random_bool(0.4)).collect();
                if set.is_empty() {
                    set.push(rng.random_range(0..m));
                }
                set
            }
            _ => vec![rng.random_range(0..m)],
        })
        .collect();
    TagLattice::new(allowed, m).unwrap()
}

fn kl(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).filter(|(x, _)| **x > 0.0).map(|(x, y)| x * (x / y).ln()).sum()
}

/// Propagation objective written out directly from its definition.
pub fn oracle_objective(
    adjacency: &[Vec<(usize, f64)>],
    gold: &[Option<usize>],
    p: &Array2<f64>,
    q: &Array2<f64>,
    mu: f64,
    nu: f64,
) -> f64 {
    let row = |a: &Array2<f64>, u: usize| a.row(u).to_vec();
    let mut c = 0.0;
    for u in 0..q.nrows() {
        if let Some(g) = gold[u] {
            let mut r = vec![0.0; q.ncols()];
            r[g] = 1.0;
            c += kl(&r, &row(q, u));
        }
        for &(v, s) in &adjacency[u] {
            c += mu * s * kl(&row(q, u), &row(q, v));
        }
        c += nu * kl(&row(q, u), &row(p, u));
    }
    c
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// Minimizes `f` over a product of simplices (`n` rows of width `m`) by
/// gradient descent on softmax logits with central-difference gradients
/// and backtracking line search.
pub fn dense_simplex_minimize(f: impl Fn(&Array2<f64>) -> f64, n: usize, m: usize, iters: usize) -> (Array2<f64>, f64) {
    let obj = |z: &Array2<f64>| f(&softmax_rows(z));
    let mut z = Array2::<f64>::zeros((n, m));
    let mut value = obj(&z);
    let h = 1e-6;
    let mut step = 1.0;
    for _ in 0..iters {
        let mut grad = Array2::zeros((n, m));
        for i in 0..n {
            for j in 0..m {
                let mut zp = z.clone();
                zp[[i, j]] += h;
                let mut zm = z.clone();
                zm[[i, j]] -= h;
                grad[[i, j]] = (obj(&zp) - obj(&zm)) / (2.0 * h);
            }
        }
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        if g2 < 1e-24 {
            break;
        }
        step *= 2.0;
        loop {
            let cand = &z - &(&grad * step);
            let v = obj(&cand);
            if v <= value - 1e-4 * step * g2 {
                z = cand;
                value = v;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return (softmax_rows(&z), value);
            }
        }
    }
    (softmax_rows(&z), value)
}

/// Exhaustive k-NN edge set: `(u, v) -> distance` with `u < v`.
pub fn brute_force_knn(points: &Array2<f64>, k: usize) -> BTreeMap<(usize, usize), f64> {
    let n = points.nrows();
    let mut edges = BTreeMap::new();
    for u in 0..n {
        let mut all: Vec<(f64, usize)> = (0..n)
            .filter(|&v| v != u)
            .map(|v| {
                let d: f64 = points.row(u).iter().zip(points.row(v)).map(|(a, b)| (a - b).powi(2)).sum();
                (d.sqrt(), v)
            })
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for &(d, v) in &all[..k] {
            edges.insert((u.min(v), u.max(v)), d);
        }
    }
    edges
}

pub fn tv_distance(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

pub fn random_simplex_rows<R: Rng>(rng: &mut R, n: usize, m: usize) -> Array2<f64> {
    let mut out = Array2::from_shape_fn((n, m), |_| rng.random_range(0.01..1.0));
    for mut row in out.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    out
}

/// Relative error between two gradient blocks, measured in the Euclidean
/// norm of the whole block.
pub fn block_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn unit_vector(m: usize, i: usize) -> Array1<f64> {
    let mut v = Array1::zeros(m);
    v[i] = 1.0;
    v
}
