use ndarray::{Array1, Array2, ArrayView1};

use super::knn::SigmaMode;
use crate::{Error, Result};

/// Floor applied to prior probabilities before renormalizing.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationConfig {
    /// Weight of the graph smoothness term.
    pub mu: f64,
    /// Weight of the pull toward the CRF prior.
    pub nu: f64,
    pub k: usize,
    pub max_iters: usize,
    /// Stop once a sweep lowers the objective by less than this fraction.
    pub tol: f64,
    pub sigma_mode: SigmaMode,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            mu: 1e-6,
            nu: 1e-5,
            k: 10,
            max_iters: 100,
            tol: 1e-6,
            sigma_mode: SigmaMode::MeanKnnDistance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    pub q: Array2<f64>,
    /// Objective before the first sweep and after each sweep.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Floors every entry at [`PROB_FLOOR`] and renormalizes rows.
pub fn floor_distributions(p: &Array2<f64>) -> Array2<f64> {
    let mut out = p.mapv(|v| if v.is_finite() { v.max(PROB_FLOOR) } else { PROB_FLOOR });
    for mut row in out.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    out
}

fn safe_ln(x: f64) -> f64 {
    x.max(f64::MIN_POSITIVE).ln()
}

fn kl(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(x, _)| **x > 0.0)
        .map(|(x, y)| x * (x.ln() - safe_ln(*y)))
        .sum()
}

fn check_inputs(adjacency: &[Vec<(usize, f64)>], gold: &[Option<usize>], p: &Array2<f64>, mu: f64, nu: f64) -> Result<()> {
    let (n, m) = p.dim();
    if adjacency.len() != n {
        return Err(Error::shape("adjacency", n, adjacency.len()));
    }
    if gold.len() != n {
        return Err(Error::shape("empirical labels", n, gold.len()));
    }
    if let Some(g) = gold.iter().flatten().find(|&&g| g >= m) {
        return Err(Error::InvalidParameter(format!("label index {g} outside {m} labels")));
    }
    if let Some(&(v, _)) = adjacency.iter().flatten().find(|(v, s)| *v >= n || !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::InvalidParameter(format!("bad neighbor entry for node {v}")));
    }
    if !(mu >= 0.0 && nu >= 0.0 && mu.is_finite() && nu.is_finite()) {
        return Err(Error::InvalidParameter(format!("mu = {mu}, nu = {nu} must be non-negative")));
    }
    Ok(())
}

/// `Σ_{labeled} KL(r_u‖q_u) + μ Σ_u Σ_{v∈N(u)} s_uv KL(q_u‖q_v) + ν Σ_u KL(q_u‖p̃_u)`
/// with `r_u` the point mass on the gold label and `p̃` floored.
pub fn objective(
    adjacency: &[Vec<(usize, f64)>],
    gold: &[Option<usize>],
    p_tilde: &Array2<f64>,
    q: &Array2<f64>,
    mu: f64,
    nu: f64,
) -> f64 {
    let p = floor_distributions(p_tilde);
    objective_floored(adjacency, gold, &p, q, mu, nu)
}

fn objective_floored(
    adjacency: &[Vec<(usize, f64)>],
    gold: &[Option<usize>],
    p: &Array2<f64>,
    q: &Array2<f64>,
    mu: f64,
    nu: f64,
) -> f64 {
    let mut total = 0.0;
    for (u, nbrs) in adjacency.iter().enumerate() {
        let qu = q.row(u);
        if let Some(g) = gold[u] {
            total -= safe_ln(qu[g]);
        }
        if mu > 0.0 {
            for &(v, s) in nbrs {
                total += mu * s * kl(qu, q.row(v));
            }
        }
        if nu > 0.0 {
            total += nu * kl(qu, p.row(u));
        }
    }
    total
}

/// Solves `u + eᵘ = z`.
fn solve_log_lambert(z: f64) -> f64 {
    let mut u = if z > 1.0 { z.ln() } else { z };
    for _ in 0..100 {
        let eu = u.exp();
        let step = (u + eu - z) / (1.0 + eu);
        u -= step;
        if step.abs() <= 1e-15 * (1.0 + u.abs()) {
            break;
        }
    }
    u
}

/// Per-node subproblem: minimize `A Σ q ln q − Σ cᵢ qᵢ − Σ bᵢ ln qᵢ` over the
/// simplex, with `A ≥ 0` and `b ≥ 0`.
struct Local {
    a: f64,
    c: Array1<f64>,
    b: Array1<f64>,
}

impl Local {
    fn value(&self, q: ArrayView1<f64>) -> f64 {
        let mut v = 0.0;
        for i in 0..q.len() {
            if q[i] > 0.0 {
                v += self.a * q[i] * q[i].ln() - self.c[i] * q[i];
            }
            if self.b[i] > 0.0 {
                v -= self.b[i] * safe_ln(q[i]);
            }
        }
        v
    }

    /// Log-probabilities at multiplier `lambda`, their sum of
    /// exponentials and its derivative.
    fn at(&self, lambda: f64, ln_q: &mut [f64]) -> (f64, f64) {
        let (mut s, mut ds) = (0.0, 0.0);
        for i in 0..ln_q.len() {
            let kappa = self.c[i] - self.a - lambda;
            let lq = if self.b[i] > 0.0 {
                let lba = (self.b[i] / self.a).ln();
                lba - solve_log_lambert(lba - kappa / self.a)
            } else {
                kappa / self.a
            };
            ln_q[i] = lq;
            let q = lq.exp();
            s += q;
            ds -= if self.b[i] > 0.0 { q * q / (self.a * q + self.b[i]) } else { q / self.a };
        }
        (s, ds)
    }

    fn solve(&self, current: ArrayView1<f64>) -> Array1<f64> {
        let m = self.c.len();
        let b_sum = self.b.sum();
        if self.a == 0.0 {
            return if b_sum > 0.0 { &self.b / b_sum } else { current.to_owned() };
        }
        if b_sum == 0.0 {
            let z = &self.c / self.a;
            let max = z.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let e = z.mapv(|v| (v - max).exp());
            return &e / e.sum();
        }
        let mut ln_q = vec![0.0; m];
        let shifted = self.c.mapv(|c| (c - self.a) / self.a);
        let max = shifted.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut lambda = self.a * (max + shifted.mapv(|v| (v - max).exp()).sum().ln());
        let step0 = self.a.max(1.0);
        let mut step = step0;
        let (mut lo, mut hi) = (lambda, lambda);
        while self.at(lo, &mut ln_q).0 <= 1.0 {
            lo -= step;
            step *= 2.0;
        }
        step = step0;
        while self.at(hi, &mut ln_q).0 >= 1.0 {
            hi += step;
            step *= 2.0;
        }
        for _ in 0..200 {
            let (s, ds) = self.at(lambda, &mut ln_q);
            let g = s - 1.0;
            if g.abs() < 1e-15 {
                break;
            }
            if g > 0.0 {
                lo = lambda;
            } else {
                hi = lambda;
            }
            let newton = lambda - g / ds;
            lambda = if newton.is_finite() && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 1e-15 * (1.0 + lambda.abs()) {
                break;
            }
        }
        self.at(lambda, &mut ln_q);
        let mut q = Array1::from_iter(ln_q.iter().map(|l| l.max(-700.0).exp()));
        let s = q.sum();
        q /= s;
        q
    }
}

/// Block coordinate descent: each sweep replaces every node's distribution,
/// in index order, by the exact minimizer of the objective with all other
/// nodes held fixed. An update is kept only if it does not raise the local
/// objective, so the recorded objective never increases.
pub fn propagate(
    adjacency: &[Vec<(usize, f64)>],
    gold: &[Option<usize>],
    p_tilde: &Array2<f64>,
    config: &PropagationConfig,
) -> Result<PropagationResult> {
    let (mu, nu) = (config.mu, config.nu);
    check_inputs(adjacency, gold, p_tilde, mu, nu)?;
    let m = p_tilde.ncols();
    let p = floor_distributions(p_tilde);
    let ln_p = p.mapv(f64::ln);
    let mut q = p.clone();
    let mut trace = vec![objective_floored(adjacency, gold, &p, &q, mu, nu)];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..config.max_iters {
        iterations += 1;
        for (u, nbrs) in adjacency.iter().enumerate() {
            let mut c = &ln_p.row(u) * nu;
            let mut b = Array1::zeros(m);
            let mut strength = 0.0;
            if mu > 0.0 {
                for &(v, s) in nbrs {
                    // Each listed neighbor couples in both directions.
                    strength += s;
                    let qv = q.row(v);
                    for i in 0..m {
                        c[i] += mu * s * safe_ln(qv[i]);
                        b[i] += mu * s * qv[i];
                    }
                }
            }
            if let Some(g) = gold[u] {
                b[g] += 1.0;
            }
            let local = Local {
                a: mu * strength + nu,
                c,
                b,
            };
            let candidate = local.solve(q.row(u));
            if local.value(candidate.view()) <= local.value(q.row(u)) {
                q.row_mut(u).assign(&candidate);
            }
        }
        let value = objective_floored(adjacency, gold, &p, &q, mu, nu);
        let prev = *trace.last().unwrap();
        trace.push(value);
        let decrease = prev - value;
        if decrease <= config.tol * prev.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("propagation stopped after {iterations} sweeps without meeting tolerance {}", config.tol);
    }
    Ok(PropagationResult {
        q,
        objective_trace: trace,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tv(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
    }

    #[test]
    fn lambert_solution() {
        for z in [-50.0, -1.0, 0.0, 1.0, 2.5, 40.0, 1e6] {
            let u = solve_log_lambert(z);
            assert!((u + u.exp() - z).abs() < 1e-9 * (1.0 + z.abs()), "{z}");
        }
    }

    #[test]
    fn local_solution_is_stationary() {
        let local = Local {
            a: 0.7,
            c: array![0.3, -1.0, 0.1],
            b: array![0.0, 0.4, 1.2],
        };
        let q = local.solve(array![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0].view());
        assert!((q.sum() - 1.0).abs() < 1e-12);
        // Gradient components must agree up to the common multiplier.
        let grad: Vec<f64> = (0..3).map(|i| local.a * (q[i].ln() + 1.0) - local.c[i] - local.b[i] / q[i]).collect();
        assert!((grad[0] - grad[1]).abs() < 1e-9 && (grad[1] - grad[2]).abs() < 1e-9, "{grad:?}");
    }

    #[test]
    fn isolated_unlabeled_node_keeps_prior() {
        let p = array![[0.2, 0.5, 0.3]];
        let out = propagate(&[vec![]], &[None], &p, &PropagationConfig { mu: 1.0, nu: 1.0, ..Default::default() }).unwrap();
        assert!(tv(out.q.row(0), p.row(0)) < 1e-12);
    }

    #[test]
    fn isolated_labeled_node_without_regularizers() {
        let p = array![[0.2, 0.5, 0.3]];
        let out = propagate(&[vec![]], &[Some(2)], &p, &PropagationConfig { mu: 0.0, nu: 0.0, ..Default::default() }).unwrap();
        assert_eq!(out.q.row(0).to_vec(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_prior_entries_are_floored() {
        let p = array![[0.0, 1.0]];
        let out = propagate(&[vec![]], &[None], &p, &PropagationConfig::default()).unwrap();
        assert!(out.q[[0, 0]] > 0.0);
        assert!((out.q.row(0).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = array![[0.5, 0.5]];
        assert!(propagate(&[], &[None], &p, &PropagationConfig::default()).is_err());
        assert!(propagate(&[vec![]], &[Some(5)], &p, &PropagationConfig::default()).is_err());
        let neg = PropagationConfig { mu: -1.0, ..Default::default() };
        assert!(propagate(&[vec![]], &[None], &p, &neg).is_err());
    }
}
