//! Exact inference for a first-order linear-chain CRF.
//!
//! Scores live in log space. Forbidden transitions and pruned lattice
//! cells hold [`IMPOSSIBLE`]; every log-sum-exp skips them, so a path
//! through one contributes exactly zero probability mass.

use ndarray::{Array2, ArrayView2};

use crate::corpus::{Label, NUM_LABELS};
use crate::{Error, Result};

/// Stand-in for negative infinity.
pub const IMPOSSIBLE: f64 = -1e30;
const CUTOFF: f64 = -1e29;

#[inline]
pub fn is_impossible(x: f64) -> bool {
    x <= CUTOFF
}

/// Log-sum-exp over the finite (non-sentinel) values, in one streaming pass.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut max = IMPOSSIBLE;
    let mut sum = 0.0;
    for v in values {
        if is_impossible(v) {
            continue;
        }
        if v > max {
            sum = sum * (max - v).exp() + 1.0;
            max = v;
        } else {
            sum += (v - max).exp();
        }
    }
    if sum == 0.0 {
        IMPOSSIBLE
    } else {
        max + sum.ln()
    }
}

/// Per-token label scores, `n × m`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMatrix(Array2<f64>);

impl EmissionMatrix {
    pub fn new(scores: Array2<f64>) -> Result<Self> {
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("emission scores must be finite".into()));
        }
        Ok(EmissionMatrix(scores))
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        EmissionMatrix(Array2::zeros((n, m)))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn m(&self) -> usize {
        self.0.ncols()
    }

    pub fn scores(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Label-to-label scores over `m + 2` symbols; the last two are START and STOP.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix(Array2<f64>);

impl TransitionMatrix {
    /// All-zero transitions among labels, with entries into START and out of
    /// STOP forbidden.
    pub fn zeros(m: usize) -> Self {
        Self::from_scores(Array2::zeros((m + 2, m + 2))).unwrap()
    }

    pub fn from_scores(mut scores: Array2<f64>) -> Result<Self> {
        let k = scores.nrows();
        if k < 3 || scores.ncols() != k {
            return Err(Error::shape("transition matrix", "square, at least 3x3", format!("{:?}", scores.dim())));
        }
        let (start, stop) = (k - 2, k - 1);
        for i in 0..k {
            scores[[i, start]] = IMPOSSIBLE;
            scores[[stop, i]] = IMPOSSIBLE;
        }
        Ok(TransitionMatrix(scores))
    }

    /// Zero transitions over the 13 IOBES labels with every illegal
    /// transition forbidden.
    pub fn iobes() -> Self {
        let mut t = Self::zeros(NUM_LABELS);
        t.forbid_illegal_iobes();
        t
    }

    /// Clamps IOBES-illegal transitions to [`IMPOSSIBLE`].
    pub fn forbid_illegal_iobes(&mut self) {
        assert_eq!(self.m(), NUM_LABELS);
        let (start, stop) = (self.start(), self.stop());
        for a in Label::all() {
            for b in Label::all() {
                if !a.may_precede(b) {
                    self.0[[a.index(), b.index()]] = IMPOSSIBLE;
                }
            }
            if !a.may_open() {
                self.0[[start, a.index()]] = IMPOSSIBLE;
            }
            if !a.may_close() {
                self.0[[a.index(), stop]] = IMPOSSIBLE;
            }
        }
    }

    pub fn m(&self) -> usize {
        self.0.nrows() - 2
    }

    pub fn start(&self) -> usize {
        self.0.nrows() - 2
    }

    pub fn stop(&self) -> usize {
        self.0.nrows() - 1
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.0[[from, to]]
    }

    pub fn scores(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    /// Mutable access for training. Callers must leave sentinel entries alone.
    pub fn scores_mut(&mut self) -> &mut Array2<f64> {
        &mut self.0
    }
}

/// Allowed label set per position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagLattice {
    allowed: Vec<Vec<usize>>,
}

impl TagLattice {
    pub fn new(mut allowed: Vec<Vec<usize>>, m: usize) -> Result<Self> {
        for (position, set) in allowed.iter_mut().enumerate() {
            set.sort_unstable();
            set.dedup();
            if set.is_empty() {
                return Err(Error::EmptyAllowedSet { position });
            }
            if set.last().is_some_and(|&l| l >= m) {
                return Err(Error::InvalidParameter(format!("label index out of range at position {position}")));
            }
        }
        Ok(TagLattice { allowed })
    }

    pub fn full(n: usize, m: usize) -> Self {
        TagLattice {
            allowed: vec![(0..m).collect(); n],
        }
    }

    /// Lattice containing exactly one path.
    pub fn from_path(path: &[usize]) -> Self {
        TagLattice {
            allowed: path.iter().map(|&l| vec![l]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.allowed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allowed.is_empty()
    }

    pub fn allowed(&self, t: usize) -> &[usize] {
        &self.allowed[t]
    }

    pub fn contains(&self, path: &[usize]) -> bool {
        path.len() == self.len() && path.iter().zip(&self.allowed).all(|(l, set)| set.contains(l))
    }

    pub fn is_fully_specified(&self) -> bool {
        self.allowed.iter().all(|s| s.len() == 1)
    }
}

fn check_shapes(p: &EmissionMatrix, t: &TransitionMatrix) -> Result<()> {
    if p.m() != t.m() {
        return Err(Error::shape("emission/transition labels", t.m(), p.m()));
    }
    Ok(())
}

fn check_lattice(p: &EmissionMatrix, lattice: &TagLattice) -> Result<()> {
    if lattice.len() != p.n() {
        return Err(Error::LengthMismatch {
            expected: p.n(),
            found: lattice.len(),
        });
    }
    for t in 0..lattice.len() {
        if lattice.allowed(t).iter().any(|&l| l >= p.m()) {
            return Err(Error::InvalidParameter(format!("lattice label out of range at position {t}")));
        }
    }
    Ok(())
}

/// Unnormalized path score: transitions from START through STOP plus the
/// emissions along the path.
pub fn score_path(p: &EmissionMatrix, t: &TransitionMatrix, path: &[usize]) -> Result<f64> {
    check_shapes(p, t)?;
    if path.len() != p.n() {
        return Err(Error::LengthMismatch {
            expected: p.n(),
            found: path.len(),
        });
    }
    if path.iter().any(|&l| l >= p.m()) {
        return Err(Error::InvalidParameter("path label out of range".into()));
    }
    let scores = p.scores();
    let mut prev = t.start();
    let mut total = 0.0;
    for (pos, &label) in path.iter().enumerate() {
        total += t.get(prev, label) + scores[[pos, label]];
        prev = label;
    }
    Ok(total + t.get(prev, t.stop()))
}

/// Forward/backward tables restricted to a lattice.
struct Tables {
    alpha: Array2<f64>,
    beta: Array2<f64>,
    log_z: f64,
}

fn forward_backward(p: &EmissionMatrix, t: &TransitionMatrix, lattice: Option<&TagLattice>) -> Tables {
    let (n, m) = (p.n(), p.m());
    let scores = p.scores();
    let full: Vec<usize> = (0..m).collect();
    let allowed = |pos: usize| -> &[usize] {
        match lattice {
            Some(l) => l.allowed(pos),
            None => &full,
        }
    };

    let mut alpha = Array2::from_elem((n, m), IMPOSSIBLE);
    let mut beta = Array2::from_elem((n, m), IMPOSSIBLE);
    if n == 0 {
        return Tables {
            alpha,
            beta,
            log_z: t.get(t.start(), t.stop()),
        };
    }

    for &j in allowed(0) {
        let tr = t.get(t.start(), j);
        if !is_impossible(tr) {
            alpha[[0, j]] = tr + scores[[0, j]];
        }
    }
    for pos in 1..n {
        for &j in allowed(pos) {
            let acc = log_sum_exp(allowed(pos - 1).iter().map(|&i| {
                let (a, tr) = (alpha[[pos - 1, i]], t.get(i, j));
                if is_impossible(a) || is_impossible(tr) {
                    IMPOSSIBLE
                } else {
                    a + tr
                }
            }));
            if !is_impossible(acc) {
                alpha[[pos, j]] = acc + scores[[pos, j]];
            }
        }
    }
    let log_z = log_sum_exp(allowed(n - 1).iter().map(|&i| {
        let (a, tr) = (alpha[[n - 1, i]], t.get(i, t.stop()));
        if is_impossible(a) || is_impossible(tr) {
            IMPOSSIBLE
        } else {
            a + tr
        }
    }));

    for &i in allowed(n - 1) {
        beta[[n - 1, i]] = t.get(i, t.stop());
    }
    for pos in (0..n - 1).rev() {
        for &i in allowed(pos) {
            beta[[pos, i]] = log_sum_exp(allowed(pos + 1).iter().map(|&j| {
                let (b, tr) = (beta[[pos + 1, j]], t.get(i, j));
                if is_impossible(b) || is_impossible(tr) {
                    IMPOSSIBLE
                } else {
                    tr + scores[[pos + 1, j]] + b
                }
            }));
        }
    }
    Tables { alpha, beta, log_z }
}

/// Log of the sum of exponentiated scores over every label sequence.
/// For an empty sentence this is the START→STOP transition score.
pub fn log_partition(p: &EmissionMatrix, t: &TransitionMatrix) -> Result<f64> {
    check_shapes(p, t)?;
    Ok(forward_backward(p, t, None).log_z)
}

pub fn sequence_log_likelihood(p: &EmissionMatrix, t: &TransitionMatrix, path: &[usize]) -> Result<f64> {
    let score = score_path(p, t, path)?;
    if is_impossible(score) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(score - log_partition(p, t)?)
}

/// Log-probability that the label sequence lies inside the lattice.
/// Returns negative infinity when the lattice contains no legal path.
pub fn lattice_log_likelihood(p: &EmissionMatrix, t: &TransitionMatrix, lattice: &TagLattice) -> Result<f64> {
    check_shapes(p, t)?;
    check_lattice(p, lattice)?;
    let numerator = forward_backward(p, t, Some(lattice)).log_z;
    if is_impossible(numerator) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(numerator - forward_backward(p, t, None).log_z)
}

fn marginals_from(tables: &Tables, n: usize, m: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, m));
    if is_impossible(tables.log_z) {
        return out;
    }
    for pos in 0..n {
        for j in 0..m {
            let (a, b) = (tables.alpha[[pos, j]], tables.beta[[pos, j]]);
            if !is_impossible(a) && !is_impossible(b) {
                out[[pos, j]] = (a + b - tables.log_z).exp();
            }
        }
    }
    out
}

/// Per-position label marginals under the full distribution, `n × m`.
pub fn token_marginals(p: &EmissionMatrix, t: &TransitionMatrix) -> Result<Array2<f64>> {
    check_shapes(p, t)?;
    Ok(marginals_from(&forward_backward(p, t, None), p.n(), p.m()))
}

/// Marginals of the distribution restricted to (and renormalized over) a lattice.
pub fn lattice_marginals(p: &EmissionMatrix, t: &TransitionMatrix, lattice: &TagLattice) -> Result<Array2<f64>> {
    check_shapes(p, t)?;
    check_lattice(p, lattice)?;
    let tables = forward_backward(p, t, Some(lattice));
    if is_impossible(tables.log_z) {
        return Err(Error::InfeasibleLattice);
    }
    Ok(marginals_from(&tables, p.n(), p.m()))
}

/// Highest-scoring path and its score. Ties go to the lower label index.
pub fn viterbi(p: &EmissionMatrix, t: &TransitionMatrix) -> Result<(Vec<usize>, f64)> {
    check_shapes(p, t)?;
    let (n, m) = (p.n(), p.m());
    if n == 0 {
        return Ok((Vec::new(), t.get(t.start(), t.stop())));
    }
    let scores = p.scores();
    let mut delta = Array2::from_elem((n, m), f64::NEG_INFINITY);
    let mut back = Array2::<usize>::zeros((n, m));
    for j in 0..m {
        delta[[0, j]] = t.get(t.start(), j) + scores[[0, j]];
    }
    for pos in 1..n {
        for j in 0..m {
            let mut best = (f64::NEG_INFINITY, 0);
            for i in 0..m {
                let v = delta[[pos - 1, i]] + t.get(i, j);
                if v > best.0 {
                    best = (v, i);
                }
            }
            delta[[pos, j]] = best.0 + scores[[pos, j]];
            back[[pos, j]] = best.1;
        }
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for i in 0..m {
        let v = delta[[n - 1, i]] + t.get(i, t.stop());
        if v > best.0 {
            best = (v, i);
        }
    }
    let mut path = vec![best.1; n];
    for pos in (1..n).rev() {
        path[pos - 1] = back[[pos, path[pos]]];
    }
    Ok((path, best.0))
}

/// Gradient of the lattice log-likelihood.
#[derive(Debug, Clone)]
pub struct CrfGradients {
    pub log_likelihood: f64,
    /// `n × m`, w.r.t. the emission scores.
    pub emissions: Array2<f64>,
    /// `(m+2) × (m+2)`, w.r.t. the transition scores; zero at sentinel entries.
    pub transitions: Array2<f64>,
}

fn expected_counts(p: &EmissionMatrix, t: &TransitionMatrix, tables: &Tables, sign: f64, emissions: &mut Array2<f64>, transitions: &mut Array2<f64>) {
    let (n, m) = (p.n(), p.m());
    if n == 0 {
        transitions[[t.start(), t.stop()]] += sign;
        return;
    }
    let marg = marginals_from(tables, n, m);
    emissions.scaled_add(sign, &marg);
    for j in 0..m {
        transitions[[t.start(), j]] += sign * marg[[0, j]];
        transitions[[j, t.stop()]] += sign * marg[[n - 1, j]];
    }
    let scores = p.scores();
    for pos in 1..n {
        for i in 0..m {
            let a = tables.alpha[[pos - 1, i]];
            if is_impossible(a) {
                continue;
            }
            for j in 0..m {
                let (tr, b) = (t.get(i, j), tables.beta[[pos, j]]);
                if is_impossible(tr) || is_impossible(b) || is_impossible(tables.alpha[[pos, j]]) {
                    continue;
                }
                transitions[[i, j]] += sign * (a + tr + scores[[pos, j]] + b - tables.log_z).exp();
            }
        }
    }
}

/// Lattice-restricted expected feature counts minus full expected counts.
/// A single-path lattice gives the ordinary sequence log-likelihood gradient.
pub fn crf_gradients(p: &EmissionMatrix, t: &TransitionMatrix, lattice: &TagLattice) -> Result<CrfGradients> {
    check_shapes(p, t)?;
    check_lattice(p, lattice)?;
    let constrained = forward_backward(p, t, Some(lattice));
    if is_impossible(constrained.log_z) {
        return Err(Error::InfeasibleLattice);
    }
    let full = forward_backward(p, t, None);
    let k = t.m() + 2;
    let mut emissions = Array2::zeros((p.n(), p.m()));
    let mut transitions = Array2::zeros((k, k));
    expected_counts(p, t, &constrained, 1.0, &mut emissions, &mut transitions);
    expected_counts(p, t, &full, -1.0, &mut emissions, &mut transitions);
    Ok(CrfGradients {
        log_likelihood: constrained.log_z - full.log_z,
        emissions,
        transitions,
    })
}
