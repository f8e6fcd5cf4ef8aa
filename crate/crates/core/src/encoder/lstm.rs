use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

/// LSTM cell with input, forget and output gates and a tanh candidate
/// (no peepholes). Gate rows are stacked `[i; f; g; o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// `4H × I` input weights.
    pub wx: Array2<f64>,
    /// `4H × H` recurrent weights.
    pub wh: Array2<f64>,
    /// `4H` bias.
    pub b: Array1<f64>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    xs: Array2<f64>,
    /// Activated gates, `T × 4H`.
    gates: Array2<f64>,
    cs: Array2<f64>,
    pub hs: Array2<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Lstm {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Lstm {
            wx: Array2::zeros((4 * hidden, input)),
            wh: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    /// Glorot-uniform weights over fan-in `I + H`, fan-out `4H`; zero bias.
    pub fn glorot<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = (6.0 / ((input + hidden) + 4 * hidden) as f64).sqrt();
        let mut draw = |_| rng.random_range(-bound..=bound);
        Lstm {
            wx: Array2::from_shape_fn((4 * hidden, input), &mut draw),
            wh: Array2::from_shape_fn((4 * hidden, hidden), &mut draw),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.ncols()
    }

    pub fn input(&self) -> usize {
        self.wx.ncols()
    }

    /// Runs the cell over rows of `xs` from a zero state.
    pub fn forward(&self, xs: Array2<f64>) -> LstmTrace {
        let steps = xs.nrows();
        let h = self.hidden();
        let mut gates = xs.dot(&self.wx.t());
        gates += &self.b;
        let mut cs = Array2::<f64>::zeros((steps, h));
        let mut hs = Array2::zeros((steps, h));
        let mut h_prev = Array1::<f64>::zeros(h);
        let mut c_prev = Array1::<f64>::zeros(h);
        for t in 0..steps {
            let rec = self.wh.dot(&h_prev);
            let mut z = gates.row_mut(t);
            z += &rec;
            for k in 0..h {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[h + k]);
                let g = z[2 * h + k].tanh();
                let o = sigmoid(z[3 * h + k]);
                z[k] = i;
                z[h + k] = f;
                z[2 * h + k] = g;
                z[3 * h + k] = o;
                let c = f * c_prev[k] + i * g;
                cs[[t, k]] = c;
                hs[[t, k]] = o * c.tanh();
            }
            h_prev.assign(&hs.row(t));
            c_prev.assign(&cs.row(t));
        }
        LstmTrace { xs, gates, cs, hs }
    }

    /// Back-propagates `dhs` (gradient w.r.t. every hidden state),
    /// accumulating parameter gradients into `grads`. Returns the gradient
    /// w.r.t. the inputs.
    pub fn backward(&self, trace: &LstmTrace, dhs: &Array2<f64>, grads: &mut Lstm) -> Array2<f64> {
        let steps = trace.xs.nrows();
        let h = self.hidden();
        let mut dz = Array2::zeros((steps, 4 * h));
        let mut dh_next = Array1::<f64>::zeros(h);
        let mut dc_next = Array1::<f64>::zeros(h);
        for t in (0..steps).rev() {
            let g = trace.gates.row(t);
            let mut dzt = dz.row_mut(t);
            for k in 0..h {
                let (i, f, cand, o) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                let c = trace.cs[[t, k]];
                let c_prev = if t > 0 { trace.cs[[t - 1, k]] } else { 0.0 };
                let tc = c.tanh();
                let dh = dhs[[t, k]] + dh_next[k];
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                dzt[k] = dc * cand * i * (1.0 - i);
                dzt[h + k] = dc * c_prev * f * (1.0 - f);
                dzt[2 * h + k] = dc * i * (1.0 - cand * cand);
                dzt[3 * h + k] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            dh_next = self.wh.t().dot(&dzt);
        }
        grads.wx += &dz.t().dot(&trace.xs);
        if steps > 1 {
            grads.wh += &dz.slice(s![1.., ..]).t().dot(&trace.hs.slice(s![..steps - 1, ..]));
        }
        grads.b += &dz.sum_axis(Axis(0));
        dz.dot(&self.wx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_step_closed_form() {
        let mut cell = Lstm::zeros(2, 3);
        cell.b = Array1::from_vec(vec![0.2, -0.1, 0.4, 1.0, 0.0, -2.0, 0.3, 0.3, 0.3, -0.5, 0.5, 1.5]);
        let trace = cell.forward(Array2::from_elem((1, 2), 0.7));
        for k in 0..3 {
            let i = sigmoid(cell.b[k]);
            let g = cell.b[6 + k].tanh();
            let o = sigmoid(cell.b[9 + k]);
            let expected = o * (i * g).tanh();
            assert!((trace.hs[[0, k]] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cell = Lstm::glorot(3, 2, &mut rng);
        cell.b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        let xs = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let weights = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
        let loss = |cell: &Lstm, xs: &Array2<f64>| (&cell.forward(xs.clone()).hs * &weights).sum();

        let trace = cell.forward(xs.clone());
        let mut grads = Lstm::zeros(3, 2);
        let dx = cell.backward(&trace, &weights, &mut grads);

        let h = 1e-6;
        let check = |analytic: f64, plus: f64, minus: f64| {
            let fd = (plus - minus) / (2.0 * h);
            assert!((analytic - fd).abs() < 1e-7, "{analytic} vs {fd}");
        };
        for idx in ndarray::indices(cell.wx.dim()) {
            let (mut p, mut m) = (cell.clone(), cell.clone());
            p.wx[idx] += h;
            m.wx[idx] -= h;
            check(grads.wx[idx], loss(&p, &xs), loss(&m, &xs));
        }
        for idx in ndarray::indices(cell.wh.dim()) {
            let (mut p, mut m) = (cell.clone(), cell.clone());
            p.wh[idx] += h;
            m.wh[idx] -= h;
            check(grads.wh[idx], loss(&p, &xs), loss(&m, &xs));
        }
        for k in 0..cell.b.len() {
            let (mut p, mut m) = (cell.clone(), cell.clone());
            p.b[k] += h;
            m.b[k] -= h;
            check(grads.b[k], loss(&p, &xs), loss(&m, &xs));
        }
        for idx in ndarray::indices(xs.dim()) {
            let (mut p, mut m) = (xs.clone(), xs.clone());
            p[idx] += h;
            m[idx] -= h;
            check(dx[idx], loss(&cell, &p), loss(&cell, &m));
        }
    }
}
