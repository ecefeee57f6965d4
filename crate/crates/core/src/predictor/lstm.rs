//! Bidirectional LSTM with a ReLU + linear regression head, trained from
//! scratch with hand-written backpropagation through time.
//!
//! Both directions process a whole minibatch per time step, so every
//! recurrent product is a small matrix multiply.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::sim_rng;

/// Gate blocks are stored in the order input, forget, cell, output.
const GATES: usize = 4;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One direction of the recurrent layer. Scalar input per step.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub hidden: usize,
    /// `4H` input weights.
    pub w_x: Array1<f64>,
    /// `4H x H` recurrent weights.
    pub w_h: Array2<f64>,
    /// `4H` biases.
    pub b: Array1<f64>,
}

/// Per-step activations of one direction over a batch.
struct CellTrace {
    /// `(B, T)` inputs in processing order.
    xs: Array2<f64>,
    /// `h_0..h_T`, each `(B, H)`, `h_0 = 0`.
    hs: Vec<Array2<f64>>,
    cs: Vec<Array2<f64>>,
    /// Post-activation gates per step, `(B, 4H)`.
    gates: Vec<Array2<f64>>,
}

impl LstmCell {
    fn zeros(hidden: usize) -> Self {
        Self {
            hidden,
            w_x: Array1::zeros(GATES * hidden),
            w_h: Array2::zeros((GATES * hidden, hidden)),
            b: Array1::zeros(GATES * hidden),
        }
    }

    fn random<R: Rng>(hidden: usize, rng: &mut R) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let mut cell = Self::zeros(hidden);
        for w in cell
            .w_x
            .iter_mut()
            .chain(cell.w_h.iter_mut())
            .chain(cell.b.iter_mut())
        {
            *w = rng.gen_range(-k..=k);
        }
        cell
    }

    fn run(&self, xs: Array2<f64>) -> CellTrace {
        let (batch, steps) = xs.dim();
        let h_n = self.hidden;
        let mut hs = vec![Array2::zeros((batch, h_n))];
        let mut cs = vec![Array2::zeros((batch, h_n))];
        let mut gates = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut act = hs[t].dot(&self.w_h.t());
            let x_t = xs.column(t);
            for (mut row, &x) in act.outer_iter_mut().zip(x_t.iter()) {
                Zip::from(&mut row)
                    .and(&self.w_x)
                    .and(&self.b)
                    .for_each(|a, &wx, &b| *a += wx * x + b);
            }
            act.slice_mut(s![.., 0..2 * h_n]).mapv_inplace(sigmoid);
            act.slice_mut(s![.., 2 * h_n..3 * h_n]).mapv_inplace(f64::tanh);
            act.slice_mut(s![.., 3 * h_n..]).mapv_inplace(sigmoid);

            let i = act.slice(s![.., 0..h_n]);
            let f = act.slice(s![.., h_n..2 * h_n]);
            let g = act.slice(s![.., 2 * h_n..3 * h_n]);
            let o = act.slice(s![.., 3 * h_n..]);
            let c = &f * &cs[t] + &i * &g;
            let h = &o * &c.mapv(f64::tanh);
            gates.push(act);
            cs.push(c);
            hs.push(h);
        }
        CellTrace { xs, hs, cs, gates }
    }

    /// Accumulates parameter gradients into `grad` given `dL/dh_T` `(B, H)`.
    fn backward(&self, trace: &CellTrace, dh_last: Array2<f64>, grad: &mut LstmCell) {
        let h_n = self.hidden;
        let batch = dh_last.nrows();
        let mut dh = dh_last;
        let mut dc: Array2<f64> = Array2::zeros((batch, h_n));
        let mut dpre: Array2<f64> = Array2::zeros((batch, GATES * h_n));
        for t in (0..trace.gates.len()).rev() {
            let act = &trace.gates[t];
            let c = &trace.cs[t + 1];
            let c_prev = &trace.cs[t];
            for bi in 0..batch {
                let a = act.row(bi);
                let mut dp = dpre.row_mut(bi);
                for j in 0..h_n {
                    let (i, f, g, o) = (a[j], a[h_n + j], a[2 * h_n + j], a[3 * h_n + j]);
                    let tc = c[[bi, j]].tanh();
                    let d_h = dh[[bi, j]];
                    let d_o = d_h * tc;
                    let d_c = dc[[bi, j]] + d_h * o * (1.0 - tc * tc);
                    dp[j] = d_c * g * i * (1.0 - i);
                    dp[h_n + j] = d_c * c_prev[[bi, j]] * f * (1.0 - f);
                    dp[2 * h_n + j] = d_c * i * (1.0 - g * g);
                    dp[3 * h_n + j] = d_o * o * (1.0 - o);
                    dc[[bi, j]] = d_c * f;
                }
            }
            let x_t = trace.xs.column(t);
            grad.w_x += &dpre.t().dot(&x_t);
            grad.b += &dpre.sum_axis(Axis(0));
            grad.w_h += &dpre.t().dot(&trace.hs[t]);
            dh = dpre.dot(&self.w_h);
        }
    }

    fn param_len(&self) -> usize {
        self.w_x.len() + self.w_h.len() + self.b.len()
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.w_x.iter().chain(self.w_h.iter()).chain(self.b.iter())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w_x
            .iter_mut()
            .chain(self.w_h.iter_mut())
            .chain(self.b.iter_mut())
    }
}

/// Bidirectional LSTM regressor: forward and backward cells over the window,
/// final hidden states concatenated, ReLU, then a linear unit.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmModel {
    pub hidden: usize,
    pub seq_len: usize,
    pub forward: LstmCell,
    pub backward: LstmCell,
    /// `2H` head weights.
    pub head_w: Array1<f64>,
    pub head_b: f64,
}

struct ForwardTrace {
    fwd: CellTrace,
    bwd: CellTrace,
    /// `(B, 2H)` concatenated final hidden states before the ReLU.
    z: Array2<f64>,
    y: Array1<f64>,
}

impl BiLstmModel {
    /// Uniform(-k, k) initialization with `k = 1/sqrt(hidden)`.
    pub fn init(hidden: usize, seq_len: usize, seed: u64) -> Result<Self> {
        Self::check_dims(hidden, seq_len)?;
        let mut rng = sim_rng(seed);
        let forward = LstmCell::random(hidden, &mut rng);
        let backward = LstmCell::random(hidden, &mut rng);
        let k = 1.0 / (hidden as f64).sqrt();
        let head_w = (0..2 * hidden).map(|_| rng.gen_range(-k..=k)).collect();
        let head_b = rng.gen_range(-k..=k);
        Ok(Self {
            hidden,
            seq_len,
            forward,
            backward,
            head_w,
            head_b,
        })
    }

    pub fn zeros(hidden: usize, seq_len: usize) -> Result<Self> {
        Self::check_dims(hidden, seq_len)?;
        Ok(Self {
            hidden,
            seq_len,
            forward: LstmCell::zeros(hidden),
            backward: LstmCell::zeros(hidden),
            head_w: Array1::zeros(2 * hidden),
            head_b: 0.0,
        })
    }

    fn check_dims(hidden: usize, seq_len: usize) -> Result<()> {
        if hidden == 0 {
            return Err(Error::param("hidden_size must be >= 1"));
        }
        if seq_len == 0 {
            return Err(Error::param("sequence length must be >= 1"));
        }
        Ok(())
    }

    pub fn head_input_width(&self) -> usize {
        self.head_w.len()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.seq_len {
            return Err(Error::Shape {
                expected: self.seq_len,
                actual: len,
            });
        }
        Ok(())
    }

    fn trace(&self, xs: ArrayView2<f64>) -> ForwardTrace {
        let fwd = self.forward.run(xs.to_owned());
        let bwd = self.backward.run(xs.slice(s![.., ..;-1]).to_owned());
        let h_n = self.hidden;
        let mut z = Array2::zeros((xs.nrows(), 2 * h_n));
        z.slice_mut(s![.., ..h_n]).assign(fwd.hs.last().unwrap());
        z.slice_mut(s![.., h_n..]).assign(bwd.hs.last().unwrap());
        let y = z.mapv(|v| v.max(0.0)).dot(&self.head_w) + self.head_b;
        ForwardTrace { fwd, bwd, z, y }
    }

    /// Raw (unclamped) scalar prediction for one window.
    pub fn forward(&self, xs: &[f64]) -> Result<f64> {
        self.check_len(xs.len())?;
        let view = ArrayView2::from_shape((1, xs.len()), xs).expect("row view");
        Ok(self.trace(view).y[0])
    }

    /// Predictions for many windows at once.
    pub fn forward_batch(&self, windows: &[&[f64]]) -> Result<Vec<f64>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let xs = self.stack(windows)?;
        Ok(self.trace(xs.view()).y.to_vec())
    }

    fn stack(&self, windows: &[&[f64]]) -> Result<Array2<f64>> {
        let mut xs = Array2::zeros((windows.len(), self.seq_len));
        for (mut row, w) in xs.outer_iter_mut().zip(windows) {
            self.check_len(w.len())?;
            row.assign(&ArrayView1::from(*w));
        }
        Ok(xs)
    }

    /// Mean squared error over `(window, target)` pairs and its gradient with
    /// respect to every parameter.
    pub fn loss_and_grad<'a>(
        &self,
        batch: impl IntoIterator<Item = (&'a [f64], f64)>,
    ) -> Result<(f64, BiLstmModel)> {
        let (windows, targets): (Vec<&[f64]>, Vec<f64>) = batch.into_iter().unzip();
        if windows.is_empty() {
            return Err(Error::InsufficientData("empty batch".into()));
        }
        let xs = self.stack(&windows)?;
        let n = windows.len() as f64;
        let tr = self.trace(xs.view());
        let err = &tr.y - &Array1::from(targets);
        let loss = err.mapv(|e| e * e).sum() / n;

        let h_n = self.hidden;
        let mut grad = BiLstmModel::zeros(h_n, self.seq_len)?;
        let dy = err * (2.0 / n);
        grad.head_b = dy.sum();
        let relu = tr.z.mapv(|v| v.max(0.0));
        grad.head_w = relu.t().dot(&dy);
        let mut dz = Array2::zeros(tr.z.raw_dim());
        Zip::indexed(&mut dz).and(&tr.z).for_each(|(bi, k), d, &z| {
            if z > 0.0 {
                *d = dy[bi] * self.head_w[k];
            }
        });
        self.forward
            .backward(&tr.fwd, dz.slice(s![.., ..h_n]).to_owned(), &mut grad.forward);
        self.backward
            .backward(&tr.bwd, dz.slice(s![.., h_n..]).to_owned(), &mut grad.backward);
        Ok((loss, grad))
    }

    pub fn param_count(&self) -> usize {
        self.forward.param_len() + self.backward.param_len() + self.head_w.len() + 1
    }

    /// All parameters in a fixed order: forward cell, backward cell, head.
    pub fn flatten(&self) -> Vec<f64> {
        self.forward
            .params()
            .chain(self.backward.params())
            .chain(self.head_w.iter())
            .chain(std::iter::once(&self.head_b))
            .copied()
            .collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn assign(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape {
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        let dst = self
            .forward
            .params_mut()
            .chain(self.backward.params_mut())
            .chain(self.head_w.iter_mut())
            .chain(std::iter::once(&mut self.head_b));
        for (d, s) in dst.zip(params) {
            *d = *s;
        }
        Ok(())
    }

    /// Named weight arrays with their shapes, row-major.
    pub fn named_weights(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let h = self.hidden;
        let mut out = Vec::new();
        for (dir, cell) in [("forward", &self.forward), ("backward", &self.backward)] {
            out.push((format!("{dir}.w_x"), vec![GATES * h, 1], cell.w_x.to_vec()));
            out.push((
                format!("{dir}.w_h"),
                vec![GATES * h, h],
                cell.w_h.iter().copied().collect(),
            ));
            out.push((format!("{dir}.b"), vec![GATES * h], cell.b.to_vec()));
        }
        out.push(("head.w".into(), vec![1, 2 * h], self.head_w.to_vec()));
        out.push(("head.b".into(), vec![1], vec![self.head_b]));
        out
    }

    pub fn set_named_weight(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let dst: Box<dyn Iterator<Item = &mut f64>> = match name {
            "forward.w_x" => Box::new(self.forward.w_x.iter_mut()),
            "forward.w_h" => Box::new(self.forward.w_h.iter_mut()),
            "forward.b" => Box::new(self.forward.b.iter_mut()),
            "backward.w_x" => Box::new(self.backward.w_x.iter_mut()),
            "backward.w_h" => Box::new(self.backward.w_h.iter_mut()),
            "backward.b" => Box::new(self.backward.b.iter_mut()),
            "head.w" => Box::new(self.head_w.iter_mut()),
            "head.b" => Box::new(std::iter::once(&mut self.head_b)),
            other => return Err(Error::param(format!("unknown weight `{other}`"))),
        };
        let dst: Vec<&mut f64> = dst.collect();
        if dst.len() != data.len() {
            return Err(Error::Shape {
                expected: dst.len(),
                actual: data.len(),
            });
        }
        for (d, s) in dst.into_iter().zip(data) {
            *d = *s;
        }
        Ok(())
    }
}
