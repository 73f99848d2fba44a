//! Small fully connected networks with hand-written backpropagation.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::MarlError;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `inputs x outputs`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Tanh hidden layers, linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Layer activations kept for the backward pass; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct Tape {
    acts: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "a network needs input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| Dense { w: Array2::zeros((w[0], w[1])), b: Array1::zeros(w[1]) })
            .collect();
        Self { layers }
    }

    /// Glorot-uniform weights, zero biases; the output layer is scaled by
    /// `output_gain`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let last = net.layers.len() - 1;
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let (fan_in, fan_out) = layer.w.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() * if i == last { output_gain } else { 1.0 };
            layer.w.mapv_inplace(|_| rng.random_range(-limit..=limit));
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].w.ncols()
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.w.ncols())).collect()
    }

    pub fn check_input(&self, x: &ArrayView2<f64>) -> Result<(), MarlError> {
        if x.ncols() == self.input_dim() {
            Ok(())
        } else {
            Err(MarlError::Shape { expected: self.input_dim(), got: x.ncols() })
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_tape(x).0
    }

    pub fn forward_tape(&self, x: ArrayView2<f64>) -> (Array2<f64>, Tape) {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.w);
            z += &layer.b;
            if i < last {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(a);
            a = z;
        }
        (a, Tape { acts })
    }

    /// Gradient of a scalar loss given its gradient w.r.t. the outputs.
    pub fn backward(&self, tape: &Tape, grad_out: Array2<f64>) -> Mlp {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &tape.acts[i];
            let dw = input.t().dot(&g);
            let db = g.sum_axis(Axis(0));
            if i > 0 {
                let mut back = g.dot(&layer.w.t());
                back.zip_mut_with(input, |gb, &a| *gb *= 1.0 - a * a);
                g = back;
            }
            grads.push(Dense { w: dw, b: db });
        }
        grads.reverse();
        Mlp { layers: grads }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count());
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|p| *p = it.next().unwrap());
            l.b.iter_mut().for_each(|p| *p = it.next().unwrap());
        }
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.w *= k;
            l.b *= k;
        }
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, other: &Mlp, k: f64) {
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            l.w.scaled_add(k, &o.w);
            l.b.scaled_add(k, &o.b);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.layers.iter().map(|l| l.w.iter().chain(l.b.iter()).map(|x| x * x).sum::<f64>()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|x| x.is_finite()))
    }

    pub fn zeros_like(&self) -> Mlp {
        Mlp::zeros(&self.sizes())
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|z| (z - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// Plain SGD with heavy-ball momentum: `v = mu v + g; p -= lr v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Momentum {
    pub lr: f64,
    pub mu: f64,
    velocity: Mlp,
}

impl Momentum {
    pub fn new(like: &Mlp, lr: f64, mu: f64) -> Self {
        Self { lr, mu, velocity: like.zeros_like() }
    }

    pub fn step(&mut self, params: &mut Mlp, grad: &Mlp) {
        self.velocity.scale(self.mu);
        self.velocity.add_scaled(grad, 1.0);
        params.add_scaled(&self.velocity, -self.lr);
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Mlp,
    v: Mlp,
    t: i32,
}

impl Adam {
    pub fn new(like: &Mlp, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: like.zeros_like(), v: like.zeros_like(), t: 0 }
    }

    pub fn step(&mut self, params: &mut Mlp, grad: &Mlp) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.layers.iter_mut().zip(&grad.layers).zip(&mut self.m.layers).zip(&mut self.v.layers) {
            let pairs = p.w.iter_mut().chain(p.b.iter_mut());
            let gs = g.w.iter().chain(g.b.iter());
            let ms = m.w.iter_mut().chain(m.b.iter_mut());
            let vs = v.w.iter_mut().chain(v.b.iter_mut());
            for (((p, g), m), v) in pairs.zip(gs).zip(ms).zip(vs) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Momentum,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(Adam),
    Momentum(Momentum),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, like: &Mlp, lr: f64, momentum: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(like, lr)),
            OptimizerKind::Momentum => Optimizer::Momentum(Momentum::new(like, lr, momentum)),
        }
    }

    pub fn step(&mut self, params: &mut Mlp, grad: &Mlp) {
        match self {
            Optimizer::Adam(o) => o.step(params, grad),
            Optimizer::Momentum(o) => o.step(params, grad),
        }
    }
}
