//! The Pareto set model: a feed-forward hypernetwork mapping a preference
//! vector to a decision vector inside the problem box, with a hand-written
//! reverse pass and an Adam optimizer over its flat parameter vector.
//!
//! Layout of `theta` (weights row-major, `out × in`):
//! `W1 (h×m) | b1 (h) | W2 (h×h) | b2 (h) | W3 (n×h) | b3 (n)`.
//! Hidden layers use `tanh`; the output is a logistic squash scaled to the box.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gp::Surrogate;
use crate::scalarize::{chebyshev, chebyshev_grad, Preference};

pub const DEFAULT_HIDDEN: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_obj: usize,
    pub hidden: usize,
    pub n_var: usize,
}

struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    end: usize,
}

impl Architecture {
    fn offsets(&self) -> Offsets {
        let (m, h, n) = (self.n_obj, self.hidden, self.n_var);
        let w1 = 0;
        let b1 = w1 + h * m;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + n * h;
        Offsets {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            end: b3 + n,
        }
    }

    pub fn n_params(&self) -> usize {
        self.offsets().end
    }
}

/// Activations kept from a forward pass for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    r: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoSetModel {
    arch: Architecture,
    lower: Vec<f64>,
    upper: Vec<f64>,
    theta: Vec<f64>,
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

fn matvec(w: &[f64], x: &[f64], b: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(cols).zip(b)) {
        *o = bias + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
    }
}

impl ParetoSetModel {
    /// Fan-in scaled uniform hidden layers, zero output layer (so every
    /// preference initially decodes to the box midpoint).
    pub fn new<R: Rng + ?Sized>(arch: Architecture, lower: &[f64], upper: &[f64], rng: &mut R) -> Self {
        assert_eq!(lower.len(), arch.n_var);
        assert_eq!(upper.len(), arch.n_var);
        let o = arch.offsets();
        let mut theta = vec![0.0; o.end];
        let a1 = 1.0 / (arch.n_obj as f64).sqrt();
        for v in &mut theta[o.w1..o.w2] {
            *v = rng.random_range(-a1..a1);
        }
        let a2 = 1.0 / (arch.hidden as f64).sqrt();
        for v in &mut theta[o.w2..o.w3] {
            *v = rng.random_range(-a2..a2);
        }
        Self {
            arch,
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            theta,
        }
    }

    pub fn from_theta(arch: Architecture, lower: &[f64], upper: &[f64], theta: Vec<f64>) -> Self {
        assert_eq!(theta.len(), arch.n_params(), "parameter vector does not match architecture");
        Self {
            arch,
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            theta,
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn forward(&self, r: &Preference) -> Vec<f64> {
        self.forward_cached(r).0
    }

    pub fn forward_cached(&self, r: &Preference) -> (Vec<f64>, ForwardCache) {
        let Architecture { hidden, n_var, .. } = self.arch;
        let o = self.arch.offsets();
        let t = &self.theta;
        let r = r.as_slice().to_vec();
        let mut h1 = vec![0.0; hidden];
        matvec(&t[o.w1..o.b1], &r, &t[o.b1..o.w2], &mut h1);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let mut h2 = vec![0.0; hidden];
        matvec(&t[o.w2..o.b2], &h1, &t[o.b2..o.w3], &mut h2);
        h2.iter_mut().for_each(|v| *v = v.tanh());
        let mut s = vec![0.0; n_var];
        matvec(&t[o.w3..o.b3], &h2, &t[o.b3..o.end], &mut s);
        s.iter_mut().for_each(|v| *v = sigmoid(*v));
        let x = s
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(si, (lo, hi))| {
                let v = lo + (hi - lo) * si;
                if v <= *lo {
                    lo.next_up()
                } else if v >= *hi {
                    hi.next_down()
                } else {
                    v
                }
            })
            .collect();
        (x, ForwardCache { r, h1, h2, s })
    }

    /// Reverse pass: gradient of a scalar loss w.r.t. `theta`, given its
    /// gradient `dx` w.r.t. the decoded decision vector.
    pub fn backward(&self, cache: &ForwardCache, dx: &[f64]) -> Vec<f64> {
        let Architecture { n_obj, hidden, n_var } = self.arch;
        let o = self.arch.offsets();
        let t = &self.theta;
        let mut g = vec![0.0; o.end];

        let da3: Vec<f64> = (0..n_var)
            .map(|k| dx[k] * (self.upper[k] - self.lower[k]) * cache.s[k] * (1.0 - cache.s[k]))
            .collect();
        let mut dh2 = vec![0.0; hidden];
        for k in 0..n_var {
            let row = &t[o.w3 + k * hidden..o.w3 + (k + 1) * hidden];
            let grow = &mut g[o.w3 + k * hidden..o.w3 + (k + 1) * hidden];
            for j in 0..hidden {
                grow[j] = da3[k] * cache.h2[j];
                dh2[j] += row[j] * da3[k];
            }
            g[o.b3 + k] = da3[k];
        }

        let da2: Vec<f64> = dh2
            .iter()
            .zip(&cache.h2)
            .map(|(d, h)| d * (1.0 - h * h))
            .collect();
        let mut dh1 = vec![0.0; hidden];
        for i in 0..hidden {
            let row = &t[o.w2 + i * hidden..o.w2 + (i + 1) * hidden];
            let grow = &mut g[o.w2 + i * hidden..o.w2 + (i + 1) * hidden];
            let d = da2[i];
            for j in 0..hidden {
                grow[j] = d * cache.h1[j];
                dh1[j] += row[j] * d;
            }
            g[o.b2 + i] = d;
        }

        for i in 0..hidden {
            let d = dh1[i] * (1.0 - cache.h1[i] * cache.h1[i]);
            for (j, rj) in cache.r.iter().enumerate() {
                g[o.w1 + i * n_obj + j] = d * rj;
            }
            g[o.b1 + i] = d;
        }
        g
    }
}

/// Output of [`scalarized_grad`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarizedGrad {
    pub g_value: f64,
    pub dtheta: Vec<f64>,
    /// Surrogate objective vector at the decoded solution.
    pub f: Vec<f64>,
    pub argmax: usize,
}

/// Chebyshev value of the surrogate at `h(r|θ)` and its gradient w.r.t. θ,
/// taken along the argmax branch.
pub fn scalarized_grad<S: Surrogate + ?Sized>(
    model: &ParetoSetModel,
    r: &Preference,
    surrogate: &S,
    z: &[f64],
) -> ScalarizedGrad {
    let (x, cache) = model.forward_cached(r);
    let (f, jac) = surrogate.values_and_jacobian(&x);
    let (g_value, argmax) = chebyshev(&f, r, z);
    let dg_df = chebyshev_grad(&f, r, z, argmax);
    let dx = pull_back(&jac, &dg_df);
    ScalarizedGrad {
        g_value,
        dtheta: model.backward(&cache, &dx),
        f,
        argmax,
    }
}

/// `Jᵀu` for a Jacobian stored one row per objective.
pub(crate) fn pull_back(jac: &[Vec<f64>], u: &[f64]) -> Vec<f64> {
    let n = jac.first().map_or(0, Vec::len);
    let mut dx = vec![0.0; n];
    for (row, w) in jac.iter().zip(u) {
        if *w != 0.0 {
            for (d, v) in dx.iter_mut().zip(row) {
                *d += w * v;
            }
        }
    }
    dx
}

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    skipped: u64,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            skipped: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Updates rejected because the gradient was not finite.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Applies one descent step. A gradient with any non-finite entry is
    /// rejected whole; returns whether the step was applied.
    pub fn apply(&mut self, model: &mut ParetoSetModel, grad: &[f64]) -> bool {
        assert_eq!(grad.len(), model.theta.len());
        if grad.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            return false;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in model
            .theta
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
        true
    }
}
