//! Exact Gaussian-process surrogates.
//!
//! One GP per objective, isotropic squared-exponential kernel
//! `σ²·exp(−‖x − x'‖² / (2ℓ²))` on inputs normalized to the unit cube and
//! targets standardized per fit. Hyperparameters maximize the log marginal
//! likelihood by bounded multi-start gradient ascent in log space.
//!
//! The composite surrogate used downstream is the lower confidence bound
//! `μ̂(x) − λ·σ̂(x)`, with analytic input gradients.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;

/// Posterior variance floor in standardized units.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Extra diagonal jitter tried, in order, when a factorization fails.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-8, 1e-6, 1e-4];

const LENGTHSCALE_BOUNDS: (f64, f64) = (1e-2, 10.0);
const SIGNAL_BOUNDS: (f64, f64) = (1e-3, 10.0);
const NOISE_BOUNDS: (f64, f64) = (1e-6, 1e-1);

const FIT_STEPS: usize = 64;
const FIT_STEP_SIZE: f64 = 0.05;
const MAX_HALVINGS: usize = 30;

/// Fixed multi-start points `(ℓ, σ², noise)`.
const STARTS: [(f64, f64, f64); 4] = [
    (0.2, 1.0, 1e-4),
    (0.5, 1.0, 1e-3),
    (1.0, 1.0, 1e-2),
    (3.0, 1.0, 1e-5),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl Hyperparameters {
    fn to_log(self) -> [f64; 3] {
        [
            self.lengthscale.ln(),
            self.signal_variance.ln(),
            self.noise_variance.ln(),
        ]
    }

    fn from_log(p: [f64; 3]) -> Self {
        let clamp = |v: f64, (lo, hi): (f64, f64)| v.exp().clamp(lo, hi);
        Self {
            lengthscale: clamp(p[0], LENGTHSCALE_BOUNDS),
            signal_variance: clamp(p[1], SIGNAL_BOUNDS),
            noise_variance: clamp(p[2], NOISE_BOUNDS),
        }
    }
}

/// Summary of a fit, suitable for run logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub hyperparameters: Hyperparameters,
    pub log_marginal_likelihood: f64,
    pub jitter: f64,
    pub n_train: usize,
}

/// Affine map between a box and the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    lower: Vec<f64>,
    span: Vec<f64>,
}

impl Normalizer {
    pub fn new(lower: &[f64], upper: &[f64]) -> Self {
        Self {
            lower: lower.to_vec(),
            span: lower.iter().zip(upper).map(|(a, b)| b - a).collect(),
        }
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.lower)
            .zip(&self.span)
            .map(|((v, lo), s)| (v - lo) / s)
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.lower)
            .zip(&self.span)
            .map(|((v, lo), s)| lo + v * s)
            .collect()
    }

    /// Chain rule: gradient w.r.t. unit coordinates into original ones.
    pub fn grad_from_unit(&self, g: &mut [f64]) {
        for (v, s) in g.iter_mut().zip(&self.span) {
            *v /= s;
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean and scale used to standardize targets. A zero-variance target
/// vector keeps scale 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardizer {
    pub mean: f64,
    pub scale: f64,
}

impl Standardizer {
    pub fn fit(y: &[f64]) -> Self {
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let scale = if var > 0.0 && var.is_finite() { var.sqrt() } else { 1.0 };
        Self { mean, scale }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.scale
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * self.scale + self.mean
    }
}

/// Posterior mean and standard deviation in target units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrad {
    pub mean: f64,
    pub std: f64,
    pub dmean_dx: Vec<f64>,
    pub dstd_dx: Vec<f64>,
    /// The variance sat on the floor, so `dstd_dx` was zeroed.
    pub at_floor: bool,
}

struct Factor {
    l: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

fn signal_matrix(x: &[Vec<f64>], hyp: &Hyperparameters) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = x.len();
    let inv = 1.0 / (2.0 * hyp.lengthscale * hyp.lengthscale);
    let mut kf = DMatrix::zeros(n, n);
    let mut d2 = DMatrix::zeros(n, n);
    for i in 0..n {
        kf[(i, i)] = hyp.signal_variance;
        for j in 0..i {
            let d = sq_dist(&x[i], &x[j]);
            let k = hyp.signal_variance * (-d * inv).exp();
            kf[(i, j)] = k;
            kf[(j, i)] = k;
            d2[(i, j)] = d;
            d2[(j, i)] = d;
        }
    }
    (kf, d2)
}

fn factorize(kf: &DMatrix<f64>, noise: f64, y: &DVector<f64>) -> Option<Factor> {
    let n = kf.nrows();
    for jitter in JITTER_LADDER {
        let mut k = kf.clone();
        for i in 0..n {
            k[(i, i)] += noise + jitter;
        }
        if let Some(chol) = k.cholesky() {
            let alpha = chol.solve(y);
            return Some(Factor {
                l: chol.unpack(),
                alpha,
                jitter,
            });
        }
    }
    None
}

fn log_marginal(f: &Factor, y: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let logdet: f64 = f.l.diagonal().iter().map(|v| v.ln()).sum();
    -0.5 * y.dot(&f.alpha) - logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

/// Log marginal likelihood and its gradient w.r.t. log hyperparameters.
fn lml_and_grad(x: &[Vec<f64>], y: &DVector<f64>, hyp: &Hyperparameters) -> Option<(f64, [f64; 3])> {
    let (kf, d2) = signal_matrix(x, hyp);
    let f = factorize(&kf, hyp.noise_variance, y)?;
    let lml = log_marginal(&f, y);
    let n = y.len();
    let mut k = kf.clone();
    for i in 0..n {
        k[(i, i)] += hyp.noise_variance + f.jitter;
    }
    let kinv = k.cholesky()?.inverse();
    // W = ααᵀ − K⁻¹; ∂L/∂p = ½ tr(W ∂K/∂p)
    let inv_l2 = 1.0 / (hyp.lengthscale * hyp.lengthscale);
    let mut g = [0.0; 3];
    for i in 0..n {
        for j in 0..n {
            let w = f.alpha[i] * f.alpha[j] - kinv[(i, j)];
            g[0] += w * kf[(i, j)] * d2[(i, j)] * inv_l2;
            g[1] += w * kf[(i, j)];
        }
        g[2] += (f.alpha[i] * f.alpha[i] - kinv[(i, i)]) * hyp.noise_variance;
    }
    for v in g.iter_mut() {
        *v *= 0.5;
    }
    Some((lml, g))
}

fn lml_at(x: &[Vec<f64>], y: &DVector<f64>, hyp: &Hyperparameters) -> f64 {
    let (kf, _) = signal_matrix(x, hyp);
    factorize(&kf, hyp.noise_variance, y).map_or(f64::NEG_INFINITY, |f| log_marginal(&f, y))
}

/// An exact GP on normalized inputs with standardized targets.
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    standardizer: Standardizer,
    hyp: Hyperparameters,
    l: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
    lml: f64,
}

impl std::fmt::Debug for GaussianProcess {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GaussianProcess")
            .field("n_train", &self.x.len())
            .field("hyperparameters", &self.hyp)
            .field("lml", &self.lml)
            .finish()
    }
}

/// Drops earlier rows whose input repeats a later one.
fn dedup_keep_last(x: &[Vec<f64>], y: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut keep = vec![true; x.len()];
    for i in 0..x.len() {
        if x[i + 1..].iter().any(|later| later == &x[i]) {
            keep[i] = false;
        }
    }
    let xs = (0..x.len()).filter(|&i| keep[i]).map(|i| x[i].clone()).collect();
    let ys = (0..x.len()).filter(|&i| keep[i]).map(|i| y[i]).collect();
    (xs, ys)
}

impl GaussianProcess {
    /// Builds a GP with fixed hyperparameters. Inputs must already be in the
    /// unit cube.
    pub fn with_hyperparameters(x: &[Vec<f64>], y: &[f64], hyp: Hyperparameters) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::Argument(format!(
                "need matching non-empty inputs and targets ({} vs {})",
                x.len(),
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite training target".into()));
        }
        let (x, y) = dedup_keep_last(x, y);
        let standardizer = Standardizer::fit(&y);
        let y = DVector::from_iterator(y.len(), y.iter().map(|v| standardizer.forward(*v)));
        let (kf, _) = signal_matrix(&x, &hyp);
        let f = factorize(&kf, hyp.noise_variance, &y).ok_or_else(|| {
            Error::NumericalFailure(format!(
                "Cholesky failed after jitter escalation to {:e} ({} points)",
                JITTER_LADDER[JITTER_LADDER.len() - 1],
                x.len()
            ))
        })?;
        let lml = log_marginal(&f, &y);
        Ok(Self {
            x,
            standardizer,
            hyp,
            l: f.l,
            alpha: f.alpha,
            jitter: f.jitter,
            lml,
        })
    }

    /// Fits hyperparameters by multi-start gradient ascent on the log
    /// marginal likelihood. Needs at least two distinct inputs.
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let (xd, yd) = dedup_keep_last(x, y);
        if xd.len() < 2 {
            return Err(Error::Argument(format!(
                "GP fit needs at least 2 distinct points, got {}",
                xd.len()
            )));
        }
        if yd.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite training target".into()));
        }
        let st = Standardizer::fit(&yd);
        let ys = DVector::from_iterator(yd.len(), yd.iter().map(|v| st.forward(*v)));

        let mut best: Option<(f64, Hyperparameters)> = None;
        for &(l, s, n) in &STARTS {
            let start = Hyperparameters {
                lengthscale: l,
                signal_variance: s,
                noise_variance: n,
            };
            let (hyp, value) = ascend(&xd, &ys, start);
            if value.is_finite() && best.is_none_or(|(b, _)| value > b) {
                best = Some((value, hyp));
            }
        }
        let (_, hyp) = best.ok_or_else(|| {
            Error::NumericalFailure("no multi-start produced a finite marginal likelihood".into())
        })?;
        Self::with_hyperparameters(&xd, &yd, hyp)
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        self.hyp
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    pub fn standardizer(&self) -> Standardizer {
        self.standardizer
    }

    pub fn n_train(&self) -> usize {
        self.x.len()
    }

    pub fn report(&self) -> FitReport {
        FitReport {
            hyperparameters: self.hyp,
            log_marginal_likelihood: self.lml,
            jitter: self.jitter,
            n_train: self.x.len(),
        }
    }

    /// Lower-triangular factor of `K + (noise + jitter)·I`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// The training covariance `K + (noise + jitter)·I`.
    pub fn train_covariance(&self) -> DMatrix<f64> {
        let (mut k, _) = signal_matrix(&self.x, &self.hyp);
        for i in 0..self.x.len() {
            k[(i, i)] += self.hyp.noise_variance + self.jitter;
        }
        k
    }

    fn kvec(&self, x: &[f64]) -> DVector<f64> {
        let inv = 1.0 / (2.0 * self.hyp.lengthscale * self.hyp.lengthscale);
        DVector::from_iterator(
            self.x.len(),
            self.x
                .iter()
                .map(|xi| self.hyp.signal_variance * (-sq_dist(x, xi) * inv).exp()),
        )
    }

    fn latent(&self, k: &DVector<f64>) -> (f64, f64, DVector<f64>) {
        let mean = k.dot(&self.alpha);
        let v = self
            .l
            .solve_lower_triangular(k)
            .expect("Cholesky factor has a positive diagonal");
        let var = self.hyp.signal_variance - v.dot(&v);
        (mean, var, v)
    }

    /// Posterior at a normalized input.
    pub fn posterior(&self, x: &[f64]) -> Posterior {
        let k = self.kvec(x);
        let (mean, var, _) = self.latent(&k);
        Posterior {
            mean: self.standardizer.inverse(mean),
            std: self.standardizer.scale * var.max(VARIANCE_FLOOR).sqrt(),
        }
    }

    /// Posterior and its gradient w.r.t. the normalized input.
    pub fn posterior_grad(&self, x: &[f64]) -> PosteriorGrad {
        let n = x.len();
        let k = self.kvec(x);
        let (mean, var, v) = self.latent(&k);
        let w = self
            .l
            .tr_solve_lower_triangular(&v)
            .expect("Cholesky factor has a positive diagonal");
        let inv_l2 = 1.0 / (self.hyp.lengthscale * self.hyp.lengthscale);
        let mut dmean = vec![0.0; n];
        let mut dvar = vec![0.0; n];
        for (i, xi) in self.x.iter().enumerate() {
            let a = self.alpha[i] * k[i] * inv_l2;
            let b = w[i] * k[i] * inv_l2;
            for d in 0..n {
                let diff = x[d] - xi[d];
                // ∂k_i/∂x_d = −k_i·(x_d − x_id)/ℓ²
                dmean[d] -= a * diff;
                dvar[d] += 2.0 * b * diff;
            }
        }
        let scale = self.standardizer.scale;
        let at_floor = var <= VARIANCE_FLOOR;
        let std_latent = var.max(VARIANCE_FLOOR).sqrt();
        let dstd = if at_floor {
            vec![0.0; n]
        } else {
            dvar.iter().map(|g| scale * g / (2.0 * std_latent)).collect()
        };
        PosteriorGrad {
            mean: self.standardizer.inverse(mean),
            std: scale * std_latent,
            dmean_dx: dmean.iter().map(|g| scale * g).collect(),
            dstd_dx: dstd,
            at_floor,
        }
    }
}

fn ascend(x: &[Vec<f64>], y: &DVector<f64>, start: Hyperparameters) -> (Hyperparameters, f64) {
    let mut p = start.to_log();
    let Some((mut value, mut grad)) = lml_and_grad(x, y, &Hyperparameters::from_log(p)) else {
        return (start, f64::NEG_INFINITY);
    };
    for _ in 0..FIT_STEPS {
        let mut step = FIT_STEP_SIZE;
        let mut moved = false;
        for _ in 0..MAX_HALVINGS {
            let trial_hyp =
                Hyperparameters::from_log([0, 1, 2].map(|i| p[i] + step * grad[i]));
            let trial = trial_hyp.to_log();
            if trial == p {
                break;
            }
            let v = lml_at(x, y, &trial_hyp);
            if v > value {
                p = trial;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
        match lml_and_grad(x, y, &Hyperparameters::from_log(p)) {
            Some((v, g)) => {
                value = v;
                grad = g;
            }
            None => break,
        }
    }
    (Hyperparameters::from_log(p), value)
}

/// A vector-valued surrogate objective with input gradients, in original
/// decision coordinates.
pub trait Surrogate: Sync {
    fn n_obj(&self) -> usize;

    /// Objective values at `x`.
    fn values(&self, x: &[f64]) -> Vec<f64>;

    /// Objective values and the Jacobian (one row per objective).
    fn values_and_jacobian(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>);
}

/// One GP per objective combined into the LCB surrogate `μ̂ − λσ̂`.
pub struct SurrogateBundle {
    gps: Vec<GaussianProcess>,
    lambda: f64,
    normalizer: Normalizer,
    floor_hits: AtomicUsize,
}

impl std::fmt::Debug for SurrogateBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SurrogateBundle")
            .field("gps", &self.gps)
            .field("lambda", &self.lambda)
            .finish()
    }
}

impl SurrogateBundle {
    /// Fits one GP per objective on an archive given in original coordinates.
    pub fn fit(
        xs: &[Vec<f64>],
        ys: &[Vec<f64>],
        lower: &[f64],
        upper: &[f64],
        lambda: f64,
        exec: Execution,
    ) -> Result<Self> {
        let normalizer = Normalizer::new(lower, upper);
        let unit: Vec<Vec<f64>> = xs.iter().map(|x| normalizer.to_unit(x)).collect();
        let m = ys.first().map_or(0, Vec::len);
        let gps = exec
            .map_range(m, |j| {
                let y: Vec<f64> = ys.iter().map(|row| row[j]).collect();
                GaussianProcess::fit(&unit, &y)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(gps, lambda, normalizer)
    }

    pub fn from_parts(gps: Vec<GaussianProcess>, lambda: f64, normalizer: Normalizer) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::Argument(format!("LCB coefficient must be >= 0, got {lambda}")));
        }
        Ok(Self {
            gps,
            lambda,
            normalizer,
            floor_hits: AtomicUsize::new(0),
        })
    }

    pub fn gps(&self) -> &[GaussianProcess] {
        &self.gps
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    /// Number of gradient evaluations that hit the variance floor.
    pub fn floor_hits(&self) -> usize {
        self.floor_hits.load(Ordering::Relaxed)
    }

    /// LCB value of objective `j` at `x` (original coordinates) and its
    /// gradient w.r.t. `x`.
    pub fn lcb(&self, x: &[f64], j: usize) -> (f64, Vec<f64>) {
        let u = self.normalizer.to_unit(x);
        let pg = self.gps[j].posterior_grad(&u);
        if pg.at_floor {
            self.floor_hits.fetch_add(1, Ordering::Relaxed);
        }
        let mut grad: Vec<f64> = pg
            .dmean_dx
            .iter()
            .zip(&pg.dstd_dx)
            .map(|(a, b)| a - self.lambda * b)
            .collect();
        self.normalizer.grad_from_unit(&mut grad);
        (pg.mean - self.lambda * pg.std, grad)
    }

    pub fn lcb_value(&self, x: &[f64], j: usize) -> f64 {
        let p = self.gps[j].posterior(&self.normalizer.to_unit(x));
        p.mean - self.lambda * p.std
    }
}

impl Surrogate for SurrogateBundle {
    fn n_obj(&self) -> usize {
        self.gps.len()
    }

    fn values(&self, x: &[f64]) -> Vec<f64> {
        (0..self.gps.len()).map(|j| self.lcb_value(x, j)).collect()
    }

    fn values_and_jacobian(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        (0..self.gps.len()).map(|j| self.lcb(x, j)).unzip()
    }
}
