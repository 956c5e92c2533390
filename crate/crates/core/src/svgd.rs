//! Stein variational update of the Pareto set model.
//!
//! `K` preferences are decoded by the model into particles `F_i` (surrogate
//! objective vectors). The parameter direction is
//!
//! ```text
//! (1/K) Σ_i Σ_j [ k(F_i, F_j)·∇_θ g(F_i | r_i) + α·∇_θ k(F_i, F_j) ]
//! ```
//!
//! where `∇_θ k` differentiates through the first argument only (the partner
//! `F_j` is held fixed) and is chained through the surrogate and the network
//! at particle `i`. Descending along this direction lowers every particle's
//! Chebyshev value while the kernel-gradient term pushes particles apart.
//!
//! Two kernels are available: the global Gaussian kernel on the full
//! objective vector, and the local kernel, which for row `i` only compares
//! the objective that attains particle `i`'s Chebyshev maximum. Bandwidths
//! follow the median heuristic and are recomputed for every particle set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::Surrogate;
use crate::model::{pull_back, ForwardCache, ParetoSetModel};
use crate::par::{add_assign, Execution};
use crate::scalarize::{chebyshev, chebyshev_grad, Preference};

/// Smallest kernel bandwidth.
pub const BANDWIDTH_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Local,
    Global,
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KernelKind::Local => "local",
            KernelKind::Global => "global",
        })
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(Self::Local),
            "global" => Ok(Self::Global),
            other => Err(Error::Argument(format!("unknown kernel `{other}`"))),
        }
    }
}

/// Kernel values and their gradients w.r.t. the row particle.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    /// `values[i][j] = k(F_i, F_j)`.
    pub values: Vec<Vec<f64>>,
    /// `grads[i][j] = ∂k(F_i, F_j)/∂F_i`, length `m`.
    pub grads: Vec<Vec<Vec<f64>>>,
    /// Bandwidth per objective (one shared value for the global kernel).
    pub bandwidths: Vec<f64>,
}

impl KernelMatrix {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Median of a non-empty list (mean of the middle pair for even lengths).
fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn median_bandwidth(dists: Vec<f64>) -> f64 {
    if dists.is_empty() {
        return 1.0;
    }
    median(dists).max(BANDWIDTH_FLOOR)
}

/// Median of the pairwise Euclidean distances.
pub fn global_bandwidth(fs: &[Vec<f64>]) -> f64 {
    let mut d = Vec::with_capacity(fs.len() * fs.len().saturating_sub(1) / 2);
    for i in 0..fs.len() {
        for j in i + 1..fs.len() {
            d.push(sq_dist(&fs[i], &fs[j]).sqrt());
        }
    }
    median_bandwidth(d)
}

/// Per-objective medians of the pairwise absolute differences.
pub fn local_bandwidths(fs: &[Vec<f64>]) -> Vec<f64> {
    let m = fs.first().map_or(0, Vec::len);
    (0..m)
        .map(|a| {
            let mut d = Vec::new();
            for i in 0..fs.len() {
                for j in i + 1..fs.len() {
                    d.push((fs[i][a] - fs[j][a]).abs());
                }
            }
            median_bandwidth(d)
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Gaussian kernel on full objective vectors with bandwidth `c`.
pub fn global_kernel_with(fs: &[Vec<f64>], c: f64) -> KernelMatrix {
    let k = fs.len();
    let inv = 1.0 / (c * c);
    let mut values = vec![vec![0.0; k]; k];
    let mut grads = vec![vec![Vec::new(); k]; k];
    for i in 0..k {
        for j in 0..k {
            let v = (-0.5 * sq_dist(&fs[i], &fs[j]) * inv).exp();
            values[i][j] = v;
            grads[i][j] = fs[i].iter().zip(&fs[j]).map(|(a, b)| -(a - b) * inv * v).collect();
        }
    }
    KernelMatrix {
        values,
        grads,
        bandwidths: vec![c],
    }
}

/// Global Gaussian kernel with the median-heuristic bandwidth.
pub fn global_kernel(fs: &[Vec<f64>]) -> KernelMatrix {
    global_kernel_with(fs, global_bandwidth(fs))
}

/// Local kernel with explicit per-objective bandwidths: row `i` compares
/// only objective `a = argmax[i]`, `k = exp(−(F_i[a] − F_j[a])² / (2c_a²))`.
pub fn local_kernel_with(fs: &[Vec<f64>], argmax: &[usize], bandwidths: &[f64]) -> KernelMatrix {
    let k = fs.len();
    let m = fs.first().map_or(0, Vec::len);
    let mut values = vec![vec![0.0; k]; k];
    let mut grads = vec![vec![vec![0.0; m]; k]; k];
    for i in 0..k {
        let a = argmax[i];
        let inv = 1.0 / (bandwidths[a] * bandwidths[a]);
        for j in 0..k {
            let d = fs[i][a] - fs[j][a];
            let v = (-0.5 * d * d * inv).exp();
            values[i][j] = v;
            grads[i][j][a] = -d * inv * v;
        }
    }
    KernelMatrix {
        values,
        grads,
        bandwidths: bandwidths.to_vec(),
    }
}

/// Local kernel with median-heuristic bandwidths per objective.
pub fn local_kernel(fs: &[Vec<f64>], argmax: &[usize]) -> KernelMatrix {
    local_kernel_with(fs, argmax, &local_bandwidths(fs))
}

struct Trace {
    cache: ForwardCache,
    jacobian: Vec<Vec<f64>>,
}

/// `K` decoded preferences with everything needed for one update.
pub struct ParticleSet {
    pub prefs: Vec<Preference>,
    pub xs: Vec<Vec<f64>>,
    /// Surrogate objective vectors (the particles).
    pub fs: Vec<Vec<f64>>,
    pub argmax: Vec<usize>,
    pub g_values: Vec<f64>,
    /// `∂g(F_i | r_i)/∂F_i` along the argmax branch.
    pub dg_df: Vec<Vec<f64>>,
    /// `∇_θ g(F_i | r_i)`; empty unless requested at evaluation.
    pub g_grads: Vec<Vec<f64>>,
    traces: Vec<Trace>,
}

impl ParticleSet {
    pub fn evaluate<S: Surrogate + ?Sized>(
        model: &ParetoSetModel,
        prefs: Vec<Preference>,
        surrogate: &S,
        z: &[f64],
        with_param_grads: bool,
        exec: Execution,
    ) -> Self {
        let evaluated = exec.map_slice(&prefs, |r| {
            let (x, cache) = model.forward_cached(r);
            let (f, jacobian) = surrogate.values_and_jacobian(&x);
            let (g, a) = chebyshev(&f, r, z);
            let dg = chebyshev_grad(&f, r, z, a);
            let grad = with_param_grads.then(|| model.backward(&cache, &pull_back(&jacobian, &dg)));
            (x, f, a, g, dg, grad, Trace { cache, jacobian })
        });
        let mut set = ParticleSet {
            prefs,
            xs: Vec::new(),
            fs: Vec::new(),
            argmax: Vec::new(),
            g_values: Vec::new(),
            dg_df: Vec::new(),
            g_grads: Vec::new(),
            traces: Vec::new(),
        };
        for (x, f, a, g, dg, grad, trace) in evaluated {
            set.xs.push(x);
            set.fs.push(f);
            set.argmax.push(a);
            set.g_values.push(g);
            set.dg_df.push(dg);
            set.g_grads.extend(grad);
            set.traces.push(trace);
        }
        set
    }

    pub fn len(&self) -> usize {
        self.prefs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefs.is_empty()
    }

    /// Recomputes the Chebyshev values and branches against a new ideal
    /// point, keeping the decoded particles. Parameter gradients, if present,
    /// are dropped.
    pub fn rescalarize(&mut self, z: &[f64]) {
        for i in 0..self.len() {
            let (g, a) = chebyshev(&self.fs[i], &self.prefs[i], z);
            self.g_values[i] = g;
            self.argmax[i] = a;
            self.dg_df[i] = chebyshev_grad(&self.fs[i], &self.prefs[i], z, a);
        }
        self.g_grads.clear();
    }

    pub fn kernel(&self, kind: KernelKind) -> KernelMatrix {
        match kind {
            KernelKind::Global => global_kernel(&self.fs),
            KernelKind::Local => local_kernel(&self.fs, &self.argmax),
        }
    }

    /// Chains an objective-space vector `u` at particle `i` back to θ:
    /// `(∂F_i/∂θ)ᵀ u`.
    pub fn pull_back(&self, model: &ParetoSetModel, i: usize, u: &[f64]) -> Vec<f64> {
        let t = &self.traces[i];
        model.backward(&t.cache, &pull_back(&t.jacobian, u))
    }
}

fn check_finite(kernel: &KernelMatrix) -> Result<()> {
    for (i, (row, grow)) in kernel.values.iter().zip(&kernel.grads).enumerate() {
        for (j, (v, g)) in row.iter().zip(grow).enumerate() {
            if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NumericalFailure(format!(
                    "non-finite kernel entry for particle pair ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Summed kernel gradient `Σ_j ∂k(F_i, F_j)/∂F_i` for row `i`.
fn repulsion(kernel: &KernelMatrix, i: usize) -> Vec<f64> {
    let m = kernel.grads[i].first().map_or(0, Vec::len);
    let mut s = vec![0.0; m];
    for g in &kernel.grads[i] {
        add_assign(&mut s, g);
    }
    s
}

/// The update direction assembled from per-particle parameter gradients
/// (`particles.g_grads`) and a pull-back operator for the kernel term.
pub fn svh_gradient<F>(
    particles: &ParticleSet,
    kernel: &KernelMatrix,
    alpha: f64,
    pull: F,
    exec: Execution,
) -> Result<Vec<f64>>
where
    F: Fn(usize, &[f64]) -> Vec<f64> + Sync + Send,
{
    let k = particles.len();
    if particles.g_grads.len() != k || kernel.len() != k {
        return Err(Error::Argument(
            "particle set needs parameter gradients and a matching kernel".into(),
        ));
    }
    check_finite(kernel)?;
    let terms = exec.map_range(k, |i| {
        let weight: f64 = kernel.values[i].iter().sum();
        let mut t: Vec<f64> = particles.g_grads[i].iter().map(|g| weight * g).collect();
        if alpha != 0.0 {
            let rep = pull(i, &repulsion(kernel, i));
            for (a, b) in t.iter_mut().zip(&rep) {
                *a += alpha * b;
            }
        }
        t
    });
    reduce(terms, k)
}

/// Same direction as [`svh_gradient`], but with a single reverse pass per
/// particle: the driving and kernel terms are combined in objective space
/// before being pulled back to θ.
pub fn svh_gradient_fused(
    particles: &ParticleSet,
    kernel: &KernelMatrix,
    alpha: f64,
    model: &ParetoSetModel,
    exec: Execution,
) -> Result<Vec<f64>> {
    let k = particles.len();
    if kernel.len() != k {
        return Err(Error::Argument("kernel does not match particle set".into()));
    }
    check_finite(kernel)?;
    let terms = exec.map_range(k, |i| {
        let weight: f64 = kernel.values[i].iter().sum();
        let rep = repulsion(kernel, i);
        let u: Vec<f64> = particles.dg_df[i]
            .iter()
            .zip(&rep)
            .map(|(d, r)| weight * d + alpha * r)
            .collect();
        particles.pull_back(model, i, &u)
    });
    reduce(terms, k)
}

fn reduce(terms: Vec<Vec<f64>>, k: usize) -> Result<Vec<f64>> {
    let mut iter = terms.into_iter();
    let mut total = iter
        .next()
        .ok_or_else(|| Error::Argument("empty particle set".into()))?;
    for t in iter {
        add_assign(&mut total, &t);
    }
    let scale = 1.0 / k as f64;
    total.iter_mut().for_each(|v| *v *= scale);
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_fs(rng: &mut ChaCha8Rng, k: usize, m: usize) -> Vec<Vec<f64>> {
        (0..k).map(|_| (0..m).map(|_| rng.random_range(-1.0..2.0)).collect()).collect()
    }

    #[test]
    fn global_kernel_examples() {
        let same = global_kernel(&[vec![0.3, 0.4], vec![0.3, 0.4]]);
        assert_eq!(same.values, vec![vec![1.0; 2]; 2]);
        let apart = global_kernel(&[vec![0.0, 0.0], vec![3.0, 4.0]]);
        assert_eq!(apart.bandwidths, vec![5.0]);
        assert!((apart.values[0][1] - (-0.5f64).exp()).abs() < 1e-15);
        assert!((apart.values[0][1] - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn global_kernel_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fs = rand_fs(&mut rng, 5, 2);
        let c = global_bandwidth(&fs);
        let km = global_kernel_with(&fs, c);
        let h = 1e-6;
        for i in 0..5 {
            for j in 0..5 {
                for d in 0..2 {
                    let mut a = fs.clone();
                    let mut b = fs.clone();
                    a[i][d] += h;
                    b[i][d] -= h;
                    // Holding the partner fixed: only the (i, j) entry with j's copy untouched.
                    let ka = (-0.5 * sq_dist(&a[i], &fs[j]) / (c * c)).exp();
                    let kb = (-0.5 * sq_dist(&b[i], &fs[j]) / (c * c)).exp();
                    let fd = (ka - kb) / (2.0 * h);
                    let g = km.grads[i][j][d];
                    assert!((g - fd).abs() <= 1e-6 * g.abs().max(fd.abs()).max(1e-8), "{g} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn local_kernel_examples() {
        let flat = local_kernel(&[vec![1.0, 0.0], vec![1.0, 5.0], vec![1.0, 2.0]], &[0, 0, 0]);
        assert_eq!(flat.values, vec![vec![1.0; 3]; 3]);

        let km = local_kernel(&[vec![0.0, 5.0], vec![3.0, 5.0]], &[0, 1]);
        assert!((km.values[0][1] - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(km.values[1][0], 1.0);
        assert_ne!(km.values[0][1], km.values[1][0]);
        assert_eq!(km.grads[1][0], vec![0.0, 0.0]);
        // F_0 below F_1 on the compared axis: moving F_0 up raises k.
        assert!(km.grads[0][1][0] > 0.0 && km.grads[0][1][1] == 0.0);
    }

    #[test]
    fn local_kernel_gradient_is_sparse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let fs = rand_fs(&mut rng, 6, 3);
            let argmax: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
            let km = local_kernel(&fs, &argmax);
            for i in 0..6 {
                for j in 0..6 {
                    assert!((0.0..=1.0).contains(&km.values[i][j]));
                    for d in 0..3 {
                        if d != argmax[i] {
                            assert_eq!(km.grads[i][j][d], 0.0);
                        }
                    }
                }
            }
        }
    }

    /// Jacobi eigenvalues of a small symmetric matrix.
    fn min_eigenvalue(mut a: Vec<Vec<f64>>) -> f64 {
        let n = a.len();
        for _ in 0..200 {
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-15 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[i][i]).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn global_kernel_is_psd_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let fs = rand_fs(&mut rng, 8, 2);
            let km = global_kernel(&fs);
            for i in 0..8 {
                assert_eq!(km.values[i][i], 1.0);
                for j in 0..8 {
                    assert_eq!(km.values[i][j], km.values[j][i]);
                }
            }
            assert!(min_eigenvalue(km.values.clone()) >= -1e-8);
        }
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(global_bandwidth(&[vec![1.0, 1.0]]), 1.0);
        assert_eq!(global_bandwidth(&[vec![1.0, 1.0], vec![1.0, 1.0]]), BANDWIDTH_FLOOR);
    }

    /// Parameters are the particle positions themselves (θ = [F_0, F_1]),
    /// so the pull-back places an objective-space vector into block i.
    #[test]
    fn kernel_term_pushes_particles_apart() {
        for kind in [KernelKind::Global, KernelKind::Local] {
            let fs = vec![vec![0.50, 0.50], vec![0.52, 0.49]];
            let prefs = vec![Preference::new(vec![0.5, 0.5]).unwrap(); 2];
            let set = ParticleSet {
                prefs,
                xs: fs.clone(),
                fs: fs.clone(),
                argmax: vec![0, 0],
                g_values: vec![0.0; 2],
                dg_df: vec![vec![0.0; 2]; 2],
                g_grads: vec![vec![0.0; 4]; 2],
                traces: Vec::new(),
            };
            let km = set.kernel(kind);
            let pull = |i: usize, u: &[f64]| {
                let mut g = vec![0.0; 4];
                g[2 * i..2 * i + 2].copy_from_slice(u);
                g
            };
            let dir = svh_gradient(&set, &km, 0.1, pull, Execution::Sequential).unwrap();
            let step = 0.05;
            let moved: Vec<Vec<f64>> = (0..2)
                .map(|i| (0..2).map(|d| fs[i][d] - step * dir[2 * i + d]).collect())
                .collect();
            assert!(sq_dist(&moved[0], &moved[1]) > sq_dist(&fs[0], &fs[1]), "{kind}");
        }
    }
}
