//! Chebyshev scalarization, ideal-point tracking and preference sampling.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest preference weight after sampling.
pub const PREFERENCE_FLOOR: f64 = 1e-6;

/// Distance kept between the ideal point and the best observed values.
pub const IDEAL_MARGIN: f64 = 0.1;

/// A point in the open probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Preference(Vec<f64>);

impl Preference {
    pub fn new(r: Vec<f64>) -> Result<Self> {
        let sum: f64 = r.iter().sum();
        if r.len() < 2 || r.iter().any(|v| !(*v > 0.0)) || (sum - 1.0).abs() >= 1e-9 {
            return Err(Error::Argument(format!("{r:?} is not a valid preference vector")));
        }
        Ok(Self(r))
    }

    /// Clamps every entry to at least [`PREFERENCE_FLOOR`] and renormalizes.
    pub fn clamped(mut r: Vec<f64>) -> Self {
        for v in r.iter_mut() {
            if !(*v >= PREFERENCE_FLOOR) {
                *v = PREFERENCE_FLOOR;
            }
        }
        let s: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= s);
        Self(r)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `count` draws from the flat Dirichlet `Dir(1/m, …, 1/m)`.
pub fn sample_preferences<R: Rng + ?Sized>(count: usize, m: usize, rng: &mut R) -> Vec<Preference> {
    assert!(m >= 2, "preferences need at least two objectives");
    let gamma = Gamma::new(1.0 / m as f64, 1.0).expect("positive shape");
    (0..count)
        .map(|_| {
            let mut r: Vec<f64> = (0..m).map(|_| gamma.sample(rng)).collect();
            let s: f64 = r.iter().sum();
            if s > 0.0 && s.is_finite() {
                r.iter_mut().for_each(|v| *v /= s);
            } else {
                r.fill(1.0 / m as f64);
            }
            Preference::clamped(r)
        })
        .collect()
}

/// `max_i r_i·|f_i − z_i|` and the smallest index attaining it.
pub fn chebyshev(f_hat: &[f64], r: &Preference, z: &[f64]) -> (f64, usize) {
    debug_assert_eq!(f_hat.len(), r.len());
    debug_assert_eq!(z.len(), r.len());
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, ((f, w), zi)) in f_hat.iter().zip(r.as_slice()).zip(z).enumerate() {
        let v = w * (f - zi).abs();
        if v > best.0 {
            best = (v, i);
        }
    }
    best
}

/// Subgradient of [`chebyshev`] with respect to `f_hat`, taken along the
/// argmax branch: `r_a·sign(f_a − z_a)·e_a` (sign of zero taken as +1).
pub fn chebyshev_grad(f_hat: &[f64], r: &Preference, z: &[f64], argmax: usize) -> Vec<f64> {
    let mut g = vec![0.0; f_hat.len()];
    let sign = if f_hat[argmax] >= z[argmax] { 1.0 } else { -1.0 };
    g[argmax] = r.as_slice()[argmax] * sign;
    g
}

/// How the ideal point moves during model training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdealMode {
    /// Fixed per outer iteration from observed values.
    Observed,
    /// Additionally lowered to each training step's surrogate predictions
    /// minus [`IDEAL_MARGIN`], so `z*` stays below the surrogate.
    #[default]
    Optimistic,
}

impl std::fmt::Display for IdealMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IdealMode::Observed => "observed",
            IdealMode::Optimistic => "optimistic",
        })
    }
}

/// Lowers `z` so that every row of `predictions` sits at least
/// [`IDEAL_MARGIN`] above it. Returns whether anything moved.
pub fn lower_ideal(z: &mut [f64], predictions: &[Vec<f64>]) -> bool {
    let mut moved = false;
    for p in predictions {
        for (zi, v) in z.iter_mut().zip(p) {
            let t = v - IDEAL_MARGIN;
            if t < *zi {
                *zi = t;
                moved = true;
            }
        }
    }
    moved
}

/// Ideal point `z*`: running componentwise minimum of observed objective
/// values, shifted down by [`IDEAL_MARGIN`].
#[derive(Debug, Clone, PartialEq)]
pub struct IdealPoint {
    best: Vec<f64>,
    z_star: Vec<f64>,
}

impl IdealPoint {
    pub fn from_observations(observations: &[Vec<f64>]) -> Self {
        let m = observations.first().map_or(0, Vec::len);
        let best = vec![f64::INFINITY; m];
        Self {
            z_star: best.clone(),
            best,
        }
        .updated(observations)
    }

    /// The ideal point after folding in `observations`.
    pub fn updated(&self, observations: &[Vec<f64>]) -> Self {
        let mut best = self.best.clone();
        for obs in observations {
            for (b, v) in best.iter_mut().zip(obs) {
                *b = b.min(*v);
            }
        }
        let z_star = best.iter().map(|b| b - IDEAL_MARGIN).collect();
        Self { best, z_star }
    }

    pub fn z_star(&self) -> &[f64] {
        &self.z_star
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pref(r: &[f64]) -> Preference {
        Preference::new(r.to_vec()).unwrap()
    }

    #[test]
    fn dirichlet_marginal_means() {
        for m in [2, 3] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let draws = sample_preferences(100_000, m, &mut rng);
            for k in 0..m {
                let mean = draws.iter().map(|r| r.as_slice()[k]).sum::<f64>() / draws.len() as f64;
                assert!((mean - 1.0 / m as f64).abs() < 0.01, "m={m} k={k} mean={mean}");
            }
            for r in &draws {
                assert!(r.as_slice().iter().all(|v| *v >= PREFERENCE_FLOOR * 0.5));
                assert!((r.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let a = sample_preferences(50, 3, &mut ChaCha8Rng::seed_from_u64(8));
        let b = sample_preferences(50, 3, &mut ChaCha8Rng::seed_from_u64(8));
        assert_eq!(a, b);
    }

    #[test]
    fn chebyshev_examples() {
        let (v, i) = chebyshev(&[0.2, 0.6], &pref(&[0.5, 0.5]), &[0.0, 0.0]);
        assert!((v - 0.3).abs() < 1e-15);
        assert_eq!(i, 1);
        assert_eq!(chebyshev(&[0.4, 0.4], &pref(&[0.5, 0.5]), &[0.0, 0.0]), (0.2, 0));
        let eps = 1e-9;
        let (v, i) = chebyshev(&[0.7, 0.9], &pref(&[1.0 - eps, eps]), &[0.0, 0.0]);
        assert_eq!(i, 0);
        assert!((v - 0.7 * (1.0 - eps)).abs() < 1e-15);
    }

    #[test]
    fn chebyshev_grad_follows_branch_and_sign() {
        let r = pref(&[0.25, 0.75]);
        assert_eq!(chebyshev_grad(&[1.0, 2.0], &r, &[0.0, 0.0], 1), vec![0.0, 0.75]);
        assert_eq!(chebyshev_grad(&[-1.0, 0.0], &r, &[0.0, 0.0], 0), vec![-0.25, 0.0]);
    }

    #[test]
    fn ideal_point_updates() {
        let z = IdealPoint::from_observations(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!((z.z_star()[0] - 0.9).abs() < 1e-15 && (z.z_star()[1] - 0.9).abs() < 1e-15);
        let z2 = z.updated(&[vec![0.5, 3.0]]);
        assert!((z2.z_star()[0] - 0.4).abs() < 1e-15 && (z2.z_star()[1] - 0.9).abs() < 1e-15);
        assert_eq!(z2.updated(&[vec![5.0, 5.0]]), z2);
    }

    #[test]
    fn lowering_keeps_margin_below_predictions() {
        let mut z = vec![0.4, 0.9];
        assert!(!lower_ideal(&mut z, &[vec![0.6, 1.5]]));
        assert_eq!(z, vec![0.4, 0.9]);
        assert!(lower_ideal(&mut z, &[vec![0.6, 0.5], vec![-1.0, 2.0]]));
        assert!((z[0] + 1.1).abs() < 1e-15 && (z[1] - 0.4).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn inputs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
            (2usize..=3).prop_flat_map(|m| {
                (
                    prop::collection::vec(-5.0f64..5.0, m),
                    prop::collection::vec(0.01f64..1.0, m),
                    prop::collection::vec(-5.0f64..5.0, m),
                )
            })
        }

        proptest! {
            #[test]
            fn non_negative_and_scale_covariant((f, w, z) in inputs(), c in 0.1f64..10.0) {
                let s: f64 = w.iter().sum();
                let r = Preference::new(w.iter().map(|v| v / s).collect()).unwrap();
                let (v, i) = chebyshev(&f, &r, &z);
                prop_assert!(v >= 0.0);
                if f != z { prop_assert!(v > 0.0); }
                // Scaling the weights directly (the scaled vector is no longer a preference).
                let scaled: Vec<f64> = r.as_slice().iter().map(|x| x * c).collect();
                let mut best = (f64::NEG_INFINITY, 0);
                for k in 0..f.len() {
                    let t = scaled[k] * (f[k] - z[k]).abs();
                    if t > best.0 { best = (t, k); }
                }
                prop_assert!((best.0 - c * v).abs() <= 1e-12 * (1.0 + c * v));
                prop_assert_eq!(best.1, i);
            }

            #[test]
            fn monotone_above_ideal((f, w, z) in inputs(), k in 0usize..3, bump in 0.0f64..3.0) {
                let s: f64 = w.iter().sum();
                let r = Preference::new(w.iter().map(|v| v / s).collect()).unwrap();
                let k = k % f.len();
                let f: Vec<f64> = f.iter().zip(&z).map(|(a, b)| a.max(*b)).collect();
                let mut g = f.clone();
                g[k] += bump;
                prop_assert!(chebyshev(&g, &r, &z).0 >= chebyshev(&f, &r, &z).0);
            }
        }
    }
}
