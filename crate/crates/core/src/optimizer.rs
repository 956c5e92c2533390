//! The outer Bayesian optimization loop.
//!
//! Each iteration refits one GP per objective on the archive, trains the
//! Pareto set model for `T` Stein variational steps against the LCB
//! surrogate, decodes `B` random preferences into candidates, picks a batch
//! of `b` by greedy hypervolume improvement and evaluates it.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::design::sobol_design;
use crate::error::{Error, Result};
use crate::gp::{FitReport, Surrogate, SurrogateBundle};
use crate::hypervolume::{self, greedy_select, non_dominated, FrontSet};
use crate::metrics::lhd_from_hv;
use crate::model::{Adam, Architecture, ParetoSetModel, DEFAULT_HIDDEN};
use crate::par::Execution;
use crate::problem::{inflated_nadir, Problem};
use crate::rng::{child_rng, Stream};
use crate::scalarize::{chebyshev, lower_ideal, sample_preferences, IdealMode, IdealPoint, Preference};
use crate::svgd::{svh_gradient_fused, KernelKind, ParticleSet};

/// Inner-loss trace sampling period, in inner steps.
pub const LOSS_EVERY: usize = 25;

/// Candidates closer than this (in unit-cube distance) to an archived
/// decision vector are dropped before selection.
pub const DUPLICATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Builtin name or problem-spec label.
    pub problem: String,
    pub seed: u64,
    pub n_init: usize,
    /// Outer iterations `N`.
    pub iterations: usize,
    /// Inner training steps `T` per iteration.
    pub inner_steps: usize,
    /// Particles `K` per inner step.
    pub particles: usize,
    /// Candidate preferences `B` per iteration.
    pub candidates: usize,
    /// Batch size `b`.
    pub batch: usize,
    pub alpha: f64,
    pub lcb_lambda: f64,
    pub kernel: KernelKind,
    #[serde(default)]
    pub ideal: IdealMode,
    /// Adam learning rate `ξ`.
    pub learning_rate: f64,
    pub hidden: usize,
    /// Hypervolume reference point for LHD; defaults to the problem's.
    pub ref_point: Option<Vec<f64>>,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: "zdt1".into(),
            seed: 0,
            n_init: 20,
            iterations: 20,
            inner_steps: 250,
            particles: 10,
            candidates: 1000,
            batch: 5,
            alpha: 0.1,
            lcb_lambda: 2.0,
            kernel: KernelKind::Local,
            ideal: IdealMode::Optimistic,
            learning_rate: 1e-3,
            hidden: DEFAULT_HIDDEN,
            ref_point: None,
            execution: Execution::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_init", self.n_init),
            ("inner_steps", self.inner_steps),
            ("particles", self.particles),
            ("candidates", self.candidates),
            ("batch", self.batch),
            ("hidden", self.hidden),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Argument(format!("{name} must be positive")));
        }
        if self.n_init < 2 {
            return Err(Error::Argument("n_init must be at least 2".into()));
        }
        if self.batch > self.candidates {
            return Err(Error::Argument(format!(
                "batch ({}) exceeds candidates ({})",
                self.batch, self.candidates
            )));
        }
        if !(self.alpha >= 0.0) || !(self.lcb_lambda >= 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Argument(
                "alpha and lambda must be >= 0 and the learning rate > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Initial,
    Iteration(usize),
}

/// Every expensive evaluation of a run, in order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Archive {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
    pub provenance: Vec<Provenance>,
}

impl Archive {
    pub fn push(&mut self, x: Vec<f64>, y: Vec<f64>, tag: Provenance) {
        self.xs.push(x);
        self.ys.push(y);
        self.provenance.push(tag);
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn front(&self) -> FrontSet {
        non_dominated(&self.ys)
    }
}

/// `n_init` scrambled Sobol' points in the box, evaluated.
pub fn initial_design(problem: &Problem, n_init: usize, seed: u64) -> Result<Archive> {
    if n_init < 2 {
        return Err(Error::Argument("n_init must be at least 2".into()));
    }
    let mut archive = Archive::default();
    for x in sobol_design(problem.lower(), problem.upper(), n_init, seed) {
        let y = problem.evaluate(&x)?;
        archive.push(x, y, Provenance::Initial);
    }
    Ok(archive)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    /// Mean Chebyshev value over the step's particles.
    pub mean_g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub x: Vec<f64>,
    /// Surrogate prediction at selection time (absent for the initial design).
    pub f_hat: Option<Vec<f64>>,
    pub f: Vec<f64>,
    pub hvi: Option<f64>,
}

/// What happened in one outer iteration. Iteration 0 is the initial design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub gp: Vec<FitReport>,
    pub loss: Vec<LossPoint>,
    pub batch: Vec<BatchEntry>,
    /// Selection reference point.
    pub rho: Vec<f64>,
    /// Ideal point at the end of training.
    pub z_star: Vec<f64>,
    pub skipped_steps: usize,
    pub floor_hits: usize,
    pub excluded_candidates: usize,
    pub evaluations: usize,
    pub archive_hv: Option<f64>,
    pub lhd: Option<f64>,
    pub seconds: f64,
}

/// Result of one inner training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub mean_g: f64,
    pub applied: bool,
}

/// One Stein variational update of `model` on the preferences `prefs`. In
/// [`IdealMode::Optimistic`] the ideal point `z` is first lowered to the
/// particles' predictions.
#[allow(clippy::too_many_arguments)]
pub fn training_step<S: Surrogate + ?Sized>(
    model: &mut ParetoSetModel,
    adam: &mut Adam,
    surrogate: &S,
    z: &mut [f64],
    ideal: IdealMode,
    prefs: Vec<Preference>,
    kernel: KernelKind,
    alpha: f64,
    exec: Execution,
) -> StepOutcome {
    let mut particles = ParticleSet::evaluate(model, prefs, surrogate, z, false, exec);
    if ideal == IdealMode::Optimistic && lower_ideal(z, &particles.fs) {
        particles.rescalarize(z);
    }
    let mean_g = particles.g_values.iter().sum::<f64>() / particles.len() as f64;
    let km = particles.kernel(kernel);
    let applied = match svh_gradient_fused(&particles, &km, alpha, model, exec) {
        Ok(grad) => adam.apply(model, &grad),
        Err(_) => false,
    };
    StepOutcome { mean_g, applied }
}

/// Reference point and reference-front hypervolume used for LHD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LhdReference {
    pub rho: Vec<f64>,
    pub reference_hv: f64,
}

/// Loop state: archive, model, optimizer moments and counters.
pub struct Optimizer {
    problem: Problem,
    config: RunConfig,
    archive: Archive,
    model: ParetoSetModel,
    adam: Adam,
    ideal: IdealPoint,
    iteration: usize,
    evaluations: usize,
    reference: Option<LhdReference>,
    initial: IterationRecord,
}

impl Optimizer {
    /// Validates `config`, evaluates the initial design and initializes the model.
    pub fn new(problem: Problem, config: RunConfig) -> Result<Self> {
        config.validate()?;
        let started = Instant::now();
        let reference = match &config.ref_point {
            Some(rho) => {
                if rho.len() != problem.n_obj() {
                    return Err(Error::Argument(format!(
                        "reference point has {} entries, problem has {} objectives",
                        rho.len(),
                        problem.n_obj()
                    )));
                }
                Some(rho.clone())
            }
            None => problem.reference_point().ok(),
        }
        .and_then(|rho| {
            let reference_hv = problem.true_front_hv(&rho).ok()?;
            Some(LhdReference { rho, reference_hv })
        });

        let archive = initial_design(&problem, config.n_init, config.seed)?;
        let arch = Architecture {
            n_obj: problem.n_obj(),
            hidden: config.hidden,
            n_var: problem.n_var(),
        };
        let mut rng = child_rng(config.seed, Stream::ModelInit, 0, 0);
        let model = ParetoSetModel::new(arch, problem.lower(), problem.upper(), &mut rng);
        let adam = Adam::new(arch.n_params(), config.learning_rate);
        let ideal = IdealPoint::from_observations(&archive.ys);
        let mut opt = Self {
            evaluations: archive.len(),
            problem,
            config,
            archive,
            model,
            adam,
            ideal,
            iteration: 0,
            reference,
            initial: IterationRecord {
                iteration: 0,
                gp: Vec::new(),
                loss: Vec::new(),
                batch: Vec::new(),
                rho: Vec::new(),
                z_star: Vec::new(),
                skipped_steps: 0,
                floor_hits: 0,
                excluded_candidates: 0,
                evaluations: 0,
                archive_hv: None,
                lhd: None,
                seconds: 0.0,
            },
        };
        let (archive_hv, lhd) = opt.archive_metrics()?;
        opt.initial = IterationRecord {
            batch: opt
                .archive
                .xs
                .iter()
                .zip(&opt.archive.ys)
                .map(|(x, y)| BatchEntry {
                    x: x.clone(),
                    f_hat: None,
                    f: y.clone(),
                    hvi: None,
                })
                .collect(),
            rho: inflated_nadir(&opt.archive.ys),
            z_star: opt.ideal.z_star().to_vec(),
            evaluations: opt.evaluations,
            archive_hv,
            lhd,
            seconds: started.elapsed().as_secs_f64(),
            ..opt.initial.clone()
        };
        Ok(opt)
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn archive(&self) -> &Archive {
        &self.archive
    }

    pub fn model(&self) -> &ParetoSetModel {
        &self.model
    }

    /// Completed outer iterations.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// True-objective evaluations so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn lhd_reference(&self) -> Option<&LhdReference> {
        self.reference.as_ref()
    }

    /// Record of the initial design.
    pub fn initial_record(&self) -> &IterationRecord {
        &self.initial
    }

    fn archive_metrics(&self) -> Result<(Option<f64>, Option<f64>)> {
        match &self.reference {
            Some(r) => {
                let h = hypervolume::hv(&self.archive.front(), &r.rho)?;
                Ok((Some(h), lhd_from_hv(h, r.reference_hv)))
            }
            None => Ok((None, None)),
        }
    }

    /// One outer iteration. On error nothing has changed and the call can be
    /// retried.
    pub fn run_iteration(&mut self) -> Result<IterationRecord> {
        let started = Instant::now();
        let cfg = self.config.clone();
        let exec = cfg.execution;
        let it = self.iteration + 1;
        let m = self.problem.n_obj();

        let bundle = SurrogateBundle::fit(
            &self.archive.xs,
            &self.archive.ys,
            self.problem.lower(),
            self.problem.upper(),
            cfg.lcb_lambda,
            exec,
        )?;
        let rho = inflated_nadir(&self.archive.ys);
        let z = self.ideal.z_star().to_vec();
        let mut z_train = z.clone();

        let mut model = self.model.clone();
        let mut adam = self.adam.clone();
        let mut loss = Vec::new();
        let mut skipped = 0;
        for t in 0..cfg.inner_steps {
            let mut rng = child_rng(cfg.seed, Stream::InnerStep, it as u64, t as u64);
            let prefs = sample_preferences(cfg.particles, m, &mut rng);
            let out = training_step(
                &mut model,
                &mut adam,
                &bundle,
                &mut z_train,
                cfg.ideal,
                prefs,
                cfg.kernel,
                cfg.alpha,
                exec,
            );
            if !out.applied {
                skipped += 1;
            }
            if t % LOSS_EVERY == 0 {
                loss.push(LossPoint { step: t, mean_g: out.mean_g });
            }
        }

        let mut rng = child_rng(cfg.seed, Stream::Candidates, it as u64, 0);
        let prefs = sample_preferences(cfg.candidates, m, &mut rng);
        let xs = exec.map_slice(&prefs, |r| model.forward(r));
        let unit = |x: &[f64]| -> Vec<f64> {
            x.iter()
                .zip(self.problem.lower())
                .zip(self.problem.upper())
                .map(|((v, l), u)| (v - l) / (u - l))
                .collect()
        };
        let archived: Vec<Vec<f64>> = self.archive.xs.iter().map(|x| unit(x)).collect();
        let eligible: Vec<usize> = (0..xs.len())
            .filter(|&i| {
                let u = unit(&xs[i]);
                archived.iter().all(|a| {
                    a.iter().zip(&u).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
                        > DUPLICATE_TOLERANCE
                })
            })
            .collect();
        if eligible.is_empty() {
            return Err(Error::State("every candidate duplicates an archived point".into()));
        }
        let f_hat: Vec<Vec<f64>> = exec.map_slice(&eligible, |&i| bundle.values(&xs[i]));
        let b = cfg.batch.min(eligible.len());

        let picks: Vec<(usize, Option<f64>)> = if (2..=3).contains(&m) {
            greedy_select(&f_hat, &self.archive.front(), &rho, b, exec)?
                .into_iter()
                .map(|p| (p.index, Some(p.hvi)))
                .collect()
        } else {
            let mut order: Vec<(f64, usize)> = eligible
                .iter()
                .enumerate()
                .map(|(k, &i)| (chebyshev(&f_hat[k], &prefs[i], &z_train).0, k))
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            order.into_iter().take(b).map(|(_, k)| (k, None)).collect()
        };

        let mut batch = Vec::with_capacity(picks.len());
        for (k, hvi) in picks {
            let x = xs[eligible[k]].clone();
            let f = self.problem.evaluate(&x)?;
            batch.push(BatchEntry {
                x,
                f_hat: Some(f_hat[k].clone()),
                f,
                hvi,
            });
        }

        // Commit.
        for e in &batch {
            self.archive.push(e.x.clone(), e.f.clone(), Provenance::Iteration(it));
        }
        self.evaluations += batch.len();
        self.ideal = self.ideal.updated(&self.archive.ys[self.archive.len() - batch.len()..]);
        self.model = model;
        self.adam = adam;
        self.iteration = it;

        let (archive_hv, lhd) = self.archive_metrics()?;
        Ok(IterationRecord {
            iteration: it,
            gp: bundle.gps().iter().map(|g| g.report()).collect(),
            loss,
            batch,
            rho,
            z_star: z_train,
            skipped_steps: skipped,
            floor_hits: bundle.floor_hits(),
            excluded_candidates: cfg.candidates - eligible.len(),
            evaluations: self.evaluations,
            archive_hv,
            lhd,
            seconds: started.elapsed().as_secs_f64(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::scalarized_grad;
    use crate::problem::builtin;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn small(seed: u64) -> RunConfig {
        RunConfig {
            seed,
            n_init: 8,
            iterations: 2,
            inner_steps: 10,
            particles: 4,
            candidates: 60,
            batch: 3,
            hidden: 16,
            ..RunConfig::default()
        }
    }

    fn counted(problem: Problem) -> (Problem, Arc<AtomicUsize>) {
        let count = Arc::new(AtomicUsize::new(0));
        let c = count.clone();
        let p = problem.map_objective(move |f| {
            Arc::new(move |x: &[f64]| {
                c.fetch_add(1, Ordering::SeqCst);
                f(x)
            })
        });
        (p, count)
    }

    #[test]
    fn initial_design_contract() {
        let p = builtin("zdt1", None).unwrap();
        let a = initial_design(&p, 20, 3).unwrap();
        assert_eq!(a.len(), 20);
        assert!(a.xs.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.ys.iter().flatten().all(|v| v.is_finite()));
        assert_eq!(a, initial_design(&p, 20, 3).unwrap());
        assert!(initial_design(&p, 1, 3).is_err());
        let two = initial_design(&builtin("zdt1", Some(1)).unwrap(), 2, 0).unwrap();
        assert_ne!(two.xs[0], two.xs[1]);
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig::default().validate().is_ok());
        assert!(RunConfig { batch: 0, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { batch: 10, candidates: 5, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { alpha: -1.0, ..RunConfig::default() }.validate().is_err());
    }

    #[test]
    fn iterations_grow_archive_and_count_evaluations() {
        let (p, count) = counted(builtin("zdt1", Some(4)).unwrap());
        let mut opt = Optimizer::new(p, small(1)).unwrap();
        assert_eq!(count.load(Ordering::SeqCst), 8);
        let mut prev_hv = opt.initial_record().archive_hv.unwrap();
        for k in 1..=2 {
            let rec = opt.run_iteration().unwrap();
            assert_eq!(opt.archive().len(), 8 + 3 * k);
            assert_eq!(rec.iteration, k);
            assert_eq!(rec.batch.len(), 3);
            let hv = rec.archive_hv.unwrap();
            assert!(hv >= prev_hv);
            prev_hv = hv;
        }
        assert_eq!(count.load(Ordering::SeqCst), 14);
        assert_eq!(opt.evaluations(), 14);
        assert!(opt.archive().xs.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn runs_are_deterministic_across_execution_modes() {
        let p = builtin("zdt2", Some(3)).unwrap();
        let mut a = Optimizer::new(p.clone(), small(5)).unwrap();
        let mut b = Optimizer::new(
            p,
            RunConfig {
                execution: Execution::Sequential,
                ..small(5)
            },
        )
        .unwrap();
        for _ in 0..2 {
            let ra = a.run_iteration().unwrap();
            let rb = b.run_iteration().unwrap();
            assert_eq!(ra.lhd, rb.lhd);
        }
        assert_eq!(a.archive(), b.archive());
        assert_eq!(a.model().theta(), b.model().theta());
    }

    #[test]
    fn kernel_switch_only_changes_training() {
        let p = builtin("zdt1", Some(3)).unwrap();
        let mut local = Optimizer::new(p.clone(), small(2)).unwrap();
        let mut global = Optimizer::new(
            p,
            RunConfig {
                kernel: KernelKind::Global,
                ..small(2)
            },
        )
        .unwrap();
        assert_eq!(local.archive(), global.archive());
        assert_eq!(local.model().theta(), global.model().theta());
        local.run_iteration().unwrap();
        global.run_iteration().unwrap();
        assert_ne!(local.model().theta(), global.model().theta());
    }

    #[test]
    fn single_particle_without_repulsion_is_plain_chebyshev_descent() {
        let p = builtin("zdt1", Some(3)).unwrap();
        let archive = initial_design(&p, 8, 0).unwrap();
        let bundle =
            SurrogateBundle::fit(&archive.xs, &archive.ys, p.lower(), p.upper(), 2.0, Execution::Sequential)
                .unwrap();
        let z = IdealPoint::from_observations(&archive.ys).z_star().to_vec();
        let arch = Architecture {
            n_obj: 2,
            hidden: 8,
            n_var: 3,
        };
        let mut rng = child_rng(0, Stream::ModelInit, 0, 0);
        let mut model = ParetoSetModel::new(arch, p.lower(), p.upper(), &mut rng);
        // Move off the zero output layer so the gradient is not trivially sparse.
        for (i, v) in model.theta_mut().iter_mut().enumerate() {
            *v += 0.01 * ((i as f64) * 0.7).sin();
        }
        let r = Preference::new(vec![0.3, 0.7]).unwrap();

        let mut direct = model.clone();
        let mut adam_direct = Adam::new(arch.n_params(), 1e-3);
        let g = scalarized_grad(&direct, &r, &bundle, &z);
        assert!(adam_direct.apply(&mut direct, &g.dtheta));

        let mut adam = Adam::new(arch.n_params(), 1e-3);
        let mut zz = z.clone();
        let out = training_step(
            &mut model,
            &mut adam,
            &bundle,
            &mut zz,
            IdealMode::Observed,
            vec![r],
            KernelKind::Global,
            0.0,
            Execution::Sequential,
        );
        assert!(out.applied);
        assert!((out.mean_g - g.g_value).abs() <= 1e-12);
        for (a, b) in model.theta().iter().zip(direct.theta()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn optimistic_ideal_only_moves_down() {
        let p = builtin("zdt1", Some(3)).unwrap();
        let cfg = RunConfig {
            ideal: IdealMode::Optimistic,
            ..small(4)
        };
        let mut opt = Optimizer::new(p, cfg).unwrap();
        let before = opt.initial_record().z_star.clone();
        let rec = opt.run_iteration().unwrap();
        assert!(rec.z_star.iter().zip(&before).all(|(a, b)| a <= b));
        assert_eq!(opt.archive().len(), 11);
    }

    #[test]
    fn four_objectives_fall_back_to_scalarized_selection() {
        let f: crate::problem::ObjectiveFn =
            Arc::new(|x: &[f64]| vec![x[0], x[1], 1.0 - x[0], 1.0 - x[1] + x[2]]);
        let p = Problem::new("quad4", 4, vec![0.0; 3], vec![1.0; 3], f).unwrap();
        let mut opt = Optimizer::new(p, small(0)).unwrap();
        assert!(opt.lhd_reference().is_none());
        let rec = opt.run_iteration().unwrap();
        assert_eq!(rec.batch.len(), 3);
        assert!(rec.batch.iter().all(|e| e.hvi.is_none()));
        assert_eq!(rec.lhd, None);
    }
}
