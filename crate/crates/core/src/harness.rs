//! Experiment plumbing: logged runs, multi-seed sweeps, aggregation and
//! front dumps for plotting.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::design::sobol_design;
use crate::error::{Error, Result};
use crate::metrics::mean_std;
use crate::model::ParetoSetModel;
use crate::optimizer::{Optimizer, RunConfig};
use crate::problem::Problem;
use crate::runlog::{checkpoint_path, read_checkpoint, write_checkpoint, LogWriter, RunHeader, RunLog, RunStatus, RunSummary};
use crate::scalarize::Preference;
use crate::svgd::KernelKind;

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "SVH_PSL_OUT";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where logs and checkpoints go; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Also checkpoint the model after every iteration.
    pub checkpoint_every_iteration: bool,
}

/// Label shared by every seed of one setting.
pub fn setting_tag(problem: &str, kernel: KernelKind, alpha: f64) -> String {
    format!("{problem}_{kernel}_alpha{alpha}")
}

pub fn run_stem(config: &RunConfig) -> String {
    format!(
        "{}_seed{}",
        setting_tag(&config.problem, config.kernel, config.alpha),
        config.seed
    )
}

pub fn log_path(dir: &Path, config: &RunConfig) -> PathBuf {
    dir.join(format!("{}.jsonl", run_stem(config)))
}

/// A finished run: its log and the final model.
pub struct RunOutput {
    pub log: RunLog,
    pub model: ParetoSetModel,
}

/// Runs the full loop, streaming the log (and checkpoints) to
/// `options.out_dir` when set. A failing iteration still closes the log with
/// a `failed` summary before the error is returned.
pub fn run(problem: Problem, config: RunConfig, options: &RunOptions) -> Result<RunOutput> {
    let started = Instant::now();
    if let Some(dir) = &options.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let stem = run_stem(&config);
    let mut opt = Optimizer::new(problem, config.clone())?;
    let header = RunHeader {
        version: env!("CARGO_PKG_VERSION").to_string(),
        problem: opt.problem().name().to_string(),
        n_var: opt.problem().n_var(),
        n_obj: opt.problem().n_obj(),
        seed: config.seed,
        config: config.clone(),
        lhd_reference: opt.lhd_reference().cloned(),
    };
    let mut writer = match &options.out_dir {
        Some(dir) => Some(LogWriter::create(&log_path(dir, &config), &header)?),
        None => None,
    };
    let mut records = vec![opt.initial_record().clone()];
    if let Some(w) = writer.as_mut() {
        w.record(&records[0])?;
    }

    let mut failure = None;
    for _ in 0..config.iterations {
        match opt.run_iteration() {
            Ok(rec) => {
                if let Some(w) = writer.as_mut() {
                    w.record(&rec)?;
                }
                if let (Some(dir), true) = (&options.out_dir, options.checkpoint_every_iteration) {
                    let p = dir.join(format!("{stem}_iter{:03}.ckpt", rec.iteration));
                    write_checkpoint(&p, opt.model(), config.seed, rec.iteration)?;
                }
                records.push(rec);
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }

    let checkpoint = match &options.out_dir {
        Some(dir) => {
            let name = format!("{stem}.ckpt");
            write_checkpoint(&dir.join(&name), opt.model(), config.seed, opt.iteration())?;
            Some(name)
        }
        None => None,
    };
    let summary = RunSummary {
        status: match &failure {
            None => RunStatus::Completed,
            Some(e) => RunStatus::Failed {
                message: e.to_string(),
            },
        },
        archive: opt.archive().clone(),
        lhd: records.iter().map(|r| r.lhd).collect(),
        checkpoint,
        evaluations: opt.evaluations(),
        seconds: started.elapsed().as_secs_f64(),
    };
    if let Some(w) = writer.as_mut() {
        w.summary(&summary)?;
    }
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(RunOutput {
        log: RunLog {
            header,
            records,
            summary: Some(summary),
        },
        model: opt.model().clone(),
    })
}

/// Runs `config` once per seed, in order.
pub fn run_seeds(
    problem: &Problem,
    config: &RunConfig,
    seeds: &[u64],
    options: &RunOptions,
) -> Result<Vec<RunOutput>> {
    seeds
        .iter()
        .map(|&seed| run(problem.clone(), RunConfig { seed, ..config.clone() }, options))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub iteration: usize,
    pub evaluations: usize,
    /// Seeds with a finite LHD at this iteration.
    pub count: usize,
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
}

/// Per-iteration LHD statistics across seeds of one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub tag: String,
    pub problem: String,
    pub kernel: KernelKind,
    pub alpha: f64,
    pub seeds: Vec<u64>,
    pub rows: Vec<AggregateRow>,
}

/// Aggregates runs of a single setting. Seeds whose LHD is `null` at an
/// iteration (archive reached the reference) are left out of that row.
pub fn aggregate(logs: &[&RunLog]) -> Result<Aggregate> {
    let first = logs
        .first()
        .ok_or_else(|| Error::Argument("nothing to aggregate".into()))?;
    let c = &first.header.config;
    let n = first.records.len();
    for log in logs {
        let k = &log.header.config;
        if log.records.len() != n || k.problem != c.problem || k.kernel != c.kernel || k.alpha != c.alpha {
            return Err(Error::Argument(
                "aggregated runs must share problem, kernel, alpha and length".into(),
            ));
        }
    }
    let rows = (0..n)
        .map(|i| {
            let vals: Vec<f64> = logs.iter().filter_map(|l| l.records[i].lhd).collect();
            let (mean, std) = if vals.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&vals);
                (Some(m), Some(s))
            };
            AggregateRow {
                iteration: first.records[i].iteration,
                evaluations: first.records[i].evaluations,
                count: vals.len(),
                mean,
                std,
            }
        })
        .collect();
    Ok(Aggregate {
        tag: setting_tag(&c.problem, c.kernel, c.alpha),
        problem: c.problem.clone(),
        kernel: c.kernel,
        alpha: c.alpha,
        seeds: logs.iter().map(|l| l.header.seed).collect(),
        rows,
    })
}

impl Aggregate {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        let mut s = String::from("iteration,evaluations,count,mean_lhd,std_lhd\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.iteration, r.evaluations, r.count, opt(r.mean), opt(r.std));
        }
        s
    }

    /// Writes `<tag>_aggregate.json` and `<tag>_aggregate.csv`; returns the
    /// JSON path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let json = dir.join(format!("{}_aggregate.json", self.tag));
        std::fs::write(&json, serde_json::to_string_pretty(self)?)?;
        std::fs::write(dir.join(format!("{}_aggregate.csv", self.tag)), self.to_csv())?;
        Ok(json)
    }
}

/// `resolution` preferences spread over the simplex: `(t, 1 − t)` with
/// `t = (k + ½)/resolution` for two objectives, a Sobol' sample mapped by
/// sorted spacings otherwise.
pub fn spread_preferences(m: usize, resolution: usize) -> Vec<Preference> {
    if m == 2 {
        return (0..resolution)
            .map(|k| {
                let t = (k as f64 + 0.5) / resolution as f64;
                Preference::clamped(vec![t, 1.0 - t])
            })
            .collect();
    }
    sobol_design(&vec![0.0; m - 1], &vec![1.0; m - 1], resolution, 0)
        .into_iter()
        .map(|mut u| {
            u.sort_by(f64::total_cmp);
            let mut r = Vec::with_capacity(m);
            let mut prev = 0.0;
            for v in u.iter().chain(std::iter::once(&1.0)) {
                r.push(v - prev);
                prev = *v;
            }
            Preference::clamped(r)
        })
        .collect()
}

/// Model-decoded front plus the archive's non-dominated set.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontDump {
    /// `(preference, true objectives)` per decoded preference.
    pub model: Vec<(Vec<f64>, Vec<f64>)>,
    pub archive_front: Vec<Vec<f64>>,
}

impl FrontDump {
    pub fn rows(&self) -> usize {
        self.model.len() + self.archive_front.len()
    }

    /// Plain-text table: `kind f_1..f_m r_1..r_m`, archive rows carry `nan`
    /// preferences.
    pub fn to_text(&self) -> String {
        let m = self
            .model
            .first()
            .map(|(_, f)| f.len())
            .or_else(|| self.archive_front.first().map(Vec::len))
            .unwrap_or(0);
        let mut s = String::from("# model rows are post-hoc evaluations outside the optimization budget\n# kind");
        for k in 1..=m {
            let _ = write!(s, " f{k}");
        }
        for k in 1..=m {
            let _ = write!(s, " r{k}");
        }
        s.push('\n');
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        for (r, f) in &self.model {
            let _ = writeln!(s, "model {} {}", join(f), join(r));
        }
        let nans = vec!["nan"; m].join(" ");
        for f in &self.archive_front {
            let _ = writeln!(s, "archive {} {nans}", join(f));
        }
        s
    }
}

/// Decodes `resolution` spread preferences through `model` and evaluates
/// the true objectives. These evaluations do not count against the budget.
pub fn decode_front(
    model: &ParetoSetModel,
    problem: &Problem,
    archive_ys: &[Vec<f64>],
    resolution: usize,
) -> Result<FrontDump> {
    if resolution == 0 {
        return Err(Error::Argument("resolution must be positive".into()));
    }
    let rows = spread_preferences(problem.n_obj(), resolution)
        .into_iter()
        .map(|r| {
            let f = problem.evaluate(&model.forward(&r))?;
            Ok((r.as_slice().to_vec(), f))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrontDump {
        model: rows,
        archive_front: crate::hypervolume::non_dominated(archive_ys).into_points(),
    })
}

/// [`decode_front`] for a run log on disk, using its final checkpoint.
pub fn emit_front(log: &RunLog, log_path: &Path, problem: &Problem, resolution: usize) -> Result<FrontDump> {
    let summary = log
        .summary
        .as_ref()
        .ok_or_else(|| Error::State("run log has no summary".into()))?;
    let reference = summary
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::State("run log has no model checkpoint".into()))?;
    let path = checkpoint_path(log_path, reference);
    if !path.exists() {
        return Err(Error::State(format!("checkpoint {} is missing", path.display())));
    }
    let (model, _) = read_checkpoint(&path)?;
    decode_front(&model, problem, &summary.archive.ys, resolution)
}
