//! Box-bounded black-box multi-objective problems: the builtin synthetic
//! suite, user-defined problems loaded from a key-value spec file, and
//! reference Pareto fronts.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hypervolume::{self, FrontSet};

/// The black-box objective map. Must be pure: same input, same output.
pub type ObjectiveFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Number of points used to sample analytic reference fronts.
pub const FRONT_POINTS: usize = 1000;

/// Default decision dimension for the ZDT family.
pub const ZDT_DEFAULT_N_VAR: usize = 20;

#[derive(Clone)]
pub struct Problem {
    name: String,
    n_obj: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    objective: ObjectiveFn,
    true_front: Option<FrontSet>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("n_var", &self.n_var())
            .field("n_obj", &self.n_obj)
            .field("front_points", &self.true_front.as_ref().map(FrontSet::len))
            .finish()
    }
}

fn check_bounds(lower: &[f64], upper: &[f64]) -> Result<()> {
    if lower.is_empty() || lower.len() != upper.len() {
        return Err(Error::Argument(format!(
            "bounds must be non-empty and of equal length (got {} and {})",
            lower.len(),
            upper.len()
        )));
    }
    for (index, (&lo, &hi)) in lower.iter().zip(upper).enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::BoundsViolation {
                index,
                value: lo,
                lower: lo,
                upper: hi,
            });
        }
    }
    Ok(())
}

impl Problem {
    pub fn new(
        name: impl Into<String>,
        n_obj: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
        objective: ObjectiveFn,
    ) -> Result<Self> {
        check_bounds(&lower, &upper)?;
        if n_obj < 2 {
            return Err(Error::Argument(format!("need at least 2 objectives, got {n_obj}")));
        }
        Ok(Self {
            name: name.into(),
            n_obj,
            lower,
            upper,
            objective,
            true_front: None,
        })
    }

    /// Attaches a reference front. Dominated rows are dropped.
    pub fn with_true_front(mut self, points: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(bad) = points.iter().find(|p| p.len() != self.n_obj) {
            return Err(Error::Argument(format!(
                "front point has {} coordinates, problem has {} objectives",
                bad.len(),
                self.n_obj
            )));
        }
        self.true_front = Some(FrontSet::from_points(&points));
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_var(&self) -> usize {
        self.lower.len()
    }

    pub fn n_obj(&self) -> usize {
        self.n_obj
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn true_front(&self) -> Option<&FrontSet> {
        self.true_front.as_ref()
    }

    /// Replaces the objective map, keeping everything else. Used to wrap
    /// evaluation (e.g. with a call counter).
    pub fn map_objective(mut self, f: impl FnOnce(ObjectiveFn) -> ObjectiveFn) -> Self {
        self.objective = f(self.objective);
        self
    }

    /// Evaluates the objectives at `x` (original coordinates).
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_var() {
            return Err(Error::Argument(format!(
                "decision vector has {} coordinates, problem has {}",
                x.len(),
                self.n_var()
            )));
        }
        for (index, ((&v, &lo), &hi)) in x.iter().zip(&self.lower).zip(&self.upper).enumerate() {
            if !(lo..=hi).contains(&v) {
                return Err(Error::BoundsViolation {
                    index,
                    value: v,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        let y = (self.objective)(x);
        if y.len() != self.n_obj || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "objective of `{}` returned {:?}",
                self.name, y
            )));
        }
        Ok(y)
    }

    /// Default hypervolume reference point: the reference front's
    /// componentwise nadir inflated by 10%.
    pub fn reference_point(&self) -> Result<Vec<f64>> {
        let front = self.true_front.as_ref().ok_or_else(|| {
            Error::UnsupportedMetric(format!("problem `{}` has no reference front", self.name))
        })?;
        Ok(inflated_nadir(front.points()))
    }

    /// Hypervolume of the reference front with respect to `rho`.
    pub fn true_front_hv(&self, rho: &[f64]) -> Result<f64> {
        let front = self.true_front.as_ref().ok_or_else(|| {
            Error::UnsupportedMetric(format!("problem `{}` has no reference front", self.name))
        })?;
        hypervolume::hv(front, rho)
    }
}

/// Componentwise maximum of `points` moved outward by 10% of its magnitude
/// (`v·1.1` for non-negative `v`).
pub fn inflated_nadir(points: &[Vec<f64>]) -> Vec<f64> {
    let m = points.first().map_or(0, Vec::len);
    (0..m)
        .map(|k| {
            let v = points.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
            v + 0.1 * v.abs()
        })
        .collect()
}

fn zdt_g(x: &[f64]) -> f64 {
    let n = x.len();
    if n == 1 {
        return 1.0;
    }
    1.0 + 9.0 * x[1..].iter().sum::<f64>() / (n - 1) as f64
}

fn zdt1(x: &[f64]) -> Vec<f64> {
    let f1 = x[0];
    let g = zdt_g(x);
    vec![f1, g * (1.0 - (f1 / g).sqrt())]
}

fn zdt2(x: &[f64]) -> Vec<f64> {
    let f1 = x[0];
    let g = zdt_g(x);
    vec![f1, g * (1.0 - (f1 / g).powi(2))]
}

fn zdt3(x: &[f64]) -> Vec<f64> {
    let f1 = x[0];
    let g = zdt_g(x);
    let h = 1.0 - (f1 / g).sqrt() - (f1 / g) * (10.0 * PI * f1).sin();
    vec![f1, g * h]
}

fn zdt4(x: &[f64]) -> Vec<f64> {
    let f1 = x[0];
    let g = 1.0
        + 10.0 * (x.len() - 1) as f64
        + x[1..]
            .iter()
            .map(|v| v * v - 10.0 * (4.0 * PI * v).cos())
            .sum::<f64>();
    vec![f1, g * (1.0 - (f1 / g).sqrt())]
}

fn zdt6_f1(x1: f64) -> f64 {
    1.0 - (-4.0 * x1).exp() * (6.0 * PI * x1).sin().powi(6)
}

fn zdt6(x: &[f64]) -> Vec<f64> {
    let f1 = zdt6_f1(x[0]);
    let n = x.len();
    let g = if n == 1 {
        1.0
    } else {
        1.0 + 9.0 * (x[1..].iter().sum::<f64>() / (n - 1) as f64).powf(0.25)
    };
    vec![f1, g * (1.0 - (f1 / g).powi(2))]
}

fn vlmop2(x: &[f64]) -> Vec<f64> {
    let s = 1.0 / (x.len() as f64).sqrt();
    let a: f64 = x.iter().map(|v| (v - s) * (v - s)).sum();
    let b: f64 = x.iter().map(|v| (v + s) * (v + s)).sum();
    vec![1.0 - (-a).exp(), 1.0 - (-b).exp()]
}

fn grid(count: usize) -> impl Iterator<Item = f64> {
    (0..count).map(move |i| i as f64 / (count - 1) as f64)
}

/// Non-dominated subset of a dense curve sample, thinned to `FRONT_POINTS`
/// evenly spaced (by index) members.
fn filtered_curve(points: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut front = hypervolume::non_dominated(&points).into_points();
    front.sort_by(|a, b| a[0].total_cmp(&b[0]));
    if front.len() <= FRONT_POINTS {
        return front;
    }
    let last = front.len() - 1;
    (0..FRONT_POINTS)
        .map(|i| front[i * last / (FRONT_POINTS - 1)].clone())
        .collect()
}

fn zdt_front(name: &str) -> Vec<Vec<f64>> {
    match name {
        "zdt1" | "zdt4" => grid(FRONT_POINTS).map(|f| vec![f, 1.0 - f.sqrt()]).collect(),
        "zdt2" => grid(FRONT_POINTS).map(|f| vec![f, 1.0 - f * f]).collect(),
        "zdt3" => filtered_curve(
            grid(200_001)
                .map(|f| vec![f, 1.0 - f.sqrt() - f * (10.0 * PI * f).sin()])
                .collect(),
        ),
        "zdt6" => filtered_curve(
            grid(200_001)
                .map(|x1| {
                    let f = zdt6_f1(x1);
                    vec![f, 1.0 - f * f]
                })
                .collect(),
        ),
        _ => unreachable!("not a zdt problem: {name}"),
    }
}

fn vlmop2_front(n_var: usize) -> Vec<Vec<f64>> {
    let s = 1.0 / (n_var as f64).sqrt();
    grid(FRONT_POINTS)
        .map(|u| {
            let t = -s + 2.0 * s * u;
            let n = n_var as f64;
            vec![
                1.0 - (-n * (t - s) * (t - s)).exp(),
                1.0 - (-n * (t + s) * (t + s)).exp(),
            ]
        })
        .collect()
}

/// Names accepted by [`builtin`].
type Builtin = (fn(&[f64]) -> Vec<f64>, usize, f64, f64);

pub const BUILTINS: &[&str] = &["zdt1", "zdt2", "zdt3", "zdt4", "zdt6", "vlmop2"];

/// Looks up a builtin problem. `n_var` defaults to 20 for the ZDT family and
/// 6 for VLMOP2.
pub fn builtin(name: &str, n_var: Option<usize>) -> Result<Problem> {
    let key = name.to_ascii_lowercase();
    let (f, default_n, lo, hi): Builtin = match key.as_str() {
        "zdt1" => (zdt1, ZDT_DEFAULT_N_VAR, 0.0, 1.0),
        "zdt2" => (zdt2, ZDT_DEFAULT_N_VAR, 0.0, 1.0),
        "zdt3" => (zdt3, ZDT_DEFAULT_N_VAR, 0.0, 1.0),
        "zdt4" => (zdt4, ZDT_DEFAULT_N_VAR, -5.0, 5.0),
        "zdt6" => (zdt6, ZDT_DEFAULT_N_VAR, 0.0, 1.0),
        "vlmop2" => (vlmop2, 6, -2.0, 2.0),
        _ => return Err(Error::Lookup(name.to_string())),
    };
    let n = n_var.unwrap_or(default_n);
    if n == 0 {
        return Err(Error::Argument("n_var must be positive".into()));
    }
    let mut lower = vec![lo; n];
    let mut upper = vec![hi; n];
    if key == "zdt4" {
        lower[0] = 0.0;
        upper[0] = 1.0;
    }
    let front = if key == "vlmop2" {
        vlmop2_front(n)
    } else {
        zdt_front(&key)
    };
    Problem::new(key, 2, lower, upper, Arc::new(f))?.with_true_front(front)
}

/// Parses a reference-front file: one objective vector per line, values
/// separated by whitespace and/or commas. Blank lines and `#` comments are
/// ignored.
pub fn parse_front(text: &str, n_obj: usize, path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(err(format!("`{t}` is not a finite number"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != n_obj {
            return Err(err(format!("expected {n_obj} values, found {}", row.len())));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_front(path: &Path, n_obj: usize) -> Result<Vec<Vec<f64>>> {
    parse_front(&fs::read_to_string(path)?, n_obj, path)
}

const SPEC_KEYS: &[&str] = &[
    "name",
    "n_var",
    "n_obj",
    "lower",
    "upper",
    "builtin",
    "objectives",
    "front_file",
];

/// One objective of a spec file.
enum ObjectiveSource {
    Expr(meval::Expr),
    /// `@name/k`: objective `k` (1-based) of a builtin problem.
    Builtin(Problem, usize),
}

fn eval_expr(expr: &meval::Expr, x: &[f64]) -> f64 {
    let mut ctx = meval::Context::new();
    for (i, v) in x.iter().enumerate() {
        ctx.var(format!("x{}", i + 1), *v);
    }
    expr.eval_with_context(ctx).unwrap_or(f64::NAN)
}

/// Loads a problem from a spec file.
///
/// ```text
/// # comment
/// name       = re21-like
/// n_var      = 4
/// n_obj      = 2
/// lower      = 1, 1.4142, 1.4142, 1
/// upper      = 3
/// objectives = 200*(2*x1 + sqrt(2)*x2 + sqrt(x3) + x4) ; @zdt1/2
/// front_file = re21_front.txt
/// ```
///
/// Exactly one of `builtin` and `objectives` is required. Objectives are
/// separated by `;` and are either expressions over `x1..xN` or `@name/k`,
/// the k-th objective of a builtin evaluated on the same decision vector.
/// `lower`/`upper` hold one value per variable or a single broadcast value.
/// `front_file` is resolved relative to the spec file.
pub fn load_problem(spec_path: &Path) -> Result<Problem> {
    let text = fs::read_to_string(spec_path)?;
    parse_problem(&text, spec_path)
}

pub fn parse_problem(text: &str, spec_path: &Path) -> Result<Problem> {
    let format = |line: usize, message: String| Error::Format {
        path: spec_path.to_path_buf(),
        line,
        message,
    };
    let mut entries: HashMap<&str, (usize, String)> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format(i + 1, "expected `key = value`".into()))?;
        let key = key.trim();
        let Some(&known) = SPEC_KEYS.iter().find(|k| **k == key) else {
            return Err(format(i + 1, format!("unknown key `{key}`")));
        };
        if entries
            .insert(known, (i + 1, value.trim().to_string()))
            .is_some()
        {
            return Err(format(i + 1, format!("duplicate key `{key}`")));
        }
    }
    let end = text.lines().count();
    let get = |k: &str| entries.get(k).map(|(l, v)| (*l, v.as_str()));
    let parse_usize = |k: &str| -> Result<Option<usize>> {
        get(k)
            .map(|(l, v)| {
                v.parse::<usize>()
                    .ok()
                    .filter(|n| *n > 0)
                    .ok_or_else(|| format(l, format!("`{k}` must be a positive integer")))
            })
            .transpose()
    };
    let parse_reals = |k: &str| -> Result<Option<(usize, Vec<f64>)>> {
        get(k)
            .map(|(l, v)| {
                v.split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|t| !t.is_empty())
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| format(l, format!("`{t}` is not a number")))
                    })
                    .collect::<Result<Vec<f64>>>()
                    .map(|vals| (l, vals))
            })
            .transpose()
    };

    let n_var = parse_usize("n_var")?;
    let n_obj = parse_usize("n_obj")?;
    let lower = parse_reals("lower")?;
    let upper = parse_reals("upper")?;

    let base = match (get("builtin"), get("objectives")) {
        (Some(_), Some((l, _))) => {
            return Err(format(l, "`builtin` and `objectives` are mutually exclusive".into()))
        }
        (None, None) => {
            return Err(format(end, "one of `builtin` or `objectives` is required".into()))
        }
        (Some((l, id)), None) => {
            let p = builtin(id, n_var)?;
            if let Some(m) = n_obj.filter(|m| *m != p.n_obj()) {
                return Err(format(
                    l,
                    format!("builtin `{id}` has {} objectives, n_obj says {m}", p.n_obj()),
                ));
            }
            Some(p)
        }
        (None, Some(_)) => None,
    };

    let n_var = match (&base, n_var) {
        (Some(p), _) => p.n_var(),
        (None, Some(n)) => n,
        (None, None) => return Err(format(end, "missing key `n_var`".into())),
    };
    let expand = |bounds: Option<(usize, Vec<f64>)>, which: &str| -> Result<Option<Vec<f64>>> {
        match bounds {
            None => Ok(None),
            Some((_, v)) if v.len() == 1 => Ok(Some(vec![v[0]; n_var])),
            Some((_, v)) if v.len() == n_var => Ok(Some(v)),
            Some((l, v)) => Err(format(
                l,
                format!("`{which}` has {} values, expected 1 or {n_var}", v.len()),
            )),
        }
    };
    let lower = expand(lower, "lower")?;
    let upper = expand(upper, "upper")?;

    let name = get("name").map(|(_, v)| v.to_string());
    let mut problem = match base {
        Some(p) => {
            let lower = lower.unwrap_or_else(|| p.lower().to_vec());
            let upper = upper.unwrap_or_else(|| p.upper().to_vec());
            check_bounds(&lower, &upper)?;
            Problem {
                name: name.unwrap_or_else(|| p.name().to_string()),
                lower,
                upper,
                ..p
            }
        }
        None => {
            let (line, exprs) = get("objectives").expect("checked above");
            let lower = lower.ok_or_else(|| format(end, "missing key `lower`".into()))?;
            let upper = upper.ok_or_else(|| format(end, "missing key `upper`".into()))?;
            check_bounds(&lower, &upper)?;
            let sources = exprs
                .split(';')
                .map(str::trim)
                .map(|e| parse_objective(e, n_var).map_err(|m| format(line, m)))
                .collect::<Result<Vec<_>>>()?;
            if let Some(m) = n_obj.filter(|m| *m != sources.len()) {
                return Err(format(
                    line,
                    format!("{} objectives listed, n_obj says {m}", sources.len()),
                ));
            }
            let mid: Vec<f64> = lower.iter().zip(&upper).map(|(a, b)| 0.5 * (a + b)).collect();
            for (k, s) in sources.iter().enumerate() {
                if let ObjectiveSource::Expr(e) = s {
                    e.eval_with_context(ctx_at(&mid)).map_err(|err| {
                        format(line, format!("objective {}: {err}", k + 1))
                    })?;
                }
            }
            let sources = Arc::new(sources);
            let f: ObjectiveFn = Arc::new(move |x: &[f64]| {
                sources
                    .iter()
                    .map(|s| match s {
                        ObjectiveSource::Expr(e) => eval_expr(e, x),
                        ObjectiveSource::Builtin(p, k) => (p.objective)(x)[*k],
                    })
                    .collect()
            });
            let m = exprs.split(';').count();
            Problem::new(name.unwrap_or_else(|| "custom".into()), m, lower, upper, f)?
        }
    };

    if let Some((l, file)) = get("front_file") {
        let path: PathBuf = spec_path
            .parent()
            .map_or_else(|| PathBuf::from(file), |dir| dir.join(file));
        let rows = load_front(&path, problem.n_obj()).map_err(|e| match e {
            Error::Io(io) => format(l, format!("cannot read front file {}: {io}", path.display())),
            other => other,
        })?;
        problem = problem.with_true_front(rows)?;
    }
    Ok(problem)
}

fn ctx_at(x: &[f64]) -> meval::Context<'static> {
    let mut ctx = meval::Context::new();
    for (i, v) in x.iter().enumerate() {
        ctx.var(format!("x{}", i + 1), *v);
    }
    ctx
}

fn parse_objective(src: &str, n_var: usize) -> std::result::Result<ObjectiveSource, String> {
    if let Some(reference) = src.strip_prefix('@') {
        let (id, k) = reference
            .split_once('/')
            .ok_or_else(|| format!("`{src}`: expected `@name/k`"))?;
        let p = builtin(id.trim(), Some(n_var)).map_err(|e| e.to_string())?;
        let k: usize = k
            .trim()
            .parse()
            .ok()
            .filter(|k| (1..=p.n_obj()).contains(k))
            .ok_or_else(|| format!("`{src}`: objective index out of range"))?;
        return Ok(ObjectiveSource::Builtin(p, k - 1));
    }
    src.parse::<meval::Expr>()
        .map(ObjectiveSource::Expr)
        .map_err(|e| format!("`{src}`: {e}"))
}
