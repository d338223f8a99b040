//! Executes a [`RunConfig`].

use std::fmt::Write as _;
use std::fs;

use maxaffine_attn::cross::{check_cross_budget, cross_linear_entries};
use maxaffine_attn::construct::{check_self_budget, self_linear_entries};
use maxaffine_attn::oracle::{estimate_errors, BoxSampler, CrossClosedForm, ErrorReport, PairBoxSampler, Sampler, SelfClosedForm};
use maxaffine_attn::{
    build_reassign_attention, build_small_region, build_universal_cross, build_universal_self,
    choose_temperature, grid_centers, trainable_param_count, Error, GridSpec, MaxAffine, Matrix,
    SphereCover, MAX_CENTERS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Command, RunConfig};
use crate::plot::{curve_path, emit_plot_script};
use crate::registry::{resolve, step1d, Arity, Resolved, STEP_BREAKS, STEP_VALUES};
use crate::report::{fmt_float, render_checks, render_rows, write_text, CheckOutcome, ReportRow};
use crate::verify::run_suite;
use crate::{CliError, CliResult};

/// Margin below which indicator-demo tokens are excluded from the error.
pub const INDICATOR_MARGIN: f64 = 0.05;
/// Default target error of indicator-demo.
pub const INDICATOR_EPSILON: f64 = 1e-3;
const CURVE_POINTS: usize = 801;
/// Largest `samples × sum-of-linear entries` evaluated through the full matrices.
/// Above it the closed form is used, which the matrices reproduce to 1e-8.
pub const MATRIX_WORK_BUDGET: u128 = 1 << 32;

type Evaluator = Box<dyn Fn(&Matrix) -> maxaffine_attn::Result<Matrix>>;

/// Whether the full matrices were built or the closed form was used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPath {
    Matrix,
    ClosedForm,
}

/// One evaluated configuration.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub row: ReportRow,
    pub errors: ErrorReport,
    /// Volume of the sampled region.
    pub volume: f64,
    pub path: EvalPath,
    /// `x,f,approx[,cell,envelope]` samples for 1-D runs.
    pub curve: Option<String>,
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Rows(Vec<Evaluation>),
    Checks(Vec<CheckOutcome>),
    Count(usize),
}

/// Executes `cfg` and writes its report (and plot script when `out` is set).
pub fn run(cfg: &RunConfig) -> CliResult<Outcome> {
    let outcome = execute(cfg)?;
    match &outcome {
        Outcome::Rows(evals) => {
            let rows: Vec<ReportRow> = evals.iter().map(|e| e.row.clone()).collect();
            write_text(&render_rows(&rows, cfg.format)?, cfg.out.as_deref())?;
            if let Some(out) = &cfg.out {
                if let [Evaluation { curve: Some(curve), .. }] = evals.as_slice() {
                    let path = curve_path(out);
                    fs::write(&path, curve).map_err(|e| CliError::io(&path, e))?;
                }
                emit_plot_script(out)?;
            }
        }
        Outcome::Checks(checks) => {
            write_text(&render_checks(checks, cfg.format)?, cfg.out.as_deref())?;
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in checks {
                eprintln!(
                    "[{}] {} ({:.1} s): {}",
                    if c.passed { "pass" } else { "FAIL" },
                    c.property,
                    c.runtime_ms / 1e3,
                    c.detail
                );
            }
            if failed > 0 {
                return Err(CliError::VerifyFailed {
                    failed,
                    total: checks.len(),
                });
            }
        }
        Outcome::Count(count) => write_text(&format!("{count}\n"), cfg.out.as_deref())?,
    }
    Ok(outcome)
}

/// Computes the outcome without writing anything.
pub fn execute(cfg: &RunConfig) -> CliResult<Outcome> {
    cfg.validate()?;
    match cfg.command {
        Command::Approximate => {
            let t = single_temperature(cfg)?;
            let p = single_points(cfg)?;
            Ok(Outcome::Rows(vec![self_run(cfg, "approximate", p, t)?]))
        }
        Command::Cross => {
            let t = single_temperature(cfg)?;
            let p = single_points(cfg)?;
            Ok(Outcome::Rows(vec![cross_run(cfg, "cross", p, t)?]))
        }
        Command::Cover => Ok(Outcome::Rows(vec![cover_run(cfg)?])),
        Command::IndicatorDemo => Ok(Outcome::Rows(vec![indicator_run(cfg)?])),
        Command::Sweep => sweep(cfg).map(Outcome::Rows),
        Command::Verify => Ok(Outcome::Checks(run_suite(cfg.seed))),
        Command::ParamsCount => {
            let centers = cfg
                .centers
                .ok_or_else(|| CliError::usage("params-count needs --centers"))?;
            Ok(Outcome::Count(trainable_param_count(cfg.d, cfg.n, centers)))
        }
    }
}

fn function_name(cfg: &RunConfig) -> CliResult<&str> {
    cfg.function
        .as_deref()
        .ok_or_else(|| CliError::usage(format!("{} needs --function", cfg.command.as_str())))
}

/// `None` means "derive from epsilon". Exactly one of the two must be present.
fn single_temperature(cfg: &RunConfig) -> CliResult<Option<f64>> {
    match (cfg.temperature.as_slice(), cfg.epsilon) {
        ([t], None) => Ok(Some(*t)),
        ([], Some(_)) => Ok(None),
        ([], None) => Err(CliError::usage("give either --temperature or --epsilon")),
        (_, Some(_)) => Err(CliError::usage("--temperature and --epsilon are exclusive")),
        _ => Err(CliError::usage("several temperatures need the sweep command")),
    }
}

fn single_points(cfg: &RunConfig) -> CliResult<Option<usize>> {
    match cfg.points.as_slice() {
        [] => Ok(None),
        [p] => Ok(Some(*p)),
        _ => Err(CliError::usage("several grid sizes need the sweep command")),
    }
}

/// Whether a construction that fits in memory is also cheap enough to sample.
fn matrix_affordable(fits: bool, entries: u128, samples: usize) -> bool {
    if !fits {
        return false;
    }
    let work = entries.saturating_mul(samples as u128);
    if work > MATRIX_WORK_BUDGET {
        eprintln!("note: {samples} samples over {entries} linear-layer entries exceed the matrix budget; using the closed form");
        return false;
    }
    true
}

/// Radius `ε/(3L)` on which `f` moves by at most `ε/3`.
fn delta_for(resolved: &Resolved, epsilon: f64, half_width: f64, dim: usize) -> CliResult<f64> {
    let l = resolved.lipschitz;
    if l == 0.0 {
        // Any radius works; use the box diameter.
        Ok(2.0 * half_width * (dim as f64).sqrt())
    } else if l.is_finite() {
        Ok(epsilon / (3.0 * l))
    } else {
        Err(CliError::usage(
            "the function has no Lipschitz constant, so epsilon cannot pick the grid; pass --temperature and --P",
        ))
    }
}

/// Smallest power of two `P` with grid step `2D/P ≤ δ`.
pub fn grid_points_for(half_width: f64, delta: f64) -> usize {
    let mut p = 1usize;
    while 2.0 * half_width / p as f64 > delta {
        p *= 2;
    }
    p
}

struct Plan {
    points: usize,
    temperature: f64,
}

fn plan_grid(
    cfg: &RunConfig,
    resolved: &Resolved,
    points: Option<usize>,
    temperature: Option<f64>,
    dim: usize,
    pairs: bool,
) -> CliResult<Plan> {
    let delta = match cfg.epsilon {
        Some(eps) if temperature.is_none() || points.is_none() => Some(delta_for(resolved, eps, cfg.half_width, dim)?),
        _ => None,
    };
    let points = match (points, delta) {
        (Some(p), _) => p,
        (None, Some(delta)) => grid_points_for(cfg.half_width, delta),
        (None, None) => return Err(CliError::usage("give --P or --epsilon")),
    };
    let spec = GridSpec::new(cfg.d, cfg.n, cfg.half_width, points)?;
    let g = spec.num_centers()?;
    let temperature = match (temperature, delta, cfg.epsilon) {
        (Some(t), _, _) => t,
        (None, Some(delta), Some(eps)) => {
            let count = if pairs { (g as f64) * (g as f64) } else { g as f64 };
            choose_temperature(delta, resolved.b0(), count, eps)?
        }
        _ => return Err(CliError::usage("give either --temperature or --epsilon")),
    };
    Ok(Plan { points, temperature })
}

fn box_volume(half_width: f64, dim: usize) -> f64 {
    (2.0 * half_width).powi(dim as i32)
}

fn base_row(cfg: &RunConfig, command: &str, function: &str) -> ReportRow {
    ReportRow {
        command: command.to_owned(),
        function: function.to_owned(),
        d: cfg.d,
        n: cfg.n,
        half_width: cfg.half_width,
        p_or_nx: 0,
        g: 0,
        temperature: 0.0,
        epsilon_target: cfg.epsilon,
        p: cfg.p,
        samples: cfg.samples,
        seed: cfg.seed,
        sup_err: 0.0,
        lp_err: 0.0,
        out_of_cover: 0,
        runtime_ms: 0.0,
    }
}

fn fill_errors(row: &mut ReportRow, errors: &ErrorReport) {
    row.sup_err = errors.sup_error;
    row.lp_err = errors.lp_error;
    row.out_of_cover = errors.out_of_cover;
    row.runtime_ms = errors.runtime_ms;
}

/// Samples `x ↦ (f, approx)` on `[-D, D]` for 1-token scalar runs.
fn scalar_curve(
    half_width: f64,
    f: impl Fn(&Matrix) -> maxaffine_attn::Result<Matrix>,
    approx: impl Fn(&Matrix) -> maxaffine_attn::Result<Matrix>,
) -> CliResult<String> {
    let mut out = String::from("x,f,approx\n");
    for i in 0..CURVE_POINTS {
        let x = -half_width + 2.0 * half_width * i as f64 / (CURVE_POINTS - 1) as f64;
        let z = Matrix::filled(1, 1, x)?;
        let _ = writeln!(out, "{},{},{}", fmt_float(x), fmt_float(f(&z)?.get(0, 0)), fmt_float(approx(&z)?.get(0, 0)));
    }
    Ok(out)
}

/// Grid self-attention run; the matrices are built when they fit, else the closed form is used.
pub fn self_run(cfg: &RunConfig, command: &str, points: Option<usize>, temperature: Option<f64>) -> CliResult<Evaluation> {
    let name = function_name(cfg)?;
    let dim = cfg.d * cfg.n;
    let resolved = resolve(name, Arity::Single, cfg.d, cfg.n, cfg.half_width, cfg.seed)?;
    let plan = plan_grid(cfg, &resolved, points, temperature, dim, false)?;
    let spec = GridSpec::new(cfg.d, cfg.n, cfg.half_width, plan.points)?;
    let g = spec.num_centers()?;
    let f = &resolved.target;
    let sampler = BoxSampler {
        d: cfg.d,
        n: cfg.n,
        half_width: cfg.half_width,
    };

    let (path, approx): (EvalPath, Evaluator) =
        if matrix_affordable(check_self_budget(cfg.d, cfg.n, g).is_ok(), self_linear_entries(cfg.d, cfg.n, g), cfg.samples) {
            let a = build_universal_self(f, &spec, plan.temperature)?;
            (EvalPath::Matrix, Box::new(move |z: &Matrix| a.evaluate(z)))
        } else {
            let oracle = SelfClosedForm::new(f, &grid_centers(&spec)?, plan.temperature)?;
            (EvalPath::ClosedForm, Box::new(move |z: &Matrix| oracle.evaluate(z)))
        };
    let errors = estimate_errors(|z| f.eval(z), &approx, &sampler, cfg.samples, cfg.p, cfg.seed, None)?;
    let curve = if dim == 1 {
        Some(scalar_curve(cfg.half_width, |z| f.eval(z), &approx)?)
    } else {
        None
    };

    let mut row = base_row(cfg, command, name);
    row.p_or_nx = plan.points;
    row.g = g;
    row.temperature = plan.temperature;
    fill_errors(&mut row, &errors);
    Ok(Evaluation {
        row,
        volume: sampler.volume(),
        errors,
        path,
        curve,
    })
}

/// Grid cross-attention run over pairs `(Z_K, Z_Q)`.
pub fn cross_run(cfg: &RunConfig, command: &str, points: Option<usize>, temperature: Option<f64>) -> CliResult<Evaluation> {
    let name = function_name(cfg)?;
    let dim = 2 * cfg.d * cfg.n;
    let resolved = resolve(name, Arity::Pair, cfg.d, cfg.n, cfg.half_width, cfg.seed)?;
    let plan = plan_grid(cfg, &resolved, points, temperature, dim, true)?;
    let spec = GridSpec::new(cfg.d, cfg.n, cfg.half_width, plan.points)?;
    let g = spec.num_centers()?;
    let f = &resolved.target;
    let sampler = PairBoxSampler {
        d: cfg.d,
        n: cfg.n,
        half_width: cfg.half_width,
    };

    type PairFn = Box<dyn Fn(&(Matrix, Matrix)) -> maxaffine_attn::Result<Matrix>>;
    let (path, approx): (EvalPath, PairFn) = if matrix_affordable(check_cross_budget(cfg.d, cfg.n, g).is_ok(), cross_linear_entries(cfg.d, cfg.n, g), cfg.samples) {
        let a = build_universal_cross(f, &spec, plan.temperature)?;
        (EvalPath::Matrix, Box::new(move |(k, q): &(Matrix, Matrix)| a.evaluate_cross(k, q)))
    } else {
        let pairs = (g as u128) * (g as u128);
        if pairs > MAX_CENTERS as u128 {
            return Err(Error::CapExceeded {
                what: "center pairs G^2",
                requested: pairs,
                cap: MAX_CENTERS as u128,
            }
            .into());
        }
        let oracle = CrossClosedForm::new(f, &grid_centers(&spec)?, plan.temperature)?;
        (EvalPath::ClosedForm, Box::new(move |(k, q): &(Matrix, Matrix)| oracle.evaluate(k, q)))
    };
    let errors = estimate_errors(
        |(k, q): &(Matrix, Matrix)| f.eval_pair(k, q),
        &approx,
        &sampler,
        cfg.samples,
        cfg.p,
        cfg.seed,
        None,
    )?;

    let mut row = base_row(cfg, command, name);
    row.p_or_nx = plan.points;
    row.g = g;
    row.temperature = plan.temperature;
    fill_errors(&mut row, &errors);
    Ok(Evaluation {
        row,
        volume: sampler.volume(),
        errors,
        path,
        curve: None,
    })
}

fn load_cover(cfg: &RunConfig, lipschitz: f64) -> CliResult<SphereCover> {
    let dim = cfg.d * cfg.n;
    if let Some(path) = &cfg.cover {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cover = SphereCover::parse(&text)?;
        if cover.dim() != dim {
            return Err(CliError::usage(format!(
                "cover centers have {} coordinates but d·n = {dim}",
                cover.dim()
            )));
        }
        return Ok(cover);
    }
    let count = cfg
        .centers
        .ok_or_else(|| CliError::usage("cover needs --cover FILE or --centers N"))?;
    let radius = match cfg.epsilon {
        Some(eps) if lipschitz > 0.0 && lipschitz.is_finite() => eps / (3.0 * lipschitz),
        // Spacing of a grid with the same number of points.
        _ => cfg.half_width / (count as f64).powf(1.0 / dim as f64),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x63_6f76_6572);
    let centers = (0..count)
        .map(|_| (0..dim).map(|_| rng.gen_range(-cfg.half_width..=cfg.half_width)).collect())
        .collect();
    Ok(SphereCover::new(centers, radius)?)
}

/// Cover run: samples the box and keeps points inside the cover.
pub fn cover_run(cfg: &RunConfig) -> CliResult<Evaluation> {
    let name = function_name(cfg)?;
    let temperature = single_temperature(cfg)?;
    let dim = cfg.d * cfg.n;
    // Lipschitz constant does not depend on the box, so resolve once for it.
    let probe = resolve(name, Arity::Single, cfg.d, cfg.n, cfg.half_width, cfg.seed)?;
    let cover = load_cover(cfg, probe.lipschitz)?;
    let (lo, hi) = cover.bounding_box();
    let reach = lo.iter().chain(&hi).fold(cfg.half_width, |m, x| m.max(x.abs()));
    let resolved = resolve(name, Arity::Single, cfg.d, cfg.n, reach, cfg.seed)?;
    let f = &resolved.target;
    let temperature = match (temperature, cfg.epsilon) {
        (Some(t), _) => t,
        (None, Some(eps)) => choose_temperature(cover.radius(), resolved.b0(), cover.len() as f64, eps)?,
        (None, None) => unreachable!("checked by single_temperature"),
    };
    let (path, approx): (EvalPath, Evaluator) =
        if matrix_affordable(
            check_self_budget(cfg.d, cfg.n, cover.len()).is_ok(),
            self_linear_entries(cfg.d, cfg.n, cover.len()),
            cfg.samples,
        ) {
            let a = build_small_region(f, &cover, temperature)?;
            (EvalPath::Matrix, Box::new(move |z: &Matrix| a.evaluate(z)))
        } else {
            let oracle = SelfClosedForm::new(f, cover.centers(), temperature)?;
            (EvalPath::ClosedForm, Box::new(move |z: &Matrix| oracle.evaluate(z)))
        };
    let sampler = BoxSampler {
        d: cfg.d,
        n: cfg.n,
        half_width: cfg.half_width,
    };
    let inside = |z: &Matrix| cover.contains(z.flatten_sequence().as_slice());
    let errors = estimate_errors(|z| f.eval(z), &approx, &sampler, cfg.samples, cfg.p, cfg.seed, Some(&inside))?;

    let mut row = base_row(cfg, "cover", name);
    row.p_or_nx = cover.len();
    row.g = cover.len();
    row.temperature = temperature;
    fill_errors(&mut row, &errors);
    Ok(Evaluation {
        row,
        volume: box_volume(cfg.half_width, dim),
        errors,
        path,
        curve: None,
    })
}

/// Max-affine function whose cells are the intervals between [`STEP_BREAKS`]:
/// component `i` has slope `i` and switches with `i + 1` at the `i`-th break.
pub fn step_partition() -> MaxAffine {
    let mut intercept = 0.0;
    let mut components = vec![(vec![0.0], 0.0)];
    for (i, b) in STEP_BREAKS.iter().enumerate() {
        intercept -= b;
        components.push((vec![(i + 1) as f64], intercept));
    }
    MaxAffine::new(components).expect("finite components")
}

/// Indicator demo: step target, cell values looked up by reassignment attention.
pub fn indicator_run(cfg: &RunConfig) -> CliResult<Evaluation> {
    let name = cfg.function.as_deref().unwrap_or("step1d");
    if name != "step1d" {
        return Err(CliError::usage("indicator-demo only supports --function step1d"));
    }
    if cfg.d != 1 {
        return Err(CliError::usage("indicator-demo needs d = 1"));
    }
    if !cfg.temperature.is_empty() {
        return Err(CliError::usage("indicator-demo derives its temperature from --epsilon"));
    }
    let eps = cfg.epsilon.unwrap_or(INDICATOR_EPSILON);
    let ma = step_partition();
    let values: Vec<Vec<f64>> = STEP_VALUES.iter().map(|v| vec![*v]).collect();
    let c = build_reassign_attention(&ma, &values, cfg.n, eps, INDICATOR_MARGIN)?;
    let sampler = BoxSampler {
        d: 1,
        n: cfg.n,
        half_width: cfg.half_width,
    };
    let clear = |z: &Matrix| {
        z.as_slice()
            .iter()
            .all(|x| ma.evaluate(&[*x]).map(|r| r.margin >= INDICATOR_MARGIN).unwrap_or(false))
    };
    let errors = estimate_errors(
        |z: &Matrix| z.map(step1d),
        |z: &Matrix| c.apply(z),
        &sampler,
        cfg.samples,
        cfg.p,
        cfg.seed,
        Some(&clear),
    )?;

    let one = build_reassign_attention(&ma, &values, 1, eps, INDICATOR_MARGIN)?;
    let mut curve = String::from("x,f,approx,cell,envelope\n");
    for i in 0..CURVE_POINTS {
        let x = -cfg.half_width + 2.0 * cfg.half_width * i as f64 / (CURVE_POINTS - 1) as f64;
        let part = ma.evaluate(&[x])?;
        let approx = one.apply(&Matrix::filled(1, 1, x)?)?.get(0, 0);
        let _ = writeln!(
            curve,
            "{},{},{},{},{}",
            fmt_float(x),
            fmt_float(step1d(x)),
            fmt_float(approx),
            part.cell_index,
            fmt_float(part.value)
        );
    }

    let mut row = base_row(cfg, "indicator-demo", name);
    row.p_or_nx = ma.len();
    row.g = ma.len();
    row.temperature = c.chosen_r;
    row.epsilon_target = Some(eps);
    fill_errors(&mut row, &errors);
    Ok(Evaluation {
        row,
        volume: sampler.volume(),
        errors,
        path: EvalPath::Matrix,
        curve: Some(curve),
    })
}

/// Every grid size against every temperature, or each grid size with the temperature from epsilon.
pub fn sweep(cfg: &RunConfig) -> CliResult<Vec<Evaluation>> {
    let name = function_name(cfg)?;
    if cfg.points.is_empty() {
        return Err(CliError::usage("sweep needs --P with one or more values"));
    }
    let temps: Vec<Option<f64>> = match (cfg.temperature.is_empty(), cfg.epsilon) {
        (false, None) => cfg.temperature.iter().copied().map(Some).collect(),
        (true, Some(_)) => vec![None],
        (false, Some(_)) => return Err(CliError::usage("--temperature and --epsilon are exclusive")),
        (true, None) => return Err(CliError::usage("give either --temperature or --epsilon")),
    };
    let pair = resolve(name, Arity::Pair, cfg.d, cfg.n, cfg.half_width, cfg.seed).is_ok()
        && resolve(name, Arity::Single, cfg.d, cfg.n, cfg.half_width, cfg.seed).is_err();
    let mut rows = Vec::with_capacity(cfg.points.len() * temps.len());
    for &p in &cfg.points {
        for &t in &temps {
            let mut e = if pair {
                cross_run(cfg, "sweep", Some(p), t)?
            } else {
                self_run(cfg, "sweep", Some(p), t)?
            };
            e.curve = None;
            rows.push(e);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_of_two_rule() {
        assert_eq!(grid_points_for(1.0, 0.5), 4);
        assert_eq!(grid_points_for(1.0, 0.4), 8);
        assert_eq!(grid_points_for(1.0, 2.0), 1);
        let delta = 0.1 / (3.0 * std::f64::consts::PI * 2f64.sqrt());
        assert_eq!(grid_points_for(1.0, delta), 512);
    }

    #[test]
    fn step_partition_cells_follow_the_breaks() {
        let ma = step_partition();
        for (x, cell) in [(-0.9, 0), (-0.3, 1), (0.3, 2), (0.9, 3)] {
            assert_eq!(ma.evaluate(&[x]).unwrap().cell_index, cell);
            assert_eq!(STEP_VALUES[cell], step1d(x));
        }
        // Slopes differ by one, so the margin is the distance to the nearest break.
        assert!((ma.evaluate(&[0.2]).unwrap().margin - 0.2).abs() < 1e-12);
    }

    #[test]
    fn temperature_and_epsilon_are_exclusive() {
        let mut cfg = RunConfig::new(Command::Approximate);
        cfg.function = Some("const:1".into());
        cfg.points = vec![2];
        assert!(matches!(execute(&cfg), Err(CliError::Usage(_))));
        cfg.temperature = vec![3.0];
        cfg.epsilon = Some(0.1);
        assert!(matches!(execute(&cfg), Err(CliError::Usage(_))));
    }

    #[test]
    fn params_count_example() {
        let mut cfg = RunConfig::new(Command::ParamsCount);
        cfg.centers = Some(3);
        assert!(matches!(execute(&cfg).unwrap(), Outcome::Count(19)));
    }
}
