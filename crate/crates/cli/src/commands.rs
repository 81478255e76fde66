//! One function per subcommand. Each returns an [`Outcome`] with a typed
//! result serialized into the report envelope.

use crate::config::{ControlConfig, LawConfig, Property, RecordConfig, SystemConfig, TaskConfig};
use crate::report::{envelope, Artifact};
use crate::{CliError, Context, Outcome};
use mfcontrol::analysis::analyze as analyze_system;
use mfcontrol::exactctrl::{assemble_exact_control, verify_exact_pathwise, HermiteTarget};
use mfcontrol::moments::{integrate_moments, GridSpec};
use mfcontrol::signal::{matrix_to_rows, ControlDocument};
use mfcontrol::simulate::{empirical_compare, simulate_particles_with, Recording};
use mfcontrol::synthesis::plan_gaussian_steering;
use mfcontrol::wbsde::{backward_moments, backward_reachable_set_1d, z_alpha_signal, Wbsde1DParams};
use mfcontrol::{ControlSignal, GaussianLaw, MeanFieldSystem, RealVector};
use serde::{Deserialize, Serialize};

pub const DEFAULT_GRID_POINTS: usize = 101;
pub const DEFAULT_EXACT_STEPS: usize = 10_000;
pub const DEFAULT_EXACT_PATHS: usize = 200;
pub const DEFAULT_SIGMA_POINTS: usize = 101;

fn system(ctx: &Context) -> Result<(MeanFieldSystem, &SystemConfig), CliError> {
    let cfg = ctx
        .config
        .system
        .as_ref()
        .ok_or_else(|| CliError::config("system", "this command needs a system block"))?;
    Ok((cfg.build()?, cfg))
}

fn missing_task(command: &str) -> CliError {
    CliError::config(
        "task",
        format!("the `{command}` command needs a task block of kind `{command}`"),
    )
}

fn vec_of(v: &RealVector) -> Vec<f64> {
    v.iter().copied().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeResult {
    pub d: usize,
    pub n: usize,
    pub horizon: f64,
    pub rank_d1: usize,
    pub rank_d1_plus_d2: usize,
    pub rank_d2: usize,
    pub kalman_rank: usize,
    pub l2_terminal_controllable: bool,
    pub l2_conditional: bool,
    pub etcnl_necessary: bool,
    pub etcnl_sufficient: bool,
    pub etcnl_conditional: bool,
    pub etcnl_structure_warning: Option<String>,
    pub assumption_gramian_holds: bool,
    pub range_c_in_d1: bool,
    pub range_c_in_d2: bool,
    pub obstruction_witness: Option<Vec<f64>>,
    pub obstruction_source: Option<String>,
    pub etcnl_witness: Option<Vec<f64>>,
    pub gramian_condition_number: Option<f64>,
    pub gramian_note: Option<String>,
    /// Required properties that failed.
    pub failed_requirements: Vec<Property>,
}

pub fn analyze(ctx: &Context) -> Result<Outcome, CliError> {
    let (sys, cfg) = system(ctx)?;
    let require = match &ctx.config.task {
        Some(TaskConfig::Analyze { require }) => require.clone(),
        _ => None,
    }
    .unwrap_or_else(|| vec![Property::Etcnl]);
    let r = analyze_system(&sys)?;
    let failed: Vec<Property> = require
        .iter()
        .copied()
        .filter(|p| match p {
            Property::L2 => !r.l2_terminal_controllable,
            Property::Etcnl => !r.etcnl_necessary,
            Property::Gramian => !r.assumption_gramian_holds,
        })
        .collect();
    let result = AnalyzeResult {
        d: cfg.d,
        n: cfg.n,
        horizon: cfg.horizon,
        rank_d1: r.rank_d1,
        rank_d1_plus_d2: r.rank_d1_plus_d2,
        rank_d2: r.rank_d2,
        kalman_rank: r.kalman_rank,
        l2_terminal_controllable: r.l2_terminal_controllable,
        l2_conditional: r.l2_conditional,
        etcnl_necessary: r.etcnl_necessary,
        etcnl_sufficient: r.etcnl_sufficient,
        etcnl_conditional: r.etcnl_conditional,
        etcnl_structure_warning: r.etcnl_structure_warning.clone(),
        assumption_gramian_holds: r.assumption_gramian_holds,
        range_c_in_d1: r.range_c_in_d1,
        range_c_in_d2: r.range_c_in_d2,
        obstruction_witness: r.obstruction_witness.as_ref().map(vec_of),
        obstruction_source: r.obstruction_source.map(|s| s.label().to_string()),
        etcnl_witness: r.etcnl_witness.as_ref().map(vec_of),
        gramian_condition_number: r.gramian_condition_number,
        gramian_note: r.gramian_note.clone(),
        failed_requirements: failed.clone(),
    };
    let mut table = String::from("property,value\n");
    for (k, v) in [
        ("l2_terminal_controllable", result.l2_terminal_controllable),
        ("l2_conditional", result.l2_conditional),
        ("etcnl_necessary", result.etcnl_necessary),
        ("etcnl_sufficient", result.etcnl_sufficient),
        ("etcnl_conditional", result.etcnl_conditional),
        ("assumption_gramian_holds", result.assumption_gramian_holds),
        ("range_c_in_d1", result.range_c_in_d1),
        ("range_c_in_d2", result.range_c_in_d2),
    ] {
        table.push_str(&format!("{k},{v}\n"));
    }
    for (k, v) in [
        ("rank_d1", result.rank_d1),
        ("rank_d1_plus_d2", result.rank_d1_plus_d2),
        ("rank_d2", result.rank_d2),
        ("kalman_rank", result.kalman_rank),
    ] {
        table.push_str(&format!("{k},{v}\n"));
    }
    let summary = format!(
        "l2_terminal_controllable={} etcnl_necessary={} etcnl_sufficient={} assumption_gramian_holds={}",
        result.l2_terminal_controllable,
        result.etcnl_necessary,
        result.etcnl_sufficient,
        result.assumption_gramian_holds
    );
    let negative = (!failed.is_empty()).then(|| format!("required properties failed: {failed:?}"));
    Ok(Outcome {
        report: envelope(&ctx.meta, None, &result)?,
        artifacts: vec![Artifact::table("verdicts", table)],
        negative,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub particles: usize,
    pub steps: usize,
    pub fitted_mean: Vec<f64>,
    pub fitted_covariance: Vec<Vec<f64>>,
    pub mean_error: f64,
    pub cov_error_frobenius: f64,
    pub w2_gaussian: f64,
    pub fourth_moment_excess: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizeResult {
    pub initial_state: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_covariance: Vec<Vec<f64>>,
    pub predicted_mean: Vec<f64>,
    pub predicted_covariance: Vec<Vec<f64>>,
    pub mean_residual: f64,
    pub covariance_residual: f64,
    /// Larger of the two residuals.
    pub verification_residual: f64,
    pub monte_carlo: Option<MonteCarloResult>,
}

pub fn synthesize(ctx: &Context, seed: u64) -> Result<Outcome, CliError> {
    let (sys, cfg) = system(ctx)?;
    let Some(TaskConfig::Synthesize {
        target,
        grid_points,
        monte_carlo,
        ..
    }) = &ctx.config.task
    else {
        return Err(missing_task("synthesize"));
    };
    let target = target.build("task.target", cfg.d)?;
    let plan = plan_gaussian_steering(&sys, &target)?;
    let start = GaussianLaw::point(plan.initial_state.clone());
    let points = grid_points.unwrap_or(DEFAULT_GRID_POINTS).max(2);
    let path = integrate_moments(&sys, &start, &plan.control, &GridSpec::Uniform(points))?;
    let diag = &plan.diagnostics;
    let mut artifacts = vec![
        Artifact::json("control.json", &plan.control.to_document())?,
        Artifact::table("moments", path.to_csv()),
    ];
    let mc = match monte_carlo {
        None => None,
        Some(mc) => {
            let ens = simulate_particles_with(
                &sys,
                &start,
                &plan.control,
                mc.steps,
                mc.particles,
                seed,
                Recording::Every(mc.steps.div_ceil(100).max(1)),
            )?;
            let cmp = empirical_compare(&ens, sys.horizon(), &target)?;
            artifacts.push(Artifact::table("ensemble_summary", ens.summary_csv()));
            Some(MonteCarloResult {
                particles: mc.particles,
                steps: mc.steps,
                fitted_mean: vec_of(&cmp.fitted.mean),
                fitted_covariance: matrix_to_rows(&cmp.fitted.covariance),
                mean_error: cmp.mean_error,
                cov_error_frobenius: cmp.cov_error_frobenius,
                w2_gaussian: cmp.w2_gaussian,
                fourth_moment_excess: cmp.fourth_moment_excess,
            })
        }
    };
    let result = SynthesizeResult {
        initial_state: vec_of(&plan.initial_state),
        target_mean: vec_of(&target.mean),
        target_covariance: matrix_to_rows(&target.covariance),
        predicted_mean: vec_of(&diag.predicted_mean),
        predicted_covariance: matrix_to_rows(&diag.predicted_covariance),
        mean_residual: diag.mean_residual,
        covariance_residual: diag.covariance_residual,
        verification_residual: diag.mean_residual.max(diag.covariance_residual),
        monte_carlo: mc,
    };
    let mut summary = format!(
        "synthesized control with {} segment(s); verification residual {:e}",
        plan.control.segments().len(),
        result.verification_residual
    );
    if let Some(mc) = &result.monte_carlo {
        summary.push_str(&format!("; Monte-Carlo W2 {:e}", mc.w2_gaussian));
    }
    let seed_used = result.monte_carlo.is_some().then_some(seed);
    Ok(Outcome {
        report: envelope(&ctx.meta, seed_used, &result)?,
        artifacts,
        negative: None,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub steps: usize,
    pub dt: f64,
    pub rms_error: f64,
    pub max_error: f64,
    pub relative_rms_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactctrlResult {
    pub x0: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_rms: f64,
    pub y1_initial: Vec<f64>,
    pub y2_identity_residual: f64,
    pub gramian_condition_number: Option<f64>,
    pub paths: usize,
    pub levels: Vec<LevelResult>,
    /// `None` when every level is at round-off.
    pub fitted_order: Option<f64>,
    pub at_roundoff_floor: bool,
}

pub fn exactctrl(ctx: &Context, seed: u64) -> Result<Outcome, CliError> {
    let (sys, cfg) = system(ctx)?;
    let Some(TaskConfig::Exactctrl {
        x0,
        target,
        steps,
        paths,
        ..
    }) = &ctx.config.task
    else {
        return Err(missing_task("exactctrl"));
    };
    if x0.len() != cfg.d {
        return Err(CliError::config(
            "task.x0",
            format!("expected length {}, found {}", cfg.d, x0.len()),
        ));
    }
    let x0 = RealVector::from_vec(x0.clone());
    let target = HermiteTarget::new(target.coefficients.clone(), target.t_prime)
        .map_err(|e| CliError::config("task.target", e.to_string()))?;
    let plan = assemble_exact_control(&sys, &x0, &target)?;
    let steps = steps.unwrap_or(DEFAULT_EXACT_STEPS);
    let paths = paths.unwrap_or(DEFAULT_EXACT_PATHS);
    let ladder = verify_exact_pathwise(&plan, steps, paths, seed)?;
    let levels: Vec<LevelResult> = ladder
        .levels
        .iter()
        .map(|l| LevelResult {
            steps: l.steps,
            dt: l.dt,
            rms_error: l.rms_error,
            max_error: l.max_error,
            relative_rms_error: l.rms_error / ladder.target_rms.max(f64::MIN_POSITIVE),
        })
        .collect();
    let mut table = String::from("steps,dt,rms_error,max_error,relative_rms_error\n");
    for l in &levels {
        table.push_str(&format!(
            "{},{:?},{:?},{:?},{:?}\n",
            l.steps, l.dt, l.rms_error, l.max_error, l.relative_rms_error
        ));
    }
    let result = ExactctrlResult {
        x0: vec_of(&x0),
        target_mean: vec_of(&target.mean()),
        target_rms: ladder.target_rms,
        y1_initial: vec_of(&plan.diagnostics.y1_initial),
        y2_identity_residual: plan.diagnostics.y2_identity_residual,
        gramian_condition_number: plan.diagnostics.gramian_condition_number,
        paths,
        levels,
        fitted_order: ladder.fitted_order,
        at_roundoff_floor: ladder.at_roundoff_floor(),
    };
    let finest = result.levels.last().map_or(f64::NAN, |l| l.relative_rms_error);
    let order = match result.fitted_order {
        Some(o) => format!("{o:.3}"),
        None => "n/a (round-off floor)".to_string(),
    };
    let summary = format!(
        "relative RMS terminal error {finest:e} at the finest level; fitted order {order}; Y2(0) identity residual {:e}",
        result.y2_identity_residual
    );
    Ok(Outcome {
        report: envelope(&ctx.meta, Some(seed), &result)?,
        artifacts: vec![
            Artifact::json("control.json", &plan.u0.to_document())?,
            Artifact::table("convergence", table),
        ],
        negative: None,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub target_mean: Vec<f64>,
    pub target_covariance: Vec<Vec<f64>>,
    pub mean_error: f64,
    pub cov_error_frobenius: f64,
    pub w2_gaussian: f64,
    pub fourth_moment_excess: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateResult {
    pub particles: usize,
    pub steps: usize,
    pub dt: f64,
    pub recorded_times: usize,
    pub terminal_mean: Vec<f64>,
    pub terminal_covariance: Vec<Vec<f64>>,
    pub comparison: Option<ComparisonResult>,
}

fn load_control(
    ctx: &Context,
    chosen_cfg: &ControlConfig,
    dim: usize,
    horizon: f64,
) -> Result<ControlSignal, CliError> {
    let chosen = [
        chosen_cfg.constant.is_some(),
        chosen_cfg.document.is_some(),
        chosen_cfg.file.is_some(),
    ];
    if chosen.iter().filter(|&&b| b).count() != 1 {
        return Err(CliError::config(
            "task.control",
            "exactly one of `constant`, `document` or `file` must be given",
        ));
    }
    let doc = if let Some(v) = &chosen_cfg.constant {
        if v.len() != dim {
            return Err(CliError::config(
                "task.control.constant",
                format!("expected length {dim}, found {}", v.len()),
            ));
        }
        return Ok(ControlSignal::constant(RealVector::from_vec(v.clone()), 0.0, horizon)?);
    } else if let Some(doc) = &chosen_cfg.document {
        doc.clone()
    } else {
        let path = ctx.config_dir.join(chosen_cfg.file.as_ref().expect("checked above"));
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str::<ControlDocument>(&text)
            .map_err(|e| CliError::config("task.control.file", format!("{}: {e}", path.display())))?
    };
    ControlSignal::from_document(&doc).map_err(|e| CliError::config("task.control", e.to_string()))
}

fn build_law(law: &LawConfig, field: &str, d: usize) -> Result<GaussianLaw, CliError> {
    law.build(field, d)
}

pub fn simulate(ctx: &Context, seed: u64) -> Result<Outcome, CliError> {
    let (sys, cfg) = system(ctx)?;
    let Some(TaskConfig::Simulate {
        initial,
        control,
        steps,
        particles,
        record,
        target,
        raw_rows,
        ..
    }) = &ctx.config.task
    else {
        return Err(missing_task("simulate"));
    };
    let initial = build_law(initial, "task.initial", cfg.d)?;
    let control = load_control(ctx, control, cfg.n, cfg.horizon)?;
    let recording = match record.unwrap_or(RecordConfig::All) {
        RecordConfig::All => Recording::All,
        RecordConfig::Endpoints => Recording::Endpoints,
        RecordConfig::Every(k) => Recording::Every(k),
    };
    let ens = simulate_particles_with(&sys, &initial, &control, *steps, *particles, seed, recording)?;
    let last = ens.times().len() - 1;
    let fit = ens.fit(last);
    let comparison = match target {
        None => None,
        Some(t) => {
            let law = build_law(t, "task.target", cfg.d)?;
            let cmp = empirical_compare(&ens, cfg.horizon, &law)?;
            Some(ComparisonResult {
                target_mean: vec_of(&law.mean),
                target_covariance: matrix_to_rows(&law.covariance),
                mean_error: cmp.mean_error,
                cov_error_frobenius: cmp.cov_error_frobenius,
                w2_gaussian: cmp.w2_gaussian,
                fourth_moment_excess: cmp.fourth_moment_excess,
            })
        }
    };
    let mut artifacts = vec![Artifact::table("ensemble_summary", ens.summary_csv())];
    if let Some(max_rows) = raw_rows {
        artifacts.push(Artifact::table("paths", ens.raw_csv(*max_rows)?));
    }
    let result = SimulateResult {
        particles: ens.particles(),
        steps: ens.steps,
        dt: ens.dt,
        recorded_times: ens.times().len(),
        terminal_mean: vec_of(&fit.mean),
        terminal_covariance: matrix_to_rows(&fit.covariance),
        comparison,
    };
    let mut summary = format!(
        "simulated {} particles over {} steps; terminal mean {:?}",
        result.particles, result.steps, result.terminal_mean
    );
    if let Some(c) = &result.comparison {
        summary.push_str(&format!("; W2 to target {:e}", c.w2_gaussian));
    }
    Ok(Outcome {
        report: envelope(&ctx.meta, Some(seed), &result)?,
        artifacts,
        negative: None,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryQuery {
    pub sigma: f64,
    pub y_min: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaQuery {
    pub alpha: f64,
    pub sigma: f64,
    /// Mean reached at time `s` by the `z_α` construction.
    pub y: f64,
    /// Variance reached at time `s` by the `z_α` construction.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WbsdeResult {
    pub s: f64,
    pub sigma_max: f64,
    pub center: f64,
    pub width_scale: f64,
    pub terminal_mean: f64,
    pub terminal_variance: f64,
    pub query: Option<BoundaryQuery>,
    pub alpha_query: Option<AlphaQuery>,
}

pub fn wbsde(ctx: &Context) -> Result<Outcome, CliError> {
    let Some(TaskConfig::Wbsde {
        a1,
        a2,
        b,
        horizon,
        mu,
        s,
        sigma,
        alpha,
        sigma_points,
    }) = &ctx.config.task
    else {
        return Err(missing_task("wbsde"));
    };
    let mu = GaussianLaw::scalar(mu.mean, mu.variance).map_err(|e| CliError::config("task.mu", e.to_string()))?;
    let p = Wbsde1DParams::new(*a1, *a2, *b, *horizon, mu)?;
    let set = backward_reachable_set_1d(&p, *s)?;
    let mut grid = set.sigma_grid(sigma_points.unwrap_or(DEFAULT_SIGMA_POINTS));
    let query = match sigma {
        None => None,
        Some(sg) => {
            let q = BoundaryQuery {
                sigma: *sg,
                y_min: set.y_min(*sg)?,
                y_max: set.y_max(*sg)?,
            };
            if !grid.contains(sg) {
                grid.push(*sg);
                grid.sort_by(f64::total_cmp);
            }
            Some(q)
        }
    };
    let alpha_query = match alpha {
        None => None,
        Some(al) => {
            let sg = sigma.ok_or_else(|| CliError::config("task.alpha", "an alpha query also needs `sigma`"))?;
            let z = z_alpha_signal(&p, *s, sg, *al)?;
            let (y, variance) = backward_moments(&p, &z, *s)?;
            Some(AlphaQuery {
                alpha: *al,
                sigma: sg,
                y,
                variance,
            })
        }
    };
    let result = WbsdeResult {
        s: set.s,
        sigma_max: set.sigma_max,
        center: set.center,
        width_scale: set.width_scale,
        terminal_mean: p.terminal_mean(),
        terminal_variance: p.terminal_variance(),
        query,
        alpha_query,
    };
    let summary = match &result.query {
        Some(q) => format!(
            "at s={} and variance {}: y_min={} y_max={}",
            result.s, q.sigma, q.y_min, q.y_max
        ),
        None => format!("reachable variances at s={} lie in [0, {}]", result.s, result.sigma_max),
    };
    Ok(Outcome {
        report: envelope(&ctx.meta, None, &result)?,
        artifacts: vec![Artifact::table("boundary", set.boundary_csv(&grid)?)],
        negative: None,
        summary,
    })
}
