//! Implementations of the direct (non-reproduce) subcommands.
//!
//! Each command resolves its parameter schema, produces one or more CSV (or
//! binary) files in the output directory, and finishes by writing a
//! manifest. The parameter defaults are the reference configurations used
//! throughout the bundled datasets.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use sirnc::closedform::{
    time_varying, ClosedFormSolution, ImportedSolution, QuadRule, QuadratureSpec,
};
use sirnc::control::{
    backward_dp, backward_dp_validated, tree_search_mpc, AlphaPolicy, ControlDynamics,
    ControlState, CostModel, DpMode, InterventionCosts, StateGrid,
};
use sirnc::core::{InitialState, ModelParams, Schedule};
use sirnc::csv::write_columns;
use sirnc::multiobj::{
    evaluate_policy_per_objective, run_multiobjective, solve_k_objectives, two_timescale_control,
    CommunityControl, ObjectiveSet, StepSizeRule, TwoTimescaleSpec,
};
use sirnc::ode;
use sirnc::perturbation::{alekseev_correct, repeated_window_correct};

use crate::manifest::write_manifest;
use crate::spec::{key, RunSpec, Schema};
use crate::CliError;

pub struct Context {
    pub out: PathBuf,
    pub seed: u64,
    pub step: Option<f64>,
    pub quiet: bool,
    pub spec_path: Option<PathBuf>,
}

/// Resolves the schema, runs the command, writes the manifest.
pub fn run_named(ctx: &Context, name: &str) -> Result<(), CliError> {
    let schema = schema_for(name).expect("every subcommand has a schema");
    let mut spec = RunSpec::resolve(schema, ctx.spec_path.as_deref())?;
    spec.override_step(ctx.step);
    let files = dispatch(&spec, &ctx.out)?;
    if files.is_empty() {
        return Err(CliError::Numeric(format!("`{name}` produced no data")));
    }
    let params: Vec<(String, String)> =
        spec.entries().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    let manifest = write_manifest(&ctx.out, name, ctx.seed, &params, &files)?;
    if !ctx.quiet {
        for file in &files {
            println!("wrote {}", file.display());
        }
        println!("wrote {}", manifest.display());
    }
    Ok(())
}

pub fn dispatch(spec: &RunSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    match spec.command() {
        "trajectory" => trajectory(spec, out),
        "compare-sir" => compare_sir(spec, out),
        "peak-sweep" => peak_sweep(spec, out),
        "imported" => imported(spec, out),
        "communities" => communities(spec, out),
        "vital" => vital(spec, out),
        "perturbation" => perturbation(spec, out),
        "control-mpc" => control_mpc(spec, out),
        "control-dp" => control_dp(spec, out),
        "multiobj" => multiobj(spec, out),
        "two-timescale" => two_timescale(spec, out),
        other => unreachable!("no dispatcher for `{other}`"),
    }
}

pub fn schema_for(name: &str) -> Option<&'static Schema> {
    SCHEMAS.iter().find(|s| s.command == name)
}

pub static SCHEMAS: &[Schema] = &[
    Schema {
        command: "trajectory",
        keys: &[
            key("lambda", "0.25", "infection rate"),
            key("gamma", "1/15", "removal rate"),
            key("beta", "0", "recovery rate feeding R (<= gamma)"),
            key("s0", "9999", "initial susceptibles"),
            key("i0", "1", "initial infected"),
            key("r0", "0", "initial recovered"),
            key("t_end", "150", "horizon"),
            key("dt", "0.5", "output grid spacing"),
            key("step", "0.01", "quadrature step for R"),
        ],
    },
    Schema {
        command: "compare-sir",
        keys: &[
            key("lambda", "0.25", "infection rate"),
            key("gamma", "1/15", "removal rate"),
            key("n", "10000", "total population (classic SIR normalizer)"),
            key("i0", "1", "initial infected"),
            key("t_end", "150", "horizon"),
            key("dt", "0.5", "output grid spacing"),
            key("step", "0.01", "RK4 step for the classic model"),
        ],
    },
    Schema {
        command: "peak-sweep",
        keys: &[
            key("lambda", "0.25", "infection rate"),
            key("gamma0", "1/15", "natural removal rate"),
            key("s0", "9999", "initial susceptibles"),
            key("i0", "1", "initial infected"),
            key("gamma1_max", "0.2", "largest extra removal rate"),
            key("points", "81", "sweep resolution"),
        ],
    },
    Schema {
        command: "imported",
        keys: &[
            key("lambda", "0.25", "infection rate"),
            key("gamma", "1/15", "removal rate"),
            key("nu", "0.0025", "imported-infection rate"),
            key("s0", "9999", "initial susceptibles"),
            key("i0", "1", "initial infected"),
            key("t_end", "150", "horizon"),
            key("dt", "0.5", "output grid spacing"),
            key("step", "0.01", "quadrature step"),
        ],
    },
    Schema {
        command: "communities",
        keys: &[
            key("lambda_a", "0.25", "community a infection rate"),
            key("gamma_a", "1/15", "community a removal rate"),
            key("s0_a", "9999", "community a susceptibles"),
            key("i0_a", "1", "community a infected"),
            key("lambda_b", "0.25", "community b infection rate"),
            key("gamma_b", "1/15", "community b removal rate"),
            key("s0_b", "9999", "community b susceptibles"),
            key("i0_b", "1", "community b infected"),
            key("lambda_ab", "0.01", "cross rate b -> a"),
            key("lambda_ba", "0.01", "cross rate a -> b"),
            key("t_end", "150", "horizon"),
            key("step", "0.01", "RK4 step"),
        ],
    },
    Schema {
        command: "vital",
        keys: &[
            key("lambda", "0.25", "infection rate"),
            key("gamma", "1/15", "removal rate"),
            key("beta", "0.98/15", "recovery rate"),
            key("kappa", "0", "net susceptible birth-death rate"),
            key("upsilon1", "0.001", "birth rate from the infected"),
            key("upsilon2", "0.001", "birth rate from the recovered"),
            key("nu1", "0.001", "natural death rate of the infected"),
            key("nu2", "0.001", "natural death rate of the recovered"),
            key("s0", "9999", "initial susceptibles"),
            key("i0", "1", "initial infected"),
            key("r0", "0", "initial recovered"),
            key("t_end", "3000", "horizon"),
            key("step", "0.01", "RK4 step"),
        ],
    },
    Schema {
        command: "perturbation",
        keys: &[
            key("lambda_a", "0.25", "community a infection rate"),
            key("gamma_a", "1/15", "community a removal rate"),
            key("s0_a", "9950", "community a susceptibles"),
            key("i0_a", "50", "community a infected"),
            key("lambda_b", "0.25", "community b infection rate"),
            key("gamma_b", "1/15", "community b removal rate"),
            key("s0_b", "9950", "community b susceptibles"),
            key("i0_b", "50", "community b infected"),
            key("lambda_ab", "0.02", "cross rate b -> a"),
            key("lambda_ba", "0.02", "cross rate a -> b"),
            key("horizon", "10", "correction horizon"),
            key("window", "10", "re-anchoring window (= horizon: single pass)"),
            key("step", "0.01", "grid step"),
        ],
    },
    Schema {
        command: "control-mpc",
        keys: &[
            key("a3", "1.2", "infection-cost exponent"),
            key("alpha", "constant", "terminal target: `constant` or `ramp`"),
            key("alpha_floor", "0.1", "target fraction floor"),
            key("terminal_scale", "100", "terminal cost scale (A1)"),
            key("terminal_rate", "10", "terminal exponential rate (a1)"),
            key("l1", "0", "running cost of the open level"),
            key("l2", "10000", "running cost of the partial lockdown"),
            key("l3", "100000", "running cost of the total lockdown"),
            key("switch_scale", "10000", "switching-cost scale (a2)"),
            key("testing_rate_coeff", "100", "testing cost per excess removal (A2)"),
            key("testing_startup_coeff", "100", "early-epidemic testing weight (A3)"),
            key("infection_coeff", "10", "infection cost scale (A4)"),
            key("lookahead", "3", "inner horizon (steps)"),
            key("horizon", "150", "outer steps"),
            key("gamma_levels", "10", "testing-rate grid size"),
            key("gamma_max", "1/3", "largest testing rate"),
            key("lambda", "0.25", "natural infection rate"),
            key("gamma0", "1/15", "natural removal rate"),
            key("s0", "9999", "initial susceptibles"),
            key("i0", "1", "initial infected"),
            key("a", "1", "discretization step"),
        ],
    },
    Schema {
        command: "control-dp",
        keys: &[
            key("a3", "1.2", "infection-cost exponent"),
            key("alpha", "constant", "terminal target: `constant` or `ramp`"),
            key("alpha_floor", "0.1", "target fraction floor"),
            key("terminal_scale", "100", "terminal cost scale (A1)"),
            key("terminal_rate", "10", "terminal exponential rate (a1)"),
            key("l1", "0", "running cost of the open level"),
            key("l2", "10000", "running cost of the partial lockdown"),
            key("l3", "100000", "running cost of the total lockdown"),
            key("switch_scale", "10000", "switching-cost scale (a2)"),
            key("testing_rate_coeff", "100", "testing cost per excess removal (A2)"),
            key("testing_startup_coeff", "100", "early-epidemic testing weight (A3)"),
            key("infection_coeff", "10", "infection cost scale (A4)"),
            key("horizon", "40", "steps"),
            key("gamma_levels", "10", "testing-rate grid size"),
            key("gamma_max", "1/3", "largest testing rate"),
            key("lambda", "0.25", "natural infection rate"),
            key("gamma0", "1/15", "natural removal rate"),
            key("s0", "9999", "initial susceptibles"),
            key("i0", "1", "initial infected"),
            key("a", "1", "discretization step"),
            key("mode", "cost", "`cost` or `peak-min`"),
            key("ns", "60", "susceptible grid points"),
            key("ni", "60", "infected grid points"),
            key("validate", "false", "cross-check against a 2x-refined grid"),
        ],
    },
    Schema {
        command: "multiobj",
        keys: &[
            key("horizon", "8", "steps"),
            key("iterations", "60", "replicator iterations"),
            key("ns", "40", "susceptible grid points"),
            key("ni", "40", "infected grid points"),
            key("s0", "9999", "initial susceptibles"),
            key("i0", "1", "initial infected"),
            key("threshold1", "auto", "burden threshold (`auto` = constructed feasible)"),
            key("threshold2", "auto", "effort threshold (`auto` = constructed feasible)"),
            key("a0", "0.5", "harmonic step-size scale"),
        ],
    },
    Schema {
        command: "two-timescale",
        keys: &[
            key("eps", "0.1", "slow-scale factor"),
            key("a", "1", "coarse step"),
            key("horizon", "8", "wall-clock horizon"),
            key("fast_s0", "9000", "fast community susceptibles"),
            key("fast_i0", "1000", "fast community infected"),
            key("slow_s0", "4000", "slow community susceptibles"),
            key("slow_i0", "1000", "slow community infected"),
            key("lambda_ab", "0.05", "import coefficient into the fast community"),
            key("lambda_ba", "0.05", "import coefficient into the slow community"),
            key("lambda_hi", "0.25", "upper contact level"),
            key("lambda_lo", "0.125", "lower contact level"),
            key("gamma_lo", "1/15", "natural testing rate"),
            key("gamma_hi", "0.2", "raised testing rate"),
            key("z_points", "16", "frozen-fraction grid size"),
            key("outer", "1", "refinement passes"),
        ],
    },
];

fn uniform_grid(t_end: f64, dt: f64) -> Result<Vec<f64>, CliError> {
    if !(t_end > 0.0 && dt > 0.0 && dt <= t_end) {
        return Err(CliError::Spec(format!("bad grid: t_end = {t_end}, dt = {dt}")));
    }
    let n = (t_end / dt).round() as usize;
    Ok((0..=n).map(|k| t_end * k as f64 / n as f64).collect())
}

fn trajectory(spec: &RunSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let params = ModelParams::new(spec.f64("lambda")?, spec.f64("gamma")?, spec.f64("beta")?);
    let init = InitialState::with_recovered(spec.f64("s0")?, spec.f64("i0")?, spec.f64("r0")?);
    let grid = uniform_grid(spec.f64("t_end")?, spec.f64("dt")?)?;
    let quad = QuadratureSpec::new(QuadRule::Simpson, spec.f64("step")?)?;
    // Constant schedules run through the exact segment path, which also
    // covers the lambda = gamma limit.
    let lam = Schedule::constant(params.lambda)?;
    let gam = Schedule::constant(params.gamma)?;
    let traj = time_varying(&lam, &gam, params.beta, &init, &grid, &quad)?;
    let path = out.join("trajectory.csv");
    write_columns(&path, &["t", "s", "i", "r"], &[&traj.times, &traj.s, &traj.i, &traj.r])?;
    Ok(vec![path])
}

fn compare_sir(spec: &RunSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let lambda = spec.f64("lambda")?;
    let gamma = spec.f64("gamma")?;
    let n_total = spec.f64("n")?;
    let i0 = spec.f64("i0")?;
    let init = InitialState::new(n_total - i0, i0);
    let params = ModelParams::without_recovery(lambda, gamma);
    let t_end = spec.f64("t_end")?;
    let dt = spec.f64("dt")?;
    let step = spec.f64("step")?;
    let grid = uniform_grid(t_end, dt)?;

    let classic = ode::integrate(
        &ode::classic_sir_system(&params, n_total),
        &[init.s0, init.i0, 0.0],
        t_end,
        step,
    )?;
    let nc = ClosedFormSolution::new(params, init)?;
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); 7];
    let mut daley_deviation = 0.0f64;
    for &t in &grid {
        let idx = ((t / step).round() as usize).min(classic.states.len() - 1);
        let sir_r = classic.states[idx][2];
        let daley_r = sirnc::closedform::sir_daley_r(&params, &init, t);
        daley_deviation = daley_deviation.max((daley_r - sir_r).abs());
        cols[0].push(t);
        cols[1].push(classic.states[idx][0]);
        cols[2].push(classic.states[idx][1]);
        cols[3].push(sir_r);
        cols[4].push(nc.susceptible_robust(t));
        cols[5].push(nc.infected_robust(t));
        cols[6].push(daley_r);
    }
    let path = out.join("compare_sir.csv");
    write_columns(
        &path,
        &["t", "sir_s", "sir_i", "sir_r", "sirnc_s", "sirnc_i", "daley_r"],
        &[&cols[0], &cols[1], &cols[2], &cols[3], &cols[4], &cols[5], &cols[6]],
    )?;
    // The closed-form tanh approximation of classic R(t) comes with no
    // accuracy promise; its worst deviation is reported as a diagnostic.
    let report_path = out.join("compare_report.txt");
    std::fs::write(
        &report_path,
        format!("daley_r_max_abs_deviation = {daley_deviation}\n"),
    )?;
    Ok(vec![path, report_path])
}

fn peak_sweep(spec: &RunSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let lambda = spec.f64("lambda")?;
    let gamma0 = spec.f64("gamma0")?;
    let init = InitialState::new(spec.f64("s0")?, spec.f64("i0")?);
    let gamma1_max = spec.f64("gamma1_max")?;
    let points = spec.usize("points")?;
    if points < 2 {
        return Err(CliError::Spec("peak-sweep needs at least 2 points".into()));
    }
    let mut gamma1 = Vec::with_capacity(points);
    let mut t_max = Vec::with_capacity(points);
    let mut i_max = Vec::with_capacity(points);
    for k in 0..points {
        let g1 = gamma1_max * k as f64 / (points - 1) as f64;
        let sol = ClosedFormSolution::new(
            ModelParams::without_recovery(lambda, gamma0 + g1),
            init,
        )?;
        let peak = sol.peak()?;
        gamma1.push(g1);
        t_max.push(peak.t_max);
        i_max.push(peak.i_max);
    }
    let path = out.join("peak_sweep.csv");
    write_columns(&path, &["gamma1", "t_max", "i_max"], &[&gamma1, &t_max, &i_max])?;
    Ok(vec![path])
}

fn imported(spec: &RunSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let params = ModelParams::without_recovery(spec.f64("lambda")?, spec.f64("gamma")?);
    let init = InitialState::new(spec.f64("s0")?, spec.f64("i0")?);
    let sol = ImportedSolution::new(params, spec.f64("nu")?, init)?;
    let grid = uniform_grid(spec.f64("t_end")?, spec.f64("dt")?)?;
    let quad = QuadratureSpec::new(QuadRule::Simpson, spec.f64("step")?)?;
    let mut s = Vec::with_capacity(grid.len());
    let mut i = Vec::with_capacity(grid.len());
    for &t in &grid {
        s.push(sol.susceptible(t)?);
        i.push(sol.infected(t, &quad)?);
    }
    let path = out.join("imported.csv");
    write_columns(&path, &["t", "s", "i"], &[&grid, &s, &i])?;
    Ok(vec![path])
}

fn communities(spec: &RunSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let cp = ode::CommunityParams {
        a: ode::Community::new(
            spec.f64("lambda_a")?,
            spec.f64("gamma_a")?,
            spec.f64("s0_a")?,
            spec.f64("i0_a")?,
        ),
        b: ode::Community::new(
            spec.f64("lambda_b")?,
            spec.f64("gamma_b")?,
            spec.f64("s0_b")?,
            spec.f64("i0_b")?,
        ),
        lambda_ab: spec.f64("lambda_ab")?,
        lambda_ba: spec.f64("lambda_ba")?,
    };
    let run = ode::run_communities(&cp, spec.f64("t_end")?, spec.f64("step")?)?;
    let total = run.total_infected();
    let path = out.join("communities.csv");
    write_columns(
        &path,
        &["t", "s_a", "i_a", "s_b", "i_b", "i_total"],
        &[&run.a.times, &run.a.s, &run.a.i, &run.b.s, &run.b.i, &total],
    )?;
    Ok(vec![path])
}

fn vital(spec: &RunSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let params = ModelParams::new(spec.f64("lambda")?, spec.f64("gamma")?, spec.f64("beta")?);
    let vp = ode::VitalParams {
        kappa: spec.f64("kappa")?,
        upsilon1: spec.f64("upsilon1")?,
        upsilon2: spec.f64("upsilon2")?,
        nu1: spec.f64("nu1")?,
        nu2: spec.f64("nu2")?,
    };
    let init = InitialState::with_recovered(spec.f64("s0")?, spec.f64("i0")?, spec.f64("r0")?);
    let step = spec.f64("step")?;
    let horizon = spec.f64("t_end")?;
    let traj = ode::run_vital(&params, &vp, &init, horizon, step)?;
    let csv = out.join("vital.csv");
    write_columns(&csv, &["t", "s", "i", "r"], &[&traj.times, &traj.s, &traj.i, &traj.r])?;

    // Diagnostics: extinction regime (when applicable) and the equilibrium
    // analysis.
    let mut report = String::new();
    match ode::check_extinction(&params, &vp, &init, horizon, step) {
        Ok(ext) => {
            report.push_str(&format!(
                "dagger_condition = holds\nn_initial = {}\nn_terminal = {}\nn_monotone = {}\nbound_violations = {}\n",
                ext.initial_n, ext.terminal_n, ext.n_monotone, ext.bound_violations
            ));
        }
        Err(ode::OdeError::ConditionDaggerViolated { .. }) => {
            report.push_str("dagger_condition = violated\n");
        }
        Err(e) => return Err(e.into()),
    }
    match ode::check_equilibrium_nongeneric(&params, &vp) {
        Ok(eq) => {
            report.push_str(&format!("zeta = {}\n", eq.zeta));
            match eq.critical_lambda {
                Some(crit) => report.push_str(&format!(
                    "critical_lambda = {crit}\nlambda_matches = {}\n",
                    eq.lambda_matches
                )),
                None => report.push_str("critical_lambda = none\n"),
            }
        }
        Err(ode::OdeError::ZeroRecoveredDeathRate { .. }) => {
            report.push_str("critical_lambda = undefined (nu2 = 0)\n");
        }
        Err(e) => return Err(e.into()),
    }
    let report_path = out.join("vital_report.txt");
    std::fs::write(&report_path, report)?;
    Ok(vec![csv, report_path])
}

fn perturbation(spec: &RunSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let cp = ode::CommunityParams {
        a: ode::Community::new(
            spec.f64("lambda_a")?,
            spec.f64("gamma_a")?,
            spec.f64("s0_a")?,
            spec.f64("i0_a")?,
        ),
        b: ode::Community::new(
            spec.f64("lambda_b")?,
            spec.f64("gamma_b")?,
            spec.f64("s0_b")?,
            spec.f64("i0_b")?,
        ),
        lambda_ab: spec.f64("lambda_ab")?,
        lambda_ba: spec.f64("lambda_ba")?,
    };
    let horizon = spec.f64("horizon")?;
    let window = spec.f64("window")?;
    let step = spec.f64("step")?;
    let (run_a, run_b) = alekseev_correct(&cp, horizon, step)?;
    let path_a = out.join("perturbation_a.csv");
    let path_b = out.join("perturbation_b.csv");
    run_a.write_csv(&path_a)?;
    run_b.write_csv(&path_b)?;
    let mut files = vec![path_a, path_b];

    if window < horizon {
        let (win_a, win_b) = repeated_window_correct(&cp, horizon, window, step)?;
        let path = out.join("perturbation_windowed.csv");
        write_columns(
            &path,
            &["t", "windowed_s_a", "windowed_i_a", "windowed_s_b", "windowed_i_b"],
            &[&win_a.times, &win_a.s, &win_a.i, &win_b.s, &win_b.i],
        )?;
        files.push(path);
    }
    Ok(files)
}

fn alpha_policy(spec: &RunSpec) -> Result<AlphaPolicy, CliError> {
    let floor = spec.f64("alpha_floor")?;
    match spec.choice("alpha", &["constant", "ramp"])?.as_str() {
        "constant" => Ok(AlphaPolicy::Constant(floor)),
        _ => {
            let natural = ClosedFormSolution::new(
                ModelParams::without_recovery(spec.f64("lambda")?, spec.f64("gamma0")?),
                InitialState::new(spec.f64("s0")?, spec.f64("i0")?),
            )?;
            Ok(AlphaPolicy::Ramp { t_peak: natural.peak()?.t_max, floor })
        }
    }
}

/// Applies the user-tunable cost coefficients to a baseline configuration.
fn apply_cost_keys(costs_spec: &mut InterventionCosts, spec: &RunSpec) -> Result<(), CliError> {
    costs_spec.terminal_scale = spec.f64("terminal_scale")?;
    costs_spec.terminal_rate = spec.f64("terminal_rate")?;
    costs_spec.lockdown_costs = vec![spec.f64("l1")?, spec.f64("l2")?, spec.f64("l3")?];
    costs_spec.switch_scale = spec.f64("switch_scale")?;
    costs_spec.testing_rate_coeff = spec.f64("testing_rate_coeff")?;
    costs_spec.testing_startup_coeff = spec.f64("testing_startup_coeff")?;
    costs_spec.infection_coeff = spec.f64("infection_coeff")?;
    costs_spec.gamma0 = spec.f64("gamma0")?;
    Ok(())
}

fn control_mpc(spec: &RunSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut costs_spec = InterventionCosts::baseline(spec.f64("a3")?, alpha_policy(spec)?);
    apply_cost_keys(&mut costs_spec, spec)?;
    costs_spec.lookahead = spec.usize("lookahead")?;
    let natural = ClosedFormSolution::new(
        ModelParams::without_recovery(spec.f64("lambda")?, costs_spec.gamma0),
        InitialState::new(spec.f64("s0")?, spec.f64("i0")?),
    )?;
    let a = spec.f64("a")?;
    let dynamics = ControlDynamics::euler(
        InterventionCosts::reference_levels(),
        costs_spec.gamma_grid(spec.usize("gamma_levels")?, spec.f64("gamma_max")?),
        a,
        costs_spec.lookahead,
    )?;
    let (costs, _) = costs_spec.cost_model(natural, a)?;
    let trace = tree_search_mpc(
        &dynamics,
        &costs,
        ControlState::new(spec.f64("s0")?, spec.f64("i0")?, 0),
        spec.usize("horizon")?,
    )?;
    let path = out.join("policy.csv");
    trace.write_csv(&path)?;
    Ok(vec![path])
}

fn control_dp(spec: &RunSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut costs_spec = InterventionCosts::baseline(spec.f64("a3")?, alpha_policy(spec)?);
    apply_cost_keys(&mut costs_spec, spec)?;
    let natural = ClosedFormSolution::new(
        ModelParams::without_recovery(spec.f64("lambda")?, costs_spec.gamma0),
        InitialState::new(spec.f64("s0")?, spec.f64("i0")?),
    )?;
    let a = spec.f64("a")?;
    let horizon = spec.usize("horizon")?;
    let dynamics = ControlDynamics::euler(
        InterventionCosts::reference_levels(),
        costs_spec.gamma_grid(spec.usize("gamma_levels")?, spec.f64("gamma_max")?),
        a,
        horizon,
    )?;
    let (costs, _) = costs_spec.cost_model(natural, a)?;
    let (s0, i0) = (spec.f64("s0")?, spec.f64("i0")?);

    let n0 = s0 + i0;
    let base_grid = StateGrid::linear_log(
        0.0,
        1.05 * n0,
        spec.usize("ns")?,
        (0.5 * i0).clamp(1e-3, 1.0),
        1.05 * n0,
        spec.usize("ni")?,
    );
    let mode = match spec.choice("mode", &["cost", "peak-min"])?.as_str() {
        "cost" => DpMode::Cost,
        _ => DpMode::PeakMin,
    };
    let grid =
        if mode == DpMode::PeakMin { base_grid.clone().with_peak_axis() } else { base_grid };

    let validate = spec.choice("validate", &["false", "true"])? == "true";
    let solution = if validate {
        backward_dp_validated(&dynamics, &costs, &grid, mode, (s0, i0, 0))?
    } else {
        backward_dp(&dynamics, &costs, &grid, mode)?
    };

    let table_path = out.join("values.bin");
    solution.write_binary(&table_path)?;
    let trace = solution.greedy_rollout(&dynamics, &costs, s0, i0, 0)?;
    let policy_path = out.join("policy.csv");
    trace.write_csv(&policy_path)?;
    Ok(vec![table_path, policy_path])
}

/// The built-in two-objective instance: infection burden vs intervention
/// effort, over the two-level action set.
fn reference_objectives() -> Result<ObjectiveSet, CliError> {
    const GAMMA0: f64 = 1.0 / 15.0;
    let burden: sirnc::control::RunningCostFn =
        Arc::new(|_s, i, _level, _gamma, _t| 10.0 * i.powf(1.2));
    let burden_terminal: sirnc::control::TerminalCostFn = Arc::new(|_s, i, _t| 30.0 * i);
    let effort: sirnc::control::RunningCostFn = Arc::new(|_s, i, level, gamma, _t| {
        5_000.0 * level as f64 + 200.0 * i * (gamma - GAMMA0)
    });
    let effort_terminal: sirnc::control::TerminalCostFn = Arc::new(|_, _, _| 0.0);
    let obj1 = CostModel::new(vec![vec![0.0, 0.0], vec![0.0, 0.0]], burden, burden_terminal)
        .map_err(CliError::from)?
        .0;
    let obj2 = CostModel::new(vec![vec![0.0, 2_000.0], vec![200.0, 0.0]], effort, effort_terminal)
        .map_err(CliError::from)?
        .0;
    ObjectiveSet::new(vec![obj1, obj2], vec![1.0, 1.0]).map_err(CliError::from)
}

fn multiobj(spec: &RunSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let dynamics = ControlDynamics::euler(
        vec![0.25, 0.125],
        vec![1.0 / 15.0, 0.2, 1.0 / 3.0],
        1.0,
        spec.usize("horizon")?,
    )?;
    let (s0, i0) = (spec.f64("s0")?, spec.f64("i0")?);
    let n0 = s0 + i0;
    let grid = StateGrid::linear_log(
        0.0,
        1.05 * n0,
        spec.usize("ns")?,
        (0.5 * i0).clamp(1e-3, 1.0),
        1.05 * n0,
        spec.usize("ni")?,
    );
    let mut set = reference_objectives()?;
    let z0 = (s0, i0);

    // `auto` thresholds: each objective gets 1.5x the cost the other's
    // optimal policy incurs on it, which is feasible by construction.
    let tables = solve_k_objectives(&set, &dynamics, &grid)?;
    let cross0 = evaluate_policy_per_objective(&tables[1], &set, &dynamics, z0, 0)[0];
    let cross1 = evaluate_policy_per_objective(&tables[0], &set, &dynamics, z0, 0)[1];
    let threshold = |key: &str, auto: f64| -> Result<f64, CliError> {
        match spec.raw(key) {
            "auto" => Ok(auto),
            raw => raw
                .parse()
                .map_err(|_| CliError::Spec(format!("key `{key}`: expected a number or `auto`, got `{raw}`"))),
        }
    };
    set.thresholds =
        vec![threshold("threshold1", 1.5 * cross0)?, threshold("threshold2", 1.5 * cross1)?];

    let rule = StepSizeRule::Harmonic(spec.f64("a0")?);
    let report =
        run_multiobjective(&set, &dynamics, &grid, &rule, z0, 0, spec.usize("iterations")?)?;

    // Iteration log: n, weights, standalone roots, scalarized root, slacks.
    let k = set.k();
    let rows = report.iterations.len();
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(rows); 2 + 2 * k + k];
    for record in &report.iterations {
        let mut c = 0;
        columns[c].push(record.n as f64);
        c += 1;
        for m in 0..k {
            columns[c + m].push(record.weights[m]);
        }
        c += k;
        for m in 0..k {
            columns[c + m].push(record.objective_roots[m]);
        }
        c += k;
        columns[c].push(record.scalarized_root);
        c += 1;
        for m in 0..k {
            columns[c + m].push(record.slacks[m]);
        }
    }
    let labels: Vec<String> = std::iter::once("n".to_string())
        .chain((1..=k).map(|m| format!("w{m}")))
        .chain((1..=k).map(|m| format!("v{m}")))
        .chain(std::iter::once("v_bar".to_string()))
        .chain((1..=k).map(|m| format!("slack{m}")))
        .collect();
    let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    let column_refs: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
    let log_path = out.join("iterations.csv");
    write_columns(&log_path, &label_refs, &column_refs)?;

    let mut summary = String::new();
    summary.push_str(&format!("converged = {}\n", report.converged));
    summary.push_str(&format!("all_satisfied = {}\n", report.all_satisfied));
    for m in 0..k {
        summary.push_str(&format!(
            "objective{} = cost {} threshold {} satisfied {}\n",
            m + 1,
            report.final_costs[m],
            set.thresholds[m],
            report.satisfied[m]
        ));
    }
    let report_path = out.join("report.txt");
    std::fs::write(&report_path, summary)?;
    Ok(vec![log_path, report_path])
}

fn two_timescale(spec: &RunSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut ts = TwoTimescaleSpec::new(
        spec.f64("eps")?,
        spec.f64("a")?,
        spec.f64("horizon")?,
        (spec.f64("fast_s0")?, spec.f64("fast_i0")?),
        (spec.f64("slow_s0")?, spec.f64("slow_i0")?),
        spec.f64("lambda_ab")?,
        spec.f64("lambda_ba")?,
    )?;
    ts.z_grid_size = spec.usize("z_points")?;
    ts.outer_iterations = spec.usize("outer")?;

    let levels = vec![spec.f64("lambda_hi")?, spec.f64("lambda_lo")?];
    let gammas = vec![spec.f64("gamma_lo")?, spec.f64("gamma_hi")?];
    let running: sirnc::control::RunningCostFn =
        Arc::new(|_s, i, level, _gamma, _t| i + 300.0 * level as f64);
    let terminal: sirnc::control::TerminalCostFn = Arc::new(|_s, i, _t| 2.0 * i);
    let switch = vec![vec![0.0, 50.0], vec![50.0, 0.0]];
    let costs = CostModel::new(switch, running, terminal.clone())
        .map_err(CliError::from)?
        .0;

    let fast_n0 = ts.fast_init.0 + ts.fast_init.1;
    let slow_n0 = ts.slow_init.0 + ts.slow_init.1;
    let fast = CommunityControl {
        levels: levels.clone(),
        gamma_grid: gammas.clone(),
        costs: costs.clone(),
        grid: StateGrid::linear_log(0.0, 1.05 * fast_n0, 40, 1.0, 1.05 * fast_n0, 40),
    };
    let slow = CommunityControl {
        levels,
        gamma_grid: gammas,
        costs,
        grid: StateGrid::linear_log(0.0, 1.05 * slow_n0, 40, 1.0, 1.05 * slow_n0, 40),
    };
    let nested = two_timescale_control(&ts, &fast, &slow, terminal)?;

    let fast_path = out.join("fast_trace.csv");
    nested.fast.write_csv(&fast_path)?;
    let slow_path = out.join("slow_trace.csv");
    nested.slow.write_csv(&slow_path)?;
    let z_path = out.join("realized_z.csv");
    let intervals: Vec<f64> = (0..nested.realized_z.len()).map(|m| m as f64).collect();
    write_columns(&z_path, &["interval", "z"], &[&intervals, &nested.realized_z])?;
    Ok(vec![fast_path, slow_path, z_path])
}
