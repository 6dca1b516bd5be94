//! Exact solutions of the SIR-NC model.
//!
//! With constant rates and `C = S(0)/I(0)`, `d = lambda - gamma`:
//!
//! ```text
//! S(t) = S(0) * ((e^{d t} + C) / (1 + C))^{-lambda/d}
//! I(t) = I(0) * ((1 + C e^{-d t}) / (1 + C))^{-lambda/d} * e^{-gamma t}
//! T_max = (ln[C d / gamma])^+ / d
//! ```
//!
//! All evaluations run in log space so they stay finite in both the breakout
//! (`lambda > gamma`) and decay (`lambda < gamma`) regimes. The removed
//! compartment is `R(t) = r0 + beta * integral of I`, computed by quadrature.
//!
//! The module also covers time-varying rates (exact segment chaining for
//! piecewise-constant schedules, nested-integral quadrature otherwise),
//! imported infections, and the classic-SIR peak/`R(t)` reference formulas
//! used for comparisons.

use thiserror::Error;

use crate::core::{
    validate_params, InitialState, ModelParams, PeakReport, Schedule, Trajectory, ValidationError,
};

/// Relative tolerance below which `lambda` and `gamma` count as equal and the
/// closed forms hand over to [`limit_eval`].
pub const DEGENERATE_REL_TOL: f64 = 1e-9;

const QUAD_SELF_CHECK_REL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClosedFormError {
    #[error("invalid model inputs: {0:?}")]
    InvalidInput(Vec<ValidationError>),
    #[error(
        "closed form degenerates near lambda = gamma (lambda = {lambda}, gamma = {gamma}, \
         nu = {nu}); use limit_eval"
    )]
    DegenerateRates { lambda: f64, gamma: f64, nu: f64 },
    #[error("evaluation requires t >= 0, got {t}")]
    NegativeTime { t: f64 },
    #[error("quadrature step {step} too coarse: half-step check moved result by {err:e}")]
    QuadratureStepTooCoarse { step: f64, err: f64 },
    #[error("time grid must be non-empty, strictly increasing, and start at t >= 0")]
    BadGrid,
    #[error("quadrature step must be positive and finite, got {step}")]
    BadQuadratureStep { step: f64 },
    #[error("solution left its real domain at t = {t} (exotic parameter regime)")]
    NumericalDomain { t: f64 },
    #[error("schedule evaluation failed: {0}")]
    Schedule(#[from] crate::core::ScheduleError),
}

/// Quadrature rule and maximum panel width for the integrals that have no
/// elementary antiderivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub rule: QuadRule,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadRule {
    Trapezoid,
    Simpson,
}

impl QuadratureSpec {
    pub fn new(rule: QuadRule, step: f64) -> Result<Self, ClosedFormError> {
        if step.is_finite() && step > 0.0 {
            Ok(Self { rule, step })
        } else {
            Err(ClosedFormError::BadQuadratureStep { step })
        }
    }

    pub fn simpson(step: f64) -> Result<Self, ClosedFormError> {
        Self::new(QuadRule::Simpson, step)
    }
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { rule: QuadRule::Simpson, step: 0.01 }
    }
}

/// Integrates `f` over `[a, b]` with panels no wider than `spec.step`.
pub fn integrate_fn(f: impl Fn(f64) -> f64, a: f64, b: f64, spec: &QuadratureSpec) -> f64 {
    if b <= a {
        return 0.0;
    }
    let mut n = ((b - a) / spec.step).ceil() as usize;
    n = n.max(2);
    if n % 2 == 1 {
        n += 1;
    }
    let h = (b - a) / n as f64;
    match spec.rule {
        QuadRule::Trapezoid => {
            let mut sum = 0.5 * (f(a) + f(b));
            for k in 1..n {
                sum += f(a + k as f64 * h);
            }
            sum * h
        }
        QuadRule::Simpson => {
            let mut sum = f(a) + f(b);
            for k in 1..n {
                let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                sum += w * f(a + k as f64 * h);
            }
            sum * h / 3.0
        }
    }
}

/// Cumulative integral of samples on a uniform grid of spacing `h`.
/// `Simpson` uses quadratic three-point increments, `Trapezoid` the usual
/// running trapezoid sum.
pub fn cumulative_uniform(values: &[f64], h: f64, rule: QuadRule) -> Vec<f64> {
    let n = values.len();
    let mut cum = vec![0.0; n];
    if n < 2 {
        return cum;
    }
    match rule {
        QuadRule::Trapezoid => {
            for k in 1..n {
                cum[k] = cum[k - 1] + 0.5 * h * (values[k - 1] + values[k]);
            }
        }
        QuadRule::Simpson => {
            if n == 2 {
                cum[1] = 0.5 * h * (values[0] + values[1]);
                return cum;
            }
            cum[1] = cum[0] + h / 12.0 * (5.0 * values[0] + 8.0 * values[1] - values[2]);
            for k in 2..n {
                cum[k] = cum[k - 1]
                    + h / 12.0 * (-values[k - 2] + 8.0 * values[k - 1] + 5.0 * values[k]);
            }
        }
    }
    cum
}

/// `ln(1 + c * e^u)` for `c > 0`, stable for any magnitude of `u`.
fn ln_one_plus_c_exp(c: f64, u: f64) -> f64 {
    if u > 0.0 {
        u + (c + (-u).exp()).ln()
    } else {
        (c * u.exp()).ln_1p()
    }
}

/// `ln(e^u + c)` for `c > 0`, stable for any magnitude of `u`.
fn ln_exp_plus_c(u: f64, c: f64) -> f64 {
    if u > 0.0 {
        u + (c * (-u).exp()).ln_1p()
    } else {
        (c + u.exp()).ln()
    }
}

/// Susceptible and infected fractions `(x, y)` given `C` and the cumulative
/// rate gap `D = integral of (lambda - gamma)`, computed without overflow.
fn fractions(c: f64, d_cum: f64) -> (f64, f64) {
    if d_cum >= 0.0 {
        let e = (-d_cum).exp();
        (c * e / (1.0 + c * e), 1.0 / (1.0 + c * e))
    } else {
        let e = d_cum.exp();
        (c / (e + c), e / (e + c))
    }
}

fn check_time(t: f64) -> Result<(), ClosedFormError> {
    if t >= 0.0 {
        Ok(())
    } else {
        Err(ClosedFormError::NegativeTime { t })
    }
}

fn rates_degenerate(lambda: f64, gamma: f64) -> bool {
    (lambda - gamma).abs() <= DEGENERATE_REL_TOL * lambda.max(gamma)
}

/// Constant-rate closed-form solution.
#[derive(Debug, Clone, Copy)]
pub struct ClosedFormSolution {
    params: ModelParams,
    init: InitialState,
    c: f64,
}

impl ClosedFormSolution {
    pub fn new(params: ModelParams, init: InitialState) -> Result<Self, ClosedFormError> {
        validate_params(&params, &init).map_err(ClosedFormError::InvalidInput)?;
        Ok(Self { params, init, c: init.c_ratio() })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn init(&self) -> &InitialState {
        &self.init
    }

    /// `C = S(0)/I(0)`.
    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn is_degenerate(&self) -> bool {
        rates_degenerate(self.params.lambda, self.params.gamma)
    }

    fn degenerate_guard(&self) -> Result<(), ClosedFormError> {
        if self.is_degenerate() {
            Err(ClosedFormError::DegenerateRates {
                lambda: self.params.lambda,
                gamma: self.params.gamma,
                nu: 0.0,
            })
        } else {
            Ok(())
        }
    }

    /// `S(t)`; strictly decreasing, tending to 0 when `lambda > gamma`.
    pub fn susceptible(&self, t: f64) -> Result<f64, ClosedFormError> {
        check_time(t)?;
        self.degenerate_guard()?;
        let (lambda, gamma) = (self.params.lambda, self.params.gamma);
        let d = lambda - gamma;
        let ln_base = ln_exp_plus_c(d * t, self.c) - (1.0 + self.c).ln();
        Ok(self.init.s0 * (-(lambda / d) * ln_base).exp())
    }

    /// `I(t)`; positive for all `t`, tending to 0.
    pub fn infected(&self, t: f64) -> Result<f64, ClosedFormError> {
        check_time(t)?;
        self.degenerate_guard()?;
        let (lambda, gamma) = (self.params.lambda, self.params.gamma);
        let d = lambda - gamma;
        let ln_base = ln_one_plus_c_exp(self.c, -d * t) - (1.0 + self.c).ln();
        Ok(self.init.i0 * (-(lambda / d) * ln_base - gamma * t).exp())
    }

    /// `I(t)` for any rate configuration: closed form when the rates are
    /// distinct, the `lambda = gamma` limit otherwise.
    pub fn infected_robust(&self, t: f64) -> f64 {
        if self.is_degenerate() {
            limit_eval(&self.params, &self.init, t).1
        } else {
            self.infected(t).expect("t >= 0 checked by caller")
        }
    }

    /// `S(t)` for any rate configuration, like [`Self::infected_robust`].
    pub fn susceptible_robust(&self, t: f64) -> f64 {
        if self.is_degenerate() {
            limit_eval(&self.params, &self.init, t).0
        } else {
            self.susceptible(t).expect("t >= 0 checked by caller")
        }
    }

    /// `R(t) = r0 + beta * integral of I over [0, t]`, by quadrature.
    pub fn removed(&self, t: f64, quad: &QuadratureSpec) -> Result<f64, ClosedFormError> {
        check_time(t)?;
        let beta = self.params.beta;
        if beta == 0.0 || t == 0.0 {
            return Ok(self.init.r0);
        }
        let integral = integrate_fn(|s| self.infected_robust(s), 0.0, t, quad);
        Ok(self.init.r0 + beta * integral)
    }

    /// Peak time and size of the infected curve.
    ///
    /// `T_max = (ln[C (lambda-gamma)/gamma])^+ / (lambda-gamma)`; when the
    /// clamp is active (no breakout) the peak is the initial point.
    pub fn peak(&self) -> Result<PeakReport, ClosedFormError> {
        self.degenerate_guard()?;
        let (lambda, gamma) = (self.params.lambda, self.params.gamma);
        let d = lambda - gamma;
        let arg = self.c * d / gamma;
        if d <= 0.0 || arg <= 1.0 {
            return Ok(PeakReport { t_max: 0.0, i_max: self.init.i0 });
        }
        let t_max = arg.ln() / d;
        let ln_imax = -(lambda / d) * (lambda / ((1.0 + self.c) * d)).ln() - (gamma / d) * arg.ln();
        Ok(PeakReport { t_max, i_max: self.init.i0 * ln_imax.exp() })
    }
}

/// Solution in the `lambda -> gamma` limit, where the susceptible fraction
/// `x` is frozen at `x(0)`:
/// `I(t) = I(0) e^{(lambda x(0) - gamma) t}`, `S(t) = S(0) e^{-lambda (1 - x(0)) t}`.
pub fn limit_eval(params: &ModelParams, init: &InitialState, t: f64) -> (f64, f64) {
    let x0 = init.s0 / init.n0();
    let s = init.s0 * (-params.lambda * (1.0 - x0) * t).exp();
    let i = init.i0 * ((params.lambda * x0 - params.gamma) * t).exp();
    (s, i)
}

/// Solution for time-dependent rate schedules.
///
/// Piecewise-constant schedule pairs are chained exactly: the constant-rate
/// closed form is re-anchored at every breakpoint. Other schedules fall back
/// to quadrature of the nested-integral form, with a half-step
/// self-consistency check. `beta` feeds the removed column
/// `R(t) = r0 + beta * integral of I`.
pub fn time_varying(
    lam: &Schedule,
    gam: &Schedule,
    beta: f64,
    init: &InitialState,
    grid: &[f64],
    quad: &QuadratureSpec,
) -> Result<Trajectory, ClosedFormError> {
    validate_grid(grid)?;
    let t_end = *grid.last().unwrap();
    let exact = lam
        .breakpoints(t_end)
        .zip(gam.breakpoints(t_end));
    match exact {
        Some((bl, bg)) => chained_time_varying(lam, gam, beta, init, grid, quad, &bl, &bg),
        None => quadrature_time_varying(lam, gam, beta, init, grid, quad),
    }
}

fn validate_grid(grid: &[f64]) -> Result<(), ClosedFormError> {
    if grid.is_empty() || grid[0] < 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ClosedFormError::BadGrid);
    }
    Ok(())
}

fn segment_bounds(lam_breaks: &[f64], gam_breaks: &[f64], t_end: f64) -> Vec<f64> {
    let mut bounds: Vec<f64> = Vec::with_capacity(lam_breaks.len() + gam_breaks.len() + 2);
    bounds.push(0.0);
    bounds.extend_from_slice(lam_breaks);
    bounds.extend_from_slice(gam_breaks);
    bounds.push(t_end);
    bounds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    bounds.dedup();
    bounds
}

/// Exact segment chaining over the union of both schedules' breakpoints.
#[allow(clippy::too_many_arguments)]
fn chained_time_varying(
    lam: &Schedule,
    gam: &Schedule,
    beta: f64,
    init: &InitialState,
    grid: &[f64],
    quad: &QuadratureSpec,
    lam_breaks: &[f64],
    gam_breaks: &[f64],
) -> Result<Trajectory, ClosedFormError> {
    let t_end = *grid.last().unwrap();
    let bounds = segment_bounds(lam_breaks, gam_breaks, t_end);

    let mut traj = Trajectory::with_capacity(grid.len());
    let (mut s_cur, mut i_cur, mut r_cur) = (init.s0, init.i0, init.r0);
    let mut next_output = 0usize;

    for seg in bounds.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let lambda = lam.eval(a)?;
        let gamma = gam.eval(a)?;
        let eval = SegmentEval::new(lambda, gamma, s_cur, i_cur);

        // Emit requested grid points inside [a, b) -- and at exactly b for
        // the final segment.
        let last_segment = b == t_end;
        while next_output < grid.len() {
            let t = grid[next_output];
            let inside = t >= a && (t < b || (last_segment && t <= b));
            if !inside {
                break;
            }
            let (s, i) = eval.at(t - a);
            let r = if beta == 0.0 {
                r_cur
            } else {
                r_cur + beta * integrate_fn(|u| eval.at(u).1, 0.0, t - a, quad)
            };
            traj.push(t, s, i, r);
            next_output += 1;
        }

        // Advance the anchor to the end of the segment.
        let (s_b, i_b) = eval.at(b - a);
        if beta != 0.0 {
            r_cur += beta * integrate_fn(|u| eval.at(u).1, 0.0, b - a, quad);
        }
        s_cur = s_b;
        i_cur = i_b;
    }
    Ok(traj)
}

/// Constant-rate evaluator anchored at a segment start, dispatching to the
/// limit form when the segment rates are (numerically) equal.
struct SegmentEval {
    params: ModelParams,
    init: InitialState,
    c: f64,
    degenerate: bool,
}

impl SegmentEval {
    fn new(lambda: f64, gamma: f64, s0: f64, i0: f64) -> Self {
        let params = ModelParams::without_recovery(lambda, gamma);
        let init = InitialState::new(s0, i0);
        Self { params, init, c: s0 / i0, degenerate: rates_degenerate(lambda, gamma) }
    }

    fn at(&self, tau: f64) -> (f64, f64) {
        if self.degenerate {
            return limit_eval(&self.params, &self.init, tau);
        }
        let (lambda, gamma) = (self.params.lambda, self.params.gamma);
        let d = lambda - gamma;
        let ln_norm = (1.0 + self.c).ln();
        let s = self.init.s0 * (-(lambda / d) * (ln_exp_plus_c(d * tau, self.c) - ln_norm)).exp();
        let i = self.init.i0
            * (-(lambda / d) * (ln_one_plus_c_exp(self.c, -d * tau) - ln_norm) - gamma * tau).exp();
        (s, i)
    }

    /// Sign of d(ln I)/dt at elapsed time `tau`: `lambda * x(tau) - gamma`.
    fn infected_growth_rate(&self, tau: f64) -> f64 {
        let d = self.params.lambda - self.params.gamma;
        let (x, _) = fractions(self.c, d * tau);
        self.params.lambda * x - self.params.gamma
    }

    /// Interior peak of this segment on `(0, horizon)`, if any.
    fn interior_peak(&self, horizon: f64) -> Option<(f64, f64)> {
        if self.degenerate {
            return None;
        }
        let (lambda, gamma) = (self.params.lambda, self.params.gamma);
        let d = lambda - gamma;
        if d <= 0.0 {
            return None;
        }
        let arg = self.c * d / gamma;
        if arg <= 1.0 {
            return None;
        }
        let t_star = arg.ln() / d;
        if t_star > 0.0 && t_star < horizon {
            let (_, i) = self.at(t_star);
            Some((t_star, i))
        } else {
            None
        }
    }
}

/// Nested-integral evaluation on a uniform fine grid, sampled (in log space)
/// at the requested output times. Used for schedules that are not piecewise
/// constant.
fn quadrature_time_varying(
    lam: &Schedule,
    gam: &Schedule,
    beta: f64,
    init: &InitialState,
    grid: &[f64],
    quad: &QuadratureSpec,
) -> Result<Trajectory, ClosedFormError> {
    let t_end = *grid.last().unwrap();
    let coarse = fine_time_varying(lam, gam, init, t_end, quad.step, quad.rule)?;
    let fine = fine_time_varying(lam, gam, init, t_end, quad.step / 2.0, quad.rule)?;

    // Half-step self-consistency check on the endpoint logs.
    for (a, b) in [(coarse.ln_s_end(), fine.ln_s_end()), (coarse.ln_i_end(), fine.ln_i_end())] {
        let err = (a - b).abs();
        if err > QUAD_SELF_CHECK_REL {
            return Err(ClosedFormError::QuadratureStepTooCoarse { step: quad.step, err });
        }
    }

    let mut traj = Trajectory::with_capacity(grid.len());
    for &t in grid {
        let (ln_s, ln_i, r_int) = fine.sample(t);
        traj.push(t, init.s0 * ln_s.exp(), init.i0 * ln_i.exp(), init.r0 + beta * r_int);
    }
    Ok(traj)
}

struct FineSolution {
    h: f64,
    ln_s: Vec<f64>,
    ln_i: Vec<f64>,
    r_int: Vec<f64>,
}

impl FineSolution {
    fn ln_s_end(&self) -> f64 {
        *self.ln_s.last().unwrap()
    }

    fn ln_i_end(&self) -> f64 {
        *self.ln_i.last().unwrap()
    }

    /// Linear interpolation of the cumulative logs between fine nodes.
    fn sample(&self, t: f64) -> (f64, f64, f64) {
        let n = self.ln_s.len() - 1;
        let pos = (t / self.h).min(n as f64);
        let k = (pos.floor() as usize).min(n - 1);
        let w = pos - k as f64;
        let lerp = |v: &[f64]| v[k] * (1.0 - w) + v[k + 1] * w;
        (lerp(&self.ln_s), lerp(&self.ln_i), lerp(&self.r_int))
    }
}

fn fine_time_varying(
    lam: &Schedule,
    gam: &Schedule,
    init: &InitialState,
    t_end: f64,
    step: f64,
    rule: QuadRule,
) -> Result<FineSolution, ClosedFormError> {
    let n = ((t_end / step).ceil() as usize).max(4);
    let h = t_end / n as f64;
    let c = init.c_ratio();

    let mut lam_v = Vec::with_capacity(n + 1);
    let mut gap = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = k as f64 * h;
        let l = lam.eval(t)?;
        let g = gam.eval(t)?;
        lam_v.push(l);
        gap.push(l - g);
    }
    // D(t) = integral of (lambda - gamma).
    let d_cum = cumulative_uniform(&gap, h, rule);

    // d(ln I)/dt = lambda x - gamma; d(ln S)/dt = -lambda y.
    let mut di = Vec::with_capacity(n + 1);
    let mut ds = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let (x, y) = fractions(c, d_cum[k]);
        di.push(lam_v[k] * x - (lam_v[k] - gap[k]));
        ds.push(-lam_v[k] * y);
    }
    let ln_i = cumulative_uniform(&di, h, rule);
    let ln_s = cumulative_uniform(&ds, h, rule);

    // I(t) samples for the removed-compartment integral.
    let i_vals: Vec<f64> = ln_i.iter().map(|&v| init.i0 * v.exp()).collect();
    let r_int = cumulative_uniform(&i_vals, h, rule);

    Ok(FineSolution { h, ln_s, ln_i, r_int })
}

/// All local maxima of `I(t)` on `(0, t_end)` under time-varying rates.
///
/// The peak condition can have several solutions (a lockdown can produce a
/// second wave), so every interior maximum is returned in time order; a
/// monotone-decreasing infected curve yields an empty list.
pub fn time_varying_peaks(
    lam: &Schedule,
    gam: &Schedule,
    init: &InitialState,
    t_end: f64,
    step: f64,
) -> Result<Vec<PeakReport>, ClosedFormError> {
    if !(t_end > 0.0 && step > 0.0) {
        return Err(ClosedFormError::BadGrid);
    }
    let exact = lam
        .breakpoints(t_end)
        .zip(gam.breakpoints(t_end));
    if let Some((bl, bg)) = exact {
        return chained_peaks(lam, gam, init, t_end, &bl, &bg);
    }

    // Grid scan on the quadrature solution, then a local quadratic
    // refinement of ln I around each discrete maximum.
    let n = ((t_end / step).ceil() as usize).max(8);
    let grid: Vec<f64> = (0..=n).map(|k| t_end * k as f64 / n as f64).collect();
    let quad = QuadratureSpec { rule: QuadRule::Simpson, step: step.min(0.01) };
    let traj = time_varying(lam, gam, 0.0, init, &grid, &quad)?;
    let h = grid[1] - grid[0];
    let mut peaks = Vec::new();
    for k in 1..n {
        if traj.i[k] > traj.i[k - 1] && traj.i[k] > traj.i[k + 1] {
            let (t_star, i_star) = refine_log_parabola(
                grid[k],
                h,
                traj.i[k - 1].ln(),
                traj.i[k].ln(),
                traj.i[k + 1].ln(),
            );
            peaks.push(PeakReport { t_max: t_star, i_max: i_star });
        }
    }
    Ok(peaks)
}

/// Vertex of the parabola through `(t-h, l0), (t, l1), (t+h, l2)` in log
/// space; returns `(t*, exp(l*))`.
fn refine_log_parabola(t: f64, h: f64, l0: f64, l1: f64, l2: f64) -> (f64, f64) {
    let denom = l0 - 2.0 * l1 + l2;
    let offset = if denom.abs() > 1e-300 { (0.5 * (l0 - l2) / denom).clamp(-1.0, 1.0) } else { 0.0 };
    (t + offset * h, (l1 - 0.25 * (l0 - l2) * offset).exp())
}

fn chained_peaks(
    lam: &Schedule,
    gam: &Schedule,
    init: &InitialState,
    t_end: f64,
    lam_breaks: &[f64],
    gam_breaks: &[f64],
) -> Result<Vec<PeakReport>, ClosedFormError> {
    let bounds = segment_bounds(lam_breaks, gam_breaks, t_end);
    let mut peaks = Vec::new();
    let (mut s_cur, mut i_cur) = (init.s0, init.i0);
    let mut prev_end_growth: Option<f64> = None;

    for seg in bounds.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let eval = SegmentEval::new(lam.eval(a)?, gam.eval(a)?, s_cur, i_cur);

        // A breakpoint is a local maximum when I was rising into it and
        // falls right after it.
        if let Some(g_before) = prev_end_growth {
            if g_before > 0.0 && eval.infected_growth_rate(0.0) < 0.0 {
                peaks.push(PeakReport { t_max: a, i_max: i_cur });
            }
        }
        if let Some((tau, i)) = eval.interior_peak(b - a) {
            peaks.push(PeakReport { t_max: a + tau, i_max: i });
        }

        prev_end_growth = Some(eval.infected_growth_rate(b - a));
        let (s_b, i_b) = eval.at(b - a);
        s_cur = s_b;
        i_cur = i_b;
    }
    Ok(peaks)
}

/// Closed-form solution with imported infections at rate `nu`.
#[derive(Debug, Clone, Copy)]
pub struct ImportedSolution {
    params: ModelParams,
    nu: f64,
    init: InitialState,
    c1: f64,
}

impl ImportedSolution {
    pub fn new(params: ModelParams, nu: f64, init: InitialState) -> Result<Self, ClosedFormError> {
        validate_params(&params, &init).map_err(ClosedFormError::InvalidInput)?;
        if !(nu.is_finite() && nu >= 0.0) {
            return Err(ClosedFormError::InvalidInput(vec![ValidationError::NonPositiveRate {
                name: "nu",
                value: nu,
            }]));
        }
        let d = params.lambda - params.gamma;
        let scale = params.lambda.max(params.gamma).max(nu);
        if rates_degenerate(params.lambda, params.gamma)
            || (d + nu).abs() <= DEGENERATE_REL_TOL * scale
        {
            return Err(ClosedFormError::DegenerateRates {
                lambda: params.lambda,
                gamma: params.gamma,
                nu,
            });
        }
        let c1 = init.s0 * d / (init.i0 * (d + nu) + init.s0 * nu);
        Ok(Self { params, nu, init, c1 })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// `C1 = S(0)(lambda - gamma) / (I(0)(lambda - gamma + nu) + S(0) nu)`.
    pub fn c1(&self) -> f64 {
        self.c1
    }

    /// `ln[(1 + C1 e^{-(d + nu) t}) / (1 + C1)]`.
    fn ln_base(&self, t: f64) -> Result<f64, ClosedFormError> {
        let k = self.params.lambda - self.params.gamma + self.nu;
        if self.c1 > 0.0 {
            Ok(ln_one_plus_c_exp(self.c1, -k * t) - (1.0 + self.c1).ln())
        } else {
            // Negative C1 arises only outside the breakout regime.
            let v = 1.0 + self.c1 * (-k * t).exp();
            if v <= 0.0 {
                return Err(ClosedFormError::NumericalDomain { t });
            }
            Ok(v.ln() - (1.0 + self.c1).ln())
        }
    }

    /// `S(t) = S(0) ((1 + C1 e^{-(d+nu) t})/(1 + C1))^{-lambda/d} e^{-(lambda+nu) t}`.
    pub fn susceptible(&self, t: f64) -> Result<f64, ClosedFormError> {
        check_time(t)?;
        let (lambda, gamma) = (self.params.lambda, self.params.gamma);
        let d = lambda - gamma;
        let ln_base = self.ln_base(t)?;
        Ok(self.init.s0 * (-(lambda / d) * ln_base - (lambda + self.nu) * t).exp())
    }

    /// `I(t)`: homogeneous term plus the `nu`-weighted integral of the decay
    /// kernel against `S`, evaluated by quadrature with a half-step check.
    pub fn infected(&self, t: f64, quad: &QuadratureSpec) -> Result<f64, ClosedFormError> {
        check_time(t)?;
        let hom = self.infected_homogeneous(t)?;
        if self.nu == 0.0 || t == 0.0 {
            return Ok(hom);
        }
        let coarse = self.import_integral(t, quad.step, quad.rule)?;
        let fine = self.import_integral(t, quad.step / 2.0, quad.rule)?;
        let err = (coarse - fine).abs();
        if err > QUAD_SELF_CHECK_REL * fine.abs().max(1e-6) {
            return Err(ClosedFormError::QuadratureStepTooCoarse { step: quad.step, err });
        }
        Ok(hom + self.nu * fine)
    }

    fn infected_homogeneous(&self, t: f64) -> Result<f64, ClosedFormError> {
        let (lambda, gamma) = (self.params.lambda, self.params.gamma);
        let d = lambda - gamma;
        let ln_base = self.ln_base(t)?;
        Ok(self.init.i0 * (-(lambda / d) * ln_base - gamma * t).exp())
    }

    fn import_integral(&self, t: f64, step: f64, rule: QuadRule) -> Result<f64, ClosedFormError> {
        let (lambda, gamma) = (self.params.lambda, self.params.gamma);
        let d = lambda - gamma;
        let exponent = -lambda / d;
        let ln_base_t = self.ln_base(t)?;
        let ln_s0 = self.init.s0.ln();
        // Kernel(t, s) * S(s), assembled in log space.
        let integrand = |s: f64| -> f64 {
            let ln_base_s = self.ln_base(s).unwrap_or(f64::NAN);
            let ln_s_val = exponent * ln_base_s + ln_s0 - (lambda + self.nu) * s;
            (exponent * (ln_base_t - ln_base_s) - gamma * (t - s) + ln_s_val).exp()
        };
        let spec = QuadratureSpec { rule, step: step.min(t / 16.0).max(1e-12) };
        Ok(integrate_fn(integrand, 0.0, t, &spec))
    }

    /// Peak of `I(t)` located by a grid scan plus quadratic refinement.
    pub fn peak_by_scan(
        &self,
        t_end: f64,
        scan_step: f64,
        quad: &QuadratureSpec,
    ) -> Result<PeakReport, ClosedFormError> {
        let n = ((t_end / scan_step).ceil() as usize).max(4);
        let h = t_end / n as f64;
        let mut best = (0usize, f64::NEG_INFINITY);
        let mut values = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let v = self.infected(k as f64 * h, quad)?;
            values.push(v);
            if v > best.1 {
                best = (k, v);
            }
        }
        let k = best.0;
        if k == 0 || k == n {
            return Ok(PeakReport { t_max: k as f64 * h, i_max: best.1 });
        }
        let (t_star, i_star) = refine_log_parabola(
            k as f64 * h,
            h,
            values[k - 1].ln(),
            values[k].ln(),
            values[k + 1].ln(),
        );
        Ok(PeakReport { t_max: t_star, i_max: i_star })
    }
}

/// Classic-SIR peak size, exact and in the small-`I(0)` approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicPeak {
    /// `I(0) + S(0) + N (gamma/lambda) (ln(N gamma / (lambda S(0))) - 1)`.
    pub exact: f64,
    /// `N (1 - rho + rho ln rho)` with `rho = gamma/lambda`.
    pub approx: f64,
}

/// Peak infected size of the classic (population-conserving) SIR model.
/// Requires `lambda > gamma`.
pub fn sir_classic_imax(params: &ModelParams, init: &InitialState) -> ClassicPeak {
    let n = init.total0();
    let rho = params.gamma / params.lambda;
    let exact = init.i0 + init.s0 + n * rho * ((n * rho / init.s0).ln() - 1.0);
    let approx = n * (1.0 - rho + rho * rho.ln());
    ClassicPeak { exact, approx }
}

/// Normalized SIR-NC peak `I_max / N(0) ~ (1 - rho) rho^{rho/(1-rho)}` with
/// `rho = gamma/lambda`, valid when `I(0) << S(0)`.
pub fn sirnc_imax_fraction_approx(rho: f64) -> f64 {
    (1.0 - rho) * rho.powf(rho / (1.0 - rho))
}

/// Normalized classic-SIR peak `I_max / N ~ 1 - rho + rho ln rho`.
pub fn sir_imax_fraction_approx(rho: f64) -> f64 {
    1.0 - rho + rho * rho.ln()
}

/// Coefficients of the hyperbolic-tangent `R(t)` approximation for the
/// classic SIR model. Note the inverted convention `rho = lambda/gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DaleyCoefficients {
    pub alpha: f64,
    pub phi: f64,
}

pub fn sir_daley_coefficients(params: &ModelParams, init: &InitialState) -> DaleyCoefficients {
    let n = init.total0();
    let rho = params.lambda / params.gamma;
    let alpha =
        (2.0 * init.s0 / (rho * rho) * (n - init.s0) + (init.s0 / rho - 1.0).powi(2)).sqrt();
    let phi = ((init.s0 / rho - 1.0) / alpha).atanh();
    DaleyCoefficients { alpha, phi }
}

/// The classical tanh approximation of classic-SIR `R(t)`, transcribed
/// verbatim; its quality is reported, not asserted.
pub fn sir_daley_r(params: &ModelParams, init: &InitialState, t: f64) -> f64 {
    let rho = params.lambda / params.gamma;
    let DaleyCoefficients { alpha, phi } = sir_daley_coefficients(params, init);
    rho * rho / init.s0 * (init.s0 / rho - 1.0)
        + alpha * rho * rho / init.s0 * (0.5 * params.gamma * alpha * t - phi).tanh()
}
