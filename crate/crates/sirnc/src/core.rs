//! Shared domain types: rate parameters, initial conditions, time-varying
//! rate schedules, and sampled trajectories.
//!
//! Everything here is an immutable value after construction; the numerical
//! modules borrow these types freely across threads.

use thiserror::Error;

/// Rates of the SIR-NC model.
///
/// `lambda` is the infection rate, `gamma` the total removal rate, and
/// `beta <= gamma` the recovery rate; `gamma - beta` is the combined
/// death/quarantine rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub lambda: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl ModelParams {
    pub fn new(lambda: f64, gamma: f64, beta: f64) -> Self {
        Self { lambda, gamma, beta }
    }

    /// Rates with no separate recovery tracking (`beta = 0`): every removal
    /// leaves the system.
    pub fn without_recovery(lambda: f64, gamma: f64) -> Self {
        Self { lambda, gamma, beta: 0.0 }
    }
}

/// Initial compartment sizes. Populations are real-valued; the model is a
/// continuum one even when counts like `i0 = 1` are used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialState {
    pub s0: f64,
    pub i0: f64,
    pub r0: f64,
}

impl InitialState {
    /// `r0 = 0` is the usual choice: the recovered do not affect the
    /// evolution of `S` and `I`.
    pub fn new(s0: f64, i0: f64) -> Self {
        Self { s0, i0, r0: 0.0 }
    }

    pub fn with_recovered(s0: f64, i0: f64, r0: f64) -> Self {
        Self { s0, i0, r0 }
    }

    /// Size of the mixing pool at time zero, `N(0) = S(0) + I(0)`.
    pub fn n0(&self) -> f64 {
        self.s0 + self.i0
    }

    /// Total head count including the recovered, the conserved `N` of the
    /// classic SIR model.
    pub fn total0(&self) -> f64 {
        self.s0 + self.i0 + self.r0
    }

    /// `C = S(0) / I(0)`, the constant appearing in the closed forms.
    pub fn c_ratio(&self) -> f64 {
        self.s0 / self.i0
    }
}

/// A single invariant violation found by [`validate_params`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("rate `{name}` must be a positive finite number, got {value}")]
    NonPositiveRate { name: &'static str, value: f64 },
    #[error("population `{name}` must be finite and non-negative, got {value}")]
    NegativePopulation { name: &'static str, value: f64 },
    #[error("initial infected count must be > 0, got {value}")]
    ZeroInfected { value: f64 },
    #[error("recovery rate beta = {beta} exceeds removal rate gamma = {gamma}")]
    BetaExceedsGamma { beta: f64, gamma: f64 },
}

/// Checks every field invariant and returns the full list of violations.
///
/// Field validity is independent; the only cross-field coupling is
/// `beta <= gamma`.
pub fn validate_params(params: &ModelParams, init: &InitialState) -> Result<(), Vec<ValidationError>> {
    let mut errors = Vec::new();
    if !(params.lambda.is_finite() && params.lambda > 0.0) {
        errors.push(ValidationError::NonPositiveRate { name: "lambda", value: params.lambda });
    }
    if !(params.gamma.is_finite() && params.gamma > 0.0) {
        errors.push(ValidationError::NonPositiveRate { name: "gamma", value: params.gamma });
    }
    if !(params.beta.is_finite() && params.beta >= 0.0) {
        errors.push(ValidationError::NonPositiveRate { name: "beta", value: params.beta });
    }
    if params.beta.is_finite() && params.gamma.is_finite() && params.beta > params.gamma {
        errors.push(ValidationError::BetaExceedsGamma { beta: params.beta, gamma: params.gamma });
    }
    if !(init.s0.is_finite() && init.s0 >= 0.0) {
        errors.push(ValidationError::NegativePopulation { name: "s0", value: init.s0 });
    }
    if !(init.r0.is_finite() && init.r0 >= 0.0) {
        errors.push(ValidationError::NegativePopulation { name: "r0", value: init.r0 });
    }
    if !(init.i0.is_finite() && init.i0 > 0.0) {
        errors.push(ValidationError::ZeroInfected { value: init.i0 });
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

/// Breakout condition for the basic SIR-NC model: the infected curve grows
/// at time zero iff `lambda / gamma > 1 + I(0) / S(0)`.
pub fn breakout_condition(params: &ModelParams, init: &InitialState) -> bool {
    params.lambda / params.gamma > 1.0 + init.i0 / init.s0
}

/// Breakout condition with imported infections at rate `nu`:
/// `lambda * I(0)/N(0) + nu > gamma * I(0)/S(0)`.
pub fn breakout_condition_imported(params: &ModelParams, nu: f64, init: &InitialState) -> bool {
    params.lambda * init.i0 / init.n0() + nu > params.gamma * init.i0 / init.s0
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("schedules are defined for t >= 0 only, got t = {t}")]
    NegativeTime { t: f64 },
    #[error("schedule value must be positive and finite, got {value}")]
    NonPositiveValue { value: f64 },
    #[error("piecewise breakpoints must start at 0 and strictly increase")]
    BreakpointsNotIncreasing,
    #[error("lockdown factor must lie in (0, 1], got {factor}")]
    BadFactor { factor: f64 },
    #[error("lockdown window needs start >= 0 and duration > 0")]
    BadWindow,
    #[error("linear ramp slope must be >= 0 so the rate stays positive, got {slope}")]
    NegativeSlope { slope: f64 },
}

/// A time-varying rate `lambda(t)` or `gamma(t)`.
///
/// All kinds are right-continuous at their breakpoints: the value at a
/// switching instant is the post-switch value.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// Constant rate.
    Constant(f64),
    /// Piecewise-constant: `(start_time, value)` segments, first start at 0.
    PiecewiseConstant(Vec<(f64, f64)>),
    /// Base rate scaled by `factor` during `[start, start + duration)`.
    LockdownWindow { base: f64, factor: f64, start: f64, duration: f64 },
    /// `base * (1 + slope * t)`, modeling steadily growing removal capacity.
    LinearRamp { base: f64, slope: f64 },
}

impl Schedule {
    pub fn constant(value: f64) -> Result<Self, ScheduleError> {
        check_positive(value)?;
        Ok(Schedule::Constant(value))
    }

    pub fn piecewise(segments: Vec<(f64, f64)>) -> Result<Self, ScheduleError> {
        if segments.is_empty() || segments[0].0 != 0.0 {
            return Err(ScheduleError::BreakpointsNotIncreasing);
        }
        for window in segments.windows(2) {
            if !(window[1].0 > window[0].0) {
                return Err(ScheduleError::BreakpointsNotIncreasing);
            }
        }
        for &(_, value) in &segments {
            check_positive(value)?;
        }
        Ok(Schedule::PiecewiseConstant(segments))
    }

    pub fn lockdown_window(base: f64, factor: f64, start: f64, duration: f64) -> Result<Self, ScheduleError> {
        check_positive(base)?;
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(ScheduleError::BadFactor { factor });
        }
        if !(start >= 0.0 && duration > 0.0) {
            return Err(ScheduleError::BadWindow);
        }
        Ok(Schedule::LockdownWindow { base, factor, start, duration })
    }

    pub fn linear_ramp(base: f64, slope: f64) -> Result<Self, ScheduleError> {
        check_positive(base)?;
        if !(slope >= 0.0 && slope.is_finite()) {
            return Err(ScheduleError::NegativeSlope { slope });
        }
        Ok(Schedule::LinearRamp { base, slope })
    }

    /// Evaluates the rate at time `t >= 0`.
    pub fn eval(&self, t: f64) -> Result<f64, ScheduleError> {
        if !(t >= 0.0) {
            return Err(ScheduleError::NegativeTime { t });
        }
        Ok(match *self {
            Schedule::Constant(value) => value,
            Schedule::PiecewiseConstant(ref segments) => {
                let mut current = segments[0].1;
                for &(start, value) in segments {
                    if t >= start {
                        current = value;
                    } else {
                        break;
                    }
                }
                current
            }
            Schedule::LockdownWindow { base, factor, start, duration } => {
                if t >= start && t < start + duration {
                    factor * base
                } else {
                    base
                }
            }
            Schedule::LinearRamp { base, slope } => base * (1.0 + slope * t),
        })
    }

    /// Times in `(0, horizon)` where the rate jumps, when the schedule is
    /// piecewise constant. `None` for kinds that vary continuously.
    pub fn breakpoints(&self, horizon: f64) -> Option<Vec<f64>> {
        match *self {
            Schedule::Constant(_) => Some(Vec::new()),
            Schedule::PiecewiseConstant(ref segments) => Some(
                segments
                    .iter()
                    .map(|&(start, _)| start)
                    .filter(|&start| start > 0.0 && start < horizon)
                    .collect(),
            ),
            Schedule::LockdownWindow { start, duration, .. } => Some(
                [start, start + duration]
                    .into_iter()
                    .filter(|&b| b > 0.0 && b < horizon)
                    .collect(),
            ),
            Schedule::LinearRamp { slope, .. } => {
                if slope == 0.0 {
                    Some(Vec::new())
                } else {
                    None
                }
            }
        }
    }
}

fn check_positive(value: f64) -> Result<(), ScheduleError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ScheduleError::NonPositiveValue { value })
    }
}

/// Peak of the infected curve: when and how high.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakReport {
    pub t_max: f64,
    pub i_max: f64,
}

/// A sampled solution: strictly increasing time grid with per-compartment
/// series of equal length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
}

impl Trajectory {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            times: Vec::with_capacity(n),
            s: Vec::with_capacity(n),
            i: Vec::with_capacity(n),
            r: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, t: f64, s: f64, i: f64, r: f64) {
        self.times.push(t);
        self.s.push(s);
        self.i.push(i);
        self.r.push(r);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Mixing-pool size `N = S + I` at sample `k`.
    pub fn n_at(&self, k: usize) -> f64 {
        self.s[k] + self.i[k]
    }

    /// Susceptible fraction `x = S / (S + I)` at sample `k`.
    pub fn x_at(&self, k: usize) -> f64 {
        self.s[k] / self.n_at(k)
    }

    /// Infected fraction, defined as `1 - x` so that `x + y = 1` holds
    /// identically.
    pub fn y_at(&self, k: usize) -> f64 {
        1.0 - self.x_at(k)
    }

    /// Grid argmax of the infected series. This is the generic peak oracle
    /// used to cross-check the analytic peak formulas.
    pub fn peak_infected(&self) -> Option<PeakReport> {
        let (mut best_k, mut best) = (0usize, f64::NEG_INFINITY);
        for (k, &v) in self.i.iter().enumerate() {
            if v > best {
                best = v;
                best_k = k;
            }
        }
        if self.is_empty() {
            None
        } else {
            Some(PeakReport { t_max: self.times[best_k], i_max: best })
        }
    }

    /// Interior local maxima of the infected series after smoothing with a
    /// 5-point moving average. A maximum is a smoothed point strictly greater
    /// than both smoothed neighbors; the reported time/value come from the
    /// raw series at that index.
    pub fn local_maxima_infected(&self) -> Vec<PeakReport> {
        let n = self.i.len();
        if n < 3 {
            return Vec::new();
        }
        let smooth: Vec<f64> = (0..n)
            .map(|k| {
                let lo = k.saturating_sub(2);
                let hi = (k + 2).min(n - 1);
                self.i[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
            })
            .collect();
        let mut peaks = Vec::new();
        for k in 1..n - 1 {
            if smooth[k] > smooth[k - 1] && smooth[k] > smooth[k + 1] {
                peaks.push(PeakReport { t_max: self.times[k], i_max: self.i[k] });
            }
        }
        peaks
    }
}
