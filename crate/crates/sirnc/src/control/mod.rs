//! Discrete-time finite-horizon optimal control of the SIR-NC epidemic.
//!
//! The contact rate `lambda` switches between finitely many lockdown levels
//! (paying a switching cost on every change) while the removal rate `gamma`
//! is chosen from a testing-capacity grid. The dynamics are the Euler
//! discretization of the SIR-NC field; costs decompose into a per-step
//! running cost, the switching charges, and a terminal cost.
//!
//! Two solvers share these definitions: an exhaustive forward tree search
//! driven in receding-horizon (MPC) fashion ([`search::tree_search_mpc`]),
//! and a backward value recursion on a quantized state grid
//! ([`dp::backward_dp`]), which also supports peak minimization by tracking
//! the running maximum of `I` as an extra state.

mod dp;
mod search;

pub use dp::{backward_dp, backward_dp_exact, backward_dp_validated, DpMode, DpSolution, StateGrid};
pub use search::tree_search_mpc;

use std::sync::Arc;

use thiserror::Error;

use crate::closedform::{ClosedFormError, ClosedFormSolution};
use crate::core::{InitialState, ModelParams};

/// Running cost `(s, i, level_index, gamma, epoch) -> cost`; the epoch is
/// the 1-based index of the decision step.
pub type RunningCostFn = Arc<dyn Fn(f64, f64, usize, f64, usize) -> f64 + Send + Sync>;
/// Terminal cost `(s, i, epoch) -> cost` at the end of a horizon.
pub type TerminalCostFn = Arc<dyn Fn(f64, f64, usize) -> f64 + Send + Sync>;
/// State transition `(s, i, lambda, gamma, epoch) -> (s', i')`.
pub type TransitionFn = Arc<dyn Fn(f64, f64, f64, f64, usize) -> (f64, f64) + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("discretization step {step} too large: state went negative (s = {s}, i = {i})")]
    StepTooLarge { step: f64, s: f64, i: f64 },
    #[error("lookahead tree has {leaves} leaves, above the enumeration guard of 1e7")]
    TreeTooLarge { leaves: u128 },
    #[error("state grid too coarse: refining changed the root value by {relative_change:.3}")]
    GridTooCoarse { relative_change: f64 },
    #[error("control problem needs at least one lambda level and one gamma value")]
    EmptyActionSet,
    #[error("switching costs must form a square, zero-diagonal, non-negative matrix")]
    BadSwitchingMatrix,
    #[error("peak-minimization requires a grid with a running-max axis")]
    MissingPeakAxis,
    #[error("trace replay diverged: recorded {recorded}, replayed {replayed}")]
    AuditMismatch { recorded: f64, replayed: f64 },
    #[error(transparent)]
    ClosedForm(#[from] ClosedFormError),
}

/// Everything that defines the controlled dynamics: the lambda levels, the
/// gamma grid, the step length, the horizon (in steps), and the transition
/// map itself.
#[derive(Clone)]
pub struct ControlDynamics {
    pub levels: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub step: f64,
    pub horizon: usize,
    transition: TransitionFn,
}

impl ControlDynamics {
    /// Standard Euler discretization of the SIR-NC field. Requires
    /// `step * (max lambda + max gamma) < 1` so updates preserve positivity.
    pub fn euler(
        levels: Vec<f64>,
        gamma_grid: Vec<f64>,
        step: f64,
        horizon: usize,
    ) -> Result<Self, ControlError> {
        if levels.is_empty() || gamma_grid.is_empty() {
            return Err(ControlError::EmptyActionSet);
        }
        let max_rate = levels.iter().cloned().fold(0.0, f64::max)
            + gamma_grid.iter().cloned().fold(0.0, f64::max);
        if !(step > 0.0 && step * max_rate < 1.0) {
            return Err(ControlError::StepTooLarge { step, s: f64::NAN, i: f64::NAN });
        }
        let transition: TransitionFn =
            Arc::new(move |s, i, lambda, gamma, _t| euler_update(s, i, lambda, gamma, step));
        Ok(Self { levels, gamma_grid, step, horizon, transition })
    }

    /// Dynamics with a caller-supplied transition (used by the two-timescale
    /// procedure, where the fast problem carries an import term).
    pub fn with_transition(
        levels: Vec<f64>,
        gamma_grid: Vec<f64>,
        step: f64,
        horizon: usize,
        transition: TransitionFn,
    ) -> Result<Self, ControlError> {
        if levels.is_empty() || gamma_grid.is_empty() {
            return Err(ControlError::EmptyActionSet);
        }
        Ok(Self { levels, gamma_grid, step, horizon, transition })
    }

    pub fn apply(&self, s: f64, i: f64, level_idx: usize, gamma_idx: usize, t: usize) -> (f64, f64) {
        (self.transition)(s, i, self.levels[level_idx], self.gamma_grid[gamma_idx], t)
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn n_gammas(&self) -> usize {
        self.gamma_grid.len()
    }
}

fn euler_update(s: f64, i: f64, lambda: f64, gamma: f64, a: f64) -> (f64, f64) {
    let n = s + i;
    let frac = if n <= 1e-300 { 0.0 } else { s / n };
    let s_next = s - a * lambda * frac * i;
    let i_next = i + a * i * (lambda * frac - gamma);
    (s_next.max(0.0), i_next.max(0.0))
}

/// Controlled state: compartments, the active lambda level, and (in
/// peak-minimization mode) the running maximum of `I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlState {
    pub s: f64,
    pub i: f64,
    pub level: usize,
    pub running_max: Option<f64>,
}

impl ControlState {
    pub fn new(s: f64, i: f64, level: usize) -> Self {
        Self { s, i, level, running_max: None }
    }

    pub fn with_peak_tracking(s: f64, i: f64, level: usize) -> Self {
        Self { s, i, level, running_max: Some(i) }
    }

    /// One Euler step:
    /// `S+ = S - a lambda S I/(S+I)`, `I+ = I + a I (lambda S/(S+I) - gamma)`,
    /// and `M+ = max(M, I+)` when the running maximum is tracked. Fails if
    /// either compartment would go negative.
    pub fn step(&self, lambda: f64, gamma: f64, a: f64) -> Result<Self, ControlError> {
        let n = self.s + self.i;
        let frac = if n <= 1e-300 { 0.0 } else { self.s / n };
        let s_next = self.s - a * lambda * frac * self.i;
        let i_next = self.i + a * self.i * (lambda * frac - gamma);
        if s_next < 0.0 || i_next < 0.0 {
            return Err(ControlError::StepTooLarge { step: a, s: s_next, i: i_next });
        }
        Ok(Self {
            s: s_next,
            i: i_next,
            level: self.level,
            running_max: self.running_max.map(|m| m.max(i_next)),
        })
    }
}

/// Switching matrix plus running/terminal cost functions.
#[derive(Clone)]
pub struct CostModel {
    pub switch_cost: Vec<Vec<f64>>,
    pub running: RunningCostFn,
    pub terminal: TerminalCostFn,
}

/// A triple violating the strict triangle inequality
/// `c(i,k) < c(i,j) + c(j,k)`. Violations are reported, not rejected: useful
/// switching matrices (including the reference one here) may contain them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleViolation {
    pub from: usize,
    pub via: usize,
    pub to: usize,
    pub direct: f64,
    pub indirect: f64,
}

impl CostModel {
    pub fn new(
        switch_cost: Vec<Vec<f64>>,
        running: RunningCostFn,
        terminal: TerminalCostFn,
    ) -> Result<(Self, Vec<TriangleViolation>), ControlError> {
        let m = switch_cost.len();
        let square = switch_cost.iter().all(|row| row.len() == m);
        let diagonal_zero = (0..m).all(|k| switch_cost[k][k] == 0.0);
        let non_negative = switch_cost.iter().flatten().all(|&c| c >= 0.0 && c.is_finite());
        if !(square && diagonal_zero && non_negative) {
            return Err(ControlError::BadSwitchingMatrix);
        }
        let mut violations = Vec::new();
        for from in 0..m {
            for via in 0..m {
                for to in 0..m {
                    if from != via && via != to && from != to {
                        let direct = switch_cost[from][to];
                        let indirect = switch_cost[from][via] + switch_cost[via][to];
                        if direct >= indirect {
                            violations.push(TriangleViolation { from, via, to, direct, indirect });
                        }
                    }
                }
            }
        }
        Ok((Self { switch_cost, running, terminal }, violations))
    }

    /// All-zero costs over `m` levels; handy as a test fixture.
    pub fn zero(m: usize) -> Self {
        Self {
            switch_cost: vec![vec![0.0; m]; m],
            running: Arc::new(|_, _, _, _, _| 0.0),
            terminal: Arc::new(|_, _, _| 0.0),
        }
    }

    pub fn switch(&self, from: usize, to: usize) -> f64 {
        self.switch_cost[from][to]
    }
}

/// `exp(e)` extended monotonically past the overflow point: beyond `e = 600`
/// the growth continues linearly on top of `exp(600)`, so huge penalties
/// stay finite and strictly ordered.
pub fn saturating_exp(e: f64) -> f64 {
    const CAP: f64 = 600.0;
    if e <= CAP {
        e.exp()
    } else {
        CAP.exp() * (1.0 + (e - CAP))
    }
}

/// Target-fraction policy for the terminal cost: what share of the
/// uncontrolled infected level counts as acceptable at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaPolicy {
    /// Aggressive fixed target.
    Constant(f64),
    /// `1 - 0.9 t / t_peak`, clipped below at `floor`: the requirement
    /// tightens linearly until the uncontrolled peak time.
    Ramp { t_peak: f64, floor: f64 },
}

impl AlphaPolicy {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            AlphaPolicy::Constant(alpha) => alpha,
            AlphaPolicy::Ramp { t_peak, floor } => (1.0 - 0.9 * t / t_peak).max(floor),
        }
    }
}

/// The lockdown/testing/infection cost model.
///
/// Running cost per step `t >= 1`:
/// `L_level + (A2 + A3/t) I (gamma - gamma0) + A4 I^a3`;
/// terminal cost at time `t`:
/// `A1 exp(a1 (I - alpha(t) I_uncontrolled(t)))`.
#[derive(Debug, Clone)]
pub struct InterventionCosts {
    /// `A1`.
    pub terminal_scale: f64,
    /// `a1`.
    pub terminal_rate: f64,
    pub alpha: AlphaPolicy,
    /// `L_1..L_M`, one entry per lambda level.
    pub lockdown_costs: Vec<f64>,
    /// `a2`, the scale of the switching matrix.
    pub switch_scale: f64,
    /// `A2`.
    pub testing_rate_coeff: f64,
    /// `A3`, the early-epidemic testing startup weight (decays as `A3/t`).
    pub testing_startup_coeff: f64,
    /// Natural removal rate; testing cost charges only the excess above it.
    pub gamma0: f64,
    /// `A4`.
    pub infection_coeff: f64,
    /// `a3`, the infection-cost exponent (interesting range 1.0..=1.5).
    pub infection_exponent: f64,
    /// Lookahead `T` of the receding-horizon problem, in steps.
    pub lookahead: usize,
}

impl InterventionCosts {
    /// Reference configuration: `A1 = 100`, `a1 = 10`, `L = [0, 1e4, 1e5]`,
    /// `a2 = 1e4`, `A2 = A3 = 100`, `gamma0 = 1/15`, `A4 = 10`, `T = 3`.
    pub fn baseline(infection_exponent: f64, alpha: AlphaPolicy) -> Self {
        Self {
            terminal_scale: 100.0,
            terminal_rate: 10.0,
            alpha,
            lockdown_costs: vec![0.0, 10_000.0, 100_000.0],
            switch_scale: 10_000.0,
            testing_rate_coeff: 100.0,
            testing_startup_coeff: 100.0,
            gamma0: 1.0 / 15.0,
            infection_coeff: 10.0,
            infection_exponent,
            lookahead: 3,
        }
    }

    /// The three reference contact levels: no lockdown, partial, total.
    pub fn reference_levels() -> Vec<f64> {
        vec![1.0 / 4.0, 3.0 / 16.0, 1.0 / 8.0]
    }

    /// `n` equally spaced removal rates on `[gamma0, gamma_max]` inclusive.
    pub fn gamma_grid(&self, n: usize, gamma_max: f64) -> Vec<f64> {
        (0..n)
            .map(|k| self.gamma0 + (gamma_max - self.gamma0) * k as f64 / (n - 1).max(1) as f64)
            .collect()
    }

    /// `a2`-scaled switching matrix: escalating a lockdown is expensive,
    /// relaxing one is cheap.
    pub fn switching_matrix(&self) -> Vec<Vec<f64>> {
        let a2 = self.switch_scale;
        vec![
            vec![0.0, 2.0 * a2, 3.0 * a2],
            vec![0.1 * a2, 0.0, 2.0 * a2],
            vec![0.1 * a2, 0.1 * a2, 0.0],
        ]
    }

    pub fn running(&self, i: f64, level_idx: usize, gamma: f64, epoch: usize) -> f64 {
        debug_assert!(epoch >= 1, "running cost is indexed from epoch 1");
        self.lockdown_costs[level_idx]
            + (self.testing_rate_coeff + self.testing_startup_coeff / epoch as f64)
                * i
                * (gamma - self.gamma0)
            + self.infection_coeff * i.powf(self.infection_exponent)
    }

    pub fn terminal(&self, i: f64, t: f64, i_uncontrolled: f64) -> f64 {
        let target = self.alpha.at(t) * i_uncontrolled;
        self.terminal_scale * saturating_exp(self.terminal_rate * (i - target))
    }

    /// Bundles these definitions into a [`CostModel`], with the uncontrolled
    /// reference trajectory supplied by the closed form. `step` converts
    /// epoch indices to wall time for the terminal target.
    pub fn cost_model(
        &self,
        natural: ClosedFormSolution,
        step: f64,
    ) -> Result<(CostModel, Vec<TriangleViolation>), ControlError> {
        let me = self.clone();
        let running: RunningCostFn =
            Arc::new(move |_s, i, level, gamma, epoch| me.running(i, level, gamma, epoch));
        let me = self.clone();
        let terminal: TerminalCostFn = Arc::new(move |_s, i, epoch| {
            let t = epoch as f64 * step;
            me.terminal(i, t, natural.infected_robust(t))
        });
        CostModel::new(self.switching_matrix(), running, terminal)
    }
}

/// Infected level of the uncontrolled (natural-rate) system at time `t`,
/// i.e. the baseline the terminal cost measures against.
pub fn uncontrolled_reference(
    params: &ModelParams,
    init: &InitialState,
    t: f64,
) -> Result<f64, ClosedFormError> {
    Ok(ClosedFormSolution::new(*params, *init)?.infected_robust(t))
}

/// One executed step of a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    /// Epoch index of the state this action was taken from (0-based).
    pub t: usize,
    pub level: usize,
    pub gamma: f64,
    /// State after the transition.
    pub s: f64,
    pub i: f64,
    pub running_cost: f64,
    pub switching_cost: f64,
}

/// A fully executed control run: initial condition, per-step actions and
/// costs, terminal cost, and the grand total.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTrace {
    pub initial_s: f64,
    pub initial_i: f64,
    pub initial_level: usize,
    pub step_size: f64,
    pub steps: Vec<TraceStep>,
    pub terminal_cost: f64,
    pub total: f64,
}

impl PolicyTrace {
    pub fn total_running(&self) -> f64 {
        self.steps.iter().map(|s| s.running_cost).sum()
    }

    pub fn total_switching(&self) -> f64 {
        self.steps.iter().map(|s| s.switching_cost).sum()
    }

    /// Largest infected level along the run, including the start.
    pub fn max_infected(&self) -> f64 {
        self.steps.iter().map(|s| s.i).fold(self.initial_i, f64::max)
    }

    /// Whether the lambda level ever changed.
    pub fn switched(&self) -> bool {
        self.steps.iter().any(|s| s.level != self.initial_level)
            || self.steps.windows(2).any(|w| w[0].level != w[1].level)
    }

    /// Replays the recorded actions through the dynamics and cost model and
    /// returns the recomputed total; errors if it disagrees with the
    /// recorded one beyond 1e-9 (relative).
    pub fn audit(&self, dynamics: &ControlDynamics, costs: &CostModel) -> Result<f64, ControlError> {
        let mut s = self.initial_s;
        let mut i = self.initial_i;
        let mut level = self.initial_level;
        let mut total = 0.0;
        for (k, step) in self.steps.iter().enumerate() {
            total += costs.switch(level, step.level);
            let gamma_idx = dynamics
                .gamma_grid
                .iter()
                .position(|&g| g == step.gamma)
                .expect("recorded gamma not on the grid");
            total += (costs.running)(s, i, step.level, step.gamma, k + 1);
            let (s_next, i_next) = dynamics.apply(s, i, step.level, gamma_idx, k);
            s = s_next;
            i = i_next;
            level = step.level;
        }
        total += self.terminal_cost;
        let tol = 1e-9 * self.total.abs().max(1.0);
        if (total - self.total).abs() > tol {
            return Err(ControlError::AuditMismatch { recorded: self.total, replayed: total });
        }
        Ok(total)
    }

    /// CSV layout: `t, level, gamma, s, i, run_cost, switch_cost`.
    pub fn write_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        let t: Vec<f64> = self.steps.iter().map(|s| s.t as f64).collect();
        let level: Vec<f64> = self.steps.iter().map(|s| s.level as f64).collect();
        let gamma: Vec<f64> = self.steps.iter().map(|s| s.gamma).collect();
        let s: Vec<f64> = self.steps.iter().map(|s| s.s).collect();
        let i: Vec<f64> = self.steps.iter().map(|s| s.i).collect();
        let run: Vec<f64> = self.steps.iter().map(|s| s.running_cost).collect();
        let sw: Vec<f64> = self.steps.iter().map(|s| s.switching_cost).collect();
        crate::csv::write_columns(
            path,
            &["t", "level", "gamma", "s", "i", "run_cost", "switch_cost"],
            &[&t, &level, &gamma, &s, &i, &run, &sw],
        )
    }
}
