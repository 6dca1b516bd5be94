//! Two-timescale control of a fast community weakly coupled to a slow one.
//!
//! The slow community's compartments move at a rate scaled by `eps`, so over
//! one coarse interval its infected fraction `Z = I_b / (S_b + I_b)` is
//! nearly constant and the fast community sees it as a frozen import rate
//! `lambda_ab * Z` — exactly the imported-infections model. The procedure:
//!
//! 1. For each `Z` on a small grid, solve the fast switching recursion over
//!    the whole (fine) horizon and roll out its greedy trajectory.
//! 2. Solve the slow recursion on the coarse grid, with the fast infected
//!    fraction frozen per interval at the rolled-out value interpolated to
//!    the current `Z`.
//! 3. Replay the fast policy under the realized `Z` sequence to produce the
//!    nested trace. Optional outer passes re-solve the fast chain against
//!    the realized sequence.

use std::sync::Arc;

use super::MultiObjError;
use crate::control::{
    backward_dp, ControlDynamics, CostModel, DpMode, DpSolution, PolicyTrace, StateGrid,
    TerminalCostFn, TraceStep, TransitionFn,
};

/// Time structure and coupling of the fast/slow pair.
#[derive(Debug, Clone)]
pub struct TwoTimescaleSpec {
    /// Slow-scale factor: the slow community's field is `eps` times the
    /// usual one.
    pub eps: f64,
    /// Coarse (slow) decision step `a`; intervals are `[m a, (m+1) a)`.
    pub step: f64,
    /// Wall-clock horizon `T`.
    pub horizon: f64,
    pub fast_init: (f64, f64),
    pub slow_init: (f64, f64),
    /// Import coefficient into the fast community (slow fraction drives it).
    pub lambda_ab: f64,
    /// Import coefficient into the slow community (fast fraction drives it).
    pub lambda_ba: f64,
    /// Size of the `Z` grid the fast problem is pre-solved on.
    pub z_grid_size: usize,
    /// `Z` grid upper bound as a multiple of the initial slow fraction.
    pub z_max_factor: f64,
    /// Extra refinement passes that re-freeze `Z` at the realized sequence.
    pub outer_iterations: usize,
}

impl TwoTimescaleSpec {
    pub fn new(
        eps: f64,
        step: f64,
        horizon: f64,
        fast_init: (f64, f64),
        slow_init: (f64, f64),
        lambda_ab: f64,
        lambda_ba: f64,
    ) -> Result<Self, MultiObjError> {
        let spec = Self {
            eps,
            step,
            horizon,
            fast_init,
            slow_init,
            lambda_ab,
            lambda_ba,
            z_grid_size: 16,
            z_max_factor: 1.5,
            outer_iterations: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), MultiObjError> {
        let ok = self.eps > 0.0
            && self.eps < 1.0
            && self.step > 0.0
            && self.horizon >= self.step
            && self.z_grid_size >= 2
            && self.z_max_factor > 0.0
            && self.outer_iterations >= 1;
        if ok {
            Ok(())
        } else {
            Err(MultiObjError::BadTimescales)
        }
    }

    /// Number of coarse intervals, `ceil(T / a)`.
    pub fn n_intervals(&self) -> usize {
        (self.horizon / self.step).ceil() as usize
    }

    /// Fast epochs per coarse interval, `ceil(1 / eps)`; the fast step is
    /// `eps * a` in wall time.
    pub fn fast_steps_per_interval(&self) -> usize {
        (1.0 / self.eps).ceil() as usize
    }

    pub fn fast_epochs(&self) -> usize {
        self.n_intervals() * self.fast_steps_per_interval()
    }

    /// Equally spaced `Z` values on `[0, z_max_factor * y_slow(0)]`, capped
    /// at 1.
    pub fn z_grid(&self) -> Vec<f64> {
        let (s0, i0) = self.slow_init;
        let y0 = i0 / (s0 + i0);
        let z_max = (self.z_max_factor * y0).min(1.0);
        (0..self.z_grid_size)
            .map(|k| z_max * k as f64 / (self.z_grid_size - 1) as f64)
            .collect()
    }
}

/// Action set, costs, and quantizer for one community's control problem.
pub struct CommunityControl {
    pub levels: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub costs: CostModel,
    pub grid: StateGrid,
}

/// Output of the nested procedure: the executed fast and slow traces and
/// the per-interval slow infected fraction driving the fast imports.
pub struct NestedTrace {
    pub fast: PolicyTrace,
    pub slow: PolicyTrace,
    pub realized_z: Vec<f64>,
}

/// Euler transition of the imported-infections form with a frozen import
/// fraction: per fast epoch of length `h`,
/// `force = lambda S I/(S+I) + import * S`.
fn imported_transition(h: f64, import_rate: f64, z: f64) -> TransitionFn {
    Arc::new(move |s, i, lambda, gamma, _t| {
        let n = s + i;
        let frac = if n <= 1e-300 { 0.0 } else { s / n };
        let force = lambda * frac * i + import_rate * z * s;
        ((s - h * force).max(0.0), (i + h * (force - gamma * i)).max(0.0))
    })
}

/// Same form with a per-interval `Z` sequence.
fn interval_transition(h: f64, import_rate: f64, z_per_interval: Vec<f64>, n_f: usize) -> TransitionFn {
    Arc::new(move |s, i, lambda, gamma, t| {
        let z = z_per_interval[(t / n_f).min(z_per_interval.len() - 1)];
        let n = s + i;
        let frac = if n <= 1e-300 { 0.0 } else { s / n };
        let force = lambda * frac * i + import_rate * z * s;
        ((s - h * force).max(0.0), (i + h * (force - gamma * i)).max(0.0))
    })
}

/// Linear interpolation of per-`Z` fast fractions at a fixed epoch.
fn interpolate_y(z_grid: &[f64], y_tables: &[Vec<f64>], z: f64, epoch: usize) -> f64 {
    let last = z_grid.len() - 1;
    if z <= z_grid[0] {
        return y_tables[0][epoch];
    }
    if z >= z_grid[last] {
        return y_tables[last][epoch];
    }
    let mut j = 0;
    while z_grid[j + 1] < z {
        j += 1;
    }
    let w = (z - z_grid[j]) / (z_grid[j + 1] - z_grid[j]);
    y_tables[j][epoch] * (1.0 - w) + y_tables[j + 1][epoch] * w
}

/// Infected fractions along a rolled-out trace, one entry per epoch
/// (including the initial state).
fn fractions_of_trace(trace: &PolicyTrace) -> Vec<f64> {
    let mut y = Vec::with_capacity(trace.steps.len() + 1);
    let frac = |s: f64, i: f64| if s + i <= 1e-300 { 0.0 } else { i / (s + i) };
    y.push(frac(trace.initial_s, trace.initial_i));
    for step in &trace.steps {
        y.push(frac(step.s, step.i));
    }
    y
}

/// Runs the nested two-timescale procedure. The fast problem's terminal
/// cost is `h_terminal`; the slow problem uses its own cost model's
/// terminal.
pub fn two_timescale_control(
    spec: &TwoTimescaleSpec,
    fast: &CommunityControl,
    slow: &CommunityControl,
    h_terminal: TerminalCostFn,
) -> Result<NestedTrace, MultiObjError> {
    spec.validate()?;
    let n_int = spec.n_intervals();
    let n_f = spec.fast_steps_per_interval();
    let n_fast = spec.fast_epochs();
    let fast_h = spec.eps * spec.step;
    let z_grid = spec.z_grid();

    let fast_costs = CostModel {
        switch_cost: fast.costs.switch_cost.clone(),
        running: fast.costs.running.clone(),
        terminal: h_terminal.clone(),
    };

    // Step 1: fast value tables and rollouts for each frozen Z.
    let mut fast_solutions = Vec::with_capacity(z_grid.len());
    let mut y_tables = Vec::with_capacity(z_grid.len());
    for &z in &z_grid {
        let dynamics = ControlDynamics::with_transition(
            fast.levels.clone(),
            fast.gamma_grid.clone(),
            fast_h,
            n_fast,
            imported_transition(fast_h, spec.lambda_ab, z),
        )?;
        let solution = backward_dp(&dynamics, &fast_costs, &fast.grid, DpMode::Cost)?;
        let trace = solution.greedy_rollout(
            &dynamics,
            &fast_costs,
            spec.fast_init.0,
            spec.fast_init.1,
            0,
        )?;
        y_tables.push(fractions_of_trace(&trace));
        fast_solutions.push(solution);
    }

    // Step 2: slow recursion, forcing interpolated from the fast rollouts.
    let (slow_solution, slow_dynamics) =
        solve_slow(spec, slow, Arc::new(move |z, epoch| interpolate_y(&z_grid, &y_tables, z, epoch)), n_f)?;
    let mut slow_trace = slow_solution.greedy_rollout(
        &slow_dynamics,
        &slow.costs,
        spec.slow_init.0,
        spec.slow_init.1,
        0,
    )?;
    let mut realized_z = realized_fractions(&slow_trace, n_int);

    // Step 3: replay the fast policy under the realized Z sequence.
    let z_grid = spec.z_grid();
    let mut fast_trace = nested_fast_trace(
        spec,
        fast,
        &fast_costs,
        &z_grid,
        &fast_solutions,
        &realized_z,
        n_f,
        n_fast,
        fast_h,
    )?;

    // Optional refinement: re-solve the fast chain against the realized
    // sequence, then redo the slow pass with that single rollout.
    for _ in 1..spec.outer_iterations {
        let dynamics = ControlDynamics::with_transition(
            fast.levels.clone(),
            fast.gamma_grid.clone(),
            fast_h,
            n_fast,
            interval_transition(fast_h, spec.lambda_ab, realized_z.clone(), n_f),
        )?;
        let solution = backward_dp(&dynamics, &fast_costs, &fast.grid, DpMode::Cost)?;
        let trace = solution.greedy_rollout(
            &dynamics,
            &fast_costs,
            spec.fast_init.0,
            spec.fast_init.1,
            0,
        )?;
        let y = fractions_of_trace(&trace);
        let (slow_solution, slow_dynamics) =
            solve_slow(spec, slow, Arc::new(move |_z, epoch| y[epoch]), n_f)?;
        slow_trace = slow_solution.greedy_rollout(
            &slow_dynamics,
            &slow.costs,
            spec.slow_init.0,
            spec.slow_init.1,
            0,
        )?;
        realized_z = realized_fractions(&slow_trace, n_int);
        fast_trace = trace;
    }

    Ok(NestedTrace { fast: fast_trace, slow: slow_trace, realized_z })
}

type ForcingLookup = Arc<dyn Fn(f64, usize) -> f64 + Send + Sync>;

fn solve_slow(
    spec: &TwoTimescaleSpec,
    slow: &CommunityControl,
    fast_fraction_at: ForcingLookup,
    n_f: usize,
) -> Result<(DpSolution, ControlDynamics), MultiObjError> {
    let n_int = spec.n_intervals();
    let h = spec.eps * spec.step;
    let lambda_ba = spec.lambda_ba;
    let transition: TransitionFn = Arc::new(move |s, i, lambda, gamma, m| {
        let n = s + i;
        let frac = if n <= 1e-300 { 0.0 } else { s / n };
        let z_now = if n <= 1e-300 { 0.0 } else { i / n };
        let y_fast = fast_fraction_at(z_now, m * n_f);
        let force = lambda * frac * i + lambda_ba * y_fast * s;
        ((s - h * force).max(0.0), (i + h * (force - gamma * i)).max(0.0))
    });
    let dynamics = ControlDynamics::with_transition(
        slow.levels.clone(),
        slow.gamma_grid.clone(),
        spec.step,
        n_int,
        transition,
    )?;
    let solution = backward_dp(&dynamics, &slow.costs, &slow.grid, DpMode::Cost)?;
    Ok((solution, dynamics))
}

/// Slow infected fraction at the start of each interval, read off the
/// on-grid slow trace.
fn realized_fractions(trace: &PolicyTrace, n_int: usize) -> Vec<f64> {
    let y = fractions_of_trace(trace);
    (0..n_int).map(|m| y[m.min(y.len() - 1)]).collect()
}

/// Rolls the fast policy forward across intervals, switching to the value
/// tables of the grid `Z` nearest to each interval's realized fraction, with
/// the dynamics driven by the realized fraction itself.
#[allow(clippy::too_many_arguments)]
fn nested_fast_trace(
    spec: &TwoTimescaleSpec,
    fast: &CommunityControl,
    fast_costs: &CostModel,
    z_grid: &[f64],
    fast_solutions: &[DpSolution],
    realized_z: &[f64],
    n_f: usize,
    n_fast: usize,
    fast_h: f64,
) -> Result<PolicyTrace, MultiObjError> {
    let mut idx = fast.grid.project(spec.fast_init.0, spec.fast_init.1, None);
    let (s_start, i_start, _) = fast.grid.unpack(idx);
    let mut level = 0usize;
    let mut steps = Vec::with_capacity(n_fast);
    let mut accumulated = 0.0;

    for epoch in 0..n_fast {
        let interval = (epoch / n_f).min(realized_z.len() - 1);
        let z = realized_z[interval];
        let nearest = z_grid
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (*a - z).abs().partial_cmp(&(*b - z).abs()).unwrap()
            })
            .map(|(k, _)| k)
            .unwrap();
        let (s, i, _) = fast.grid.unpack(idx);
        let (j, u) = fast_solutions[nearest].policy[epoch][level][idx];
        let (j, u) = (j as usize, u as usize);
        let gamma = fast.gamma_grid[u];
        let switching_cost = fast_costs.switch(level, j);
        let running_cost = (fast_costs.running)(s, i, j, gamma, epoch + 1);
        let transition = imported_transition(fast_h, spec.lambda_ab, z);
        let (s_next, i_next) = transition(s, i, fast.levels[j], gamma, epoch);
        idx = fast.grid.project(s_next, i_next, None);
        level = j;
        accumulated += switching_cost + running_cost;
        let (s_grid, i_grid, _) = fast.grid.unpack(idx);
        steps.push(TraceStep {
            t: epoch,
            level: j,
            gamma,
            s: s_grid,
            i: i_grid,
            running_cost,
            switching_cost,
        });
    }

    let (s_t, i_t, _) = fast.grid.unpack(idx);
    let terminal_cost = (fast_costs.terminal)(s_t, i_t, n_fast);
    Ok(PolicyTrace {
        initial_s: s_start,
        initial_i: i_start,
        initial_level: 0,
        step_size: fast_h,
        steps,
        terminal_cost,
        total: accumulated + terminal_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::RunningCostFn;

    const GAMMA_15: f64 = 1.0 / 15.0;

    fn simple_costs(m: usize) -> CostModel {
        let running: RunningCostFn = Arc::new(|_s, i, level, _gamma, _t| i + 300.0 * level as f64);
        let terminal: TerminalCostFn = Arc::new(|_s, i, _t| 2.0 * i);
        let mut switch = vec![vec![0.0; m]; m];
        for (a, row) in switch.iter_mut().enumerate() {
            for (b, value) in row.iter_mut().enumerate() {
                if a != b {
                    *value = 50.0;
                }
            }
        }
        CostModel::new(switch, running, terminal).unwrap().0
    }

    fn community(levels: Vec<f64>, gammas: Vec<f64>, grid: StateGrid) -> CommunityControl {
        let m = levels.len();
        CommunityControl { levels, gamma_grid: gammas, costs: simple_costs(m), grid }
    }

    #[test]
    fn spec_validation() {
        assert!(TwoTimescaleSpec::new(

            1.5, 1.0, 8.0, (9000.0, 1000.0), (4000.0, 1000.0), 0.0, 0.0
        )
        .is_err());
        assert!(TwoTimescaleSpec::new(0.25, 1.0, 8.0, (9000.0, 1000.0), (4000.0, 1000.0), 0.0, 0.0)
            .is_ok());
    }

    #[test]
    fn interval_and_epoch_counts() {
        let spec =
            TwoTimescaleSpec::new(0.25, 1.0, 8.0, (9e3, 1e3), (4e3, 1e3), 0.01, 0.01).unwrap();
        assert_eq!(spec.n_intervals(), 8);
        assert_eq!(spec.fast_steps_per_interval(), 4);
        assert_eq!(spec.fast_epochs(), 32);
        let z = spec.z_grid();
        assert_eq!(z.len(), 16);
        assert_eq!(z[0], 0.0);
        assert!((z[15] - 1.5 * 0.2).abs() < 1e-12);
    }

    #[test]
    fn decoupled_matches_single_community_dp() {
        // With both couplings zero the fast problem is independent of Z and
        // the slow problem is a single-community recursion at step eps * a.
        let spec =
            TwoTimescaleSpec::new(0.25, 1.0, 6.0, (9000.0, 1000.0), (4000.0, 1000.0), 0.0, 0.0)
                .unwrap();
        let fast_grid = StateGrid::linear_log(0.0, 1.05e4, 40, 1.0, 1.05e4, 40);
        let slow_grid = StateGrid::linear_log(0.0, 6e3, 40, 1.0, 6e3, 40);
        let fast = community(vec![0.25, 0.125], vec![GAMMA_15, 0.2], fast_grid.clone());
        let slow = community(vec![0.25, 0.125], vec![GAMMA_15, 0.2], slow_grid.clone());
        let h_terminal: TerminalCostFn = Arc::new(|_s, i, _t| 2.0 * i);
        let nested = two_timescale_control(&spec, &fast, &slow, h_terminal.clone()).unwrap();

        // Fast reference: plain Euler at the fine step over all fast epochs.
        let fast_ref_dynamics = ControlDynamics::euler(
            vec![0.25, 0.125],
            vec![GAMMA_15, 0.2],
            spec.eps * spec.step,
            spec.fast_epochs(),
        )
        .unwrap();
        let fast_ref_costs = CostModel {
            switch_cost: fast.costs.switch_cost.clone(),
            running: fast.costs.running.clone(),
            terminal: h_terminal,
        };
        let fast_ref = backward_dp(&fast_ref_dynamics, &fast_ref_costs, &fast_grid, DpMode::Cost)
            .unwrap()
            .greedy_rollout(&fast_ref_dynamics, &fast_ref_costs, 9000.0, 1000.0, 0)
            .unwrap();
        assert!(
            (nested.fast.total - fast_ref.total).abs() <= 1e-9 * fast_ref.total.abs().max(1.0),
            "fast {} vs reference {}",
            nested.fast.total,
            fast_ref.total
        );

        // Slow reference: the eps-scaled field over one coarse step equals
        // Euler at step eps * a, for n_intervals epochs.
        let slow_ref_dynamics = ControlDynamics::euler(
            vec![0.25, 0.125],
            vec![GAMMA_15, 0.2],
            spec.eps * spec.step,
            spec.n_intervals(),
        )
        .unwrap();
        let slow_ref = backward_dp(&slow_ref_dynamics, &slow.costs, &slow_grid, DpMode::Cost)
            .unwrap()
            .greedy_rollout(&slow_ref_dynamics, &slow.costs, 4000.0, 1000.0, 0)
            .unwrap();
        assert!(
            (nested.slow.total - slow_ref.total).abs() <= 1e-9 * slow_ref.total.abs().max(1.0),
            "slow {} vs reference {}",
            nested.slow.total,
            slow_ref.total
        );
    }

    #[test]
    fn single_interval_base_case() {
        let spec =
            TwoTimescaleSpec::new(0.25, 1.0, 1.0, (9000.0, 1000.0), (4000.0, 1000.0), 0.02, 0.02)
                .unwrap();
        assert_eq!(spec.n_intervals(), 1);
        let fast_grid = StateGrid::linear_log(0.0, 1.05e4, 30, 1.0, 1.05e4, 30);
        let slow_grid = StateGrid::linear_log(0.0, 6e3, 30, 1.0, 6e3, 30);
        let fast = community(vec![0.25], vec![GAMMA_15], fast_grid);
        let slow = community(vec![0.25], vec![GAMMA_15], slow_grid);
        let nested =
            two_timescale_control(&spec, &fast, &slow, Arc::new(|_s, i, _t| i)).unwrap();
        assert_eq!(nested.slow.steps.len(), 1);
        assert_eq!(nested.fast.steps.len(), spec.fast_steps_per_interval());
        assert_eq!(nested.realized_z.len(), 1);
        assert!((nested.realized_z[0] - 0.2).abs() < 0.02);
    }

    #[test]
    fn slow_trajectory_moves_at_order_eps() {
        // Paired runs: halving eps halves the slow trajectory's deviation
        // (fixed wall-clock horizon), within a tolerance band.
        let slow_grid = StateGrid::linear_log(3.5e3, 4.2e3, 350, 900.0, 1300.0, 200);
        let fast_grid = StateGrid::linear_log(0.0, 1.05e4, 60, 1.0, 1.05e4, 60);

        let run = |eps: f64| {
            let spec = TwoTimescaleSpec::new(
                eps,
                1.0,
                8.0,
                (9000.0, 1000.0),
                (4000.0, 1000.0),
                0.05,
                0.05,
            )
            .unwrap();
            let fast = community(vec![0.25], vec![GAMMA_15], fast_grid.clone());
            let slow = community(vec![0.25], vec![GAMMA_15], slow_grid.clone());
            let nested =
                two_timescale_control(&spec, &fast, &slow, Arc::new(|_s, i, _t| i)).unwrap();
            nested.slow
        };
        let sup_dev = |a: &PolicyTrace, b: &PolicyTrace| -> f64 {
            a.steps
                .iter()
                .zip(&b.steps)
                .map(|(x, y)| {
                    let ds = x.s - y.s;
                    let di = x.i - y.i;
                    (ds * ds + di * di).sqrt()
                })
                .fold(0.0, f64::max)
        };
        let (full, half, quarter) = (run(0.1), run(0.05), run(0.025));
        let d1 = sup_dev(&full, &half);
        let d2 = sup_dev(&half, &quarter);
        let ratio = d1 / d2;
        assert!((1.5..=3.0).contains(&ratio), "O(eps) ratio was {ratio} ({d1} / {d2})");
    }

    #[test]
    fn realized_fractions_stay_in_band() {
        let spec =
            TwoTimescaleSpec::new(0.2, 1.0, 5.0, (9000.0, 1000.0), (4000.0, 1000.0), 0.05, 0.05)
                .unwrap();
        let fast_grid = StateGrid::linear_log(0.0, 1.05e4, 40, 1.0, 1.05e4, 40);
        let slow_grid = StateGrid::linear_log(0.0, 6e3, 40, 1.0, 6e3, 40);
        let fast = community(vec![0.25, 0.125], vec![GAMMA_15, 0.2], fast_grid);
        let slow = community(vec![0.25, 0.125], vec![GAMMA_15, 0.2], slow_grid);
        let nested =
            two_timescale_control(&spec, &fast, &slow, Arc::new(|_s, i, _t| i)).unwrap();
        let z_max = 1.5 * 0.2;
        for &z in &nested.realized_z {
            assert!((0.0..=z_max).contains(&z), "realized z = {z}");
        }
    }
}
