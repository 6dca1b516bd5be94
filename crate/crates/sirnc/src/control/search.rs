//! Exhaustive forward tree search with a receding horizon.
//!
//! At each outer step the search enumerates every `(level, gamma)` sequence
//! of lookahead length, scores running + switching costs plus the terminal
//! cost at the lookahead end, applies the first action of the minimizer,
//! and re-plans. Ties are broken toward the lowest level index, then the
//! lowest gamma, by strict-improvement enumeration order.

use super::{ControlDynamics, ControlError, ControlState, CostModel, PolicyTrace, TraceStep};

const MAX_LEAVES: u128 = 10_000_000;

/// Runs the receding-horizon controller for `total_horizon` steps.
///
/// The inner problem at outer time `t` spans `min(lookahead, total - t)`
/// steps (the window truncates at the end of the run, where the terminal
/// cost applies), with `lookahead = dynamics.horizon`. With
/// `lookahead >= total_horizon` the search therefore solves the whole
/// problem exactly.
pub fn tree_search_mpc(
    dynamics: &ControlDynamics,
    costs: &CostModel,
    init: ControlState,
    total_horizon: usize,
) -> Result<PolicyTrace, ControlError> {
    let actions = (dynamics.n_levels() * dynamics.n_gammas()) as u128;
    let leaves = actions.pow(dynamics.horizon.min(total_horizon) as u32);
    if leaves > MAX_LEAVES {
        return Err(ControlError::TreeTooLarge { leaves });
    }

    let mut state = init;
    let mut steps = Vec::with_capacity(total_horizon);
    let mut accumulated = 0.0;

    for outer in 0..total_horizon {
        let depth = dynamics.horizon.min(total_horizon - outer);
        let (_, action) = best_subtree(dynamics, costs, state.s, state.i, state.level, outer, depth);
        let (level, gamma_idx) = action.expect("depth >= 1 always yields an action");

        let switching_cost = costs.switch(state.level, level);
        let gamma = dynamics.gamma_grid[gamma_idx];
        let running_cost = (costs.running)(state.s, state.i, level, gamma, outer + 1);
        let (s_next, i_next) = dynamics.apply(state.s, state.i, level, gamma_idx, outer);
        state = ControlState {
            s: s_next,
            i: i_next,
            level,
            running_max: state.running_max.map(|m| m.max(i_next)),
        };
        accumulated += switching_cost + running_cost;
        steps.push(TraceStep {
            t: outer,
            level,
            gamma,
            s: s_next,
            i: i_next,
            running_cost,
            switching_cost,
        });
    }

    let terminal_cost = (costs.terminal)(state.s, state.i, total_horizon);
    Ok(PolicyTrace {
        initial_s: init.s,
        initial_i: init.i,
        initial_level: init.level,
        step_size: dynamics.step,
        steps,
        terminal_cost,
        total: accumulated + terminal_cost,
    })
}

/// Minimal cost-to-go over all action sequences of length `depth` from
/// `(s, i)` at absolute epoch `t_abs` holding `level`, and the first action
/// achieving it. Enumeration is depth-first with levels outermost and the
/// gamma grid innermost, improving strictly, so the reported minimizer is
/// the lexicographically smallest among ties.
fn best_subtree(
    dynamics: &ControlDynamics,
    costs: &CostModel,
    s: f64,
    i: f64,
    level: usize,
    t_abs: usize,
    depth: usize,
) -> (f64, Option<(usize, usize)>) {
    if depth == 0 {
        return ((costs.terminal)(s, i, t_abs), None);
    }
    let mut best = f64::INFINITY;
    let mut best_action = None;
    for j in 0..dynamics.n_levels() {
        let switch = costs.switch(level, j);
        for u in 0..dynamics.n_gammas() {
            let gamma = dynamics.gamma_grid[u];
            let running = (costs.running)(s, i, j, gamma, t_abs + 1);
            let (s_next, i_next) = dynamics.apply(s, i, j, u, t_abs);
            let (tail, _) = best_subtree(dynamics, costs, s_next, i_next, j, t_abs + 1, depth - 1);
            let candidate = switch + running + tail;
            if candidate < best {
                best = candidate;
                best_action = Some((j, u));
            }
        }
    }
    (best, best_action)
}
