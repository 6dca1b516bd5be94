//! Multi-objective constrained control via replicator weight adaptation.
//!
//! Given `K > 1` cost triples (running, switching, terminal) with thresholds
//! `C_1..C_K`, the goal is a single policy whose per-objective values all
//! stay below threshold. The scheme scalarizes the objectives with a weight
//! vector on the simplex, solves the scalarized backward recursion, and
//! nudges the weights by a replicator step
//!
//! ```text
//! w'(m) = w(m) + a_n w(m) ((V_m - C_m) - (Vbar - Cbar(w)))
//! ```
//!
//! so objectives whose standalone values sit worst relative to their
//! thresholds gain influence. Weights are clipped to the simplex interior
//! and renormalized after every update.

mod twoscale;

pub use twoscale::{two_timescale_control, CommunityControl, NestedTrace, TwoTimescaleSpec};

use thiserror::Error;

use crate::control::{
    backward_dp, ControlDynamics, ControlError, CostModel, DpMode, DpSolution, RunningCostFn,
    StateGrid, TerminalCostFn,
};
use std::sync::Arc;

/// Weights below this floor are clipped back into the simplex interior.
pub const WEIGHT_FLOOR: f64 = 1e-8;

/// Replicator iteration stops when the sup-norm weight movement drops below
/// this.
pub const CONVERGENCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MultiObjError {
    #[error("need at least two objectives, got {k}")]
    NeedAtLeastTwoObjectives { k: usize },
    #[error("each objective needs a positive threshold")]
    BadThreshold,
    #[error("weights must be positive and match the objective count")]
    BadWeights,
    #[error("timescale spec requires 0 < eps < 1, step > 0, horizon >= step")]
    BadTimescales,
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// `K` cost triples sharing one dynamics, with per-objective thresholds.
pub struct ObjectiveSet {
    pub objectives: Vec<CostModel>,
    pub thresholds: Vec<f64>,
}

impl ObjectiveSet {
    pub fn new(objectives: Vec<CostModel>, thresholds: Vec<f64>) -> Result<Self, MultiObjError> {
        if objectives.len() < 2 {
            return Err(MultiObjError::NeedAtLeastTwoObjectives { k: objectives.len() });
        }
        if thresholds.len() != objectives.len()
            || thresholds.iter().any(|&c| !(c > 0.0 && c.is_finite()))
        {
            return Err(MultiObjError::BadThreshold);
        }
        Ok(Self { objectives, thresholds })
    }

    pub fn k(&self) -> usize {
        self.objectives.len()
    }
}

/// A strictly positive probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn new(w: Vec<f64>) -> Result<Self, MultiObjError> {
        if w.is_empty() || w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(MultiObjError::BadWeights);
        }
        Ok(Self::clip_normalize(w).0)
    }

    fn clip_normalize(mut w: Vec<f64>) -> (Self, f64) {
        for x in &mut w {
            *x = x.max(WEIGHT_FLOOR);
        }
        let sum: f64 = w.iter().sum();
        let drift = sum - 1.0;
        for x in &mut w {
            *x /= sum;
        }
        // Normalizing can push small entries back under the floor; pin those
        // at the floor and spread the remaining mass over the rest.
        let k = w.len();
        let mut pinned = vec![false; k];
        loop {
            let mut changed = false;
            for i in 0..k {
                if !pinned[i] && w[i] < WEIGHT_FLOOR {
                    pinned[i] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let pinned_mass = pinned.iter().filter(|&&p| p).count() as f64 * WEIGHT_FLOOR;
            let rest: f64 = (0..k).filter(|&i| !pinned[i]).map(|i| w[i]).sum();
            for i in 0..k {
                if pinned[i] {
                    w[i] = WEIGHT_FLOOR;
                } else {
                    w[i] *= (1.0 - pinned_mass) / rest;
                }
            }
        }
        // Absorb the last rounding into the largest entry so the sum is 1.
        let total: f64 = w.iter().sum();
        let largest = (0..k)
            .max_by(|&a, &b| w[a].partial_cmp(&w[b]).unwrap())
            .expect("weights are non-empty");
        w[largest] += 1.0 - total;
        (Self(w), drift)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn on_simplex(&self) -> bool {
        let sum: f64 = self.0.iter().sum();
        self.0.iter().all(|&x| x >= WEIGHT_FLOOR) && (sum - 1.0).abs() <= 1e-12
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Step sizes `a(n)`; both variants have a divergent sum, as the iteration
/// requires.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSizeRule {
    Constant(f64),
    /// `a0 / (n + 1)`.
    Harmonic(f64),
}

impl StepSizeRule {
    pub fn at(&self, n: usize) -> f64 {
        match *self {
            StepSizeRule::Constant(a0) => a0,
            StepSizeRule::Harmonic(a0) => a0 / (n + 1) as f64,
        }
    }
}

impl Default for StepSizeRule {
    fn default() -> Self {
        StepSizeRule::Harmonic(0.5)
    }
}

/// Weighted combination of the objective costs: running, switching, and
/// terminal costs all scalarize linearly.
pub fn scalarize(obj: &ObjectiveSet, w: &WeightVector) -> CostModel {
    let k = obj.k();
    let m_levels = obj.objectives[0].switch_cost.len();
    let mut switch = vec![vec![0.0; m_levels]; m_levels];
    for (m, objective) in obj.objectives.iter().enumerate() {
        for i in 0..m_levels {
            for j in 0..m_levels {
                switch[i][j] += w.as_slice()[m] * objective.switch_cost[i][j];
            }
        }
    }
    let runnings: Vec<RunningCostFn> = obj.objectives.iter().map(|o| o.running.clone()).collect();
    let terminals: Vec<TerminalCostFn> =
        obj.objectives.iter().map(|o| o.terminal.clone()).collect();
    let weights = w.as_slice().to_vec();
    let weights_t = weights.clone();
    let running: RunningCostFn = Arc::new(move |s, i, level, gamma, t| {
        (0..k).map(|m| weights[m] * (runnings[m])(s, i, level, gamma, t)).sum()
    });
    let terminal: TerminalCostFn =
        Arc::new(move |s, i, t| (0..k).map(|m| weights_t[m] * (terminals[m])(s, i, t)).sum());
    CostModel { switch_cost: switch, running, terminal }
}

/// Solves each objective's own backward recursion; the tables do not depend
/// on the weights and are computed once per problem.
pub fn solve_k_objectives(
    obj: &ObjectiveSet,
    dynamics: &ControlDynamics,
    grid: &StateGrid,
) -> Result<Vec<DpSolution>, MultiObjError> {
    obj.objectives
        .iter()
        .map(|costs| backward_dp(dynamics, costs, grid, DpMode::Cost).map_err(Into::into))
        .collect()
}

/// Backward recursion for the `w`-scalarized costs.
pub fn solve_scalarized(
    obj: &ObjectiveSet,
    w: &WeightVector,
    dynamics: &ControlDynamics,
    grid: &StateGrid,
) -> Result<DpSolution, MultiObjError> {
    let costs = scalarize(obj, w);
    backward_dp(dynamics, &costs, grid, DpMode::Cost).map_err(Into::into)
}

/// One replicator step. The raw update can overshoot; the step is halved
/// until every entry stays above `-w(m)/2`, then entries are clipped to the
/// simplex interior and renormalized. Returns the new weights and the
/// pre-normalization sum drift.
pub fn replicator_update(
    w: &WeightVector,
    objective_roots: &[f64],
    scalarized_root: f64,
    thresholds: &[f64],
    step: f64,
) -> (WeightVector, f64) {
    let k = w.len();
    assert_eq!(objective_roots.len(), k);
    assert_eq!(thresholds.len(), k);
    let c_bar: f64 = w.as_slice().iter().zip(thresholds).map(|(wm, cm)| wm * cm).sum();
    let reference = scalarized_root - c_bar;

    let mut a = step;
    let mut next: Vec<f64>;
    loop {
        next = (0..k)
            .map(|m| {
                let wm = w.as_slice()[m];
                wm + a * wm * ((objective_roots[m] - thresholds[m]) - reference)
            })
            .collect();
        let safe = next
            .iter()
            .zip(w.as_slice())
            .all(|(&candidate, &wm)| candidate > -0.5 * wm);
        if safe || a < 1e-300 {
            break;
        }
        a *= 0.5;
    }
    WeightVector::clip_normalize(next)
}

/// One row of the iteration log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub n: usize,
    pub weights: Vec<f64>,
    /// Standalone objective values `V_m(z0, 0)` (constant across iterations).
    pub objective_roots: Vec<f64>,
    /// Root value of the scalarized recursion at this iteration's weights.
    pub scalarized_root: f64,
    /// `C_m - cost_m(current policy)`, per objective.
    pub slacks: Vec<f64>,
    /// Pre-normalization sum drift of the replicator step.
    pub weight_drift: f64,
}

/// Outcome of the weight-adaptation loop.
pub struct MultiObjReport {
    pub weights: WeightVector,
    pub iterations: Vec<IterationRecord>,
    pub objective_roots: Vec<f64>,
    /// Per-objective cost of the final scalarized policy.
    pub final_costs: Vec<f64>,
    pub satisfied: Vec<bool>,
    pub all_satisfied: bool,
    pub converged: bool,
    pub final_solution: DpSolution,
}

/// Full scheme: solve the `K` standalone recursions once, then iterate
/// scalarized recursion + replicator step until the weights stop moving (or
/// `max_iterations` runs out), and evaluate the final policy objective by
/// objective against the thresholds.
pub fn run_multiobjective(
    obj: &ObjectiveSet,
    dynamics: &ControlDynamics,
    grid: &StateGrid,
    rule: &StepSizeRule,
    z0: (f64, f64),
    initial_level: usize,
    max_iterations: usize,
) -> Result<MultiObjReport, MultiObjError> {
    let tables = solve_k_objectives(obj, dynamics, grid)?;
    let fingerprints: Vec<u64> = tables.iter().map(DpSolution::fingerprint).collect();
    let objective_roots: Vec<f64> =
        tables.iter().map(|t| t.root_value(z0.0, z0.1, initial_level)).collect();

    let mut w = WeightVector::uniform(obj.k());
    let mut iterations = Vec::new();
    let mut converged = false;
    let mut final_solution = None;

    for n in 0..max_iterations {
        let solution = solve_scalarized(obj, &w, dynamics, grid)?;
        let scalarized_root = solution.root_value(z0.0, z0.1, initial_level);
        let costs_now = evaluate_policy_per_objective(&solution, obj, dynamics, z0, initial_level);
        let (w_next, weight_drift) =
            replicator_update(&w, &objective_roots, scalarized_root, &obj.thresholds, rule.at(n));
        debug_assert!(w_next.on_simplex());
        iterations.push(IterationRecord {
            n,
            weights: w_next.as_slice().to_vec(),
            objective_roots: objective_roots.clone(),
            scalarized_root,
            slacks: obj
                .thresholds
                .iter()
                .zip(&costs_now)
                .map(|(c, cost)| c - cost)
                .collect(),
            weight_drift,
        });
        let movement = w_next.sup_distance(&w);
        final_solution = Some(solution);
        w = w_next;
        if movement < CONVERGENCE_TOL {
            converged = true;
            break;
        }
    }

    // The standalone tables must not have been touched by the iteration.
    for (table, fp) in tables.iter().zip(&fingerprints) {
        assert_eq!(table.fingerprint(), *fp, "objective value tables were mutated");
    }

    let final_solution = match final_solution {
        Some(sol) => sol,
        // max_iterations = 0: fall back to the uniform scalarization.
        None => solve_scalarized(obj, &w, dynamics, grid)?,
    };
    let final_costs = evaluate_policy_per_objective(&final_solution, obj, dynamics, z0, initial_level);
    let satisfied: Vec<bool> = final_costs
        .iter()
        .zip(&obj.thresholds)
        .map(|(cost, c)| *cost <= c * (1.0 + 1e-9))
        .collect();
    let all_satisfied = satisfied.iter().all(|&s| s);
    Ok(MultiObjReport {
        weights: w,
        iterations,
        objective_roots,
        final_costs,
        satisfied,
        all_satisfied,
        converged,
        final_solution,
    })
}

/// Rolls a solved policy forward on its grid, accumulating every objective's
/// running/switching/terminal cost separately.
pub fn evaluate_policy_per_objective(
    solution: &DpSolution,
    obj: &ObjectiveSet,
    dynamics: &ControlDynamics,
    z0: (f64, f64),
    initial_level: usize,
) -> Vec<f64> {
    let k = obj.k();
    let mut totals = vec![0.0; k];
    let mut idx = solution.grid.project(z0.0, z0.1, None);
    let mut level = initial_level;
    for t in 0..solution.horizon {
        let (s, i, _) = solution.grid.unpack(idx);
        let (j, u) = solution.policy[t][level][idx];
        let (j, u) = (j as usize, u as usize);
        let gamma = dynamics.gamma_grid[u];
        for (m, objective) in obj.objectives.iter().enumerate() {
            totals[m] += objective.switch(level, j) + (objective.running)(s, i, j, gamma, t + 1);
        }
        let (s_next, i_next) = dynamics.apply(s, i, j, u, t);
        idx = solution.grid.project(s_next, i_next, None);
        level = j;
    }
    let (s_t, i_t, _) = solution.grid.unpack(idx);
    for (m, objective) in obj.objectives.iter().enumerate() {
        totals[m] += (objective.terminal)(s_t, i_t, solution.horizon);
    }
    totals
}
