//! First-order variation-of-constants correction for weakly coupled
//! communities.
//!
//! A community coupled to a neighbor with small cross-infection rate is a
//! perturbation of its own uncoupled dynamics. The deviation admits an
//! explicit first-order expression: propagate the coupling forcing through
//! the fundamental solution `Phi` of the dynamics linearized along the
//! uncoupled (closed-form) nominal trajectory,
//!
//! ```text
//! X_coupled(t) ~= X_nominal(t) + integral_0^t Phi(t, s) eps(s) ds
//! ```
//!
//! with an `O(coupling^2)` error on horizons short relative to
//! `1 / coupling`. Longer horizons are handled by re-anchoring the nominal
//! on consecutive windows.

use thiserror::Error;

use crate::closedform::{ClosedFormError, ClosedFormSolution};
use crate::core::{InitialState, ModelParams, Trajectory};
use crate::ode::{run_communities, CommunityParams, OdeError};

pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerturbationError {
    #[error("mixing pool S + I must be positive, got {n}")]
    ZeroPopulationDivisor { n: f64 },
    #[error("fundamental solution lost invertibility (det = {det})")]
    SingularFundamentalSolution { det: f64 },
    #[error("window must satisfy 0 < window <= horizon")]
    BadWindow,
    #[error(transparent)]
    ClosedForm(#[from] ClosedFormError),
    #[error(transparent)]
    Ode(#[from] OdeError),
}

/// Jacobian of the SIR-NC field at `(s, i)`:
///
/// ```text
/// A = [ -lambda i^2/n^2            -lambda s^2/n^2          ]
///     [  lambda i^2/n^2             lambda s^2/n^2 - gamma  ]
/// ```
///
/// with `n = s + i`.
pub fn linearized_matrix(
    s: f64,
    i: f64,
    lambda: f64,
    gamma: f64,
) -> Result<Mat2, PerturbationError> {
    let n = s + i;
    if !(n > 0.0) {
        return Err(PerturbationError::ZeroPopulationDivisor { n });
    }
    let wi = lambda * i * i / (n * n);
    let ws = lambda * s * s / (n * n);
    Ok([[-wi, -ws], [wi, ws - gamma]])
}

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

pub fn mat_vec(a: &Mat2, v: &[f64; 2]) -> [f64; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

pub fn mat_det(a: &Mat2) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

pub fn mat_inv(a: &Mat2) -> Result<Mat2, PerturbationError> {
    let det = mat_det(a);
    if det.abs() < 1e-300 {
        return Err(PerturbationError::SingularFundamentalSolution { det });
    }
    Ok([[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]])
}

/// Fundamental solution `Phi(t, t0)` of the linearized dynamics along the
/// closed-form nominal anchored at `(t0, s0, i0)`, sampled on a uniform
/// grid.
///
/// `Phi(t, s)` for interior `s` follows from the cocycle property as
/// `Phi(t, t0) Phi(s, t0)^{-1}`.
pub struct FundamentalSolution {
    t0: f64,
    h: f64,
    phis: Vec<Mat2>,
    nominal: ClosedFormSolution,
}

/// Integrates the matrix equation `dPhi/dt = A(t) Phi`, `Phi(t0) = I`, with
/// RK4; `A` is evaluated from the closed-form nominal at the exact substage
/// times.
pub fn fundamental_solution(
    anchor: (f64, f64, f64),
    lambda: f64,
    gamma: f64,
    t_end: f64,
    step: f64,
) -> Result<FundamentalSolution, PerturbationError> {
    let (t0, s0, i0) = anchor;
    if !(step > 0.0 && t_end >= t0) {
        return Err(PerturbationError::BadWindow);
    }
    let nominal = ClosedFormSolution::new(
        ModelParams::without_recovery(lambda, gamma),
        InitialState::new(s0, i0),
    )?;
    let span = t_end - t0;
    let n = crate::ode::steps_for_span(span, step);
    let h = span / n as f64;

    let a_at = |tau: f64| -> Result<Mat2, PerturbationError> {
        let s = nominal.susceptible_robust(tau);
        let i = nominal.infected_robust(tau);
        linearized_matrix(s, i, lambda, gamma)
    };

    let mut phis = Vec::with_capacity(n + 1);
    let mut phi: Mat2 = [[1.0, 0.0], [0.0, 1.0]];
    phis.push(phi);
    for k in 0..n {
        let tau = k as f64 * h;
        let a1 = a_at(tau)?;
        let a2 = a_at(tau + 0.5 * h)?;
        let a4 = a_at(tau + h)?;
        let k1 = mat_mul(&a1, &phi);
        let k2 = mat_mul(&a2, &add_scaled(&phi, &k1, 0.5 * h));
        let k3 = mat_mul(&a2, &add_scaled(&phi, &k2, 0.5 * h));
        let k4 = mat_mul(&a4, &add_scaled(&phi, &k3, h));
        for r in 0..2 {
            for c in 0..2 {
                phi[r][c] += h / 6.0 * (k1[r][c] + 2.0 * k2[r][c] + 2.0 * k3[r][c] + k4[r][c]);
            }
        }
        phis.push(phi);
    }
    Ok(FundamentalSolution { t0, h, phis, nominal })
}

fn add_scaled(base: &Mat2, delta: &Mat2, factor: f64) -> Mat2 {
    let mut out = *base;
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] += factor * delta[r][c];
        }
    }
    out
}

impl FundamentalSolution {
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.phis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phis.is_empty()
    }

    pub fn at_index(&self, k: usize) -> &Mat2 {
        &self.phis[k]
    }

    /// `Phi(t, t0)` by entrywise linear interpolation between grid nodes.
    pub fn at_time(&self, t: f64) -> Mat2 {
        let n = self.phis.len() - 1;
        let pos = ((t - self.t0) / self.h).clamp(0.0, n as f64);
        let k = (pos.floor() as usize).min(n.saturating_sub(1));
        let w = pos - k as f64;
        let mut out = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                out[r][c] = self.phis[k][r][c] * (1.0 - w) + self.phis[k + 1][r][c] * w;
            }
        }
        out
    }

    /// Nominal state `(S, I)` at absolute time `t >= t0`.
    pub fn nominal_at(&self, t: f64) -> (f64, f64) {
        let tau = t - self.t0;
        (self.nominal.susceptible_robust(tau), self.nominal.infected_robust(tau))
    }
}

/// One community's perturbation analysis: uncoupled nominal, coupling
/// forcing, first-order corrected trajectory, coupled-RK4 truth, and the
/// pointwise correction error.
#[derive(Debug, Clone)]
pub struct PerturbationRun {
    pub nominal: Trajectory,
    /// Forcing `(dS, dI)` induced by the other community's uncoupled
    /// trajectory at each grid point.
    pub forcing: Vec<[f64; 2]>,
    pub corrected: Trajectory,
    pub truth: Trajectory,
    /// Euclidean distance between corrected and truth per grid point.
    pub error_estimate: Vec<f64>,
    /// Set when `coupling * horizon >= 1`: the first-order expansion is not
    /// expected to be accurate on such a long horizon.
    pub horizon_warning: bool,
}

impl PerturbationRun {
    /// Worst-case Euclidean deviation of the corrected trajectory from the
    /// coupled truth.
    pub fn sup_error(&self) -> f64 {
        self.error_estimate.iter().cloned().fold(0.0, f64::max)
    }

    /// Worst-case deviation of the *uncorrected* nominal from the truth.
    pub fn sup_error_nominal(&self) -> f64 {
        (0..self.nominal.len())
            .map(|k| {
                let ds = self.nominal.s[k] - self.truth.s[k];
                let di = self.nominal.i[k] - self.truth.i[k];
                (ds * ds + di * di).sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// CSV layout: `t, nominal_s, nominal_i, corrected_s, corrected_i,
    /// truth_s, truth_i, abs_err`.
    pub fn write_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        crate::csv::write_columns(
            path,
            &[
                "t",
                "nominal_s",
                "nominal_i",
                "corrected_s",
                "corrected_i",
                "truth_s",
                "truth_i",
                "abs_err",
            ],
            &[
                &self.nominal.times,
                &self.nominal.s,
                &self.nominal.i,
                &self.corrected.s,
                &self.corrected.i,
                &self.truth.s,
                &self.truth.i,
                &self.error_estimate,
            ],
        )
    }
}

/// Community rates and initial state in the minimal form the correction
/// needs.
#[derive(Debug, Clone, Copy)]
struct Side {
    lambda: f64,
    gamma: f64,
    s0: f64,
    i0: f64,
}

impl From<crate::ode::Community> for Side {
    fn from(c: crate::ode::Community) -> Self {
        Side { lambda: c.lambda, gamma: c.gamma, s0: c.s0, i0: c.i0 }
    }
}

/// First-order corrected trajectories for both communities over
/// `[0, horizon]`, with the coupled RK4 run as ground truth.
///
/// The forcing on community `a` uses the *uncoupled* neighbor trajectory
/// (`I_b/N_b ~ I_b0/N_b0` of the decoupled run), entering the susceptible
/// equation with a minus sign and the infected equation with a plus sign.
pub fn alekseev_correct(
    cp: &CommunityParams,
    horizon: f64,
    step: f64,
) -> Result<(PerturbationRun, PerturbationRun), PerturbationError> {
    let truth = run_communities(cp, horizon, step)?;
    let run_a = correct_one(&cp.a.into(), &cp.b.into(), cp.lambda_ab, horizon, step)?;
    let run_b = correct_one(&cp.b.into(), &cp.a.into(), cp.lambda_ba, horizon, step)?;
    Ok((attach_truth(run_a, truth.a), attach_truth(run_b, truth.b)))
}

struct CorrectionCore {
    nominal: Trajectory,
    forcing: Vec<[f64; 2]>,
    corrected: Trajectory,
    horizon_warning: bool,
}

fn attach_truth(core: CorrectionCore, truth: Trajectory) -> PerturbationRun {
    let error_estimate: Vec<f64> = (0..core.corrected.len())
        .map(|k| {
            let ds = core.corrected.s[k] - truth.s[k];
            let di = core.corrected.i[k] - truth.i[k];
            (ds * ds + di * di).sqrt()
        })
        .collect();
    PerturbationRun {
        nominal: core.nominal,
        forcing: core.forcing,
        corrected: core.corrected,
        truth,
        error_estimate,
        horizon_warning: core.horizon_warning,
    }
}

/// `own` is the corrected community; `other` supplies the forcing through
/// the coupling rate.
fn correct_one(
    own: &Side,
    other: &Side,
    coupling: f64,
    horizon: f64,
    step: f64,
) -> Result<CorrectionCore, PerturbationError> {
    let n = crate::ode::steps_for_span(horizon, step);
    let h = horizon / n as f64;

    let own_nominal = ClosedFormSolution::new(
        ModelParams::without_recovery(own.lambda, own.gamma),
        InitialState::new(own.s0, own.i0),
    )?;
    let other_nominal = ClosedFormSolution::new(
        ModelParams::without_recovery(other.lambda, other.gamma),
        InitialState::new(other.s0, other.i0),
    )?;
    let phi = fundamental_solution((0.0, own.s0, own.i0), own.lambda, own.gamma, horizon, h)?;

    let mut nominal = Trajectory::with_capacity(n + 1);
    let mut forcing = Vec::with_capacity(n + 1);
    let mut corrected = Trajectory::with_capacity(n + 1);

    // Cumulative trapezoid of Phi(s)^{-1} eps(s); the correction at t is
    // Phi(t) times this running integral.
    let mut cum = [0.0f64; 2];
    let mut prev_v: Option<[f64; 2]> = None;

    for k in 0..=n {
        let t = k as f64 * h;
        let s_own = own_nominal.susceptible_robust(t);
        let i_own = own_nominal.infected_robust(t);
        let s_other = other_nominal.susceptible_robust(t);
        let i_other = other_nominal.infected_robust(t);
        let y_other = i_other / (s_other + i_other);
        let eps = [-coupling * s_own * y_other, coupling * s_own * y_other];

        let inv = mat_inv(phi.at_index(k))?;
        let v = mat_vec(&inv, &eps);
        if let Some(prev) = prev_v {
            cum[0] += 0.5 * h * (prev[0] + v[0]);
            cum[1] += 0.5 * h * (prev[1] + v[1]);
        }
        prev_v = Some(v);

        let delta = mat_vec(phi.at_index(k), &cum);
        nominal.push(t, s_own, i_own, 0.0);
        forcing.push(eps);
        corrected.push(t, s_own + delta[0], i_own + delta[1], 0.0);
    }

    Ok(CorrectionCore { nominal, forcing, corrected, horizon_warning: coupling * horizon >= 1.0 })
}

/// Applies the first-order correction on consecutive windows, re-anchoring
/// both communities' nominals at the corrected state after each window.
/// `window = horizon` reduces to a single [`alekseev_correct`] pass.
pub fn repeated_window_correct(
    cp: &CommunityParams,
    horizon: f64,
    window: f64,
    step: f64,
) -> Result<(Trajectory, Trajectory), PerturbationError> {
    if !(window > 0.0 && window <= horizon) {
        return Err(PerturbationError::BadWindow);
    }
    let mut out_a = Trajectory::default();
    let mut out_b = Trajectory::default();
    let mut a: Side = cp.a.into();
    let mut b: Side = cp.b.into();
    let mut t_cur = 0.0;
    while t_cur < horizon - 1e-12 {
        let w = window.min(horizon - t_cur);
        let core_a = correct_one(&a, &b, cp.lambda_ab, w, step)?;
        let core_b = correct_one(&b, &a, cp.lambda_ba, w, step)?;
        let skip = usize::from(!out_a.is_empty());
        for k in skip..core_a.corrected.len() {
            out_a.push(
                t_cur + core_a.corrected.times[k],
                core_a.corrected.s[k],
                core_a.corrected.i[k],
                0.0,
            );
            out_b.push(
                t_cur + core_b.corrected.times[k],
                core_b.corrected.s[k],
                core_b.corrected.i[k],
                0.0,
            );
        }
        a.s0 = *core_a.corrected.s.last().unwrap();
        a.i0 = *core_a.corrected.i.last().unwrap();
        b.s0 = *core_b.corrected.s.last().unwrap();
        b.i0 = *core_b.corrected.i.last().unwrap();
        t_cur += w;
    }
    Ok((out_a, out_b))
}
