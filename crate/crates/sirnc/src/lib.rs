//! Numerical toolkit for the non-conserving SIR epidemic model (SIR-NC).
//!
//! In the SIR-NC model, removed individuals (recovered, quarantined, or dead)
//! leave the mixing pool entirely, so pairwise meetings are normalized by
//! `N(t) = S(t) + I(t)` instead of a conserved total population. That single
//! change makes the model exactly solvable.
//!
//! The crate is organized around that solvability:
//!
//! - [`core`]: shared domain types — rate parameters, initial states,
//!   time-varying rate schedules, sampled trajectories.
//! - [`closedform`]: exact solutions for constant and time-varying rates,
//!   peak time/size formulas, imported infections, and the classic-SIR
//!   reference formulas used for comparison.
//! - [`ode`]: fixed-step RK4 integrator, right-hand sides for every model
//!   variant (classic SIR, SIR-NC, imported infections, interacting
//!   communities, births/deaths), and the stochastic discrete-time scheme
//!   whose averaged limit is the SIR-NC dynamics.
//! - [`perturbation`]: first-order variation-of-constants correction for
//!   weakly coupled communities via the fundamental solution of the
//!   linearized dynamics.
//! - [`control`]: discrete-time finite-horizon optimal control — Euler
//!   dynamics, lockdown/testing cost model, forward tree search with a
//!   receding horizon, and grid-based backward dynamic programming with
//!   switching costs.
//! - [`multiobj`]: multi-objective constrained control via replicator
//!   weight adaptation over scalarized problems, and a two-timescale
//!   fast/slow community control procedure.

pub mod closedform;
pub mod control;
pub mod core;
pub mod csv;
pub mod multiobj;
pub mod ode;
pub mod perturbation;
pub mod rng;
