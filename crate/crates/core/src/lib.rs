//! Dynamical-systems solvers for ill-posed equations `B(u) = f` with monotone `B`.
//!
//! The central object is the regularized Newton flow
//! `u̇ = −(B′(u) + εI)⁻¹(B(u) + εu − f)` ([`flow`]), whose residual decays like
//! `e^{−t}` regardless of the problem, stopped at `t = −2 ln ε`. Around it:
//!
//! * [`hilbert`]: vectors, matrices, problem instances, monotonicity and Taylor certificates.
//! * [`reg_linear`]: the shifted solve `(A + εI)x = b`.
//! * [`reg_root`]: regularized roots `V_ε`, the path `ε ↦ V_ε`, minimal-norm oracles.
//! * [`iterate`]: the discrete process with regularization schedules.
//! * [`lemma`]: the convergence recursion and its unrolled bound.
//! * [`corpus`]: built-in problems and the noise model.
//!
//! ```
//! use dsm_core::corpus::{build_problem, CorpusSpec, PSD_SINGULAR_LINEAR};
//! use dsm_core::flow::{solve_dsm, FlowTolerances};
//! use dsm_core::hilbert::Vector;
//!
//! let problem = build_problem(&CorpusSpec::named(PSD_SINGULAR_LINEAR)).unwrap();
//! let u0 = Vector::zeros(problem.dim());
//! let sol = solve_dsm(&problem, 1e-2, &u0, FlowTolerances::default()).unwrap();
//! let y = problem.known_solution().unwrap();
//! assert!(sol.u_final.distance(y) < 0.1);
//! assert!(sol.trajectory.decay_law_holds());
//! ```

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod corpus;
pub mod error;
pub mod flow;
pub mod hilbert;
pub mod iterate;
pub mod lemma;
pub mod ode;
pub mod reg_linear;
pub mod reg_root;

pub use error::{DsmError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/problems.md")]
    struct Problems;
    #[doc = include_str!("../../../book/src/regularized-roots.md")]
    struct RegularizedRoots;
    #[doc = include_str!("../../../book/src/flow.md")]
    struct Flow;
    #[doc = include_str!("../../../book/src/noisy-data.md")]
    struct NoisyData;
    #[doc = include_str!("../../../book/src/iteration.md")]
    struct Iteration;
    #[doc = include_str!("../../../book/src/recursion-lemma.md")]
    struct RecursionLemma;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
