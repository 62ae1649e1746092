//! Meta-learning of model initializations through gradient-flow ODEs.
//!
//! The inner training loop of each task is the ODE `du/dt = −∇L(u; D_tr)`
//! started at the shared initialization θ. The gradient of the validation
//! loss at `u(T)` with respect to θ is the terminal state `λ(0)` of an
//! adjoint ODE solved backward over the stored forward trajectory, using
//! only Hessian-vector products. Discrete baselines (unrolled MAML, FOMAML,
//! Reptile, iMAML), task families, data loaders and evaluation live
//! alongside.

pub mod autodiff;
pub mod error;
pub mod meta;
pub mod metrics;
pub mod model;
pub mod odesolve;
pub mod rng;
pub mod tasks;

pub use autodiff::{grad, hvp, ParamVector, Scalar, ScalarField};
pub use error::{Error, Result};
pub use meta::{Algorithm, MetaConfig, Task, TaskGradient};

pub use model::{Dataset, Learner, MlpSpec};
pub use odesolve::{Method, SolverConfig, TrajectoryGrid};
