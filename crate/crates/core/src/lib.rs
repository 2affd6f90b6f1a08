//! Periodic dividends with continuous capital injection for a surplus driven by a
//! Markov-modulated Lévy process.
//!
//! The surplus `X` evolves as a drift + diffusion + compound-Poisson process whose
//! parameters switch with a finite continuous-time Markov chain `Y`. Dividends may
//! only be paid at renewal epochs `T_1 < T_2 < ...` with i.i.d. interarrival times,
//! capital may be injected at any time and costs `beta` per unit.
//!
//! Layout:
//!
//! * [`model`]: model and dividend-clock definitions, validation, one-epoch quantities.
//! * [`sampling`]: exact-event simulation of inter-epoch segments and the running-minimum
//!   functionals computed from them.
//! * [`solver`]: grid value iteration for the value function and the optimal barrier band.
//! * [`barriers`]: Monte-Carlo hitting-time functionals used to verify a barrier.
//! * [`strategy`]: controlled-process simulation and NPV estimation.

pub mod barriers;
pub mod error;
pub mod isotonic;
pub mod model;
pub mod presets;
pub mod rng;
pub mod sampling;
pub mod solver;
pub mod stats;
pub mod strategy;

pub use error::{Error, Result};
pub use model::{DividendClock, JumpLaw, ModelSpec, Regime, ValidationReport};
