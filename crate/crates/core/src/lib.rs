//! A verification lab for contractive stochastic approximation driven by
//! Markov chain noise.
//!
//! The iteration under study is
//!
//! ```text
//! w_{t+1} = w_t + alpha_t * (H(w_t, Y_{t+1}) - w_t)
//! ```
//!
//! where `{Y_t}` is a finite ergodic Markov chain and the averaged map
//! `h(w) = E_{Y ~ stationary}[H(w, Y)]` is a contraction. The crate provides:
//!
//! * [`chain`]: finite kernels, stationary distributions, mixing profiles;
//! * [`mdp`]: tabular MDPs, Bellman operators, exact solvers, and the induced
//!   state-action-state noise chain;
//! * [`schedule`]: the two supported step-size families and the anchor
//!   sequence that partitions a run into intervals of roughly equal
//!   cumulative step size;
//! * [`engine`]: the simulation loop, the Q-learning and off-policy TD update
//!   maps, and interval-level noise logging;
//! * [`lyapunov`]: the Moreau-envelope smoothing of the contraction norm and
//!   its sanity checks;
//! * [`diagnostics`]: the three-way interval noise decomposition and the
//!   inequality checks built on it;
//! * [`analysis`]: trajectory rate fits, ensemble concentration summaries,
//!   and moment curves;
//! * [`config`] / [`runner`]: the JSON-configured experiment front end used
//!   by the `salab` binary.
//!
//! # Randomness
//!
//! All sampling uses ChaCha8 (`rand_chacha::ChaCha8Rng`), a counter-based
//! generator: runs are reproducible bit-for-bit from `(master_seed,
//! seed_index)`, and ensemble members are split by stream id without
//! overlapping (see [`rng`]).

pub mod analysis;
pub mod chain;
pub mod config;
pub mod diagnostics;
pub mod engine;
pub mod lyapunov;
pub mod mdp;
pub mod norm;
pub mod rng;
pub mod runner;
pub mod schedule;
