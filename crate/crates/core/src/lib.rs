//! Personality-driven mobility generation and profile-based DTN forwarding.
//!
//! The crate is organised bottom-up:
//!
//! * [`trace`]: encounter and visit traces, CSV ingestion, time-series binning.
//! * [`spectrum`]: DFT of binned series, peak detection, period extraction.
//! * [`personality`]: pairwise force gains, periodic intent and the behaviour
//!   state machine that turns sensor readings into motion commands.
//! * [`mobility`]: the 2-D world (forces, kinematics, encounter detection)
//!   and plausible-mobility inference from a contact trace.
//! * [`profilecast`]: behavioural profiles, bundles and the two forwarding modes.
//! * [`harness`]: scenario config, the simulation loop, metrics and fidelity.
//!
//! Data-parallel loops (per-pair analysis, per-node fitting, DFT bins) run on
//! rayon when the `parallel` feature is enabled and fall back to plain
//! iterators otherwise; see [`exec`].

pub mod exec;
pub mod harness;
pub mod mobility;
pub mod personality;
pub mod profilecast;
pub mod rng;
pub mod spectrum;
pub mod trace;

pub use exec::Execution;
pub use trace::NodeId;
