//! Core library for `ctrlsim`: a deterministic packet-level co-simulator for
//! wide-area control over LPWA radio links.
//!
//! The crate couples three things into one discrete-event loop:
//!
//! * a LoRa-like physical layer (time on air, per-channel duty cycles,
//!   collision-based delivery, optional capture effect),
//! * MAC protocols: Ctrl-MAC (request slots, RRM grants, FTR retransmission
//!   scheduling, scheduled data slots, periodic actuation downlink) and two
//!   LoRaWAN baselines (pure-ALOHA unconfirmed, confirmed-with-retries),
//! * linear water-tank plants under decentralized periodic event-triggered
//!   control (DPETC).
//!
//! Alongside the simulator live two pure analysis toolkits:
//!
//! * [`queueing`] — closed-form delay bounds for the Ctrl-MAC request and
//!   data stages plus the two co-design constraint checkers,
//! * [`stability`] — Lyapunov certificate construction, verification and
//!   search for the delayed DPETC loop.
//!
//! Everything is deterministic given a scenario and a seed; seed sweeps can
//! run in parallel because runs share no mutable state.

// Validation code uses `!(x > 0.0)`-style comparisons on purpose: they
// treat NaN as invalid input rather than letting it slip through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ctrlmac;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod lorawan;
pub mod metrics;
pub mod phy;
pub mod plant;
pub mod queueing;
pub mod scenario;
pub mod sim;
pub mod stability;
pub mod study;

pub use error::Error;
