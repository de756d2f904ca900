//! Policy-based image translation for sim-to-sim navigation transfer: a
//! two-domain navigation simulator, a decomposed recurrent navigation
//! policy, an unpaired image translator trained against the frozen policy
//! features, and the evaluation harness around them.

pub mod adapt;
pub mod eval;
pub mod losses;
pub mod navenv;
pub mod nn;
pub mod parallel;
pub mod policy;
pub mod translation;
