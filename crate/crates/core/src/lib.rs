//! Agent desktop runtime: an RFB client and deterministic mock desktop, a
//! unified action language with gated host execution, screen recording and
//! trajectory bundles, task harness, grounding metrics, and a tool library.

pub mod action;
pub mod clock;
pub mod ids;
pub mod rfb;
pub mod tools;
pub mod feedback;
pub mod recorder;
pub mod grounding;
pub mod harness;
pub mod session;
