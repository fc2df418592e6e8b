//! posedeck — a desk-scale testbed for the distributed core of a multi-user
//! free-roam VR platform: skeleton pose compression, client-server pose
//! relay over a simulated network, absolute/relative pose fusion, and
//! synchronized experience state management.
//!
//! The crate is organized around the data path of such a platform:
//!
//! * [`model`] — poses, rotations, timestamps, skeleton frames.
//! * [`codec`] — noticeable-change delta compression with reduced-resolution
//!   rotations, and its exact wire format.
//! * [`trace`] — synthetic movement traces, trace files, and playback.
//! * [`netsim`] — a deterministic discrete-event network simulation with
//!   latency, jitter, bandwidth caps and tail-drop queues.
//! * [`sync`] — the client-server relay session: tick-driven sending,
//!   per-recipient re-encoding, player management.
//! * [`state_machine`] — named experience states with admin advancement,
//!   vote-driven branching, late-join sync and reset.
//! * [`fusion`] — dead reckoning of a high-rate relative stream corrected by
//!   a low-rate absolute stream, plus tracking-quality metrics.
//! * [`harness`] — the experiment runner: sweeps client counts, send
//!   intervals and compression, measures pose latency and serialized bytes,
//!   and writes deterministic CSV reports.
//!
//! Every component is seeded and single-threaded by contract: identical
//! configs and seeds produce byte-identical reports. See the `examples/`
//! directory for one runnable example per capability, and `docs/formats.md`
//! for the wire and file formats.

pub mod codec;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod model;
pub mod netsim;
pub mod state_machine;
pub mod sync;
pub mod trace;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
