//! Coded caching for combination networks.
//!
//! The crate builds the `(H, r)` combination network, places file content in
//! user caches according to one of three schemes (uncoded routing, the
//! symmetric per-relay MDS baseline, and the asymmetric placement over
//! relay-sharing user sets), delivers XOR multicast messages through the
//! relays with real bytes, decodes every user's request and measures the
//! per-link loads. The `analysis` module holds the closed forms the simulator
//! is checked against.

pub mod gfmds;
pub mod topology;
pub mod analysis;
pub mod schemes;
pub mod cli;
