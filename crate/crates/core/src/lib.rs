//! Decentralized coded caching for wireless ad hoc networks.
//!
//! Nodes cache random GF(2) combinations of `m` equal-size contents. A
//! requester retrieves content either by walking the network in one
//! direction (reactive) or by gathering from its local group through anchor
//! relays (proactive), and removes everything but the requested content
//! with a key built from its own cache.
//!
//! Modules, bottom-up:
//! - [`gf2`]: packed vectors and matrices, rank, solving.
//! - [`coding`]: contents, encoding, last-hop keys, scrambling, cache update.
//! - [`placement`]: coded and uncoded cache placement.
//! - [`netsim`]: unit-square topology and the two retrieval protocols.
//! - [`analysis`]: closed-form expectations and probabilities.
//! - [`experiments`]: Monte Carlo harness and CSV output.

pub mod analysis;
pub mod coding;
pub mod csvout;
pub mod error;
pub mod experiments;
pub mod gf2;
pub mod manifest;
pub mod netsim;
pub mod placement;
pub mod seeds;

pub use error::{Error, Result};
