//! Static detection of missing address verification in EVM contracts.
//!
//! The pipeline is: decode and split bytecode ([`bytecode`]), recover blocks
//! and public functions ([`cfg`]), run prioritized taint-tracking symbolic
//! execution ([`sim`]), apply the three-phase vulnerability check
//! ([`detector`]) and render results ([`report`]). [`watcher`] runs the same
//! pipeline over newly deployed contracts on a live chain.

pub mod asm;
pub mod bytecode;
pub mod word;
pub mod cfg;
pub mod sim;
pub mod detector;
pub mod report;
pub mod watcher;
