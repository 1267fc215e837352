//! Detection of binding events in nanowire conductance traces and
//! identification of agents across multiplexed sensor arrays.
//!
//! Modules follow the processing chain: [`sim`] renders ground-truth traces,
//! [`conditioning`] detrends and whitens them, [`matched_filter`] and
//! [`threshold`] detect events on single wires, [`hsmm`] learns and decodes
//! docking intervals from partial labels, [`bayes`] fuses per-modifier
//! outcomes into a posterior over agents, and [`xcorr`] studies and removes
//! noise shared between wires. [`io`] and [`pipeline`] provide the file
//! formats and the batch pipeline used by the CLI.

pub mod bayes;
pub mod conditioning;
mod error;
pub mod hsmm;
pub mod io;
pub mod matched_filter;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod sim;
mod spectral;
pub mod threshold;
pub mod trace;
pub mod xcorr;

pub use error::{Error, Result};
pub use trace::{DetectionEvent, EventTag, Trace};
