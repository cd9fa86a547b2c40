//! Throughput model, rate-region log-convexity witnesses, utility-fair
//! allocation and slot-level simulation for 802.11e WLANs.

pub mod cli;
pub mod config;
pub mod fairness;
pub mod format;
pub mod logconv;
pub mod model;
pub mod rateregion;
pub mod simulate;
