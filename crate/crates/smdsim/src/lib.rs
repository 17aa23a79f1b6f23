//! Cycle-accurate simulator for a DDR4-like memory subsystem whose chips
//! perform their own maintenance (refresh, RowHammer protection, ECC
//! scrubbing) behind a lock-region protocol, with built-in auditors that
//! check the protocol's guarantees against the emitted command stream.

pub mod chip;
pub mod cli;
pub mod dram;
pub mod maintenance;
pub mod memctrl;
pub mod sim;
pub mod workload;
