//! Planning toolkit for low-altitude aerial networks.
//!
//! Two studies share one channel model: placing UAVs served by a multi-beam
//! base station to maximize sum rate, and choosing where to split, how much to
//! prune, and how to set transmit power and clock frequency when running a
//! large model jointly on an aerial agent and the cloud.
//!
//! * [`channel`]: LoS path loss, beam patterns, Shannon rates.
//! * [`coverage_map`]: gridded per-beam RSRP maps (CSV I/O, synthesis, SINR).
//! * [`placement`]: LoS-model SCA benchmark, map-driven search, LLM-guided and
//!   brute-force placement, all scored by one evaluator.
//! * [`coinference`]: quality/delay/energy models and the constrained planner.
//! * [`pipeline`]: offline-to-online closed-loop scenario runner.
//! * [`llm_gateway`]: chat-completion client and scripted mock.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod coinference;
pub mod coverage_map;
pub mod llm_gateway;
pub mod optim;
pub mod pipeline;
pub mod placement;
