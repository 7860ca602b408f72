//! Orchestration engine for an embodied conversational agent: turn pipeline,
//! state machine, prompt construction, animation scheduling, transcript
//! persistence, latency metrics and a scenario evaluation harness.

pub mod adapters;
pub mod animation;
pub mod config;
pub mod fsm;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod persistence;
pub mod pipeline;
pub mod prompt;
