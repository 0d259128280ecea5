//! Core of the EasyRL workbench: numerics, environments, replay, agents,
//! the session engine, model persistence and the out-of-process plugin host.

pub mod agents;
pub mod engine;
pub mod envkit;
pub mod modelstore;
pub mod numerics;
pub mod plugin;
pub mod replay;
