//! Session server, headless simulator and CLI plumbing for multi-chatbot
//! chat experiments.

pub mod config;
pub mod http;
pub mod hub;
pub mod simulate;
pub mod wire;
