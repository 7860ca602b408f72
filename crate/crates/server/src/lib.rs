//! HTTP front end and CLI support for the twinflow session engine.

pub mod backends;
pub mod feed;
pub mod service;
pub mod settings;
