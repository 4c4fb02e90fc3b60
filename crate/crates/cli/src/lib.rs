//! Command-line tool and HTTP service for the artwork question answering
//! pipeline.

pub mod cli;
pub mod config;
pub mod error;
pub mod runner;
pub mod service;
