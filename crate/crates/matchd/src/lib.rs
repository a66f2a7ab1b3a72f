//! File formats, command-line driver and HTTP service around
//! `talentmatch-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod formats;
pub mod index_file;
pub mod service;
