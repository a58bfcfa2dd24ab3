//! Command-line tool and HTTP service around [`tracemem_core::Engine`].

pub mod cli;
pub mod server;
pub mod settings;
