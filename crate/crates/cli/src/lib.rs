//! Run persistence, the batch driver and the HTTP service around
//! [`ikemo_core::Session`].

pub mod api;
pub mod commands;
pub mod driver;
pub mod output;

pub use api::{router, AppState};
pub use driver::Driver;
pub use output::{load_records, RunDir, RunFile};
