pub mod channel;
pub mod error;
pub mod grouping;
pub mod io;
pub mod keyrate;
pub mod privacy;
pub mod reconciliation;
pub mod recovery;
pub mod scenario;
pub mod stats;
pub mod table;
pub mod transceiver;
pub mod units;

pub use error::{Error, Result};
