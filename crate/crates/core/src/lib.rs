//! Monte Carlo simulator for grant-based random access in crowded XL-MIMO
//! cells: SUCRe-XL and the NOMA-assisted NVR-XL protocol.
//!
//! - [`scenario`]: array geometry, user drop, large-scale fading, visibility regions.
//! - [`protocol`]: the per-RA-block state machines.
//! - [`metrics`]: access attempts, failed access, accepted users, sum rate.
//! - [`engine`]: trials, sweeps and the bias-scale search.
//! - [`cli`]: the `xlra` command line and CSV output.

pub mod cli;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod protocol;
pub mod scenario;

pub use engine::{Runner, SweepSpec, TrialConfig};
pub use error::ConfigError;
pub use protocol::Protocol;
