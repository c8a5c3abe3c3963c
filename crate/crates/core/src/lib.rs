//! Concurrency control for intermittently connected mobile clients.
//!
//! The crate has four layers:
//!
//! - [`model`] and [`opcot`]: operator logs with relative timestamps, server
//!   rebasing, and commit validation against per-item read/write instants.
//! - [`baselines`]: strict two-phase locking and backward-validating OCC.
//! - [`sim`]: a seeded discrete-event simulator driving any of the three.
//! - [`oracle`] and [`harness`]: serializability checks, metrics, and the
//!   experiment matrix behind the `ccarena` binary.
//!
//! ```
//! use ccarena::model::{ItemId, OperationKind, TxnId};
//! use ccarena::opcot::{rebase_to_server_time, ClientSession};
//!
//! let mut s = ClientSession::begin(TxnId(1), 1_000);
//! s.record(OperationKind::Read(ItemId(7)), 1_040).unwrap();
//! let log = s.finish(1_100).unwrap();
//! let abs = rebase_to_server_time(&log, 5_000).unwrap();
//! let instants: Vec<_> = abs.records.iter().map(|r| r.abs_ts).collect();
//! assert_eq!(instants, [4_900, 4_940, 5_000]);
//! ```

pub mod baselines;
pub mod error;
pub mod harness;
pub mod model;
pub mod opcot;
pub mod oracle;
pub mod sim;

pub use error::{ConfigError, ParseError, ProtocolError};
pub use model::{History, ItemId, Millis, OperationKind, OperatorLog, Outcome, TxnId};
pub use sim::{run_simulation, ProtocolKind, SimConfig};
