//! Backend for expert review of automatic labels: serves audio, spectrogram
//! tiles and label tracks, records edits and reports how much was changed.

pub mod api;
pub mod error;
pub mod session;
pub mod store;

pub use api::{router, serve, AppState};
pub use error::{ReviewError, ReviewResult};
pub use session::{Edit, EditRecord, ReviewSession};
pub use store::Store;

/// Value of the `v` field in every payload.
pub const API_VERSION: u32 = 1;
