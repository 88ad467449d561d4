//! Versioned graph storage, snapshot tracking and a protocol-driven
//! dataflow runtime, run on a deterministic cluster simulator.

pub mod dataflow;
pub mod models;
pub mod replica;
pub mod schema;
pub mod sim;
pub mod store;
pub mod stream;
pub mod tracker;
pub mod types;
pub mod view;

pub use schema::{SchemaError, SchemaRegistry, SchemaTag};
pub use store::{DataKey, EntityId, SnapshotHandle, VersionedStore};
pub use stream::{replay, IngestError, IngestNode, Mutation, Replayed, StreamOp, StreamRecord};
pub use tracker::TrackerError;
pub use types::{stable_hash, EpochId, MachineId, Value, ValueKind, Version};
