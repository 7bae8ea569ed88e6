//! Replication schemes for the inter-node synchronize step: which components
//! are exchanged, how they are encoded and what they cost on the wire.

mod config;
mod update;
pub mod wire;

pub use config::{Compression, ReplicatorConfig, Scheme, TransferDtype, DEFAULT_CHUNK_SIZE};
pub use update::{
    decode_and_merge, quantize, select_and_encode, wire_bytes, CompressedUpdate, Payload,
    Replicator, INDEX_BITS,
};
