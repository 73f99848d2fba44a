//! Vehicular network model: mobility, RSU attachment, link rates,
//! transmission latency, RSU queues and the named-content layer.

mod content;
mod link;
mod mobility;
mod queue;

pub use content::{
    chunk_content, reassemble, verify_chunk, Admission, Chunk, ContentClass, ContentDirectory, ContentEntry,
    RsuCache, SignedDirectory, BYTES_PER_MB, verify_serialized,
};
pub use link::{transmission_latency, LinkConfig, LinkRates};
pub use mobility::{attach_rsu, Kinematics, MobilityConfig, Point, RsuSite, Topology};
pub use queue::{Job, RsuQueue};

use thiserror::Error;

use crate::market::{RsuId, VehicleId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("time step must be non-negative and finite, got {0}")]
    InvalidTimeStep(f64),
    #[error("topology has no RSUs")]
    NoRsus,
    #[error("no direct rate between {rsu} and {vehicle}")]
    MissingDirectRate { rsu: RsuId, vehicle: VehicleId },
    #[error("no cooperative rate from {seller} to {buyer}")]
    MissingCoopRate { seller: VehicleId, buyer: VehicleId },
    #[error("chunk size must be positive, got {0} MB")]
    InvalidChunkSize(f64),
    #[error("chunk {index} of {name} failed hash verification")]
    ChunkTampered { name: String, index: usize },
    #[error("chunks are out of order or belong to different contents")]
    ChunkSequence,
    #[error("{0} is not in the content directory")]
    NotInDirectory(String),
    #[error("directory signature does not verify")]
    BadSignature,
    #[error("malformed directory: {0}")]
    MalformedDirectory(String),
}
