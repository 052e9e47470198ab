//! Topic-based global data space with dynamic participant discovery.

mod replica;
mod space;
mod value;
pub mod wire;

pub use replica::ReplicaStore;
pub use space::{
    resolve_topic, validate_topic, BusError, GlobalDataSpace, ParticipantId, ParticipantRecord,
    PublishRecord, RoleViolation, Sample, TopicError, ANNOUNCE_PERIOD, LIVELINESS_PERIODS,
};
pub use value::Value;
