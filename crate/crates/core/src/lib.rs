//! Reconfigurable atomic commit for sharded, replicated transaction
//! certification.
//!
//! The crate provides the certification algebra, a configuration service,
//! two protocol state machines (message passing and RDMA), a deterministic
//! simulator to run them under crashes and reconfigurations, and checkers
//! that validate the resulting traces.

pub mod certification;
pub mod checkers;
pub mod config_service;
pub mod ids;
pub mod message;
pub mod process;
pub mod protocol_mp;
pub mod protocol_rdma;
pub mod rdma_channel;
pub mod simulator;

pub use certification::{Certifier, Decision, Payload, Serializability, ShardMap};
pub use config_service::{ConfigService, GlobalConfig, ShardConfig};
pub use ids::{ClientId, Epoch, NodeId, ObjectId, Pid, ShardId, Slot, TxnId, Version};
pub use message::{Log, LogEntry, Message, Phase};
pub use process::{Effect, Handled, Status};
