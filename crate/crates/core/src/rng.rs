//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha8 stream, keyed by
//! the experiment's master seed and a 64-bit stream id. The id packs the
//! owner (global scope or a client slot) and the purpose:
//!
//! ```text
//! stream_id = owner_slot << 8 | purpose
//! owner_slot = 0 for global streams, client_id + 1 for client streams
//! ```
//!
//! Adding clients therefore never perturbs the randomness of existing ones,
//! and two purposes of the same client never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
#[repr(u8)]
pub enum Purpose {
    Dataset = 1,
    Partition = 2,
    BodyInit = 3,
    DecisionInit = 4,
    RelationInit = 5,
    LocalShuffle = 6,
    RelationShuffle = 7,
    ServerInit = 8,
}

impl Purpose {
    pub const ALL: [Purpose; 8] = [
        Purpose::Dataset,
        Purpose::Partition,
        Purpose::BodyInit,
        Purpose::DecisionInit,
        Purpose::RelationInit,
        Purpose::LocalShuffle,
        Purpose::RelationShuffle,
        Purpose::ServerInit,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Owner {
    Global,
    Client(usize),
}

pub fn stream_id(owner: Owner, purpose: Purpose) -> u64 {
    let slot = match owner {
        Owner::Global => 0,
        Owner::Client(id) => id as u64 + 1,
    };
    (slot << 8) | purpose as u64
}

pub fn stream(seed: u64, owner: Owner, purpose: Purpose) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(owner, purpose));
    rng
}
