//! Wire format, message taxonomy and the shared-state reducer.
//!
//! Server and clients evolve [`SessionState`] with the same pure
//! [`apply_op`], in the order fixed by the server's sequence numbers, so any
//! two replicas fed the same op stream end with the same [`state_digest`].

mod ids;
mod ops;
mod reducer;
mod state;
mod wire;

pub use self::ids::{ClientId, Role, Sender};
pub use self::ops::OpPayload;
pub use self::reducer::{apply_op, apply_op_in_place, ReducerWarning, SequenceGap};
pub use self::state::{
    state_digest, CubeState, DatasetRef, ObjectKind, ObjectState, ObjectTransform, SessionState,
    SharedObject, SnapshotState, VizMode, WallState, CUBE_ID, WALL_ID,
};
pub use self::wire::{
    decode, decode_body, encode, encode_body, Body, Envelope, ErrorCode, FrameDecoder,
    MessageKind, ProtocolError, MAX_FRAME_LEN, PROTOCOL_VERSION,
};
