//! Frames on the wire: a 4-byte big-endian length, then the canonical JSON
//! encoding of one [`WireMessage`].

use std::borrow::Borrow;

use bytes::{Bytes, BytesMut};
use gridmarket_core::consensus::WireMessage;
use gridmarket_core::identity::{from_canonical, to_canonical};
use tokio_util::codec::{Decoder, Encoder, LengthDelimitedCodec};

/// Largest accepted frame. A block of a full mempool fits easily.
pub const MAX_FRAME_BYTES: usize = 16 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("undecodable frame: {0}")]
    Malformed(String),
}

#[derive(Debug)]
pub struct WireCodec {
    frames: LengthDelimitedCodec,
}

impl Default for WireCodec {
    fn default() -> Self {
        Self {
            frames: LengthDelimitedCodec::builder().max_frame_length(MAX_FRAME_BYTES).new_codec(),
        }
    }
}

impl Decoder for WireCodec {
    type Item = WireMessage;
    type Error = CodecError;

    fn decode(&mut self, src: &mut BytesMut) -> Result<Option<WireMessage>, CodecError> {
        let Some(frame) = self.frames.decode(src)? else {
            return Ok(None);
        };
        from_canonical(&frame).map(Some).map_err(|e| CodecError::Malformed(e.to_string()))
    }
}

/// Accepts owned, borrowed or shared messages.
impl<M: Borrow<WireMessage>> Encoder<M> for WireCodec {
    type Error = CodecError;

    fn encode(&mut self, msg: M, dst: &mut BytesMut) -> Result<(), CodecError> {
        let body = to_canonical(msg.borrow()).map_err(|e| CodecError::Malformed(e.to_string()))?;
        self.frames.encode(Bytes::from(body), dst)?;
        Ok(())
    }
}
