//! Chain dumps: blocks from genesis upward, each framed as a 4-byte
//! big-endian length followed by the block's canonical encoding.

use std::fmt;
use std::path::Path;

use poi_core::consensus::Block;
use poi_core::{Decode, DecodeError, Encode};

pub fn encode_chain(blocks: &[Block]) -> Vec<u8> {
    let mut out = Vec::new();
    for b in blocks {
        let bytes = b.to_bytes();
        out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
        out.extend_from_slice(&bytes);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainFileError {
    /// The framing itself is broken at byte `offset`.
    Framing { offset: usize, reason: &'static str },
    /// Frame `index` (the block at that height) does not decode.
    Block { index: u64, offset: usize, error: DecodeError },
}

impl fmt::Display for ChainFileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainFileError::Framing { offset, reason } => write!(f, "framing error at byte {offset}: {reason}"),
            ChainFileError::Block { index, offset, error } => {
                write!(f, "block at height {index} (frame at byte {offset}) does not decode: {error}")
            }
        }
    }
}

impl std::error::Error for ChainFileError {}

pub fn decode_chain(bytes: &[u8]) -> Result<Vec<Block>, ChainFileError> {
    if bytes.is_empty() {
        return Err(ChainFileError::Framing { offset: 0, reason: "empty file" });
    }
    let mut blocks = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let frame = pos;
        let Some(len) = bytes.get(pos..pos + 4) else {
            return Err(ChainFileError::Framing { offset: frame, reason: "truncated length prefix" });
        };
        let len = u32::from_be_bytes(len.try_into().expect("4 bytes")) as usize;
        pos += 4;
        let Some(body) = bytes.get(pos..pos.saturating_add(len)) else {
            return Err(ChainFileError::Framing { offset: frame, reason: "frame extends past end of file" });
        };
        let block = Block::from_bytes(body).map_err(|error| ChainFileError::Block {
            index: blocks.len() as u64,
            offset: frame,
            error,
        })?;
        blocks.push(block);
        pos += len;
    }
    Ok(blocks)
}

pub fn write_chain(path: &Path, blocks: &[Block]) -> std::io::Result<()> {
    std::fs::write(path, encode_chain(blocks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use poi_core::consensus::ElectionMode;
    use poi_core::sim::{run_scenario, SimParams};

    fn sample() -> Vec<Block> {
        let out = run_scenario(SimParams::new(2, 2, 0, ElectionMode::RoundRobin, 3)).unwrap();
        out.reference_chain().blocks().to_vec()
    }

    #[test]
    fn round_trip() {
        let blocks = sample();
        assert_eq!(decode_chain(&encode_chain(&blocks)).unwrap(), blocks);
    }

    #[test]
    fn framing_errors_carry_offsets() {
        assert_eq!(decode_chain(&[]), Err(ChainFileError::Framing { offset: 0, reason: "empty file" }));
        let bytes = encode_chain(&sample());
        let first = 4 + u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        match decode_chain(&bytes[..first + 2]) {
            Err(ChainFileError::Framing { offset, reason }) => {
                assert_eq!(offset, first);
                assert_eq!(reason, "truncated length prefix");
            }
            other => panic!("{other:?}"),
        }
        match decode_chain(&bytes[..first + 10]) {
            Err(ChainFileError::Framing { offset, .. }) => assert_eq!(offset, first),
            other => panic!("{other:?}"),
        }
    }
}
