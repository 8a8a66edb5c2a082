//! Wire protocol for the master/worker transport.
//!
//! Frames are `u32` big-endian length, one type byte, then the payload.
//! Every payload is JSON except `Params`, whose bulk is raw f32 bytes:
//! parameter vectors are the one thing that must not pay JSON overhead.
//! Candidates never cross the wire at all; an assignment names noise
//! offsets and a hash of the center parameters, and workers pull the
//! center vector once per iteration.

use crate::error::{Error, Result};
use crate::noise::NoiseIndex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};

pub const PROTOCOL_VERSION: u32 = 1;

/// Upper bound on a frame body. Big enough for multi-million parameter
/// vectors, small enough to reject garbage lengths from a bad peer.
pub const MAX_FRAME: u32 = 256 * 1024 * 1024;

/// Hex SHA-256 over the little-endian bytes of a parameter vector; the
/// "checkpoint reference" used to validate cached center parameters.
pub fn params_hash(values: &[f32]) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Identity of a noise table plus the parameter dimension. Mismatches
/// are refused at handshake: a worker with the wrong table would score
/// the wrong candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableIdentity {
    pub table_seed: u64,
    pub table_len: u64,
    pub dim: u64,
}

/// Everything a worker needs to participate in a run. The evaluator
/// description is opaque JSON here; the caller supplies a factory that
/// interprets it, keeping the transport independent of environments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSetup {
    pub run_id: String,
    pub table: TableIdentity,
    pub run_seed: u64,
    pub evaluator: serde_json::Value,
}

/// A chunk of one iteration's population for one worker. `slots` and
/// `indices` are parallel arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireAssignment {
    pub run_id: String,
    pub iteration: u64,
    pub sigma: f32,
    pub slots: Vec<u64>,
    pub indices: Vec<NoiseIndex>,
    /// Hash of the center parameters this assignment must be scored
    /// against.
    pub params_hash: String,
}

/// Scores for one assignment. `notes` carries human-readable error
/// descriptions for slots that were folded into the sentinel score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireReport {
    pub run_id: String,
    pub iteration: u64,
    pub worker: u64,
    pub scores: Vec<super::SlotScore>,
    pub wall_seconds: f64,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Message {
    /// Worker greeting. `table` is set when the worker already holds a
    /// generated table from a previous setup, letting the master refuse
    /// incompatible reuse instead of silently mis-scoring.
    Hello { protocol: u32, table: Option<TableIdentity> },
    Setup(RunSetup),
    /// Worker finished building its table and evaluator.
    Ready,
    Refuse { reason: String },
    Assign(WireAssignment),
    /// Ask for the center parameters of an iteration.
    ParamsRequest { iteration: u64 },
    /// Center parameters; the only binary-payload message.
    Params { iteration: u64, values: Vec<f32> },
    /// Ask the worker to score the unperturbed center.
    CenterRequest { iteration: u64, params_hash: String },
    CenterReport { iteration: u64, score: f64, frames: u64 },
    Report(WireReport),
    Shutdown,
}

const T_HELLO: u8 = 1;
const T_SETUP: u8 = 2;
const T_READY: u8 = 3;
const T_REFUSE: u8 = 4;
const T_ASSIGN: u8 = 5;
const T_PARAMS_REQUEST: u8 = 6;
const T_PARAMS: u8 = 7;
const T_CENTER_REQUEST: u8 = 8;
const T_CENTER_REPORT: u8 = 9;
const T_REPORT: u8 = 10;
const T_SHUTDOWN: u8 = 11;

/// Encodes a full frame: length prefix, type byte, payload.
pub fn encode_message(msg: &Message) -> Result<Vec<u8>> {
    let (ty, payload): (u8, Vec<u8>) = match msg {
        Message::Hello { .. } => (T_HELLO, serde_json::to_vec(msg)?),
        Message::Setup(_) => (T_SETUP, serde_json::to_vec(msg)?),
        Message::Ready => (T_READY, Vec::new()),
        Message::Refuse { .. } => (T_REFUSE, serde_json::to_vec(msg)?),
        Message::Assign(_) => (T_ASSIGN, serde_json::to_vec(msg)?),
        Message::ParamsRequest { .. } => (T_PARAMS_REQUEST, serde_json::to_vec(msg)?),
        Message::Params { iteration, values } => {
            let mut buf = Vec::with_capacity(16 + 4 * values.len());
            buf.extend_from_slice(&iteration.to_le_bytes());
            buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            (T_PARAMS, buf)
        }
        Message::CenterRequest { .. } => (T_CENTER_REQUEST, serde_json::to_vec(msg)?),
        Message::CenterReport { .. } => (T_CENTER_REPORT, serde_json::to_vec(msg)?),
        Message::Report(_) => (T_REPORT, serde_json::to_vec(msg)?),
        Message::Shutdown => (T_SHUTDOWN, Vec::new()),
    };
    let body_len = 1 + payload.len();
    if body_len as u64 > MAX_FRAME as u64 {
        return Err(Error::decode(format!("frame of {body_len} bytes exceeds limit")));
    }
    let mut frame = Vec::with_capacity(4 + body_len);
    frame.extend_from_slice(&(body_len as u32).to_be_bytes());
    frame.push(ty);
    frame.extend_from_slice(&payload);
    Ok(frame)
}

/// Decodes a frame body (type byte plus payload, no length prefix).
pub fn decode_message(body: &[u8]) -> Result<Message> {
    let (&ty, payload) = body
        .split_first()
        .ok_or_else(|| Error::decode("empty frame body"))?;
    let msg = match ty {
        T_HELLO | T_SETUP | T_REFUSE | T_ASSIGN | T_PARAMS_REQUEST | T_CENTER_REQUEST
        | T_CENTER_REPORT | T_REPORT => serde_json::from_slice(payload)?,
        T_READY => Message::Ready,
        T_SHUTDOWN => Message::Shutdown,
        T_PARAMS => {
            if payload.len() < 16 {
                return Err(Error::decode("params payload shorter than its header"));
            }
            let iteration = u64::from_le_bytes(payload[0..8].try_into().unwrap());
            let count = u64::from_le_bytes(payload[8..16].try_into().unwrap()) as usize;
            let data = &payload[16..];
            if data.len() != count * 4 {
                return Err(Error::decode(format!(
                    "params payload holds {} bytes for {count} values",
                    data.len()
                )));
            }
            let values = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Message::Params { iteration, values }
        }
        other => return Err(Error::decode(format!("unknown message type {other}"))),
    };
    // JSON payloads embed the variant tag; reject a body whose type
    // byte disagrees with it.
    let expected = match &msg {
        Message::Hello { .. } => T_HELLO,
        Message::Setup(_) => T_SETUP,
        Message::Ready => T_READY,
        Message::Refuse { .. } => T_REFUSE,
        Message::Assign(_) => T_ASSIGN,
        Message::ParamsRequest { .. } => T_PARAMS_REQUEST,
        Message::Params { .. } => T_PARAMS,
        Message::CenterRequest { .. } => T_CENTER_REQUEST,
        Message::CenterReport { .. } => T_CENTER_REPORT,
        Message::Report(_) => T_REPORT,
        Message::Shutdown => T_SHUTDOWN,
    };
    if expected != ty {
        return Err(Error::decode("frame type byte disagrees with payload"));
    }
    Ok(msg)
}

pub fn write_message<W: Write>(writer: &mut W, msg: &Message) -> Result<()> {
    let frame = encode_message(msg)?;
    writer.write_all(&frame)?;
    writer.flush()?;
    Ok(())
}

pub fn read_message<R: Read>(reader: &mut R) -> Result<Message> {
    let mut len_bytes = [0u8; 4];
    reader.read_exact(&mut len_bytes)?;
    let len = u32::from_be_bytes(len_bytes);
    if len == 0 || len > MAX_FRAME {
        return Err(Error::decode(format!("invalid frame length {len}")));
    }
    let mut body = vec![0u8; len as usize];
    reader.read_exact(&mut body)?;
    decode_message(&body)
}
