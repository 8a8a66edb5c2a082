//! Binary checkpoints: training state (parameters, counters,
//! optimizer) plus frozen normalization statistics.
//!
//! Layout, all integers little-endian:
//! magic `ESCP`, format version u32, dim u64, iteration u64,
//! frames u64, then tagged sections: tag u8, payload length u64,
//! payload. Tag 1 holds the parameters (dim f32 values), tag 2 the
//! optimizer state, tag 3 the reference statistics. Sections are
//! written in tag order so equal checkpoints encode to equal bytes.
//!
//! A checkpoint is referred to elsewhere by the hex digest of its
//! parameter bytes, the same digest the wire protocol uses.

use crate::distrib::params_hash;
use crate::error::{Error, Result};
use crate::optimizer::OptimizerState;
use crate::policy::{NormStats, ReferenceStats};
use crate::run::EsState;
use crate::vector::ParamVector;
use std::path::Path;

const MAGIC: &[u8; 4] = b"ESCP";
pub const FORMAT_VERSION: u32 = 1;

const SEC_PARAMS: u8 = 1;
const SEC_OPTIMIZER: u8 = 2;
const SEC_REFERENCE: u8 = 3;

const OPT_ADAM: u8 = 1;
const OPT_MOMENTUM: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: EsState,
    pub stats: ReferenceStats,
}

impl Checkpoint {
    pub fn new(state: EsState, stats: ReferenceStats) -> Self {
        Checkpoint { state, stats }
    }

    /// Hex digest of the parameter bytes; matches the hash workers use
    /// to validate pulled parameters.
    pub fn reference(&self) -> String {
        params_hash(self.state.params.as_slice())
    }

    pub fn encode(&self) -> Vec<u8> {
        let params = self.state.params.as_slice();
        let mut out = Vec::with_capacity(4 + 4 + 24 + 13 + params.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.state.iteration.to_le_bytes());
        out.extend_from_slice(&self.state.frames.to_le_bytes());

        let mut payload: Vec<u8> = Vec::with_capacity(params.len() * 4);
        for v in params {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        push_section(&mut out, SEC_PARAMS, &payload);

        if let Some(opt) = &self.state.optimizer {
            payload.clear();
            match opt {
                OptimizerState::Adam { step, m, v } => {
                    payload.push(OPT_ADAM);
                    payload.extend_from_slice(&step.to_le_bytes());
                    for x in m {
                        payload.extend_from_slice(&x.to_le_bytes());
                    }
                    for x in v {
                        payload.extend_from_slice(&x.to_le_bytes());
                    }
                }
                OptimizerState::Momentum { velocity } => {
                    payload.push(OPT_MOMENTUM);
                    for x in velocity {
                        payload.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
            push_section(&mut out, SEC_OPTIMIZER, &payload);
        }

        if !self.stats.layers.is_empty() {
            payload.clear();
            payload.extend_from_slice(&(self.stats.layers.len() as u64).to_le_bytes());
            for layer in &self.stats.layers {
                payload.extend_from_slice(&(layer.layer as u64).to_le_bytes());
                payload.extend_from_slice(&(layer.mean.len() as u64).to_le_bytes());
                for x in &layer.mean {
                    payload.extend_from_slice(&x.to_le_bytes());
                }
                for x in &layer.var {
                    payload.extend_from_slice(&x.to_le_bytes());
                }
            }
            push_section(&mut out, SEC_REFERENCE, &payload);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::decode("not a checkpoint: bad magic"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::decode(format!(
                "unsupported checkpoint format version {version}"
            )));
        }
        let dim = r.u64()? as usize;
        let iteration = r.u64()?;
        let frames = r.u64()?;

        let mut params: Option<ParamVector> = None;
        let mut optimizer: Option<OptimizerState> = None;
        let mut stats = ReferenceStats::empty();
        while !r.done() {
            let tag = r.take(1)?[0];
            let len = r.u64()? as usize;
            let payload = r.take(len)?;
            match tag {
                SEC_PARAMS => {
                    if len != dim * 4 {
                        return Err(Error::decode(format!(
                            "parameter section holds {len} bytes for dim {dim}"
                        )));
                    }
                    let values = f32_vec(payload);
                    params = Some(ParamVector::new(values)?);
                }
                SEC_OPTIMIZER => {
                    optimizer = Some(decode_optimizer(payload, dim)?);
                }
                SEC_REFERENCE => {
                    stats = decode_stats(payload)?;
                }
                other => {
                    return Err(Error::decode(format!("unknown checkpoint section {other}")));
                }
            }
        }
        let params =
            params.ok_or_else(|| Error::decode("checkpoint has no parameter section"))?;
        if let Some(opt) = &optimizer {
            if opt.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: opt.dim() });
            }
        }
        Ok(Checkpoint {
            state: EsState { params, iteration, frames, optimizer },
            stats,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::decode(&std::fs::read(path)?)
    }
}

fn push_section(out: &mut Vec<u8>, tag: u8, payload: &[u8]) {
    out.push(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn f32_vec(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect()
}

fn decode_optimizer(payload: &[u8], dim: usize) -> Result<OptimizerState> {
    if payload.is_empty() {
        return Err(Error::decode("empty optimizer section"));
    }
    match payload[0] {
        OPT_ADAM => {
            let want = 1 + 8 + dim * 8;
            if payload.len() != want {
                return Err(Error::decode(format!(
                    "adam section holds {} bytes, expected {want}",
                    payload.len()
                )));
            }
            let step = u64::from_le_bytes(payload[1..9].try_into().expect("8 bytes"));
            let m = f32_vec(&payload[9..9 + dim * 4]);
            let v = f32_vec(&payload[9 + dim * 4..]);
            Ok(OptimizerState::Adam { step, m, v })
        }
        OPT_MOMENTUM => {
            if payload.len() != 1 + dim * 4 {
                return Err(Error::decode("momentum section length mismatch"));
            }
            Ok(OptimizerState::Momentum { velocity: f32_vec(&payload[1..]) })
        }
        other => Err(Error::decode(format!("unknown optimizer kind {other}"))),
    }
}

fn decode_stats(payload: &[u8]) -> Result<ReferenceStats> {
    let mut r = Reader { bytes: payload, pos: 0 };
    let count = r.u64()? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let layer = r.u64()? as usize;
        let features = r.u64()? as usize;
        let mean = f32_vec(r.take(features * 4)?);
        let var = f32_vec(r.take(features * 4)?);
        layers.push(NormStats { layer, mean, var });
    }
    if !r.done() {
        return Err(Error::decode("trailing bytes in reference statistics"));
    }
    Ok(ReferenceStats { layers })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::decode("checkpoint truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
