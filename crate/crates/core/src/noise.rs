//! Shared Gaussian noise table.
//!
//! All perturbations used by the search algorithms are windows into one
//! large precomputed table of standard normal values. A candidate is
//! then fully described by `(offset, sign)`, which is what lets workers
//! reconstruct perturbations from a few bytes instead of receiving
//! parameter vectors over the wire.
//!
//! The table is a pure function of `(seed, length)`. Generation runs in
//! fixed-size blocks, each from its own random stream keyed by the block
//! index, so the bytes do not depend on thread count or scheduling, and
//! a longer table is a bitwise extension of a shorter one.

use crate::error::{Error, Result};
use crate::rng::{normal_from_bits, RngStream};
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// Entries generated per independent stream.
pub const NOISE_BLOCK: usize = 1 << 16;

/// Default table length for real runs (about 200 MB of f32).
pub const DEFAULT_TABLE_LEN: usize = 50_000_000;

/// Perturbation sign. Mirrored sampling evaluates each offset once with
/// each sign; the weighted-recombination strategy only ever uses `Plus`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor(self) -> f32 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

impl Serialize for Sign {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_i8(match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        })
    }
}

impl<'de> Deserialize<'de> for Sign {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        match i8::deserialize(deserializer)? {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            other => Err(D::Error::custom(format!("sign must be 1 or -1, got {other}"))),
        }
    }
}

/// Identifies one perturbation: a window start in the table plus a sign.
/// Offsets are drawn with replacement, so two candidates in the same
/// iteration may carry the same index; candidate identity is positional.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseIndex {
    pub offset: u64,
    pub sign: Sign,
}

impl NoiseIndex {
    pub fn plus(offset: u64) -> Self {
        NoiseIndex { offset, sign: Sign::Plus }
    }

    pub fn minus(offset: u64) -> Self {
        NoiseIndex { offset, sign: Sign::Minus }
    }

    pub fn mirrored(self) -> Self {
        NoiseIndex { offset: self.offset, sign: self.sign.flipped() }
    }
}

/// The shared table. Values are f32; sums over windows are accumulated
/// in f64 by the consumers.
pub struct NoiseTable {
    seed: u64,
    values: Vec<f32>,
}

impl NoiseTable {
    /// Generates the full table. Block `b` of `NOISE_BLOCK` entries
    /// comes from stream `b` of a ChaCha8 generator seeded with `seed`,
    /// with 64 fresh bits per entry pushed through the inverse normal
    /// CDF. Blocks are filled in parallel.
    pub fn generate(seed: u64, length: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::invalid_config("noise table length must be positive"));
        }
        let mut values = vec![0.0f32; length];
        values
            .par_chunks_mut(NOISE_BLOCK)
            .enumerate()
            .for_each(|(block, chunk)| {
                let mut rng = RngStream::new(seed, block as u64);
                for v in chunk {
                    *v = normal_from_bits(rng.next_u64());
                }
            });
        Ok(NoiseTable { seed, values })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest offset from which a window of `dim` entries still fits.
    pub fn max_offset(&self, dim: usize) -> Result<u64> {
        if dim == 0 || dim > self.values.len() {
            return Err(Error::invalid_config(format!(
                "window of {dim} entries does not fit a table of length {}",
                self.values.len()
            )));
        }
        Ok((self.values.len() - dim) as u64)
    }

    /// Borrow the unsigned window starting at `offset`.
    pub fn raw_slice(&self, offset: u64, dim: usize) -> Result<&[f32]> {
        let start = usize::try_from(offset).map_err(|_| Error::NoiseOutOfRange {
            offset,
            dim,
            len: self.values.len(),
        })?;
        let end = start.checked_add(dim).filter(|&e| e <= self.values.len()).ok_or(
            Error::NoiseOutOfRange {
                offset,
                dim,
                len: self.values.len(),
            },
        )?;
        Ok(&self.values[start..end])
    }

    /// Materialize the signed window `sign * values[offset..offset+dim]`.
    /// Negation is a sign-bit flip, so the mirrored window is bitwise
    /// the negation of the raw one.
    pub fn signed_slice(&self, index: NoiseIndex, dim: usize) -> Result<Vec<f32>> {
        let raw = self.raw_slice(index.offset, dim)?;
        Ok(match index.sign {
            Sign::Plus => raw.to_vec(),
            Sign::Minus => raw.iter().map(|&v| -v).collect(),
        })
    }

    /// Draws `count` window starts uniformly (with replacement) from the
    /// valid range for windows of `dim` entries. All returned indices
    /// carry `Sign::Plus`; mirrored pairs are built by the caller.
    pub fn draw_offsets(
        &self,
        rng: &mut RngStream,
        count: usize,
        dim: usize,
    ) -> Result<Vec<NoiseIndex>> {
        let max = self.max_offset(dim)?;
        Ok((0..count)
            .map(|_| NoiseIndex::plus(rng.random_range(0..=max)))
            .collect())
    }

    /// Hex SHA-256 over the little-endian bytes of a window. Used to
    /// compare table contents across processes without shipping them.
    pub fn hash_region(&self, offset: u64, count: usize) -> Result<String> {
        let slice = self.raw_slice(offset, count)?;
        let mut hasher = Sha256::new();
        for v in slice {
            hasher.update(v.to_le_bytes());
        }
        Ok(hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_table() {
        let a = NoiseTable::generate(11, 10_000).unwrap();
        let b = NoiseTable::generate(11, 10_000).unwrap();
        assert_eq!(a.raw_slice(0, 10_000).unwrap(), b.raw_slice(0, 10_000).unwrap());
        let c = NoiseTable::generate(12, 10_000).unwrap();
        assert_ne!(a.raw_slice(0, 10_000).unwrap(), c.raw_slice(0, 10_000).unwrap());
    }

    #[test]
    fn table_bytes_do_not_depend_on_thread_count() {
        let len = 3 * NOISE_BLOCK + 1234;
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| NoiseTable::generate(5, len)).unwrap();
        let b = four.install(|| NoiseTable::generate(5, len)).unwrap();
        assert_eq!(a.raw_slice(0, len).unwrap(), b.raw_slice(0, len).unwrap());
    }

    #[test]
    fn longer_table_extends_shorter_bitwise() {
        let short = NoiseTable::generate(9, NOISE_BLOCK + 100).unwrap();
        let long = NoiseTable::generate(9, 2 * NOISE_BLOCK + 500).unwrap();
        assert_eq!(
            short.raw_slice(0, short.len()).unwrap(),
            long.raw_slice(0, short.len()).unwrap()
        );
    }

    #[test]
    fn values_look_standard_normal() {
        let n = 1_000_000;
        let table = NoiseTable::generate(3, n).unwrap();
        let slice = table.raw_slice(0, n).unwrap();
        let mean: f64 = slice.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var: f64 =
            slice.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        let tail = slice.iter().filter(|v| v.abs() > 3.0).count() as f64 / n as f64;
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
        assert!((tail - 0.0027).abs() < 0.001, "3-sigma tail {tail}");
    }

    #[test]
    fn signed_slice_minus_is_bitwise_negation() {
        let table = NoiseTable::generate(21, 4096).unwrap();
        let idx = NoiseIndex::plus(1000);
        let plus = table.signed_slice(idx, 64).unwrap();
        let minus = table.signed_slice(idx.mirrored(), 64).unwrap();
        for (p, m) in plus.iter().zip(&minus) {
            assert_eq!(p.to_bits() ^ 0x8000_0000, m.to_bits());
        }
    }

    #[test]
    fn out_of_range_access_is_rejected() {
        let table = NoiseTable::generate(1, 100).unwrap();
        assert!(table.raw_slice(0, 100).is_ok());
        assert!(table.raw_slice(1, 100).is_err());
        assert!(table.raw_slice(98, 3).is_err());
        assert!(table.raw_slice(u64::MAX, 1).is_err());
        assert!(matches!(
            table.raw_slice(99, 2),
            Err(Error::NoiseOutOfRange { .. })
        ));
    }

    #[test]
    fn draw_offsets_stay_in_range_and_replay() {
        let table = NoiseTable::generate(2, 5000).unwrap();
        let dim = 400;
        let mut rng = RngStream::new(77, 0);
        let a = table.draw_offsets(&mut rng, 200, dim).unwrap();
        let mut rng = RngStream::new(77, 0);
        let b = table.draw_offsets(&mut rng, 200, dim).unwrap();
        assert_eq!(a, b);
        let max = table.max_offset(dim).unwrap();
        for idx in &a {
            assert!(idx.offset <= max);
            assert_eq!(idx.sign, Sign::Plus);
            assert_eq!(table.raw_slice(idx.offset, dim).unwrap().len(), dim);
        }
    }

    #[test]
    fn draws_are_with_replacement() {
        // A tiny valid range forces collisions; drawing must not dedup.
        let table = NoiseTable::generate(2, 12).unwrap();
        let mut rng = RngStream::new(1, 0);
        let idx = table.draw_offsets(&mut rng, 100, 10).unwrap();
        assert_eq!(idx.len(), 100);
        let distinct: std::collections::HashSet<u64> =
            idx.iter().map(|i| i.offset).collect();
        assert!(distinct.len() <= 3);
    }

    #[test]
    fn hash_region_distinguishes_content() {
        let table = NoiseTable::generate(4, 2048).unwrap();
        let h1 = table.hash_region(0, 512).unwrap();
        let h2 = table.hash_region(0, 512).unwrap();
        let h3 = table.hash_region(1, 512).unwrap();
        assert_eq!(h1, h2);
        assert_ne!(h1, h3);
        assert_eq!(h1.len(), 64);
    }

    #[test]
    fn sign_serde_round_trips_as_signed_unit() {
        let idx = NoiseIndex::minus(42);
        let json = serde_json::to_string(&idx).unwrap();
        assert_eq!(json, r#"{"offset":42,"sign":-1}"#);
        let back: NoiseIndex = serde_json::from_str(&json).unwrap();
        assert_eq!(back, idx);
        assert!(serde_json::from_str::<NoiseIndex>(r#"{"offset":1,"sign":0}"#).is_err());
    }
}
