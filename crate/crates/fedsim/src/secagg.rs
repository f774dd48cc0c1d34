//! Secure aggregation by pairwise additive masking over the ring Z_2^64.
//!
//! Each client fixed-point-encodes its flattened model, adds masks derived
//! from seeds it shares with every other client, and submits only the
//! masked words. For each pair (i, j) with i < j, client i adds the pair's
//! mask stream and client j subtracts it, so the masks cancel exactly in
//! the ring sum and the aggregator recovers the sum of the encodings,
//! never an individual model. No-dropout setting: a round aborts unless
//! every client's update arrives.
//!
//! This is the construction's mechanics, not a hardened implementation;
//! seed dealing happens in-process rather than via key agreement.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::nn::{Architecture, Model};
use crate::seeds::{derive_seed, tag};

pub const DEFAULT_FRAC_BITS: u32 = 24;

/// Stable identifier of the mask stream generator, recorded in manifests
/// and in the wire header so transcripts stay replayable.
pub const PRG_ID: &str = "chacha20-v1";

pub const WIRE_VERSION: u32 = 1;

/// Fixed-point-encoded parameter vector; ring elements modulo 2^64.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPointVector {
    pub values: Vec<u64>,
    pub frac_bits: u32,
}

impl FixedPointVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_frac_bits(frac_bits: u32) -> Result<()> {
    if !(1..=62).contains(&frac_bits) {
        return Err(Error::InvalidInput(format!(
            "frac_bits must be in 1..=62, got {frac_bits}"
        )));
    }
    Ok(())
}

/// Encode reals as ring elements: `round(w * 2^frac_bits) mod 2^64`.
///
/// Values must satisfy `|w| < 2^(63 - frac_bits)` so the scaled integer
/// fits in the signed range.
pub fn encode_values(values: &[f64], frac_bits: u32) -> Result<Vec<u64>> {
    check_frac_bits(frac_bits)?;
    let bound = (63 - frac_bits as i32 as i64).max(0);
    let bound = (bound as f64).exp2();
    let scale = (frac_bits as f64).exp2();
    let mut out = Vec::with_capacity(values.len());
    for (index, &w) in values.iter().enumerate() {
        // NaN fails the comparison too, so non-finite values land here.
        if !(w.abs() < bound) {
            return Err(Error::EncodingRange { index, value: w });
        }
        out.push((w * scale).round() as i64 as u64);
    }
    Ok(out)
}

/// Encode a model's parameters in canonical flatten order.
pub fn encode_fixed(model: &Model, frac_bits: u32) -> Result<FixedPointVector> {
    Ok(FixedPointVector {
        values: encode_values(&model.flatten(), frac_bits)?,
        frac_bits,
    })
}

/// Decode a ring sum of `n_clients` encodings into per-entry means.
///
/// Each word is read back through its centered (two's-complement)
/// interpretation, then divided by `2^frac_bits` and by `n_clients`.
pub fn decode_sum_values(values: &[u64], n_clients: usize, frac_bits: u32) -> Result<Vec<f64>> {
    check_frac_bits(frac_bits)?;
    if n_clients == 0 {
        return Err(Error::InvalidInput("n_clients must be at least 1".into()));
    }
    let scale = (frac_bits as f64).exp2();
    let n = n_clients as f64;
    Ok(values
        .iter()
        .map(|&w| (w as i64) as f64 / scale / n)
        .collect())
}

/// Decode a ring sum straight into the mean model.
pub fn decode_sum(sum: &FixedPointVector, n_clients: usize, arch: &Architecture) -> Result<Model> {
    if sum.len() != arch.param_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} ring elements for an architecture with {} parameters",
            sum.len(),
            arch.param_count()
        )));
    }
    let means = decode_sum_values(&sum.values, n_clients, sum.frac_bits)?;
    Model::from_flat(arch, &means)
}

/// Shared seeds for every unordered client pair, dealt before a federation
/// starts. Dealing is deterministic in the federation seed; the per-round
/// nonce enters as the stream of the mask generator, so one dealing serves
/// every round.
#[derive(Debug, Clone)]
pub struct PairwiseSeeds {
    t: usize,
    seeds: BTreeMap<(usize, usize), u64>,
}

impl PairwiseSeeds {
    pub fn deal(t: usize, federation_seed: u64) -> Result<Self> {
        if t == 0 {
            return Err(Error::InvalidInput("client count must be at least 1".into()));
        }
        let mut seeds = BTreeMap::new();
        for i in 0..t {
            for j in (i + 1)..t {
                seeds.insert(
                    (i, j),
                    derive_seed(&[federation_seed, tag::PAIRWISE, i as u64, j as u64]),
                );
            }
        }
        Ok(PairwiseSeeds { t, seeds })
    }

    pub fn client_count(&self) -> usize {
        self.t
    }

    fn pair_seed(&self, a: usize, b: usize) -> Result<u64> {
        let key = (a.min(b), a.max(b));
        self.seeds.get(&key).copied().ok_or_else(|| {
            Error::Protocol(format!("no shared seed for client pair {key:?}"))
        })
    }
}

/// `length` uniform 64-bit words from the pair seed; the round number
/// selects an independent stream so rounds never reuse mask material.
fn prg_words(pair_seed: u64, round: u64, length: usize) -> Vec<u64> {
    let mut rng = ChaCha20Rng::seed_from_u64(pair_seed);
    rng.set_stream(round);
    (0..length).map(|_| rng.next_u64()).collect()
}

/// Build one client's mask for a round:
/// add the stream of every pair (i, j) with j > i, subtract it for j < i.
/// Summed over all clients the masks cancel to exactly zero.
pub fn gen_masks(
    client_id: usize,
    seeds: &PairwiseSeeds,
    round: u64,
    length: usize,
) -> Result<Vec<u64>> {
    if client_id >= seeds.t {
        return Err(Error::Protocol(format!(
            "client {client_id} outside the dealt set of {}",
            seeds.t
        )));
    }
    let mut mask = vec![0u64; length];
    for peer in 0..seeds.t {
        if peer == client_id {
            continue;
        }
        let words = prg_words(seeds.pair_seed(client_id, peer)?, round, length);
        if peer > client_id {
            for (m, w) in mask.iter_mut().zip(words) {
                *m = m.wrapping_add(w);
            }
        } else {
            for (m, w) in mask.iter_mut().zip(words) {
                *m = m.wrapping_sub(w);
            }
        }
    }
    Ok(mask)
}

/// A client's masked, encoded update as it travels to the aggregator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedUpdate {
    pub client_id: u32,
    pub round: u64,
    pub masked: FixedPointVector,
}

/// Add a mask to an encoded vector (elementwise ring addition).
pub fn mask_update(
    encoded: &FixedPointVector,
    mask: &[u64],
    client_id: usize,
    round: u64,
) -> Result<MaskedUpdate> {
    if encoded.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} encoded words vs {} mask words",
            encoded.len(),
            mask.len()
        )));
    }
    let client_id = u32::try_from(client_id)
        .map_err(|_| Error::InvalidInput(format!("client id {client_id} too large")))?;
    Ok(MaskedUpdate {
        client_id,
        round,
        masked: FixedPointVector {
            values: encoded
                .values
                .iter()
                .zip(mask)
                .map(|(&v, &m)| v.wrapping_add(m))
                .collect(),
            frac_bits: encoded.frac_bits,
        },
    })
}

/// Ring-sum the updates of a complete round.
///
/// Exactly one update per client id in `0..expected_clients` must be
/// present, all for the same round with equal lengths and `frac_bits`;
/// anything else aborts with a protocol error rather than producing a
/// partial sum.
pub fn aggregate_masked(
    updates: &[MaskedUpdate],
    expected_clients: usize,
) -> Result<FixedPointVector> {
    if updates.len() != expected_clients {
        return Err(Error::Protocol(format!(
            "expected {expected_clients} updates, got {}",
            updates.len()
        )));
    }
    let mut ids: Vec<u32> = updates.iter().map(|u| u.client_id).collect();
    ids.sort_unstable();
    for (want, &have) in (0..expected_clients as u32).zip(&ids) {
        if want != have {
            return Err(Error::Protocol(format!(
                "client ids must be exactly 0..{expected_clients}, got {ids:?}"
            )));
        }
    }
    let first = &updates[0];
    for u in updates {
        if u.round != first.round {
            return Err(Error::Protocol(format!(
                "mixed rounds {} and {}",
                first.round, u.round
            )));
        }
        if u.masked.frac_bits != first.masked.frac_bits {
            return Err(Error::Protocol(format!(
                "mixed frac_bits {} and {}",
                first.masked.frac_bits, u.masked.frac_bits
            )));
        }
        if u.masked.len() != first.masked.len() {
            return Err(Error::Protocol(format!(
                "mixed lengths {} and {}",
                first.masked.len(),
                u.masked.len()
            )));
        }
    }
    let mut sum = vec![0u64; first.masked.len()];
    for u in updates {
        for (s, &v) in sum.iter_mut().zip(&u.masked.values) {
            *s = s.wrapping_add(v);
        }
    }
    Ok(FixedPointVector {
        values: sum,
        frac_bits: first.masked.frac_bits,
    })
}

const PRG_ID_FIELD: usize = 16;
const HEADER_LEN: usize = 4 + 8 + 4 + 8 + 4 + PRG_ID_FIELD;

fn prg_id_bytes() -> [u8; PRG_ID_FIELD] {
    let mut field = [0u8; PRG_ID_FIELD];
    field[..PRG_ID.len()].copy_from_slice(PRG_ID.as_bytes());
    field
}

impl MaskedUpdate {
    /// Serialize to the wire layout: header fields in order {version u32,
    /// round u64, client_id u32, length u64, frac_bits u32, prg_id 16
    /// bytes}, all little-endian, then the words as little-endian u64s.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.masked.len());
        out.extend_from_slice(&WIRE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.client_id.to_le_bytes());
        out.extend_from_slice(&(self.masked.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.masked.frac_bits.to_le_bytes());
        out.extend_from_slice(&prg_id_bytes());
        for w in &self.masked.values {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<MaskedUpdate> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Protocol(format!(
                "update of {} bytes is shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("in range"));
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("in range"));
        let version = u32_at(0);
        if version != WIRE_VERSION {
            return Err(Error::Protocol(format!(
                "unsupported wire version {version} (expected {WIRE_VERSION})"
            )));
        }
        let round = u64_at(4);
        let client_id = u32_at(12);
        let length = u64_at(16);
        let frac_bits = u32_at(24);
        if bytes[28..HEADER_LEN] != prg_id_bytes() {
            return Err(Error::Protocol(format!(
                "unknown mask generator id {:?}",
                String::from_utf8_lossy(&bytes[28..HEADER_LEN])
            )));
        }
        let body = &bytes[HEADER_LEN..];
        let expected = length
            .checked_mul(8)
            .and_then(|b| usize::try_from(b).ok())
            .ok_or_else(|| Error::Protocol(format!("implausible length {length}")))?;
        if body.len() != expected {
            return Err(Error::Protocol(format!(
                "header claims {length} words but body has {} bytes",
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(MaskedUpdate {
            client_id,
            round,
            masked: FixedPointVector { values, frac_bits },
        })
    }
}
