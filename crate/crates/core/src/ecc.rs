//! Systematic random linear erasure code for the passive downlink broadcast.
//!
//! A block of `k` data packets is sent verbatim followed by `r` check
//! packets, each a random GF(256) combination of the data. Check coefficients
//! are regenerated from a per-block seed carried in every packet header, so a
//! receiver needs no side channel. Receivers that hold all `k` systematic
//! packets pass them through without any elimination work; otherwise the
//! missing payloads are solved from the check equations restricted to what
//! survived.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::galois::{addmul_slice, Gf256, Matrix};

/// Wire header layout, big-endian:
/// block_id (4) | index (2) | kind (1) | k (2) | r (2) | seed (8) | payload_len (2)
pub const HEADER_LEN: usize = 21;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EccError {
    #[error("block parameters invalid: {0}")]
    BadParams(String),
    #[error("payloads must share one length: found {found}, expected {expected}")]
    PayloadLength { expected: usize, found: usize },
    #[error("packet {index} does not belong to block {expected}")]
    ForeignPacket { index: u16, expected: u32 },
    #[error("cannot recover block: {0}")]
    Insufficient(InsufficientEcc),
    #[error("malformed packet: {0}")]
    Wire(String),
}

/// Recovery shortfall report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InsufficientEcc {
    pub missing: usize,
    pub rank: usize,
}

impl std::fmt::Display for InsufficientEcc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} packets missing, achieved rank {}", self.missing, self.rank)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EccBlockParams {
    pub k: usize,
    pub r: usize,
    pub coefficient_seed: u64,
}

impl EccBlockParams {
    pub fn validate(&self) -> Result<(), EccError> {
        if self.k == 0 {
            return Err(EccError::BadParams("k must be >= 1".into()));
        }
        if self.k > u16::MAX as usize || self.r > u16::MAX as usize {
            return Err(EccError::BadParams("k and r must fit in 16 bits".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EccPacketKind {
    Systematic,
    Check,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EccPacket {
    pub block_id: u32,
    /// Position in [0, k + r); [0, k) is systematic.
    pub index: u16,
    pub kind: EccPacketKind,
    pub payload: Vec<u8>,
}

/// The r x k check coefficient matrix determined by the block seed. Row `j`
/// holds the coefficients of check packet `j`.
pub fn check_matrix(params: &EccBlockParams) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(params.coefficient_seed);
    let mut m = Matrix::zero(params.r, params.k);
    for row in 0..params.r {
        for col in 0..params.k {
            m.set(row, col, Gf256(rng.gen()));
        }
    }
    m
}

/// Encode one block: the k data payloads verbatim, then r check packets.
pub fn encode(
    block_id: u32,
    data: &[Vec<u8>],
    params: &EccBlockParams,
) -> Result<Vec<EccPacket>, EccError> {
    params.validate()?;
    if data.len() != params.k {
        return Err(EccError::BadParams(format!(
            "expected {} data packets, got {}",
            params.k,
            data.len()
        )));
    }
    let payload_len = data[0].len();
    for p in data {
        if p.len() != payload_len {
            return Err(EccError::PayloadLength {
                expected: payload_len,
                found: p.len(),
            });
        }
    }
    let mut out = Vec::with_capacity(params.k + params.r);
    for (i, payload) in data.iter().enumerate() {
        out.push(EccPacket {
            block_id,
            index: i as u16,
            kind: EccPacketKind::Systematic,
            payload: payload.clone(),
        });
    }
    let coeffs = check_matrix(params);
    for j in 0..params.r {
        let mut payload = vec![0u8; payload_len];
        for (i, d) in data.iter().enumerate() {
            addmul_slice(&mut payload, d, coeffs.get(j, i));
        }
        out.push(EccPacket {
            block_id,
            index: (params.k + j) as u16,
            kind: EccPacketKind::Check,
            payload,
        });
    }
    Ok(out)
}

/// Recover the k data payloads from any decodable subset of a block.
pub fn decode(received: &[EccPacket], params: &EccBlockParams) -> Result<Vec<Vec<u8>>, EccError> {
    params.validate()?;
    let Some(first) = received.first() else {
        return Err(EccError::Insufficient(InsufficientEcc {
            missing: params.k,
            rank: 0,
        }));
    };
    let block_id = first.block_id;
    let payload_len = first.payload.len();
    let mut systematic: Vec<Option<&[u8]>> = vec![None; params.k];
    let mut checks: Vec<(usize, &[u8])> = Vec::new();
    for pkt in received {
        if pkt.block_id != block_id {
            return Err(EccError::ForeignPacket {
                index: pkt.index,
                expected: block_id,
            });
        }
        if pkt.payload.len() != payload_len {
            return Err(EccError::PayloadLength {
                expected: payload_len,
                found: pkt.payload.len(),
            });
        }
        let idx = pkt.index as usize;
        if idx < params.k {
            systematic[idx] = Some(&pkt.payload);
        } else if idx < params.k + params.r {
            checks.push((idx - params.k, &pkt.payload));
        }
    }

    let missing: Vec<usize> = (0..params.k).filter(|&i| systematic[i].is_none()).collect();
    if missing.is_empty() {
        // fast path: no elimination work at all
        return Ok(systematic
            .into_iter()
            .map(|p| p.expect("all present").to_vec())
            .collect());
    }

    // Restrict each check equation to the missing unknowns and fold the known
    // payloads into the right-hand side.
    let coeffs = check_matrix(params);
    let mut rows: Vec<Vec<Gf256>> = Vec::with_capacity(checks.len());
    let mut rhs: Vec<Vec<u8>> = Vec::with_capacity(checks.len());
    for &(j, check_payload) in &checks {
        let mut row = Vec::with_capacity(missing.len());
        for &i in &missing {
            row.push(coeffs.get(j, i));
        }
        let mut b = check_payload.to_vec();
        for (i, known) in systematic.iter().enumerate() {
            if let Some(known) = known {
                addmul_slice(&mut b, known, coeffs.get(j, i));
            }
        }
        rows.push(row);
        rhs.push(b);
    }

    let solved = solve_rectangular(&rows, &mut rhs, missing.len()).ok_or_else(|| {
        let rank = Matrix::from_rows(rows.clone()).map_or(0, |m| m.rank());
        EccError::Insufficient(InsufficientEcc {
            missing: missing.len(),
            rank,
        })
    })?;

    let mut out: Vec<Vec<u8>> = systematic
        .into_iter()
        .map(|p| p.map(<[u8]>::to_vec).unwrap_or_default())
        .collect();
    for (slot, payload) in missing.into_iter().zip(solved) {
        out[slot] = payload;
    }
    Ok(out)
}

/// Decide decodability from surviving packet indices alone. Used where only
/// the delivery verdict matters and payloads are not simulated.
pub fn decodable(received_indices: &[usize], params: &EccBlockParams) -> bool {
    let mut have = vec![false; params.k];
    let mut check_rows: Vec<usize> = Vec::new();
    for &idx in received_indices {
        if idx < params.k {
            have[idx] = true;
        } else if idx < params.k + params.r {
            check_rows.push(idx - params.k);
        }
    }
    let missing: Vec<usize> = (0..params.k).filter(|&i| !have[i]).collect();
    if missing.is_empty() {
        return true;
    }
    if check_rows.len() < missing.len() {
        return false;
    }
    let coeffs = check_matrix(params);
    let rows: Vec<Vec<Gf256>> = check_rows
        .iter()
        .map(|&j| missing.iter().map(|&i| coeffs.get(j, i)).collect())
        .collect();
    Matrix::from_rows(rows).map_or(false, |m| m.rank() == missing.len())
}

/// Gauss-Jordan over possibly more equations than unknowns. Returns the
/// unknown payloads in column order, or None below full rank.
fn solve_rectangular(
    rows: &[Vec<Gf256>],
    rhs: &mut [Vec<u8>],
    unknowns: usize,
) -> Option<Vec<Vec<u8>>> {
    let mut a: Vec<Vec<Gf256>> = rows.to_vec();
    let n = a.len();
    let mut pivot_of_col = vec![usize::MAX; unknowns];
    let mut next_row = 0;
    for col in 0..unknowns {
        let Some(p) = (next_row..n).find(|&r| !a[r][col].is_zero()) else {
            return None;
        };
        a.swap(next_row, p);
        rhs.swap(next_row, p);
        let inv = a[next_row][col].inv().expect("pivot nonzero");
        for c in 0..unknowns {
            a[next_row][c] *= inv;
        }
        crate::galois::scale_slice(&mut rhs[next_row], inv);
        for r in 0..n {
            if r == next_row {
                continue;
            }
            let factor = a[r][col];
            if factor.is_zero() {
                continue;
            }
            let pivot_row = a[next_row].clone();
            for c in 0..unknowns {
                let v = a[r][c] + factor * pivot_row[c];
                a[r][c] = v;
            }
            let (head, tail) = rhs.split_at_mut(r.max(next_row));
            let (dst, src) = if r > next_row {
                (&mut tail[0], &head[next_row])
            } else {
                (&mut head[r], &tail[0])
            };
            addmul_slice(dst, src, factor);
        }
        pivot_of_col[col] = next_row;
        next_row += 1;
    }
    Some(pivot_of_col.iter().map(|&r| rhs[r].clone()).collect())
}

impl EccPacket {
    /// Serialize with the self-describing header. Receivers can rebuild the
    /// block parameters from any single packet.
    pub fn to_wire(&self, params: &EccBlockParams) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.block_id.to_be_bytes());
        out.extend_from_slice(&self.index.to_be_bytes());
        out.push(match self.kind {
            EccPacketKind::Systematic => 0,
            EccPacketKind::Check => 1,
        });
        out.extend_from_slice(&(params.k as u16).to_be_bytes());
        out.extend_from_slice(&(params.r as u16).to_be_bytes());
        out.extend_from_slice(&params.coefficient_seed.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_wire(bytes: &[u8]) -> Result<(Self, EccBlockParams), EccError> {
        if bytes.len() < HEADER_LEN {
            return Err(EccError::Wire(format!(
                "packet too short: {} < {HEADER_LEN}",
                bytes.len()
            )));
        }
        let block_id = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
        let index = u16::from_be_bytes(bytes[4..6].try_into().unwrap());
        let kind = match bytes[6] {
            0 => EccPacketKind::Systematic,
            1 => EccPacketKind::Check,
            other => return Err(EccError::Wire(format!("unknown kind byte {other}"))),
        };
        let k = u16::from_be_bytes(bytes[7..9].try_into().unwrap()) as usize;
        let r = u16::from_be_bytes(bytes[9..11].try_into().unwrap()) as usize;
        let seed = u64::from_be_bytes(bytes[11..19].try_into().unwrap());
        let payload_len = u16::from_be_bytes(bytes[19..21].try_into().unwrap()) as usize;
        if bytes.len() < HEADER_LEN + payload_len {
            return Err(EccError::Wire(format!(
                "payload truncated: have {}, header says {payload_len}",
                bytes.len() - HEADER_LEN
            )));
        }
        let params = EccBlockParams {
            k,
            r,
            coefficient_seed: seed,
        };
        params.validate()?;
        if (index as usize) >= k + r {
            return Err(EccError::Wire(format!("index {index} out of range")));
        }
        Ok((
            Self {
                block_id,
                index,
                kind,
                payload: bytes[HEADER_LEN..HEADER_LEN + payload_len].to_vec(),
            },
            params,
        ))
    }
}
