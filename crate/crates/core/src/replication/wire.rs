//! Byte layout of a [`CompressedUpdate`] on the inter-node link.
//!
//! All integers and floats are little-endian. A frame is a fixed header
//! followed by the payload:
//!
//! | offset | size | field                                        |
//! |--------|------|----------------------------------------------|
//! | 0      | 1    | scheme tag (demo 0, random 1, striding 2, diloco 3, full 4) |
//! | 1      | 1    | dtype tag (fp32 0, fp16 1, ternary 2, fp64 3) |
//! | 2      | 1    | payload kind (frequencies 0, implied 1, dense 2, empty 3) |
//! | 3      | 4    | shard id                                     |
//! | 7      | 8    | step                                         |
//! | 15     | 4    | shard length                                 |
//! | 19     | 4    | value count                                  |
//! | 23     | 4    | chunk size (0 unless frequencies)            |
//!
//! The payload is `count` u32 indices (frequency payloads only) followed by
//! `count` values at the dtype width. Ternary values are packed four per
//! byte, least-significant bits first, as `00 = 0`, `01 = +1`, `10 = -1`.
//! The payload length always equals [`CompressedUpdate::wire_bytes`]; the
//! header is constant framing and is not charged by the byte model.

use super::config::{Scheme, TransferDtype};
use super::update::{CompressedUpdate, Payload, Replicator};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const HEADER_LEN: usize = 27;

pub fn encode_frame<T: Scalar>(u: &CompressedUpdate<T>) -> Result<Vec<u8>> {
    let (kind, indices, values, chunk): (u8, &[u32], &[T], usize) = match &u.payload {
        Payload::Frequencies {
            chunk_size,
            indices,
            values,
        } => (0, indices, values, *chunk_size),
        Payload::Implied { values, .. } => (1, &[], values, 0),
        Payload::Dense(values) => (2, &[], values, 0),
        Payload::Empty => (3, &[], &[], 0),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + u.wire_bytes() as usize);
    out.push(u.scheme.tag());
    out.push(u.dtype.tag());
    out.push(kind);
    out.extend_from_slice(&u.shard_id.to_le_bytes());
    out.extend_from_slice(&u.step.to_le_bytes());
    out.extend_from_slice(&header_u32(u.len)?.to_le_bytes());
    out.extend_from_slice(&header_u32(values.len())?.to_le_bytes());
    out.extend_from_slice(&header_u32(chunk)?.to_le_bytes());
    for i in indices {
        out.extend_from_slice(&i.to_le_bytes());
    }
    write_values(&mut out, values, u.dtype)?;
    Ok(out)
}

/// Parses a frame. Random/Striding indices are regenerated from the
/// replicator's seed rather than read from the frame.
pub fn decode_frame<T: Scalar>(
    bytes: &[u8],
    replicator: &Replicator<T>,
) -> Result<CompressedUpdate<T>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Wire(format!(
            "frame of {} bytes is shorter than the header",
            bytes.len()
        )));
    }
    let scheme = Scheme::from_tag(bytes[0])
        .ok_or_else(|| Error::Wire(format!("scheme tag {}", bytes[0])))?;
    let dtype = TransferDtype::from_tag(bytes[1])
        .ok_or_else(|| Error::Wire(format!("dtype tag {}", bytes[1])))?;
    let kind = bytes[2];
    let shard_id = u32::from_le_bytes(bytes[3..7].try_into().unwrap());
    let step = u64::from_le_bytes(bytes[7..15].try_into().unwrap());
    let len = u32::from_le_bytes(bytes[15..19].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(bytes[19..23].try_into().unwrap()) as usize;
    let chunk_size = u32::from_le_bytes(bytes[23..27].try_into().unwrap()) as usize;
    let mut body = &bytes[HEADER_LEN..];

    let payload = match kind {
        0 => {
            let need = count * 4;
            if body.len() < need {
                return Err(Error::Wire("truncated index block".into()));
            }
            let indices = body[..need]
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            body = &body[need..];
            let values = read_values(body, count, dtype)?;
            Payload::Frequencies {
                chunk_size,
                indices,
                values,
            }
        }
        1 => {
            let indices = replicator.index_set(len, step, shard_id)?;
            if indices.len() != count {
                return Err(Error::Wire(format!(
                    "frame carries {count} values but the seeded index set has {}",
                    indices.len()
                )));
            }
            Payload::Implied {
                indices,
                values: read_values(body, count, dtype)?,
            }
        }
        2 => Payload::Dense(read_values(body, count, dtype)?),
        3 => {
            if !body.is_empty() || count != 0 {
                return Err(Error::Wire("empty payload with trailing bytes".into()));
            }
            Payload::Empty
        }
        other => return Err(Error::Wire(format!("payload kind {other}"))),
    };
    Ok(CompressedUpdate {
        scheme,
        dtype,
        step,
        shard_id,
        len,
        payload,
    })
}

fn header_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Wire(format!("{v} does not fit the 32-bit header field")))
}

fn write_values<T: Scalar>(out: &mut Vec<u8>, values: &[T], dtype: TransferDtype) -> Result<()> {
    match dtype {
        TransferDtype::Fp64 => values
            .iter()
            .for_each(|v| out.extend_from_slice(&v.as_f64().to_le_bytes())),
        TransferDtype::Fp32 => values
            .iter()
            .for_each(|v| out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes())),
        TransferDtype::Fp16 => values
            .iter()
            .for_each(|v| out.extend_from_slice(&half::f16::from_f64(v.as_f64()).to_le_bytes())),
        TransferDtype::Ternary => {
            for group in values.chunks(4) {
                let mut byte = 0u8;
                for (slot, &v) in group.iter().enumerate() {
                    let code = if v > T::zero() {
                        0b01
                    } else if v < T::zero() {
                        0b10
                    } else {
                        0b00
                    };
                    if v != T::zero() && v.abs() != T::one() {
                        return Err(Error::Wire(format!("value {v} is not ternary")));
                    }
                    byte |= code << (2 * slot);
                }
                out.push(byte);
            }
        }
    }
    Ok(())
}

fn read_values<T: Scalar>(body: &[u8], count: usize, dtype: TransferDtype) -> Result<Vec<T>> {
    let need = (count as u64 * dtype.value_bits()).div_ceil(8) as usize;
    if body.len() != need {
        return Err(Error::Wire(format!(
            "value block is {} bytes, expected {need}",
            body.len()
        )));
    }
    Ok(match dtype {
        TransferDtype::Fp64 => body
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        TransferDtype::Fp32 => body
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect(),
        TransferDtype::Fp16 => body
            .chunks_exact(2)
            .map(|c| T::lit(half::f16::from_le_bytes(c.try_into().unwrap()).to_f64()))
            .collect(),
        TransferDtype::Ternary => {
            let mut out = Vec::with_capacity(count);
            for i in 0..count {
                let code = (body[i / 4] >> (2 * (i % 4))) & 0b11;
                out.push(match code {
                    0b00 => T::zero(),
                    0b01 => T::one(),
                    0b10 => -T::one(),
                    _ => return Err(Error::Wire("invalid ternary code 0b11".into())),
                });
            }
            out
        }
    })
}
