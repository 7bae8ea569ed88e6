use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ReplicatorConfig, Scheme, TransferDtype};
use crate::compute::{DenseVector, Matrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transform::{chunk, signum, unchunk, DctPlan};

/// Scheme-specific message body. Values are already narrowed to the transfer dtype.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload<T> {
    /// DeMo: flat coefficient indices `chunk * chunk_size + freq` travel with the values.
    Frequencies {
        chunk_size: usize,
        indices: Vec<u32>,
        values: Vec<T>,
    },
    /// Random/Striding: indices are recomputed by every receiver and never sent.
    Implied { indices: Vec<u32>, values: Vec<T> },
    /// Full replication, or a DiLoCo synchronization step.
    Dense(Vec<T>),
    /// DiLoCo step without synchronization.
    Empty,
}

impl<T> Payload<T> {
    pub fn value_count(&self) -> usize {
        match self {
            Payload::Frequencies { values, .. } | Payload::Implied { values, .. } => values.len(),
            Payload::Dense(v) => v.len(),
            Payload::Empty => 0,
        }
    }

    /// Indices that are carried on the wire.
    pub fn wire_index_count(&self) -> usize {
        match self {
            Payload::Frequencies { indices, .. } => indices.len(),
            _ => 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Payload::Empty)
    }
}

/// One replica's contribution to a synchronize step.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedUpdate<T> {
    pub scheme: Scheme,
    pub dtype: TransferDtype,
    pub step: u64,
    pub shard_id: u32,
    /// Length of the shard the update applies to.
    pub len: usize,
    pub payload: Payload<T>,
}

impl<T> CompressedUpdate<T> {
    /// Payload bytes: `ceil((values × value_bits + wire_indices × 32) / 8)`.
    pub fn wire_bytes(&self) -> u64 {
        let (values, indices) = value_bytes_and_index_bytes(self);
        values + indices
    }

    /// Bytes spent on explicit indices.
    pub fn index_bytes(&self) -> u64 {
        value_bytes_and_index_bytes(self).1
    }
}

fn value_bytes_and_index_bytes<T>(u: &CompressedUpdate<T>) -> (u64, u64) {
    let value_bits = u.payload.value_count() as u64 * u.dtype.value_bits();
    let index_bytes = u.payload.wire_index_count() as u64 * INDEX_BITS / 8;
    (value_bits.div_ceil(8), index_bytes)
}

pub const INDEX_BITS: u64 = 32;

pub fn wire_bytes<T>(update: &CompressedUpdate<T>) -> u64 {
    update.wire_bytes()
}

/// Rounds a value to what survives the transfer dtype.
pub fn quantize<T: Scalar>(v: T, dtype: TransferDtype) -> T {
    match dtype {
        TransferDtype::Fp64 => v,
        TransferDtype::Fp32 => T::lit(v.as_f64() as f32 as f64),
        TransferDtype::Fp16 => T::lit(half::f16::from_f64(v.as_f64()).to_f64()),
        TransferDtype::Ternary => signum(v),
    }
}

/// Stateless component selector for one replicator configuration.
#[derive(Debug, Clone)]
pub struct Replicator<T> {
    cfg: ReplicatorConfig,
    plan: Option<DctPlan<T>>,
}

impl<T: Scalar> Replicator<T> {
    pub fn new(cfg: ReplicatorConfig) -> Result<Self> {
        let plan = match cfg.scheme {
            Scheme::Demo => Some(DctPlan::new(cfg.chunk_size)?),
            _ => None,
        };
        Ok(Self { cfg, plan })
    }

    pub fn config(&self) -> &ReplicatorConfig {
        &self.cfg
    }

    /// Chooses the components of `input` to offer for synchronization.
    ///
    /// Returns the wire message and `local_q`, the un-signed parameter-domain
    /// components that the caller removes from its own state.
    pub fn select_and_encode(
        &self,
        input: &[T],
        step: u64,
        shard_id: u32,
    ) -> Result<(CompressedUpdate<T>, DenseVector<T>)> {
        if input.is_empty() {
            return Err(Error::Dimension("cannot replicate an empty vector".into()));
        }
        let len = input.len();
        let cfg = &self.cfg;
        let transmit = |v: T| {
            let v = if cfg.sign { signum(v) } else { v };
            quantize(v, cfg.dtype)
        };
        let (payload, local_q) = match cfg.scheme {
            Scheme::Demo => {
                let plan = self.plan.as_ref().expect("DeMo replicator owns a DCT plan");
                let (sel, q, _) = plan.extract_fast_components(input, cfg.top_k)?;
                let s = cfg.chunk_size;
                let mut indices = Vec::with_capacity(sel.per_chunk.len() * cfg.top_k);
                let mut values = Vec::with_capacity(indices.capacity());
                for (c, entries) in sel.per_chunk.iter().enumerate() {
                    for &(j, coeff) in entries {
                        indices.push(to_u32(c * s + j)?);
                        values.push(transmit(coeff));
                    }
                }
                (
                    Payload::Frequencies {
                        chunk_size: s,
                        indices,
                        values,
                    },
                    q,
                )
            }
            Scheme::Random | Scheme::Striding => {
                let indices = self.index_set(len, step, shard_id)?;
                let mut q = DenseVector::zeros(len);
                let values = indices
                    .iter()
                    .map(|&i| {
                        q[i as usize] = input[i as usize];
                        transmit(input[i as usize])
                    })
                    .collect();
                (Payload::Implied { indices, values }, q)
            }
            Scheme::Diloco => {
                if self.is_sync_step(step) {
                    (
                        Payload::Dense(input.iter().map(|&v| transmit(v)).collect()),
                        DenseVector::from_slice(input)?,
                    )
                } else {
                    (Payload::Empty, DenseVector::zeros(len))
                }
            }
            Scheme::Full => (
                Payload::Dense(input.iter().map(|&v| transmit(v)).collect()),
                DenseVector::from_slice(input)?,
            ),
        };
        Ok((
            CompressedUpdate {
                scheme: cfg.scheme,
                dtype: cfg.dtype,
                step,
                shard_id,
                len,
                payload,
            },
            local_q,
        ))
    }

    pub fn is_sync_step(&self, step: u64) -> bool {
        match self.cfg.scheme {
            Scheme::Diloco => step.is_multiple_of(self.cfg.compression.period() as u64),
            _ => true,
        }
    }

    /// Ascending index set used by Random and Striding at `(step, shard_id)`.
    ///
    /// Identical on every replica with the same seed, so indices never need
    /// to be transmitted.
    pub fn index_set(&self, len: usize, step: u64, shard_id: u32) -> Result<Vec<u32>> {
        let c = self.cfg.compression;
        let mut idx: Vec<u32> = match self.cfg.scheme {
            Scheme::Random => {
                let n = c.count_of(len);
                let mut all: Vec<u32> = (0..to_u32(len)?).collect();
                let mut rng = index_rng(self.cfg.seed, step, shard_id);
                let (picked, _) = all.partial_shuffle(&mut rng, n);
                picked.to_vec()
            }
            Scheme::Striding => {
                let stride = c.period();
                let offset = (step % stride as u64) as usize;
                (offset..len)
                    .step_by(stride)
                    .map(to_u32)
                    .collect::<Result<_>>()?
            }
            other => {
                return Err(Error::config(format!(
                    "scheme {other} has no implied index set"
                )))
            }
        };
        if idx.is_empty() {
            return Err(Error::config(format!(
                "compression {} selects no index of a shard of length {len}",
                c
            )));
        }
        idx.sort_unstable();
        Ok(idx)
    }

    /// Element-wise mean across replicas of every transmitted component;
    /// positions nobody transmitted are zero. DeMo averages in the frequency
    /// domain and inverts per chunk. A DiLoCo step without synchronization
    /// returns `local` unchanged.
    pub fn decode_and_merge(
        &self,
        updates: &[&CompressedUpdate<T>],
        local: &[T],
    ) -> Result<DenseVector<T>> {
        let first = *updates
            .first()
            .ok_or_else(|| Error::Protocol("synchronize with no updates".into()))?;
        for u in &updates[1..] {
            if u.scheme != first.scheme
                || u.step != first.step
                || u.len != first.len
                || u.shard_id != first.shard_id
                || u.dtype != first.dtype
            {
                return Err(Error::Protocol(format!(
                    "mismatched updates: ({}, step {}, shard {}, len {}, {}) vs ({}, step {}, shard {}, len {}, {})",
                    first.scheme, first.step, first.shard_id, first.len, first.dtype,
                    u.scheme, u.step, u.shard_id, u.len, u.dtype
                )));
            }
        }
        if first.scheme != self.cfg.scheme {
            return Err(Error::Protocol(format!(
                "update scheme {} does not match replicator scheme {}",
                first.scheme, self.cfg.scheme
            )));
        }
        let len = first.len;
        let n = T::from_usize_lossy(updates.len());

        if updates.iter().all(|u| u.payload.is_empty()) {
            if local.len() != len {
                return Err(Error::Dimension(
                    "local input does not match update length".into(),
                ));
            }
            return DenseVector::from_slice(local);
        }

        match &first.payload {
            Payload::Dense(_) => {
                let mut acc = vec![T::zero(); len];
                for u in updates {
                    let Payload::Dense(v) = &u.payload else {
                        return Err(Error::Protocol("mixed payload kinds".into()));
                    };
                    check_len(v.len(), len)?;
                    for (a, &x) in acc.iter_mut().zip(v) {
                        *a = *a + x;
                    }
                }
                DenseVector::new(acc.into_iter().map(|a| a / n).collect())
            }
            Payload::Implied {
                indices: first_idx, ..
            } => {
                let mut acc = vec![T::zero(); len];
                for u in updates {
                    let Payload::Implied { indices, values } = &u.payload else {
                        return Err(Error::Protocol("mixed payload kinds".into()));
                    };
                    if indices != first_idx {
                        return Err(Error::Protocol(
                            "replicas disagree on the implied index set".into(),
                        ));
                    }
                    check_len(values.len(), indices.len())?;
                    for (&i, &v) in indices.iter().zip(values) {
                        let slot = acc
                            .get_mut(i as usize)
                            .ok_or_else(|| Error::Protocol(format!("index {i} out of range")))?;
                        *slot = *slot + v;
                    }
                }
                for &i in first_idx {
                    acc[i as usize] = acc[i as usize] / n;
                }
                DenseVector::new(acc)
            }
            Payload::Frequencies { chunk_size, .. } => {
                let plan = self
                    .plan
                    .as_ref()
                    .filter(|p| p.size() == *chunk_size)
                    .ok_or_else(|| Error::Protocol("chunk size differs from replicator".into()))?;
                let (_, layout) = chunk(&vec![T::zero(); len], *chunk_size)?;
                let mut recon = Matrix::zeros(layout.num_chunks, *chunk_size);
                let total = layout.num_chunks * chunk_size;
                let mut acc = vec![T::zero(); total];
                for u in updates {
                    let Payload::Frequencies {
                        indices,
                        values,
                        chunk_size: cs,
                    } = &u.payload
                    else {
                        return Err(Error::Protocol("mixed payload kinds".into()));
                    };
                    if cs != chunk_size {
                        return Err(Error::Protocol("mismatched chunk sizes".into()));
                    }
                    check_len(values.len(), indices.len())?;
                    for (&i, &v) in indices.iter().zip(values) {
                        let slot = acc.get_mut(i as usize).ok_or_else(|| {
                            Error::Protocol(format!("frequency index {i} out of range"))
                        })?;
                        *slot = *slot + v;
                    }
                }
                for c in 0..layout.num_chunks {
                    let row: Vec<T> = acc[c * chunk_size..(c + 1) * chunk_size]
                        .iter()
                        .map(|&a| a / n)
                        .collect();
                    recon.row_mut(c).copy_from_slice(&plan.inverse(&row));
                }
                unchunk(&recon, &layout)
            }
            Payload::Empty => Err(Error::Protocol(
                "some replicas synchronized and others did not".into(),
            )),
        }
    }
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Protocol(format!(
            "payload length {got}, expected {want}"
        )));
    }
    Ok(())
}

fn to_u32(i: usize) -> Result<u32> {
    u32::try_from(i).map_err(|_| Error::config(format!("index {i} does not fit in 32 bits")))
}

/// Generator keyed by `(seed, step, shard)`.
fn index_rng(seed: u64, step: u64, shard_id: u32) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    key[16..20].copy_from_slice(&shard_id.to_le_bytes());
    key[20..24].copy_from_slice(b"ridx");
    ChaCha8Rng::from_seed(key)
}

/// Convenience wrapper around [`Replicator::select_and_encode`].
pub fn select_and_encode<T: Scalar>(
    input: &[T],
    cfg: &ReplicatorConfig,
    step: u64,
    shard_id: u32,
) -> Result<(CompressedUpdate<T>, DenseVector<T>)> {
    Replicator::new(*cfg)?.select_and_encode(input, step, shard_id)
}

/// Convenience wrapper around [`Replicator::decode_and_merge`].
pub fn decode_and_merge<T: Scalar>(
    updates: &[&CompressedUpdate<T>],
    cfg: &ReplicatorConfig,
    local: &[T],
) -> Result<DenseVector<T>> {
    Replicator::new(*cfg)?.decode_and_merge(updates, local)
}
