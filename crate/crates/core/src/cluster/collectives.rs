use crate::compute::DenseVector;
use crate::error::{Error, Result};
use crate::optim::Offer;
use crate::replication::wire::{decode_frame, encode_frame, HEADER_LEN};
use crate::replication::{CompressedUpdate, Replicator};
use crate::scalar::Scalar;

/// Bytes per gradient element inside a node (fp32 training precision).
pub const GRAD_ELEMENT_BYTES: u64 = 4;

/// Averages the node's accelerator gradients and hands slice `i` to accelerator `i`.
///
/// Returns the shards and the intra-node bytes of a ring reduce-scatter:
/// every accelerator sends `(A − 1)/A` of its vector.
pub fn grad_reduce_scatter<T: Scalar>(
    grads: &[DenseVector<T>],
) -> Result<(Vec<DenseVector<T>>, u64)> {
    let a = grads.len();
    let first = grads
        .first()
        .ok_or_else(|| Error::Protocol("reduce-scatter over an empty group".into()))?;
    let len = first.len();
    if grads.iter().any(|g| g.len() != len) {
        return Err(Error::Protocol(
            "reduce-scatter inputs differ in length".into(),
        ));
    }
    if len % a != 0 {
        return Err(Error::Protocol(format!(
            "vector length {len} is not divisible by sharding-group size {a}"
        )));
    }
    let refs: Vec<&DenseVector<T>> = grads.iter().collect();
    let mean = DenseVector::mean_of(&refs)?;
    let shard = len / a;
    let shards = (0..a)
        .map(|i| mean.slice(i * shard..(i + 1) * shard))
        .collect::<Result<Vec<_>>>()?;
    let bytes = (a as u64 - 1) * len as u64 * GRAD_ELEMENT_BYTES;
    Ok((shards, bytes))
}

/// Outcome of one group synchronize.
#[derive(Debug, Clone)]
pub struct SyncResult<T> {
    /// Merged update as computed by each member, in member order.
    pub merged: Vec<DenseVector<T>>,
    /// The messages as every member received them.
    pub delivered: Vec<CompressedUpdate<T>>,
    pub intra_bytes: u64,
    pub inter_bytes: u64,
    pub inter_index_bytes: u64,
}

/// All-gather of each member's compressed update, then a local merge on every member.
///
/// `member_nodes[p]` is the node hosting member `p`. Each message is
/// serialized once, crosses into every other node hosting a member once,
/// and is forwarded over the intra-node fabric to the remaining members.
/// With one member per node this is `(|R| − 1) × wire_bytes` per member,
/// all inter-node. A single-member group exchanges nothing.
pub fn synchronize<T: Scalar>(
    replicator: &Replicator<T>,
    offers: &[&Offer<T>],
    member_nodes: &[usize],
) -> Result<SyncResult<T>> {
    if offers.is_empty() || offers.len() != member_nodes.len() {
        return Err(Error::Protocol(
            "synchronize needs one offer per member".into(),
        ));
    }
    let first = &offers[0].update;
    for o in &offers[1..] {
        if o.update.scheme != first.scheme || o.update.step != first.step {
            return Err(Error::Protocol(format!(
                "members disagree on scheme/step: ({}, {}) vs ({}, {})",
                first.scheme, first.step, o.update.scheme, o.update.step
            )));
        }
    }
    if offers.len() == 1 {
        let merged = replicator.decode_and_merge(&[&offers[0].update], &offers[0].input)?;
        return Ok(SyncResult {
            merged: vec![merged],
            delivered: vec![offers[0].update.clone()],
            intra_bytes: 0,
            inter_bytes: 0,
            inter_index_bytes: 0,
        });
    }

    let mut nodes: Vec<usize> = member_nodes.to_vec();
    nodes.sort_unstable();
    nodes.dedup();

    let (mut intra, mut inter, mut inter_idx) = (0u64, 0u64, 0u64);
    let mut delivered = Vec::with_capacity(offers.len());
    for (p, offer) in offers.iter().enumerate() {
        let frame = encode_frame(&offer.update)?;
        let payload = (frame.len() - HEADER_LEN) as u64;
        debug_assert_eq!(payload, offer.update.wire_bytes());
        let remote_nodes = nodes.iter().filter(|&&n| n != member_nodes[p]).count() as u64;
        let forwards = (offers.len() as u64 - 1) - remote_nodes;
        inter += remote_nodes * payload;
        inter_idx += remote_nodes * offer.update.index_bytes();
        intra += forwards * payload;
        delivered.push(decode_frame(&frame, replicator)?);
    }
    let refs: Vec<&CompressedUpdate<T>> = delivered.iter().collect();
    let merged = offers
        .iter()
        .map(|o| replicator.decode_and_merge(&refs, &o.input))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyncResult {
        merged,
        delivered,
        intra_bytes: intra,
        inter_bytes: inter,
        inter_index_bytes: inter_idx,
    })
}
