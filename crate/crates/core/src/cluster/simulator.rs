use super::collectives::{grad_reduce_scatter, synchronize};
use super::ledger::{StepTraffic, TrafficLedger};
use super::topology::{ClusterMode, ClusterTopology, LinkModel};
use crate::compute::{loss_and_gradient, Batch, DenseVector, Model};
use crate::error::{Error, Result};
use crate::optim::{Offer, OptimizerConfig, ShardOptimizer};
use crate::replication::{CompressedUpdate, ReplicatorConfig};
use crate::scalar::Scalar;

/// Result of one scheduled training step.
#[derive(Debug, Clone)]
pub struct StepOutcome<T> {
    /// Mean of the accelerators' batch losses, evaluated before the update.
    pub train_loss: T,
    pub traffic: StepTraffic,
}

/// The virtual cluster: per-replica parameters, per-(replica, shard)
/// optimizer state, and the traffic ledger.
///
/// Accelerators are executed sequentially in rank order and every
/// reduction runs in that order, so results are bit-reproducible.
#[derive(Debug, Clone)]
pub struct Simulator<T> {
    topology: ClusterTopology,
    model: Model,
    link: LinkModel,
    shard_len: usize,
    params: Vec<DenseVector<T>>,
    optimizers: Vec<Vec<ShardOptimizer<T>>>,
    ledger: TrafficLedger,
    last_updates: Vec<Vec<CompressedUpdate<T>>>,
    last_offers: Vec<Vec<Offer<T>>>,
}

impl<T: Scalar> Simulator<T> {
    /// `init` is copied to every replica; its length must equal `model.param_count()`.
    pub fn new(
        topology: ClusterTopology,
        model: Model,
        opt: OptimizerConfig,
        rep: ReplicatorConfig,
        link: LinkModel,
        init: DenseVector<T>,
    ) -> Result<Self> {
        let mut errs = topology.violations();
        errs.extend(link.violations());
        let shards = topology.shard_count();
        if !model.param_count().is_multiple_of(shards) {
            errs.push(format!(
                "param_count {} is not divisible by sharding-group size {}",
                model.param_count(),
                shards
            ));
        }
        if init.len() != model.param_count() {
            errs.push(format!(
                "initial parameters have length {}, model needs {}",
                init.len(),
                model.param_count()
            ));
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let shard_len = model.param_count() / shards;
        let rep = if topology.replication_group_size() == 1 {
            rep.loopback()
        } else {
            rep
        };
        let optimizers = (0..topology.replica_count())
            .map(|_| {
                (0..shards)
                    .map(|s| ShardOptimizer::new(opt, rep, shard_len, s as u32))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params: vec![init; topology.replica_count()],
            topology,
            model,
            link,
            shard_len,
            optimizers,
            ledger: TrafficLedger::new(),
            last_updates: Vec::new(),
            last_offers: Vec::new(),
        })
    }

    pub fn topology(&self) -> &ClusterTopology {
        &self.topology
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn shard_len(&self) -> usize {
        self.shard_len
    }

    /// Full parameter vector held by replica `r` (a node in hybrid mode).
    pub fn params(&self, replica: usize) -> &DenseVector<T> {
        &self.params[replica]
    }

    pub fn optimizer(&self, replica: usize, shard: usize) -> &ShardOptimizer<T> {
        &self.optimizers[replica][shard]
    }

    pub fn ledger(&self) -> &TrafficLedger {
        &self.ledger
    }

    /// Messages of the most recent step, per replication group, as delivered.
    pub fn last_updates(&self) -> &[Vec<CompressedUpdate<T>>] {
        &self.last_updates
    }

    /// Offers of the most recent step, indexed `[shard][replica]`.
    pub fn last_offers(&self) -> &[Vec<Offer<T>>] {
        &self.last_offers
    }

    /// One step of the collective schedule.
    ///
    /// `batches[node][accel]` is the batch of each accelerator. Order:
    /// local gradients, reduce-scatter per node, optimizer offer per shard,
    /// synchronize per replication group, parameter update.
    pub fn step(&mut self, batches: &[Vec<Batch<T>>], step: u64, lr: T) -> Result<StepOutcome<T>> {
        let (n, a) = (self.topology.nodes, self.topology.accels_per_node);
        if batches.len() != n || batches.iter().any(|b| b.len() != a) {
            return Err(Error::Dimension(format!("expected {n}x{a} batches")));
        }
        self.ledger.begin_step(step);

        let mut loss_sum = T::zero();
        // shard_grads[replica][shard]
        let mut shard_grads: Vec<Vec<DenseVector<T>>> =
            Vec::with_capacity(self.topology.replica_count());
        match self.topology.mode {
            ClusterMode::HybridSharded => {
                for (node, node_batches) in batches.iter().enumerate() {
                    let mut grads = Vec::with_capacity(a);
                    for batch in node_batches {
                        let (loss, g) = loss_and_gradient(&self.model, &self.params[node], batch)?;
                        loss_sum = loss_sum + loss;
                        grads.push(g);
                    }
                    let (shards, bytes) = grad_reduce_scatter(&grads)?;
                    if a > 1 {
                        self.ledger.charge_reduce_scatter(bytes);
                    }
                    shard_grads.push(shards);
                }
            }
            ClusterMode::DdpAllGather => {
                for (node, node_batches) in batches.iter().enumerate() {
                    for (accel, batch) in node_batches.iter().enumerate() {
                        let replica = node * a + accel;
                        let (loss, g) =
                            loss_and_gradient(&self.model, &self.params[replica], batch)?;
                        loss_sum = loss_sum + loss;
                        shard_grads.push(vec![g]);
                    }
                }
            }
        }
        if !loss_sum.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }

        let member_nodes: Vec<usize> = (0..self.topology.replica_count())
            .map(|r| self.topology.replica_node(r))
            .collect();
        let shard_len = self.shard_len;
        self.last_updates.clear();
        self.last_offers.clear();
        for shard in 0..self.topology.shard_count() {
            let mut offers = Vec::with_capacity(self.topology.replica_count());
            for (replica, grads) in shard_grads.iter().enumerate() {
                offers.push(self.optimizers[replica][shard].offer(&grads[shard], step)?);
            }
            let refs: Vec<&Offer<T>> = offers.iter().collect();
            let result = synchronize(self.optimizers[0][shard].replicator(), &refs, &member_nodes)?;
            if offers.len() > 1 {
                self.ledger.charge_synchronize(
                    result.intra_bytes,
                    result.inter_bytes,
                    result.inter_index_bytes,
                );
            }
            let range = shard * shard_len..(shard + 1) * shard_len;
            for (replica, merged) in result.merged.iter().enumerate() {
                let params = &mut self.params[replica][range.clone()];
                self.optimizers[replica][shard].apply(params, &offers[replica], merged, lr)?;
            }
            self.last_updates.push(result.delivered);
            self.last_offers.push(offers);
        }

        let traffic = self.ledger.finish_step(&self.link);
        Ok(StepOutcome {
            train_loss: loss_sum / T::from_usize_lossy(n * a),
            traffic,
        })
    }
}
