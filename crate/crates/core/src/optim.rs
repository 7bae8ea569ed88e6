//! Optimizer steps on one parameter shard: DeMo-SGD, decoupled AdamW, and
//! the fully synchronized baselines.
//!
//! Each step is split in two phases so that a replication group can be
//! driven in lockstep: [`ShardOptimizer::offer`] produces this shard's
//! message, the group merges all messages, and [`ShardOptimizer::apply`]
//! consumes the merged result.

use serde::{Deserialize, Serialize};

use crate::compute::DenseVector;
use crate::error::{Error, Result};
use crate::replication::{CompressedUpdate, Replicator, ReplicatorConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Decoupled momentum SGD; only extracted components are exchanged.
    DemoSgd,
    /// AdamW whose moment estimates stay local to each replica.
    DecoupledAdamw,
    /// SGD with momentum on the fully averaged gradient.
    BaselineSgd,
    /// AdamW on the fully averaged gradient.
    BaselineAdamw,
}

impl OptimizerKind {
    pub fn is_baseline(self) -> bool {
        matches!(
            self,
            OptimizerKind::BaselineSgd | OptimizerKind::BaselineAdamw
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::DemoSgd,
            learning_rate: 1e-3,
            momentum_decay: 0.999,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn demo_sgd(learning_rate: f64, momentum_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::DemoSgd,
            learning_rate,
            momentum_decay,
            ..Self::default()
        }
    }

    pub fn decoupled_adamw(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::DecoupledAdamw,
            learning_rate,
            ..Self::default()
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        let uses_momentum = matches!(
            self.kind,
            OptimizerKind::DemoSgd | OptimizerKind::BaselineSgd
        );
        // β = 0 is accepted as the momentum-free limit.
        if uses_momentum && !(self.momentum_decay >= 0.0 && self.momentum_decay < 1.0) {
            out.push(format!(
                "momentum_decay must lie in [0, 1), got {}",
                self.momentum_decay
            ));
        }
        if !uses_momentum {
            if !open_unit(self.adam_beta1) {
                out.push(format!(
                    "adam_beta1 must lie in (0, 1), got {}",
                    self.adam_beta1
                ));
            }
            if !open_unit(self.adam_beta2) {
                out.push(format!(
                    "adam_beta2 must lie in (0, 1), got {}",
                    self.adam_beta2
                ));
            }
            if !(self.adam_eps > 0.0) {
                out.push(format!("adam_eps must be > 0, got {}", self.adam_eps));
            }
        }
        if !(self.weight_decay >= 0.0) {
            out.push(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        out
    }
}

/// Per-(node, shard) optimizer state. Never synchronized across nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState<T> {
    /// DeMo-SGD residual momentum, or the baseline SGD momentum buffer.
    pub m: DenseVector<T>,
    pub exp_avg: DenseVector<T>,
    pub exp_avg_sq: DenseVector<T>,
    /// Number of applied updates.
    pub step: u64,
}

impl<T: Scalar> MomentumState<T> {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: DenseVector::zeros(len),
            exp_avg: DenseVector::zeros(len),
            exp_avg_sq: DenseVector::zeros(len),
            step: 0,
        }
    }
}

/// This shard's contribution to one synchronize step.
#[derive(Debug, Clone, PartialEq)]
pub struct Offer<T> {
    pub update: CompressedUpdate<T>,
    /// Exact components removed from local state (or replaced, for AdamW).
    pub local_q: DenseVector<T>,
    /// What the replicator selected from: the accumulated momentum for
    /// DeMo-SGD, the shard gradient otherwise.
    pub input: DenseVector<T>,
}

#[derive(Debug, Clone)]
pub struct ShardOptimizer<T> {
    cfg: OptimizerConfig,
    replicator: Replicator<T>,
    state: MomentumState<T>,
    shard_id: u32,
}

impl<T: Scalar> ShardOptimizer<T> {
    /// Baseline kinds ignore `rep` and exchange full fp32 gradients.
    pub fn new(
        cfg: OptimizerConfig,
        rep: ReplicatorConfig,
        shard_len: usize,
        shard_id: u32,
    ) -> Result<Self> {
        let mut errs = cfg.violations();
        let rep = if cfg.kind.is_baseline() {
            baseline_replicator(rep)
        } else {
            rep
        };
        errs.extend(rep.violations(shard_len));
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        Ok(Self {
            cfg,
            replicator: Replicator::new(rep)?,
            state: MomentumState::zeros(shard_len),
            shard_id,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn replicator(&self) -> &Replicator<T> {
        &self.replicator
    }

    pub fn state(&self) -> &MomentumState<T> {
        &self.state
    }

    pub fn shard_id(&self) -> u32 {
        self.shard_id
    }

    /// First phase: fold the shard gradient into local state and select what to share.
    pub fn offer(&mut self, grad: &DenseVector<T>, step: u64) -> Result<Offer<T>> {
        if grad.len() != self.state.m.len() {
            return Err(Error::Dimension(format!(
                "shard gradient length {} != shard length {}",
                grad.len(),
                self.state.m.len()
            )));
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of shard {} at step {step}",
                self.shard_id
            )));
        }
        match self.cfg.kind {
            OptimizerKind::DemoSgd => {
                let beta = T::lit(self.cfg.momentum_decay);
                for (m, &g) in self.state.m.iter_mut().zip(grad.iter()) {
                    *m = beta * *m + g;
                }
                let input = self.state.m.clone();
                let (update, local_q) =
                    self.replicator
                        .select_and_encode(&input, step, self.shard_id)?;
                for (m, &q) in self.state.m.iter_mut().zip(local_q.iter()) {
                    *m = *m - q;
                }
                Ok(Offer {
                    update,
                    local_q,
                    input,
                })
            }
            _ => {
                let (update, local_q) =
                    self.replicator
                        .select_and_encode(grad, step, self.shard_id)?;
                Ok(Offer {
                    update,
                    local_q,
                    input: grad.clone(),
                })
            }
        }
    }

    /// Second phase: update this shard's parameters from the group-merged `merged`.
    pub fn apply(
        &mut self,
        params: &mut [T],
        offer: &Offer<T>,
        merged: &DenseVector<T>,
        lr: T,
    ) -> Result<()> {
        if params.len() != merged.len() || merged.len() != self.state.m.len() {
            return Err(Error::Dimension(
                "params, merged update and state lengths differ".into(),
            ));
        }
        if !merged.is_finite() {
            return Err(Error::NonFinite(format!(
                "merged update of shard {} at step {}",
                self.shard_id, offer.update.step
            )));
        }
        self.state.step += 1;
        match self.cfg.kind {
            OptimizerKind::DemoSgd => {
                for (p, &q) in params.iter_mut().zip(merged.iter()) {
                    *p = *p - lr * q;
                }
            }
            OptimizerKind::BaselineSgd => {
                let beta = T::lit(self.cfg.momentum_decay);
                for ((p, m), &g) in params
                    .iter_mut()
                    .zip(self.state.m.iter_mut())
                    .zip(merged.iter())
                {
                    *m = beta * *m + g;
                    *p = *p - lr * *m;
                }
            }
            OptimizerKind::DecoupledAdamw => {
                let g = mixed_gradient(offer, merged)?;
                self.adamw(params, &g, lr);
            }
            OptimizerKind::BaselineAdamw => {
                self.adamw(params, merged, lr);
            }
        }
        Ok(())
    }

    /// Runs both phases with `sync` standing in for the replication group.
    pub fn step<F>(
        &mut self,
        params: &mut [T],
        grad: &DenseVector<T>,
        step: u64,
        lr: T,
        sync: F,
    ) -> Result<Offer<T>>
    where
        F: FnOnce(&Replicator<T>, &Offer<T>) -> Result<DenseVector<T>>,
    {
        let offer = self.offer(grad, step)?;
        let merged = sync(&self.replicator, &offer)?;
        self.apply(params, &offer, &merged, lr)?;
        Ok(offer)
    }

    fn adamw(&mut self, params: &mut [T], g: &[T], lr: T) {
        let b1 = T::lit(self.cfg.adam_beta1);
        let b2 = T::lit(self.cfg.adam_beta2);
        let eps = T::lit(self.cfg.adam_eps);
        let wd = T::lit(self.cfg.weight_decay);
        let t = self.state.step as i32;
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        let s = &mut self.state;
        for i in 0..params.len() {
            s.exp_avg[i] = b1 * s.exp_avg[i] + (T::one() - b1) * g[i];
            s.exp_avg_sq[i] = b2 * s.exp_avg_sq[i] + (T::one() - b2) * g[i] * g[i];
            let p = params[i] - lr * wd * params[i];
            let denom = (s.exp_avg_sq[i] / bc2).sqrt() + eps;
            params[i] = p - lr * (s.exp_avg[i] / bc1) / denom;
        }
    }
}

/// Gradient seen by decoupled AdamW: merged values where components were
/// exchanged, the local gradient everywhere else.
pub fn mixed_gradient<T: Scalar>(
    offer: &Offer<T>,
    merged: &DenseVector<T>,
) -> Result<DenseVector<T>> {
    if offer.update.payload.is_empty() {
        return Ok(merged.clone());
    }
    let mut g = offer.input.sub(&offer.local_q)?;
    for (gi, &q) in g.iter_mut().zip(merged.iter()) {
        *gi = *gi + q;
    }
    Ok(g)
}

fn baseline_replicator(rep: ReplicatorConfig) -> ReplicatorConfig {
    let dtype = if rep.dtype == crate::replication::TransferDtype::Fp64 {
        rep.dtype
    } else {
        crate::replication::TransferDtype::Fp32
    };
    ReplicatorConfig::full().dtype(dtype).seed(rep.seed)
}

/// Merges an offer with itself only: the `|R| = 1` group.
pub fn local_sync<T: Scalar>(rep: &Replicator<T>, offer: &Offer<T>) -> Result<DenseVector<T>> {
    rep.decode_and_merge(&[&offer.update], &offer.input)
}

fn expect_kind<T>(opt: &ShardOptimizer<T>, want: &[OptimizerKind]) -> Result<()> {
    if want.contains(&opt.cfg.kind) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "optimizer kind {:?} used for {:?} step",
            opt.cfg.kind, want
        )))
    }
}

/// One DeMo-SGD step: accumulate, extract, remove, synchronize, update.
pub fn demo_sgd_step<T: Scalar, F>(
    opt: &mut ShardOptimizer<T>,
    params: &mut [T],
    grad: &DenseVector<T>,
    step: u64,
    lr: T,
    sync: F,
) -> Result<Offer<T>>
where
    F: FnOnce(&Replicator<T>, &Offer<T>) -> Result<DenseVector<T>>,
{
    expect_kind(opt, &[OptimizerKind::DemoSgd])?;
    opt.step(params, grad, step, lr, sync)
}

pub fn decoupled_adamw_step<T: Scalar, F>(
    opt: &mut ShardOptimizer<T>,
    params: &mut [T],
    grad: &DenseVector<T>,
    step: u64,
    lr: T,
    sync: F,
) -> Result<Offer<T>>
where
    F: FnOnce(&Replicator<T>, &Offer<T>) -> Result<DenseVector<T>>,
{
    expect_kind(opt, &[OptimizerKind::DecoupledAdamw])?;
    opt.step(params, grad, step, lr, sync)
}

pub fn baseline_step<T: Scalar, F>(
    opt: &mut ShardOptimizer<T>,
    params: &mut [T],
    grad: &DenseVector<T>,
    step: u64,
    lr: T,
    sync: F,
) -> Result<Offer<T>>
where
    F: FnOnce(&Replicator<T>, &Offer<T>) -> Result<DenseVector<T>>,
{
    expect_kind(
        opt,
        &[OptimizerKind::BaselineSgd, OptimizerKind::BaselineAdamw],
    )?;
    opt.step(params, grad, step, lr, sync)
}
