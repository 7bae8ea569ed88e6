//! Synthetic datasets and the per-accelerator batch stream.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterTopology;
use crate::compute::{Batch, Matrix, Targets};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Noisy samples around a hidden optimum; pairs with the quadratic model.
    QuadraticTarget,
    /// Isotropic unit-variance clusters, one per class, for cross-entropy MLPs.
    GaussianBlobs,
    /// `y = w·x + b + noise`; pairs with a single linear layer under MSE.
    LinearRegression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DatasetKind,
    /// Total examples before the 80/20 train/validation split.
    pub size: usize,
    pub dim: usize,
    /// GaussianBlobs only.
    pub classes: usize,
    /// GaussianBlobs: distance of each class mean from the origin.
    pub separation: f64,
    /// Standard deviation of additive noise (QuadraticTarget, LinearRegression).
    pub noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::GaussianBlobs,
            size: 1000,
            dim: 2,
            classes: 3,
            separation: 3.0,
            noise: 0.0,
        }
    }
}

impl DataConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.size < 10 {
            v.push(format!("data.size must be >= 10, got {}", self.size));
        }
        if self.dim == 0 {
            v.push("data.dim must be >= 1".into());
        }
        if self.kind == DatasetKind::GaussianBlobs && self.classes < 2 {
            v.push(format!("data.classes must be >= 2, got {}", self.classes));
        }
        if !(self.noise >= 0.0) || !(self.separation >= 0.0) {
            v.push("data.noise and data.separation must be >= 0".into());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Batch<f64>,
    pub val: Batch<f64>,
    /// Generating parameters: the quadratic optimum, or linear weights followed by the bias.
    pub truth: Option<Vec<f64>>,
}

/// Deterministic dataset with the first 80% of examples for training and the rest held out.
pub fn make_dataset(cfg: &DataConfig, seed: u64) -> Result<Dataset> {
    let errs = cfg.violations();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6461_7461);
    let (n, d) = (cfg.size, cfg.dim);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let (inputs, targets, truth) = match cfg.kind {
        DatasetKind::QuadraticTarget => {
            let center: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut x = Vec::with_capacity(n * d);
            for _ in 0..n {
                for &c in &center {
                    x.push(c + cfg.noise * gauss(&mut rng));
                }
            }
            (x, Targets::None, Some(center))
        }
        DatasetKind::GaussianBlobs => {
            let means: Vec<Vec<f64>> = (0..cfg.classes)
                .map(|k| {
                    let mut m = vec![0.0; d];
                    if d == 1 {
                        m[0] = cfg.separation * (2.0 * k as f64 / (cfg.classes - 1) as f64 - 1.0);
                    } else {
                        let angle = 2.0 * std::f64::consts::PI * k as f64 / cfg.classes as f64;
                        m[0] = cfg.separation * angle.cos();
                        m[1] = cfg.separation * angle.sin();
                    }
                    m
                })
                .collect();
            let mut x = Vec::with_capacity(n * d);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let k = rng.gen_range(0..cfg.classes);
                for &mu in &means[k] {
                    x.push(mu + gauss(&mut rng));
                }
                labels.push(k);
            }
            (x, Targets::Labels(labels), None)
        }
        DatasetKind::LinearRegression => {
            let w: Vec<f64> = (0..=d).map(|_| gauss(&mut rng)).collect();
            let mut x = Vec::with_capacity(n * d);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let row: Vec<f64> = (0..d).map(|_| gauss(&mut rng)).collect();
                let clean: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + w[d];
                y.push(clean + cfg.noise * gauss(&mut rng));
                x.extend(row);
            }
            (x, Targets::Values(Matrix::new(n, 1, y)?), Some(w))
        }
    };
    let all = Batch::new(Matrix::new(n, d, inputs)?, targets)?;
    let n_train = n * 4 / 5;
    let train_idx: Vec<usize> = (0..n_train).collect();
    let val_idx: Vec<usize> = (n_train..n).collect();
    Ok(Dataset {
        train: all.select(&train_idx),
        val: all.select(&val_idx),
        truth,
    })
}

/// Batches for every accelerator at `step`, indexed `[node][accel]`.
///
/// Each step draws `nodes × accels × batch_size` distinct training examples
/// from a generator keyed by `(seed, step)`; global rank `node·A + accel`
/// takes the rank-th consecutive slice, so batches within a step never overlap.
pub fn accelerator_batches(
    train: &Batch<f64>,
    topology: &ClusterTopology,
    batch_size: usize,
    seed: u64,
    step: u64,
) -> Result<Vec<Vec<Batch<f64>>>> {
    let ranks = topology.accelerators();
    let need = ranks * batch_size;
    if batch_size == 0 || need > train.size() {
        return Err(Error::config(format!(
            "{ranks} accelerators x batch_size {batch_size} needs {need} distinct examples, training split has {}",
            train.size()
        )));
    }
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    key[16..21].copy_from_slice(b"batch");
    let mut rng = ChaCha8Rng::from_seed(key);
    let picked = index::sample(&mut rng, train.size(), need).into_vec();
    Ok((0..topology.nodes)
        .map(|node| {
            (0..topology.accels_per_node)
                .map(|accel| {
                    let r = node * topology.accels_per_node + accel;
                    train.select(&picked[r * batch_size..(r + 1) * batch_size])
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn same_seed_same_data() {
        for kind in [
            DatasetKind::QuadraticTarget,
            DatasetKind::GaussianBlobs,
            DatasetKind::LinearRegression,
        ] {
            let cfg = DataConfig {
                kind,
                ..DataConfig::default()
            };
            assert_eq!(
                make_dataset(&cfg, 5).unwrap(),
                make_dataset(&cfg, 5).unwrap()
            );
            assert_ne!(
                make_dataset(&cfg, 5).unwrap(),
                make_dataset(&cfg, 6).unwrap()
            );
            let d = make_dataset(&cfg, 5).unwrap();
            assert_eq!((d.train.size(), d.val.size()), (800, 200));
        }
    }

    #[test]
    fn tiny_dataset_rejected() {
        let cfg = DataConfig {
            size: 9,
            ..DataConfig::default()
        };
        assert!(make_dataset(&cfg, 0).is_err());
    }

    #[test]
    fn batches_are_disjoint_within_a_step() {
        let d = make_dataset(&DataConfig::default(), 1).unwrap();
        // Tag every example with its row index to track identity.
        let tagged = Batch::new(
            Matrix::new(
                d.train.size(),
                1,
                (0..d.train.size()).map(|i| i as f64).collect(),
            )
            .unwrap(),
            Targets::None,
        )
        .unwrap();
        let t = ClusterTopology::hybrid(2, 3).unwrap();
        for step in 0..20 {
            let b = accelerator_batches(&tagged, &t, 16, 9, step).unwrap();
            let mut seen = HashSet::new();
            for node in &b {
                for batch in node {
                    assert_eq!(batch.size(), 16);
                    for r in 0..16 {
                        assert!(seen.insert(batch.inputs.row(r)[0] as usize));
                    }
                }
            }
        }
        assert!(accelerator_batches(&tagged, &t, 200, 9, 0).is_err());
    }

    proptest! {
        #[test]
        fn no_two_accelerators_share_an_example(
            seed in any::<u64>(),
            step in any::<u64>(),
            nodes in 1usize..4,
            accels in 1usize..4,
            batch in 1usize..8,
        ) {
            let n = 200;
            let tagged = Batch::new(
                Matrix::new(n, 1, (0..n).map(|i| i as f64).collect()).unwrap(),
                Targets::None,
            )
            .unwrap();
            let t = ClusterTopology::hybrid(nodes, accels).unwrap();
            let b = accelerator_batches(&tagged, &t, batch, seed, step).unwrap();
            let again = accelerator_batches(&tagged, &t, batch, seed, step).unwrap();
            prop_assert_eq!(&b, &again);
            let mut seen = HashSet::new();
            for batch in b.iter().flatten() {
                for r in 0..batch.size() {
                    prop_assert!(seen.insert(batch.inputs.row(r)[0] as usize));
                }
            }
            prop_assert_eq!(seen.len(), nodes * accels * batch);
        }
    }
}
