//! Built-in oracle suite behind the `verify` subcommand.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::{ClusterMode, ClusterTopology, LinkModel, Simulator};
use crate::compute::{
    backward, finite_diff_gradient, Activation, Batch, DenseVector, LossKind, Matrix, Model,
    Targets,
};
use crate::error::Result;
use crate::optim::OptimizerConfig;
use crate::replication::{Compression, Replicator, ReplicatorConfig};
use crate::transform::{dct2, idct3};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            name,
            passed,
            detail,
        }
    }

    fn from_result(name: &'static str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

pub const DCT_SIZES: [usize; 6] = [1, 2, 16, 32, 128, 256];

/// Runs every built-in check with the library transform.
pub fn verify() -> VerifyReport {
    let fwd = |x: &[f64]| dct2(x).expect("non-empty");
    let inv = |c: &[f64]| idct3(c).expect("non-empty");
    VerifyReport {
        checks: vec![
            Check::from_result("gradient_finite_difference", gradient_check()),
            dct_round_trip_check(fwd, inv),
            dct_parseval_check(fwd),
            Check::from_result("demo_full_band_equals_full", full_band_collapse_check()),
            Check::from_result("byte_ratios", byte_ratio_check()),
            Check::from_result("gather_scaling", gather_scaling_check()),
        ],
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn gradient_check() -> Result<(bool, String)> {
    let cases = [
        (vec![3, 5, 2], Activation::Tanh, LossKind::Mse),
        (vec![4, 6, 3], Activation::Tanh, LossKind::CrossEntropy),
        (vec![2, 4, 4, 1], Activation::Tanh, LossKind::Mse),
        (vec![3, 7, 4], Activation::Relu, LossKind::CrossEntropy),
    ];
    let mut worst = 0.0f64;
    for (seed, (dims, act, loss)) in cases.into_iter().enumerate() {
        let model = Model::mlp(&dims, act, loss)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        let params = model.init_params::<f64>(seed as u64);
        let n = 5;
        let inputs = Matrix::new(
            n,
            model.input_dim(),
            random_vec(&mut rng, n * model.input_dim()),
        )?;
        let targets = match loss {
            LossKind::Mse => Targets::Values(Matrix::new(
                n,
                model.output_dim(),
                random_vec(&mut rng, n * model.output_dim()),
            )?),
            LossKind::CrossEntropy => Targets::Labels(
                (0..n)
                    .map(|_| rng.gen_range(0..model.output_dim()))
                    .collect(),
            ),
        };
        let batch = Batch::new(inputs, targets)?;
        let g = backward(&model, &params, &batch)?;
        let fd = finite_diff_gradient(&model, &params, &batch, 1e-5)?;
        let rel = g.sub(&fd)?.norm() / fd.norm().max(1e-12);
        worst = worst.max(rel);
    }
    Ok((
        worst < 1e-5,
        format!("max relative error {worst:.3e} (tolerance 1e-5)"),
    ))
}

/// Round-trip identity of a transform pair over [`DCT_SIZES`]. Parameterized
/// so a deliberately broken transform can be checked to fail.
pub fn dct_round_trip_check(
    forward: impl Fn(&[f64]) -> Vec<f64>,
    inverse: impl Fn(&[f64]) -> Vec<f64>,
) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for s in DCT_SIZES {
        for _ in 0..20 {
            let x = random_vec(&mut rng, s);
            let back = inverse(&forward(&x));
            let err = x
                .iter()
                .zip(&back)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(if back.len() == s { err } else { f64::INFINITY });
        }
    }
    Check::new(
        "dct_round_trip",
        worst < 1e-9,
        format!("max |idct(dct(x)) - x| = {worst:.3e} (tolerance 1e-9)"),
    )
}

pub fn dct_parseval_check(forward: impl Fn(&[f64]) -> Vec<f64>) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for s in DCT_SIZES {
        for _ in 0..20 {
            let x = random_vec(&mut rng, s);
            let ex: f64 = x.iter().map(|v| v * v).sum();
            let ec: f64 = forward(&x).iter().map(|v| v * v).sum();
            worst = worst.max((ex - ec).abs() / ex.max(f64::MIN_POSITIVE));
        }
    }
    Check::new(
        "dct_parseval",
        worst < 1e-9,
        format!("max relative energy error {worst:.3e} (tolerance 1e-9)"),
    )
}

fn quadratic_trajectory(rep: ReplicatorConfig, steps: u64) -> Result<Vec<DenseVector<f64>>> {
    let model = Model::quadratic(64)?;
    let topo = ClusterTopology::hybrid(1, 2)?;
    let init = model.init_params(0);
    let mut sim = Simulator::new(
        topo,
        model,
        OptimizerConfig::demo_sgd(0.05, 0.9),
        rep,
        LinkModel::default(),
        init,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut out = Vec::new();
    for step in 0..steps {
        let batches = vec![(0..2)
            .map(|_| Batch::quadratic_target(&random_vec(&mut rng, 64)))
            .collect::<Result<Vec<_>>>()?];
        sim.step(&batches, step, 0.05)?;
        out.push(sim.params(0).clone());
    }
    Ok(out)
}

fn full_band_collapse_check() -> Result<(bool, String)> {
    let demo = quadratic_trajectory(ReplicatorConfig::demo(32, 32), 50)?;
    let full = quadratic_trajectory(ReplicatorConfig::full(), 50)?;
    let mut worst = 0.0f64;
    for (a, b) in demo.iter().zip(&full) {
        worst = worst.max(a.max_abs_diff(b)?);
    }
    Ok((
        worst < 1e-9,
        format!("max trajectory distance {worst:.3e} over 50 steps (tolerance 1e-9)"),
    ))
}

fn byte_ratio_check() -> Result<(bool, String)> {
    let len = 4096;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_vec(&mut rng, len);
    let c = Compression::new(1, 16)?;
    let bytes = |cfg: ReplicatorConfig| -> Result<u64> {
        Ok(Replicator::<f64>::new(cfg)?
            .select_and_encode(&x, 0, 0)?
            .0
            .wire_bytes())
    };
    let demo = bytes(ReplicatorConfig::demo(32, 2))?;
    let random = bytes(ReplicatorConfig::random(c))?;
    let full = bytes(ReplicatorConfig::full())?;
    let (r1, r2) = (demo as f64 / random as f64, full as f64 / random as f64);
    Ok((
        demo == 2 * random && full == 16 * random,
        format!("DeMo/Random = {r1:.3}, Full/Random = {r2:.3} at fp32, compression 1/16"),
    ))
}

fn gather_scaling_check() -> Result<(bool, String)> {
    let model = Model::quadratic(256)?;
    let inter = |mode| -> Result<u64> {
        let topo = ClusterTopology::new(2, 4, mode)?;
        let mut sim = Simulator::new(
            topo,
            model.clone(),
            OptimizerConfig::demo_sgd(0.01, 0.9),
            ReplicatorConfig::demo(32, 2),
            LinkModel::default(),
            model.init_params(0),
        )?;
        let target: Vec<f64> = (0..256).map(|i| i as f64 / 256.0).collect();
        let batches = vec![vec![Batch::quadratic_target(&target)?; 4]; 2];
        Ok(sim.step(&batches, 0, 0.01)?.traffic.inter_bytes)
    };
    let hybrid = inter(ClusterMode::HybridSharded)?;
    let ddp = inter(ClusterMode::DdpAllGather)?;
    Ok((
        ddp == 4 * hybrid,
        format!("all-gather/hybrid inter-node bytes = {ddp}/{hybrid} (expected ratio 4)"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_checkout_passes() {
        let r = verify();
        assert!(r.all_passed(), "{r}");
    }

    #[test]
    fn broken_normalization_fails_round_trip() {
        // Drops the 1/√2 on the DC coefficient of the orthonormal basis.
        let buggy = |x: &[f64]| {
            let mut c = dct2(x).unwrap();
            if x.len() > 1 {
                c[0] *= std::f64::consts::SQRT_2;
            }
            c
        };
        let check = dct_round_trip_check(buggy, |c: &[f64]| idct3(c).unwrap());
        assert!(!check.passed, "{check}");
        assert!(check.to_string().starts_with("FAIL dct_round_trip"));
    }

    #[test]
    fn byte_ratio_detail_reports_two() {
        let (ok, detail) = byte_ratio_check().unwrap();
        assert!(ok);
        assert!(detail.contains("DeMo/Random = 2.000"), "{detail}");
    }
}
