use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::compute::{Batch, DenseVector, Matrix, Model, Targets};
use crate::error::Error;
use crate::optim::OptimizerConfig;
use crate::replication::wire::{encode_frame, HEADER_LEN};
use crate::replication::{Compression, ReplicatorConfig, Scheme};

fn v(x: &[f64]) -> DenseVector<f64> {
    DenseVector::from_slice(x).unwrap()
}

fn random_vec(len: usize, seed: u64) -> DenseVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    v(&(0..len)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect::<Vec<_>>())
}

/// Quadratic batches with a distinct target per accelerator and step.
fn quad_batches(t: &ClusterTopology, dim: usize, step: u64) -> Vec<Vec<Batch<f64>>> {
    (0..t.nodes)
        .map(|n| {
            (0..t.accels_per_node)
                .map(|a| {
                    let seed = step * 1000 + (n * 31 + a) as u64;
                    let rows = random_vec(dim * 2, seed).into_inner();
                    Batch::new(Matrix::new(2, dim, rows).unwrap(), Targets::None).unwrap()
                })
                .collect()
        })
        .collect()
}

fn sim(t: ClusterTopology, dim: usize, rep: ReplicatorConfig) -> Simulator<f64> {
    let model = Model::quadratic(dim).unwrap();
    Simulator::new(
        t,
        model,
        OptimizerConfig::demo_sgd(0.05, 0.9),
        rep,
        LinkModel::default(),
        DenseVector::zeros(dim),
    )
    .unwrap()
}

#[test]
fn reduce_scatter_mean_then_split() {
    let (shards, bytes) = grad_reduce_scatter(&[v(&[2.0, 4.0]), v(&[4.0, 8.0])]).unwrap();
    assert_eq!(shards, vec![v(&[3.0]), v(&[6.0])]);
    assert_eq!(bytes, 2 * GRAD_ELEMENT_BYTES);
    let (shards, bytes) = grad_reduce_scatter(&[v(&[1.0, 2.0, 3.0])]).unwrap();
    assert_eq!(shards, vec![v(&[1.0, 2.0, 3.0])]);
    assert_eq!(bytes, 0);
}

#[test]
fn reduce_scatter_matches_brute_force() {
    let grads: Vec<_> = (0..4).map(|s| random_vec(16, s)).collect();
    let (shards, bytes) = grad_reduce_scatter(&grads).unwrap();
    let joined = DenseVector::concat(&shards).unwrap();
    for i in 0..16 {
        let mean = grads.iter().map(|g| g[i]).sum::<f64>() / 4.0;
        assert!((joined[i] - mean).abs() < 1e-15);
    }
    assert_eq!(bytes, 3 * 16 * GRAD_ELEMENT_BYTES);
}

#[test]
fn reduce_scatter_rejects_bad_lengths() {
    assert!(matches!(
        grad_reduce_scatter(&[v(&[1.0, 2.0]), v(&[1.0])]),
        Err(Error::Protocol(_))
    ));
    assert!(grad_reduce_scatter(&[v(&[1.0, 2.0, 3.0]), v(&[1.0, 2.0, 3.0])]).is_err());
}

#[test]
fn step_time_model() {
    let link = LinkModel {
        intra_node_bandwidth: 1e9,
        inter_node_bandwidth: 1e6,
        compute_time_per_step: 0.25,
    };
    assert_eq!(step_time(0, 0, &link), 0.25);
    let comm = link.step_time(0, 1000) - 0.25;
    let halved = LinkModel {
        inter_node_bandwidth: 5e5,
        ..link
    };
    assert!(((halved.step_time(0, 1000) - 0.25) - 2.0 * comm).abs() < 1e-15);
}

#[test]
fn single_accelerator_has_no_traffic() {
    let t = ClusterTopology::hybrid(1, 1).unwrap();
    let mut s = sim(t, 8, ReplicatorConfig::full());
    let out = s.step(&quad_batches(&t, 8, 0), 0, 0.05).unwrap();
    assert_eq!(out.traffic.intra_bytes + out.traffic.inter_bytes, 0);
    assert_eq!(
        out.traffic.reduce_scatter_events + out.traffic.synchronize_events,
        0
    );
    assert_eq!(
        out.traffic.step_time_s,
        LinkModel::default().compute_time_per_step
    );
}

#[test]
fn two_by_two_event_counts() {
    let t = ClusterTopology::hybrid(2, 2).unwrap();
    let mut s = sim(t, 8, ReplicatorConfig::demo(4, 1));
    for step in 0..3 {
        let out = s.step(&quad_batches(&t, 8, step), step, 0.05).unwrap();
        assert_eq!(out.traffic.reduce_scatter_events, 2);
        assert_eq!(out.traffic.synchronize_events, 2);
    }
}

#[test]
fn full_fp32_inter_bytes_hand_count() {
    let (p, a) = (64usize, 4usize);
    let t = ClusterTopology::hybrid(2, a).unwrap();
    let mut s = sim(t, p, ReplicatorConfig::full());
    let out = s.step(&quad_batches(&t, p, 0), 0, 0.05).unwrap();
    // Per shard group: 2 members each send (P/A) fp32 values to the one other node.
    let per_group = 2 * (p / a) as u64 * 4;
    assert_eq!(out.traffic.inter_bytes, a as u64 * per_group);
    assert_eq!(
        out.traffic.intra_bytes,
        2 * (a as u64 - 1) * p as u64 * GRAD_ELEMENT_BYTES
    );
}

#[test]
fn gather_mode_charges_a_times_more() {
    for scheme in [
        Scheme::Demo,
        Scheme::Random,
        Scheme::Striding,
        Scheme::Full,
        Scheme::Diloco,
    ] {
        let rep = if scheme == Scheme::Full {
            ReplicatorConfig::full()
        } else {
            ReplicatorConfig::with_scheme(scheme, Compression::new(1, 4).unwrap()).sign(true)
        };
        let hybrid = ClusterTopology::hybrid(2, 4).unwrap();
        let ddp = ClusterTopology::new(2, 4, ClusterMode::DdpAllGather).unwrap();
        let (mut sh, mut sd) = (sim(hybrid, 256, rep), sim(ddp, 256, rep));
        for step in 0..4 {
            let bh = sh
                .step(&quad_batches(&hybrid, 256, step), step, 0.05)
                .unwrap()
                .traffic;
            let bd = sd
                .step(&quad_batches(&ddp, 256, step), step, 0.05)
                .unwrap()
                .traffic;
            assert_eq!(bd.inter_bytes, 4 * bh.inter_bytes, "{scheme} step {step}");
        }
    }
}

#[test]
fn replicas_stay_consistent_while_momenta_decouple() {
    let t = ClusterTopology::hybrid(3, 2).unwrap();
    let mut s = sim(t, 64, ReplicatorConfig::demo(8, 2).sign(true));
    for step in 0..20 {
        s.step(&quad_batches(&t, 64, step), step, 0.05).unwrap();
    }
    for node in 1..3 {
        assert!(s.params(0).bit_eq(s.params(node)));
        for shard in 0..2 {
            assert!(!s
                .optimizer(0, shard)
                .state()
                .m
                .bit_eq(&s.optimizer(node, shard).state().m));
        }
    }
}

#[test]
fn ledger_matches_serialized_frames() {
    let t = ClusterTopology::hybrid(3, 2).unwrap();
    let mut s = sim(t, 96, ReplicatorConfig::demo(16, 2));
    let out = s.step(&quad_batches(&t, 96, 0), 0, 0.05).unwrap();
    let mut inter = 0u64;
    for group in s.last_updates() {
        for u in group {
            let frame = encode_frame(u).unwrap();
            inter += 2 * (frame.len() - HEADER_LEN) as u64;
        }
    }
    assert_eq!(out.traffic.inter_bytes, inter);
    assert_eq!(out.traffic.inter_index_bytes, inter / 2);
}

#[test]
fn synchronize_rejects_mixed_steps() {
    let t = ClusterTopology::hybrid(2, 1).unwrap();
    let s = sim(t, 8, ReplicatorConfig::full());
    let mut o0 = s.optimizer(0, 0).clone();
    let mut o1 = s.optimizer(1, 0).clone();
    let a = o0.offer(&random_vec(8, 1), 0).unwrap();
    let b = o1.offer(&random_vec(8, 2), 1).unwrap();
    assert!(matches!(
        synchronize(o0.replicator(), &[&a, &b], &[0, 1]),
        Err(Error::Protocol(_))
    ));
}

#[test]
fn simulated_time_is_additive_and_deterministic() {
    let t = ClusterTopology::hybrid(2, 2).unwrap();
    let run = || {
        let mut s = sim(
            t,
            32,
            ReplicatorConfig::random(Compression::new(1, 4).unwrap()).seed(3),
        );
        for step in 0..10 {
            s.step(&quad_batches(&t, 32, step), step, 0.05).unwrap();
        }
        s
    };
    let (a, b) = (run(), run());
    assert_eq!(a.ledger().to_csv(), b.ledger().to_csv());
    assert!(a.params(0).bit_eq(b.params(0)));
    let sum: f64 = a.ledger().steps().iter().map(|s| s.step_time_s).sum();
    assert!((sum - a.ledger().elapsed()).abs() < 1e-12);
    assert!(a
        .ledger()
        .steps()
        .windows(2)
        .all(|w| w[1].sim_time_s > w[0].sim_time_s));
}

#[test]
fn indivisible_params_rejected() {
    let t = ClusterTopology::hybrid(2, 3).unwrap();
    let err = Simulator::<f64>::new(
        t,
        Model::quadratic(8).unwrap(),
        OptimizerConfig::default(),
        ReplicatorConfig::full(),
        LinkModel::default(),
        DenseVector::zeros(8),
    )
    .unwrap_err();
    assert!(err.to_string().contains("param_count 8"));
}
