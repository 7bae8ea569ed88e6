//! One-axis parameter sweeps over a base experiment.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::train::{train, RunOutput};
use crate::error::{Error, Result};
use crate::replication::{Compression, ReplicatorConfig, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Compression,
    ChunkSize,
    TopK,
    Sign,
    Dtype,
    Scheme,
    /// Inter-node bandwidth in Mbps.
    Bandwidth,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 7] = [
        SweepAxis::Compression,
        SweepAxis::ChunkSize,
        SweepAxis::TopK,
        SweepAxis::Sign,
        SweepAxis::Dtype,
        SweepAxis::Scheme,
        SweepAxis::Bandwidth,
    ];

    /// Returns a copy of `base` with this axis set to `value`, not yet validated.
    pub fn apply(self, base: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        let rep = &mut cfg.replicator;
        let demo_only = |axis: SweepAxis, rep: &ReplicatorConfig| {
            if rep.scheme == Scheme::Demo {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "axis {axis} needs the demo scheme, base uses {}",
                    rep.scheme
                )))
            }
        };
        match self {
            SweepAxis::Compression => {
                let c: Compression = value.parse()?;
                if rep.scheme == Scheme::Full && c != Compression::one() {
                    return Err(Error::config("full replication has no compression axis"));
                }
                rep.set_compression(c);
                if !realizes(rep, c) {
                    return Err(Error::config(format!(
                        "compression {c} is not reachable with chunk_size {}",
                        rep.chunk_size
                    )));
                }
            }
            SweepAxis::ChunkSize => {
                demo_only(self, rep)?;
                let keep = rep.compression;
                rep.chunk_size = parse_num(value)?;
                rep.set_compression(keep);
                if !realizes(rep, keep) {
                    return Err(Error::config(format!(
                        "chunk_size {} cannot realize compression {keep}",
                        rep.chunk_size
                    )));
                }
            }
            SweepAxis::TopK => {
                demo_only(self, rep)?;
                rep.top_k = parse_num(value)?;
                rep.sync_demo_compression();
            }
            SweepAxis::Sign => {
                let on = match value.trim().to_ascii_lowercase().as_str() {
                    "on" | "true" | "1" => true,
                    "off" | "false" | "0" => false,
                    other => {
                        return Err(Error::config(format!(
                            "sign value must be on/off, got `{other}`"
                        )))
                    }
                };
                rep.sign = on;
            }
            SweepAxis::Dtype => rep.dtype = value.parse()?,
            SweepAxis::Scheme => {
                let scheme: Scheme = value.parse()?;
                let c = if scheme == Scheme::Full {
                    Compression::one()
                } else {
                    rep.compression
                };
                let mut next = ReplicatorConfig::with_scheme(scheme, c);
                if scheme == Scheme::Demo {
                    next.chunk_size = rep.chunk_size;
                    next.set_compression(c);
                } else {
                    next.chunk_size = rep.chunk_size;
                }
                next.sign = rep.sign;
                next.dtype = rep.dtype;
                next.seed = rep.seed;
                *rep = next;
            }
            SweepAxis::Bandwidth => {
                let mbps: f64 = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::config(format!("bad bandwidth `{value}`")))?;
                cfg.link.inter_node_bandwidth = mbps * 1e6;
            }
        }
        Ok(cfg)
    }
}

fn realizes(rep: &ReplicatorConfig, c: Compression) -> bool {
    let (num, den) = (*c.ratio().numer() as usize, *c.ratio().denom() as usize);
    rep.compression == c
        && (rep.scheme != Scheme::Demo
            || (rep.top_k >= 1 && rep.top_k * den == rep.chunk_size * num))
}

fn parse_num(value: &str) -> Result<usize> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("expected a non-negative integer, got `{value}`")))
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Compression => "compression",
            SweepAxis::ChunkSize => "chunk_size",
            SweepAxis::TopK => "top_k",
            SweepAxis::Sign => "sign",
            SweepAxis::Dtype => "dtype",
            SweepAxis::Scheme => "scheme",
            SweepAxis::Bandwidth => "bandwidth",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.to_string() == s.trim())
            .ok_or_else(|| Error::config(format!("unknown sweep axis `{s}`")))
    }
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: String,
    pub status: String,
    pub dir: PathBuf,
    pub steps_completed: u64,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    pub inter_bytes: u64,
    pub intra_bytes: u64,
    pub sim_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.status != "ok").count()
    }
}

fn point_dir(out: &Path, axis: SweepAxis, value: &str) -> PathBuf {
    let safe: String = value
        .trim()
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    out.join(format!("{axis}={safe}"))
}

fn run_point(
    base: &ExperimentConfig,
    axis: SweepAxis,
    value: &str,
    dir: &Path,
) -> Result<RunOutput> {
    let cfg = axis.apply(base, value)?;
    cfg.validate()?;
    let out = train(&cfg)?;
    out.write_to(dir)?;
    Ok(out)
}

/// Runs every point with the base seed, each in its own subdirectory of
/// `out`, concurrently. A failing point is recorded and does not stop the others.
/// Writes the combined `sweep.csv` keyed by axis value.
pub fn sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    out: &Path,
) -> Result<SweepReport> {
    fs::create_dir_all(out)?;
    let results: Vec<(PathBuf, Result<RunOutput>)> = std::thread::scope(|s| {
        let handles: Vec<_> = values
            .iter()
            .map(|v| {
                let dir = point_dir(out, axis, v);
                s.spawn(move || {
                    let r = run_point(base, axis, v, &dir);
                    (dir, r)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let points = values
        .iter()
        .zip(results)
        .map(|(value, (dir, r))| {
            let mut p = SweepPoint {
                value: value.trim().to_string(),
                status: "ok".into(),
                dir,
                steps_completed: 0,
                final_train_loss: None,
                final_val_loss: None,
                inter_bytes: 0,
                intra_bytes: 0,
                sim_time_s: 0.0,
            };
            match r {
                Ok(o) => {
                    if let Some(f) = &o.failure {
                        p.status = format!("failed: {f}");
                    }
                    p.steps_completed = o.summary.steps_completed;
                    p.final_train_loss = o.summary.final_train_loss;
                    p.final_val_loss = o.summary.final_val_loss;
                    p.inter_bytes = o.summary.traffic.inter_bytes;
                    p.intra_bytes = o.summary.traffic.intra_bytes;
                    p.sim_time_s = o.summary.traffic.sim_time_s;
                }
                Err(e) => p.status = format!("failed: {}", e.to_string().replace('\n', "; ")),
            }
            p
        })
        .collect::<Vec<_>>();
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(out.join("sweep.csv"))
        .map_err(std::io::Error::from)?;
    w.write_record([
        axis.to_string().as_str(),
        "status",
        "dir",
        "steps_completed",
        "final_train_loss",
        "final_val_loss",
        "inter_bytes",
        "intra_bytes",
        "sim_time_s",
    ])
    .map_err(std::io::Error::from)?;
    for p in &points {
        w.serialize(p).map_err(std::io::Error::from)?;
    }
    w.flush()?;
    Ok(SweepReport { axis, points })
}

/// Standard grid per axis, used when no values are given.
pub fn default_values(axis: SweepAxis) -> Vec<String> {
    let v: &[&str] = match axis {
        SweepAxis::Compression => &["1/2", "1/4", "1/8", "1/16", "1/32"],
        SweepAxis::ChunkSize => &["16", "32", "64", "128"],
        SweepAxis::TopK => &["1", "2", "4", "8"],
        SweepAxis::Sign => &["on", "off"],
        SweepAxis::Dtype => &["fp32", "fp16"],
        SweepAxis::Scheme => &["demo", "random", "striding", "diloco", "full"],
        SweepAxis::Bandwidth => &["10", "100", "1000", "10000"],
    };
    v.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;

    fn base() -> ExperimentConfig {
        parse_config(
            r#"
            steps = 5
            batch_size = 4
            [topology]
            nodes = 2
            accels_per_node = 2
            [model]
            kind = "mlp"
            layers = [2, 8, 4]
            [data]
            size = 100
            "#,
        )
        .unwrap()
    }

    #[test]
    fn sign_axis_changes_only_sign() {
        let b = base();
        let on = SweepAxis::Sign.apply(&b, "on").unwrap();
        let off = SweepAxis::Sign.apply(&b, "off").unwrap();
        let mut off_flipped = off.clone();
        off_flipped.replicator.sign = true;
        assert_eq!(on, off_flipped);
        assert!(!off.replicator.sign);
    }

    #[test]
    fn compression_axis_rederives_top_k() {
        let b = base();
        for (v, k) in [
            ("1/2", 16),
            ("1/4", 8),
            ("1/8", 4),
            ("1/16", 2),
            ("1/32", 1),
        ] {
            let c = SweepAxis::Compression.apply(&b, v).unwrap();
            assert_eq!(c.replicator.top_k, k);
            c.validate().unwrap();
        }
        assert!(SweepAxis::Compression.apply(&b, "1/64").is_err());
    }

    #[test]
    fn bandwidth_axis_is_megabits() {
        let c = SweepAxis::Bandwidth.apply(&base(), "10").unwrap();
        assert_eq!(c.link.inter_node_bandwidth, 1e7);
    }

    #[test]
    fn failing_point_is_recorded_and_sweep_continues() {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<String> = ["1/4", "1/64", "1/8"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let r = sweep(&base(), SweepAxis::Compression, &values, dir.path()).unwrap();
        assert_eq!(r.failures(), 1);
        assert!(r.points[1].status.starts_with("failed"));
        assert!(dir.path().join("compression=1_8/metrics.csv").exists());
        let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("compression,status"));
    }
}
