//! Training loop, validation and metric export.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::data::{accelerator_batches, make_dataset, Dataset};
use crate::cluster::{LedgerSummary, Simulator};
use crate::compute::{classification_error, forward_loss, LossKind, ModelKind};
use crate::error::{Error, Result};

/// One row of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub train_loss: f64,
    /// Present on evaluation steps only.
    pub val_loss: Option<f64>,
    pub intra_bytes: u64,
    pub inter_bytes: u64,
    pub sim_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub steps_completed: u64,
    pub diverged: bool,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    /// Misclassification rate on the validation split, classification tasks only.
    pub final_val_error: Option<f64>,
    pub traffic: LedgerSummary,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<StepMetrics>,
    pub summary: RunSummary,
    pub ledger_csv: String,
    /// Set when the run stopped early; `metrics` then holds the completed steps.
    pub failure: Option<String>,
}

/// Learning rate at `step` under linear warm-up over `warmup_fraction × steps`.
pub fn learning_rate_at(cfg: &ExperimentConfig, step: u64) -> f64 {
    let warmup = (cfg.warmup_fraction * cfg.steps as f64).ceil() as u64;
    let lr = cfg.optimizer.learning_rate;
    if step < warmup {
        lr * (step + 1) as f64 / warmup as f64
    } else {
        lr
    }
}

fn is_eval_step(cfg: &ExperimentConfig, step: u64) -> bool {
    (step + 1).is_multiple_of(cfg.eval_every) || step + 1 == cfg.steps
}

/// Runs the full schedule in memory. Divergence is reported in
/// [`RunOutput::failure`], not as an error, so partial metrics survive.
pub fn train(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let data = make_dataset(&cfg.data, cfg.seed)?;
    train_on(cfg, &data)
}

/// [`train`] on a caller-supplied dataset.
pub fn train_on(cfg: &ExperimentConfig, data: &Dataset) -> Result<RunOutput> {
    let model = cfg.build_model()?;
    let init = model.init_params::<f64>(cfg.seed);
    let mut sim = Simulator::new(
        cfg.topology,
        model.clone(),
        cfg.optimizer,
        cfg.replicator,
        cfg.link,
        init,
    )?;
    let mut metrics = Vec::with_capacity(cfg.steps as usize);
    let mut failure = None;
    for step in 0..cfg.steps {
        let batches =
            accelerator_batches(&data.train, &cfg.topology, cfg.batch_size, cfg.seed, step)?;
        let outcome = match sim.step(&batches, step, learning_rate_at(cfg, step)) {
            Ok(o) => o,
            Err(e @ Error::NonFinite(_)) => {
                failure = Some(format!("diverged at step {step}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let val_loss = if is_eval_step(cfg, step) {
            Some(forward_loss(&model, sim.params(0), &data.val)?)
        } else {
            None
        };
        metrics.push(StepMetrics {
            step,
            train_loss: outcome.train_loss,
            val_loss,
            intra_bytes: outcome.traffic.intra_bytes,
            inter_bytes: outcome.traffic.inter_bytes,
            sim_time_s: outcome.traffic.sim_time_s,
        });
        if let Some(v) = val_loss.filter(|v| !v.is_finite()) {
            failure = Some(format!("diverged at step {step}: validation loss {v}"));
            break;
        }
    }
    let final_val_error = if failure.is_none()
        && model.kind() == ModelKind::Mlp
        && model.loss_kind() == LossKind::CrossEntropy
    {
        Some(classification_error(&model, sim.params(0), &data.val)?)
    } else {
        None
    };
    let summary = RunSummary {
        steps_completed: metrics.len() as u64,
        diverged: failure.is_some(),
        final_train_loss: metrics.last().map(|m| m.train_loss),
        final_val_loss: metrics.iter().rev().find_map(|m| m.val_loss),
        final_val_error,
        traffic: sim.ledger().summary(),
        config: cfg.clone(),
    };
    Ok(RunOutput {
        metrics,
        summary,
        ledger_csv: sim.ledger().to_csv(),
        failure,
    })
}

/// Serializes per-step metrics; `val_loss` is blank on non-evaluation steps.
pub fn metrics_csv(metrics: &[StepMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in metrics {
        w.serialize(m).map_err(std::io::Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

impl RunOutput {
    /// Writes `metrics.csv`, `ledger.csv`, `summary.json` and the resolved `config.toml` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut csv = metrics_csv(&self.metrics)?;
        if self.metrics.is_empty() {
            csv = "step,train_loss,val_loss,intra_bytes,inter_bytes,sim_time_s\n".into();
        }
        fs::write(dir.join("metrics.csv"), csv)?;
        fs::write(dir.join("ledger.csv"), &self.ledger_csv)?;
        let json = serde_json::to_string_pretty(&self.summary).map_err(std::io::Error::from)?;
        fs::write(dir.join("summary.json"), json + "\n")?;
        fs::write(dir.join("config.toml"), self.summary.config.to_toml())?;
        Ok(())
    }
}

/// Trains and writes all outputs into `dir`. A diverged run still writes its
/// partial metrics, then returns [`Error::NonFinite`].
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let out = train(cfg)?;
    out.write_to(dir)?;
    match &out.failure {
        Some(msg) => Err(Error::NonFinite(msg.clone())),
        None => Ok(out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;

    fn cfg(extra: &str) -> ExperimentConfig {
        parse_config(&format!(
            r#"
            steps = 30
            eval_every = 10
            batch_size = 4
            {extra}
            [topology]
            nodes = 2
            accels_per_node = 2
            [model]
            kind = "mlp"
            layers = [2, 8, 4]
            [data]
            size = 200
            "#
        ))
        .unwrap()
    }

    #[test]
    fn warmup_is_linear_then_flat() {
        let c = cfg("warmup_fraction = 0.1");
        let lr = c.optimizer.learning_rate;
        assert_eq!(learning_rate_at(&c, 0), lr / 3.0);
        assert_eq!(learning_rate_at(&c, 2), lr);
        assert_eq!(learning_rate_at(&c, 29), lr);
        assert_eq!(learning_rate_at(&cfg(""), 0), lr);
    }

    #[test]
    fn every_step_once_and_time_increasing() {
        let out = train(&cfg("")).unwrap();
        assert!(out.failure.is_none());
        assert_eq!(out.metrics.len(), 30);
        for (i, w) in out.metrics.windows(2).enumerate() {
            assert_eq!(w[0].step, i as u64);
            assert!(w[1].sim_time_s > w[0].sim_time_s);
        }
        let evals: Vec<u64> = out
            .metrics
            .iter()
            .filter(|m| m.val_loss.is_some())
            .map(|m| m.step)
            .collect();
        assert_eq!(evals, vec![9, 19, 29]);
    }

    #[test]
    fn divergence_keeps_partial_metrics() {
        let c = parse_config(
            r#"
            steps = 30
            batch_size = 4
            [topology]
            nodes = 2
            accels_per_node = 2
            [model]
            kind = "quadratic"
            dim = 8
            [optimizer]
            kind = "baseline_sgd"
            learning_rate = 1e100
            momentum_decay = 0.0
            "#,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = run_experiment(&c, dir.path()).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(csv.starts_with("step,train_loss,val_loss"));
        assert!(fs::read_to_string(dir.path().join("summary.json"))
            .unwrap()
            .contains("\"diverged\": true"));
    }
}
