//! Imitation training: dataset split, mini-batch Adam, validation and
//! best-checkpoint selection.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vcplan_numerics::{Adam, AdamConfig, Array, Tape};

use crate::checkpoint::save_checkpoint;
use crate::error::{CoreError, Result};
use crate::objective::{total_loss_var, LossBreakdown, LossWeights};
use crate::planner::{build_element_batch, Net, Parameters};
use crate::scenario::Scenario;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub split_ratio: f64,
    /// Snapshot the current parameters every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Progress callback cadence in epochs; 0 disables.
    pub log_every: usize,
    /// Worker threads for per-scenario gradients; results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            seed: 0,
            learning_rate: 1e-3,
            split_ratio: 0.8,
            checkpoint_every: 0,
            log_every: 1,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(CoreError::validation(
                "split_ratio",
                "must lie strictly between 0 and 1",
            ));
        }
        if self.batch_size == 0 {
            return Err(CoreError::validation("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(CoreError::validation(
                "learning_rate",
                "must be non-negative",
            ));
        }
        if self.threads == 0 {
            return Err(CoreError::validation("threads", "must be at least 1"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// Seeded shuffle, then the first `⌈ratio·N⌉` go to training. The training
/// share is capped at `N − 1` so validation is never empty.
pub fn split_dataset(
    scenarios: &[Scenario],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<Scenario>, Vec<Scenario>)> {
    if scenarios.len() < 2 {
        return Err(CoreError::Contract(format!(
            "splitting needs at least 2 scenarios, got {}",
            scenarios.len()
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CoreError::validation(
            "split_ratio",
            "must lie strictly between 0 and 1",
        ));
    }
    let n = scenarios.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * n as f64).ceil() as usize).clamp(1, n - 1);
    let pick = |idx: &[usize]| idx.iter().map(|&i| scenarios[i].clone()).collect();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

/// Loss of one scenario and, when `with_grad`, the gradient of its total
/// loss with respect to every parameter tensor.
pub fn scenario_loss(
    params: &Parameters,
    scenario: &Scenario,
    weights: &LossWeights,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<Vec<Array>>)> {
    let ctx = |e| CoreError::in_scenario(&scenario.id, e);
    let elements = build_element_batch(scenario, &params.config).map_err(ctx)?;
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, with_grad);
    let trace = Net::new(params, &vars)
        .forward(&mut tape, &elements)
        .map_err(ctx)?;
    let nodes = total_loss_var(&mut tape, trace.trajectory, scenario, weights).map_err(ctx)?;
    let loss = LossBreakdown::read(&tape, &nodes);
    if !loss.total.is_finite() {
        return Err(CoreError::Training(format!(
            "non-finite loss {} on scenario {}",
            loss.total, scenario.id
        )));
    }
    if !with_grad {
        return Ok((loss, None));
    }
    tape.backward(nodes.total).map_err(|e| ctx(e.into()))?;
    Ok((loss, Some(vars.iter().map(|&v| tape.grad(v)).collect())))
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CoreError::Contract(format!("thread pool: {e}")))
}

/// Per-scenario results in input order, computed on `threads` workers.
fn per_scenario(
    params: &Parameters,
    scenarios: &[&Scenario],
    weights: &LossWeights,
    with_grad: bool,
    threads: usize,
) -> Result<Vec<(LossBreakdown, Option<Vec<Array>>)>> {
    let run = |s: &&Scenario| scenario_loss(params, s, weights, with_grad);
    if threads <= 1 {
        scenarios.iter().map(run).collect()
    } else {
        pool(threads)?.install(|| scenarios.par_iter().map(run).collect())
    }
}

/// Mean loss breakdown over a set, forward only.
pub fn evaluate_loss(
    params: &Parameters,
    scenarios: &[Scenario],
    weights: &LossWeights,
    threads: usize,
) -> Result<LossBreakdown> {
    if scenarios.is_empty() {
        return Err(CoreError::Contract("empty evaluation set".into()));
    }
    let refs: Vec<&Scenario> = scenarios.iter().collect();
    let mut sum = LossBreakdown::default();
    for (loss, _) in per_scenario(params, &refs, weights, false, threads)? {
        sum.add(&loss);
    }
    Ok(sum.scaled(1.0 / scenarios.len() as f64))
}

/// One pass over `train` in seeded-shuffled batches, one Adam step per batch
/// with gradients averaged over the batch. Returns the mean loss over the
/// epoch, summed in input order.
pub fn train_epoch(
    params: &mut Parameters,
    adam: &mut Adam,
    train: &[Scenario],
    config: &TrainConfig,
    weights: &LossWeights,
    rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown> {
    if train.is_empty() {
        return Err(CoreError::Contract("empty training set".into()));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let mut losses = vec![LossBreakdown::default(); train.len()];
    for batch in order.chunks(config.batch_size) {
        let refs: Vec<&Scenario> = batch.iter().map(|&i| &train[i]).collect();
        let results = per_scenario(params, &refs, weights, true, config.threads)?;
        let mut grads: Vec<Array> = params
            .tensors
            .iter()
            .map(|t| Array::zeros(t.shape()))
            .collect();
        let inv = 1.0 / batch.len() as f64;
        for (&i, (loss, g)) in batch.iter().zip(results) {
            losses[i] = loss;
            for (acc, g) in grads.iter_mut().zip(g.expect("gradients requested")) {
                for (a, x) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += x * inv;
                }
            }
        }
        adam.step(&mut params.tensors, &grads, &params.names)
            .map_err(|e| CoreError::Training(e.to_string()))?;
        if !params.is_finite() {
            return Err(CoreError::Training("parameters became non-finite".into()));
        }
    }
    let mut sum = LossBreakdown::default();
    for l in &losses {
        sum.add(l);
    }
    Ok(sum.scaled(1.0 / train.len() as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Validation breakdown.
    pub l1: f64,
    pub comfort: f64,
    pub safety: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
}

impl TrainReport {
    pub const HEADER: &'static str = "epoch,train_loss,val_loss,l1,comfort,safety,seconds";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch, r.train_loss, r.val_loss, r.l1, r.comfort, r.safety, r.seconds
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| CoreError::io(path, e))
    }

    pub fn best(&self) -> Option<&EpochRow> {
        self.rows
            .iter()
            .fold(None, |best: Option<&EpochRow>, r| match best {
                Some(b) if b.val_loss <= r.val_loss => Some(b),
                _ => Some(r),
            })
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Parameters after the last epoch.
    pub last: Parameters,
    /// Parameters with the lowest validation loss (the initialization when no
    /// epoch ran).
    pub best: Parameters,
    pub best_epoch: Option<usize>,
    pub report: TrainReport,
    pub train_set: Vec<Scenario>,
    pub validation_set: Vec<Scenario>,
}

/// Where `fit` writes parameters. The best checkpoint is written before the
/// first epoch (so a bad path fails fast) and again whenever validation
/// improves; snapshots go next to it as `<stem>.epoch<N>.<ext>`.
#[derive(Clone, Debug, Default)]
pub struct CheckpointTarget {
    pub best: Option<PathBuf>,
}

impl CheckpointTarget {
    fn snapshot_path(&self, epoch: usize) -> Option<PathBuf> {
        let best = self.best.as_ref()?;
        let stem = best
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let name = match best.extension() {
            Some(ext) => format!("{stem}.epoch{epoch}.{}", ext.to_string_lossy()),
            None => format!("{stem}.epoch{epoch}"),
        };
        Some(best.with_file_name(name))
    }
}

/// Splits, trains for `config.epochs` and tracks the best validation loss.
/// `progress` sees every `log_every`-th row.
pub fn fit(
    scenarios: &[Scenario],
    init: Parameters,
    config: &TrainConfig,
    weights: &LossWeights,
    target: &CheckpointTarget,
    mut progress: impl FnMut(&EpochRow),
) -> Result<FitOutcome> {
    config.validate()?;
    weights.validate()?;
    let (train, validation) = split_dataset(scenarios, config.split_ratio, config.seed)?;
    if let Some(path) = &target.best {
        save_checkpoint(&init, path)?;
    }
    let mut params = init;
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = None;
    let mut adam = Adam::new(config.adam(), &params.tensors);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut report = TrainReport::default();

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let train_loss = train_epoch(&mut params, &mut adam, &train, config, weights, &mut rng)?;
        let val = evaluate_loss(&params, &validation, weights, config.threads)?;
        let row = EpochRow {
            epoch,
            train_loss: train_loss.total,
            val_loss: val.total,
            l1: val.l1,
            comfort: val.comfort,
            safety: val.safety,
            seconds: start.elapsed().as_secs_f64(),
        };
        if val.total < best_val {
            best_val = val.total;
            best = params.clone();
            best_epoch = Some(epoch);
            if let Some(path) = &target.best {
                save_checkpoint(&best, path)?;
            }
        }
        if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
            if let Some(path) = target.snapshot_path(epoch) {
                save_checkpoint(&params, path)?;
            }
        }
        if config.log_every > 0 && epoch % config.log_every == 0 {
            progress(&row);
        }
        report.rows.push(row);
    }
    Ok(FitOutcome {
        last: params,
        best,
        best_epoch,
        report,
        train_set: train,
        validation_set: validation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate_scenario, ScenarioKind};
    use crate::planner::PlannerConfig;

    fn data(n: usize) -> Vec<Scenario> {
        (0..n as u64)
            .map(|s| generate_scenario(ScenarioKind::ALL[s as usize % 4], s))
            .collect()
    }

    #[test]
    fn split_examples() {
        let d = data(10);
        let (t, v) = split_dataset(&d, 0.8, 3).unwrap();
        assert_eq!((t.len(), v.len()), (8, 2));
        let (t2, v2) = split_dataset(&d, 0.8, 3).unwrap();
        assert_eq!((t, v), (t2, v2));
        assert!(split_dataset(&d[..1], 0.8, 0).is_err());
    }

    #[test]
    fn split_keeps_validation_nonempty() {
        let d = data(2);
        let (t, v) = split_dataset(&d, 0.9, 0).unwrap();
        assert_eq!((t.len(), v.len()), (1, 1));
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let d = data(3);
        let params = Parameters::init(&PlannerConfig::tiny()).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let w = LossWeights::default();
        let mut p = params.clone();
        let mut adam = Adam::new(cfg.adam(), &p.tensors);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = train_epoch(&mut p, &mut adam, &d, &cfg, &w, &mut rng).unwrap();
        let b = train_epoch(&mut p, &mut adam, &d, &cfg, &w, &mut rng).unwrap();
        assert_eq!(p, params);
        assert_eq!(a, b);
        assert!(a.total > 0.0);
    }

    #[test]
    fn zero_epochs_returns_init() {
        let d = data(4);
        let init = Parameters::init(&PlannerConfig::tiny()).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = fit(
            &d,
            init.clone(),
            &cfg,
            &LossWeights::default(),
            &CheckpointTarget::default(),
            |_| {},
        )
        .unwrap();
        assert!(out.report.rows.is_empty());
        assert_eq!(out.best, init);
        assert_eq!(out.report.to_csv(), format!("{}\n", TrainReport::HEADER));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let d = data(6);
        let init = Parameters::init(&PlannerConfig::tiny()).unwrap();
        let w = LossWeights::default();
        let run = |threads| {
            let cfg = TrainConfig {
                epochs: 2,
                batch_size: 3,
                threads,
                ..TrainConfig::default()
            };
            fit(
                &d,
                init.clone(),
                &cfg,
                &w,
                &CheckpointTarget::default(),
                |_| {},
            )
            .unwrap()
        };
        let (a, b) = (run(1), run(3));
        assert_eq!(a.last, b.last);
        for (x, y) in a.report.rows.iter().zip(&b.report.rows) {
            assert_eq!((x.train_loss, x.val_loss), (y.train_loss, y.val_loss));
        }
    }

    #[test]
    fn snapshot_names() {
        let t = CheckpointTarget {
            best: Some(PathBuf::from("/tmp/run/model.ckpt")),
        };
        assert_eq!(
            t.snapshot_path(5).unwrap(),
            PathBuf::from("/tmp/run/model.epoch5.ckpt")
        );
    }
}
