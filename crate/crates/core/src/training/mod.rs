//! Optimization loop with early stopping, evaluation, the naive baseline,
//! and the four-variant ablation runner.

mod adam;
mod report;

pub use adam::{adam_step, AdamState};
pub use report::{ablation_table, EpochRecord, RunReport};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    chronological_split, make_windows, mae, mse, Scaler, TimeSeriesDataset, WindowSample,
};
use crate::error::{Error, Result};
use crate::model::{
    forward_graph, AblationVariant, ForwardMode, ForwardStats, ModelConfig, WDformerParameters,
};
use crate::numerics::{Tape, Tensor};

/// Metric space for reported test metrics. Training always optimizes the
/// standardized series; `Unscaled` converts predictions and targets back to
/// original data units before computing MSE/MAE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EvalSpace {
    Scaled,
    Unscaled,
}

impl EvalSpace {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalSpace::Scaled => "scaled",
            EvalSpace::Unscaled => "unscaled",
        }
    }
}

impl std::str::FromStr for EvalSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaled" => Ok(EvalSpace::Scaled),
            "unscaled" => Ok(EvalSpace::Unscaled),
            other => Err(Error::Usage(format!(
                "unknown eval space {other:?} (expected scaled or unscaled)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub early_stop_patience: usize,
    pub gradient_clip_norm: Option<f64>,
    pub seed: u64,
    pub eval_space: EvalSpace,
    pub split_ratios: (f64, f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            early_stop_patience: 3,
            gradient_clip_norm: None,
            seed: 0,
            eval_space: EvalSpace::Scaled,
            split_ratios: (7.0, 1.0, 2.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("train.epochs must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            problems.push("train.batch_size must be >= 1".to_string());
        }
        if self.learning_rate <= 0.0 {
            problems.push(format!("train.lr ({}) must be > 0", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            problems.push("train.beta1/beta2 must be in [0, 1)".to_string());
        }
        if self.eps <= 0.0 {
            problems.push("train.eps must be > 0".to_string());
        }
        if let Some(c) = self.gradient_clip_norm {
            if c <= 0.0 {
                problems.push("train.clip_norm must be > 0 when set".to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Divergence guard: losses above this abort training.
const DIVERGENCE_LIMIT: f64 = 1e6;

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: WDformerParameters,
    pub scaler: Scaler,
    pub report: RunReport,
    pub variant: AblationVariant,
}

/// Standardized windows for all three segments.
struct PreparedData {
    scaler: Scaler,
    train: Vec<WindowSample>,
    val: Vec<WindowSample>,
    test: Vec<WindowSample>,
}

fn prepare(
    dataset: &TimeSeriesDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<PreparedData> {
    if dataset.variates() != model_cfg.variates {
        return Err(Error::config(format!(
            "dataset has {} variates but model.variates = {}",
            dataset.variates(),
            model_cfg.variates
        )));
    }
    let split = chronological_split(&dataset.values, train_cfg.split_ratios)?;
    let scaler = Scaler::fit(&split.train, &dataset.variate_names)?;
    let (k, f) = (model_cfg.lookback, model_cfg.horizon);
    let train = make_windows(&scaler.transform_columns(&split.train), k, f, 1);
    let val = make_windows(&scaler.transform_columns(&split.val), k, f, 1);
    let test = make_windows(&scaler.transform_columns(&split.test), k, f, 1);
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::config(format!(
            "split segments too short for one K={k}, F={f} window \
             (train/val/test windows: {}/{}/{})",
            train.len(),
            val.len(),
            test.len()
        )));
    }
    Ok(PreparedData {
        scaler,
        train,
        val,
        test,
    })
}

/// Mean scaled-space MSE over windows, evaluation mode.
fn validation_loss(
    params: &WDformerParameters,
    cfg: &ModelConfig,
    variant: AblationVariant,
    windows: &[WindowSample],
) -> Result<f64> {
    let mut total = 0.0;
    for w in windows {
        let pred = crate::model::forward_ablated(&w.x, params, cfg, variant)?;
        total += mse(&pred, &w.y)?;
    }
    Ok(total / windows.len() as f64)
}

/// Test metrics in the requested space.
pub fn evaluate(
    params: &WDformerParameters,
    cfg: &ModelConfig,
    variant: AblationVariant,
    windows: &[WindowSample],
    scaler: &Scaler,
    space: EvalSpace,
) -> Result<(f64, f64)> {
    if windows.is_empty() {
        return Err(Error::config("no windows to evaluate"));
    }
    let mut total_mse = 0.0;
    let mut total_mae = 0.0;
    for w in windows {
        let pred = crate::model::forward_ablated(&w.x, params, cfg, variant)?;
        let (p, t) = match space {
            EvalSpace::Scaled => (pred, w.y.clone()),
            EvalSpace::Unscaled => (scaler.inverse_rows(&pred), scaler.inverse_rows(&w.y)),
        };
        total_mse += mse(&p, &t)?;
        total_mae += mae(&p, &t)?;
    }
    let n = windows.len() as f64;
    Ok((total_mse / n, total_mae / n))
}

/// Trains one variant: minimizes scaled-space MSE, early-stops on validation
/// loss, restores the best checkpoint, and evaluates the test segment.
pub fn train(
    dataset: &TimeSeriesDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    variant: AblationVariant,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    let data = prepare(dataset, model_cfg, train_cfg)?;

    let mut params = WDformerParameters::init(model_cfg, variant)?;
    let mut adam = AdamState::new(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed.wrapping_add(1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed.wrapping_add(2));

    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = params.clone();
    let mut bad_epochs = 0usize;
    let mut stopped_early = false;

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=train_cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(train_cfg.batch_size) {
            let loss = train_batch(
                &mut params,
                &mut adam,
                model_cfg,
                train_cfg,
                variant,
                &data.train,
                batch,
                &mut dropout_rng,
            )?;
            epoch_loss += loss * batch.len() as f64;
            seen += batch.len();
        }
        let train_mse = epoch_loss / seen as f64;
        let val_mse = validation_loss(&params, model_cfg, variant, &data.val)?;
        epochs.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
            seconds: started.elapsed().as_secs_f64(),
        });

        if val_mse < best_val {
            best_val = val_mse;
            best_epoch = epoch;
            best_params = params.clone();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > train_cfg.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }

    let params = best_params;
    let (test_mse, test_mae) = evaluate(
        &params,
        model_cfg,
        variant,
        &data.test,
        &data.scaler,
        train_cfg.eval_space,
    )?;

    Ok(TrainOutcome {
        report: RunReport {
            variant,
            dataset: dataset.name.clone(),
            model: model_cfg.clone(),
            train: train_cfg.clone(),
            epochs,
            best_epoch,
            best_val_mse: best_val,
            stopped_early,
            test_mse,
            test_mae,
        },
        params,
        scaler: data.scaler,
        variant,
    })
}

/// One optimization step over a batch of window indices: builds a shared
/// tape, averages the per-window losses, and applies Adam.
#[allow(clippy::too_many_arguments)]
fn train_batch(
    params: &mut WDformerParameters,
    adam: &mut AdamState,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    variant: AblationVariant,
    windows: &[WindowSample],
    batch: &[usize],
    dropout_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let mut stats = ForwardStats::default();
    let mut losses = Vec::with_capacity(batch.len());
    for &idx in batch {
        let w = &windows[idx];
        let y = forward_graph(
            &mut tape,
            &w.x,
            &vars,
            model_cfg,
            variant,
            &mut ForwardMode::Train { rng: dropout_rng },
            &mut stats,
        )?;
        let target = tape.constant(w.y.clone());
        losses.push(tape.mse_loss(y, target)?);
    }
    let loss = tape.mean_scalars(&losses)?;
    let loss_value = tape.value(loss).values()[0];
    if !loss_value.is_finite() || loss_value > DIVERGENCE_LIMIT {
        return Err(Error::Numeric(format!(
            "training diverged: batch loss {loss_value} exceeds {DIVERGENCE_LIMIT}"
        )));
    }
    let grads = tape.backward(loss)?;
    let grad_tensors = vars.gradients(&grads, params);
    adam_step(params, &grad_tensors, adam, train_cfg)?;
    Ok(loss_value)
}

/// Repeat-last-value forecast for one lookback window.
pub fn naive_forecast(window_x: &Tensor, horizon: usize) -> Tensor {
    let (n, k) = (window_x.rows(), window_x.cols());
    let mut values = Vec::with_capacity(n * horizon);
    for i in 0..n {
        let last = window_x.get2(i, k - 1);
        values.extend(std::iter::repeat(last).take(horizon));
    }
    Tensor::matrix(n, horizon, values).expect("forecast shape")
}

/// Naive repeat-last-value baseline over the test segment, using the same
/// split protocol and metric space as [`evaluate`].
pub fn naive_baseline(
    dataset: &TimeSeriesDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let split = chronological_split(&dataset.values, train_cfg.split_ratios)?;
    let (k, f) = (model_cfg.lookback, model_cfg.horizon);
    let test = match train_cfg.eval_space {
        EvalSpace::Scaled => {
            let scaler = Scaler::fit(&split.train, &dataset.variate_names)?;
            make_windows(&scaler.transform_columns(&split.test), k, f, 1)
        }
        EvalSpace::Unscaled => make_windows(&split.test, k, f, 1),
    };
    if test.is_empty() {
        return Err(Error::config(format!(
            "test segment too short for one K={k}, F={f} window"
        )));
    }
    let mut total_mse = 0.0;
    let mut total_mae = 0.0;
    for w in &test {
        let pred = naive_forecast(&w.x, f);
        total_mse += mse(&pred, &w.y)?;
        total_mae += mae(&pred, &w.y)?;
    }
    let n = test.len() as f64;
    Ok((total_mse / n, total_mae / n))
}

/// Trains all four variants under an identical protocol. Each variant owns
/// its own PRNG stream (base seed + variant offset); `max_threads` caps how
/// many run concurrently.
pub fn run_ablation(
    dataset: &TimeSeriesDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    max_threads: usize,
) -> Result<Vec<TrainOutcome>> {
    let max_threads = max_threads.max(1);
    let jobs: Vec<(usize, AblationVariant)> = AblationVariant::ALL
        .iter()
        .copied()
        .enumerate()
        .collect();
    let mut outcomes: Vec<Option<TrainOutcome>> = (0..jobs.len()).map(|_| None).collect();
    for chunk in jobs.chunks(max_threads) {
        let results: Vec<(usize, Result<TrainOutcome>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|(idx, variant)| {
                    let idx = *idx;
                    let variant = *variant;
                    scope.spawn(move || {
                        let offset = idx as u64;
                        let m = ModelConfig {
                            seed: model_cfg.seed.wrapping_add(offset),
                            ..model_cfg.clone()
                        };
                        let t = TrainConfig {
                            seed: train_cfg.seed.wrapping_add(offset),
                            ..train_cfg.clone()
                        };
                        (idx, train(dataset, &m, &t, variant))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("ablation worker panicked"))
                .collect()
        });
        for (idx, result) in results {
            outcomes[idx] = Some(result?);
        }
    }
    Ok(outcomes.into_iter().map(|o| o.expect("all variants ran")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_forecast_closed_forms() {
        // constant series: perfect forecast
        let x = Tensor::matrix(2, 4, vec![3.0; 8]).unwrap();
        let y = naive_forecast(&x, 5);
        assert!(y.values().iter().all(|v| *v == 3.0));

        // pure linear trend with slope m and step Δ: MAE = m·Δ·(F+1)/2
        let (m, delta, k, f) = (0.5f64, 1.0f64, 6usize, 8usize);
        let series: Vec<f64> = (0..k + f).map(|i| m * delta * i as f64).collect();
        let x = Tensor::matrix(1, k, series[..k].to_vec()).unwrap();
        let truth = Tensor::matrix(1, f, series[k..].to_vec()).unwrap();
        let pred = naive_forecast(&x, f);
        let got_mae = mae(&pred, &truth).unwrap();
        let want = m * delta * (f as f64 + 1.0) / 2.0;
        assert!((got_mae - want).abs() < 1e-12, "{got_mae} vs {want}");
    }
}
