//! Run reports with a canonical deterministic text form.
//!
//! Wall-clock timings are kept on the struct for logging but excluded from
//! the canonical serialization, so two runs with the same seed and config
//! produce byte-identical report files.

use crate::model::{AblationVariant, ModelConfig};

use super::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    /// Wall-clock seconds; excluded from the canonical text.
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub variant: AblationVariant,
    pub dataset: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
    pub test_mse: f64,
    pub test_mae: f64,
}

impl RunReport {
    /// Deterministic key/value + per-epoch table serialization.
    pub fn to_canonical_text(&self) -> String {
        let mut s = String::new();
        s.push_str("wdformer run report v1\n");
        s.push_str(&format!("variant = {}\n", self.variant.as_str()));
        s.push_str(&format!("dataset = {}\n", self.dataset));
        let m = &self.model;
        s.push_str(&format!("model.lookback = {}\n", m.lookback));
        s.push_str(&format!("model.horizon = {}\n", m.horizon));
        s.push_str(&format!("model.variates = {}\n", m.variates));
        s.push_str(&format!("model.levels = {}\n", m.levels));
        s.push_str(&format!("model.dim = {}\n", m.dim));
        s.push_str(&format!("model.heads = {}\n", m.heads));
        s.push_str(&format!("model.layers = {}\n", m.layers));
        s.push_str(&format!("model.ffn_dim = {}\n", m.ffn_dim));
        s.push_str(&format!("model.dropout = {}\n", m.dropout));
        s.push_str(&format!("model.wavelet = {}\n", m.wavelet.as_str()));
        s.push_str(&format!("model.instance_norm = {}\n", m.instance_norm));
        s.push_str(&format!("model.auto_pad = {}\n", m.auto_pad));
        s.push_str(&format!("model.seed = {}\n", m.seed));
        let t = &self.train;
        s.push_str(&format!("train.epochs = {}\n", t.epochs));
        s.push_str(&format!("train.batch_size = {}\n", t.batch_size));
        s.push_str(&format!("train.lr = {}\n", t.learning_rate));
        s.push_str(&format!("train.beta1 = {}\n", t.beta1));
        s.push_str(&format!("train.beta2 = {}\n", t.beta2));
        s.push_str(&format!("train.eps = {}\n", t.eps));
        s.push_str(&format!("train.patience = {}\n", t.early_stop_patience));
        s.push_str(&format!(
            "train.clip_norm = {}\n",
            t.gradient_clip_norm
                .map(|v| v.to_string())
                .unwrap_or_else(|| "none".into())
        ));
        s.push_str(&format!("train.seed = {}\n", t.seed));
        s.push_str(&format!("train.eval_space = {}\n", t.eval_space.as_str()));
        s.push_str("[epochs]\n");
        s.push_str("epoch train_mse val_mse\n");
        for e in &self.epochs {
            s.push_str(&format!("{} {} {}\n", e.epoch, e.train_mse, e.val_mse));
        }
        s.push_str("[result]\n");
        s.push_str(&format!("epochs_run = {}\n", self.epochs.len()));
        s.push_str(&format!("best_epoch = {}\n", self.best_epoch));
        s.push_str(&format!("best_val_mse = {}\n", self.best_val_mse));
        s.push_str(&format!("stopped_early = {}\n", self.stopped_early));
        s.push_str(&format!("test_mse = {}\n", self.test_mse));
        s.push_str(&format!("test_mae = {}\n", self.test_mae));
        s
    }
}

/// Table-3-shaped comparison: one row per variant, MSE/MAE columns.
pub fn ablation_table(reports: &[RunReport], shared_seed: u64) -> String {
    let mut s = String::new();
    s.push_str("wdformer ablation report v1\n");
    s.push_str(&format!("shared_seed = {shared_seed}\n"));
    if let Some(first) = reports.first() {
        s.push_str(&format!("dataset = {}\n", first.dataset));
        s.push_str(&format!("horizon = {}\n", first.model.horizon));
    }
    s.push_str("variant test_mse test_mae\n");
    for r in reports {
        s.push_str(&format!(
            "{} {} {}\n",
            r.variant.as_str(),
            r.test_mse,
            r.test_mae
        ));
    }
    s
}
