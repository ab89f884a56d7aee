//! Validation metrics and the experiment harnesses built on them.
//!
//! The confusion matrix is indexed `[predicted][true]`: rows are predicted
//! classes and columns are true classes, so precision is a row statistic and
//! recall a column statistic.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoder::EncoderMode;
use crate::error::{Error, Result};
use crate::model::{argmax, loss_from_true_class_probs, sample_shots, Model, ModelConfig, ModelParams};
use crate::noise::{noisy_error_rate, NoisyErrorRate};
use crate::seed;
use crate::train::{train_from, TrainConfig, TrainReport};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    /// From rows of counts (`rows[predicted][true]`).
    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::shape("ConfusionMatrix", format!("{n}x{n}"), "ragged rows"));
        }
        Ok(Self { counts: rows })
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, predicted: usize, truth: usize) {
        self.counts[predicted][truth] += 1;
    }

    pub fn count(&self, predicted: usize, truth: usize) -> u64 {
        self.counts[predicted][truth]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn error_rate(&self) -> f64 {
        (self.total() - self.trace()) as f64 / self.total() as f64
    }

    /// Per predicted class, percent: `counts[i][i] / Σ_j counts[i][j]`.
    /// Classes never predicted get `NaN`.
    pub fn precision(&self) -> Vec<f64> {
        (0..self.n_classes())
            .map(|i| {
                let row: u64 = self.counts[i].iter().sum();
                100.0 * self.counts[i][i] as f64 / row as f64
            })
            .collect()
    }

    /// Per true class, percent: `counts[j][j] / Σ_i counts[i][j]`.
    pub fn recall(&self) -> Vec<f64> {
        (0..self.n_classes())
            .map(|j| {
                let col: u64 = self.counts.iter().map(|r| r[j]).sum();
                100.0 * self.counts[j][j] as f64 / col as f64
            })
            .collect()
    }

    /// Counts with precision as the last column and recall as the last row.
    pub fn write_csv(&self, path: &Path, class_names: &[String]) -> Result<()> {
        let n = self.n_classes();
        let name = |i: usize| class_names.get(i).cloned().unwrap_or_else(|| i.to_string());
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "predicted\\true")?;
        for j in 0..n {
            write!(w, ",{}", name(j))?;
        }
        writeln!(w, ",precision")?;
        for (i, (row, p)) in self.counts.iter().zip(self.precision()).enumerate() {
            write!(w, "{}", name(i))?;
            for c in row {
                write!(w, ",{c}")?;
            }
            writeln!(w, ",{p:.1}")?;
        }
        write!(w, "recall")?;
        for r in self.recall() {
            write!(w, ",{r:.1}")?;
        }
        writeln!(w, ",{:.1}", 100.0 * self.trace() as f64 / self.total() as f64)?;
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub error_rate: f64,
    pub confusion: ConfusionMatrix,
}

fn summarize(n_classes: usize, rows: &[(f64, usize, usize)]) -> Evaluation {
    let mut confusion = ConfusionMatrix::new(n_classes);
    for &(_, pred, truth) in rows {
        confusion.record(pred, truth);
    }
    let probs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    Evaluation {
        loss: loss_from_true_class_probs(&probs),
        error_rate: confusion.error_rate(),
        confusion,
    }
}

/// Empirical loss, error rate and confusion matrix over `dataset` with
/// exact readout probabilities.
pub fn evaluate(model: &Model, params: &ModelParams, dataset: &Dataset) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let rows = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let s = dataset.sample(i);
            model.check_label(s.label)?;
            let p = model.forward(params, s.x, None)?;
            Ok((p[s.label], argmax(&p), s.label))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(model.config().n_classes, &rows))
}

/// As [`evaluate`], with every probability vector replaced by a
/// `shots`-sample estimate before prediction and loss.
pub fn evaluate_with_shots(
    model: &Model,
    params: &ModelParams,
    dataset: &Dataset,
    shots: u64,
    seed: u64,
) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let rows = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let s = dataset.sample(i);
            model.check_label(s.label)?;
            let exact = model.forward(params, s.x, None)?;
            let mut rng = seed::rng(seed, &[seed::SHOTS_DOMAIN, i as u64]);
            let p = sample_shots(&exact, shots, &mut rng)?;
            Ok((p[s.label], argmax(&p), s.label))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(model.config().n_classes, &rows))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationVariant {
    /// Encoder and inference pulses trained together.
    Joint,
    /// Random encoder weights held fixed; only inference pulses train.
    FixedRandomW,
    /// No inference periods (`M = M₀`).
    EncoderOnly,
    /// Encoder weights taken from an encoder-only run and frozen; inference
    /// pulses trained.
    PretrainedW,
    /// Squashing nonlinearity replaced by clamping.
    LinearClipped,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::Joint,
        AblationVariant::FixedRandomW,
        AblationVariant::EncoderOnly,
        AblationVariant::PretrainedW,
        AblationVariant::LinearClipped,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Joint => "joint",
            AblationVariant::FixedRandomW => "fixed-random-w",
            AblationVariant::EncoderOnly => "encoder-only",
            AblationVariant::PretrainedW => "pretrained-w",
            AblationVariant::LinearClipped => "linear-clipped",
        }
    }

    /// Model and training configuration for this variant.
    pub fn configure(self, cfg: &ModelConfig, tcfg: &TrainConfig) -> (ModelConfig, TrainConfig) {
        let mut cfg = cfg.clone();
        let mut tcfg = tcfg.clone();
        match self {
            AblationVariant::Joint => {}
            AblationVariant::FixedRandomW | AblationVariant::PretrainedW => tcfg.freeze_w = true,
            AblationVariant::EncoderOnly => cfg.total_periods = cfg.encode_periods,
            AblationVariant::LinearClipped => tcfg.encoder_mode = EncoderMode::LinearClipped,
        }
        (cfg, tcfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub seed: u64,
    pub val_loss: f64,
    pub val_error: f64,
    pub iterations: usize,
}

/// Trains one variant at one seed and evaluates it on `val_set`.
pub fn run_ablation(
    variant: AblationVariant,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
) -> Result<(AblationRow, ModelParams, TrainReport)> {
    let (vcfg, vtcfg) = variant.configure(cfg, tcfg);
    let model = Model::new(vcfg.clone())?;
    let mut init = ModelParams::init(&vcfg, vtcfg.encoder_mode, vtcfg.seed)?;
    if variant == AblationVariant::PretrainedW {
        let (_, pre, _) = run_ablation(AblationVariant::EncoderOnly, cfg, tcfg, train_set, val_set)?;
        init.encoder = pre.encoder;
    }
    let run = train_from(&model, &vtcfg, init, train_set, val_set, None)?;
    let eval = evaluate(&model, &run.params, val_set)?;
    let row = AblationRow {
        variant,
        seed: vtcfg.seed,
        val_loss: eval.loss,
        val_error: eval.error_rate,
        iterations: run.report.iterations.len(),
    };
    Ok((row, run.params, run.report))
}

/// Every variant at every seed, under identical iteration budgets.
pub fn ablation_suite(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    variants: &[AblationVariant],
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &s in seeds {
        let tcfg = TrainConfig {
            seed: s,
            ..tcfg.clone()
        };
        for &v in variants {
            rows.push(run_ablation(v, cfg, &tcfg, train_set, val_set)?.0);
        }
    }
    Ok(rows)
}

pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "variant,seed,iterations,val_loss,val_error")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.variant.name(),
            r.seed,
            r.iterations,
            r.val_loss,
            r.val_error
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub delta: f64,
    pub clean_trained: NoisyErrorRate,
    pub noise_trained: NoisyErrorRate,
}

/// Noisy error rate of a clean-trained and a noise-trained model at every
/// noise level in `deltas` (ascending), with matching noise streams.
pub fn noise_sweep(
    model: &Model,
    params_clean: &ModelParams,
    params_noisy: &ModelParams,
    dataset: &Dataset,
    deltas: &[f64],
    repetitions: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if deltas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("noise levels must be ascending".into()));
    }
    deltas
        .iter()
        .map(|&delta| {
            Ok(SweepPoint {
                delta,
                clean_trained: noisy_error_rate(model, params_clean, dataset, delta, repetitions, seed)?,
                noise_trained: noisy_error_rate(model, params_noisy, dataset, delta, repetitions, seed)?,
            })
        })
        .collect()
}

pub fn write_sweep_csv(points: &[SweepPoint], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "delta_mhz,clean_trained_error,clean_trained_stderr,noise_trained_error,noise_trained_stderr"
    )?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{}",
            p.delta,
            p.clean_trained.error_rate,
            p.clean_trained.std_error,
            p.noise_trained.error_rate,
            p.noise_trained.std_error
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_row_precision() {
        let mut rows = vec![vec![0u64; 8]; 8];
        rows[0] = vec![967, 4, 2, 0, 2, 4, 1, 0];
        for (i, row) in rows.iter_mut().enumerate().skip(1) {
            row[i] = 1;
        }
        let cm = ConfusionMatrix::from_rows(rows).unwrap();
        assert!((cm.precision()[0] - 98.7).abs() < 0.05);
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let mut cm = ConfusionMatrix::new(8);
        for c in 0..8 {
            for _ in 0..5 {
                cm.record(c, c);
            }
        }
        assert_eq!(cm.error_rate(), 0.0);
        assert_eq!(cm.total(), 40);
        let mut cm = ConfusionMatrix::new(8);
        for c in 0..8 {
            for _ in 0..5 {
                cm.record(0, c);
            }
        }
        assert!((cm.error_rate() - 7.0 / 8.0).abs() < 1e-15);
        assert_eq!(cm.recall()[0], 100.0);
        assert_eq!(cm.precision()[0], 12.5);
    }

    #[test]
    fn encoder_only_sets_m_to_m0() {
        let cfg = ModelConfig::mnist(3, 10, 10).unwrap();
        let (c, _) = AblationVariant::EncoderOnly.configure(&cfg, &TrainConfig::default());
        assert_eq!(c.total_periods, c.encode_periods);
        let (_, t) = AblationVariant::FixedRandomW.configure(&cfg, &TrainConfig::default());
        assert!(t.freeze_w && !t.freeze_infer);
        let (_, t) = AblationVariant::LinearClipped.configure(&cfg, &TrainConfig::default());
        assert_eq!(t.encoder_mode, EncoderMode::LinearClipped);
    }

    #[test]
    fn ragged_confusion_rejected() {
        assert!(ConfusionMatrix::from_rows(vec![vec![1, 2], vec![3]]).is_err());
    }
}
