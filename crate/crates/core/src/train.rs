//! Mini-batch stochastic training of the encoder weights and inference
//! pulses.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoder::EncoderMode;
use crate::error::{Error, Result};
use crate::eval;
use crate::grad::{GradMethod, DEFAULT_FD_DELTA_MHZ};
use crate::matrix::RealMatrix;
use crate::model::{Checkpoint, CheckpointMetadata, Model, ModelConfig, ModelParams, Sample};
use crate::noise::{sample_trace, NoiseSpec};
use crate::optim::{Optimizer, OptimizerKind};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub method: GradMethod,
    /// Finite-difference step, MHz.
    pub fd_delta: f64,
    /// Training noise level (standard deviation, MHz); 0 trains clean.
    pub noise_delta: f64,
    pub seed: u64,
    pub smoothing_window: usize,
    pub freeze_w: bool,
    pub freeze_infer: bool,
    pub encoder_mode: EncoderMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            epochs: 5,
            method: GradMethod::Analytic,
            fd_delta: DEFAULT_FD_DELTA_MHZ,
            noise_delta: 0.0,
            seed: 0,
            smoothing_window: 100,
            freeze_w: false,
            freeze_infer: false,
            encoder_mode: EncoderMode::Nonlinear,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.smoothing_window == 0 {
            return Err(Error::Config("smoothing window must be at least 1".into()));
        }
        if self.method.is_finite_difference() && !(self.fd_delta.is_finite() && self.fd_delta > 0.0) {
            return Err(Error::Config("finite-difference step must be positive".into()));
        }
        NoiseSpec::new(self.noise_delta, self.seed, 0)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub raw_loss: f64,
    pub smoothed_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub iterations: usize,
    /// Smoothed training loss after the epoch's last iteration.
    pub smoothed_loss: f64,
    pub val_loss: f64,
    pub val_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: Vec<IterationRecord>,
    pub epochs: Vec<EpochRecord>,
    pub wall_clock_secs: f64,
    /// Per-sample gradient computations.
    pub gradient_evaluations: u64,
    /// Forward evolutions performed while computing gradients.
    pub forward_evaluations: u64,
}

impl TrainReport {
    pub fn initial_smoothed_loss(&self) -> Option<f64> {
        self.iterations.first().map(|r| r.smoothed_loss)
    }

    pub fn final_smoothed_loss(&self) -> Option<f64> {
        self.iterations.last().map(|r| r.smoothed_loss)
    }

    /// `iteration,epoch,raw_loss,smoothed_loss`; floats in shortest
    /// round-trip form so identical runs produce identical bytes.
    pub fn write_iterations_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "iteration,epoch,raw_loss,smoothed_loss")?;
        for r in &self.iterations {
            writeln!(w, "{},{},{},{}", r.iteration, r.epoch, r.raw_loss, r.smoothed_loss)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `epoch,iterations,smoothed_loss,val_loss,val_error`.
    pub fn write_epochs_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "epoch,iterations,smoothed_loss,val_loss,val_error")?;
        for r in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.epoch, r.iterations, r.smoothed_loss, r.val_loss, r.val_error
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub params: ModelParams,
    pub report: TrainReport,
}

/// Forward evaluations needed for one sample's gradient under `method`:
/// one baseline plus one (forward) or two (central) per control amplitude.
/// The analytic route needs a single forward/adjoint sweep.
pub fn measurement_budget(cfg: &ModelConfig, method: GradMethod) -> u64 {
    let controls = (cfg.n_code() + cfg.n_infer()) as u64;
    match method {
        GradMethod::ForwardDifference => controls + 1,
        GradMethod::CentralDifference => 2 * controls + 1,
        GradMethod::Analytic => 1,
    }
}

/// Forward-difference count when every encoder weight is perturbed directly
/// instead of going through the chain rule: `(d+1)·N_code + N_infer + 1`.
pub fn naive_measurement_budget(cfg: &ModelConfig) -> u64 {
    (cfg.input_dim * cfg.n_code() + cfg.n_infer() + 1) as u64
}

/// Trains freshly initialized parameters.
pub fn train(cfg: &ModelConfig, tcfg: &TrainConfig, train_set: &Dataset, val_set: &Dataset) -> Result<TrainRun> {
    let model = Model::new(cfg.clone())?;
    let init = ModelParams::init(cfg, tcfg.encoder_mode, tcfg.seed)?;
    train_from(&model, tcfg, init, train_set, val_set, None)
}

fn smoothed(losses: &[f64], window: usize) -> f64 {
    let tail = &losses[losses.len().saturating_sub(window)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

fn save_checkpoint(
    dir: Option<&Path>,
    name: &str,
    model: &Model,
    params: &ModelParams,
    meta: CheckpointMetadata,
) -> Result<()> {
    if let Some(dir) = dir {
        Checkpoint::new(model.config().clone(), params.clone(), meta).save(&dir.join(name))?;
    }
    Ok(())
}

/// Runs `epochs × ⌈Z/m⌉` iterations starting from `params`. When
/// `checkpoint_dir` is given, a checkpoint is written after every epoch and,
/// on a non-finite loss or gradient, the last finite state is written before
/// the error is returned.
pub fn train_from(
    model: &Model,
    tcfg: &TrainConfig,
    mut params: ModelParams,
    train_set: &Dataset,
    val_set: &Dataset,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainRun> {
    tcfg.validate()?;
    let cfg = model.config();
    params.validate(cfg)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for ds in [train_set, val_set] {
        if ds.dim() != cfg.input_dim {
            return Err(Error::shape("dataset dimension", cfg.input_dim, ds.dim()));
        }
        if let Some(&l) = ds.labels().iter().find(|&&l| l >= cfg.n_classes) {
            return Err(Error::Label {
                label: l,
                classes: cfg.n_classes,
            });
        }
    }

    let start = Instant::now();
    let evals_before = model.forward_evaluations();
    let bound = cfg.bound_mhz;
    let mut optimizer = Optimizer::new(
        tcfg.optimizer,
        tcfg.learning_rate,
        &[params.encoder.weights.as_slice().len(), params.w_infer.as_slice().len()],
    );
    let noise_root = seed::derive(tcfg.seed, &[seed::TRAIN_NOISE_DOMAIN]);
    let meta = |epoch: usize, iteration: usize| CheckpointMetadata {
        seed: tcfg.seed,
        epoch,
        iteration,
        class_digits: train_set.class_digits().to_vec(),
        note: String::new(),
    };

    let mut losses = Vec::new();
    let mut report = TrainReport {
        iterations: Vec::new(),
        epochs: Vec::new(),
        wall_clock_secs: 0.0,
        gradient_evaluations: 0,
        forward_evaluations: 0,
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut iteration = 0usize;

    for epoch in 0..tcfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(tcfg.seed, &[seed::SHUFFLE_DOMAIN, epoch as u64]));
        for chunk in order.chunks(tcfg.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| train_set.sample(i)).collect();
            let traces: Option<Vec<RealMatrix>> = (tcfg.noise_delta > 0.0).then(|| {
                (0..batch.len())
                    .map(|pos| {
                        let spec = NoiseSpec {
                            delta: tcfg.noise_delta,
                            seed: noise_root,
                            stream: (iteration * tcfg.batch_size + pos) as u64,
                        };
                        sample_trace(&spec, cfg.total_periods, cfg.spec.n_qubits())
                    })
                    .collect()
            });
            let lg = match model.loss_gradient(&params, &batch, tcfg.method, tcfg.fd_delta, traces.as_deref()) {
                Ok(lg) if lg.loss.is_finite() && lg.bundle.is_finite() => lg,
                Ok(lg) => {
                    save_checkpoint(checkpoint_dir, "abort.json", model, &params, meta(epoch, iteration))?;
                    let what = if lg.loss.is_finite() { "gradient" } else { "loss" };
                    return Err(Error::NonFinite { what, iteration });
                }
                Err(Error::NonFinite { what, .. }) => {
                    save_checkpoint(checkpoint_dir, "abort.json", model, &params, meta(epoch, iteration))?;
                    return Err(Error::NonFinite { what, iteration });
                }
                Err(e) => return Err(e),
            };
            report.gradient_evaluations += batch.len() as u64;

            losses.push(lg.loss);
            report.iterations.push(IterationRecord {
                iteration,
                epoch,
                raw_loss: lg.loss,
                smoothed_loss: smoothed(&losses, tcfg.smoothing_window),
            });

            let g = &lg.bundle;
            optimizer.step(
                &mut [params.encoder.weights.as_mut_slice(), params.w_infer.as_mut_slice()],
                &[g.d_w.as_slice(), g.d_w_infer.as_slice()],
                &[tcfg.freeze_w, tcfg.freeze_infer],
            );
            params.clamp_inference(bound);
            iteration += 1;
        }

        let val = eval::evaluate(model, &params, val_set)?;
        report.epochs.push(EpochRecord {
            epoch,
            iterations: iteration,
            smoothed_loss: smoothed(&losses, tcfg.smoothing_window),
            val_loss: val.loss,
            val_error: val.error_rate,
        });
        save_checkpoint(
            checkpoint_dir,
            &format!("epoch-{epoch:03}.json"),
            model,
            &params,
            meta(epoch, iteration),
        )?;
    }

    // Validation passes are not gradient work.
    report.forward_evaluations = model.forward_evaluations() - evals_before - (tcfg.epochs * val_set.len()) as u64;
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(TrainRun { params, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::HamiltonianSpec;

    fn toy() -> (ModelConfig, Dataset) {
        let cfg = ModelConfig {
            spec: HamiltonianSpec::reference_chain(3).unwrap(),
            encode_periods: 2,
            total_periods: 4,
            dt_ns: 5.0,
            n_readout: 3,
            n_classes: 8,
            bound_mhz: 25.0,
            input_dim: 3,
            shots: None,
        };
        let inputs: Vec<f64> = (0..16)
            .flat_map(|i| [(i % 4) as f64 / 3.0, (i / 4) as f64 / 3.0, 1.0])
            .collect();
        let labels = (0..16).map(|i| i % 2).collect();
        (cfg, Dataset::from_parts(inputs, 3, labels, "toy").unwrap())
    }

    #[test]
    fn budgets() {
        let cfg = ModelConfig::mnist(3, 10, 10).unwrap();
        assert_eq!(measurement_budget(&cfg, GradMethod::ForwardDifference), 121);
        assert_eq!(naive_measurement_budget(&cfg), 785 * 60 + 61);
        let cfg = ModelConfig::mnist(3, 0, 10).unwrap();
        assert_eq!(measurement_budget(&cfg, GradMethod::ForwardDifference), 61);
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (cfg, ds) = toy();
        let tcfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            batch_size: ds.len(),
            ..Default::default()
        };
        let model = Model::new(cfg.clone()).unwrap();
        let init = ModelParams::init(&cfg, EncoderMode::Nonlinear, 0).unwrap();
        let run = train_from(&model, &tcfg, init.clone(), &ds, &ds, None).unwrap();
        assert_eq!(run.params, init);
        assert_eq!(run.report.iterations.len(), 1);
    }

    #[test]
    fn frozen_blocks_only_log() {
        let (cfg, ds) = toy();
        let tcfg = TrainConfig {
            freeze_w: true,
            freeze_infer: true,
            epochs: 2,
            batch_size: 4,
            learning_rate: 0.1,
            ..Default::default()
        };
        let model = Model::new(cfg.clone()).unwrap();
        let init = ModelParams::init(&cfg, EncoderMode::Nonlinear, 0).unwrap();
        let run = train_from(&model, &tcfg, init.clone(), &ds, &ds, None).unwrap();
        assert_eq!(run.params, init);
        assert_eq!(run.report.iterations.len(), 8);
        assert_eq!(run.report.epochs.len(), 2);
    }

    #[test]
    fn inference_pulses_stay_bounded() {
        let (cfg, ds) = toy();
        let tcfg = TrainConfig {
            learning_rate: 50.0,
            optimizer: OptimizerKind::Sgd,
            epochs: 2,
            batch_size: 4,
            ..Default::default()
        };
        let run = train(&cfg, &tcfg, &ds, &ds).unwrap();
        assert!(run.params.w_infer.as_slice().iter().all(|v| v.abs() <= 25.0));
    }

    #[test]
    fn forward_difference_counter_matches_budget() {
        let (cfg, ds) = toy();
        let tcfg = TrainConfig {
            method: GradMethod::ForwardDifference,
            epochs: 1,
            batch_size: 8,
            ..Default::default()
        };
        let run = train(&cfg, &tcfg, &ds, &ds).unwrap();
        assert_eq!(
            run.report.forward_evaluations,
            run.report.gradient_evaluations * measurement_budget(&cfg, GradMethod::ForwardDifference)
        );
    }

    #[test]
    fn seeded_runs_are_identical() {
        let (cfg, ds) = toy();
        let tcfg = TrainConfig {
            noise_delta: 5.0,
            epochs: 2,
            batch_size: 5,
            learning_rate: 0.01,
            seed: 11,
            ..Default::default()
        };
        let a = train(&cfg, &tcfg, &ds, &ds).unwrap();
        let b = train(&cfg, &tcfg, &ds, &ds).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.report.iterations, b.report.iterations);
        assert_eq!(a.report.epochs, b.report.epochs);
    }

    #[test]
    fn non_finite_gradient_aborts_with_checkpoint() {
        let (cfg, mut_ds) = toy();
        let mut inputs: Vec<f64> = mut_ds.samples().flat_map(|s| s.x.to_vec()).collect();
        inputs[0] = f64::NAN;
        let ds = Dataset::from_parts(inputs, 3, mut_ds.labels().to_vec(), "bad").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let model = Model::new(cfg.clone()).unwrap();
        let init = ModelParams::init(&cfg, EncoderMode::Nonlinear, 0).unwrap();
        let tcfg = TrainConfig {
            batch_size: 16,
            epochs: 1,
            ..Default::default()
        };
        let err = train_from(&model, &tcfg, init.clone(), &ds, &mut_ds, Some(dir.path()));
        assert!(err.is_err(), "{err:?}");
        let ck = Checkpoint::load(&dir.path().join("abort.json")).unwrap();
        assert_eq!(ck.params, init);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            epochs: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            noise_delta: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
