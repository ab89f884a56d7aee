//! The learning model: encoding pulses from the perceptron interface,
//! trainable inference pulses, forward evolution and readout.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Binomial, Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{self, EncoderMode, EncoderParams};
use crate::error::{Error, Result};
use crate::matrix::RealMatrix;
use crate::qsim::{self, ChainSystem, ControlSchedule, HamiltonianSpec, QuantumState};
use crate::seed;

pub const DEFAULT_DT_NS: f64 = 5.0;
pub const DEFAULT_BOUND_MHZ: f64 = 25.0;
/// 28×28 pixels plus the bias element.
pub const MNIST_INPUT_DIM: usize = 785;

/// One labelled input. `x` already carries the trailing bias element.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub spec: HamiltonianSpec,
    /// `M₀`: leading periods driven by the encoder.
    pub encode_periods: usize,
    /// `M`: total periods.
    pub total_periods: usize,
    pub dt_ns: f64,
    pub n_readout: usize,
    pub n_classes: usize,
    pub bound_mhz: f64,
    /// `d+1`, including the bias element.
    pub input_dim: usize,
    /// Finite-shot readout for evaluation; `None` uses exact probabilities.
    #[serde(default)]
    pub shots: Option<u64>,
}

impl ModelConfig {
    /// Reference-chain model for the 8-class MNIST task.
    pub fn mnist(n_qubits: usize, encode_periods: usize, infer_periods: usize) -> Result<Self> {
        let cfg = Self {
            spec: HamiltonianSpec::reference_chain(n_qubits)?,
            encode_periods,
            total_periods: encode_periods + infer_periods,
            dt_ns: DEFAULT_DT_NS,
            n_readout: 3,
            n_classes: 8,
            bound_mhz: DEFAULT_BOUND_MHZ,
            input_dim: MNIST_INPUT_DIM,
            shots: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.total_periods == 0 {
            return Err(Error::Config("total_periods must be positive".into()));
        }
        if self.encode_periods > self.total_periods {
            return Err(Error::Config(format!(
                "encode_periods {} exceeds total_periods {}",
                self.encode_periods, self.total_periods
            )));
        }
        if !(self.dt_ns.is_finite() && self.dt_ns > 0.0) {
            return Err(Error::Config("dt_ns must be positive".into()));
        }
        if !(self.bound_mhz.is_finite() && self.bound_mhz > 0.0) {
            return Err(Error::Config("bound_mhz must be positive".into()));
        }
        if self.n_readout == 0 || self.n_readout > self.spec.n_qubits() {
            return Err(Error::Config(format!(
                "n_readout must be in 1..={}, got {}",
                self.spec.n_qubits(),
                self.n_readout
            )));
        }
        if self.n_classes == 0 || self.n_classes > 1 << self.n_readout {
            return Err(Error::Config(format!(
                "{} classes do not fit {} readout outcomes",
                self.n_classes,
                1 << self.n_readout
            )));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn n_controls(&self) -> usize {
        self.spec.n_controls()
    }

    pub fn infer_periods(&self) -> usize {
        self.total_periods - self.encode_periods
    }

    /// `N_code = c·n·M₀`.
    pub fn n_code(&self) -> usize {
        self.n_controls() * self.encode_periods
    }

    /// `N_infer = c·n·(M − M₀)`.
    pub fn n_infer(&self) -> usize {
        self.n_controls() * self.infer_periods()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    /// `(M − M₀) × (c·n)` inference amplitudes, MHz.
    pub w_infer: RealMatrix,
}

impl ModelParams {
    /// Seeded initialization: Gaussian encoder weights (see
    /// [`EncoderParams::random`]) and inference amplitudes uniform in
    /// `[−B/10, B/10]`.
    pub fn init(cfg: &ModelConfig, mode: EncoderMode, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::rng(seed, &[seed::INIT_DOMAIN]);
        let encoder = EncoderParams::random(cfg.n_code(), cfg.input_dim, cfg.bound_mhz, mode, &mut rng)?;
        let lim = cfg.bound_mhz / 10.0;
        let uni = Uniform::new_inclusive(-lim, lim).map_err(|e| Error::Config(e.to_string()))?;
        let w_infer = RealMatrix::from_fn(cfg.infer_periods(), cfg.n_controls(), |_, _| uni.sample(&mut rng));
        Ok(Self { encoder, w_infer })
    }

    pub fn zeros(cfg: &ModelConfig, mode: EncoderMode) -> Result<Self> {
        Ok(Self {
            encoder: EncoderParams::new(RealMatrix::zeros(cfg.n_code(), cfg.input_dim), cfg.bound_mhz, mode)?,
            w_infer: RealMatrix::zeros(cfg.infer_periods(), cfg.n_controls()),
        })
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.encoder.weights.shape() != (cfg.n_code(), cfg.input_dim) {
            return Err(Error::shape(
                "encoder weights",
                format!("{}x{}", cfg.n_code(), cfg.input_dim),
                format!("{}x{}", self.encoder.weights.rows(), self.encoder.weights.cols()),
            ));
        }
        if self.w_infer.shape() != (cfg.infer_periods(), cfg.n_controls()) {
            return Err(Error::shape(
                "inference pulses",
                format!("{}x{}", cfg.infer_periods(), cfg.n_controls()),
                format!("{}x{}", self.w_infer.rows(), self.w_infer.cols()),
            ));
        }
        if self.encoder.bound != cfg.bound_mhz {
            return Err(Error::Config(format!(
                "encoder bound {} differs from model bound {}",
                self.encoder.bound, cfg.bound_mhz
            )));
        }
        if let Some(v) = self.w_infer.as_slice().iter().find(|v| v.abs() > cfg.bound_mhz) {
            return Err(Error::AmplitudeOutOfBound {
                value: *v,
                bound: cfg.bound_mhz,
            });
        }
        Ok(())
    }

    /// Projects every inference amplitude onto `[−B, B]`.
    pub fn clamp_inference(&mut self, bound: f64) {
        for v in self.w_infer.as_mut_slice() {
            *v = v.clamp(-bound, bound);
        }
    }
}

/// A configured model with its chain operators built once. Counts every
/// forward evaluation it performs.
#[derive(Debug)]
pub struct Model {
    cfg: ModelConfig,
    system: ChainSystem,
    forward_evals: AtomicU64,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            system: self.system.clone(),
            forward_evals: AtomicU64::new(self.forward_evaluations()),
        }
    }
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let system = ChainSystem::new(&cfg.spec)?;
        Ok(Self {
            cfg,
            system,
            forward_evals: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn system(&self) -> &ChainSystem {
        &self.system
    }

    pub fn forward_evaluations(&self) -> u64 {
        self.forward_evals.load(Ordering::Relaxed)
    }

    pub(crate) fn add_forward_evaluations(&self, n: u64) {
        self.forward_evals.fetch_add(n, Ordering::Relaxed);
    }

    pub fn reset_forward_evaluations(&self) {
        self.forward_evals.store(0, Ordering::Relaxed);
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.cfg.input_dim {
            return Err(Error::shape("model input", self.cfg.input_dim, x.len()));
        }
        Ok(())
    }

    /// Encoding amplitudes `w_code` (length `N_code`), period-major.
    pub fn encode(&self, params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        encoder::encode(&params.encoder, x)
    }

    /// Full pulse table: `M₀` encoder rows (period 1's channels first)
    /// followed by the `M − M₀` inference rows.
    pub fn assemble_schedule(&self, params: &ModelParams, x: &[f64]) -> Result<ControlSchedule> {
        let code = self.encode(params, x)?;
        self.schedule_from_code(params, code)
    }

    pub(crate) fn schedule_from_code(&self, params: &ModelParams, code: Vec<f64>) -> Result<ControlSchedule> {
        let head = RealMatrix::from_vec(self.cfg.encode_periods, self.cfg.n_controls(), code)?;
        if params.w_infer.shape() != (self.cfg.infer_periods(), self.cfg.n_controls()) {
            return Err(Error::shape(
                "inference pulses",
                format!("{}x{}", self.cfg.infer_periods(), self.cfg.n_controls()),
                format!("{}x{}", params.w_infer.rows(), params.w_infer.cols()),
            ));
        }
        let amplitudes = head.vstack(&params.w_infer)?;
        Ok(ControlSchedule::new(self.cfg.dt_ns, amplitudes))
    }

    /// Attaches an `M × n` σ_z noise trace to a schedule.
    pub fn with_noise(&self, schedule: ControlSchedule, noise: Option<&RealMatrix>) -> ControlSchedule {
        match noise {
            Some(trace) => schedule.with_noise(trace.clone()),
            None => schedule,
        }
    }

    /// Final state from |0…0⟩ under `schedule`.
    pub fn evolve(&self, schedule: &ControlSchedule) -> Result<QuantumState> {
        self.system
            .evolve(&QuantumState::ground(self.cfg.spec.n_qubits()), schedule)
    }

    /// Class probabilities (first `r` readout outcomes) for a resolved
    /// schedule. Each call counts as one forward evaluation.
    pub fn probabilities(&self, schedule: &ControlSchedule) -> Result<Vec<f64>> {
        if schedule.periods() != self.cfg.total_periods {
            return Err(Error::shape(
                "schedule periods",
                self.cfg.total_periods,
                schedule.periods(),
            ));
        }
        self.forward_evals.fetch_add(1, Ordering::Relaxed);
        let state = self.evolve(schedule)?;
        let mut probs = qsim::povm_probabilities(&state, self.cfg.n_readout)?;
        probs.truncate(self.cfg.n_classes);
        Ok(probs)
    }

    /// `P(·|x, w)` over the `r` classes.
    pub fn forward(&self, params: &ModelParams, x: &[f64], noise: Option<&RealMatrix>) -> Result<Vec<f64>> {
        let schedule = self.with_noise(self.assemble_schedule(params, x)?, noise);
        self.probabilities(&schedule)
    }

    pub fn predict(&self, params: &ModelParams, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(params, x, None)?))
    }

    /// `1 − mean_k P(y_k | x_k, w)`.
    pub fn empirical_loss(&self, params: &ModelParams, batch: &[Sample<'_>]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let probs = batch
            .par_iter()
            .map(|s| {
                self.check_label(s.label)?;
                Ok(self.forward(params, s.x, None)?[s.label])
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(loss_from_true_class_probs(&probs))
    }

    pub fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.cfg.n_classes {
            return Err(Error::Label {
                label,
                classes: self.cfg.n_classes,
            });
        }
        Ok(())
    }
}

/// `1 − mean(p)` with a fixed left-to-right summation order.
pub fn loss_from_true_class_probs(probs: &[f64]) -> f64 {
    let mean = probs.iter().sum::<f64>() / probs.len() as f64;
    (1.0 - mean).clamp(0.0, 1.0)
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Finite-shot estimate of each outcome probability: `Binomial(shots, P_j)/shots`.
pub fn sample_shots<R: Rng + ?Sized>(probs: &[f64], shots: u64, rng: &mut R) -> Result<Vec<f64>> {
    if shots == 0 {
        return Err(Error::Config("shots must be positive".into()));
    }
    probs
        .iter()
        .map(|&p| {
            let b = Binomial::new(shots, p.clamp(0.0, 1.0)).map_err(|e| Error::Config(e.to_string()))?;
            Ok(b.sample(rng) as f64 / shots as f64)
        })
        .collect()
}

/// Convenience wrapper building a one-off [`Model`].
pub fn forward(cfg: &ModelConfig, params: &ModelParams, x: &[f64], noise: Option<&RealMatrix>) -> Result<Vec<f64>> {
    Model::new(cfg.clone())?.forward(params, x, noise)
}

pub fn assemble_schedule(cfg: &ModelConfig, params: &ModelParams, x: &[f64]) -> Result<ControlSchedule> {
    Model::new(cfg.clone())?.assemble_schedule(params, x)
}

pub fn empirical_loss(cfg: &ModelConfig, params: &ModelParams, batch: &[Sample<'_>]) -> Result<f64> {
    Model::new(cfg.clone())?.empirical_loss(params, batch)
}

pub fn predict(cfg: &ModelConfig, params: &ModelParams, x: &[f64]) -> Result<usize> {
    Model::new(cfg.clone())?.predict(params, x)
}

pub const CHECKPOINT_FORMAT: &str = "pulsenet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub seed: u64,
    pub epoch: usize,
    pub iteration: usize,
    /// Digit represented by each class label.
    pub class_digits: Vec<u8>,
    #[serde(default)]
    pub note: String,
}

/// Self-describing JSON checkpoint. Floats are written in shortest
/// round-trip form and parsed exactly, so save/load is bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub params: ModelParams,
    pub metadata: CheckpointMetadata,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ModelParams, metadata: CheckpointMetadata) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config,
            params,
            metadata,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format tag {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        ck.config.validate()?;
        ck.params.validate(&ck.config)?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
