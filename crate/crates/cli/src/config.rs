//! Run configuration: a TOML file merged with command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use pulsenet_core::eval::AblationVariant;
use pulsenet_core::grad::GradMethod;
use pulsenet_core::model::{ModelConfig, DEFAULT_BOUND_MHZ, DEFAULT_DT_NS};
use pulsenet_core::noise::DEFAULT_REPETITIONS;
use pulsenet_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

pub const SNAPSHOT_NAME: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub qubits: usize,
    pub encode_layers: usize,
    pub infer_layers: usize,
    pub dt_ns: f64,
    pub bound_mhz: f64,
    pub shots: Option<u64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            qubits: 3,
            encode_layers: 10,
            infer_layers: 10,
            dt_ns: DEFAULT_DT_NS,
            bound_mhz: DEFAULT_BOUND_MHZ,
            shots: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    /// Levels (MHz) at which trained models are evaluated.
    pub eval_deltas: Vec<f64>,
    pub repetitions: usize,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            eval_deltas: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            repetitions: DEFAULT_REPETITIONS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub variants: Vec<AblationVariant>,
    pub seeds: Vec<u64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            variants: AblationVariant::ALL.to_vec(),
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub instances: usize,
    pub input_dim: usize,
    pub step_mhz: f64,
    pub tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            instances: 20,
            input_dim: 8,
            step_mhz: 1e-3,
            tolerance: 1e-5,
        }
    }
}

/// Everything a command needs, fully resolved before the command runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every random stream of the run derives from it.
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out: PathBuf,
    /// Cap on the training set (first N filtered samples).
    pub subset: Option<usize>,
    /// Cap on the validation set.
    pub val_subset: Option<usize>,
    /// Worker threads; 0 lets the runtime choose.
    pub workers: usize,
    /// Trained model for `eval`, `inspect-pulse` and as the clean model of
    /// `noise-sweep`.
    pub checkpoint: Option<PathBuf>,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub noise: NoiseSection,
    pub ablation: AblationSection,
    pub gradcheck: GradcheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_dir: PathBuf::from("data/mnist"),
            out: PathBuf::from("runs/default"),
            subset: None,
            val_subset: None,
            workers: 0,
            checkpoint: None,
            model: ModelSection::default(),
            train: TrainConfig::default(),
            noise: NoiseSection::default(),
            ablation: AblationSection::default(),
            gradcheck: GradcheckSection::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    /// Forward finite differences on the control amplitudes.
    Fd,
    /// Exact derivative from a forward and an adjoint sweep.
    Analytic,
}

impl From<MethodArg> for GradMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Fd => GradMethod::ForwardDifference,
            MethodArg::Analytic => GradMethod::Analytic,
        }
    }
}

/// Flags shared by every subcommand. Each one, when given, wins over the
/// config file.
#[derive(Clone, Debug, Default, Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Directory holding the MNIST IDX files (optionally gzipped).
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub qubits: Option<usize>,
    #[arg(long, global = true)]
    pub encode_layers: Option<usize>,
    #[arg(long, global = true)]
    pub infer_layers: Option<usize>,
    /// Training noise level in MHz.
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Use only the first N training samples.
    #[arg(long, global = true)]
    pub subset: Option<usize>,
    /// Use only the first N validation samples.
    #[arg(long, global = true)]
    pub val_subset: Option<usize>,
    /// Checkpoint to evaluate or inspect.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Config file (or defaults) with `o` applied on top.
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let mut cfg = match &o.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        cfg.apply(o);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(o.seed => self.seed);
        set!(o.out => self.out);
        set!(o.data_dir => self.data_dir);
        set!(o.qubits => self.model.qubits);
        set!(o.encode_layers => self.model.encode_layers);
        set!(o.infer_layers => self.model.infer_layers);
        set!(o.delta => self.train.noise_delta);
        set!(o.batch => self.train.batch_size);
        set!(o.lr => self.train.learning_rate);
        set!(o.epochs => self.train.epochs);
        set!(o.workers => self.workers);
        if let Some(m) = o.method {
            self.train.method = m.into();
        }
        if o.subset.is_some() {
            self.subset = o.subset;
        }
        if o.val_subset.is_some() {
            self.val_subset = o.val_subset;
        }
        if o.checkpoint.is_some() {
            self.checkpoint = o.checkpoint.clone();
        }
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config()?;
        self.train.validate()?;
        if self.subset == Some(0) || self.val_subset == Some(0) {
            bail!("dataset caps must be at least 1");
        }
        if self.noise.repetitions == 0 {
            bail!("noise.repetitions must be at least 1");
        }
        if self.noise.eval_deltas.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            bail!("noise.eval_deltas must be finite and non-negative");
        }
        if self.noise.eval_deltas.windows(2).any(|w| w[1] < w[0]) {
            bail!("noise.eval_deltas must be ascending");
        }
        if self.gradcheck.input_dim < 2 || self.gradcheck.instances == 0 {
            bail!("gradcheck needs input_dim >= 2 and at least one instance");
        }
        Ok(())
    }

    /// The MNIST model this configuration describes.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let mut cfg = ModelConfig::mnist(m.qubits, m.encode_layers, m.infer_layers)?;
        cfg.dt_ns = m.dt_ns;
        cfg.bound_mhz = m.bound_mhz;
        cfg.shots = m.shots;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Writes the resolved configuration into the output directory.
    pub fn write_snapshot(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let path = self.out.join(SNAPSHOT_NAME);
        std::fs::write(&path, self.to_toml()?)?;
        Ok(path)
    }
}
