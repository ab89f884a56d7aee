//! White σ_z flux noise: per-period, per-qubit Gaussian offsets held
//! constant over each sampling period.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::RealMatrix;
use crate::model::{argmax, Model, ModelParams};
use crate::seed;

pub const DEFAULT_REPETITIONS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation of each offset, MHz.
    pub delta: f64,
    pub seed: u64,
    /// Independent stream within `seed`.
    pub stream: u64,
}

impl NoiseSpec {
    pub fn new(delta: f64, seed: u64, stream: u64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!(
                "noise level must be finite and non-negative, got {delta}"
            )));
        }
        Ok(Self { delta, seed, stream })
    }
}

/// `M × n` trace of i.i.d. `N(0, δ²)` offsets in MHz.
pub fn sample_trace(spec: &NoiseSpec, periods: usize, n_qubits: usize) -> RealMatrix {
    if spec.delta == 0.0 {
        return RealMatrix::zeros(periods, n_qubits);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(spec.stream);
    let normal = Normal::new(0.0, spec.delta).expect("validated noise level");
    RealMatrix::from_fn(periods, n_qubits, |_, _| normal.sample(&mut rng))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyErrorRate {
    pub delta: f64,
    pub repetitions: usize,
    pub error_rate: f64,
    /// Standard error of the mean over repetitions.
    pub std_error: f64,
}

/// Mean misclassification rate over `repetitions` independent traces per
/// sample. At `delta = 0` no trace is drawn and the result is the clean
/// error rate.
pub fn noisy_error_rate(
    model: &Model,
    params: &ModelParams,
    dataset: &Dataset,
    delta: f64,
    repetitions: usize,
    seed: u64,
) -> Result<NoisyErrorRate> {
    if repetitions == 0 {
        return Err(Error::Config("need at least one noise repetition".into()));
    }
    NoiseSpec::new(delta, seed, 0)?;
    if dataset.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let cfg = model.config();
    let reps = if delta == 0.0 { 1 } else { repetitions };
    let noise_seed = seed::derive(seed, &[seed::EVAL_NOISE_DOMAIN]);
    // errors[r] = misclassified count in repetition r
    let per_sample = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let s = dataset.sample(i);
            (0..reps)
                .map(|r| {
                    let trace = (delta > 0.0).then(|| {
                        let spec = NoiseSpec {
                            delta,
                            seed: noise_seed,
                            stream: (i * reps + r) as u64,
                        };
                        sample_trace(&spec, cfg.total_periods, cfg.spec.n_qubits())
                    });
                    let p = model.forward(params, s.x, trace.as_ref())?;
                    Ok(argmax(&p) != s.label)
                })
                .collect::<Result<Vec<bool>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let n = dataset.len() as f64;
    let rates: Vec<f64> = (0..reps)
        .map(|r| per_sample.iter().filter(|v| v[r]).count() as f64 / n)
        .collect();
    let mean = rates.iter().sum::<f64>() / reps as f64;
    let std_error = if reps > 1 {
        let var = rates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        (var / reps as f64).sqrt()
    } else {
        0.0
    };
    Ok(NoisyErrorRate {
        delta,
        repetitions: reps,
        error_rate: mean,
        std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderMode;
    use crate::model::ModelConfig;
    use crate::qsim::HamiltonianSpec;

    #[test]
    fn zero_delta_gives_zero_trace() {
        let t = sample_trace(&NoiseSpec::new(0.0, 1, 2).unwrap(), 5, 3);
        assert!(t.as_slice().iter().all(|&v| v == 0.0));
        assert!(NoiseSpec::new(-1.0, 0, 0).is_err());
    }

    #[test]
    fn trace_statistics() {
        let t = sample_trace(&NoiseSpec::new(10.0, 42, 0).unwrap(), 20_000, 5);
        let v = t.as_slice();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((sd - 10.0).abs() < 0.1, "sd {sd}");
    }

    #[test]
    fn streams_are_reproducible_and_decorrelated() {
        let a = sample_trace(&NoiseSpec::new(1.0, 7, 0).unwrap(), 2500, 4);
        let b = sample_trace(&NoiseSpec::new(1.0, 7, 0).unwrap(), 2500, 4);
        let c = sample_trace(&NoiseSpec::new(1.0, 7, 1).unwrap(), 2500, 4);
        assert_eq!(a, b);
        let (x, y) = (a.as_slice(), c.as_slice());
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(y).map(|(p, q)| (p - mx) * (q - my)).sum();
        let vx: f64 = x.iter().map(|p| (p - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|q| (q - my).powi(2)).sum();
        assert!((cov / (vx * vy).sqrt()).abs() < 0.05);
    }

    #[test]
    fn ground_state_is_invariant_under_z_noise() {
        let cfg = ModelConfig {
            spec: HamiltonianSpec::reference_chain(3).unwrap(),
            encode_periods: 2,
            total_periods: 6,
            dt_ns: 5.0,
            n_readout: 3,
            n_classes: 8,
            bound_mhz: 25.0,
            input_dim: 2,
            shots: None,
        };
        let model = Model::new(cfg.clone()).unwrap();
        let params = ModelParams::zeros(&cfg, EncoderMode::Nonlinear).unwrap();
        for stream in 0..10 {
            let trace = sample_trace(&NoiseSpec::new(30.0, 3, stream).unwrap(), 6, 3);
            let p = model.forward(&params, &[0.5, 1.0], Some(&trace)).unwrap();
            assert!((p[0] - 1.0).abs() < 1e-14);
            assert!(p[1..].iter().all(|&v| v == 0.0));
        }
    }
}
