//! Data-to-control interface: a single bounded perceptron layer mapping an
//! input vector (bias element appended) to the encoding pulse amplitudes.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::RealMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderMode {
    /// `w = B (e^z − 1)/(e^z + 1) = B tanh(z/2)`.
    #[default]
    Nonlinear,
    /// `w = clamp(z, −B, B)`; ablation without the squashing nonlinearity.
    LinearClipped,
}

impl EncoderMode {
    pub fn activate(self, z: f64, bound: f64) -> f64 {
        match self {
            EncoderMode::Nonlinear => {
                let w = bound * (0.5 * z).tanh();
                // tanh rounds to ±1 for |z| ≳ 37; keep the output strictly inside.
                if w.abs() >= bound {
                    bound.next_down().copysign(z)
                } else {
                    w
                }
            }
            EncoderMode::LinearClipped => z.clamp(-bound, bound),
        }
    }

    /// `dw/dz` expressed through the output `w`.
    pub fn derivative_from_output(self, w: f64, bound: f64) -> f64 {
        match self {
            EncoderMode::Nonlinear => ((bound * bound - w * w) / (2.0 * bound)).max(0.0),
            EncoderMode::LinearClipped => {
                if w.abs() < bound {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// `N_code × (d+1)`; the last column is the bias.
    pub weights: RealMatrix,
    /// Amplitude bound `B`, MHz.
    pub bound: f64,
    #[serde(default)]
    pub mode: EncoderMode,
}

impl EncoderParams {
    pub fn new(weights: RealMatrix, bound: f64, mode: EncoderMode) -> Result<Self> {
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::Config(format!("encoder bound must be positive, got {bound}")));
        }
        Ok(Self { weights, bound, mode })
    }

    /// Gaussian weights with standard deviation `1/sqrt(d+1)`, zero bias.
    pub fn random<R: Rng + ?Sized>(
        n_code: usize,
        input_dim: usize,
        bound: f64,
        mode: EncoderMode,
        rng: &mut R,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, 1.0 / (input_dim as f64).sqrt()).map_err(|e| Error::Config(e.to_string()))?;
        let weights = RealMatrix::from_fn(n_code, input_dim, |_, j| {
            if j + 1 == input_dim {
                0.0
            } else {
                normal.sample(rng)
            }
        });
        Self::new(weights, bound, mode)
    }

    pub fn n_code(&self) -> usize {
        self.weights.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    /// `z = W x`.
    pub fn pre_activations(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("encoder input", self.input_dim(), x.len()));
        }
        Ok((0..self.n_code())
            .map(|i| self.weights.row(i).iter().zip(x).map(|(w, v)| w * v).sum())
            .collect())
    }
}

/// Encoding amplitudes for input `x` (MHz), one per code variable.
pub fn encode(params: &EncoderParams, x: &[f64]) -> Result<Vec<f64>> {
    Ok(params
        .pre_activations(x)?
        .into_iter()
        .map(|z| params.mode.activate(z, params.bound))
        .collect())
}

/// `(B² − w²)/(2B)`, the derivative of the bounded perceptron at output `w`.
pub fn saturation_factor(w_code: f64, bound: f64) -> Result<f64> {
    if w_code.abs() > bound {
        return Err(Error::AmplitudeOutOfBound { value: w_code, bound });
    }
    Ok((bound * bound - w_code * w_code) / (2.0 * bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(z: f64, bound: f64, mode: EncoderMode) -> f64 {
        let p = EncoderParams::new(RealMatrix::from_vec(1, 1, vec![z]).unwrap(), bound, mode).unwrap();
        encode(&p, &[1.0]).unwrap()[0]
    }

    #[test]
    fn encode_examples() {
        assert_eq!(single(0.0, 25.0, EncoderMode::Nonlinear), 0.0);
        assert!((single(3f64.ln(), 25.0, EncoderMode::Nonlinear) - 12.5).abs() < 1e-12);
        let sat = single(50.0, 25.0, EncoderMode::Nonlinear);
        assert!(sat < 25.0);
        assert!((sat - 25.0).abs() < 1e-9);
        let sat = single(-800.0, 25.0, EncoderMode::Nonlinear);
        assert!(sat > -25.0 && sat.is_finite());
    }

    #[test]
    fn linear_clipped_clamps() {
        assert_eq!(single(7.0, 25.0, EncoderMode::LinearClipped), 7.0);
        assert_eq!(single(70.0, 25.0, EncoderMode::LinearClipped), 25.0);
        assert_eq!(single(-70.0, 25.0, EncoderMode::LinearClipped), -25.0);
    }

    #[test]
    fn dimension_mismatch() {
        let p = EncoderParams::new(RealMatrix::zeros(3, 4), 25.0, EncoderMode::Nonlinear).unwrap();
        assert!(encode(&p, &[1.0, 2.0]).is_err());
        assert!(EncoderParams::new(RealMatrix::zeros(3, 4), 0.0, EncoderMode::Nonlinear).is_err());
    }

    #[test]
    fn saturation_factor_examples() {
        assert_eq!(saturation_factor(0.0, 25.0).unwrap(), 12.5);
        assert_eq!(saturation_factor(25.0, 25.0).unwrap(), 0.0);
        assert_eq!(saturation_factor(-25.0, 25.0).unwrap(), 0.0);
        assert!((saturation_factor(12.5, 25.0).unwrap() - 9.375).abs() < 1e-15);
        assert!(saturation_factor(25.1, 25.0).is_err());
    }

    #[test]
    fn saturation_factor_matches_central_difference_at_half_bound() {
        // w = 12.5 at z = ln 3
        let z = 3f64.ln();
        let h = 1e-5;
        let fd =
            (single(z + h, 25.0, EncoderMode::Nonlinear) - single(z - h, 25.0, EncoderMode::Nonlinear)) / (2.0 * h);
        assert!((fd - 9.375).abs() < 1e-8);
    }

    #[test]
    fn random_init_has_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = EncoderParams::random(6, 785, 25.0, EncoderMode::Nonlinear, &mut rng).unwrap();
        assert_eq!(p.weights.shape(), (6, 785));
        assert!((0..6).all(|i| p.weights.get(i, 784) == 0.0));
        let sd = (p.weights.as_slice().iter().map(|w| w * w).sum::<f64>() / (6.0 * 784.0)).sqrt();
        assert!((sd - 1.0 / 785f64.sqrt()).abs() < 0.005);
    }

    proptest! {
        #[test]
        fn nonlinear_is_odd_bounded_and_monotone(z in -200.0f64..200.0, dz in 0.0f64..5.0, bound in 0.5f64..50.0) {
            let m = EncoderMode::Nonlinear;
            let w = m.activate(z, bound);
            prop_assert_eq!(w, -m.activate(-z, bound));
            prop_assert!(w.abs() < bound);
            prop_assert!(m.activate(z + dz, bound) >= w);
            let c = EncoderMode::LinearClipped;
            prop_assert!(c.activate(z, bound).abs() <= bound);
            prop_assert!(c.activate(z + dz, bound) >= c.activate(z, bound));
        }

        #[test]
        fn saturation_factor_is_the_derivative(z in -10.0f64..10.0) {
            let bound = 25.0;
            let m = EncoderMode::Nonlinear;
            let h = 1e-5;
            let fd = (m.activate(z + h, bound) - m.activate(z - h, bound)) / (2.0 * h);
            let an = saturation_factor(m.activate(z, bound), bound).unwrap();
            prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "fd {} an {}", fd, an);
        }

        #[test]
        fn encode_is_odd_in_weights(ws in proptest::collection::vec(-3.0f64..3.0, 8), xs in proptest::collection::vec(0.0f64..1.0, 4)) {
            let w = RealMatrix::from_vec(2, 4, ws).unwrap();
            let mut neg = w.clone();
            neg.scale(-1.0);
            let p = EncoderParams::new(w, 25.0, EncoderMode::Nonlinear).unwrap();
            let q = EncoderParams::new(neg, 25.0, EncoderMode::Nonlinear).unwrap();
            let a = encode(&p, &xs).unwrap();
            let b = encode(&q, &xs).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert_eq!(*u, -*v);
            }
        }
    }
}
