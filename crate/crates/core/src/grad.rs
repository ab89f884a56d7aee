//! Gradients of outcome probabilities and of the empirical loss.
//!
//! Two routes are provided. Finite differences perturb one resolved control
//! amplitude at a time and re-run the forward evolution, which is what a
//! device would do. The analytic route differentiates each period's
//! propagator exactly through its spectral decomposition and back-propagates
//! an adjoint state. Both produce gradients over the control amplitudes;
//! encoder weights are reached through the chain rule so only
//! `N_code + N_infer` amplitude derivatives are ever needed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderMode;
use crate::error::{Error, Result};
use crate::matrix::RealMatrix;
use crate::model::{loss_from_true_class_probs, Model, ModelConfig, ModelParams, Sample};
use crate::qsim::{self, CMatrix, ControlSchedule, C64};

pub const DEFAULT_FD_DELTA_MHZ: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GradMethod {
    ForwardDifference,
    CentralDifference,
    #[default]
    Analytic,
}

impl GradMethod {
    pub fn is_finite_difference(self) -> bool {
        !matches!(self, GradMethod::Analytic)
    }
}

/// Derivatives of one outcome probability with respect to the resolved
/// control amplitudes of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlGradient {
    /// `P(y|x, w)` at the unperturbed controls.
    pub probability: f64,
    /// `∂P/∂w_code`, length `N_code`, period-major.
    pub code: Vec<f64>,
    /// `∂P/∂w_infer`, `(M − M₀) × (c·n)`.
    pub infer: RealMatrix,
    /// The encoder output the derivatives were taken at.
    pub w_code: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub d_w: RealMatrix,
    pub d_w_infer: RealMatrix,
    pub method: GradMethod,
}

impl GradientBundle {
    pub fn zeros(cfg: &ModelConfig, method: GradMethod) -> Self {
        Self {
            d_w: RealMatrix::zeros(cfg.n_code(), cfg.input_dim),
            d_w_infer: RealMatrix::zeros(cfg.infer_periods(), cfg.n_controls()),
            method,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_w.is_finite() && self.d_w_infer.is_finite()
    }

    pub fn max_abs_diff(&self, other: &GradientBundle) -> f64 {
        self.d_w
            .max_abs_diff(&other.d_w)
            .max(self.d_w_infer.max_abs_diff(&other.d_w_infer))
    }
}

/// Splits a full-schedule gradient (`M × c·n`) into code and inference parts.
fn split_schedule_gradient(cfg: &ModelConfig, full: RealMatrix) -> (Vec<f64>, RealMatrix) {
    let split = cfg.n_code();
    let mut data = full.into_vec();
    let infer = data.split_off(split);
    let infer = RealMatrix::from_vec(cfg.infer_periods(), cfg.n_controls(), infer).expect("inference gradient shape");
    (data, infer)
}

fn check_delta(method: GradMethod, delta: f64) -> Result<()> {
    if method.is_finite_difference() && !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {delta}"
        )));
    }
    Ok(())
}

impl Model {
    fn resolved_schedule(
        &self,
        params: &ModelParams,
        x: &[f64],
        noise: Option<&RealMatrix>,
    ) -> Result<(ControlSchedule, Vec<f64>)> {
        let w_code = self.encode(params, x)?;
        let schedule = self.with_noise(self.schedule_from_code(params, w_code.clone())?, noise);
        Ok((schedule, w_code))
    }

    /// Finite-difference derivatives of `P(y|x, w)` with respect to every
    /// resolved control amplitude. Forward differences take
    /// `N_code + N_infer + 1` forward evaluations; central differences take
    /// `2(N_code + N_infer) + 1`.
    pub fn fd_control_gradient(
        &self,
        params: &ModelParams,
        x: &[f64],
        label: usize,
        delta: f64,
        central: bool,
        noise: Option<&RealMatrix>,
    ) -> Result<ControlGradient> {
        check_delta(GradMethod::ForwardDifference, delta)?;
        self.check_label(label)?;
        let (schedule, w_code) = self.resolved_schedule(params, x, noise)?;
        let base = self.probabilities(&schedule)?[label];
        let (rows, cols) = schedule.amplitudes.shape();
        let mut full = RealMatrix::zeros(rows, cols);
        let mut probe = schedule.clone();
        for k in 0..rows {
            for l in 0..cols {
                let orig = schedule.amplitudes.get(k, l);
                probe.amplitudes.set(k, l, orig + delta);
                let up = self.probabilities(&probe)?[label];
                let g = if central {
                    probe.amplitudes.set(k, l, orig - delta);
                    let down = self.probabilities(&probe)?[label];
                    (up - down) / (2.0 * delta)
                } else {
                    (up - base) / delta
                };
                probe.amplitudes.set(k, l, orig);
                full.set(k, l, g);
            }
        }
        let (code, infer) = split_schedule_gradient(self.config(), full);
        Ok(ControlGradient {
            probability: base,
            code,
            infer,
            w_code,
        })
    }

    /// Exact derivatives of `P(y|x, w)` with respect to every resolved control
    /// amplitude, from one forward and one adjoint sweep. Counts as a single
    /// forward evaluation.
    pub fn analytic_control_gradient(
        &self,
        params: &ModelParams,
        x: &[f64],
        label: usize,
        noise: Option<&RealMatrix>,
    ) -> Result<ControlGradient> {
        self.check_label(label)?;
        let (schedule, w_code) = self.resolved_schedule(params, x, noise)?;
        let (probability, full) = self.schedule_gradient(&schedule, label)?;
        let (code, infer) = split_schedule_gradient(self.config(), full);
        Ok(ControlGradient {
            probability,
            code,
            infer,
            w_code,
        })
    }

    /// `(P_y, ∂P_y/∂a_{kℓ})` for a resolved schedule.
    pub fn schedule_gradient(&self, schedule: &ControlSchedule, label: usize) -> Result<(f64, RealMatrix)> {
        let cfg = self.config();
        if schedule.periods() != cfg.total_periods {
            return Err(Error::shape("schedule periods", cfg.total_periods, schedule.periods()));
        }
        self.check_label(label)?;
        let system = self.system();
        let steps = system.steps(schedule)?;
        let n = cfg.spec.n_qubits();

        // Forward sweep, keeping the state entering each period.
        let mut inputs = Vec::with_capacity(steps.len());
        let mut psi = qsim::QuantumState::ground(n).amplitudes().clone();
        for step in &steps {
            let next = step.apply(&psi);
            inputs.push(psi);
            psi = next;
        }

        let range = qsim::outcome_range(n, cfg.n_readout, label);
        let probability: f64 = range.clone().map(|b| psi[b].norm_sqr()).sum();
        // The adjoint sweep reuses this forward pass.
        self.add_forward_evaluations(1);

        // Adjoint: χ_M = Π_y ψ_M, χ_{k-1} = U_k† χ_k.
        let mut chi = qsim::CVector::zeros(psi.len());
        for b in range {
            chi[b] = psi[b];
        }

        let controls: Vec<Vec<(usize, usize, C64)>> = system
            .controls()
            .iter()
            .map(|op| {
                let m = op.matrix();
                let mut nz = Vec::new();
                for c in 0..m.ncols() {
                    for r in 0..m.nrows() {
                        let v = m[(r, c)];
                        if v.norm_sqr() > 0.0 {
                            nz.push((r, c, v));
                        }
                    }
                }
                nz
            })
            .collect();

        let mut grad = RealMatrix::zeros(schedule.periods(), cfg.n_controls());
        for (k, step) in steps.iter().enumerate().rev() {
            let v = step.vectors();
            let a = v.ad_mul(&chi);
            let b = v.ad_mul(&inputs[k]);
            let phi = step.divided_differences();
            let dim = phi.nrows();
            let kernel = CMatrix::from_fn(dim, dim, |p, q| a[p].conj() * phi[(p, q)] * b[q]);
            // Σ_pq K_pq (V†AV)_pq = Σ_rs A_rs (V̄ K Vᵀ)_rs
            let g = v.conjugate() * kernel * v.transpose();
            for (l, nz) in controls.iter().enumerate() {
                let s: C64 = nz.iter().map(|&(r, c, val)| val * g[(r, c)]).sum();
                grad.set(k, l, 2.0 * s.re);
            }
            chi = step.apply_adjoint(&chi);
        }
        Ok((probability, grad))
    }

    pub fn control_gradient(
        &self,
        params: &ModelParams,
        x: &[f64],
        label: usize,
        method: GradMethod,
        delta: f64,
        noise: Option<&RealMatrix>,
    ) -> Result<ControlGradient> {
        check_delta(method, delta)?;
        match method {
            GradMethod::Analytic => self.analytic_control_gradient(params, x, label, noise),
            GradMethod::ForwardDifference => self.fd_control_gradient(params, x, label, delta, false, noise),
            GradMethod::CentralDifference => self.fd_control_gradient(params, x, label, delta, true, noise),
        }
    }

    /// Probability gradient over all trainable parameters for one sample.
    pub fn prob_gradient(
        &self,
        params: &ModelParams,
        x: &[f64],
        label: usize,
        method: GradMethod,
        delta: f64,
        noise: Option<&RealMatrix>,
    ) -> Result<GradientBundle> {
        let g = self.control_gradient(params, x, label, method, delta, noise)?;
        let d_w = chain_grad_w_mode(&g.code, x, &g.w_code, params.encoder.bound, params.encoder.mode)?;
        Ok(GradientBundle {
            d_w,
            d_w_infer: g.infer,
            method,
        })
    }

    /// Gradient of `L = 1 − mean P(y|x, w)` over a mini-batch, plus the batch
    /// loss at the current parameters. Per-sample work runs in parallel; the
    /// reduction is sequential in batch order.
    pub fn loss_gradient(
        &self,
        params: &ModelParams,
        batch: &[Sample<'_>],
        method: GradMethod,
        delta: f64,
        noise: Option<&[RealMatrix]>,
    ) -> Result<LossGradient> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        check_delta(method, delta)?;
        if let Some(traces) = noise {
            if traces.len() != batch.len() {
                return Err(Error::shape("noise traces", batch.len(), traces.len()));
            }
        }
        let per_sample = batch
            .par_iter()
            .enumerate()
            .map(|(i, s)| self.control_gradient(params, s.x, s.label, method, delta, noise.map(|t| &t[i])))
            .collect::<Result<Vec<_>>>()?;

        let cfg = self.config();
        let scale = -1.0 / batch.len() as f64;
        let mut bundle = GradientBundle::zeros(cfg, method);
        let bound = params.encoder.bound;
        let mode = params.encoder.mode;
        for (s, g) in batch.iter().zip(&per_sample) {
            bundle.d_w_infer.axpy(scale, &g.infer);
            for (i, (&gc, &w)) in g.code.iter().zip(&g.w_code).enumerate() {
                let coef = scale * gc * mode.derivative_from_output(w, bound);
                if coef != 0.0 {
                    for (dst, &xj) in bundle.d_w.row_mut(i).iter_mut().zip(s.x) {
                        *dst += coef * xj;
                    }
                }
            }
        }
        let probs: Vec<f64> = per_sample.iter().map(|g| g.probability).collect();
        Ok(LossGradient {
            loss: loss_from_true_class_probs(&probs),
            bundle,
        })
    }
}

impl Model {
    /// Naive finite differences that perturb every encoder weight and every
    /// inference amplitude directly, re-running the forward evolution each
    /// time: `(d+1)·N_code + N_infer + 1` forward evaluations.
    pub fn naive_fd_prob_gradient(
        &self,
        params: &ModelParams,
        x: &[f64],
        label: usize,
        delta: f64,
    ) -> Result<GradientBundle> {
        check_delta(GradMethod::ForwardDifference, delta)?;
        self.check_label(label)?;
        let base = self.forward(params, x, None)?[label];
        let mut probe = params.clone();
        let mut d_w = RealMatrix::zeros(params.encoder.weights.rows(), params.encoder.weights.cols());
        for i in 0..d_w.rows() {
            for j in 0..d_w.cols() {
                let orig = params.encoder.weights.get(i, j);
                probe.encoder.weights.set(i, j, orig + delta);
                d_w.set(i, j, (self.forward(&probe, x, None)?[label] - base) / delta);
                probe.encoder.weights.set(i, j, orig);
            }
        }
        let mut d_w_infer = RealMatrix::zeros(params.w_infer.rows(), params.w_infer.cols());
        for k in 0..d_w_infer.rows() {
            for l in 0..d_w_infer.cols() {
                let orig = params.w_infer.get(k, l);
                probe.w_infer.set(k, l, orig + delta);
                d_w_infer.set(k, l, (self.forward(&probe, x, None)?[label] - base) / delta);
                probe.w_infer.set(k, l, orig);
            }
        }
        Ok(GradientBundle {
            d_w,
            d_w_infer,
            method: GradMethod::ForwardDifference,
        })
    }
}

#[derive(Clone, Debug)]
pub struct LossGradient {
    pub loss: f64,
    pub bundle: GradientBundle,
}

/// `∂P/∂W_ij = (∂P/∂w_i) · (B² − w_i²)/(2B) · x_j`.
pub fn chain_grad_w(grad_code: &[f64], x: &[f64], w_code: &[f64], bound: f64) -> Result<RealMatrix> {
    chain_grad_w_mode(grad_code, x, w_code, bound, EncoderMode::Nonlinear)
}

/// Chain rule through the encoder for either activation mode.
pub fn chain_grad_w_mode(
    grad_code: &[f64],
    x: &[f64],
    w_code: &[f64],
    bound: f64,
    mode: EncoderMode,
) -> Result<RealMatrix> {
    if grad_code.len() != w_code.len() {
        return Err(Error::shape("chain_grad_w", w_code.len(), grad_code.len()));
    }
    if let Some(&w) = w_code.iter().find(|w| w.abs() > bound) {
        return Err(Error::AmplitudeOutOfBound { value: w, bound });
    }
    let mut out = RealMatrix::zeros(grad_code.len(), x.len());
    for (i, (&g, &w)) in grad_code.iter().zip(w_code).enumerate() {
        let coef = g * mode.derivative_from_output(w, bound);
        for (dst, &xj) in out.row_mut(i).iter_mut().zip(x) {
            *dst = coef * xj;
        }
    }
    Ok(out)
}

/// Forward-difference control gradient (one-off model).
pub fn fd_prob_grad_controls(
    cfg: &ModelConfig,
    params: &ModelParams,
    x: &[f64],
    label: usize,
    delta: f64,
) -> Result<(Vec<f64>, RealMatrix)> {
    let g = Model::new(cfg.clone())?.fd_control_gradient(params, x, label, delta, false, None)?;
    Ok((g.code, g.infer))
}

/// Exact probability gradient over `(W, w_infer)` (one-off model).
pub fn analytic_grad(cfg: &ModelConfig, params: &ModelParams, x: &[f64], label: usize) -> Result<GradientBundle> {
    Model::new(cfg.clone())?.prob_gradient(params, x, label, GradMethod::Analytic, DEFAULT_FD_DELTA_MHZ, None)
}

/// Empirical-loss gradient (one-off model).
pub fn loss_grad(
    cfg: &ModelConfig,
    params: &ModelParams,
    batch: &[Sample<'_>],
    method: GradMethod,
    delta: f64,
) -> Result<GradientBundle> {
    Ok(Model::new(cfg.clone())?
        .loss_gradient(params, batch, method, delta, None)?
        .bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::HamiltonianSpec;
    use std::f64::consts::TAU;

    fn rabi_cfg() -> ModelConfig {
        ModelConfig {
            spec: HamiltonianSpec::new(1, vec![]).unwrap(),
            encode_periods: 0,
            total_periods: 1,
            dt_ns: 5.0,
            n_readout: 1,
            n_classes: 2,
            bound_mhz: 25.0,
            input_dim: 1,
            shots: None,
        }
    }

    fn rabi_params(f: f64) -> ModelParams {
        let cfg = rabi_cfg();
        let mut p = ModelParams::zeros(&cfg, EncoderMode::Nonlinear).unwrap();
        p.w_infer.set(0, 0, f);
        p
    }

    // P(|1⟩) = sin²(2π f t) ⇒ dP/df = 2π t sin(4π f t), t in µs.
    fn rabi_derivative(f: f64) -> f64 {
        let t = 0.005;
        TAU * t * (2.0 * TAU * f * t).sin()
    }

    #[test]
    fn rabi_derivative_analytic_and_forward_difference() {
        let cfg = rabi_cfg();
        let exact = rabi_derivative(25.0);
        assert!((exact - 0.0314159).abs() < 1e-6);
        let g = analytic_grad(&cfg, &rabi_params(25.0), &[1.0], 1).unwrap();
        assert!((g.d_w_infer.get(0, 0) - exact).abs() < 1e-9);
        // y-drive derivative vanishes by symmetry at this point
        assert!(g.d_w_infer.get(0, 1).abs() < 1e-12);
        let (_, fd) = fd_prob_grad_controls(&cfg, &rabi_params(25.0), &[1.0], 1, 0.01).unwrap();
        assert!((fd.get(0, 0) - exact).abs() < 1e-3);
    }

    #[test]
    fn gradient_vanishes_at_rabi_peak() {
        // sin²(2π f t) peaks at f = 1/(4t) = 50 MHz for t = 5 ns
        let cfg = rabi_cfg();
        let (_, fd) = fd_prob_grad_controls(&cfg, &rabi_params(50.0), &[1.0], 1, 0.01).unwrap();
        assert!(fd.get(0, 0).abs() < 1e-3);
        let g = analytic_grad(&cfg, &rabi_params(50.0), &[1.0], 1).unwrap();
        assert!(g.d_w_infer.get(0, 0).abs() < 1e-12);
    }

    #[test]
    fn tiny_duration_gives_tiny_gradient() {
        let mut cfg = rabi_cfg();
        cfg.dt_ns = 1e-6;
        let g = analytic_grad(&cfg, &rabi_params(3.0), &[1.0], 1).unwrap();
        assert!(g.d_w_infer.max_abs() < 1e-9);
    }

    #[test]
    fn chain_rule_structure() {
        let g = chain_grad_w(&[1.0, 2.0], &[0.0, 0.0, 1.0], &[25.0, 3.0], 25.0).unwrap();
        assert!(g.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(g.get(1, 0), 0.0);
        assert_eq!(g.get(1, 1), 0.0);
        assert!((g.get(1, 2) - 2.0 * (625.0 - 9.0) / 50.0).abs() < 1e-12);
        assert!(chain_grad_w(&[1.0], &[1.0], &[26.0], 25.0).is_err());
    }

    #[test]
    fn linear_clipped_chain_uses_subgradient() {
        let g = chain_grad_w_mode(&[1.0, 1.0], &[2.0], &[3.0, 25.0], 25.0, EncoderMode::LinearClipped).unwrap();
        assert_eq!(g.get(0, 0), 2.0);
        assert_eq!(g.get(1, 0), 0.0);
    }

    #[test]
    fn bad_delta_rejected() {
        let cfg = rabi_cfg();
        assert!(loss_grad(
            &cfg,
            &rabi_params(1.0),
            &[Sample { x: &[1.0], label: 0 }],
            GradMethod::ForwardDifference,
            0.0
        )
        .is_err());
    }
}
