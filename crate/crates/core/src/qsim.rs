//! Qubit-chain simulator: drift and control Hamiltonians, piecewise-constant
//! propagation and projective readout.
//!
//! Units: amplitudes and couplings are ordinary frequencies in MHz, times are
//! in ns. Every frequency enters the Hamiltonian multiplied by 2π, so the
//! generator is expressed in rad/µs and the period is converted to µs before
//! exponentiation. Qubit 1 is the most significant bit of a basis index and
//! σ_z|0⟩ = +|0⟩.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::RealMatrix;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Nearest-neighbour ZZ couplings of the reference 5-qubit chain, MHz.
pub const CHAIN_COUPLINGS_MHZ: [f64; 4] = [1.5, 2.0, 2.5, 3.0];

/// Control channels per qubit: σ_x and σ_y drives.
pub const CHANNELS_PER_QUBIT: usize = 2;

/// Tolerance below which two eigenvalues are treated as degenerate in the
/// divided-difference kernel.
pub const DEGENERACY_TOL: f64 = 1e-9;

const HERMITIAN_TOL: f64 = 1e-12;
const NORM_TOL: f64 = 1e-9;

/// How MHz amplitudes are turned into Hamiltonian coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FrequencyConvention {
    /// Amplitude `f` MHz contributes `2π f` rad/µs.
    #[default]
    OrdinaryMhz,
}

impl FrequencyConvention {
    pub fn angular(self, mhz: f64) -> f64 {
        match self {
            FrequencyConvention::OrdinaryMhz => TAU * mhz,
        }
    }
}

pub fn ns_to_us(dt_ns: f64) -> f64 {
    dt_ns * 1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianSpec {
    n_qubits: usize,
    couplings_mhz: Vec<f64>,
    channels_per_qubit: usize,
    #[serde(default)]
    frequency_convention: FrequencyConvention,
}

impl HamiltonianSpec {
    pub fn new(n_qubits: usize, couplings_mhz: Vec<f64>) -> Result<Self> {
        let spec = Self {
            n_qubits,
            couplings_mhz,
            channels_per_qubit: CHANNELS_PER_QUBIT,
            frequency_convention: FrequencyConvention::OrdinaryMhz,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Chain of `n_qubits` (1..=5) with the reference couplings.
    pub fn reference_chain(n_qubits: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > CHAIN_COUPLINGS_MHZ.len() + 1 {
            return Err(Error::Config(format!(
                "reference chain supports 1..={} qubits, got {n_qubits}",
                CHAIN_COUPLINGS_MHZ.len() + 1
            )));
        }
        Self::new(n_qubits, CHAIN_COUPLINGS_MHZ[..n_qubits - 1].to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_qubits == 0 {
            return Err(Error::Config("n_qubits must be at least 1".into()));
        }
        if self.n_qubits > 12 {
            return Err(Error::Config(format!(
                "{} qubits is beyond the dense simulator's range",
                self.n_qubits
            )));
        }
        if self.couplings_mhz.len() != self.n_qubits - 1 {
            return Err(Error::shape(
                "HamiltonianSpec couplings",
                self.n_qubits - 1,
                self.couplings_mhz.len(),
            ));
        }
        if self.channels_per_qubit != CHANNELS_PER_QUBIT {
            return Err(Error::Config(format!(
                "channels_per_qubit is fixed at {CHANNELS_PER_QUBIT}"
            )));
        }
        if self.couplings_mhz.iter().any(|g| !g.is_finite()) {
            return Err(Error::Config("couplings must be finite".into()));
        }
        Ok(())
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn couplings_mhz(&self) -> &[f64] {
        &self.couplings_mhz
    }

    pub fn channels_per_qubit(&self) -> usize {
        self.channels_per_qubit
    }

    pub fn frequency_convention(&self) -> FrequencyConvention {
        self.frequency_convention
    }

    /// Number of control Hamiltonians, `c·n`.
    pub fn n_controls(&self) -> usize {
        self.channels_per_qubit * self.n_qubits
    }

    /// Hilbert-space dimension `2^n`.
    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }
}

/// Eigenvalue (+1 / −1) of σ_z on `qubit` (0-based, 0 = most significant)
/// for computational basis index `basis`.
fn z_sign(basis: usize, qubit: usize, n_qubits: usize) -> f64 {
    if (basis >> (n_qubits - 1 - qubit)) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn qubit_mask(qubit: usize, n_qubits: usize) -> usize {
    1 << (n_qubits - 1 - qubit)
}

/// Normalized pure state of the chain.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState {
    amplitudes: CVector,
}

impl QuantumState {
    pub fn new(amplitudes: CVector) -> Result<Self> {
        let dim = amplitudes.len();
        if dim == 0 || !dim.is_power_of_two() {
            return Err(Error::shape("QuantumState", "power-of-two length", dim));
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::Config(format!("state norm {norm} is not 1")));
        }
        Ok(Self { amplitudes })
    }

    pub fn basis(n_qubits: usize, index: usize) -> Self {
        let mut amplitudes = CVector::zeros(1 << n_qubits);
        amplitudes[index] = C64::new(1.0, 0.0);
        Self { amplitudes }
    }

    /// The all-zeros state |0…0⟩.
    pub fn ground(n_qubits: usize) -> Self {
        Self::basis(n_qubits, 0)
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn n_qubits(&self) -> usize {
        self.amplitudes.len().trailing_zeros() as usize
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub(crate) fn from_raw(amplitudes: CVector) -> Self {
        Self { amplitudes }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator(CMatrix);

impl HermitianOperator {
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::shape(
                "HermitianOperator",
                "square matrix",
                format!("{}x{}", m.nrows(), m.ncols()),
            ));
        }
        let scale = m.iter().fold(1.0f64, |a, z| a.max(z.norm()));
        let dev = (&m - m.adjoint()).iter().fold(0.0f64, |a, z| a.max(z.norm()));
        if dev > HERMITIAN_TOL * scale {
            return Err(Error::NotHermitian(dev));
        }
        Ok(Self(m))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(CMatrix::zeros(dim, dim))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitaryOperator(CMatrix);

impl UnitaryOperator {
    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn apply(&self, state: &QuantumState) -> QuantumState {
        QuantumState::from_raw(&self.0 * state.amplitudes())
    }

    /// `max |(U U† − I)_ij|`.
    pub fn unitarity_defect(&self) -> f64 {
        let n = self.0.nrows();
        let prod = &self.0 * self.0.adjoint();
        (prod - CMatrix::identity(n, n))
            .iter()
            .fold(0.0f64, |a, z| a.max(z.norm()))
    }
}

/// Zero-order-hold pulse table for one forward evolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSchedule {
    pub dt_ns: f64,
    /// `M × (c·n)` amplitudes in MHz; period-major, channels ordered
    /// (x₁, y₁, x₂, y₂, …).
    pub amplitudes: RealMatrix,
    /// Optional `M × n` σ_z offsets in MHz.
    pub noise_offsets: Option<RealMatrix>,
}

impl ControlSchedule {
    pub fn new(dt_ns: f64, amplitudes: RealMatrix) -> Self {
        Self {
            dt_ns,
            amplitudes,
            noise_offsets: None,
        }
    }

    pub fn with_noise(mut self, offsets: RealMatrix) -> Self {
        self.noise_offsets = Some(offsets);
        self
    }

    pub fn periods(&self) -> usize {
        self.amplitudes.rows()
    }

    /// Concatenates `self` then `next` in time. Both must share `dt_ns` and
    /// either both carry noise or neither does.
    pub fn concat(&self, next: &ControlSchedule) -> Result<ControlSchedule> {
        if self.dt_ns != next.dt_ns {
            return Err(Error::Config("cannot concatenate schedules with different dt".into()));
        }
        let noise_offsets = match (&self.noise_offsets, &next.noise_offsets) {
            (None, None) => None,
            (Some(a), Some(b)) => Some(a.vstack(b)?),
            _ => return Err(Error::Config("noise presence differs between schedules".into())),
        };
        Ok(ControlSchedule {
            dt_ns: self.dt_ns,
            amplitudes: self.amplitudes.vstack(&next.amplitudes)?,
            noise_offsets,
        })
    }

    fn validate(&self, spec: &HamiltonianSpec) -> Result<()> {
        if !(self.dt_ns.is_finite() && self.dt_ns > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt_ns)));
        }
        if self.amplitudes.cols() != spec.n_controls() && self.amplitudes.rows() > 0 {
            return Err(Error::shape(
                "ControlSchedule amplitudes",
                spec.n_controls(),
                self.amplitudes.cols(),
            ));
        }
        if let Some(noise) = &self.noise_offsets {
            if noise.shape() != (self.periods(), spec.n_qubits()) {
                return Err(Error::shape(
                    "ControlSchedule noise offsets",
                    format!("{}x{}", self.periods(), spec.n_qubits()),
                    format!("{}x{}", noise.rows(), noise.cols()),
                ));
            }
        }
        Ok(())
    }
}

/// `2π Σ g_{i,i+1} σ_z^i σ_z^{i+1}`: diagonal and real.
pub fn build_drift(spec: &HamiltonianSpec) -> HermitianOperator {
    let n = spec.n_qubits();
    let conv = spec.frequency_convention();
    let diag = (0..spec.dim())
        .map(|b| {
            let e: f64 = spec
                .couplings_mhz()
                .iter()
                .enumerate()
                .map(|(i, &g)| conv.angular(g) * z_sign(b, i, n) * z_sign(b, i + 1, n))
                .sum();
            C64::new(e, 0.0)
        })
        .collect::<Vec<_>>();
    HermitianOperator(CMatrix::from_diagonal(&CVector::from_vec(diag)))
}

/// Control Hamiltonians ordered (σ_x^1, σ_y^1, σ_x^2, σ_y^2, …), each scaled
/// by the 2π frequency factor.
pub fn build_controls(spec: &HamiltonianSpec) -> Vec<HermitianOperator> {
    let n = spec.n_qubits();
    let dim = spec.dim();
    let scale = spec.frequency_convention().angular(1.0);
    let mut ops = Vec::with_capacity(spec.n_controls());
    for q in 0..n {
        let mask = qubit_mask(q, n);
        let mut x = CMatrix::zeros(dim, dim);
        let mut y = CMatrix::zeros(dim, dim);
        for b in 0..dim {
            let flipped = b ^ mask;
            x[(flipped, b)] = C64::new(scale, 0.0);
            // σ_y|0⟩ = i|1⟩, σ_y|1⟩ = −i|0⟩
            let s = if b & mask == 0 { 1.0 } else { -1.0 };
            y[(flipped, b)] = C64::new(0.0, s * scale);
        }
        ops.push(HermitianOperator(x));
        ops.push(HermitianOperator(y));
    }
    ops
}

/// Spectral form of one period's evolution, `U = V e^{−iΛ t} V†`.
#[derive(Clone, Debug)]
pub struct SpectralStep {
    energies: Vec<f64>,
    vectors: CMatrix,
    duration_us: f64,
}

impl SpectralStep {
    pub fn new(h: &HermitianOperator, dt_ns: f64) -> Result<Self> {
        let dim = h.dim();
        let m = h.matrix();
        if (0..dim).all(|i| (0..dim).all(|j| i == j || m[(i, j)] == C64::new(0.0, 0.0))) {
            return Ok(Self {
                energies: (0..dim).map(|i| m[(i, i)].re).collect(),
                vectors: CMatrix::identity(dim, dim),
                duration_us: ns_to_us(dt_ns),
            });
        }
        let eig = SymmetricEigen::try_new(h.matrix().clone(), f64::EPSILON, 10_000).ok_or(Error::Eigen(dim))?;
        Ok(Self {
            energies: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
            duration_us: ns_to_us(dt_ns),
        })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn vectors(&self) -> &CMatrix {
        &self.vectors
    }

    pub fn duration_us(&self) -> f64 {
        self.duration_us
    }

    fn phases(&self, sign: f64) -> impl Iterator<Item = C64> + '_ {
        self.energies
            .iter()
            .map(move |&e| C64::from_polar(1.0, -sign * e * self.duration_us))
    }

    /// `U ψ`.
    pub fn apply(&self, psi: &CVector) -> CVector {
        let mut c = self.vectors.ad_mul(psi);
        for (ci, ph) in c.iter_mut().zip(self.phases(1.0)) {
            *ci *= ph;
        }
        &self.vectors * c
    }

    /// `U† ψ`.
    pub fn apply_adjoint(&self, psi: &CVector) -> CVector {
        let mut c = self.vectors.ad_mul(psi);
        for (ci, ph) in c.iter_mut().zip(self.phases(-1.0)) {
            *ci *= ph;
        }
        &self.vectors * c
    }

    pub fn unitary(&self) -> UnitaryOperator {
        let mut scaled = self.vectors.clone();
        for (mut col, ph) in scaled.column_iter_mut().zip(self.phases(1.0)) {
            col *= ph;
        }
        UnitaryOperator(scaled * self.vectors.adjoint())
    }

    /// Divided differences of `λ ↦ e^{−iλt}` over the spectrum. Entry (p, q)
    /// is `(e^{−iλ_p t} − e^{−iλ_q t}) / (λ_p − λ_q)`, replaced by the
    /// derivative `−i t e^{−iλ_p t}` when the eigenvalues are degenerate.
    /// The Fréchet derivative of the step along `A` is `V (Φ ∘ V†AV) V†`.
    pub fn divided_differences(&self) -> CMatrix {
        let n = self.energies.len();
        let t = self.duration_us;
        let ph: Vec<C64> = self.phases(1.0).collect();
        CMatrix::from_fn(n, n, |p, q| {
            let (lp, lq) = (self.energies[p], self.energies[q]);
            if (lp - lq).abs() < DEGENERACY_TOL {
                let mid = C64::from_polar(1.0, -0.5 * (lp + lq) * t);
                C64::new(0.0, -t) * mid
            } else {
                (ph[p] - ph[q]) / (lp - lq)
            }
        })
    }
}

/// `exp(−i H dt)` with `H` in rad/µs and `dt` in ns.
pub fn step_propagator(h: &HermitianOperator, dt_ns: f64) -> Result<UnitaryOperator> {
    Ok(SpectralStep::new(h, dt_ns)?.unitary())
}

/// Drift and control operators of a chain, built once and reused for every
/// period.
#[derive(Clone, Debug)]
pub struct ChainSystem {
    spec: HamiltonianSpec,
    drift: HermitianOperator,
    controls: Vec<HermitianOperator>,
}

impl ChainSystem {
    pub fn new(spec: &HamiltonianSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec: spec.clone(),
            drift: build_drift(spec),
            controls: build_controls(spec),
        })
    }

    pub fn spec(&self) -> &HamiltonianSpec {
        &self.spec
    }

    pub fn drift(&self) -> &HermitianOperator {
        &self.drift
    }

    pub fn controls(&self) -> &[HermitianOperator] {
        &self.controls
    }

    /// `H₀ + Σ_ℓ a_ℓ H_ℓ + 2π Σ_k n_k σ_z^k`.
    pub fn hamiltonian(&self, amplitudes: &[f64], noise: Option<&[f64]>) -> HermitianOperator {
        let mut h = self.drift.0.clone();
        for (&a, op) in amplitudes.iter().zip(&self.controls) {
            if a != 0.0 {
                h.zip_apply(&op.0, |hij, cij| *hij += cij * a);
            }
        }
        if let Some(noise) = noise {
            let n = self.spec.n_qubits();
            let conv = self.spec.frequency_convention();
            for b in 0..self.spec.dim() {
                let shift: f64 = noise
                    .iter()
                    .enumerate()
                    .map(|(k, &nk)| conv.angular(nk) * z_sign(b, k, n))
                    .sum();
                h[(b, b)] += C64::new(shift, 0.0);
            }
        }
        HermitianOperator(h)
    }

    /// Spectral decomposition of every period of `schedule`.
    pub fn steps(&self, schedule: &ControlSchedule) -> Result<Vec<SpectralStep>> {
        schedule.validate(&self.spec)?;
        let finite = schedule.amplitudes.is_finite() && schedule.noise_offsets.as_ref().is_none_or(|m| m.is_finite());
        if !finite {
            return Err(Error::NonFinite {
                what: "control amplitude",
                iteration: 0,
            });
        }
        (0..schedule.periods())
            .map(|k| {
                let noise = schedule.noise_offsets.as_ref().map(|m| m.row(k));
                let h = self.hamiltonian(schedule.amplitudes.row(k), noise);
                SpectralStep::new(&h, schedule.dt_ns)
            })
            .collect()
    }

    pub fn evolve(&self, state: &QuantumState, schedule: &ControlSchedule) -> Result<QuantumState> {
        Ok(self
            .evolve_trajectory(state, schedule)?
            .pop()
            .unwrap_or_else(|| state.clone()))
    }

    /// States at the end of each period (length `M`).
    pub fn evolve_trajectory(&self, state: &QuantumState, schedule: &ControlSchedule) -> Result<Vec<QuantumState>> {
        if state.dim() != self.spec.dim() {
            return Err(Error::shape("evolve state", self.spec.dim(), state.dim()));
        }
        let steps = self.steps(schedule)?;
        let mut psi = state.amplitudes.clone();
        let mut out = Vec::with_capacity(steps.len());
        for step in &steps {
            psi = step.apply(&psi);
            out.push(QuantumState::from_raw(psi.clone()));
        }
        Ok(out)
    }
}

pub fn evolve(state: &QuantumState, schedule: &ControlSchedule, spec: &HamiltonianSpec) -> Result<QuantumState> {
    ChainSystem::new(spec)?.evolve(state, schedule)
}

pub fn evolve_trajectory(
    state: &QuantumState,
    schedule: &ControlSchedule,
    spec: &HamiltonianSpec,
) -> Result<Vec<QuantumState>> {
    ChainSystem::new(spec)?.evolve_trajectory(state, schedule)
}

/// Outcome probabilities of projective σ_z readout on the first `n_readout`
/// qubits; the remaining qubits are traced out. Outcome `j` is the bit
/// string of the readout qubits with qubit 1 most significant.
pub fn povm_probabilities(state: &QuantumState, n_readout: usize) -> Result<Vec<f64>> {
    let n = state.n_qubits();
    if n_readout > n {
        return Err(Error::Config(format!(
            "cannot read out {n_readout} qubits of a {n}-qubit state"
        )));
    }
    let shift = n - n_readout;
    let mut probs = vec![0.0; 1 << n_readout];
    for (b, a) in state.amplitudes.iter().enumerate() {
        probs[b >> shift] += a.norm_sqr();
    }
    Ok(probs)
}

/// Index set of basis states belonging to readout outcome `outcome`.
pub(crate) fn outcome_range(n_qubits: usize, n_readout: usize, outcome: usize) -> std::ops::Range<usize> {
    let width = 1 << (n_qubits - n_readout);
    outcome * width..(outcome + 1) * width
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec3() -> HamiltonianSpec {
        HamiltonianSpec::new(3, vec![1.5, 2.0]).unwrap()
    }

    #[test]
    fn drift_diagonal_matches_sign_enumeration() {
        let spec = spec3();
        let h = build_drift(&spec);
        // Oracle: explicit ±1 eigenvalues per bit, qubit 1 most significant.
        for b in 0..8usize {
            let s: Vec<f64> = (0..3)
                .map(|q| if (b >> (2 - q)) & 1 == 0 { 1.0 } else { -1.0 })
                .collect();
            let expected = TAU * (1.5 * s[0] * s[1] + 2.0 * s[1] * s[2]);
            assert!((h.matrix()[(b, b)].re - expected).abs() < 1e-12, "basis {b}");
            assert_eq!(h.matrix()[(b, b)].im, 0.0);
        }
        assert!((h.matrix()[(0, 0)].re - TAU * 3.5).abs() < 1e-12);
        assert!((h.matrix()[(0b010, 0b010)].re + TAU * 3.5).abs() < 1e-12);
        let off = h
            .matrix()
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 9 != 0)
            .all(|(_, z)| *z == C64::new(0.0, 0.0));
        assert!(off);
    }

    #[test]
    fn single_qubit_drift_is_zero() {
        let spec = HamiltonianSpec::new(1, vec![]).unwrap();
        assert!(build_drift(&spec).matrix().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn coupling_length_is_checked() {
        assert!(HamiltonianSpec::new(3, vec![1.0]).is_err());
        assert!(HamiltonianSpec::new(0, vec![]).is_err());
    }

    #[test]
    fn single_qubit_controls_are_paulis() {
        let spec = HamiltonianSpec::new(1, vec![]).unwrap();
        let c = build_controls(&spec);
        assert_eq!(c.len(), 2);
        let x = c[0].matrix() / C64::new(TAU, 0.0);
        let y = c[1].matrix() / C64::new(TAU, 0.0);
        let i = C64::new(0.0, 1.0);
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        assert_eq!(x, CMatrix::from_row_slice(2, 2, &[zero, one, one, zero]));
        assert_eq!(y, CMatrix::from_row_slice(2, 2, &[zero, -i, i, zero]));
    }

    #[test]
    fn three_qubit_controls_shape() {
        let c = build_controls(&spec3());
        assert_eq!(c.len(), 6);
        for op in &c {
            let max = op.matrix().iter().fold(0.0f64, |a, z| a.max(z.norm()));
            assert!((max - TAU).abs() < 1e-12);
            assert!(op.matrix().trace().norm() < 1e-12);
            HermitianOperator::new(op.matrix().clone()).unwrap();
        }
    }

    #[test]
    fn sigma_x_on_second_qubit_flips_second_factor() {
        let spec = HamiltonianSpec::new(2, vec![0.0]).unwrap();
        let c = build_controls(&spec);
        let out = c[2].matrix() * QuantumState::ground(2).amplitudes() / C64::new(TAU, 0.0);
        assert_eq!(out, QuantumState::basis(2, 0b01).amplitudes().clone());
    }

    #[test]
    fn zero_hamiltonian_gives_identity() {
        let u = step_propagator(&HermitianOperator::zeros(4), 5.0).unwrap();
        assert!((u.matrix() - CMatrix::identity(4, 4)).iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn rabi_quarter_cycle() {
        let spec = HamiltonianSpec::new(1, vec![]).unwrap();
        let sys = ChainSystem::new(&spec).unwrap();
        let h = sys.hamiltonian(&[25.0, 0.0], None);
        let u = step_propagator(&h, 5.0).unwrap();
        let out = u.apply(&QuantumState::ground(1));
        let p1 = out.amplitudes()[1].norm_sqr();
        let expected = (TAU * 0.025 * 5.0).sin().powi(2);
        assert!((p1 - expected).abs() < 1e-12);
        assert!((p1 - 0.5).abs() < 1e-6);
    }

    #[test]
    fn propagator_group_inverse() {
        let sys = ChainSystem::new(&spec3()).unwrap();
        let h = sys.hamiltonian(&[3.0, -7.0, 12.0, 1.0, -25.0, 4.0], Some(&[2.0, -1.0, 0.5]));
        let fwd = step_propagator(&h, 5.0).unwrap();
        let back = step_propagator(&h, -5.0).unwrap();
        let prod = fwd.matrix() * back.matrix();
        assert!((prod - CMatrix::identity(8, 8)).iter().all(|z| z.norm() < 1e-10));
        assert!(fwd.unitarity_defect() < 1e-12);
    }

    #[test]
    fn zero_controls_zero_couplings_is_identity_evolution() {
        let spec = HamiltonianSpec::new(2, vec![0.0]).unwrap();
        let sched = ControlSchedule::new(5.0, RealMatrix::zeros(7, 4));
        let psi = QuantumState::basis(2, 3);
        let out = evolve(&psi, &sched, &spec).unwrap();
        assert!((out.amplitudes() - psi.amplitudes()).norm() < 1e-15);
    }

    #[test]
    fn evolve_rejects_bad_shapes() {
        let spec = spec3();
        let sched = ControlSchedule::new(5.0, RealMatrix::zeros(2, 5));
        assert!(evolve(&QuantumState::ground(3), &sched, &spec).is_err());
        let sched = ControlSchedule::new(5.0, RealMatrix::zeros(2, 6)).with_noise(RealMatrix::zeros(2, 2));
        assert!(evolve(&QuantumState::ground(3), &sched, &spec).is_err());
    }

    #[test]
    fn povm_examples() {
        assert_eq!(
            povm_probabilities(&QuantumState::ground(3), 3).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        let amp = C64::new(1.0 / 8f64.sqrt(), 0.0);
        let uniform = QuantumState::new(CVector::from_element(8, amp)).unwrap();
        for p in povm_probabilities(&uniform, 3).unwrap() {
            assert!((p - 0.125).abs() < 1e-15);
        }
        let p = povm_probabilities(&QuantumState::basis(5, 0b00011), 3).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(p[1..].iter().all(|&v| v == 0.0));
        assert!(povm_probabilities(&QuantumState::ground(2), 3).is_err());
    }

    #[test]
    fn state_norm_is_validated() {
        assert!(QuantumState::new(CVector::from_element(2, C64::new(1.0, 0.0))).is_err());
        assert!(QuantumState::new(CVector::from_element(3, C64::new(0.0, 0.0))).is_err());
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 1)] = C64::new(1.0, 0.0);
        assert!(matches!(HermitianOperator::new(m), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn degenerate_divided_difference_uses_derivative() {
        let step = SpectralStep::new(&HermitianOperator::zeros(2), 5.0).unwrap();
        let phi = step.divided_differences();
        let t = ns_to_us(5.0);
        for z in phi.iter() {
            assert!((z - C64::new(0.0, -t)).norm() < 1e-15);
        }
    }
}
