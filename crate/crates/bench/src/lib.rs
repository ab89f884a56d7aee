//! Seeded fixtures shared by the benchmarks in `benches/`.

use pulsenet_core::encoder::EncoderMode;
use pulsenet_core::model::{Model, ModelConfig, ModelParams};
use pulsenet_core::qsim::{ChainSystem, HamiltonianSpec, HermitianOperator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reference-chain Hamiltonian for one period with random amplitudes.
pub fn random_hamiltonian(n_qubits: usize, seed: u64) -> HermitianOperator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let system = ChainSystem::new(&HamiltonianSpec::reference_chain(n_qubits).unwrap()).unwrap();
    let amps: Vec<f64> = (0..2 * n_qubits).map(|_| rng.random_range(-25.0..25.0)).collect();
    system.hamiltonian(&amps, None)
}

/// An MNIST-shaped model with initialized parameters and one random
/// input in `[0, 1]` carrying the bias element.
pub fn mnist_fixture(n_qubits: usize, encode: usize, infer: usize, seed: u64) -> (Model, ModelParams, Vec<f64>) {
    let cfg = ModelConfig::mnist(n_qubits, encode, infer).unwrap();
    let params = ModelParams::init(&cfg, EncoderMode::Nonlinear, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..cfg.input_dim - 1).map(|_| rng.random::<f64>()).collect();
    x.push(1.0);
    (Model::new(cfg).unwrap(), params, x)
}
