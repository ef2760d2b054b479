use rand::Rng;
use serde::{Deserialize, Serialize};

use super::density::DensityMatrix;
use super::noise::NoiseModel;
use crate::circuit::{Circuit, Gate, Role};
use crate::error::{NtError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every noise channel applied as a full mixture.
    Channel,
    /// One Pauli error drawn per noisy location.
    Trajectory,
}

fn draw(weights: &[f64], rng: &mut impl Rng) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if r < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Runs `circuit` from `|0...0>`.
pub fn run_circuit(
    circuit: &Circuit,
    model: &NoiseModel,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<DensityMatrix> {
    evolve(DensityMatrix::zero_state(circuit.n_qubits), circuit, model, mode, rng)
}

/// Channel-mode run; needs no randomness.
pub fn run_channel(circuit: &Circuit, model: &NoiseModel) -> Result<DensityMatrix> {
    struct NoRng;
    impl rand::RngCore for NoRng {
        fn next_u32(&mut self) -> u32 {
            unreachable!("channel mode draws no random numbers")
        }
        fn next_u64(&mut self) -> u64 {
            unreachable!("channel mode draws no random numbers")
        }
        fn fill_bytes(&mut self, _: &mut [u8]) {
            unreachable!("channel mode draws no random numbers")
        }
    }
    run_circuit(circuit, model, Mode::Channel, &mut NoRng)
}

/// Applies `circuit` to `rho`, attaching the model's noise after every CNOT
/// (coherent residual first, then the Pauli channel) and after every logical
/// single-qubit gate.
pub fn evolve(
    mut rho: DensityMatrix,
    circuit: &Circuit,
    model: &NoiseModel,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<DensityMatrix> {
    if rho.n_qubits() != circuit.n_qubits {
        return Err(NtError::Dimension(format!(
            "{}-qubit circuit on {}-qubit state",
            circuit.n_qubits,
            rho.n_qubits()
        )));
    }
    if !model.is_empty() && model.n_qubits() != circuit.n_qubits {
        return Err(NtError::Dimension(format!(
            "{}-qubit model for {}-qubit circuit",
            model.n_qubits(),
            circuit.n_qubits
        )));
    }
    let p1 = model.single_qubit_depolarizing();
    for op in &circuit.ops {
        rho.apply_gate(&op.gate)?;
        match &op.gate {
            Gate::Single { qubit, .. } => {
                if p1 > 0.0 && op.role == Role::Logical {
                    match mode {
                        Mode::Channel => rho.apply_depolarizing_1q(*qubit, p1)?,
                        Mode::Trajectory => {
                            if rng.random::<f64>() < p1 {
                                rho.apply_pauli(&[*qubit], rng.random_range(1..4))?;
                            }
                        }
                    }
                }
            }
            Gate::Cnot(c) => {
                let Some(i) = model.lookup(c)? else { continue };
                let entry = &model.junctions()[i];
                if let Some(u) = model.unitary(i) {
                    rho.apply_two(c.control, c.target, u)?;
                }
                let qubits = entry.qubits();
                match mode {
                    Mode::Channel => rho.apply_pauli_channel(model.probs(i), &qubits)?,
                    Mode::Trajectory => {
                        let a = draw(model.probs(i).values(), rng);
                        rho.apply_pauli(&qubits, a)?;
                    }
                }
            }
        }
    }
    Ok(rho)
}
