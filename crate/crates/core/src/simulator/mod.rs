//! Exact density-matrix emulation with Pauli, coherent and single-qubit
//! noise, shot sampling and readout correction.

mod density;
mod noise;
mod process;
mod readout;
mod run;
mod shots;

pub use density::{gate_matrix, pauli_matrix, DensityMatrix, Mat4};
pub use noise::{
    coherent_unitary, twirl_fidelities, CoherentResidual, Confusion, JunctionNoise, NoiseModel,
    SCHEMA, SCHEMA_VERSION,
};
pub use process::{chi_matrix, max_offdiagonal, rms_offdiagonal};
pub use readout::{apply_readout_error, ibu_correct};
pub use run::{evolve, run_channel, run_circuit, Mode};
pub use shots::{basis_probabilities, common_basis, parity_mean, sample_shots, Basis, ShotRecord};

/// Functional form of [`DensityMatrix::apply_gate`].
pub fn apply_gate(rho: &DensityMatrix, gate: &crate::circuit::Gate) -> crate::Result<DensityMatrix> {
    let mut out = rho.clone();
    out.apply_gate(gate)?;
    Ok(out)
}

/// Functional form of [`DensityMatrix::apply_pauli_channel`].
pub fn apply_pauli_channel(
    rho: &DensityMatrix,
    channel: &crate::pauli::ProbVector,
    qubits: &[usize],
) -> crate::Result<DensityMatrix> {
    let mut out = rho.clone();
    out.apply_pauli_channel(channel, qubits)?;
    Ok(out)
}
