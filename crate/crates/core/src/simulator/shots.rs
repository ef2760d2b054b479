use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::density::DensityMatrix;
use crate::circuit::SingleQubitGate;
use crate::error::{NtError, Result};
use crate::pauli::{Pauli, PauliString};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    X,
    Y,
    Z,
}

impl Basis {
    pub fn of(p: Pauli) -> Option<Basis> {
        match p {
            Pauli::I => None,
            Pauli::X => Some(Basis::X),
            Pauli::Y => Some(Basis::Y),
            Pauli::Z => Some(Basis::Z),
        }
    }

    /// Gates rotating this basis onto Z, in application order.
    pub fn rotation(self) -> &'static [SingleQubitGate] {
        match self {
            Basis::X => &[SingleQubitGate::H],
            Basis::Y => &[SingleQubitGate::Sdg, SingleQubitGate::H],
            Basis::Z => &[],
        }
    }
}

/// Measurement basis covering a set of commuting observables qubit by qubit.
/// Qubits no observable touches are measured in Z.
pub fn common_basis(n: usize, observables: &[PauliString]) -> Result<Vec<Basis>> {
    let mut basis: Vec<Option<Basis>> = vec![None; n];
    for o in observables {
        if o.qubits() != n {
            return Err(NtError::Dimension(format!("{o} on {n} qubits")));
        }
        for (q, p) in o.word().iter().enumerate() {
            if let Some(b) = Basis::of(*p) {
                match basis[q] {
                    Some(prev) if prev != b => {
                        return Err(NtError::InvalidParameter(format!(
                            "observables need both {prev:?} and {b:?} on qubit {q}"
                        )))
                    }
                    _ => basis[q] = Some(b),
                }
            }
        }
    }
    Ok(basis.into_iter().map(|b| b.unwrap_or(Basis::Z)).collect())
}

/// Measurement counts in one product basis. Outcome index bit `n-1-k` holds
/// qubit `k`. `sign` and `weight_log` carry the quasi-probability factor of
/// the circuit that produced the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub basis: Vec<Basis>,
    pub counts: Vec<u64>,
    pub total: u64,
    pub sign: i8,
    pub weight_log: f64,
}

impl ShotRecord {
    pub fn new(basis: Vec<Basis>, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != 1 << basis.len() {
            return Err(NtError::Dimension(format!(
                "{} outcome bins for {} qubits",
                counts.len(),
                basis.len()
            )));
        }
        let total = counts.iter().sum();
        Ok(Self {
            basis,
            counts,
            total,
            sign: 1,
            weight_log: 0.0,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.basis.len()
    }

    /// Parity estimate of a Pauli observable measured in this basis.
    pub fn expectation(&self, observable: &PauliString) -> Result<f64> {
        let n = self.n_qubits();
        if observable.qubits() != n {
            return Err(NtError::Dimension(format!("{observable} on {n}-qubit record")));
        }
        let mut mask = 0usize;
        for (q, p) in observable.word().iter().enumerate() {
            if let Some(b) = Basis::of(*p) {
                if b != self.basis[q] {
                    return Err(NtError::InvalidParameter(format!(
                        "{observable} not measurable in basis {:?}",
                        self.basis
                    )));
                }
                mask |= 1 << (n - 1 - q);
            }
        }
        if self.total == 0 {
            return Err(NtError::InsufficientData("empty shot record".into()));
        }
        Ok(parity_mean(&self.counts, mask))
    }
}

pub fn parity_mean(counts: &[u64], mask: usize) -> f64 {
    let total: u64 = counts.iter().sum();
    let s: i64 = counts
        .iter()
        .enumerate()
        .map(|(k, c)| if (k & mask).count_ones() & 1 == 1 { -(*c as i64) } else { *c as i64 })
        .sum();
    s as f64 / total as f64
}

/// Outcome probabilities after rotating each qubit's basis onto Z.
pub fn basis_probabilities(rho: &DensityMatrix, basis: &[Basis]) -> Result<Vec<f64>> {
    if basis.len() != rho.n_qubits() {
        return Err(NtError::Dimension(format!(
            "{} bases for {} qubits",
            basis.len(),
            rho.n_qubits()
        )));
    }
    let mut r = rho.clone();
    for (q, b) in basis.iter().enumerate() {
        for g in b.rotation() {
            r.apply_single(q, &g.matrix())?;
        }
    }
    Ok(r.probabilities())
}

/// Born-rule sampling of `n` shots.
pub fn sample_shots(rho: &DensityMatrix, basis: &[Basis], n: u64, rng: &mut impl Rng) -> Result<ShotRecord> {
    let probs = basis_probabilities(rho, basis)?;
    let dist = WeightedIndex::new(&probs)
        .map_err(|e| NtError::InvalidParameter(format!("outcome distribution: {e}")))?;
    let mut counts = vec![0u64; probs.len()];
    for _ in 0..n {
        counts[dist.sample(rng)] += 1;
    }
    ShotRecord::new(basis.to_vec(), counts)
}
