//! Diagonal Pauli channels in PTM form and quasi-probability tailoring plans.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NtError, Result};
use crate::pauli::{
    num_paulis, symplectic_index, walsh_hadamard, FidelityVector, PauliString, ProbVector,
    NORM_TOL, QUASI_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepolarizingParams2Q {
    /// PTM damping; per-Pauli rate is `epsilon / 16`.
    pub epsilon: f64,
}

impl DepolarizingParams2Q {
    pub fn from_rate(lambda: f64) -> Self {
        Self {
            epsilon: 16.0 * lambda,
        }
    }

    pub fn rate(&self) -> f64 {
        self.epsilon / 16.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiLocalParams3Q {
    pub eps_cnot: f64,
    pub eps_neigh: f64,
    pub eps_glob: f64,
}

impl QuasiLocalParams3Q {
    pub fn validate(&self) -> Result<()> {
        let all = [self.eps_cnot, self.eps_neigh, self.eps_glob];
        if all.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(NtError::InvalidParameter(format!(
                "quasi-local rates must be >= 0, got {all:?}"
            )));
        }
        if 1.0 - all.iter().sum::<f64>() < 0.0 {
            return Err(NtError::InvalidParameter(format!(
                "quasi-local rates sum above 1: {all:?}"
            )));
        }
        Ok(())
    }
}

pub fn make_depolarizing_2q(params: DepolarizingParams2Q) -> Result<FidelityVector> {
    let e = params.epsilon;
    if !(0.0..=1.0).contains(&e) {
        return Err(NtError::InvalidParameter(format!(
            "depolarizing epsilon {e} outside [0, 1]"
        )));
    }
    Ok(depolarizing_fidelities(2, e / 16.0))
}

/// Isotropic channel on `q` qubits with per-Pauli error rate `lambda`:
/// `f_a = 1 - 4^q lambda` for every `a != 0`. No range check, so the
/// optimizer can scan past the physical bound.
pub fn depolarizing_fidelities(q: usize, lambda: f64) -> FidelityVector {
    let n = num_paulis(q);
    let mut f = vec![1.0 - n as f64 * lambda; n];
    f[0] = 1.0;
    FidelityVector::new(q, f).expect("well-formed depolarizing vector")
}

/// Quasi-local 3-qubit depolarizing channel on (control, target, neighbor),
/// neighbor being the least significant Pauli digit.
pub fn make_quasilocal_3q(params: QuasiLocalParams3Q) -> Result<FidelityVector> {
    params.validate()?;
    Ok(quasilocal_fidelities(params))
}

pub(crate) fn quasilocal_fidelities(params: QuasiLocalParams3Q) -> FidelityVector {
    let QuasiLocalParams3Q {
        eps_cnot: c,
        eps_neigh: n,
        eps_glob: g,
    } = params;
    let f = (0..64)
        .map(|i| {
            let pair = i >> 2;
            let kappa = i & 3;
            match (pair == 0, kappa == 0) {
                (true, true) => 1.0,
                (false, true) => 1.0 - c - g,
                (true, false) => 1.0 - n - g,
                (false, false) => 1.0 - n - c - g,
            }
        })
        .collect();
    FidelityVector::new(3, f).expect("well-formed quasi-local vector")
}

/// Signed sampling distribution realizing one tailoring channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "PlanRecord", into = "PlanRecord")]
pub struct QuasiProbPlan {
    junction_id: String,
    q: usize,
    quasi: Vec<f64>,
    probs: Vec<f64>,
    signs: Vec<i8>,
    gamma: f64,
    sampler: WeightedIndex<f64>,
}

#[derive(Serialize, Deserialize)]
struct PlanRecord {
    junction_id: String,
    q: usize,
    quasi: Vec<f64>,
    gamma: f64,
}

impl TryFrom<PlanRecord> for QuasiProbPlan {
    type Error = NtError;

    fn try_from(r: PlanRecord) -> Result<Self> {
        QuasiProbPlan::from_quasi(r.q, r.quasi, r.junction_id)
    }
}

impl From<QuasiProbPlan> for PlanRecord {
    fn from(p: QuasiProbPlan) -> Self {
        PlanRecord {
            junction_id: p.junction_id,
            q: p.q,
            quasi: p.quasi,
            gamma: p.gamma,
        }
    }
}

impl QuasiProbPlan {
    pub fn from_quasi(q: usize, quasi: Vec<f64>, junction_id: impl Into<String>) -> Result<Self> {
        let v = ProbVector::new(q, quasi)?;
        let quasi = v.values().to_vec();
        let gamma: f64 = quasi.iter().map(|x| x.abs()).sum();
        let probs: Vec<f64> = quasi.iter().map(|x| x.abs() / gamma).collect();
        let signs = quasi
            .iter()
            .map(|x| if *x < -QUASI_TOL { -1 } else { 1 })
            .collect();
        let sampler = WeightedIndex::new(&probs)
            .map_err(|e| NtError::InvalidParameter(format!("plan weights: {e}")))?;
        Ok(Self {
            junction_id: junction_id.into(),
            q,
            quasi,
            probs,
            signs,
            gamma,
            sampler,
        })
    }

    pub fn identity(q: usize, junction_id: impl Into<String>) -> Self {
        let mut quasi = vec![0.0; num_paulis(q)];
        quasi[0] = 1.0;
        Self::from_quasi(q, quasi, junction_id).expect("identity plan")
    }

    pub fn with_junction(mut self, junction_id: impl Into<String>) -> Self {
        self.junction_id = junction_id.into();
        self
    }

    pub fn junction_id(&self) -> &str {
        &self.junction_id
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn quasi(&self) -> &[f64] {
        &self.quasi
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn log_gamma(&self) -> f64 {
        self.gamma.ln()
    }

    pub fn is_identity(&self) -> bool {
        self.quasi[0] == 1.0 && self.quasi[1..].iter().all(|x| *x == 0.0)
    }

    /// Draws an index with probability `|q_a| / gamma`.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, i8) {
        let a = self.sampler.sample(rng);
        (a, self.signs[a])
    }
}

/// Plan for `E_tailor = E_target (E_gate)^-1`.
pub fn tailor_plan(gate: &FidelityVector, target: &FidelityVector) -> Result<QuasiProbPlan> {
    gate.check_same(target)?;
    if let Some(index) = gate.values().iter().position(|f| *f == 0.0) {
        return Err(NtError::SingularChannel { index });
    }
    let ratio = target
        .values()
        .iter()
        .zip(gate.values())
        .map(|(t, g)| t / g)
        .collect();
    let p = walsh_hadamard(&FidelityVector::new(gate.q(), ratio)?);
    QuasiProbPlan::from_quasi(gate.q(), p.values().to_vec(), "")
}

/// Depolarizing strength whose fidelities match the gate's average.
pub fn matched_epsilon(gate: &FidelityVector) -> f64 {
    1.0 - gate.mean_nontrivial()
}

/// Closed-form quasi-probabilities for a 2-qubit depolarizing target
/// `diag(1, 1 - epsilon, ...)`.
pub fn q_dnt(gate: &FidelityVector, epsilon: f64) -> Result<QuasiProbPlan> {
    if gate.q() != 2 {
        return Err(NtError::Dimension(format!(
            "q_dnt needs a 2-qubit gate channel, got {} qubits",
            gate.q()
        )));
    }
    if let Some(index) = gate.values().iter().position(|f| *f == 0.0) {
        return Err(NtError::SingularChannel { index });
    }
    let quasi = (0..16)
        .map(|a| {
            let s: f64 = (1..16)
                .map(|b| {
                    let sign = if symplectic_index(2, a, b) == 1 { -1.0 } else { 1.0 };
                    sign / gate.get(b)
                })
                .sum();
            (1.0 + (1.0 - epsilon) * s) / 16.0
        })
        .collect();
    QuasiProbPlan::from_quasi(2, quasi, "")
}

/// Draws `(P_a, sign(q_a))` from a plan.
pub fn sample_dressing<R: Rng + ?Sized>(plan: &QuasiProbPlan, rng: &mut R) -> (PauliString, i8) {
    let (a, s) = plan.sample_index(rng);
    (
        PauliString::from_index(plan.q(), a).expect("plan index in range"),
        s,
    )
}

/// Clamps negative error probabilities to zero and renormalizes.
pub fn sanitize_probabilities(p: &ProbVector) -> Result<ProbVector> {
    let clamped: Vec<f64> = p.values().iter().map(|v| v.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if total <= NORM_TOL {
        return Err(NtError::Sanitization(
            "no positive probability mass left after clamping".into(),
        ));
    }
    ProbVector::physical(p.q(), clamped.iter().map(|v| v / total).collect())
}
