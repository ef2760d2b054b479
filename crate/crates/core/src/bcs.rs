//! BCS quench benchmark: spin Hamiltonian, exact reference dynamics and
//! first-order Trotter circuits with three CNOTs per interacting pair.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, Prep, C64};
use crate::error::{NtError, Result};
use crate::pauli::{Pauli, PauliString};
use crate::simulator::pauli_matrix;

/// One interacting pair and the junction its CNOTs run on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSpec {
    pub a: usize,
    pub b: usize,
    pub junction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbor: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcsParams {
    pub epsilon: Vec<f64>,
    pub g: f64,
    pub dt: f64,
    pub initial: Vec<Prep>,
    /// Pair order within a Trotter step.
    pub pairs: Vec<PairSpec>,
}

impl Default for BcsParams {
    fn default() -> Self {
        Self::with_qubits(vec![1.0, 1.5, 2.0], 1.0, 0.2)
    }
}

impl BcsParams {
    /// All-to-all pairs ordered by distance, junctions named `j{a}{b}`,
    /// initial state `|+...+>`. With three qubits the spectator of each
    /// pair is declared as its neighbor.
    pub fn with_qubits(epsilon: Vec<f64>, g: f64, dt: f64) -> Self {
        let n = epsilon.len();
        let mut pairs = Vec::new();
        for d in 1..n {
            for a in 0..n - d {
                let b = a + d;
                let neighbor = if n == 3 { (0..3).find(|q| *q != a && *q != b) } else { None };
                pairs.push(PairSpec {
                    a,
                    b,
                    junction: format!("j{a}{b}"),
                    neighbor,
                });
            }
        }
        Self {
            epsilon,
            g,
            dt,
            initial: vec![Prep::Plus; n],
            pairs,
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.epsilon.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_qubits();
        if n == 0 || self.initial.len() != n {
            return Err(NtError::Config(format!(
                "{} onsite energies but {} initial states",
                n,
                self.initial.len()
            )));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() || !self.g.is_finite() || self.epsilon.iter().any(|e| !e.is_finite()) {
            return Err(NtError::Config("BCS parameters must be finite with dt > 0".into()));
        }
        for p in &self.pairs {
            if p.a >= n || p.b >= n || p.a == p.b {
                return Err(NtError::Config(format!("invalid pair ({}, {})", p.a, p.b)));
            }
            if p.neighbor.is_some_and(|q| q >= n || q == p.a || q == p.b) {
                return Err(NtError::Layout(format!("invalid neighbor for pair ({}, {})", p.a, p.b)));
            }
        }
        Ok(())
    }

    pub fn time(&self, steps: usize) -> f64 {
        steps as f64 * self.dt
    }
}

/// `H = -sum_j (eps_j - g/2) Z_j - (g/2) sum_{i<j} (X_i X_j + Y_i Y_j)`.
pub fn bcs_hamiltonian(params: &BcsParams) -> Result<DMatrix<C64>> {
    params.validate()?;
    let n = params.n_qubits();
    let dim = 1 << n;
    let mut h = DMatrix::<C64>::zeros(dim, dim);
    for (j, e) in params.epsilon.iter().enumerate() {
        let z = pauli_matrix(&PauliString::single(n, j, Pauli::Z)?);
        h -= z * C64::from(e - params.g / 2.0);
    }
    for i in 0..n {
        for j in i + 1..n {
            for p in [Pauli::X, Pauli::Y] {
                let mut w = vec![Pauli::I; n];
                w[i] = p;
                w[j] = p;
                h -= pauli_matrix(&PauliString::new(w)?) * C64::from(params.g / 2.0);
            }
        }
    }
    Ok(h)
}

/// Initial product state vector, qubit 0 most significant.
pub fn initial_state(params: &BcsParams) -> DVector<C64> {
    let mut psi = DVector::from_element(1, C64::from(1.0));
    for p in &params.initial {
        let [a0, a1] = p.amplitudes();
        let mut next = DVector::zeros(psi.len() * 2);
        for (k, v) in psi.iter().enumerate() {
            next[2 * k] = v * a0;
            next[2 * k + 1] = v * a1;
        }
        psi = next;
    }
    psi
}

/// Exact propagator from one diagonalization of the Hamiltonian.
pub struct ExactDynamics {
    n: usize,
    values: DVector<f64>,
    vectors: DMatrix<C64>,
    psi0: DVector<C64>,
}

impl ExactDynamics {
    pub fn new(params: &BcsParams) -> Result<Self> {
        let h = bcs_hamiltonian(params)?;
        let eig = h.symmetric_eigen();
        Ok(Self {
            n: params.n_qubits(),
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
            psi0: initial_state(params),
        })
    }

    pub fn state(&self, t: f64) -> DVector<C64> {
        let mut c = self.vectors.adjoint() * &self.psi0;
        for (k, v) in c.iter_mut().enumerate() {
            *v *= C64::new(0.0, -self.values[k] * t).exp();
        }
        &self.vectors * c
    }

    pub fn expectation(&self, t: f64, observable: &PauliString) -> Result<f64> {
        if observable.qubits() != self.n {
            return Err(NtError::Dimension(format!(
                "{}-qubit observable on a {}-qubit system",
                observable.qubits(),
                self.n
            )));
        }
        let psi = self.state(t);
        Ok((psi.adjoint() * pauli_matrix(observable) * &psi)[(0, 0)].re)
    }
}

pub fn exact_evolution(params: &BcsParams, t: f64, observable: &PauliString) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(NtError::InvalidParameter(format!("time {t} must be >= 0")));
    }
    ExactDynamics::new(params)?.expectation(t, observable)
}

/// Appends `exp(i alpha (X_a X_b + Y_a Y_b))` as three CNOTs.
pub fn xx_yy_block(c: &mut Circuit, pair: &PairSpec, alpha: f64) {
    use std::f64::consts::FRAC_PI_2;
    let (a, b) = (pair.a, pair.b);
    let j = pair.junction.clone();
    c.rz(b, FRAC_PI_2);
    c.cnot(b, a, j.clone(), pair.neighbor);
    c.rz(a, FRAC_PI_2);
    c.ry(b, -2.0 * alpha + FRAC_PI_2);
    c.cnot(a, b, j.clone(), pair.neighbor);
    c.ry(b, 2.0 * alpha - FRAC_PI_2);
    c.cnot(b, a, j, pair.neighbor);
    c.rz(a, -FRAC_PI_2);
}

/// State preparation followed by `n_steps` first-order Trotter steps.
pub fn trotter_circuit(params: &BcsParams, n_steps: usize) -> Result<Circuit> {
    params.validate()?;
    let n = params.n_qubits();
    let mut c = Circuit::new(n);
    for (q, p) in params.initial.iter().enumerate() {
        for g in p.gates() {
            c.single(q, *g);
        }
    }
    let alpha = params.g * params.dt / 2.0;
    for _ in 0..n_steps {
        for (q, e) in params.epsilon.iter().enumerate() {
            c.rz(q, -2.0 * (e - params.g / 2.0) * params.dt);
        }
        for pair in &params.pairs {
            xx_yy_block(&mut c, pair, alpha);
        }
    }
    c.validate()?;
    Ok(c)
}

/// `{X0, Y1, Z2, X0Y1, Y1Z2, X0Z2, X0Y1Z2}`.
pub fn observable_set() -> Vec<PauliString> {
    ["XII", "IYI", "IIZ", "XYI", "IYZ", "XIZ", "XYZ"]
        .iter()
        .map(|s| s.parse().expect("valid label"))
        .collect()
}
