use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::circuit::{Gate, Mat2, C64};
use crate::error::{NtError, Result};
use crate::pauli::{digit, num_paulis, PauliString, ProbVector, QUASI_TOL};

pub type Mat4 = [[C64; 4]; 4];

/// Density matrix on `n` qubits, row-major. Qubit 0 is the most significant
/// bit of the computational-basis index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrix {
    n: usize,
    data: Vec<C64>,
}

impl DensityMatrix {
    pub fn zero_state(n: usize) -> Self {
        Self::basis_state(n, 0)
    }

    pub fn basis_state(n: usize, k: usize) -> Self {
        let d = 1 << n;
        let mut data = vec![C64::new(0.0, 0.0); d * d];
        data[k * d + k] = C64::new(1.0, 0.0);
        Self { n, data }
    }

    pub fn from_pure(n: usize, psi: &[C64]) -> Result<Self> {
        let d = 1 << n;
        if psi.len() != d {
            return Err(NtError::Dimension(format!(
                "state vector of length {} for {n} qubits",
                psi.len()
            )));
        }
        let mut data = vec![C64::new(0.0, 0.0); d * d];
        for i in 0..d {
            for j in 0..d {
                data[i * d + j] = psi[i] * psi[j].conj();
            }
        }
        Ok(Self { n, data })
    }

    /// Any square operator; used to push non-Hermitian basis operators
    /// through linear maps when building process matrices.
    pub fn from_operator(n: usize, m: &DMatrix<C64>) -> Result<Self> {
        let d = 1 << n;
        if m.nrows() != d || m.ncols() != d {
            return Err(NtError::Dimension(format!("{}x{} operator for {n} qubits", m.nrows(), m.ncols())));
        }
        let mut data = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                data.push(m[(i, j)]);
            }
        }
        Ok(Self { n, data })
    }

    pub fn to_matrix(&self) -> DMatrix<C64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.data[i * d + j])
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.dim() + j]
    }

    fn bit(&self, qubit: usize) -> usize {
        1 << (self.n - 1 - qubit)
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.n {
            return Err(NtError::IndexOutOfRange {
                index: q,
                n_qubits: self.n,
            });
        }
        Ok(())
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim()).map(|i| self.get(i, i)).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let m = self.to_matrix();
        let h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        h.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Diagonal of the density matrix, i.e. Z-basis outcome probabilities.
    pub fn probabilities(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i).re.max(0.0)).collect()
    }

    fn debug_check(&self) {
        if cfg!(debug_assertions) && self.is_state_like() {
            assert!(self.hermiticity_error() < 1e-8, "state lost hermiticity");
        }
    }

    fn is_state_like(&self) -> bool {
        (self.trace().re - 1.0).abs() < 1e-6
    }

    pub fn apply_single(&mut self, qubit: usize, u: &Mat2) -> Result<()> {
        self.check_qubit(qubit)?;
        let d = self.dim();
        let b = self.bit(qubit);
        let data = &mut self.data;
        // U rho
        for i0 in (0..d).filter(|i| i & b == 0) {
            let i1 = i0 | b;
            for j in 0..d {
                let (a0, a1) = (data[i0 * d + j], data[i1 * d + j]);
                data[i0 * d + j] = u[0][0] * a0 + u[0][1] * a1;
                data[i1 * d + j] = u[1][0] * a0 + u[1][1] * a1;
            }
        }
        // (U rho) U^dagger
        let (c00, c01, c10, c11) = (u[0][0].conj(), u[0][1].conj(), u[1][0].conj(), u[1][1].conj());
        for i in 0..d {
            let row = &mut data[i * d..(i + 1) * d];
            for j0 in (0..d).filter(|j| j & b == 0) {
                let j1 = j0 | b;
                let (a0, a1) = (row[j0], row[j1]);
                row[j0] = a0 * c00 + a1 * c01;
                row[j1] = a0 * c10 + a1 * c11;
            }
        }
        self.debug_check();
        Ok(())
    }

    /// Applies a 4x4 unitary on `(a, b)` with `a` as the high local bit.
    pub fn apply_two(&mut self, a: usize, b: usize, u: &Mat4) -> Result<()> {
        self.check_qubit(a)?;
        self.check_qubit(b)?;
        if a == b {
            return Err(NtError::Dimension("two-qubit gate on a single qubit".into()));
        }
        let d = self.dim();
        let (ba, bb) = (self.bit(a), self.bit(b));
        let idx = |base: usize| [base, base | bb, base | ba, base | ba | bb];
        let data = &mut self.data;
        for base in (0..d).filter(|i| i & (ba | bb) == 0) {
            let ix = idx(base);
            for j in 0..d {
                let v: [C64; 4] = std::array::from_fn(|k| data[ix[k] * d + j]);
                for r in 0..4 {
                    data[ix[r] * d + j] = (0..4).map(|k| u[r][k] * v[k]).sum();
                }
            }
        }
        for i in 0..d {
            let row = &mut data[i * d..(i + 1) * d];
            for base in (0..d).filter(|j| j & (ba | bb) == 0) {
                let jx = idx(base);
                let v: [C64; 4] = std::array::from_fn(|k| row[jx[k]]);
                for r in 0..4 {
                    row[jx[r]] = (0..4).map(|k| v[k] * u[r][k].conj()).sum();
                }
            }
        }
        self.debug_check();
        Ok(())
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<()> {
        self.check_qubit(control)?;
        self.check_qubit(target)?;
        if control == target {
            return Err(NtError::UnsupportedGate("CNOT with identical control and target".into()));
        }
        let d = self.dim();
        let (bc, bt) = (self.bit(control), self.bit(target));
        let perm = |i: usize| if i & bc != 0 { i ^ bt } else { i };
        let old = self.data.clone();
        for i in 0..d {
            let pi = perm(i);
            for j in 0..d {
                self.data[i * d + j] = old[pi * d + perm(j)];
            }
        }
        Ok(())
    }

    pub fn apply_gate(&mut self, gate: &Gate) -> Result<()> {
        match gate {
            Gate::Single { qubit, op } => self.apply_single(*qubit, &op.matrix()),
            Gate::Cnot(c) => self.apply_cnot(c.control, c.target),
        }
    }

    /// X and Z basis-index masks of a Pauli index acting on `qubits`.
    fn masks(&self, qubits: &[usize], index: usize) -> (usize, usize) {
        let q = qubits.len();
        let (mut x, mut z) = (0, 0);
        for (i, &qb) in qubits.iter().enumerate() {
            let s = digit(q, index, i);
            if s == 1 || s == 2 {
                x |= self.bit(qb);
            }
            if s == 2 || s == 3 {
                z |= self.bit(qb);
            }
        }
        (x, z)
    }

    /// `rho -> P rho P` for a Pauli index on `qubits`.
    pub fn apply_pauli(&mut self, qubits: &[usize], index: usize) -> Result<()> {
        for &q in qubits {
            self.check_qubit(q)?;
        }
        let (x, z) = self.masks(qubits, index);
        if x == 0 && z == 0 {
            return Ok(());
        }
        let d = self.dim();
        let old = self.data.clone();
        for i in 0..d {
            for j in 0..d {
                let v = old[(i ^ x) * d + (j ^ x)];
                self.data[i * d + j] = if ((i ^ j) & z).count_ones() & 1 == 1 { -v } else { v };
            }
        }
        Ok(())
    }

    /// `rho -> sum_a w_a P_a rho P_a` for a Pauli index on `qubits`.
    pub fn apply_pauli_channel(&mut self, channel: &ProbVector, qubits: &[usize]) -> Result<()> {
        if let Some(index) = channel.values().iter().position(|p| *p < -QUASI_TOL) {
            return Err(NtError::QuasiChannelNotAllowed {
                index,
                value: channel.get(index),
            });
        }
        self.apply_pauli_mixture(channel.values(), qubits)
    }

    /// Linear combination of Pauli conjugations with arbitrary real weights.
    /// Signed weights are allowed, which makes exact averages over quasi
    /// distributions computable.
    pub fn apply_pauli_mixture(&mut self, weights: &[f64], qubits: &[usize]) -> Result<()> {
        let q = qubits.len();
        if weights.len() != num_paulis(q) {
            return Err(NtError::Dimension(format!(
                "{} weights for a {q}-qubit channel",
                weights.len()
            )));
        }
        for (i, &a) in qubits.iter().enumerate() {
            self.check_qubit(a)?;
            if qubits[..i].contains(&a) {
                return Err(NtError::Dimension(format!("qubit {a} repeated in channel support")));
            }
        }
        // T[x][w] = sum_z p_{x,z} (-1)^{z.w}, over local bit patterns
        let local = 1usize << q;
        let mut t = vec![0.0; local * local];
        for (a, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (mut lx, mut lz) = (0, 0);
            for i in 0..q {
                let s = digit(q, a, i);
                if s == 1 || s == 2 {
                    lx |= 1 << i;
                }
                if s == 2 || s == 3 {
                    lz |= 1 << i;
                }
            }
            for lw in 0..local {
                let sign = if (lz & lw).count_ones() & 1 == 1 { -1.0 } else { 1.0 };
                t[lx * local + lw] += sign * w;
            }
        }
        let bits: Vec<usize> = qubits.iter().map(|&qb| self.bit(qb)).collect();
        let to_global = |l: usize| -> usize {
            (0..q).filter(|i| l & (1 << i) != 0).fold(0, |m, i| m | bits[i])
        };
        let to_local = |g: usize| -> usize {
            (0..q).filter(|i| g & bits[*i] != 0).fold(0, |m, i| m | (1 << i))
        };
        let gx: Vec<usize> = (0..local).map(to_global).collect();
        let d = self.dim();
        let old = self.data.clone();
        for i in 0..d {
            for j in 0..d {
                let w = to_local(i ^ j);
                let mut acc = C64::new(0.0, 0.0);
                for lx in 0..local {
                    let coeff = t[lx * local + w];
                    if coeff != 0.0 {
                        acc += old[(i ^ gx[lx]) * d + (j ^ gx[lx])] * coeff;
                    }
                }
                self.data[i * d + j] = acc;
            }
        }
        self.debug_check();
        Ok(())
    }

    /// Single-qubit depolarizing channel `(1 - p) rho + p/3 sum_P P rho P`.
    pub fn apply_depolarizing_1q(&mut self, qubit: usize, p: f64) -> Result<()> {
        self.apply_pauli_mixture(&[1.0 - p, p / 3.0, p / 3.0, p / 3.0], &[qubit])
    }

    /// `Tr(rho P)`.
    pub fn expectation(&self, observable: &PauliString) -> Result<f64> {
        if observable.qubits() != self.n {
            return Err(NtError::Dimension(format!(
                "{}-qubit observable on {}-qubit state",
                observable.qubits(),
                self.n
            )));
        }
        let all: Vec<usize> = (0..self.n).collect();
        let (x, z) = self.masks(&all, observable.index());
        let n_y = observable.word().iter().filter(|p| **p == crate::pauli::Pauli::Y).count();
        let phase = [
            C64::new(1.0, 0.0),
            C64::new(0.0, 1.0),
            C64::new(-1.0, 0.0),
            C64::new(0.0, -1.0),
        ][n_y % 4];
        let d = self.dim();
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..d {
            let v = self.get(k, k ^ x);
            acc += if (k & z).count_ones() & 1 == 1 { -v } else { v };
        }
        Ok((acc * phase).re)
    }
}

/// Dense matrix of a Pauli string, qubit 0 most significant.
pub fn pauli_matrix(p: &PauliString) -> DMatrix<C64> {
    use crate::circuit::SingleQubitGate;
    let mut m = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
    for s in p.word() {
        let u = match SingleQubitGate::pauli(*s) {
            Some(g) => g.matrix(),
            None => [[C64::new(1.0, 0.0), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(1.0, 0.0)]],
        };
        let f = DMatrix::from_fn(2, 2, |i, j| u[i][j]);
        m = m.kronecker(&f);
    }
    m
}

/// Dense unitary of a gate on an `n`-qubit register.
pub fn gate_matrix(n: usize, gate: &Gate) -> DMatrix<C64> {
    let d = 1usize << n;
    let bit = |q: usize| 1usize << (n - 1 - q);
    match gate {
        Gate::Single { qubit, op } => {
            let u = op.matrix();
            let b = bit(*qubit);
            DMatrix::from_fn(d, d, |i, j| {
                if (i & !b) != (j & !b) {
                    C64::new(0.0, 0.0)
                } else {
                    u[usize::from(i & b != 0)][usize::from(j & b != 0)]
                }
            })
        }
        Gate::Cnot(c) => {
            let (bc, bt) = (bit(c.control), bit(c.target));
            DMatrix::from_fn(d, d, |i, j| {
                let pj = if j & bc != 0 { j ^ bt } else { j };
                if i == pj {
                    C64::new(1.0, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            })
        }
    }
}
