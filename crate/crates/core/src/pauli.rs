//! Pauli-string algebra and the fidelity/probability transforms for diagonal
//! Pauli channels.
//!
//! Index encoding, fixed once for the whole crate: a `q`-qubit Pauli word is
//! written qubit 0 first, single-qubit symbols are numbered `I=0, X=1, Y=2,
//! Z=3`, and the canonical index is the base-4 number whose most significant
//! digit is qubit 0:
//!
//! ```text
//! index(P_0 P_1 ... P_{q-1}) = sum_i sym(P_i) * 4^(q-1-i)
//! ```
//!
//! So `"XI"` is 4 and `"IX"` is 1 for two qubits. For CNOT channels qubit 0 is
//! the control and qubit 1 the target, which matches the control-first way
//! fidelities such as `f_ZX` are usually written.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{NtError, Result};

/// Tolerance on `sum p = 1` and `f[0] = 1`.
pub const NORM_TOL: f64 = 1e-12;
/// Entries below `-QUASI_TOL` mark a quasi-distribution.
pub const QUASI_TOL: f64 = 1e-12;

/// Single-qubit Pauli symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pauli {
    I = 0,
    X = 1,
    Y = 2,
    Z = 3,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn from_index(i: usize) -> Pauli {
        Pauli::ALL[i & 3]
    }

    pub fn x_bit(self) -> bool {
        matches!(self, Pauli::X | Pauli::Y)
    }

    pub fn z_bit(self) -> bool {
        matches!(self, Pauli::Z | Pauli::Y)
    }

    pub fn from_bits(x: bool, z: bool) -> Pauli {
        match (x, z) {
            (false, false) => Pauli::I,
            (true, false) => Pauli::X,
            (true, true) => Pauli::Y,
            (false, true) => Pauli::Z,
        }
    }

    /// Two single-qubit Paulis anticommute iff both are non-identity and differ.
    pub fn anticommutes(self, other: Pauli) -> bool {
        self != Pauli::I && other != Pauli::I && self != other
    }

    pub fn as_char(self) -> char {
        ['I', 'X', 'Y', 'Z'][self as usize]
    }
}

/// A tensor product of single-qubit Paulis, qubit 0 first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliString {
    word: Vec<Pauli>,
}

impl PauliString {
    pub fn new(word: Vec<Pauli>) -> Result<Self> {
        if word.is_empty() {
            return Err(NtError::Dimension("Pauli string needs q >= 1".into()));
        }
        Ok(Self { word })
    }

    pub fn identity(q: usize) -> Self {
        Self {
            word: vec![Pauli::I; q.max(1)],
        }
    }

    pub fn from_index(q: usize, index: usize) -> Result<Self> {
        if q == 0 || index >= num_paulis(q) {
            return Err(NtError::Dimension(format!(
                "index {index} out of range for {q} qubits"
            )));
        }
        Ok(Self {
            word: (0..q).map(|i| Pauli::from_index(digit(q, index, i))).collect(),
        })
    }

    /// Single-qubit Pauli `p` on `qubit` of an `n`-qubit register.
    pub fn single(n: usize, qubit: usize, p: Pauli) -> Result<Self> {
        if qubit >= n {
            return Err(NtError::IndexOutOfRange {
                index: qubit,
                n_qubits: n,
            });
        }
        let mut word = vec![Pauli::I; n];
        word[qubit] = p;
        Ok(Self { word })
    }

    pub fn qubits(&self) -> usize {
        self.word.len()
    }

    pub fn word(&self) -> &[Pauli] {
        &self.word
    }

    pub fn get(&self, qubit: usize) -> Pauli {
        self.word[qubit]
    }

    pub fn index(&self) -> usize {
        self.word.iter().fold(0, |acc, p| acc * 4 + *p as usize)
    }

    /// Number of non-identity factors.
    pub fn weight(&self) -> usize {
        self.word.iter().filter(|p| **p != Pauli::I).count()
    }

    pub fn is_identity(&self) -> bool {
        self.weight() == 0
    }

    /// Qubits on which the string acts nontrivially.
    pub fn support(&self) -> Vec<usize> {
        self.word
            .iter()
            .enumerate()
            .filter(|(_, p)| **p != Pauli::I)
            .map(|(i, _)| i)
            .collect()
    }

    /// Restriction of the string to `qubits`, in the given order.
    pub fn restrict(&self, qubits: &[usize]) -> PauliString {
        PauliString {
            word: qubits.iter().map(|&q| self.word[q]).collect(),
        }
    }

    /// Same support with every factor replaced by `Z`.
    pub fn z_shadow(&self) -> PauliString {
        PauliString {
            word: self
                .word
                .iter()
                .map(|p| if *p == Pauli::I { Pauli::I } else { Pauli::Z })
                .collect(),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        self.word.iter().all(|p| matches!(p, Pauli::I | Pauli::Z))
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.word {
            write!(f, "{}", p.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = NtError;

    fn from_str(s: &str) -> Result<Self> {
        let word = s
            .trim()
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'I' => Ok(Pauli::I),
                'X' => Ok(Pauli::X),
                'Y' => Ok(Pauli::Y),
                'Z' => Ok(Pauli::Z),
                other => Err(NtError::InvalidParameter(format!(
                    "`{other}` is not a Pauli symbol"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        PauliString::new(word)
    }
}

impl Serialize for PauliString {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PauliString {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn num_paulis(q: usize) -> usize {
    1usize << (2 * q)
}

/// Symbol of qubit `i` in the index of a `q`-qubit string.
#[inline]
pub fn digit(q: usize, index: usize, i: usize) -> usize {
    (index >> (2 * (q - 1 - i))) & 3
}

/// X and Z bit masks of an index, bit `i` standing for qubit `i`.
#[inline]
pub fn xz_masks(q: usize, index: usize) -> (u32, u32) {
    let mut x = 0u32;
    let mut z = 0u32;
    for i in 0..q {
        let d = digit(q, index, i);
        if d == 1 || d == 2 {
            x |= 1 << i;
        }
        if d == 2 || d == 3 {
            z |= 1 << i;
        }
    }
    (x, z)
}

/// Symplectic product of two indices of the same width.
#[inline]
pub fn symplectic_index(q: usize, a: usize, b: usize) -> u8 {
    let (xa, za) = xz_masks(q, a);
    let (xb, zb) = xz_masks(q, b);
    (((xa & zb) ^ (za & xb)).count_ones() & 1) as u8
}

/// 0 if the strings commute, 1 if they anticommute.
pub fn symplectic_product(a: &PauliString, b: &PauliString) -> Result<u8> {
    if a.qubits() != b.qubits() {
        return Err(NtError::Dimension(format!(
            "symplectic product of {}-qubit and {}-qubit strings",
            a.qubits(),
            b.qubits()
        )));
    }
    let parity = a
        .word
        .iter()
        .zip(&b.word)
        .filter(|(p, r)| p.anticommutes(**r))
        .count();
    Ok((parity & 1) as u8)
}

/// Diagonal of a Pauli transfer matrix: one fidelity per Pauli index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityVector {
    q: usize,
    f: Vec<f64>,
}

impl FidelityVector {
    /// Values above 1 are accepted: tomography can return them and inverse
    /// channels always have them.
    pub fn new(q: usize, mut f: Vec<f64>) -> Result<Self> {
        if q == 0 || f.len() != num_paulis(q) {
            return Err(NtError::Dimension(format!(
                "{} fidelities for {q} qubits (expected {})",
                f.len(),
                num_paulis(q)
            )));
        }
        if let Some(i) = f.iter().position(|v| !v.is_finite()) {
            return Err(NtError::InvalidParameter(format!(
                "fidelity {i} is not finite"
            )));
        }
        if (f[0] - 1.0).abs() > NORM_TOL {
            return Err(NtError::InvalidParameter(format!(
                "f[0] = {} but trace preservation requires 1",
                f[0]
            )));
        }
        f[0] = 1.0;
        Ok(Self { q, f })
    }

    pub fn identity(q: usize) -> Self {
        Self {
            q,
            f: vec![1.0; num_paulis(q)],
        }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn values(&self) -> &[f64] {
        &self.f
    }

    pub fn get(&self, index: usize) -> f64 {
        self.f[index]
    }

    /// Mean over the non-identity entries.
    pub fn mean_nontrivial(&self) -> f64 {
        self.f[1..].iter().sum::<f64>() / (self.f.len() - 1) as f64
    }

    /// Elementwise product, i.e. composition of two diagonal channels.
    pub fn compose(&self, other: &FidelityVector) -> Result<FidelityVector> {
        self.check_same(other)?;
        Ok(FidelityVector {
            q: self.q,
            f: self.f.iter().zip(&other.f).map(|(a, b)| a * b).collect(),
        })
    }

    /// Inverse channel, fails when any fidelity vanishes.
    pub fn inverse(&self) -> Result<FidelityVector> {
        if let Some(index) = self.f.iter().position(|v| *v == 0.0) {
            return Err(NtError::SingularChannel { index });
        }
        Ok(FidelityVector {
            q: self.q,
            f: self.f.iter().map(|v| 1.0 / v).collect(),
        })
    }

    pub(crate) fn check_same(&self, other: &FidelityVector) -> Result<()> {
        if self.q != other.q {
            return Err(NtError::Dimension(format!(
                "{}-qubit vs {}-qubit channel",
                self.q, other.q
            )));
        }
        Ok(())
    }
}

/// Pauli error probabilities (the diagonal of the chi matrix).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector {
    q: usize,
    p: Vec<f64>,
    quasi: bool,
}

impl ProbVector {
    /// Builds a vector, flagging it quasi when any entry is below `-1e-12`.
    pub fn new(q: usize, p: Vec<f64>) -> Result<Self> {
        if q == 0 || p.len() != num_paulis(q) {
            return Err(NtError::Dimension(format!(
                "{} probabilities for {q} qubits (expected {})",
                p.len(),
                num_paulis(q)
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(NtError::InvalidParameter("non-finite probability".into()));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > NORM_TOL * (p.len() as f64).max(16.0) {
            return Err(NtError::InvalidParameter(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        let quasi = p.iter().any(|v| *v < -QUASI_TOL);
        Ok(Self { q, p, quasi })
    }

    /// Like [`ProbVector::new`] but rejects quasi-distributions.
    pub fn physical(q: usize, p: Vec<f64>) -> Result<Self> {
        let v = Self::new(q, p)?;
        if let Some(index) = v.p.iter().position(|x| *x < -QUASI_TOL) {
            return Err(NtError::QuasiChannelNotAllowed {
                index,
                value: v.p[index],
            });
        }
        Ok(v)
    }

    pub fn delta(q: usize, index: usize) -> Self {
        let mut p = vec![0.0; num_paulis(q)];
        p[index] = 1.0;
        Self { q, p, quasi: false }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    pub fn get(&self, index: usize) -> f64 {
        self.p[index]
    }

    pub fn is_quasi(&self) -> bool {
        self.quasi
    }
}

/// In-place `x <- H^{(x) q} x` where `H` is the 4x4 sign table
/// `(-1)^{<s,t>}` of single-qubit Paulis. One butterfly per qubit.
fn sign_transform(q: usize, x: &mut [f64]) {
    debug_assert_eq!(x.len(), num_paulis(q));
    for i in 0..q {
        let stride = 1usize << (2 * (q - 1 - i));
        let block = stride * 4;
        for base in (0..x.len()).step_by(block) {
            for off in 0..stride {
                let k = base + off;
                let (a, b, c, d) = (x[k], x[k + stride], x[k + 2 * stride], x[k + 3 * stride]);
                // rows I, X, Y, Z of the single-qubit sign table
                x[k] = a + b + c + d;
                x[k + stride] = a + b - c - d;
                x[k + 2 * stride] = a - b + c - d;
                x[k + 3 * stride] = a - b - c + d;
            }
        }
    }
}

/// Fidelities to error probabilities:
/// `p_a = 4^-q sum_b (-1)^{<a,b>} f_b`.
pub fn walsh_hadamard(f: &FidelityVector) -> ProbVector {
    let mut p = f.f.clone();
    sign_transform(f.q, &mut p);
    let norm = 1.0 / num_paulis(f.q) as f64;
    p.iter_mut().for_each(|v| *v *= norm);
    let quasi = p.iter().any(|v| *v < -QUASI_TOL);
    ProbVector { q: f.q, p, quasi }
}

/// Error probabilities to fidelities: `f_b = sum_a (-1)^{<a,b>} p_a`.
pub fn inverse_walsh_hadamard(p: &ProbVector) -> FidelityVector {
    let mut f = p.p.clone();
    sign_transform(p.q, &mut f);
    f[0] = 1.0;
    FidelityVector { q: p.q, f }
}

/// Clifford gates with a closed-form action on Pauli strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CliffordGate {
    Cnot { control: usize, target: usize },
    H(usize),
    /// `Rx(pi/2) = exp(-i pi/4 X)`
    Rx90(usize),
    /// `Rz(pi/2) = exp(-i pi/4 Z)`
    Rz90(usize),
    X(usize),
    Y(usize),
    Z(usize),
}

impl CliffordGate {
    fn qubits(&self) -> Vec<usize> {
        match *self {
            CliffordGate::Cnot { control, target } => vec![control, target],
            CliffordGate::H(q)
            | CliffordGate::Rx90(q)
            | CliffordGate::Rz90(q)
            | CliffordGate::X(q)
            | CliffordGate::Y(q)
            | CliffordGate::Z(q) => vec![q],
        }
    }
}

/// `U P U^dagger = sign * P'` for a Clifford `U`.
pub fn clifford_conjugate(gate: CliffordGate, p: &PauliString) -> Result<(PauliString, i8)> {
    let n = p.qubits();
    for q in gate.qubits() {
        if q >= n {
            return Err(NtError::IndexOutOfRange {
                index: q,
                n_qubits: n,
            });
        }
    }
    let mut word = p.word.clone();
    let mut sign = 1i8;
    let single = |word: &mut Vec<Pauli>, q: usize, table: [(Pauli, i8); 4]| -> i8 {
        let (np, s) = table[word[q] as usize];
        word[q] = np;
        s
    };
    use Pauli::*;
    match gate {
        CliffordGate::Cnot { control, target } => {
            if control == target {
                return Err(NtError::UnsupportedGate(
                    "CNOT with identical control and target".into(),
                ));
            }
            let (xc, zc) = (word[control].x_bit(), word[control].z_bit());
            let (xt, zt) = (word[target].x_bit(), word[target].z_bit());
            if xc && zt && !(xt ^ zc) {
                sign = -1;
            }
            word[control] = Pauli::from_bits(xc, zc ^ zt);
            word[target] = Pauli::from_bits(xt ^ xc, zt);
        }
        CliffordGate::H(q) => sign = single(&mut word, q, [(I, 1), (Z, 1), (Y, -1), (X, 1)]),
        CliffordGate::Rx90(q) => sign = single(&mut word, q, [(I, 1), (X, 1), (Z, 1), (Y, -1)]),
        CliffordGate::Rz90(q) => sign = single(&mut word, q, [(I, 1), (Y, 1), (X, -1), (Z, 1)]),
        CliffordGate::X(q) => sign = single(&mut word, q, [(I, 1), (X, 1), (Y, -1), (Z, -1)]),
        CliffordGate::Y(q) => sign = single(&mut word, q, [(I, 1), (X, -1), (Y, 1), (Z, -1)]),
        CliffordGate::Z(q) => sign = single(&mut word, q, [(I, 1), (X, -1), (Y, -1), (Z, 1)]),
    }
    Ok((PauliString { word }, sign))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ps(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    #[test]
    fn index_encoding_is_qubit0_most_significant() {
        assert_eq!(ps("II").index(), 0);
        assert_eq!(ps("IX").index(), 1);
        assert_eq!(ps("XI").index(), 4);
        assert_eq!(ps("ZZ").index(), 15);
        for i in 0..64 {
            assert_eq!(PauliString::from_index(3, i).unwrap().index(), i);
        }
    }

    #[test]
    fn symplectic_examples() {
        assert_eq!(symplectic_product(&ps("XI"), &ps("ZI")).unwrap(), 1);
        assert_eq!(symplectic_product(&ps("XX"), &ps("XX")).unwrap(), 0);
        assert_eq!(symplectic_product(&ps("IX"), &ps("ZX")).unwrap(), 0);
        assert!(symplectic_product(&ps("X"), &ps("XX")).is_err());
    }

    #[test]
    fn symplectic_index_matches_string_form() {
        for a in 0..64 {
            for b in 0..64 {
                let pa = PauliString::from_index(3, a).unwrap();
                let pb = PauliString::from_index(3, b).unwrap();
                assert_eq!(symplectic_index(3, a, b), symplectic_product(&pa, &pb).unwrap());
            }
        }
    }

    #[test]
    fn identity_channel_transforms() {
        let p = walsh_hadamard(&FidelityVector::identity(2));
        assert!((p.get(0) - 1.0).abs() < 1e-15);
        assert!(p.values()[1..].iter().all(|v| v.abs() < 1e-15));

        let f = inverse_walsh_hadamard(&ProbVector::delta(2, 0));
        assert!(f.values().iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn uniform_probabilities_are_fully_depolarizing() {
        let f = inverse_walsh_hadamard(&ProbVector::new(2, vec![1.0 / 16.0; 16]).unwrap());
        assert_eq!(f.get(0), 1.0);
        assert!(f.values()[1..].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn depolarizing_fidelities_give_uniform_error_rates() {
        let eps = 0.03;
        let mut f = vec![1.0 - eps; 16];
        f[0] = 1.0;
        let p = walsh_hadamard(&FidelityVector::new(2, f).unwrap());
        assert!((p.get(0) - (1.0 - 15.0 * eps / 16.0)).abs() < 1e-15);
        for a in 1..16 {
            assert!((p.get(a) - eps / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn inverse_transform_matches_direct_summation() {
        let eps = 0.07;
        let mut p = vec![eps / 16.0; 16];
        p[0] = 1.0 - 15.0 * eps / 16.0;
        let pv = ProbVector::new(2, p.clone()).unwrap();
        let fast = inverse_walsh_hadamard(&pv);
        for b in 0..16 {
            let direct: f64 = (0..16)
                .map(|a| {
                    let s = if symplectic_index(2, a, b) == 1 { -1.0 } else { 1.0 };
                    s * p[a]
                })
                .sum();
            assert!((fast.get(b) - direct).abs() < 1e-14);
            if b != 0 {
                assert!((fast.get(b) - (1.0 - eps)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn quasi_flag_set_for_inverted_channels() {
        let mut f = vec![1.02; 16];
        f[0] = 1.0;
        let p = walsh_hadamard(&FidelityVector::new(2, f).unwrap());
        assert!(p.is_quasi());
        assert!(ProbVector::physical(2, p.values().to_vec()).is_err());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(FidelityVector::new(2, vec![1.0; 15]).is_err());
        assert!(FidelityVector::new(1, vec![0.9, 1.0, 1.0, 1.0]).is_err());
        assert!(ProbVector::new(1, vec![0.5, 0.5, 0.5, 0.0]).is_err());
    }

    #[test]
    fn cnot_transfer_diagram() {
        let cnot = CliffordGate::Cnot {
            control: 0,
            target: 1,
        };
        assert_eq!(clifford_conjugate(cnot, &ps("XI")).unwrap(), (ps("XX"), 1));
        assert_eq!(clifford_conjugate(cnot, &ps("IZ")).unwrap(), (ps("ZZ"), 1));
        assert_eq!(clifford_conjugate(cnot, &ps("YY")).unwrap(), (ps("XZ"), -1));
        assert_eq!(clifford_conjugate(cnot, &ps("IX")).unwrap(), (ps("IX"), 1));
        assert_eq!(clifford_conjugate(cnot, &ps("XZ")).unwrap(), (ps("YY"), -1));
    }

    #[test]
    fn out_of_range_gate_is_rejected() {
        assert!(clifford_conjugate(CliffordGate::H(3), &ps("XX")).is_err());
        assert!(matches!(
            clifford_conjugate(CliffordGate::Cnot { control: 1, target: 1 }, &ps("XX")),
            Err(NtError::UnsupportedGate(_))
        ));
    }

    #[test]
    fn involutions_return_input_with_plus_sign() {
        let gates = [
            CliffordGate::Cnot { control: 0, target: 2 },
            CliffordGate::Cnot { control: 2, target: 1 },
            CliffordGate::X(1),
            CliffordGate::Y(0),
            CliffordGate::Z(2),
        ];
        for g in gates {
            for i in 0..64 {
                let p = PauliString::from_index(3, i).unwrap();
                let (once, s1) = clifford_conjugate(g, &p).unwrap();
                let (twice, s2) = clifford_conjugate(g, &once).unwrap();
                assert_eq!(twice, p);
                assert_eq!(s1 * s2, 1);
            }
        }
    }

    fn random_prob(q: usize, raw: &[f64]) -> ProbVector {
        let total: f64 = raw.iter().sum();
        ProbVector::new(q, raw.iter().map(|v| v / total).collect()).unwrap()
    }

    proptest! {
        #[test]
        fn roundtrip_is_identity(q in 1usize..=3, seed in proptest::collection::vec(0.0f64..1.0, 64)) {
            let raw: Vec<f64> = seed.iter().take(num_paulis(q)).map(|v| v + 1e-3).collect();
            let p = random_prob(q, &raw);
            let back = walsh_hadamard(&inverse_walsh_hadamard(&p));
            for (a, b) in back.values().iter().zip(p.values()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let total: f64 = back.values().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
