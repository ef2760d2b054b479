//! Gate lists with junction-annotated CNOTs.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{NtError, Result};
use crate::pauli::Pauli;

pub type C64 = Complex64;
pub type Mat2 = [[C64; 2]; 2];

const fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "angle")]
pub enum SingleQubitGate {
    H,
    S,
    Sdg,
    X,
    Y,
    Z,
    /// `exp(-i theta X / 2)`
    Rx(f64),
    /// `exp(-i theta Y / 2)`
    Ry(f64),
    /// `exp(-i theta Z / 2)`
    Rz(f64),
}

impl SingleQubitGate {
    pub fn pauli(p: Pauli) -> Option<SingleQubitGate> {
        match p {
            Pauli::I => None,
            Pauli::X => Some(SingleQubitGate::X),
            Pauli::Y => Some(SingleQubitGate::Y),
            Pauli::Z => Some(SingleQubitGate::Z),
        }
    }

    pub fn matrix(&self) -> Mat2 {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        match *self {
            SingleQubitGate::H => [[c(s, 0.0), c(s, 0.0)], [c(s, 0.0), c(-s, 0.0)]],
            SingleQubitGate::S => [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 1.0)]],
            SingleQubitGate::Sdg => [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, -1.0)]],
            SingleQubitGate::X => [[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]],
            SingleQubitGate::Y => [[c(0.0, 0.0), c(0.0, -1.0)], [c(0.0, 1.0), c(0.0, 0.0)]],
            SingleQubitGate::Z => [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]],
            SingleQubitGate::Rx(t) => {
                let (cs, sn) = ((t / 2.0).cos(), (t / 2.0).sin());
                [[c(cs, 0.0), c(0.0, -sn)], [c(0.0, -sn), c(cs, 0.0)]]
            }
            SingleQubitGate::Ry(t) => {
                let (cs, sn) = ((t / 2.0).cos(), (t / 2.0).sin());
                [[c(cs, 0.0), c(-sn, 0.0)], [c(sn, 0.0), c(cs, 0.0)]]
            }
            SingleQubitGate::Rz(t) => {
                let (cs, sn) = ((t / 2.0).cos(), (t / 2.0).sin());
                [[c(cs, -sn), c(0.0, 0.0)], [c(0.0, 0.0), c(cs, sn)]]
            }
        }
    }

    pub fn inverse(&self) -> SingleQubitGate {
        match *self {
            SingleQubitGate::S => SingleQubitGate::Sdg,
            SingleQubitGate::Sdg => SingleQubitGate::S,
            SingleQubitGate::Rx(t) => SingleQubitGate::Rx(-t),
            SingleQubitGate::Ry(t) => SingleQubitGate::Ry(-t),
            SingleQubitGate::Rz(t) => SingleQubitGate::Rz(-t),
            g => g,
        }
    }

    pub fn rx90() -> Self {
        SingleQubitGate::Rx(FRAC_PI_2)
    }

    pub fn rz90() -> Self {
        SingleQubitGate::Rz(FRAC_PI_2)
    }
}

/// Single-qubit preparation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Prep {
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "1")]
    One,
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "+y")]
    PlusY,
}

impl Prep {
    pub fn gates(self) -> &'static [SingleQubitGate] {
        match self {
            Prep::Zero => &[],
            Prep::One => &[SingleQubitGate::X],
            Prep::Plus => &[SingleQubitGate::H],
            Prep::PlusY => &[SingleQubitGate::H, SingleQubitGate::S],
        }
    }

    /// State vector `(a0, a1)`.
    pub fn amplitudes(self) -> [C64; 2] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Prep::Zero => [c(1.0, 0.0), c(0.0, 0.0)],
            Prep::One => [c(0.0, 0.0), c(1.0, 0.0)],
            Prep::Plus => [c(s, 0.0), c(s, 0.0)],
            Prep::PlusY => [c(s, 0.0), c(0.0, s)],
        }
    }
}

/// A CNOT placed on a named junction. `neighbor` is the spectator qubit
/// exposed to crosstalk, when one is declared.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cnot {
    pub control: usize,
    pub target: usize,
    pub junction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbor: Option<usize>,
}

impl Cnot {
    pub fn edge(&self) -> EdgeKey {
        EdgeKey {
            junction: self.junction.clone(),
            control: self.control,
            target: self.target,
        }
    }
}

/// A junction together with a CNOT direction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeKey {
    pub junction: String,
    pub control: usize,
    pub target: usize,
}

impl EdgeKey {
    pub fn new(junction: impl Into<String>, control: usize, target: usize) -> Self {
        Self {
            junction: junction.into(),
            control,
            target,
        }
    }

    pub fn direction(&self) -> String {
        format!("{}>{}", self.control, self.target)
    }
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}>{}", self.junction, self.control, self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    Single { qubit: usize, op: SingleQubitGate },
    Cnot(Cnot),
}

/// Dressing gates come from twirling or tailoring. They are exempt from the
/// single-qubit noise knob and are dropped from noise-estimation circuits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Logical,
    Dressing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Op {
    pub gate: Gate,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub n_qubits: usize,
    pub ops: Vec<Op>,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            ops: Vec::new(),
        }
    }

    pub fn push(&mut self, gate: Gate, role: Role) -> &mut Self {
        self.ops.push(Op { gate, role });
        self
    }

    pub fn single(&mut self, qubit: usize, op: SingleQubitGate) -> &mut Self {
        self.push(Gate::Single { qubit, op }, Role::Logical)
    }

    pub fn dressing(&mut self, qubit: usize, op: SingleQubitGate) -> &mut Self {
        self.push(Gate::Single { qubit, op }, Role::Dressing)
    }

    pub fn h(&mut self, qubit: usize) -> &mut Self {
        self.single(qubit, SingleQubitGate::H)
    }

    pub fn s(&mut self, qubit: usize) -> &mut Self {
        self.single(qubit, SingleQubitGate::S)
    }

    pub fn x(&mut self, qubit: usize) -> &mut Self {
        self.single(qubit, SingleQubitGate::X)
    }

    pub fn rx(&mut self, qubit: usize, theta: f64) -> &mut Self {
        self.single(qubit, SingleQubitGate::Rx(theta))
    }

    pub fn ry(&mut self, qubit: usize, theta: f64) -> &mut Self {
        self.single(qubit, SingleQubitGate::Ry(theta))
    }

    pub fn rz(&mut self, qubit: usize, theta: f64) -> &mut Self {
        self.single(qubit, SingleQubitGate::Rz(theta))
    }

    pub fn cnot(
        &mut self,
        control: usize,
        target: usize,
        junction: impl Into<String>,
        neighbor: Option<usize>,
    ) -> &mut Self {
        self.push(
            Gate::Cnot(Cnot {
                control,
                target,
                junction: junction.into(),
                neighbor,
            }),
            Role::Logical,
        )
    }

    pub fn extend(&mut self, other: &Circuit) -> &mut Self {
        self.ops.extend(other.ops.iter().cloned());
        self
    }

    pub fn cnots(&self) -> impl Iterator<Item = &Cnot> {
        self.ops.iter().filter_map(|op| match &op.gate {
            Gate::Cnot(c) => Some(c),
            _ => None,
        })
    }

    pub fn cnot_count(&self) -> usize {
        self.cnots().count()
    }

    pub fn single_qubit_count(&self) -> usize {
        self.ops.len() - self.cnot_count()
    }

    /// CNOT count per junction and direction.
    pub fn edge_counts(&self) -> BTreeMap<EdgeKey, usize> {
        let mut m = BTreeMap::new();
        for c in self.cnots() {
            *m.entry(c.edge()).or_insert(0) += 1;
        }
        m
    }

    /// Checks qubit indices and CNOT wiring.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_qubits;
        let check = |q: usize| {
            if q >= n {
                Err(NtError::IndexOutOfRange {
                    index: q,
                    n_qubits: n,
                })
            } else {
                Ok(())
            }
        };
        for op in &self.ops {
            match &op.gate {
                Gate::Single { qubit, .. } => check(*qubit)?,
                Gate::Cnot(c) => {
                    check(c.control)?;
                    check(c.target)?;
                    if c.control == c.target {
                        return Err(NtError::UnsupportedGate(
                            "CNOT with identical control and target".into(),
                        ));
                    }
                    if let Some(nb) = c.neighbor {
                        check(nb)?;
                        if nb == c.control || nb == c.target {
                            return Err(NtError::Layout(format!(
                                "neighbor {nb} is an active qubit of CNOT {}>{}",
                                c.control, c.target
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
