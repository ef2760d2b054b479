//! Randomized compiling, crosstalk-aware compiling and noise-tailoring
//! dressings of CNOT gates.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channels::QuasiProbPlan;
use crate::circuit::{Circuit, Cnot, EdgeKey, Gate, Op, Role, SingleQubitGate};
use crate::error::{NtError, Result};
use crate::pauli::{clifford_conjugate, digit, CliffordGate, Pauli, PauliString};

/// Tailoring plans keyed by junction and CNOT direction.
pub type PlanMap = BTreeMap<EdgeKey, QuasiProbPlan>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Twirl {
    None,
    /// Pauli twirl of the CNOT pair.
    Rc,
    /// Pauli twirl plus neighbor Pauli and cyclic Clifford.
    Crc,
}

/// One element of the CNOT twirl set: Paulis before the gate and the
/// correction after it. `sign` is the phase of the correction, irrelevant
/// for conjugation.
#[derive(Debug, Clone, PartialEq)]
pub struct TwirlEntry {
    pub pre: PauliString,
    pub post: PauliString,
    pub sign: i8,
}

/// The 16 Pauli dressings of a CNOT with control as local qubit 0.
pub fn cnot_twirl_set() -> Vec<TwirlEntry> {
    (0..16)
        .map(|a| {
            let pre = PauliString::from_index(2, a).expect("index");
            let (post, sign) = clifford_conjugate(CliffordGate::Cnot { control: 0, target: 1 }, &pre)
                .expect("two-qubit CNOT");
            TwirlEntry { pre, post, sign }
        })
        .collect()
}

/// Random choices made for one CNOT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DressingChoice {
    /// Index of the twirl Pauli pair on (control, target).
    pub twirl: u8,
    /// Neighbor Pauli index (cRC only).
    pub neighbor_pauli: u8,
    /// Power of the cyclic X->Y->Z Clifford on the neighbor (cRC only).
    pub neighbor_rot: u8,
    /// Sampled tailoring Pauli index.
    pub nt: u16,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DressedCircuit {
    pub circuit: Circuit,
    pub sign: i8,
    /// Sum of `ln gamma` over tailored CNOTs.
    pub weight_log: f64,
    pub seed: Option<u64>,
    pub choices: Vec<DressingChoice>,
}

impl DressedCircuit {
    /// `sign * prod gamma`, the factor multiplying this circuit's outcome.
    pub fn weight(&self) -> f64 {
        self.sign as f64 * self.weight_log.exp()
    }
}

fn push_pauli(out: &mut Circuit, qubit: usize, p: Pauli) {
    if let Some(g) = SingleQubitGate::pauli(p) {
        out.push(Gate::Single { qubit, op: g }, Role::Dressing);
    }
}

/// Cyclic Clifford `C` (X -> Y -> Z -> X) raised to `k`, in application order.
fn cycle_gates(k: u8, inverse: bool) -> Vec<SingleQubitGate> {
    let step = if inverse {
        [SingleQubitGate::Rz(-FRAC_PI_2), SingleQubitGate::Rx(-FRAC_PI_2)]
    } else {
        [SingleQubitGate::Rx(FRAC_PI_2), SingleQubitGate::Rz(FRAC_PI_2)]
    };
    (0..k).flat_map(|_| step).collect()
}

fn emit(
    out: &mut Circuit,
    cnot: &Cnot,
    choice: DressingChoice,
    twirl: Twirl,
    plan: Option<&QuasiProbPlan>,
    table: &[TwirlEntry],
) -> Result<()> {
    let neighbor = match twirl {
        Twirl::Crc => cnot.neighbor,
        _ => None,
    };
    if twirl != Twirl::None {
        let e = &table[choice.twirl as usize];
        push_pauli(out, cnot.control, e.pre.get(0));
        push_pauli(out, cnot.target, e.pre.get(1));
    }
    if let Some(nb) = neighbor {
        push_pauli(out, nb, Pauli::from_index(choice.neighbor_pauli as usize));
        for g in cycle_gates(choice.neighbor_rot, false) {
            out.push(Gate::Single { qubit: nb, op: g }, Role::Dressing);
        }
    }
    out.push(Gate::Cnot(cnot.clone()), Role::Logical);
    if twirl != Twirl::None {
        let e = &table[choice.twirl as usize];
        push_pauli(out, cnot.control, e.post.get(0));
        push_pauli(out, cnot.target, e.post.get(1));
    }
    if let Some(nb) = neighbor {
        for g in cycle_gates(choice.neighbor_rot, true) {
            out.push(Gate::Single { qubit: nb, op: g }, Role::Dressing);
        }
        push_pauli(out, nb, Pauli::from_index(choice.neighbor_pauli as usize));
    }
    if let Some(plan) = plan {
        let a = choice.nt as usize;
        let mut qubits = vec![cnot.control, cnot.target];
        if plan.q() == 3 {
            qubits.push(cnot.neighbor.ok_or_else(|| {
                NtError::Layout(format!("3-qubit plan on {} without a neighbor", cnot.edge()))
            })?);
        }
        for (i, &q) in qubits.iter().enumerate() {
            push_pauli(out, q, Pauli::from_index(digit(plan.q(), a, i)));
        }
    }
    Ok(())
}

/// Dresses every CNOT with choices supplied by `choose`.
pub fn dress_with(
    circuit: &Circuit,
    twirl: Twirl,
    plans: Option<&PlanMap>,
    mut choose: impl FnMut(usize, &Cnot, Option<&QuasiProbPlan>) -> DressingChoice,
) -> Result<DressedCircuit> {
    circuit.validate()?;
    let table = cnot_twirl_set();
    let mut out = Circuit::new(circuit.n_qubits);
    out.ops.reserve(circuit.ops.len() * 3);
    let mut sign = 1i8;
    let mut weight_log = 0.0;
    let mut choices = Vec::new();
    for op in &circuit.ops {
        match &op.gate {
            Gate::Cnot(c) => {
                let plan = match plans {
                    Some(m) => Some(m.get(&c.edge()).ok_or_else(|| NtError::PlanCoverage(c.edge().to_string()))?),
                    None => None,
                };
                let choice = choose(choices.len(), c, plan);
                if let Some(p) = plan {
                    sign *= p.signs()[choice.nt as usize];
                    weight_log += p.log_gamma();
                }
                emit(&mut out, c, choice, twirl, plan, &table)?;
                choices.push(choice);
            }
            _ => out.ops.push(Op {
                gate: op.gate.clone(),
                role: op.role,
            }),
        }
    }
    Ok(DressedCircuit {
        circuit: out,
        sign,
        weight_log,
        seed: None,
        choices,
    })
}

fn random_choice(twirl: Twirl, plan: Option<&QuasiProbPlan>, rng: &mut impl Rng) -> DressingChoice {
    let mut c = DressingChoice::default();
    if twirl != Twirl::None {
        c.twirl = rng.random_range(0..16);
    }
    if twirl == Twirl::Crc {
        c.neighbor_pauli = rng.random_range(0..4);
        c.neighbor_rot = rng.random_range(0..3);
    }
    if let Some(p) = plan {
        c.nt = p.sample_index(rng).0 as u16;
    }
    c
}

/// Randomized compiling: each CNOT gets a uniformly random Pauli twirl.
pub fn rc_dress(circuit: &Circuit, rng: &mut impl Rng) -> Result<DressedCircuit> {
    dress_with(circuit, Twirl::Rc, None, |_, _, _| random_choice(Twirl::Rc, None, rng))
}

/// Crosstalk-aware randomized compiling. CNOTs without a declared neighbor
/// get the plain Pauli twirl.
pub fn crc_dress(circuit: &Circuit, rng: &mut impl Rng) -> Result<DressedCircuit> {
    dress_with(circuit, Twirl::Crc, None, |_, _, _| random_choice(Twirl::Crc, None, rng))
}

/// Twirling plus a sampled tailoring Pauli after every CNOT.
pub fn nt_dress(circuit: &Circuit, plans: &PlanMap, twirl: Twirl, rng: &mut impl Rng) -> Result<DressedCircuit> {
    dress_with(circuit, twirl, Some(plans), |_, _, p| random_choice(twirl, p, rng))
}

/// Seeded dressing, recording the seed for provenance.
pub fn dress_seeded(circuit: &Circuit, plans: Option<&PlanMap>, twirl: Twirl, seed: u64) -> Result<DressedCircuit> {
    let mut rng = crate::rng::stream(seed, "dress", 0);
    let mut d = dress_with(circuit, twirl, plans, |_, _, p| random_choice(twirl, p, &mut rng))?;
    d.seed = Some(seed);
    Ok(d)
}
