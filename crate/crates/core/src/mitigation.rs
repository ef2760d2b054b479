//! Noise-estimation circuits, mitigation by the NEC fidelity and the search
//! for target noise strengths that minimize the sampling overhead.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{depolarizing_fidelities, make_quasilocal_3q, tailor_plan, QuasiLocalParams3Q};
use crate::circuit::{Circuit, EdgeKey, Gate};
use crate::compiling::PlanMap;
use crate::error::{NtError, Result};
use crate::pauli::{FidelityVector, PauliString};
use crate::simulator::{run_channel, NoiseModel};

/// Upper end of the per-Pauli depolarizing rate searched for 2-qubit targets.
pub const LAMBDA_MAX: f64 = 1.0 / 15.0;
/// Upper end of each quasi-local strength searched for 3-qubit targets.
pub const EPS3_MAX: f64 = 0.5;
const GRID: usize = 64;
const GRID3: usize = 33;
const SWEEPS: usize = 2;
const GOLDEN_ITERS: usize = 60;

/// Drops every single-qubit gate, keeping the CNOT sequence.
pub fn nec_circuit(circuit: &Circuit) -> Circuit {
    Circuit {
        n_qubits: circuit.n_qubits,
        ops: circuit
            .ops
            .iter()
            .filter(|op| matches!(op.gate, Gate::Cnot(_)))
            .cloned()
            .collect(),
    }
}

/// Ideal expectation of `observable` after the noiseless NEC circuit.
pub fn nec_ideal(nec: &Circuit, observable: &PauliString) -> Result<f64> {
    run_channel(nec, &NoiseModel::noiseless(nec.n_qubits))?.expectation(observable)
}

/// Observable used for the NEC fidelity: `observable` itself when its ideal
/// NEC value is nonzero, otherwise the Z string on the same support.
pub fn nec_observable(nec: &Circuit, observable: &PauliString) -> Result<PauliString> {
    if nec_ideal(nec, observable)?.abs() > 1e-12 {
        return Ok(observable.clone());
    }
    let z = observable.z_shadow();
    if nec_ideal(nec, &z)?.abs() > 1e-12 {
        Ok(z)
    } else {
        Err(NtError::UndefinedFidelity(format!(
            "no NEC signal for {observable} or {z}"
        )))
    }
}

/// `<O>_noisy / <O>_ideal` on the NEC circuit, exact in channel mode.
pub fn nec_fidelity(nec: &Circuit, model: &NoiseModel, observable: &PauliString) -> Result<f64> {
    let ideal = nec_ideal(nec, observable)?;
    if ideal.abs() <= 1e-12 {
        return Err(NtError::UndefinedFidelity(format!(
            "ideal NEC expectation of {observable} vanishes"
        )));
    }
    Ok(run_channel(nec, model)?.expectation(observable)? / ideal)
}

pub fn mitigate(raw: f64, f_nec: f64) -> Result<f64> {
    if !(f_nec > 0.0) || !f_nec.is_finite() {
        return Err(NtError::InvalidParameter(format!("F_NEC = {f_nec} must be positive")));
    }
    Ok(raw / f_nec)
}

/// Target channel of one junction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetParams {
    /// Two-qubit depolarizing with per-Pauli rate `lambda`.
    Depolarizing { lambda: f64 },
    QuasiLocal(QuasiLocalParams3Q),
}

impl TargetParams {
    pub fn fidelities(&self) -> Result<FidelityVector> {
        match *self {
            TargetParams::Depolarizing { lambda } => Ok(depolarizing_fidelities(2, lambda)),
            TargetParams::QuasiLocal(p) => make_quasilocal_3q(p),
        }
    }

    fn zero(q: usize) -> TargetParams {
        if q == 3 {
            TargetParams::QuasiLocal(QuasiLocalParams3Q {
                eps_cnot: 0.0,
                eps_neigh: 0.0,
                eps_glob: 0.0,
            })
        } else {
            TargetParams::Depolarizing { lambda: 0.0 }
        }
    }

    fn coords(&self) -> Vec<f64> {
        match *self {
            TargetParams::Depolarizing { lambda } => vec![lambda],
            TargetParams::QuasiLocal(p) => vec![p.eps_cnot, p.eps_neigh, p.eps_glob],
        }
    }

    fn with_coord(&self, k: usize, v: f64) -> TargetParams {
        match *self {
            TargetParams::Depolarizing { .. } => TargetParams::Depolarizing { lambda: v },
            TargetParams::QuasiLocal(mut p) => {
                match k {
                    0 => p.eps_cnot = v,
                    1 => p.eps_neigh = v,
                    _ => p.eps_glob = v,
                }
                TargetParams::QuasiLocal(p)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgePlan {
    pub junction_id: String,
    pub control: usize,
    pub target: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbor: Option<usize>,
    pub target_params: TargetParams,
    pub gamma: f64,
    pub n_cnot: usize,
}

impl EdgePlan {
    pub fn edge(&self) -> EdgeKey {
        EdgeKey::new(self.junction_id.clone(), self.control, self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationPlan {
    pub edges: Vec<EdgePlan>,
    pub observable: PauliString,
    pub f_nec: f64,
    pub log_sigma: f64,
}

impl MitigationPlan {
    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    pub fn targets(&self) -> Result<BTreeMap<EdgeKey, FidelityVector>> {
        self.edges
            .iter()
            .map(|e| Ok((e.edge(), e.target_params.fidelities()?)))
            .collect()
    }

    /// Target-channel model used for classical NEC evaluation.
    pub fn target_model(&self, n_qubits: usize) -> Result<NoiseModel> {
        let neighbors = self
            .edges
            .iter()
            .filter_map(|e| e.neighbor.map(|n| (e.edge(), n)))
            .collect();
        NoiseModel::from_channels(n_qubits, &self.targets()?, &neighbors)
    }

    /// Quasi-probability plans against the gate channels they were built for.
    pub fn plans(&self, gates: &BTreeMap<EdgeKey, FidelityVector>) -> Result<PlanMap> {
        self.edges
            .iter()
            .map(|e| {
                let g = gates
                    .get(&e.edge())
                    .ok_or_else(|| NtError::PlanCoverage(format!("no gate channel for {}", e.edge())))?;
                let plan = tailor_plan(g, &e.target_params.fidelities()?)?.with_junction(e.junction_id.clone());
                Ok((e.edge(), plan))
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Inputs to the target search.
pub struct TargetProblem<'a> {
    pub gates: &'a BTreeMap<EdgeKey, FidelityVector>,
    pub neighbors: &'a BTreeMap<EdgeKey, usize>,
    pub n_cnot: &'a BTreeMap<EdgeKey, usize>,
    pub nec: &'a Circuit,
    pub observable: &'a PauliString,
}

impl TargetProblem<'_> {
    fn evaluate(&self, observable: &PauliString, targets: &BTreeMap<String, TargetParams>) -> Result<(f64, f64, BTreeMap<EdgeKey, f64>)> {
        let mut log_gamma_total = 0.0;
        let mut gammas = BTreeMap::new();
        let mut chans = BTreeMap::new();
        for (edge, g) in self.gates {
            let t = targets[&edge.junction].fidelities()?;
            let plan = tailor_plan(g, &t)?;
            let n = self.n_cnot.get(edge).copied().unwrap_or(0);
            log_gamma_total += n as f64 * plan.log_gamma();
            gammas.insert(edge.clone(), plan.gamma());
            chans.insert(edge.clone(), t);
        }
        let model = NoiseModel::from_channels(self.nec.n_qubits, &chans, self.neighbors)?;
        let f = nec_fidelity(self.nec, &model, observable)?;
        let log_sigma = if f > 0.0 { log_gamma_total - f.ln() } else { f64::INFINITY };
        Ok((log_sigma, f, gammas))
    }

    fn log_sigma(&self, observable: &PauliString, targets: &BTreeMap<String, TargetParams>) -> f64 {
        self.evaluate(observable, targets).map(|r| r.0).unwrap_or(f64::INFINITY)
    }
}

/// Coordinate-descent minimization of `ln sigma` over per-junction targets.
/// Each coordinate is scanned on a grid and refined by golden section.
pub fn optimize_target(problem: &TargetProblem) -> Result<MitigationPlan> {
    let observable = nec_observable(problem.nec, problem.observable)?;
    for (edge, g) in problem.gates {
        if g.q() == 3 && !problem.neighbors.contains_key(edge) {
            return Err(NtError::Config(format!("3-qubit channel on {edge} without a neighbor")));
        }
    }
    let junctions: BTreeSet<String> = problem.gates.keys().map(|e| e.junction.clone()).collect();
    let mut targets: BTreeMap<String, TargetParams> = BTreeMap::new();
    for j in &junctions {
        let q = problem
            .gates
            .iter()
            .filter(|(e, _)| &e.junction == j)
            .map(|(_, g)| g.q())
            .max()
            .unwrap_or(2);
        targets.insert(j.clone(), TargetParams::zero(q));
    }

    let mut any_finite = problem.log_sigma(&observable, &targets).is_finite();
    for _ in 0..SWEEPS {
        for j in &junctions {
            let n_coords = targets[j].coords().len();
            for k in 0..n_coords {
                let (hi, n_grid) = if n_coords == 1 { (LAMBDA_MAX, GRID) } else { (EPS3_MAX, GRID3) };
                let eval = |v: f64| {
                    let mut t = targets.clone();
                    t.insert(j.clone(), targets[j].with_coord(k, v));
                    problem.log_sigma(&observable, &t)
                };
                let grid: Vec<f64> = (0..n_grid).map(|i| hi * i as f64 / (n_grid - 1) as f64).collect();
                let vals: Vec<f64> = grid.par_iter().map(|&v| eval(v)).collect();
                let (best, &best_val) = vals
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .expect("grid");
                if !best_val.is_finite() {
                    continue;
                }
                any_finite = true;
                let lo = grid[best.saturating_sub(1)];
                let up = grid[(best + 1).min(n_grid - 1)];
                let (x, fx) = golden(eval, lo, up);
                let v = if fx <= best_val { x } else { grid[best] };
                let updated = targets[j].with_coord(k, v);
                targets.insert(j.clone(), updated);
            }
        }
    }
    if !any_finite {
        return Err(NtError::Optimization("sigma is infinite over the whole search box".into()));
    }
    let (log_sigma, f_nec, gammas) = problem.evaluate(&observable, &targets)?;
    if !log_sigma.is_finite() {
        return Err(NtError::Optimization("no target with positive NEC fidelity".into()));
    }
    let edges = problem
        .gates
        .keys()
        .map(|e| EdgePlan {
            junction_id: e.junction.clone(),
            control: e.control,
            target: e.target,
            neighbor: problem.neighbors.get(e).copied(),
            target_params: targets[&e.junction],
            gamma: gammas[e],
            n_cnot: problem.n_cnot.get(e).copied().unwrap_or(0),
        })
        .collect();
    Ok(MitigationPlan {
        edges,
        observable,
        f_nec,
        log_sigma,
    })
}

/// Golden-section minimization on `[a, b]`.
fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERS {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// CNOT count per edge of a circuit, as used for `sigma`.
pub fn cnot_counts(circuit: &Circuit) -> BTreeMap<EdgeKey, usize> {
    circuit.edge_counts()
}
