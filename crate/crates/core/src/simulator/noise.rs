use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::density::{pauli_matrix, Mat4};
use crate::circuit::{Cnot, EdgeKey, C64};
use crate::error::{NtError, Result};
use crate::pauli::{inverse_walsh_hadamard, walsh_hadamard, FidelityVector, PauliString, ProbVector};
use crate::rng;

pub const SCHEMA: &str = "nt-noise-model";
pub const SCHEMA_VERSION: u32 = 1;

/// Per-qubit readout confusion; row `i` is the outcome distribution when the
/// true bit is `i`.
pub type Confusion = [[f64; 2]; 2];

/// Pauli channel attached to one CNOT direction of a junction. Three-qubit
/// entries act on (control, target, neighbor).
#[derive(Debug, Clone, PartialEq)]
pub struct JunctionNoise {
    pub junction_id: String,
    pub control: usize,
    pub target: usize,
    pub neighbor: Option<usize>,
    pub fidelities: FidelityVector,
}

impl JunctionNoise {
    pub fn new(edge: &EdgeKey, neighbor: Option<usize>, fidelities: FidelityVector) -> Result<Self> {
        let expected = if neighbor.is_some() { 3 } else { 2 };
        if fidelities.q() != expected {
            return Err(NtError::Dimension(format!(
                "junction {edge}: {}-qubit channel, expected {expected}",
                fidelities.q()
            )));
        }
        Ok(Self {
            junction_id: edge.junction.clone(),
            control: edge.control,
            target: edge.target,
            neighbor,
            fidelities,
        })
    }

    pub fn edge(&self) -> EdgeKey {
        EdgeKey::new(self.junction_id.clone(), self.control, self.target)
    }

    pub fn qubits(&self) -> Vec<usize> {
        let mut v = vec![self.control, self.target];
        v.extend(self.neighbor);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherentResidual {
    pub delta: f64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct JunctionRecord {
    junction_id: String,
    q: usize,
    control: usize,
    target: usize,
    #[serde(default)]
    neighbor: Option<usize>,
    direction: String,
    fidelities: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    schema: String,
    version: u32,
    n_qubits: usize,
    junctions: Vec<JunctionRecord>,
    #[serde(default)]
    coherent: Option<CoherentResidual>,
    #[serde(default)]
    single_qubit_depolarizing: f64,
    #[serde(default)]
    readout: Option<Vec<Confusion>>,
}

/// Everything the emulator needs to know about the device.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelRecord", into = "ModelRecord")]
pub struct NoiseModel {
    n_qubits: usize,
    junctions: Vec<JunctionNoise>,
    coherent: Option<CoherentResidual>,
    single_qubit_depolarizing: f64,
    readout: Option<Vec<Confusion>>,
    probs: Vec<ProbVector>,
    unitaries: Vec<Option<Mat4>>,
    index: HashMap<EdgeKey, usize>,
}

impl TryFrom<ModelRecord> for NoiseModel {
    type Error = NtError;

    fn try_from(r: ModelRecord) -> Result<Self> {
        if r.schema != SCHEMA || r.version != SCHEMA_VERSION {
            return Err(NtError::Config(format!(
                "unsupported noise-model schema {} v{}",
                r.schema, r.version
            )));
        }
        let junctions = r
            .junctions
            .into_iter()
            .map(|j| {
                let edge = EdgeKey::new(j.junction_id, j.control, j.target);
                JunctionNoise::new(&edge, j.neighbor, FidelityVector::new(j.q, j.fidelities)?)
            })
            .collect::<Result<Vec<_>>>()?;
        NoiseModel::new(
            r.n_qubits,
            junctions,
            r.coherent,
            r.single_qubit_depolarizing,
            r.readout,
        )
    }
}

impl From<NoiseModel> for ModelRecord {
    fn from(m: NoiseModel) -> Self {
        ModelRecord {
            schema: SCHEMA.into(),
            version: SCHEMA_VERSION,
            n_qubits: m.n_qubits,
            junctions: m
                .junctions
                .iter()
                .map(|j| JunctionRecord {
                    junction_id: j.junction_id.clone(),
                    q: j.fidelities.q(),
                    control: j.control,
                    target: j.target,
                    neighbor: j.neighbor,
                    direction: j.edge().direction(),
                    fidelities: j.fidelities.values().to_vec(),
                })
                .collect(),
            coherent: m.coherent,
            single_qubit_depolarizing: m.single_qubit_depolarizing,
            readout: m.readout,
        }
    }
}

impl NoiseModel {
    pub fn new(
        n_qubits: usize,
        junctions: Vec<JunctionNoise>,
        coherent: Option<CoherentResidual>,
        single_qubit_depolarizing: f64,
        readout: Option<Vec<Confusion>>,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&single_qubit_depolarizing) {
            return Err(NtError::InvalidParameter(format!(
                "single-qubit depolarizing rate {single_qubit_depolarizing} outside [0, 1]"
            )));
        }
        if let Some(c) = coherent {
            if !(c.delta >= 0.0 && c.delta.is_finite()) {
                return Err(NtError::InvalidParameter(format!("coherent strength {}", c.delta)));
            }
        }
        if let Some(ro) = &readout {
            if ro.len() != n_qubits {
                return Err(NtError::Dimension(format!(
                    "{} confusion matrices for {n_qubits} qubits",
                    ro.len()
                )));
            }
            for m in ro {
                for row in m {
                    if row.iter().any(|v| *v < 0.0) || (row[0] + row[1] - 1.0).abs() > 1e-9 {
                        return Err(NtError::InvalidParameter(format!(
                            "confusion row {row:?} is not a distribution"
                        )));
                    }
                }
            }
        }
        let mut index = HashMap::new();
        let mut probs = Vec::new();
        let mut unitaries = Vec::new();
        for (i, j) in junctions.iter().enumerate() {
            for q in j.qubits() {
                if q >= n_qubits {
                    return Err(NtError::IndexOutOfRange {
                        index: q,
                        n_qubits,
                    });
                }
            }
            if index.insert(j.edge(), i).is_some() {
                return Err(NtError::Config(format!("junction {} listed twice", j.edge())));
            }
            let p = walsh_hadamard(&j.fidelities);
            probs.push(ProbVector::physical(p.q(), p.values().to_vec())?);
            unitaries.push(match coherent {
                Some(c) if c.delta > 0.0 => Some(coherent_unitary(c, &j.edge())),
                _ => None,
            });
        }
        Ok(Self {
            n_qubits,
            junctions,
            coherent,
            single_qubit_depolarizing,
            readout,
            probs,
            unitaries,
            index,
        })
    }

    /// Pauli-only model built from one channel per edge.
    pub fn from_channels(
        n_qubits: usize,
        channels: &BTreeMap<EdgeKey, FidelityVector>,
        neighbors: &BTreeMap<EdgeKey, usize>,
    ) -> Result<Self> {
        let junctions = channels
            .iter()
            .map(|(e, f)| {
                let nb = if f.q() == 3 { neighbors.get(e).copied() } else { None };
                JunctionNoise::new(e, nb, f.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(n_qubits, junctions, None, 0.0, None)
    }

    pub fn noiseless(n_qubits: usize) -> Self {
        Self::new(n_qubits, Vec::new(), None, 0.0, None).expect("empty model")
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn junctions(&self) -> &[JunctionNoise] {
        &self.junctions
    }

    pub fn coherent(&self) -> Option<CoherentResidual> {
        self.coherent
    }

    pub fn single_qubit_depolarizing(&self) -> f64 {
        self.single_qubit_depolarizing
    }

    pub fn readout(&self) -> Option<&[Confusion]> {
        self.readout.as_deref()
    }

    pub fn is_empty(&self) -> bool {
        self.junctions.is_empty()
    }

    pub(crate) fn probs(&self, i: usize) -> &ProbVector {
        &self.probs[i]
    }

    pub(crate) fn unitary(&self, i: usize) -> Option<&Mat4> {
        self.unitaries[i].as_ref()
    }

    /// Entry covering a CNOT. An empty model is noiseless and covers nothing.
    pub fn lookup(&self, cnot: &Cnot) -> Result<Option<usize>> {
        if self.junctions.is_empty() {
            return Ok(None);
        }
        self.index
            .get(&cnot.edge())
            .copied()
            .map(Some)
            .ok_or_else(|| NtError::ModelCoverage(cnot.edge().to_string()))
    }

    pub fn edges(&self) -> Vec<EdgeKey> {
        self.junctions.iter().map(|j| j.edge()).collect()
    }

    pub fn fidelities(&self) -> BTreeMap<EdgeKey, FidelityVector> {
        self.junctions.iter().map(|j| (j.edge(), j.fidelities.clone())).collect()
    }

    pub fn neighbors(&self) -> BTreeMap<EdgeKey, usize> {
        self.junctions
            .iter()
            .filter_map(|j| j.neighbor.map(|n| (j.edge(), n)))
            .collect()
    }

    /// Pauli channel that Pauli twirling turns each entry into: the stored
    /// channel times the twirl of the coherent residual.
    pub fn effective_fidelities(&self) -> BTreeMap<EdgeKey, FidelityVector> {
        self.junctions
            .iter()
            .enumerate()
            .map(|(i, j)| {
                let f = match &self.unitaries[i] {
                    None => j.fidelities.clone(),
                    Some(u) => {
                        let tw = twirl_fidelities(u);
                        let ext = if j.fidelities.q() == 3 {
                            FidelityVector::new(3, (0..64).map(|a| tw.get(a >> 2)).collect())
                                .expect("extended twirl")
                        } else {
                            tw
                        };
                        j.fidelities.compose(&ext).expect("same width")
                    }
                };
                (j.edge(), f)
            })
            .collect()
    }

    /// Same device with the coherent residual replaced by its Pauli twirl.
    pub fn twirled(&self) -> Result<NoiseModel> {
        let eff = self.effective_fidelities();
        let junctions = self
            .junctions
            .iter()
            .map(|j| JunctionNoise::new(&j.edge(), j.neighbor, eff[&j.edge()].clone()))
            .collect::<Result<Vec<_>>>()?;
        NoiseModel::new(
            self.n_qubits,
            junctions,
            None,
            self.single_qubit_depolarizing,
            self.readout.clone(),
        )
    }

    /// Model without coherent residual, single-qubit noise or readout error.
    pub fn pauli_only(&self) -> NoiseModel {
        NoiseModel::new(self.n_qubits, self.junctions.clone(), None, 0.0, None)
            .expect("subset of a valid model")
    }

    pub fn with_coherent(&self, coherent: Option<CoherentResidual>) -> Result<NoiseModel> {
        NoiseModel::new(
            self.n_qubits,
            self.junctions.clone(),
            coherent,
            self.single_qubit_depolarizing,
            self.readout.clone(),
        )
    }

    pub fn with_single_qubit_depolarizing(&self, p: f64) -> Result<NoiseModel> {
        NoiseModel::new(self.n_qubits, self.junctions.clone(), self.coherent, p, self.readout.clone())
    }

    pub fn with_readout(&self, readout: Option<Vec<Confusion>>) -> Result<NoiseModel> {
        NoiseModel::new(
            self.n_qubits,
            self.junctions.clone(),
            self.coherent,
            self.single_qubit_depolarizing,
            readout,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `exp(-i delta H)` with `H` a seeded traceless Gaussian Hermitian matrix
/// normalized to `Tr(H^2) = 4`.
pub fn coherent_unitary(c: CoherentResidual, edge: &EdgeKey) -> Mat4 {
    let mut r = rng::stream(c.seed, "coherent", rng::derive_seed(0, &edge.to_string(), 0));
    let mut g = || -> f64 { StandardNormal.sample(&mut r) };
    let mut h = DMatrix::<C64>::zeros(4, 4);
    for i in 0..4 {
        h[(i, i)] = C64::new(g(), 0.0);
        for j in i + 1..4 {
            let v = C64::new(g(), g()) / 2f64.sqrt();
            h[(i, j)] = v;
            h[(j, i)] = v.conj();
        }
    }
    let tr = h.trace() / C64::new(4.0, 0.0);
    for i in 0..4 {
        h[(i, i)] -= tr;
    }
    let norm = (h.iter().map(|v| v.norm_sqr()).sum::<f64>() / 4.0).sqrt();
    h /= C64::new(norm, 0.0);
    let eig = h.symmetric_eigen();
    let v = &eig.eigenvectors;
    let mut u = [[C64::new(0.0, 0.0); 4]; 4];
    for (r_, row) in u.iter_mut().enumerate() {
        for (col, out) in row.iter_mut().enumerate() {
            *out = (0..4)
                .map(|k| v[(r_, k)] * C64::from_polar(1.0, -c.delta * eig.eigenvalues[k]) * v[(col, k)].conj())
                .sum();
        }
    }
    u
}

/// Fidelities of the Pauli twirl of a 2-qubit unitary channel:
/// `p_a = |Tr(P_a U) / 4|^2`.
pub fn twirl_fidelities(u: &Mat4) -> FidelityVector {
    let um = DMatrix::from_fn(4, 4, |i, j| u[i][j]);
    let p: Vec<f64> = (0..16)
        .map(|a| {
            let pa = pauli_matrix(&PauliString::from_index(2, a).expect("index"));
            ((pa * &um).trace() / C64::new(4.0, 0.0)).norm_sqr()
        })
        .collect();
    let total: f64 = p.iter().sum();
    let p = ProbVector::new(2, p.iter().map(|v| v / total).collect()).expect("unitary twirl");
    inverse_walsh_hadamard(&p)
}
