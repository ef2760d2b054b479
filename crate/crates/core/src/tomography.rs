//! Pauli noise tomography of CNOT junctions: circuit families, execution
//! under a noise model and log-linear fitting of the fidelities.
//!
//! Local frame: qubit 0 is the control, 1 the target and 2 the neighbor when
//! crosstalk is learned. Signals are predicted by propagating the measured
//! Pauli backwards through the circuit, collecting one fidelity factor per
//! CNOT, so every family shares the same fitting code.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::sanitize_probabilities;
pub use crate::circuit::Prep;
use crate::circuit::{Circuit, EdgeKey, Gate, SingleQubitGate};
use crate::compiling::{dress_with, DressingChoice, Twirl};
use crate::error::{NtError, Result};
use crate::pauli::{
    clifford_conjugate, num_paulis, walsh_hadamard, CliffordGate, FidelityVector, Pauli,
    PauliString, ProbVector,
};
use crate::rng;
use crate::simulator::{
    apply_readout_error, parity_mean, run_channel, sample_shots, Basis, JunctionNoise, NoiseModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "INV")]
    Inv,
    #[serde(rename = "YZ")]
    Yz,
    #[serde(rename = "XY")]
    Xy,
    #[serde(rename = "YY")]
    Yy,
    #[serde(rename = "XZ")]
    Xz,
    #[serde(rename = "XX")]
    Xx,
    #[serde(rename = "YX")]
    Yx,
    #[serde(rename = "ZY")]
    Zy,
    #[serde(rename = "ZZ")]
    Zz,
}

struct FamilyDef {
    prep: [Prep; 2],
    measure: [Pauli; 2],
    odd: bool,
    rotate: bool,
}

impl Family {
    pub const ALL: [Family; 9] = [
        Family::Inv,
        Family::Yz,
        Family::Xy,
        Family::Yy,
        Family::Xz,
        Family::Xx,
        Family::Yx,
        Family::Zy,
        Family::Zz,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Family::Inv => "INV",
            Family::Yz => "YZ",
            Family::Xy => "XY",
            Family::Yy => "YY",
            Family::Xz => "XZ",
            Family::Xx => "XX",
            Family::Yx => "YX",
            Family::Zy => "ZY",
            Family::Zz => "ZZ",
        }
    }

    pub fn from_label(s: &str) -> Result<Family> {
        Family::ALL
            .into_iter()
            .find(|f| f.label() == s)
            .ok_or_else(|| NtError::Config(format!("unknown PNT family `{s}`")))
    }

    fn def(self) -> FamilyDef {
        use Pauli::*;
        use Prep::*;
        let (prep, measure, odd, rotate) = match self {
            Family::Inv => ([Zero, Plus], [Z, X], false, false),
            Family::Yz => ([Plus, PlusY], [X, Y], false, true),
            Family::Xy => ([PlusY, Zero], [Y, Z], false, true),
            Family::Yy => ([Plus, Zero], [X, Z], false, true),
            Family::Xz => ([PlusY, PlusY], [Y, Y], false, true),
            Family::Xx => ([Plus, Plus], [X, X], true, false),
            Family::Yx => ([PlusY, Plus], [Y, X], true, false),
            Family::Zy => ([Zero, PlusY], [Z, Y], true, false),
            Family::Zz => ([Zero, Zero], [Z, Z], true, false),
        };
        FamilyDef {
            prep,
            measure,
            odd,
            rotate,
        }
    }

    pub fn prepared_state(self) -> [Prep; 2] {
        self.def().prep
    }

    /// CNOT count for depth parameter `n`.
    pub fn cnot_count(self, n: usize) -> usize {
        if self.def().odd {
            2 * n + 1
        } else {
            2 * n
        }
    }
}

/// One extracted signal of a PNT circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    /// Measured Pauli in the local frame, e.g. `ZX` or `ZXZ`.
    pub label: String,
    /// Same Pauli on the device register.
    pub observable: PauliString,
    /// Fidelity exponents: local channel index and power.
    pub exponents: Vec<(usize, u32)>,
    /// Ideal signal, +1 or -1.
    pub sign: f64,
    /// SPAM amplitude shared by all quantities carrying this key.
    pub amplitude_group: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PntCircuitSpec {
    pub edge: EdgeKey,
    pub neighbor: Option<usize>,
    pub family: Family,
    pub depth: usize,
    pub cnots: usize,
    pub basis: Vec<Basis>,
    pub quantities: Vec<Quantity>,
    pub circuit: Circuit,
}

impl PntCircuitSpec {
    /// Channel width seen by the fit: 2, or 3 with the neighbor.
    pub fn q(&self) -> usize {
        if self.neighbor.is_some() {
            3
        } else {
            2
        }
    }
}

/// Depth schedule `n = 2^d`, `d = 0 .. n_d - 1`.
pub fn depth_schedule(n_d: usize) -> Vec<usize> {
    (0..n_d).map(|d| 1usize << d).collect()
}

fn heisenberg_single(op: SingleQubitGate, qubit: usize, p: &PauliString) -> Result<(PauliString, i8)> {
    // U^dagger P U, built from the closed-form forward conjugations
    let seq: Vec<CliffordGate> = match op {
        SingleQubitGate::H => vec![CliffordGate::H(qubit)],
        SingleQubitGate::X => vec![CliffordGate::X(qubit)],
        SingleQubitGate::Y => vec![CliffordGate::Y(qubit)],
        SingleQubitGate::Z => vec![CliffordGate::Z(qubit)],
        SingleQubitGate::S => vec![CliffordGate::Rz90(qubit); 3],
        SingleQubitGate::Sdg => vec![CliffordGate::Rz90(qubit)],
        SingleQubitGate::Rx(t) | SingleQubitGate::Rz(t) => {
            let quarter = t / std::f64::consts::FRAC_PI_2;
            let k = quarter.round();
            if (quarter - k).abs() > 1e-12 {
                return Err(NtError::UnsupportedGate(format!("{op:?} is not a Clifford")));
            }
            let reps = (-(k as i64)).rem_euclid(4) as usize;
            let g = if matches!(op, SingleQubitGate::Rx(_)) {
                CliffordGate::Rx90(qubit)
            } else {
                CliffordGate::Rz90(qubit)
            };
            vec![g; reps]
        }
        SingleQubitGate::Ry(_) => {
            return Err(NtError::UnsupportedGate("Ry in a PNT circuit".into()));
        }
    };
    let mut cur = p.clone();
    let mut sign = 1i8;
    for g in seq {
        let (next, s) = clifford_conjugate(g, &cur)?;
        cur = next;
        sign *= s;
    }
    Ok((cur, sign))
}

/// Backward propagation of `observable` through a Clifford circuit whose
/// CNOTs on `edge` carry a diagonal channel on `frame`. Returns the ideal
/// signal on `|0...0>` and the fidelity exponents.
pub fn propagate(
    circuit: &Circuit,
    edge: &EdgeKey,
    frame: &[usize],
    observable: &PauliString,
) -> Result<(f64, BTreeMap<usize, u32>)> {
    let mut cur = observable.clone();
    let mut sign = 1.0;
    let mut exps = BTreeMap::new();
    for op in circuit.ops.iter().rev() {
        match &op.gate {
            Gate::Cnot(c) => {
                if &c.edge() == edge {
                    let local = cur.restrict(frame).index();
                    if local != 0 {
                        *exps.entry(local).or_insert(0) += 1;
                    }
                }
                let (next, s) = clifford_conjugate(
                    CliffordGate::Cnot {
                        control: c.control,
                        target: c.target,
                    },
                    &cur,
                )?;
                cur = next;
                sign *= s as f64;
            }
            Gate::Single { qubit, op } => {
                let (next, s) = heisenberg_single(*op, *qubit, &cur)?;
                cur = next;
                sign *= s as f64;
            }
        }
    }
    let ideal = if cur.is_diagonal() { sign } else { 0.0 };
    Ok((ideal, exps))
}

fn cnot_invariant(p: &PauliString) -> bool {
    let (q, _) = clifford_conjugate(CliffordGate::Cnot { control: 0, target: 1 }, p).expect("2q");
    &q == p
}

/// Builds the PNT circuits of one junction direction (and its reverse when
/// `both_directions`). With `neighbor` the spectator is prepared in `|0>`
/// and measured in Z.
pub fn generate_pnt_circuits(
    n_qubits: usize,
    edge: &EdgeKey,
    neighbor: Option<usize>,
    depths: &[usize],
    both_directions: bool,
) -> Result<Vec<PntCircuitSpec>> {
    if depths.is_empty() || depths.contains(&0) {
        return Err(NtError::InvalidParameter("PNT depths must be >= 1".into()));
    }
    let mut edges = vec![edge.clone()];
    if both_directions {
        edges.push(EdgeKey::new(edge.junction.clone(), edge.target, edge.control));
    }
    let mut out = Vec::new();
    for e in &edges {
        for fam in Family::ALL {
            for &n in depths {
                out.push(build_spec(n_qubits, e, neighbor, fam, n)?);
            }
        }
    }
    Ok(out)
}

fn build_spec(n_qubits: usize, edge: &EdgeKey, neighbor: Option<usize>, family: Family, n: usize) -> Result<PntCircuitSpec> {
    let def = family.def();
    let (c, t) = (edge.control, edge.target);
    let mut circuit = Circuit::new(n_qubits);
    for (q, prep) in [(c, def.prep[0]), (t, def.prep[1])] {
        for g in prep.gates() {
            circuit.single(q, *g);
        }
    }
    let m = family.cnot_count(n);
    for _ in 0..m {
        circuit.cnot(c, t, edge.junction.clone(), neighbor);
        if def.rotate {
            circuit.single(c, SingleQubitGate::rz90());
            circuit.single(t, SingleQubitGate::rx90());
        }
    }
    circuit.validate()?;

    let mut basis = vec![Basis::Z; n_qubits];
    basis[c] = Basis::of(def.measure[0]).expect("non-identity");
    basis[t] = Basis::of(def.measure[1]).expect("non-identity");

    let [mc, mt] = def.measure;
    let pair_terms: Vec<[Pauli; 2]> = if def.rotate {
        vec![[mc, mt]]
    } else {
        vec![[mc, mt], [mc, Pauli::I], [Pauli::I, mt]]
    };
    let neighbor_terms: Vec<Pauli> = if neighbor.is_some() { vec![Pauli::I, Pauli::Z] } else { vec![Pauli::I] };

    let mut frame = vec![c, t];
    frame.extend(neighbor);
    let mut quantities = Vec::new();
    let mut push = |local: Vec<Pauli>, group: String| -> Result<()> {
        let local = PauliString::new(local)?;
        let mut word = vec![Pauli::I; n_qubits];
        for (i, &q) in frame.iter().enumerate() {
            word[q] = local.get(i);
        }
        let observable = PauliString::new(word)?;
        let (sign, exps) = propagate(&circuit, edge, &frame, &observable)?;
        if sign == 0.0 {
            return Err(NtError::InvalidParameter(format!(
                "{} family: {local} has no ideal signal",
                family.label()
            )));
        }
        quantities.push(Quantity {
            label: local.to_string(),
            observable,
            exponents: exps.into_iter().collect(),
            sign,
            amplitude_group: group,
        });
        Ok(())
    };
    for nb in &neighbor_terms {
        for pair in &pair_terms {
            let mut local = pair.to_vec();
            if neighbor.is_some() {
                local.push(*nb);
            }
            let p2 = PauliString::new(pair.to_vec())?;
            let group = if def.odd && !cnot_invariant(&p2) {
                format!("{}:alt:{}", family.label(), nb.as_char())
            } else {
                format!("{}:{}", family.label(), PauliString::new(local.clone())?)
            };
            push(local, group)?;
        }
    }
    if neighbor.is_some() && family == Family::Inv {
        push(vec![Pauli::I, Pauli::I, Pauli::Z], format!("{}:IIZ", family.label()))?;
    }
    Ok(PntCircuitSpec {
        edge: edge.clone(),
        neighbor,
        family,
        depth: n,
        cnots: m,
        basis,
        quantities,
        circuit,
    })
}

/// One row of the signals table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRow {
    pub junction: String,
    pub direction: String,
    pub family: Family,
    pub depth: usize,
    pub quantity_label: String,
    pub signal: f64,
    pub std: f64,
    /// Per randomized-compiling circuit values, kept for resampling.
    #[serde(skip)]
    pub samples: Vec<f64>,
}

/// Averages the neighbor-error blocks of a 3-qubit channel, which is what
/// the cyclic neighbor twirl does.
pub fn isotropize_neighbor(f: &FidelityVector) -> FidelityVector {
    if f.q() != 3 {
        return f.clone();
    }
    let v = f.values();
    let out = (0..64)
        .map(|i| {
            let (pair, k) = (i >> 2, i & 3);
            if k == 0 {
                v[i]
            } else {
                (v[4 * pair + 1] + v[4 * pair + 2] + v[4 * pair + 3]) / 3.0
            }
        })
        .collect();
    FidelityVector::new(3, out).expect("averaged channel")
}

/// Pauli channel that infinite (c)RC averaging produces from a model.
pub fn infinite_twirl_model(model: &NoiseModel) -> Result<NoiseModel> {
    let tw = model.twirled()?;
    let junctions = tw
        .junctions()
        .iter()
        .map(|j| JunctionNoise::new(&j.edge(), j.neighbor, isotropize_neighbor(&j.fidelities)))
        .collect::<Result<Vec<_>>>()?;
    NoiseModel::new(tw.n_qubits(), junctions, None, tw.single_qubit_depolarizing(), None)
}

fn bootstrap_std(samples: &[f64], resamples: usize, rng: &mut impl Rng) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    let mu = means.iter().sum::<f64>() / resamples as f64;
    (means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / (resamples - 1) as f64).sqrt()
}

/// Settings for executing PNT circuits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PntRun {
    /// Randomized-compiling circuits per spec; 0 selects analytic signals.
    pub n_rc: usize,
    /// Shots per circuit; 0 selects exact per-circuit expectations.
    pub shots: u64,
    pub seed: u64,
    /// Resamples for the per-point std.
    pub bootstrap: usize,
}

impl Default for PntRun {
    fn default() -> Self {
        Self {
            n_rc: 200,
            shots: 100,
            seed: 0,
            bootstrap: 1000,
        }
    }
}

/// Executes PNT circuits. Analytic mode evaluates the undressed circuit
/// against the twirled channel; otherwise each spec is averaged over
/// `n_rc` dressings of `shots` shots each.
pub fn measure_pnt(specs: &[PntCircuitSpec], model: &NoiseModel, run: PntRun) -> Result<Vec<SignalRow>> {
    let analytic = run.n_rc == 0;
    let amodel = if analytic { Some(infinite_twirl_model(model)?) } else { None };
    let rows: Vec<Vec<SignalRow>> = specs
        .par_iter()
        .enumerate()
        .map(|(si, spec)| -> Result<Vec<SignalRow>> {
            let mk = |q: &Quantity, signal: f64, std: f64, samples: Vec<f64>| SignalRow {
                junction: spec.edge.junction.clone(),
                direction: spec.edge.direction(),
                family: spec.family,
                depth: spec.depth,
                quantity_label: q.label.clone(),
                signal,
                std,
                samples,
            };
            if let Some(m) = &amodel {
                let rho = run_channel(&spec.circuit, m)?;
                return spec
                    .quantities
                    .iter()
                    .map(|q| Ok(mk(q, rho.expectation(&q.observable)?, 0.0, Vec::new())))
                    .collect();
            }
            let twirl = if spec.neighbor.is_some() { Twirl::Crc } else { Twirl::Rc };
            let per_circuit: Vec<Vec<f64>> = (0..run.n_rc)
                .map(|r| -> Result<Vec<f64>> {
                    let mut g = rng::stream(run.seed, "pnt", (si * run.n_rc + r) as u64);
                    let dressed = dress_with(&spec.circuit, twirl, None, |_, _, _| DressingChoice {
                        twirl: g.random_range(0..16),
                        neighbor_pauli: g.random_range(0..4),
                        neighbor_rot: g.random_range(0..3),
                        nt: 0,
                    })?;
                    let rho = run_channel(&dressed.circuit, model)?;
                    if run.shots == 0 {
                        return spec.quantities.iter().map(|q| rho.expectation(&q.observable)).collect();
                    }
                    let mut rec = sample_shots(&rho, &spec.basis, run.shots, &mut g)?;
                    if let Some(ro) = model.readout() {
                        rec = apply_readout_error(&rec, ro, &mut g)?;
                    }
                    let n = spec.basis.len();
                    Ok(spec
                        .quantities
                        .iter()
                        .map(|q| {
                            let mask = q.observable.support().iter().fold(0, |m, &k| m | (1 << (n - 1 - k)));
                            parity_mean(&rec.counts, mask)
                        })
                        .collect())
                })
                .collect::<Result<_>>()?;
            let mut brng = rng::stream(run.seed, "pnt-bootstrap", si as u64);
            Ok(spec
                .quantities
                .iter()
                .enumerate()
                .map(|(k, q)| {
                    let samples: Vec<f64> = per_circuit.iter().map(|v| v[k]).collect();
                    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
                    let std = bootstrap_std(&samples, run.bootstrap, &mut brng);
                    mk(q, mean, std, samples)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Fitted channel of one junction direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyResult {
    pub junction_id: String,
    pub control: usize,
    pub target: usize,
    #[serde(default)]
    pub neighbor: Option<usize>,
    /// Full PTM diagonal, 16 entries, or 64 with the neighbor digit last.
    pub fidelities: Vec<f64>,
    pub std: Vec<f64>,
    /// Neighbor-identity block (16 values, first is 1) when crosstalk is fitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_identity: Option<Vec<f64>>,
    /// Neighbor-error block (16 values) when crosstalk is fitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_error: Option<Vec<f64>>,
    /// Indices with `f > 1 + 3 std`.
    pub anomalies: Vec<usize>,
    /// Indices with a non-positive estimate.
    pub invalid: Vec<usize>,
    pub amplitudes: BTreeMap<String, f64>,
    pub residual_rms: f64,
}

impl TomographyResult {
    pub fn edge(&self) -> EdgeKey {
        EdgeKey::new(self.junction_id.clone(), self.control, self.target)
    }

    pub fn q(&self) -> usize {
        if self.neighbor.is_some() {
            3
        } else {
            2
        }
    }

    pub fn fidelity_vector(&self) -> Result<FidelityVector> {
        FidelityVector::new(self.q(), self.fidelities.clone())
    }
}

/// Index of the unknown log-fidelity for a local channel index, `None` for
/// the identity. Three-qubit unknowns: 15 neighbor-identity values, then 16
/// neighbor-error values.
fn unknown_of(q: usize, local: usize) -> Option<usize> {
    if q == 2 {
        return (local != 0).then(|| local - 1);
    }
    let (pair, k) = (local >> 2, local & 3);
    if k == 0 {
        (pair != 0).then(|| pair - 1)
    } else {
        Some(15 + pair)
    }
}

fn n_unknowns(q: usize) -> usize {
    if q == 2 {
        15
    } else {
        31
    }
}

struct Design {
    x: DMatrix<f64>,
    groups: Vec<String>,
    n_f: usize,
}

fn build_design(q: usize, rows: &[(&Quantity, usize)]) -> Design {
    let n_f = n_unknowns(q);
    let mut groups: Vec<String> = Vec::new();
    for (qt, _) in rows {
        if !groups.contains(&qt.amplitude_group) {
            groups.push(qt.amplitude_group.clone());
        }
    }
    let mut x = DMatrix::zeros(rows.len(), n_f + groups.len());
    for (r, (qt, _)) in rows.iter().enumerate() {
        for &(local, pow) in &qt.exponents {
            if let Some(u) = unknown_of(q, local) {
                x[(r, u)] += pow as f64;
            }
        }
        let g = groups.iter().position(|g| *g == qt.amplitude_group).expect("group");
        x[(r, n_f + g)] = 1.0;
    }
    Design { x, groups, n_f }
}

fn wls(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
    let sw = w.map(f64::sqrt);
    let xw = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * sw[i]);
    let yw = y.component_mul(&sw);
    let svd = xw.clone().svd(false, false);
    let smax = svd.singular_values.max();
    if svd.singular_values.iter().any(|s| *s <= 1e-10 * smax) {
        return Err(NtError::FitFailure("PNT design matrix is rank deficient".into()));
    }
    // QR solve; the SVD above is only the rank check, its own solve can be
    // inaccurate on some well-conditioned designs
    let qr = xw.clone().qr();
    let mut sol = qr.r().solve_upper_triangular(&(qr.q().transpose() * &yw)).ok_or_else(|| NtError::FitFailure("singular R factor".into()))?;
    // one step of iterative refinement
    let r = &yw - &xw * &sol;
    if let Some(d) = qr.r().solve_upper_triangular(&(qr.q().transpose() * r)) {
        sol += d;
    }
    Ok(sol)
}

/// Levenberg-Marquardt on `s = exp(X theta)` for data with non-positive points.
fn lm_fit(x: &DMatrix<f64>, s: &DVector<f64>, w: &DVector<f64>, start: DVector<f64>) -> DVector<f64> {
    let cost = |th: &DVector<f64>| -> f64 {
        let pred = (x * th).map(f64::exp);
        (0..s.len()).map(|i| w[i] * (s[i] - pred[i]).powi(2)).sum()
    };
    let mut th = start;
    let mut mu = 1e-3;
    let mut c = cost(&th);
    for _ in 0..200 {
        let pred = (x * &th).map(f64::exp);
        let j = DMatrix::from_fn(x.nrows(), x.ncols(), |i, k| pred[i] * x[(i, k)] * w[i].sqrt());
        let r = DVector::from_fn(s.len(), |i, _| (s[i] - pred[i]) * w[i].sqrt());
        let jtj = j.transpose() * &j;
        let g = j.transpose() * r;
        let mut improved = false;
        for _ in 0..20 {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += mu * (1.0 + jtj[(k, k)]);
            }
            let Some(step) = a.lu().solve(&g) else { break };
            let cand = &th + step;
            let cc = cost(&cand);
            if cc < c {
                th = cand;
                c = cc;
                mu = (mu / 3.0).max(1e-12);
                improved = true;
                break;
            }
            mu *= 4.0;
        }
        if !improved || c < 1e-30 {
            break;
        }
    }
    th
}

/// Solves for log-fidelities and log-amplitudes; returns the parameter vector.
fn solve(design: &Design, signals: &[f64], weights: &[f64]) -> Result<DVector<f64>> {
    let s = DVector::from_column_slice(signals);
    let all_positive = signals.iter().all(|v| *v > 0.0);
    // Non-positive points are clipped to the smallest positive signal for the
    // log-space start, which keeps every row (and the rank) of the design.
    let floor = signals.iter().cloned().filter(|v| *v > 0.0).fold(1.0, f64::min);
    let clipped: Vec<f64> = signals.iter().map(|v| v.max(floor)).collect();
    let y = DVector::from_iterator(clipped.len(), clipped.iter().map(|v| v.ln()));
    // log-space weights: var(ln s) ~ var(s) / s^2
    let w = DVector::from_iterator(clipped.len(), clipped.iter().zip(weights).map(|(v, w)| w * v * v));
    let start = wls(&design.x, &y, &w)?;
    if all_positive {
        return Ok(start);
    }
    Ok(lm_fit(&design.x, &s, &DVector::from_column_slice(weights), start))
}

fn assemble(q: usize, theta: &DVector<f64>) -> (Vec<f64>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let np = num_paulis(q);
    let full: Vec<f64> = (0..np)
        .map(|i| unknown_of(q, i).map(|u| theta[u].exp()).unwrap_or(1.0))
        .collect();
    if q == 2 {
        return (full, None, None);
    }
    let fi = (0..16).map(|a| full[4 * a]).collect();
    let fd = (0..16).map(|a| full[4 * a + 3]).collect();
    (full, Some(fi), Some(fd))
}

/// Fits every junction direction present in `rows`.
pub fn fit_fidelities(specs: &[PntCircuitSpec], rows: &[SignalRow], bootstrap: usize, seed: u64) -> Result<Vec<TomographyResult>> {
    let mut by_edge: BTreeMap<EdgeKey, Vec<&PntCircuitSpec>> = BTreeMap::new();
    for s in specs {
        by_edge.entry(s.edge.clone()).or_default().push(s);
    }
    by_edge
        .into_iter()
        .enumerate()
        .map(|(ei, (edge, specs))| fit_edge(&edge, &specs, rows, bootstrap, rng::derive_seed(seed, "pnt-fit", ei as u64)))
        .collect()
}

fn fit_edge(edge: &EdgeKey, specs: &[&PntCircuitSpec], rows: &[SignalRow], bootstrap: usize, seed: u64) -> Result<TomographyResult> {
    let q = specs[0].q();
    let neighbor = specs[0].neighbor;
    let lookup: BTreeMap<(Family, usize, &str), &SignalRow> = rows
        .iter()
        .filter(|r| r.junction == edge.junction && r.direction == edge.direction())
        .map(|r| ((r.family, r.depth, r.quantity_label.as_str()), r))
        .collect();

    let mut depths: BTreeMap<Family, Vec<usize>> = BTreeMap::new();
    // (quantity, spec index) pairs with their measured row
    let mut used: Vec<(&Quantity, usize, &SignalRow)> = Vec::new();
    for (si, spec) in specs.iter().enumerate() {
        for qt in &spec.quantities {
            if let Some(r) = lookup.get(&(spec.family, spec.depth, qt.label.as_str())) {
                used.push((qt, si, r));
                let d = depths.entry(spec.family).or_default();
                if !d.contains(&spec.depth) {
                    d.push(spec.depth);
                }
            }
        }
    }
    for fam in Family::ALL {
        if depths.get(&fam).map_or(0, |d| d.len()) < 2 {
            return Err(NtError::InsufficientData(format!(
                "{edge}: family {} needs at least two depths",
                fam.label()
            )));
        }
    }
    let mut by_label: BTreeMap<(Family, &str), bool> = BTreeMap::new();
    for (qt, si, r) in &used {
        let ok = by_label.entry((specs[*si].family, qt.label.as_str())).or_insert(false);
        *ok |= r.signal * qt.sign > 0.0;
    }
    if let Some(((fam, label), _)) = by_label.iter().find(|(_, ok)| !**ok) {
        return Err(NtError::UnfittableFamily(format!("{} ({label})", fam.label())));
    }

    let design_rows: Vec<(&Quantity, usize)> = used.iter().map(|(qt, si, _)| (*qt, *si)).collect();
    let design = build_design(q, &design_rows);
    let signals: Vec<f64> = used.iter().map(|(qt, _, r)| r.signal * qt.sign).collect();
    // A point whose few samples happen to agree would get an unbounded weight;
    // stds are floored at a tenth of the median.
    let mut stds: Vec<f64> = used.iter().map(|(_, _, r)| r.std).filter(|s| *s > 0.0).collect();
    stds.sort_by(f64::total_cmp);
    let floor = stds.get(stds.len() / 2).map_or(1.0, |m| 0.1 * m);
    let weights: Vec<f64> = used.iter().map(|(_, _, r)| 1.0 / r.std.max(floor).powi(2)).collect();
    let theta = solve(&design, &signals, &weights)?;
    let (fidelities, f_identity, f_error) = assemble(q, &theta);

    let pred = (&design.x * &theta).map(f64::exp);
    let residual_rms = (signals.iter().zip(pred.iter()).map(|(s, p)| (s - p).powi(2)).sum::<f64>() / signals.len() as f64).sqrt();

    // bootstrap over RC circuits when per-circuit values exist, otherwise
    // parametric resampling from the per-point std
    let has_samples = used.iter().all(|(_, _, r)| !r.samples.is_empty());
    let has_std = used.iter().any(|(_, _, r)| r.std > 0.0);
    let np = num_paulis(q);
    let std = if bootstrap > 1 && (has_samples || has_std) {
        let draws: Vec<Vec<f64>> = (0..bootstrap)
            .into_par_iter()
            .filter_map(|b| {
                let mut g = rng::stream(seed, "bootstrap", b as u64);
                let picks: Vec<Vec<usize>> = specs
                    .iter()
                    .map(|_| {
                        let n = used.iter().find(|(_, _, r)| !r.samples.is_empty()).map_or(0, |(_, _, r)| r.samples.len());
                        (0..n).map(|_| g.random_range(0..n)).collect()
                    })
                    .collect();
                let s: Vec<f64> = used
                    .iter()
                    .map(|(qt, si, r)| {
                        let v = if has_samples {
                            let p = &picks[*si];
                            p.iter().map(|&i| r.samples[i]).sum::<f64>() / p.len() as f64
                        } else {
                            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut g);
                            r.signal + r.std * z
                        };
                        v * qt.sign
                    })
                    .collect();
                solve(&design, &s, &weights).ok().map(|th| assemble(q, &th).0)
            })
            .collect();
        if draws.len() < 2 {
            return Err(NtError::FitFailure(format!("{edge}: bootstrap fits failed")));
        }
        (0..np)
            .map(|i| {
                let m = draws.iter().map(|d| d[i]).sum::<f64>() / draws.len() as f64;
                (draws.iter().map(|d| (d[i] - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt()
            })
            .collect()
    } else {
        vec![0.0; np]
    };

    let anomalies = (1..np).filter(|&i| fidelities[i] > 1.0 + 3.0 * std[i] && fidelities[i] > 1.0 + 1e-9).collect();
    let invalid = (1..np).filter(|&i| fidelities[i] <= 0.0).collect();
    let amplitudes = design
        .groups
        .iter()
        .enumerate()
        .map(|(g, name)| (name.clone(), theta[design.n_f + g].exp()))
        .collect();
    Ok(TomographyResult {
        junction_id: edge.junction.clone(),
        control: edge.control,
        target: edge.target,
        neighbor,
        fidelities,
        std,
        f_identity,
        f_error,
        anomalies,
        invalid,
        amplitudes,
        residual_rms,
    })
}

/// Error probabilities usable by the emulator: negative entries clamped to
/// zero and the rest renormalized. Fidelities above 1 are not clipped.
pub fn sanitize_for_emulation(result: &TomographyResult) -> Result<ProbVector> {
    let p = walsh_hadamard(&result.fidelity_vector()?);
    sanitize_probabilities(&p)
}

/// Noise model assembled from sanitized tomography results.
pub fn results_to_model(n_qubits: usize, results: &[TomographyResult]) -> Result<NoiseModel> {
    let junctions = results
        .iter()
        .map(|r| {
            let p = sanitize_for_emulation(r)?;
            JunctionNoise::new(&r.edge(), r.neighbor, crate::pauli::inverse_walsh_hadamard(&p))
        })
        .collect::<Result<Vec<_>>>()?;
    NoiseModel::new(n_qubits, junctions, None, 0.0, None)
}

/// Number of PNT circuits before randomized compiling.
pub fn pnt_circuit_count(n_d: usize, directions: usize, junctions: usize) -> usize {
    Family::ALL.len() * n_d * directions * junctions
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::{inverse_walsh_hadamard, symplectic_product};

    fn edge() -> EdgeKey {
        EdgeKey::new("j", 0, 1)
    }

    fn model_from(f: &FidelityVector, nb: Option<usize>, n: usize) -> NoiseModel {
        NoiseModel::new(n, vec![JunctionNoise::new(&edge(), nb, f.clone()).unwrap()], None, 0.0, None).unwrap()
    }

    fn random_channel(seed: u64, max_inf: f64) -> FidelityVector {
        let mut g = rng::stream(seed, "channel", 0);
        let mut p: Vec<f64> = (0..16).map(|_| g.random::<f64>()).collect();
        p[0] = 0.0;
        let s: f64 = p.iter().sum();
        let total = max_inf * g.random::<f64>() * 0.5;
        p.iter_mut().for_each(|v| *v *= total / s);
        p[0] = 1.0 - total;
        inverse_walsh_hadamard(&ProbVector::new(2, p).unwrap())
    }

    #[test]
    fn family_states_and_counts() {
        let states: Vec<[Prep; 2]> = Family::ALL.iter().map(|f| f.prepared_state()).collect();
        use Prep::*;
        assert_eq!(
            states,
            vec![
                [Zero, Plus],
                [Plus, PlusY],
                [PlusY, Zero],
                [Plus, Zero],
                [PlusY, PlusY],
                [Plus, Plus],
                [PlusY, Plus],
                [Zero, PlusY],
                [Zero, Zero]
            ]
        );
        let specs = generate_pnt_circuits(2, &edge(), None, &depth_schedule(5), true).unwrap();
        assert_eq!(specs.len(), 9 * 5 * 2);
        assert_eq!(pnt_circuit_count(5, 2, 2), 180);
        let n_obs: usize = specs.iter().filter(|s| s.depth == 1 && s.edge == edge()).map(|s| s.quantities.len()).sum();
        assert_eq!(n_obs, 19);
    }

    #[test]
    fn inv_family_measures_zx_squared() {
        let spec = build_spec(2, &edge(), None, Family::Inv, 1).unwrap();
        assert_eq!(spec.cnots, 2);
        let zx = spec.quantities.iter().find(|q| q.label == "ZX").unwrap();
        assert_eq!(zx.exponents, vec![("ZX".parse::<PauliString>().unwrap().index(), 2)]);
    }

    #[test]
    fn zz_family_exponents() {
        let spec = build_spec(2, &edge(), None, Family::Zz, 1).unwrap();
        assert_eq!(spec.cnots, 3);
        let idx = |s: &str| s.parse::<PauliString>().unwrap().index();
        let zz = spec.quantities.iter().find(|q| q.label == "ZZ").unwrap();
        let iz = spec.quantities.iter().find(|q| q.label == "IZ").unwrap();
        assert_eq!(zz.exponents, vec![(idx("IZ"), 1), (idx("ZZ"), 2)]);
        assert_eq!(iz.exponents, vec![(idx("IZ"), 2), (idx("ZZ"), 1)]);
        assert_eq!(zz.amplitude_group, iz.amplitude_group);
    }

    #[test]
    fn all_fidelities_are_covered() {
        let specs = generate_pnt_circuits(2, &edge(), None, &[1, 2], false).unwrap();
        let mut seen = [false; 16];
        for s in &specs {
            for q in &s.quantities {
                for (i, _) in &q.exponents {
                    seen[*i] = true;
                }
            }
        }
        assert!(seen[1..].iter().all(|s| *s));
    }

    #[test]
    fn noiseless_signals_are_one() {
        let specs = generate_pnt_circuits(2, &edge(), None, &[1, 2], false).unwrap();
        let rows = measure_pnt(&specs, &model_from(&FidelityVector::identity(2), None, 2), PntRun { n_rc: 0, ..Default::default() }).unwrap();
        for r in &rows {
            let spec = specs.iter().find(|s| s.family == r.family && s.depth == r.depth).unwrap();
            let q = spec.quantities.iter().find(|q| q.label == r.quantity_label).unwrap();
            assert!((r.signal * q.sign - 1.0).abs() < 1e-12);
        }
        let res = fit_fidelities(&specs, &rows, 0, 0).unwrap();
        assert!(res[0].fidelities.iter().all(|f| (f - 1.0).abs() < 1e-12));
        assert!(res[0].std.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn analytic_recovery() {
        let f = random_channel(3, 0.05);
        let specs = generate_pnt_circuits(2, &edge(), None, &depth_schedule(4), false).unwrap();
        let rows = measure_pnt(&specs, &model_from(&f, None, 2), PntRun { n_rc: 0, ..Default::default() }).unwrap();
        let res = fit_fidelities(&specs, &rows, 0, 0).unwrap();
        for a in 0..16 {
            assert!((res[0].fidelities[a] - f.get(a)).abs() < 1e-9, "index {a}");
        }
        assert!(res[0].residual_rms < 1e-12);
    }

    #[test]
    fn inv_signal_damps_with_depolarizing_noise() {
        let eps = 0.02;
        let f = crate::channels::depolarizing_fidelities(2, eps / 16.0);
        let spec = build_spec(2, &edge(), None, Family::Inv, 4).unwrap();
        let rows = measure_pnt(&[spec], &model_from(&f, None, 2), PntRun { n_rc: 0, ..Default::default() }).unwrap();
        let zx = rows.iter().find(|r| r.quantity_label == "ZX").unwrap();
        assert!((zx.signal - (1.0 - eps).powi(8)).abs() < 1e-12);
    }

    #[test]
    fn selective_decay() {
        // a single ZX error damps exactly the fidelities that anticommute with it
        let err: PauliString = "ZX".parse().unwrap();
        let mut p = vec![0.0; 16];
        p[0] = 0.98;
        p[err.index()] = 0.02;
        let f = inverse_walsh_hadamard(&ProbVector::new(2, p).unwrap());
        let specs = generate_pnt_circuits(2, &edge(), None, &[1, 2], false).unwrap();
        let rows = measure_pnt(&specs, &model_from(&f, None, 2), PntRun { n_rc: 0, ..Default::default() }).unwrap();
        for r in &rows {
            let spec = specs.iter().find(|s| s.family == r.family && s.depth == r.depth).unwrap();
            let q = spec.quantities.iter().find(|q| q.label == r.quantity_label).unwrap();
            let touches = q
                .exponents
                .iter()
                .any(|(i, _)| symplectic_product(&PauliString::from_index(2, *i).unwrap(), &err).unwrap() == 1);
            assert_eq!((r.signal * q.sign - 1.0).abs() > 1e-12, touches, "{:?} {}", r.family, r.quantity_label);
        }
    }

    #[test]
    fn swapped_pair_is_recovered_swapped() {
        let idx = |s: &str| s.parse::<PauliString>().unwrap().index();
        let base = random_channel(8, 0.04);
        let mut v = base.values().to_vec();
        v.swap(idx("XX"), idx("XI"));
        let swapped = FidelityVector::new(2, v).unwrap();
        let specs = generate_pnt_circuits(2, &edge(), None, &[1, 2, 4], false).unwrap();
        for f in [&base, &swapped] {
            if walsh_hadamard(f).is_quasi() {
                continue;
            }
            let rows = measure_pnt(&specs, &model_from(f, None, 2), PntRun { n_rc: 0, ..Default::default() }).unwrap();
            let res = fit_fidelities(&specs, &rows, 0, 0).unwrap();
            assert!((res[0].fidelities[idx("XX")] - f.get(idx("XX"))).abs() < 1e-9);
            assert!((res[0].fidelities[idx("XI")] - f.get(idx("XI"))).abs() < 1e-9);
        }
    }

    #[test]
    fn crosstalk_analytic_recovery() {
        let f = crate::channels::make_quasilocal_3q(crate::channels::QuasiLocalParams3Q {
            eps_cnot: 0.01,
            eps_neigh: 0.004,
            eps_glob: 0.002,
        })
        .unwrap();
        let specs = generate_pnt_circuits(3, &edge(), Some(2), &depth_schedule(4), false).unwrap();
        let rows = measure_pnt(&specs, &model_from(&f, Some(2), 3), PntRun { n_rc: 0, ..Default::default() }).unwrap();
        let res = fit_fidelities(&specs, &rows, 0, 0).unwrap();
        for a in 0..64 {
            assert!((res[0].fidelities[a] - f.get(a)).abs() < 1e-9, "index {a}");
        }
        assert_eq!(res[0].f_error.as_ref().unwrap().len(), 16);
    }

    #[test]
    fn single_depth_is_rejected() {
        let specs = generate_pnt_circuits(2, &edge(), None, &[1], false).unwrap();
        let rows = measure_pnt(&specs, &model_from(&FidelityVector::identity(2), None, 2), PntRun { n_rc: 0, ..Default::default() }).unwrap();
        assert!(matches!(fit_fidelities(&specs, &rows, 0, 0), Err(NtError::InsufficientData(_))));
    }

    #[test]
    fn non_positive_signals_are_unfittable() {
        let specs = generate_pnt_circuits(2, &edge(), None, &[1, 2], false).unwrap();
        let mut rows = measure_pnt(&specs, &model_from(&FidelityVector::identity(2), None, 2), PntRun { n_rc: 0, ..Default::default() }).unwrap();
        for r in rows.iter_mut().filter(|r| r.family == Family::Zz && r.quantity_label == "ZZ") {
            r.signal = -r.signal;
        }
        assert!(matches!(fit_fidelities(&specs, &rows, 0, 0), Err(NtError::UnfittableFamily(_))));
    }

    #[test]
    fn sanitizer_examples() {
        let f = random_channel(2, 0.03);
        let res = TomographyResult {
            junction_id: "j".into(),
            control: 0,
            target: 1,
            neighbor: None,
            fidelities: f.values().to_vec(),
            std: vec![0.0; 16],
            f_identity: None,
            f_error: None,
            anomalies: vec![],
            invalid: vec![],
            amplitudes: BTreeMap::new(),
            residual_rms: 0.0,
        };
        let p = sanitize_for_emulation(&res).unwrap();
        for (a, b) in p.values().iter().zip(walsh_hadamard(&f).values()) {
            assert!((a - b).abs() < 1e-15);
        }

        // one fidelity above 1 gives small negative probabilities
        let mut bumped = res.clone();
        bumped.fidelities = vec![1.0; 16];
        bumped.fidelities[5] = 1.01;
        let raw = walsh_hadamard(&bumped.fidelity_vector().unwrap());
        let neg: f64 = raw.values().iter().filter(|v| **v < 0.0).sum();
        let s = sanitize_for_emulation(&bumped).unwrap();
        for (a, b) in s.values().iter().zip(raw.values()) {
            let expect = if *b < 0.0 { 0.0 } else { b / (1.0 - neg) };
            assert!((a - expect).abs() < 1e-14);
        }
    }
}
