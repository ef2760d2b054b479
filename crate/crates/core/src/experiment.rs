//! End-to-end trials on the BCS benchmark: noise generation, channel
//! learning, target planning, emulation and reporting.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    awae_report, bootstrap_curve, diagnostics, extrapolate, AwaeReport, CircuitOutputs, DiagnosticsInput,
    DiagnosticsReport, Key, Table,
};
use crate::bcs::{observable_set, trotter_circuit, BcsParams, ExactDynamics};
use crate::channels::depolarizing_fidelities;
use crate::circuit::{Circuit, EdgeKey};
use crate::compiling::{nt_dress, PlanMap, Twirl};
use crate::error::{NtError, Result};
use crate::mitigation::{nec_circuit, nec_fidelity, nec_observable, optimize_target, MitigationPlan, TargetProblem};
use crate::pauli::{inverse_walsh_hadamard, walsh_hadamard, FidelityVector, Pauli, PauliString, ProbVector};
use crate::rng;
use crate::simulator::{
    apply_readout_error, common_basis, parity_mean, run_channel, run_circuit, sample_shots, Basis, CoherentResidual,
    Mode, NoiseModel,
};
use crate::tomography::{
    depth_schedule, fit_fidelities, generate_pnt_circuits, infinite_twirl_model, isotropize_neighbor, measure_pnt,
    results_to_model, PntRun, SignalRow, TomographyResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Trial {
    T1,
    T2,
    T3,
    T4,
    #[serde(rename = "DIAG")]
    Diag,
}

impl Trial {
    pub fn label(self) -> &'static str {
        match self {
            Trial::T1 => "T1",
            Trial::T2 => "T2",
            Trial::T3 => "T3",
            Trial::T4 => "T4",
            Trial::Diag => "DIAG",
        }
    }

    pub fn is_sampled(self) -> bool {
        matches!(self, Trial::T3 | Trial::Diag)
    }
}

impl std::str::FromStr for Trial {
    type Err = NtError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "T1" => Ok(Trial::T1),
            "T2" => Ok(Trial::T2),
            "T3" => Ok(Trial::T3),
            "T4" => Ok(Trial::T4),
            "DIAG" => Ok(Trial::Diag),
            other => Err(NtError::Config(format!("unknown trial `{other}`"))),
        }
    }
}

/// Source of the noiseless reference values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Noiseless Trotter circuit.
    Trotter,
    /// Exact time evolution.
    Exact,
}

/// Anisotropic Pauli noise with lognormal rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticNoise {
    /// Mean total error probability per CNOT.
    pub mean_error: f64,
    /// Coefficient of variation of the per-Pauli rates.
    pub dispersion: f64,
    /// Fraction of the error placed on the neighbor; 0 gives 2-qubit channels.
    pub crosstalk: f64,
    pub seed: u64,
}

impl Default for SyntheticNoise {
    fn default() -> Self {
        Self {
            mean_error: 0.01,
            dispersion: 2.0,
            crosstalk: 0.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSource {
    Synthetic(SyntheticNoise),
    File { path: PathBuf },
}

/// Extra device noise the learned channels do not describe.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Injection {
    pub coherent: Option<CoherentResidual>,
    pub single_qubit_depolarizing: f64,
}

/// How the CNOT channels used for planning are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Learning {
    /// Effective twirled channels of the device, as infinite-precision
    /// tomography would report them.
    Exact,
    Pnt { n_rc: usize, shots: u64, n_d: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub bcs: BcsParams,
    /// Trotter step counts of the time points.
    pub steps: Vec<usize>,
    pub noise: NoiseSource,
    pub trial: Trial,
    pub n_nt: usize,
    /// Shots per sampled circuit; 0 uses exact per-circuit expectations.
    pub shots: u64,
    pub learning: Learning,
    pub injection: Injection,
    pub reference: Reference,
    /// Observable defining the NEC fidelity during planning; all-Z by default.
    pub planning_observable: Option<PauliString>,
    pub batch_size: usize,
    pub fit_max_n: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            bcs: BcsParams::default(),
            steps: vec![3, 6, 9, 12, 15],
            noise: NoiseSource::Synthetic(SyntheticNoise::default()),
            trial: Trial::T1,
            n_nt: 10_000,
            shots: 1,
            learning: Learning::Exact,
            injection: Injection::default(),
            reference: Reference::Trotter,
            planning_observable: None,
            batch_size: 100,
            fit_max_n: 1000,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.bcs.validate()?;
        if self.steps.is_empty() || self.steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(NtError::Config("steps must be non-empty and strictly increasing".into()));
        }
        if self.trial.is_sampled() && self.n_nt < 100 {
            return Err(NtError::Config(format!("{} needs n_nt >= 100", self.trial.label())));
        }
        if self.trial == Trial::Diag && self.n_nt < 3 * self.batch_size {
            return Err(NtError::Config("DIAG needs at least three batches".into()));
        }
        if let NoiseSource::Synthetic(s) = &self.noise {
            if !(s.mean_error > 0.0 && s.mean_error < 0.5) || !(s.dispersion >= 0.0) || !(0.0..1.0).contains(&s.crosstalk) {
                return Err(NtError::Config("synthetic noise parameters out of range".into()));
            }
        }
        if let Learning::Pnt { n_rc, shots, n_d } = self.learning {
            // depths 1 and 2 alone cannot separate amplitudes from fidelities
            if n_d < 3 || n_rc == 0 || shots == 0 {
                return Err(NtError::Config("PNT needs n_d >= 3, n_rc > 0 and shots > 0".into()));
            }
        }
        if let Some(p) = &self.planning_observable {
            if p.qubits() != self.bcs.n_qubits() {
                return Err(NtError::Config("planning observable width mismatch".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.injection.single_qubit_depolarizing) {
            return Err(NtError::Config("single-qubit depolarizing rate outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(bytes))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    /// The last two time points, used for the late-time metric.
    pub fn last_two(&self) -> Vec<usize> {
        self.steps.iter().rev().take(2).rev().copied().collect()
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Edges of a BCS layout with their declared neighbors, both directions.
pub fn layout(bcs: &BcsParams) -> Vec<(EdgeKey, Option<usize>)> {
    let mut out: Vec<(EdgeKey, Option<usize>)> = Vec::new();
    for p in &bcs.pairs {
        for (c, t) in [(p.a, p.b), (p.b, p.a)] {
            let e = EdgeKey::new(p.junction.clone(), c, t);
            if !out.iter().any(|(k, _)| *k == e) {
                out.push((e, p.neighbor));
            }
        }
    }
    out
}

/// Draws one anisotropic channel per edge. All rates share one lognormal
/// and are scaled so the mean total error per CNOT equals `mean_error`.
pub fn gen_noise(spec: &SyntheticNoise, n_qubits: usize, edges: &[(EdgeKey, Option<usize>)]) -> Result<NoiseModel> {
    if edges.is_empty() {
        return Ok(NoiseModel::noiseless(n_qubits));
    }
    let sigma = (1.0 + spec.dispersion * spec.dispersion).ln().sqrt();
    let dist = LogNormal::new(0.0, sigma).map_err(|e| NtError::InvalidParameter(e.to_string()))?;
    let mut g = rng::stream(spec.seed, "gen-noise", 0);
    let with_xt = spec.crosstalk > 0.0;
    if with_xt && edges.iter().any(|(_, n)| n.is_none()) {
        return Err(NtError::Config("crosstalk needs a neighbor on every edge".into()));
    }
    let mut pair_rates: Vec<Vec<f64>> = edges.iter().map(|_| (0..15).map(|_| dist.sample(&mut g)).collect()).collect();
    let mut nb_rates: Vec<Vec<f64>> = if with_xt {
        edges.iter().map(|_| (0..48).map(|_| dist.sample(&mut g)).collect()).collect()
    } else {
        Vec::new()
    };
    let norm = |rates: &mut Vec<Vec<f64>>, total: f64| {
        let s: f64 = rates.iter().flatten().sum();
        let k = total * rates.len() as f64 / s;
        rates.iter_mut().flatten().for_each(|v| *v *= k);
    };
    norm(&mut pair_rates, spec.mean_error * (1.0 - spec.crosstalk));
    if with_xt {
        norm(&mut nb_rates, spec.mean_error * spec.crosstalk);
    }
    let mut channels = BTreeMap::new();
    let mut neighbors = BTreeMap::new();
    for (i, (e, nb)) in edges.iter().enumerate() {
        let p = if with_xt {
            let mut p = vec![0.0; 64];
            for a in 1..16 {
                p[4 * a] = pair_rates[i][a - 1];
            }
            let mut k = 0;
            for a in 0..16 {
                for kappa in 1..4 {
                    p[4 * a + kappa] = nb_rates[i][k];
                    k += 1;
                }
            }
            p[0] = 1.0 - p.iter().sum::<f64>();
            neighbors.insert(e.clone(), nb.expect("checked"));
            ProbVector::physical(3, p)?
        } else {
            let mut p = vec![0.0; 16];
            p[1..].copy_from_slice(&pair_rates[i]);
            p[0] = 1.0 - p.iter().sum::<f64>();
            ProbVector::physical(2, p)?
        };
        channels.insert(e.clone(), inverse_walsh_hadamard(&p));
    }
    NoiseModel::from_channels(n_qubits, &channels, &neighbors)
}

/// Loads or generates the device model and adds the configured injections.
pub fn device_model(config: &ExperimentConfig, base_dir: Option<&Path>) -> Result<NoiseModel> {
    let n = config.bcs.n_qubits();
    let base = match &config.noise {
        NoiseSource::Synthetic(s) => gen_noise(s, n, &layout(&config.bcs))?,
        NoiseSource::File { path } => {
            let p = match base_dir {
                Some(d) if path.is_relative() => d.join(path),
                _ => path.clone(),
            };
            NoiseModel::from_json(&fs::read_to_string(p)?)?
        }
    };
    with_injection(&base, &config.injection)
}

pub fn with_injection(model: &NoiseModel, inj: &Injection) -> Result<NoiseModel> {
    let mut m = model.clone();
    if inj.coherent.is_some() {
        m = m.with_coherent(inj.coherent)?;
    }
    if inj.single_qubit_depolarizing > 0.0 {
        m = m.with_single_qubit_depolarizing(inj.single_qubit_depolarizing)?;
    }
    Ok(m)
}

/// Learned CNOT channels, plus tomography results when PNT was run.
pub struct Learned {
    pub channels: BTreeMap<EdgeKey, FidelityVector>,
    pub neighbors: BTreeMap<EdgeKey, usize>,
    pub tomography: Vec<TomographyResult>,
    pub signals: Vec<SignalRow>,
}

impl Learned {
    pub fn model(&self, n_qubits: usize) -> Result<NoiseModel> {
        NoiseModel::from_channels(n_qubits, &self.channels, &self.neighbors)
    }

    pub fn from_model(model: &NoiseModel) -> Self {
        Self {
            channels: model.fidelities(),
            neighbors: model.neighbors(),
            tomography: Vec::new(),
            signals: Vec::new(),
        }
    }
}

pub fn learn(config: &ExperimentConfig, device: &NoiseModel) -> Result<Learned> {
    let neighbors = device.neighbors();
    match &config.learning {
        Learning::Exact => {
            let channels = device
                .effective_fidelities()
                .into_iter()
                .map(|(e, f)| (e, isotropize_neighbor(&f)))
                .collect();
            Ok(Learned {
                channels,
                neighbors,
                tomography: Vec::new(),
                signals: Vec::new(),
            })
        }
        Learning::Pnt { n_rc, shots, n_d } => {
            let mut specs = Vec::new();
            for e in device.edges() {
                let nb = device.junctions().iter().find(|j| j.edge() == e).and_then(|j| j.neighbor);
                specs.extend(generate_pnt_circuits(device.n_qubits(), &e, nb, &depth_schedule(*n_d), false)?);
            }
            let run = PntRun {
                n_rc: *n_rc,
                shots: *shots,
                seed: rng::derive_seed(config.seed, "pnt", 0),
                bootstrap: 1000,
            };
            let rows = measure_pnt(&specs, device, run)?;
            let results = fit_fidelities(&specs, &rows, run.bootstrap, run.seed)?;
            let model = results_to_model(device.n_qubits(), &results)?;
            Ok(Learned {
                channels: model.fidelities(),
                neighbors: model.neighbors(),
                tomography: results,
                signals: rows,
            })
        }
    }
}

/// Circuits of every time point.
pub fn trotter_circuits(config: &ExperimentConfig) -> Result<Vec<(usize, Circuit)>> {
    config.steps.iter().map(|&s| Ok((s, trotter_circuit(&config.bcs, s)?))).collect()
}

/// Target search for the deepest circuit.
pub fn plan_targets(config: &ExperimentConfig, learned: &Learned) -> Result<MitigationPlan> {
    let deepest = trotter_circuit(&config.bcs, *config.steps.last().expect("validated"))?;
    let nec = nec_circuit(&deepest);
    let counts = deepest.edge_counts();
    let obs = config
        .planning_observable
        .clone()
        .unwrap_or_else(|| PauliString::new(vec![Pauli::Z; config.bcs.n_qubits()]).expect("width"));
    optimize_target(&TargetProblem {
        gates: &learned.channels,
        neighbors: &learned.neighbors,
        n_cnot: &counts,
        nec: &nec,
        observable: &obs,
    })
}

/// Matched depolarizing channel: the mean non-identity error rate.
pub fn matched_depolarizing(f: &FidelityVector) -> FidelityVector {
    let p = walsh_hadamard(f);
    let n = p.values().len();
    let lambda = (1.0 - p.values()[0]) / (n - 1) as f64;
    depolarizing_fidelities(f.q(), lambda)
}

pub fn reference_values(config: &ExperimentConfig, circuits: &[(usize, Circuit)]) -> Result<Table> {
    let obs = observable_set_for(config)?;
    let mut t = Table::new();
    match config.reference {
        Reference::Trotter => {
            let noiseless = NoiseModel::noiseless(config.bcs.n_qubits());
            for (s, c) in circuits {
                let rho = run_channel(c, &noiseless)?;
                for o in &obs {
                    t.insert(Key::new(o.to_string(), *s), rho.expectation(o)?);
                }
            }
        }
        Reference::Exact => {
            let d = ExactDynamics::new(&config.bcs)?;
            for (s, _) in circuits {
                for o in &obs {
                    t.insert(Key::new(o.to_string(), *s), d.expectation(config.bcs.time(*s), o)?);
                }
            }
        }
    }
    Ok(t)
}

fn observable_set_for(config: &ExperimentConfig) -> Result<Vec<PauliString>> {
    if config.bcs.n_qubits() != 3 {
        return Err(NtError::Config("the benchmark observables need 3 qubits".into()));
    }
    Ok(observable_set())
}

/// One row of the expectations table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationRow {
    pub trial: String,
    pub observable: String,
    pub step: usize,
    pub time: f64,
    pub perfect: f64,
    pub raw: f64,
    pub f_nec: f64,
    pub estimate: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutput {
    pub trial: Trial,
    pub rows: Vec<ExpectationRow>,
    pub awae_all: AwaeReport,
    pub awae_last_two: AwaeReport,
    #[serde(skip)]
    pub outputs: Option<CircuitOutputs>,
    pub emu_finite: Option<AwaeReport>,
    pub diagnostics: Option<DiagnosticsReport>,
    pub plan: MitigationPlan,
}

/// Everything a trial needs, prepared by the earlier stages.
pub struct Inputs<'a> {
    pub config: &'a ExperimentConfig,
    pub device: &'a NoiseModel,
    pub learned: &'a Learned,
    pub plan: &'a MitigationPlan,
}

struct Estimates {
    raw: Table,
    f_nec: Table,
    estimate: Table,
    std: Table,
}

fn nec_table(circuits: &[(usize, Circuit)], obs: &[PauliString], model: &NoiseModel) -> Result<Table> {
    let mut t = Table::new();
    for (s, c) in circuits {
        let nec = nec_circuit(c);
        for o in obs {
            let o_nec = nec_observable(&nec, o)?;
            t.insert(Key::new(o.to_string(), *s), nec_fidelity(&nec, model, &o_nec)?);
        }
    }
    Ok(t)
}

fn channel_estimates(circuits: &[(usize, Circuit)], obs: &[PauliString], model: &NoiseModel) -> Result<Estimates> {
    let f_nec = nec_table(circuits, obs, model)?;
    let mut raw = Table::new();
    for (s, c) in circuits {
        let rho = run_channel(c, model)?;
        for o in obs {
            raw.insert(Key::new(o.to_string(), *s), rho.expectation(o)?);
        }
    }
    let estimate = raw.iter().map(|(k, v)| (k.clone(), v / f_nec[k])).collect();
    let std = raw.keys().map(|k| (k.clone(), 0.0)).collect();
    Ok(Estimates {
        raw,
        f_nec,
        estimate,
        std,
    })
}

/// Sign-weighted outputs of `n` tailored circuits per time point. Circuit
/// `i` of step `s` draws from its own stream, so results do not depend on
/// scheduling.
pub fn sample_tailored(
    circuits: &[(usize, Circuit)],
    obs: &[PauliString],
    plans: &PlanMap,
    twirl: Twirl,
    model: &NoiseModel,
    n: usize,
    shots: u64,
    seed: u64,
) -> Result<CircuitOutputs> {
    let n_q = model.n_qubits().max(circuits.first().map_or(0, |c| c.1.n_qubits));
    let basis: Vec<Basis> = common_basis(n_q, obs)?;
    let masks: Vec<usize> = obs
        .iter()
        .map(|o| o.support().iter().fold(0, |m, &k| m | (1 << (n_q - 1 - k))))
        .collect();
    let keys: Vec<Key> = circuits
        .iter()
        .flat_map(|(s, _)| obs.iter().map(move |o| Key::new(o.to_string(), *s)))
        .collect();
    let per_step: Vec<Vec<Vec<f64>>> = circuits
        .iter()
        .enumerate()
        .map(|(j, (_, c))| {
            let step_seed = rng::derive_seed(seed, "tailored-step", j as u64);
            (0..n)
                .into_par_iter()
                .map(|i| -> Result<Vec<f64>> {
                    let mut g = rng::stream(step_seed, "circuit", i as u64);
                    let d = nt_dress(c, plans, twirl, &mut g)?;
                    let w = d.sign as f64 * d.weight_log.exp();
                    if shots == 0 {
                        let rho = run_channel(&d.circuit, model)?;
                        return obs.iter().map(|o| Ok(w * rho.expectation(o)?)).collect();
                    }
                    let rho = run_circuit(&d.circuit, model, Mode::Trajectory, &mut g)?;
                    let mut rec = sample_shots(&rho, &basis, shots, &mut g)?;
                    if let Some(ro) = model.readout() {
                        rec = apply_readout_error(&rec, ro, &mut g)?;
                    }
                    Ok(masks.iter().map(|m| w * parity_mean(&rec.counts, *m)).collect())
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let values = (0..n)
        .map(|i| per_step.iter().flat_map(|rows| rows[i].iter().copied()).collect())
        .collect();
    Ok(CircuitOutputs {
        keys,
        scale: vec![1.0; circuits.len() * obs.len()],
        values,
    })
}

fn twirl_for(learned: &Learned) -> Twirl {
    if learned.channels.values().any(|f| f.q() == 3) {
        Twirl::Crc
    } else {
        Twirl::Rc
    }
}

fn sampled_estimates(
    inputs: &Inputs,
    circuits: &[(usize, Circuit)],
    obs: &[PauliString],
    model: &NoiseModel,
    f_nec: &Table,
) -> Result<(Estimates, CircuitOutputs)> {
    let c = inputs.config;
    let plans = inputs.plan.plans(&inputs.learned.channels)?;
    let mut out = sample_tailored(circuits, obs, &plans, twirl_for(inputs.learned), model, c.n_nt, c.shots, rng::derive_seed(c.seed, "t3", 0))?;
    out.scale = out.keys.iter().map(|k| 1.0 / f_nec[k]).collect();
    let (estimate, std) = out.estimates(0..out.len());
    let raw = out
        .keys
        .iter()
        .map(|k| (k.clone(), estimate[k] * f_nec[k]))
        .collect();
    Ok((
        Estimates {
            raw,
            f_nec: f_nec.clone(),
            estimate,
            std,
        },
        out,
    ))
}

fn sampled_report(config: &ExperimentConfig, out: &CircuitOutputs, est: &Estimates, refs: &Table, steps: Option<&[usize]>, salt: u64) -> Result<AwaeReport> {
    let mut rep = awae_report(&est.estimate, Some(&est.std), refs, steps)?;
    rep.curve = bootstrap_curve(out, refs, steps, config.batch_size, rng::derive_seed(config.seed, "curve", salt))?;
    rep.fit = extrapolate(&rep.curve, config.fit_max_n).ok();
    Ok(rep)
}

/// AWAE report, batch curve and fit recomputed from persisted per-circuit
/// outputs. `refs` usually comes from the `perfect` column of the
/// expectations file.
pub fn report_from_outputs(
    config: &ExperimentConfig,
    out: &CircuitOutputs,
    refs: &Table,
    steps: Option<&[usize]>,
    salt: u64,
) -> Result<AwaeReport> {
    let (estimate, std) = out.estimates(0..out.len());
    let mut rep = awae_report(&estimate, Some(&std), refs, steps)?;
    rep.curve = bootstrap_curve(out, refs, steps, config.batch_size, rng::derive_seed(config.seed, "curve", salt))?;
    rep.fit = extrapolate(&rep.curve, config.fit_max_n).ok();
    Ok(rep)
}

pub fn references_from_rows(rows: &[ExpectationRow]) -> Table {
    rows.iter()
        .map(|r| {
            (
                Key {
                    observable: r.observable.clone(),
                    step: r.step,
                },
                r.perfect,
            )
        })
        .collect()
}

fn rows_of(trial: Trial, config: &ExperimentConfig, refs: &Table, e: &Estimates) -> Vec<ExpectationRow> {
    refs.iter()
        .map(|(k, perf)| ExpectationRow {
            trial: trial.label().into(),
            observable: k.observable.clone(),
            step: k.step,
            time: config.bcs.time(k.step),
            perfect: *perf,
            raw: e.raw[k],
            f_nec: e.f_nec[k],
            estimate: e.estimate[k],
            std: e.std[k],
        })
        .collect()
}

pub fn run_trial(inputs: &Inputs) -> Result<TrialOutput> {
    let config = inputs.config;
    config.validate()?;
    let circuits = trotter_circuits(config)?;
    let obs = observable_set_for(config)?;
    let refs = reference_values(config, &circuits)?;
    let n = config.bcs.n_qubits();
    let last_two = config.last_two();
    let target_model = inputs.plan.target_model(n)?;

    let report = |e: &Estimates| -> Result<(AwaeReport, AwaeReport)> {
        Ok((
            awae_report(&e.estimate, Some(&e.std), &refs, None)?,
            awae_report(&e.estimate, Some(&e.std), &refs, Some(&last_two))?,
        ))
    };
    let finish = |e: Estimates, all: AwaeReport, last: AwaeReport, outputs, emu_finite, diagnostics| TrialOutput {
        trial: config.trial,
        rows: rows_of(config.trial, config, &refs, &e),
        awae_all: all,
        awae_last_two: last,
        outputs,
        emu_finite,
        diagnostics,
        plan: inputs.plan.clone(),
    };

    match config.trial {
        Trial::T1 | Trial::T2 | Trial::T4 => {
            let model = match config.trial {
                Trial::T1 => infinite_twirl_model(inputs.device).map_err(|e| e.in_stage("T1 model"))?,
                Trial::T2 => target_model,
                _ => {
                    let matched = inputs
                        .learned
                        .channels
                        .iter()
                        .map(|(e, f)| (e.clone(), matched_depolarizing(f)))
                        .collect();
                    NoiseModel::from_channels(n, &matched, &inputs.learned.neighbors)?
                }
            };
            let e = channel_estimates(&circuits, &obs, &model)?;
            let (all, last) = report(&e)?;
            Ok(finish(e, all, last, None, None, None))
        }
        Trial::T3 => {
            let f_nec = nec_table(&circuits, &obs, &target_model)?;
            let (e, out) = sampled_estimates(inputs, &circuits, &obs, inputs.device, &f_nec)?;
            let all = sampled_report(config, &out, &e, &refs, None, 0)?;
            let last = sampled_report(config, &out, &e, &refs, Some(&last_two), 1)?;
            Ok(finish(e, all, last, Some(out), None, None))
        }
        Trial::Diag => {
            let f_nec = nec_table(&circuits, &obs, &target_model)?;
            let inf = channel_estimates(&circuits, &obs, &target_model)?;
            let zeta_inf = awae_report(&inf.estimate, None, &refs, None)?.zeta;

            let (full, out_full) = sampled_estimates(inputs, &circuits, &obs, inputs.device, &f_nec)?;
            let full_all = sampled_report(config, &out_full, &full, &refs, None, 0)?;
            let full_last = sampled_report(config, &out_full, &full, &refs, Some(&last_two), 1)?;

            let learned_model = inputs.learned.model(n)?;
            let (emu, out_emu) = sampled_estimates(inputs, &circuits, &obs, &learned_model, &f_nec)?;
            let emu_all = sampled_report(config, &out_emu, &emu, &refs, None, 2)?;

            let deepest = circuits.last().expect("validated");
            let planning_obs = inputs.plan.observable.clone();
            let nec = nec_circuit(&deepest.1);
            let f_p = nec_fidelity(&nec, &infinite_twirl_model(inputs.device)?, &planning_obs)?;
            let log_gamma_total = inputs
                .plan
                .edges
                .iter()
                .map(|e| e.n_cnot as f64 * e.gamma.ln())
                .sum();
            let diag = diagnostics(&DiagnosticsInput {
                zeta_emu_inf: zeta_inf,
                emu_finite: &emu_all,
                full_run: &full_all,
                log_gamma_total,
                f_nec_target: inputs.plan.f_nec,
                f_nec_pauli: f_p,
            })?;
            Ok(finish(full, full_all, full_last, Some(out_full), Some(emu_all), Some(diag)))
        }
    }
}

/// Runs every stage in memory: device, learning, planning, trial.
pub fn run_pipeline(config: &ExperimentConfig, base_dir: Option<&Path>) -> Result<(TrialOutput, Vec<StageTiming>)> {
    config.validate()?;
    let mut timings = Vec::new();
    let mut timed = |name: &str, t: Instant| {
        timings.push(StageTiming {
            stage: name.into(),
            seconds: t.elapsed().as_secs_f64(),
        })
    };
    let t = Instant::now();
    let device = device_model(config, base_dir).map_err(|e| e.in_stage("noise"))?;
    timed("noise", t);
    let t = Instant::now();
    let learned = learn(config, &device).map_err(|e| e.in_stage("pnt"))?;
    timed("pnt", t);
    let t = Instant::now();
    let plan = plan_targets(config, &learned).map_err(|e| e.in_stage("plan"))?;
    timed("plan", t);
    let t = Instant::now();
    let out = run_trial(&Inputs {
        config,
        device: &device,
        learned: &learned,
        plan: &plan,
    })
    .map_err(|e| e.in_stage("run"))?;
    timed("run", t);
    Ok((out, timings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub timings: Vec<StageTiming>,
    pub files: Vec<FileEntry>,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> NtError {
    NtError::Io(std::io::Error::other(e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[derive(Serialize)]
struct CurveRow<'a> {
    subset: &'a str,
    n: usize,
    zeta: f64,
    std: f64,
    batches: usize,
}

/// Writes the trial outputs and a manifest into `dir`; returns the manifest.
pub fn write_outputs(dir: &Path, config: &ExperimentConfig, out: &TrialOutput, timings: Vec<StageTiming>) -> Result<RunManifest> {
    fs::create_dir_all(dir)?;
    let mut files = vec![PathBuf::from("expectations.csv"), PathBuf::from("awae.json"), PathBuf::from("plan.json")];
    write_csv(&dir.join("expectations.csv"), &out.rows)?;
    write_json(
        &dir.join("awae.json"),
        &serde_json::json!({ "all": out.awae_all, "last_two": out.awae_last_two }),
    )?;
    write_json(&dir.join("plan.json"), &out.plan)?;
    if !out.awae_all.curve.is_empty() {
        let mut rows = Vec::new();
        for (name, rep) in [("all", &out.awae_all), ("last_two", &out.awae_last_two)] {
            rows.extend(rep.curve.iter().map(|p| CurveRow {
                subset: name,
                n: p.n,
                zeta: p.zeta,
                std: p.std,
                batches: p.batches,
            }));
        }
        write_csv(&dir.join("curve.csv"), &rows)?;
        files.push("curve.csv".into());
    }
    if let Some(o) = &out.outputs {
        fs::write(dir.join("circuits.json"), serde_json::to_vec(o)?)?;
        files.push("circuits.json".into());
    }
    if let Some(d) = &out.diagnostics {
        write_json(&dir.join("diagnostics.json"), d)?;
        files.push("diagnostics.json".into());
    }
    write_json(&dir.join("config.json"), config)?;
    files.push("config.json".into());
    let files = files
        .into_iter()
        .map(|f| {
            let bytes = fs::read(dir.join(&f))?;
            Ok(FileEntry {
                path: f.to_string_lossy().into_owned(),
                sha256: hex(&Sha256::digest(bytes)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        config_hash: config.hash(),
        seed: config.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        timings,
        files,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
