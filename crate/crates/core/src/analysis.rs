//! Accuracy metric, batch curves over sampled circuits, the `a/sqrt(N) + b`
//! extrapolation and the error-budget decomposition.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NtError, Result};
use crate::rng;

/// An (observable, time point) entry. `step` is the Trotter step count.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Key {
    pub observable: String,
    pub step: usize,
}

impl Key {
    pub fn new(observable: impl Into<String>, step: usize) -> Self {
        Self {
            observable: observable.into(),
            step,
        }
    }
}

pub type Table = BTreeMap<Key, f64>;

fn selected<'a>(references: &'a Table, steps: Option<&'a [usize]>) -> impl Iterator<Item = (&'a Key, &'a f64)> {
    references
        .iter()
        .filter(move |(k, _)| steps.is_none_or(|s| s.contains(&k.step)))
}

/// Normalization `Z = sum |perf|` over the selected entries.
pub fn awae_norm(references: &Table, steps: Option<&[usize]>) -> f64 {
    selected(references, steps).map(|(_, v)| v.abs()).sum()
}

/// `zeta = sum |perf| |est - perf| / sum |perf|`, optionally restricted to
/// a subset of time steps.
pub fn awae(estimates: &Table, references: &Table, steps: Option<&[usize]>) -> Result<f64> {
    let z = awae_norm(references, steps);
    if !(z > 0.0) {
        return Err(NtError::UndefinedAwae);
    }
    let mut acc = 0.0;
    for (k, perf) in selected(references, steps) {
        let est = estimates
            .get(k)
            .ok_or_else(|| NtError::InsufficientData(format!("no estimate for {} at step {}", k.observable, k.step)))?;
        acc += perf.abs() * (est - perf).abs();
    }
    Ok(acc / z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwaeEntry {
    pub observable: String,
    pub step: usize,
    pub perfect: f64,
    pub estimate: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub zeta: f64,
    pub std: f64,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    pub cov: [[f64; 2]; 2],
    pub n_points: usize,
}

impl FitResult {
    pub fn b_std(&self) -> f64 {
        self.cov[1][1].max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwaeReport {
    pub entries: Vec<AwaeEntry>,
    pub steps: Option<Vec<usize>>,
    pub zeta: f64,
    pub norm: f64,
    #[serde(default)]
    pub curve: Vec<CurvePoint>,
    #[serde(default)]
    pub fit: Option<FitResult>,
}

pub fn awae_report(estimates: &Table, stds: Option<&Table>, references: &Table, steps: Option<&[usize]>) -> Result<AwaeReport> {
    let zeta = awae(estimates, references, steps)?;
    let entries = references
        .iter()
        .map(|(k, perf)| AwaeEntry {
            observable: k.observable.clone(),
            step: k.step,
            perfect: *perf,
            estimate: estimates[k],
            std: stds.and_then(|s| s.get(k).copied()).unwrap_or(0.0),
        })
        .collect();
    Ok(AwaeReport {
        entries,
        steps: steps.map(|s| s.to_vec()),
        zeta,
        norm: awae_norm(references, steps),
        curve: Vec::new(),
        fit: None,
    })
}

/// Per-circuit outputs of a sampled run. Row `i` holds the `i`-th sampled
/// circuit of every time point, already carrying sign and weight; `scale`
/// converts a mean into a mitigated estimate (`1 / F_NEC`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitOutputs {
    pub keys: Vec<Key>,
    pub scale: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl CircuitOutputs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mitigated estimates and standard errors over circuits `range`.
    pub fn estimates(&self, range: std::ops::Range<usize>) -> (Table, Table) {
        let n = range.len() as f64;
        let mut est = Table::new();
        let mut err = Table::new();
        for (j, k) in self.keys.iter().enumerate() {
            let vals = || self.values[range.clone()].iter().map(|r| r[j]);
            let mean = vals().sum::<f64>() / n;
            let var = if n > 1.0 { vals().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            est.insert(k.clone(), mean * self.scale[j]);
            err.insert(k.clone(), (var / n).sqrt() * self.scale[j].abs());
        }
        (est, err)
    }
}

/// Sample sizes of the batch curve: 1..10 batches, then 20..50 batches,
/// then everything.
pub fn curve_grid(total: usize, batch_size: usize) -> Vec<usize> {
    let mut g: Vec<usize> = (1..=10)
        .chain((2..=5).map(|k| 10 * k))
        .map(|k| k * batch_size)
        .filter(|n| *n <= total)
        .collect();
    if g.last() != Some(&total) {
        g.push(total);
    }
    g
}

/// AWAE versus the number of sampled circuits. For each `N`, consecutive
/// batches are merged into groups of `N` circuits; the point is the mean
/// group AWAE and its std is the group spread over `sqrt(groups)`. The
/// single-group point at the full sample uses a circuit bootstrap instead.
pub fn bootstrap_curve(
    outputs: &CircuitOutputs,
    references: &Table,
    steps: Option<&[usize]>,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if batch_size == 0 || outputs.len() < 2 * batch_size {
        return Err(NtError::InsufficientData(format!(
            "{} circuits do not fill two batches of {batch_size}",
            outputs.len()
        )));
    }
    let total = outputs.len();
    let zeta_of = |range: std::ops::Range<usize>| -> Result<f64> { awae(&outputs.estimates(range).0, references, steps) };
    curve_grid(total, batch_size)
        .into_par_iter()
        .map(|n| {
            let groups = total / n;
            let zs: Vec<f64> = (0..groups).map(|g| zeta_of(g * n..(g + 1) * n)).collect::<Result<_>>()?;
            let mean = zs.iter().sum::<f64>() / groups as f64;
            let std = if groups > 1 {
                (zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (groups - 1) as f64 / groups as f64).sqrt()
            } else {
                circuit_bootstrap(outputs, references, steps, n, seed)?
            };
            Ok(CurvePoint {
                n,
                zeta: mean,
                std,
                batches: n / batch_size,
            })
        })
        .collect()
}

fn circuit_bootstrap(outputs: &CircuitOutputs, references: &Table, steps: Option<&[usize]>, n: usize, seed: u64) -> Result<f64> {
    const RESAMPLES: usize = 200;
    let zs: Vec<f64> = (0..RESAMPLES)
        .into_par_iter()
        .map(|b| {
            let mut g = rng::stream(seed, "curve-bootstrap", b as u64);
            let picks: Vec<usize> = (0..n).map(|_| g.random_range(0..n)).collect();
            let resampled = CircuitOutputs {
                keys: outputs.keys.clone(),
                scale: outputs.scale.clone(),
                values: picks.iter().map(|&i| outputs.values[i].clone()).collect(),
            };
            awae(&resampled.estimates(0..n).0, references, steps)
        })
        .collect::<Result<_>>()?;
    let m = zs.iter().sum::<f64>() / RESAMPLES as f64;
    Ok((zs.iter().map(|z| (z - m).powi(2)).sum::<f64>() / (RESAMPLES - 1) as f64).sqrt())
}

/// Weighted least squares of `zeta(N) = a / sqrt(N) + b` over points with
/// `N <= fit_max_n`, weights `1/std^2` (unweighted when any std is zero).
/// The intercept is clipped at 0.
pub fn extrapolate(curve: &[CurvePoint], fit_max_n: usize) -> Result<FitResult> {
    let pts: Vec<&CurvePoint> = curve.iter().filter(|p| p.n <= fit_max_n).collect();
    if pts.len() < 3 {
        return Err(NtError::InsufficientData(format!(
            "{} curve points below N = {fit_max_n}, need 3",
            pts.len()
        )));
    }
    let weighted = pts.iter().all(|p| p.std > 0.0);
    let mut xtx = Matrix2::zeros();
    let mut xty = Vector2::zeros();
    for p in &pts {
        let w = if weighted { 1.0 / (p.std * p.std) } else { 1.0 };
        let x = Vector2::new(1.0 / (p.n as f64).sqrt(), 1.0);
        xtx += w * x * x.transpose();
        xty += w * p.zeta * x;
    }
    let inv = xtx
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| NtError::FitFailure("singular extrapolation design".into()))?;
    let theta = inv * xty;
    let cov = if weighted {
        inv
    } else {
        let rss: f64 = pts
            .iter()
            .map(|p| (p.zeta - theta[0] / (p.n as f64).sqrt() - theta[1]).powi(2))
            .sum();
        inv * (rss / (pts.len() - 2) as f64)
    };
    Ok(FitResult {
        a: theta[0],
        b: theta[1].max(0.0),
        cov: [[cov[(0, 0)], cov[(0, 1)]], [cov[(1, 0)], cov[(1, 1)]]],
        n_points: pts.len(),
    })
}

/// A value with its standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub zeta_emu_inf: f64,
    pub zeta_emu_finite: Estimate,
    pub zeta_full_run: Estimate,
    pub intercept: Estimate,
    /// Finite-sampling contribution of the tailoring.
    pub delta_nt: Estimate,
    /// Coherent plus unknown contribution at the sampled `N`.
    pub delta_c_unk: Estimate,
    /// Unknown contribution left after extrapolating `N` to infinity.
    pub delta_unk: Estimate,
    /// `delta_c_unk` projected onto a run without tailoring.
    pub no_nt_projection: f64,
    pub warnings: Vec<String>,
}

/// Inputs of the error-budget decomposition.
pub struct DiagnosticsInput<'a> {
    pub zeta_emu_inf: f64,
    pub emu_finite: &'a AwaeReport,
    pub full_run: &'a AwaeReport,
    /// `sum N_CNOT ln gamma` of the tailoring plan.
    pub log_gamma_total: f64,
    /// NEC fidelity under the target channels.
    pub f_nec_target: f64,
    /// NEC fidelity under the untailored channels.
    pub f_nec_pauli: f64,
}

fn at_total(r: &AwaeReport) -> Estimate {
    Estimate {
        value: r.zeta,
        std: r.curve.last().map_or(0.0, |p| p.std),
    }
}

pub fn diagnostics(input: &DiagnosticsInput) -> Result<DiagnosticsReport> {
    let fin = at_total(input.emu_finite);
    let full = at_total(input.full_run);
    let fit = input
        .full_run
        .fit
        .as_ref()
        .ok_or_else(|| NtError::InsufficientData("full run has no extrapolation".into()))?;
    if !(input.f_nec_pauli > 0.0) || !(input.f_nec_target > 0.0) {
        return Err(NtError::UndefinedFidelity("NEC fidelities must be positive".into()));
    }
    let diff = |a: Estimate, b: f64, sb: f64| Estimate {
        value: a.value - b,
        std: (a.std * a.std + sb * sb).sqrt(),
    };
    let delta_nt = diff(fin, input.zeta_emu_inf, 0.0);
    let delta_c_unk = diff(full, fin.value, fin.std);
    let intercept = Estimate {
        value: fit.b,
        std: fit.b_std(),
    };
    let delta_unk = diff(intercept, input.zeta_emu_inf, 0.0);
    let no_nt_projection = delta_c_unk.value * (input.f_nec_target.ln() - input.log_gamma_total).exp() / input.f_nec_pauli;
    let mut warnings = Vec::new();
    for (name, e) in [("delta_nt", delta_nt), ("delta_c_unk", delta_c_unk), ("delta_unk", delta_unk)] {
        if e.value < -2.0 * e.std {
            warnings.push(format!("{name} = {:.3e} is negative beyond 2 std ({:.1e})", e.value, e.std));
        }
    }
    Ok(DiagnosticsReport {
        zeta_emu_inf: input.zeta_emu_inf,
        zeta_emu_finite: fin,
        zeta_full_run: full,
        intercept,
        delta_nt,
        delta_c_unk,
        delta_unk,
        no_nt_projection,
        warnings,
    })
}
