use rand::Rng;

use super::noise::Confusion;
use super::shots::ShotRecord;
use crate::error::{NtError, Result};

fn check(confusion: &[Confusion], n: usize) -> Result<()> {
    if confusion.len() != n {
        return Err(NtError::Dimension(format!(
            "{} confusion matrices for {n} qubits",
            confusion.len()
        )));
    }
    for (q, m) in confusion.iter().enumerate() {
        for row in m {
            if row.iter().all(|v| *v == 0.0) {
                return Err(NtError::DegenerateResponse(format!("qubit {q} has an all-zero response row")));
            }
            if row.iter().any(|v| *v < 0.0) || (row[0] + row[1] - 1.0).abs() > 1e-9 {
                return Err(NtError::InvalidParameter(format!(
                    "qubit {q}: response row {row:?} is not a distribution"
                )));
            }
        }
    }
    Ok(())
}

/// `R(measured | true)` for full bit strings.
fn response(confusion: &[Confusion], measured: usize, truth: usize) -> f64 {
    let n = confusion.len();
    (0..n)
        .map(|q| {
            let b = n - 1 - q;
            confusion[q][(truth >> b) & 1][(measured >> b) & 1]
        })
        .product()
}

/// Passes every recorded bit through its qubit's confusion matrix.
pub fn apply_readout_error(record: &ShotRecord, confusion: &[Confusion], rng: &mut impl Rng) -> Result<ShotRecord> {
    let n = record.n_qubits();
    check(confusion, n)?;
    let mut counts = vec![0u64; record.counts.len()];
    for (outcome, &c) in record.counts.iter().enumerate() {
        for _ in 0..c {
            let mut m = outcome;
            for (q, conf) in confusion.iter().enumerate() {
                let b = n - 1 - q;
                let truth = (outcome >> b) & 1;
                if rng.random::<f64>() < conf[truth][1 - truth] {
                    m ^= 1 << b;
                }
            }
            counts[m] += 1;
        }
    }
    Ok(ShotRecord {
        counts,
        ..record.clone()
    })
}

/// Iterative Bayesian unfolding. Returns unfolded quasi-counts summing to
/// the record's total. `prior` defaults to uniform.
pub fn ibu_correct(record: &ShotRecord, confusion: &[Confusion], iters: usize, prior: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = record.n_qubits();
    check(confusion, n)?;
    if iters == 0 {
        return Err(NtError::InvalidParameter("IBU needs at least one iteration".into()));
    }
    let d = record.counts.len();
    let total = record.total as f64;
    let mut t: Vec<f64> = match prior {
        Some(p) if p.len() == d => {
            let s: f64 = p.iter().sum();
            p.iter().map(|v| v / s * total).collect()
        }
        Some(p) => {
            return Err(NtError::Dimension(format!("prior of length {} for {d} outcomes", p.len())))
        }
        None => vec![total / d as f64; d],
    };
    let r: Vec<f64> = (0..d * d).map(|k| response(confusion, k / d, k % d)).collect();
    let m: Vec<f64> = record.counts.iter().map(|c| *c as f64).collect();
    for _ in 0..iters {
        let folded: Vec<f64> = (0..d).map(|j| (0..d).map(|i| r[j * d + i] * t[i]).sum()).collect();
        let next: Vec<f64> = (0..d)
            .map(|i| {
                t[i] * (0..d)
                    .filter(|j| folded[*j] > 0.0)
                    .map(|j| r[j * d + i] * m[j] / folded[j])
                    .sum::<f64>()
            })
            .collect();
        t = next;
    }
    let s: f64 = t.iter().sum();
    if s > 0.0 {
        t.iter_mut().for_each(|v| *v *= total / s);
    }
    Ok(t)
}
